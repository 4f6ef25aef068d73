#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "llae/circuit.hpp"
#include "llae/dataset.hpp"
#include "llae/vtree.hpp"

namespace llae {

struct LearnConfig {
  double laplace_alpha = 1.0;
  /// Score penalty per free parameter, in nats per example.
  double size_penalty = 0.02;
  std::size_t max_iterations = 200;
  double time_budget_seconds = 3600.0;
  /// Share of training instances held out to decide convergence.
  double validation_fraction = 0.1;
  /// Minimum validation score gain for an accepted operation to count as progress.
  double convergence_threshold = 1e-4;
  /// Consecutive non-improving operations tolerated before stopping.
  std::size_t patience = 1;
  /// Splits are proposed on this many highest-count elements.
  std::size_t split_elements = 20;
  /// Clones are proposed for this many nodes with the most parent references.
  std::size_t clone_nodes = 10;
  /// Depth to which split/clone duplicate the copied node; -1 copies the whole sub-circuit.
  int copy_depth = -1;
  /// Start from the circuit compiled from the exactly-one groups (else fully factorized).
  bool constrained_base = true;
  /// In the constrained base, give each value of the root's left child its
  /// own sub (see compile_base).
  bool condition_on_groups = false;
  std::size_t num_threads = 1;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument when a field is out of range.
  void check() const;
};

/// Weighted counts of training examples flowing through each node:
/// decision nodes per element, terminals as [#false, #true], literals [#].
struct NodeCounts {
  std::vector<std::vector<double>> counts;
  /// Weight of examples with probability 0 under the circuit.
  double out_of_support_weight = 0.0;
};

NodeCounts count_contexts(const Circuit& circuit, const BinaryDataset& data);

/// Smoothed, clipped and renormalized log-parameters for one node's counts.
std::vector<double> fit_log_thetas(std::span<const double> counts, double alpha);

/// Closed-form maximum-likelihood parameters (Laplace-smoothed by alpha).
Circuit learn_parameters(const Circuit& circuit, const BinaryDataset& data, double alpha);

/// Node-sum log-likelihood: sum over nodes and elements of ln(theta) times
/// the number of examples reaching the element; -inf when some example has
/// probability 0.
double log_likelihood(const Circuit& circuit, const BinaryDataset& data);

/// Per-example sum of multiplicity * log Pr(example).
double log_likelihood_by_example(const Circuit& circuit, const BinaryDataset& data);

/// log_likelihood / total weight - size_penalty * num_parameters.
double score(const Circuit& circuit, const BinaryDataset& data, const LearnConfig& config);

/// Reference from a decision element to a child.
struct ParentRef {
  NodeId parent;
  std::size_t element;
  bool is_prime;
  friend bool operator==(const ParentRef&, const ParentRef&) = default;
};
std::vector<ParentRef> parent_references(const Circuit& circuit, NodeId node);

/// Optional data to re-fit parameters after a structure operation. Without
/// it the operation preserves the circuit's distribution.
struct Refit {
  const BinaryDataset* data = nullptr;
  double alpha = 1.0;
};

/// Replaces element `element` of `decision_node` with two elements whose
/// primes are the old prime conditioned on `var` and on its negation; the
/// negative branch gets its own copy of the sub. Throws RejectedOperation
/// when `var` is outside the prime scope or one branch is unsatisfiable.
Circuit split(const Circuit& circuit, NodeId decision_node, std::size_t element, Var var, Refit refit = {},
              int copy_depth = -1);

/// Duplicates `node` and redirects `parents` (a proper non-empty subset of
/// its parent references) to the copy. Throws RejectedOperation otherwise.
Circuit clone(const Circuit& circuit, NodeId node, std::span<const ParentRef> parents, Refit refit = {},
              int copy_depth = -1);

/// Uniform distribution over the one-hot assignments of `group`, which must
/// be exactly the variable set of some vtree node. The result is a fragment
/// rooted at that vtree node.
Circuit compile_exactly_one(std::shared_ptr<const Vtree> vtree, std::span<const Var> group);

/// Full circuit whose support is the conjunction of the exactly-one
/// constraints, uniform within each group and over the other variables.
/// With `condition_on_groups` and a group as the root's left child, the root
/// gets one element per group value, each with its own copy of the right side.
/// With `condition_on_groups`, `data`, and an unconstrained left child of at
/// most kMaxConditionedVars variables, the root gets one element per distinct
/// left assignment in `data` (at most kMaxConditionedPatterns) plus one for
/// all unseen left assignments, each with its own copy of the right side.
inline constexpr std::size_t kMaxConditionedVars = 12;
inline constexpr std::size_t kMaxConditionedPatterns = 256;
Circuit compile_base(std::shared_ptr<const Vtree> vtree, std::span<const std::vector<Var>> exactly_one_groups,
                     bool condition_on_groups = false, const BinaryDataset* data = nullptr);

struct LearnLogEntry {
  std::size_t iteration = 0;
  std::string operation;
  double train_score = 0.0;
  double valid_score = 0.0;
  std::size_t num_params = 0;
  double seconds = 0.0;
};

struct LearnResult {
  Circuit circuit;
  std::vector<LearnLogEntry> log;
};

/// Greedy clone/split search over a fixed vtree. The search and its log use
/// the training split; the returned circuit is the structure with the best
/// validation score, its parameters re-fit on all of `data`.
LearnResult learn_structure(const BinaryDataset& data, std::shared_ptr<const Vtree> vtree,
                            const LearnConfig& config, std::span<const std::vector<Var>> exactly_one_groups = {},
                            const std::function<void(const LearnLogEntry&)>& on_iteration = {});

/// Same, starting from a given circuit (its parameters are re-fit first).
LearnResult learn_structure_from(const Circuit& initial, const BinaryDataset& data, const LearnConfig& config,
                                 const std::function<void(const LearnLogEntry&)>& on_iteration = {});

/// JSON-lines rendering of one log entry.
std::string to_json_line(const LearnLogEntry& entry);

}  // namespace llae
