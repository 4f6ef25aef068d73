#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "llae/assignment.hpp"
#include "llae/circuit.hpp"
#include "llae/random.hpp"

namespace llae {

struct InferenceStats {
  std::size_t node_visits = 0;
  std::size_t passes = 0;
};

/// Per-node log Pr(evidence restricted to the node's scope), one bottom-up
/// pass. `evidence` is dense: -1 unassigned, 0/1 assigned.
void node_log_values(const Circuit& circuit, std::span<const std::int8_t> evidence, std::vector<double>& out,
                     InferenceStats* stats = nullptr);

/// log Pr(v); unassigned variables are marginalized.
double evidence_log_probability(const Circuit& circuit, const PartialAssignment& v, InferenceStats* stats = nullptr);

/// Pr(q | v). Conflicting q and v give 0; Pr(v) = 0 throws ZeroEvidenceError.
double conditional_probability(const Circuit& circuit, const PartialAssignment& q, const PartialAssignment& v);

/// Exact sample from Pr(FL) by top-down traversal choosing elements by theta.
CompleteAssignment sample_joint(const Circuit& circuit, Rng& rng);

/// Exact sample from Pr(FL | v) by one bottom-up and one top-down pass.
CompleteAssignment sample_conditional(const Circuit& circuit, const PartialAssignment& v, Rng& rng);

/// A categorical variable of the feature layer as seen by the sampler: either
/// a one-hot block of k >= 2 booleans or a single boolean.
struct SamplingGroup {
  std::vector<Var> vars;
  bool one_hot = false;
  std::size_t arity() const { return one_hot ? vars.size() : 2; }
};

/// Completes v by sequential conditional sampling: unassigned groups are
/// visited in a seeded random order and each is drawn from
/// Pr(group = value | evidence so far), which then joins the evidence.
/// Variables not covered by `groups` are sampled as single booleans.
CompleteAssignment generative_query(const Circuit& circuit, const PartialAssignment& v,
                                    std::span<const SamplingGroup> groups, Rng& rng,
                                    InferenceStats* stats = nullptr);

/// log-sum-exp of the values; -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> values);

}  // namespace llae
