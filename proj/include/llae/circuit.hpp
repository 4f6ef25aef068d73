#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "llae/assignment.hpp"
#include "llae/vtree.hpp"

namespace llae {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class NodeKind : std::uint8_t { kTerminal, kLiteral, kDecision };

/// AND gate of a decision node: prime over the left vtree child, sub over the right.
struct Element {
  NodeId prime;
  NodeId sub;
  double log_theta;
  friend bool operator==(const Element&, const Element&) = default;
};

struct PsddNode {
  NodeKind kind = NodeKind::kTerminal;
  VtreeId vtree = kNoVtree;
  Var var = 0;                  // terminal, literal
  bool polarity = true;         // literal
  double log_theta_true = 0.0;  // terminal: log Pr(var = 1)
  std::vector<Element> elements;

  static PsddNode terminal(VtreeId vtree, Var var, double log_theta_true);
  static PsddNode literal(VtreeId vtree, Var var, bool polarity);
  static PsddNode decision(VtreeId vtree, std::vector<Element> elements);

  bool is_decision() const { return kind == NodeKind::kDecision; }
  friend bool operator==(const PsddNode&, const PsddNode&) = default;
};

/// A PSDD: nodes stored children-first (every element references a lower id),
/// each normalized for a node of the shared vtree. Immutable; learning
/// produces new circuits.
class Circuit {
 public:
  /// Checks reference ranges and the children-first ordering; semantic
  /// invariants are reported by `validate`.
  Circuit(std::shared_ptr<const Vtree> vtree, std::vector<PsddNode> nodes, NodeId root);

  const Vtree& vtree() const { return *vtree_; }
  const std::shared_ptr<const Vtree>& vtree_ptr() const { return vtree_; }
  std::size_t num_vars() const { return vtree_->num_vars(); }
  std::size_t size() const { return nodes_.size(); }
  NodeId root() const { return root_; }
  const PsddNode& node(NodeId id) const { return nodes_[id]; }
  const std::vector<PsddNode>& nodes() const { return nodes_; }

  /// Free parameters of reachable nodes: k-1 per decision node, 1 per terminal.
  std::size_t num_parameters() const;

  /// Unreachable nodes dropped; ids reassigned in depth-first post-order.
  Circuit normalized() const;
  /// Builds a circuit from nodes in any acyclic id order (renumbered as in `normalized`).
  static Circuit from_dag(std::shared_ptr<const Vtree> vtree, const std::vector<PsddNode>& nodes, NodeId root);

  std::string to_text(const std::string& vtree_file = "circuit.vtree") const;
  /// Parses and checks structure; `vtree` must be the file's companion vtree.
  static Circuit parse(const std::string& text, std::shared_ptr<const Vtree> vtree);
  /// Writes `<path>` and the companion vtree next to it as `<stem>.vtree`.
  void save(const std::filesystem::path& path) const;
  /// Loads a circuit and the vtree named in its header (relative to the file).
  static Circuit load(const std::filesystem::path& path);

 private:
  std::shared_ptr<const Vtree> vtree_;
  std::vector<PsddNode> nodes_;
  NodeId root_;
};

/// Circuit text as parsed, before structural checks.
struct RawCircuit {
  std::string vtree_file;
  std::vector<PsddNode> nodes;
  NodeId root = kNoNode;
};
RawCircuit parse_circuit_text(const std::string& text);

/// Returns human-readable invariant violations; empty means valid.
std::vector<std::string> validate(const Circuit& circuit);
std::vector<std::string> validate_nodes(const Vtree& vtree, const std::vector<PsddNode>& nodes, NodeId root);

/// Appends nodes children-first; decision nodes take their vtree node from
/// the prime's parent.
class CircuitBuilder {
 public:
  explicit CircuitBuilder(std::shared_ptr<const Vtree> vtree);

  NodeId terminal(Var var, double theta_true);
  NodeId literal(Var var, bool polarity);
  /// (prime, sub, theta) with theta in linear space.
  struct Choice {
    NodeId prime;
    NodeId sub;
    double theta;
  };
  NodeId decision(const std::vector<Choice>& choices);
  /// Product of independent terminals over the subtree `v` (theta 0.5 each).
  NodeId factorized(VtreeId v);

  const Vtree& vtree() const { return *vtree_; }
  const PsddNode& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  Circuit build(NodeId root) const;

 private:
  NodeId push(PsddNode node);

  std::shared_ptr<const Vtree> vtree_;
  std::vector<PsddNode> nodes_;
};

}  // namespace llae
