#pragma once

// Machinery shared by the parameter learner, the structure operations and
// the structure search: a copy-on-write view over circuit nodes, per-example
// tracing, and the node-local edits (conditioning, copying).

#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "llae/circuit.hpp"
#include "llae/learn.hpp"

namespace llae::detail {

/// Base nodes plus edits: replaced base nodes and appended new nodes (ids
/// continue after the base). Appended nodes may be referenced by replaced
/// ones, so ids are not children-first until materialized via from_dag.
class Overlay {
 public:
  explicit Overlay(const std::vector<PsddNode>& base) : base_(&base) {}

  std::size_t size() const { return base_->size() + added_.size(); }
  std::size_t base_size() const { return base_->size(); }

  const PsddNode& operator[](NodeId id) const {
    if (id >= base_->size()) return added_[id - base_->size()];
    for (const auto& [rid, node] : replaced_) {
      if (rid == id) return node;
    }
    return (*base_)[id];
  }

  NodeId add(PsddNode node) {
    added_.push_back(std::move(node));
    return static_cast<NodeId>(size() - 1);
  }

  void replace(NodeId id, PsddNode node) {
    if (id >= base_->size()) {
      added_[id - base_->size()] = std::move(node);
      return;
    }
    for (auto& [rid, existing] : replaced_) {
      if (rid == id) {
        existing = std::move(node);
        return;
      }
    }
    replaced_.emplace_back(id, std::move(node));
  }

  bool is_replaced(NodeId id) const {
    for (const auto& entry : replaced_) {
      if (entry.first == id) return true;
    }
    return false;
  }

  std::vector<PsddNode> materialize() const {
    std::vector<PsddNode> out = *base_;
    for (const auto& [id, node] : replaced_) out[id] = node;
    out.insert(out.end(), added_.begin(), added_.end());
    return out;
  }

  void clear() {
    added_.clear();
    replaced_.clear();
  }

 private:
  const std::vector<PsddNode>* base_;
  std::vector<PsddNode> added_;
  std::vector<std::pair<NodeId, PsddNode>> replaced_;
};

/// Step of an example's path through the circuit. `slot` is the chosen
/// element (decision), the variable value (terminal) or 0 (literal).
struct TraceStep {
  NodeId node;
  std::uint32_t slot;
};

/// Follows one complete example down the unique path of nodes that
/// determinism assigns to it.
class Tracer {
 public:
  /// Appends the path to `out`; false when the example has probability 0.
  bool trace(const Overlay& nodes, NodeId root, const std::uint8_t* row, std::vector<TraceStep>& out) {
    if (stamp_.size() < nodes.size()) {
      stamp_.resize(nodes.size(), 0);
      value_.resize(nodes.size(), 0);
    }
    if (++current_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      current_ = 1;
    }
    return walk(nodes, root, row, out);
  }

 private:
  bool sat(const Overlay& nodes, NodeId id, const std::uint8_t* row) {
    if (stamp_[id] == current_) return value_[id] != 0;
    const auto& n = nodes[id];
    bool result = true;
    if (n.kind == NodeKind::kLiteral) {
      result = (row[n.var] != 0) == n.polarity;
    } else if (n.kind == NodeKind::kDecision) {
      result = false;
      for (const auto& e : n.elements) {
        if (sat(nodes, e.prime, row) && sat(nodes, e.sub, row)) {
          result = true;
          break;
        }
      }
    }
    stamp_[id] = current_;
    value_[id] = result ? 1 : 0;
    return result;
  }

  bool walk(const Overlay& nodes, NodeId id, const std::uint8_t* row, std::vector<TraceStep>& out) {
    const auto& n = nodes[id];
    switch (n.kind) {
      case NodeKind::kTerminal:
        out.push_back({id, row[n.var]});
        return true;
      case NodeKind::kLiteral:
        if ((row[n.var] != 0) != n.polarity) return false;
        out.push_back({id, 0});
        return true;
      case NodeKind::kDecision:
        for (std::uint32_t i = 0; i < n.elements.size(); ++i) {
          if (sat(nodes, n.elements[i].prime, row)) {
            out.push_back({id, i});
            return walk(nodes, n.elements[i].prime, row, out) && walk(nodes, n.elements[i].sub, row, out);
          }
        }
        return false;
    }
    return false;
  }

  std::vector<std::uint32_t> stamp_;
  std::vector<std::uint8_t> value_;
  std::uint32_t current_ = 0;
};

/// Number of count slots a node carries.
inline std::size_t count_slots(const PsddNode& n) {
  switch (n.kind) {
    case NodeKind::kTerminal:
      return 2;
    case NodeKind::kLiteral:
      return 1;
    case NodeKind::kDecision:
      return n.elements.size();
  }
  return 0;
}

/// Log-likelihood contribution of one node when its parameters are re-fit
/// to `counts`.
double refit_node_log_likelihood(const PsddNode& n, std::span<const double> counts, double alpha);

struct Conditioned {
  NodeId id = kNoNode;  // kNoNode: unsatisfiable
  double log_mass = 0.0;
};

/// The node's distribution conditioned on var = value, with log Pr(var = value).
Conditioned condition(Overlay& nodes, const Vtree& vtree, NodeId id, Var var, bool value,
                      std::unordered_map<NodeId, Conditioned>& memo);

/// Copy of the node with its parameters; children copied down to `depth`
/// further levels (-1: all the way). Literal nodes are shared.
NodeId copy_subcircuit(Overlay& nodes, NodeId id, int depth, std::unordered_map<NodeId, NodeId>& memo);

/// Edits `nodes` so element `element` of `decision` is split on `var`.
/// Returns false (leaving partial edits) when one branch is unsatisfiable.
bool apply_split(Overlay& nodes, const Vtree& vtree, NodeId decision, std::size_t element, Var var, int copy_depth);

/// Edits `nodes` so that `parents` point to a fresh copy of `node`.
void apply_clone(Overlay& nodes, NodeId node, std::span<const ParentRef> parents, int copy_depth);

/// Free parameters reachable from root.
std::size_t count_parameters(const Overlay& nodes, NodeId root, std::vector<std::uint8_t>& scratch);

}  // namespace llae::detail
