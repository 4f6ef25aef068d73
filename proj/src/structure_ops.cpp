#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "learn_internal.hpp"
#include "llae/error.hpp"
#include "llae/inference.hpp"
#include "llae/learn.hpp"

namespace llae {

namespace detail {

Conditioned condition(Overlay& nodes, const Vtree& vtree, NodeId id, Var var, bool value,
                      std::unordered_map<NodeId, Conditioned>& memo) {
  if (auto it = memo.find(id); it != memo.end()) return it->second;
  const PsddNode n = nodes[id];
  Conditioned result;
  if (!vtree.contains(n.vtree, var)) {
    result = {id, 0.0};
  } else if (n.kind == NodeKind::kTerminal) {
    const double mass = value ? n.log_theta_true : std::log(-std::expm1(n.log_theta_true));
    result = {nodes.add(PsddNode::literal(n.vtree, var, value)), mass};
  } else if (n.kind == NodeKind::kLiteral) {
    result = n.polarity == value ? Conditioned{id, 0.0} : Conditioned{};
  } else {
    const bool in_prime = vtree.contains(vtree.left(n.vtree), var);
    std::vector<Element> elements;
    std::vector<double> weights;
    bool changed = false;
    for (const auto& e : n.elements) {
      const Conditioned c = condition(nodes, vtree, in_prime ? e.prime : e.sub, var, value, memo);
      if (c.id == kNoNode) {
        changed = true;
        continue;
      }
      Element updated = e;
      (in_prime ? updated.prime : updated.sub) = c.id;
      changed = changed || c.id != (in_prime ? e.prime : e.sub) || c.log_mass != 0.0;
      elements.push_back(updated);
      weights.push_back(e.log_theta + c.log_mass);
    }
    if (elements.empty()) {
      result = {};
    } else if (!changed) {
      result = {id, 0.0};
    } else {
      const double mass = log_sum_exp(weights);
      for (std::size_t i = 0; i < elements.size(); ++i) elements[i].log_theta = weights[i] - mass;
      result = {nodes.add(PsddNode::decision(n.vtree, std::move(elements))), mass};
    }
  }
  memo.emplace(id, result);
  return result;
}

NodeId copy_subcircuit(Overlay& nodes, NodeId id, int depth, std::unordered_map<NodeId, NodeId>& memo) {
  if (auto it = memo.find(id); it != memo.end()) return it->second;
  PsddNode copy = nodes[id];
  if (copy.kind == NodeKind::kLiteral) return id;
  if (copy.is_decision() && depth != 0) {
    for (auto& e : copy.elements) {
      e.prime = copy_subcircuit(nodes, e.prime, depth < 0 ? -1 : depth - 1, memo);
      e.sub = copy_subcircuit(nodes, e.sub, depth < 0 ? -1 : depth - 1, memo);
    }
  }
  const NodeId out = nodes.add(std::move(copy));
  memo.emplace(id, out);
  return out;
}

bool apply_split(Overlay& nodes, const Vtree& vtree, NodeId decision, std::size_t element, Var var, int copy_depth) {
  const PsddNode q = nodes[decision];
  const Element old = q.elements[element];
  std::unordered_map<NodeId, Conditioned> pos_memo, neg_memo;
  const Conditioned pos = condition(nodes, vtree, old.prime, var, true, pos_memo);
  if (pos.id == kNoNode || pos.id == old.prime) return false;
  const Conditioned neg = condition(nodes, vtree, old.prime, var, false, neg_memo);
  if (neg.id == kNoNode) return false;
  std::unordered_map<NodeId, NodeId> copy_memo;
  const NodeId sub_copy = copy_subcircuit(nodes, old.sub, copy_depth, copy_memo);
  PsddNode updated = q;
  updated.elements[element] = {pos.id, old.sub, old.log_theta + pos.log_mass};
  updated.elements.push_back({neg.id, sub_copy, old.log_theta + neg.log_mass});
  nodes.replace(decision, std::move(updated));
  return true;
}

void apply_clone(Overlay& nodes, NodeId node, std::span<const ParentRef> parents, int copy_depth) {
  std::unordered_map<NodeId, NodeId> memo;
  const NodeId copy = copy_subcircuit(nodes, node, copy_depth, memo);
  for (const auto& ref : parents) {
    PsddNode parent = nodes[ref.parent];
    auto& e = parent.elements.at(ref.element);
    (ref.is_prime ? e.prime : e.sub) = copy;
    nodes.replace(ref.parent, std::move(parent));
  }
}

}  // namespace detail

namespace {

Circuit finish_edit(const Circuit& circuit, const detail::Overlay& overlay, Refit refit) {
  Circuit out = Circuit::from_dag(circuit.vtree_ptr(), overlay.materialize(), circuit.root());
  if (refit.data) out = learn_parameters(out, *refit.data, refit.alpha);
  return out;
}

}  // namespace

Circuit split(const Circuit& circuit, NodeId decision_node, std::size_t element, Var var, Refit refit,
              int copy_depth) {
  if (decision_node >= circuit.size() || !circuit.node(decision_node).is_decision()) {
    throw InvalidArgument("split target is not a decision node");
  }
  const auto& q = circuit.node(decision_node);
  if (element >= q.elements.size()) throw InvalidArgument("split element index out of range");
  const auto& vtree = circuit.vtree();
  if (!vtree.contains(vtree.left(q.vtree), var)) {
    throw RejectedOperation("split variable " + std::to_string(var) + " is outside the prime scope");
  }
  detail::Overlay overlay(circuit.nodes());
  if (!detail::apply_split(overlay, vtree, decision_node, element, var, copy_depth)) {
    throw RejectedOperation("split on variable " + std::to_string(var) + " leaves an unsatisfiable branch");
  }
  return finish_edit(circuit, overlay, refit);
}

Circuit clone(const Circuit& circuit, NodeId node, std::span<const ParentRef> parents, Refit refit,
              int copy_depth) {
  if (node >= circuit.size()) throw InvalidArgument("clone target out of range");
  const auto refs = parent_references(circuit, node);
  if (refs.size() < 2) throw RejectedOperation("clone target has fewer than two parents");
  if (parents.empty() || parents.size() >= refs.size()) {
    throw RejectedOperation("clone needs a proper non-empty subset of the parents");
  }
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (std::find(refs.begin(), refs.end(), parents[i]) == refs.end()) {
      throw RejectedOperation("clone parent is not a reference to the node");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (parents[i] == parents[j]) throw RejectedOperation("clone parent listed twice");
    }
  }
  detail::Overlay overlay(circuit.nodes());
  detail::apply_clone(overlay, node, parents, copy_depth);
  return finish_edit(circuit, overlay, refit);
}

namespace {

// Vtree node whose variable set equals `group`, or kNoVtree.
VtreeId find_group_node(const Vtree& vtree, std::span<const Var> group) {
  if (group.empty()) return kNoVtree;
  for (Var v : group) {
    if (v >= vtree.num_vars()) throw InvalidArgument("group variable out of range");
  }
  VtreeId node = vtree.leaf_of(group[0]);
  while (node != kNoVtree && vtree.variables(node).size() < group.size()) node = vtree.parent(node);
  if (node == kNoVtree || vtree.variables(node).size() != group.size()) return kNoVtree;
  for (Var v : group) {
    if (!vtree.contains(node, v)) return kNoVtree;
  }
  return node;
}

struct ExactlyOne {
  NodeId one;   // exactly one variable true
  NodeId none;  // all false
};

ExactlyOne build_exactly_one(CircuitBuilder& b, VtreeId v) {
  const auto& vtree = b.vtree();
  if (vtree.is_leaf(v)) return {b.literal(vtree.var(v), true), b.literal(vtree.var(v), false)};
  const auto l = build_exactly_one(b, vtree.left(v));
  const auto r = build_exactly_one(b, vtree.right(v));
  const double nl = static_cast<double>(vtree.variables(vtree.left(v)).size());
  const double nr = static_cast<double>(vtree.variables(vtree.right(v)).size());
  const NodeId one = b.decision({{l.one, r.none, nl / (nl + nr)}, {l.none, r.one, nr / (nl + nr)}});
  const NodeId none = b.decision({{l.none, r.none, 1.0}});
  return {one, none};
}

NodeId all_false(CircuitBuilder& b, VtreeId v) {
  const auto& vtree = b.vtree();
  if (vtree.is_leaf(v)) return b.literal(vtree.var(v), false);
  const NodeId l = all_false(b, vtree.left(v));
  return b.decision({{l, all_false(b, vtree.right(v)), 1.0}});
}

// The single assignment of the group under v in which only `target` is true.
NodeId one_hot_value(CircuitBuilder& b, VtreeId v, Var target) {
  const auto& vtree = b.vtree();
  if (vtree.is_leaf(v)) return b.literal(vtree.var(v), vtree.var(v) == target);
  if (vtree.contains(vtree.left(v), target)) {
    const NodeId l = one_hot_value(b, vtree.left(v), target);
    return b.decision({{l, all_false(b, vtree.right(v)), 1.0}});
  }
  const NodeId l = all_false(b, vtree.left(v));
  return b.decision({{l, one_hot_value(b, vtree.right(v), target), 1.0}});
}

// Assignments to variables(v), keyed by the full-width row restricted to those variables.
using Patterns = std::set<std::vector<std::uint8_t>>;

std::vector<std::uint8_t> project(const std::vector<std::uint8_t>& row, std::span<const Var> vars) {
  std::vector<std::uint8_t> out;
  out.reserve(vars.size());
  for (Var x : vars) out.push_back(row[x]);
  return out;
}

// Rows grouped by their assignment to left(v); each group maps to its assignments to right(v).
std::map<std::vector<std::uint8_t>, Patterns> by_left(const Vtree& vtree, VtreeId v, const Patterns& rows,
                                                    std::span<const Var> vars) {
  std::vector<std::size_t> left_pos, right_pos;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    (vtree.contains(vtree.left(v), vars[i]) ? left_pos : right_pos).push_back(i);
  }
  std::map<std::vector<std::uint8_t>, Patterns> out;
  for (const auto& r : rows) {
    std::vector<std::uint8_t> l, rr;
    for (std::size_t i : left_pos) l.push_back(r[i]);
    for (std::size_t i : right_pos) rr.push_back(r[i]);
    out[l].insert(rr);
  }
  return out;
}

double pattern_space(std::size_t vars) { return std::ldexp(1.0, static_cast<int>(vars)); }

// Support exactly `rows` (non-empty), as assignments in variables(v) order.
NodeId indicator(CircuitBuilder& b, VtreeId v, const Patterns& rows) {
  const auto& vtree = b.vtree();
  if (vtree.is_leaf(v)) {
    if (rows.size() == 2) return b.terminal(vtree.var(v), 0.5);
    return b.literal(vtree.var(v), rows.begin()->front() != 0);
  }
  const auto vars = vtree.variables(v);
  std::vector<CircuitBuilder::Choice> choices;
  const auto groups = by_left(vtree, v, rows, vars);
  for (const auto& [l, subs] : groups) {
    choices.push_back({indicator(b, vtree.left(v), {l}), indicator(b, vtree.right(v), subs),
                       1.0 / static_cast<double>(groups.size())});
  }
  return b.decision(choices);
}

// Support: every assignment to variables(v) outside `rows` (a proper subset).
NodeId complement(CircuitBuilder& b, VtreeId v, const Patterns& rows) {
  const auto& vtree = b.vtree();
  if (vtree.is_leaf(v)) return b.literal(vtree.var(v), rows.begin()->front() == 0);
  const auto vars = vtree.variables(v);
  const double right_space = pattern_space(vtree.variables(vtree.right(v)).size());
  std::vector<std::pair<NodeId, NodeId>> elements;
  Patterns lefts;
  for (const auto& [l, subs] : by_left(vtree, v, rows, vars)) {
    lefts.insert(l);
    if (static_cast<double>(subs.size()) < right_space) {
      elements.emplace_back(indicator(b, vtree.left(v), {l}), complement(b, vtree.right(v), subs));
    }
  }
  if (static_cast<double>(lefts.size()) < pattern_space(vtree.variables(vtree.left(v)).size())) {
    elements.emplace_back(complement(b, vtree.left(v), lefts), b.factorized(vtree.right(v)));
  }
  std::vector<CircuitBuilder::Choice> choices;
  for (const auto& [p, q] : elements) choices.push_back({p, q, 1.0 / static_cast<double>(elements.size())});
  return b.decision(choices);
}

}  // namespace

Circuit compile_exactly_one(std::shared_ptr<const Vtree> vtree, std::span<const Var> group) {
  const VtreeId node = find_group_node(*vtree, group);
  if (node == kNoVtree) throw InvalidArgument("exactly-one group is not the variable set of a vtree node");
  CircuitBuilder b(vtree);
  return b.build(build_exactly_one(b, node).one);
}

Circuit compile_base(std::shared_ptr<const Vtree> vtree, std::span<const std::vector<Var>> exactly_one_groups,
                     bool condition_on_groups, const BinaryDataset* data) {
  std::vector<VtreeId> group_nodes;
  std::vector<std::uint8_t> constrained(vtree->num_vars(), 0);
  for (const auto& g : exactly_one_groups) {
    const VtreeId node = find_group_node(*vtree, g);
    if (node == kNoVtree) throw InvalidArgument("exactly-one group is not the variable set of a vtree node");
    for (Var v : g) {
      if (constrained[v]) throw InvalidArgument("exactly-one groups overlap");
      constrained[v] = 1;
    }
    group_nodes.push_back(node);
  }
  CircuitBuilder b(vtree);
  auto build = [&](auto&& self, VtreeId v) -> NodeId {
    if (std::find(group_nodes.begin(), group_nodes.end(), v) != group_nodes.end()) {
      return build_exactly_one(b, v).one;
    }
    const auto vars = vtree->variables(v);
    if (condition_on_groups && v == vtree->root() && !vtree->is_leaf(v) &&
        std::find(group_nodes.begin(), group_nodes.end(), vtree->left(v)) != group_nodes.end()) {
      const auto values = vtree->variables(vtree->left(v));
      std::vector<CircuitBuilder::Choice> choices;
      for (Var value : values) {
        const NodeId prime = one_hot_value(b, vtree->left(v), value);
        choices.push_back({prime, self(self, vtree->right(v)), 1.0 / static_cast<double>(values.size())});
      }
      return b.decision(choices);
    }
    if (condition_on_groups && data != nullptr && v == vtree->root() && !vtree->is_leaf(v)) {
      const auto left_vars = vtree->variables(vtree->left(v));
      const bool free = std::none_of(left_vars.begin(), left_vars.end(), [&](Var x) { return constrained[x] != 0; });
      Patterns seen;
      for (const auto& row : data->rows()) seen.insert(project(row.values, left_vars));
      if (free && left_vars.size() <= kMaxConditionedVars && !seen.empty() && seen.size() <= kMaxConditionedPatterns) {
        std::vector<CircuitBuilder::Choice> choices;
        for (const auto& p : seen) choices.push_back({indicator(b, vtree->left(v), {p}), self(self, vtree->right(v)), 1.0});
        if (static_cast<double>(seen.size()) < pattern_space(left_vars.size())) {
          choices.push_back({complement(b, vtree->left(v), seen), self(self, vtree->right(v)), 1.0});
        }
        for (auto& c : choices) c.theta = 1.0 / static_cast<double>(choices.size());
        return b.decision(choices);
      }
    }
    if (std::none_of(vars.begin(), vars.end(), [&](Var x) { return constrained[x] != 0; })) return b.factorized(v);
    const NodeId l = self(self, vtree->left(v));
    const NodeId r = self(self, vtree->right(v));
    return b.decision({{l, r, 1.0}});
  };
  return b.build(build(build, vtree->root()));
}

}  // namespace llae
