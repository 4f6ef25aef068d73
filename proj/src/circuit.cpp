#include "llae/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "llae/error.hpp"
#include "text_util.hpp"

namespace llae {

PsddNode PsddNode::terminal(VtreeId vtree, Var var, double log_theta_true) {
  PsddNode n;
  n.kind = NodeKind::kTerminal;
  n.vtree = vtree;
  n.var = var;
  n.log_theta_true = log_theta_true;
  return n;
}

PsddNode PsddNode::literal(VtreeId vtree, Var var, bool polarity) {
  PsddNode n;
  n.kind = NodeKind::kLiteral;
  n.vtree = vtree;
  n.var = var;
  n.polarity = polarity;
  return n;
}

PsddNode PsddNode::decision(VtreeId vtree, std::vector<Element> elements) {
  PsddNode n;
  n.kind = NodeKind::kDecision;
  n.vtree = vtree;
  n.elements = std::move(elements);
  return n;
}

Circuit::Circuit(std::shared_ptr<const Vtree> vtree, std::vector<PsddNode> nodes, NodeId root)
    : vtree_(std::move(vtree)), nodes_(std::move(nodes)), root_(root) {
  if (!vtree_) throw InvalidArgument("circuit needs a vtree");
  if (root_ >= nodes_.size()) throw InvalidArgument("circuit root out of range");
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const auto& n = nodes_[id];
    if (n.vtree >= vtree_->size()) throw InvalidArgument("node " + std::to_string(id) + " has bad vtree id");
    if (!n.is_decision()) {
      if (n.var >= vtree_->num_vars()) throw InvalidArgument("node " + std::to_string(id) + " has bad variable");
      continue;
    }
    if (n.elements.empty()) throw InvalidArgument("decision node " + std::to_string(id) + " has no elements");
    for (const auto& e : n.elements) {
      if (e.prime >= id || e.sub >= id) {
        throw InvalidArgument("node " + std::to_string(id) + " references a node that does not precede it");
      }
    }
  }
}

std::size_t Circuit::num_parameters() const {
  std::vector<std::uint8_t> reached(nodes_.size(), 0);
  reached[root_] = 1;
  std::size_t count = 0;
  for (NodeId id = static_cast<NodeId>(nodes_.size()); id-- > 0;) {
    if (!reached[id]) continue;
    const auto& n = nodes_[id];
    if (n.kind == NodeKind::kTerminal) {
      ++count;
    } else if (n.is_decision()) {
      count += n.elements.size() - 1;
      for (const auto& e : n.elements) reached[e.prime] = reached[e.sub] = 1;
    }
  }
  return count;
}

namespace {

// Depth-first post-order from `root` over element children (prime, then sub).
// Works on any acyclic node array regardless of id order.
std::vector<NodeId> post_order(const std::vector<PsddNode>& nodes, NodeId root) {
  std::vector<NodeId> order;
  std::vector<std::uint8_t> state(nodes.size(), 0);
  std::vector<std::pair<NodeId, std::size_t>> stack{{root, 0}};
  state[root] = 1;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto& n = nodes[id];
    const std::size_t num_children = n.is_decision() ? n.elements.size() * 2 : 0;
    if (next < num_children) {
      const auto& e = n.elements[next / 2];
      const NodeId child = next % 2 == 0 ? e.prime : e.sub;
      ++next;
      if (state[child] == 0) {
        state[child] = 1;
        stack.push_back({child, 0});
      } else if (state[child] == 1) {
        throw InvalidArgument("circuit contains a cycle");
      }
    } else {
      state[id] = 2;
      order.push_back(id);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

Circuit Circuit::normalized() const { return from_dag(vtree_, nodes_, root_); }

Circuit Circuit::from_dag(std::shared_ptr<const Vtree> vtree, const std::vector<PsddNode>& nodes, NodeId root) {
  if (root >= nodes.size()) throw InvalidArgument("circuit root out of range");
  for (const auto& n : nodes) {
    for (const auto& e : n.elements) {
      if (e.prime >= nodes.size() || e.sub >= nodes.size()) throw InvalidArgument("element references unknown node");
    }
  }
  const auto order = post_order(nodes, root);
  std::vector<NodeId> remap(nodes.size(), kNoNode);
  std::vector<PsddNode> out;
  out.reserve(order.size());
  for (NodeId old_id : order) {
    PsddNode n = nodes[old_id];
    for (auto& e : n.elements) {
      e.prime = remap[e.prime];
      e.sub = remap[e.sub];
    }
    remap[old_id] = static_cast<NodeId>(out.size());
    out.push_back(std::move(n));
  }
  return Circuit(std::move(vtree), std::move(out), remap[root]);
}

std::string Circuit::to_text(const std::string& vtree_file) const {
  std::ostringstream out;
  out << "c llae psdd: T <id> <vtree> <var> <log_theta_true> | L <id> <vtree> <+-var> | "
         "D <id> <vtree> <k> {<prime> <sub> <log_theta>}*k\n";
  out << "vtree " << vtree_file << '\n';
  out << "nodes " << nodes_.size() << '\n';
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const auto& n = nodes_[id];
    switch (n.kind) {
      case NodeKind::kTerminal:
        out << "T " << id << ' ' << n.vtree << ' ' << n.var << ' ' << detail::format_double(n.log_theta_true);
        break;
      case NodeKind::kLiteral:
        out << "L " << id << ' ' << n.vtree << ' ' << (n.polarity ? '+' : '-') << n.var;
        break;
      case NodeKind::kDecision:
        out << "D " << id << ' ' << n.vtree << ' ' << n.elements.size();
        for (const auto& e : n.elements) {
          out << ' ' << e.prime << ' ' << e.sub << ' ' << detail::format_double(e.log_theta);
        }
        break;
    }
    out << '\n';
  }
  return out.str();
}

RawCircuit parse_circuit_text(const std::string& text) {
  detail::LineReader reader(text);
  RawCircuit raw;
  auto tokens = reader.next_tokens();
  if (tokens.size() != 2 || tokens[0] != "vtree") throw ParseError("expected 'vtree <file>' header", reader.line_number());
  raw.vtree_file = std::string(tokens[1]);
  tokens = reader.next_tokens();
  if (tokens.size() != 2 || tokens[0] != "nodes") throw ParseError("expected 'nodes <count>' line", reader.line_number());
  const auto count = detail::parse_uint(tokens[1], reader.line_number());
  if (count == 0) throw ParseError("circuit has no nodes", reader.line_number());
  raw.nodes.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    tokens = reader.next_tokens();
    const auto line = reader.line_number();
    if (tokens.size() < 3) throw ParseError("truncated node line", line);
    if (detail::parse_uint(tokens[1], line) != i) throw ParseError("node ids must be 0..n-1 in order", line);
    const auto vtree = static_cast<VtreeId>(detail::parse_uint(tokens[2], line));
    if (tokens[0] == "T" && tokens.size() == 5) {
      raw.nodes[i] = PsddNode::terminal(vtree, static_cast<Var>(detail::parse_uint(tokens[3], line)),
                                        detail::parse_double(tokens[4], line));
    } else if (tokens[0] == "L" && tokens.size() == 4) {
      const auto lit = tokens[3];
      if (lit.size() < 2 || (lit[0] != '+' && lit[0] != '-')) throw ParseError("literal needs explicit sign", line);
      raw.nodes[i] = PsddNode::literal(vtree, static_cast<Var>(detail::parse_uint(lit.substr(1), line)), lit[0] == '+');
    } else if (tokens[0] == "D" && tokens.size() >= 4) {
      const auto k = detail::parse_uint(tokens[3], line);
      if (k == 0 || tokens.size() != 4 + 3 * k) throw ParseError("decision node element count mismatch", line);
      std::vector<Element> elements;
      for (std::uint64_t e = 0; e < k; ++e) {
        const auto prime = detail::parse_uint(tokens[4 + 3 * e], line);
        const auto sub = detail::parse_uint(tokens[5 + 3 * e], line);
        if (prime >= count || sub >= count) throw ParseError("element references unknown node", line);
        elements.push_back({static_cast<NodeId>(prime), static_cast<NodeId>(sub),
                            detail::parse_double(tokens[6 + 3 * e], line)});
      }
      raw.nodes[i] = PsddNode::decision(vtree, std::move(elements));
    } else {
      throw ParseError("unrecognized node line", line);
    }
  }
  if (!reader.next_tokens().empty()) throw ParseError("trailing content after last node", reader.line_number());
  raw.root = static_cast<NodeId>(count - 1);
  return raw;
}

Circuit Circuit::parse(const std::string& text, std::shared_ptr<const Vtree> vtree) {
  auto raw = parse_circuit_text(text);
  try {
    return Circuit(std::move(vtree), std::move(raw.nodes), raw.root);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 0);
  }
}

void Circuit::save(const std::filesystem::path& path) const {
  auto vtree_path = path;
  vtree_path.replace_extension(".vtree");
  vtree_->save(vtree_path);
  detail::write_file(path, to_text(vtree_path.filename().string()));
}

Circuit Circuit::load(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  auto raw = parse_circuit_text(text);
  auto vtree = std::make_shared<const Vtree>(Vtree::load(path.parent_path() / raw.vtree_file));
  try {
    return Circuit(std::move(vtree), std::move(raw.nodes), raw.root);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 0);
  }
}

namespace {

class OverlapChecker {
 public:
  explicit OverlapChecker(const std::vector<PsddNode>& nodes) : nodes_(nodes) {}

  // Do the supports of a and b (normalized for the same vtree node) intersect?
  bool overlap(NodeId a, NodeId b) {
    if (a > b) std::swap(a, b);
    const auto& na = nodes_[a];
    const auto& nb = nodes_[b];
    if (!na.is_decision() || !nb.is_decision()) {
      if (na.kind == NodeKind::kLiteral && nb.kind == NodeKind::kLiteral) return na.polarity == nb.polarity;
      return true;  // terminals support both values
    }
    const auto key = std::make_pair(a, b);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    bool result = false;
    for (const auto& ea : na.elements) {
      for (const auto& eb : nb.elements) {
        if (overlap(ea.prime, eb.prime) && overlap(ea.sub, eb.sub)) {
          result = true;
          break;
        }
      }
      if (result) break;
    }
    memo_.emplace(key, result);
    return result;
  }

 private:
  const std::vector<PsddNode>& nodes_;
  std::map<std::pair<NodeId, NodeId>, bool> memo_;
};

}  // namespace

std::vector<std::string> validate_nodes(const Vtree& vtree, const std::vector<PsddNode>& nodes, NodeId root) {
  std::vector<std::string> violations;
  auto report = [&](NodeId id, const std::string& what) {
    violations.push_back("node " + std::to_string(id) + ": " + what);
  };
  if (root >= nodes.size()) {
    violations.push_back("root id out of range");
    return violations;
  }
  bool structural_ok = true;
  bool ordered = true;
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const auto& n = nodes[id];
    if (n.vtree >= vtree.size()) {
      report(id, "vtree id out of range");
      structural_ok = false;
      continue;
    }
    if (!n.is_decision()) {
      if (n.var >= vtree.num_vars() || vtree.leaf_of(n.var) != n.vtree) {
        report(id, "normalization: leaf node not attached to the vtree leaf of its variable");
        structural_ok = false;
      }
      if (n.kind == NodeKind::kTerminal && !(n.log_theta_true < 0.0 && std::isfinite(n.log_theta_true))) {
        report(id, "terminal parameter outside (0, 1)");
      }
      continue;
    }
    if (vtree.is_leaf(n.vtree)) {
      report(id, "decision node attached to a vtree leaf");
      structural_ok = false;
      continue;
    }
    if (n.elements.empty()) {
      report(id, "decision node has no elements");
      structural_ok = false;
      continue;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n.elements.size(); ++i) {
      const auto& e = n.elements[i];
      if (e.prime >= nodes.size() || e.sub >= nodes.size()) {
        report(id, "element " + std::to_string(i) + " references a missing node");
        structural_ok = false;
        continue;
      }
      if (e.prime >= id || e.sub >= id) ordered = false;
      const VtreeId pv = nodes[e.prime].vtree, sv = nodes[e.sub].vtree;
      if (pv >= vtree.size() || sv >= vtree.size()) continue;
      if (!vtree.is_within(pv, vtree.left(n.vtree)) || !vtree.is_within(sv, vtree.right(n.vtree))) {
        report(id, "decomposability: element " + std::to_string(i) +
                       " prime/sub scopes are not within the left/right vtree children");
        structural_ok = false;
      } else if (pv != vtree.left(n.vtree) || sv != vtree.right(n.vtree)) {
        report(id, "normalization: element " + std::to_string(i) +
                       " prime/sub not normalized for the vtree children");
        structural_ok = false;
      }
      if (!std::isfinite(e.log_theta)) report(id, "element " + std::to_string(i) + " has non-positive parameter");
      total += std::exp(e.log_theta);
    }
    if (std::abs(total - 1.0) > 1e-9) {
      report(id, "parameters sum to " + detail::format_double(total) + ", not 1");
    }
  }
  if (!ordered) {
    try {
      post_order(nodes, root);
      violations.push_back("nodes are not stored children-first");
    } catch (const InvalidArgument&) {
      violations.push_back("circuit contains a cycle");
      structural_ok = false;
    }
  }
  if (!structural_ok) return violations;

  OverlapChecker checker(nodes);
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const auto& n = nodes[id];
    if (!n.is_decision()) continue;
    for (std::size_t i = 0; i < n.elements.size(); ++i) {
      for (std::size_t j = i + 1; j < n.elements.size(); ++j) {
        if (checker.overlap(n.elements[i].prime, n.elements[j].prime)) {
          report(id, "determinism: primes " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
        }
      }
    }
  }
  return violations;
}

std::vector<std::string> validate(const Circuit& circuit) {
  return validate_nodes(circuit.vtree(), circuit.nodes(), circuit.root());
}

CircuitBuilder::CircuitBuilder(std::shared_ptr<const Vtree> vtree) : vtree_(std::move(vtree)) {
  if (!vtree_) throw InvalidArgument("builder needs a vtree");
}

NodeId CircuitBuilder::push(PsddNode node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId CircuitBuilder::terminal(Var var, double theta_true) {
  if (var >= vtree_->num_vars()) throw InvalidArgument("terminal variable out of range");
  if (!(theta_true > 0.0 && theta_true < 1.0)) throw InvalidArgument("terminal parameter must be in (0, 1)");
  return push(PsddNode::terminal(vtree_->leaf_of(var), var, std::log(theta_true)));
}

NodeId CircuitBuilder::literal(Var var, bool polarity) {
  if (var >= vtree_->num_vars()) throw InvalidArgument("literal variable out of range");
  return push(PsddNode::literal(vtree_->leaf_of(var), var, polarity));
}

NodeId CircuitBuilder::decision(const std::vector<Choice>& choices) {
  if (choices.empty()) throw InvalidArgument("decision node needs elements");
  const VtreeId v = vtree_->parent(nodes_.at(choices[0].prime).vtree);
  if (v == kNoVtree) throw InvalidArgument("prime is normalized for the vtree root");
  std::vector<Element> elements;
  for (const auto& c : choices) {
    if (nodes_.at(c.prime).vtree != vtree_->left(v) || nodes_.at(c.sub).vtree != vtree_->right(v)) {
      throw InvalidArgument("element prime/sub are not normalized for the vtree children");
    }
    if (!(c.theta > 0.0)) throw InvalidArgument("element parameter must be positive");
    elements.push_back({c.prime, c.sub, std::log(c.theta)});
  }
  return push(PsddNode::decision(v, std::move(elements)));
}

NodeId CircuitBuilder::factorized(VtreeId v) {
  if (vtree_->is_leaf(v)) return terminal(vtree_->var(v), 0.5);
  const NodeId l = factorized(vtree_->left(v));
  const NodeId r = factorized(vtree_->right(v));
  return decision({{l, r, 1.0}});
}

Circuit CircuitBuilder::build(NodeId root) const { return Circuit(vtree_, nodes_, root).normalized(); }

}  // namespace llae
