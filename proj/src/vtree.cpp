#include "llae/vtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "llae/dataset.hpp"
#include "llae/error.hpp"
#include "text_util.hpp"

namespace llae {

Vtree::Vtree(std::vector<Node> nodes, VtreeId root) : nodes_(std::move(nodes)), root_(root) {
  const std::size_t n = nodes_.size();
  if (n == 0 || root_ >= n) throw InvalidArgument("vtree has no valid root");
  parent_.assign(n, kNoVtree);
  std::size_t num_leaves = 0;
  for (VtreeId id = 0; id < n; ++id) {
    const Node& node = nodes_[id];
    if (node.is_leaf()) {
      if (node.right != kNoVtree) throw InvalidArgument("vtree node " + std::to_string(id) + " has one child");
      ++num_leaves;
      continue;
    }
    for (VtreeId child : {node.left, node.right}) {
      if (child >= n || child == id) throw InvalidArgument("vtree node " + std::to_string(id) + " has bad child");
      if (parent_[child] != kNoVtree) throw InvalidArgument("vtree node " + std::to_string(child) + " has two parents");
      parent_[child] = id;
    }
  }
  if (parent_[root_] != kNoVtree) throw InvalidArgument("vtree root has a parent");

  leaf_of_.assign(num_leaves, kNoVtree);
  begin_.assign(n, 0);
  end_.assign(n, 0);
  // Iterative in-order walk; also detects unreachable nodes and cycles.
  std::vector<std::uint8_t> state(n, 0);
  std::vector<VtreeId> stack{root_};
  while (!stack.empty()) {
    const VtreeId id = stack.back();
    const Node& node = nodes_[id];
    if (node.is_leaf()) {
      stack.pop_back();
      if (node.var >= num_leaves) {
        throw InvalidArgument("vtree variable " + std::to_string(node.var) + " outside [0, " +
                              std::to_string(num_leaves) + ")");
      }
      if (leaf_of_[node.var] != kNoVtree) throw InvalidArgument("variable " + std::to_string(node.var) + " appears twice");
      leaf_of_[node.var] = id;
      begin_[id] = static_cast<std::uint32_t>(inorder_.size());
      inorder_.push_back(node.var);
      end_[id] = begin_[id] + 1;
      state[id] = 2;
      continue;
    }
    if (state[id] == 0) {
      state[id] = 1;
      for (VtreeId child : {node.right, node.left}) {
        if (state[child] != 0) throw InvalidArgument("vtree contains a cycle");
        stack.push_back(child);
      }
    } else {
      stack.pop_back();
      begin_[id] = begin_[node.left];
      end_[id] = end_[node.right];
      if (end_[node.left] != begin_[node.right]) throw InvalidArgument("vtree is malformed");
      state[id] = 2;
    }
  }
  if (inorder_.size() != num_leaves ||
      std::any_of(state.begin(), state.end(), [](auto s) { return s != 2; })) {
    throw InvalidArgument("vtree has nodes unreachable from the root");
  }
}

std::span<const Var> Vtree::variables(VtreeId id) const {
  return std::span<const Var>(inorder_).subspan(begin_[id], end_[id] - begin_[id]);
}

bool Vtree::contains(VtreeId id, Var var) const {
  if (var >= leaf_of_.size()) return false;
  const auto pos = begin_[leaf_of_[var]];
  return pos >= begin_[id] && pos < end_[id];
}

bool Vtree::is_within(VtreeId inner, VtreeId outer) const {
  return begin_[inner] >= begin_[outer] && end_[inner] <= end_[outer];
}

std::size_t Vtree::height() const {
  std::vector<std::size_t> h(nodes_.size(), 0);
  // Children are not guaranteed to precede parents, so recurse via explicit order.
  std::vector<VtreeId> order;
  std::vector<VtreeId> stack{root_};
  while (!stack.empty()) {
    VtreeId id = stack.back();
    stack.pop_back();
    order.push_back(id);
    if (!is_leaf(id)) {
      stack.push_back(left(id));
      stack.push_back(right(id));
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!is_leaf(*it)) h[*it] = 1 + std::max(h[left(*it)], h[right(*it)]);
  }
  return h[root_];
}

std::string Vtree::to_text() const {
  std::ostringstream out;
  out << "c vtree: L <id> <var> | I <id> <left> <right> | R <root>\n";
  // Post-order so every child line precedes its parent.
  std::vector<VtreeId> order;
  std::vector<std::pair<VtreeId, bool>> stack{{root_, false}};
  while (!stack.empty()) {
    auto [id, expanded] = stack.back();
    stack.pop_back();
    if (is_leaf(id) || expanded) {
      order.push_back(id);
    } else {
      stack.push_back({id, true});
      stack.push_back({right(id), false});
      stack.push_back({left(id), false});
    }
  }
  for (VtreeId id : order) {
    const Node& node = nodes_[id];
    if (node.is_leaf()) {
      out << "L " << id << ' ' << node.var << '\n';
    } else {
      out << "I " << id << ' ' << node.left << ' ' << node.right << '\n';
    }
  }
  out << "R " << root_ << '\n';
  return out.str();
}

Vtree Vtree::parse(const std::string& text) {
  detail::LineReader reader(text);
  std::vector<Node> nodes;
  std::vector<std::uint8_t> defined;
  auto define = [&](std::uint64_t id, const Node& node) {
    if (id >= nodes.size()) {
      nodes.resize(id + 1);
      defined.resize(id + 1, 0);
    }
    if (defined[id]) throw ParseError("vtree node " + std::to_string(id) + " defined twice", reader.line_number());
    nodes[id] = node;
    defined[id] = 1;
  };
  for (;;) {
    auto tokens = reader.next_tokens();
    if (tokens.empty()) throw ParseError("missing 'R <root>' line", reader.line_number());
    const auto line = reader.line_number();
    if (tokens[0] == "L" && tokens.size() == 3) {
      Node node;
      node.var = static_cast<Var>(detail::parse_uint(tokens[2], line));
      define(detail::parse_uint(tokens[1], line), node);
    } else if (tokens[0] == "I" && tokens.size() == 4) {
      Node node;
      node.left = static_cast<VtreeId>(detail::parse_uint(tokens[2], line));
      node.right = static_cast<VtreeId>(detail::parse_uint(tokens[3], line));
      for (VtreeId child : {node.left, node.right}) {
        if (child >= defined.size() || !defined[child]) {
          throw ParseError("child " + std::to_string(child) + " referenced before definition", line);
        }
      }
      define(detail::parse_uint(tokens[1], line), node);
    } else if (tokens[0] == "R" && tokens.size() == 2) {
      const auto root = detail::parse_uint(tokens[1], line);
      if (!reader.next_tokens().empty()) throw ParseError("trailing content after root line", reader.line_number());
      if (std::find(defined.begin(), defined.end(), 0) != defined.end()) {
        throw ParseError("vtree node ids are not contiguous", line);
      }
      try {
        return Vtree(std::move(nodes), static_cast<VtreeId>(root));
      } catch (const InvalidArgument& e) {
        throw ParseError(e.what(), line);
      }
    } else {
      throw ParseError("unrecognized vtree line", line);
    }
  }
}

void Vtree::save(const std::filesystem::path& path) const { detail::write_file(path, to_text()); }

Vtree Vtree::load(const std::filesystem::path& path) { return parse(detail::read_file(path)); }

VtreeId VtreeBuilder::leaf(Var var) {
  Vtree::Node node;
  node.var = var;
  nodes_.push_back(node);
  return static_cast<VtreeId>(nodes_.size() - 1);
}

VtreeId VtreeBuilder::internal(VtreeId left, VtreeId right) {
  if (left >= nodes_.size() || right >= nodes_.size() || left == right) {
    throw InvalidArgument("internal vtree node needs two distinct existing children");
  }
  Vtree::Node node;
  node.left = left;
  node.right = right;
  nodes_.push_back(node);
  return static_cast<VtreeId>(nodes_.size() - 1);
}

namespace {

void check_order(std::span<const Var> order) {
  if (order.empty()) throw InvalidArgument("vtree order is empty");
  std::vector<Var> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidArgument("vtree order contains duplicates");
  }
}

void check_permutation(std::size_t num_vars, std::span<const Var> order) {
  if (num_vars == 0) throw InvalidArgument("vtree needs at least one variable");
  check_order(order);
  if (order.size() != num_vars ||
      std::any_of(order.begin(), order.end(), [&](Var v) { return v >= num_vars; })) {
    throw InvalidArgument("order is not a permutation of [0, " + std::to_string(num_vars) + ")");
  }
}

}  // namespace

VtreeId VtreeBuilder::balanced(std::span<const Var> order) {
  check_order(order);
  if (order.size() == 1) return leaf(order[0]);
  const std::size_t half = (order.size() + 1) / 2;
  const VtreeId l = balanced(order.first(half));
  const VtreeId r = balanced(order.subspan(half));
  return internal(l, r);
}

VtreeId VtreeBuilder::right_linear(std::span<const Var> order) {
  check_order(order);
  VtreeId acc = leaf(order.back());
  for (std::size_t i = order.size() - 1; i-- > 0;) acc = internal(leaf(order[i]), acc);
  return acc;
}

std::vector<std::vector<double>> pairwise_mutual_information(const BinaryDataset& data) {
  const std::size_t n = data.num_vars();
  // joint[i][j][a*2+b] weighted counts of (x_i = a, x_j = b), i < j
  std::vector<double> joint(n * n * 4, 0.0);
  for (const auto& row : data.rows()) {
    const double w = static_cast<double>(row.multiplicity);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        joint[(i * n + j) * 4 + row.values[i] * 2 + row.values[j]] += w;
      }
    }
  }
  std::vector<std::vector<double>> mi(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* counts = &joint[(i * n + j) * 4];
      // A constant column carries no information about any other column.
      if (counts[0] + counts[1] == 0.0 || counts[2] + counts[3] == 0.0 || counts[0] + counts[2] == 0.0 ||
          counts[1] + counts[3] == 0.0) {
        continue;
      }
      double p[4];
      double total = 0.0;
      for (int c = 0; c < 4; ++c) {
        p[c] = counts[c] + 1.0;
        total += p[c];
      }
      for (double& v : p) v /= total;
      const double pi[2] = {p[0] + p[1], p[2] + p[3]};
      const double pj[2] = {p[0] + p[2], p[1] + p[3]};
      double value = 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) value += p[a * 2 + b] * std::log(p[a * 2 + b] / (pi[a] * pj[b]));
      }
      mi[i][j] = mi[j][i] = std::max(0.0, value);
    }
  }
  return mi;
}

VtreeId VtreeBuilder::mutual_information(const BinaryDataset& data, std::span<const Var> vars,
                                         std::span<const std::vector<Var>> fixed_groups) {
  check_order(vars);
  if (data.empty()) throw InvalidArgument("mutual-information vtree needs data");
  for (Var v : vars) {
    if (v >= data.num_vars()) throw InvalidArgument("variable outside dataset range");
  }
  const auto mi = pairwise_mutual_information(data);

  struct Cluster {
    VtreeId node;
    std::vector<Var> vars;
    Var min_var;
  };
  std::vector<Cluster> clusters;
  std::vector<std::uint8_t> grouped(data.num_vars(), 0);
  for (const auto& group : fixed_groups) {
    for (Var v : group) {
      if (std::find(vars.begin(), vars.end(), v) == vars.end() || grouped[v]) {
        throw InvalidArgument("fixed vtree group is not a disjoint subset of the variables");
      }
      grouped[v] = 1;
    }
    clusters.push_back({balanced(group), group, *std::min_element(group.begin(), group.end())});
  }
  for (Var v : vars) {
    if (!grouped[v]) clusters.push_back({leaf(v), {v}, v});
  }
  auto by_min_var = [](const Cluster& a, const Cluster& b) { return a.min_var < b.min_var; };

  while (clusters.size() > 1) {
    std::sort(clusters.begin(), clusters.end(), by_min_var);
    std::size_t best_a = 0, best_b = 1;
    double best = -1.0;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double sum = 0.0;
        for (Var x : clusters[a].vars) {
          for (Var y : clusters[b].vars) sum += mi[x][y];
        }
        const double avg = sum / static_cast<double>(clusters[a].vars.size() * clusters[b].vars.size());
        if (avg > best) {
          best = avg;
          best_a = a;
          best_b = b;
        }
      }
    }
    Cluster merged{internal(clusters[best_a].node, clusters[best_b].node), clusters[best_a].vars,
                   clusters[best_a].min_var};
    merged.vars.insert(merged.vars.end(), clusters[best_b].vars.begin(), clusters[best_b].vars.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
    clusters[best_a] = std::move(merged);
  }
  return clusters.front().node;
}

Vtree VtreeBuilder::finish(VtreeId root) const {
  // Keep only nodes reachable from `root`, renumbered in post-order.
  std::vector<Vtree::Node> out;
  std::vector<VtreeId> remap(nodes_.size(), kNoVtree);
  std::vector<std::pair<VtreeId, bool>> stack{{root, false}};
  while (!stack.empty()) {
    auto [id, expanded] = stack.back();
    stack.pop_back();
    const auto& node = nodes_.at(id);
    if (node.is_leaf() || expanded) {
      Vtree::Node copy = node;
      if (!node.is_leaf()) {
        copy.left = remap[node.left];
        copy.right = remap[node.right];
      }
      remap[id] = static_cast<VtreeId>(out.size());
      out.push_back(copy);
    } else {
      stack.push_back({id, true});
      stack.push_back({node.right, false});
      stack.push_back({node.left, false});
    }
  }
  const auto new_root = static_cast<VtreeId>(out.size() - 1);
  return Vtree(std::move(out), new_root);
}

Vtree build_balanced(std::size_t num_vars, std::span<const Var> order) {
  check_permutation(num_vars, order);
  VtreeBuilder b;
  return b.finish(b.balanced(order));
}

Vtree build_rightlinear(std::size_t num_vars, std::span<const Var> order) {
  check_permutation(num_vars, order);
  VtreeBuilder b;
  return b.finish(b.right_linear(order));
}

Vtree learn_vtree_mi(const BinaryDataset& data) {
  if (data.empty() || data.num_vars() == 0) throw InvalidArgument("mutual-information vtree needs data");
  std::vector<Var> vars(data.num_vars());
  std::iota(vars.begin(), vars.end(), Var{0});
  VtreeBuilder b;
  return b.finish(b.mutual_information(data, vars));
}

}  // namespace llae
