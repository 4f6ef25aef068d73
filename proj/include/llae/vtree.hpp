#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "llae/assignment.hpp"

namespace llae {

class BinaryDataset;

using VtreeId = std::uint32_t;
inline constexpr VtreeId kNoVtree = std::numeric_limits<VtreeId>::max();

/// Full binary tree whose leaves are the variables [0, n). Immutable once built.
///
/// Every node covers a contiguous range of the in-order leaf sequence, which
/// makes scope membership and scope comparisons O(1).
class Vtree {
 public:
  struct Node {
    VtreeId left = kNoVtree;
    VtreeId right = kNoVtree;
    Var var = 0;  // leaves only
    bool is_leaf() const { return left == kNoVtree; }
    friend bool operator==(const Node&, const Node&) = default;
  };

  /// Validates the invariants; throws InvalidArgument on violation.
  Vtree(std::vector<Node> nodes, VtreeId root);

  std::size_t num_vars() const { return leaf_of_.size(); }
  std::size_t size() const { return nodes_.size(); }
  VtreeId root() const { return root_; }
  const Node& node(VtreeId id) const { return nodes_[id]; }
  const std::vector<Node>& nodes() const { return nodes_; }

  bool is_leaf(VtreeId id) const { return nodes_[id].is_leaf(); }
  VtreeId left(VtreeId id) const { return nodes_[id].left; }
  VtreeId right(VtreeId id) const { return nodes_[id].right; }
  VtreeId parent(VtreeId id) const { return parent_[id]; }
  Var var(VtreeId id) const { return nodes_[id].var; }
  VtreeId leaf_of(Var var) const { return leaf_of_[var]; }

  /// In-order leaf variables under `id`.
  std::span<const Var> variables(VtreeId id) const;
  std::span<const Var> inorder() const { return inorder_; }
  bool contains(VtreeId id, Var var) const;
  /// True when `inner` is `outer` or lies below it.
  bool is_within(VtreeId inner, VtreeId outer) const;
  /// Edges on the longest root-to-leaf path.
  std::size_t height() const;

  /// `L <id> <var>` / `I <id> <left> <right>` lines, children before parents, then `R <root>`.
  std::string to_text() const;
  static Vtree parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vtree load(const std::filesystem::path& path);

  friend bool operator==(const Vtree& a, const Vtree& b) {
    return a.root_ == b.root_ && a.nodes_ == b.nodes_;
  }

 private:
  std::vector<Node> nodes_;
  VtreeId root_;
  std::vector<VtreeId> parent_;
  std::vector<VtreeId> leaf_of_;
  std::vector<Var> inorder_;
  std::vector<std::uint32_t> begin_, end_;  // in-order range per node
};

/// Incrementally assembles a vtree out of subtrees over arbitrary variable
/// sets; `finish` checks that the result covers [0, n) exactly once.
class VtreeBuilder {
 public:
  VtreeId leaf(Var var);
  VtreeId internal(VtreeId left, VtreeId right);
  /// Height-minimal subtree with in-order leaves equal to `order`.
  VtreeId balanced(std::span<const Var> order);
  /// Chain in which every internal node's left child is a leaf.
  VtreeId right_linear(std::span<const Var> order);
  /// Greedy bottom-up pairing by average pairwise mutual information over
  /// `vars`. Each of `fixed_groups` (subsets of `vars`) starts as one
  /// balanced cluster and is never split.
  VtreeId mutual_information(const BinaryDataset& data, std::span<const Var> vars,
                             std::span<const std::vector<Var>> fixed_groups = {});

  Vtree finish(VtreeId root) const;

 private:
  std::vector<Vtree::Node> nodes_;
};

Vtree build_balanced(std::size_t num_vars, std::span<const Var> order);
Vtree build_rightlinear(std::size_t num_vars, std::span<const Var> order);
Vtree learn_vtree_mi(const BinaryDataset& data);

/// Laplace-smoothed empirical mutual information (nats) between every pair of variables.
std::vector<std::vector<double>> pairwise_mutual_information(const BinaryDataset& data);

}  // namespace llae
