#pragma once

// Test-side generators and brute-force oracles. Nothing here calls the
// library's inference or learning code.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "llae/circuit.hpp"
#include "llae/vtree.hpp"

namespace llae::testing {

inline std::shared_ptr<const Vtree> random_vtree(std::size_t num_vars, std::mt19937_64& rng) {
  std::vector<Var> order(num_vars);
  std::iota(order.begin(), order.end(), Var{0});
  std::shuffle(order.begin(), order.end(), rng);
  VtreeBuilder b;
  std::function<VtreeId(std::size_t, std::size_t)> make = [&](std::size_t lo, std::size_t hi) -> VtreeId {
    if (hi - lo == 1) return b.leaf(order[lo]);
    std::uniform_int_distribution<std::size_t> cut(lo + 1, hi - 1);
    const std::size_t mid = cut(rng);
    const VtreeId left = make(lo, mid);
    return b.internal(left, make(mid, hi));
  };
  return std::make_shared<const Vtree>(b.finish(make(0, num_vars)));
}

// Random deterministic, decomposable PSDD. A decision node splits its left
// scope on a random free variable (primes differ on that variable) or keeps a
// single element; leaves are terminals or, when constrained, literals.
// Identical sub-problems are shared with probability one half.
class RandomPsdd {
 public:
  RandomPsdd(std::shared_ptr<const Vtree> vtree, std::mt19937_64& rng) : vtree_(std::move(vtree)), rng_(rng) {}

  Circuit make(double literal_probability = 0.15) {
    literal_probability_ = literal_probability;
    nodes_.clear();
    cache_.clear();
    const NodeId root = node(vtree_->root(), {});
    return Circuit::from_dag(vtree_, nodes_, root);
  }

 private:
  using Fixed = std::map<Var, bool>;

  double coin() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  Fixed restrict(const Fixed& fixed, VtreeId v) const {
    Fixed out;
    for (const auto& [var, value] : fixed) {
      if (vtree_->contains(v, var)) out.emplace(var, value);
    }
    return out;
  }

  NodeId push(PsddNode n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId node(VtreeId v, const Fixed& fixed) {
    const auto key = std::make_pair(v, fixed);
    if (auto it = cache_.find(key); it != cache_.end() && coin() < 0.5) return it->second;
    const NodeId id = fresh(v, fixed);
    cache_[key] = id;
    return id;
  }

  NodeId fresh(VtreeId v, const Fixed& fixed) {
    if (vtree_->is_leaf(v)) {
      const Var var = vtree_->var(v);
      if (auto it = fixed.find(var); it != fixed.end()) return push(PsddNode::literal(v, var, it->second));
      if (coin() < literal_probability_) return push(PsddNode::literal(v, var, coin() < 0.5));
      return push(PsddNode::terminal(v, var, std::log(0.05 + 0.9 * coin())));
    }
    const VtreeId left = vtree_->left(v);
    const VtreeId right = vtree_->right(v);
    const Fixed left_fixed = restrict(fixed, left);
    const Fixed right_fixed = restrict(fixed, right);
    std::vector<Var> free;
    for (Var var : vtree_->variables(left)) {
      if (!left_fixed.contains(var)) free.push_back(var);
    }
    std::vector<Fixed> primes;
    if (!free.empty() && coin() < 0.7) {
      const Var var = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng_)];
      for (bool value : {true, false}) {
        Fixed f = left_fixed;
        f[var] = value;
        primes.push_back(f);
      }
    } else {
      primes.push_back(left_fixed);
    }
    std::vector<double> weights;
    for (std::size_t i = 0; i < primes.size(); ++i) weights.push_back(0.1 + coin());
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<Element> elements;
    for (std::size_t i = 0; i < primes.size(); ++i) {
      const NodeId p = node(left, primes[i]);
      const NodeId s = node(right, right_fixed);
      elements.push_back({p, s, std::log(weights[i] / total)});
    }
    return push(PsddNode::decision(v, std::move(elements)));
  }

  std::shared_ptr<const Vtree> vtree_;
  std::mt19937_64& rng_;
  double literal_probability_ = 0.15;
  std::vector<PsddNode> nodes_;
  std::map<std::pair<VtreeId, Fixed>, NodeId> cache_;
};

// Pr(x) by the recursive definition, in linear space.
inline double brute_probability(const Circuit& c, NodeId id, const std::vector<std::uint8_t>& x) {
  const PsddNode& n = c.node(id);
  switch (n.kind) {
    case NodeKind::kTerminal: {
      const double t = std::exp(n.log_theta_true);
      return x[n.var] ? t : 1.0 - t;
    }
    case NodeKind::kLiteral:
      return (x[n.var] != 0) == n.polarity ? 1.0 : 0.0;
    case NodeKind::kDecision: {
      double sum = 0.0;
      for (const auto& e : n.elements) {
        sum += std::exp(e.log_theta) * brute_probability(c, e.prime, x) * brute_probability(c, e.sub, x);
      }
      return sum;
    }
  }
  return 0.0;
}

// Probability of every complete assignment, indexed by bits (var i = bit i).
inline std::vector<double> joint_table(const Circuit& c) {
  const std::size_t n = c.num_vars();
  std::vector<double> table(std::size_t{1} << n);
  std::vector<std::uint8_t> x(n);
  for (std::size_t bits = 0; bits < table.size(); ++bits) {
    for (std::size_t i = 0; i < n; ++i) x[i] = (bits >> i) & 1U;
    table[bits] = brute_probability(c, c.root(), x);
  }
  return table;
}

inline bool consistent(std::size_t bits, const std::map<Var, bool>& literals) {
  for (const auto& [var, value] : literals) {
    if (((bits >> var) & 1U) != static_cast<std::size_t>(value)) return false;
  }
  return true;
}

inline double table_probability(const std::vector<double>& table, const std::map<Var, bool>& literals) {
  double sum = 0.0;
  for (std::size_t bits = 0; bits < table.size(); ++bits) {
    if (consistent(bits, literals)) sum += table[bits];
  }
  return sum;
}

}  // namespace llae::testing
