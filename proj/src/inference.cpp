#include "llae/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "llae/error.hpp"

namespace llae {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log1m_exp(double log_p) {
  // log(1 - exp(log_p)) for log_p < 0.
  return log_p > -0.6931471805599453 ? std::log(-std::expm1(log_p)) : std::log1p(-std::exp(log_p));
}

std::size_t choose_index(std::span<const double> log_weights, Rng& rng) {
  const double total = log_sum_exp(log_weights);
  if (!std::isfinite(total)) throw std::logic_error("sampling from an all-zero distribution");
  double u = uniform01(rng);
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    if (log_weights[i] == kNegInf) continue;
    last_positive = i;
    u -= std::exp(log_weights[i] - total);
    if (u < 0.0) return i;
  }
  return last_positive;
}

}  // namespace

double log_sum_exp(std::span<const double> values) {
  double max = kNegInf;
  for (double v : values) max = std::max(max, v);
  if (max == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max);
  return max + std::log(sum);
}

void node_log_values(const Circuit& circuit, std::span<const std::int8_t> evidence, std::vector<double>& out,
                     InferenceStats* stats) {
  const auto& nodes = circuit.nodes();
  out.resize(nodes.size());
  std::vector<double> terms;
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const auto& n = nodes[id];
    switch (n.kind) {
      case NodeKind::kTerminal: {
        const auto e = evidence[n.var];
        out[id] = e < 0 ? 0.0 : (e == 1 ? n.log_theta_true : log1m_exp(n.log_theta_true));
        break;
      }
      case NodeKind::kLiteral: {
        const auto e = evidence[n.var];
        out[id] = (e < 0 || (e == 1) == n.polarity) ? 0.0 : kNegInf;
        break;
      }
      case NodeKind::kDecision: {
        double max = kNegInf;
        for (const auto& el : n.elements) max = std::max(max, el.log_theta + out[el.prime] + out[el.sub]);
        if (max == kNegInf) {
          out[id] = kNegInf;
          break;
        }
        double sum = 0.0;
        for (const auto& el : n.elements) {
          const double t = el.log_theta + out[el.prime] + out[el.sub];
          if (t != kNegInf) sum += std::exp(t - max);
        }
        out[id] = max + std::log(sum);
        break;
      }
    }
  }
  if (stats) {
    stats->node_visits += nodes.size();
    ++stats->passes;
  }
}

double evidence_log_probability(const Circuit& circuit, const PartialAssignment& v, InferenceStats* stats) {
  const auto dense = v.dense(circuit.num_vars());
  std::vector<double> values;
  node_log_values(circuit, dense, values, stats);
  return values[circuit.root()];
}

double conditional_probability(const Circuit& circuit, const PartialAssignment& q, const PartialAssignment& v) {
  const double log_v = evidence_log_probability(circuit, v);
  if (log_v == kNegInf) throw ZeroEvidenceError("conditioning on evidence with probability 0");
  const auto joint = PartialAssignment::conjoin(q, v);
  if (!joint) return 0.0;
  const double log_qv = evidence_log_probability(circuit, *joint);
  return std::min(1.0, std::exp(log_qv - log_v));
}

namespace {

CompleteAssignment sample_top_down(const Circuit& circuit, std::span<const std::int8_t> evidence,
                                   const std::vector<double>& values, Rng& rng) {
  CompleteAssignment out(circuit.num_vars(), 0);
  std::vector<NodeId> stack{circuit.root()};
  std::vector<double> weights;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    const auto& n = circuit.node(id);
    switch (n.kind) {
      case NodeKind::kTerminal:
        out[n.var] = evidence[n.var] >= 0 ? static_cast<std::uint8_t>(evidence[n.var])
                                          : static_cast<std::uint8_t>(uniform01(rng) < std::exp(n.log_theta_true));
        break;
      case NodeKind::kLiteral:
        out[n.var] = n.polarity ? 1 : 0;
        break;
      case NodeKind::kDecision: {
        weights.clear();
        for (const auto& el : n.elements) weights.push_back(el.log_theta + values[el.prime] + values[el.sub]);
        const auto& chosen = n.elements[choose_index(weights, rng)];
        stack.push_back(chosen.sub);
        stack.push_back(chosen.prime);
        break;
      }
    }
  }
  return out;
}

}  // namespace

CompleteAssignment sample_joint(const Circuit& circuit, Rng& rng) {
  return sample_conditional(circuit, PartialAssignment{}, rng);
}

CompleteAssignment sample_conditional(const Circuit& circuit, const PartialAssignment& v, Rng& rng) {
  const auto dense = v.dense(circuit.num_vars());
  std::vector<double> values;
  node_log_values(circuit, dense, values);
  if (values[circuit.root()] == kNegInf) throw ZeroEvidenceError("sampling given evidence with probability 0");
  return sample_top_down(circuit, dense, values, rng);
}

CompleteAssignment generative_query(const Circuit& circuit, const PartialAssignment& v,
                                    std::span<const SamplingGroup> groups, Rng& rng, InferenceStats* stats) {
  const std::size_t n = circuit.num_vars();
  auto evidence = v.dense(n);
  std::vector<double> values;
  node_log_values(circuit, evidence, values, stats);
  double log_v = values[circuit.root()];
  if (log_v == kNegInf) throw ZeroEvidenceError("generative query on evidence with probability 0");

  // Categorical variables still (at least partly) unassigned.
  std::vector<SamplingGroup> pending;
  std::vector<std::uint8_t> covered(n, 0);
  for (const auto& g : groups) {
    if (g.vars.empty() || (g.one_hot && g.vars.size() < 2)) throw InvalidArgument("malformed sampling group");
    bool open = false;
    for (Var var : g.vars) {
      if (var >= n || covered[var]) throw InvalidArgument("sampling groups overlap or exceed the variable range");
      covered[var] = 1;
      open = open || evidence[var] < 0;
    }
    if (!g.one_hot && g.vars.size() != 1) throw InvalidArgument("boolean sampling group must hold one variable");
    if (open) pending.push_back(g);
  }
  for (Var var = 0; var < n; ++var) {
    if (!covered[var] && evidence[var] < 0) pending.push_back({{var}, false});
  }
  // Seeded Fisher-Yates; popping from the back then visits groups in random order.
  for (std::size_t i = pending.size(); i > 1; --i) std::swap(pending[i - 1], pending[uniform_index(rng, i)]);

  std::vector<double> dist;
  std::vector<std::int8_t> saved;
  while (!pending.empty()) {
    const SamplingGroup group = std::move(pending.back());
    pending.pop_back();
    saved.clear();
    for (Var var : group.vars) saved.push_back(evidence[var]);
    const std::size_t k = group.arity();
    dist.assign(k, kNegInf);
    auto apply_value = [&](std::size_t j) {
      if (group.one_hot) {
        for (std::size_t b = 0; b < group.vars.size(); ++b) evidence[group.vars[b]] = b == j ? 1 : 0;
      } else {
        evidence[group.vars[0]] = static_cast<std::int8_t>(j);
      }
    };
    for (std::size_t j = 0; j < k; ++j) {
      bool consistent = true;
      for (std::size_t b = 0; b < group.vars.size(); ++b) {
        const std::int8_t want = group.one_hot ? (b == j ? 1 : 0) : static_cast<std::int8_t>(j);
        if (saved[b] >= 0 && saved[b] != want) consistent = false;
      }
      if (!consistent) continue;
      apply_value(j);
      node_log_values(circuit, evidence, values, stats);
      dist[j] = values[circuit.root()] - log_v;  // log Pr(var = value_j | v)
    }
    if (log_sum_exp(dist) == kNegInf) {
      throw std::logic_error("generative query: every value of a categorical variable has probability 0");
    }
    const std::size_t inst = choose_index(dist, rng);
    apply_value(inst);
    log_v += dist[inst];
  }
  CompleteAssignment out(n);
  for (Var var = 0; var < n; ++var) out[var] = static_cast<std::uint8_t>(evidence[var]);
  return out;
}

}  // namespace llae
