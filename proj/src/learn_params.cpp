#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "learn_internal.hpp"
#include "llae/error.hpp"
#include "llae/inference.hpp"
#include "llae/learn.hpp"

namespace llae {

namespace {
constexpr double kThetaFloor = 1e-6;
}

void LearnConfig::check() const {
  if (!(laplace_alpha >= 0.0)) throw InvalidArgument("laplace_alpha must be nonnegative");
  if (!(size_penalty >= 0.0)) throw InvalidArgument("size_penalty must be nonnegative");
  if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5)) {
    throw InvalidArgument("validation_fraction must be in [0, 0.5]");
  }
  if (!(time_budget_seconds >= 0.0)) throw InvalidArgument("time_budget_seconds must be nonnegative");
  if (copy_depth < -1) throw InvalidArgument("copy_depth must be -1 or nonnegative");
  if (patience == 0) throw InvalidArgument("patience must be at least 1");
}

std::vector<double> fit_log_thetas(std::span<const double> counts, double alpha) {
  const std::size_t k = counts.size();
  std::vector<double> theta(k, 1.0 / static_cast<double>(k));
  double total = 0.0;
  for (double c : counts) total += c;
  const double denom = total + static_cast<double>(k) * alpha;
  if (denom > 0.0) {
    for (std::size_t i = 0; i < k; ++i) theta[i] = (counts[i] + alpha) / denom;
  }
  double sum = 0.0;
  for (double& t : theta) {
    t = std::clamp(t, kThetaFloor, 1.0 - kThetaFloor);
    sum += t;
  }
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = std::log(theta[i] / sum);
  return out;
}

namespace detail {

double refit_node_log_likelihood(const PsddNode& n, std::span<const double> counts, double alpha) {
  if (n.kind == NodeKind::kLiteral) return 0.0;
  double total = 0.0;
  for (double c : counts) total += c;
  if (total == 0.0) return 0.0;
  const auto log_theta = fit_log_thetas(counts, alpha);
  double ll = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] != 0.0) ll += counts[i] * log_theta[i];
  }
  return ll;
}

std::size_t count_parameters(const Overlay& nodes, NodeId root, std::vector<std::uint8_t>& scratch) {
  scratch.assign(nodes.size(), 0);
  std::vector<NodeId> stack{root};
  scratch[root] = 1;
  std::size_t count = 0;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    const auto& n = nodes[id];
    if (n.kind == NodeKind::kTerminal) {
      ++count;
    } else if (n.is_decision()) {
      count += n.elements.size() - 1;
      for (const auto& e : n.elements) {
        for (NodeId child : {e.prime, e.sub}) {
          if (!scratch[child]) {
            scratch[child] = 1;
            stack.push_back(child);
          }
        }
      }
    }
  }
  return count;
}

}  // namespace detail

NodeCounts count_contexts(const Circuit& circuit, const BinaryDataset& data) {
  if (data.num_vars() != circuit.num_vars()) throw InvalidArgument("dataset and circuit variable counts differ");
  NodeCounts result;
  result.counts.resize(circuit.size());
  for (NodeId id = 0; id < circuit.size(); ++id) {
    result.counts[id].assign(detail::count_slots(circuit.node(id)), 0.0);
  }
  detail::Overlay view(circuit.nodes());
  detail::Tracer tracer;
  std::vector<detail::TraceStep> steps;
  for (const auto& row : data.rows()) {
    steps.clear();
    const double w = static_cast<double>(row.multiplicity);
    if (!tracer.trace(view, circuit.root(), row.values.data(), steps)) {
      result.out_of_support_weight += w;
      continue;
    }
    for (const auto& s : steps) result.counts[s.node][s.slot] += w;
  }
  return result;
}

Circuit learn_parameters(const Circuit& circuit, const BinaryDataset& data, double alpha) {
  if (data.total_weight() == 0) throw InvalidArgument("cannot learn parameters from an empty dataset");
  if (!(alpha >= 0.0)) throw InvalidArgument("alpha must be nonnegative");
  const auto counts = count_contexts(circuit, data);
  std::vector<PsddNode> nodes = circuit.nodes();
  for (NodeId id = 0; id < nodes.size(); ++id) {
    auto& n = nodes[id];
    if (n.kind == NodeKind::kLiteral) continue;
    const auto log_theta = fit_log_thetas(counts.counts[id], alpha);
    if (n.kind == NodeKind::kTerminal) {
      n.log_theta_true = log_theta[1];
    } else {
      for (std::size_t i = 0; i < n.elements.size(); ++i) n.elements[i].log_theta = log_theta[i];
    }
  }
  return Circuit(circuit.vtree_ptr(), std::move(nodes), circuit.root());
}

double log_likelihood(const Circuit& circuit, const BinaryDataset& data) {
  const auto counts = count_contexts(circuit, data);
  if (counts.out_of_support_weight > 0.0) return -std::numeric_limits<double>::infinity();
  double ll = 0.0;
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto& n = circuit.node(id);
    const auto& c = counts.counts[id];
    if (n.kind == NodeKind::kTerminal) {
      if (c[1] != 0.0) ll += c[1] * n.log_theta_true;
      if (c[0] != 0.0) ll += c[0] * std::log(-std::expm1(n.log_theta_true));
    } else if (n.is_decision()) {
      for (std::size_t i = 0; i < n.elements.size(); ++i) {
        if (c[i] != 0.0) ll += c[i] * n.elements[i].log_theta;
      }
    }
  }
  return ll;
}

double log_likelihood_by_example(const Circuit& circuit, const BinaryDataset& data) {
  if (data.num_vars() != circuit.num_vars()) throw InvalidArgument("dataset and circuit variable counts differ");
  std::vector<double> values;
  std::vector<std::int8_t> evidence(circuit.num_vars());
  double ll = 0.0;
  for (const auto& row : data.rows()) {
    for (std::size_t i = 0; i < evidence.size(); ++i) evidence[i] = static_cast<std::int8_t>(row.values[i]);
    node_log_values(circuit, evidence, values);
    ll += static_cast<double>(row.multiplicity) * values[circuit.root()];
  }
  return ll;
}

double score(const Circuit& circuit, const BinaryDataset& data, const LearnConfig& config) {
  if (data.total_weight() == 0) throw InvalidArgument("cannot score on an empty dataset");
  return log_likelihood(circuit, data) / static_cast<double>(data.total_weight()) -
         config.size_penalty * static_cast<double>(circuit.num_parameters());
}

std::vector<ParentRef> parent_references(const Circuit& circuit, NodeId node) {
  std::vector<ParentRef> refs;
  std::vector<std::uint8_t> reached(circuit.size(), 0);
  reached[circuit.root()] = 1;
  for (NodeId id = static_cast<NodeId>(circuit.size()); id-- > 0;) {
    if (!reached[id]) continue;
    const auto& n = circuit.node(id);
    for (std::size_t i = 0; i < n.elements.size(); ++i) {
      const auto& e = n.elements[i];
      reached[e.prime] = reached[e.sub] = 1;
      if (e.prime == node) refs.push_back({id, i, true});
      if (e.sub == node) refs.push_back({id, i, false});
    }
  }
  std::sort(refs.begin(), refs.end(), [](const ParentRef& a, const ParentRef& b) {
    return std::tie(a.parent, a.element, a.is_prime) < std::tie(b.parent, b.element, b.is_prime);
  });
  return refs;
}

std::string to_json_line(const LearnLogEntry& entry) {
  const nlohmann::json j = {{"iteration", entry.iteration},     {"operation", entry.operation},
                            {"train_score", entry.train_score}, {"valid_score", entry.valid_score},
                            {"num_params", entry.num_params},   {"seconds", entry.seconds}};
  return j.dump();
}

}  // namespace llae
