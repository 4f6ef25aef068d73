#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "learn_internal.hpp"
#include "llae/error.hpp"
#include "llae/learn.hpp"

namespace llae {

namespace {

using detail::Overlay;
using detail::TraceStep;

constexpr std::size_t kMaxCloneParents = 8;

struct Candidate {
  bool is_split = true;
  NodeId node = 0;
  std::size_t element = 0;
  Var var = 0;
  ParentRef parent{};

  std::string describe() const {
    if (is_split) {
      return "split(node=" + std::to_string(node) + ",element=" + std::to_string(element) +
             ",var=" + std::to_string(var) + ")";
    }
    return "clone(node=" + std::to_string(node) + ",parent=" + std::to_string(parent.parent) + ":" +
           std::to_string(parent.element) + (parent.is_prime ? ":prime" : ":sub") + ")";
  }
};

struct Evaluation {
  bool valid = false;
  double delta_score = 0.0;
};

// A circuit fit to the training rows, with every row's path and the
// per-element row lists used to re-score candidate edits locally.
class SearchState {
 public:
  SearchState(Circuit circuit, const BinaryDataset& train, double alpha)
      : circuit_(std::move(circuit)), train_(&train), alpha_(alpha) {
    const std::size_t n = circuit_.size();
    counts_.resize(n);
    element_rows_.resize(n);
    for (NodeId id = 0; id < n; ++id) {
      const auto& node = circuit_.node(id);
      counts_[id].assign(detail::count_slots(node), 0.0);
      if (node.is_decision()) element_rows_[id].resize(node.elements.size());
    }
    Overlay view(circuit_.nodes());
    detail::Tracer tracer;
    traces_.resize(train.size());
    for (std::uint32_t r = 0; r < train.size(); ++r) {
      const auto& row = train[r];
      const double w = static_cast<double>(row.multiplicity);
      if (!tracer.trace(view, circuit_.root(), row.values.data(), traces_[r])) {
        out_of_support_ = true;
        traces_[r].clear();
        continue;
      }
      for (const auto& s : traces_[r]) {
        counts_[s.node][s.slot] += w;
        if (circuit_.node(s.node).is_decision()) element_rows_[s.node][s.slot].push_back(r);
      }
    }
    node_ll_.resize(n);
    total_ll_ = 0.0;
    for (NodeId id = 0; id < n; ++id) {
      node_ll_[id] = detail::refit_node_log_likelihood(circuit_.node(id), counts_[id], alpha_);
      total_ll_ += node_ll_[id];
    }
    if (out_of_support_) total_ll_ = -std::numeric_limits<double>::infinity();
    num_params_ = circuit_.num_parameters();
  }

  const Circuit& circuit() const { return circuit_; }
  const BinaryDataset& train() const { return *train_; }
  double alpha() const { return alpha_; }
  const std::vector<std::vector<double>>& counts() const { return counts_; }
  const std::vector<std::vector<TraceStep>>& traces() const { return traces_; }
  const std::vector<std::uint32_t>& element_rows(NodeId node, std::size_t element) const {
    return element_rows_[node][element];
  }
  double node_ll(NodeId id) const { return node_ll_[id]; }
  double total_ll() const { return total_ll_; }
  std::size_t num_params() const { return num_params_; }
  bool out_of_support() const { return out_of_support_; }

  double score(double penalty) const {
    return total_ll_ / static_cast<double>(train_->total_weight()) - penalty * static_cast<double>(num_params_);
  }

 private:
  Circuit circuit_;
  const BinaryDataset* train_;
  double alpha_;
  std::vector<std::vector<double>> counts_;
  std::vector<std::vector<std::vector<std::uint32_t>>> element_rows_;
  std::vector<std::vector<TraceStep>> traces_;
  std::vector<double> node_ll_;
  double total_ll_ = 0.0;
  std::size_t num_params_ = 0;
  bool out_of_support_ = false;
};

bool apply_candidate(Overlay& overlay, const Circuit& circuit, const Candidate& c, int copy_depth) {
  if (c.is_split) return detail::apply_split(overlay, circuit.vtree(), c.node, c.element, c.var, copy_depth);
  detail::apply_clone(overlay, c.node, std::span<const ParentRef>(&c.parent, 1), copy_depth);
  return true;
}

// Scores a candidate by re-tracing only the rows whose path it changes.
class Evaluator {
 public:
  Evaluator(const SearchState& state, const LearnConfig& config) : state_(state), config_(config) {}

  Evaluation evaluate(const Candidate& c) {
    const Circuit& circuit = state_.circuit();
    Overlay overlay(circuit.nodes());
    if (!apply_candidate(overlay, circuit, c, config_.copy_depth)) return {};
    const auto& rows =
        c.is_split ? state_.element_rows(c.node, c.element) : state_.element_rows(c.parent.parent, c.parent.element);

    offset_.assign(overlay.size(), -1);
    buffer_.clear();
    touched_.clear();
    auto slot_base = [&](NodeId id) -> std::size_t {
      if (offset_[id] < 0) {
        offset_[id] = static_cast<std::int64_t>(buffer_.size());
        const std::size_t slots = detail::count_slots(overlay[id]);
        if (id < overlay.base_size()) {
          const auto& base = state_.counts()[id];
          buffer_.insert(buffer_.end(), base.begin(), base.end());
          buffer_.resize(buffer_.size() + (slots - base.size()), 0.0);
        } else {
          buffer_.resize(buffer_.size() + slots, 0.0);
        }
        touched_.push_back(id);
      }
      return static_cast<std::size_t>(offset_[id]);
    };

    const auto& train = state_.train();
    for (std::uint32_t r : rows) {
      const double w = static_cast<double>(train[r].multiplicity);
      for (const auto& s : state_.traces()[r]) buffer_[slot_base(s.node) + s.slot] -= w;
      steps_.clear();
      if (!tracer_.trace(overlay, circuit.root(), train[r].values.data(), steps_)) return {};
      for (const auto& s : steps_) buffer_[slot_base(s.node) + s.slot] += w;
    }

    double delta_ll = 0.0;
    for (NodeId id : touched_) {
      const auto& node = overlay[id];
      const std::span<const double> counts(buffer_.data() + offset_[id], detail::count_slots(node));
      delta_ll += detail::refit_node_log_likelihood(node, counts, state_.alpha());
      if (id < overlay.base_size()) delta_ll -= state_.node_ll(id);
    }
    const auto params = detail::count_parameters(overlay, circuit.root(), reach_);
    Evaluation e;
    e.valid = true;
    e.delta_score = delta_ll / static_cast<double>(train.total_weight()) -
                    config_.size_penalty * (static_cast<double>(params) - static_cast<double>(state_.num_params()));
    return e;
  }

 private:
  const SearchState& state_;
  const LearnConfig& config_;
  detail::Tracer tracer_;
  std::vector<TraceStep> steps_;
  std::vector<std::int64_t> offset_;
  std::vector<double> buffer_;
  std::vector<NodeId> touched_;
  std::vector<std::uint8_t> reach_;
};

std::vector<Candidate> generate_candidates(const SearchState& state, const LearnConfig& config) {
  const Circuit& circuit = state.circuit();
  const Vtree& vtree = circuit.vtree();
  std::vector<Candidate> out;

  struct Ranked {
    double weight;
    NodeId node;
    std::size_t element;
  };
  std::vector<Ranked> elements;
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto& n = circuit.node(id);
    if (!n.is_decision()) continue;
    for (std::size_t i = 0; i < n.elements.size(); ++i) {
      const double w = state.counts()[id][i];
      if (w > 0.0) elements.push_back({w, id, i});
    }
  }
  std::stable_sort(elements.begin(), elements.end(),
                   [](const Ranked& a, const Ranked& b) { return a.weight > b.weight; });
  if (elements.size() > config.split_elements) elements.resize(config.split_elements);
  for (const auto& e : elements) {
    for (Var var : vtree.variables(vtree.left(circuit.node(e.node).vtree))) {
      Candidate c;
      c.is_split = true;
      c.node = e.node;
      c.element = e.element;
      c.var = var;
      out.push_back(c);
    }
  }

  std::vector<std::vector<ParentRef>> parents(circuit.size());
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto& n = circuit.node(id);
    for (std::size_t i = 0; i < n.elements.size(); ++i) {
      parents[n.elements[i].prime].push_back({id, i, true});
      parents[n.elements[i].sub].push_back({id, i, false});
    }
  }
  std::vector<NodeId> shared;
  for (NodeId id = 0; id < circuit.size(); ++id) {
    if (parents[id].size() >= 2 && circuit.node(id).kind != NodeKind::kLiteral) shared.push_back(id);
  }
  std::stable_sort(shared.begin(), shared.end(),
                   [&](NodeId a, NodeId b) { return parents[a].size() > parents[b].size(); });
  if (shared.size() > config.clone_nodes) shared.resize(config.clone_nodes);
  for (NodeId id : shared) {
    auto refs = parents[id];
    auto weight = [&](const ParentRef& r) { return state.counts()[r.parent][r.element]; };
    std::stable_sort(refs.begin(), refs.end(),
                     [&](const ParentRef& a, const ParentRef& b) { return weight(a) > weight(b); });
    if (refs.size() > kMaxCloneParents) refs.resize(kMaxCloneParents);
    for (const auto& ref : refs) {
      if (weight(ref) <= 0.0) continue;
      Candidate c;
      c.is_split = false;
      c.node = id;
      c.parent = ref;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<Evaluation> evaluate_all(const SearchState& state, const std::vector<Candidate>& candidates,
                                     const LearnConfig& config) {
  std::vector<Evaluation> results(candidates.size());
  std::size_t threads = config.num_threads == 0 ? std::thread::hardware_concurrency() : config.num_threads;
  threads = std::max<std::size_t>(1, std::min(threads, candidates.size()));
  auto work = [&](std::size_t t) {
    Evaluator evaluator(state, config);
    for (std::size_t i = t; i < candidates.size(); i += threads) results[i] = evaluator.evaluate(candidates[i]);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  return results;
}

double dataset_score(const Circuit& circuit, const BinaryDataset& data, const LearnConfig& config) {
  return log_likelihood(circuit, data) / static_cast<double>(data.total_weight()) -
         config.size_penalty * static_cast<double>(circuit.num_parameters());
}

}  // namespace

LearnResult learn_structure_from(const Circuit& initial, const BinaryDataset& data, const LearnConfig& config,
                                 const std::function<void(const LearnLogEntry&)>& on_iteration) {
  config.check();
  if (data.total_weight() == 0) throw InvalidArgument("structure learning needs data");
  if (data.num_vars() != initial.num_vars()) throw InvalidArgument("dataset and circuit variable counts differ");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  Rng rng = derive_rng(config.seed, {0x5EA7C4});
  auto [train_raw, valid_raw] = data.split(config.validation_fraction, rng);
  const BinaryDataset train = train_raw.compressed();
  const BinaryDataset valid = valid_raw.empty() ? train : valid_raw.compressed();

  LearnResult result{learn_parameters(initial, train, config.laplace_alpha), {}};
  auto state = std::make_unique<SearchState>(result.circuit, train, config.laplace_alpha);
  double best_valid = dataset_score(state->circuit(), valid, config);
  std::size_t stall = 0;

  auto record = [&](std::size_t iteration, std::string op, double valid_score) {
    LearnLogEntry entry{iteration, std::move(op), state->score(config.size_penalty), valid_score,
                        state->num_params(), elapsed()};
    if (on_iteration) on_iteration(entry);
    result.log.push_back(std::move(entry));
  };
  record(0, "initial", best_valid);

  for (std::size_t iteration = 1; iteration <= config.max_iterations; ++iteration) {
    if (elapsed() > config.time_budget_seconds) break;
    const auto candidates = generate_candidates(*state, config);
    const auto evaluations = evaluate_all(*state, candidates, config);
    std::size_t best = candidates.size();
    double best_gain = 1e-12;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (evaluations[i].valid && evaluations[i].delta_score > best_gain) {
        best_gain = evaluations[i].delta_score;
        best = i;
      }
    }
    if (best == candidates.size()) break;

    Overlay overlay(state->circuit().nodes());
    apply_candidate(overlay, state->circuit(), candidates[best], config.copy_depth);
    Circuit next = Circuit::from_dag(state->circuit().vtree_ptr(), overlay.materialize(), state->circuit().root());
    next = learn_parameters(next, train, config.laplace_alpha);
    state = std::make_unique<SearchState>(std::move(next), train, config.laplace_alpha);

    const double valid_score = dataset_score(state->circuit(), valid, config);
    record(iteration, candidates[best].describe(), valid_score);
    if (valid_score > best_valid) result.circuit = state->circuit();
    if (valid_score - best_valid >= config.convergence_threshold) {
      stall = 0;
    } else if (++stall >= config.patience) {
      best_valid = std::max(best_valid, valid_score);
      break;
    }
    best_valid = std::max(best_valid, valid_score);
  }
  if (!valid_raw.empty()) result.circuit = learn_parameters(result.circuit, data, config.laplace_alpha);
  return result;
}

LearnResult learn_structure(const BinaryDataset& data, std::shared_ptr<const Vtree> vtree, const LearnConfig& config,
                            std::span<const std::vector<Var>> exactly_one_groups,
                            const std::function<void(const LearnLogEntry&)>& on_iteration) {
  if (!vtree) throw InvalidArgument("structure learning needs a vtree");
  const Circuit base = config.constrained_base
                           ? compile_base(vtree, exactly_one_groups, config.condition_on_groups, &data)
                           : compile_base(vtree, std::span<const std::vector<Var>>{});
  return learn_structure_from(base, data, config, on_iteration);
}

}  // namespace llae
