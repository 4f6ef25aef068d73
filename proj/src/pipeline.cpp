#include "llae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "llae/error.hpp"
#include "llae/inference.hpp"
#include "text_util.hpp"

namespace llae {

namespace {

using json = nlohmann::ordered_json;

// Stream tags: every random decision of a run draws from derive_rng(seed, {tag, ...}).
constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kTrainStream = 12;
constexpr std::uint64_t kLearnStream = 13;
constexpr std::uint64_t kPairStream = 14;
constexpr std::uint64_t kNoiseStream = 15;
constexpr std::uint64_t kSampleClassifyStream = 16;
constexpr std::uint64_t kCandidateStream = 17;
constexpr std::uint64_t kImageStream = 18;
constexpr std::uint64_t kFlvisStream = 19;

constexpr std::size_t kDigitClasses = 10;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t component_seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(component_seed + mix64(tag)));
}

template <typename T>
void read_if(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) == keys.end()) {
      throw InvalidArgument("unknown config key '" + where + it.key() + "'");
    }
  }
}

std::string anneal_name(AnnealSchedule s) {
  switch (s) {
    case AnnealSchedule::kExponential:
      return "exponential";
    case AnnealSchedule::kLinear:
      return "linear";
    case AnnealSchedule::kConstant:
      return "constant";
  }
  return "exponential";
}

AnnealSchedule parse_anneal(const std::string& s) {
  if (s == "exponential") return AnnealSchedule::kExponential;
  if (s == "linear") return AnnealSchedule::kLinear;
  if (s == "constant") return AnnealSchedule::kConstant;
  throw InvalidArgument("unknown anneal schedule '" + s + "'");
}

// Balanced combination of subtrees in order.
VtreeId combine_balanced(VtreeBuilder& b, std::span<const VtreeId> units) {
  if (units.size() == 1) return units[0];
  const std::size_t mid = (units.size() + 1) / 2;
  const VtreeId l = combine_balanced(b, units.first(mid));
  return b.internal(l, combine_balanced(b, units.subspan(mid)));
}

VtreeId combine_right_linear(VtreeBuilder& b, std::span<const VtreeId> units) {
  if (units.size() == 1) return units[0];
  return b.internal(units[0], combine_right_linear(b, units.subspan(1)));
}

VtreeId build_side(VtreeBuilder& b, const std::vector<Var>& vars, const std::vector<std::vector<Var>>& groups,
                   const BinaryDataset& data, VtreeMethod method) {
  if (method == VtreeMethod::kMutualInformation) return b.mutual_information(data, vars, groups);
  std::vector<std::uint8_t> grouped(data.num_vars(), 0);
  std::vector<std::pair<Var, VtreeId>> units;
  for (const auto& g : groups) {
    for (Var v : g) grouped[v] = 1;
    units.emplace_back(*std::min_element(g.begin(), g.end()), b.balanced(g));
  }
  for (Var v : vars) {
    if (!grouped[v]) units.emplace_back(v, b.leaf(v));
  }
  std::sort(units.begin(), units.end());
  std::vector<VtreeId> ids;
  for (const auto& u : units) ids.push_back(u.second);
  return method == VtreeMethod::kBalanced ? combine_balanced(b, ids) : combine_right_linear(b, ids);
}

PartialAssignment evidence_except(const FeatureLayerSpec& spec, std::size_t skip, const CompleteAssignment& row) {
  PartialAssignment v;
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    if (d == skip) continue;
    for (Var i = spec.begin(d); i < spec.end(d); ++i) v.set(i, row[i] != 0);
  }
  return v;
}

PartialAssignment with_bits(PartialAssignment v, Var begin, const std::vector<std::uint8_t>& bits) {
  for (std::size_t j = 0; j < bits.size(); ++j) v.set(begin + static_cast<Var>(j), bits[j] != 0);
  return v;
}

std::size_t first_neural_domain(const FeatureLayerSpec& spec) {
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    if (spec.domain(d).codec == CodecKind::kNeural) return d;
  }
  throw InvalidArgument("feature layer has no neural domain");
}

Eigen::VectorXd decode_slice(const Autoencoder& ae, const FeatureLayerSpec& spec, std::size_t domain,
                             const CompleteAssignment& x) {
  const std::vector<std::uint8_t> bits(x.begin() + spec.begin(domain), x.begin() + spec.end(domain));
  return ae.decode(decode_domain(spec.domain(domain), bits));
}

class JsonLinesWriter {
 public:
  explicit JsonLinesWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void write(const std::string& line) { out_ << line << '\n'; }

 private:
  std::ofstream out_;
};

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::kClassify:
      return "classify";
    case Task::kNoisy:
      return "noisy";
    case Task::kSuccessor:
      return "successor";
    case Task::kXor:
      return "xor";
    case Task::kPlus:
      return "plus";
  }
  return "classify";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::kClassify, Task::kNoisy, Task::kSuccessor, Task::kXor, Task::kPlus}) {
    if (to_string(t) == name) return t;
  }
  throw InvalidArgument("unknown task '" + name + "'");
}

std::string to_string(VtreeMethod method) {
  switch (method) {
    case VtreeMethod::kBalanced:
      return "balanced";
    case VtreeMethod::kRightLinear:
      return "right_linear";
    case VtreeMethod::kMutualInformation:
      return "mutual_information";
  }
  return "balanced";
}

VtreeMethod parse_vtree_method(const std::string& name) {
  for (VtreeMethod m : {VtreeMethod::kBalanced, VtreeMethod::kRightLinear, VtreeMethod::kMutualInformation}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidArgument("unknown vtree method '" + name + "'");
}

LearnConfig pipeline_learn_defaults() {
  LearnConfig c;
  c.condition_on_groups = true;
  return c;
}

std::size_t ExperimentConfig::category_count() const {
  switch (task) {
    case Task::kClassify:
    case Task::kNoisy:
    case Task::kSuccessor:
      return kDigitClasses;
    case Task::kXor:
      return 2;
    case Task::kPlus:
      return 2 * kDigitClasses - 1;
  }
  return kDigitClasses;
}

void ExperimentConfig::check() const {
  latent.check();
  train.check();
  learn.check();
  if (train_size == 0 || test_size == 0) throw InvalidArgument("train_size and test_size must be positive");
  if (downsample == 0) throw InvalidArgument("downsample must be positive");
  if (task == Task::kNoisy && noise_k + 1 > category_count()) {
    throw InvalidArgument("noise_k must not exceed category_count - 1");
  }
  if (task != Task::kNoisy && noise_k != 0) throw InvalidArgument("noise_k applies to the noisy task only");
  if (xor_false_class == xor_true_class || xor_false_class >= kDigitClasses || xor_true_class >= kDigitClasses) {
    throw InvalidArgument("xor classes must be two distinct digits");
  }
  if (flvis_samples == 0) throw InvalidArgument("flvis_samples must be positive");
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = dataset;
  j["data_dir"] = data_dir.string();
  j["train_size"] = train_size;
  j["test_size"] = test_size;
  j["downsample"] = downsample;
  j["latent"] = {{"num_vars", latent.num_vars}, {"cat_dim", latent.cat_dim}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"momentum", train.momentum},
                {"batch_size", train.batch_size},
                {"epochs", train.epochs},
                {"temperature_start", train.temperature_start},
                {"temperature_end", train.temperature_end},
                {"anneal_schedule", anneal_name(train.anneal_schedule)},
                {"kl_weight", train.kl_weight},
                {"rng_seed", train.rng_seed},
                {"hidden_units", train.hidden_units}};
  j["learn"] = {{"laplace_alpha", learn.laplace_alpha},
                {"size_penalty", learn.size_penalty},
                {"max_iterations", learn.max_iterations},
                {"time_budget_seconds", learn.time_budget_seconds},
                {"validation_fraction", learn.validation_fraction},
                {"convergence_threshold", learn.convergence_threshold},
                {"patience", learn.patience},
                {"split_elements", learn.split_elements},
                {"clone_nodes", learn.clone_nodes},
                {"copy_depth", learn.copy_depth},
                {"constrained_base", learn.constrained_base},
                {"condition_on_groups", learn.condition_on_groups},
                {"num_threads", learn.num_threads},
                {"seed", learn.seed}};
  j["vtree"] = to_string(vtree);
  j["task"] = to_string(task);
  j["noise_k"] = noise_k;
  j["compress_labels"] = compress_labels;
  j["successor_wrap"] = successor_wrap;
  j["xor_false_class"] = xor_false_class;
  j["xor_true_class"] = xor_true_class;
  j["samples_per_class"] = samples_per_class;
  j["flvis_samples"] = flvis_samples;
  j["write_images"] = write_images;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  ExperimentConfig c;
  try {
    reject_unknown(j,
                   {"dataset", "data_dir", "train_size", "test_size", "downsample", "latent", "train", "learn", "vtree",
                    "task", "noise_k", "compress_labels", "successor_wrap", "xor_false_class", "xor_true_class",
                    "samples_per_class", "flvis_samples", "write_images", "seed"},
                   "");
    read_if(j, "dataset", c.dataset);
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    read_if(j, "train_size", c.train_size);
    read_if(j, "test_size", c.test_size);
    read_if(j, "downsample", c.downsample);
    if (j.contains("latent")) {
      const auto& l = j.at("latent");
      reject_unknown(l, {"num_vars", "cat_dim"}, "latent.");
      read_if(l, "num_vars", c.latent.num_vars);
      read_if(l, "cat_dim", c.latent.cat_dim);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t,
                     {"learning_rate", "momentum", "batch_size", "epochs", "temperature_start", "temperature_end",
                      "anneal_schedule", "kl_weight", "rng_seed", "hidden_units"},
                     "train.");
      read_if(t, "learning_rate", c.train.learning_rate);
      read_if(t, "momentum", c.train.momentum);
      read_if(t, "batch_size", c.train.batch_size);
      read_if(t, "epochs", c.train.epochs);
      read_if(t, "temperature_start", c.train.temperature_start);
      read_if(t, "temperature_end", c.train.temperature_end);
      if (t.contains("anneal_schedule")) c.train.anneal_schedule = parse_anneal(t.at("anneal_schedule").get<std::string>());
      read_if(t, "kl_weight", c.train.kl_weight);
      read_if(t, "rng_seed", c.train.rng_seed);
      read_if(t, "hidden_units", c.train.hidden_units);
    }
    if (j.contains("learn")) {
      const auto& l = j.at("learn");
      reject_unknown(l,
                     {"laplace_alpha", "size_penalty", "max_iterations", "time_budget_seconds", "validation_fraction",
                      "convergence_threshold", "patience", "split_elements", "clone_nodes", "copy_depth",
                      "constrained_base", "condition_on_groups", "num_threads", "seed"},
                     "learn.");
      read_if(l, "laplace_alpha", c.learn.laplace_alpha);
      read_if(l, "size_penalty", c.learn.size_penalty);
      read_if(l, "max_iterations", c.learn.max_iterations);
      read_if(l, "time_budget_seconds", c.learn.time_budget_seconds);
      read_if(l, "validation_fraction", c.learn.validation_fraction);
      read_if(l, "convergence_threshold", c.learn.convergence_threshold);
      read_if(l, "patience", c.learn.patience);
      read_if(l, "split_elements", c.learn.split_elements);
      read_if(l, "clone_nodes", c.learn.clone_nodes);
      read_if(l, "copy_depth", c.learn.copy_depth);
      read_if(l, "constrained_base", c.learn.constrained_base);
      read_if(l, "condition_on_groups", c.learn.condition_on_groups);
      read_if(l, "num_threads", c.learn.num_threads);
      read_if(l, "seed", c.learn.seed);
    }
    if (j.contains("vtree")) c.vtree = parse_vtree_method(j.at("vtree").get<std::string>());
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    read_if(j, "noise_k", c.noise_k);
    read_if(j, "compress_labels", c.compress_labels);
    read_if(j, "successor_wrap", c.successor_wrap);
    read_if(j, "xor_false_class", c.xor_false_class);
    read_if(j, "xor_true_class", c.xor_true_class);
    read_if(j, "samples_per_class", c.samples_per_class);
    read_if(j, "flvis_samples", c.flvis_samples);
    read_if(j, "write_images", c.write_images);
    read_if(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  c.check();
  return c;
}

LoadedImages load_images(const ExperimentConfig& config) {
  LoadedImages out;
  out.train = downsample(load_mnist(config.data_dir, "train", config.train_size), config.downsample);
  out.test = downsample(load_mnist(config.data_dir, "t10k", config.test_size), config.downsample);
  if (out.train.size() < config.train_size || out.test.size() < config.test_size) {
    throw InvalidArgument("dataset has fewer examples than requested");
  }
  return out;
}

Phase1Result run_phase1(const ExperimentConfig& config, const Eigen::MatrixXd& images) {
  Rng init = derive_rng(sub_seed(config.seed, config.train.rng_seed, kInitStream), {});
  Phase1Result r{Autoencoder::create(static_cast<std::size_t>(images.rows()), config.latent,
                                     config.train.hidden_units, init),
                 {}};
  TrainConfig t = config.train;
  t.rng_seed = sub_seed(config.seed, config.train.rng_seed, kTrainStream);
  r.log = train(r.autoencoder, images, t);
  return r;
}

std::vector<std::vector<std::uint8_t>> encode_images(const Autoencoder& ae, const DomainSpec& domain,
                                                     const Eigen::MatrixXd& images) {
  if (domain.codec != CodecKind::kNeural || domain.num_vars != ae.latent().num_vars ||
      domain.cat_dim != ae.latent().cat_dim) {
    throw InvalidArgument("domain does not match the autoencoder's latent code");
  }
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& code : ae.encode_hard_batch(images)) out.push_back(encode_domain(domain, code));
  return out;
}

PairedExamples make_functional_dataset(const std::vector<std::uint8_t>& labels, Task task, std::size_t count,
                                       Rng& rng, const FunctionalOptions& options) {
  std::vector<std::vector<std::size_t>> by_class(kDigitClasses);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kDigitClasses) throw InvalidArgument("label out of range");
    by_class[labels[i]].push_back(i);
  }
  auto pick = [&](const std::vector<std::size_t>& pool) { return pool[uniform_index(rng, pool.size())]; };
  PairedExamples out;
  switch (task) {
    case Task::kSuccessor: {
      std::vector<std::size_t> sources;
      for (std::size_t c = 0; c < kDigitClasses; ++c) {
        const std::size_t next = (c + 1) % kDigitClasses;
        if ((!options.successor_wrap && c + 1 == kDigitClasses) || by_class[next].empty()) continue;
        sources.insert(sources.end(), by_class[c].begin(), by_class[c].end());
      }
      std::sort(sources.begin(), sources.end());
      if (sources.empty()) throw InvalidArgument("no successor pairs available");
      for (std::size_t n = 0; n < count; ++n) {
        const std::size_t a = pick(sources);
        const std::size_t b = pick(by_class[(labels[a] + 1) % kDigitClasses]);
        out.first.push_back(a);
        out.second.push_back(b);
        out.target.push_back(labels[b]);
      }
      break;
    }
    case Task::kXor: {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == options.xor_false_class || labels[i] == options.xor_true_class) pool.push_back(i);
      }
      if (by_class[options.xor_false_class].empty() || by_class[options.xor_true_class].empty()) {
        throw InvalidArgument("xor classes missing from the data");
      }
      for (std::size_t n = 0; n < count; ++n) {
        const std::size_t a = pick(pool);
        const std::size_t b = pick(pool);
        out.first.push_back(a);
        out.second.push_back(b);
        out.target.push_back((labels[a] == options.xor_true_class) != (labels[b] == options.xor_true_class) ? 1U : 0U);
      }
      break;
    }
    case Task::kPlus: {
      if (labels.empty()) throw InvalidArgument("no examples");
      for (std::size_t n = 0; n < count; ++n) {
        const std::size_t a = uniform_index(rng, labels.size());
        const std::size_t b = uniform_index(rng, labels.size());
        out.first.push_back(a);
        out.second.push_back(b);
        out.target.push_back(static_cast<std::uint32_t>(labels[a]) + labels[b]);
      }
      break;
    }
    default:
      throw InvalidArgument("not a functional task: " + to_string(task));
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> make_noisy_labels(const std::vector<std::vector<std::uint8_t>>& one_hot_labels,
                                                         std::size_t k, Rng& rng) {
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(one_hot_labels.size());
  for (const auto& label : one_hot_labels) {
    if (std::count(label.begin(), label.end(), 1) != 1) throw InvalidArgument("label is not one-hot");
    if (k + 1 > label.size()) throw InvalidArgument("more noisy labels than wrong categories");
    std::vector<std::size_t> wrong;
    for (std::size_t j = 0; j < label.size(); ++j) {
      if (!label[j]) wrong.push_back(j);
    }
    auto noisy = label;
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(wrong[i], wrong[i + uniform_index(rng, wrong.size() - i)]);
      noisy[wrong[i]] = 1;
    }
    out.push_back(std::move(noisy));
  }
  return out;
}

FeatureLayerSpec task_spec(const ExperimentConfig& config) {
  const DomainSpec image{"image", config.latent.num_vars, config.latent.cat_dim, CodecKind::kNeural, false};
  auto named = [&](const char* name) {
    DomainSpec d = image;
    d.name = name;
    return d;
  };
  switch (config.task) {
    case Task::kClassify:
    case Task::kNoisy:
      return FeatureLayerSpec({image, {"label", 1, kDigitClasses, CodecKind::kSymbolic,
                                       config.task == Task::kClassify && config.compress_labels}});
    case Task::kSuccessor:
      return FeatureLayerSpec({named("first"), named("second")});
    case Task::kXor:
      return FeatureLayerSpec({named("first"), named("second"), {"xor", 1, 2, CodecKind::kSymbolic, false}});
    case Task::kPlus:
      return FeatureLayerSpec(
          {named("first"), named("second"), {"sum", 1, 2 * kDigitClasses - 1, CodecKind::kSymbolic, config.compress_labels}});
  }
  throw InvalidArgument("unknown task");
}

BinaryDataset TaskData::dataset() const {
  BinaryDataset data(spec.size());
  for (const auto& r : rows) data.add(r);
  return data.compressed();
}

Vtree build_task_vtree(const FeatureLayerSpec& spec, const BinaryDataset& data, VtreeMethod method) {
  if (data.num_vars() != spec.size()) throw InvalidArgument("dataset width differs from the feature layer");
  const auto groups = fl_constraint(spec);
  std::vector<Var> symbolic, neural;
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    auto& side = spec.domain(d).codec == CodecKind::kSymbolic ? symbolic : neural;
    for (Var v = spec.begin(d); v < spec.end(d); ++v) side.push_back(v);
  }
  auto groups_within = [&](const std::vector<Var>& vars) {
    std::vector<std::vector<Var>> out;
    for (const auto& g : groups) {
      if (std::find(vars.begin(), vars.end(), g.front()) != vars.end()) out.push_back(g);
    }
    return out;
  };
  VtreeBuilder b;
  if (symbolic.empty()) return b.finish(build_side(b, neural, groups_within(neural), data, method));
  if (neural.empty()) return b.finish(build_side(b, symbolic, groups_within(symbolic), data, method));
  const VtreeId left = build_side(b, symbolic, groups_within(symbolic), data, method);
  const VtreeId right = build_side(b, neural, groups_within(neural), data, method);
  return b.finish(b.internal(left, right));
}

LearnConfig phase2_learn_config(const ExperimentConfig& config) {
  LearnConfig learn = config.learn;
  learn.seed = sub_seed(config.seed, config.learn.seed, kLearnStream);
  return learn;
}

LearnResult run_phase2(const BinaryDataset& data, std::shared_ptr<const Vtree> vtree, const FeatureLayerSpec& spec,
                       const LearnConfig& config, bool drop_label_constraint,
                       const std::function<void(const LearnLogEntry&)>& on_iteration) {
  std::vector<std::vector<Var>> groups;
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    const auto& dom = spec.domain(d);
    if (!dom.one_hot() || (drop_label_constraint && dom.codec == CodecKind::kSymbolic)) continue;
    const std::size_t w = dom.bits_per_var();
    for (std::size_t v = 0; v < dom.num_vars; ++v) {
      std::vector<Var> g(w);
      std::iota(g.begin(), g.end(), spec.begin(d) + static_cast<Var>(v * w));
      groups.push_back(std::move(g));
    }
  }
  return learn_structure(data, std::move(vtree), config, groups, on_iteration);
}

std::optional<std::uint32_t> classify_map(const Circuit& circuit, const FeatureLayerSpec& spec, std::size_t target,
                                          const CompleteAssignment& row) {
  const DomainSpec& dom = spec.domain(target);
  if (dom.codec != CodecKind::kSymbolic || dom.num_vars != 1) {
    throw InvalidArgument("classification target must be a single symbolic variable");
  }
  const PartialAssignment v = evidence_except(spec, target, row);
  if (std::isinf(evidence_log_probability(circuit, v))) return std::nullopt;
  std::uint32_t best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (std::uint32_t y = 0; y < dom.cat_dim; ++y) {
    PartialAssignment q = v;
    if (dom.compressed) {
      q = with_bits(std::move(q), spec.begin(target), encode_symbol(dom.symbolic_codec(), y));
    } else {
      q.set(spec.begin(target) + y, true);
    }
    const double lp = evidence_log_probability(circuit, q);
    if (lp > best_lp) {
      best_lp = lp;
      best = y;
    }
  }
  return best;
}

std::optional<std::uint32_t> classify_sample(const Circuit& circuit, const FeatureLayerSpec& spec,
                                             std::size_t target, const CompleteAssignment& row, Rng& rng) {
  const PartialAssignment v = evidence_except(spec, target, row);
  const auto groups = sampling_groups(spec);
  try {
    const auto x = generative_query(circuit, v, groups, rng);
    const std::vector<std::uint8_t> bits(x.begin() + spec.begin(target), x.begin() + spec.end(target));
    return decode_domain(spec.domain(target), bits).front();
  } catch (const ZeroEvidenceError&) {
    return std::nullopt;
  } catch (const DecodeError&) {
    return std::nullopt;
  }
}

std::vector<Eigen::VectorXd> sample_class_images(const Circuit& circuit, const Autoencoder& ae,
                                                 const FeatureLayerSpec& spec, std::size_t target,
                                                 std::uint32_t category, std::size_t count, Rng& rng) {
  const DomainSpec& dom = spec.domain(target);
  const PartialAssignment v = domain_evidence(spec, target, encode_symbol(dom.symbolic_codec(), category));
  const std::size_t image = first_neural_domain(spec);
  const auto groups = sampling_groups(spec);
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(decode_slice(ae, spec, image, generative_query(circuit, v, groups, rng)));
  return out;
}

std::optional<FlVisualization> visualize_fl_variable(const Circuit& circuit, const Autoencoder& ae,
                                                     const FeatureLayerSpec& spec, std::size_t image_domain,
                                                     Var variable, std::size_t samples, Rng& rng) {
  if (samples == 0) throw InvalidArgument("visualization needs samples");
  if (variable >= spec.size()) throw InvalidArgument("feature layer variable out of range");
  const double p_true = std::exp(evidence_log_probability(circuit, {{variable, true}}));
  const double p_false = std::exp(evidence_log_probability(circuit, {{variable, false}}));
  if (p_true <= 0.0 || p_false <= 0.0) return std::nullopt;
  const auto groups = sampling_groups(spec);
  auto mean_image = [&](bool value) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ae.input_dim()));
    for (std::size_t i = 0; i < samples; ++i) {
      sum += decode_slice(ae, spec, image_domain, generative_query(circuit, {{variable, value}}, groups, rng));
    }
    return Eigen::VectorXd(sum / static_cast<double>(samples));
  };
  const Eigen::VectorXd diff = mean_image(true) - mean_image(false);
  FlVisualization vis;
  vis.variable = variable;
  vis.samples = samples;
  vis.visual_true = (diff.array() + 1.0) / 2.0;
  vis.visual_false = (1.0 - diff.array()) / 2.0;
  return vis;
}

std::string TaskMetrics::to_json() const {
  json j;
  auto number = [](double v) -> json {
    if (std::isfinite(v)) return v;
    return v < 0 ? "-inf" : (v > 0 ? "inf" : "nan");
  };
  j["task"] = task;
  j["noise_k"] = noise_k;
  j["train_examples"] = train_examples;
  j["test_examples"] = test_examples;
  j["fl_variables"] = fl_variables;
  j["ae_initial_loss"] = number(ae_initial_loss);
  j["ae_final_loss"] = number(ae_final_loss);
  j["ae_test_reconstruction"] = number(ae_test_reconstruction);
  j["accuracy"] = number(accuracy);
  j["sample_accuracy"] = number(sample_accuracy);
  j["zero_evidence"] = zero_evidence;
  j["train_log_likelihood"] = number(train_log_likelihood);
  j["test_log_likelihood"] = number(test_log_likelihood);
  j["train_score"] = number(train_score);
  j["num_parameters"] = num_parameters;
  j["circuit_nodes"] = circuit_nodes;
  j["search_iterations"] = search_iterations;
  return j.dump(2) + "\n";
}

TaskData build_task_data(const ExperimentConfig& config, const FeatureLayerSpec& spec, const ImageSet& images,
                         const std::vector<std::vector<std::uint8_t>>& codes, bool training) {
  if (codes.size() != images.size()) throw InvalidArgument("one code per image required");
  const std::size_t count = training ? config.train_size : config.test_size;
  const std::uint64_t stream = training ? 0 : 1;
  TaskData data;
  data.spec = spec;
  if (config.task == Task::kClassify || config.task == Task::kNoisy) {
    const std::size_t label = spec.index_of("label");
    data.target_domain = label;
    std::vector<std::vector<std::uint8_t>> labels;
    for (std::size_t i = 0; i < images.size(); ++i) {
      labels.push_back(encode_symbol(spec.domain(label).symbolic_codec(), images.labels[i]));
      data.targets.push_back(images.labels[i]);
    }
    if (training && config.task == Task::kNoisy && config.noise_k > 0) {
      Rng rng = derive_rng(config.seed, {kNoiseStream});
      labels = make_noisy_labels(labels, config.noise_k, rng);
    }
    for (std::size_t i = 0; i < images.size(); ++i) data.rows.push_back(assemble_fl(spec, {codes[i], labels[i]}));
    return data;
  }
  Rng rng = derive_rng(config.seed, {kPairStream, stream});
  const PairedExamples pairs = make_functional_dataset(
      images.labels, config.task, count, rng, {config.successor_wrap, config.xor_false_class, config.xor_true_class});
  data.targets = pairs.target;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (config.task == Task::kSuccessor) {
      data.rows.push_back(assemble_fl(spec, {codes[pairs.first[i]], codes[pairs.second[i]]}));
    } else {
      const std::size_t t = 2;
      data.target_domain = t;
      data.rows.push_back(assemble_fl(
          spec, {codes[pairs.first[i]], codes[pairs.second[i]], encode_symbol(spec.domain(t).symbolic_codec(), pairs.target[i])}));
    }
  }
  return data;
}

namespace {

std::size_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace

TaskMetrics run_task_with(const ExperimentConfig& config, const LoadedImages& images, const Phase1Result& phase1,
                          const std::filesystem::path& out_dir) {
  config.check();
  std::filesystem::create_directories(out_dir);
  detail::write_file(out_dir / "config.json", config.to_json());
  const FeatureLayerSpec spec = task_spec(config);
  spec.save(out_dir / "spec.json");
  const Autoencoder& ae = phase1.autoencoder;
  ae.save(out_dir / "autoencoder.ckpt");
  {
    JsonLinesWriter log(out_dir / "phase1_log.jsonl");
    for (const auto& e : phase1.log.epochs) {
      json j{{"epoch", e.epoch}, {"temperature", e.temperature}, {"train_loss", e.train_loss}};
      log.write(j.dump());
    }
  }

  const DomainSpec& image_domain = spec.domain(first_neural_domain(spec));
  const auto train_codes = encode_images(ae, image_domain, images.train.pixels);
  const auto test_codes = encode_images(ae, image_domain, images.test.pixels);
  const TaskData train = build_task_data(config, spec, images.train, train_codes, true);
  const TaskData test = build_task_data(config, spec, images.test, test_codes, false);
  const BinaryDataset train_data = train.dataset();
  const BinaryDataset test_data = test.dataset();
  train_data.save(out_dir / "train_fl.bds");

  auto vtree = std::make_shared<const Vtree>(build_task_vtree(spec, train_data, config.vtree));
  const LearnConfig learn = phase2_learn_config(config);
  JsonLinesWriter learn_log(out_dir / "train_log.jsonl");
  const LearnResult learned = run_phase2(train_data, vtree, spec, learn, config.task == Task::kNoisy,
                         [&](const LearnLogEntry& e) { learn_log.write(to_json_line(e)); });
  const Circuit& circuit = learned.circuit;
  circuit.save(out_dir / "model.psdd");

  TaskMetrics m;
  m.task = to_string(config.task);
  m.noise_k = config.noise_k;
  m.train_examples = train.rows.size();
  m.test_examples = test.rows.size();
  m.fl_variables = spec.size();
  m.ae_initial_loss = phase1.log.initial_loss;
  m.ae_final_loss = phase1.log.epochs.empty() ? phase1.log.initial_loss : phase1.log.epochs.back().train_loss;
  m.ae_test_reconstruction = reconstruction_bce(ae, images.test.pixels);
  m.train_log_likelihood = log_likelihood(circuit, train_data) / static_cast<double>(train_data.total_weight());
  m.test_log_likelihood = log_likelihood_by_example(circuit, test_data) / static_cast<double>(test_data.total_weight());
  m.train_score = score(circuit, train_data, learn);
  m.num_parameters = circuit.num_parameters();
  m.circuit_nodes = circuit.size();
  m.search_iterations = learned.log.empty() ? 0 : learned.log.back().iteration;

  std::size_t correct = 0;
  std::size_t sample_correct = 0;
  if (test.target_domain) {
    const std::size_t t = *test.target_domain;
    for (std::size_t i = 0; i < test.rows.size(); ++i) {
      const auto map = classify_map(circuit, spec, t, test.rows[i]);
      if (!map) ++m.zero_evidence;
      if (map && *map == test.targets[i]) ++correct;
      Rng rng = derive_rng(config.seed, {kSampleClassifyStream, i});
      const auto sampled = classify_sample(circuit, spec, t, test.rows[i], rng);
      if (sampled && *sampled == test.targets[i]) ++sample_correct;
    }
  } else {
    // Successor: rank one candidate second image per class by the joint probability.
    std::vector<std::vector<std::size_t>> by_class(kDigitClasses);
    for (std::size_t i = 0; i < images.test.size(); ++i) by_class[images.test.labels[i]].push_back(i);
    const std::size_t second = spec.index_of("second");
    const auto groups = sampling_groups(spec);
    for (std::size_t i = 0; i < test.rows.size(); ++i) {
      Rng rng = derive_rng(config.seed, {kCandidateStream, i});
      const std::vector<std::uint8_t> first_code(test.rows[i].begin(), test.rows[i].begin() + spec.end(0));
      std::vector<std::pair<std::uint32_t, std::size_t>> candidates;
      for (std::uint32_t c = 0; c < kDigitClasses; ++c) {
        if (!by_class[c].empty()) candidates.emplace_back(c, by_class[c][uniform_index(rng, by_class[c].size())]);
      }
      std::optional<std::uint32_t> best;
      double best_lp = -std::numeric_limits<double>::infinity();
      for (const auto& [c, idx] : candidates) {
        const double lp = evidence_log_probability(circuit, PartialAssignment::from_complete(
                                                                assemble_fl(spec, {first_code, test_codes[idx]})));
        if (lp > best_lp) {
          best_lp = lp;
          best = c;
        }
      }
      if (!best) ++m.zero_evidence;
      if (best && *best == test.targets[i]) ++correct;
      try {
        const auto x = generative_query(circuit, domain_evidence(spec, 0, first_code), groups, rng);
        const std::span<const std::uint8_t> drawn(x.data() + spec.begin(second), spec.domain(second).width());
        std::optional<std::uint32_t> nearest;
        std::size_t nearest_d = std::numeric_limits<std::size_t>::max();
        for (const auto& [c, idx] : candidates) {
          const std::size_t d = hamming(drawn, test_codes[idx]);
          if (d < nearest_d) {
            nearest_d = d;
            nearest = c;
          }
        }
        if (nearest && *nearest == test.targets[i]) ++sample_correct;
      } catch (const ZeroEvidenceError&) {
      }
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(test.rows.size());
  m.sample_accuracy = static_cast<double>(sample_correct) / static_cast<double>(test.rows.size());

  if (config.write_images) {
    const std::size_t w = images.train.width;
    const std::size_t h = images.train.height;
    if (test.target_domain && (config.task == Task::kClassify || config.task == Task::kNoisy)) {
      std::filesystem::create_directories(out_dir / "samples");
      for (std::uint32_t y = 0; y < spec.domain(*test.target_domain).cat_dim; ++y) {
        Rng rng = derive_rng(config.seed, {kImageStream, y});
        const auto imgs = sample_class_images(circuit, ae, spec, *test.target_domain, y, config.samples_per_class, rng);
        for (std::size_t i = 0; i < imgs.size(); ++i) {
          write_pgm(out_dir / "samples" / ("class_" + std::to_string(y) + "_" + std::to_string(i) + ".pgm"),
                    std::span<const double>(imgs[i].data(), static_cast<std::size_t>(imgs[i].size())), w, h);
        }
      }
    }
    std::filesystem::create_directories(out_dir / "flvis");
    for (Var v = 0; v < spec.size(); ++v) {
      std::size_t domain = first_neural_domain(spec);
      for (std::size_t d = 0; d < spec.num_domains(); ++d) {
        if (v >= spec.begin(d) && v < spec.end(d) && spec.domain(d).codec == CodecKind::kNeural) domain = d;
      }
      Rng rng = derive_rng(config.seed, {kFlvisStream, v});
      const auto vis = visualize_fl_variable(circuit, ae, spec, domain, v, config.flvis_samples, rng);
      if (!vis) continue;
      const std::string stem = "var_" + std::to_string(v);
      write_pgm(out_dir / "flvis" / (stem + "_true.pgm"),
                std::span<const double>(vis->visual_true.data(), static_cast<std::size_t>(vis->visual_true.size())), w, h);
      write_pgm(out_dir / "flvis" / (stem + "_false.pgm"),
                std::span<const double>(vis->visual_false.data(), static_cast<std::size_t>(vis->visual_false.size())), w,
                h);
    }
  }
  detail::write_file(out_dir / "metrics.json", m.to_json());
  return m;
}

TaskMetrics run_task(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.check();
  const LoadedImages images = load_images(config);
  const Phase1Result phase1 = run_phase1(config, images.train.pixels);
  return run_task_with(config, images, phase1, out_dir);
}

}  // namespace llae
