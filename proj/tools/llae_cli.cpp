#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "llae/error.hpp"
#include "llae/inference.hpp"
#include "llae/pipeline.hpp"

namespace fs = std::filesystem;
using namespace llae;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

// Malformed input data or artifacts; maps to exit status 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;
  std::string out = "run";
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw DataError("cannot write " + path.string());
}

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c;
  if (!g.config_path.empty()) c = ExperimentConfig::from_json(read_text(g.config_path));
  if (g.seed_given) c.seed = g.seed;
  return c;
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

std::size_t symbolic_target(const FeatureLayerSpec& spec) {
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    if (spec.domain(d).codec == CodecKind::kSymbolic) return d;
  }
  throw DataError("feature layer has no symbolic domain");
}

std::size_t neural_domain(const FeatureLayerSpec& spec) {
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    if (spec.domain(d).codec == CodecKind::kNeural) return d;
  }
  throw DataError("feature layer has no neural domain");
}

std::pair<std::size_t, std::size_t> image_shape(const Autoencoder& ae, std::size_t width) {
  const std::size_t n = ae.input_dim();
  if (width == 0) width = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (width == 0 || n % width != 0) throw DataError("cannot infer image shape; pass --width");
  return {width, n / width};
}

// "+3,-0,label=7": signed literals plus name=<category> slices expanded through the codec.
PartialAssignment parse_literals(const std::string& text, const std::optional<FeatureLayerSpec>& spec) {
  PartialAssignment out;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    PartialAssignment part;
    if (const auto eq = token.find('='); eq != std::string::npos) {
      if (!spec) throw InvalidArgument("'" + token + "' needs --spec");
      const std::size_t d = spec->index_of(token.substr(0, eq));
      const auto& dom = spec->domain(d);
      if (dom.codec != CodecKind::kSymbolic || dom.num_vars != 1) {
        throw InvalidArgument("'" + token.substr(0, eq) + "' is not a single symbolic variable");
      }
      std::uint32_t y = 0;
      try {
        y = static_cast<std::uint32_t>(std::stoul(token.substr(eq + 1)));
      } catch (const std::exception&) {
        throw InvalidArgument("bad category in '" + token + "'");
      }
      part = domain_evidence(*spec, d, encode_symbol(dom.symbolic_codec(), y));
    } else {
      part = PartialAssignment::parse(token);
    }
    const auto merged = PartialAssignment::conjoin(out, part);
    if (!merged) throw InvalidArgument("contradictory literals in '" + text + "'");
    out = *merged;
  }
  return out;
}

void print_metrics(const TaskMetrics& m) { std::cout << m.to_json(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-phase learning of a neural autoencoder and a PSDD over its latent codes."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Run seed (overrides the config)")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--config", g.config_path, "Experiment config JSON; missing keys take defaults");
  app.add_option("--out", g.out, "Run directory")->capture_default_str();

  std::string checkpoint, data_path, spec_path, circuit_path, image_path;
  std::size_t width = 0;

  auto* train_ae = app.add_subcommand("train-ae", "Train the autoencoder on the configured images");

  auto* encode = app.add_subcommand("encode", "Encode train and test images into feature-layer datasets");
  encode->add_option("--checkpoint", checkpoint, "Autoencoder checkpoint (default <out>/autoencoder.ckpt)");

  auto* train_psdd = app.add_subcommand("train-psdd", "Learn a PSDD from an encoded dataset");
  train_psdd->add_option("--data", data_path, "Dataset (default <out>/train_fl.bds)");
  train_psdd->add_option("--spec", spec_path, "Feature layer spec (default <out>/spec.json)");

  auto* classify = app.add_subcommand("classify", "Predict the symbolic target of an image or a test dataset");
  classify->add_option("--circuit", circuit_path, "Circuit (default <out>/model.psdd)");
  classify->add_option("--spec", spec_path, "Feature layer spec (default <out>/spec.json)");
  classify->add_option("--data", data_path, "Encoded rows (default <out>/test_fl.bds)");
  classify->add_option("--image", image_path, "PGM image to classify instead of a dataset");
  classify->add_option("--checkpoint", checkpoint, "Autoencoder checkpoint (default <out>/autoencoder.ckpt)");

  std::uint32_t sample_class = 0;
  std::size_t sample_count = 1;
  auto* sample = app.add_subcommand("sample", "Generate images of one category");
  sample->add_option("--class", sample_class, "Category")->required();
  sample->add_option("--count", sample_count, "Number of images")->check(CLI::PositiveNumber);
  sample->add_option("--circuit", circuit_path, "Circuit (default <out>/model.psdd)");
  sample->add_option("--spec", spec_path, "Feature layer spec (default <out>/spec.json)");
  sample->add_option("--checkpoint", checkpoint, "Autoencoder checkpoint (default <out>/autoencoder.ckpt)");
  sample->add_option("--width", width, "Image width (default: square)");

  std::string evidence_text, target_text;
  auto* query = app.add_subcommand("query", "Print Pr(target | evidence)");
  query->add_option("--evidence", evidence_text, "Literals such as +3,-0 or label=7");
  query->add_option("--target", target_text, "Literals such as +3,-0 or label=7")->required();
  query->add_option("--circuit", circuit_path, "Circuit (default <out>/model.psdd)");
  query->add_option("--spec", spec_path, "Feature layer spec for name=<y> literals");

  std::optional<Var> fl_variable;
  std::size_t fl_samples = 0;
  auto* analyze = app.add_subcommand("analyze-fl", "Write visualizations of feature-layer variables");
  analyze->add_option("--variable", fl_variable, "Single variable (default: all)");
  analyze->add_option("--samples", fl_samples, "Samples per side (default from config)");
  analyze->add_option("--circuit", circuit_path, "Circuit (default <out>/model.psdd)");
  analyze->add_option("--spec", spec_path, "Feature layer spec (default <out>/spec.json)");
  analyze->add_option("--checkpoint", checkpoint, "Autoencoder checkpoint (default <out>/autoencoder.ckpt)");
  analyze->add_option("--width", width, "Image width (default: square)");

  std::string task_name;
  std::optional<std::size_t> noise_k;
  auto* run_task_cmd = app.add_subcommand("run-task", "Run both learning phases and the evaluation of a task");
  run_task_cmd->add_option("task", task_name, "Task")
      ->required()
      ->check(CLI::IsMember({"classify", "noisy", "successor", "xor", "plus"}));
  run_task_cmd->add_option("--noise-k", noise_k, "Extra wrong labels per training example (noisy task)");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate-circuit", "Check a circuit file and list invariant violations");
  validate_cmd->add_option("circuit", validate_path, "Circuit file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return kUsageError;
  }

  const fs::path out = g.out;
  try {
    const ExperimentConfig config = load_config(g);
    const fs::path ckpt = or_default(checkpoint, out / "autoencoder.ckpt");
    const fs::path spec_file = or_default(spec_path, out / "spec.json");
    const fs::path circuit_file = or_default(circuit_path, out / "model.psdd");

    if (*train_ae) {
      fs::create_directories(out);
      const LoadedImages images = load_images(config);
      const Phase1Result r = run_phase1(config, images.train.pixels);
      r.autoencoder.save(out / "autoencoder.ckpt");
      write_text(out / "config.json", config.to_json());
      std::printf("initial loss %.6f\n", r.log.initial_loss);
      for (const auto& e : r.log.epochs) std::printf("epoch %zu loss %.6f\n", e.epoch, e.train_loss);
    } else if (*encode) {
      fs::create_directories(out);
      const Autoencoder ae = Autoencoder::load(ckpt);
      const LoadedImages images = load_images(config);
      const FeatureLayerSpec spec = task_spec(config);
      const auto& dom = spec.domain(neural_domain(spec));
      const TaskData train = build_task_data(config, spec, images.train, encode_images(ae, dom, images.train.pixels), true);
      const TaskData test = build_task_data(config, spec, images.test, encode_images(ae, dom, images.test.pixels), false);
      spec.save(out / "spec.json");
      train.dataset().save(out / "train_fl.bds");
      test.dataset().save(out / "test_fl.bds");
      std::printf("encoded %zu train and %zu test rows over %zu variables\n", train.rows.size(), test.rows.size(),
                  spec.size());
    } else if (*train_psdd) {
      fs::create_directories(out);
      const FeatureLayerSpec spec = FeatureLayerSpec::load(spec_file);
      const BinaryDataset data = BinaryDataset::load(or_default(data_path, out / "train_fl.bds"));
      auto vtree = std::make_shared<const Vtree>(build_task_vtree(spec, data, config.vtree));
      const LearnConfig learn = phase2_learn_config(config);
      std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
      const LearnResult r = run_phase2(data, vtree, spec, learn, config.task == Task::kNoisy,
                                       [&](const LearnLogEntry& e) { log << to_json_line(e) << '\n'; });
      r.circuit.save(out / "model.psdd");
      std::printf("circuit with %zu nodes, %zu parameters, log-likelihood %.6f\n", r.circuit.size(),
                  r.circuit.num_parameters(), log_likelihood(r.circuit, data));
    } else if (*classify) {
      const Circuit circuit = Circuit::load(circuit_file);
      const FeatureLayerSpec spec = FeatureLayerSpec::load(spec_file);
      const std::size_t target = symbolic_target(spec);
      if (!image_path.empty()) {
        const Autoencoder ae = Autoencoder::load(ckpt);
        const GrayImage img = read_pgm(image_path);
        if (img.pixels.size() != ae.input_dim()) throw DataError("image size differs from the autoencoder input");
        const Eigen::Map<const Eigen::VectorXd> x(img.pixels.data(), static_cast<Eigen::Index>(img.pixels.size()));
        const std::size_t d = neural_domain(spec);
        std::vector<std::vector<std::uint8_t>> slices;
        for (std::size_t i = 0; i < spec.num_domains(); ++i) {
          slices.push_back(i == d ? encode_domain(spec.domain(i), ae.encode_hard(x))
                                  : std::vector<std::uint8_t>(spec.domain(i).width(), 0));
        }
        const auto y = classify_map(circuit, spec, target, assemble_fl(spec, slices));
        if (!y) throw DataError("image code has probability 0");
        std::printf("%u\n", *y);
      } else {
        const BinaryDataset data = BinaryDataset::load(or_default(data_path, out / "test_fl.bds"));
        const auto& dom = spec.domain(target);
        std::size_t correct = 0, total = 0, zero = 0;
        for (const auto& row : data.rows()) {
          const CompleteAssignment& x = row.values;
          const std::vector<std::uint8_t> bits(x.begin() + spec.begin(target), x.begin() + spec.end(target));
          const std::uint32_t truth = decode_domain(dom, bits).front();
          const auto y = classify_map(circuit, spec, target, x);
          const std::size_t w = row.multiplicity;
          total += w;
          if (!y) zero += w;
          if (y && *y == truth) correct += w;
        }
        if (total == 0) throw DataError("empty dataset");
        std::printf("accuracy %.6f (%zu/%zu), zero evidence %zu\n", static_cast<double>(correct) / total, correct, total,
                    zero);
      }
    } else if (*sample) {
      const Circuit circuit = Circuit::load(circuit_file);
      const FeatureLayerSpec spec = FeatureLayerSpec::load(spec_file);
      const Autoencoder ae = Autoencoder::load(ckpt);
      const auto [w, h] = image_shape(ae, width);
      Rng rng = derive_rng(config.seed, {sample_class});
      const auto images = sample_class_images(circuit, ae, spec, symbolic_target(spec), sample_class, sample_count, rng);
      fs::create_directories(out / "samples");
      for (std::size_t i = 0; i < images.size(); ++i) {
        const fs::path p = out / "samples" / ("class_" + std::to_string(sample_class) + "_" + std::to_string(i) + ".pgm");
        write_pgm(p, std::span<const double>(images[i].data(), static_cast<std::size_t>(images[i].size())), w, h);
        std::printf("%s\n", p.string().c_str());
      }
    } else if (*query) {
      const Circuit circuit = Circuit::load(circuit_file);
      std::optional<FeatureLayerSpec> spec;
      if (!spec_path.empty()) spec = FeatureLayerSpec::load(spec_path);
      const PartialAssignment v = parse_literals(evidence_text, spec);
      const PartialAssignment q = parse_literals(target_text, spec);
      if (std::max(v.required_vars(), q.required_vars()) > circuit.num_vars()) {
        throw InvalidArgument("literal variable outside the circuit");
      }
      std::printf("%.9f\n", conditional_probability(circuit, q, v));
    } else if (*analyze) {
      const Circuit circuit = Circuit::load(circuit_file);
      const FeatureLayerSpec spec = FeatureLayerSpec::load(spec_file);
      const Autoencoder ae = Autoencoder::load(ckpt);
      const auto [w, h] = image_shape(ae, width);
      const std::size_t n = fl_samples ? fl_samples : config.flvis_samples;
      fs::create_directories(out / "flvis");
      for (Var v = 0; v < spec.size(); ++v) {
        if (fl_variable && *fl_variable != v) continue;
        std::size_t domain = neural_domain(spec);
        for (std::size_t d = 0; d < spec.num_domains(); ++d) {
          if (v >= spec.begin(d) && v < spec.end(d) && spec.domain(d).codec == CodecKind::kNeural) domain = d;
        }
        Rng rng = derive_rng(config.seed, {v});
        const auto vis = visualize_fl_variable(circuit, ae, spec, domain, v, n, rng);
        if (!vis) {
          std::printf("var %u constant\n", v);
          continue;
        }
        const std::string stem = "var_" + std::to_string(v);
        write_pgm(out / "flvis" / (stem + "_true.pgm"),
                  std::span<const double>(vis->visual_true.data(), static_cast<std::size_t>(vis->visual_true.size())), w,
                  h);
        write_pgm(out / "flvis" / (stem + "_false.pgm"),
                  std::span<const double>(vis->visual_false.data(), static_cast<std::size_t>(vis->visual_false.size())),
                  w, h);
        std::printf("var %u written\n", v);
      }
    } else if (*run_task_cmd) {
      ExperimentConfig c = config;
      c.task = parse_task(task_name);
      if (noise_k) c.noise_k = *noise_k;
      c.check();
      print_metrics(run_task(c, out));
    } else if (*validate_cmd) {
      const RawCircuit raw = parse_circuit_text(read_text(validate_path));
      const Vtree vtree = Vtree::load(fs::path(validate_path).parent_path() / raw.vtree_file);
      const auto violations = validate_nodes(vtree, raw.nodes, raw.root);
      for (const auto& v : violations) std::printf("%s\n", v.c_str());
      if (!violations.empty()) return kDataError;
      std::printf("valid\n");
    }
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
  return 0;
}
