#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <bit>
#include <fstream>
#include <numeric>
#include <sstream>

#include "llae/error.hpp"
#include "llae/inference.hpp"
#include "llae/pipeline.hpp"

using namespace llae;

namespace {

std::vector<std::uint8_t> cycled_labels(std::size_t n) {
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>((i * 7) % 10);
  return labels;
}

// One binary image variable (var 0) and a one-hot label over two categories (vars 1, 2).
FeatureLayerSpec bit_and_label_spec() {
  return FeatureLayerSpec({{"image", 1, 2, CodecKind::kNeural, false}, {"label", 1, 2, CodecKind::kSymbolic, false}});
}

std::shared_ptr<const Vtree> bit_and_label_vtree() {
  return std::make_shared<const Vtree>(Vtree::parse("L 0 1\nL 1 2\nI 2 0 1\nL 3 0\nI 4 2 3\nR 4\n"));
}

// Pr(x0 = 1 | label = 0) = p0 and Pr(x0 = 1 | label = 1) = p1, labels equally likely.
Circuit label_conditioned_circuit(double p0, double p1) {
  CircuitBuilder b(bit_and_label_vtree());
  const NodeId label0 = b.decision({{b.literal(1, true), b.literal(2, false), 1.0}});
  const NodeId label1 = b.decision({{b.literal(1, false), b.literal(2, true), 1.0}});
  auto image = [&](double p) {
    if (p == 0.0) return b.literal(0, false);
    if (p == 1.0) return b.literal(0, true);
    return b.terminal(0, p);
  };
  return b.build(b.decision({{label0, image(p0), 0.5}, {label1, image(p1), 0.5}}));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ImageSet tiny_images(const std::vector<std::uint8_t>& labels) {
  ImageSet set;
  set.width = 1;
  set.height = 1;
  set.pixels = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(labels.size()));
  set.labels = labels;
  return set;
}

}  // namespace

TEST(Pipeline, SuccessorPairsFollowLabels) {
  const auto labels = cycled_labels(60);
  Rng rng = derive_rng(1, {});
  const auto pairs = make_functional_dataset(labels, Task::kSuccessor, 500, rng);
  ASSERT_EQ(pairs.size(), 500U);
  bool wrapped = false;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(labels[pairs.second[i]], (labels[pairs.first[i]] + 1) % 10);
    EXPECT_EQ(pairs.target[i], labels[pairs.second[i]]);
    wrapped |= labels[pairs.first[i]] == 9;
  }
  EXPECT_TRUE(wrapped);

  const auto no_wrap = make_functional_dataset(labels, Task::kSuccessor, 500, rng, {false, 0, 1});
  for (std::size_t i = 0; i < no_wrap.size(); ++i) EXPECT_NE(labels[no_wrap.first[i]], 9);
}

TEST(Pipeline, XorRowsMatchSourceLabels) {
  const auto labels = cycled_labels(80);
  Rng rng = derive_rng(2, {});
  const auto pairs = make_functional_dataset(labels, Task::kXor, 400, rng, {true, 3, 8});
  std::size_t ones = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto a = labels[pairs.first[i]];
    const auto b = labels[pairs.second[i]];
    ASSERT_TRUE(a == 3 || a == 8);
    ASSERT_TRUE(b == 3 || b == 8);
    EXPECT_EQ(pairs.target[i], static_cast<std::uint32_t>((a == 8) != (b == 8)));
    ones += pairs.target[i];
  }
  EXPECT_GT(ones, 100U);
  EXPECT_LT(ones, 300U);
}

TEST(Pipeline, PlusHasNineteenCategories) {
  ExperimentConfig config;
  config.task = Task::kPlus;
  EXPECT_EQ(config.category_count(), 19U);
  const FeatureLayerSpec spec = task_spec(config);
  EXPECT_EQ(spec.domain(spec.index_of("sum")).cat_dim, 19U);

  const auto labels = cycled_labels(50);
  Rng rng = derive_rng(3, {});
  const auto pairs = make_functional_dataset(labels, Task::kPlus, 2000, rng);
  std::vector<int> seen(19, 0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs.target[i], static_cast<std::uint32_t>(labels[pairs.first[i]]) + labels[pairs.second[i]]);
    seen.at(pairs.target[i]) = 1;
  }
  EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 19);
}

TEST(Pipeline, FunctionalRowsCarryTheirTargets) {
  for (Task task : {Task::kXor, Task::kPlus}) {
    ExperimentConfig config;
    config.task = task;
    config.train_size = 300;
    config.latent = {3, 2};
    const FeatureLayerSpec spec = task_spec(config);
    const auto labels = cycled_labels(40);
    std::vector<std::vector<std::uint8_t>> codes;
    for (std::size_t i = 0; i < labels.size(); ++i) codes.push_back({std::uint8_t(i & 1), std::uint8_t((i >> 1) & 1), 0});
    const TaskData data = build_task_data(config, spec, tiny_images(labels), codes, true);
    ASSERT_EQ(data.rows.size(), 300U);
    ASSERT_TRUE(data.target_domain.has_value());
    const std::size_t t = *data.target_domain;
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
      const auto slice = slice_fl(spec, data.rows[i])[t];
      EXPECT_EQ(slice, encode_symbol(spec.domain(t).symbolic_codec(), data.targets[i]));
    }
  }
}

TEST(Pipeline, NoisyLabelsAddDistinctWrongLabels) {
  const SymbolicCodec codec{10, false};
  std::vector<std::vector<std::uint8_t>> clean;
  for (std::uint32_t y = 0; y < 10; ++y) clean.push_back(encode_symbol(codec, y));
  Rng rng = derive_rng(4, {});
  EXPECT_EQ(make_noisy_labels(clean, 0, rng), clean);
  for (const auto& row : make_noisy_labels(clean, 9, rng)) {
    EXPECT_EQ(std::count(row.begin(), row.end(), 1), 10);
  }
  const auto one = make_noisy_labels(clean, 1, rng);
  for (std::size_t y = 0; y < 10; ++y) {
    EXPECT_EQ(std::count(one[y].begin(), one[y].end(), 1), 2);
    EXPECT_EQ(one[y][y], 1);
  }
  EXPECT_THROW(make_noisy_labels(clean, 10, rng), InvalidArgument);
}

TEST(Pipeline, NoisyTaskKeepsTestLabelsClean) {
  ExperimentConfig config;
  config.task = Task::kNoisy;
  config.noise_k = 3;
  config.latent = {2, 2};
  const FeatureLayerSpec spec = task_spec(config);
  const auto labels = cycled_labels(30);
  const std::vector<std::vector<std::uint8_t>> codes(labels.size(), std::vector<std::uint8_t>{1, 0});
  const TaskData train = build_task_data(config, spec, tiny_images(labels), codes, true);
  const TaskData test = build_task_data(config, spec, tiny_images(labels), codes, false);
  const std::size_t label = spec.index_of("label");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto noisy = slice_fl(spec, train.rows[i])[label];
    EXPECT_EQ(std::count(noisy.begin(), noisy.end(), 1), 4);
    EXPECT_EQ(slice_fl(spec, test.rows[i])[label], encode_symbol(spec.domain(label).symbolic_codec(), labels[i]));
  }
}

TEST(Pipeline, ClassifyLabelEqualToImageBit) {
  const Circuit c = label_conditioned_circuit(0.0, 1.0);
  ASSERT_TRUE(validate(c).empty());
  const FeatureLayerSpec spec = bit_and_label_spec();
  const std::size_t label = spec.index_of("label");
  EXPECT_EQ(classify_map(c, spec, label, {1, 0, 0}), 1U);
  EXPECT_EQ(classify_map(c, spec, label, {0, 0, 0}), 0U);
  Rng rng = derive_rng(5, {});
  for (int i = 0; i < 200; ++i) EXPECT_EQ(classify_sample(c, spec, label, {1, 0, 0}, rng), 1U);
}

TEST(Pipeline, SampledLabelAgreesWithMapOnConfidentConditional) {
  const Circuit c = label_conditioned_circuit(0.05, 0.95);
  const FeatureLayerSpec spec = bit_and_label_spec();
  const std::size_t label = spec.index_of("label");
  const double exact = conditional_probability(c, {{2, true}}, {{0, true}});
  EXPECT_NEAR(exact, 0.95, 1e-12);
  ASSERT_EQ(classify_map(c, spec, label, {1, 0, 0}), 1U);
  Rng rng = derive_rng(6, {});
  int agree = 0;
  for (int i = 0; i < 1000; ++i) agree += classify_sample(c, spec, label, {1, 0, 0}, rng) == 1U;
  EXPECT_NEAR(agree / 1000.0, exact, 0.03);
}

TEST(Pipeline, ZeroEvidenceGivesNoPrediction) {
  const Circuit c = label_conditioned_circuit(1.0, 1.0);
  const FeatureLayerSpec spec = bit_and_label_spec();
  Rng rng = derive_rng(7, {});
  EXPECT_FALSE(classify_map(c, spec, 1, {0, 0, 0}).has_value());
  EXPECT_FALSE(classify_sample(c, spec, 1, {0, 0, 0}, rng).has_value());
}

TEST(Pipeline, ClassImagesComeFromTheConditional) {
  const Circuit c = label_conditioned_circuit(0.2, 0.9);
  const FeatureLayerSpec spec = bit_and_label_spec();
  Rng init = derive_rng(8, {});
  const Autoencoder ae = Autoencoder::create(4, {1, 2}, 5, init);
  const Eigen::VectorXd on = ae.decode({1});
  Rng rng = derive_rng(9, {});
  const auto images = sample_class_images(c, ae, spec, 1, 1, 2000, rng);
  ASSERT_EQ(images.size(), 2000U);
  std::size_t ones = 0;
  for (const auto& img : images) {
    EXPECT_TRUE((img.array() >= 0.0).all() && (img.array() <= 1.0).all());
    ones += img.isApprox(on) ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(ones) / 2000.0, 0.9, 0.03);
}

TEST(Pipeline, VisualizationPairSumsToOne) {
  const Circuit c = label_conditioned_circuit(0.2, 0.9);
  const FeatureLayerSpec spec = bit_and_label_spec();
  Rng init = derive_rng(10, {});
  const Autoencoder ae = Autoencoder::create(6, {1, 2}, 4, init);
  for (Var v = 0; v < 3; ++v) {
    Rng rng = derive_rng(11, {v});
    const auto vis = visualize_fl_variable(c, ae, spec, 0, v, 50, rng);
    ASSERT_TRUE(vis.has_value());
    EXPECT_EQ(vis->samples, 50U);
    EXPECT_LE((vis->visual_true + vis->visual_false - Eigen::VectorXd::Ones(6)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Pipeline, ConstantDecoderVisualizesAsHalf) {
  const Circuit c = label_conditioned_circuit(0.2, 0.9);
  const FeatureLayerSpec spec = bit_and_label_spec();
  const Autoencoder ae(MlpNetwork({4, 2}, {Activation::kIdentity}), MlpNetwork({2, 4}, {Activation::kSigmoid}), {1, 2});
  Rng rng = derive_rng(12, {});
  const auto vis = visualize_fl_variable(c, ae, spec, 0, 1, 20, rng);
  ASSERT_TRUE(vis.has_value());
  EXPECT_LE((vis->visual_true.array() - 0.5).abs().maxCoeff(), 1e-12);
  EXPECT_LE((vis->visual_false.array() - 0.5).abs().maxCoeff(), 1e-12);
}

TEST(Pipeline, DegenerateVariableHasNoVisualization) {
  const Circuit c = label_conditioned_circuit(1.0, 1.0);
  const FeatureLayerSpec spec = bit_and_label_spec();
  Rng init = derive_rng(13, {});
  const Autoencoder ae = Autoencoder::create(4, {1, 2}, 3, init);
  Rng rng = derive_rng(14, {});
  EXPECT_FALSE(visualize_fl_variable(c, ae, spec, 0, 0, 10, rng).has_value());
  EXPECT_TRUE(visualize_fl_variable(c, ae, spec, 0, 1, 10, rng).has_value());
}

TEST(Pipeline, TaskVtreeKeepsSymbolicSideLeft) {
  ExperimentConfig config;
  config.latent = {4, 2};
  const FeatureLayerSpec spec = task_spec(config);
  BinaryDataset data(spec.size());
  Rng rng = derive_rng(15, {});
  for (int i = 0; i < 50; ++i) {
    std::vector<std::uint8_t> code(4);
    for (auto& b : code) b = uniform01(rng) < 0.5;
    data.add(assemble_fl(spec, {code, encode_symbol({10, false}, static_cast<std::uint32_t>(i % 10))}));
  }
  for (VtreeMethod m : {VtreeMethod::kBalanced, VtreeMethod::kRightLinear, VtreeMethod::kMutualInformation}) {
    const Vtree vt = build_task_vtree(spec, data, m);
    const auto left = vt.variables(vt.left(vt.root()));
    std::vector<Var> sorted(left.begin(), left.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<Var> label(10);
    std::iota(label.begin(), label.end(), spec.begin(spec.index_of("label")));
    EXPECT_EQ(sorted, label) << to_string(m);
  }
}

TEST(Pipeline, LabelConstraintHoldsAfterLearning) {
  ExperimentConfig config;
  config.latent = {3, 2};
  const FeatureLayerSpec spec = task_spec(config);
  BinaryDataset data(spec.size());
  Rng rng = derive_rng(16, {});
  for (int i = 0; i < 300; ++i) {
    const std::uint32_t y = static_cast<std::uint32_t>(i % 10);
    std::vector<std::uint8_t> code{std::uint8_t(y & 1), std::uint8_t(uniform01(rng) < 0.3), std::uint8_t(y > 4)};
    data.add(assemble_fl(spec, {code, encode_symbol({10, false}, y)}));
  }
  data = data.compressed();
  auto vt = std::make_shared<const Vtree>(build_task_vtree(spec, data, VtreeMethod::kMutualInformation));
  const LearnResult r = run_phase2(data, vt, spec, config.learn);
  ASSERT_TRUE(validate(r.circuit).empty());
  for (std::size_t i = 1; i < r.log.size(); ++i) EXPECT_GE(r.log[i].train_score, r.log[i - 1].train_score);
  const Var first = spec.begin(spec.index_of("label"));
  double one_hot_mass = 0.0;
  for (std::uint32_t bits = 0; bits < 1024; ++bits) {
    PartialAssignment v;
    for (Var j = 0; j < 10; ++j) v.set(first + j, ((bits >> j) & 1U) != 0);
    const double p = std::exp(evidence_log_probability(r.circuit, v));
    if (std::popcount(bits) == 1) {
      one_hot_mass += p;
    } else {
      EXPECT_EQ(p, 0.0);
    }
  }
  EXPECT_NEAR(one_hot_mass, 1.0, 1e-9);
}

TEST(Pipeline, ConfigJsonRoundTrip) {
  ExperimentConfig c;
  c.task = Task::kNoisy;
  c.noise_k = 2;
  c.learn.size_penalty = 0.01;
  c.train.epochs = 3;
  c.seed = 42;
  const std::string text = c.to_json();
  const ExperimentConfig back = ExperimentConfig::from_json(text);
  EXPECT_EQ(back.to_json(), text);
  EXPECT_EQ(ExperimentConfig::from_json("{}").to_json(), ExperimentConfig{}.to_json());
  EXPECT_EQ(ExperimentConfig{}.flvis_samples, 200U);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"bogus": 1})"), InvalidArgument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"learn": {"alpha": 1}})"), InvalidArgument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"task": "noisy", "noise_k": 10})"), InvalidArgument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"task": "sort"})"), InvalidArgument);
  EXPECT_THROW(ExperimentConfig::from_json("{"), ParseError);
}

TEST(Pipeline, EmittedImagesRoundTripThroughPgm) {
  const auto dir = std::filesystem::temp_directory_path() / "llae_pipeline_pgm";
  std::filesystem::create_directories(dir);
  Rng init = derive_rng(17, {});
  const Autoencoder ae = Autoencoder::create(12, {2, 2}, 4, init);
  const Eigen::VectorXd img = ae.decode({1, 0});
  write_pgm(dir / "a.pgm", std::span<const double>(img.data(), 12), 4, 3);
  const GrayImage back = read_pgm(dir / "a.pgm");
  write_pgm(dir / "b.pgm", back.pixels, back.width, back.height);
  EXPECT_EQ(slurp(dir / "a.pgm"), slurp(dir / "b.pgm"));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_LE(std::abs(back.pixels[i] - img[static_cast<Eigen::Index>(i)]), 1.0 / 510.0);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, SmallRunWritesArtifactsDeterministically) {
  ExperimentConfig config;
  config.data_dir = std::filesystem::path(LLAE_DATA_DIR) / "mnist";
  config.train_size = 150;
  config.test_size = 40;
  config.downsample = 4;
  config.latent = {6, 2};
  config.train.epochs = 2;
  config.train.hidden_units = 16;
  config.samples_per_class = 1;
  config.flvis_samples = 3;
  const auto root = std::filesystem::temp_directory_path() / "llae_pipeline_run";
  std::filesystem::remove_all(root);
  const TaskMetrics a = run_task(config, root / "a");
  const TaskMetrics b = run_task(config, root / "b");
  for (const char* f : {"metrics.json", "model.psdd", "model.vtree", "autoencoder.ckpt", "config.json", "spec.json"}) {
    ASSERT_TRUE(std::filesystem::exists(root / "a" / f)) << f;
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
  }
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_TRUE(std::filesystem::exists(root / "a" / "samples" / "class_9_0.pgm"));
  EXPECT_TRUE(std::filesystem::exists(root / "a" / "train_log.jsonl"));
  EXPECT_EQ(a.test_examples, 40U);
  EXPECT_EQ(a.fl_variables, 16U);
  std::filesystem::remove_all(root);
}
