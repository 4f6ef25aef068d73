#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "llae/autoencoder.hpp"
#include "llae/circuit.hpp"
#include "llae/codecs.hpp"
#include "llae/dataset.hpp"
#include "llae/io.hpp"
#include "llae/learn.hpp"

namespace llae {

enum class Task : std::uint8_t { kClassify, kNoisy, kSuccessor, kXor, kPlus };
enum class VtreeMethod : std::uint8_t { kBalanced, kRightLinear, kMutualInformation };

std::string to_string(Task task);
Task parse_task(const std::string& name);
std::string to_string(VtreeMethod method);
VtreeMethod parse_vtree_method(const std::string& name);

/// Structure-learning settings used for the image tasks.
LearnConfig pipeline_learn_defaults();

struct ExperimentConfig {
  std::string dataset = "mnist";
  std::filesystem::path data_dir = "data/mnist";
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::size_t downsample = 2;
  LatentSpec latent{16, 2};
  TrainConfig train;
  LearnConfig learn = pipeline_learn_defaults();
  VtreeMethod vtree = VtreeMethod::kMutualInformation;
  Task task = Task::kClassify;
  std::size_t noise_k = 0;
  bool compress_labels = false;
  bool successor_wrap = true;
  std::uint32_t xor_false_class = 0;
  std::uint32_t xor_true_class = 1;
  std::size_t samples_per_class = 4;
  std::size_t flvis_samples = 200;
  bool write_images = true;
  std::uint64_t seed = 0;

  /// Categories of the task's prediction target.
  std::size_t category_count() const;
  void check() const;
  /// Every field, defaults included.
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys throw InvalidArgument.
  static ExperimentConfig from_json(const std::string& text);
};

struct LoadedImages {
  ImageSet train;
  ImageSet test;
};
/// First train_size / test_size examples of the train and t10k files,
/// downsampled by the configured factor.
LoadedImages load_images(const ExperimentConfig& config);

struct Phase1Result {
  Autoencoder autoencoder;
  TrainResult log;
};
/// Trains the autoencoder on the images alone.
Phase1Result run_phase1(const ExperimentConfig& config, const Eigen::MatrixXd& images);

/// Hard latent code of every image as a boolean slice of a neural domain.
std::vector<std::vector<std::uint8_t>> encode_images(const Autoencoder& ae, const DomainSpec& domain,
                                                     const Eigen::MatrixXd& images);

/// Pairs of image indices with the category the task derives from their labels.
struct PairedExamples {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::vector<std::uint32_t> target;
  std::size_t size() const { return target.size(); }
};

struct FunctionalOptions {
  bool successor_wrap = true;
  std::uint32_t xor_false_class = 0;
  std::uint32_t xor_true_class = 1;
};

/// successor: label(second) = label(first) + 1 (mod 10 when wrapping), target
/// label(second); xor: both images from the two designated classes, target
/// [first is true class] XOR [second is true class]; plus: any pair, target
/// label(first) + label(second).
PairedExamples make_functional_dataset(const std::vector<std::uint8_t>& labels, Task task, std::size_t count,
                                       Rng& rng, const FunctionalOptions& options = {});

/// OR of each one-hot label slice with k distinct uniformly chosen wrong one-hots.
std::vector<std::vector<std::uint8_t>> make_noisy_labels(const std::vector<std::vector<std::uint8_t>>& one_hot_labels,
                                                         std::size_t k, Rng& rng);

/// Feature layer of a task: neural domains first, then the symbolic target.
FeatureLayerSpec task_spec(const ExperimentConfig& config);

/// FL rows of a task with the category each row's model should predict.
struct TaskData {
  FeatureLayerSpec spec;
  std::vector<CompleteAssignment> rows;
  std::vector<std::uint32_t> targets;
  /// Index of the symbolic domain to predict; empty for successor pairs.
  std::optional<std::size_t> target_domain;
  BinaryDataset dataset() const;
};

/// Task rows from encoded images. Training rows of the noisy task carry
/// multi-hot labels; functional tasks draw train_size or test_size pairs.
TaskData build_task_data(const ExperimentConfig& config, const FeatureLayerSpec& spec, const ImageSet& images,
                         const std::vector<std::vector<std::uint8_t>>& codes, bool training);

/// Vtree with the symbolic domains in the root's left subtree and the
/// neural domains in its right subtree, each side built by `method`; every
/// exactly-one group is a vtree node.
Vtree build_task_vtree(const FeatureLayerSpec& spec, const BinaryDataset& data, VtreeMethod method);

/// The learn config of a run, with its seed drawn from the run seed.
LearnConfig phase2_learn_config(const ExperimentConfig& config);

/// Structure learning from the constraint-compiled base. `drop_label_constraint`
/// leaves symbolic groups unconstrained (noisy multi-hot labels).
LearnResult run_phase2(const BinaryDataset& data, std::shared_ptr<const Vtree> vtree, const FeatureLayerSpec& spec,
                       const LearnConfig& config, bool drop_label_constraint = false,
                       const std::function<void(const LearnLogEntry&)>& on_iteration = {});

/// argmax over categories of Pr(category | every other domain's slice). For
/// a one-hot target this is argmax_j Pr(bit j = 1 | evidence), which equals
/// the one-hot conditional whenever the circuit enforces the constraint.
/// Empty when the evidence has probability 0.
std::optional<std::uint32_t> classify_map(const Circuit& circuit, const FeatureLayerSpec& spec, std::size_t target,
                                          const CompleteAssignment& row);
/// Completes the target slice by generative_query and decodes it; empty for
/// zero-probability evidence or an invalid compressed code.
std::optional<std::uint32_t> classify_sample(const Circuit& circuit, const FeatureLayerSpec& spec,
                                             std::size_t target, const CompleteAssignment& row, Rng& rng);

/// Decoded images of samples from Pr(image slice | target = category).
std::vector<Eigen::VectorXd> sample_class_images(const Circuit& circuit, const Autoencoder& ae,
                                                 const FeatureLayerSpec& spec, std::size_t target,
                                                 std::uint32_t category, std::size_t count, Rng& rng);

struct FlVisualization {
  Var variable = 0;
  std::size_t samples = 0;
  Eigen::VectorXd visual_true;
  Eigen::VectorXd visual_false;
};
/// Mean decoded image (of `image_domain`) under fl_i = true minus that under
/// fl_i = false, mapped to the pair ((diff + 1) / 2, (1 - diff) / 2). Empty
/// when Pr(fl_i) is 0 or 1.
std::optional<FlVisualization> visualize_fl_variable(const Circuit& circuit, const Autoencoder& ae,
                                                     const FeatureLayerSpec& spec, std::size_t image_domain,
                                                     Var variable, std::size_t samples, Rng& rng);

struct TaskMetrics {
  std::string task;
  std::size_t noise_k = 0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
  std::size_t fl_variables = 0;
  double ae_initial_loss = 0.0;
  double ae_final_loss = 0.0;
  double ae_test_reconstruction = 0.0;  // summed BCE per image through hard codes
  double accuracy = 0.0;                // MAP (or candidate ranking for successor)
  double sample_accuracy = 0.0;         // one generative_query draw per example
  std::size_t zero_evidence = 0;
  double train_log_likelihood = 0.0;  // per example
  double test_log_likelihood = 0.0;   // per example, -inf if some example is outside the support
  double train_score = 0.0;
  std::size_t num_parameters = 0;
  std::size_t circuit_nodes = 0;
  std::size_t search_iterations = 0;
  std::string to_json() const;
};

/// Runs a whole task and writes its artifacts under `out_dir`.
TaskMetrics run_task(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Same with images and a trained autoencoder supplied by the caller.
TaskMetrics run_task_with(const ExperimentConfig& config, const LoadedImages& images, const Phase1Result& phase1,
                          const std::filesystem::path& out_dir);

}  // namespace llae
