#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "llae/random.hpp"

namespace llae {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kSigmoid = 2 };

/// y = activation(W x + b), W of shape out x in.
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd biases;
  Activation activation = Activation::kIdentity;
};

/// Per-layer intermediate values of a batched forward pass (examples are columns).
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;          // input to each layer
  std::vector<Eigen::MatrixXd> pre_activations;  // W x + b of each layer
  Eigen::MatrixXd output;
};

/// Gradient buffers shaped like the network's layers.
struct LayerGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

class MlpNetwork {
 public:
  MlpNetwork() = default;
  /// Zero-initialized network with layer widths dims[0] -> ... -> dims.back().
  MlpNetwork(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations);

  /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases.
  static MlpNetwork random(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
                           Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }
  std::size_t num_parameters() const;

  /// Batched forward pass; throws InvalidArgument on a row-count mismatch.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  void forward(const Eigen::MatrixXd& x, ForwardCache& cache) const;

  /// Accumulates parameter gradients into `grads` given dLoss/d(pre-activation)
  /// of the last layer; returns dLoss/d(input).
  Eigen::MatrixXd backward(const ForwardCache& cache, const Eigen::MatrixXd& last_delta,
                           LayerGradients& grads) const;

  LayerGradients zero_gradients() const;

  /// Flat parameter vector: per layer, weights column-major then biases.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);

  bool all_finite() const;
  void check() const;

  friend bool operator==(const MlpNetwork& a, const MlpNetwork& b);

 private:
  std::vector<DenseLayer> layers_;
};

Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z);

namespace checkpoint {

/// Binary container: "LLAE", u32 version, u32 latent vars, u32 latent
/// categories, u32 network count, networks, u32 CRC32 of all prior bytes.
/// Integers and doubles are little-endian.
struct Contents {
  std::uint32_t latent_vars = 0;
  std::uint32_t latent_categories = 0;
  std::vector<MlpNetwork> networks;
};

std::string serialize(const Contents& contents);
Contents deserialize(const std::string& bytes);
void save(const std::filesystem::path& path, const Contents& contents);
Contents load(const std::filesystem::path& path);

}  // namespace checkpoint

}  // namespace llae
