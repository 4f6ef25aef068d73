#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "llae/mlp.hpp"
#include "llae/random.hpp"

namespace llae {

/// Categorical latent code: num_vars variables of cat_dim categories.
struct LatentSpec {
  std::size_t num_vars = 16;
  std::size_t cat_dim = 2;
  std::size_t logits() const { return num_vars * cat_dim; }
  void check() const;
  friend bool operator==(const LatentSpec&, const LatentSpec&) = default;
};

enum class AnnealSchedule : std::uint8_t { kExponential, kLinear, kConstant };

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  double temperature_start = 1.0;
  double temperature_end = 0.5;
  AnnealSchedule anneal_schedule = AnnealSchedule::kExponential;
  double kl_weight = 0.1;
  std::uint64_t rng_seed = 0;
  std::size_t hidden_units = 256;
  void check() const;
};

/// Temperature used during epoch `epoch` (0-based).
double temperature_at(const TrainConfig& config, std::size_t epoch);

/// softmax((logits + g) / temperature), g standard Gumbel.
Eigen::VectorXd gumbel_softmax_sample(const Eigen::VectorXd& logits, double temperature, Rng& rng);

/// Matrix of standard Gumbel draws -log(-log u), u clamped to [1e-12, 1 - 1e-12].
Eigen::MatrixXd gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Batch loss with gradients for both networks.
struct ElboResult {
  double loss = 0.0;           // mean over the batch of reconstruction + kl_weight * kl
  double reconstruction = 0.0;  // mean summed BCE
  double kl = 0.0;              // mean summed KL
  LayerGradients encoder_grad;
  LayerGradients decoder_grad;
};

class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(MlpNetwork encoder, MlpNetwork decoder, LatentSpec latent);

  /// input -> hidden ReLU -> logits; logits -> hidden ReLU -> sigmoid pixels.
  static Autoencoder create(std::size_t input_dim, LatentSpec latent, std::size_t hidden_units, Rng& rng);

  const MlpNetwork& encoder() const { return encoder_; }
  const MlpNetwork& decoder() const { return decoder_; }
  MlpNetwork& encoder() { return encoder_; }
  MlpNetwork& decoder() { return decoder_; }
  const LatentSpec& latent() const { return latent_; }
  std::size_t input_dim() const { return encoder_.input_dim(); }

  /// num_vars x cat_dim logits of one image.
  Eigen::MatrixXd encode_logits(const Eigen::VectorXd& x) const;

  /// Per-variable argmax category; ties resolve to the lowest index.
  std::vector<std::uint32_t> encode_hard(const Eigen::VectorXd& x) const;
  /// Batched encode_hard; columns are images.
  std::vector<std::vector<std::uint32_t>> encode_hard_batch(const Eigen::MatrixXd& images) const;

  /// Decoder output for a hard code given as one category per variable.
  Eigen::VectorXd decode(const std::vector<std::uint32_t>& code) const;
  /// Decoder output for relaxed codes (num_vars * cat_dim rows, one column each).
  Eigen::MatrixXd decode_relaxed(const Eigen::MatrixXd& codes) const;

  void save(const std::filesystem::path& path) const;
  static Autoencoder load(const std::filesystem::path& path);
  friend bool operator==(const Autoencoder& a, const Autoencoder& b) = default;

 private:
  MlpNetwork encoder_;
  MlpNetwork decoder_;
  LatentSpec latent_;
};

/// One-hot matrix (num_vars * cat_dim rows) of a hard code.
Eigen::VectorXd one_hot_code(const LatentSpec& latent, const std::vector<std::uint32_t>& code);

/// Loss and gradients for a batch (columns are images) with caller-supplied
/// Gumbel noise of shape (num_vars * cat_dim) x batch.
ElboResult elbo_loss_with_noise(const Autoencoder& ae, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& noise,
                                double temperature, double kl_weight);

/// Same with noise drawn from `rng`. Throws TrainingError on a non-finite loss.
ElboResult elbo_loss(const Autoencoder& ae, const Eigen::MatrixXd& batch, double temperature, double kl_weight,
                     Rng& rng);

/// Mean summed binary cross-entropy of reconstructions through hard codes.
double reconstruction_bce(const Autoencoder& ae, const Eigen::MatrixXd& images);

struct EpochStats {
  std::size_t epoch = 0;
  double temperature = 0.0;
  double train_loss = 0.0;  // mean of the epoch's batch losses
  double valid_loss = 0.0;  // loss on the validation images with a fixed noise stream, 0 when absent
};

struct TrainResult {
  double initial_loss = 0.0;
  std::vector<EpochStats> epochs;
};

/// Minibatch SGD with momentum. Throws TrainingError when a batch loss is
/// non-finite or an epoch loss exceeds ten times the initial loss.
TrainResult train(Autoencoder& ae, const Eigen::MatrixXd& images, const TrainConfig& config,
                  const Eigen::MatrixXd* validation = nullptr,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace llae
