#include "llae/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "llae/error.hpp"

namespace llae {

namespace {

constexpr double kUniformFloor = 1e-12;

// Stream tags for derive_rng so the phases of training never share draws.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kBatchNoiseStream = 2;
constexpr std::uint64_t kEvalNoiseStream = 3;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void step(MlpNetwork& net, LayerGradients& velocity, const LayerGradients& grad, double lr, double momentum) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    velocity.weights[i] = momentum * velocity.weights[i] - lr * grad.weights[i];
    velocity.biases[i] = momentum * velocity.biases[i] - lr * grad.biases[i];
    net.layer(i).weights += velocity.weights[i];
    net.layer(i).biases += velocity.biases[i];
  }
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& order, std::size_t begin,
                               std::size_t end) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) out.col(static_cast<Eigen::Index>(i - begin)) = m.col(static_cast<Eigen::Index>(order[i]));
  return out;
}

}  // namespace

void LatentSpec::check() const {
  if (num_vars < 1) throw InvalidArgument("latent code needs at least one variable");
  if (cat_dim < 2) throw InvalidArgument("latent categorical dimension must be at least 2");
}

void TrainConfig::check() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(temperature_start > 0.0 && temperature_end > 0.0)) throw InvalidArgument("temperatures must be positive");
  if (temperature_end > temperature_start) throw InvalidArgument("temperature_end exceeds temperature_start");
  if (!(kl_weight >= 0.0)) throw InvalidArgument("kl_weight must be nonnegative");
  if (hidden_units == 0) throw InvalidArgument("hidden_units must be positive");
}

double temperature_at(const TrainConfig& config, std::size_t epoch) {
  if (config.epochs <= 1 || config.anneal_schedule == AnnealSchedule::kConstant) return config.temperature_start;
  const double t = static_cast<double>(std::min(epoch, config.epochs - 1)) / static_cast<double>(config.epochs - 1);
  if (config.anneal_schedule == AnnealSchedule::kLinear) {
    return config.temperature_start + t * (config.temperature_end - config.temperature_start);
  }
  return config.temperature_start * std::pow(config.temperature_end / config.temperature_start, t);
}

Eigen::MatrixXd gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double u = std::clamp(uniform01(rng), kUniformFloor, 1.0 - kUniformFloor);
      g(r, c) = -std::log(-std::log(u));
    }
  }
  return g;
}

Eigen::VectorXd gumbel_softmax_sample(const Eigen::VectorXd& logits, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  const Eigen::VectorXd g = gumbel_noise(logits.size(), 1, rng).col(0);
  Eigen::VectorXd z = (logits + g) / temperature;
  z.array() -= z.maxCoeff();
  Eigen::VectorXd y = z.array().exp();
  return y / y.sum();
}

Autoencoder::Autoencoder(MlpNetwork encoder, MlpNetwork decoder, LatentSpec latent)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), latent_(latent) {
  latent_.check();
  encoder_.check();
  decoder_.check();
  if (encoder_.output_dim() != latent_.logits() || decoder_.input_dim() != latent_.logits()) {
    throw InvalidArgument("encoder/decoder widths do not match the latent code");
  }
  if (decoder_.output_dim() != encoder_.input_dim()) throw InvalidArgument("decoder output differs from encoder input");
  if (encoder_.layer(encoder_.num_layers() - 1).activation != Activation::kIdentity) {
    throw InvalidArgument("encoder output layer must be linear");
  }
  if (decoder_.layer(decoder_.num_layers() - 1).activation != Activation::kSigmoid) {
    throw InvalidArgument("decoder output layer must be sigmoid");
  }
}

Autoencoder Autoencoder::create(std::size_t input_dim, LatentSpec latent, std::size_t hidden_units, Rng& rng) {
  latent.check();
  MlpNetwork enc = MlpNetwork::random({input_dim, hidden_units, latent.logits()},
                                      {Activation::kRelu, Activation::kIdentity}, rng);
  MlpNetwork dec = MlpNetwork::random({latent.logits(), hidden_units, input_dim},
                                      {Activation::kRelu, Activation::kSigmoid}, rng);
  return Autoencoder(std::move(enc), std::move(dec), latent);
}

Eigen::MatrixXd Autoencoder::encode_logits(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd flat = encoder_.forward(x).col(0);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(latent_.num_vars), static_cast<Eigen::Index>(latent_.cat_dim));
  for (Eigen::Index v = 0; v < out.rows(); ++v) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(v, j) = flat(v * out.cols() + j);
  }
  return out;
}

std::vector<std::vector<std::uint32_t>> Autoencoder::encode_hard_batch(const Eigen::MatrixXd& images) const {
  const Eigen::MatrixXd logits = encoder_.forward(images);
  const auto k = static_cast<Eigen::Index>(latent_.cat_dim);
  std::vector<std::vector<std::uint32_t>> codes(static_cast<std::size_t>(images.cols()));
  for (Eigen::Index c = 0; c < images.cols(); ++c) {
    auto& code = codes[static_cast<std::size_t>(c)];
    code.resize(latent_.num_vars);
    for (std::size_t v = 0; v < latent_.num_vars; ++v) {
      const Eigen::Index base = static_cast<Eigen::Index>(v) * k;
      std::uint32_t best = 0;
      for (Eigen::Index j = 1; j < k; ++j) {
        if (logits(base + j, c) > logits(base + best, c)) best = static_cast<std::uint32_t>(j);
      }
      code[v] = best;
    }
  }
  return codes;
}

std::vector<std::uint32_t> Autoencoder::encode_hard(const Eigen::VectorXd& x) const {
  return encode_hard_batch(x).front();
}

Eigen::VectorXd one_hot_code(const LatentSpec& latent, const std::vector<std::uint32_t>& code) {
  if (code.size() != latent.num_vars) throw InvalidArgument("code length differs from latent variable count");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(latent.logits()));
  for (std::size_t v = 0; v < code.size(); ++v) {
    if (code[v] >= latent.cat_dim) throw InvalidArgument("code category out of range");
    out(static_cast<Eigen::Index>(v * latent.cat_dim + code[v])) = 1.0;
  }
  return out;
}

Eigen::VectorXd Autoencoder::decode(const std::vector<std::uint32_t>& code) const {
  return decoder_.forward(one_hot_code(latent_, code)).col(0);
}

Eigen::MatrixXd Autoencoder::decode_relaxed(const Eigen::MatrixXd& codes) const { return decoder_.forward(codes); }

void Autoencoder::save(const std::filesystem::path& path) const {
  checkpoint::save(path, {static_cast<std::uint32_t>(latent_.num_vars), static_cast<std::uint32_t>(latent_.cat_dim),
                          {encoder_, decoder_}});
}

Autoencoder Autoencoder::load(const std::filesystem::path& path) {
  auto c = checkpoint::load(path);
  if (c.networks.size() != 2) throw ParseError("autoencoder checkpoint must hold two networks", 16);
  try {
    return Autoencoder(std::move(c.networks[0]), std::move(c.networks[1]), {c.latent_vars, c.latent_categories});
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("inconsistent autoencoder checkpoint: ") + e.what(), 8);
  }
}

ElboResult elbo_loss_with_noise(const Autoencoder& ae, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& noise,
                                double temperature, double kl_weight) {
  if (batch.cols() == 0) throw InvalidArgument("empty batch");
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  const LatentSpec& latent = ae.latent();
  const auto k = static_cast<Eigen::Index>(latent.cat_dim);
  const auto vars = static_cast<Eigen::Index>(latent.num_vars);
  const Eigen::Index b = batch.cols();
  if (noise.rows() != vars * k || noise.cols() != b) throw InvalidArgument("noise shape mismatch");
  const double inv_b = 1.0 / static_cast<double>(b);

  ForwardCache enc_cache;
  ae.encoder().forward(batch, enc_cache);
  const Eigen::MatrixXd& logits = enc_cache.output;

  Eigen::MatrixXd relaxed(vars * k, b);
  Eigen::MatrixXd d_logits(vars * k, b);
  double kl_total = 0.0;
  for (Eigen::Index c = 0; c < b; ++c) {
    for (Eigen::Index v = 0; v < vars; ++v) {
      const auto l = logits.col(c).segment(v * k, k);
      Eigen::VectorXd z = (l + noise.col(c).segment(v * k, k)) / temperature;
      z.array() -= z.maxCoeff();
      Eigen::VectorXd y = z.array().exp();
      relaxed.col(c).segment(v * k, k) = y / y.sum();

      const double lse = l.maxCoeff() + std::log((l.array() - l.maxCoeff()).exp().sum());
      const Eigen::VectorXd log_p = l.array() - lse;
      const Eigen::VectorXd p = log_p.array().exp();
      const double neg_entropy = p.dot(log_p);
      kl_total += neg_entropy + std::log(static_cast<double>(k));
      d_logits.col(c).segment(v * k, k) = (kl_weight * inv_b) * p.cwiseProduct((log_p.array() - neg_entropy).matrix());
    }
  }

  ForwardCache dec_cache;
  ae.decoder().forward(relaxed, dec_cache);
  const Eigen::MatrixXd& z_out = dec_cache.pre_activations.back();
  double bce_total = 0.0;
  for (Eigen::Index c = 0; c < b; ++c) {
    for (Eigen::Index r = 0; r < z_out.rows(); ++r) bce_total += softplus(z_out(r, c)) - batch(r, c) * z_out(r, c);
  }

  ElboResult result;
  result.reconstruction = bce_total * inv_b;
  result.kl = kl_total * inv_b;
  result.loss = result.reconstruction + kl_weight * result.kl;
  result.decoder_grad = ae.decoder().zero_gradients();
  result.encoder_grad = ae.encoder().zero_gradients();
  const Eigen::MatrixXd d_out = (dec_cache.output - batch) * inv_b;
  const Eigen::MatrixXd d_relaxed = ae.decoder().backward(dec_cache, d_out, result.decoder_grad);
  for (Eigen::Index c = 0; c < b; ++c) {
    for (Eigen::Index v = 0; v < vars; ++v) {
      const auto y = relaxed.col(c).segment(v * k, k);
      const auto dy = d_relaxed.col(c).segment(v * k, k);
      const double inner = y.dot(dy);
      d_logits.col(c).segment(v * k, k) +=
          (y.array() * (dy.array() - inner)).matrix() / temperature;
    }
  }
  ae.encoder().backward(enc_cache, d_logits, result.encoder_grad);
  return result;
}

ElboResult elbo_loss(const Autoencoder& ae, const Eigen::MatrixXd& batch, double temperature, double kl_weight,
                     Rng& rng) {
  const Eigen::MatrixXd noise = gumbel_noise(static_cast<Eigen::Index>(ae.latent().logits()), batch.cols(), rng);
  ElboResult r = elbo_loss_with_noise(ae, batch, noise, temperature, kl_weight);
  if (!std::isfinite(r.loss)) {
    throw TrainingError("non-finite loss (reconstruction " + std::to_string(r.reconstruction) + ", kl " +
                        std::to_string(r.kl) + ")");
  }
  return r;
}

double reconstruction_bce(const Autoencoder& ae, const Eigen::MatrixXd& images) {
  if (images.cols() == 0) throw InvalidArgument("no images");
  const auto codes = ae.encode_hard_batch(images);
  Eigen::MatrixXd one_hot(static_cast<Eigen::Index>(ae.latent().logits()), images.cols());
  for (Eigen::Index c = 0; c < images.cols(); ++c) one_hot.col(c) = one_hot_code(ae.latent(), codes[static_cast<std::size_t>(c)]);
  ForwardCache cache;
  ae.decoder().forward(one_hot, cache);
  const Eigen::MatrixXd& z = cache.pre_activations.back();
  double total = 0.0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) total += softplus(z(r, c)) - images(r, c) * z(r, c);
  }
  return total / static_cast<double>(images.cols());
}

TrainResult train(Autoencoder& ae, const Eigen::MatrixXd& images, const TrainConfig& config,
                  const Eigen::MatrixXd* validation, const std::function<void(const EpochStats&)>& on_epoch) {
  config.check();
  if (images.cols() == 0) throw InvalidArgument("no training images");
  if (static_cast<std::size_t>(images.rows()) != ae.input_dim()) throw InvalidArgument("image size mismatch");
  const auto logits = static_cast<Eigen::Index>(ae.latent().logits());
  const std::size_t n = static_cast<std::size_t>(images.cols());

  auto evaluate = [&](const Eigen::MatrixXd& data, double temperature) {
    Rng rng = derive_rng(config.rng_seed, {kEvalNoiseStream});
    const Eigen::MatrixXd noise = gumbel_noise(logits, data.cols(), rng);
    return elbo_loss_with_noise(ae, data, noise, temperature, config.kl_weight).loss;
  };

  TrainResult result;
  result.initial_loss = evaluate(images, config.temperature_start);
  if (!std::isfinite(result.initial_loss)) throw TrainingError("non-finite initial loss");

  LayerGradients enc_velocity = ae.encoder().zero_gradients();
  LayerGradients dec_velocity = ae.decoder().zero_gradients();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double temperature = temperature_at(config, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = derive_rng(config.rng_seed, {kShuffleStream, epoch});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    double weighted_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Eigen::MatrixXd batch = gather_columns(images, order, begin, end);
      Rng noise_rng = derive_rng(config.rng_seed, {kBatchNoiseStream, epoch, batch_index});
      const ElboResult r = elbo_loss(ae, batch, temperature, config.kl_weight, noise_rng);
      weighted_loss += r.loss * static_cast<double>(end - begin);
      step(ae.encoder(), enc_velocity, r.encoder_grad, config.learning_rate, config.momentum);
      step(ae.decoder(), dec_velocity, r.decoder_grad, config.learning_rate, config.momentum);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.temperature = temperature;
    stats.train_loss = weighted_loss / static_cast<double>(n);
    if (stats.train_loss > 10.0 * result.initial_loss) {
      throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": loss " +
                          std::to_string(stats.train_loss) + " vs initial " + std::to_string(result.initial_loss));
    }
    if (validation != nullptr && validation->cols() > 0) stats.valid_loss = evaluate(*validation, temperature);
    if (on_epoch) on_epoch(stats);
    result.epochs.push_back(stats);
  }
  return result;
}

}  // namespace llae
