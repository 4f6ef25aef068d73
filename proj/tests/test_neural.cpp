#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "llae/autoencoder.hpp"
#include "llae/error.hpp"
#include "llae/mlp.hpp"
#include "support/gradient_check.hpp"

using namespace llae;
using llae::testing::gradient_error;
using llae::testing::random_images;

TEST(Mlp, ZeroNetworkGivesZeroLogits) {
  MlpNetwork enc({4, 3, 6}, {Activation::kRelu, Activation::kIdentity});
  MlpNetwork dec({6, 3, 4}, {Activation::kRelu, Activation::kSigmoid});
  const Autoencoder ae(enc, dec, {3, 2});
  const Eigen::MatrixXd logits = ae.encode_logits(Eigen::VectorXd::Constant(4, 0.3));
  EXPECT_EQ(logits.rows(), 3);
  EXPECT_EQ(logits.cols(), 2);
  EXPECT_TRUE(logits.isZero(0.0));
  EXPECT_TRUE(ae.decode({0, 1, 1}).isConstant(0.5, 0.0));
}

TEST(Mlp, LinearLayerOnBasisInputGivesColumnPlusBias) {
  Rng rng = derive_rng(1, {});
  MlpNetwork net = MlpNetwork::random({5, 4}, {Activation::kIdentity}, rng);
  net.layer(0).biases = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(5);
  e(2) = 1.0;
  const Eigen::VectorXd y = net.forward(e).col(0);
  EXPECT_TRUE(y.isApprox(net.layer(0).weights.col(2) + net.layer(0).biases, 1e-15));
}

TEST(Mlp, RejectsDimensionMismatch) {
  MlpNetwork net({3, 2}, {Activation::kIdentity});
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(4, 1)), InvalidArgument);
  EXPECT_THROW(MlpNetwork({3}, {}), InvalidArgument);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  MlpNetwork net({2, 2, 1}, {Activation::kRelu, Activation::kSigmoid});
  net.layer(0).weights << 1.0, -2.0, 0.5, 0.25;
  net.layer(0).biases << 0.1, -0.2;
  net.layer(1).weights << 1.5, -1.0;
  net.layer(1).biases << 0.3;
  Eigen::VectorXd x(2);
  x << 0.4, 0.8;
  const double h0 = std::max(0.0, 0.4 - 1.6 + 0.1);
  const double h1 = std::max(0.0, 0.2 + 0.2 - 0.2);
  const double expected = 1.0 / (1.0 + std::exp(-(1.5 * h0 - h1 + 0.3)));
  EXPECT_NEAR(net.forward(x)(0, 0), expected, 1e-15);
}

TEST(Mlp, CheckpointRoundTripAndCorruption) {
  Rng rng = derive_rng(2, {});
  const Autoencoder ae = Autoencoder::create(12, {3, 4}, 7, rng);
  const auto dir = std::filesystem::temp_directory_path() / "llae_neural_test";
  std::filesystem::create_directories(dir);
  ae.save(dir / "ae.ckpt");
  const Autoencoder back = Autoencoder::load(dir / "ae.ckpt");
  EXPECT_TRUE(back == ae);
  std::string bytes = checkpoint::serialize({3, 4, {ae.encoder(), ae.decoder()}});
  EXPECT_EQ(bytes.substr(0, 4), "LLAE");
  std::string flipped = bytes;
  flipped[40] = static_cast<char>(flipped[40] ^ 0x01);
  EXPECT_THROW(checkpoint::deserialize(flipped), ParseError);
  EXPECT_THROW(checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(checkpoint::deserialize("XXXX" + bytes.substr(4)), ParseError);
  std::filesystem::remove_all(dir);
}

TEST(Gumbel, OutputsLieOnSimplexAndSharpenAtLowTemperature) {
  Rng rng = derive_rng(3, {});
  Eigen::VectorXd logits(4);
  logits << 0.5, -1.0, 2.0, 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::VectorXd y = gumbel_softmax_sample(logits, 0.7, rng);
    EXPECT_GE(y.minCoeff(), 0.0);
    EXPECT_NEAR(y.sum(), 1.0, 1e-9);
  }
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd y = gumbel_softmax_sample(logits, 1e-4, rng);
    EXPECT_NEAR(y.maxCoeff(), 1.0, 1e-3);
  }
  EXPECT_THROW(gumbel_softmax_sample(logits, 0.0, rng), InvalidArgument);
}

TEST(Gumbel, UniformLogitsGiveUniformMean) {
  Rng rng = derive_rng(4, {});
  const Eigen::VectorXd logits = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += gumbel_softmax_sample(logits, 0.5, rng);
  mean /= n;
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(mean(j), 1.0 / 3.0, 0.01);
}

TEST(Elbo, KlVanishesForUniformPosteriorAndBceOnly) {
  MlpNetwork enc({3, 4}, {Activation::kIdentity});
  MlpNetwork dec({4, 3}, {Activation::kSigmoid});
  const Autoencoder ae(enc, dec, {2, 2});
  Eigen::MatrixXd x(3, 2);
  x << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
  Rng rng = derive_rng(5, {});
  const ElboResult r = elbo_loss(ae, x, 1.0, 0.1, rng);
  EXPECT_NEAR(r.kl, 0.0, 1e-15);
  // Decoder outputs 0.5 = x: BCE(x, x) = 3 ln 2 per image.
  EXPECT_NEAR(r.loss, 3.0 * std::log(2.0), 1e-12);
}

TEST(Elbo, KlIsPositiveForNonUniformAndIgnoredAtZeroWeight) {
  Rng rng = derive_rng(6, {});
  const Autoencoder ae = Autoencoder::create(6, {2, 3}, 5, rng);
  const Eigen::MatrixXd x = random_images(6, 4, rng);
  const Eigen::MatrixXd noise = gumbel_noise(6, 4, rng);
  const ElboResult a = elbo_loss_with_noise(ae, x, noise, 0.8, 0.0);
  const ElboResult b = elbo_loss_with_noise(ae, x, noise, 0.8, 0.3);
  EXPECT_GT(a.kl, 0.0);
  EXPECT_NEAR(a.loss, a.reconstruction, 1e-15);
  EXPECT_NEAR(b.loss, b.reconstruction + 0.3 * b.kl, 1e-12);
}

TEST(Elbo, AnalyticGradientsMatchFiniteDifferences) {
  Rng rng = derive_rng(7, {});
  for (std::size_t cat : {2U, 3U}) {
    Autoencoder ae = Autoencoder::create(6, {2, cat}, 4, rng);
    EXPECT_LE(ae.encoder().num_parameters() + ae.decoder().num_parameters(), 200U);
    // Shift biases so ReLU units sit away from their kink.
    for (auto* net : {&ae.encoder(), &ae.decoder()}) net->layer(0).biases.setConstant(0.05);
    const Eigen::MatrixXd x = random_images(6, 3, rng);
    const Eigen::MatrixXd noise = gumbel_noise(static_cast<Eigen::Index>(2 * cat), 3, rng);
    EXPECT_LE(gradient_error(ae, x, noise, 0.7, 0.1), 1e-4);
  }
}

TEST(EncodeHard, ArgmaxWithLowestIndexTies) {
  MlpNetwork enc({2, 6}, {Activation::kIdentity});
  enc.layer(0).biases << 0.0, 1.0, 0.5, 0.5, 0.2, -1.0;
  MlpNetwork dec({6, 2}, {Activation::kSigmoid});
  const Autoencoder ae(enc, dec, {3, 2});
  EXPECT_EQ(ae.encode_hard(Eigen::VectorXd::Zero(2)), (std::vector<std::uint32_t>{1, 0, 0}));
  // One-hot embedding then hard encoding through an identity-like encoder is idempotent.
  MlpNetwork id({6, 6}, {Activation::kIdentity});
  id.layer(0).weights = Eigen::MatrixXd::Identity(6, 6);
  MlpNetwork dec6({6, 6}, {Activation::kSigmoid});
  const Autoencoder ident(id, dec6, {3, 2});
  const std::vector<std::uint32_t> code{1, 0, 1};
  EXPECT_EQ(ident.encode_hard(one_hot_code({3, 2}, code)), code);
}

TEST(Train, ReducesLossAndIsReproducible) {
  Rng rng = derive_rng(8, {});
  const Eigen::MatrixXd images = random_images(16, 64, rng).unaryExpr([](double v) { return v > 0.5 ? 1.0 : 0.0; });
  TrainConfig config;
  config.epochs = 15;
  config.batch_size = 8;
  config.hidden_units = 16;
  config.rng_seed = 11;
  Rng init = derive_rng(9, {});
  Autoencoder a = Autoencoder::create(16, {4, 2}, 16, init);
  Autoencoder b = a;
  const TrainResult ra = train(a, images, config, &images);
  const TrainResult rb = train(b, images, config, &images);
  ASSERT_EQ(ra.epochs.size(), 15U);
  EXPECT_LE(ra.epochs.back().train_loss, ra.initial_loss);
  EXPECT_TRUE(a == b);
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) EXPECT_EQ(ra.epochs[i].train_loss, rb.epochs[i].train_loss);
  EXPECT_NEAR(ra.epochs.back().temperature, 0.5, 1e-12);
  EXPECT_NEAR(ra.epochs.front().temperature, 1.0, 1e-12);
}

TEST(Train, OverfitsSingleExample) {
  Rng rng = derive_rng(10, {});
  const Eigen::MatrixXd image = random_images(36, 1, rng).unaryExpr([](double v) { return v > 0.6 ? 1.0 : 0.0; });
  TrainConfig config;
  config.epochs = 300;
  config.batch_size = 1;
  config.hidden_units = 32;
  Autoencoder ae = Autoencoder::create(36, {4, 2}, 32, rng);
  train(ae, image, config);
  EXPECT_LE(reconstruction_bce(ae, image) / 36.0, 0.05);
}

TEST(Train, RejectsBadConfig) {
  TrainConfig config;
  config.temperature_end = 2.0;
  EXPECT_THROW(config.check(), InvalidArgument);
  config = TrainConfig{};
  config.temperature_start = 0.0;
  EXPECT_THROW(config.check(), InvalidArgument);
}
