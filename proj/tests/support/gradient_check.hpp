#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "llae/autoencoder.hpp"

namespace llae::testing {

inline Eigen::MatrixXd random_images(Eigen::Index pixels, Eigen::Index count, Rng& rng) {
  Eigen::MatrixXd m(pixels, count);
  for (Eigen::Index c = 0; c < count; ++c) {
    for (Eigen::Index r = 0; r < pixels; ++r) m(r, c) = uniform01(rng);
  }
  return m;
}

inline double total_loss(Autoencoder& ae, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& noise, double tau,
                         double kl) {
  return elbo_loss_with_noise(ae, batch, noise, tau, kl).loss;
}

// Max relative error between analytic and central-difference gradients.
inline double gradient_error(Autoencoder& ae, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& noise, double tau,
                             double kl) {
  const ElboResult r = elbo_loss_with_noise(ae, batch, noise, tau, kl);
  const double h = 1e-5;
  double worst = 0.0;
  for (int which = 0; which < 2; ++which) {
    MlpNetwork& net = which == 0 ? ae.encoder() : ae.decoder();
    const LayerGradients& g = which == 0 ? r.encoder_grad : r.decoder_grad;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < g.weights.size(); ++i) {
      analytic.insert(analytic.end(), g.weights[i].data(), g.weights[i].data() + g.weights[i].size());
      analytic.insert(analytic.end(), g.biases[i].data(), g.biases[i].data() + g.biases[i].size());
    }
    std::vector<double> params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      const double saved = params[p];
      params[p] = saved + h;
      net.set_parameters(params);
      const double up = total_loss(ae, batch, noise, tau, kl);
      params[p] = saved - h;
      net.set_parameters(params);
      const double down = total_loss(ae, batch, noise, tau, kl);
      params[p] = saved;
      net.set_parameters(params);
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(numeric - analytic[p]) / std::max(1e-3, std::abs(numeric) + std::abs(analytic[p]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace llae::testing
