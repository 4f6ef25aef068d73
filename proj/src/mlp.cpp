#include "llae/mlp.hpp"

#include <cmath>

#include <zlib.h>

#include "binary_io.hpp"
#include "llae/error.hpp"
#include "text_util.hpp"

namespace llae {

namespace {

constexpr char kMagic[4] = {'L', 'L', 'A', 'E'};
constexpr std::uint32_t kVersion = 1;

Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::kIdentity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    case Activation::kRelu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kSigmoid: {
      const Eigen::ArrayXXd s = apply_activation(Activation::kSigmoid, z).array();
      return (s * (1.0 - s)).matrix();
    }
  }
  return {};
}

void check_shapes(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations) {
  if (dims.size() < 2) throw InvalidArgument("a network needs at least one layer");
  if (activations.size() != dims.size() - 1) throw InvalidArgument("one activation per layer required");
  for (std::size_t d : dims) {
    if (d == 0) throw InvalidArgument("layer widths must be positive");
  }
}

std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::kIdentity:
      return z;
    case Activation::kRelu:
      return z.cwiseMax(0.0);
    case Activation::kSigmoid:
      // Split by sign so exp never overflows.
      return z.unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
  }
  return z;
}

MlpNetwork::MlpNetwork(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations) {
  check_shapes(dims, activations);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer layer;
    layer.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims[i + 1]), static_cast<Eigen::Index>(dims[i]));
    layer.biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims[i + 1]));
    layer.activation = activations[i];
    layers_.push_back(std::move(layer));
  }
}

MlpNetwork MlpNetwork::random(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
                              Rng& rng) {
  MlpNetwork net(dims, activations);
  for (auto& layer : net.layers_) {
    const double fan_in = static_cast<double>(layer.weights.cols());
    const double fan_out = static_cast<double>(layer.weights.rows());
    const double limit = layer.activation == Activation::kRelu ? std::sqrt(6.0 / fan_in)
                                                               : std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) layer.weights(r, c) = limit * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return net;
}

std::size_t MlpNetwork::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weights.cols());
}

std::size_t MlpNetwork::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weights.rows());
}

std::size_t MlpNetwork::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
  return n;
}

Eigen::MatrixXd MlpNetwork::forward(const Eigen::MatrixXd& x) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim()) throw InvalidArgument("network input dimension mismatch");
  Eigen::MatrixXd a = x;
  for (const auto& l : layers_) {
    Eigen::MatrixXd z = l.weights * a;
    z.colwise() += l.biases;
    a = apply_activation(l.activation, z);
  }
  return a;
}

void MlpNetwork::forward(const Eigen::MatrixXd& x, ForwardCache& cache) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim()) throw InvalidArgument("network input dimension mismatch");
  cache.inputs.resize(layers_.size());
  cache.pre_activations.resize(layers_.size());
  Eigen::MatrixXd a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    cache.inputs[i] = a;
    cache.pre_activations[i] = l.weights * a;
    cache.pre_activations[i].colwise() += l.biases;
    a = apply_activation(l.activation, cache.pre_activations[i]);
  }
  cache.output = std::move(a);
}

Eigen::MatrixXd MlpNetwork::backward(const ForwardCache& cache, const Eigen::MatrixXd& last_delta,
                                     LayerGradients& grads) const {
  Eigen::MatrixXd delta = last_delta;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grads.weights[i].noalias() += delta * cache.inputs[i].transpose();
    grads.biases[i] += delta.rowwise().sum();
    Eigen::MatrixXd upstream = layers_[i].weights.transpose() * delta;
    if (i == 0) return upstream;
    delta = upstream.cwiseProduct(activation_derivative(layers_[i - 1].activation, cache.pre_activations[i - 1]));
  }
  return delta;
}

LayerGradients MlpNetwork::zero_gradients() const {
  LayerGradients g;
  for (const auto& l : layers_) {
    g.weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(l.biases.size()));
  }
  return g;
}

std::vector<double> MlpNetwork::parameters() const {
  std::vector<double> out;
  out.reserve(num_parameters());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weights.data(), l.weights.data() + l.weights.size());
    out.insert(out.end(), l.biases.data(), l.biases.data() + l.biases.size());
  }
  return out;
}

void MlpNetwork::set_parameters(std::span<const double> values) {
  if (values.size() != num_parameters()) throw InvalidArgument("parameter count mismatch");
  std::size_t k = 0;
  for (auto& l : layers_) {
    std::copy_n(values.data() + k, l.weights.size(), l.weights.data());
    k += static_cast<std::size_t>(l.weights.size());
    std::copy_n(values.data() + k, l.biases.size(), l.biases.data());
    k += static_cast<std::size_t>(l.biases.size());
  }
}

bool MlpNetwork::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weights.allFinite() || !l.biases.allFinite()) return false;
  }
  return true;
}

void MlpNetwork::check() const {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].weights.cols() != layers_[i - 1].weights.rows()) {
      throw InvalidArgument("adjacent layer dimensions differ");
    }
  }
  for (const auto& l : layers_) {
    if (l.biases.size() != l.weights.rows()) throw InvalidArgument("bias length differs from layer width");
  }
  if (!all_finite()) throw InvalidArgument("network has non-finite parameters");
}

bool operator==(const MlpNetwork& a, const MlpNetwork& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.activation != y.activation || x.weights.rows() != y.weights.rows() ||
        x.weights.cols() != y.weights.cols() || x.weights != y.weights || x.biases != y.biases) {
      return false;
    }
  }
  return true;
}

namespace checkpoint {

std::string serialize(const Contents& contents) {
  detail::ByteWriter w;
  w.bytes(std::string(kMagic, 4));
  w.u32_le(kVersion);
  w.u32_le(contents.latent_vars);
  w.u32_le(contents.latent_categories);
  w.u32_le(static_cast<std::uint32_t>(contents.networks.size()));
  for (const auto& net : contents.networks) {
    w.u32_le(static_cast<std::uint32_t>(net.num_layers()));
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
      const auto& l = net.layer(i);
      w.u32_le(static_cast<std::uint32_t>(l.weights.cols()));
      w.u32_le(static_cast<std::uint32_t>(l.weights.rows()));
      w.u8(static_cast<std::uint8_t>(l.activation));
    }
    for (double v : net.parameters()) w.f64_le(v);
  }
  w.u32_le(crc32_of(w.str()));
  return std::move(w.str());
}

Contents deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) throw ParseError("bad checkpoint magic", 0);
  if (bytes.size() < 8) throw ParseError("truncated checkpoint", bytes.size());
  const std::size_t body = bytes.size() - 4;
  {
    detail::ByteReader tail(bytes);
    tail.take(body, "checkpoint");
    const std::uint32_t stored = tail.u32_le("checksum");
    if (stored != crc32_of(bytes.substr(0, body))) throw ParseError("checkpoint checksum mismatch", body);
  }
  detail::ByteReader r(bytes, body);
  r.take(4, "magic");
  const std::size_t version_at = r.offset();
  if (r.u32_le("version") != kVersion) throw ParseError("unsupported checkpoint version", version_at);
  Contents c;
  c.latent_vars = r.u32_le("latent spec");
  c.latent_categories = r.u32_le("latent spec");
  const std::uint32_t count = r.u32_le("network count");
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::size_t layers_at = r.offset();
    const std::uint32_t layers = r.u32_le("layer count");
    if (layers == 0) throw ParseError("network without layers", layers_at);
    std::vector<std::size_t> dims;
    std::vector<Activation> acts;
    for (std::uint32_t i = 0; i < layers; ++i) {
      const std::size_t at = r.offset();
      const std::uint32_t in = r.u32_le("layer shape");
      const std::uint32_t out = r.u32_le("layer shape");
      const std::uint8_t tag = r.u8("activation");
      if (tag > 2) throw ParseError("unknown activation tag", at + 8);
      if (in == 0 || out == 0 || (i == 0 ? false : in != dims.back())) throw ParseError("inconsistent layer shape", at);
      if (i == 0) dims.push_back(in);
      dims.push_back(out);
      acts.push_back(static_cast<Activation>(tag));
    }
    MlpNetwork net(dims, acts);
    const std::size_t count_params = net.num_parameters();
    r.need(count_params * 8, "parameters");
    std::vector<double> params(count_params);
    for (double& v : params) v = r.f64_le();
    net.set_parameters(params);
    c.networks.push_back(std::move(net));
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes in checkpoint", r.offset());
  return c;
}

void save(const std::filesystem::path& path, const Contents& contents) {
  detail::write_file(path, serialize(contents));
}

Contents load(const std::filesystem::path& path) { return deserialize(detail::read_file(path)); }

}  // namespace checkpoint

}  // namespace llae
