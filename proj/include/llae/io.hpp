#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace llae {

/// Unsigned-byte IDX tensor, row-major.
struct IdxTensor {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
  friend bool operator==(const IdxTensor&, const IdxTensor&) = default;
};

/// Strict parser: bad magic, unsupported dtype, truncation and trailing bytes
/// raise ParseError carrying the byte offset.
IdxTensor parse_idx(const std::string& bytes);
IdxTensor read_idx(const std::filesystem::path& path);
std::string serialize_idx(const IdxTensor& tensor);
void write_idx(const std::filesystem::path& path, const IdxTensor& tensor);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major, in [0, 1]
};

/// Byte value of a pixel: floor(value * 255 + 0.5), clamped to [0, 255].
std::uint8_t quantize_pixel(double value);

/// Binary P5 PGM with maxval 255.
std::string encode_pgm(std::span<const double> pixels, std::size_t width, std::size_t height);
void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t width,
               std::size_t height);
GrayImage parse_pgm(const std::string& bytes);
GrayImage read_pgm(const std::filesystem::path& path);

/// Labelled images; pixels are columns with values in [0, 1].
struct ImageSet {
  std::size_t width = 0;
  std::size_t height = 0;
  Eigen::MatrixXd pixels;
  std::vector<std::uint8_t> labels;
  std::size_t size() const { return labels.size(); }
};

/// Reads `<prefix>-images-idx3-ubyte` and `<prefix>-labels-idx1-ubyte` from
/// `dir` (prefix "train" or "t10k"), keeping the first `limit` examples
/// (0 keeps all).
ImageSet load_mnist(const std::filesystem::path& dir, const std::string& prefix, std::size_t limit = 0);

/// Average pooling over non-overlapping factor x factor blocks.
ImageSet downsample(const ImageSet& images, std::size_t factor);

/// Column subset in the given order.
ImageSet select(const ImageSet& images, std::span<const std::size_t> indices);

}  // namespace llae
