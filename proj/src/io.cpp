#include "llae/io.hpp"

#include <cctype>
#include <cmath>

#include "binary_io.hpp"
#include "llae/error.hpp"
#include "text_util.hpp"

namespace llae {

IdxTensor parse_idx(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) throw ParseError("bad IDX magic", 0);
  if (static_cast<std::uint8_t>(bytes[2]) != 0x08) throw ParseError("unsupported IDX dtype (only 0x08)", 2);
  const std::uint8_t rank = static_cast<std::uint8_t>(bytes[3]);
  if (rank == 0) throw ParseError("IDX tensor without dimensions", 3);
  r.take(4, "magic");
  IdxTensor t;
  std::size_t count = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    t.dims.push_back(r.u32_be("IDX dimension"));
    count *= t.dims.back();
  }
  const char* payload = r.take(count, "IDX payload");
  t.data.assign(reinterpret_cast<const std::uint8_t*>(payload), reinterpret_cast<const std::uint8_t*>(payload) + count);
  if (r.remaining() != 0) throw ParseError("trailing bytes after IDX payload", r.offset());
  return t;
}

IdxTensor read_idx(const std::filesystem::path& path) { return parse_idx(detail::read_file(path)); }

std::string serialize_idx(const IdxTensor& tensor) {
  std::size_t count = 1;
  for (auto d : tensor.dims) count *= d;
  if (tensor.dims.empty() || tensor.dims.size() > 255 || count != tensor.data.size()) {
    throw InvalidArgument("IDX dims do not match payload");
  }
  detail::ByteWriter w;
  w.u8(0);
  w.u8(0);
  w.u8(0x08);
  w.u8(static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) w.u32_be(d);
  w.str().append(reinterpret_cast<const char*>(tensor.data.data()), tensor.data.size());
  return std::move(w.str());
}

void write_idx(const std::filesystem::path& path, const IdxTensor& tensor) {
  detail::write_file(path, serialize_idx(tensor));
}

std::uint8_t quantize_pixel(double value) {
  const double scaled = std::floor(value * 255.0 + 0.5);
  if (!(scaled > 0.0)) return 0;
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(scaled);
}

std::string encode_pgm(std::span<const double> pixels, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || pixels.size() != width * height) {
    throw InvalidArgument("pixel count differs from width * height");
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + pixels.size());
  for (double v : pixels) out.push_back(static_cast<char>(quantize_pixel(v)));
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t width,
               std::size_t height) {
  detail::write_file(path, encode_pgm(pixels, width, height));
}

GrayImage parse_pgm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("bad PGM magic", 0);
  std::size_t pos = 2;
  auto read_number = [&](const char* what) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1U << 24)) throw ParseError(std::string("PGM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("expected PGM ") + what, start);
    return value;
  };
  GrayImage img;
  img.width = read_number("width");
  img.height = read_number("height");
  const std::size_t maxval_at = pos;
  if (read_number("maxval") != 255) throw ParseError("PGM maxval must be 255", maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("expected whitespace after PGM header", pos);
  }
  ++pos;
  const std::size_t count = img.width * img.height;
  if (img.width == 0 || img.height == 0) throw ParseError("empty PGM image", pos);
  if (bytes.size() - pos < count) throw ParseError("truncated PGM payload", bytes.size());
  if (bytes.size() - pos > count) throw ParseError("trailing bytes after PGM payload", pos + count);
  img.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) img.pixels[i] = static_cast<std::uint8_t>(bytes[pos + i]) / 255.0;
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) { return parse_pgm(detail::read_file(path)); }

ImageSet load_mnist(const std::filesystem::path& dir, const std::string& prefix, std::size_t limit) {
  const IdxTensor images = read_idx(dir / (prefix + "-images-idx3-ubyte"));
  const IdxTensor labels = read_idx(dir / (prefix + "-labels-idx1-ubyte"));
  if (images.dims.size() != 3 || labels.dims.size() != 1 || images.dims[0] != labels.dims[0]) {
    throw ParseError("MNIST image and label files disagree in shape", 0);
  }
  const std::size_t n = limit == 0 ? images.dims[0] : std::min<std::size_t>(limit, images.dims[0]);
  ImageSet set;
  set.height = images.dims[1];
  set.width = images.dims[2];
  const std::size_t pixels = set.width * set.height;
  set.pixels.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t p = 0; p < pixels; ++p) {
      set.pixels(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = images.data[c * pixels + p] / 255.0;
    }
  }
  set.labels.assign(labels.data.begin(), labels.data.begin() + static_cast<std::ptrdiff_t>(n));
  return set;
}

ImageSet downsample(const ImageSet& images, std::size_t factor) {
  if (factor == 0 || images.width % factor != 0 || images.height % factor != 0) {
    throw InvalidArgument("downsample factor must divide the image size");
  }
  if (factor == 1) return images;
  ImageSet out;
  out.width = images.width / factor;
  out.height = images.height / factor;
  out.labels = images.labels;
  out.pixels.resize(static_cast<Eigen::Index>(out.width * out.height), images.pixels.cols());
  const double scale = 1.0 / static_cast<double>(factor * factor);
  for (Eigen::Index c = 0; c < images.pixels.cols(); ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        double sum = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) {
            sum += images.pixels(static_cast<Eigen::Index>((y * factor + dy) * images.width + x * factor + dx), c);
          }
        }
        out.pixels(static_cast<Eigen::Index>(y * out.width + x), c) = sum * scale;
      }
    }
  }
  return out;
}

ImageSet select(const ImageSet& images, std::span<const std::size_t> indices) {
  ImageSet out;
  out.width = images.width;
  out.height = images.height;
  out.pixels.resize(images.pixels.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= images.size()) throw InvalidArgument("image index out of range");
    out.pixels.col(static_cast<Eigen::Index>(i)) = images.pixels.col(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(images.labels[indices[i]]);
  }
  return out;
}

}  // namespace llae
