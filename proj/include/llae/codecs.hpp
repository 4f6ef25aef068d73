#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "llae/assignment.hpp"
#include "llae/inference.hpp"

namespace llae {

enum class CodecKind : std::uint8_t { kNeural, kSymbolic };

/// Symbolic category codec: one-hot over k bits, or ceil(log2 k) big-endian
/// bits when compressed.
struct SymbolicCodec {
  std::size_t k = 2;
  bool compressed = false;
  std::size_t width() const;
  void check() const;
};

std::vector<std::uint8_t> encode_symbol(const SymbolicCodec& codec, std::size_t y);
/// Argmax of the k scores (ties to the lowest index) or, when compressed,
/// the category named by the bits (score >= 0.5 reads as 1). Throws
/// DecodeError for compressed codes >= k.
std::size_t decode_symbol(const SymbolicCodec& codec, std::span<const double> scores);
std::size_t decode_symbol(const SymbolicCodec& codec, std::span<const std::uint8_t> bits);

struct DomainSpec {
  std::string name;
  std::size_t num_vars = 1;
  std::size_t cat_dim = 2;
  CodecKind codec = CodecKind::kNeural;
  bool compressed = false;

  /// Boolean width of one categorical variable of this domain.
  std::size_t bits_per_var() const;
  std::size_t width() const { return num_vars * bits_per_var(); }
  /// Whether each variable is a one-hot block (and so an exactly-one group).
  bool one_hot() const;
  SymbolicCodec symbolic_codec() const { return {cat_dim, compressed}; }
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Ordered domains laid out contiguously over the boolean feature layer.
class FeatureLayerSpec {
 public:
  FeatureLayerSpec() = default;
  /// Throws InvalidArgument on duplicate names, empty domains, cat_dim < 2
  /// or a compressed neural domain.
  explicit FeatureLayerSpec(std::vector<DomainSpec> domains);

  const std::vector<DomainSpec>& domains() const { return domains_; }
  const DomainSpec& domain(std::size_t i) const { return domains_.at(i); }
  std::size_t num_domains() const { return domains_.size(); }
  std::size_t index_of(const std::string& name) const;
  /// First boolean variable of domain i; end is begin(i) + width.
  Var begin(std::size_t i) const { return offsets_.at(i); }
  Var end(std::size_t i) const { return offsets_.at(i) + static_cast<Var>(domains_.at(i).width()); }
  std::size_t size() const { return total_; }

  std::string to_json() const;
  static FeatureLayerSpec from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static FeatureLayerSpec load(const std::filesystem::path& path);

  friend bool operator==(const FeatureLayerSpec& a, const FeatureLayerSpec& b) { return a.domains_ == b.domains_; }

 private:
  std::vector<DomainSpec> domains_;
  std::vector<Var> offsets_;
  std::size_t total_ = 0;
};

/// Boolean slice of one domain from per-variable categories.
std::vector<std::uint8_t> encode_domain(const DomainSpec& domain, std::span<const std::uint32_t> values);
/// Per-variable categories of a domain slice (argmax for one-hot blocks).
std::vector<std::uint32_t> decode_domain(const DomainSpec& domain, std::span<const std::uint8_t> bits);

CompleteAssignment assemble_fl(const FeatureLayerSpec& spec, const std::vector<std::vector<std::uint8_t>>& slices);
std::vector<std::vector<std::uint8_t>> slice_fl(const FeatureLayerSpec& spec, std::span<const std::uint8_t> fl);

/// Exactly-one variable groups: one per variable of every one-hot domain.
std::vector<std::vector<Var>> fl_constraint(const FeatureLayerSpec& spec);
/// Sampling groups matching fl_constraint; other bits are single booleans.
std::vector<SamplingGroup> sampling_groups(const FeatureLayerSpec& spec);

/// Evidence fixing domain i's slice to `bits`.
PartialAssignment domain_evidence(const FeatureLayerSpec& spec, std::size_t i, std::span<const std::uint8_t> bits);

}  // namespace llae
