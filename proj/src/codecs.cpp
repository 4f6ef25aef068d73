#include "llae/codecs.hpp"

#include <bit>
#include <set>

#include "json.hpp"
#include "llae/error.hpp"
#include "text_util.hpp"

namespace llae {

std::size_t SymbolicCodec::width() const {
  return compressed ? static_cast<std::size_t>(std::bit_width(k - 1)) : k;
}

void SymbolicCodec::check() const {
  if (k < 2) throw InvalidArgument("a symbolic codec needs at least 2 categories");
}

std::vector<std::uint8_t> encode_symbol(const SymbolicCodec& codec, std::size_t y) {
  codec.check();
  if (y >= codec.k) throw InvalidArgument("category " + std::to_string(y) + " out of range");
  std::vector<std::uint8_t> bits(codec.width(), 0);
  if (!codec.compressed) {
    bits[y] = 1;
    return bits;
  }
  for (std::size_t i = 0; i < bits.size(); ++i) bits[bits.size() - 1 - i] = (y >> i) & 1U;
  return bits;
}

std::size_t decode_symbol(const SymbolicCodec& codec, std::span<const double> scores) {
  codec.check();
  if (scores.size() != codec.width()) throw InvalidArgument("code width mismatch");
  if (!codec.compressed) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
      if (scores[j] > scores[best]) best = j;
    }
    return best;
  }
  std::size_t y = 0;
  for (double s : scores) y = (y << 1) | (s >= 0.5 ? 1U : 0U);
  if (y >= codec.k) throw DecodeError("compressed code " + std::to_string(y) + " names no category");
  return y;
}

std::size_t decode_symbol(const SymbolicCodec& codec, std::span<const std::uint8_t> bits) {
  std::vector<double> scores(bits.begin(), bits.end());
  return decode_symbol(codec, scores);
}

std::size_t DomainSpec::bits_per_var() const {
  if (codec == CodecKind::kSymbolic) return symbolic_codec().width();
  return cat_dim == 2 ? 1 : cat_dim;
}

bool DomainSpec::one_hot() const {
  return codec == CodecKind::kSymbolic ? !compressed : cat_dim > 2;
}

FeatureLayerSpec::FeatureLayerSpec(std::vector<DomainSpec> domains) : domains_(std::move(domains)) {
  if (domains_.empty()) throw InvalidArgument("feature layer needs at least one domain");
  std::set<std::string> names;
  for (const auto& d : domains_) {
    if (d.name.empty()) throw InvalidArgument("domain name must not be empty");
    if (!names.insert(d.name).second) throw InvalidArgument("duplicate domain name '" + d.name + "'");
    if (d.num_vars == 0) throw InvalidArgument("domain '" + d.name + "' has no variables");
    if (d.cat_dim < 2) throw InvalidArgument("domain '" + d.name + "' needs cat_dim >= 2");
    if (d.compressed && d.codec != CodecKind::kSymbolic) {
      throw InvalidArgument("only symbolic domains can be compressed");
    }
    offsets_.push_back(static_cast<Var>(total_));
    total_ += d.width();
  }
}

std::size_t FeatureLayerSpec::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    if (domains_[i].name == name) return i;
  }
  throw InvalidArgument("unknown domain '" + name + "'");
}

std::string FeatureLayerSpec::to_json() const {
  nlohmann::ordered_json doms = nlohmann::ordered_json::array();
  for (const auto& d : domains_) {
    doms.push_back({{"name", d.name},
                    {"num_vars", d.num_vars},
                    {"cat_dim", d.cat_dim},
                    {"codec", d.codec == CodecKind::kNeural ? "neural" : "one_hot_symbolic"},
                    {"compressed", d.compressed}});
  }
  nlohmann::ordered_json j;
  j["domains"] = doms;
  return j.dump(2) + "\n";
}

FeatureLayerSpec FeatureLayerSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("feature layer spec: ") + e.what(), e.byte);
  }
  std::vector<DomainSpec> domains;
  try {
    for (const auto& d : j.at("domains")) {
      DomainSpec s;
      s.name = d.at("name").get<std::string>();
      s.num_vars = d.at("num_vars").get<std::size_t>();
      s.cat_dim = d.at("cat_dim").get<std::size_t>();
      const auto codec = d.at("codec").get<std::string>();
      if (codec == "neural") {
        s.codec = CodecKind::kNeural;
      } else if (codec == "one_hot_symbolic" || codec == "symbolic") {
        s.codec = CodecKind::kSymbolic;
      } else {
        throw InvalidArgument("unknown codec '" + codec + "'");
      }
      s.compressed = d.value("compressed", false);
      domains.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("feature layer spec: ") + e.what(), 0);
  }
  return FeatureLayerSpec(std::move(domains));
}

void FeatureLayerSpec::save(const std::filesystem::path& path) const { detail::write_file(path, to_json()); }

FeatureLayerSpec FeatureLayerSpec::load(const std::filesystem::path& path) {
  return from_json(detail::read_file(path));
}

std::vector<std::uint8_t> encode_domain(const DomainSpec& domain, std::span<const std::uint32_t> values) {
  if (values.size() != domain.num_vars) throw InvalidArgument("domain '" + domain.name + "' value count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(domain.width());
  for (std::uint32_t v : values) {
    if (v >= domain.cat_dim) throw InvalidArgument("category out of range for domain '" + domain.name + "'");
    if (domain.codec == CodecKind::kSymbolic) {
      const auto bits = encode_symbol(domain.symbolic_codec(), v);
      out.insert(out.end(), bits.begin(), bits.end());
    } else if (domain.cat_dim == 2) {
      out.push_back(static_cast<std::uint8_t>(v));
    } else {
      for (std::size_t j = 0; j < domain.cat_dim; ++j) out.push_back(j == v ? 1 : 0);
    }
  }
  return out;
}

std::vector<std::uint32_t> decode_domain(const DomainSpec& domain, std::span<const std::uint8_t> bits) {
  if (bits.size() != domain.width()) throw InvalidArgument("domain '" + domain.name + "' slice width mismatch");
  const std::size_t w = domain.bits_per_var();
  std::vector<std::uint32_t> out;
  for (std::size_t v = 0; v < domain.num_vars; ++v) {
    const auto part = bits.subspan(v * w, w);
    if (domain.codec == CodecKind::kSymbolic) {
      out.push_back(static_cast<std::uint32_t>(decode_symbol(domain.symbolic_codec(), part)));
    } else if (domain.cat_dim == 2) {
      out.push_back(part[0] != 0 ? 1U : 0U);
    } else {
      out.push_back(static_cast<std::uint32_t>(decode_symbol(SymbolicCodec{domain.cat_dim, false}, part)));
    }
  }
  return out;
}

CompleteAssignment assemble_fl(const FeatureLayerSpec& spec, const std::vector<std::vector<std::uint8_t>>& slices) {
  if (slices.size() != spec.num_domains()) throw InvalidArgument("one slice per domain required");
  CompleteAssignment out;
  out.reserve(spec.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (slices[i].size() != spec.domain(i).width()) {
      throw InvalidArgument("slice for domain '" + spec.domain(i).name + "' has the wrong length");
    }
    out.insert(out.end(), slices[i].begin(), slices[i].end());
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> slice_fl(const FeatureLayerSpec& spec, std::span<const std::uint8_t> fl) {
  if (fl.size() != spec.size()) throw InvalidArgument("feature layer assignment has the wrong length");
  std::vector<std::vector<std::uint8_t>> out;
  for (std::size_t i = 0; i < spec.num_domains(); ++i) out.emplace_back(fl.begin() + spec.begin(i), fl.begin() + spec.end(i));
  return out;
}

std::vector<std::vector<Var>> fl_constraint(const FeatureLayerSpec& spec) {
  std::vector<std::vector<Var>> groups;
  for (std::size_t i = 0; i < spec.num_domains(); ++i) {
    const auto& d = spec.domain(i);
    if (!d.one_hot()) continue;
    const std::size_t w = d.bits_per_var();
    for (std::size_t v = 0; v < d.num_vars; ++v) {
      std::vector<Var> g;
      for (std::size_t j = 0; j < w; ++j) g.push_back(spec.begin(i) + static_cast<Var>(v * w + j));
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

std::vector<SamplingGroup> sampling_groups(const FeatureLayerSpec& spec) {
  std::vector<SamplingGroup> out;
  for (auto& g : fl_constraint(spec)) out.push_back({std::move(g), true});
  return out;
}

PartialAssignment domain_evidence(const FeatureLayerSpec& spec, std::size_t i, std::span<const std::uint8_t> bits) {
  if (bits.size() != spec.domain(i).width()) throw InvalidArgument("evidence slice has the wrong length");
  PartialAssignment v;
  for (std::size_t j = 0; j < bits.size(); ++j) v.set(spec.begin(i) + static_cast<Var>(j), bits[j] != 0);
  return v;
}

}  // namespace llae
