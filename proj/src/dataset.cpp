#include "llae/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "llae/error.hpp"
#include "text_util.hpp"

namespace llae {

void BinaryDataset::add(std::span<const std::uint8_t> values, std::uint64_t multiplicity) {
  if (values.size() != num_vars_) {
    throw InvalidArgument("row has " + std::to_string(values.size()) + " values, expected " +
                          std::to_string(num_vars_));
  }
  if (multiplicity == 0) throw InvalidArgument("multiplicity must be positive");
  for (auto v : values) {
    if (v > 1) throw InvalidArgument("row values must be 0 or 1");
  }
  rows_.push_back({CompleteAssignment(values.begin(), values.end()), multiplicity});
  total_weight_ += multiplicity;
}

BinaryDataset BinaryDataset::compressed() const {
  std::map<CompleteAssignment, std::uint64_t> merged;
  for (const auto& row : rows_) merged[row.values] += row.multiplicity;
  BinaryDataset out(num_vars_);
  for (const auto& [values, mult] : merged) out.add(values, mult);
  return out;
}

BinaryDataset BinaryDataset::expanded() const {
  BinaryDataset out(num_vars_);
  for (const auto& row : rows_) {
    for (std::uint64_t i = 0; i < row.multiplicity; ++i) out.add(row.values);
  }
  return out;
}

std::pair<BinaryDataset, BinaryDataset> BinaryDataset::split(double fraction, Rng& rng) const {
  if (fraction < 0.0 || fraction > 1.0) throw InvalidArgument("split fraction must be in [0, 1]");
  std::vector<std::size_t> owner;
  for (std::size_t r = 0; r < rows_.size(); ++r) owner.insert(owner.end(), rows_[r].multiplicity, r);
  for (std::size_t i = owner.size(); i > 1; --i) std::swap(owner[i - 1], owner[uniform_index(rng, i)]);
  const auto second = static_cast<std::size_t>(fraction * static_cast<double>(owner.size()));
  BinaryDataset a(num_vars_), b(num_vars_);
  for (std::size_t i = 0; i < owner.size(); ++i) (i < second ? b : a).add(rows_[owner[i]].values);
  return {a, b};
}

std::string BinaryDataset::to_text() const {
  std::ostringstream out;
  out << "bds " << num_vars_ << ' ' << rows_.size() << '\n';
  for (const auto& row : rows_) {
    out << row.multiplicity << ' ';
    for (auto v : row.values) out << static_cast<char>('0' + v);
    out << '\n';
  }
  return out.str();
}

BinaryDataset BinaryDataset::parse(const std::string& text) {
  detail::LineReader reader(text);
  auto header = reader.next_tokens();
  if (header.size() != 3 || header[0] != "bds") {
    throw ParseError("expected 'bds <num_vars> <num_rows>' header", reader.line_number());
  }
  const auto num_vars = detail::parse_uint(header[1], reader.line_number());
  const auto num_rows = detail::parse_uint(header[2], reader.line_number());
  BinaryDataset out(num_vars);
  CompleteAssignment values(num_vars);
  for (std::uint64_t r = 0; r < num_rows; ++r) {
    auto tokens = reader.next_tokens();
    if (tokens.size() != 2) throw ParseError("expected '<multiplicity> <bits>'", reader.line_number());
    const auto mult = detail::parse_uint(tokens[0], reader.line_number());
    if (mult == 0) throw ParseError("multiplicity must be positive", reader.line_number());
    if (tokens[1].size() != num_vars) throw ParseError("row length mismatch", reader.line_number());
    for (std::size_t i = 0; i < num_vars; ++i) {
      const char c = tokens[1][i];
      if (c != '0' && c != '1') throw ParseError("row bits must be 0 or 1", reader.line_number());
      values[i] = static_cast<std::uint8_t>(c - '0');
    }
    out.add(values, mult);
  }
  if (!reader.next_tokens().empty()) throw ParseError("trailing content after dataset", reader.line_number());
  return out;
}

void BinaryDataset::save(const std::filesystem::path& path) const { detail::write_file(path, to_text()); }

BinaryDataset BinaryDataset::load(const std::filesystem::path& path) { return parse(detail::read_file(path)); }

bool operator==(const BinaryDataset& a, const BinaryDataset& b) {
  if (a.num_vars_ != b.num_vars_ || a.rows_.size() != b.rows_.size()) return false;
  for (std::size_t i = 0; i < a.rows_.size(); ++i) {
    if (a.rows_[i].values != b.rows_[i].values || a.rows_[i].multiplicity != b.rows_[i].multiplicity) {
      return false;
    }
  }
  return true;
}

}  // namespace llae
