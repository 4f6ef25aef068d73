#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "llae/assignment.hpp"
#include "llae/random.hpp"

namespace llae {

struct WeightedRow {
  CompleteAssignment values;
  std::uint64_t multiplicity = 1;
};

/// Multiset of complete boolean assignments over a fixed number of variables.
class BinaryDataset {
 public:
  BinaryDataset() = default;
  explicit BinaryDataset(std::size_t num_vars) : num_vars_(num_vars) {}

  void add(std::span<const std::uint8_t> values, std::uint64_t multiplicity = 1);

  std::size_t num_vars() const { return num_vars_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const std::vector<WeightedRow>& rows() const { return rows_; }
  const WeightedRow& operator[](std::size_t i) const { return rows_[i]; }
  std::uint64_t total_weight() const { return total_weight_; }

  /// Duplicate rows merged, rows sorted lexicographically.
  BinaryDataset compressed() const;

  /// Every row repeated `multiplicity` times with multiplicity 1.
  BinaryDataset expanded() const;

  /// Seeded split of the expanded instances: `fraction` of them go to the second set.
  std::pair<BinaryDataset, BinaryDataset> split(double fraction, Rng& rng) const;

  /// Text format: header `bds <num_vars> <num_rows>`, then `<multiplicity> <bits>` per row.
  std::string to_text() const;
  static BinaryDataset parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static BinaryDataset load(const std::filesystem::path& path);

  friend bool operator==(const BinaryDataset& a, const BinaryDataset& b);

 private:
  std::size_t num_vars_ = 0;
  std::uint64_t total_weight_ = 0;
  std::vector<WeightedRow> rows_;
};

}  // namespace llae
