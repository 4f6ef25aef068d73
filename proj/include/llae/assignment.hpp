#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace llae {

using Var = std::uint32_t;

/// One value per variable, each 0 or 1.
using CompleteAssignment = std::vector<std::uint8_t>;

/// Literal x_var = value.
struct Literal {
  Var var;
  bool value;
  friend bool operator==(const Literal&, const Literal&) = default;
};

/// A consistent conjunction of literals (evidence or query).
class PartialAssignment {
 public:
  PartialAssignment() = default;
  PartialAssignment(std::initializer_list<Literal> literals);

  /// Adds a literal; assigning an already assigned variable throws InvalidArgument.
  void set(Var var, bool value);
  std::optional<bool> get(Var var) const;
  bool contains(Var var) const { return literals_.count(var) != 0; }
  bool empty() const { return literals_.empty(); }
  std::size_t size() const { return literals_.size(); }
  const std::map<Var, bool>& literals() const { return literals_; }

  /// Highest assigned variable + 1 (0 when empty).
  std::size_t required_vars() const;

  /// Dense form of length `num_vars`: -1 unassigned, else 0/1.
  std::vector<std::int8_t> dense(std::size_t num_vars) const;

  /// Conjunction; nullopt when the two assign opposite values to a variable.
  static std::optional<PartialAssignment> conjoin(const PartialAssignment& a,
                                                  const PartialAssignment& b);
  static PartialAssignment from_complete(std::span<const std::uint8_t> values);

  /// Parses "+3,-0,+12" (explicit sign, 0-based variables).
  static PartialAssignment parse(const std::string& text);
  std::string to_string() const;

  friend bool operator==(const PartialAssignment&, const PartialAssignment&) = default;

 private:
  std::map<Var, bool> literals_;
};

}  // namespace llae
