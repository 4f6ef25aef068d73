#include "llae/assignment.hpp"

#include <charconv>

#include "llae/error.hpp"

namespace llae {

PartialAssignment::PartialAssignment(std::initializer_list<Literal> literals) {
  for (const auto& lit : literals) set(lit.var, lit.value);
}

void PartialAssignment::set(Var var, bool value) {
  if (!literals_.emplace(var, value).second) {
    throw InvalidArgument("variable " + std::to_string(var) + " assigned twice");
  }
}

std::optional<bool> PartialAssignment::get(Var var) const {
  auto it = literals_.find(var);
  if (it == literals_.end()) return std::nullopt;
  return it->second;
}

std::size_t PartialAssignment::required_vars() const {
  return literals_.empty() ? 0 : literals_.rbegin()->first + 1;
}

std::vector<std::int8_t> PartialAssignment::dense(std::size_t num_vars) const {
  if (required_vars() > num_vars) {
    throw InvalidArgument("assignment mentions variable " + std::to_string(required_vars() - 1) +
                          " outside range of " + std::to_string(num_vars));
  }
  std::vector<std::int8_t> out(num_vars, -1);
  for (const auto& [var, value] : literals_) out[var] = value ? 1 : 0;
  return out;
}

std::optional<PartialAssignment> PartialAssignment::conjoin(const PartialAssignment& a,
                                                            const PartialAssignment& b) {
  PartialAssignment out = a;
  for (const auto& [var, value] : b.literals_) {
    auto it = out.literals_.find(var);
    if (it == out.literals_.end()) {
      out.literals_.emplace(var, value);
    } else if (it->second != value) {
      return std::nullopt;
    }
  }
  return out;
}

PartialAssignment PartialAssignment::from_complete(std::span<const std::uint8_t> values) {
  PartialAssignment out;
  for (std::size_t i = 0; i < values.size(); ++i) out.literals_.emplace(static_cast<Var>(i), values[i] != 0);
  return out;
}

PartialAssignment PartialAssignment::parse(const std::string& text) {
  PartialAssignment out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    const std::string token = text.substr(pos, end - pos);
    if (token.size() < 2 || (token[0] != '+' && token[0] != '-')) {
      throw InvalidArgument("literal '" + token + "' must look like +<var> or -<var>");
    }
    Var var = 0;
    auto [ptr, ec] = std::from_chars(token.data() + 1, token.data() + token.size(), var);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
      throw InvalidArgument("bad variable index in literal '" + token + "'");
    }
    out.set(var, token[0] == '+');
    pos = end + 1;
  }
  return out;
}

std::string PartialAssignment::to_string() const {
  std::string out;
  for (const auto& [var, value] : literals_) {
    if (!out.empty()) out += ',';
    out += value ? '+' : '-';
    out += std::to_string(var);
  }
  return out;
}

}  // namespace llae
