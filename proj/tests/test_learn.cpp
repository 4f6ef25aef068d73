#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "json.hpp"
#include "llae/error.hpp"
#include "llae/inference.hpp"
#include "llae/learn.hpp"
#include "support/psdd_oracle.hpp"

using namespace llae;
using llae::testing::RandomPsdd;

namespace {

// Draws rows from the exact joint table of `c`.
BinaryDataset sample_table(const Circuit& c, std::size_t rows, std::mt19937_64& rng) {
  const auto table = llae::testing::joint_table(c);
  std::discrete_distribution<std::size_t> pick(table.begin(), table.end());
  BinaryDataset data(c.num_vars());
  std::vector<std::uint8_t> x(c.num_vars());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t bits = pick(rng);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = (bits >> j) & 1U;
    data.add(x);
  }
  return data.compressed();
}

void expect_same_distribution(const Circuit& a, const Circuit& b, double tol = 1e-9) {
  const auto ta = llae::testing::joint_table(a);
  const auto tb = llae::testing::joint_table(b);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_NEAR(ta[i], tb[i], tol);
}

}  // namespace

TEST(Learn, FactorizedParametersAreSmoothedFrequencies) {
  const auto vt = std::make_shared<const Vtree>(build_balanced(3, std::vector<Var>{0, 1, 2}));
  CircuitBuilder b(vt);
  const Circuit base = b.build(b.factorized(vt->root()));
  BinaryDataset data(3);
  data.add(std::vector<std::uint8_t>{1, 0, 1}, 3);
  data.add(std::vector<std::uint8_t>{0, 0, 1}, 1);
  const Circuit fit = learn_parameters(base, data, 1.0);
  EXPECT_NEAR(conditional_probability(fit, {{0, true}}, {}), 4.0 / 6.0, 1e-9);
  EXPECT_NEAR(conditional_probability(fit, {{1, true}}, {}), 1.0 / 6.0, 1e-9);
  EXPECT_NEAR(conditional_probability(fit, {{2, true}}, {}), 5.0 / 6.0, 1e-9);
  const Circuit ml = learn_parameters(base, data, 0.0);
  EXPECT_NEAR(conditional_probability(ml, {{0, true}}, {}), 0.75, 1e-9);
  EXPECT_NEAR(conditional_probability(ml, {{1, true}}, {}), 1e-6, 1e-9);
}

TEST(Learn, NodeSumLikelihoodMatchesPerExampleSum) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto vt = llae::testing::random_vtree(2 + trial % 9, rng);
    const Circuit c = RandomPsdd(vt, rng).make();
    const BinaryDataset data = sample_table(c, 300, rng);
    const Circuit fit = learn_parameters(c, data, 0.5);
    EXPECT_TRUE(validate(fit).empty());
    EXPECT_NEAR(log_likelihood(fit, data), log_likelihood_by_example(fit, data), 1e-6);
    EXPECT_NEAR(log_likelihood(c, data), log_likelihood_by_example(c, data), 1e-6);
    const NodeCounts counts = count_contexts(fit, data);
    EXPECT_EQ(counts.out_of_support_weight, 0.0);
    for (NodeId id = 0; id < fit.size(); ++id) {
      double sum = 0.0;
      for (double x : counts.counts[id]) {
        EXPECT_GE(x, 0.0);
        sum += x;
      }
      EXPECT_LE(sum, static_cast<double>(data.total_weight()) + 1e-9);
    }
  }
}

TEST(Learn, OutOfSupportExampleGivesMinusInfinity) {
  const auto vt = std::make_shared<const Vtree>(Vtree::parse("L 0 0\nL 1 1\nI 2 0 1\nR 2\n"));
  CircuitBuilder b(vt);
  const Circuit c = b.build(b.decision({{b.literal(0, true), b.terminal(1, 0.5), 1.0}}));
  BinaryDataset data(2);
  data.add(std::vector<std::uint8_t>{0, 1});
  EXPECT_TRUE(std::isinf(log_likelihood(c, data)));
  EXPECT_TRUE(std::isinf(log_likelihood_by_example(c, data)));
  EXPECT_EQ(count_contexts(c, data).out_of_support_weight, 1.0);
}

TEST(Learn, SplitAndClonePreserveDistribution) {
  std::mt19937_64 rng(22);
  int splits = 0;
  int clones = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto vt = llae::testing::random_vtree(3 + trial % 6, rng);
    const Circuit c = RandomPsdd(vt, rng).make(0.1);
    for (NodeId id = 0; id < c.size(); ++id) {
      const auto& n = c.node(id);
      if (!n.is_decision()) continue;
      for (Var var : c.vtree().variables(c.vtree().left(n.vtree))) {
        try {
          const Circuit s = split(c, id, 0, var);
          EXPECT_TRUE(validate(s).empty());
          EXPECT_GT(s.num_parameters(), c.num_parameters() - 1);
          expect_same_distribution(c, s);
          ++splits;
        } catch (const RejectedOperation&) {
        }
      }
      for (int depth : {-1, 0, 1}) {
        const auto refs = parent_references(c, id);
        if (refs.size() < 2) continue;
        const Circuit k = clone(c, id, std::span(refs).first(1), {}, depth);
        EXPECT_TRUE(validate(k).empty());
        expect_same_distribution(c, k);
        ++clones;
      }
    }
  }
  EXPECT_GT(splits, 20);
  EXPECT_GT(clones, 5);
}

TEST(Learn, CloneRejectsImproperSubsets) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const auto vt = llae::testing::random_vtree(6, rng);
    const Circuit c = RandomPsdd(vt, rng).make();
    for (NodeId id = 0; id < c.size(); ++id) {
      const auto refs = parent_references(c, id);
      if (refs.empty()) continue;
      EXPECT_THROW(clone(c, id, refs), RejectedOperation);
      EXPECT_THROW(clone(c, id, {}), RejectedOperation);
    }
  }
}

TEST(Learn, SplitRejectsVariableOutsidePrime) {
  const auto vt = std::make_shared<const Vtree>(Vtree::parse("L 0 0\nL 1 1\nI 2 0 1\nR 2\n"));
  CircuitBuilder b(vt);
  const Circuit c = b.build(b.factorized(vt->root()));
  EXPECT_THROW(split(c, c.root(), 0, 1), RejectedOperation);
  EXPECT_NO_THROW(split(c, c.root(), 0, 0));
}

TEST(Learn, ExactlyOneIsUniformOverOneHot) {
  const std::vector<Var> order{0, 1, 2, 3, 4};
  const auto vt = std::make_shared<const Vtree>(build_balanced(5, order));
  const std::vector<Var> group{0, 1, 2, 3, 4};
  const Circuit eo = compile_exactly_one(vt, group);
  EXPECT_TRUE(validate(eo).empty());
  const auto table = llae::testing::joint_table(eo);
  for (std::size_t bits = 0; bits < table.size(); ++bits) {
    const bool one_hot = bits != 0 && (bits & (bits - 1)) == 0;
    EXPECT_NEAR(table[bits], one_hot ? 0.2 : 0.0, 1e-12);
  }
}

TEST(Learn, ExactlyOneRequiresVtreeNodeGroup) {
  const auto vt = std::make_shared<const Vtree>(build_balanced(4, std::vector<Var>{0, 1, 2, 3}));
  EXPECT_THROW(compile_exactly_one(vt, std::vector<Var>{1, 2}), InvalidArgument);
}

TEST(Learn, BaseCircuitEnforcesGroupsAndLeavesOthersUniform) {
  const std::vector<Var> order{0, 1, 2, 3, 4, 5};
  const auto vt = std::make_shared<const Vtree>(build_balanced(6, order));
  const std::vector<std::vector<Var>> groups{{0, 1, 2}};
  const Circuit base = compile_base(vt, groups);
  EXPECT_TRUE(validate(base).empty());
  const auto table = llae::testing::joint_table(base);
  for (std::size_t bits = 0; bits < table.size(); ++bits) {
    const std::size_t g = bits & 7U;
    const bool one_hot = g != 0 && (g & (g - 1)) == 0;
    EXPECT_NEAR(table[bits], one_hot ? 1.0 / 24.0 : 0.0, 1e-12);
  }
}

TEST(Learn, StructureSearchCapturesEquality) {
  BinaryDataset data(3);
  std::mt19937_64 rng(24);
  for (int i = 0; i < 1000; ++i) {
    const std::uint8_t a = rng() & 1U;
    data.add(std::vector<std::uint8_t>{a, a, static_cast<std::uint8_t>(rng() & 1U)});
  }
  const std::vector<Var> order{0, 1, 2};
  const auto vt = std::make_shared<const Vtree>(build_rightlinear(3, order));
  LearnConfig config;
  config.seed = 5;
  const LearnResult result = learn_structure(data.compressed(), vt, config);
  EXPECT_TRUE(validate(result.circuit).empty());
  const double mass = std::exp(evidence_log_probability(result.circuit, {{0, true}, {1, true}})) +
                      std::exp(evidence_log_probability(result.circuit, {{0, false}, {1, false}}));
  EXPECT_GE(mass, 0.98);
  for (std::size_t i = 1; i < result.log.size(); ++i) {
    EXPECT_GE(result.log[i].train_score, result.log[i - 1].train_score);
  }
}

TEST(Learn, LoggedScoresMatchRecomputedScores) {
  std::mt19937_64 rng(25);
  const auto vt = llae::testing::random_vtree(8, rng);
  const Circuit truth = RandomPsdd(vt, rng).make(0.0);
  const BinaryDataset data = sample_table(truth, 2000, rng);
  CircuitBuilder b(vt);
  const Circuit start = b.build(b.factorized(vt->root()));
  LearnConfig config;
  config.validation_fraction = 0.0;
  config.size_penalty = 0.0005;
  config.patience = 1000;
  config.max_iterations = 15;
  std::vector<LearnLogEntry> seen;
  const LearnResult result =
      learn_structure_from(start, data, config, [&](const LearnLogEntry& e) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), result.log.size());
  ASSERT_GE(result.log.size(), 2U);
  for (std::size_t i = 1; i < result.log.size(); ++i) {
    EXPECT_GT(result.log[i].train_score, result.log[i - 1].train_score);
    EXPECT_NEAR(result.log[i].train_score, result.log[i].valid_score, 1e-9);
  }
  EXPECT_NEAR(result.log.back().train_score, score(result.circuit, data, config), 1e-9);
  EXPECT_EQ(result.log.back().num_params, result.circuit.num_parameters());
}

TEST(Learn, SearchIsDeterministic) {
  std::mt19937_64 rng(26);
  const auto vt = llae::testing::random_vtree(7, rng);
  const Circuit truth = RandomPsdd(vt, rng).make(0.0);
  const BinaryDataset data = sample_table(truth, 800, rng);
  LearnConfig config;
  config.max_iterations = 10;
  config.seed = 3;
  const auto a = learn_structure(data, vt, config);
  config.num_threads = 3;
  const auto b = learn_structure(data, vt, config);
  EXPECT_EQ(a.circuit.to_text(), b.circuit.to_text());
}

TEST(Learn, ConfigChecks) {
  LearnConfig config;
  config.validation_fraction = 0.6;
  EXPECT_THROW(config.check(), InvalidArgument);
  config = LearnConfig{};
  config.laplace_alpha = -1.0;
  EXPECT_THROW(config.check(), InvalidArgument);
}

TEST(Learn, LogLinesAreJson) {
  LearnLogEntry e{3, "split(node=1,element=0,var=2)", -1.5, -std::numeric_limits<double>::infinity(), 7, 0.25};
  const auto j = nlohmann::json::parse(to_json_line(e));
  EXPECT_EQ(j["iteration"], 3);
  EXPECT_EQ(j["num_params"], 7);
  EXPECT_TRUE(j["valid_score"].is_null());
}

TEST(Learn, ConditionedBaseSplitsOnGroupValues) {
  // Vtree ((0 1 2) | (3 4)) with group {0, 1, 2} on the left of the root.
  const auto vt = std::make_shared<const Vtree>(build_balanced(5, std::vector<Var>{0, 1, 2, 3, 4}));
  const std::vector<std::vector<Var>> groups{{0, 1, 2}};
  const Circuit base = compile_base(vt, groups, true);
  EXPECT_TRUE(validate(base).empty());
  EXPECT_EQ(base.node(base.root()).elements.size(), 3U);
  const auto table = llae::testing::joint_table(base);
  for (std::size_t bits = 0; bits < table.size(); ++bits) {
    const std::size_t g = bits & 7U;
    const bool one_hot = g != 0 && (g & (g - 1)) == 0;
    EXPECT_NEAR(table[bits], one_hot ? 1.0 / 12.0 : 0.0, 1e-12);
  }
}

TEST(Learn, ConditionedBaseCapturesXor) {
  // y = a XOR b with y the one-hot group {0, 1} on the left of the root.
  std::vector<Var> order{0, 1, 2, 3};
  VtreeBuilder vb;
  const VtreeId y = vb.balanced(std::span<const Var>(order).first(2));
  const VtreeId ab = vb.balanced(std::span<const Var>(order).subspan(2));
  const auto vt = std::make_shared<const Vtree>(vb.finish(vb.internal(y, ab)));
  BinaryDataset data(4);
  std::mt19937_64 rng(27);
  for (int i = 0; i < 2000; ++i) {
    const std::uint8_t a = rng() & 1U;
    const std::uint8_t b = rng() & 1U;
    const std::uint8_t x = a ^ b;
    data.add(std::vector<std::uint8_t>{static_cast<std::uint8_t>(1 - x), x, a, b});
  }
  LearnConfig config;
  config.condition_on_groups = true;
  const std::vector<std::vector<Var>> groups{{0, 1}};
  const LearnResult result = learn_structure(data.compressed(), vt, config, groups);
  EXPECT_GT(conditional_probability(result.circuit, {{1, true}}, {{2, true}, {3, false}}), 0.95);
  EXPECT_GT(conditional_probability(result.circuit, {{0, true}}, {{2, true}, {3, true}}), 0.95);
}

TEST(Learn, ConditionedBaseSplitsOnObservedPatterns) {
  // Unconstrained left side {0, 1, 2}; rows show three of its eight assignments.
  const auto vt = std::make_shared<const Vtree>(build_balanced(5, std::vector<Var>{0, 1, 2, 3, 4}));
  BinaryDataset data(5);
  data.add(std::vector<std::uint8_t>{1, 1, 0, 0, 1});
  data.add(std::vector<std::uint8_t>{0, 0, 0, 1, 1});
  data.add(std::vector<std::uint8_t>{1, 0, 1, 0, 0}, 3);
  data.add(std::vector<std::uint8_t>{1, 0, 1, 1, 0});
  const Circuit base = compile_base(vt, std::span<const std::vector<Var>>{}, true, &data);
  ASSERT_TRUE(validate(base).empty());
  EXPECT_EQ(base.node(base.root()).elements.size(), 4U);
  const auto table = llae::testing::joint_table(base);
  double total = 0.0;
  for (double p : table) {
    EXPECT_GT(p, 0.0);
    total += p;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);

  // Each seen pattern gets its own right side: after fitting, x3 follows x0 x1 x2.
  const Circuit fitted = learn_parameters(base, data, 0.0);
  EXPECT_NEAR(conditional_probability(fitted, {{3, true}}, {{0, true}, {1, false}, {2, true}}), 0.25, 1e-6);
  EXPECT_NEAR(conditional_probability(fitted, {{3, true}}, {{0, false}, {1, false}, {2, false}}), 1.0 - 1e-6, 1e-6);
}

TEST(Learn, ConditionedBaseIgnoresLargeOrConstrainedLeftSides) {
  const auto vt = std::make_shared<const Vtree>(build_balanced(5, std::vector<Var>{0, 1, 2, 3, 4}));
  BinaryDataset data(5);
  data.add(std::vector<std::uint8_t>{1, 0, 0, 0, 1});
  const Circuit plain = compile_base(vt, std::span<const std::vector<Var>>{}, false, &data);
  EXPECT_EQ(plain.node(plain.root()).elements.size(), 1U);
  const Circuit no_data = compile_base(vt, std::span<const std::vector<Var>>{}, true);
  EXPECT_EQ(no_data.node(no_data.root()).elements.size(), 1U);
}
