#include <gtest/gtest.h>

#include "llae/codecs.hpp"
#include "llae/error.hpp"

using namespace llae;

namespace {

std::vector<std::uint8_t> bits(const std::string& s) {
  std::vector<std::uint8_t> out;
  for (char c : s) out.push_back(c == '1' ? 1 : 0);
  return out;
}

FeatureLayerSpec mnist_spec() {
  return FeatureLayerSpec({{"image", 32, 2, CodecKind::kNeural, false}, {"label", 1, 10, CodecKind::kSymbolic, false}});
}

}  // namespace

TEST(Symbol, EncodeExamples) {
  EXPECT_EQ(encode_symbol({10, false}, 3), bits("0001000000"));
  EXPECT_EQ(encode_symbol({10, true}, 3), bits("0011"));
  EXPECT_EQ(encode_symbol({2, false}, 1), bits("01"));
  EXPECT_EQ(encode_symbol({2, true}, 1), bits("1"));
  EXPECT_THROW(encode_symbol({10, false}, 10), InvalidArgument);
  EXPECT_THROW(encode_symbol({1, false}, 0), InvalidArgument);
}

TEST(Symbol, DecodeExamplesAndRoundTrip) {
  const std::vector<double> scores{0.1, 0.7, 0.2};
  EXPECT_EQ(decode_symbol(SymbolicCodec{3, false}, std::span<const double>(scores)), 1U);
  const std::vector<double> tie{0.4, 0.4, 0.2};
  EXPECT_EQ(decode_symbol(SymbolicCodec{3, false}, std::span<const double>(tie)), 0U);
  EXPECT_THROW(decode_symbol(SymbolicCodec{10, true}, std::span<const std::uint8_t>(bits("1111"))), DecodeError);
  for (std::size_t k : {2U, 3U, 7U, 8U, 10U, 19U}) {
    for (bool compressed : {false, true}) {
      const SymbolicCodec c{k, compressed};
      for (std::size_t y = 0; y < k; ++y) {
        const auto code = encode_symbol(c, y);
        EXPECT_EQ(code.size(), c.width());
        EXPECT_EQ(decode_symbol(c, std::span<const std::uint8_t>(code)), y);
      }
    }
  }
}

TEST(FeatureLayer, MnistStyleSpecWidth) {
  const auto spec = mnist_spec();
  EXPECT_EQ(spec.size(), 42U);
  EXPECT_EQ(spec.begin(1), 32U);
  EXPECT_EQ(spec.end(1), 42U);
}

TEST(FeatureLayer, WidthsPerCodec) {
  const FeatureLayerSpec spec({{"a", 8, 4, CodecKind::kNeural, false},
                               {"b", 3, 2, CodecKind::kNeural, false},
                               {"c", 1, 10, CodecKind::kSymbolic, true},
                               {"d", 2, 3, CodecKind::kSymbolic, false}});
  EXPECT_EQ(spec.size(), 32U + 3U + 4U + 6U);
  const auto groups = fl_constraint(spec);
  ASSERT_EQ(groups.size(), 8U + 2U);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(groups[i].size(), 4U);
  EXPECT_EQ(groups[8], (std::vector<Var>{39, 40, 41}));
  std::vector<int> owner(spec.size(), 0);
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    for (Var v = spec.begin(d); v < spec.end(d); ++v) ++owner[v];
  }
  for (int o : owner) EXPECT_EQ(o, 1);
}

TEST(FeatureLayer, ConstraintGroups) {
  EXPECT_EQ(fl_constraint(mnist_spec()).size(), 1U);
  EXPECT_EQ(fl_constraint(mnist_spec()).front().size(), 10U);
  const FeatureLayerSpec compressed({{"image", 4, 2, CodecKind::kNeural, false},
                                     {"label", 1, 10, CodecKind::kSymbolic, true}});
  EXPECT_TRUE(fl_constraint(compressed).empty());
  const auto groups = sampling_groups(mnist_spec());
  ASSERT_EQ(groups.size(), 1U);
  EXPECT_TRUE(groups[0].one_hot);
}

TEST(FeatureLayer, InvalidSpecs) {
  EXPECT_THROW(FeatureLayerSpec({{"a", 4, 2, CodecKind::kNeural, false}, {"b", 0, 2, CodecKind::kNeural, false}}),
               InvalidArgument);
  EXPECT_THROW(FeatureLayerSpec({{"a", 4, 2, CodecKind::kNeural, false}, {"a", 1, 2, CodecKind::kNeural, false}}),
               InvalidArgument);
  EXPECT_THROW(FeatureLayerSpec({{"a", 4, 1, CodecKind::kNeural, false}}), InvalidArgument);
  EXPECT_THROW(FeatureLayerSpec({{"a", 4, 2, CodecKind::kNeural, true}}), InvalidArgument);
}

TEST(FeatureLayer, AssembleSliceRoundTrip) {
  const FeatureLayerSpec spec({{"x", 4, 2, CodecKind::kNeural, false}, {"y", 1, 3, CodecKind::kSymbolic, false}});
  const std::vector<std::vector<std::uint8_t>> slices{bits("1010"), bits("010")};
  const auto fl = assemble_fl(spec, slices);
  EXPECT_EQ(fl.size(), 7U);
  EXPECT_EQ(slice_fl(spec, fl), slices);
  EXPECT_THROW(assemble_fl(spec, {bits("101"), bits("010")}), InvalidArgument);
  EXPECT_THROW(slice_fl(spec, bits("101")), InvalidArgument);
}

TEST(FeatureLayer, DomainEncodeDecode) {
  const DomainSpec cat{"img", 3, 4, CodecKind::kNeural, false};
  const std::vector<std::uint32_t> values{3, 0, 2};
  const auto code = encode_domain(cat, values);
  EXPECT_EQ(code, bits("000110000010"));
  EXPECT_EQ(decode_domain(cat, code), values);
  const DomainSpec bin{"img", 3, 2, CodecKind::kNeural, false};
  const std::vector<std::uint32_t> b{1, 0, 1};
  EXPECT_EQ(encode_domain(bin, b), bits("101"));
  EXPECT_EQ(decode_domain(bin, bits("101")), b);
}

TEST(FeatureLayer, JsonRoundTrip) {
  const FeatureLayerSpec spec({{"image", 16, 2, CodecKind::kNeural, false}, {"label", 1, 10, CodecKind::kSymbolic, true}});
  const auto back = FeatureLayerSpec::from_json(spec.to_json());
  EXPECT_EQ(back, spec);
  EXPECT_THROW(FeatureLayerSpec::from_json("{\"domains\": [{\"name\": \"a\"}]}"), ParseError);
  EXPECT_THROW(FeatureLayerSpec::from_json("{oops"), ParseError);
}

TEST(FeatureLayer, DomainEvidence) {
  const auto spec = mnist_spec();
  const auto v = domain_evidence(spec, 1, encode_symbol({10, false}, 4));
  EXPECT_EQ(v.size(), 10U);
  EXPECT_EQ(v.get(36), true);
  EXPECT_EQ(v.get(35), false);
}
