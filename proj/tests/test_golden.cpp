#include <gtest/gtest.h>

#include "gmat/gmat.hpp"
#include "golden.hpp"

using namespace gmat;

TEST(Golden, FeatureFileBytesAreStable) {
  const auto b = golden::bag();
  EXPECT_EQ(sha256_hex(encode_feature_file(b, Scale::X5)), golden::kFeatureHash5x);
  EXPECT_EQ(sha256_hex(encode_feature_file(b, Scale::X10)), golden::kFeatureHash10x);
}

TEST(Golden, DescriptionBytesAreStable) {
  EXPECT_EQ(sha256_hex(canonical_json(golden::descriptions())), golden::kDescriptionHash);
}

TEST(Golden, CheckpointBytesAreStable) {
  EXPECT_EQ(sha256_hex(encode_checkpoint(golden::params(), "golden", golden::kCheckpointEpoch)), golden::kCheckpointHash);
}

TEST(Golden, RccFixtureCanonicalBytesAreStable) {
  const auto set = load_descriptions(std::string(GMAT_FIXTURES) + "/descriptions/rcc_descriptions.json");
  EXPECT_EQ(sha256_hex(canonical_json(set)), golden::kRccFixtureHash);
}
