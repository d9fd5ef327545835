#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gmat/gmat.hpp"

using namespace gmat;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

Bag random_bag(Rng& rng, const std::string& id, const std::string& patient, int label) {
  Bag b{id, patient, label, {}, {}};
  for (auto s : kScales) {
    FeatureMatrix f(static_cast<Eigen::Index>(1 + rng.index(5)), 6);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(rng.normal() * 1e3);
    b.features(s) = f;
  }
  return b;
}

std::vector<Bag> bags_for_patients(const std::vector<int>& slides_per_patient) {
  std::vector<Bag> out;
  for (std::size_t p = 0; p < slides_per_patient.size(); ++p) {
    for (int s = 0; s < slides_per_patient[p]; ++s) {
      Bag b;
      b.patient_id = "p" + std::to_string(p);
      b.slide_id = b.patient_id + "-" + std::to_string(s);
      out.push_back(std::move(b));
    }
  }
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gmat_bag_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

bool bitwise_equal(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(BagData, FeatureFileRoundTripIsExact) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto bag = random_bag(rng, "s" + std::to_string(t), "p", t % 3);
    for (auto s : kScales) {
      const auto ff = decode_feature_file(encode_feature_file(bag, s));
      EXPECT_TRUE(bitwise_equal(ff.features, bag.features(s)));
      EXPECT_EQ(ff.header.at("slide_id"), bag.slide_id);
    }
  }
}

TEST(BagData, SaveAndLoadBagFromDirectory) {
  Rng rng(2);
  const auto dir = scratch("dir");
  const auto bag = random_bag(rng, "slide-a", "pat-a", 1);
  save_bag(bag, dir);
  const auto back = load_bag(dir, "slide-a");
  EXPECT_EQ(back.patient_id, "pat-a");
  EXPECT_EQ(back.label, 1);
  for (auto s : kScales) EXPECT_TRUE(bitwise_equal(back.features(s), bag.features(s)));
}

TEST(BagData, CorruptFilesAreFormatErrors) {
  Rng rng(3);
  const auto bag = random_bag(rng, "s", "p", 0);
  auto bytes = encode_feature_file(bag, Scale::X5);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_feature_file(bad_magic); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_feature_file(bytes.substr(0, bytes.size() - 1)); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_feature_file(bytes + "x"); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_feature_file(bytes.substr(0, 10)); }), ErrorCode::FormatError);
}

TEST(BagData, DatasetManifestRoundTrip) {
  Rng rng(4);
  const auto dir = scratch("ds");
  std::vector<Bag> bags;
  for (int i = 0; i < 4; ++i) bags.push_back(random_bag(rng, "s" + std::to_string(i), "p" + std::to_string(i / 2), i % 2));
  save_dataset(bags, dir);
  const auto back = load_dataset(dir / "manifest.json");
  ASSERT_EQ(back.size(), bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    EXPECT_EQ(back[i].slide_id, bags[i].slide_id);
    EXPECT_TRUE(bitwise_equal(back[i].features_10x, bags[i].features_10x));
  }
}

TEST(BagData, ManifestDisagreeingWithHeaderIsRejected) {
  Rng rng(5);
  const auto dir = scratch("bad");
  save_dataset({random_bag(rng, "s0", "p0", 0)}, dir);
  auto j = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
  j[0]["label"] = 1;
  write_file((dir / "manifest.json").string(), j.dump());
  EXPECT_EQ(code_of([&] { load_dataset(dir / "manifest.json"); }), ErrorCode::FormatError);
}

TEST(BagData, TenPatientsSplitSixTwoTwo) {
  const auto bags = bags_for_patients(std::vector<int>(10, 1));
  const auto s = patient_split(bags, {0.6, 0.2, 0.2}, 0);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(BagData, TwoPatientsCannotFillThreeSplits) {
  const auto bags = bags_for_patients({3, 3});
  EXPECT_EQ(code_of([&] { patient_split(bags, {0.6, 0.2, 0.2}, 0); }), ErrorCode::TooFewPatients);
}

TEST(BagData, PatientsNeverStraddleSplitsOverSeeds) {
  const auto bags = bags_for_patients({3, 1, 2, 3, 1, 1, 2, 3, 1, 2});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = patient_split(bags, {0.6, 0.2, 0.2}, seed);
    std::map<std::string, std::set<int>> where;
    for (const auto& id : s.train) where[s.patient_map.at(id)].insert(0);
    for (const auto& id : s.val) where[s.patient_map.at(id)].insert(1);
    for (const auto& id : s.test) where[s.patient_map.at(id)].insert(2);
    EXPECT_EQ(where.size(), 10u);
    for (const auto& [p, parts] : where) EXPECT_EQ(parts.size(), 1u) << "seed " << seed << " patient " << p;
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), bags.size());
  }
}

TEST(BagData, SplitIsSeededAndSerializable) {
  const auto bags = bags_for_patients(std::vector<int>(12, 2));
  const auto a = patient_split(bags, {0.6, 0.2, 0.2}, 7);
  const auto b = patient_split(bags, {0.6, 0.2, 0.2}, 7);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(to_json(split_from_json(to_json(a))), to_json(a));
  EXPECT_EQ(code_of([&] { patient_split(bags, {0.5, 0.2, 0.2}, 0); }), ErrorCode::InvalidArgument);
}

TEST(BagData, NoiselessSingleFacetPatchesSitOnThePrototype) {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.dim = 16;
  spec.facets_per_class = 1;
  spec.signal_fraction = 1.0;
  spec.noise_sigma = 0.0;
  spec.slides_per_class = 4;
  spec.patches_5x = 3;
  spec.patches_10x = 5;
  const TextEncoder enc({"toy", 16, 0, EncoderKind::ToyText});
  const auto ds = synth_dataset(spec, enc);
  for (const auto& b : ds.bags) {
    const Vector& proto = ds.prototypes[static_cast<std::size_t>(b.label)][0];
    for (auto s : kScales) {
      const auto& f = b.features(s);
      for (Eigen::Index i = 0; i < f.rows(); ++i) {
        const Vector v = f.row(i).cast<double>().transpose();
        EXPECT_NEAR(v.dot(proto) / v.norm(), 1.0, 1e-6);
      }
    }
  }
}

TEST(BagData, CountsAndBalance) {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.slides_per_class = 10;
  spec.dim = 16;
  const TextEncoder enc({"toy", 16, 0, EncoderKind::ToyText});
  const auto ds = synth_dataset(spec, enc);
  ASSERT_EQ(ds.bags.size(), 20u);
  int ones = 0;
  for (const auto& b : ds.bags) ones += b.label;
  EXPECT_EQ(ones, 10);
  EXPECT_EQ(ds.descriptions.entries.size(), 2u);
  EXPECT_NO_THROW(validate(canonical_json(ds.descriptions), {1, 24, 300}));
}

TEST(BagData, SignalFractionMatchesMonteCarloCount) {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.dim = 64;
  spec.facets_per_class = 2;
  spec.signal_fraction = 0.5;
  spec.noise_sigma = 0.05;
  spec.slides_per_class = 50;
  spec.seed = 11;
  const TextEncoder enc({"toy", 64, 0, EncoderKind::ToyText});
  const auto ds = synth_dataset(spec, enc);
  std::size_t near = 0, total = 0;
  for (const auto& b : ds.bags) {
    for (auto s : kScales) {
      const auto& f = b.features(s);
      for (Eigen::Index i = 0; i < f.rows(); ++i) {
        const Vector v = f.row(i).cast<double>().transpose();
        double best = -1;
        for (const auto& p : ds.prototypes[static_cast<std::size_t>(b.label)]) best = std::max(best, v.dot(p) / v.norm());
        near += best >= 0.9;
        ++total;
      }
    }
  }
  const double frac = static_cast<double>(near) / static_cast<double>(total);
  EXPECT_GE(frac, 0.4);
  EXPECT_LE(frac, 0.6);
}

TEST(BagData, ZeroNoiseNearestPrototypeIsPerfect) {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.dim = 32;
  spec.noise_sigma = 0.0;
  spec.signal_fraction = 1.0;
  const TextEncoder enc({"toy", 32, 0, EncoderKind::ToyText});
  const auto ds = synth_dataset(spec, enc);
  int correct = 0;
  for (const auto& b : ds.bags) {
    const Vector mean = b.features_10x.cast<double>().colwise().mean().transpose();
    int best = -1;
    double best_score = -2;
    for (std::size_t c = 0; c < ds.prototypes.size(); ++c)
      for (const auto& p : ds.prototypes[c])
        if (mean.dot(p) > best_score) best_score = mean.dot(p), best = static_cast<int>(c);
    correct += best == b.label;
  }
  EXPECT_EQ(correct, static_cast<int>(ds.bags.size()));
}

TEST(BagData, ObservedFeaturesUseTheRequestedWidth) {
  SynthSpec spec;
  spec.dim = 16;
  spec.feature_dim = 24;
  spec.slides_per_class = 2;
  const TextEncoder enc({"toy", 16, 0, EncoderKind::ToyText});
  const auto ds = synth_dataset(spec, enc);
  for (const auto& b : ds.bags) EXPECT_EQ(b.feature_dim(), 24);
  EXPECT_EQ(synth_dataset(spec, enc).bags[3].features_5x, ds.bags[3].features_5x);
}

TEST(BagData, InvalidSynthSpecs) {
  const TextEncoder enc({"toy", 16, 0, EncoderKind::ToyText});
  SynthSpec s;
  s.dim = 16;
  auto bad = [&](auto mutate, ErrorCode code) {
    auto t = s;
    mutate(t);
    EXPECT_EQ(code_of([&] { synth_dataset(t, enc); }), code);
  };
  bad([](SynthSpec& t) { t.num_classes = 1; }, ErrorCode::SpecInvalid);
  bad([](SynthSpec& t) { t.signal_fraction = 0; }, ErrorCode::SpecInvalid);
  bad([](SynthSpec& t) { t.noise_sigma = -1; }, ErrorCode::SpecInvalid);
  bad([](SynthSpec& t) { t.facets_per_class = 0; }, ErrorCode::SpecInvalid);
  bad([](SynthSpec& t) { t.dim = 8; }, ErrorCode::DimMismatch);
}

TEST(BagData, CodebookSuppliesClassesAndSentences) {
  const auto codebook = load_descriptions(std::string(GMAT_FIXTURES) + "/descriptions/rcc_descriptions.json");
  SynthSpec s;
  s.dim = 16;
  s.slides_per_class = 2;
  const TextEncoder enc({"toy", 16, 0, EncoderKind::ToyText});
  const auto ds = synth_dataset(s, enc, &codebook);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"KICH", "KIRC", "KIRP"}));
  for (const auto& [label, list] : ds.descriptions.entries) {
    const auto& pool = codebook.entries.at(label).sentences;
    for (const auto& sentence : list.sentences) EXPECT_NE(std::find(pool.begin(), pool.end(), sentence), pool.end());
  }
}

TEST(BagData, CheckBagCatchesBadInput) {
  Rng rng(6);
  auto b = random_bag(rng, "s", "p", 5);
  EXPECT_EQ(code_of([&] { check_bag(b, 3); }), ErrorCode::LabelOutOfRange);
  b.label = 0;
  b.features_10x = FeatureMatrix::Zero(2, 4);
  EXPECT_EQ(code_of([&] { check_bag(b, 3); }), ErrorCode::DimMismatch);
  b.features_10x = FeatureMatrix::Zero(0, 6);
  EXPECT_EQ(code_of([&] { check_bag(b, 3); }), ErrorCode::InvalidArgument);
}
