#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "gmat/gmat.hpp"
#include "oracles.hpp"

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

struct Setup {
  SynthDataset ds;
  TextBanks banks;
  DatasetSplit split;
  GmatParams init;
};

Setup make_setup(double noise, int feature_dim) {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.dim = 16;
  spec.noise_sigma = noise;
  spec.signal_fraction = noise == 0.0 ? 1.0 : 0.5;
  spec.slides_per_class = 10;
  spec.patients_per_class = 5;
  spec.patches_5x = 4;
  spec.patches_10x = 8;
  spec.feature_dim = feature_dim;
  const TextEncoder enc({"toy", 16, 0, EncoderKind::ToyText});
  Setup s;
  s.ds = synth_dataset(spec, enc);
  s.banks = shared_banks(make_text_bank(s.ds.descriptions, enc));
  s.split = patient_split(s.ds.bags, {0.6, 0.2, 0.2}, 0);
  ModelConfig mc;
  mc.attention_dim = 8;
  s.init = init_params(mc, feature_dim > 0 ? feature_dim : 16, 16);
  return s;
}

}  // namespace

TEST(Train, ZeroNoiseReachesPerfectValidationAccuracyQuickly) {
  auto s = make_setup(0.0, 24);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.max_epochs = 20;
  cfg.patience = 20;
  const auto r = train(s.ds.bags, s.split, s.banks, s.init, cfg);
  bool reached = false;
  for (const auto& e : r.log) reached = reached || e.val_acc == 1.0;
  EXPECT_TRUE(reached);
  EXPECT_EQ(evaluate(select_bags(s.ds.bags, s.split.val), s.banks, r.params).acc, 1.0);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto s = make_setup(0.3, 0);
  for (const std::string opt : {"adam", "sgd"}) {
    TrainConfig cfg;
    cfg.optimizer = opt;
    cfg.lr = 0.0;
    cfg.max_epochs = 3;
    const auto r = train(s.ds.bags, s.split, s.banks, s.init, cfg);
    EXPECT_EQ(flatten(r.params), flatten(s.init)) << opt;
  }
}

TEST(Train, SameSeedGivesIdenticalLogsAndParameters) {
  auto s = make_setup(0.3, 24);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.seed = 9;
  const auto a = train(s.ds.bags, s.split, s.banks, s.init, cfg);
  const auto b = train(s.ds.bags, s.split, s.banks, s.init, cfg);
  EXPECT_EQ(log_jsonl(a.log), log_jsonl(b.log));
  EXPECT_EQ(encode_checkpoint(a.params, "h", a.best_epoch), encode_checkpoint(b.params, "h", b.best_epoch));
  cfg.seed = 10;
  const auto c = train(s.ds.bags, s.split, s.banks, s.init, cfg);
  EXPECT_NE(log_jsonl(a.log), log_jsonl(c.log));
}

TEST(Train, EarlyStoppingRespectsPatience) {
  auto s = make_setup(0.0, 0);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.max_epochs = 50;
  cfg.patience = 3;
  const auto r = train(s.ds.bags, s.split, s.banks, s.init, cfg);
  EXPECT_EQ(r.best_epoch, 1);
  EXPECT_EQ(r.log.size(), 4u);
}

TEST(Train, SgdStepIsPlainGradientDescent) {
  TrainConfig cfg;
  cfg.optimizer = "sgd";
  cfg.lr = 0.5;
  Optimizer opt(cfg, 2);
  std::vector<double> x = {1.0, -1.0};
  opt.step(x, {2.0, 4.0});
  EXPECT_EQ(x, (std::vector<double>{0.0, -3.0}));
}

TEST(Train, AdamFirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.eps = 0.0;
  Optimizer opt(cfg, 2);
  std::vector<double> x = {0.0, 0.0};
  opt.step(x, {3.0, -0.5});
  EXPECT_NEAR(x[0], -0.1, 1e-15);
  EXPECT_NEAR(x[1], 0.1, 1e-15);
}

TEST(Train, BadConfigAndEmptyTrainSet) {
  auto s = make_setup(0.3, 0);
  TrainConfig cfg;
  cfg.optimizer = "lbfgs";
  EXPECT_EQ(code_of([&] { train(s.ds.bags, s.split, s.banks, s.init, cfg); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { train({}, select_bags(s.ds.bags, s.split.val), s.banks, s.init, TrainConfig{}); }),
            ErrorCode::NoTrainData);
  DatasetSplit empty = s.split;
  empty.train.clear();
  EXPECT_EQ(code_of([&] { train(s.ds.bags, empty, s.banks, s.init, TrainConfig{}); }), ErrorCode::NoTrainData);
}

TEST(Train, CheckpointRoundTripsAtFloatPrecision) {
  Rng rng(1);
  for (bool with_proj : {true, false}) {
    auto in = oracle::random_instance(rng, with_proj);
    const auto bytes = encode_checkpoint(in.params, "abc", 12);
    const auto ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.config_hash, "abc");
    EXPECT_EQ(ck.epoch, 12);
    EXPECT_EQ(ck.params.train_proj, in.params.train_proj);
    EXPECT_EQ(ck.params.has_proj(), in.params.has_proj());
    const auto want = flatten(in.params), got = flatten(ck.params);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_EQ(got[k], static_cast<double>(static_cast<float>(want[k])));
    EXPECT_EQ(encode_checkpoint(ck.params, "abc", 12), bytes);
  }
}

TEST(Train, CorruptCheckpointsAreFormatErrors) {
  Rng rng(2);
  const auto bytes = encode_checkpoint(oracle::random_instance(rng).params, "h", 1);
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes.substr(0, 3)); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes.substr(0, 20)); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 4)); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes + "!"); }), ErrorCode::FormatError);
  auto bad = bytes;
  bad[6] = 'X';
  EXPECT_EQ(code_of([&] { decode_checkpoint(bad); }), ErrorCode::FormatError);
}

TEST(Train, CheckpointFileSaveAndLoad) {
  Rng rng(3);
  const auto p = oracle::random_instance(rng).params;
  const auto path = (std::filesystem::temp_directory_path() / "gmat_ckpt_test.gckpt").string();
  save_checkpoint(p, path, "cfg", 5);
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(encode_checkpoint(ck.params, "cfg", 5), read_file(path));
}

TEST(Train, PredictionsAreOrderedBySlideId) {
  auto s = make_setup(0.3, 0);
  auto bags = select_bags(s.ds.bags, s.split.test);
  std::reverse(bags.begin(), bags.end());
  const auto pr = predict_all(bags, s.banks, s.init);
  EXPECT_TRUE(std::is_sorted(pr.slide_ids.begin(), pr.slide_ids.end()));
  EXPECT_EQ(pr.scores.rows(), static_cast<Eigen::Index>(bags.size()));
}

TEST(Train, ConfigJsonRoundTrip) {
  TrainConfig t;
  t.optimizer = "sgd";
  t.lr = 0.25;
  t.max_epochs = 7;
  t.seed = 3;
  EXPECT_EQ(to_json(train_config_from_json(to_json(t))), to_json(t));
}
