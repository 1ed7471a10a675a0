#include "mlcc/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace fs = std::filesystem;

namespace mlcc {
namespace {

class TrainerTest : public ::testing::Test {
 protected:
  SplitSet splits = make_synthetic_splits({16, 20, 4.0, 1.0, 5}, {12, 5, 6});
  EncoderState init = [] {
    EncoderConfig c;
    c.input_shape = {16};
    c.embed_dim = 16;
    c.width = 24;
    c.init_seed = 3;
    return init_encoder(c);
  }();

  TrainConfig small(std::uint64_t seed = 1) const {
    TrainConfig cfg;
    cfg.shape = {5, 1, 4};
    cfg.episodes_per_epoch = 6;
    cfg.epochs = 2;
    cfg.val_episodes = 10;
    cfg.seed = seed;
    return cfg;
  }

  Episode episode(std::uint64_t seed = 2) const {
    Rng rng(seed);
    return sample_episode(splits.base, {5, 1, 4}, rng, 0);
  }
};

void expect_same_params(const EncoderState& a, const EncoderState& b) {
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i], b.params[i]) << "tensor " << i;
}

TEST(Ablations, ToggleTable) {
  EXPECT_EQ(toggles_for(Ablation::kI), (LossToggles{true, true, false}));
  EXPECT_EQ(toggles_for(Ablation::kII), (LossToggles{true, false, true}));
  EXPECT_EQ(toggles_for(Ablation::kIII), (LossToggles{false, true, true}));
  EXPECT_EQ(toggles_for(Ablation::kIV), (LossToggles{false, false, true}));
  EXPECT_EQ(toggles_for(Ablation::kFull), (LossToggles{true, true, true}));
  EXPECT_EQ(toggles_for(Ablation::kCeOnly), (LossToggles{false, false, false}));
  for (Ablation a : {Ablation::kI, Ablation::kII, Ablation::kIII, Ablation::kIV, Ablation::kFull, Ablation::kCeOnly})
    EXPECT_EQ(parse_ablation(to_string(a)), a);
  EXPECT_THROW(parse_ablation("V"), Error);
}

TEST_F(TrainerTest, AllTermsOffTotalEqualsCe) {
  TrainConfig cfg = small();
  cfg.toggles = toggles_for(Ablation::kCeOnly);
  const MetaTrainResult r = meta_train(cfg, splits.base, init);
  for (const StepMetrics& m : r.log) {
    EXPECT_EQ(m.total, m.ce);
    EXPECT_EQ(m.inter, 0.0);
    EXPECT_EQ(m.intra, 0.0);
    EXPECT_EQ(m.forget, 0.0);
  }
}

TEST_F(TrainerTest, FirstStepHasNoReplay) {
  EncoderState state = init;
  SgdMomentum opt;
  const TrainConfig cfg = small();
  EpisodeCache cache(cfg.cache);
  TrainRngs rngs = TrainRngs::from_seed(1);
  const StepMetrics m = meta_train_step(state, opt, episode(), cache, cfg, rngs);
  EXPECT_EQ(m.forget, 0.0);
  EXPECT_FALSE(m.replayed);
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_EQ(cache.entries().front().history.rows(), 5);
  EXPECT_EQ(cache.entries().front().history.cols(), 4);

  Episode next = episode(3);
  next.episode_id = 1;
  const StepMetrics m2 = meta_train_step(state, opt, next, cache, cfg, rngs);
  EXPECT_TRUE(m2.replayed);
  EXPECT_GE(m2.forget, cfg.loss.delta);
  EXPECT_EQ(cache.size(), 2u);
}

TEST_F(TrainerTest, TotalIsWeightedSum) {
  const MetaTrainResult r = meta_train(small(), splits.base, init);
  const LossConfig lc;
  for (const StepMetrics& m : r.log)
    EXPECT_NEAR(m.total, m.ce + lc.lambda1 * m.inter + lc.lambda2 * m.intra + m.forget, 1e-12);
}

TEST_F(TrainerTest, DeterministicGivenSeed) {
  const MetaTrainResult a = meta_train(small(4), splits.base, init, {&splits.val});
  const MetaTrainResult b = meta_train(small(4), splits.base, init, {&splits.val});
  expect_same_params(a.final_state, b.final_state);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(to_log_line(a.log[i]), to_log_line(b.log[i]));
  const MetaTrainResult c = meta_train(small(5), splits.base, init);
  EXPECT_NE(to_log_line(a.log.back()), to_log_line(c.log.back()));
}

TEST_F(TrainerTest, ToggleOffEqualsZeroCoefficient) {
  struct Case {
    LossToggles off;
    void (*zero)(LossConfig&);
  };
  const Case cases[] = {
      {{false, true, true}, [](LossConfig& l) { l.lambda1 = 0; }},
      {{true, false, true}, [](LossConfig& l) { l.lambda2 = 0; }},
  };
  for (const Case& c : cases) {
    TrainConfig toggled = small();
    toggled.toggles = c.off;
    TrainConfig zeroed = small();
    c.zero(zeroed.loss);
    const MetaTrainResult a = meta_train(toggled, splits.base, init);
    const MetaTrainResult b = meta_train(zeroed, splits.base, init);
    expect_same_params(a.final_state, b.final_state);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].total, b.log[i].total);
  }
}

TEST_F(TrainerTest, ZeroEpochsReturnsInit) {
  TrainConfig cfg = small();
  cfg.epochs = 0;
  const MetaTrainResult r = meta_train(cfg, splits.base, init);
  EXPECT_TRUE(r.log.empty());
  expect_same_params(r.final_state, init);
}

TEST_F(TrainerTest, OneEpochTwoEpisodesLogsTwoRecords) {
  TrainConfig cfg = small();
  cfg.epochs = 1;
  cfg.episodes_per_epoch = 2;
  const MetaTrainResult r = meta_train(cfg, splits.base, init);
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.log[0].step, 0u);
  EXPECT_EQ(r.log[1].step, 1u);
  EXPECT_EQ(r.final_state.step, 2u);
}

TEST_F(TrainerTest, RequiresBaseSplit) {
  EXPECT_THROW(meta_train(small(), splits.novel, init), Error);
}

TEST_F(TrainerTest, InvalidShape) {
  TrainConfig cfg = small();
  cfg.shape.n_way = 1;
  EXPECT_THROW(meta_train(cfg, splits.base, init), Error);
}

TEST_F(TrainerTest, ResumeMatchesUninterruptedRun) {
  const TrainConfig full_cfg = small(8);
  const MetaTrainResult full = meta_train(full_cfg, splits.base, init, {&splits.val});

  TrainConfig first_cfg = full_cfg;
  first_cfg.epochs = 1;
  const fs::path dir = fs::temp_directory_path() / "mlcc_resume_test";
  fs::remove_all(dir);
  MetaTrainOptions opts{&splits.val};
  opts.on_epoch = [&](const TrainProgress& p, const ValRecord*) { p.save(dir); };
  const MetaTrainResult first = meta_train(first_cfg, splits.base, init, opts);

  const TrainProgress progress = TrainProgress::load(dir);
  fs::remove_all(dir);
  EXPECT_EQ(progress.epochs_done, 1);
  MetaTrainOptions resume_opts{&splits.val};
  resume_opts.resume = &progress;
  const MetaTrainResult second = meta_train(full_cfg, splits.base, init, resume_opts);

  expect_same_params(second.final_state, full.final_state);
  expect_same_params(second.best_state, full.best_state);
  ASSERT_EQ(first.log.size() + second.log.size(), full.log.size());
  for (std::size_t i = 0; i < second.log.size(); ++i)
    EXPECT_EQ(to_log_line(second.log[i]), to_log_line(full.log[first.log.size() + i]));
}

TEST_F(TrainerTest, BestStateTracksValidation) {
  const MetaTrainResult r = meta_train(small(), splits.base, init, {&splits.val});
  ASSERT_EQ(r.validation.size(), 2u);
  const Real best = std::max(r.validation[0].accuracy, r.validation[1].accuracy);
  EXPECT_EQ(r.best_val_accuracy, best);
}

TEST_F(TrainerTest, LogLineKeys) {
  StepMetrics m;
  m.step = 3;
  const std::string line = to_log_line(m);
  for (const char* key : {"\"step\"", "\"episode\"", "\"ce\"", "\"inter\"", "\"intra\"", "\"forget\"", "\"total\"",
                          "\"acc\"", "\"cache\"", "\"replayed\""})
    EXPECT_NE(line.find(key), std::string::npos) << key;
  EXPECT_EQ(line.find('\n'), std::string::npos);
}

// mlp-2 with d = 8 on 3-way 2-shot 2-query episodes.
class GradCheckTest : public ::testing::TestWithParam<int> {
 protected:
  SplitSet splits = make_synthetic_splits({8, 20, 4.0, 1.0, 5}, {12, 5, 6});
  EncoderState state = [] {
    EncoderConfig c;
    c.input_shape = {8};
    c.embed_dim = 8;
    c.width = 24;
    c.init_seed = 3;
    return init_encoder(c);
  }();
  TrainConfig cfg = [] {
    TrainConfig t;
    t.shape = {3, 2, 2};
    return t;
  }();
  Episode ep = [this] {
    Rng rng(static_cast<std::uint64_t>(GetParam()));
    return sample_episode(splits.base, {3, 2, 2}, rng, 0);
  }();
  std::uint64_t seed() const { return static_cast<std::uint64_t>(GetParam()); }
};

TEST_P(GradCheckTest, FullObjective) {
  const GradCheckReport r = grad_check(state, ep, cfg, 1e-5, seed());
  EXPECT_EQ(r.num_checked, 200);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradCheckTest, CeOnly) {
  cfg.toggles = toggles_for(Ablation::kCeOnly);
  EXPECT_LT(grad_check(state, ep, cfg, 1e-5, seed()).max_rel_error, 1e-5);
}

TEST_P(GradCheckTest, StepSizeDoesNotMatter) {
  EXPECT_LT(grad_check(state, ep, cfg, 1e-5, seed()).max_rel_error, 1e-4);
  EXPECT_LT(grad_check(state, ep, cfg, 1e-6, seed()).max_rel_error, 1e-4);
}

TEST_P(GradCheckTest, LossVariants) {
  cfg.loss.inter_denominator = InterDenominator::kInfoNce;
  cfg.loss.forget_norm = ForgetNorm::kGlobal;
  cfg.loss.ce_on_hybrid = true;
  EXPECT_LT(grad_check(state, ep, cfg, 1e-5, seed()).max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheckTest, ::testing::Range(0, 5));

TEST(GradCheck, ConvEncoder) {
  const SplitSet splits = make_synthetic_splits({256, 4, 4.0, 1.0, 5}, {4, 2, 2});
  EncoderConfig c;
  c.arch = Arch::kConv4;
  c.input_shape = {1, 16, 16};
  c.embed_dim = 8;
  c.width = 3;
  c.init_seed = 4;
  TrainConfig cfg;
  cfg.shape = {3, 1, 2};
  Rng rng(1);
  const Episode ep = sample_episode(splits.base, cfg.shape, rng, 0);
  const GradCheckReport r = grad_check(init_encoder(c), ep, cfg, 1e-5, 1);
  EXPECT_EQ(r.num_checked, 200);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace mlcc
