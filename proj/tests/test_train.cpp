#include <gtest/gtest.h>

#include "folio/pipeline.hpp"
#include "folio/synthetic.hpp"
#include "support.hpp"

using namespace folio;
using namespace testing_support;

namespace {

struct Fixture {
  MarketPanel panel = synthetic_market({.days = 160, .drift = {0.004, 0.0, -0.002}, .seed = 21});
  Dataset ds = prepare_dataset(panel, 6, kDefaultRidge, std::nullopt, 130);
  std::vector<std::size_t> train_dates, val_dates;

  Fixture() {
    for (std::size_t t : ds.decision_dates) (t + 1 < 130 ? train_dates : val_dates).push_back(t);
  }
};

TrainConfig small_config() {
  TrainConfig c;
  c.model.hidden = 6;
  c.epochs = 3;
  c.batch_length = 16;
  c.lr = 3e-3;
  c.seed = 5;
  return c;
}

nlohmann::json minimal_config() {
  return {{"panel", "p.json"},
          {"split",
           {{"train_start", "2020-01-01"},
            {"train_end", "2020-06-01"},
            {"test_start", "2020-06-01"},
            {"test_end", "2020-08-01"}}}};
}

}  // namespace

TEST(Train, ChunksAreContiguousAndFoldShortTail) {
  std::vector<std::size_t> d(9);
  std::iota(d.begin(), d.end(), 10);
  const auto c = detail::contiguous_chunks(d, 4);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0], (std::vector<std::size_t>{10, 11, 12, 13}));
  EXPECT_EQ(c[1].size(), 5u);
  EXPECT_EQ(c[1].back(), 18u);
  EXPECT_THROW(detail::contiguous_chunks(d, 1), ConfigError);
}

TEST(Train, IsDeterministicForAFixedSeed) {
  const Fixture f;
  const TrainResult a = train(f.ds, f.train_dates, {}, small_config());
  const TrainResult b = train(f.ds, f.train_dates, {}, small_config());
  EXPECT_TRUE(a.params == b.params);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(a.log[e].loss_total, b.log[e].loss_total);
  EXPECT_EQ(a.selected_epoch, 3u);
  TrainConfig other = small_config();
  other.seed = 6;
  EXPECT_FALSE(train(f.ds, f.train_dates, {}, other).params == a.params);
}

TEST(Train, ValidationSelectsBestEpoch) {
  const Fixture f;
  TrainConfig c = small_config();
  c.epochs = 4;
  const TrainResult r = train(f.ds, f.train_dates, f.val_dates, c);
  ASSERT_EQ(r.log.size(), 4u);
  double best = -1e300;
  std::size_t arg = 0;
  for (const auto& row : r.log)
    if (row.val_metric > best) {
      best = row.val_metric;
      arg = row.epoch;
    }
  EXPECT_EQ(r.selected_epoch, arg);
  const Prediction p = predict(r.params, c.model, f.ds, f.val_dates);
  EXPECT_NEAR(objective_value(c.objective, realized_returns(f.ds, p, c.cost), {c.delta.constant}), best, 1e-12);
}

TEST(Train, LossWeightsOnlyMoveWithAuxiliaryLosses) {
  const Fixture f;
  TrainConfig c = small_config();
  c.auxiliary = false;
  const TrainResult plain = train(f.ds, f.train_dates, {}, c);
  EXPECT_EQ(plain.params.at("loss.s_m").item(), 0.0);
  EXPECT_EQ(plain.log.back().loss_pred, 0.0);
  c.auxiliary = true;
  const TrainResult multi = train(f.ds, f.train_dates, {}, c);
  EXPECT_NE(multi.params.at("loss.s_m").item(), 0.0);
  EXPECT_GT(multi.log.back().loss_rank, 0.0);
}

TEST(Train, EveryObjectiveRuns) {
  const Fixture f;
  for (Objective o : {Objective::kMaxCum, Objective::kMaxSharpe, Objective::kMinDown}) {
    TrainConfig c = small_config();
    c.epochs = 1;
    c.objective = o;
    const TrainResult r = train(f.ds, f.train_dates, {}, c);
    EXPECT_FALSE(r.diverged);
    EXPECT_TRUE(std::isfinite(r.log[0].loss_total));
  }
}

TEST(Train, BenchmarkDeltaMustBeAPanelAsset) {
  const Fixture f;
  TrainConfig c = small_config();
  c.epochs = 1;
  c.objective = Objective::kMinDown;
  c.delta = DeltaSpec::parse("benchmark:A02");
  const ad::Tensor d = detail::delta_tensor(f.ds, c.delta, {70, 71});
  EXPECT_EQ(d[1], f.ds.returns.r(1, 71));
  EXPECT_NO_THROW(train(f.ds, f.train_dates, {}, c));
  c.delta = DeltaSpec::parse("benchmark:SPY");
  EXPECT_THROW(train(f.ds, f.train_dates, {}, c), ConfigError);
}

TEST(Train, RejectsBadInputs) {
  const Fixture f;
  TrainConfig c = small_config();
  EXPECT_THROW(train(f.ds, {f.train_dates[0]}, {}, c), DataError);
  c.epochs = 0;
  EXPECT_THROW(train(f.ds, f.train_dates, {}, c), ConfigError);
}

TEST(DeltaSpec, Parsing) {
  EXPECT_EQ(DeltaSpec::parse("0.01").constant, 0.01);
  EXPECT_FALSE(DeltaSpec::parse("-0.002").benchmark);
  EXPECT_EQ(*DeltaSpec::parse("benchmark:BTC").benchmark, "BTC");
  EXPECT_EQ(DeltaSpec::parse("benchmark:BTC").str(), "benchmark:BTC");
  for (const char* bad : {"", "abc", "0.1x", "benchmark:", "inf"}) EXPECT_THROW(DeltaSpec::parse(bad), ConfigError) << bad;
}

TEST(Checkpoint, JsonRoundTripIsExact) {
  TempDir dir("ck");
  const Fixture f;
  Checkpoint c;
  c.model = {6, MixingMode::kCovariance};
  c.window = 6;
  c.assets = f.ds.assets;
  c.norm = f.ds.norm;
  c.params = train(f.ds, f.train_dates, {}, small_config()).params;
  save_checkpoint(c, dir / "c.json");
  const Checkpoint d = load_checkpoint(dir / "c.json");
  EXPECT_TRUE(d.params == c.params);
  EXPECT_EQ(d.norm.mean, c.norm.mean);
  EXPECT_EQ(d.norm.std, c.norm.std);
  EXPECT_EQ(d.assets, c.assets);
  EXPECT_EQ(d.model.mixing, MixingMode::kCovariance);
  nlohmann::json j = checkpoint_to_json(c);
  j["format"] = "something-else";
  EXPECT_THROW(checkpoint_from_json(j), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), DataError);
}

TEST(Config, DefaultsAndCanonicalForm) {
  const RunConfig c = run_config_from_json(minimal_config());
  EXPECT_EQ(c.window, 20u);
  EXPECT_EQ(c.train.cost, 0.0);
  EXPECT_EQ(c.train.delta.constant, 0.005);
  EXPECT_EQ(c.train.objective, Objective::kMaxSharpe);
  EXPECT_TRUE(c.train.auxiliary);
  EXPECT_NO_THROW(validate(c));
  const RunConfig d = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(d), run_config_to_json(c));
  EXPECT_EQ(config_hash(d), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, HashTracksValues) {
  nlohmann::json j = minimal_config();
  const std::string h0 = config_hash(run_config_from_json(j));
  j["seed"] = 99;
  EXPECT_NE(config_hash(run_config_from_json(j)), h0);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto expect_config_error = [](nlohmann::json j) {
    EXPECT_THROW(validate(run_config_from_json(j)), ConfigError) << j.dump();
  };
  nlohmann::json j = minimal_config();
  j["learning_rate"] = 0.1;
  expect_config_error(j);
  j = minimal_config();
  j["split"]["valid_start"] = "2020-05-01";
  expect_config_error(j);
  j = minimal_config();
  j["improve"] = {{"step", 3}};
  expect_config_error(j);
  j = minimal_config();
  j["window"] = "twenty";
  expect_config_error(j);
  j = minimal_config();
  j["objective"] = "maxreturn";
  expect_config_error(j);
  j = minimal_config();
  j["delta"] = true;
  expect_config_error(j);
  j = minimal_config();
  j["split"]["test_end"] = "2023/10/32";
  expect_config_error(j);
  j = minimal_config();
  j["lr"] = -1.0;
  expect_config_error(j);
  j = minimal_config();
  j["sigma_g"] = {0.01, -0.02};
  expect_config_error(j);
}

TEST(Config, BenchmarkDeltaAndImproveSection) {
  nlohmann::json j = minimal_config();
  j["delta"] = "benchmark:A01";
  j["improve"] = {{"steps", 7}, {"return_weight", 0.0}};
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(*c.train.delta.benchmark, "A01");
  EXPECT_EQ(c.improve.steps, 7u);
  EXPECT_EQ(c.improve.return_weight, 0.0);
  EXPECT_EQ(run_config_to_json(c).at("delta"), "benchmark:A01");
}

TEST(Pipeline, TrainingThenTestPrediction) {
  TempDir dir("pl");
  const MarketPanel panel = synthetic_market({.days = 260, .drift = {0.003, 0.0}, .seed = 22});
  RunConfig c;
  c.window = 8;
  c.split = SplitSpec{panel.calendar[0], panel.calendar[179], panel.calendar[179], panel.calendar[259], panel.calendar[150]};
  c.train.model.hidden = 4;
  c.train.epochs = 2;
  c.train.batch_length = 32;
  const TrainingRun run = run_training(c, panel);
  EXPECT_GT(run.train_dates, 0u);
  EXPECT_GT(run.validation_dates, 0u);
  Dataset ds;
  const Prediction p = model_test_prediction(c, panel, run.checkpoint, &ds);
  EXPECT_EQ(ds.calendar[p.dates.front()], panel.calendar[179]);
  EXPECT_EQ(ds.calendar[p.dates.back() + 1], panel.calendar[259]);
  Checkpoint wrong = run.checkpoint;
  wrong.assets = {"X", "Y"};
  EXPECT_THROW(model_test_prediction(c, panel, wrong), DataError);
}
