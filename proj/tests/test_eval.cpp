#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "corrstn/eval.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace corrstn;

TEST(Metrics, WorkedExample) {
  const std::vector<double> pred{2, 4}, truth{1, 2};
  EXPECT_DOUBLE_EQ(eval::mae(pred, truth), 1.5);
  EXPECT_DOUBLE_EQ(eval::rmse(pred, truth), std::sqrt(2.5));
  EXPECT_DOUBLE_EQ(eval::mape(pred, truth), 1.0);
  const std::vector<double> p2{1.5, 3}, t2{1, 2};
  EXPECT_DOUBLE_EQ(eval::mape(p2, t2), 0.5);
  const std::vector<double> p3{3, 5, 2}, t3{2, 4, 4};
  EXPECT_DOUBLE_EQ(eval::mae(p3, t3), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(eval::mape(p3, t3), (0.5 + 0.25 + 0.5) / 3.0);
}

TEST(Metrics, IdentityAndUnitOffset) {
  const std::vector<double> truth{3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_EQ(eval::mae(truth, truth), 0.0);
  EXPECT_EQ(eval::rmse(truth, truth), 0.0);
  EXPECT_EQ(eval::mape(truth, truth), 0.0);
  std::vector<double> shifted = truth;
  for (double& v : shifted) v += 1.0;
  EXPECT_DOUBLE_EQ(eval::mae(shifted, truth), 1.0);
  EXPECT_DOUBLE_EQ(eval::rmse(shifted, truth), 1.0);
}

TEST(Metrics, MatchLoopOracleOnRandomShapes) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  std::normal_distribution<double> d(50.0, 20.0);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = len(rng);
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = d(rng);
      t[i] = d(rng);
    }
    const auto o = oracle::metrics(p, t);
    const auto m = eval::metrics(p, t);
    EXPECT_NEAR(m.mae, o.mae, 1e-9);
    EXPECT_NEAR(m.rmse, o.rmse, 1e-9);
    EXPECT_NEAR(m.mape, o.mape, 1e-9);
    EXPECT_LE(m.mae, m.rmse + 1e-12);
    // A common shift of prediction and truth leaves MAE and RMSE alone.
    for (std::size_t i = 0; i < n; ++i) {
      p[i] += 7.0;
      t[i] += 7.0;
    }
    EXPECT_NEAR(eval::mae(p, t), m.mae, 1e-9);
    EXPECT_NEAR(eval::rmse(p, t), m.rmse, 1e-9);
  }
}

TEST(Metrics, ZeroTruthIsMasked) {
  const std::vector<double> pred{1, 5, 3}, truth{0, 4, 0};
  const auto r = eval::mape_detail(pred, truth);
  EXPECT_EQ(r.masked, 2u);
  EXPECT_FALSE(r.undefined);
  EXPECT_DOUBLE_EQ(r.value, 0.25);
  const std::vector<double> zeros{0, 0};
  const auto all = eval::mape_detail(std::vector<double>{1, 2}, zeros);
  EXPECT_TRUE(all.undefined);
  EXPECT_TRUE(std::isnan(all.value));
  EXPECT_EQ(eval::report_to_json(eval::report(std::vector<double>{1, 2}, zeros, 1, 2))["overall"]["mape"], nullptr);
}

TEST(Metrics, ShapeErrors) {
  EXPECT_THROW(eval::mae(std::vector<double>{1}, std::vector<double>{1, 2}), DimensionError);
  EXPECT_THROW(eval::mae(std::vector<double>{}, std::vector<double>{}), DimensionError);
  EXPECT_THROW(eval::report(std::vector<double>(10, 0.0), std::vector<double>(10, 0.0), 12, 1), DimensionError);
}

TEST(Report, PerHorizonBreakdown) {
  // Two samples, L = 3, N = 2; horizon h has error h + 1 everywhere.
  std::vector<double> pred, truth;
  for (int s = 0; s < 2; ++s) {
    for (int h = 0; h < 3; ++h) {
      for (int i = 0; i < 2; ++i) {
        truth.push_back(10.0);
        pred.push_back(10.0 + h + 1);
      }
    }
  }
  const auto r = eval::report(pred, truth, 3, 2);
  ASSERT_EQ(r.per_horizon.size(), 3u);
  for (std::size_t h = 0; h < 3; ++h) EXPECT_DOUBLE_EQ(r.per_horizon[h].mae, static_cast<double>(h + 1));
  EXPECT_DOUBLE_EQ(r.overall.mae, 2.0);
  EXPECT_EQ(r.n_points, 12u);
}

TEST(Report, ConstantZeroPredictorScoresMeanAbsoluteTruth) {
  const std::vector<double> truth{3, -1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8};
  const std::vector<double> zero(truth.size(), 0.0);
  double mean_abs = 0.0;
  for (double v : truth) mean_abs += std::abs(v) / static_cast<double>(truth.size());
  EXPECT_DOUBLE_EQ(eval::report(zero, truth, 12, 1).overall.mae, mean_abs);
}

TEST(Report, HorizonCsvAndJsonRoundTrip) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  std::vector<double> pred(12 * 5 * 3), truth(12 * 5 * 3);
  for (auto& v : pred) v = u(rng);
  for (auto& v : truth) v = u(rng);
  const auto r = eval::report(pred, truth, 12, 5);
  std::ostringstream csv;
  eval::write_horizon_csv(csv, r);
  const auto text = csv.str();
  EXPECT_EQ(text.rfind("horizon,mae,rmse,mape_percent\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
  EXPECT_EQ(eval::report_from_json(eval::report_to_json(r)), r);
}

TEST(MeanStd, SampleStandardDeviation) {
  const std::vector<double> runs{2, 4, 4, 4, 5, 5, 7, 9};
  const auto r = eval::mean_std(runs);
  EXPECT_DOUBLE_EQ(r.mean, 5.0);
  EXPECT_DOUBLE_EQ(r.std, std::sqrt(32.0 / 7.0));
  EXPECT_EQ(eval::mean_std(std::vector<double>{3.0}).std, 0.0);
  EXPECT_TRUE(std::isnan(eval::mean_std(std::vector<double>{}).mean));
}

TEST(Evaluate, MatchesManualRollout) {
  data::SyntheticSpec sp;
  sp.sensors = 3;
  sp.timestamps = 240;
  auto p = fixture::prepare(sp, 3);
  model::ModelConfig c = fixture::tiny_config();
  model::Model m(c, p.scorr, p.adjacency);
  const std::vector<std::size_t> anchors{200, 210};
  const auto r = eval::evaluate(m, p.ds, p.normalized, anchors);
  std::vector<double> pred, truth;
  for (std::size_t t : anchors) {
    const auto y = model::predict(m, p.ds.norm_params, p.normalized, t);
    pred.insert(pred.end(), y.values().begin(), y.values().end());
    for (std::size_t k = 1; k <= 12; ++k) {
      for (std::size_t i = 0; i < 3; ++i) truth.push_back(p.ds.tensor(t + k, i, 0));
    }
  }
  const auto o = oracle::metrics(pred, truth);
  EXPECT_NEAR(r.overall.mae, o.mae, 1e-9);
  EXPECT_NEAR(r.overall.rmse, o.rmse, 1e-9);
  EXPECT_EQ(r.per_horizon.size(), 12u);
  EXPECT_THROW(eval::evaluate(m, p.ds, p.normalized, std::vector<std::size_t>{}), DataError);
}
