#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "corrstn/data.hpp"

using namespace corrstn;
using tcorr::Period;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("corrstn_test_" + name);
}

data::TrafficDataset indexed_dataset(std::size_t t, std::size_t n) {
  data::TrafficDataset ds;
  std::vector<double> v(t * n);
  for (std::size_t k = 0; k < t; ++k) {
    for (std::size_t i = 0; i < n; ++i) v[k * n + i] = static_cast<double>(k);
  }
  ds.tensor = SpatioTemporalTensor(t, n, 1, std::move(v));
  ds.sensor_ids = data::default_sensor_ids(n);
  ds.adjacency.assign(n * n, 0.0);
  return ds;
}

}  // namespace

TEST(TensorCsv, TwoSensorsFourTimestamps) {
  std::istringstream is(
      "timestamp,sensor,flow\n"
      "t0,a,1\nt0,b,2\nt1,a,3\nt1,b,4\nt2,a,5\nt2,b,6\nt3,a,7\nt3,b,8\n");
  std::vector<std::string> ids;
  const auto x = data::read_tensor_csv(is, &ids);
  EXPECT_EQ(x.timestamps(), 4u);
  EXPECT_EQ(x.sensors(), 2u);
  EXPECT_EQ(x.attributes(), 1u);
  EXPECT_EQ(ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(x(3, 1, 0), 8.0);
}

TEST(TensorCsv, RejectsMissingAndNonFinite) {
  std::istringstream gap("timestamp,sensor,flow\nt0,a,1\nt0,b,2\nt1,a,3\n");
  EXPECT_THROW(data::read_tensor_csv(gap), DataError);
  std::istringstream nan("timestamp,sensor,flow\nt0,a,nan\n");
  EXPECT_THROW(data::read_tensor_csv(nan), DataError);
  std::istringstream header("time,sensor,flow\n");
  EXPECT_THROW(data::read_tensor_csv(header), DataError);
}

TEST(TensorBinary, RoundTrip) {
  data::SyntheticSpec sp;
  sp.sensors = 3;
  sp.timestamps = 50;
  sp.attributes = 2;
  const auto ds = data::generate_synthetic(sp, 1);
  std::stringstream ss;
  data::write_tensor(ss, ds.tensor);
  const auto back = data::read_tensor(ss);
  EXPECT_EQ(back.timestamps(), 50u);
  EXPECT_EQ(back.interval_minutes(), 5);
  EXPECT_TRUE(std::equal(back.values().begin(), back.values().end(), ds.tensor.values().begin()));
  std::stringstream bad("XXXX");
  EXPECT_THROW(data::read_tensor(bad), DataError);
}

TEST(Edges, UndirectedSymmetrizedDirectedNot) {
  const std::vector<std::string> ids{"a", "b", "c"};
  std::istringstream u("from,to,weight\na,b,0.5\n");
  const auto au = data::read_edges_csv(u, ids);
  EXPECT_EQ(au[0 * 3 + 1], 0.5);
  EXPECT_EQ(au[1 * 3 + 0], 0.5);
  std::istringstream d("from,to,weight,directed\na,b,0.5\n");
  const auto ad = data::read_edges_csv(d, ids);
  EXPECT_EQ(ad[0 * 3 + 1], 0.5);
  EXPECT_EQ(ad[1 * 3 + 0], 0.0);
  std::istringstream dist("from,to,cost\na,c,420.5\n");
  EXPECT_EQ(data::read_edges_csv(dist, ids)[0 * 3 + 2], 1.0);
  std::istringstream unknown("from,to\na,z\n");
  EXPECT_THROW(data::read_edges_csv(unknown, ids), DataError);
}

TEST(Edges, MetroShapedGraph) {
  // 80 stations, 168 undirected edges: a ring (80), skip-2 chords (80) and 8 skip-5 chords.
  std::ostringstream csv;
  csv << "from,to,undirected\n";
  std::set<std::pair<int, int>> edges;
  auto add = [&](int a, int b) {
    edges.insert({std::min(a, b), std::max(a, b)});
    csv << a << ',' << b << '\n';
  };
  for (int i = 0; i < 80; ++i) add(i, (i + 1) % 80);
  for (int i = 0; i < 80; ++i) add(i, (i + 2) % 80);
  for (int i = 0; i < 8; ++i) add(i * 10, i * 10 + 5);
  ASSERT_EQ(edges.size(), 168u);
  std::istringstream is(csv.str());
  const auto adj = data::read_edges_csv(is, data::default_sensor_ids(80));
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < 80; ++i) {
    for (std::size_t j = 0; j < 80; ++j) nonzero += (i != j && adj[i * 80 + j] != 0.0) ? 1 : 0;
  }
  EXPECT_EQ(nonzero, 336u);
}

TEST(LoadDataset, CsvAndBinaryWithEdges) {
  const auto tensor_csv = temp_file("tensor.csv");
  const auto tensor_bin = temp_file("tensor.sttf");
  const auto edges = temp_file("edges.csv");
  {
    std::ofstream os(tensor_csv);
    os << "timestamp,sensor,flow,speed\n0,s1,1,60\n0,s2,2,61\n1,s1,3,62\n1,s2,4,63\n";
    std::ofstream es(edges);
    es << "from,to\ns1,s2\n";
  }
  const auto ds = data::load_dataset(tensor_csv.string(), edges.string());
  EXPECT_EQ(ds.attributes(), 2u);
  EXPECT_EQ(ds.adjacency, (std::vector<double>{0, 1, 1, 0}));
  data::save_tensor(tensor_bin.string(), ds.tensor);
  const auto bin = data::load_dataset(tensor_bin.string());
  EXPECT_EQ(bin.tensor(1, 1, 1), 63.0);
  EXPECT_THROW(data::load_dataset("/nonexistent.sttf"), DataError);
  std::filesystem::remove(tensor_csv);
  std::filesystem::remove(tensor_bin);
  std::filesystem::remove(edges);
}

TEST(Normalize, EndpointsMidpointAndRoundTrip) {
  auto ds = indexed_dataset(100, 2);
  data::fit_normalization(ds, {0, 60});
  const data::NormParams p = ds.norm_params[0];
  EXPECT_EQ(p.min, 0.0);
  EXPECT_EQ(p.max, 59.0);
  EXPECT_EQ(data::normalize_value(p.min, p), -1.0);
  EXPECT_EQ(data::normalize_value(p.max, p), 1.0);
  EXPECT_EQ(data::normalize_value(0.5 * (p.min + p.max), p), 0.0);
  const auto xn = data::normalize(ds);
  const auto back = data::denormalize(xn.values(), ds);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], ds.tensor.values()[i], 1e-12);
}

TEST(Normalize, UsesTrainingRangeOnly) {
  auto a = indexed_dataset(100, 1);
  auto b = a;
  b.tensor(90, 0, 0) = 1e6;
  data::fit_normalization(a, {0, 60});
  data::fit_normalization(b, {0, 60});
  EXPECT_EQ(a.norm_params[0].min, b.norm_params[0].min);
  EXPECT_EQ(a.norm_params[0].max, b.norm_params[0].max);
}

TEST(Normalize, DegenerateAttribute) {
  data::TrafficDataset ds;
  ds.tensor = SpatioTemporalTensor(10, 1, 1, std::vector<double>(10, 3.0));
  EXPECT_THROW(data::fit_normalization(ds, {0, 10}), DataError);
  EXPECT_THROW(data::normalize(ds), ConfigError);
}

TEST(Split, SixTwoTwo) {
  const auto s = data::split(100);
  EXPECT_EQ(s.train, (data::Range{0, 60}));
  EXPECT_EQ(s.val, (data::Range{60, 80}));
  EXPECT_EQ(s.test, (data::Range{80, 100}));
  for (std::size_t t : {7u, 13u, 1001u}) {
    const auto r = data::split(t);
    EXPECT_EQ(r.train.begin, 0u);
    EXPECT_EQ(r.train.end, r.val.begin);
    EXPECT_EQ(r.val.end, r.test.begin);
    EXPECT_EQ(r.test.end, t);
  }
  EXPECT_THROW(data::split(100, {0.5, 0.2, 0.2}), ConfigError);
  EXPECT_THROW(data::split(2), DataError);
}

TEST(Samples, EncoderLengthPerLayout) {
  data::SampleLayout l;
  EXPECT_EQ(l.encoder_length(), 12u);
  l.periods = tcorr::PeriodSet::parse("h,d,w");
  EXPECT_EQ(l.encoder_length(), 36u);
}

TEST(Samples, IndexValuedWindows) {
  const auto ds = indexed_dataset(2016 + 100, 2);
  data::SampleLayout l;
  l.periods = tcorr::PeriodSet::parse("h,d,w");
  const std::size_t t = 2040;
  const auto s = data::make_sample(ds.tensor, t, l);
  ASSERT_EQ(s.encoder.shape(), (nn::Shape{36, 2, 1}));
  const std::size_t starts[3] = {t + 1 - 2016, t + 1 - 288, t + 1 - 12};  // weekly, daily, hourly
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t k = 0; k < 12; ++k) {
      for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(s.encoder[((b * 12 + k) * 2 + i)], static_cast<double>(starts[b] + k));
      }
    }
  }
  for (std::size_t k = 0; k < 12; ++k) {
    EXPECT_EQ(s.decoder[k * 2], static_cast<double>(t + k));
    EXPECT_EQ(s.target[k * 2 + 1], static_cast<double>(t + 1 + k));
  }
}

TEST(Samples, CountMatchesClosedFormExhaustively) {
  data::SampleLayout l;
  l.spec = tcorr::PeriodSpec{2, 2, 4, 8};
  for (const char* periods : {"h", "h,d", "h,d,w", "h,w"}) {
    l.periods = tcorr::PeriodSet::parse(periods);
    std::size_t deepest = 2;
    if (l.periods.contains(Period::daily)) deepest = 4;
    if (l.periods.contains(Period::weekly)) deepest = 8;
    for (std::size_t horizon : {1u, 3u}) {
      l.horizon = horizon;
      for (std::size_t begin = 0; begin < 20; ++begin) {
        for (std::size_t end = begin; end <= 30; ++end) {
          const auto a = data::sample_anchors({begin, end}, l);
          const long lo = std::max<long>(static_cast<long>(begin) - 1, static_cast<long>(deepest) - 1);
          const long hi = static_cast<long>(end) - static_cast<long>(horizon) - 1;
          const long expect = std::max<long>(0, hi - std::max<long>(lo, 0) + 1);
          ASSERT_EQ(static_cast<long>(a.size()), expect) << periods << ' ' << begin << ' ' << end;
        }
      }
    }
  }
}

TEST(Samples, WeeklyCapableSplitHasNoLeakage) {
  const std::size_t t_count = 2016 * 4;
  const auto splits = data::split(t_count);
  data::SampleLayout l;
  l.periods = tcorr::PeriodSet::parse("h,d,w");
  for (const auto& r : {splits.train, splits.val, splits.test}) {
    const auto anchors = data::sample_anchors(r, l);
    ASSERT_FALSE(anchors.empty());
    for (std::size_t t : anchors) {
      const std::size_t lookback = tcorr::period_window_begin(t, Period::weekly, l.spec);
      EXPECT_LE(lookback + l.spec.tau - 1, t);
      EXPECT_GE(t + 1, r.begin);
      EXPECT_LE(t + l.horizon, r.end - 1);
    }
  }
}

TEST(Samples, BatchStacksSamples) {
  const auto ds = indexed_dataset(200, 3);
  data::SampleLayout l;
  const std::vector<std::size_t> anchors{20, 40};
  const auto b = data::make_batch(ds.tensor, anchors, l);
  EXPECT_EQ(b.encoder_input.shape(), (nn::Shape{2, 12, 3, 1}));
  EXPECT_EQ(b.decoder_input.shape(), (nn::Shape{2, 12, 3, 1}));
  EXPECT_EQ(b.target[12 * 3], 41.0);
  EXPECT_THROW(data::make_sample(ds.tensor, 195, l), RangeError);
}

TEST(Synthetic, SeededAndRing) {
  data::SyntheticSpec sp;
  sp.sensors = 5;
  sp.weeks = 2;
  const auto a = data::generate_synthetic(sp, 42);
  const auto b = data::generate_synthetic(sp, 42);
  const auto c = data::generate_synthetic(sp, 43);
  EXPECT_TRUE(std::equal(a.tensor.values().begin(), a.tensor.values().end(), b.tensor.values().begin()));
  EXPECT_FALSE(std::equal(a.tensor.values().begin(), a.tensor.values().end(), c.tensor.values().begin()));
  EXPECT_EQ(a.timestamps(), 2u * 2016u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.adjacency[i * 5 + (i + 1) % 5], 1.0);
    EXPECT_EQ(a.adjacency[((i + 1) % 5) * 5 + i], 1.0);
    EXPECT_EQ(a.adjacency[i * 5 + i], 0.0);
  }
}

TEST(Synthetic, NoiselessDailySignalRepeatsExactly) {
  data::SyntheticSpec sp;
  sp.sensors = 2;
  sp.weeks = 2;
  sp.noise_sigma = 0.0;
  const auto ds = data::generate_synthetic(sp, 3);
  for (std::size_t t = 0; t + 288 < ds.timestamps(); t += 97) EXPECT_EQ(ds.tensor(t, 1, 0), ds.tensor(t + 288, 1, 0));
}
