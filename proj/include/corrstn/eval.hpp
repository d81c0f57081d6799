#pragma once

#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corrstn/data.hpp"
#include "corrstn/error.hpp"
#include "corrstn/model.hpp"

namespace corrstn::eval {

inline void check_shapes(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metric inputs differ in length (" + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw DimensionError("metric inputs are empty");
}

inline double mae(std::span<const double> pred, std::span<const double> truth) {
  check_shapes(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_shapes(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

struct MapeResult {
  double value = NAN;  // fraction, not percent
  std::size_t masked = 0;
  bool undefined = false;
};

/// Points with truth == 0 are excluded from numerator and denominator.
inline MapeResult mape_detail(std::span<const double> pred, std::span<const double> truth) {
  check_shapes(pred, truth);
  MapeResult r;
  double s = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] == 0.0) {
      ++r.masked;
      continue;
    }
    s += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
    ++used;
  }
  r.undefined = used == 0;
  if (!r.undefined) r.value = s / static_cast<double>(used);
  return r;
}

inline double mape(std::span<const double> pred, std::span<const double> truth) {
  return mape_detail(pred, truth).value;
}

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = NAN;
  bool mape_undefined = false;
};

struct MetricReport {
  Metrics overall;
  std::vector<Metrics> per_horizon;
  std::size_t n_points = 0;
  std::size_t mape_masked = 0;

  bool operator==(const MetricReport& o) const {
    auto same = [](const Metrics& a, const Metrics& b) {
      auto eq = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
      return eq(a.mae, b.mae) && eq(a.rmse, b.rmse) && eq(a.mape, b.mape) && a.mape_undefined == b.mape_undefined;
    };
    if (!same(overall, o.overall) || per_horizon.size() != o.per_horizon.size()) return false;
    for (std::size_t h = 0; h < per_horizon.size(); ++h) {
      if (!same(per_horizon[h], o.per_horizon[h])) return false;
    }
    return n_points == o.n_points && mape_masked == o.mape_masked;
  }
};

inline Metrics metrics(std::span<const double> pred, std::span<const double> truth) {
  const auto m = mape_detail(pred, truth);
  return {mae(pred, truth), rmse(pred, truth), m.value, m.undefined};
}

/// Report over stacked forecasts laid out [samples, L, N] (flattened): the
/// horizon of element i is (i / N) % L.
inline MetricReport report(std::span<const double> pred, std::span<const double> truth, std::size_t horizon,
                           std::size_t sensors) {
  check_shapes(pred, truth);
  if (horizon == 0 || sensors == 0 || pred.size() % (horizon * sensors) != 0) {
    throw DimensionError("forecast length is not a multiple of L * N");
  }
  MetricReport r;
  r.overall = metrics(pred, truth);
  r.n_points = pred.size();
  r.mape_masked = mape_detail(pred, truth).masked;
  std::vector<std::vector<double>> ph(horizon), th(horizon);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t h = (i / sensors) % horizon;
    ph[h].push_back(pred[i]);
    th[h].push_back(truth[i]);
  }
  for (std::size_t h = 0; h < horizon; ++h) r.per_horizon.push_back(metrics(ph[h], th[h]));
  return r;
}

/// Autoregressive forecasts of the model for every anchor, compared with the
/// stored targets on denormalized values.
inline MetricReport evaluate(const model::Model& m, const data::TrafficDataset& ds,
                             const SpatioTemporalTensor& normalized, std::span<const std::size_t> anchors) {
  if (anchors.empty()) throw DataError("evaluate: the test split holds no complete sample");
  const auto& cfg = m.config();
  const auto layout = cfg.layout();
  std::vector<double> pred, truth;
  for (std::size_t t : anchors) {
    const auto p = model::predict(m, ds.norm_params, normalized, t);
    pred.insert(pred.end(), p.values().begin(), p.values().end());
    for (std::size_t k = 1; k <= layout.horizon; ++k) {
      for (std::size_t i = 0; i < ds.sensors(); ++i) truth.push_back(ds.tensor(t + k, i, layout.target_attribute));
    }
  }
  return report(pred, truth, layout.horizon, ds.sensors());
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["mae"] = m.mae;
  j["rmse"] = m.rmse;
  j["mape"] = m.mape_undefined ? nlohmann::json(nullptr) : nlohmann::json(m.mape);
  return j;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["overall"] = metrics_to_json(r.overall);
  j["n_points"] = r.n_points;
  j["mape_masked"] = r.mape_masked;
  j["per_horizon"] = nlohmann::json::array();
  for (const auto& m : r.per_horizon) j["per_horizon"].push_back(metrics_to_json(m));
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  auto read = [](const nlohmann::json& o) {
    Metrics m;
    m.mae = o.at("mae").get<double>();
    m.rmse = o.at("rmse").get<double>();
    if (o.at("mape").is_null()) {
      m.mape_undefined = true;
    } else {
      m.mape = o.at("mape").get<double>();
    }
    return m;
  };
  MetricReport r;
  r.overall = read(j.at("overall"));
  r.n_points = j.at("n_points").get<std::size_t>();
  r.mape_masked = j.at("mape_masked").get<std::size_t>();
  for (const auto& h : j.at("per_horizon")) r.per_horizon.push_back(read(h));
  return r;
}

/// horizon,mae,rmse,mape_percent; one row per step.
inline void write_horizon_csv(std::ostream& os, const MetricReport& r) {
  os << "horizon,mae,rmse,mape_percent\n";
  os.precision(10);
  for (std::size_t h = 0; h < r.per_horizon.size(); ++h) {
    const auto& m = r.per_horizon[h];
    os << h + 1 << ',' << m.mae << ',' << m.rmse << ',';
    if (m.mape_undefined) os << "nan";
    else os << m.mape * 100.0;
    os << '\n';
  }
}

/// Mean and sample standard deviation (n - 1) across runs.
struct MeanStd {
  double mean = NAN;
  double std = NAN;
};

inline MeanStd mean_std(std::span<const double> runs) {
  MeanStd r;
  if (runs.empty()) return r;
  double s = 0.0;
  for (double v : runs) s += v;
  r.mean = s / static_cast<double>(runs.size());
  if (runs.size() < 2) {
    r.std = 0.0;
    return r;
  }
  double q = 0.0;
  for (double v : runs) q += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(q / static_cast<double>(runs.size() - 1));
  return r;
}

}  // namespace corrstn::eval
