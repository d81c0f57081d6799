#pragma once

// Temporal correlation of hourly / daily / weekly history with the
// prediction window, the contribution gaps between period types, and the
// resulting periodic-data selection.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corrstn/error.hpp"
#include "corrstn/mic.hpp"
#include "corrstn/spatiotemporal.hpp"

namespace corrstn::tcorr {

enum class Period : std::uint8_t { hourly = 0, daily = 1, weekly = 2 };

inline constexpr std::array<Period, 3> kAllPeriods{Period::hourly, Period::daily, Period::weekly};

inline const char* period_name(Period p) {
  switch (p) {
    case Period::hourly: return "hourly";
    case Period::daily: return "daily";
    case Period::weekly: return "weekly";
  }
  return "?";
}

/// Subset of {hourly, daily, weekly}.
class PeriodSet {
 public:
  constexpr PeriodSet() = default;
  constexpr PeriodSet(std::initializer_list<Period> ps) {
    for (Period p : ps) insert(p);
  }

  constexpr bool contains(Period p) const { return bits_ & bit(p); }
  constexpr void insert(Period p) { bits_ |= bit(p); }
  constexpr void erase(Period p) { bits_ &= static_cast<std::uint8_t>(~bit(p)); }
  constexpr std::size_t size() const {
    return (bits_ & 1u) + ((bits_ >> 1) & 1u) + ((bits_ >> 2) & 1u);
  }
  constexpr bool operator==(const PeriodSet&) const = default;

  /// Compact form such as "h,d,w".
  std::string str() const {
    std::string out;
    for (Period p : kAllPeriods) {
      if (!contains(p)) continue;
      if (!out.empty()) out += ',';
      out += period_name(p)[0];
    }
    return out;
  }

  /// Parses "h,d,w" / "hourly,weekly" style lists.
  static PeriodSet parse(const std::string& text) {
    PeriodSet s;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t next = text.find(',', pos);
      if (next == std::string::npos) next = text.size();
      std::string tok = text.substr(pos, next - pos);
      if (tok == "h" || tok == "hourly") s.insert(Period::hourly);
      else if (tok == "d" || tok == "daily") s.insert(Period::daily);
      else if (tok == "w" || tok == "weekly") s.insert(Period::weekly);
      else if (!tok.empty()) throw ConfigError("unknown period '" + tok + "'");
      pos = next + 1;
    }
    return s;
  }

 private:
  static constexpr std::uint8_t bit(Period p) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(p)); }
  std::uint8_t bits_ = 0;
};

/// Window length and per-period offsets, all in timestamps.
struct PeriodSpec {
  std::size_t tau = 12;
  std::size_t hourly_offset = 12;
  std::size_t daily_offset = 288;
  std::size_t weekly_offset = 2016;

  static PeriodSpec for_interval(int interval_minutes, std::size_t tau = 12) {
    if (interval_minutes <= 0 || 60 % interval_minutes != 0) {
      throw ConfigError("interval_minutes must divide 60");
    }
    const std::size_t per_hour = static_cast<std::size_t>(60 / interval_minutes);
    PeriodSpec s{tau, per_hour, per_hour * 24, per_hour * 24 * 7};
    s.validate();
    return s;
  }

  std::size_t offset(Period p) const {
    switch (p) {
      case Period::hourly: return hourly_offset;
      case Period::daily: return daily_offset;
      case Period::weekly: return weekly_offset;
    }
    return 0;
  }

  void validate() const {
    if (tau < 1) throw ConfigError("tau must be at least 1");
    if (!(hourly_offset <= daily_offset && daily_offset <= weekly_offset)) {
      throw ConfigError("period offsets must satisfy hourly <= daily <= weekly");
    }
    if (hourly_offset < tau) throw ConfigError("hourly offset must be at least tau");
  }
};

/// A tau-length slice together with its first timestamp in the source tensor.
struct Window {
  std::size_t begin = 0;
  SpatioTemporalTensor data;
};

struct PeriodicWindows {
  std::optional<Window> hourly;
  std::optional<Window> daily;
  std::optional<Window> weekly;
  Window target;

  const std::optional<Window>& get(Period p) const {
    switch (p) {
      case Period::hourly: return hourly;
      case Period::daily: return daily;
      case Period::weekly: return weekly;
    }
    return hourly;
  }
};

/// First timestamp of the period window anchored at `t`, i.e. t - offset + 1.
inline std::size_t period_window_begin(std::size_t t, Period p, const PeriodSpec& spec) {
  const std::size_t off = spec.offset(p);
  if (t + 1 < off) {
    throw RangeError(std::string("insufficient history for the ") + period_name(p) +
                     " window at t = " + std::to_string(t) + " (needs t >= " +
                     std::to_string(off - 1) + ")");
  }
  return t + 1 - off;
}

/// Period windows [t - offset + 1, t - offset + tau] and the target [t + 1, t + tau].
inline PeriodicWindows extract_periodic_windows(const SpatioTemporalTensor& x, std::size_t t,
                                                const PeriodSpec& spec,
                                                PeriodSet periods = {Period::hourly, Period::daily,
                                                                     Period::weekly}) {
  spec.validate();
  if (t + spec.tau >= x.timestamps()) {
    throw RangeError("target window [t+1, t+tau] runs past the end of the data at t = " +
                     std::to_string(t));
  }
  PeriodicWindows w;
  w.target = {t + 1, x.slice(t + 1, t + 1 + spec.tau)};
  for (Period p : kAllPeriods) {
    if (!periods.contains(p)) continue;
    const std::size_t b = period_window_begin(t, p, spec);
    Window win{b, x.slice(b, b + spec.tau)};
    switch (p) {
      case Period::hourly: w.hourly = std::move(win); break;
      case Period::daily: w.daily = std::move(win); break;
      case Period::weekly: w.weekly = std::move(win); break;
    }
  }
  return w;
}

/// Anchors t in [begin, end) with full weekly history inside the range and a
/// full target window, stepping by tau so that targets never overlap.
inline std::vector<std::size_t> default_anchors(const PeriodSpec& spec, std::size_t begin,
                                                std::size_t end) {
  std::vector<std::size_t> anchors;
  for (std::size_t t = begin + spec.weekly_offset - 1; t + spec.tau < end; t += spec.tau) {
    anchors.push_back(t);
  }
  return anchors;
}

/// Sum in a fixed pairwise tree order, independent of thread scheduling.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double d : v) s += d;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Unweighted temporal correlation, N x C (index i * C + c): the mean over
/// anchors of MIC(period segment, target segment).
inline std::vector<double> compute_tcorr(const SpatioTemporalTensor& x, const PeriodSpec& spec,
                                         Period period, std::span<const std::size_t> anchors,
                                         double eta = mic::kDefaultEta, int threads = 0) {
  spec.validate();
  if (anchors.empty()) throw ComputeError("TCorr has no valid anchor timestamps");
  for (std::size_t t : anchors) {
    period_window_begin(t, period, spec);
    if (t + spec.tau >= x.timestamps()) throw RangeError("anchor target runs past the data");
  }
  const std::size_t n = x.sensors();
  const std::size_t cn = x.attributes();
  const mic::MicEngine engine(spec.tau, eta);
  std::vector<double> out(n * cn, 0.0);
  const auto cells = static_cast<std::ptrdiff_t>(n * cn);
  [[maybe_unused]] const int nt = mic::resolve_threads(threads);
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
  for (std::ptrdiff_t cell = 0; cell < cells; ++cell) {
    const std::size_t i = static_cast<std::size_t>(cell) / cn;
    const std::size_t c = static_cast<std::size_t>(cell) % cn;
    std::vector<double> per_anchor(anchors.size());
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const std::size_t t = anchors[a];
      const std::size_t b = t + 1 - spec.offset(period);
      const auto seg = x.series(i, c, b, b + spec.tau);
      const auto tgt = x.series(i, c, t + 1, t + 1 + spec.tau);
      per_anchor[a] = engine(engine.prepare(seg), engine.prepare(tgt)).score;
    }
    out[static_cast<std::size_t>(cell)] = pairwise_sum(per_anchor) / static_cast<double>(anchors.size());
  }
  return out;
}

/// Per-period multipliers (alpha, beta, gamma).
struct TCorrWeights {
  double hourly = 0.95;
  double daily = 0.95;
  double weekly = 0.85;

  double of(Period p) const {
    switch (p) {
      case Period::hourly: return hourly;
      case Period::daily: return daily;
      case Period::weekly: return weekly;
    }
    return 0.0;
  }
};

inline std::vector<double> weighted_tcorr(std::span<const double> raw, Period period,
                                          const TCorrWeights& weights = {}) {
  const double w = weights.of(period);
  std::vector<double> out(raw.begin(), raw.end());
  for (double& v : out) v *= w;
  return out;
}

/// Gaps between the period means of one attribute.
struct Deltas {
  double hd = 0.0;  // mean(daily)  - mean(hourly)
  double hw = 0.0;  // mean(weekly) - mean(hourly)
  double dw = 0.0;  // mean(weekly) - mean(daily)
};

/// Hourly always; daily if hd > 0; weekly if hw > 0. When both gaps are
/// positive, weekly is kept only for dw > 0 (dw == 0 resolves to daily).
inline PeriodSet select_periods(const Deltas& d) {
  PeriodSet s{Period::hourly};
  if (d.hd > 0.0 && d.hw > 0.0) {
    s.insert(Period::daily);
    if (d.dw > 0.0) s.insert(Period::weekly);
  } else if (d.hd > 0.0) {
    s.insert(Period::daily);
  } else if (d.hw > 0.0) {
    s.insert(Period::weekly);
  }
  return s;
}

/// Single verdict across attributes: a period is kept when a strict majority
/// of attributes selects it (ties drop it). Hourly is always kept.
inline PeriodSet majority_verdict(std::span<const PeriodSet> verdicts) {
  PeriodSet out{Period::hourly};
  for (Period p : {Period::daily, Period::weekly}) {
    std::size_t votes = 0;
    for (const auto& v : verdicts) votes += v.contains(p) ? 1 : 0;
    if (2 * votes > verdicts.size()) out.insert(p);
  }
  return out;
}

struct TCorrReport {
  std::size_t sensors = 0;
  std::size_t attributes = 0;
  std::size_t anchors = 0;
  double eta = mic::kDefaultEta;
  TCorrWeights weights;
  std::array<std::vector<double>, 3> raw;       // per period, N x C
  std::array<std::vector<double>, 3> weighted;  // per period, N x C
  std::array<std::vector<double>, 3> means;     // per period, per attribute (weighted)
  std::vector<Deltas> deltas;                   // per attribute
  std::vector<PeriodSet> verdicts;              // per attribute

  PeriodSet verdict() const { return majority_verdict(verdicts); }
};

inline TCorrReport tcorr_report(const SpatioTemporalTensor& x, const PeriodSpec& spec,
                                std::span<const std::size_t> anchors,
                                double eta = mic::kDefaultEta, const TCorrWeights& weights = {},
                                int threads = 0) {
  TCorrReport r;
  r.sensors = x.sensors();
  r.attributes = x.attributes();
  r.anchors = anchors.size();
  r.eta = eta;
  r.weights = weights;
  for (Period p : kAllPeriods) {
    const auto k = static_cast<std::size_t>(p);
    r.raw[k] = compute_tcorr(x, spec, p, anchors, eta, threads);
    r.weighted[k] = weighted_tcorr(r.raw[k], p, weights);
    r.means[k].assign(r.attributes, 0.0);
    for (std::size_t c = 0; c < r.attributes; ++c) {
      std::vector<double> col(r.sensors);
      for (std::size_t i = 0; i < r.sensors; ++i) col[i] = r.weighted[k][i * r.attributes + c];
      r.means[k][c] = pairwise_sum(col) / static_cast<double>(r.sensors);
    }
  }
  for (std::size_t c = 0; c < r.attributes; ++c) {
    const double h = r.means[0][c];
    const double d = r.means[1][c];
    const double w = r.means[2][c];
    Deltas dl{d - h, w - h, w - d};
    r.deltas.push_back(dl);
    r.verdicts.push_back(select_periods(dl));
  }
  return r;
}

inline nlohmann::json report_to_json(const TCorrReport& r, const std::string& dataset) {
  using nlohmann::json;
  json j;
  j["dataset"] = dataset;
  j["eta"] = r.eta;
  j["anchors"] = r.anchors;
  j["sensors"] = r.sensors;
  j["attributes"] = r.attributes;
  j["weights"] = {{"hourly", r.weights.hourly}, {"daily", r.weights.daily}, {"weekly", r.weights.weekly}};
  json means = json::object();
  json per_sensor = json::object();
  json raw = json::object();
  for (Period p : kAllPeriods) {
    const auto k = static_cast<std::size_t>(p);
    means[period_name(p)] = r.means[k];
    per_sensor[period_name(p)] = r.weighted[k];
    raw[period_name(p)] = r.raw[k];
  }
  j["per_period_means"] = means;
  j["per_sensor"] = per_sensor;
  j["per_sensor_raw"] = raw;
  json deltas = json::array();
  json verdicts = json::array();
  for (std::size_t c = 0; c < r.attributes; ++c) {
    deltas.push_back({{"hd", r.deltas[c].hd}, {"hw", r.deltas[c].hw}, {"dw", r.deltas[c].dw}});
    verdicts.push_back(r.verdicts[c].str());
  }
  j["deltas"] = deltas;
  j["verdict_per_attribute"] = verdicts;
  j["verdict"] = r.verdict().str();
  return j;
}

inline TCorrReport report_from_json(const nlohmann::json& j) {
  TCorrReport r;
  r.eta = j.at("eta").get<double>();
  r.anchors = j.at("anchors").get<std::size_t>();
  r.sensors = j.at("sensors").get<std::size_t>();
  r.attributes = j.at("attributes").get<std::size_t>();
  r.weights = {j.at("weights").at("hourly").get<double>(), j.at("weights").at("daily").get<double>(),
               j.at("weights").at("weekly").get<double>()};
  for (Period p : kAllPeriods) {
    const auto k = static_cast<std::size_t>(p);
    r.means[k] = j.at("per_period_means").at(period_name(p)).get<std::vector<double>>();
    r.weighted[k] = j.at("per_sensor").at(period_name(p)).get<std::vector<double>>();
    r.raw[k] = j.at("per_sensor_raw").at(period_name(p)).get<std::vector<double>>();
  }
  for (const auto& d : j.at("deltas")) {
    r.deltas.push_back({d.at("hd").get<double>(), d.at("hw").get<double>(), d.at("dw").get<double>()});
  }
  for (const auto& v : j.at("verdict_per_attribute")) r.verdicts.push_back(PeriodSet::parse(v.get<std::string>()));
  return r;
}

}  // namespace corrstn::tcorr
