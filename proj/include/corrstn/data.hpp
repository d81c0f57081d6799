#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "corrstn/binary_io.hpp"
#include "corrstn/error.hpp"
#include "corrstn/neural/tensor.hpp"
#include "corrstn/spatiotemporal.hpp"
#include "corrstn/tcorr.hpp"

namespace corrstn::data {

/// Per-attribute min-max bounds used for the [-1, 1] mapping.
struct NormParams {
  double min = 0.0;
  double max = 1.0;
};

struct TrafficDataset {
  std::string name;
  SpatioTemporalTensor tensor;
  std::vector<double> adjacency;  // N x N, row-major, nonnegative
  std::vector<std::string> sensor_ids;
  std::vector<NormParams> norm_params;  // empty until fit_normalization

  std::size_t timestamps() const { return tensor.timestamps(); }
  std::size_t sensors() const { return tensor.sensors(); }
  std::size_t attributes() const { return tensor.attributes(); }
};

/// Half-open timestamp range.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const Range&) const = default;
};

// ---------------------------------------------------------------------------
// Tensor files
//
// Binary layout (little-endian):
//   "STTF" | u32 version | u32 T | u32 N | u32 C | u32 interval_minutes |
//   T*N*C f64, timestamp-major ((t * N + n) * C + c)

inline constexpr std::uint32_t kTensorVersion = 1;

inline void write_tensor(std::ostream& os, const SpatioTemporalTensor& x) {
  io::write_magic(os, "STTF");
  io::write_le<std::uint32_t>(os, kTensorVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.timestamps()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.sensors()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.attributes()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.interval_minutes()));
  for (double v : x.values()) io::write_le<double>(os, v);
}

inline SpatioTemporalTensor read_tensor(std::istream& is) {
  io::expect_magic(is, "STTF");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kTensorVersion) throw DataError("unsupported tensor version " + std::to_string(version));
  const auto t = io::read_le<std::uint32_t>(is);
  const auto n = io::read_le<std::uint32_t>(is);
  const auto c = io::read_le<std::uint32_t>(is);
  const auto interval = io::read_le<std::uint32_t>(is);
  if (t == 0 || n == 0 || c == 0 || interval == 0) throw DataError("tensor header has a zero extent");
  std::vector<double> values(static_cast<std::size_t>(t) * n * c);
  for (double& v : values) {
    v = io::read_le<double>(is);
    if (!std::isfinite(v)) throw DataError("tensor file contains a missing or non-finite value");
  }
  return SpatioTemporalTensor(t, n, c, std::move(values), static_cast<int>(interval));
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    if (!std::isfinite(v)) throw DataError("non-finite value on line " + std::to_string(line_no));
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError("cannot parse number '" + s + "' on line " + std::to_string(line_no));
  }
}

}  // namespace detail

/// Long-format CSV: header `timestamp,sensor,attr0[,attr1...]`, one row per
/// (timestamp, sensor). Timestamps and sensors are indexed in order of first
/// appearance; every pair must occur exactly once.
inline SpatioTemporalTensor read_tensor_csv(std::istream& is, std::vector<std::string>* sensor_ids = nullptr,
                                            int interval_minutes = 5) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty tensor CSV");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "timestamp" || header[1] != "sensor") {
    throw DataError("tensor CSV header must be timestamp,sensor,attr0[,...]");
  }
  const std::size_t c = header.size() - 2;
  std::unordered_map<std::string, std::size_t> t_index;
  std::unordered_map<std::string, std::size_t> s_index;
  std::vector<std::string> sensors;
  struct Row {
    std::size_t t, s;
    std::vector<double> v;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) throw DataError("wrong field count on line " + std::to_string(line_no));
    const auto [ti, t_new] = t_index.try_emplace(f[0], t_index.size());
    const auto [si, s_new] = s_index.try_emplace(f[1], s_index.size());
    if (s_new) sensors.push_back(f[1]);
    Row r{ti->second, si->second, {}};
    for (std::size_t k = 0; k < c; ++k) r.v.push_back(detail::parse_double(f[2 + k], line_no));
    rows.push_back(std::move(r));
  }
  const std::size_t t = t_index.size();
  const std::size_t n = s_index.size();
  if (t == 0) throw DataError("tensor CSV has no rows");
  if (rows.size() != t * n) {
    throw DataError("tensor CSV is not a complete timestamp x sensor grid (missing values are not supported)");
  }
  std::vector<double> values(t * n * c, 0.0);
  std::vector<bool> seen(t * n, false);
  for (const auto& r : rows) {
    if (seen[r.t * n + r.s]) throw DataError("duplicate (timestamp, sensor) row in tensor CSV");
    seen[r.t * n + r.s] = true;
    for (std::size_t k = 0; k < c; ++k) values[(r.t * n + r.s) * c + k] = r.v[k];
  }
  if (sensor_ids) *sensor_ids = sensors;
  return SpatioTemporalTensor(t, n, c, std::move(values), interval_minutes);
}

inline void write_tensor_csv(std::ostream& os, const SpatioTemporalTensor& x,
                             const std::vector<std::string>& sensor_ids) {
  os << "timestamp,sensor";
  for (std::size_t c = 0; c < x.attributes(); ++c) os << ",attr" << c;
  os << '\n';
  os.precision(17);
  for (std::size_t t = 0; t < x.timestamps(); ++t) {
    for (std::size_t n = 0; n < x.sensors(); ++n) {
      os << t << ',' << sensor_ids.at(n);
      for (std::size_t c = 0; c < x.attributes(); ++c) os << ',' << x(t, n, c);
      os << '\n';
    }
  }
}

/// Edge list CSV. The header starts with `from,to`; an optional third column
/// carries an affinity weight (default 1). Columns named `cost` or `distance`
/// are read as distances and yield binary adjacency. A header field
/// `directed` or `undirected` sets the mode (default undirected).
inline std::vector<double> read_edges_csv(std::istream& is, const std::vector<std::string>& sensor_ids) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty edge CSV");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "from" || header[1] != "to") {
    throw DataError("edge CSV header must start with from,to");
  }
  bool directed = false;
  bool has_weight = false;
  bool binary = false;
  for (std::size_t k = 2; k < header.size(); ++k) {
    if (header[k] == "directed") directed = true;
    else if (header[k] == "undirected") directed = false;
    else if (k == 2) {
      has_weight = true;
      binary = header[k] == "cost" || header[k] == "distance";
    }
  }
  const std::size_t n = sensor_ids.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index.emplace(sensor_ids[i], i);
  std::vector<double> adj(n * n, 0.0);
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() < (has_weight ? 3u : 2u)) throw DataError("short edge row on line " + std::to_string(line_no));
    const auto a = index.find(f[0]);
    const auto b = index.find(f[1]);
    if (a == index.end() || b == index.end()) {
      throw DataError("unknown sensor id in edge list on line " + std::to_string(line_no));
    }
    double w = 1.0;
    if (has_weight && !binary) w = detail::parse_double(f[2], line_no);
    if (w < 0.0) throw DataError("negative edge weight on line " + std::to_string(line_no));
    adj[a->second * n + b->second] = w;
    if (!directed) adj[b->second * n + a->second] = w;
  }
  return adj;
}

inline std::vector<std::string> default_sensor_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  return ids;
}

/// Loads a tensor (binary STTF, or CSV when the path ends in .csv) and an
/// optional edge list. Without edges the adjacency is empty (all zeros).
inline TrafficDataset load_dataset(const std::string& tensor_path, const std::string& edges_path = {}) {
  TrafficDataset ds;
  ds.name = tensor_path;
  const bool csv = tensor_path.size() >= 4 && tensor_path.substr(tensor_path.size() - 4) == ".csv";
  std::ifstream is(tensor_path, csv ? std::ios::in : std::ios::binary);
  if (!is) throw DataError("cannot open tensor file " + tensor_path);
  if (csv) {
    ds.tensor = read_tensor_csv(is, &ds.sensor_ids);
  } else {
    ds.tensor = read_tensor(is);
    ds.sensor_ids = default_sensor_ids(ds.tensor.sensors());
  }
  if (!edges_path.empty()) {
    std::ifstream es(edges_path);
    if (!es) throw DataError("cannot open edge file " + edges_path);
    ds.adjacency = read_edges_csv(es, ds.sensor_ids);
  } else {
    ds.adjacency.assign(ds.sensors() * ds.sensors(), 0.0);
  }
  return ds;
}

inline void save_tensor(const std::string& path, const SpatioTemporalTensor& x) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_tensor(os, x);
}

inline void save_edges_csv(const std::string& path, const TrafficDataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << "from,to,weight,directed\n";
  os.precision(17);
  const std::size_t n = ds.sensors();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (ds.adjacency[i * n + j] != 0.0) os << ds.sensor_ids[i] << ',' << ds.sensor_ids[j] << ',' << ds.adjacency[i * n + j] << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization

inline double normalize_value(double x, const NormParams& p) { return 2.0 * (x - p.min) / (p.max - p.min) - 1.0; }
inline double denormalize_value(double y, const NormParams& p) { return (y + 1.0) * 0.5 * (p.max - p.min) + p.min; }

/// Fits per-attribute min/max on the timestamps of `train` only.
inline void fit_normalization(TrafficDataset& ds, const Range& train) {
  if (train.size() == 0 || train.end > ds.timestamps()) throw RangeError("training range is empty or out of bounds");
  std::vector<NormParams> fitted(ds.attributes());
  for (std::size_t c = 0; c < ds.attributes(); ++c) {
    double lo = ds.tensor(train.begin, 0, c);
    double hi = lo;
    for (std::size_t t = train.begin; t < train.end; ++t) {
      for (std::size_t n = 0; n < ds.sensors(); ++n) {
        lo = std::min(lo, ds.tensor(t, n, c));
        hi = std::max(hi, ds.tensor(t, n, c));
      }
    }
    if (!(hi > lo)) throw DataError("attribute " + std::to_string(c) + " is constant on the training split (max = min)");
    fitted[c] = {lo, hi};
  }
  ds.norm_params = std::move(fitted);
}

/// Whole tensor mapped to [-1, 1] with the fitted parameters.
inline SpatioTemporalTensor normalize(const TrafficDataset& ds) {
  if (ds.norm_params.size() != ds.attributes()) throw ConfigError("normalization parameters are not fitted");
  SpatioTemporalTensor out = ds.tensor;
  const std::size_t c = ds.attributes();
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = normalize_value(v[i], ds.norm_params[i % c]);
  return out;
}

inline std::vector<double> denormalize(std::span<const double> values, const TrafficDataset& ds,
                                       std::size_t attribute = 0) {
  if (attribute >= ds.norm_params.size()) throw ConfigError("normalization parameters are not fitted");
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v = denormalize_value(v, ds.norm_params[attribute]);
  return out;
}

// ---------------------------------------------------------------------------
// Splits and samples

struct Splits {
  Range train;
  Range val;
  Range test;
};

/// Contiguous ordered split of [0, T) by ratios (default 6:2:2). Every part
/// must hold at least `min_span` timestamps.
inline Splits split(std::size_t timestamps, std::array<double, 3> ratios = {0.6, 0.2, 0.2},
                    std::size_t min_span = 1) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw ConfigError("split ratios must be nonnegative and sum to 1");
  }
  const auto b1 = static_cast<std::size_t>(std::llround(static_cast<double>(timestamps) * ratios[0]));
  const auto b2 = static_cast<std::size_t>(std::llround(static_cast<double>(timestamps) * (ratios[0] + ratios[1])));
  Splits s{{0, b1}, {b1, b2}, {b2, timestamps}};
  if (s.train.size() < min_span || s.val.size() < min_span || s.test.size() < min_span) {
    throw DataError("too few timestamps (" + std::to_string(timestamps) + ") for one full sample per split");
  }
  return s;
}

/// Encoder/decoder window layout of one sample.
struct SampleLayout {
  tcorr::PeriodSpec spec;
  tcorr::PeriodSet periods{tcorr::Period::hourly};
  std::size_t horizon = 12;
  std::size_t target_attribute = 0;

  std::size_t encoder_length() const { return periods.size() * spec.tau; }

  /// Smallest anchor with the full lookback of every selected period.
  std::size_t min_lookback_anchor() const {
    std::size_t deepest = 0;
    for (auto p : tcorr::kAllPeriods) {
      if (periods.contains(p)) deepest = std::max(deepest, spec.offset(p));
    }
    return deepest == 0 ? 0 : deepest - 1;
  }

  void validate() const {
    spec.validate();
    if (!periods.contains(tcorr::Period::hourly)) throw ConfigError("the period layout must include hourly data");
    if (horizon == 0) throw ConfigError("horizon must be positive");
  }
};

/// Anchors t (last observed timestamp) whose target [t+1, t+L] lies inside
/// `range` and whose lookback starts at or after 0. Lookback may reach into
/// earlier ranges.
inline std::vector<std::size_t> sample_anchors(const Range& range, const SampleLayout& layout) {
  layout.validate();
  std::vector<std::size_t> out;
  const std::size_t lo = std::max(range.begin == 0 ? 0 : range.begin - 1, layout.min_lookback_anchor());
  for (std::size_t t = lo; t + layout.horizon < range.end; ++t) out.push_back(t);
  return out;
}

/// One training example: encoder [T_hdw, N, C], decoder input and target [L, N, 1].
struct Sample {
  std::size_t anchor = 0;
  nn::Tensor encoder;
  nn::Tensor decoder;
  nn::Tensor target;
};

/// Builds the sample anchored at `t` from an (already normalized) tensor.
/// Encoder blocks are ordered weekly, daily, hourly.
inline Sample make_sample(const SpatioTemporalTensor& x, std::size_t t, const SampleLayout& layout) {
  layout.validate();
  const std::size_t n = x.sensors();
  const std::size_t c = x.attributes();
  if (layout.target_attribute >= c) throw ConfigError("target attribute out of range");
  if (t + layout.horizon >= x.timestamps()) throw RangeError("sample target runs past the data");
  Sample s;
  s.anchor = t;
  std::vector<double> enc;
  enc.reserve(layout.encoder_length() * n * c);
  for (auto p : {tcorr::Period::weekly, tcorr::Period::daily, tcorr::Period::hourly}) {
    if (!layout.periods.contains(p)) continue;
    const std::size_t b = tcorr::period_window_begin(t, p, layout.spec);
    for (std::size_t k = b; k < b + layout.spec.tau; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < c; ++a) enc.push_back(x(k, i, a));
      }
    }
  }
  s.encoder = nn::Tensor({layout.encoder_length(), n, c}, std::move(enc));
  std::vector<double> dec;
  std::vector<double> tgt;
  for (std::size_t k = 0; k < layout.horizon; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      dec.push_back(x(t + k, i, layout.target_attribute));
      tgt.push_back(x(t + 1 + k, i, layout.target_attribute));
    }
  }
  s.decoder = nn::Tensor({layout.horizon, n, 1}, std::move(dec));
  s.target = nn::Tensor({layout.horizon, n, 1}, std::move(tgt));
  return s;
}

/// B samples stacked: encoder [B, T_hdw, N, C], decoder/target [B, L, N, 1].
struct SampleBatch {
  std::vector<std::size_t> anchors;
  nn::Tensor encoder_input;
  nn::Tensor decoder_input;
  nn::Tensor target;
};

inline SampleBatch make_batch(const SpatioTemporalTensor& x, std::span<const std::size_t> anchors,
                              const SampleLayout& layout) {
  if (anchors.empty()) throw DataError("empty batch");
  SampleBatch b;
  std::vector<double> enc, dec, tgt;
  for (std::size_t t : anchors) {
    Sample s = make_sample(x, t, layout);
    b.anchors.push_back(t);
    enc.insert(enc.end(), s.encoder.values().begin(), s.encoder.values().end());
    dec.insert(dec.end(), s.decoder.values().begin(), s.decoder.values().end());
    tgt.insert(tgt.end(), s.target.values().begin(), s.target.values().end());
  }
  const std::size_t bs = anchors.size();
  b.encoder_input = nn::Tensor({bs, layout.encoder_length(), x.sensors(), x.attributes()}, std::move(enc));
  b.decoder_input = nn::Tensor({bs, layout.horizon, x.sensors(), 1}, std::move(dec));
  b.target = nn::Tensor({bs, layout.horizon, x.sensors(), 1}, std::move(tgt));
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t sensors = 8;
  std::size_t timestamps = 0;  // 0: weeks * timestamps-per-week
  std::size_t weeks = 3;
  std::size_t attributes = 1;
  int interval_minutes = 5;
  double base = 100.0;
  double daily_amplitude = 30.0;
  double weekly_amplitude = 0.0;
  double noise_sigma = 1.0;
  std::size_t daily_harmonics = 48;
  std::size_t weekly_harmonics = 336;
};

namespace detail {

// Unit-variance periodic profile of length `period` built from harmonics
// 1..count with random phases; harmonics divisible by `skip_multiple_of`
// are left out (keeps the weekly profile free of a daily component).
inline std::vector<double> periodic_profile(std::size_t period, std::size_t count, std::size_t skip_multiple_of,
                                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<std::pair<std::size_t, double>> terms;
  for (std::size_t k = 1; k <= count && 2 * k < period; ++k) {
    const double ph = phase(rng);
    if (skip_multiple_of > 1 && k % skip_multiple_of == 0) continue;
    terms.emplace_back(k, ph);
  }
  std::vector<double> out(period, 0.0);
  if (terms.empty()) return out;
  const double amp = std::sqrt(2.0 / static_cast<double>(terms.size()));
  for (std::size_t t = 0; t < period; ++t) {
    double v = 0.0;
    for (const auto& [k, ph] : terms) {
      v += amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(period) + ph);
    }
    out[t] = v;
  }
  return out;
}

}  // namespace detail

/// Seeded sum of a daily-periodic and a weekly-periodic profile plus Gaussian
/// noise, with a per-sensor time shift and gain; ring-graph adjacency.
/// Profiles are tabulated per period, so periodicity is exact in index space.
inline TrafficDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  const auto periods = tcorr::PeriodSpec::for_interval(spec.interval_minutes);
  const std::size_t t_count = spec.timestamps ? spec.timestamps : spec.weeks * periods.weekly_offset;
  if (spec.sensors == 0 || spec.attributes == 0 || t_count < 2) throw ConfigError("synthetic dataset is empty");
  std::mt19937_64 rng(seed);
  const auto daily = detail::periodic_profile(periods.daily_offset, spec.daily_harmonics, 0, rng);
  const std::size_t days_per_week = periods.weekly_offset / periods.daily_offset;
  const auto weekly = detail::periodic_profile(periods.weekly_offset, spec.weekly_harmonics, days_per_week, rng);

  std::uniform_int_distribution<std::size_t> shift_dist(0, periods.hourly_offset * 2);
  std::uniform_real_distribution<double> gain_dist(0.8, 1.2);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::size_t> shift(spec.sensors);
  std::vector<double> gain(spec.sensors);
  for (std::size_t i = 0; i < spec.sensors; ++i) {
    shift[i] = shift_dist(rng);
    gain[i] = gain_dist(rng);
  }

  TrafficDataset ds;
  ds.name = "synthetic";
  std::vector<double> values(t_count * spec.sensors * spec.attributes);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < spec.sensors; ++i) {
      const std::size_t ts = t + shift[i];
      const double signal = spec.daily_amplitude * daily[ts % periods.daily_offset] +
                            spec.weekly_amplitude * weekly[ts % periods.weekly_offset];
      for (std::size_t c = 0; c < spec.attributes; ++c) {
        const double scale = gain[i] / static_cast<double>(c + 1);
        values[(t * spec.sensors + i) * spec.attributes + c] =
            spec.base / static_cast<double>(c + 1) + scale * signal + spec.noise_sigma * noise(rng);
      }
    }
  }
  ds.tensor = SpatioTemporalTensor(t_count, spec.sensors, spec.attributes, std::move(values), spec.interval_minutes);
  ds.sensor_ids = default_sensor_ids(spec.sensors);
  const std::size_t n = spec.sensors;
  ds.adjacency.assign(n * n, 0.0);
  if (n >= 2) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      if (i == j) continue;
      ds.adjacency[i * n + j] = 1.0;
      ds.adjacency[j * n + i] = 1.0;
    }
  }
  return ds;
}

}  // namespace corrstn::data
