#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "corrstn/binary_io.hpp"
#include "corrstn/error.hpp"
#include "corrstn/mic.hpp"
#include "corrstn/spatiotemporal.hpp"

namespace corrstn::scorr {

/// N x N x C correlation degrees in [0, 1], stored attribute-major
/// (index (c * N + i) * N + j).
class SCorrTensor {
 public:
  SCorrTensor() = default;
  SCorrTensor(std::size_t sensors, std::size_t attributes)
      : n_(sensors), c_(attributes), degrees_(sensors * sensors * attributes, 0.0),
        degenerate_(sensors * attributes, false) {}

  std::size_t sensors() const { return n_; }
  std::size_t attributes() const { return c_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t c) { return degrees_[(c * n_ + i) * n_ + j]; }
  double operator()(std::size_t i, std::size_t j, std::size_t c) const {
    return degrees_[(c * n_ + i) * n_ + j];
  }

  /// One attribute's N x N matrix, row-major.
  std::vector<double> matrix(std::size_t c) const {
    auto first = degrees_.begin() + static_cast<std::ptrdiff_t>(c * n_ * n_);
    return {first, first + static_cast<std::ptrdiff_t>(n_ * n_)};
  }

  const std::vector<double>& values() const { return degrees_; }
  std::vector<double>& values() { return degrees_; }

  bool degenerate(std::size_t sensor, std::size_t c) const { return degenerate_[c * n_ + sensor]; }
  void set_degenerate(std::size_t sensor, std::size_t c, bool v) { degenerate_[c * n_ + sensor] = v; }

  bool operator==(const SCorrTensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && degrees_ == o.degrees_;
  }

 private:
  std::size_t n_ = 0;
  std::size_t c_ = 0;
  std::vector<double> degrees_;
  std::vector<bool> degenerate_;
};

/// MIC of every sensor pair per attribute over all timestamps of `x`.
inline SCorrTensor compute_scorr(const SpatioTemporalTensor& x, double eta = mic::kDefaultEta,
                                 int threads = 0) {
  if (x.timestamps() < 2) throw DimensionError("compute_scorr needs at least two timestamps");
  SCorrTensor out(x.sensors(), x.attributes());
  for (std::size_t c = 0; c < x.attributes(); ++c) {
    std::vector<std::vector<double>> columns;
    columns.reserve(x.sensors());
    for (std::size_t i = 0; i < x.sensors(); ++i) columns.push_back(x.series(i, c));
    const auto m = mic::pairwise_mic(columns, eta, threads);
    for (std::size_t i = 0; i < x.sensors(); ++i) {
      out.set_degenerate(i, c, m.degenerate[i]);
      for (std::size_t j = 0; j < x.sensors(); ++j) out(i, j, c) = m(i, j);
    }
  }
  return out;
}

/// One SCorr tensor per window position floor((T - window) / stride) + 1.
inline std::vector<SCorrTensor> windowed_scorr(const SpatioTemporalTensor& x, std::size_t window,
                                               std::size_t stride, double eta = mic::kDefaultEta,
                                               int threads = 0) {
  if (window > x.timestamps()) throw DimensionError("window exceeds the number of timestamps");
  if (window < 2) throw DimensionError("window must cover at least two timestamps");
  if (stride == 0) throw ConfigError("stride must be at least 1");
  const std::size_t count = (x.timestamps() - window) / stride + 1;
  std::vector<SCorrTensor> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    out.push_back(compute_scorr(x.slice(w * stride, w * stride + window), eta, threads));
  }
  return out;
}

/// Per (sensor, attribute): the U most correlated sensors and their softmax weights.
/// Index layout for both arrays is (i * U + u) * C + c.
struct TopUSCorr {
  std::size_t sensors = 0;
  std::size_t top_u = 0;
  std::size_t attributes = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> weights;

  std::uint32_t index(std::size_t i, std::size_t u, std::size_t c) const {
    return indices[(i * top_u + u) * attributes + c];
  }
  double weight(std::size_t i, std::size_t u, std::size_t c) const {
    return weights[(i * top_u + u) * attributes + c];
  }

  /// U = 1 selection of each sensor itself with weight 1.
  static TopUSCorr self_identity(std::size_t sensors, std::size_t attributes) {
    TopUSCorr t{sensors, 1, attributes, {}, {}};
    t.indices.resize(sensors * attributes);
    t.weights.assign(sensors * attributes, 1.0);
    for (std::size_t i = 0; i < sensors; ++i) {
      for (std::size_t c = 0; c < attributes; ++c) t.indices[i * attributes + c] = static_cast<std::uint32_t>(i);
    }
    return t;
  }
};

inline TopUSCorr top_u_normalize(const SCorrTensor& s, std::size_t u) {
  const std::size_t n = s.sensors();
  const std::size_t cn = s.attributes();
  if (u < 1 || u > n) {
    throw ConfigError("top_u must lie in [1, N]; got " + std::to_string(u) + " with N = " +
                      std::to_string(n));
  }
  TopUSCorr out{n, u, cn, std::vector<std::uint32_t>(n * u * cn), std::vector<double>(n * u * cn)};
  std::vector<std::uint32_t> order(n);
  for (std::size_t c = 0; c < cn; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      std::iota(order.begin(), order.end(), 0u);
      // Descending degree; stable sort keeps the lower index first on ties.
      std::stable_sort(order.begin(), order.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return s(i, a, c) > s(i, b, c); });
      const double top = s(i, order[0], c);
      double z = 0.0;
      for (std::size_t k = 0; k < u; ++k) z += std::exp(s(i, order[k], c) - top);
      for (std::size_t k = 0; k < u; ++k) {
        const std::size_t at = (i * u + k) * cn + c;
        out.indices[at] = order[k];
        out.weights[at] = std::exp(s(i, order[k], c) - top) / z;
      }
    }
  }
  return out;
}

// Binary layout (little-endian):
//   "SCOR" | u32 version | u32 N | u32 C | u32 flags | N*N*C f64, attribute-major
// flags bit 0 marks a tensor computed on a window slice.
inline constexpr std::uint32_t kScorrVersion = 1;
inline constexpr std::uint32_t kScorrFlagWindowed = 1u;

inline void write_scorr(std::ostream& os, const SCorrTensor& s, std::uint32_t flags = 0) {
  io::write_magic(os, "SCOR");
  io::write_le<std::uint32_t>(os, kScorrVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.sensors()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.attributes()));
  io::write_le<std::uint32_t>(os, flags);
  for (double d : s.values()) io::write_le<double>(os, d);
}

inline SCorrTensor read_scorr(std::istream& is, std::uint32_t* flags_out = nullptr) {
  io::expect_magic(is, "SCOR");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kScorrVersion) throw DataError("unsupported SCorr version " + std::to_string(version));
  const auto n = io::read_le<std::uint32_t>(is);
  const auto c = io::read_le<std::uint32_t>(is);
  const auto flags = io::read_le<std::uint32_t>(is);
  if (flags_out) *flags_out = flags;
  if (n == 0 || c == 0) throw DataError("SCorr file has empty dimensions");
  SCorrTensor s(n, c);
  for (double& d : s.values()) {
    d = io::read_le<double>(is);
    if (!(d >= 0.0 && d <= 1.0)) throw DataError("SCorr degree outside [0, 1]");
  }
  return s;
}

inline void save_scorr(const std::string& path, const SCorrTensor& s, std::uint32_t flags = 0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_scorr(os, s, flags);
}

inline SCorrTensor load_scorr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open SCorr file " + path + " (produce it with `corrstn scorr`)");
  return read_scorr(is);
}

/// CSV rows: sensor_i,sensor_j,attribute,degree
inline void write_scorr_csv(std::ostream& os, const SCorrTensor& s) {
  os << "sensor_i,sensor_j,attribute,degree\n";
  os.precision(17);
  for (std::size_t c = 0; c < s.attributes(); ++c) {
    for (std::size_t i = 0; i < s.sensors(); ++i) {
      for (std::size_t j = 0; j < s.sensors(); ++j) os << i << ',' << j << ',' << c << ',' << s(i, j, c) << '\n';
    }
  }
}

}  // namespace corrstn::scorr
