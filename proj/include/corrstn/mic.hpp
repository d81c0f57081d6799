#pragma once

// Maximal information coefficient over equal-count (rank) grid partitions.
//
// For every admissible grid shape (A, B) with A, B >= 2 and A * B < M^eta, the
// x axis is cut into A groups of consecutive stable ranks and the y axis into
// B groups, each group holding floor or ceil of M / A (resp. M / B) points.
// The score is the maximum over shapes of I(A, B) / log2(min(A, B)), clamped
// to [0, 1]. Mutual information is measured in bits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "corrstn/error.hpp"

namespace corrstn::mic {

inline constexpr double kDefaultEta = 0.6;

/// Grid shape: x-axis partition count, y-axis partition count and the bound M^eta.
struct GridSpec {
  std::size_t a_bins = 2;
  std::size_t b_bins = 2;
  double cell_bound = 0.0;

  bool admissible() const {
    return a_bins >= 2 && b_bins >= 2 && static_cast<double>(a_bins * b_bins) < cell_bound;
  }
};

struct MicResult {
  double score = 0.0;
  bool degenerate = false;  // at least one input had zero variance
};

namespace detail {

inline void require_sequence(std::span<const double> v, const char* name) {
  if (v.size() < 2) throw DimensionError(std::string(name) + " must hold at least two values");
  for (double d : v) {
    if (!std::isfinite(d)) throw DimensionError(std::string(name) + " contains a non-finite value");
  }
}

inline bool zero_variance(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double d) { return d == v.front(); });
}

inline std::size_t edge_bin(double v, std::span<const double> edges) {
  // upper_bound finds the first edge > v; the final bin is closed on the right.
  auto it = std::upper_bound(edges.begin(), edges.end(), v);
  auto bin = static_cast<std::size_t>(it - edges.begin());
  if (bin == 0) return 0;
  return std::min(bin - 1, edges.size() - 2);
}

inline void validate_edges(std::span<const double> edges, std::span<const double> data,
                           const char* axis) {
  if (edges.size() < 3) {
    throw PartitionError(std::string(axis) + " edges must describe at least two cells");
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw PartitionError(std::string(axis) + " edges are not strictly increasing");
    }
  }
  auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  if (*lo < edges.front() || *hi > edges.back()) {
    throw PartitionError(std::string(axis) + " edges do not cover the data range");
  }
}

}  // namespace detail

/// Empirical mutual information (bits) of the cell frequencies induced by explicit edges.
///
/// A value v falls into cell a when edges[a] <= v < edges[a + 1]; the last
/// cell is closed on the right. Cells with zero joint frequency contribute 0.
inline double mutual_information(std::span<const double> x, std::span<const double> y,
                                 std::span<const double> x_edges,
                                 std::span<const double> y_edges) {
  if (x.size() != y.size()) throw DimensionError("mutual_information: sequence lengths differ");
  detail::require_sequence(x, "x");
  detail::require_sequence(y, "y");
  detail::validate_edges(x_edges, x, "x");
  detail::validate_edges(y_edges, y, "y");

  const std::size_t a_bins = x_edges.size() - 1;
  const std::size_t b_bins = y_edges.size() - 1;
  std::vector<double> joint(a_bins * b_bins, 0.0);
  std::vector<double> qa(a_bins, 0.0);
  std::vector<double> qb(b_bins, 0.0);
  const double w = 1.0 / static_cast<double>(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t a = detail::edge_bin(x[k], x_edges);
    const std::size_t b = detail::edge_bin(y[k], y_edges);
    joint[a * b_bins + b] += w;
    qa[a] += w;
    qb[b] += w;
  }
  double info = 0.0;
  for (std::size_t a = 0; a < a_bins; ++a) {
    for (std::size_t b = 0; b < b_bins; ++b) {
      const double q = joint[a * b_bins + b];
      if (q > 0.0) info += q * std::log2(q / (qa[a] * qb[b]));
    }
  }
  return std::max(info, 0.0);
}

inline double mutual_information(std::span<const double> x, std::span<const double> y,
                                 const GridSpec& grid, std::span<const double> x_edges,
                                 std::span<const double> y_edges) {
  if (x_edges.size() != grid.a_bins + 1 || y_edges.size() != grid.b_bins + 1) {
    throw PartitionError("edge counts do not match the grid shape");
  }
  return mutual_information(x, y, x_edges, y_edges);
}

/// Stable ranks: ties are ordered by their position in the sequence.
inline std::vector<std::uint32_t> stable_ranks(std::span<const double> v) {
  std::vector<std::uint32_t> order(v.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return v[a] < v[b]; });
  std::vector<std::uint32_t> rank(v.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<std::uint32_t>(r);
  return rank;
}

/// Equal-count group of a point with stable rank `rank` among `length` points cut into `bins`.
constexpr std::size_t equal_count_bin(std::size_t rank, std::size_t bins, std::size_t length) {
  return rank * bins / length;
}

/// Every (A, B) with A, B >= 2 and A * B < length^eta, A-major order.
///
/// When no shape satisfies the bound (length^eta <= 4, i.e. very short
/// sequences) the minimal 2 x 2 grid is returned so the score stays defined.
inline std::vector<GridSpec> admissible_shapes(std::size_t length, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in (0, 1]");
  const double bound = std::pow(static_cast<double>(length), eta);
  std::vector<GridSpec> shapes;
  for (std::size_t a = 2; static_cast<double>(2 * a) < bound; ++a) {
    for (std::size_t b = 2; static_cast<double>(a * b) < bound; ++b) {
      if (a > length || b > length) continue;
      shapes.push_back({a, b, bound});
    }
  }
  if (shapes.empty()) shapes.push_back({2, 2, bound});
  return shapes;
}

/// A sequence prepared for repeated scoring: values, stable ranks and the
/// equal-count group of every point for each partition count in [2, max_bins].
class PreparedSequence {
 public:
  PreparedSequence(std::span<const double> values, std::size_t max_bins)
      : values_(values.begin(), values.end()), max_bins_(std::max<std::size_t>(max_bins, 2)) {
    detail::require_sequence(values, "sequence");
    degenerate_ = detail::zero_variance(values);
    const std::size_t m = values_.size();
    ranks_ = stable_ranks(values_);
    groups_.resize((max_bins_ - 1) * m);
    for (std::size_t k = 2; k <= max_bins_; ++k) {
      std::uint16_t* row = groups_.data() + (k - 2) * m;
      for (std::size_t i = 0; i < m; ++i) {
        row[i] = static_cast<std::uint16_t>(equal_count_bin(ranks_[i], k, m));
      }
    }
  }

  std::size_t size() const { return values_.size(); }
  bool degenerate() const { return degenerate_; }
  std::span<const double> values() const { return values_; }
  std::span<const std::uint32_t> ranks() const { return ranks_; }
  std::size_t max_bins() const { return max_bins_; }

  std::span<const std::uint16_t> groups(std::size_t bins) const {
    const std::size_t m = values_.size();
    return {groups_.data() + (bins - 2) * m, m};
  }

 private:
  std::vector<double> values_;
  std::size_t max_bins_;
  bool degenerate_ = false;
  std::vector<std::uint32_t> ranks_;
  std::vector<std::uint16_t> groups_;
};

/// Scores pairs of equal-length sequences against a fixed length and eta.
///
/// Holds the admissible shapes and an n*log2(n) table so that the pair kernel
/// is a counting pass per shape followed by table lookups.
class MicEngine {
 public:
  MicEngine(std::size_t length, double eta = kDefaultEta) : length_(length), eta_(eta) {
    if (length < 2) throw DimensionError("MIC needs sequences of length >= 2");
    shapes_ = admissible_shapes(length, eta);
    for (const auto& s : shapes_) max_bins_ = std::max({max_bins_, s.a_bins, s.b_bins});
    if (max_bins_ > 65535) throw ConfigError("partition count exceeds 16-bit group storage");
    nlog_.resize(length + 1);
    nlog_[0] = 0.0;
    for (std::size_t n = 1; n <= length; ++n) {
      nlog_[n] = static_cast<double>(n) * std::log2(static_cast<double>(n));
    }
    // Equal-count marginal sizes depend only on (length, bins).
    marginal_.assign(max_bins_ + 1, 0.0);
    for (std::size_t k = 2; k <= max_bins_; ++k) {
      std::vector<std::size_t> sizes(k, 0);
      for (std::size_t r = 0; r < length; ++r) ++sizes[equal_count_bin(r, k, length)];
      double s = 0.0;
      for (std::size_t n : sizes) s += nlog_[n];
      marginal_[k] = s;
    }
    mlogm_ = nlog_[length];
  }

  std::size_t length() const { return length_; }
  double eta() const { return eta_; }
  std::size_t max_bins() const { return max_bins_; }
  const std::vector<GridSpec>& shapes() const { return shapes_; }

  PreparedSequence prepare(std::span<const double> values) const {
    if (values.size() != length_) throw DimensionError("sequence length does not match engine");
    return PreparedSequence(values, max_bins_);
  }

  MicResult operator()(const PreparedSequence& x, const PreparedSequence& y) const {
    if (x.size() != length_ || y.size() != length_) {
      throw DimensionError("mic: sequence lengths differ");
    }
    if (x.max_bins() < max_bins_ || y.max_bins() < max_bins_) {
      throw ConfigError("sequence was prepared for a coarser engine");
    }
    if (x.degenerate() || y.degenerate()) return {0.0, true};
    // Canonical argument order makes mic(x, y) and mic(y, x) bit-identical.
    // Ordering by ranks keeps it fixed under increasing transforms too.
    const bool swap = std::lexicographical_compare(y.ranks().begin(), y.ranks().end(),
                                                   x.ranks().begin(), x.ranks().end());
    const PreparedSequence& first = swap ? y : x;
    const PreparedSequence& second = swap ? x : y;

    std::vector<std::uint32_t> counts;
    double best = 0.0;
    for (const auto& shape : shapes_) {
      const std::size_t a_bins = shape.a_bins;
      const std::size_t b_bins = shape.b_bins;
      counts.assign(a_bins * b_bins, 0u);
      const auto gx = first.groups(a_bins);
      const auto gy = second.groups(b_bins);
      for (std::size_t k = 0; k < length_; ++k) ++counts[gx[k] * b_bins + gy[k]];
      double cells = 0.0;
      for (std::uint32_t c : counts) cells += nlog_[c];
      const double info =
          (cells - marginal_[a_bins] - marginal_[b_bins] + mlogm_) / static_cast<double>(length_);
      const double score = info / std::log2(static_cast<double>(std::min(a_bins, b_bins)));
      best = std::max(best, score);
    }
    return {std::clamp(best, 0.0, 1.0), false};
  }

 private:
  std::size_t length_;
  double eta_;
  std::vector<GridSpec> shapes_;
  std::size_t max_bins_ = 2;
  std::vector<double> nlog_;
  std::vector<double> marginal_;
  double mlogm_ = 0.0;
};

inline MicResult mic_score(std::span<const double> x, std::span<const double> y,
                           double eta = kDefaultEta) {
  if (x.size() != y.size()) throw DimensionError("mic: sequence lengths differ");
  detail::require_sequence(x, "x");
  detail::require_sequence(y, "y");
  const MicEngine engine(x.size(), eta);
  return engine(engine.prepare(x), engine.prepare(y));
}

/// MIC in [0, 1]; zero-variance inputs score 0.
inline double mic(std::span<const double> x, std::span<const double> y, double eta = kDefaultEta) {
  return mic_score(x, y, eta).score;
}

/// Dense symmetric n x n matrix, row-major.
struct MicMatrix {
  std::size_t size = 0;
  std::vector<double> values;
  std::vector<bool> degenerate;  // per column

  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

/// Resolves a requested thread count; 0 means the runtime default.
inline int resolve_threads(int requested) {
#ifdef _OPENMP
  return requested > 0 ? requested : omp_get_max_threads();
#else
  (void)requested;
  return 1;
#endif
}

/// MIC of every column pair. Diagonal cells are 1 by convention, degenerate
/// pairs 0. Each cell is computed independently, so the result does not
/// depend on the thread count or schedule.
inline MicMatrix pairwise_mic(const std::vector<std::vector<double>>& columns,
                              double eta = kDefaultEta, int threads = 0) {
  MicMatrix out;
  out.size = columns.size();
  out.values.assign(out.size * out.size, 0.0);
  out.degenerate.assign(out.size, false);
  if (columns.empty()) return out;
  const std::size_t m = columns.front().size();
  for (const auto& c : columns) {
    if (c.size() != m) throw DimensionError("pairwise_mic: columns differ in length");
  }
  const MicEngine engine(m, eta);
  std::vector<PreparedSequence> prepared;
  prepared.reserve(columns.size());
  for (const auto& c : columns) prepared.push_back(engine.prepare(c));
  for (std::size_t i = 0; i < out.size; ++i) {
    out.degenerate[i] = prepared[i].degenerate();
    out.values[i * out.size + i] = 1.0;
  }

  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(out.size * (out.size - 1) / 2);
  for (std::size_t i = 0; i < out.size; ++i) {
    for (std::size_t j = i + 1; j < out.size; ++j) {
      pairs.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
  }
  const auto n_pairs = static_cast<std::ptrdiff_t>(pairs.size());
  [[maybe_unused]] const int nt = resolve_threads(threads);
#pragma omp parallel for schedule(dynamic, 16) num_threads(nt)
  for (std::ptrdiff_t p = 0; p < n_pairs; ++p) {
    const auto [i, j] = pairs[static_cast<std::size_t>(p)];
    const double s = engine(prepared[i], prepared[j]).score;
    out.values[i * out.size + j] = s;
    out.values[j * out.size + i] = s;
  }
  return out;
}

}  // namespace corrstn::mic
