#pragma once

// Independent reference implementations used by the unit and acceptance
// suites. They share no code with the library beyond plain containers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Mutual information (bits) of two cell labelings by direct frequency counting.
inline double mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                                 std::size_t a_bins, std::size_t b_bins) {
  const double m = static_cast<double>(a.size());
  std::vector<std::vector<double>> joint(a_bins, std::vector<double>(b_bins, 0.0));
  for (std::size_t k = 0; k < a.size(); ++k) joint[a[k]][b[k]] += 1.0;
  double info = 0.0;
  for (std::size_t i = 0; i < a_bins; ++i) {
    for (std::size_t j = 0; j < b_bins; ++j) {
      if (joint[i][j] == 0.0) continue;
      double pa = 0.0, pb = 0.0;
      for (std::size_t jj = 0; jj < b_bins; ++jj) pa += joint[i][jj];
      for (std::size_t ii = 0; ii < a_bins; ++ii) pb += joint[ii][j];
      const double p = joint[i][j] / m;
      info += p * std::log2(p / ((pa / m) * (pb / m)));
    }
  }
  return info;
}

/// Equal-count labels from value thresholds: group g starts at the sorted
/// position ceil(g * M / k); a point's label is the number of group starts
/// whose threshold value it reaches. Requires distinct values.
inline std::vector<std::size_t> threshold_labels(const Vec& v, std::size_t k) {
  Vec sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = v.size();
  std::vector<std::size_t> labels(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t g = 1; g < k; ++g) {
      const std::size_t start = (g * m + k - 1) / k;
      if (v[i] >= sorted[start]) labels[i] = g;
    }
  }
  return labels;
}

/// Exhaustive search over every grid shape A, B in [2, M] with A * B < M^eta
/// (2 x 2 when none qualifies), equal-count placement per axis.
inline double mic(const Vec& x, const Vec& y, double eta) {
  const std::size_t m = x.size();
  const double bound = std::pow(static_cast<double>(m), eta);
  double best = 0.0;
  bool any = false;
  for (std::size_t a = 2; a <= m; ++a) {
    for (std::size_t b = 2; b <= m; ++b) {
      if (!(static_cast<double>(a * b) < bound)) continue;
      any = true;
      const double s = mutual_information(threshold_labels(x, a), threshold_labels(y, b), a, b) /
                       std::log2(static_cast<double>(std::min(a, b)));
      best = std::max(best, s);
    }
  }
  if (!any) {
    best = mutual_information(threshold_labels(x, 2), threshold_labels(y, 2), 2, 2);
  }
  return std::clamp(best, 0.0, 1.0);
}

/// Distinct random values (continuous draws; ties have probability zero).
inline Vec random_sequence(std::size_t m, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Vec v(m);
  for (double& x : v) x = d(rng);
  return v;
}

// ---------------------------------------------------------------------------
// Neural references on row-major arrays.

/// [rows, k] x [k, cols]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t rows, std::size_t k, std::size_t cols) {
  Vec out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * cols + j];
      out[i * cols + j] = s;
    }
  }
  return out;
}

inline void softmax_rows(Vec& m, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double top = m[i * cols];
    for (std::size_t j = 1; j < cols; ++j) top = std::max(top, m[i * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(m[i * cols + j] - top);
    for (std::size_t j = 0; j < cols; ++j) m[i * cols + j] = std::exp(m[i * cols + j] - top) / z;
  }
}

/// Plain graph layer relu(A Z W) with Z [n, d], W [d, d].
inline Vec plain_gnn(const Vec& adj, const Vec& z, const Vec& w, std::size_t n, std::size_t d) {
  Vec out = matmul(adj, matmul(z, w, n, d, d), n, n, d);
  for (double& v : out) v = std::max(v, 0.0);
  return out;
}

/// Same-length temporal convolution of one sequence x [len, din] with
/// w [k, din, dout]; centered or left-only padding.
inline Vec conv(const Vec& x, const Vec& w, const Vec& b, std::size_t len, std::size_t din, std::size_t dout,
                std::size_t k, bool causal) {
  const long pad = causal ? static_cast<long>(k) - 1 : (static_cast<long>(k) - 1) / 2;
  Vec out(len * dout);
  for (std::size_t l = 0; l < len; ++l) {
    for (std::size_t j = 0; j < dout; ++j) {
      double s = b[j];
      for (std::size_t t = 0; t < k; ++t) {
        const long src = static_cast<long>(l + t) - pad;
        if (src < 0 || src >= static_cast<long>(len)) continue;
        for (std::size_t i = 0; i < din; ++i) s += x[static_cast<std::size_t>(src) * din + i] * w[(t * din + i) * dout + j];
      }
      out[l * dout + j] = s;
    }
  }
  return out;
}

/// Standard multi-head attention per sensor for inputs [n, len, d] with
/// conv Q/K projections (kernel k), linear V and output maps.
struct AttentionWeights {
  Vec wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t kernel = 1;
};

inline Vec multihead_attention(const Vec& q_in, const Vec& kv_in, std::size_t n, std::size_t lq, std::size_t lk,
                               std::size_t d, std::size_t heads, bool causal_mask, bool causal_q, bool causal_k,
                               const AttentionWeights& p) {
  const std::size_t dh = d / heads;
  Vec out(n * lq * d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const Vec qs(q_in.begin() + static_cast<long>(s * lq * d), q_in.begin() + static_cast<long>((s + 1) * lq * d));
    const Vec ks(kv_in.begin() + static_cast<long>(s * lk * d), kv_in.begin() + static_cast<long>((s + 1) * lk * d));
    const Vec q = conv(qs, p.wq, p.bq, lq, d, d, p.kernel, causal_q);
    const Vec k = conv(ks, p.wk, p.bk, lk, d, d, p.kernel, causal_k);
    Vec v = matmul(ks, p.wv, lk, d, d);
    for (std::size_t l = 0; l < lk; ++l) {
      for (std::size_t j = 0; j < d; ++j) v[l * d + j] += p.bv[j];
    }
    Vec concat(lq * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      Vec scores(lq * lk, 0.0);
      for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t j = 0; j < lk; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[i * d + h * dh + e] * k[j * d + h * dh + e];
          scores[i * lk + j] = causal_mask && j > i ? -INFINITY : dot / std::sqrt(static_cast<double>(dh));
        }
      }
      softmax_rows(scores, lq, lk);
      for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t e = 0; e < dh; ++e) {
          double acc = 0.0;
          for (std::size_t j = 0; j < lk; ++j) acc += scores[i * lk + j] * v[j * d + h * dh + e];
          concat[i * d + h * dh + e] = acc;
        }
      }
    }
    Vec o = matmul(concat, p.wo, lq, d, d);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[(s * lq + i) * d + j] = o[i * d + j] + p.bo[j];
    }
  }
  return out;
}

/// Attention with keys mixed across sensors by an [n, n] matrix `mix`
/// (row i holds the weights of sensor i's reconstructed key).
inline Vec mixed_key_attention(const Vec& q_in, const Vec& kv_in, const Vec& mix, std::size_t n, std::size_t lq,
                               std::size_t lk, std::size_t d, std::size_t heads, bool causal_mask, bool causal_q,
                               bool causal_k, const AttentionWeights& p) {
  const std::size_t dh = d / heads;
  std::vector<Vec> keys(n);
  for (std::size_t s = 0; s < n; ++s) {
    const Vec ks(kv_in.begin() + static_cast<long>(s * lk * d), kv_in.begin() + static_cast<long>((s + 1) * lk * d));
    keys[s] = conv(ks, p.wk, p.bk, lk, d, d, p.kernel, causal_k);
  }
  Vec out(n * lq * d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const Vec qs(q_in.begin() + static_cast<long>(s * lq * d), q_in.begin() + static_cast<long>((s + 1) * lq * d));
    const Vec vs(kv_in.begin() + static_cast<long>(s * lk * d), kv_in.begin() + static_cast<long>((s + 1) * lk * d));
    const Vec q = conv(qs, p.wq, p.bq, lq, d, d, p.kernel, causal_q);
    Vec k(lk * d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t e = 0; e < lk * d; ++e) k[e] += mix[s * n + j] * keys[j][e];
    }
    Vec v = matmul(vs, p.wv, lk, d, d);
    for (std::size_t l = 0; l < lk; ++l) {
      for (std::size_t j = 0; j < d; ++j) v[l * d + j] += p.bv[j];
    }
    Vec concat(lq * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      Vec scores(lq * lk, 0.0);
      for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t j = 0; j < lk; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[i * d + h * dh + e] * k[j * d + h * dh + e];
          scores[i * lk + j] = causal_mask && j > i ? -INFINITY : dot / std::sqrt(static_cast<double>(dh));
        }
      }
      softmax_rows(scores, lq, lk);
      for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t e = 0; e < dh; ++e) {
          double acc = 0.0;
          for (std::size_t j = 0; j < lk; ++j) acc += scores[i * lk + j] * v[j * d + h * dh + e];
          concat[i * d + h * dh + e] = acc;
        }
      }
    }
    Vec o = matmul(concat, p.wo, lq, d, d);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[(s * lq + i) * d + j] = o[i * d + j] + p.bo[j];
    }
  }
  return out;
}

/// Row-wise layer normalization (biased variance, eps inside the root).
inline Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta, std::size_t d, double eps = 1e-5) {
  Vec out(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (x[r * d + j] - mu) / std::sqrt(var + eps) * gamma[j] + beta[j];
  }
  return out;
}

/// Full graph layer on one snapshot z [n, d]: dynamic weights
/// softmax(z z^T / sqrt(d)), per-attribute SCorr branches and the structural branch.
inline Vec graph_layer(const Vec& z, const std::vector<Vec>& scorr, const Vec& adj, const Vec& w, const Vec& psi,
                       double omega, std::size_t n, std::size_t d) {
  Vec dyn(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t e = 0; e < d; ++e) dot += z[i * d + e] * z[j * d + e];
      dyn[i * n + j] = dot / std::sqrt(static_cast<double>(d));
    }
  }
  softmax_rows(dyn, n, n);
  const Vec zw = matmul(z, w, n, d, d);
  const Vec prop = matmul(dyn, zw, n, n, d);
  Vec out(n * d, 0.0);
  for (std::size_t c = 0; c < scorr.size(); ++c) {
    const Vec b = matmul(scorr[c], prop, n, n, d);
    for (std::size_t e = 0; e < n * d; ++e) out[e] += psi[c] * std::max(b[e], 0.0);
  }
  const Vec s = matmul(adj, zw, n, n, d);
  for (std::size_t e = 0; e < n * d; ++e) out[e] += omega * std::max(s[e], 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics by explicit loops.

struct Metrics {
  double mae, rmse, mape;
};

inline Metrics metrics(const Vec& pred, const Vec& truth) {
  double a = 0.0, q = 0.0, p = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    a += std::fabs(e);
    q += e * e;
    if (truth[i] != 0.0) {
      p += std::fabs(e) / std::fabs(truth[i]);
      ++used;
    }
  }
  const double n = static_cast<double>(pred.size());
  return {a / n, std::sqrt(q / n), used ? p / static_cast<double>(used) : NAN};
}

}  // namespace oracle
