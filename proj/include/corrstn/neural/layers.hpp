#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "corrstn/error.hpp"
#include "corrstn/neural/tensor.hpp"
#include "corrstn/scorr.hpp"

namespace corrstn::nn {

using Rng = std::mt19937_64;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Structural adjacency

/// N x N row-major matrix equal to D^-1/2 A D^-1/2 of its source.
struct NormalizedAdjacency {
  std::size_t size = 0;
  std::vector<double> matrix;

  double operator()(std::size_t i, std::size_t j) const { return matrix[i * size + j]; }
  Tensor tensor() const { return Tensor({size, size}, matrix); }
};

inline std::vector<double> add_self_loops(std::vector<double> adj, std::size_t n) {
  if (adj.size() != n * n) throw DimensionError("adjacency is not N x N");
  for (std::size_t i = 0; i < n; ++i) adj[i * n + i] += 1.0;
  return adj;
}

/// result[i][j] = adj[i][j] / sqrt(rowsum_i * rowsum_j). Self-loops are not
/// added here; see add_self_loops.
inline NormalizedAdjacency laplacian_normalize(const std::vector<double>& adj, std::size_t n) {
  if (adj.size() != n * n) throw DimensionError("adjacency is not N x N");
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = adj[i * n + j];
      if (v < 0.0 || !std::isfinite(v)) throw DimensionError("adjacency entries must be finite and nonnegative");
      s += v;
    }
    if (!(s > 0.0)) throw DimensionError("adjacency row " + std::to_string(i) + " sums to zero");
    inv_sqrt[i] = 1.0 / std::sqrt(s);
  }
  NormalizedAdjacency out{n, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.matrix[i * n + j] = adj[i * n + j] * inv_sqrt[i] * inv_sqrt[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlation information graph layer

/// softmax(Z Z^T / sqrt(d_model)) over the sensor axis, for Z of shape [..., N, d].
inline Var spatial_dynamic_weights(const Var& z) {
  const double d = static_cast<double>(z.shape().back());
  return softmax(mul_scalar(matmul(z, transpose_last2(z)), 1.0 / std::sqrt(d)));
}

/// Constant graph operands shared by every CIGNN layer of a model.
struct GraphContext {
  std::vector<Var> scorr;  // per attribute, N x N
  Var adjacency;           // normalized, N x N

  static GraphContext build(const scorr::SCorrTensor& s, const NormalizedAdjacency& adj) {
    if (s.sensors() != adj.size) throw DimensionError("SCorr and adjacency disagree on N");
    GraphContext g;
    for (std::size_t c = 0; c < s.attributes(); ++c) {
      g.scorr.push_back(Var::constant(Tensor({s.sensors(), s.sensors()}, s.matrix(c))));
    }
    g.adjacency = Var::constant(adj.tensor());
    return g;
  }

  std::size_t sensors() const { return adjacency.shape()[0]; }
};

struct CignnParams {
  Parameter weight;  // [d, d], shared by both branches
  Parameter psi;     // [C], per-attribute mixing
  Parameter omega;   // [1], structural branch scale

  static CignnParams init(std::size_t d_model, std::size_t attributes, Rng& rng,
                          const std::string& prefix = "cignn") {
    CignnParams p;
    p.weight = Parameter(prefix + ".weight", xavier_uniform({d_model, d_model}, d_model, d_model, rng));
    p.psi = Parameter(prefix + ".psi", Tensor({attributes}, 1.0 / static_cast<double>(attributes)));
    p.omega = Parameter(prefix + ".omega", Tensor({1}, 1.0));
    return p;
  }

  std::vector<Parameter*> parameters() { return {&weight, &psi, &omega}; }
};

/// sum_c psi_c * relu(SCorr_c S_w Z W) + omega * relu(A Z W) for Z of shape
/// [..., N, d]; leading axes (e.g. time) are independent graph snapshots.
inline Var cignn_forward(const Var& z, const GraphContext& graph, const CignnParams& p) {
  const Shape& zs = z.shape();
  if (zs.size() < 2 || zs[zs.size() - 2] != graph.sensors()) {
    throw DimensionError("cignn_forward: input " + shape_str(zs) + " does not match N = " +
                         std::to_string(graph.sensors()));
  }
  if (p.weight.shape() != Shape{zs.back(), zs.back()}) throw DimensionError("cignn_forward: W must be d x d");
  if (p.psi.value().numel() != graph.scorr.size()) throw DimensionError("cignn_forward: psi length != C");
  const Var zw = matmul(z, p.weight.var);
  const Var sw = spatial_dynamic_weights(z);
  const Var propagated = matmul(sw, zw);
  Var out;
  for (std::size_t c = 0; c < graph.scorr.size(); ++c) {
    Var branch = scale_by(relu(matmul(graph.scorr[c], propagated)), p.psi.var, c);
    out = out.defined() ? add(out, branch) : branch;
  }
  const Var structural = scale_by(relu(matmul(graph.adjacency, zw)), p.omega.var, 0);
  return add(out, structural);
}

// ---------------------------------------------------------------------------
// Correlation information attention

/// N x N matrix R with R[i][j] = (1/C) * sum over (u, c) selecting j of the
/// softmax weight, so that reconstructed keys are R applied along sensors.
inline Tensor key_mixing_matrix(const scorr::TopUSCorr& t) {
  const std::size_t n = t.sensors;
  Tensor r({n, n}, 0.0);
  const double inv_c = 1.0 / static_cast<double>(t.attributes);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < t.attributes; ++c) {
      for (std::size_t u = 0; u < t.top_u; ++u) {
        const std::size_t j = t.index(i, u, c);
        if (j >= n) throw DimensionError("top-U index out of range");
        r[i * n + j] += inv_c * t.weight(i, u, c);
      }
    }
  }
  return r;
}

/// K~_i = (1/C) sum_c sum_u w[i][u][c] * K[idx[i][u][c]] for K of shape [N, ...].
inline Var reconstruct_keys(const Var& mixing, const Var& k) {
  const Shape& ks = k.shape();
  const std::size_t n = ks.front();
  if (mixing.shape() != Shape{n, n}) throw DimensionError("reconstruct_keys: mixing matrix is not N x N");
  const Var flat = reshape(k, {n, k.numel() / n});
  return reshape(matmul(mixing, flat), ks);
}

inline Var reconstruct_keys(const scorr::TopUSCorr& t, const Var& k) {
  if (k.shape().front() != t.sensors) throw DimensionError("reconstruct_keys: N mismatch");
  return reconstruct_keys(Var::constant(key_mixing_matrix(t)), k);
}

struct CiattOptions {
  std::size_t heads = 1;
  bool causal_mask = false;        // query t sees keys <= t
  bool causal_query_conv = false;  // left-padded Q projection
  bool causal_key_conv = false;    // left-padded K projection
};

/// Q and K projections are temporal convolutions of width `kernel` (1 means a
/// plain linear projection); V and the output use linear maps.
struct CiattParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;

  static CiattParams init(std::size_t d_model, std::size_t kernel, Rng& rng, const std::string& prefix = "ciatt") {
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("attention kernel size must be odd and positive");
    CiattParams p;
    p.wq = Parameter(prefix + ".wq", xavier_uniform({kernel, d_model, d_model}, kernel * d_model, kernel * d_model, rng));
    p.bq = Parameter(prefix + ".bq", Tensor({d_model}, 0.0));
    p.wk = Parameter(prefix + ".wk", xavier_uniform({kernel, d_model, d_model}, kernel * d_model, kernel * d_model, rng));
    p.bk = Parameter(prefix + ".bk", Tensor({d_model}, 0.0));
    p.wv = Parameter(prefix + ".wv", xavier_uniform({d_model, d_model}, d_model, d_model, rng));
    p.bv = Parameter(prefix + ".bv", Tensor({d_model}, 0.0));
    p.wo = Parameter(prefix + ".wo", xavier_uniform({d_model, d_model}, d_model, d_model, rng));
    p.bo = Parameter(prefix + ".bo", Tensor({d_model}, 0.0));
    return p;
  }

  std::vector<Parameter*> parameters() { return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}; }
};

namespace detail {

// [N, L, d] -> [N, H, L, d/H]
inline Var split_heads(const Var& x, std::size_t heads) {
  const Shape& s = x.shape();
  return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [N, H, L, dh] -> [N, L, H*dh]
inline Var merge_heads(const Var& x) {
  const Shape& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

}  // namespace detail

/// Multi-head attention over time per sensor with SCorr-reconstructed keys.
/// Inputs are [N, L, d_model]; `mixing` is key_mixing_matrix(top-U). When
/// `attention` is given it receives the [N, H, Lq, Lk] weights.
inline Var ciatt_forward(const Var& q_in, const Var& k_in, const Var& v_in, const Var& mixing,
                         const CiattOptions& opt, const CiattParams& p, Var* attention = nullptr) {
  const Shape& qs = q_in.shape();
  if (qs.size() != 3 || k_in.shape().size() != 3 || v_in.shape() != k_in.shape()) {
    throw DimensionError("ciatt_forward: expected [N, L, d] inputs with matching K/V");
  }
  const std::size_t d_model = qs[2];
  if (opt.heads == 0 || d_model % opt.heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(opt.heads) + ")");
  }
  if (k_in.shape()[0] != qs[0] || k_in.shape()[2] != d_model) throw DimensionError("ciatt_forward: Q/K mismatch");
  const std::size_t d_head = d_model / opt.heads;

  const Var q = conv1d_temporal(q_in, p.wq.var, p.bq.var, opt.causal_query_conv);
  const Var k = conv1d_temporal(k_in, p.wk.var, p.bk.var, opt.causal_key_conv);
  const Var v = linear(v_in, p.wv.var, p.bv.var);
  const Var k_rec = reconstruct_keys(mixing, k);

  const Var qh = detail::split_heads(q, opt.heads);
  const Var kh = detail::split_heads(k_rec, opt.heads);
  const Var vh = detail::split_heads(v, opt.heads);
  const Var scores = mul_scalar(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(d_head)));
  const Var weights = softmax(scores, opt.causal_mask);
  if (attention) *attention = weights;
  const Var heads = matmul(weights, vh);
  return linear(detail::merge_heads(heads), p.wo.var, p.bo.var);
}

// ---------------------------------------------------------------------------

struct LayerNormParams {
  Parameter gamma;
  Parameter beta;

  static LayerNormParams init(std::size_t d, const std::string& prefix) {
    return {Parameter(prefix + ".gamma", Tensor({d}, 1.0)), Parameter(prefix + ".beta", Tensor({d}, 0.0))};
  }
  std::vector<Parameter*> parameters() { return {&gamma, &beta}; }
  Var operator()(const Var& x) const { return layer_norm(x, gamma.var, beta.var); }
};

}  // namespace corrstn::nn
