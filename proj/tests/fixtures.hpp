#pragma once

#include <map>
#include <string>
#include <vector>

#include "corrstn/data.hpp"
#include "corrstn/model.hpp"
#include "corrstn/scorr.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace corrstn;

/// Synthetic dataset with fitted normalization, its normalized tensor, SCorr
/// over the training split and the model adjacency.
struct Prepared {
  data::TrafficDataset ds;
  data::Splits splits;
  SpatioTemporalTensor normalized;
  scorr::SCorrTensor scorr;
  nn::NormalizedAdjacency adjacency;
};

inline Prepared prepare(data::SyntheticSpec spec, std::uint64_t seed) {
  Prepared p;
  p.ds = data::generate_synthetic(spec, seed);
  p.splits = data::split(p.ds.timestamps());
  data::fit_normalization(p.ds, p.splits.train);
  p.normalized = data::normalize(p.ds);
  p.scorr = scorr::compute_scorr(p.ds.tensor.slice(p.splits.train.begin, p.splits.train.end));
  p.adjacency = model::model_adjacency(p.ds.adjacency, p.ds.sensors());
  return p;
}

inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.d_model = 8;
  c.heads = 2;
  c.top_u = 2;
  c.kernel_size = 3;
  c.batch_size = 4;
  c.epochs = 3;
  c.patience = 5;
  return c;
}

/// Parameters by name, copied out as plain vectors.
inline std::map<std::string, oracle::Vec> named_values(model::Model& m) {
  std::map<std::string, oracle::Vec> out;
  for (auto* p : m.parameters()) out[p->name] = oracle::Vec(p->value().values().begin(), p->value().values().end());
  return out;
}

/// Straight-line evaluation of the model's forward pass with plain loops;
/// returns [L, N] predictions for encoder input [T, N, C] and decoder input [L, N, 1].
inline oracle::Vec straight_line_forward(model::Model& m, const oracle::Vec& enc, const oracle::Vec& dec) {
  const auto& cfg = m.config();
  auto w = named_values(m);
  const std::size_t n = m.sensors(), c = m.attributes(), d = cfg.d_model;
  const std::size_t te = cfg.encoder_length(), l = cfg.horizon, heads = cfg.heads;

  oracle::Vec mix(n * n, 0.0);
  const auto& top = m.top_u();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < c; ++a) {
      for (std::size_t u = 0; u < top.top_u; ++u) mix[i * n + top.index(i, u, a)] += top.weight(i, u, a) / double(c);
    }
  }
  std::vector<oracle::Vec> scorr(c, oracle::Vec(n * n));
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) scorr[a][i * n + j] = m.scorr()(i, j, a);
    }
  }
  const oracle::Vec adj = m.adjacency().matrix;

  auto embed = [&](const oracle::Vec& in, std::size_t len, std::size_t width, const std::string& which) {
    const auto& we = w["embed." + which + ".weight"];
    const auto& be = w["embed." + which + ".bias"];
    const auto& time = w["embed." + which + ".time"];
    const auto& sp = w["embed.spatial"];
    oracle::Vec x(n * len * d);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t e = 0; e < d; ++e) {
          double v = be[e] + sp[s * d + e] + time[t * d + e];
          for (std::size_t k = 0; k < width; ++k) v += in[(t * n + s) * width + k] * we[k * d + e];
          x[(s * len + t) * d + e] = v;
        }
      }
    }
    return x;
  };
  auto attn_weights = [&](const std::string& pre) {
    oracle::AttentionWeights a;
    a.wq = w[pre + ".wq"], a.bq = w[pre + ".bq"], a.wk = w[pre + ".wk"], a.bk = w[pre + ".bk"];
    a.wv = w[pre + ".wv"], a.bv = w[pre + ".bv"], a.wo = w[pre + ".wo"], a.bo = w[pre + ".bo"];
    a.kernel = cfg.kernel_size;
    return a;
  };
  auto ln = [&](const oracle::Vec& x, const std::string& pre) {
    return oracle::layer_norm(x, w[pre + ".gamma"], w[pre + ".beta"], d);
  };
  auto graph = [&](const oracle::Vec& h, std::size_t len, const std::string& pre) {
    oracle::Vec out(h.size());
    for (std::size_t t = 0; t < len; ++t) {
      oracle::Vec z(n * d);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t e = 0; e < d; ++e) z[s * d + e] = h[(s * len + t) * d + e];
      }
      const auto g = oracle::graph_layer(z, scorr, adj, w[pre + ".weight"], w[pre + ".psi"], w[pre + ".omega"][0], n, d);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t e = 0; e < d; ++e) out[(s * len + t) * d + e] = g[s * d + e];
      }
    }
    return out;
  };
  auto add_to = [](oracle::Vec& x, const oracle::Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  };

  oracle::Vec x = embed(enc, te, c, "encoder");
  for (std::size_t k = 0; k < cfg.encoder_layers; ++k) {
    const std::string pre = "encoder." + std::to_string(k);
    const auto h = ln(x, pre + ".ln_attention");
    add_to(x, oracle::mixed_key_attention(h, h, mix, n, te, te, d, heads, false, false, false,
                                          attn_weights(pre + ".attention")));
    add_to(x, graph(ln(x, pre + ".ln_graph"), te, pre + ".graph"));
  }
  const oracle::Vec memory = ln(x, "encoder.ln_final");

  oracle::Vec y = embed(dec, l, 1, "decoder");
  for (std::size_t k = 0; k < cfg.decoder_layers; ++k) {
    const std::string pre = "decoder." + std::to_string(k);
    const auto h = ln(y, pre + ".ln_self");
    add_to(y, oracle::mixed_key_attention(h, h, mix, n, l, l, d, heads, true, true, true,
                                          attn_weights(pre + ".self_attention")));
    const auto q = ln(y, pre + ".ln_cross");
    add_to(y, oracle::mixed_key_attention(q, memory, mix, n, l, te, d, heads, false, true, false,
                                          attn_weights(pre + ".cross_attention")));
    add_to(y, graph(ln(y, pre + ".ln_graph"), l, pre + ".graph"));
  }
  const oracle::Vec fin = ln(y, "decoder.ln_final");
  oracle::Vec out(l * n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < l; ++t) {
      double v = w["head.bias"][0];
      for (std::size_t e = 0; e < d; ++e) v += fin[(s * l + t) * d + e] * w["head.weight"][e];
      out[t * n + s] = v;
    }
  }
  return out;
}

}  // namespace fixture
