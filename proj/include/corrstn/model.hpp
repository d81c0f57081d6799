#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "corrstn/binary_io.hpp"
#include "corrstn/data.hpp"
#include "corrstn/error.hpp"
#include "corrstn/neural/layers.hpp"
#include "corrstn/neural/tensor.hpp"
#include "corrstn/scorr.hpp"
#include "corrstn/tcorr.hpp"

namespace corrstn::model {

using nn::Parameter;
using nn::Tensor;
using nn::Var;

struct ModelConfig {
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  std::size_t top_u = 4;
  std::size_t kernel_size = 3;
  tcorr::PeriodSet periods{tcorr::Period::hourly};
  std::size_t tau = 12;
  std::size_t horizon = 12;
  double learning_rate = 0.001;
  std::size_t batch_size = 16;
  std::size_t epochs = 100;
  std::size_t patience = 20;
  double dropout = 0.0;
  std::size_t target_attribute = 0;
  std::uint64_t seed = 1;
  int interval_minutes = 5;

  std::size_t encoder_length() const { return periods.size() * tau; }
  std::size_t d_head() const { return d_model / heads; }

  data::SampleLayout layout() const {
    data::SampleLayout l;
    l.spec = tcorr::PeriodSpec::for_interval(interval_minutes, tau);
    l.periods = periods;
    l.horizon = horizon;
    l.target_attribute = target_attribute;
    return l;
  }

  /// Throws ConfigError on any violated invariant; pass N = 0 to skip the
  /// sensor-dependent checks.
  void validate(std::size_t sensors = 0, std::size_t attributes = 0) const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (encoder_layers == 0 || decoder_layers == 0) fail("layer counts must be positive");
    if (d_model == 0 || heads == 0) fail("d_model and heads must be positive");
    if (d_model % heads != 0) {
      fail("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" + std::to_string(heads) + ")");
    }
    if (top_u == 0) fail("top_u must be positive");
    if (sensors != 0 && top_u > sensors) {
      fail("top_u (" + std::to_string(top_u) + ") exceeds the number of sensors (" + std::to_string(sensors) + ")");
    }
    if (kernel_size == 0 || kernel_size % 2 == 0) fail("kernel_size must be odd and positive");
    if (!periods.contains(tcorr::Period::hourly)) fail("periods must include hourly");
    if (tau == 0 || horizon == 0) fail("tau and horizon must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (attributes != 0 && target_attribute >= attributes) fail("target_attribute out of range");
    if (interval_minutes <= 0) fail("interval_minutes must be positive");
  }

  /// key=value lines; architecture keys first.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "encoder_layers=" << encoder_layers << '\n'
       << "decoder_layers=" << decoder_layers << '\n'
       << "d_model=" << d_model << '\n'
       << "heads=" << heads << '\n'
       << "top_u=" << top_u << '\n'
       << "kernel_size=" << kernel_size << '\n'
       << "periods=" << periods.str() << '\n'
       << "tau=" << tau << '\n'
       << "horizon=" << horizon << '\n'
       << "target_attribute=" << target_attribute << '\n'
       << "interval_minutes=" << interval_minutes << '\n'
       << "learning_rate=" << learning_rate << '\n'
       << "batch_size=" << batch_size << '\n'
       << "epochs=" << epochs << '\n'
       << "patience=" << patience << '\n'
       << "dropout=" << dropout << '\n'
       << "seed=" << seed << '\n';
    return os.str();
  }

  /// Unknown keys are rejected; missing keys keep their current values.
  void apply_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
      auto trim = [](std::string s) {
        const auto f = s.find_first_not_of(" \t\r");
        const auto l = s.find_last_not_of(" \t\r");
        return f == std::string::npos ? std::string() : s.substr(f, l - f + 1);
      };
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no);
    }
  }

  static ModelConfig from_text(const std::string& text, ModelConfig base) {
    base.apply_text(text);
    return base;
  }
  static ModelConfig from_text(const std::string& text) { return from_text(text, ModelConfig()); }

  static ModelConfig load(const std::string& path) { return load(path, ModelConfig()); }
  static ModelConfig load(const std::string& path, ModelConfig base) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str(), std::move(base));
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write config file " + path);
    os << to_text();
  }

  /// FNV-1a over the architecture keys (the ones that shape parameters).
  std::uint64_t architecture_hash() const {
    std::ostringstream os;
    os << encoder_layers << ',' << decoder_layers << ',' << d_model << ',' << heads << ',' << top_u << ','
       << kernel_size << ',' << periods.str() << ',' << tau << ',' << horizon;
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : os.str()) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    return h;
  }

  bool operator==(const ModelConfig& o) const { return to_text() == o.to_text(); }

 private:
  void set(const std::string& key, const std::string& value, std::size_t line_no) {
    auto as_size = [&](std::size_t& out) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size() || v < 0) throw std::invalid_argument(value);
        out = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + key + " expects a nonnegative integer");
      }
    };
    auto as_double = [&](double& out) {
      try {
        std::size_t used = 0;
        out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + key + " expects a number");
      }
    };
    std::size_t tmp = 0;
    if (key == "encoder_layers") as_size(encoder_layers);
    else if (key == "decoder_layers") as_size(decoder_layers);
    else if (key == "d_model") as_size(d_model);
    else if (key == "heads") as_size(heads);
    else if (key == "top_u") as_size(top_u);
    else if (key == "kernel_size") as_size(kernel_size);
    else if (key == "periods") periods = tcorr::PeriodSet::parse(value);
    else if (key == "tau") as_size(tau);
    else if (key == "horizon") as_size(horizon);
    else if (key == "target_attribute") as_size(target_attribute);
    else if (key == "interval_minutes") {
      as_size(tmp);
      interval_minutes = static_cast<int>(tmp);
    } else if (key == "learning_rate") as_double(learning_rate);
    else if (key == "batch_size") as_size(batch_size);
    else if (key == "epochs") as_size(epochs);
    else if (key == "patience") as_size(patience);
    else if (key == "dropout") as_double(dropout);
    else if (key == "seed") {
      as_size(tmp);
      seed = tmp;
    } else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
};

/// Reference hyperparameters per dataset. "(p)" rows use periodic
/// input: h,d,w for the highway sets and h,d for the metro sets.
inline ModelConfig preset(const std::string& name) {
  struct Row {
    const char* name;
    std::size_t enc, dec, kernel, heads, batch;
    const char* periods;
  };
  static constexpr Row rows[] = {
      {"PEMS07", 3, 3, 3, 8, 4, "h"},          {"PEMS07(p)", 3, 3, 3, 8, 2, "h,d,w"},
      {"PEMS08", 4, 4, 3, 8, 16, "h"},         {"PEMS08(p)", 4, 4, 3, 8, 8, "h,d,w"},
      {"HZME(in)", 4, 4, 3, 8, 4, "h"},        {"HZME(in)(p)", 4, 4, 3, 8, 16, "h,d"},
      {"HZME(out)", 3, 3, 5, 4, 8, "h"},       {"HZME(out)(p)", 4, 4, 3, 4, 16, "h,d"},
  };
  for (const auto& r : rows) {
    if (name == r.name) {
      ModelConfig c;
      c.encoder_layers = r.enc;
      c.decoder_layers = r.dec;
      c.kernel_size = r.kernel;
      c.heads = r.heads;
      c.batch_size = r.batch;
      c.periods = tcorr::PeriodSet::parse(r.periods);
      if (name.rfind("HZME", 0) == 0) c.interval_minutes = 15;
      return c;
    }
  }
  throw ConfigError("unknown preset '" + name + "'");
}

inline std::vector<std::string> preset_names() {
  return {"PEMS07", "PEMS07(p)", "PEMS08", "PEMS08(p)", "HZME(in)", "HZME(in)(p)", "HZME(out)", "HZME(out)(p)"};
}

// ---------------------------------------------------------------------------

namespace detail {

inline Var dropout(const Var& x, double p, nn::Rng* rng) {
  if (!rng || p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.shape());
  for (double& m : mask.values()) m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return nn::mul(x, Var::constant(std::move(mask)));
}

// [A, B, d] <-> [B, A, d]
inline Var swap01(const Var& x) { return nn::permute(x, {1, 0, 2}); }

}  // namespace detail

struct EncoderLayer {
  nn::LayerNormParams ln_attention, ln_graph;
  nn::CiattParams attention;
  nn::CignnParams graph;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto* v : {&ln_attention, &ln_graph}) for (auto* p : v->parameters()) out.push_back(p);
    for (auto* p : attention.parameters()) out.push_back(p);
    for (auto* p : graph.parameters()) out.push_back(p);
    return out;
  }
};

struct DecoderLayer {
  nn::LayerNormParams ln_self, ln_cross, ln_graph;
  nn::CiattParams self_attention, cross_attention;
  nn::CignnParams graph;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto* v : {&ln_self, &ln_cross, &ln_graph}) for (auto* p : v->parameters()) out.push_back(p);
    for (auto* p : self_attention.parameters()) out.push_back(p);
    for (auto* p : cross_attention.parameters()) out.push_back(p);
    for (auto* p : graph.parameters()) out.push_back(p);
    return out;
  }
};

/// Encoder-decoder forecaster. Tensors are [T, N, C] on the way in and
/// [L, N, 1] on the way out; internally sequences are [N, T, d].
class Model {
 public:
  Model(ModelConfig config, const scorr::SCorrTensor& scorr, const nn::NormalizedAdjacency& adjacency)
      : config_(std::move(config)), scorr_(scorr), adjacency_(adjacency) {
    const std::size_t n = scorr.sensors();
    const std::size_t c = scorr.attributes();
    if (adjacency.size != n) {
      throw DimensionError("adjacency is " + std::to_string(adjacency.size) + "x" + std::to_string(adjacency.size) +
                           " but SCorr covers " + std::to_string(n) + " sensors");
    }
    config_.validate(n, c);
    graph_ = nn::GraphContext::build(scorr, adjacency);
    top_u_ = scorr::top_u_normalize(scorr, config_.top_u);
    mixing_ = Var::constant(nn::key_mixing_matrix(top_u_));

    nn::Rng rng(config_.seed);
    const std::size_t d = config_.d_model;
    const std::size_t k = config_.kernel_size;
    enc_embed_w_ = Parameter("embed.encoder.weight", nn::xavier_uniform({c, d}, c, d, rng));
    enc_embed_b_ = Parameter("embed.encoder.bias", Tensor({d}, 0.0));
    dec_embed_w_ = Parameter("embed.decoder.weight", nn::xavier_uniform({1, d}, 1, d, rng));
    dec_embed_b_ = Parameter("embed.decoder.bias", Tensor({d}, 0.0));
    enc_time_ = Parameter("embed.encoder.time", nn::xavier_uniform({config_.encoder_length(), d}, 1, d, rng));
    dec_time_ = Parameter("embed.decoder.time", nn::xavier_uniform({config_.horizon, d}, 1, d, rng));
    spatial_ = Parameter("embed.spatial", nn::xavier_uniform({n, d}, 1, d, rng));
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::string pre = "encoder." + std::to_string(l);
      EncoderLayer e;
      e.ln_attention = nn::LayerNormParams::init(d, pre + ".ln_attention");
      e.attention = nn::CiattParams::init(d, k, rng, pre + ".attention");
      e.ln_graph = nn::LayerNormParams::init(d, pre + ".ln_graph");
      e.graph = nn::CignnParams::init(d, c, rng, pre + ".graph");
      encoder_.push_back(std::move(e));
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      const std::string pre = "decoder." + std::to_string(l);
      DecoderLayer e;
      e.ln_self = nn::LayerNormParams::init(d, pre + ".ln_self");
      e.self_attention = nn::CiattParams::init(d, k, rng, pre + ".self_attention");
      e.ln_cross = nn::LayerNormParams::init(d, pre + ".ln_cross");
      e.cross_attention = nn::CiattParams::init(d, k, rng, pre + ".cross_attention");
      e.ln_graph = nn::LayerNormParams::init(d, pre + ".ln_graph");
      e.graph = nn::CignnParams::init(d, c, rng, pre + ".graph");
      decoder_.push_back(std::move(e));
    }
    enc_norm_ = nn::LayerNormParams::init(d, "encoder.ln_final");
    dec_norm_ = nn::LayerNormParams::init(d, "decoder.ln_final");
    head_w_ = Parameter("head.weight", nn::xavier_uniform({d, 1}, d, 1, rng));
    head_b_ = Parameter("head.bias", Tensor({1}, 0.0));
  }

  const ModelConfig& config() const { return config_; }
  std::size_t sensors() const { return scorr_.sensors(); }
  std::size_t attributes() const { return scorr_.attributes(); }
  const scorr::SCorrTensor& scorr() const { return scorr_; }
  const nn::NormalizedAdjacency& adjacency() const { return adjacency_; }
  const scorr::TopUSCorr& top_u() const { return top_u_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&enc_embed_w_, &enc_embed_b_, &dec_embed_w_, &dec_embed_b_,
                                &enc_time_,    &dec_time_,    &spatial_};
    for (auto& e : encoder_) for (auto* p : e.parameters()) out.push_back(p);
    for (auto& e : decoder_) for (auto* p : e.parameters()) out.push_back(p);
    for (auto* p : enc_norm_.parameters()) out.push_back(p);
    for (auto* p : dec_norm_.parameters()) out.push_back(p);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto* p : parameters()) total += p->value().numel();
    return total;
  }

  /// Encoder memory [N, T_hdw, d] for an encoder input [T_hdw, N, C].
  Var encode(const Tensor& input, nn::Rng* dropout_rng = nullptr) const {
    const Shape expect{config_.encoder_length(), sensors(), attributes()};
    if (input.shape() != expect) {
      throw DimensionError("encoder input " + nn::shape_str(input.shape()) + " does not match the configured layout " +
                           nn::shape_str(expect) + " (periods " + config_.periods.str() + ")");
    }
    Var x = nn::add(nn::linear(Var::constant(input), enc_embed_w_.var, enc_embed_b_.var), spatial_.var);
    x = nn::add(detail::swap01(x), enc_time_.var);
    const nn::CiattOptions opt{config_.heads, false, false, false};
    for (const auto& layer : encoder_) {
      const Var h = layer.ln_attention(x);
      x = nn::add(x, detail::dropout(nn::ciatt_forward(h, h, h, mixing_, opt, layer.attention), config_.dropout,
                                     dropout_rng));
      x = nn::add(x, detail::dropout(graph_step(layer.ln_graph(x), layer.graph), config_.dropout, dropout_rng));
    }
    return enc_norm_(x);
  }

  /// Normalized predictions [L, N, 1] for decoder input [L, N, 1].
  Var decode(const Var& memory, const Tensor& decoder_input, nn::Rng* dropout_rng = nullptr) const {
    const Shape expect{config_.horizon, sensors(), 1};
    if (decoder_input.shape() != expect) {
      throw DimensionError("decoder input " + nn::shape_str(decoder_input.shape()) + " must be " +
                           nn::shape_str(expect));
    }
    Var x = nn::add(nn::linear(Var::constant(decoder_input), dec_embed_w_.var, dec_embed_b_.var), spatial_.var);
    x = nn::add(detail::swap01(x), dec_time_.var);
    const nn::CiattOptions self_opt{config_.heads, true, true, true};
    const nn::CiattOptions cross_opt{config_.heads, false, true, false};
    for (const auto& layer : decoder_) {
      const Var h = layer.ln_self(x);
      x = nn::add(x, detail::dropout(nn::ciatt_forward(h, h, h, mixing_, self_opt, layer.self_attention),
                                     config_.dropout, dropout_rng));
      const Var q = layer.ln_cross(x);
      x = nn::add(x, detail::dropout(nn::ciatt_forward(q, memory, memory, mixing_, cross_opt, layer.cross_attention),
                                     config_.dropout, dropout_rng));
      x = nn::add(x, detail::dropout(graph_step(layer.ln_graph(x), layer.graph), config_.dropout, dropout_rng));
    }
    const Var y = nn::linear(dec_norm_(x), head_w_.var, head_b_.var);  // [N, L, 1]
    return detail::swap01(y);
  }

  /// Teacher-forced forward pass. `dropout_rng` enables dropout (training).
  Var forward(const Tensor& encoder_input, const Tensor& decoder_input, nn::Rng* dropout_rng = nullptr) const {
    return decode(encode(encoder_input, dropout_rng), decoder_input, dropout_rng);
  }

  /// Autoregressive rollout from the last observed target values `last`
  /// ([N] or [1, N, 1]); unknown decoder positions are zero. Returns [L, N, 1].
  Tensor rollout(const Tensor& encoder_input, const Tensor& last) const {
    const std::size_t n = sensors();
    const std::size_t len = config_.horizon;
    if (last.numel() != n) throw DimensionError("rollout: last observation must hold N values");
    const Var memory = encode(encoder_input);
    Tensor dec({len, n, 1}, 0.0);
    for (std::size_t i = 0; i < n; ++i) dec[i] = last[i];
    Tensor out({len, n, 1}, 0.0);
    for (std::size_t step = 0; step < len; ++step) {
      const Var y = decode(memory, dec);
      for (std::size_t i = 0; i < n; ++i) {
        out[step * n + i] = y.value()[step * n + i];
        if (step + 1 < len) dec[(step + 1) * n + i] = y.value()[step * n + i];
      }
    }
    return out;
  }

 private:
  using Shape = nn::Shape;

  // CIGNN over every time step: [N, T, d] -> [T, N, d] -> layer -> back.
  Var graph_step(const Var& x, const nn::CignnParams& p) const {
    return detail::swap01(nn::cignn_forward(detail::swap01(x), graph_, p));
  }

  ModelConfig config_;
  scorr::SCorrTensor scorr_;
  nn::NormalizedAdjacency adjacency_;
  nn::GraphContext graph_;
  scorr::TopUSCorr top_u_;
  Var mixing_;
  Parameter enc_embed_w_, enc_embed_b_, dec_embed_w_, dec_embed_b_, enc_time_, dec_time_, spatial_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNormParams enc_norm_, dec_norm_;
  Parameter head_w_, head_b_;
};

/// Structural adjacency as used by the model: self-loops added, then
/// symmetric normalization.
inline nn::NormalizedAdjacency model_adjacency(const std::vector<double>& adjacency, std::size_t n) {
  return nn::laplacian_normalize(nn::add_self_loops(adjacency, n), n);
}

inline Model build_model(const ModelConfig& config, const scorr::SCorrTensor& scorr,
                         const nn::NormalizedAdjacency& adjacency, std::size_t sensors) {
  if (scorr.sensors() != sensors || adjacency.size != sensors) {
    throw DimensionError("SCorr / adjacency do not match N = " + std::to_string(sensors));
  }
  return Model(config, scorr, adjacency);
}

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value().numel(), 0.0);
        v_.emplace_back(p->value().numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ComputeError("Adam: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor g = params[k]->grad();
      auto w = params[k]->value().values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;  // normalized units, teacher forcing
  double val_mae = NAN;    // denormalized, autoregressive
  double val_rmse = NAN;
  double val_mape = NAN;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_mae = NAN;
  bool stopped_early = false;
};

/// Inputs to `train`: a normalized tensor plus anchor lists from
/// data::sample_anchors. `target_norm` maps predictions back for validation.
struct TrainData {
  const SpatioTemporalTensor* normalized = nullptr;
  std::vector<std::size_t> train_anchors;
  std::vector<std::size_t> val_anchors;
  data::NormParams target_norm;
};

struct TrainOptions {
  std::optional<std::size_t> epochs;        // overrides config.epochs
  std::function<void(const EpochRecord&)> on_epoch;
  bool shuffle = true;
};

using ParameterSnapshot = std::vector<std::vector<double>>;

inline ParameterSnapshot snapshot(Model& m) {
  ParameterSnapshot s;
  for (auto* p : m.parameters()) s.emplace_back(p->value().values().begin(), p->value().values().end());
  return s;
}

inline void restore(Model& m, const ParameterSnapshot& s) {
  auto params = m.parameters();
  if (params.size() != s.size()) throw ComputeError("snapshot does not match the model");
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(s[k].begin(), s[k].end(), params[k]->value().values().begin());
}

/// Sum of |err|, err^2, |err|/truth (truth != 0) and counts over denormalized
/// autoregressive forecasts.
struct ErrorSums {
  double abs = 0.0, sq = 0.0, pct = 0.0;
  std::size_t count = 0, pct_count = 0;
};

inline ErrorSums forecast_errors(const Model& m, const SpatioTemporalTensor& normalized,
                                 std::span<const std::size_t> anchors, const data::NormParams& norm) {
  const auto layout = m.config().layout();
  ErrorSums e;
  for (std::size_t t : anchors) {
    const auto s = data::make_sample(normalized, t, layout);
    const Tensor last({m.sensors()}, std::vector<double>(s.decoder.values().begin(),
                                                         s.decoder.values().begin() + static_cast<std::ptrdiff_t>(m.sensors())));
    const Tensor pred = m.rollout(s.encoder, last);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double p = data::denormalize_value(pred[i], norm);
      const double y = data::denormalize_value(s.target[i], norm);
      const double a = std::abs(p - y);
      e.abs += a;
      e.sq += a * a;
      ++e.count;
      if (y != 0.0) {
        e.pct += a / std::abs(y);
        ++e.pct_count;
      }
    }
  }
  return e;
}

/// One mini-batch: per-sample MAE, gradients accumulated with weight 1/B.
/// Returns the batch MAE (normalized units).
inline double accumulate_batch(Model& m, const SpatioTemporalTensor& normalized, std::span<const std::size_t> anchors,
                               nn::Rng* dropout_rng) {
  const auto layout = m.config().layout();
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(anchors.size());
  for (std::size_t t : anchors) {
    const auto s = data::make_sample(normalized, t, layout);
    const Var pred = m.forward(s.encoder, s.decoder, dropout_rng);
    const Var loss = nn::mae_loss(pred, Var::constant(s.target));
    const double v = loss.value()[0];
    if (!std::isfinite(v)) throw ComputeError("non-finite loss at anchor " + std::to_string(t));
    nn::mul_scalar(loss, inv_b).backward();
    total += v;
  }
  return total * inv_b;
}

/// Adam on MAE with teacher forcing, early stopping on validation MAE. The
/// best-validation parameters are restored before returning (or the last
/// epoch's when there is no validation set).
inline TrainResult train(Model& m, const TrainData& d, const TrainOptions& opt = {}) {
  if (!d.normalized) throw ConfigError("train: normalized tensor missing");
  if (d.train_anchors.empty()) throw DataError("train: no training samples (series too short for the period layout)");
  const auto& cfg = m.config();
  const std::size_t epochs = opt.epochs.value_or(cfg.epochs);
  auto params = m.parameters();
  Adam adam(cfg.learning_rate);
  nn::Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  nn::Rng* dropout_rng = cfg.dropout > 0.0 ? &rng : nullptr;
  std::vector<std::size_t> order = d.train_anchors;
  TrainResult result;
  ParameterSnapshot best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (opt.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      for (auto* p : params) p->zero_grad();
      const std::span<const std::size_t> batch(order.data() + b, e - b);
      const double mae = accumulate_batch(m, *d.normalized, batch, dropout_rng);
      if (!std::isfinite(mae)) {
        throw ComputeError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
      }
      sum += mae * static_cast<double>(e - b);
      adam.step(params);
    }
    for (auto* p : params) p->zero_grad();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = sum / static_cast<double>(order.size());
    if (!d.val_anchors.empty()) {
      const auto err = forecast_errors(m, *d.normalized, d.val_anchors, d.target_norm);
      rec.val_mae = err.abs / static_cast<double>(err.count);
      rec.val_rmse = std::sqrt(err.sq / static_cast<double>(err.count));
      rec.val_mape = err.pct_count ? err.pct / static_cast<double>(err.pct_count) : NAN;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
    if (!d.val_anchors.empty()) {
      if (best.empty() || rec.val_mae < result.best_val_mae) {
        result.best_val_mae = rec.val_mae;
        result.best_epoch = epoch;
        best = snapshot(m);
        since_best = 0;
      } else if (++since_best >= cfg.patience && cfg.patience > 0) {
        result.stopped_early = true;
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
  }
  if (!best.empty()) restore(m, best);
  return result;
}

inline void write_training_log(std::ostream& os, const TrainResult& r) {
  os << "epoch,train_mae,val_mae,val_rmse,val_mape,seconds\n";
  os.precision(10);
  for (const auto& e : r.log) {
    os << e.epoch << ',' << e.train_mae << ',' << e.val_mae << ',' << e.val_rmse << ',' << e.val_mape << ','
       << e.seconds << '\n';
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "CSTN" | u32 version | u64 architecture hash | u32 len + config text |
//   u32 attributes-with-normalization, then (f64 min, f64 max) each |
//   SCorr block (see scorr::write_scorr) | u32 N + N*N f64 normalized adjacency |
//   u32 parameter count, then per parameter:
//     u32 name length + name | u32 rank + rank * u32 dims | f64 values

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<data::NormParams> norm_params;
  std::optional<Model> model;
};

namespace detail {

inline void write_string(std::ostream& os, const std::string& s) {
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto len = io::read_le<std::uint32_t>(is);
  if (len > (1u << 24)) throw DataError("checkpoint string too long");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, Model& m, const std::vector<data::NormParams>& norm) {
  io::write_magic(os, "CSTN");
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint64_t>(os, m.config().architecture_hash());
  detail::write_string(os, m.config().to_text());
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(norm.size()));
  for (const auto& p : norm) {
    io::write_le<double>(os, p.min);
    io::write_le<double>(os, p.max);
  }
  scorr::write_scorr(os, m.scorr());
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.adjacency().size));
  for (double v : m.adjacency().matrix) io::write_le<double>(os, v);
  const auto params = m.parameters();
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) {
    detail::write_string(os, p->name);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->shape().size()));
    for (auto dim : p->shape()) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
    for (double v : p->value().values()) io::write_le<double>(os, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "CSTN");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto hash = io::read_le<std::uint64_t>(is);
  Checkpoint ck;
  ck.config = ModelConfig::from_text(detail::read_string(is));
  if (ck.config.architecture_hash() != hash) throw DataError("checkpoint config hash mismatch");
  const auto nn_count = io::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nn_count; ++i) {
    data::NormParams p;
    p.min = io::read_le<double>(is);
    p.max = io::read_le<double>(is);
    ck.norm_params.push_back(p);
  }
  const auto s = scorr::read_scorr(is);
  nn::NormalizedAdjacency adj;
  adj.size = io::read_le<std::uint32_t>(is);
  adj.matrix.resize(adj.size * adj.size);
  for (double& v : adj.matrix) v = io::read_le<double>(is);
  ck.model.emplace(ck.config, s, adj);
  auto params = ck.model->parameters();
  const auto count = io::read_le<std::uint32_t>(is);
  if (count != params.size()) throw DataError("checkpoint parameter count does not match its config");
  for (auto* p : params) {
    const auto name = detail::read_string(is);
    if (name != p->name) throw DataError("checkpoint parameter '" + name + "' where '" + p->name + "' was expected");
    const auto rank = io::read_le<std::uint32_t>(is);
    nn::Shape shape(rank);
    for (auto& dim : shape) dim = io::read_le<std::uint32_t>(is);
    if (shape != p->shape()) throw DataError("checkpoint shape mismatch for " + name);
    for (double& v : p->value().values()) v = io::read_le<double>(is);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, Model& m, const std::vector<data::NormParams>& norm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_checkpoint(os, m, norm);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path + " (produce it with `corrstn train`)");
  return read_checkpoint(is);
}

/// Denormalized [L, N, 1] forecast for the sample anchored at `t` of a
/// normalized tensor.
inline Tensor predict(const Model& m, const std::vector<data::NormParams>& norm, const SpatioTemporalTensor& normalized,
                      std::size_t t) {
  const std::size_t target = m.config().target_attribute;
  if (norm.size() <= target) throw ConfigError("normalization metadata missing; cannot denormalize forecasts");
  const auto s = data::make_sample(normalized, t, m.config().layout());
  Tensor last({m.sensors()}, 0.0);
  for (std::size_t i = 0; i < m.sensors(); ++i) last[i] = s.decoder[i];
  Tensor out = m.rollout(s.encoder, last);
  for (double& v : out.values()) v = data::denormalize_value(v, norm[target]);
  return out;
}

}  // namespace corrstn::model
