// corrstn command-line entry point.
//
// Exit codes: 0 success, 1 usage, 2 configuration error, 3 data error,
// 4 compute error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "corrstn/corrstn.hpp"

#ifndef CORRSTN_GIT_DESCRIBE
#define CORRSTN_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace corrstn;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kCompute = 4 };

int default_threads() {
  if (const char* env = std::getenv("CORRSTN_THREADS")) {
    try {
      return std::max(0, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("CORRSTN_THREADS is not an integer: ") + env);
    }
  }
  return 0;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// One manifest per run, written next to the primary output unless --manifest is given.
class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv) {
    j_["command"] = std::move(command);
    std::string line;
    for (int i = 0; i < argc; ++i) line += (i ? " " : "") + std::string(argv[i]);
    j_["argv"] = line;
    j_["git_describe"] = CORRSTN_GIT_DESCRIBE;
    j_["timings_seconds"] = json::object();
    j_["outputs"] = json::array();
  }

  json& operator[](const std::string& key) { return j_[key]; }
  void output(const std::string& path) { j_["outputs"].push_back(path); }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      j_["timings_seconds"][name] = seconds_since(start);
    } else {
      auto r = f();
      j_["timings_seconds"][name] = seconds_since(start);
      return r;
    }
  }

  void write(const std::string& override_path, const std::string& primary_output) const {
    fs::path p = override_path;
    if (p.empty()) {
      const fs::path dir = fs::path(primary_output).parent_path();
      p = dir / (j_["command"].get<std::string>() + ".manifest.json");
    }
    json out = j_;
    out["output_dir"] = fs::absolute(p.parent_path().empty() ? fs::path(".") : p.parent_path()).string();
    std::ofstream os(p);
    if (!os) throw DataError("cannot write manifest " + p.string());
    os << out.dump(2) << '\n';
  }

 private:
  json j_;
};

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

json read_json(const std::string& path, const std::string& producer) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path + " (produce it with `corrstn " + producer + "`)");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

data::Range split_range(const data::Splits& s, const std::string& name, std::size_t t) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  if (name == "all") return {0, t};
  throw ConfigError("unknown split '" + name + "' (train, val, test or all)");
}

// Every `stride`-th anchor, then at most `cap` of them spread evenly (0 keeps all).
std::vector<std::size_t> thin(std::vector<std::size_t> anchors, std::size_t stride, std::size_t cap) {
  if (stride > 1) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < anchors.size(); i += stride) kept.push_back(anchors[i]);
    anchors = std::move(kept);
  }
  if (cap > 0 && anchors.size() > cap) {
    std::vector<std::size_t> kept;
    for (std::size_t k = 0; k < cap; ++k) kept.push_back(anchors[k * anchors.size() / cap]);
    anchors = std::move(kept);
  }
  return anchors;
}

tcorr::TCorrWeights parse_weights(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("--weights expects three comma-separated numbers");
    }
  }
  if (v.size() != 3) throw ConfigError("--weights expects three comma-separated numbers (hourly,daily,weekly)");
  return {v[0], v[1], v[2]};
}

struct DataOptions {
  std::string data;
  std::string edges;
  void add(CLI::App* app, bool edges_flag = true) {
    app->add_option("-d,--data", data, "Tensor file (.sttf binary or .csv)")->required();
    if (edges_flag) app->add_option("-e,--edges", edges, "Edge list CSV");
  }
  data::TrafficDataset load() const { return data::load_dataset(data, edges); }
};

// ---------------------------------------------------------------------------

struct SynthOptions {
  data::SyntheticSpec spec;
  std::uint64_t seed = 1;
  std::string out;
  std::string edges;
};

void run_synth(const SynthOptions& o, Manifest& man) {
  const auto ds = man.stage("generate", [&] { return data::generate_synthetic(o.spec, o.seed); });
  const std::string edges = o.edges.empty() ? (fs::path(o.out).replace_extension(".edges.csv")).string() : o.edges;
  man.stage("write", [&] {
    if (fs::path(o.out).extension() == ".csv") {
      std::ofstream os(o.out);
      if (!os) throw DataError("cannot open " + o.out + " for writing");
      data::write_tensor_csv(os, ds.tensor, ds.sensor_ids);
    } else {
      data::save_tensor(o.out, ds.tensor);
    }
    data::save_edges_csv(edges, ds);
  });
  man["seed"] = o.seed;
  man["dataset"] = {{"tensor", o.out}, {"edges", edges}};
  man.output(o.out);
  man.output(edges);
  std::printf("synth: T=%zu N=%zu C=%zu -> %s, %s\n", ds.timestamps(), ds.sensors(), ds.attributes(), o.out.c_str(),
              edges.c_str());
}

// ---------------------------------------------------------------------------

struct ScorrOptions {
  DataOptions data;
  double eta = mic::kDefaultEta;
  int threads = 0;
  std::string split = "train";
  std::size_t window = 0;
  std::size_t stride = 0;
  std::string out;
  std::string csv;
};

void run_scorr(const ScorrOptions& o, Manifest& man) {
  const auto ds = man.stage("load", [&] { return o.data.load(); });
  const auto splits = data::split(ds.timestamps());
  const auto range = split_range(splits, o.split, ds.timestamps());
  const auto x = ds.tensor.slice(range.begin, range.end);
  const int threads = mic::resolve_threads(o.threads);
  const std::size_t n = ds.sensors();
  const std::size_t pairs_per_window = ds.attributes() * n * (n - 1) / 2;

  std::vector<scorr::SCorrTensor> results;
  const auto start = std::chrono::steady_clock::now();
  if (o.window > 0) {
    results = scorr::windowed_scorr(x, o.window, o.stride ? o.stride : o.window, o.eta, threads);
  } else {
    results.push_back(scorr::compute_scorr(x, o.eta, threads));
  }
  const double secs = seconds_since(start);
  man["timings_seconds"]["compute"] = secs;
  const double pairs = static_cast<double>(pairs_per_window * results.size());

  man.stage("write", [&] {
    if (results.size() == 1 && o.window == 0) {
      scorr::save_scorr(o.out, results[0]);
      man.output(o.out);
      if (!o.csv.empty()) {
        std::ofstream os(o.csv);
        scorr::write_scorr_csv(os, results[0]);
        man.output(o.csv);
      }
    } else {
      const fs::path base(o.out);
      for (std::size_t w = 0; w < results.size(); ++w) {
        fs::path p = base;
        p.replace_extension(".w" + std::to_string(w) + base.extension().string());
        scorr::save_scorr(p.string(), results[w], scorr::kScorrFlagWindowed);
        man.output(p.string());
      }
    }
  });
  man["dataset"] = {{"tensor", o.data.data}, {"edges", o.data.edges}};
  man["split"] = o.split;
  man["eta"] = o.eta;
  man["threads"] = threads;
  man["throughput"] = {{"sensors", n},
                       {"timestamps", x.timestamps()},
                       {"attributes", ds.attributes()},
                       {"windows", results.size()},
                       {"pairs", pairs},
                       {"seconds", secs},
                       {"pairs_per_second", secs > 0 ? pairs / secs : 0.0}};
  std::printf("scorr: N=%zu T=%zu C=%zu windows=%zu threads=%d pairs=%.0f seconds=%.3f pairs_per_second=%.1f\n", n,
              x.timestamps(), ds.attributes(), results.size(), threads, pairs, secs, secs > 0 ? pairs / secs : 0.0);
}

// ---------------------------------------------------------------------------

struct TcorrOptions {
  DataOptions data;
  double eta = mic::kDefaultEta;
  std::string weights = "0.95,0.95,0.85";
  int threads = 0;
  std::string split = "train";
  std::string out;
  std::string csv;
};

tcorr::TCorrReport compute_tcorr_report(const TcorrOptions& o, Manifest& man, std::string* dataset_name) {
  const auto ds = man.stage("load", [&] { return o.data.load(); });
  const auto splits = data::split(ds.timestamps());
  const auto range = split_range(splits, o.split, ds.timestamps());
  const auto spec = tcorr::PeriodSpec::for_interval(ds.tensor.interval_minutes());
  const auto anchors = tcorr::default_anchors(spec, range.begin, range.end);
  if (anchors.empty()) {
    throw DataError("the " + o.split + " split (" + std::to_string(range.size()) +
                    " timestamps) is too short for one weekly lookback plus a target window (" +
                    std::to_string(spec.weekly_offset + spec.tau) + " needed)");
  }
  const int threads = mic::resolve_threads(o.threads);
  auto r = man.stage("compute", [&] {
    return tcorr::tcorr_report(ds.tensor, spec, anchors, o.eta, parse_weights(o.weights), threads);
  });
  man["dataset"] = {{"tensor", o.data.data}};
  man["split"] = o.split;
  man["threads"] = threads;
  *dataset_name = o.data.data;
  return r;
}

void print_tcorr(const tcorr::TCorrReport& r) {
  for (std::size_t c = 0; c < r.attributes; ++c) {
    std::printf("tcorr: attribute %zu  hourly=%.4f daily=%.4f weekly=%.4f  verdict=%s\n", c, r.means[0][c],
                r.means[1][c], r.means[2][c], r.verdicts[c].str().c_str());
  }
  std::printf("tcorr: anchors=%zu verdict=%s\n", r.anchors, r.verdict().str().c_str());
}

void run_tcorr(const TcorrOptions& o, Manifest& man) {
  std::string name;
  const auto r = compute_tcorr_report(o, man, &name);
  write_json(o.out, tcorr::report_to_json(r, name));
  man.output(o.out);
  if (!o.csv.empty()) {
    std::ofstream os(o.csv);
    os << "sensor,attribute,hourly,daily,weekly\n";
    os.precision(10);
    for (std::size_t i = 0; i < r.sensors; ++i) {
      for (std::size_t c = 0; c < r.attributes; ++c) {
        const std::size_t k = i * r.attributes + c;
        os << i << ',' << c << ',' << r.weighted[0][k] << ',' << r.weighted[1][k] << ',' << r.weighted[2][k] << '\n';
      }
    }
    man.output(o.csv);
  }
  print_tcorr(r);
}

// ---------------------------------------------------------------------------

struct ConfigOptions {
  std::string config;
  std::string preset;
  void add(CLI::App* app) {
    app->add_option("-c,--config", config, "Model config file (key=value lines)");
    app->add_option("--preset", preset, "Hyperparameter preset, e.g. PEMS08 or HZME(out)(p)");
  }
  model::ModelConfig load() const {
    model::ModelConfig c = preset.empty() ? model::ModelConfig() : model::preset(preset);
    if (!config.empty()) c = model::ModelConfig::load(config, c);
    return c;
  }
};

struct SelectOptions {
  TcorrOptions tcorr;
  std::string report;
  ConfigOptions config;
  std::string out;
};

void run_select(const SelectOptions& o, Manifest& man) {
  tcorr::PeriodSet verdict;
  if (!o.report.empty()) {
    const auto r = tcorr::report_from_json(read_json(o.report, "tcorr"));
    verdict = r.verdict();
    print_tcorr(r);
    man["tcorr_report"] = o.report;
  } else if (!o.tcorr.data.data.empty()) {
    std::string name;
    const auto r = compute_tcorr_report(o.tcorr, man, &name);
    verdict = r.verdict();
    print_tcorr(r);
  } else {
    throw ConfigError("select needs --report (from `corrstn tcorr`) or --data");
  }
  model::ModelConfig c = o.config.load();
  c.periods = verdict;
  c.validate();
  c.save(o.out);
  man["config"] = o.config.config;
  man["verdict"] = verdict.str();
  man.output(o.out);
  std::printf("select: periods=%s -> %s\n", verdict.str().c_str(), o.out.c_str());
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  DataOptions data;
  ConfigOptions config;
  std::string scorr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t val_samples = 32;
  std::size_t train_stride = 1;
  std::string out;
  std::string log;
};

void run_train(const TrainOptions& o, Manifest& man) {
  model::ModelConfig cfg = o.config.load();
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  auto ds = man.stage("load", [&] { return o.data.load(); });
  if (ds.tensor.interval_minutes() != cfg.interval_minutes) cfg.interval_minutes = ds.tensor.interval_minutes();
  cfg.validate(ds.sensors(), ds.attributes());
  if (o.scorr.empty()) throw ConfigError("train needs --scorr (produce it with `corrstn scorr`)");
  if (!fs::exists(o.scorr)) throw DataError("SCorr file " + o.scorr + " not found (produce it with `corrstn scorr`)");
  const auto s = scorr::load_scorr(o.scorr);
  if (s.sensors() != ds.sensors() || s.attributes() != ds.attributes()) {
    throw DataError("SCorr file " + o.scorr + " covers N=" + std::to_string(s.sensors()) + ", C=" +
                    std::to_string(s.attributes()) + " but the dataset has N=" + std::to_string(ds.sensors()) +
                    ", C=" + std::to_string(ds.attributes()));
  }
  const auto splits = data::split(ds.timestamps());
  data::fit_normalization(ds, splits.train);
  const auto xn = data::normalize(ds);
  auto m = model::build_model(cfg, s, model::model_adjacency(ds.adjacency, ds.sensors()), ds.sensors());
  const auto layout = cfg.layout();
  model::TrainData td;
  td.normalized = &xn;
  td.train_anchors = thin(data::sample_anchors(splits.train, layout), o.train_stride, 0);
  td.val_anchors = thin(data::sample_anchors(splits.val, layout), 1, o.val_samples);
  td.target_norm = ds.norm_params[cfg.target_attribute];
  if (td.train_anchors.empty()) {
    throw DataError("no training samples: the training split has " + std::to_string(splits.train.size()) +
                    " timestamps but periods " + cfg.periods.str() + " need more than " +
                    std::to_string(layout.min_lookback_anchor() + layout.horizon + 1));
  }
  std::printf("train: %zu parameters, %zu training / %zu validation samples, periods %s\n", m.parameter_count(),
              td.train_anchors.size(), td.val_anchors.size(), cfg.periods.str().c_str());
  model::TrainOptions topt;
  topt.on_epoch = [&](const model::EpochRecord& e) {
    std::printf("epoch %zu/%zu train_mae=%.6f val_mae=%.4f (%.2f s)\n", e.epoch, cfg.epochs, e.train_mae, e.val_mae,
                e.seconds);
    std::fflush(stdout);
  };
  const auto result = man.stage("train", [&] { return model::train(m, td, topt); });
  man.stage("write", [&] { model::save_checkpoint(o.out, m, ds.norm_params); });
  man.output(o.out);
  if (!o.log.empty()) {
    std::ofstream os(o.log);
    model::write_training_log(os, result);
    man.output(o.log);
  }
  man["config"] = o.config.config;
  man["preset"] = o.config.preset;
  man["resolved_config"] = cfg.to_text();
  man["seed"] = cfg.seed;
  man["dataset"] = {{"tensor", o.data.data}, {"edges", o.data.edges}, {"scorr", o.scorr}};
  man["best_epoch"] = result.best_epoch;
  man["best_val_mae"] = std::isnan(result.best_val_mae) ? json(nullptr) : json(result.best_val_mae);
  man["stopped_early"] = result.stopped_early;
  std::printf("train: best epoch %zu, checkpoint %s\n", result.best_epoch, o.out.c_str());
}

// ---------------------------------------------------------------------------

struct Loaded {
  data::TrafficDataset ds;
  SpatioTemporalTensor normalized;
  model::Checkpoint ck;
};

Loaded load_for_inference(const std::string& ckpt, const DataOptions& d) {
  Loaded l;
  l.ck = model::load_checkpoint(ckpt);
  l.ds = d.load();
  const auto& m = *l.ck.model;
  if (l.ds.sensors() != m.sensors() || l.ds.attributes() != m.attributes()) {
    throw DataError("checkpoint " + ckpt + " expects N=" + std::to_string(m.sensors()) + ", C=" +
                    std::to_string(m.attributes()) + "; dataset has N=" + std::to_string(l.ds.sensors()) + ", C=" +
                    std::to_string(l.ds.attributes()));
  }
  l.ds.norm_params = l.ck.norm_params;
  l.normalized = data::normalize(l.ds);
  return l;
}

struct SampleOptions {
  std::string split = "test";
  std::size_t stride = 1;
  std::size_t max_samples = 0;
  void add(CLI::App* app) {
    app->add_option("--split", split, "Split to forecast: train, val, test or all")->capture_default_str();
    app->add_option("--stride", stride, "Use every k-th anchor")->capture_default_str();
    app->add_option("--max-samples", max_samples, "Cap on samples, spread evenly (0 = all)")->capture_default_str();
  }
  std::vector<std::size_t> anchors(const model::ModelConfig& cfg, std::size_t t) const {
    const auto splits = data::split(t);
    return thin(data::sample_anchors(split_range(splits, split, t), cfg.layout()), stride, max_samples);
  }
};

struct PredictOptions {
  std::string model;
  DataOptions data;
  std::vector<std::size_t> anchors;
  SampleOptions samples;
  std::string out;
};

void run_predict(const PredictOptions& o, Manifest& man) {
  const auto l = man.stage("load", [&] { return load_for_inference(o.model, o.data); });
  const auto& m = *l.ck.model;
  const auto anchors = o.anchors.empty() ? o.samples.anchors(m.config(), l.ds.timestamps()) : o.anchors;
  if (anchors.empty()) throw DataError("no forecast anchors in the " + o.samples.split + " split");
  std::ofstream os(o.out);
  if (!os) throw DataError("cannot open " + o.out + " for writing");
  os << "anchor,horizon,sensor,forecast,truth\n";
  os.precision(10);
  const std::size_t target = m.config().target_attribute;
  man.stage("predict", [&] {
    for (std::size_t t : anchors) {
      const auto y = model::predict(m, l.ds.norm_params, l.normalized, t);
      for (std::size_t h = 0; h < m.config().horizon; ++h) {
        for (std::size_t i = 0; i < m.sensors(); ++i) {
          os << t << ',' << h + 1 << ',' << l.ds.sensor_ids[i] << ',' << y[h * m.sensors() + i] << ',';
          if (t + h + 1 < l.ds.timestamps()) os << l.ds.tensor(t + h + 1, i, target);
          os << '\n';
        }
      }
    }
  });
  man["model"] = o.model;
  man["dataset"] = {{"tensor", o.data.data}};
  man.output(o.out);
  std::printf("predict: %zu forecasts -> %s\n", anchors.size(), o.out.c_str());
}

// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::vector<std::string> models;
  DataOptions data;
  SampleOptions samples;
  std::string out;
  std::string horizon_csv;
};

void run_evaluate(const EvaluateOptions& o, Manifest& man) {
  std::vector<eval::MetricReport> reports;
  std::size_t samples = 0;
  for (const auto& path : o.models) {
    const auto l = man.stage("load:" + path, [&] { return load_for_inference(path, o.data); });
    const auto anchors = o.samples.anchors(l.ck.config, l.ds.timestamps());
    if (anchors.empty()) throw DataError("evaluate: the " + o.samples.split + " split holds no complete sample");
    samples = anchors.size();
    reports.push_back(man.stage("evaluate:" + path, [&] { return eval::evaluate(*l.ck.model, l.ds, l.normalized, anchors); }));
  }
  json j = eval::report_to_json(reports.front());
  j["split"] = o.samples.split;
  j["samples"] = samples;
  j["models"] = o.models;
  if (reports.size() > 1) {
    json runs = json::array();
    std::vector<double> mae, rmse, mape;
    for (const auto& r : reports) {
      runs.push_back(eval::report_to_json(r));
      mae.push_back(r.overall.mae);
      rmse.push_back(r.overall.rmse);
      if (!r.overall.mape_undefined) mape.push_back(r.overall.mape);
    }
    auto ms = [](const std::vector<double>& v) {
      const auto s = eval::mean_std(v);
      return json{{"mean", std::isnan(s.mean) ? json(nullptr) : json(s.mean)},
                  {"std", std::isnan(s.std) ? json(nullptr) : json(s.std)}};
    };
    j["runs"] = runs;
    j["aggregate"] = {{"mae", ms(mae)}, {"rmse", ms(rmse)}, {"mape", ms(mape)}};
  }
  write_json(o.out, j);
  man.output(o.out);
  if (!o.horizon_csv.empty()) {
    std::ofstream os(o.horizon_csv);
    eval::write_horizon_csv(os, reports.front());
    man.output(o.horizon_csv);
  }
  man["dataset"] = {{"tensor", o.data.data}};
  man["models"] = o.models;
  const auto& r = reports.front().overall;
  std::printf("evaluate: samples=%zu MAE=%.4f RMSE=%.4f MAPE=%s\n", samples, r.mae, r.rmse,
              r.mape_undefined ? "undefined" : (std::to_string(r.mape * 100.0) + "%").c_str());
}

// ---------------------------------------------------------------------------

struct ExportOptions {
  std::string kind;
  std::vector<std::string> inputs;
  std::string out;
  std::string histogram;
  std::size_t bins = 20;
};

void run_export(const ExportOptions& o, Manifest& man) {
  if (o.inputs.empty()) throw ConfigError("export-plot-data needs at least one --input");
  std::ofstream os(o.out);
  if (!os) throw DataError("cannot open " + o.out + " for writing");
  os.precision(10);
  if (o.kind == "horizon") {
    eval::write_horizon_csv(os, eval::report_from_json(read_json(o.inputs.front(), "evaluate")));
  } else if (o.kind == "tcorr") {
    const auto r = tcorr::report_from_json(read_json(o.inputs.front(), "tcorr"));
    os << "sensor,attribute,hourly,daily,weekly\n";
    for (std::size_t i = 0; i < r.sensors; ++i) {
      for (std::size_t c = 0; c < r.attributes; ++c) {
        const std::size_t k = i * r.attributes + c;
        os << i << ',' << c << ',' << r.weighted[0][k] << ',' << r.weighted[1][k] << ',' << r.weighted[2][k] << '\n';
      }
    }
    if (!o.histogram.empty()) {
      if (o.bins == 0) throw ConfigError("--bins must be positive");
      std::ofstream hs(o.histogram);
      hs << "period,bin_lower,bin_upper,count\n";
      for (tcorr::Period p : tcorr::kAllPeriods) {
        std::vector<std::size_t> counts(o.bins, 0);
        for (double v : r.weighted[static_cast<std::size_t>(p)]) {
          ++counts[std::min(o.bins - 1, static_cast<std::size_t>(v * static_cast<double>(o.bins)))];
        }
        for (std::size_t b = 0; b < o.bins; ++b) {
          hs << tcorr::period_name(p) << ',' << static_cast<double>(b) / static_cast<double>(o.bins) << ','
             << static_cast<double>(b + 1) / static_cast<double>(o.bins) << ',' << counts[b] << '\n';
        }
      }
      man.output(o.histogram);
    }
  } else if (o.kind == "ablation") {
    os << "label,mae,rmse,mape_percent\n";
    for (const auto& item : o.inputs) {
      const auto eq = item.find('=');
      const std::string label = eq == std::string::npos ? fs::path(item).stem().string() : item.substr(0, eq);
      const std::string path = eq == std::string::npos ? item : item.substr(eq + 1);
      const auto r = eval::report_from_json(read_json(path, "evaluate")).overall;
      os << label << ',' << r.mae << ',' << r.rmse << ',';
      if (r.mape_undefined) os << "nan";
      else os << r.mape * 100.0;
      os << '\n';
    }
  } else {
    throw ConfigError("unknown --kind '" + o.kind + "' (horizon, tcorr or ablation)");
  }
  man["kind"] = o.kind;
  man["inputs"] = o.inputs;
  man.output(o.out);
  std::printf("export-plot-data: %s -> %s\n", o.kind.c_str(), o.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correlation-information spatiotemporal forecasting toolkit"};
  app.set_version_flag("--version", std::string("corrstn ") + CORRSTN_GIT_DESCRIBE);
  app.require_subcommand(1);
  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "Manifest path (default: <output dir>/<command>.manifest.json)");

  int env_threads = 0;
  try {
    env_threads = default_threads();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  }

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic periodic traffic dataset");
  c_synth->add_option("--sensors", synth.spec.sensors)->capture_default_str();
  c_synth->add_option("--weeks", synth.spec.weeks)->capture_default_str();
  c_synth->add_option("--timestamps", synth.spec.timestamps, "Overrides --weeks when positive")->capture_default_str();
  c_synth->add_option("--attributes", synth.spec.attributes)->capture_default_str();
  c_synth->add_option("--interval", synth.spec.interval_minutes, "Minutes per timestamp")->capture_default_str();
  c_synth->add_option("--base", synth.spec.base)->capture_default_str();
  c_synth->add_option("--daily-amplitude", synth.spec.daily_amplitude)->capture_default_str();
  c_synth->add_option("--weekly-amplitude", synth.spec.weekly_amplitude)->capture_default_str();
  c_synth->add_option("--noise", synth.spec.noise_sigma)->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("-o,--out", synth.out, "Tensor output (.sttf or .csv)")->required();
  c_synth->add_option("--edges-out", synth.edges, "Edge list output (default <out>.edges.csv)");

  ScorrOptions sc;
  sc.threads = env_threads;
  auto* c_scorr = app.add_subcommand("scorr", "Spatial correlation tensor (pairwise MIC)");
  sc.data.add(c_scorr);
  c_scorr->add_option("--eta", sc.eta)->capture_default_str();
  c_scorr->add_option("-j,--threads", sc.threads, "Worker threads (0 = all; env CORRSTN_THREADS)")->capture_default_str();
  c_scorr->add_option("--split", sc.split, "train or all")->capture_default_str();
  c_scorr->add_option("--window", sc.window, "Sliding window length (0 = static)")->capture_default_str();
  c_scorr->add_option("--stride", sc.stride, "Window stride (default = window)");
  c_scorr->add_option("-o,--out", sc.out, "SCorr binary output")->required();
  c_scorr->add_option("--csv", sc.csv, "Also write a CSV listing");

  TcorrOptions tc;
  tc.threads = env_threads;
  auto* c_tcorr = app.add_subcommand("tcorr", "Temporal correlation report and period verdict");
  tc.data.add(c_tcorr, false);
  c_tcorr->add_option("--eta", tc.eta)->capture_default_str();
  c_tcorr->add_option("--weights", tc.weights, "hourly,daily,weekly multipliers")->capture_default_str();
  c_tcorr->add_option("-j,--threads", tc.threads)->capture_default_str();
  c_tcorr->add_option("--split", tc.split, "train or all")->capture_default_str();
  c_tcorr->add_option("-o,--out", tc.out, "Report JSON")->required();
  c_tcorr->add_option("--csv", tc.csv, "Per-sensor weighted TCorr CSV");

  SelectOptions sel;
  sel.tcorr.threads = env_threads;
  auto* c_select = app.add_subcommand("select", "Write a model config with the selected periods");
  c_select->add_option("-r,--report", sel.report, "TCorr report JSON");
  c_select->add_option("-d,--data", sel.tcorr.data.data, "Tensor file (computes TCorr when no report is given)");
  c_select->add_option("--split", sel.tcorr.split)->capture_default_str();
  c_select->add_option("-j,--threads", sel.tcorr.threads)->capture_default_str();
  sel.config.add(c_select);
  c_select->add_option("-o,--out", sel.out, "Config output")->required();

  TrainOptions tr;
  auto* c_train = app.add_subcommand("train", "Train the forecaster");
  tr.data.add(c_train);
  tr.config.add(c_train);
  c_train->add_option("-s,--scorr", tr.scorr, "SCorr file from `corrstn scorr`")->required();
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--val-samples", tr.val_samples, "Validation samples per epoch (0 = all)")->capture_default_str();
  c_train->add_option("--train-stride", tr.train_stride, "Use every k-th training anchor")->capture_default_str();
  c_train->add_option("-o,--out", tr.out, "Checkpoint output")->required();
  c_train->add_option("--log", tr.log, "Per-epoch CSV log");

  PredictOptions pr;
  auto* c_predict = app.add_subcommand("predict", "Write forecasts as CSV");
  c_predict->add_option("-m,--model", pr.model, "Checkpoint")->required();
  pr.data.add(c_predict, false);
  c_predict->add_option("--anchor", pr.anchors, "Last observed timestamp (repeatable)");
  pr.samples.add(c_predict);
  c_predict->add_option("-o,--out", pr.out)->required();

  EvaluateOptions ev;
  auto* c_eval = app.add_subcommand("evaluate", "Forecast metrics over a split (several models: mean and std)");
  c_eval->add_option("-m,--model", ev.models, "Checkpoint (repeat for multi-seed runs)")->required();
  ev.data.add(c_eval, false);
  ev.samples.add(c_eval);
  c_eval->add_option("-o,--out", ev.out, "Report JSON")->required();
  c_eval->add_option("--horizon-csv", ev.horizon_csv, "Per-horizon CSV");

  ExportOptions ex;
  auto* c_export = app.add_subcommand("export-plot-data", "Plot-ready CSV from reports");
  c_export->add_option("-k,--kind", ex.kind, "horizon, tcorr or ablation")->required();
  c_export->add_option("-i,--input", ex.inputs, "Report JSON (ablation: label=path, repeatable)")->required();
  c_export->add_option("-o,--out", ex.out)->required();
  c_export->add_option("--histogram", ex.histogram, "tcorr: histogram CSV output");
  c_export->add_option("--bins", ex.bins)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Manifest man(command, argc, argv);
    std::string primary;
    if (*c_synth) run_synth(synth, man), primary = synth.out;
    else if (*c_scorr) run_scorr(sc, man), primary = sc.out;
    else if (*c_tcorr) run_tcorr(tc, man), primary = tc.out;
    else if (*c_select) run_select(sel, man), primary = sel.out;
    else if (*c_train) run_train(tr, man), primary = tr.out;
    else if (*c_predict) run_predict(pr, man), primary = pr.out;
    else if (*c_eval) run_evaluate(ev, man), primary = ev.out;
    else if (*c_export) run_export(ex, man), primary = ex.out;
    man.write(manifest_path, primary);
    return kOk;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s: configuration error: %s\n", command.c_str(), e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "%s: data error: %s\n", command.c_str(), e.what());
    return kData;
  } catch (const RangeError& e) {
    std::fprintf(stderr, "%s: data error: %s\n", command.c_str(), e.what());
    return kData;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "%s: data error: %s\n", command.c_str(), e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s: compute error: %s\n", command.c_str(), e.what());
    return kCompute;
  }
}
