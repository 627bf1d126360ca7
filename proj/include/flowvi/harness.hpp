// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowvi/data.hpp"
#include "flowvi/flows/baselines.hpp"
#include "flowvi/flows/particle_flows.hpp"
#include "flowvi/metrics.hpp"
#include "flowvi/targets/bnn.hpp"
#include "flowvi/targets/gmm.hpp"
#include "flowvi/targets/logistic_regression.hpp"

namespace flowvi {

using json = nlohmann::json;

// ----- experiment configuration ---------------------------------------------

struct DatasetSpec {
  std::string path;
  std::string target_column;
  LabelKind label_kind = LabelKind::kNumeric;
  bool standardize = true;
  int train_count = 0;
  int split_index = 0;
  std::uint64_t split_seed = 0;
};

struct SyntheticSpec {
  int n_train = 200;
  int n_test = 200;
  int in_dim = 2;
  double noise = 0.05;
  std::uint64_t seed = 7;
};

struct TargetSpec {
  std::string type;  // "gmm" | "logreg" | "bnn"

  // gmm
  ParticleMixture gmm;

  // logreg / bnn
  double reg = 1.0;
  int batch_size = 0;  // 0 = full batch
  std::optional<DatasetSpec> dataset;

  // bnn
  BnnTarget::Task task = BnnTarget::Task::kRegression;
  Eigen::Index hidden = 50;
  MlpArchitecture::Activation activation = MlpArchitecture::Activation::kRelu;
  BnnTarget::Options bnn_options;
  std::optional<SyntheticSpec> synthetic;
};

struct InitSettings {
  double mean_scale = 1.0;  // component means drawn from N(0, mean_scale^2 I)
  double precision = 1.0;   // initial s, identical across coordinates
};

struct MetricSettings {
  long cadence = 10;
  int elbo_samples = 1000;
  int kl_samples = 10000;
  int pred_weight_samples = 100;
  bool mse_destandardized = false;
};

struct ExperimentConfig {
  std::string run_name = "run";
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  int K = 1;
  FlowConfig flow;
  InitSettings init;
  MetricSettings metrics;
  bool record_timings = false;  // volatile timings break byte-for-byte reruns
  TargetSpec target;
};

// ----- JSON parsing ----------------------------------------------------------

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

inline Vec vec_from_json(const json& j) {
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

inline ParticleMixture mixture_from_json(const json& j) {
  const auto& means = j.at("means");
  const auto& precisions = j.at("precisions");
  if (means.size() != precisions.size())
    throw std::invalid_argument("config: means and precisions disagree in component count");
  ParticleMixture m;
  for (size_t k = 0; k < means.size(); ++k)
    m.particles.push_back({vec_from_json(means.at(k)), vec_from_json(precisions.at(k))});
  if (j.contains("weights")) {
    m.weights = vec_from_json(j.at("weights"));
  } else {
    m.weights = Vec::Constant(static_cast<Eigen::Index>(means.size()),
                              1.0 / static_cast<double>(means.size()));
  }
  validate_mixture(m, "config mixture");
  return m;
}

inline Stabilize stabilize_from_json(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "none") return Stabilize::none();
    if (s == "log_mirror") return Stabilize::log_mirror();
    throw std::invalid_argument("config: unknown stabilize '" + s + "'");
  }
  if (j.is_object() && j.contains("box_mirror")) {
    const auto& b = j.at("box_mirror");
    return Stabilize::box_mirror(b.at(0).get<double>(), b.at(1).get<double>());
  }
  throw std::invalid_argument("config: stabilize must be \"none\", \"log_mirror\" or {\"box_mirror\": [lo, hi]}");
}

inline json stabilize_to_json(const Stabilize& st) {
  switch (st.kind) {
    case Stabilize::Kind::kNone: return "none";
    case Stabilize::Kind::kLogMirror: return "log_mirror";
    case Stabilize::Kind::kBoxMirror: return json{{"box_mirror", {st.lo, st.hi}}};
  }
  return "none";
}

inline DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  d.path = j.at("path").get<std::string>();
  d.target_column = j.at("target_column").get<std::string>();
  d.label_kind = label_kind_from_string(get_or<std::string>(j, "label_kind", "numeric"));
  d.standardize = get_or(j, "standardize", true);
  d.train_count = j.at("train_count").get<int>();
  d.split_index = get_or(j, "split_index", 0);
  d.split_seed = get_or<std::uint64_t>(j, "split_seed", 0);
  return d;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  c.run_name = detail::get_or<std::string>(j, "run_name", "run");
  c.output_dir = detail::get_or<std::string>(j, "output_dir", "out");
  c.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  c.K = detail::get_or(j, "K", 1);
  if (c.K < 1) throw std::invalid_argument("config: K must be at least 1");
  c.record_timings = detail::get_or(j, "record_timings", false);

  const json& f = j.at("flow");
  c.flow.algorithm = algorithm_from_string(f.at("algorithm").get<std::string>());
  c.flow.eta = f.at("eta").get<double>();
  c.flow.iterations = f.at("iterations").get<long>();
  c.flow.samples_per_particle = detail::get_or(f, "samples_per_particle", 1);
  c.flow.md_weights = detail::get_or(f, "md_weights", false);
  c.flow.fv_samples = detail::get_or(f, "fv_samples", 64);
  c.flow.svgd_particles = detail::get_or(f, "svgd_particles", 100);
  if (f.contains("stabilize")) c.flow.stabilize = detail::stabilize_from_json(f.at("stabilize"));
  c.flow.seed = c.seed;
  validate_flow_config(c.flow);

  if (j.contains("init")) {
    c.init.mean_scale = detail::get_or(j.at("init"), "mean_scale", 1.0);
    c.init.precision = detail::get_or(j.at("init"), "precision", 1.0);
    if (!(c.init.precision > 0.0)) throw std::invalid_argument("config: init precision must be positive");
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    c.metrics.cadence = detail::get_or<long>(m, "cadence", 10);
    c.metrics.elbo_samples = detail::get_or(m, "elbo_samples", 1000);
    c.metrics.kl_samples = detail::get_or(m, "kl_samples", 10000);
    c.metrics.pred_weight_samples = detail::get_or(m, "pred_weight_samples", 100);
    c.metrics.mse_destandardized = detail::get_or(m, "mse_destandardized", false);
    if (c.metrics.cadence < 1) throw std::invalid_argument("config: metric cadence must be positive");
  }

  const json& t = j.at("target");
  c.target.type = t.at("type").get<std::string>();
  if (c.target.type == "gmm") {
    c.target.gmm = detail::mixture_from_json(t);
  } else if (c.target.type == "logreg") {
    c.target.reg = t.at("reg").get<double>();
    c.target.batch_size = detail::get_or(t, "batch_size", 0);
    c.target.dataset = detail::dataset_from_json(t.at("dataset"));
  } else if (c.target.type == "bnn") {
    c.target.reg = t.at("reg").get<double>();
    c.target.batch_size = detail::get_or(t, "batch_size", 0);
    const std::string task = detail::get_or<std::string>(t, "task", "regression");
    if (task == "regression")
      c.target.task = BnnTarget::Task::kRegression;
    else if (task == "classification")
      c.target.task = BnnTarget::Task::kClassification;
    else
      throw std::invalid_argument("config: unknown task '" + task + "'");
    c.target.hidden = detail::get_or<Eigen::Index>(t, "hidden", 50);
    const std::string act = detail::get_or<std::string>(t, "activation", "relu");
    if (act == "relu")
      c.target.activation = MlpArchitecture::Activation::kRelu;
    else if (act == "tanh")
      c.target.activation = MlpArchitecture::Activation::kTanh;
    else if (act == "identity")
      c.target.activation = MlpArchitecture::Activation::kIdentity;
    else
      throw std::invalid_argument("config: unknown activation '" + act + "'");
    const std::string hm = detail::get_or<std::string>(t, "hess_mode", "gauss_newton");
    if (hm == "gauss_newton")
      c.target.bnn_options.hess_mode = BnnTarget::HessMode::kGaussNewton;
    else if (hm == "hutchinson")
      c.target.bnn_options.hess_mode = BnnTarget::HessMode::kHutchinson;
    else
      throw std::invalid_argument("config: unknown hess_mode '" + hm + "'");
    c.target.bnn_options.hutchinson_probes = detail::get_or(t, "hutchinson_probes", 64);
    c.target.bnn_options.hutchinson_step = detail::get_or(t, "hutchinson_step", 1e-5);
    if (t.contains("dataset")) {
      c.target.dataset = detail::dataset_from_json(t.at("dataset"));
    } else if (t.contains("synthetic")) {
      const json& s = t.at("synthetic");
      SyntheticSpec sp;
      sp.n_train = detail::get_or(s, "n_train", 200);
      sp.n_test = detail::get_or(s, "n_test", 200);
      sp.in_dim = detail::get_or(s, "in_dim", 2);
      sp.noise = detail::get_or(s, "noise", 0.05);
      sp.seed = detail::get_or<std::uint64_t>(s, "seed", 7);
      c.target.synthetic = sp;
    } else {
      throw std::invalid_argument("config: bnn target needs a dataset or a synthetic block");
    }
  } else {
    throw std::invalid_argument("config: unknown target type '" + c.target.type + "'");
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config '" + path + "': " + e.what());
  }
  return parse_experiment_config(j);
}

// Round trip of the resolved configuration, written into the sidecar so a run
// is reproducible from its outputs alone.
inline json experiment_config_to_json(const ExperimentConfig& c) {
  json f{{"algorithm", to_string(c.flow.algorithm)},
         {"eta", c.flow.eta},
         {"iterations", c.flow.iterations},
         {"samples_per_particle", c.flow.samples_per_particle},
         {"md_weights", c.flow.md_weights},
         {"fv_samples", c.flow.fv_samples},
         {"svgd_particles", c.flow.svgd_particles},
         {"stabilize", detail::stabilize_to_json(c.flow.stabilize)}};
  json t{{"type", c.target.type}};
  if (c.target.type == "gmm") {
    json means = json::array(), precs = json::array(), ws = json::array();
    for (const auto& p : c.target.gmm.particles) {
      means.push_back(std::vector<double>(p.mu.data(), p.mu.data() + p.mu.size()));
      precs.push_back(std::vector<double>(p.s.data(), p.s.data() + p.s.size()));
    }
    for (Eigen::Index k = 0; k < c.target.gmm.weights.size(); ++k)
      ws.push_back(c.target.gmm.weights[k]);
    t["means"] = means;
    t["precisions"] = precs;
    t["weights"] = ws;
  } else {
    t["reg"] = c.target.reg;
    t["batch_size"] = c.target.batch_size;
    if (c.target.dataset) {
      const auto& d = *c.target.dataset;
      t["dataset"] = json{{"path", d.path},
                          {"target_column", d.target_column},
                          {"label_kind", d.label_kind == LabelKind::kNumeric     ? "numeric"
                                         : d.label_kind == LabelKind::kBinary01 ? "binary01"
                                                                                : "pm1"},
                          {"standardize", d.standardize},
                          {"train_count", d.train_count},
                          {"split_index", d.split_index},
                          {"split_seed", d.split_seed}};
    }
    if (c.target.type == "bnn") {
      t["task"] = c.target.task == BnnTarget::Task::kRegression ? "regression" : "classification";
      t["hidden"] = c.target.hidden;
      switch (c.target.activation) {
        case MlpArchitecture::Activation::kRelu:
          t["activation"] = "relu";
          break;
        case MlpArchitecture::Activation::kTanh:
          t["activation"] = "tanh";
          break;
        case MlpArchitecture::Activation::kIdentity:
          t["activation"] = "identity";
          break;
      }
      t["hess_mode"] = c.target.bnn_options.hess_mode == BnnTarget::HessMode::kGaussNewton
                           ? "gauss_newton"
                           : "hutchinson";
      t["hutchinson_probes"] = c.target.bnn_options.hutchinson_probes;
      t["hutchinson_step"] = c.target.bnn_options.hutchinson_step;
      if (c.target.synthetic) {
        const auto& s = *c.target.synthetic;
        t["synthetic"] = json{{"n_train", s.n_train},
                              {"n_test", s.n_test},
                              {"in_dim", s.in_dim},
                              {"noise", s.noise},
                              {"seed", s.seed}};
      }
    }
  }
  return json{{"run_name", c.run_name},
              {"output_dir", c.output_dir},
              {"seed", c.seed},
              {"K", c.K},
              {"record_timings", c.record_timings},
              {"flow", f},
              {"init", json{{"mean_scale", c.init.mean_scale}, {"precision", c.init.precision}}},
              {"metrics", json{{"cadence", c.metrics.cadence},
                               {"elbo_samples", c.metrics.elbo_samples},
                               {"kl_samples", c.metrics.kl_samples},
                               {"pred_weight_samples", c.metrics.pred_weight_samples},
                               {"mse_destandardized", c.metrics.mse_destandardized}}},
              {"target", t}};
}

// ----- target construction ---------------------------------------------------

// A built target plus whatever the metrics need that the TargetModel interface
// does not expose (network shape, held-out data, batch stream).
struct BuiltTarget {
  std::unique_ptr<TargetModel> model;
  std::unique_ptr<MinibatchStream> batches;  // null = full batch

  bool has_predictive = false;
  MlpArchitecture arch;
  BnnTarget::Task task = BnnTarget::Task::kRegression;
  Mat X_test;
  Vec y_test;
  double target_std = 1.0;  // for reporting MSE in original units
};

namespace detail {

// Smooth nonlinear regression surface for self-contained benchmark runs.
inline void generate_synthetic_regression(const SyntheticSpec& sp, Mat& X, Vec& y) {
  const int n = sp.n_train + sp.n_test;
  Rng rng = derive_rng(sp.seed, 0, 0xda7aULL);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::normal_distribution<double> noise(0.0, sp.noise);
  X.resize(n, sp.in_dim);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < sp.in_dim; ++j) X(i, j) = unif(rng);
    double v = std::sin(2.0 * X(i, 0));
    for (int j = 1; j < sp.in_dim; ++j) v += 0.5 * std::cos(X(i, j) + static_cast<double>(j));
    y[i] = v + noise(rng);
  }
}

inline std::vector<int> iota_indices(int n, int from = 0) {
  std::vector<int> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = from + i;
  return v;
}

}  // namespace detail

inline BuiltTarget build_target(const ExperimentConfig& cfg) {
  const TargetSpec& ts = cfg.target;
  BuiltTarget built;

  if (ts.type == "gmm") {
    built.model = make_gmm_target(ts.gmm);
    return built;
  }

  // Assemble train/test matrices either from a CSV or a generated surface.
  Mat X_train, X_test;
  Vec y_train, y_test;
  double target_std = 1.0;
  if (ts.dataset) {
    const DatasetSpec& dspec = *ts.dataset;
    const bool regression = ts.type == "bnn" && ts.task == BnnTarget::Task::kRegression;
    Dataset ds = load_csv(dspec.path, CsvSchema{dspec.target_column, dspec.label_kind});
    const auto splits =
        make_splits(ds.rows(), dspec.split_index + 1, dspec.train_count, dspec.split_seed);
    const Split& split = splits.back();
    if (dspec.standardize) ds = standardize(ds, split.train, regression);
    target_std = ds.target_std;
    X_train.resize(static_cast<Eigen::Index>(split.train.size()), ds.cols());
    y_train.resize(static_cast<Eigen::Index>(split.train.size()));
    for (size_t i = 0; i < split.train.size(); ++i) {
      X_train.row(static_cast<Eigen::Index>(i)) = ds.X.row(split.train[i]);
      y_train[static_cast<Eigen::Index>(i)] = ds.y[split.train[i]];
    }
    X_test.resize(static_cast<Eigen::Index>(split.test.size()), ds.cols());
    y_test.resize(static_cast<Eigen::Index>(split.test.size()));
    for (size_t i = 0; i < split.test.size(); ++i) {
      X_test.row(static_cast<Eigen::Index>(i)) = ds.X.row(split.test[i]);
      y_test[static_cast<Eigen::Index>(i)] = ds.y[split.test[i]];
    }
  } else if (ts.synthetic) {
    Mat X;
    Vec y;
    detail::generate_synthetic_regression(*ts.synthetic, X, y);
    X_train = X.topRows(ts.synthetic->n_train);
    y_train = y.head(ts.synthetic->n_train);
    X_test = X.bottomRows(ts.synthetic->n_test);
    y_test = y.tail(ts.synthetic->n_test);
  } else {
    throw std::invalid_argument("build_target: " + ts.type + " target needs data");
  }

  if (ts.type == "logreg") {
    built.model = make_logistic_regression_target(X_train, y_train, ts.reg);
  } else if (ts.type == "bnn") {
    MlpArchitecture arch;
    arch.in_dim = X_train.cols();
    arch.hidden = ts.hidden;
    arch.out_dim = 1;
    arch.activation = ts.activation;
    built.model = make_bnn_target(arch, X_train, y_train, ts.task, ts.reg, ts.bnn_options);
    built.has_predictive = true;
    built.arch = arch;
    built.task = ts.task;
    built.X_test = X_test;
    built.y_test = y_test;
    built.target_std = target_std;
  } else {
    throw std::invalid_argument("build_target: unknown target type '" + ts.type + "'");
  }

  if (ts.batch_size > 0) {
    built.batches = std::make_unique<MinibatchStream>(
        detail::iota_indices(static_cast<int>(X_train.rows())), ts.batch_size,
        mix64(cfg.seed ^ 0xba7c4e5ULL));
  }
  return built;
}

// ----- run loop ---------------------------------------------------------------

struct IterationRecord {
  long iteration = 0;
  double elbo_neg = std::numeric_limits<double>::quiet_NaN();
  double quality = std::numeric_limits<double>::quiet_NaN();  // kl or pred_loss
  double wall_ms = 0.0;
};

struct RunResult {
  std::vector<IterationRecord> records;
  std::string quality_column;  // header of the third CSV column
  MetricReport final_report;
  json sidecar;
  std::string csv_path;
  std::string sidecar_path;
  ParticleMixture final_mixture;       // empty for svgd
  std::vector<Vec> final_particles;    // svgd only
};

namespace detail {

// Stream salts for randomness outside the flow steps; offset far above any
// particle index so metric draws never collide with update draws.
constexpr std::uint64_t kInitStream = 1ULL << 32;
constexpr std::uint64_t kMetricStream = (1ULL << 32) + 1;

inline ParticleMixture initial_mixture(const ExperimentConfig& cfg, Eigen::Index dim) {
  ParticleMixture m;
  m.weights = Vec::Constant(cfg.K, 1.0 / static_cast<double>(cfg.K));
  for (int k = 0; k < cfg.K; ++k) {
    Rng rng = derive_rng(cfg.seed, kInitStream, static_cast<std::uint64_t>(k));
    GaussianParticle p;
    p.mu = cfg.init.mean_scale * standard_normal(rng, dim);
    p.s = Vec::Constant(dim, cfg.init.precision);
    m.particles.push_back(std::move(p));
  }
  return m;
}

inline std::vector<Vec> initial_svgd_particles(const ExperimentConfig& cfg, Eigen::Index dim) {
  std::vector<Vec> xs;
  xs.reserve(static_cast<size_t>(cfg.flow.svgd_particles));
  for (int i = 0; i < cfg.flow.svgd_particles; ++i) {
    Rng rng = derive_rng(cfg.seed, kInitStream, static_cast<std::uint64_t>(i));
    xs.push_back(cfg.init.mean_scale * standard_normal(rng, dim));
  }
  return xs;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_records_csv(const std::string& path, const std::vector<IterationRecord>& records,
                              const std::string& quality_column, bool record_timings) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "iteration,elbo_neg," << quality_column << ",wall_ms\n";
  for (const auto& r : records) {
    out << r.iteration << ',';
    if (std::isfinite(r.elbo_neg)) out << detail::format_double(r.elbo_neg);
    out << ',';
    if (std::isfinite(r.quality)) out << detail::format_double(r.quality);
    out << ',';
    out << detail::format_double(record_timings ? r.wall_ms : 0.0);
    out << '\n';
  }
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  validate_flow_config(cfg.flow);
  BuiltTarget built = build_target(cfg);
  const TargetModel& target = *built.model;
  const Eigen::Index dim = target.dim();
  const Algorithm alg = cfg.flow.algorithm;

  if ((alg == Algorithm::kBbvi || alg == Algorithm::kNgvi) && cfg.K != 1)
    throw std::invalid_argument("run_experiment: " + to_string(alg) + " runs a single Gaussian; set K = 1");

  RunResult result;
  result.quality_column = built.has_predictive ? "pred_loss" : "kl";

  const bool is_svgd = alg == Algorithm::kSvgd;
  FlowState state;
  std::vector<Vec> particles;
  if (is_svgd) {
    particles = detail::initial_svgd_particles(cfg, dim);
  } else {
    state = FlowState{detail::initial_mixture(cfg, dim), 0, cfg.seed};
    validate_mixture(state.mixture, "initial mixture");
  }

  // MSE on the standardized scale differs from original units by target_std^2.
  const double mse_scale = (built.has_predictive && built.task == BnnTarget::Task::kRegression &&
                            cfg.metrics.mse_destandardized)
                               ? built.target_std * built.target_std
                               : 1.0;

  auto measure = [&](long iter, double wall_ms) {
    IterationRecord rec;
    rec.iteration = iter;
    rec.wall_ms = wall_ms;
    Rng rng = derive_rng(cfg.seed, detail::kMetricStream, static_cast<std::uint64_t>(iter));
    MetricReport rep;
    double elbo = std::numeric_limits<double>::quiet_NaN();
    if (!is_svgd) {
      rep = estimate_negated_elbo(state.mixture, target, cfg.metrics.elbo_samples, rng);
      elbo = rep.elbo_neg_estimate;
      rec.elbo_neg = elbo;
    }
    if (built.has_predictive) {
      rep = is_svgd ? predictive_loss_from_draws(particles, built.arch, built.X_test, built.y_test,
                                                 built.task)
                    : predictive_loss(state.mixture, built.arch, built.X_test, built.y_test,
                                      built.task, cfg.metrics.pred_weight_samples, rng);
      rep.predictive_loss *= mse_scale;
      rep.elbo_neg_estimate = elbo;
      rec.quality = rep.predictive_loss;
    } else if (!is_svgd && target.has_log_density()) {
      rep = estimate_kl(state.mixture, target, cfg.metrics.kl_samples, rng);
      rep.elbo_neg_estimate = elbo;
      rec.quality = rep.kl_estimate;
    }
    result.records.push_back(rec);
    result.final_report = rep;
  };

  measure(0, 0.0);

  double pending_ms = 0.0;
  for (long n = 1; n <= cfg.flow.iterations; ++n) {
    if (built.batches) built.model->set_batch(built.batches->next());
    const auto t0 = std::chrono::steady_clock::now();
    switch (alg) {
      case Algorithm::kGFlowVi: state = gflowvi_step(state, target, cfg.flow); break;
      case Algorithm::kNgFlowVi: state = ngflowvi_step(state, target, cfg.flow); break;
      case Algorithm::kBbvi: state = bbvi_step(state, target, cfg.flow); break;
      case Algorithm::kNgvi: state = ngvi_step(state, target, cfg.flow); break;
      case Algorithm::kSvgd: particles = svgd_step(particles, target, cfg.flow.eta); break;
    }
    const auto t1 = std::chrono::steady_clock::now();
    pending_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (n % cfg.metrics.cadence == 0 || n == cfg.flow.iterations) {
      measure(n, pending_ms);
      pending_ms = 0.0;
    }
  }

  if (is_svgd)
    result.final_particles = particles;
  else
    result.final_mixture = state.mixture;

  // Emit records plus a sidecar carrying the resolved config and final report.
  namespace fs = std::filesystem;
  const char* env_dir = std::getenv("FLOWVI_OUTPUT_DIR");
  const fs::path dir = env_dir != nullptr ? fs::path(env_dir) : fs::path(cfg.output_dir);
  fs::create_directories(dir);
  result.csv_path = (dir / (cfg.run_name + ".csv")).string();
  result.sidecar_path = (dir / (cfg.run_name + ".json")).string();
  write_records_csv(result.csv_path, result.records, result.quality_column, cfg.record_timings);

  json final_report;
  if (std::isfinite(result.final_report.kl_estimate))
    final_report["kl_estimate"] = result.final_report.kl_estimate;
  if (std::isfinite(result.final_report.elbo_neg_estimate))
    final_report["elbo_neg_estimate"] = result.final_report.elbo_neg_estimate;
  if (std::isfinite(result.final_report.predictive_loss))
    final_report["predictive_loss"] = result.final_report.predictive_loss;
  final_report["n_samples"] = result.final_report.n_samples;
  if (std::isfinite(result.final_report.std_error))
    final_report["std_error"] = result.final_report.std_error;

  result.sidecar = json{{"config", experiment_config_to_json(cfg)},
                        {"quality_column", result.quality_column},
                        {"final_report", final_report}};
  std::ofstream side(result.sidecar_path, std::ios::binary);
  if (!side) throw std::runtime_error("cannot write '" + result.sidecar_path + "'");
  side << result.sidecar.dump(2) << '\n';
  return result;
}

}  // namespace flowvi
