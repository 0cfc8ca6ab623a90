#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "knockoff/common.hpp"
#include "knockoff/datagen.hpp"
#include "knockoff/diagnostics.hpp"
#include "knockoff/drp.hpp"
#include "knockoff/filter.hpp"
#include "knockoff/io.hpp"
#include "knockoff/model.hpp"
#include "knockoff/rng.hpp"
#include "knockoff/trainer.hpp"

namespace knockoff {

enum class DatasetKind { GaussianMixture, Copula, External };
enum class ResponseKind { Linear, Tanh };
enum class GeneratorKind { Transformer, OracleIndependent };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::GaussianMixture;
  GaussianMixtureSpec mixture;
  CopulaSpec copula;
  std::string x_path;  // external design matrix (csv)
  std::string y_path;  // optional external response; empty => synthesized
};

struct AblationFlags {
  bool disable_rex = false;
  bool disable_swapper_decor = false;
  bool disable_drp = false;
  std::optional<int> k_override;
};

/// Complete description of one experiment: data, response, training, DRP,
/// filtering, and the repeat/seed plan. Serialized 1:1 to the JSON config the
/// CLI consumes; the digest is content-addressed over that serialization.
struct ExperimentSpec {
  DatasetSpec dataset;
  int n = 600;
  int p = 30;
  CoefficientSpec coefficients;
  ResponseKind response = ResponseKind::Linear;
  std::string preset = "desk";  // bookkeeping tag: desk | paper | custom
  KnockoffNetConfig net = KnockoffNetConfig::desk();
  TrainConfig train = TrainConfig::desk_defaults();
  DrpConfig drp;
  GeneratorKind generator = GeneratorKind::Transformer;
  AblationFlags flags;
  double q = 0.1;
  int num_repeats = 50;
  std::uint64_t base_seed = 1;
  int workers = 1;

  void validate() const {
    require(n >= 5 && p >= 2, "ExperimentSpec: n >= 5, p >= 2");
    require(q > 0.0 && q <= 1.0, "ExperimentSpec: q in (0, 1]");
    require(num_repeats >= 1, "ExperimentSpec: num_repeats >= 1");
    require(workers >= 1, "ExperimentSpec: workers >= 1");
    if (flags.k_override) {
      require(*flags.k_override >= 1, "ExperimentSpec: K override >= 1");
    }
    coefficients.validate(p);
    drp.validate();
    net.validate();
    train.validate();
  }

  static ExperimentSpec desk() { return ExperimentSpec{}; }

  static ExperimentSpec paper_scale() {
    ExperimentSpec spec;
    spec.preset = "paper";
    spec.n = 2000;
    spec.p = 100;
    spec.net = KnockoffNetConfig::paper();
    spec.train = TrainConfig::paper_defaults();
    spec.num_repeats = 600;
    return spec;
  }
};

// ---- JSON bindings (config file schema) ----

NLOHMANN_JSON_SERIALIZE_ENUM(DatasetKind,
                             {{DatasetKind::GaussianMixture, "gaussian_mixture"},
                              {DatasetKind::Copula, "copula"},
                              {DatasetKind::External, "external"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ResponseKind, {{ResponseKind::Linear, "linear"},
                                            {ResponseKind::Tanh, "tanh"}})
NLOHMANN_JSON_SERIALIZE_ENUM(GeneratorKind,
                             {{GeneratorKind::Transformer, "transformer"},
                              {GeneratorKind::OracleIndependent,
                               "oracle_independent"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CopulaFamily, {{CopulaFamily::Clayton, "clayton"},
                                            {CopulaFamily::Joe, "joe"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CopulaMarginal,
                             {{CopulaMarginal::Uniform, "uniform"},
                              {CopulaMarginal::Exponential, "exponential"}})

inline void to_json(json& j, const GaussianMixtureSpec& s) {
  j = json{{"weights", {s.weights(0), s.weights(1), s.weights(2)}},
           {"mean_step", s.mean_step},
           {"rho_base", s.rho_base}};
}
inline void from_json(const json& j, GaussianMixtureSpec& s) {
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    require(w.size() == 3, "config: mixture weights must have 3 entries");
    s.weights << w[0], w[1], w[2];
  }
  s.mean_step = j.value("mean_step", s.mean_step);
  s.rho_base = j.value("rho_base", s.rho_base);
}

inline void to_json(json& j, const CopulaSpec& s) {
  j = json{{"family", s.family},
           {"theta", s.theta},
           {"marginal", s.marginal}};
}
inline void from_json(const json& j, CopulaSpec& s) {
  s.family = j.value("family", s.family);
  s.theta = j.value("theta", s.theta);
  s.marginal = j.value("marginal", s.marginal);
}

inline void to_json(json& j, const CoefficientSpec& s) {
  j = json{{"scale_divisor", s.scale_divisor},
           {"num_nonnull", s.num_nonnull}};
}
inline void from_json(const json& j, CoefficientSpec& s) {
  s.scale_divisor = j.value("scale_divisor", s.scale_divisor);
  s.num_nonnull = j.value("num_nonnull", s.num_nonnull);
}

inline void to_json(json& j, const DatasetSpec& s) {
  j = json{{"kind", s.kind},
           {"mixture", s.mixture},
           {"copula", s.copula},
           {"x_path", s.x_path},
           {"y_path", s.y_path}};
}
inline void from_json(const json& j, DatasetSpec& s) {
  s.kind = j.value("kind", s.kind);
  if (j.contains("mixture")) j.at("mixture").get_to(s.mixture);
  if (j.contains("copula")) j.at("copula").get_to(s.copula);
  s.x_path = j.value("x_path", s.x_path);
  s.y_path = j.value("y_path", s.y_path);
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr_swapper", c.lr_swapper},
           {"lr_generator", c.lr_generator},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lambda1", c.lambda1},
           {"lambda2", c.lambda2},
           {"lambda3", c.lambda3},
           {"early_stop_patience", c.early_stop_patience},
           {"swapper_update_frequency", c.swapper_update_frequency},
           {"num_swappers", c.num_swappers},
           {"weight_decay", c.weight_decay},
           {"num_projections", c.num_projections},
           {"swd_order", c.swd_order},
           {"swapper_sees_regularizers", c.swapper_sees_regularizers},
           {"val_ratio", c.val_ratio},
           {"divergence_guard", c.divergence_guard}};
}
inline void from_json(const json& j, TrainConfig& c) {
  c.lr_swapper = j.value("lr_swapper", c.lr_swapper);
  c.lr_generator = j.value("lr_generator", c.lr_generator);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lambda3 = j.value("lambda3", c.lambda3);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.swapper_update_frequency =
      j.value("swapper_update_frequency", c.swapper_update_frequency);
  c.num_swappers = j.value("num_swappers", c.num_swappers);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.num_projections = j.value("num_projections", c.num_projections);
  c.swd_order = j.value("swd_order", c.swd_order);
  c.swapper_sees_regularizers =
      j.value("swapper_sees_regularizers", c.swapper_sees_regularizers);
  c.val_ratio = j.value("val_ratio", c.val_ratio);
  c.divergence_guard = j.value("divergence_guard", c.divergence_guard);
}

inline void to_json(json& j, const DrpConfig& c) {
  j = json{{"alpha", c.alpha}};
  if (c.alpha_schedule_c) j["alpha_schedule_c"] = *c.alpha_schedule_c;
}
inline void from_json(const json& j, DrpConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("alpha_schedule_c"))
    c.alpha_schedule_c = j.at("alpha_schedule_c").get<double>();
}

inline void to_json(json& j, const AblationFlags& f) {
  j = json{{"disable_rex", f.disable_rex},
           {"disable_swapper_decor", f.disable_swapper_decor},
           {"disable_drp", f.disable_drp}};
  if (f.k_override) j["k_override"] = *f.k_override;
}
inline void from_json(const json& j, AblationFlags& f) {
  f.disable_rex = j.value("disable_rex", f.disable_rex);
  f.disable_swapper_decor =
      j.value("disable_swapper_decor", f.disable_swapper_decor);
  f.disable_drp = j.value("disable_drp", f.disable_drp);
  if (j.contains("k_override"))
    f.k_override = j.at("k_override").get<int>();
}

inline void to_json(json& j, const ExperimentSpec& s) {
  j = json{{"dataset", s.dataset},
           {"n", s.n},
           {"p", s.p},
           {"coefficients", s.coefficients},
           {"response", s.response},
           {"preset", s.preset},
           {"net", s.net},
           {"train", s.train},
           {"drp", s.drp},
           {"generator", s.generator},
           {"flags", s.flags},
           {"q", s.q},
           {"num_repeats", s.num_repeats},
           {"base_seed", s.base_seed},
           {"workers", s.workers}};
}
inline void from_json(const json& j, ExperimentSpec& s) {
  if (j.contains("dataset")) j.at("dataset").get_to(s.dataset);
  s.n = j.value("n", s.n);
  s.p = j.value("p", s.p);
  if (j.contains("coefficients")) j.at("coefficients").get_to(s.coefficients);
  s.response = j.value("response", s.response);
  s.preset = j.value("preset", s.preset);
  if (j.contains("net")) j.at("net").get_to(s.net);
  if (j.contains("train")) j.at("train").get_to(s.train);
  if (j.contains("drp")) j.at("drp").get_to(s.drp);
  s.generator = j.value("generator", s.generator);
  if (j.contains("flags")) j.at("flags").get_to(s.flags);
  s.q = j.value("q", s.q);
  s.num_repeats = j.value("num_repeats", s.num_repeats);
  s.base_seed = j.value("base_seed", s.base_seed);
  s.workers = j.value("workers", s.workers);
}

/// Content-addressed digest of the canonical spec serialization: identical
/// specs map to identical digests, any field change moves the digest.
inline std::string config_digest(const ExperimentSpec& spec) {
  const json j = spec;
  return to_hex(fnv1a64(j.dump()));
}

// ---- single trial ----

struct TrialResult {
  int repeat_index = 0;
  std::uint64_t trial_seed = 0;
  std::uint64_t z_seed = 0;  // the fixed per-trial noise seed of the generator
  SelectionResult selection;
  SwapMetricReport swap_report;
  TrainingLog training_log;
  std::vector<bool> nonnull;
  bool drp_applied = false;
  DrpInfo drp_info;
  double seconds = 0.0;
};

namespace detail {

template <typename Fn>
auto staged(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + stage + ": " + e.what());
  }
}

}  // namespace detail

/// Raw design plus response for one trial. The response is synthesized from
/// the raw (unstandardized) design; standardization happens downstream so the
/// filter and the generator see unit-scale columns while the signal structure
/// stays the published one.
struct DatasetBundle {
  Matrix raw;
  Vector y;
  std::vector<bool> nonnull;  // empty when the ground truth is unknown
  Vector beta;                // empty for tanh / external responses
  std::uint64_t trial_seed = 0;
};

inline DatasetBundle make_dataset(const ExperimentSpec& spec,
                                  std::uint64_t seed) {
  DatasetBundle data;
  data.trial_seed = seed;
  switch (spec.dataset.kind) {
    case DatasetKind::GaussianMixture:
      data.raw = sample_gaussian_mixture(spec.dataset.mixture, spec.n, spec.p,
                                         derive_seed(seed, "data"));
      break;
    case DatasetKind::Copula:
      data.raw = sample_archimedean_copula(spec.dataset.copula, spec.n,
                                           spec.p, derive_seed(seed, "data"));
      break;
    case DatasetKind::External: {
      require(!spec.dataset.x_path.empty(),
              "external dataset needs x_path");
      data.raw = read_matrix_csv(spec.dataset.x_path).values;
      break;
    }
  }

  if (spec.dataset.kind == DatasetKind::External &&
      !spec.dataset.y_path.empty()) {
    data.y = read_vector_csv(spec.dataset.y_path);
    require(data.y.size() == data.raw.rows(),
            "external response length mismatch");
    // Ground truth unknown: scores will be reported as NaN.
    data.nonnull.clear();
  } else if (spec.response == ResponseKind::Linear) {
    const Coefficients coef =
        sample_coefficients(spec.coefficients, static_cast<int>(data.raw.rows()),
                            static_cast<int>(data.raw.cols()),
                            derive_seed(seed, "beta"));
    data.y = synthesize_linear_response(data.raw, coef.beta,
                                        derive_seed(seed, "noise"));
    data.nonnull = coef.nonnull;
    data.beta = coef.beta;
  } else {
    const TanhResponse r = synthesize_tanh_response(
        data.raw, spec.coefficients.num_nonnull, derive_seed(seed, "tanh"));
    data.y = r.y;
    data.nonnull = r.nonnull;
  }
  return data;
}

/// One end-to-end trial: data -> standardize -> train -> generate -> DRP ->
/// filter -> diagnostics. Every stochastic stage derives its stream from
/// (base seed, repeat index).
inline TrialResult run_trial(const ExperimentSpec& spec, int repeat_index) {
  spec.validate();
  const auto start = std::chrono::steady_clock::now();
  TrialResult result;
  result.repeat_index = repeat_index;
  const std::uint64_t seed =
      derive_seed(spec.base_seed, "trial", repeat_index);
  result.trial_seed = seed;

  const DatasetBundle data = detail::staged(
      "datagen", [&] { return make_dataset(spec, seed); });
  result.nonnull = data.nonnull;

  const Matrix x = detail::staged(
      "standardize", [&] { return standardize_columns(data.raw); });
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());

  Matrix xtilde;
  if (spec.generator == GeneratorKind::OracleIndependent) {
    xtilde = detail::staged("oracle-knockoff", [&] {
      return oracle_knockoff_independent(x, derive_seed(seed, "oracle"));
    });
  } else {
    TrainConfig tc = spec.train;
    tc.seed = derive_seed(seed, "train");
    if (spec.flags.k_override) tc.num_swappers = *spec.flags.k_override;
    if (spec.flags.disable_rex) tc.lambda1 = 0.0;
    if (spec.flags.disable_swapper_decor) tc.lambda2 = 0.0;
    const TrainResult trained = detail::staged(
        "train", [&] { return train(x, tc, spec.net); });
    result.training_log = trained.log;
    result.z_seed = derive_seed(seed, "genz");
    xtilde = detail::staged("generate", [&] {
      Rng zrng(result.z_seed);
      return trained.net.generate(x, zrng.uniform_matrix(n, p));
    });
  }

  if (!spec.flags.disable_drp) {
    DrpConfig dc = spec.drp;
    dc.seed = derive_seed(seed, "drp");
    xtilde = detail::staged("drp", [&] {
      return apply_drp(xtilde, x, dc, &result.drp_info);
    });
    result.drp_applied = true;
  }

  result.selection = detail::staged("filter", [&] {
    SelectionResult sel = run_filter(x, xtilde, data.y, data.nonnull, spec.q,
                                     derive_seed(seed, "folds"));
    if (data.nonnull.empty()) {
      sel.fdp = std::numeric_limits<double>::quiet_NaN();
      sel.power = std::numeric_limits<double>::quiet_NaN();
    }
    return sel;
  });

  result.swap_report = detail::staged("diagnostics", [&] {
    return swap_property_suite(x, xtilde, derive_seed(seed, "diag"));
  });

  result.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return result;
}

// ---- repeated experiments ----

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
};

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline Aggregate aggregate_values(std::vector<double> values) {
  Aggregate a;
  if (values.empty()) {
    a.mean = a.stddev = a.median = a.q05 = a.q95 =
        std::numeric_limits<double>::quiet_NaN();
    return a;
  }
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    for (double v : values) a.stddev += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(a.stddev / static_cast<double>(values.size() - 1));
  }
  std::sort(values.begin(), values.end());
  a.median = quantile_sorted(values, 0.5);
  a.q05 = quantile_sorted(values, 0.05);
  a.q95 = quantile_sorted(values, 0.95);
  return a;
}

struct RepeatRow {
  int repeat_index = 0;
  bool failed = false;
  std::string error;
  double fdp = 0.0;
  double power = 0.0;
  double tau = 0.0;
  int n_selected = 0;
  double seconds = 0.0;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double mmd_avg = 0.0;
  double swd1_avg = 0.0;
  double swd2_avg = 0.0;
  // DRP metadata; alpha is NaN when the perturbation was disabled.
  double drp_alpha = std::numeric_limits<double>::quiet_NaN();
  std::string drp_digest;
};

struct ExperimentReport {
  ExperimentSpec spec;
  std::string digest;
  std::vector<RepeatRow> rows;
  Aggregate fdr;
  Aggregate power;
  Aggregate swd1;
  int failures = 0;
  bool single_repeat = false;
  std::optional<ClassSummary> null_stats;
  std::optional<ClassSummary> nonnull_stats;
  double mean_trial_seconds = 0.0;
};

/// Reference point from the published full-scale configuration (n = 2000
/// Gaussian mixture), reported alongside every desk-scale summary.
struct FullScaleReference {
  double fdr_mean = 0.081;
  double power_mean = 0.973;
};

/// Runs all repeats (optionally on a small worker pool; trials are
/// independent and individually seeded, so the outcome does not depend on
/// scheduling) and aggregates the per-repeat scores. Failed trials are
/// recorded and skipped in the aggregates.
inline ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentReport report;
  report.spec = spec;
  report.digest = config_digest(spec);
  report.rows.resize(static_cast<std::size_t>(spec.num_repeats));
  std::vector<TrialResult> trials(static_cast<std::size_t>(spec.num_repeats));
  std::vector<char> ok(static_cast<std::size_t>(spec.num_repeats), 0);

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i; (i = next.fetch_add(1)) < spec.num_repeats;) {
      RepeatRow& row = report.rows[static_cast<std::size_t>(i)];
      row.repeat_index = i;
      try {
        TrialResult trial = run_trial(spec, i);
        row.fdp = trial.selection.fdp;
        row.power = trial.selection.power;
        row.tau = trial.selection.tau;
        row.n_selected = static_cast<int>(trial.selection.selected.size());
        row.seconds = trial.seconds;
        row.stopped_epoch = trial.training_log.stopped_epoch;
        row.best_epoch = trial.training_log.best_epoch;
        row.mmd_avg = trial.swap_report.mmd_average();
        row.swd1_avg = trial.swap_report.swd1_average();
        row.swd2_avg = trial.swap_report.swd2_average();
        if (trial.drp_applied) {
          row.drp_alpha = trial.drp_info.alpha;
          row.drp_digest = to_hex(trial.drp_info.permutation_digest);
        }
        trials[static_cast<std::size_t>(i)] = std::move(trial);
        ok[static_cast<std::size_t>(i)] = 1;
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
    }
  };
  const int pool = std::min(spec.workers, spec.num_repeats);
  if (pool <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  std::vector<double> fdps, powers, swd1s, secs;
  std::vector<double> null_pool, nonnull_pool;
  for (int i = 0; i < spec.num_repeats; ++i) {
    const RepeatRow& row = report.rows[static_cast<std::size_t>(i)];
    if (row.failed) {
      ++report.failures;
      continue;
    }
    const TrialResult& trial = trials[static_cast<std::size_t>(i)];
    if (!std::isnan(row.fdp)) fdps.push_back(row.fdp);
    if (!std::isnan(row.power)) powers.push_back(row.power);
    swd1s.push_back(row.swd1_avg);
    secs.push_back(row.seconds);
    for (int j = 0; j < trial.selection.w.size(); ++j) {
      if (trial.nonnull.empty()) continue;
      (trial.nonnull[static_cast<std::size_t>(j)] ? nonnull_pool : null_pool)
          .push_back(trial.selection.w(j));
    }
  }
  report.fdr = aggregate_values(fdps);
  report.power = aggregate_values(powers);
  report.swd1 = aggregate_values(swd1s);
  report.single_repeat = fdps.size() <= 1;
  if (!secs.empty()) {
    for (double s : secs) report.mean_trial_seconds += s;
    report.mean_trial_seconds /= static_cast<double>(secs.size());
  }
  auto summarize = [](const std::vector<double>& pool)
      -> std::optional<ClassSummary> {
    if (pool.empty()) return std::nullopt;
    ClassSummary s;
    s.count = static_cast<long>(pool.size());
    for (double v : pool) s.mean += v;
    s.mean /= static_cast<double>(pool.size());
    for (double v : pool) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(pool.size()));
    return s;
  };
  report.null_stats = summarize(null_pool);
  report.nonnull_stats = summarize(nonnull_pool);
  return report;
}

/// The ablation grid: the full model plus one variant per removed mechanism,
/// all sharing the base seed ladder.
inline std::vector<std::pair<std::string, ExperimentReport>> run_ablation(
    const ExperimentSpec& base) {
  std::vector<std::pair<std::string, ExperimentSpec>> variants;
  variants.emplace_back("full", base);
  {
    ExperimentSpec s = base;
    s.flags.disable_rex = true;
    variants.emplace_back("no_rex", s);
  }
  {
    ExperimentSpec s = base;
    s.flags.k_override = 1;
    variants.emplace_back("k1", s);
  }
  {
    ExperimentSpec s = base;
    s.flags.disable_swapper_decor = true;
    variants.emplace_back("no_swapper_decor", s);
  }
  {
    ExperimentSpec s = base;
    s.flags.disable_drp = true;
    variants.emplace_back("no_drp", s);
  }
  std::vector<std::pair<std::string, ExperimentReport>> out;
  for (const auto& [name, spec] : variants)
    out.emplace_back(name, run_experiment(spec));
  return out;
}

// ---- report emission ----

namespace detail {

inline std::string sanitize_csv(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

inline json aggregate_json(const Aggregate& a) {
  auto enc = [](double v) -> json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  return json{{"mean", enc(a.mean)},
              {"std", enc(a.stddev)},
              {"median", enc(a.median)},
              {"q05", enc(a.q05)},
              {"q95", enc(a.q95)}};
}

inline json class_summary_json(const std::optional<ClassSummary>& s) {
  if (!s) return nullptr;
  return json{{"mean", s->mean}, {"std", s->stddev}, {"count", s->count}};
}

}  // namespace detail

/// Minimal standalone SVG bar chart with optional error whiskers and a dashed
/// reference line.
inline void write_bar_chart_svg(const std::filesystem::path& path,
                                const std::string& title,
                                const std::vector<std::string>& labels,
                                const std::vector<double>& values,
                                const std::vector<double>& errors,
                                std::optional<double> reference_line) {
  require(labels.size() == values.size(), "bar chart: label/value mismatch");
  require(errors.empty() || errors.size() == values.size(),
          "bar chart: error bar count mismatch");
  const double width = 640, height = 400;
  const double ml = 60, mr = 20, mt = 40, mb = 60;
  double vmax = reference_line.value_or(0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i] + (errors.empty() ? 0.0 : errors[i]);
    if (std::isfinite(v)) vmax = std::max(vmax, v);
  }
  if (vmax <= 0.0) vmax = 1.0;
  vmax *= 1.15;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;
  auto ypix = [&](double v) { return mt + plot_h * (1.0 - v / vmax); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
      << "' height='" << height << "'>\n";
  out << "<text x='" << width / 2 << "' y='24' text-anchor='middle' "
      << "font-family='sans-serif' font-size='16'>" << title << "</text>\n";
  out << "<line x1='" << ml << "' y1='" << mt + plot_h << "' x2='"
      << ml + plot_w << "' y2='" << mt + plot_h
      << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << mt + plot_h << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = vmax * tick / 4.0;
    out << "<text x='" << ml - 8 << "' y='" << ypix(v) + 4
        << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
        << detail::format_double(std::round(v * 1000.0) / 1000.0)
        << "</text>\n";
  }
  const double slot = plot_w / static_cast<double>(values.size());
  const double bar_w = slot * 0.6;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double cx = ml + slot * (static_cast<double>(i) + 0.5);
    if (std::isfinite(values[i])) {
      out << "<rect x='" << cx - bar_w / 2 << "' y='" << ypix(values[i])
          << "' width='" << bar_w << "' height='"
          << mt + plot_h - ypix(values[i])
          << "' fill='#4878b0'/>\n";
      if (!errors.empty() && errors[i] > 0.0) {
        out << "<line x1='" << cx << "' y1='"
            << ypix(std::max(0.0, values[i] - errors[i])) << "' x2='" << cx
            << "' y2='" << ypix(values[i] + errors[i])
            << "' stroke='black'/>\n";
      }
    }
    out << "<text x='" << cx << "' y='" << mt + plot_h + 18
        << "' text-anchor='middle' font-family='sans-serif' font-size='11'>"
        << labels[i] << "</text>\n";
  }
  if (reference_line) {
    out << "<line x1='" << ml << "' y1='" << ypix(*reference_line) << "' x2='"
        << ml + plot_w << "' y2='" << ypix(*reference_line)
        << "' stroke='red' stroke-dasharray='6,4'/>\n";
  }
  out << "</svg>\n";
}

/// Writes per-repeat rows, a JSON summary, a human-readable summary, and the
/// FDR/power bar charts. Returns the emitted paths.
inline std::vector<std::filesystem::path> emit_report(
    const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;

  const auto repeats_path = dir / "repeats.csv";
  {
    std::ofstream out(repeats_path);
    if (!out) throw std::runtime_error("cannot write " + repeats_path.string());
    out << "repeat,failed,error,fdp,power,tau,n_selected,seconds,"
           "stopped_epoch,best_epoch,mmd_avg,swd1_avg,swd2_avg,drp_alpha,"
           "drp_digest\n";
    for (const RepeatRow& r : report.rows) {
      out << r.repeat_index << "," << (r.failed ? 1 : 0) << ","
          << detail::sanitize_csv(r.error) << ","
          << detail::format_double(r.fdp) << ","
          << detail::format_double(r.power) << ","
          << detail::format_double(r.tau) << "," << r.n_selected << ","
          << detail::format_double(r.seconds) << "," << r.stopped_epoch << ","
          << r.best_epoch << "," << detail::format_double(r.mmd_avg) << ","
          << detail::format_double(r.swd1_avg) << ","
          << detail::format_double(r.swd2_avg) << ","
          << detail::format_double(r.drp_alpha) << "," << r.drp_digest
          << "\n";
    }
  }
  files.push_back(repeats_path);

  const FullScaleReference reference;
  const auto summary_path = dir / "summary.json";
  {
    json j;
    j["digest"] = report.digest;
    j["spec"] = report.spec;
    j["fdr"] = detail::aggregate_json(report.fdr);
    j["power"] = detail::aggregate_json(report.power);
    j["swd1"] = detail::aggregate_json(report.swd1);
    j["failures"] = report.failures;
    j["single_repeat"] = report.single_repeat;
    j["null_statistics"] = detail::class_summary_json(report.null_stats);
    j["nonnull_statistics"] = detail::class_summary_json(report.nonnull_stats);
    j["mean_trial_seconds"] = report.mean_trial_seconds;
    j["reference_full_scale"] = {
        {"fdr_mean", reference.fdr_mean},
        {"power_mean", reference.power_mean},
        {"note", "published full-scale run (n=2000, p=100, 600 repeats)"}};
    j["files"] = {"repeats.csv", "summary.txt", "fdr.svg", "power.svg"};
    std::ofstream out(summary_path);
    out << j.dump(2);
  }
  files.push_back(summary_path);

  const auto text_path = dir / "summary.txt";
  {
    std::ofstream out(text_path);
    out << "experiment " << report.digest << " (" << report.spec.preset
        << " preset, " << report.spec.num_repeats << " repeats, "
        << report.failures << " failures)\n";
    out << "              mean      std   median      q05      q95\n";
    char line[160];
    std::snprintf(line, sizeof(line),
                  "FDR      %8.4f %8.4f %8.4f %8.4f %8.4f\n", report.fdr.mean,
                  report.fdr.stddev, report.fdr.median, report.fdr.q05,
                  report.fdr.q95);
    out << line;
    std::snprintf(line, sizeof(line),
                  "power    %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                  report.power.mean, report.power.stddev, report.power.median,
                  report.power.q05, report.power.q95);
    out << line;
    std::snprintf(line, sizeof(line),
                  "reference full-scale run: FDR %.3f, power %.3f\n",
                  reference.fdr_mean, reference.power_mean);
    out << line;
    out << "mean trial seconds: " << report.mean_trial_seconds << "\n";
  }
  files.push_back(text_path);

  const auto fdr_path = dir / "fdr.svg";
  write_bar_chart_svg(fdr_path, "FDR (mean over repeats)",
                      {"this run", "full-scale ref"},
                      {report.fdr.mean, reference.fdr_mean},
                      {report.fdr.stddev, 0.0}, report.spec.q);
  files.push_back(fdr_path);

  const auto power_path = dir / "power.svg";
  write_bar_chart_svg(power_path, "Power (mean over repeats)",
                      {"this run", "full-scale ref"},
                      {report.power.mean, reference.power_mean},
                      {report.power.stddev, 0.0}, std::nullopt);
  files.push_back(power_path);
  return files;
}

// ---- sweeps ----

struct SweepPoint {
  double value = 0.0;
  ExperimentReport report;
};

inline std::vector<std::filesystem::path> emit_sweep(
    const std::string& name, const std::vector<SweepPoint>& points,
    const std::filesystem::path& dir, double q) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  const auto csv_path = dir / (name + ".csv");
  {
    std::ofstream out(csv_path);
    out << name
        << ",fdr_mean,fdr_std,power_mean,power_std,failures,digest\n";
    for (const SweepPoint& pt : points) {
      out << detail::format_double(pt.value) << ","
          << detail::format_double(pt.report.fdr.mean) << ","
          << detail::format_double(pt.report.fdr.stddev) << ","
          << detail::format_double(pt.report.power.mean) << ","
          << detail::format_double(pt.report.power.stddev) << ","
          << pt.report.failures << "," << pt.report.digest << "\n";
    }
  }
  files.push_back(csv_path);

  std::vector<std::string> labels;
  std::vector<double> fdr, fdr_err, power, power_err;
  for (const SweepPoint& pt : points) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", pt.value);
    labels.emplace_back(buf);
    fdr.push_back(pt.report.fdr.mean);
    fdr_err.push_back(pt.report.fdr.stddev);
    power.push_back(pt.report.power.mean);
    power_err.push_back(pt.report.power.stddev);
  }
  const auto fdr_path = dir / (name + "_fdr.svg");
  write_bar_chart_svg(fdr_path, "FDR vs " + name, labels, fdr, fdr_err, q);
  files.push_back(fdr_path);
  const auto power_path = dir / (name + "_power.svg");
  write_bar_chart_svg(power_path, "Power vs " + name, labels, power,
                      power_err, std::nullopt);
  files.push_back(power_path);
  return files;
}

inline std::vector<SweepPoint> sweep_alpha(const ExperimentSpec& base) {
  std::vector<SweepPoint> points;
  for (int k = 0; k <= 10; ++k) {
    ExperimentSpec spec = base;
    spec.drp.alpha = 0.1 * k;
    spec.drp.alpha_schedule_c.reset();
    spec.flags.disable_drp = false;
    points.push_back({spec.drp.alpha, run_experiment(spec)});
  }
  return points;
}

inline std::vector<SweepPoint> sweep_beta_scale(const ExperimentSpec& base) {
  std::vector<SweepPoint> points;
  for (double c : {5.0, 10.0, 15.0, 20.0}) {
    ExperimentSpec spec = base;
    spec.coefficients.scale_divisor = c;
    points.push_back({c, run_experiment(spec)});
  }
  return points;
}

inline std::vector<SweepPoint> sweep_rho(const ExperimentSpec& base) {
  std::vector<SweepPoint> points;
  for (double rho : {0.6, 0.7, 0.8}) {
    ExperimentSpec spec = base;
    spec.dataset.kind = DatasetKind::GaussianMixture;
    spec.dataset.mixture.rho_base = rho;
    points.push_back({rho, run_experiment(spec)});
  }
  return points;
}

}  // namespace knockoff
