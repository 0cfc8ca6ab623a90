// Command-line front end: every subcommand is driven by one JSON config
// (schema = the ExperimentSpec serialization) with individual flags layered
// on top.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "knockoff/experiments.hpp"
#include "knockoff/io.hpp"

namespace fs = std::filesystem;
using namespace knockoff;

namespace {

struct SpecOptions {
  std::string config;
  std::optional<std::string> preset;
  std::optional<std::string> dataset;
  std::optional<std::string> copula_family;
  std::optional<std::string> copula_marginal;
  std::optional<double> theta;
  std::optional<double> rho_base;
  std::optional<int> weights_preset;
  std::optional<std::string> x_path;
  std::optional<std::string> y_path;
  std::optional<int> n, p, nonnulls;
  std::optional<double> scale_divisor;
  std::optional<std::string> response;
  std::optional<double> q;
  std::optional<int> repeats, workers;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, alpha_schedule_c;
  std::optional<double> lambda1, lambda2, lambda3;
  std::optional<double> lr_generator, lr_swapper;
  std::optional<int> epochs, batch_size, projections, num_swappers;
  std::optional<int> k_override;
  bool disable_rex = false;
  bool disable_swapper_decor = false;
  bool disable_drp = false;
  bool oracle = false;
};

void add_spec_flags(CLI::App* cmd, SpecOptions& opt, bool seed_required) {
  cmd->add_option("--config", opt.config,
                  "JSON config file (ExperimentSpec schema)");
  cmd->add_option("--preset", opt.preset, "desk | paper");
  cmd->add_option("--dataset", opt.dataset,
                  "gaussian_mixture | copula | external");
  cmd->add_option("--copula-family", opt.copula_family, "clayton | joe");
  cmd->add_option("--copula-marginal", opt.copula_marginal,
                  "uniform | exponential");
  cmd->add_option("--theta", opt.theta, "copula parameter");
  cmd->add_option("--rho-base", opt.rho_base, "mixture base correlation");
  cmd->add_option("--weights-preset", opt.weights_preset,
                  "mixture weight preset index (1..10)");
  cmd->add_option("--x", opt.x_path, "external design matrix csv");
  cmd->add_option("--y", opt.y_path, "external response csv");
  cmd->add_option("--n", opt.n, "sample size");
  cmd->add_option("--p", opt.p, "feature count");
  cmd->add_option("--nonnulls", opt.nonnulls, "number of nonnull features");
  cmd->add_option("--scale-divisor", opt.scale_divisor,
                  "coefficient scale divisor c in p/(c sqrt(n))");
  cmd->add_option("--response", opt.response, "linear | tanh");
  cmd->add_option("--q", opt.q, "nominal FDR level");
  cmd->add_option("--repeats", opt.repeats, "number of repeats");
  cmd->add_option("--workers", opt.workers, "parallel trial workers");
  auto* seed_opt =
      cmd->add_option("--seed", opt.seed, "base seed for the seed ladder");
  if (seed_required) seed_opt->required();
  cmd->add_option("--alpha", opt.alpha, "DRP mixing weight");
  cmd->add_option("--alpha-schedule-c", opt.alpha_schedule_c,
                  "use the vanishing schedule alpha_n = c/sqrt(n)");
  cmd->add_option("--lambda1", opt.lambda1, "REx weight");
  cmd->add_option("--lambda2", opt.lambda2, "swapper decorrelation weight");
  cmd->add_option("--lambda3", opt.lambda3, "dependency loss weight");
  cmd->add_option("--lr-generator", opt.lr_generator, "generator step size");
  cmd->add_option("--lr-swapper", opt.lr_swapper, "swapper step size");
  cmd->add_option("--epochs", opt.epochs, "training epochs");
  cmd->add_option("--batch-size", opt.batch_size, "minibatch size");
  cmd->add_option("--projections", opt.projections,
                  "projection directions per distance");
  cmd->add_option("--num-swappers", opt.num_swappers, "adversary count K");
  cmd->add_option("--k-override", opt.k_override, "ablation: force K");
  cmd->add_flag("--disable-rex", opt.disable_rex, "ablation: drop REx");
  cmd->add_flag("--disable-swapper-decor", opt.disable_swapper_decor,
                "ablation: drop the swapper decorrelation");
  cmd->add_flag("--disable-drp", opt.disable_drp, "ablation: skip DRP");
  cmd->add_flag("--oracle", opt.oracle,
                "bypass the generator with the permutation oracle");
}

ExperimentSpec resolve_spec(const SpecOptions& opt) {
  ExperimentSpec spec;
  if (!opt.config.empty()) {
    std::ifstream in(opt.config);
    if (!in) throw std::runtime_error("cannot read config " + opt.config);
    json j;
    in >> j;
    j.get_to(spec);
  }
  if (opt.preset) {
    if (*opt.preset == "desk") {
      spec.preset = "desk";
      spec.net = KnockoffNetConfig::desk();
      spec.train = TrainConfig::desk_defaults();
    } else if (*opt.preset == "paper") {
      ExperimentSpec paper = ExperimentSpec::paper_scale();
      paper.dataset = spec.dataset;
      spec = paper;
    } else {
      throw std::runtime_error("unknown preset " + *opt.preset);
    }
  }
  if (opt.dataset) {
    if (*opt.dataset == "gaussian_mixture")
      spec.dataset.kind = DatasetKind::GaussianMixture;
    else if (*opt.dataset == "copula")
      spec.dataset.kind = DatasetKind::Copula;
    else if (*opt.dataset == "external")
      spec.dataset.kind = DatasetKind::External;
    else
      throw std::runtime_error("unknown dataset kind " + *opt.dataset);
  }
  if (opt.copula_family) {
    spec.dataset.copula.family = *opt.copula_family == "joe"
                                     ? CopulaFamily::Joe
                                     : CopulaFamily::Clayton;
  }
  if (opt.copula_marginal) {
    spec.dataset.copula.marginal = *opt.copula_marginal == "exponential"
                                       ? CopulaMarginal::Exponential
                                       : CopulaMarginal::Uniform;
  }
  if (opt.theta) spec.dataset.copula.theta = *opt.theta;
  if (opt.rho_base) spec.dataset.mixture.rho_base = *opt.rho_base;
  if (opt.weights_preset) {
    spec.dataset.mixture.weights =
        mixture_weight_preset(*opt.weights_preset).weights;
  }
  if (opt.x_path) {
    spec.dataset.kind = DatasetKind::External;
    spec.dataset.x_path = *opt.x_path;
  }
  if (opt.y_path) spec.dataset.y_path = *opt.y_path;
  if (opt.n) spec.n = *opt.n;
  if (opt.p) spec.p = *opt.p;
  if (opt.nonnulls) spec.coefficients.num_nonnull = *opt.nonnulls;
  if (opt.scale_divisor) spec.coefficients.scale_divisor = *opt.scale_divisor;
  if (opt.response)
    spec.response =
        *opt.response == "tanh" ? ResponseKind::Tanh : ResponseKind::Linear;
  if (opt.q) spec.q = *opt.q;
  if (opt.repeats) spec.num_repeats = *opt.repeats;
  if (opt.workers) spec.workers = *opt.workers;
  if (opt.seed) spec.base_seed = *opt.seed;
  if (opt.alpha) spec.drp.alpha = *opt.alpha;
  if (opt.alpha_schedule_c) spec.drp.alpha_schedule_c = *opt.alpha_schedule_c;
  if (opt.lambda1) spec.train.lambda1 = *opt.lambda1;
  if (opt.lambda2) spec.train.lambda2 = *opt.lambda2;
  if (opt.lambda3) spec.train.lambda3 = *opt.lambda3;
  if (opt.lr_generator) spec.train.lr_generator = *opt.lr_generator;
  if (opt.lr_swapper) spec.train.lr_swapper = *opt.lr_swapper;
  if (opt.epochs) spec.train.epochs = *opt.epochs;
  if (opt.batch_size) spec.train.batch_size = *opt.batch_size;
  if (opt.projections) spec.train.num_projections = *opt.projections;
  if (opt.num_swappers) spec.train.num_swappers = *opt.num_swappers;
  if (opt.k_override) spec.flags.k_override = *opt.k_override;
  if (opt.disable_rex) spec.flags.disable_rex = true;
  if (opt.disable_swapper_decor) spec.flags.disable_swapper_decor = true;
  if (opt.disable_drp) spec.flags.disable_drp = true;
  if (opt.oracle) spec.generator = GeneratorKind::OracleIndependent;
  spec.validate();
  return spec;
}

void print_summary(const ExperimentReport& report) {
  std::cout << "digest " << report.digest << "\n";
  std::printf("FDR   mean %.4f std %.4f median %.4f q05 %.4f q95 %.4f\n",
              report.fdr.mean, report.fdr.stddev, report.fdr.median,
              report.fdr.q05, report.fdr.q95);
  std::printf("power mean %.4f std %.4f median %.4f q05 %.4f q95 %.4f\n",
              report.power.mean, report.power.stddev, report.power.median,
              report.power.q05, report.power.q95);
  const FullScaleReference ref;
  std::printf("full-scale reference: FDR %.3f power %.3f\n", ref.fdr_mean,
              ref.power_mean);
  if (report.failures > 0)
    std::cout << report.failures << " trial(s) failed\n";
}

json selection_to_json(const SelectionResult& sel, const std::string& digest) {
  json j;
  j["q"] = sel.q;
  j["tau"] = std::isfinite(sel.tau) ? json(sel.tau) : json("inf");
  j["selected"] = sel.selected;
  std::vector<double> w(sel.w.data(), sel.w.data() + sel.w.size());
  j["w"] = w;
  j["fdp"] = std::isnan(sel.fdp) ? json(nullptr) : json(sel.fdp);
  j["power"] = std::isnan(sel.power) ? json(nullptr) : json(sel.power);
  j["config_digest"] = digest;
  return j;
}

int cmd_generate_data(const SpecOptions& opt, const std::string& out_dir,
                      int repeat) {
  const ExperimentSpec spec = resolve_spec(opt);
  const std::uint64_t seed = derive_seed(spec.base_seed, "trial", repeat);
  const DatasetBundle data = make_dataset(spec, seed);
  fs::create_directories(out_dir);
  write_matrix_csv(fs::path(out_dir) / "X.csv", data.raw);
  write_vector_csv(fs::path(out_dir) / "Y.csv", data.y);
  json meta;
  meta["spec"] = spec;
  meta["config_digest"] = config_digest(spec);
  meta["trial_seed"] = data.trial_seed;
  meta["repeat_index"] = repeat;
  meta["nonnull"] = data.nonnull;
  std::vector<double> beta(data.beta.data(),
                           data.beta.data() + data.beta.size());
  meta["beta_star"] = beta;
  std::ofstream out(fs::path(out_dir) / "meta.json");
  out << meta.dump(2);
  std::cout << "wrote X.csv, Y.csv, meta.json to " << out_dir << "\n";
  return 0;
}

int cmd_train(const SpecOptions& opt, const std::string& out_dir, int repeat) {
  const ExperimentSpec spec = resolve_spec(opt);
  const std::uint64_t seed = derive_seed(spec.base_seed, "trial", repeat);
  const DatasetBundle data = make_dataset(spec, seed);
  const Matrix x = standardize_columns(data.raw);
  TrainConfig tc = spec.train;
  tc.seed = derive_seed(seed, "train");
  const TrainResult trained = train(x, tc, spec.net);
  fs::create_directories(out_dir);
  save_checkpoint(fs::path(out_dir) / "model.ckpt", trained.net);
  write_training_log_csv(fs::path(out_dir) / "training_log.csv", trained.log);
  std::cout << "stopped at epoch " << trained.log.stopped_epoch << " (best "
            << trained.log.best_epoch
            << "); validation dependency loss bottoms out at epoch "
            << trained.log.min_val_drl_epoch() << "; checkpoint in "
            << out_dir << "\n";
  return 0;
}

int cmd_knockoff(const std::string& checkpoint, const std::string& x_path,
                 const std::string& out_file, std::uint64_t seed,
                 std::optional<double> alpha) {
  const KnockoffNet net = load_checkpoint(checkpoint);
  const Matrix x = standardize_columns(read_matrix_csv(x_path).values);
  require(static_cast<int>(x.cols()) == net.input_dim(),
          "knockoff: design width does not match the checkpoint");
  Rng zrng(derive_seed(seed, "genz"));
  Matrix xtilde = net.generate(
      x, zrng.uniform_matrix(static_cast<int>(x.rows()), net.input_dim()));
  if (alpha) {
    DrpConfig cfg;
    cfg.alpha = *alpha;
    cfg.seed = derive_seed(seed, "drp");
    DrpInfo info;
    xtilde = apply_drp(xtilde, x, cfg, &info);
    std::cout << "applied DRP with alpha " << info.alpha
              << " (permutation digest " << to_hex(info.permutation_digest)
              << ")\n";
  }
  write_matrix_csv(out_file, xtilde);
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

int cmd_select(const std::string& x_path, const std::string& xtilde_path,
               const std::string& y_path, const std::string& meta_path,
               double q, std::uint64_t seed, const std::string& out_file) {
  const Matrix x = standardize_columns(read_matrix_csv(x_path).values);
  const Matrix xtilde = read_matrix_csv(xtilde_path).values;
  const Vector y = read_vector_csv(y_path);
  std::vector<bool> nonnull;
  if (!meta_path.empty()) {
    std::ifstream in(meta_path);
    if (!in) throw std::runtime_error("cannot read meta " + meta_path);
    json meta;
    in >> meta;
    if (meta.contains("nonnull"))
      nonnull = meta.at("nonnull").get<std::vector<bool>>();
  }
  SelectionResult sel =
      run_filter(x, xtilde, y, nonnull, q, derive_seed(seed, "folds"));
  if (nonnull.empty()) {
    sel.fdp = std::numeric_limits<double>::quiet_NaN();
    sel.power = std::numeric_limits<double>::quiet_NaN();
  }
  json invocation = {{"x", x_path}, {"xtilde", xtilde_path}, {"y", y_path},
                     {"q", q},      {"seed", seed}};
  const json out = selection_to_json(sel, to_hex(fnv1a64(invocation.dump())));
  std::ofstream os(out_file);
  os << out.dump(2);
  std::cout << "selected " << sel.selected.size() << " feature(s), tau ";
  if (std::isfinite(sel.tau)) std::cout << sel.tau;
  else std::cout << "inf";
  std::cout << ", wrote " << out_file << "\n";
  return 0;
}

int cmd_diagnose(const std::string& x_path, const std::string& xtilde_path,
                 std::uint64_t seed, const std::string& model_tag,
                 const std::string& dataset_tag, const std::string& out_file) {
  const Matrix x = standardize_columns(read_matrix_csv(x_path).values);
  const Matrix xtilde = read_matrix_csv(xtilde_path).values;
  const SwapMetricReport report = swap_property_suite(x, xtilde, seed);
  std::ofstream out(out_file);
  if (!out) throw std::runtime_error("cannot write " + out_file);
  out << "model,dataset,metric,ratio,value\n";
  auto emit = [&](const char* metric, const std::vector<double>& values,
                  double avg) {
    for (std::size_t k = 0; k < report.ratios.size(); ++k)
      out << model_tag << "," << dataset_tag << "," << metric << ","
          << report.ratios[k] << "," << values[k] << "\n";
    out << model_tag << "," << dataset_tag << "," << metric << ",average,"
        << avg << "\n";
  };
  emit("mmd_linear", report.mmd, report.mmd_average());
  emit("swd1", report.swd1, report.swd1_average());
  emit("swd2", report.swd2, report.swd2_average());
  std::cout << "swap metrics (averages): mmd " << report.mmd_average()
            << ", swd1 " << report.swd1_average() << ", swd2 "
            << report.swd2_average() << "; wrote " << out_file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Adversarially trained knockoff generation and FDR-controlled feature "
      "selection"};
  app.require_subcommand(1);

  std::string out_dir = "out";
  int repeat = 0;

  SpecOptions gen_opt;
  auto* gen = app.add_subcommand("generate-data",
                                 "Sample a synthetic dataset to csv files");
  add_spec_flags(gen, gen_opt, false);
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--repeat", repeat, "repeat index on the seed ladder");

  SpecOptions train_opt;
  auto* train_cmd =
      app.add_subcommand("train", "Train the generator on one dataset");
  add_spec_flags(train_cmd, train_opt, false);
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--repeat", repeat, "repeat index on the seed ladder");

  std::string checkpoint, x_path, xtilde_path, y_path, meta_path;
  std::string out_file = "xtilde.csv";
  std::uint64_t tool_seed = 1;
  std::optional<double> drp_alpha;
  auto* knock = app.add_subcommand(
      "knockoff", "Generate a knockoff matrix from a checkpoint");
  knock->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required();
  knock->add_option("--x", x_path, "design matrix csv")->required();
  knock->add_option("--out", out_file, "output csv");
  knock->add_option("--seed", tool_seed, "noise seed");
  knock->add_option("--drp-alpha", drp_alpha,
                    "apply DRP with this mixing weight");

  std::string sel_out = "selection.json";
  double sel_q = 0.1;
  auto* select =
      app.add_subcommand("select", "Run the knockoff filter on files");
  select->add_option("--x", x_path, "design matrix csv")->required();
  select->add_option("--xtilde", xtilde_path, "knockoff csv")->required();
  select->add_option("--y", y_path, "response csv")->required();
  select->add_option("--meta", meta_path,
                     "dataset meta.json with the nonnull mask");
  select->add_option("--q", sel_q, "nominal FDR level");
  select->add_option("--seed", tool_seed, "fold seed");
  select->add_option("--out", sel_out, "output json");

  std::string model_tag = "model", dataset_tag = "dataset";
  std::string diag_out = "swap_metrics.csv";
  auto* diagnose =
      app.add_subcommand("diagnose", "Swap-property metrics for a pair");
  diagnose->add_option("--x", x_path, "design matrix csv")->required();
  diagnose->add_option("--xtilde", xtilde_path, "knockoff csv")->required();
  diagnose->add_option("--seed", tool_seed, "swap-set seed");
  diagnose->add_option("--model-tag", model_tag, "row key");
  diagnose->add_option("--dataset-tag", dataset_tag, "row key");
  diagnose->add_option("--out", diag_out, "output csv");

  SpecOptions exp_opt;
  auto* experiment = app.add_subcommand(
      "experiment", "Repeated trials with aggregate FDR/power");
  add_spec_flags(experiment, exp_opt, /*seed_required=*/true);
  experiment->add_option("--out", out_dir, "output directory");

  SpecOptions abl_opt;
  auto* ablation = app.add_subcommand(
      "ablation", "Full model vs the four ablated variants");
  add_spec_flags(ablation, abl_opt, false);
  ablation->add_option("--out", out_dir, "output directory");

  SpecOptions sweep_opt;
  auto* alpha_cmd = app.add_subcommand(
      "sweep-alpha", "FDR/power across the DRP mixing grid 0..1");
  add_spec_flags(alpha_cmd, sweep_opt, false);
  alpha_cmd->add_option("--out", out_dir, "output directory");
  auto* beta_cmd = app.add_subcommand(
      "sweep-beta-scale", "FDR/power across coefficient scales {5,10,15,20}");
  add_spec_flags(beta_cmd, sweep_opt, false);
  beta_cmd->add_option("--out", out_dir, "output directory");
  auto* rho_cmd = app.add_subcommand(
      "sweep-rho", "FDR/power across rho_base {0.6,0.7,0.8}");
  add_spec_flags(rho_cmd, sweep_opt, false);
  rho_cmd->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(gen_opt, out_dir, repeat);
    if (train_cmd->parsed()) return cmd_train(train_opt, out_dir, repeat);
    if (knock->parsed())
      return cmd_knockoff(checkpoint, x_path, out_file, tool_seed, drp_alpha);
    if (select->parsed())
      return cmd_select(x_path, xtilde_path, y_path, meta_path, sel_q,
                        tool_seed, sel_out);
    if (diagnose->parsed())
      return cmd_diagnose(x_path, xtilde_path, tool_seed, model_tag,
                          dataset_tag, diag_out);
    if (experiment->parsed()) {
      const ExperimentSpec spec = resolve_spec(exp_opt);
      const ExperimentReport report = run_experiment(spec);
      emit_report(report, out_dir);
      print_summary(report);
      return 0;
    }
    if (ablation->parsed()) {
      const ExperimentSpec spec = resolve_spec(abl_opt);
      const auto reports = run_ablation(spec);
      fs::create_directories(out_dir);
      std::ofstream combined(fs::path(out_dir) / "ablation.csv");
      combined << "variant,fdr_mean,fdr_std,power_mean,power_std,failures,"
                  "digest\n";
      for (const auto& [name, report] : reports) {
        emit_report(report, fs::path(out_dir) / name);
        combined << name << "," << report.fdr.mean << "," << report.fdr.stddev
                 << "," << report.power.mean << "," << report.power.stddev
                 << "," << report.failures << "," << report.digest << "\n";
        std::cout << "== " << name << " ==\n";
        print_summary(report);
      }
      return 0;
    }
    auto run_sweep =
        [&](const char* name,
            std::vector<SweepPoint> (*sweep)(const ExperimentSpec&)) {
          const ExperimentSpec spec = resolve_spec(sweep_opt);
          const auto points = sweep(spec);
          emit_sweep(name, points, out_dir, spec.q);
          for (const SweepPoint& pt : points) {
            std::printf("%s=%-6g FDR %.4f power %.4f\n", name, pt.value,
                        pt.report.fdr.mean, pt.report.power.mean);
          }
          return 0;
        };
    if (alpha_cmd->parsed()) return run_sweep("alpha", sweep_alpha);
    if (beta_cmd->parsed()) return run_sweep("beta_scale", sweep_beta_scale);
    if (rho_cmd->parsed()) return run_sweep("rho_base", sweep_rho);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
