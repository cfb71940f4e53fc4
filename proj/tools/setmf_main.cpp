// Command-line surface: dataset generation, training, evaluation, the
// verification suite, and the memory benchmark.
//
// Exit codes: 0 success, 1 verification/metric failure, 2 config error,
// 3 runtime divergence.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "setmf/eval.hpp"
#include "setmf/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace setmf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Flat run configuration with full defaulting. Flags override file values.
struct RunConfig {
  // dataset generation
  std::string dataset = "gaussian";
  int n_samples = 1000;
  Eigen::Index ground_size = 100;
  Eigen::Index optimal_size = 10;
  double noise_std = std::sqrt(0.1);
  std::string preset = "table1";  // or "appendix": 2000 train / 1000 test

  // model
  int depth = 2;
  Eigen::Index init_width = 256;
  Eigen::Index hidden_width = 500;

  // training
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  int batch_size = 128;
  int epochs = 20;
  double clamp = 1e-6;
  std::string grad_mode = "implicit";  // or "unrolled"
  int unroll_k = 5;

  // estimator
  int mc_samples = 2;
  bool antithetic = false;
  bool exact_estimator = false;

  // forward solver
  std::string solver = "fpi";  // or "anderson"
  double tolerance = 1e-6;
  int max_iterations = 100;
  double damping = 0.0;

  // scaling
  std::string scaling = "frobenius";  // none|constant|frobenius|nuclear
  double scale_constant = 1.0;

  // backward solver
  std::string linear_solver = "normal_cg";  // or "gmres"
  double linear_tolerance = 1e-8;
  int linear_max_iterations = 300;
  int gmres_restart = 30;

  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool quiet = false;

  json to_json() const {
    return json{{"dataset", dataset},
                {"n_samples", n_samples},
                {"ground_size", ground_size},
                {"optimal_size", optimal_size},
                {"noise_std", noise_std},
                {"preset", preset},
                {"depth", depth},
                {"init_width", init_width},
                {"hidden_width", hidden_width},
                {"optimizer", optimizer},
                {"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"clamp", clamp},
                {"grad_mode", grad_mode},
                {"unroll_k", unroll_k},
                {"mc_samples", mc_samples},
                {"antithetic", antithetic},
                {"exact_estimator", exact_estimator},
                {"solver", solver},
                {"tolerance", tolerance},
                {"max_iterations", max_iterations},
                {"damping", damping},
                {"scaling", scaling},
                {"scale_constant", scale_constant},
                {"linear_solver", linear_solver},
                {"linear_tolerance", linear_tolerance},
                {"linear_max_iterations", linear_max_iterations},
                {"gmres_restart", gmres_restart},
                {"seed", seed}};
  }
};

// Applies file values for every key the command line did not set.
void apply_config_file(CLI::App* cmd, const std::string& path, RunConfig* cfg) {
  std::ifstream in(path);
  if (!in.good()) throw CLI::ValidationError("--config", "cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", std::string("parse error: ") +
                                               e.what());
  }
  auto set = [&](const char* key, auto* field, const char* flag) {
    const auto* opt = cmd->get_option_no_throw(flag);
    if (j.contains(key) && (!opt || opt->count() == 0))
      *field = j.at(key).get<std::decay_t<decltype(*field)>>();
  };
  set("dataset", &cfg->dataset, "--dataset");
  set("n_samples", &cfg->n_samples, "--n-samples");
  set("ground_size", &cfg->ground_size, "--ground-size");
  set("optimal_size", &cfg->optimal_size, "--optimal-size");
  set("noise_std", &cfg->noise_std, "--noise-std");
  set("preset", &cfg->preset, "--preset");
  set("depth", &cfg->depth, "--depth");
  set("init_width", &cfg->init_width, "--init-width");
  set("hidden_width", &cfg->hidden_width, "--hidden-width");
  set("optimizer", &cfg->optimizer, "--optimizer");
  set("learning_rate", &cfg->learning_rate, "--learning-rate");
  set("batch_size", &cfg->batch_size, "--batch-size");
  set("epochs", &cfg->epochs, "--epochs");
  set("clamp", &cfg->clamp, "--clamp");
  set("grad_mode", &cfg->grad_mode, "--grad-mode");
  set("unroll_k", &cfg->unroll_k, "--unroll-k");
  set("mc_samples", &cfg->mc_samples, "--mc-samples");
  set("antithetic", &cfg->antithetic, "--antithetic");
  set("exact_estimator", &cfg->exact_estimator, "--exact-estimator");
  set("solver", &cfg->solver, "--solver");
  set("tolerance", &cfg->tolerance, "--tolerance");
  set("max_iterations", &cfg->max_iterations, "--max-iterations");
  set("damping", &cfg->damping, "--damping");
  set("scaling", &cfg->scaling, "--scaling");
  set("scale_constant", &cfg->scale_constant, "--scale-constant");
  set("linear_solver", &cfg->linear_solver, "--linear-solver");
  set("linear_tolerance", &cfg->linear_tolerance, "--linear-tolerance");
  set("linear_max_iterations", &cfg->linear_max_iterations,
      "--linear-max-iterations");
  set("gmres_restart", &cfg->gmres_restart, "--gmres-restart");
  set("seed", &cfg->seed, "--seed");
}

void add_common_flags(CLI::App* cmd, RunConfig* cfg, std::string* config_path) {
  cmd->add_option("--config", *config_path, "JSON config file; flags override");
  cmd->add_option("--seed", cfg->seed, "master RNG seed");
  cmd->add_option("--out", cfg->out_dir, "output directory");
  cmd->add_flag("--quiet", cfg->quiet, "suppress progress output");
}

void add_solver_flags(CLI::App* cmd, RunConfig* cfg) {
  cmd->add_option("--solver", cfg->solver, "forward solver: fpi|anderson");
  cmd->add_option("--tolerance", cfg->tolerance, "fixed-point tolerance");
  cmd->add_option("--max-iterations", cfg->max_iterations,
                  "fixed-point iteration cap");
  cmd->add_option("--damping", cfg->damping, "fpi damping in [0,1)");
  cmd->add_option("--scaling", cfg->scaling,
                  "gradient scaling: none|constant|frobenius|nuclear");
  cmd->add_option("--scale-constant", cfg->scale_constant,
                  "c for constant scaling");
  cmd->add_option("--mc-samples", cfg->mc_samples, "Monte Carlo samples m");
  cmd->add_flag("--antithetic", cfg->antithetic, "antithetic sample pairing");
  cmd->add_flag("--exact-estimator", cfg->exact_estimator,
                "enumerate instead of sampling (|V| <= 20)");
}

SolverConfig solver_config(const RunConfig& cfg) {
  SolverConfig s;
  if (cfg.solver == "anderson")
    s.method = SolverConfig::Method::kAnderson;
  else if (cfg.solver != "fpi")
    throw CLI::ValidationError("--solver", "unknown solver " + cfg.solver);
  s.tolerance = cfg.tolerance;
  s.max_iterations = cfg.max_iterations;
  s.damping = cfg.damping;
  return s;
}

ScalingConfig scaling_config(const RunConfig& cfg) {
  ScalingConfig s;
  if (cfg.scaling == "none")
    s.mode = ScalingConfig::Mode::kNone;
  else if (cfg.scaling == "constant")
    s.mode = ScalingConfig::Mode::kConstant;
  else if (cfg.scaling == "frobenius")
    s.mode = ScalingConfig::Mode::kFrobenius;
  else if (cfg.scaling == "nuclear")
    s.mode = ScalingConfig::Mode::kNuclear;
  else
    throw CLI::ValidationError("--scaling", "unknown mode " + cfg.scaling);
  s.constant = cfg.scale_constant;
  return s;
}

EstimatorConfig estimator_config(const RunConfig& cfg) {
  EstimatorConfig e;
  e.samples = cfg.mc_samples;
  e.antithetic = cfg.antithetic;
  e.exact = cfg.exact_estimator;
  e.seed = cfg.seed;
  return e;
}

LinearSolveConfig linear_config(const RunConfig& cfg) {
  LinearSolveConfig l;
  if (cfg.linear_solver == "gmres")
    l.method = LinearSolveConfig::Method::kGmres;
  else if (cfg.linear_solver != "normal_cg")
    throw CLI::ValidationError("--linear-solver",
                               "unknown method " + cfg.linear_solver);
  l.tolerance = cfg.linear_tolerance;
  l.max_iterations = cfg.linear_max_iterations;
  l.gmres_restart = cfg.gmres_restart;
  return l;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  if (cfg.optimizer == "sgd")
    t.optimizer.kind = OptimizerConfig::Kind::kSgd;
  else if (cfg.optimizer != "adam")
    throw CLI::ValidationError("--optimizer", "unknown " + cfg.optimizer);
  t.optimizer.learning_rate = cfg.learning_rate;
  t.arch.init_width = cfg.init_width;
  t.arch.hidden_width = cfg.hidden_width;
  t.arch.depth = cfg.depth;
  t.batch_size = cfg.batch_size;
  t.epochs = cfg.epochs;
  t.estimator = estimator_config(cfg);
  t.solver = solver_config(cfg);
  t.scaling = scaling_config(cfg);
  t.linear = linear_config(cfg);
  if (cfg.grad_mode == "unrolled")
    t.grad_mode = TrainConfig::GradMode::kUnrolled;
  else if (cfg.grad_mode != "implicit")
    throw CLI::ValidationError("--grad-mode", "unknown " + cfg.grad_mode);
  t.unroll_iterations = cfg.unroll_k;
  t.clamp = cfg.clamp;
  t.seed = cfg.seed;
  return t;
}

std::string announce(const RunConfig& cfg) {
  const std::string hash = hex64(fnv1a64(cfg.to_json().dump()));
  if (!cfg.quiet) std::cout << "config_hash: " << hash << "\n";
  return hash;
}

void ensure_out_dir(const RunConfig& cfg) {
  if (!fs::exists(cfg.out_dir)) fs::create_directories(cfg.out_dir);
}

// ----- gen-data -------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
  announce(cfg);
  ensure_out_dir(cfg);

  int total = cfg.n_samples;
  if (cfg.preset == "appendix")
    total = 3000;  // 2000 train+validation, 1000 test
  else if (cfg.preset != "table1")
    throw CLI::ValidationError("--preset", "unknown preset " + cfg.preset);

  Dataset all;
  if (cfg.dataset == "gaussian") {
    all = gen_gaussian(total, cfg.ground_size, cfg.optimal_size, cfg.seed);
  } else if (cfg.dataset == "moons") {
    all = gen_moons(total, cfg.ground_size, cfg.optimal_size, cfg.noise_std,
                    cfg.seed);
  } else {
    throw CLI::ValidationError("--dataset", "unknown dataset " + cfg.dataset);
  }

  Dataset train_set, test_set;
  if (cfg.preset == "appendix") {
    train_set.meta = all.meta;
    train_set.meta.split = "train";
    test_set.meta = all.meta;
    test_set.meta.split = "test";
    train_set.samples.assign(all.samples.begin(), all.samples.begin() + 2000);
    test_set.samples.assign(all.samples.begin() + 2000, all.samples.end());
  } else {
    std::tie(train_set, test_set) = split_train_test(all);
  }

  const std::string train_path = cfg.out_dir + "/train.jsonl";
  const std::string test_path = cfg.out_dir + "/test.jsonl";
  save_dataset(train_set, train_path);
  save_dataset(test_set, test_path);
  if (!cfg.quiet)
    std::cout << "wrote " << train_path << " (" << train_set.size()
              << ") and " << test_path << " (" << test_set.size() << ")\n";
  return kExitOk;
}

// ----- train ----------------------------------------------------------

int cmd_train(const RunConfig& cfg, const std::string& data_path) {
  const std::string hash = announce(cfg);
  ensure_out_dir(cfg);
  const Dataset data = load_dataset(data_path);
  const TrainConfig tcfg = train_config(cfg);

  const auto t0 = std::chrono::steady_clock::now();
  auto [model, history] = train(data, tcfg);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  save_model(model, cfg.out_dir + "/model.json");
  {
    std::ofstream out(cfg.out_dir + "/history.jsonl");
    out << json{{"version", 1},
                {"config_hash", hash},
                {"seed", cfg.seed},
                {"epochs", cfg.epochs},
                {"wall_time_s", wall}}
               .dump()
        << "\n";
    for (std::size_t e = 0; e < history.mean_loss.size(); ++e) {
      out << json{{"epoch", e + 1},
                  {"mean_loss", history.mean_loss[e]},
                  {"mean_residual", history.mean_residual[e]},
                  {"mean_iterations", history.mean_iterations[e]},
                  {"wall_time_s", history.wall_time_s[e]}}
                 .dump()
          << "\n";
      if (!cfg.quiet)
        std::cout << "epoch " << e + 1 << ": loss " << history.mean_loss[e]
                  << ", residual " << history.mean_residual[e] << ", iters "
                  << history.mean_iterations[e] << "\n";
    }
  }
  if (!cfg.quiet)
    std::cout << "wrote " << cfg.out_dir << "/model.json and history.jsonl\n";
  return kExitOk;
}

// ----- eval -----------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const std::string& data_path,
             const std::string& model_path, const std::string& mode) {
  const std::string hash = announce(cfg);
  ensure_out_dir(cfg);
  if (mode != "one-step" && mode != "converge")
    throw CLI::ValidationError("--mode", "unknown inference mode " + mode);

  const Dataset data = load_dataset(data_path);
  const SetFunctionModel model = load_model(model_path);

  const auto t0 = std::chrono::steady_clock::now();
  const Metrics metrics = mean_jc(
      model, data,
      mode == "converge" ? InferenceMode::kConverge : InferenceMode::kOneStep,
      solver_config(cfg), scaling_config(cfg), estimator_config(cfg));
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  std::ofstream out(cfg.out_dir + "/metrics.jsonl");
  out << json{{"version", 1},
              {"mode", metrics.mode},
              {"mean_jc", metrics.mean_jc},
              {"config_hash", hash},
              {"seed", cfg.seed},
              {"wall_time_s", wall}}
             .dump()
      << "\n";
  for (std::size_t i = 0; i < metrics.per_sample.size(); ++i)
    out << json{{"index", i}, {"jc", metrics.per_sample[i]}}.dump() << "\n";
  if (!cfg.quiet)
    std::cout << "mean_jc: " << metrics.mean_jc << " (" << metrics.mode << ", "
              << metrics.per_sample.size() << " samples)\n";
  return kExitOk;
}

// ----- verify ---------------------------------------------------------

int cmd_verify(const RunConfig& cfg, const std::string& report_path,
               bool inject_sigma_err, bool quick) {
  const std::string hash = announce(cfg);
  VerifyOptions opts;
  opts.inject_sigma_prime_sign_error = inject_sigma_err;
  opts.quick = quick;
  const std::vector<CheckResult> results = run_verification(opts);

  std::ofstream report;
  if (!report_path.empty()) {
    report.open(report_path);
    report << json{{"version", 1}, {"config_hash", hash}}.dump() << "\n";
  }
  bool all_pass = true;
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    if (!cfg.quiet)
      std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name
                << "  measured=" << r.measured << " threshold=" << r.threshold
                << "  (" << r.seconds << "s)\n";
    if (report.is_open())
      report << json{{"name", r.name},
                     {"measured", r.measured},
                     {"threshold", r.threshold},
                     {"pass", r.pass},
                     {"seconds", r.seconds}}
                    .dump()
             << "\n";
  }
  std::cout << (all_pass ? "verification passed (" : "verification FAILED (")
            << results.size() << " checks)\n";
  return all_pass ? kExitOk : kExitCheckFailed;
}

// ----- bench-memory ---------------------------------------------------

void write_svg(const std::string& path, const RetentionProfile& p) {
  const double width = 640, height = 420, ml = 90, mb = 50, mt = 30, mr = 30;
  std::size_t top = 1;
  for (auto b : p.unrolled.max_bytes) top = std::max(top, b);
  for (auto b : p.implicit.max_bytes) top = std::max(top, b);
  const int kmax = p.k_values.back();

  auto x_of = [&](double k) {
    return ml + (width - ml - mr) * k / (kmax * 1.05);
  };
  auto y_of = [&](double bytes) {
    return height - mb - (height - mb - mt) * bytes / (double(top) * 1.1);
  };
  auto polyline = [&](const std::vector<std::size_t>& ys,
                      const std::string& color) {
    std::ostringstream os;
    os << "<polyline fill='none' stroke='" << color
       << "' stroke-width='2' points='";
    for (std::size_t i = 0; i < ys.size(); ++i)
      os << x_of(p.k_values[i]) << "," << y_of(double(ys[i])) << " ";
    os << "'/>\n";
    for (std::size_t i = 0; i < ys.size(); ++i)
      os << "<circle cx='" << x_of(p.k_values[i]) << "' cy='"
         << y_of(double(ys[i])) << "' r='3' fill='" << color << "'/>\n";
    return os.str();
  };

  std::ofstream out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
      << "' height='" << height << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<line x1='" << ml << "' y1='" << height - mb << "' x2='"
      << width - mr << "' y2='" << height - mb << "' stroke='black'/>\n"
      << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << height - mb << "' stroke='black'/>\n";
  for (int k : p.k_values)
    out << "<text x='" << x_of(k) << "' y='" << height - mb + 20
        << "' font-size='12' text-anchor='middle'>" << k << "</text>\n";
  out << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 10
      << "' font-size='13' text-anchor='middle'>fixed-point iterations"
      << "</text>\n"
      << "<text x='20' y='" << (mt + height - mb) / 2
      << "' font-size='13' transform='rotate(-90 20 "
      << (mt + height - mb) / 2 << ")' text-anchor='middle'>retained bytes"
      << "</text>\n";
  out << polyline(p.unrolled.mean_bytes, "#1f77b4")
      << polyline(p.implicit.mean_bytes, "#ff7f0e");
  out << "<text x='" << width - 190 << "' y='" << mt + 10
      << "' font-size='12' fill='#1f77b4'>unrolled</text>\n"
      << "<text x='" << width - 190 << "' y='" << mt + 28
      << "' font-size='12' fill='#ff7f0e'>implicit</text>\n";
  out << "</svg>\n";
}

int cmd_bench_memory(const RunConfig& cfg, const std::string& k_list_str,
                     int slice_size) {
  const std::string hash = announce(cfg);
  ensure_out_dir(cfg);

  std::vector<int> k_list;
  {
    std::stringstream ss(k_list_str);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) k_list.push_back(std::stoi(tok));
  }
  if (k_list.empty())
    throw CLI::ValidationError("--k-list", "needs at least one value");

  const Dataset slice =
      gen_gaussian(slice_size, cfg.ground_size, cfg.optimal_size, cfg.seed);
  const RetentionProfile profile =
      retention_profile(slice, train_config(cfg), k_list);

  const std::string base = cfg.out_dir + "/memory_profile";
  {
    std::ofstream out(base + ".jsonl");
    out << json{{"version", 1},
                {"config_hash", hash},
                {"ground_size", cfg.ground_size},
                {"slice", slice_size}}
               .dump()
        << "\n";
    for (std::size_t i = 0; i < k_list.size(); ++i) {
      for (const char* mode : {"unrolled", "implicit"}) {
        const RetentionSeries& s = std::string(mode) == "unrolled"
                                       ? profile.unrolled
                                       : profile.implicit;
        out << json{{"k", k_list[i]},
                    {"mode", mode},
                    {"min_bytes", s.min_bytes[i]},
                    {"mean_bytes", s.mean_bytes[i]},
                    {"max_bytes", s.max_bytes[i]}}
                   .dump()
            << "\n";
      }
    }
  }
  write_svg(base + ".svg", profile);
  if (!cfg.quiet)
    std::cout << "wrote " << base << ".jsonl and " << base << ".svg\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learn set functions from optimal-subset supervision via "
               "mean-field fixed points with implicit differentiation"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path, data_path, model_path, mode = "one-step";
  std::string report_path, k_list = "5,10,20,40";
  int slice_size = 2;
  bool inject_sigma_err = false, quick = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic datasets");
  add_common_flags(gen, &cfg, &config_path);
  gen->add_option("--dataset", cfg.dataset, "gaussian|moons");
  gen->add_option("--n-samples", cfg.n_samples, "dataset size before split");
  gen->add_option("--ground-size", cfg.ground_size, "|V|");
  gen->add_option("--optimal-size", cfg.optimal_size, "|S*|");
  gen->add_option("--noise-std", cfg.noise_std, "moons noise std");
  gen->add_option("--preset", cfg.preset, "table1|appendix split sizes");

  CLI::App* tr = app.add_subcommand("train", "train a set-function model");
  add_common_flags(tr, &cfg, &config_path);
  add_solver_flags(tr, &cfg);
  tr->add_option("--data", data_path, "training dataset (jsonl)")->required();
  tr->add_option("--optimizer", cfg.optimizer, "adam|sgd");
  tr->add_option("--learning-rate", cfg.learning_rate, "step size");
  tr->add_option("--batch-size", cfg.batch_size, "samples per step");
  tr->add_option("--epochs", cfg.epochs, "training epochs");
  tr->add_option("--clamp", cfg.clamp, "loss probability clamp");
  tr->add_option("--depth", cfg.depth, "head layers, 2 or 3");
  tr->add_option("--init-width", cfg.init_width, "init layer width");
  tr->add_option("--hidden-width", cfg.hidden_width, "hidden layer width");
  tr->add_option("--grad-mode", cfg.grad_mode, "implicit|unrolled");
  tr->add_option("--unroll-k", cfg.unroll_k, "iterations in unrolled mode");
  tr->add_option("--linear-solver", cfg.linear_solver, "normal_cg|gmres");
  tr->add_option("--linear-tolerance", cfg.linear_tolerance,
                 "adjoint solve tolerance");
  tr->add_option("--linear-max-iterations", cfg.linear_max_iterations,
                 "adjoint solve cap");
  tr->add_option("--gmres-restart", cfg.gmres_restart, "restart length");

  CLI::App* ev = app.add_subcommand("eval", "evaluate mean Jaccard");
  add_common_flags(ev, &cfg, &config_path);
  add_solver_flags(ev, &cfg);
  ev->add_option("--data", data_path, "dataset (jsonl)")->required();
  ev->add_option("--model", model_path, "model file")->required();
  ev->add_option("--mode", mode, "one-step|converge");

  CLI::App* vr = app.add_subcommand("verify", "run the property suite");
  add_common_flags(vr, &cfg, &config_path);
  vr->add_option("--report", report_path, "machine-readable report path");
  vr->add_flag("--quick", quick, "reduced statistical sample counts");
  vr->add_flag("--inject-sigma-prime-sign-error", inject_sigma_err,
               "fault-injection fixture; the implicit check must fail");

  CLI::App* bm = app.add_subcommand("bench-memory", "retention vs iterations");
  add_common_flags(bm, &cfg, &config_path);
  add_solver_flags(bm, &cfg);
  bm->add_option("--k-list", k_list, "comma-separated iteration counts");
  bm->add_option("--slice", slice_size, "samples in the profiled batch");
  bm->add_option("--ground-size", cfg.ground_size, "|V| for the profile");
  bm->add_option("--optimal-size", cfg.optimal_size, "|S*| for the profile");
  bm->add_option("--depth", cfg.depth, "head layers, 2 or 3");
  bm->add_option("--init-width", cfg.init_width, "init layer width");
  bm->add_option("--hidden-width", cfg.hidden_width, "hidden layer width");

  try {
    app.parse(argc, argv);
    CLI::App* active = app.get_subcommands().front();
    if (!config_path.empty()) apply_config_file(active, config_path, &cfg);

    if (active == gen) return cmd_gen_data(cfg);
    if (active == tr) return cmd_train(cfg, data_path);
    if (active == ev) return cmd_eval(cfg, data_path, model_path, mode);
    if (active == vr)
      return cmd_verify(cfg, report_path, inject_sigma_err, quick);
    if (active == bm) return cmd_bench_memory(cfg, k_list, slice_size);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
