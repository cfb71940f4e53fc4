#include "setmf/verify.hpp"

#include <chrono>
#include <limits>
#include <memory>
#include <numeric>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "setmf/eval.hpp"
#include "setmf/rng.hpp"

namespace setmf {

namespace {

using Clock = std::chrono::steady_clock;

struct Registry {
  std::vector<CheckResult>* out;

  // pass when measured <= threshold
  template <class Fn>
  void upper(const std::string& name, double threshold, Fn&& fn) {
    run(name, threshold, std::forward<Fn>(fn), /*upper=*/true);
  }
  // pass when measured >= threshold
  template <class Fn>
  void lower(const std::string& name, double threshold, Fn&& fn) {
    run(name, threshold, std::forward<Fn>(fn), /*upper=*/false);
  }

 private:
  template <class Fn>
  void run(const std::string& name, double threshold, Fn&& fn, bool upper) {
    CheckResult res;
    res.name = name;
    res.threshold = threshold;
    const auto t0 = Clock::now();
    try {
      res.measured = fn();
      res.pass = upper ? res.measured <= threshold : res.measured >= threshold;
    } catch (const std::exception& e) {
      res.measured = std::numeric_limits<double>::quiet_NaN();
      res.pass = false;
      std::fprintf(stderr, "[verify] %s threw: %s\n", name.c_str(), e.what());
    }
    res.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    out->push_back(std::move(res));
  }
};

Arch tiny_arch(int depth = 2) {
  Arch a;
  a.feature_dim = 2;
  a.init_width = 16;
  a.hidden_width = 16;
  a.depth = depth;
  return a;
}

Eigen::MatrixXd random_features(Eigen::Index n, Eigen::Index d,
                                std::uint64_t seed) {
  rng::Stream gen(seed);
  Eigen::MatrixXd f(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) f(i, j) = gen.normal();
  return f;
}

SetOracle table_oracle(std::shared_ptr<Eigen::VectorXd> table) {
  return [table](std::uint64_t mask) { return (*table)[mask]; };
}

// Constant c giving certified contraction bound 2 sup/c = 0.5.
double contraction_constant(const Eigen::VectorXd& table) {
  return 4.0 * std::max(table.cwiseAbs().maxCoeff(), 1e-9);
}

GradFn scaled_exact_grad_fn(std::shared_ptr<Eigen::VectorXd> table, int n,
                            const ScalingConfig& scaling) {
  SetOracle oracle = table_oracle(table);
  return [oracle, n, scaling](const Eigen::VectorXd& psi) {
    Eigen::MatrixXd row = exact_grad(oracle, n, psi).transpose();
    return Eigen::VectorXd(scale_gradient(row, scaling, n).grad.row(0));
  };
}

double r_squared_affine(const std::vector<double>& x,
                        const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double a = (sy - b * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / n;
  for (std::size_t i = 0; i < n; ++i) {
    ss_res += std::pow(y[i] - (a + b * x[i]), 2);
    ss_tot += std::pow(y[i] - ybar, 2);
  }
  return ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  const double denom = std::max(want.norm(), 1e-12);
  return (got - want).norm() / denom;
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  Registry reg{&results};
  const int stat_seeds = opts.quick ? 2000 : 10000;

  // ---- diffcore -------------------------------------------------------

  reg.upper("diffcore.vjp_matches_finite_diff", 1e-6, [&] {
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
      SetFunctionModel model = model_init(tiny_arch(2 + trial % 2),
                                          rng::derive(11, trial));
      const Eigen::MatrixXd feats = random_features(6, 2, 100 + trial);
      rng::Stream gen(rng::derive(12, trial));
      RowMatrixXd masks(3, 6);
      for (Eigen::Index r = 0; r < 3; ++r)
        for (Eigen::Index c = 0; c < 6; ++c)
          masks(r, c) = gen.uniform() < 0.5 ? 1.0 : 0.0;
      Eigen::VectorXd cot(3);
      for (int i = 0; i < 3; ++i) cot[i] = gen.normal();
      const Tensor inputs[2] = {Tensor::from_matrix(feats),
                                Tensor::from_matrix(masks)};

      const ParamVector grad = param_vjp(model.record, model.params, inputs,
                                         Tensor({3, 1}, cot));
      const Eigen::VectorXd theta0 = model.params.flatten();
      auto scalar = [&](const Eigen::VectorXd& theta) {
        SetFunctionModel m = model;
        m.params.unflatten(theta);
        return cot.dot(forward_eval(m.record, m.params, inputs).flat());
      };
      const Eigen::VectorXd fd = finite_diff_grad(scalar, theta0, 1e-5);
      worst = std::max(worst, rel_err(grad.flatten(), fd));
    }
    return worst;
  });

  reg.upper("diffcore.vjp_linear_in_cotangent", 1e-12, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 21);
    const Eigen::MatrixXd feats = random_features(5, 2, 22);
    RowMatrixXd masks = RowMatrixXd::Zero(2, 5);
    masks(0, 0) = masks(0, 2) = masks(1, 1) = masks(1, 4) = 1.0;
    const Tensor inputs[2] = {Tensor::from_matrix(feats),
                              Tensor::from_matrix(masks)};
    Eigen::VectorXd u(2), v(2);
    u << 0.3, -1.1;
    v << 2.0, 0.7;
    const double alpha = 1.7, beta = -0.4;
    ParamVector gu = param_vjp(model.record, model.params, inputs,
                               Tensor({2, 1}, u));
    ParamVector gv = param_vjp(model.record, model.params, inputs,
                               Tensor({2, 1}, v));
    ParamVector gmix = param_vjp(model.record, model.params, inputs,
                                 Tensor({2, 1}, alpha * u + beta * v));
    gu.scale(alpha);
    gu.axpy(beta, gv);
    return (gmix.flatten() - gu.flatten()).lpNorm<Eigen::Infinity>();
  });

  reg.upper("diffcore.deterministic_eval", 0.0, [&] {
    SetFunctionModel model = model_init(tiny_arch(3), 31);
    const Eigen::MatrixXd feats = random_features(7, 2, 32);
    RowMatrixXd masks = RowMatrixXd::Ones(2, 7);
    const Tensor inputs[2] = {Tensor::from_matrix(feats),
                              Tensor::from_matrix(masks)};
    const Eigen::VectorXd a = forward_eval(model.record, model.params,
                                           inputs).flat();
    const Eigen::VectorXd b = forward_eval(model.record, model.params,
                                           inputs).flat();
    Eigen::VectorXd cot = Eigen::VectorXd::Ones(2);
    const Eigen::VectorXd ga =
        param_vjp(model.record, model.params, inputs, Tensor({2, 1}, cot))
            .flatten();
    const Eigen::VectorXd gb =
        param_vjp(model.record, model.params, inputs, Tensor({2, 1}, cot))
            .flatten();
    return std::max((a - b).lpNorm<Eigen::Infinity>(),
                    (ga - gb).lpNorm<Eigen::Infinity>());
  });

  // ---- setfn ----------------------------------------------------------

  reg.upper("setfn.permutation_invariance", 1e-12, [&] {
    SetFunctionModel model = model_init(tiny_arch(3), 41);
    const Eigen::Index n = 9;
    const Eigen::MatrixXd feats = random_features(n, 2, 42);
    rng::Stream gen(43);
    RowMatrixXd masks(4, n);
    for (Eigen::Index r = 0; r < 4; ++r)
      for (Eigen::Index c = 0; c < n; ++c)
        masks(r, c) = gen.uniform() < 0.4 ? 1.0 : 0.0;
    const Eigen::VectorXd base = eval_sets(
        model, SubsetBatch(Tensor::from_matrix(feats),
                           Tensor::from_matrix(masks)));
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Eigen::Index> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[gen.below(i + 1)]);
      Eigen::MatrixXd pf(n, 2);
      RowMatrixXd pm(4, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        pf.row(perm[i]) = feats.row(i);
        pm.col(perm[i]) = masks.col(i);
      }
      const Eigen::VectorXd permuted = eval_sets(
          model, SubsetBatch(Tensor::from_matrix(pf),
                             Tensor::from_matrix(pm)));
      worst = std::max(worst, (permuted - base).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  reg.upper("setfn.mask_batch_position_invariance", 0.0, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 51);
    const Eigen::MatrixXd feats = random_features(6, 2, 52);
    RowMatrixXd m1(2, 6), m2(2, 6);
    m1 << 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0;
    m2.row(0) = m1.row(1);
    m2.row(1) = m1.row(0);
    const Eigen::VectorXd a = eval_sets(
        model, SubsetBatch(Tensor::from_matrix(feats), Tensor::from_matrix(m1)));
    const Eigen::VectorXd b = eval_sets(
        model, SubsetBatch(Tensor::from_matrix(feats), Tensor::from_matrix(m2)));
    return std::max(std::abs(a[0] - b[1]), std::abs(a[1] - b[0]));
  });

  reg.upper("setfn.weighted_grad_linear_in_weights", 1e-12, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 61);
    const Eigen::MatrixXd feats = random_features(5, 2, 62);
    RowMatrixXd masks(3, 5);
    masks << 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0, 0, 1, 1;
    SubsetBatch batch(Tensor::from_matrix(feats), Tensor::from_matrix(masks));
    Eigen::VectorXd u(3), v(3);
    u << 0.5, -0.3, 1.2;
    v << -1.0, 0.25, 0.75;
    ParamVector gu = param_grad_weighted(model, batch, u);
    ParamVector gv = param_grad_weighted(model, batch, v);
    ParamVector gm = param_grad_weighted(model, batch, 2.0 * u - 3.0 * v);
    gu.scale(2.0);
    gu.axpy(-3.0, gv);
    return (gm.flatten() - gu.flatten()).lpNorm<Eigen::Infinity>();
  });

  // ---- multilinear ----------------------------------------------------

  reg.upper("multilinear.vertex_consistency", 1e-12, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 71);
    const Eigen::MatrixXd feats = random_features(6, 2, 72);
    auto table = std::make_shared<Eigen::VectorXd>(
        enumerate_values(model, Tensor::from_matrix(feats)));
    const SetOracle oracle = table_oracle(table);
    double worst = 0.0;
    for (std::uint64_t mask = 0; mask < 64; ++mask) {
      Eigen::VectorXd psi(6);
      for (int i = 0; i < 6; ++i)
        psi[i] = (mask & (std::uint64_t{1} << i)) ? 1.0 : 0.0;
      worst = std::max(worst,
                       std::abs(exact_value(oracle, 6, psi) - (*table)[mask]));
    }
    return worst;
  });

  reg.upper("multilinear.exact_grad_matches_fd", 1e-6, [&] {
    SetFunctionModel model = model_init(tiny_arch(3), 81);
    const int n = 8;
    const Eigen::MatrixXd feats = random_features(n, 2, 82);
    auto table = std::make_shared<Eigen::VectorXd>(
        enumerate_values(model, Tensor::from_matrix(feats)));
    const SetOracle oracle = table_oracle(table);
    rng::Stream gen(83);
    Eigen::VectorXd psi(n);
    for (int i = 0; i < n; ++i) psi[i] = 0.2 + 0.6 * gen.uniform();
    const Eigen::VectorXd g = exact_grad(oracle, n, psi);
    const Eigen::VectorXd fd = finite_diff_grad(
        [&](const Eigen::VectorXd& p) { return exact_value(oracle, n, p); },
        psi, 1e-6);
    return (g - fd).lpNorm<Eigen::Infinity>();
  });

  reg.upper("multilinear.exact_hessian_matches_fd", 1e-6, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 91);
    const int n = 6;
    const Eigen::MatrixXd feats = random_features(n, 2, 92);
    auto table = std::make_shared<Eigen::VectorXd>(
        enumerate_values(model, Tensor::from_matrix(feats)));
    const SetOracle oracle = table_oracle(table);
    rng::Stream gen(93);
    Eigen::VectorXd psi(n);
    for (int i = 0; i < n; ++i) psi[i] = 0.2 + 0.6 * gen.uniform();
    const Eigen::MatrixXd h = exact_hessian(oracle, n, psi);
    double worst = 0.0;
    for (int j = 0; j < n; ++j) {
      const Eigen::VectorXd col_fd = finite_diff_grad(
          [&](const Eigen::VectorXd& p) {
            return exact_grad(oracle, n, p)[j];
          },
          psi, 1e-6);
      worst = std::max(worst, (h.col(j) - col_fd).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  reg.upper("multilinear.mc_grad_unbiased_z", 3.0, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 101);
    const int n = 8;
    const Eigen::MatrixXd feats = random_features(n, 2, 102);
    const Tensor tf = Tensor::from_matrix(feats);
    auto table = std::make_shared<Eigen::VectorXd>(enumerate_values(model, tf));
    rng::Stream gen(103);
    Eigen::VectorXd psi(n);
    for (int i = 0; i < n; ++i) psi[i] = 0.15 + 0.7 * gen.uniform();
    const Eigen::VectorXd truth = exact_grad(table_oracle(table), n, psi);

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(n);
    EstimatorConfig cfg;
    cfg.samples = 1;
    for (int s = 0; s < stat_seeds; ++s) {
      cfg.seed = rng::derive(104, s);
      const Eigen::VectorXd g = mc_grad(model, tf, psi, cfg);
      sum += g;
      sumsq += g.cwiseProduct(g);
    }
    const double ns = stat_seeds;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double mean = sum[i] / ns;
      const double var = std::max(sumsq[i] / ns - mean * mean, 0.0);
      const double se = std::sqrt(var / ns) + 1e-15;
      worst = std::max(worst, std::abs(mean - truth[i]) / se);
    }
    return worst;
  });

  reg.upper("multilinear.mc_hessian_unbiased_z", 3.0, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 111);
    const int n = 8;
    const Eigen::MatrixXd feats = random_features(n, 2, 112);
    const Tensor tf = Tensor::from_matrix(feats);
    auto table = std::make_shared<Eigen::VectorXd>(enumerate_values(model, tf));
    rng::Stream gen(113);
    Eigen::VectorXd psi(n);
    for (int i = 0; i < n; ++i) psi[i] = 0.15 + 0.7 * gen.uniform();
    const Eigen::MatrixXd truth = exact_hessian(table_oracle(table), n, psi);

    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(n, n);
    EstimatorConfig cfg;
    cfg.samples = 1;
    for (int s = 0; s < stat_seeds; ++s) {
      cfg.seed = rng::derive(114, s);
      const Eigen::MatrixXd h = mc_hessian(model, tf, psi, cfg);
      sum += h;
      sumsq += h.cwiseProduct(h);
    }
    const double ns = stat_seeds;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double mean = sum(i, j) / ns;
        const double var = std::max(sumsq(i, j) / ns - mean * mean, 0.0);
        const double se = std::sqrt(var / ns) + 1e-15;
        worst = std::max(worst, std::abs(mean - truth(i, j)) / se);
      }
    }
    return worst;
  });

  reg.upper("multilinear.value_bounded_by_vertex_max", 1e-12, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 121);
    const int n = 12;
    const Eigen::MatrixXd feats = random_features(n, 2, 122);
    auto table = std::make_shared<Eigen::VectorXd>(
        enumerate_values(model, Tensor::from_matrix(feats)));
    const double vertex_max = table->cwiseAbs().maxCoeff();
    const SetOracle oracle = table_oracle(table);
    rng::Stream gen(123);
    double worst = -1e300;
    const int trials = opts.quick ? 2000 : 10000;
    for (int t = 0; t < trials; ++t) {
      Eigen::VectorXd psi(n);
      for (int i = 0; i < n; ++i) psi[i] = gen.uniform();
      worst = std::max(worst,
                       std::abs(exact_value(oracle, n, psi)) - vertex_max);
    }
    return worst;
  });

  // ---- fixedpoint -----------------------------------------------------

  reg.upper("fixedpoint.iterates_stay_in_unit_box", 0.0, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 131);
    const int n = 6;
    const Eigen::MatrixXd feats = random_features(n, 2, 132);
    auto table = std::make_shared<Eigen::VectorXd>(
        enumerate_values(model, Tensor::from_matrix(feats)));
    ScalingConfig sc;
    sc.mode = ScalingConfig::Mode::kConstant;
    sc.constant = contraction_constant(*table);
    const GradFn fn = scaled_exact_grad_fn(table, n, sc);

    double violation = 0.0;
    for (auto method :
         {SolverConfig::Method::kFpi, SolverConfig::Method::kAnderson}) {
      SolverConfig cfg;
      cfg.method = method;
      cfg.tolerance = 1e-10;
      cfg.max_iterations = 80;
      // Track iterates through a wrapper.
      GradFn tracked = [&](const Eigen::VectorXd& psi) {
        violation = std::max({violation, -psi.minCoeff(),
                              psi.maxCoeff() - 1.0});
        return fn(psi);
      };
      rng::Stream gen(133);
      Eigen::VectorXd psi0(n);
      for (int i = 0; i < n; ++i) psi0[i] = gen.uniform();
      (void)solve_fixed_point(tracked, psi0, cfg);
    }
    return violation;
  });

  reg.upper("fixedpoint.unique_solution_under_contraction", 1.0, [&] {
    // measured: worst spread over starts divided by 10*eps.
    double worst_ratio = 0.0;
    for (int inst = 0; inst < (opts.quick ? 5 : 10); ++inst) {
      SetFunctionModel model = model_init(tiny_arch(), rng::derive(141, inst));
      const int n = 6;
      const Eigen::MatrixXd feats =
          random_features(n, 2, rng::derive(142, inst));
      auto table = std::make_shared<Eigen::VectorXd>(
          enumerate_values(model, Tensor::from_matrix(feats)));
      ScalingConfig sc;
      sc.mode = ScalingConfig::Mode::kConstant;
      sc.constant = contraction_constant(*table);
      const GradFn fn = scaled_exact_grad_fn(table, n, sc);

      SolverConfig cfg;
      cfg.tolerance = 1e-9;
      cfg.max_iterations = 400;
      rng::Stream gen(rng::derive(143, inst));
      Eigen::VectorXd reference;
      for (int start = 0; start < 10; ++start) {
        Eigen::VectorXd psi0(n);
        for (int i = 0; i < n; ++i) psi0[i] = gen.uniform();
        const SolveReport rep = solve_fixed_point(fn, psi0, cfg);
        if (!rep.converged) return 1e9;
        if (start == 0) {
          reference = rep.psi;
        } else {
          worst_ratio = std::max(
              worst_ratio, (rep.psi - reference).lpNorm<Eigen::Infinity>() /
                               (10.0 * cfg.tolerance));
        }
      }
    }
    return worst_ratio;
  });

  reg.upper("fixedpoint.iteration_count_within_bound", 0.0, [&] {
    double worst = -1e9;
    for (int inst = 0; inst < (opts.quick ? 5 : 10); ++inst) {
      SetFunctionModel model = model_init(tiny_arch(), rng::derive(151, inst));
      const int n = 6;
      const Eigen::MatrixXd feats =
          random_features(n, 2, rng::derive(152, inst));
      const Tensor tf = Tensor::from_matrix(feats);
      auto table = std::make_shared<Eigen::VectorXd>(
          enumerate_values(model, tf));
      ScalingConfig sc;
      sc.mode = ScalingConfig::Mode::kConstant;
      sc.constant = contraction_constant(*table);

      std::vector<Eigen::VectorXd> psi_samples;
      rng::Stream gen(rng::derive(153, inst));
      for (int s = 0; s < 16; ++s) {
        Eigen::VectorXd p(n);
        for (int i = 0; i < n; ++i) p[i] = gen.uniform();
        psi_samples.push_back(p);
      }
      const ContractionReport cr =
          contraction_check(model, tf, psi_samples, sc);
      if (!cr.satisfied) return 1e9;
      const double q = std::min(std::max(cr.lipschitz_estimate, 1e-6),
                                1.0 - 1e-6);

      SolverConfig cfg;
      cfg.tolerance = 1e-6;
      cfg.max_iterations = 1000;
      const GradFn fn = scaled_exact_grad_fn(table, n, sc);
      const SolveReport rep = solve_fixed_point(
          fn, Eigen::VectorXd::Constant(n, 0.5), cfg);
      if (!rep.converged) return 1e9;
      const double allowed =
          std::ceil(iteration_bound(q, cfg.tolerance, n)) + 2.0;
      worst = std::max(worst, rep.iterations - allowed);
    }
    return worst;
  });

  reg.upper("fixedpoint.stationarity_of_exact_elbo", 1e-4, [&] {
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
      SetFunctionModel model = model_init(tiny_arch(), rng::derive(161, inst));
      const int n = 6 + (inst % 3);  // up to 8
      const Eigen::MatrixXd feats =
          random_features(n, 2, rng::derive(162, inst));
      auto raw = std::make_shared<Eigen::VectorXd>(
          enumerate_values(model, Tensor::from_matrix(feats)));
      // Rescale the oracle itself so the unscaled fixed point is
      // contractive; stationarity is a statement about the unscaled map.
      const double alpha = 0.5 / (n * std::max(raw->cwiseAbs().maxCoeff(),
                                               1e-9));
      auto table = std::make_shared<Eigen::VectorXd>(alpha * *raw);
      const SetOracle oracle = table_oracle(table);

      SolverConfig cfg;
      cfg.tolerance = 1e-10;
      cfg.max_iterations = 400;
      const GradFn fn = [&](const Eigen::VectorXd& psi) {
        return exact_grad(oracle, n, psi);
      };
      const SolveReport rep = solve_fixed_point(
          fn, Eigen::VectorXd::Constant(n, 0.5), cfg);
      if (!rep.converged) return 1e9;
      const Eigen::VectorXd fd = finite_diff_grad(
          [&](const Eigen::VectorXd& p) { return elbo_exact(oracle, n, p); },
          rep.psi, 1e-6);
      worst = std::max(worst, fd.lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  reg.upper("fixedpoint.elbo_below_log_partition", 1e-9, [&] {
    double worst = -1e300;
    for (int inst = 0; inst < 5; ++inst) {
      SetFunctionModel model = model_init(tiny_arch(), rng::derive(171, inst));
      const int n = 6;
      const Eigen::MatrixXd feats =
          random_features(n, 2, rng::derive(172, inst));
      auto table = std::make_shared<Eigen::VectorXd>(
          enumerate_values(model, Tensor::from_matrix(feats)));
      const double vmax = table->maxCoeff();
      double acc = 0.0;
      for (Eigen::Index m = 0; m < table->size(); ++m)
        acc += std::exp((*table)[m] - vmax);
      const double log_partition = vmax + std::log(acc);
      rng::Stream gen(rng::derive(173, inst));
      for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd psi(n);
        for (int i = 0; i < n; ++i) psi[i] = gen.uniform();
        worst = std::max(worst, elbo_exact(table_oracle(table), n, psi) -
                                    log_partition);
      }
    }
    return worst;
  });

  // ---- implicit -------------------------------------------------------

  reg.upper("implicit.single_item_identity", 1e-15, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 181);
    const Eigen::MatrixXd feats = random_features(1, 2, 182);
    const Tensor tf = Tensor::from_matrix(feats);
    EstimatorConfig ec;
    ec.exact = true;
    auto est = make_estimator(model, tf, ec);

    SolverConfig cfg;
    cfg.tolerance = 1e-12;
    const GradFn fn = [&](const Eigen::VectorXd& psi) {
      return est->grad(psi);
    };
    const SolveReport rep =
        solve_fixed_point(fn, Eigen::VectorXd::Constant(1, 0.5), cfg);
    Eigen::VectorXd v(1);
    v << -1.3;
    ImplicitWorkspace ws =
        build_workspace(*est, rep.psi, est->grad(rep.psi), 1.0);
    LinearSolveConfig lc;
    const Eigen::VectorXd gi = implicit_vjp(v, ws, *est, lc).flatten();
    const Eigen::VectorXd gu =
        unrolled_vjp(v, Eigen::VectorXd::Constant(1, 0.5), 3, *est).grad
            .flatten();
    return (gi - gu).lpNorm<Eigen::Infinity>();
  });

  reg.upper("implicit.vjp_linear_in_cotangent", 1e-10, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 191);
    const int n = 5;
    const Eigen::MatrixXd feats = random_features(n, 2, 192);
    const Tensor tf = Tensor::from_matrix(feats);
    EstimatorConfig ec;
    ec.exact = true;
    auto est = make_estimator(model, tf, ec);
    auto table = std::make_shared<Eigen::VectorXd>(enumerate_values(model, tf));
    ScalingConfig sc;
    sc.mode = ScalingConfig::Mode::kConstant;
    sc.constant = contraction_constant(*table);
    const double scale = 2.0 / (n * sc.constant);

    SolverConfig cfg;
    cfg.tolerance = 1e-12;
    cfg.max_iterations = 500;
    const GradFn fn = [&](const Eigen::VectorXd& psi) {
      return Eigen::VectorXd(scale * est->grad(psi));
    };
    const SolveReport rep =
        solve_fixed_point(fn, Eigen::VectorXd::Constant(n, 0.5), cfg);
    ImplicitWorkspace ws =
        build_workspace(*est, rep.psi, fn(rep.psi), scale);
    LinearSolveConfig lc;
    rng::Stream gen(193);
    Eigen::VectorXd u(n), v(n);
    for (int i = 0; i < n; ++i) {
      u[i] = gen.normal();
      v[i] = gen.normal();
    }
    ParamVector gu = implicit_vjp(u, ws, *est, lc);
    ParamVector gv = implicit_vjp(v, ws, *est, lc);
    ParamVector gm = implicit_vjp(1.5 * u - 0.5 * v, ws, *est, lc);
    gu.scale(1.5);
    gu.axpy(-0.5, gv);
    const double denom = std::max(gm.flatten().norm(), 1e-12);
    return (gm.flatten() - gu.flatten()).norm() / denom;
  });

  reg.upper("implicit.gradient_matches_pipeline_fd", 1e-3, [&] {
    double worst = 0.0;
    for (int inst = 0; inst < 3; ++inst) {
      SetFunctionModel model = model_init(tiny_arch(), rng::derive(201, inst));
      const int n = 5;
      const Eigen::MatrixXd feats =
          random_features(n, 2, rng::derive(202, inst));
      const Tensor tf = Tensor::from_matrix(feats);
      auto table = std::make_shared<Eigen::VectorXd>(
          enumerate_values(model, tf));
      ScalingConfig sc;
      sc.mode = ScalingConfig::Mode::kConstant;
      sc.constant = contraction_constant(*table);
      const double scale = 2.0 / (n * sc.constant);
      const std::vector<Eigen::Index> optimal{0, 2};

      SolverConfig cfg;
      cfg.tolerance = 1e-12;
      cfg.max_iterations = 600;
      EstimatorConfig ec;
      ec.exact = true;

      auto solve_at = [&](const SetFunctionModel& m) {
        auto est = make_estimator(m, tf, ec);
        const GradFn fn = [&](const Eigen::VectorXd& psi) {
          return Eigen::VectorXd(scale * est->grad(psi));
        };
        return solve_fixed_point(fn, Eigen::VectorXd::Constant(n, 0.5), cfg);
      };

      const SolveReport rep = solve_at(model);
      auto est = make_estimator(model, tf, ec);
      ImplicitWorkspace ws = build_workspace(
          *est, rep.psi, Eigen::VectorXd(scale * est->grad(rep.psi)), scale);
      if (opts.inject_sigma_prime_sign_error) ws.sigma_prime *= -1.0;
      const Eigen::VectorXd v = loss_cotangent(rep.psi, optimal, 1e-6);
      LinearSolveConfig lc;
      const Eigen::VectorXd grad = implicit_vjp(v, ws, *est, lc).flatten();

      const Eigen::VectorXd theta0 = model.params.flatten();
      const Eigen::VectorXd fd = finite_diff_grad(
          [&](const Eigen::VectorXd& theta) {
            SetFunctionModel m = model;
            m.params.unflatten(theta);
            return mean_field_loss(solve_at(m).psi, optimal, 1e-6);
          },
          theta0, 1e-5);
      worst = std::max(worst, rel_err(grad, fd));
    }
    return worst;
  });

  reg.upper("implicit.unrolled_matches_implicit", 1e-3, [&] {
    SetFunctionModel model = model_init(tiny_arch(), 211);
    const int n = 5;
    const Eigen::MatrixXd feats = random_features(n, 2, 212);
    const Tensor tf = Tensor::from_matrix(feats);
    auto table = std::make_shared<Eigen::VectorXd>(enumerate_values(model, tf));
    ScalingConfig sc;
    sc.mode = ScalingConfig::Mode::kConstant;
    sc.constant = contraction_constant(*table);
    const double scale = 2.0 / (n * sc.constant);
    EstimatorConfig ec;
    ec.exact = true;
    auto est = make_estimator(model, tf, ec);

    SolverConfig cfg;
    cfg.tolerance = 1e-13;
    cfg.max_iterations = 500;
    const GradFn fn = [&](const Eigen::VectorXd& psi) {
      return Eigen::VectorXd(scale * est->grad(psi));
    };
    const SolveReport rep =
        solve_fixed_point(fn, Eigen::VectorXd::Constant(n, 0.5), cfg);
    const std::vector<Eigen::Index> optimal{1, 3};
    const Eigen::VectorXd v = loss_cotangent(rep.psi, optimal, 1e-6);

    ImplicitWorkspace ws =
        build_workspace(*est, rep.psi, fn(rep.psi), scale);
    LinearSolveConfig lc;
    const Eigen::VectorXd gi = implicit_vjp(v, ws, *est, lc).flatten();
    const UnrolledReport ur = unrolled_vjp(
        v, Eigen::VectorXd::Constant(n, 0.5), 100, *est, sc);
    return rel_err(ur.grad.flatten(), gi);
  });

  reg.upper("implicit.gmres_normalcg_agree", 1e-6, [&] {
    rng::Stream gen(221);
    const int n = 8;
    ImplicitWorkspace ws;
    ws.psi_star = Eigen::VectorXd::Constant(n, 0.5);
    ws.grad = Eigen::VectorXd::Zero(n);
    ws.sigma_prime = Eigen::VectorXd::Constant(n, 0.25);
    ws.hessian = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        ws.hessian(i, j) = 0.3 * gen.normal();
        ws.hessian(j, i) = ws.hessian(i, j);
      }
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = gen.normal();
    LinearSolveConfig a, b;
    a.method = LinearSolveConfig::Method::kNormalCg;
    b.method = LinearSolveConfig::Method::kGmres;
    const Eigen::VectorXd ua = solve_adjoint(ws, v, a);
    const Eigen::VectorXd ub = solve_adjoint(ws, v, b);
    return (ua - ub).lpNorm<Eigen::Infinity>();
  });

  // Retention accounting over K in {5,10,20,40}.
  {
    Dataset slice = gen_gaussian(2, 16, 4, 231);
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.estimator.samples = 2;
    cfg.scaling.mode = ScalingConfig::Mode::kFrobenius;
    cfg.seed = 232;
    const std::vector<int> ks{5, 10, 20, 40};
    RetentionProfile profile;
    bool profile_ok = true;
    try {
      profile = retention_profile(slice, cfg, ks, 1);
    } catch (const std::exception&) {
      profile_ok = false;
    }

    reg.lower("implicit.unrolled_retention_affine_r2", 0.99, [&] {
      if (!profile_ok) return 0.0;
      std::vector<double> x(ks.begin(), ks.end());
      std::vector<double> y;
      for (auto b : profile.unrolled.mean_bytes)
        y.push_back(static_cast<double>(b));
      return r_squared_affine(x, y);
    });
    reg.lower("implicit.unrolled_retention_k40_over_k5", 4.0, [&] {
      if (!profile_ok) return 0.0;
      return static_cast<double>(profile.unrolled.mean_bytes.back()) /
             static_cast<double>(profile.unrolled.mean_bytes.front());
    });
    reg.upper("implicit.implicit_retention_spread", 1.2, [&] {
      if (!profile_ok) return 1e9;
      const auto& m = profile.implicit.mean_bytes;
      const double lo = static_cast<double>(
          *std::min_element(m.begin(), m.end()));
      const double hi = static_cast<double>(
          *std::max_element(m.begin(), m.end()));
      return hi / std::max(lo, 1.0);
    });
  }

  // ---- train ----------------------------------------------------------

  reg.upper("train.loss_cotangent_matches_fd", 1e-6, [&] {
    rng::Stream gen(241);
    const int n = 7;
    Eigen::VectorXd psi(n);
    for (int i = 0; i < n; ++i) psi[i] = 0.1 + 0.8 * gen.uniform();
    const std::vector<Eigen::Index> optimal{0, 3, 5};
    const Eigen::VectorXd v = loss_cotangent(psi, optimal, 1e-6);
    const Eigen::VectorXd fd = finite_diff_grad(
        [&](const Eigen::VectorXd& p) {
          return mean_field_loss(p, optimal, 1e-6);
        },
        psi, 1e-7);
    return (v - fd).lpNorm<Eigen::Infinity>();
  });

  reg.upper("train.gradient_mode_agreement", 1e-3, [&] {
    Dataset data = gen_gaussian(1, 5, 2, 251);
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.estimator.exact = true;
    cfg.batch_size = 1;
    cfg.solver.tolerance = 1e-12;
    cfg.solver.max_iterations = 500;
    cfg.seed = 252;
    // Constant scaling keyed off the initial model keeps the map
    // contractive through the first few steps.
    {
      SetFunctionModel probe = model_init(
          Arch{2, cfg.arch.init_width, cfg.arch.hidden_width, cfg.arch.depth},
          rng::derive(cfg.seed, 0x1417));
      const Eigen::VectorXd table = enumerate_values(
          probe, Tensor::from_matrix(data.samples[0].features));
      cfg.scaling.mode = ScalingConfig::Mode::kConstant;
      cfg.scaling.constant = contraction_constant(table);
    }
    TrainConfig unrolled_cfg = cfg;
    unrolled_cfg.grad_mode = TrainConfig::GradMode::kUnrolled;
    unrolled_cfg.unroll_iterations = 100;

    SetFunctionModel model = model_init(
        Arch{2, cfg.arch.init_width, cfg.arch.hidden_width, cfg.arch.depth},
        rng::derive(cfg.seed, 0x1417));
    OptimizerState state;
    std::vector<const SetSample*> batch{&data.samples[0]};
    double worst = 0.0;
    for (int step = 0; step < 5; ++step) {
      OptimizerState probe_state;
      StepStats unrolled = train_step(model, batch, probe_state, unrolled_cfg,
                                      rng::derive(cfg.seed, 0x57e9, step),
                                      /*apply_update=*/false);
      StepStats implicit_stats = train_step(
          model, batch, state, cfg, rng::derive(cfg.seed, 0x57e9, step));
      worst = std::max(worst, rel_err(unrolled.batch_grad.flatten(),
                                      implicit_stats.batch_grad.flatten()));
    }
    return worst;
  });

  reg.upper("train.deterministic_given_seed", 0.0, [&] {
    Dataset data = gen_gaussian(12, 6, 2, 261);
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.estimator.samples = 2;
    cfg.scaling.mode = ScalingConfig::Mode::kFrobenius;
    cfg.solver.max_iterations = 60;
    cfg.seed = 262;
    auto [m1, h1] = train(data, cfg);
    auto [m2, h2] = train(data, cfg);
    double diff =
        (m1.params.flatten() - m2.params.flatten()).lpNorm<Eigen::Infinity>();
    if (h1.mean_loss != h2.mean_loss) diff = std::max(diff, 1.0);
    if (h1.mean_loss.size() != static_cast<std::size_t>(cfg.epochs))
      diff = std::max(diff, 1.0);
    return diff;
  });

  // ---- data -----------------------------------------------------------

  reg.upper("data.generator_deterministic", 0.0, [&] {
    const Dataset a = gen_gaussian(6, 10, 3, 271);
    const Dataset b = gen_gaussian(6, 10, 3, 271);
    const Dataset c = gen_moons(6, 10, 3, std::sqrt(0.1), 272);
    const Dataset d = gen_moons(6, 10, 3, std::sqrt(0.1), 272);
    double diff = 0.0;
    for (int i = 0; i < 6; ++i) {
      diff = std::max(diff, (a.samples[i].features - b.samples[i].features)
                                .lpNorm<Eigen::Infinity>());
      diff = std::max(diff, (c.samples[i].features - d.samples[i].features)
                                .lpNorm<Eigen::Infinity>());
      if (a.samples[i].optimal != b.samples[i].optimal) diff = 1.0;
      if (c.samples[i].optimal != d.samples[i].optimal) diff = 1.0;
    }
    return diff;
  });

  reg.upper("data.roundtrip_identity", 0.0, [&] {
    const Dataset a = gen_gaussian(10, 8, 3, 281);
    const std::string path = "/tmp/setmf_verify_roundtrip.jsonl";
    save_dataset(a, path);
    const Dataset b = load_dataset(path);
    std::remove(path.c_str());
    if (a.size() != b.size()) return 1.0;
    double diff = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      diff = std::max(diff, (a.samples[i].features - b.samples[i].features)
                                .lpNorm<Eigen::Infinity>());
      if (a.samples[i].optimal != b.samples[i].optimal) diff = 1.0;
    }
    return diff;
  });

  reg.lower("data.validation_rejects_bad_records", 1.0, [&] {
    const std::string path = "/tmp/setmf_verify_bad.jsonl";
    {
      std::ofstream out(path);
      out << R"({"version":1,"name":"x","d_f":2,"ground_size":2,"seed":0,"split":""})"
          << "\n";
      out << R"({"features":[[0.0,0.0],[1.0,1.0]],"optimal":[5]})" << "\n";
    }
    bool threw = false;
    try {
      (void)load_dataset(path);
    } catch (const Error&) {
      threw = true;
    }
    std::remove(path.c_str());
    return threw ? 1.0 : 0.0;
  });

  // ---- eval -----------------------------------------------------------

  reg.lower("eval.jaccard_properties", 1.0, [&] {
    const std::vector<Eigen::Index> a{1, 2}, b{2, 3}, e{};
    const bool ok = std::abs(jaccard(a, b) - 1.0 / 3.0) < 1e-15 &&
                    jaccard(a, a) == 1.0 && jaccard(e, e) == 1.0 &&
                    jaccard(a, b) == jaccard(b, a) && jaccard(a, e) == 0.0;
    return ok ? 1.0 : 0.0;
  });

  reg.upper("eval.argmax_scale_invariance", 0.0, [&] {
    int mismatches = 0;
    for (int inst = 0; inst < 50; ++inst) {
      SetFunctionModel model = model_init(tiny_arch(), rng::derive(291, inst));
      const int n = 4 + inst % 7;  // up to 10
      const Eigen::MatrixXd feats =
          random_features(n, 2, rng::derive(292, inst));
      const Tensor tf = Tensor::from_matrix(feats);
      const auto base = brute_force_oracle(model, tf);
      const double c = 0.1 + 3.7 * rng::uniform01(rng::derive(293, inst));
      SetFunctionModel scaled = model;
      scaled.params.at("out_w").flat() *= c;
      scaled.params.at("out_b").flat() *= c;
      const auto rescaled = brute_force_oracle(scaled, tf);
      if (base.argmax != rescaled.argmax) ++mismatches;
    }
    return static_cast<double>(mismatches);
  });

  reg.lower("eval.trained_argmax_recovery", 0.9, [&] {
    Dataset data = gen_gaussian(32, 8, 2, 301);
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.estimator.exact = true;
    cfg.batch_size = 8;
    cfg.epochs = opts.quick ? 6 : 15;
    cfg.optimizer.learning_rate = 3e-3;
    cfg.scaling.mode = ScalingConfig::Mode::kFrobenius;
    cfg.solver.max_iterations = 100;
    cfg.seed = 302;
    auto [model, history] = train(data, cfg);

    int recovered = 0;
    for (const auto& s : data.samples) {
      const Tensor tf = Tensor::from_matrix(s.features);
      const auto pred = infer_subset(
          model, tf, static_cast<Eigen::Index>(s.optimal.size()),
          InferenceMode::kConverge, cfg.solver, cfg.scaling, cfg.estimator);
      const auto oracle = brute_force_oracle(model, tf);
      if (pred == oracle.argmax) ++recovered;
    }
    return static_cast<double>(recovered) /
           static_cast<double>(data.samples.size());
  });

  return results;
}

}  // namespace setmf
