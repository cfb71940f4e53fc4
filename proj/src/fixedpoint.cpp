#include "setmf/fixedpoint.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <deque>

#include "setmf/parallel.hpp"
#include "setmf/rng.hpp"

namespace setmf {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_prime(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Eigen::VectorXd sigmoid_prime(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid_prime(v); });
}

double residual(const Eigen::VectorXd& psi, const GradFn& grad_fn) {
  return (psi - sigmoid(grad_fn(psi))).lpNorm<Eigen::Infinity>();
}

namespace {

// Type-I Anderson mixing over a sliding window, Tikhonov-regularized.
class AndersonMixer {
 public:
  AndersonMixer(int memory, double regularization)
      : memory_(memory), reg_(regularization) {}

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& t) {
    const Eigen::VectorXd f = t - x;
    xs_.push_back(x);
    fs_.push_back(f);
    while (static_cast<int>(xs_.size()) > memory_ + 1) {
      xs_.pop_front();
      fs_.pop_front();
    }
    const int h = static_cast<int>(xs_.size()) - 1;
    if (h < 1) return t.cwiseMax(0.0).cwiseMin(1.0);

    const Eigen::Index n = x.size();
    Eigen::MatrixXd dx(n, h), df(n, h);
    for (int c = 0; c < h; ++c) {
      dx.col(c) = xs_[c + 1] - xs_[c];
      df.col(c) = fs_[c + 1] - fs_[c];
    }
    Eigen::MatrixXd gram = df.transpose() * df;
    gram.diagonal().array() += reg_;
    const Eigen::VectorXd gamma = gram.ldlt().solve(df.transpose() * f);
    Eigen::VectorXd next = x + f - (dx + df) * gamma;
    return next.cwiseMax(0.0).cwiseMin(1.0);
  }

 private:
  int memory_;
  double reg_;
  std::deque<Eigen::VectorXd> xs_, fs_;
};

void check_solver_config(const SolverConfig& cfg) {
  check(cfg.tolerance > 0.0, "solver tolerance must be positive");
  check(cfg.max_iterations >= 1, "solver needs at least one iteration");
  check(cfg.damping >= 0.0 && cfg.damping < 1.0, "damping must be in [0,1)");
}

}  // namespace

SolveReport solve_fixed_point(const GradFn& grad_fn,
                              const Eigen::VectorXd& psi0,
                              const SolverConfig& cfg) {
  check_solver_config(cfg);
  check_probability_vector(psi0);

  SolveReport report;
  report.psi = psi0;
  AndersonMixer mixer(cfg.anderson_memory, cfg.anderson_regularization);

  for (int k = 0;; ++k) {
    Eigen::VectorXd g = grad_fn(report.psi);
    check(g.allFinite(), "non-finite gradient at solver iteration " +
                             std::to_string(k));
    const Eigen::VectorXd target = sigmoid(g);
    report.residual = (report.psi - target).lpNorm<Eigen::Infinity>();
    report.iterations = k;
    if (report.residual <= cfg.tolerance) {
      report.converged = true;
      return report;
    }
    if (k == cfg.max_iterations) return report;

    if (cfg.method == SolverConfig::Method::kAnderson) {
      report.psi = mixer.step(report.psi, target);
    } else {
      report.psi = (1.0 - cfg.damping) * target + cfg.damping * report.psi;
    }
  }
}

double iteration_bound(double q, double eps, Eigen::Index ground_set_size) {
  check(q > 0.0 && q < 1.0, "iteration_bound requires q in (0,1)");
  check(eps > 0.0, "iteration_bound requires eps > 0");
  const double root = std::sqrt(static_cast<double>(ground_set_size));
  return std::log(eps * (1.0 - q) / root) / std::log(q);
}

BatchSolveResult solve_batch(
    const std::vector<const GradEstimator*>& estimators,
    const Eigen::MatrixXd& psi0, const SolverConfig& solver,
    const ScalingConfig& scaling) {
  check_solver_config(solver);
  const Eigen::Index batch = psi0.rows();
  const Eigen::Index n = psi0.cols();
  check(static_cast<Eigen::Index>(estimators.size()) == batch,
        "one estimator per sample required");

  BatchSolveResult res;
  res.psi = psi0;
  res.iterations.assign(batch, 0);
  res.residuals.assign(batch, 0.0);
  res.converged.assign(batch, 0);

  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(batch, n);
  std::vector<char> needs_eval(batch, 1);
  std::vector<AndersonMixer> mixers;
  if (solver.method == SolverConfig::Method::kAnderson)
    mixers.assign(batch, AndersonMixer(solver.anderson_memory,
                                       solver.anderson_regularization));

  for (int k = 0;; ++k) {
    parallel_for(batch, [&](std::size_t i) {
      if (!needs_eval[i]) return;
      raw.row(i) = estimators[i]->grad(res.psi.row(i).transpose()).transpose();
    });
    for (Eigen::Index i = 0; i < batch; ++i)
      check(raw.row(i).allFinite(),
            "non-finite gradient for batch sample " + std::to_string(i) +
                " at iteration " + std::to_string(k));

    const ScaledGradient scaled = scale_gradient(raw, scaling, n);
    res.scaled_grad = scaled.grad;
    res.scale = (scaling.mode == ScalingConfig::Mode::kNone ||
                 scaled.zero_gradient)
                    ? 1.0
                    : 2.0 / (static_cast<double>(n) * scaled.q);

    bool all_done = true;
    for (Eigen::Index i = 0; i < batch; ++i) {
      const Eigen::VectorXd target =
          sigmoid(res.scaled_grad.row(i).transpose());
      res.residuals[i] =
          (res.psi.row(i).transpose() - target).lpNorm<Eigen::Infinity>();
      res.converged[i] = res.residuals[i] <= solver.tolerance;
      needs_eval[i] = !res.converged[i];
      if (res.converged[i]) continue;
      all_done = false;
      if (k == solver.max_iterations) continue;
      if (solver.method == SolverConfig::Method::kAnderson) {
        res.psi.row(i) =
            mixers[i].step(res.psi.row(i).transpose(), target).transpose();
      } else {
        res.psi.row(i) = (1.0 - solver.damping) * target.transpose() +
                         solver.damping * res.psi.row(i);
      }
      res.iterations[i] = k + 1;
    }
    if (all_done || k == solver.max_iterations) break;
  }
  return res;
}

ContractionReport contraction_check(
    const SetFunctionModel& model, const Tensor& features,
    const std::vector<Eigen::VectorXd>& psi_samples,
    const ScalingConfig& scaling) {
  const Eigen::Index n = features.rows();
  ContractionReport report;

  // Vertex sup of |F~|: exact for enumerable ground sets, sampled otherwise.
  // Multilinearity makes the vertex max the sup over the whole cube.
  double sup_raw = 0.0;
  if (n <= kEnumerationLimit) {
    sup_raw = enumerate_values(model, features).cwiseAbs().maxCoeff();
  } else {
    const Eigen::MatrixXd emb = item_embeddings(model, features);
    rng::Stream gen(0xc0ffee);
    const Eigen::Index trials = 4096;
    RowMatrixXd masks(trials, n);
    for (Eigen::Index r = 0; r < trials; ++r)
      for (Eigen::Index i = 0; i < n; ++i)
        masks(r, i) = gen.uniform() < 0.5 ? 1.0 : 0.0;
    sup_raw = eval_masks_cached(model, emb, masks).cwiseAbs().maxCoeff();
  }

  double static_scale = 1.0;
  if (scaling.mode == ScalingConfig::Mode::kConstant) {
    check(scaling.constant > 0.0, "constant scaling requires c > 0");
    static_scale = 2.0 / (static_cast<double>(n) * scaling.constant);
  }
  report.sup_abs_value = static_scale * sup_raw;
  report.bound = static_cast<double>(n) * report.sup_abs_value;
  report.satisfied = report.bound < 1.0;

  // Empirical Lipschitz estimate of the map actually iterated, from the
  // supplied psi pairs plus a short trajectory from the default start.
  EstimatorConfig est_cfg;
  est_cfg.exact = n <= kEnumerationLimit;
  est_cfg.samples = 8;
  est_cfg.seed = 0x11b;
  auto est = make_estimator(model, features, est_cfg);
  auto apply_map = [&](const Eigen::VectorXd& psi) {
    Eigen::MatrixXd row = est->grad(psi).transpose();
    return sigmoid(
        Eigen::VectorXd(scale_gradient(row, scaling, n).grad.row(0)));
  };

  double q_hat = 0.0;
  for (std::size_t i = 0; i + 1 < psi_samples.size(); i += 2) {
    const double dist = (psi_samples[i] - psi_samples[i + 1]).norm();
    if (dist < 1e-12) continue;
    const double moved =
        (apply_map(psi_samples[i]) - apply_map(psi_samples[i + 1])).norm();
    q_hat = std::max(q_hat, moved / dist);
  }
  Eigen::VectorXd prev = Eigen::VectorXd::Constant(n, 0.5);
  Eigen::VectorXd cur = apply_map(prev);
  for (int k = 0; k < 12; ++k) {
    const Eigen::VectorXd next = apply_map(cur);
    const double denom = (cur - prev).norm();
    if (denom < 1e-13) break;
    q_hat = std::max(q_hat, (next - cur).norm() / denom);
    prev = cur;
    cur = next;
  }
  report.lipschitz_estimate = q_hat;
  return report;
}

}  // namespace setmf
