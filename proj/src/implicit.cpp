#include "setmf/implicit.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

namespace setmf {

std::size_t ImplicitWorkspace::retained_bytes() const {
  const std::size_t doubles =
      static_cast<std::size_t>(psi_star.size() + grad.size() +
                               sigma_prime.size() + adjoint.size() +
                               cotangent.size() + hessian.size());
  return sizeof(double) * doubles + estimator_retained_bytes;
}

ImplicitWorkspace build_workspace(const GradEstimator& estimator,
                                  const Eigen::VectorXd& psi_star,
                                  const Eigen::VectorXd& scaled_grad,
                                  double scale) {
  ImplicitWorkspace ws;
  ws.psi_star = psi_star;
  ws.grad = scaled_grad;
  ws.sigma_prime = sigmoid_prime(scaled_grad);
  ws.hessian = scale * estimator.hessian(psi_star);
  ws.scale = scale;
  ws.estimator_retained_bytes = estimator.retained_bytes();
  return ws;
}

ImplicitWorkspace build_workspace(const GradEstimator& estimator,
                                  const Eigen::VectorXd& psi_star,
                                  const Eigen::VectorXd& scaled_grad,
                                  double scale,
                                  const Eigen::VectorXd& raw_grad, double q,
                                  const Eigen::VectorXd& norm_grad_row) {
  ImplicitWorkspace ws =
      build_workspace(estimator, psi_star, scaled_grad, scale);
  if (q > 0.0 && norm_grad_row.size() == raw_grad.size()) {
    ws.norm_correction_left = raw_grad / q;
    ws.norm_correction_right = norm_grad_row;
  }
  return ws;
}

Eigen::VectorXd a_matvec(const ImplicitWorkspace& ws,
                         const Eigen::VectorXd& x) {
  Eigen::VectorXd t = ws.hessian * x;
  if (ws.norm_correction_left.size() != 0)
    t -= ws.norm_correction_left * ws.norm_correction_right.dot(t);
  return x - ws.sigma_prime.cwiseProduct(t);
}

Eigen::VectorXd at_matvec(const ImplicitWorkspace& ws,
                          const Eigen::VectorXd& x) {
  Eigen::VectorXd y = ws.sigma_prime.cwiseProduct(x);
  if (ws.norm_correction_left.size() != 0)
    y -= ws.norm_correction_right * ws.norm_correction_left.dot(y);
  return x - ws.hessian * y;
}

LinearOperator make_a_operator(const ImplicitWorkspace& ws) {
  LinearOperator op;
  op.size = ws.psi_star.size();
  op.apply = [&ws](const Eigen::VectorXd& x) { return a_matvec(ws, x); };
  op.apply_transpose = [&ws](const Eigen::VectorXd& x) {
    return at_matvec(ws, x);
  };
  return op;
}

namespace {

LinearSolveReport normal_cg(const LinearOperator& op,
                            const Eigen::VectorXd& rhs,
                            const LinearSolveConfig& cfg) {
  // CG on the normal equations A^T A x = A^T rhs; convergence is judged on
  // the true residual ||A x - rhs||.
  LinearSolveReport rep;
  const double target = cfg.tolerance * std::max(1.0, rhs.norm());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(op.size);
  Eigen::VectorXd r = op.apply_transpose(rhs);  // A^T rhs - N x, x = 0
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  rep.residual_norm = (op.apply(x) - rhs).norm();
  for (int it = 0; it < cfg.max_iterations && rep.residual_norm > target;
       ++it) {
    const Eigen::VectorXd np = op.apply_transpose(op.apply(p));
    const double denom = p.dot(np);
    if (denom <= 0.0 || !std::isfinite(denom)) break;  // breakdown
    const double alpha = rs / denom;
    x += alpha * p;
    r -= alpha * np;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
    rep.iterations = it + 1;
    rep.residual_norm = (op.apply(x) - rhs).norm();
  }
  rep.x = std::move(x);
  rep.converged = rep.residual_norm <= target;
  return rep;
}

LinearSolveReport gmres(const LinearOperator& op, const Eigen::VectorXd& rhs,
                        const LinearSolveConfig& cfg) {
  // Restarted GMRES with Givens rotations.
  LinearSolveReport rep;
  const double target = cfg.tolerance * std::max(1.0, rhs.norm());
  const Eigen::Index n = op.size;
  const int restart = std::max(1, cfg.gmres_restart);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  int total_iters = 0;

  while (true) {
    Eigen::VectorXd r = rhs - op.apply(x);
    double beta = r.norm();
    rep.residual_norm = beta;
    if (beta <= target || total_iters >= cfg.max_iterations) break;

    const int m = std::min<int>(restart, cfg.max_iterations - total_iters);
    Eigen::MatrixXd v(n, m + 1);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m + 1, m);
    Eigen::VectorXd cs = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd sn = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m + 1);
    v.col(0) = r / beta;
    g[0] = beta;

    int k = 0;
    for (; k < m; ++k) {
      Eigen::VectorXd w = op.apply(v.col(k));
      for (int i = 0; i <= k; ++i) {
        h(i, k) = w.dot(v.col(i));
        w -= h(i, k) * v.col(i);
      }
      h(k + 1, k) = w.norm();
      if (h(k + 1, k) > 1e-300) v.col(k + 1) = w / h(k + 1, k);

      for (int i = 0; i < k; ++i) {
        const double t = cs[i] * h(i, k) + sn[i] * h(i + 1, k);
        h(i + 1, k) = -sn[i] * h(i, k) + cs[i] * h(i + 1, k);
        h(i, k) = t;
      }
      const double denom = std::hypot(h(k, k), h(k + 1, k));
      if (denom < 1e-300) {
        ++k;
        break;
      }
      cs[k] = h(k, k) / denom;
      sn[k] = h(k + 1, k) / denom;
      h(k, k) = denom;
      h(k + 1, k) = 0.0;
      g[k + 1] = -sn[k] * g[k];
      g[k] *= cs[k];
      ++total_iters;
      rep.residual_norm = std::abs(g[k + 1]);
      if (rep.residual_norm <= target) {
        ++k;
        break;
      }
    }
    // Back-substitution on the k x k triangular system.
    Eigen::VectorXd y = Eigen::VectorXd::Zero(k);
    for (int i = k - 1; i >= 0; --i) {
      double sum = g[i];
      for (int j = i + 1; j < k; ++j) sum -= h(i, j) * y[j];
      y[i] = h(i, i) != 0.0 ? sum / h(i, i) : 0.0;
    }
    x += v.leftCols(k) * y;
    rep.iterations = total_iters;
    if (k == 0) break;
  }
  rep.x = std::move(x);
  rep.residual_norm = (op.apply(rep.x) - rhs).norm();
  rep.converged = rep.residual_norm <= target;
  return rep;
}

Eigen::MatrixXd materialize(const LinearOperator& op) {
  Eigen::MatrixXd a(op.size, op.size);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(op.size);
  for (Eigen::Index j = 0; j < op.size; ++j) {
    e[j] = 1.0;
    a.col(j) = op.apply(e);
    e[j] = 0.0;
  }
  return a;
}

LinearOperator transpose_of(const LinearOperator& op) {
  LinearOperator t;
  t.size = op.size;
  t.apply = op.apply_transpose;
  t.apply_transpose = op.apply;
  return t;
}

}  // namespace

LinearSolveReport linear_solve(const LinearOperator& op,
                               const Eigen::VectorXd& rhs,
                               const LinearSolveConfig& cfg) {
  check(op.size == rhs.size(), "linear_solve size mismatch");
  check(rhs.allFinite(), "linear_solve requires a finite right-hand side");
  check(cfg.tolerance > 0.0, "linear_solve tolerance must be positive");
  if (cfg.method == LinearSolveConfig::Method::kGmres) return gmres(op, rhs, cfg);
  return normal_cg(op, rhs, cfg);
}

Eigen::VectorXd solve_adjoint(const ImplicitWorkspace& ws,
                              const Eigen::VectorXd& v,
                              const LinearSolveConfig& cfg,
                              std::string* diagnostics) {
  const LinearOperator at = transpose_of(make_a_operator(ws));
  LinearSolveReport rep = linear_solve(at, v, cfg);
  if (rep.converged) return rep.x;

  LinearSolveConfig other = cfg;
  other.method = cfg.method == LinearSolveConfig::Method::kGmres
                     ? LinearSolveConfig::Method::kNormalCg
                     : LinearSolveConfig::Method::kGmres;
  LinearSolveReport rep2 = linear_solve(at, v, other);
  if (rep2.converged) {
    if (diagnostics)
      *diagnostics = "adjoint solve fell back to the alternate Krylov method";
    return rep2.x;
  }

  if (diagnostics)
    *diagnostics =
        "adjoint Krylov solves failed (residuals " +
        std::to_string(rep.residual_norm) + ", " +
        std::to_string(rep2.residual_norm) + "); using dense least squares";
  const Eigen::MatrixXd a = materialize(at);
  return a.completeOrthogonalDecomposition().solve(v);
}

ParamVector implicit_vjp(const Eigen::VectorXd& v, ImplicitWorkspace& ws,
                         const GradEstimator& estimator,
                         const LinearSolveConfig& cfg) {
  check(v.size() == ws.psi_star.size(), "cotangent length mismatch");
  ws.cotangent = v;
  ws.adjoint = solve_adjoint(ws, v, cfg);
  // u^T B with B = Sigma'(g) d_theta ghat: one weighted evaluation sweep
  // over the frozen sample set. Norm scaling contributes its rank-one term.
  Eigen::VectorXd weights = ws.adjoint.cwiseProduct(ws.sigma_prime);
  if (ws.norm_correction_left.size() != 0)
    weights -= ws.norm_correction_right *
               ws.norm_correction_left.dot(weights);
  weights *= ws.scale;
  return estimator.theta_grad_weighted(ws.psi_star, weights);
}

UnrolledRun unrolled_forward(const Eigen::VectorXd& psi0, int iterations,
                             const GradEstimator& estimator,
                             const ScalingConfig& scaling,
                             std::size_t retention_cap_bytes) {
  check(iterations >= 1, "unrolled solve requires at least one iteration");
  check_probability_vector(psi0);
  const Eigen::Index n = psi0.size();

  // Record every layer, the way stacked unrolling retains its
  // per-iteration Jacobian blocks.
  UnrolledRun run;
  run.layers.reserve(iterations);
  run.retained_bytes = sizeof(double) * static_cast<std::size_t>(n) +
                       estimator.retained_bytes();
  Eigen::VectorXd psi = psi0;
  for (int k = 0; k < iterations; ++k) {
    UnrolledLayer layer;
    layer.psi_in = psi;
    Eigen::MatrixXd row = estimator.grad(psi).transpose();
    const ScaledGradient scaled = scale_gradient(row, scaling, n);
    layer.scale = (scaling.mode == ScalingConfig::Mode::kNone ||
                   scaled.zero_gradient)
                      ? 1.0
                      : 2.0 / (static_cast<double>(n) * scaled.q);
    layer.grad = scaled.grad.row(0).transpose();
    layer.hessian = layer.scale * estimator.hessian(psi);
    psi = sigmoid(layer.grad);

    run.retained_bytes +=
        sizeof(double) * static_cast<std::size_t>(layer.psi_in.size() +
                                                  layer.grad.size() +
                                                  layer.hessian.size() + 1);
    if (retention_cap_bytes != 0 && run.retained_bytes > retention_cap_bytes)
      throw Error("unrolled retention exceeds the configured cap after " +
                  std::to_string(k + 1) + " layers");
    run.layers.push_back(std::move(layer));
  }
  run.psi_final = psi;
  return run;
}

ParamVector unrolled_backward(const UnrolledRun& run,
                              const GradEstimator& estimator,
                              const Eigen::VectorXd& v) {
  check(!run.layers.empty(), "unrolled_backward on an empty run");
  check(v.size() == run.psi_final.size(), "cotangent length mismatch");
  // Reverse sweep: cotangent through sigma, theta path via the frozen
  // sample weights, psi path via the recorded Hessian blocks.
  Eigen::VectorXd c = v;
  ParamVector acc;
  bool first = true;
  for (int k = static_cast<int>(run.layers.size()) - 1; k >= 0; --k) {
    const UnrolledLayer& layer = run.layers[k];
    const Eigen::VectorXd d = c.cwiseProduct(sigmoid_prime(layer.grad));
    ParamVector piece =
        estimator.theta_grad_weighted(layer.psi_in, layer.scale * d);
    if (first) {
      acc = std::move(piece);
      first = false;
    } else {
      acc.axpy(1.0, piece);
    }
    if (k > 0) c = layer.hessian * d;  // symmetric H
  }
  return acc;
}

UnrolledReport unrolled_vjp(const Eigen::VectorXd& v,
                            const Eigen::VectorXd& psi0, int iterations,
                            const GradEstimator& estimator,
                            const ScalingConfig& scaling,
                            std::size_t retention_cap_bytes) {
  const UnrolledRun run = unrolled_forward(psi0, iterations, estimator,
                                           scaling, retention_cap_bytes);
  UnrolledReport report;
  report.psi_final = run.psi_final;
  report.retained_bytes = run.retained_bytes;
  report.layers = iterations;
  report.grad = unrolled_backward(run, estimator, v);
  return report;
}

}  // namespace setmf
