#pragma once

#include <functional>
#include <string>

#include "setmf/fixedpoint.hpp"
#include "setmf/multilinear.hpp"

// Backward pass through the converged fixed point: the linear map
// A = I - Sigma'(g) H applied matrix-free, the adjoint solve A^T u = v,
// and the parameter gradient u^T B realized as one weighted evaluation
// sweep. Also the unrolled baseline that records every iteration.
namespace setmf {

struct LinearSolveConfig {
  enum class Method { kNormalCg, kGmres };
  Method method = Method::kNormalCg;
  double tolerance = 1e-10;
  int max_iterations = 500;
  int gmres_restart = 30;
};

struct LinearSolveReport {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct LinearOperator {
  Eigen::Index size = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply_transpose;
};

// Everything the backward pass needs, frozen at the converged iterate. The
// Hessian carries the gradient scale factor so A is the Jacobian of the map
// that was actually iterated.
struct ImplicitWorkspace {
  Eigen::VectorXd psi_star;
  Eigen::VectorXd grad;         // scaled gradient g at psi*
  Eigen::VectorXd sigma_prime;  // sigma'(g), diagonal of Sigma'
  Eigen::MatrixXd hessian;      // scale * H(psi*), zero diagonal
  double scale = 1.0;
  // Rank-one correction (I - cl cr^T) from differentiating through the
  // norm-based gradient scaling; both empty when the scale is constant.
  Eigen::VectorXd norm_correction_left;
  Eigen::VectorXd norm_correction_right;
  Eigen::VectorXd adjoint;    // u, written by implicit_vjp
  Eigen::VectorXd cotangent;  // v, written by implicit_vjp
  std::size_t estimator_retained_bytes = 0;

  std::size_t retained_bytes() const;
};

ImplicitWorkspace build_workspace(const GradEstimator& estimator,
                                  const Eigen::VectorXd& psi_star,
                                  const Eigen::VectorXd& scaled_grad,
                                  double scale);

// As above, plus the scaling correction: raw_grad is the unscaled gradient
// estimate at psi*, q the norm used, norm_grad_row this sample's row of
// dQ/dG.
ImplicitWorkspace build_workspace(const GradEstimator& estimator,
                                  const Eigen::VectorXd& psi_star,
                                  const Eigen::VectorXd& scaled_grad,
                                  double scale,
                                  const Eigen::VectorXd& raw_grad, double q,
                                  const Eigen::VectorXd& norm_grad_row);

// (I - Sigma' H) x without materializing A.
Eigen::VectorXd a_matvec(const ImplicitWorkspace& ws, const Eigen::VectorXd& x);
// A^T x; H is symmetric so this is x - H (Sigma' x).
Eigen::VectorXd at_matvec(const ImplicitWorkspace& ws,
                          const Eigen::VectorXd& x);

LinearOperator make_a_operator(const ImplicitWorkspace& ws);

LinearSolveReport linear_solve(const LinearOperator& op,
                               const Eigen::VectorXd& rhs,
                               const LinearSolveConfig& cfg);

// Adjoint solve A^T u = v with fallback: configured method, the other
// Krylov method, then a dense least-squares solve.
Eigen::VectorXd solve_adjoint(const ImplicitWorkspace& ws,
                              const Eigen::VectorXd& v,
                              const LinearSolveConfig& cfg,
                              std::string* diagnostics = nullptr);

// Parameter gradient of the loss through the fixed point. The estimator
// must be the frozen one the forward solve used.
ParamVector implicit_vjp(const Eigen::VectorXd& v, ImplicitWorkspace& ws,
                         const GradEstimator& estimator,
                         const LinearSolveConfig& cfg);

// Unrolled baseline: K recorded iterations, reverse sweep through all of
// them. Retained buffers grow linearly in K.
struct UnrolledLayer {
  Eigen::VectorXd psi_in;
  Eigen::VectorXd grad;     // scaled gradient at psi_in
  Eigen::MatrixXd hessian;  // scale * H(psi_in)
  double scale = 1.0;
  Eigen::VectorXd norm_correction_left;
  Eigen::VectorXd norm_correction_right;
};

struct UnrolledRun {
  std::vector<UnrolledLayer> layers;
  Eigen::VectorXd psi_final;
  std::size_t retained_bytes = 0;
};

UnrolledRun unrolled_forward(const Eigen::VectorXd& psi0, int iterations,
                             const GradEstimator& estimator,
                             const ScalingConfig& scaling = {},
                             std::size_t retention_cap_bytes = 0);

ParamVector unrolled_backward(const UnrolledRun& run,
                              const GradEstimator& estimator,
                              const Eigen::VectorXd& v);

struct UnrolledReport {
  ParamVector grad;
  Eigen::VectorXd psi_final;
  std::size_t retained_bytes = 0;
  int layers = 0;
};

UnrolledReport unrolled_vjp(const Eigen::VectorXd& v,
                            const Eigen::VectorXd& psi0, int iterations,
                            const GradEstimator& estimator,
                            const ScalingConfig& scaling = {},
                            std::size_t retention_cap_bytes = 0);

}  // namespace setmf
