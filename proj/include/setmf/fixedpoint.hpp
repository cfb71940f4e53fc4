#pragma once

#include <functional>
#include <vector>

#include "setmf/multilinear.hpp"

// Solves psi = sigmoid(grad(psi)) by damped fixed-point iteration or
// Anderson acceleration, plus the contraction diagnostics that certify
// uniqueness of the solution.
namespace setmf {

struct SolverConfig {
  enum class Method { kFpi, kAnderson };
  Method method = Method::kFpi;
  double tolerance = 1e-6;
  int max_iterations = 200;
  double damping = 0.0;  // in [0,1); 0 is the plain iteration
  int anderson_memory = 5;
  double anderson_regularization = 1e-8;
};

struct SolveReport {
  Eigen::VectorXd psi;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

struct ContractionReport {
  double sup_abs_value = 0.0;       // sup over vertices of |F~| (post static scale)
  double bound = 0.0;               // |V| * sup, the certified Lipschitz bound
  double lipschitz_estimate = 0.0;  // empirical q-hat from psi pairs
  bool satisfied = false;           // bound < 1
};

using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

double sigmoid(double x);
double sigmoid_prime(double x);
Eigen::VectorXd sigmoid(const Eigen::VectorXd& x);
Eigen::VectorXd sigmoid_prime(const Eigen::VectorXd& x);

// l-infinity norm of psi - sigmoid(grad(psi)).
double residual(const Eigen::VectorXd& psi, const GradFn& grad_fn);

SolveReport solve_fixed_point(const GradFn& grad_fn,
                              const Eigen::VectorXd& psi0,
                              const SolverConfig& cfg);

ContractionReport contraction_check(const SetFunctionModel& model,
                                    const Tensor& features,
                                    const std::vector<Eigen::VectorXd>& psi_samples,
                                    const ScalingConfig& scaling);

// Iterations sufficient to reach tolerance eps under contraction factor q;
// callers take the ceiling.
double iteration_bound(double q, double eps, Eigen::Index ground_set_size);

// Lockstep solve of a batch of samples whose gradient scaling shares the
// batch-level norm Q. Converged samples freeze; their frozen gradient rows
// keep contributing to Q.
struct BatchSolveResult {
  Eigen::MatrixXd psi;          // batch x |V|
  Eigen::MatrixXd scaled_grad;  // frozen scaled gradients at the final iterate
  double scale = 1.0;           // final gradient scale factor (1 when unscaled)
  std::vector<int> iterations;
  std::vector<double> residuals;
  std::vector<char> converged;
};

BatchSolveResult solve_batch(
    const std::vector<const GradEstimator*>& estimators,
    const Eigen::MatrixXd& psi0, const SolverConfig& solver,
    const ScalingConfig& scaling);

}  // namespace setmf
