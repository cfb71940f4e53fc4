#pragma once

#include <cstdint>
#include <functional>
#include <memory>

#include "setmf/setfn.hpp"
#include "setmf/tensor.hpp"

// Multilinear extension of a set function: exact enumeration for small
// ground sets, Monte Carlo estimators for the value/gradient/Hessian, and
// the gradient scaling variants used to keep the fixed-point map contractive.
namespace setmf {

// Variational probability vector, one inclusion probability per item.
using MeanFieldState = Eigen::VectorXd;
void check_probability_vector(const Eigen::VectorXd& psi);

// Set function as a callback over bitmask subsets (bit i = item i).
using SetOracle = std::function<double(std::uint64_t)>;

constexpr int kEnumerationLimit = 20;

struct EstimatorConfig {
  int samples = 5;  // m, subsets per coordinate
  std::uint64_t seed = 0;
  bool antithetic = false;
  bool exact = false;  // enumerate instead of sampling (|V| <= 20)
};

struct ScalingConfig {
  enum class Mode { kNone, kConstant, kFrobenius, kNuclear };
  Mode mode = Mode::kNone;
  double constant = 1.0;  // c, required > 0 in constant mode
};

// Product-measure weight of every subset, indexed by bitmask; O(2^n).
Eigen::VectorXd subset_weights(const Eigen::VectorXd& psi);

// sum_S F(S) prod_{j in S} psi_j prod_{j not in S} (1 - psi_j).
double exact_value(const SetOracle& f, int ground_size,
                   const Eigen::VectorXd& psi);

// Coordinate i: value with psi_i pinned to 1 minus value with psi_i pinned 0.
Eigen::VectorXd exact_grad(const SetOracle& f, int ground_size,
                           const Eigen::VectorXd& psi);

// Off-diagonal four-point pinned differences; diagonal identically zero.
Eigen::MatrixXd exact_hessian(const SetOracle& f, int ground_size,
                              const Eigen::VectorXd& psi);

// F at every vertex of the hypercube, evaluated through the network in one
// batched pass; index = bitmask.
Eigen::VectorXd enumerate_values(const SetFunctionModel& model,
                                 const Tensor& features);

struct ScaledGradient {
  Eigen::MatrixXd grad;  // batch x |V|
  double q = 0.0;        // norm actually used
  bool zero_gradient = false;
  // dQ/dG for norm modes (frobenius: G/Q; nuclear: U V^T). The backward
  // pass differentiates through the normalization with this.
  Eigen::MatrixXd norm_gradient;
};

// 2 g / (|V| Q); Q = c, Frobenius norm, or nuclear norm of the batch
// gradient matrix. Zero Q returns g unchanged with the flag set.
ScaledGradient scale_gradient(const Eigen::MatrixXd& grad_batch,
                              const ScalingConfig& cfg,
                              Eigen::Index ground_set_size);

// Frozen-sample gradient map for one (sample, training step): value
// gradient, Hessian, and the theta-gradient of weighted sums of its
// coordinates, all over one common random number set.
class GradEstimator {
 public:
  virtual ~GradEstimator() = default;
  virtual Eigen::Index ground_size() const = 0;
  virtual Eigen::VectorXd grad(const Eigen::VectorXd& psi) const = 0;
  virtual Eigen::MatrixXd hessian(const Eigen::VectorXd& psi) const = 0;
  // grad_theta of sum_j weights[j] * ghat_j(psi, theta).
  virtual ParamVector theta_grad_weighted(
      const Eigen::VectorXd& psi, const Eigen::VectorXd& weights) const = 0;
  virtual std::size_t retained_bytes() const = 0;
};

std::unique_ptr<GradEstimator> make_estimator(const SetFunctionModel& model,
                                              const Tensor& features,
                                              const EstimatorConfig& cfg,
                                              std::uint64_t step_key = 0);

// Spec-level one-shot wrappers around the Monte Carlo estimator.
Eigen::VectorXd mc_grad(const SetFunctionModel& model, const Tensor& features,
                        const Eigen::VectorXd& psi,
                        const EstimatorConfig& cfg);
Eigen::MatrixXd mc_hessian(const SetFunctionModel& model,
                           const Tensor& features, const Eigen::VectorXd& psi,
                           const EstimatorConfig& cfg);

}  // namespace setmf
