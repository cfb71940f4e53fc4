#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "setmf/data.hpp"
#include "setmf/implicit.hpp"

// Outer training loop: per-sample fixed-point solve, mean-field loss,
// implicit or unrolled parameter gradient, optimizer step.
namespace setmf {

// More than half the samples in an epoch failed to converge.
struct DivergenceError : Error {
  using Error::Error;
};

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  int step = 0;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  Arch arch;
  int batch_size = 128;
  int epochs = 20;
  EstimatorConfig estimator;
  SolverConfig solver;
  ScalingConfig scaling;
  LinearSolveConfig linear;
  enum class GradMode { kImplicit, kUnrolled };
  GradMode grad_mode = GradMode::kImplicit;
  int unroll_iterations = 5;  // K for the unrolled mode
  double clamp = 1e-6;        // delta inside the loss logs
  std::uint64_t seed = 0;
  // Profiler hook: run the implicit backward even when the forward solve
  // stopped at the iteration cap.
  bool backward_on_unconverged = false;
};

struct TrainHistory {
  std::vector<double> mean_loss;
  std::vector<double> mean_residual;
  std::vector<double> mean_iterations;
  std::vector<double> wall_time_s;
};

// -sum_{j in S*} log psi_j - sum_{j not in S*} log(1 - psi_j), entries
// clamped into [delta, 1-delta] first.
double mean_field_loss(const Eigen::VectorXd& psi,
                       const std::vector<Eigen::Index>& optimal, double clamp);

// Closed-form gradient of the loss above at the clamped values.
Eigen::VectorXd loss_cotangent(const Eigen::VectorXd& psi,
                               const std::vector<Eigen::Index>& optimal,
                               double clamp);

// Multilinear extension plus the Bernoulli entropy of psi.
double elbo_exact(const SetOracle& f, int ground_size,
                  const Eigen::VectorXd& psi);

void optimizer_step(ParamVector& params, const ParamVector& grad,
                    OptimizerState& state, const OptimizerConfig& cfg);

std::pair<SetFunctionModel, TrainHistory> train(const Dataset& dataset,
                                                const TrainConfig& cfg);

// One optimizer step over an explicit list of samples; exposed for the
// gradient-mode agreement checks and the retention profiler.
struct StepStats {
  double mean_loss = 0.0;
  double mean_residual = 0.0;
  double mean_iterations = 0.0;
  int diverged = 0;
  ParamVector batch_grad;
  std::size_t retained_bytes = 0;
};

StepStats train_step(SetFunctionModel& model,
                     const std::vector<const SetSample*>& batch,
                     OptimizerState& state, const TrainConfig& cfg,
                     std::uint64_t step_key, bool apply_update = true);

}  // namespace setmf
