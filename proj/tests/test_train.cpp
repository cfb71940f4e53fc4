#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "setmf/train.hpp"

using namespace setmf;

TEST_CASE("mean_field_loss closed forms") {
  const double ln2 = std::log(2.0);
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(6, 0.5);
  CHECK(mean_field_loss(half, {0, 3}, 1e-6) == doctest::Approx(6 * ln2));

  // Perfect prediction under the clamp.
  Eigen::VectorXd perfect = Eigen::VectorXd::Zero(5);
  perfect[1] = 1.0;
  perfect[4] = 1.0;
  CHECK(mean_field_loss(perfect, {1, 4}, 1e-6) <= 5 * 1.1e-6);

  // A confidently wrong coordinate pays -log(clamp).
  Eigen::VectorXd wrong = Eigen::VectorXd::Constant(3, 0.5);
  wrong[0] = 0.0;
  const double base = mean_field_loss(Eigen::VectorXd::Constant(3, 0.5),
                                      {0}, 1e-6);
  const double loss = mean_field_loss(wrong, {0}, 1e-6);
  CHECK(loss - (base - std::log(2.0)) ==
        doctest::Approx(-std::log(1e-6)).epsilon(1e-6));

  CHECK_THROWS_AS(mean_field_loss(half, {7}, 1e-6), Error);
  CHECK_THROWS_AS(mean_field_loss(half, {0}, 0.5), Error);
}

TEST_CASE("loss cotangent matches finite differences") {
  rng::Stream gen(11);
  Eigen::VectorXd psi(6);
  for (int i = 0; i < 6; ++i) psi[i] = 0.15 + 0.7 * gen.uniform();
  const std::vector<Eigen::Index> optimal{1, 2, 5};
  const Eigen::VectorXd v = loss_cotangent(psi, optimal, 1e-6);
  const Eigen::VectorXd fd = finite_diff_grad(
      [&](const Eigen::VectorXd& p) {
        return mean_field_loss(p, optimal, 1e-6);
      },
      psi, 1e-7);
  CHECK((v - fd).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("elbo_exact: entropy-only case and log-partition bound") {
  const SetOracle zero = [](std::uint64_t) { return 0.0; };
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(5, 0.5);
  CHECK(elbo_exact(zero, 5, half) == doctest::Approx(5 * std::log(2.0)));

  SetFunctionModel model = model_init(testing::small_arch(), 21);
  const Eigen::MatrixXd feats = testing::random_features(6, 2, 22);
  const Eigen::VectorXd table =
      enumerate_values(model, Tensor::from_matrix(feats));
  const SetOracle oracle = [&](std::uint64_t m) { return table[m]; };
  const double vmax = table.maxCoeff();
  double acc = 0.0;
  for (Eigen::Index m = 0; m < table.size(); ++m)
    acc += std::exp(table[m] - vmax);
  const double log_partition = vmax + std::log(acc);

  rng::Stream gen(23);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd psi(6);
    for (int i = 0; i < 6; ++i) psi[i] = gen.uniform();
    CHECK(elbo_exact(oracle, 6, psi) <= log_partition + 1e-9);
  }
}

TEST_CASE("optimizer_step: sgd and adam basics") {
  ParamVector params;
  params.add("w", Tensor::from_vector(Eigen::VectorXd::Constant(1, 1.0)));
  ParamVector grad = ParamVector::zeros_like(params);

  OptimizerConfig sgd;
  sgd.kind = OptimizerConfig::Kind::kSgd;
  sgd.learning_rate = 0.1;
  OptimizerState state;

  // Zero gradient leaves parameters unchanged.
  optimizer_step(params, grad, state, sgd);
  CHECK(params.flatten()[0] == 1.0);

  grad.at("w").flat()[0] = 0.5;
  optimizer_step(params, grad, state, sgd);
  CHECK(params.flatten()[0] == doctest::Approx(0.95));

  // Zero learning rate freezes parameters for both optimizers.
  OptimizerConfig frozen = sgd;
  frozen.learning_rate = 0.0;
  optimizer_step(params, grad, state, frozen);
  CHECK(params.flatten()[0] == doctest::Approx(0.95));

  OptimizerConfig adam;  // default Adam
  adam.learning_rate = 0.0;
  OptimizerState astate;
  optimizer_step(params, grad, astate, adam);
  CHECK(params.flatten()[0] == doctest::Approx(0.95));

  OptimizerConfig adam2;
  OptimizerState astate2;
  ParamVector zero_grad = ParamVector::zeros_like(params);
  const double before = params.flatten()[0];
  optimizer_step(params, zero_grad, astate2, adam2);
  CHECK(params.flatten()[0] == doctest::Approx(before));
}

TEST_CASE("train: two-epoch miniset is finite, recorded, deterministic") {
  const Dataset data = gen_gaussian(32, 8, 3, 31);
  TrainConfig cfg;
  cfg.arch = testing::small_arch();
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.estimator.samples = 2;
  cfg.scaling.mode = ScalingConfig::Mode::kFrobenius;
  cfg.solver.max_iterations = 80;
  cfg.seed = 32;

  auto [model, history] = train(data, cfg);
  CHECK(history.mean_loss.size() == 2);
  CHECK(history.mean_residual.size() == 2);
  CHECK(history.mean_iterations.size() == 2);
  CHECK(history.wall_time_s.size() == 2);
  for (double l : history.mean_loss) CHECK(std::isfinite(l));

  auto [model2, history2] = train(data, cfg);
  CHECK(model.params.flatten() == model2.params.flatten());
  CHECK(history.mean_loss == history2.mean_loss);
}

TEST_CASE("train aborts when most solves diverge") {
  const Dataset data = gen_gaussian(8, 6, 2, 41);
  TrainConfig cfg;
  cfg.arch = testing::small_arch();
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.estimator.samples = 1;
  cfg.scaling.mode = ScalingConfig::Mode::kNone;
  cfg.solver.max_iterations = 2;
  cfg.solver.damping = 0.9;      // keeps the iterate away from the target
  cfg.solver.tolerance = 1e-15;  // unreachable in two damped iterations
  cfg.seed = 42;
  CHECK_THROWS_AS(train(data, cfg), Error);
}

TEST_CASE("unrolled training mode produces finite gradients") {
  const Dataset data = gen_gaussian(4, 6, 2, 51);
  TrainConfig cfg;
  cfg.arch = testing::small_arch();
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.estimator.samples = 1;
  cfg.grad_mode = TrainConfig::GradMode::kUnrolled;
  cfg.unroll_iterations = 4;
  cfg.scaling.mode = ScalingConfig::Mode::kFrobenius;
  cfg.seed = 52;
  auto [model, history] = train(data, cfg);
  CHECK(history.mean_iterations[0] == doctest::Approx(4.0));
  CHECK(std::isfinite(history.mean_loss[0]));
}
