#include "doctest.h"
#include "helpers.hpp"

#include "setmf/fixedpoint.hpp"

using namespace setmf;

TEST_CASE("sigmoid and its derivative") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid_prime(0.0) == doctest::Approx(0.25));
  CHECK(sigmoid_prime(1.3) < 0.25);
  CHECK(sigmoid_prime(-2.1) < 0.25);
  CHECK(sigmoid(-3.7) == doctest::Approx(1.0 - sigmoid(3.7)).epsilon(1e-15));
  // Extreme arguments stay finite and inside (0,1) bounds.
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
}

TEST_CASE("residual of the trivial map") {
  const GradFn zero = [](const Eigen::VectorXd& psi) {
    return Eigen::VectorXd::Zero(psi.size()).eval();
  };
  CHECK(residual(Eigen::VectorXd::Constant(4, 0.5), zero) == 0.0);
  CHECK(residual(Eigen::VectorXd::Zero(4), zero) == doctest::Approx(0.5));
}

TEST_CASE("solve_fixed_point on constant-gradient maps") {
  SolverConfig cfg;
  cfg.tolerance = 1e-10;

  const GradFn zero = [](const Eigen::VectorXd& psi) {
    return Eigen::VectorXd::Zero(psi.size()).eval();
  };
  const SolveReport a =
      solve_fixed_point(zero, Eigen::VectorXd::Zero(3), cfg);
  CHECK(a.converged);
  CHECK(a.iterations == 1);
  CHECK((a.psi.array() == 0.5).all());

  Eigen::VectorXd w(3);
  w << 1.0, -2.0, 0.3;
  const GradFn constant = [&](const Eigen::VectorXd&) { return w; };
  const SolveReport b =
      solve_fixed_point(constant, Eigen::VectorXd::Constant(3, 0.2), cfg);
  CHECK(b.converged);
  CHECK(b.iterations == 1);
  CHECK((b.psi - sigmoid(w)).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK(b.residual <= cfg.tolerance);
}

TEST_CASE("two random starts agree under contraction") {
  SetFunctionModel model = model_init(testing::small_arch(), 61);
  const Eigen::MatrixXd feats = testing::random_features(6, 2, 62);
  const Tensor tf = Tensor::from_matrix(feats);
  const Eigen::VectorXd table = enumerate_values(model, tf);
  const SetOracle oracle = [&](std::uint64_t m) { return table[m]; };

  ScalingConfig sc;
  sc.mode = ScalingConfig::Mode::kConstant;
  sc.constant = 4.0 * std::max(table.cwiseAbs().maxCoeff(), 1e-9);
  const double scale = 2.0 / (6 * sc.constant);
  const GradFn fn = [&](const Eigen::VectorXd& psi) {
    return Eigen::VectorXd(scale * exact_grad(oracle, 6, psi));
  };

  SolverConfig cfg;
  cfg.tolerance = 1e-9;
  cfg.max_iterations = 300;
  rng::Stream gen(63);
  Eigen::VectorXd s1(6), s2(6);
  for (int i = 0; i < 6; ++i) {
    s1[i] = gen.uniform();
    s2[i] = gen.uniform();
  }
  const SolveReport r1 = solve_fixed_point(fn, s1, cfg);
  const SolveReport r2 = solve_fixed_point(fn, s2, cfg);
  REQUIRE(r1.converged);
  REQUIRE(r2.converged);
  CHECK((r1.psi - r2.psi).lpNorm<Eigen::Infinity>() <= 10 * cfg.tolerance);
}

TEST_CASE("anderson acceleration converges and clips to the box") {
  SetFunctionModel model = model_init(testing::small_arch(), 71);
  const Eigen::MatrixXd feats = testing::random_features(5, 2, 72);
  const Tensor tf = Tensor::from_matrix(feats);
  const Eigen::VectorXd table = enumerate_values(model, tf);
  const SetOracle oracle = [&](std::uint64_t m) { return table[m]; };
  ScalingConfig sc;
  sc.mode = ScalingConfig::Mode::kConstant;
  sc.constant = 4.0 * std::max(table.cwiseAbs().maxCoeff(), 1e-9);
  const double scale = 2.0 / (5 * sc.constant);

  double violation = 0.0;
  const GradFn fn = [&](const Eigen::VectorXd& psi) {
    violation = std::max({violation, -psi.minCoeff(), psi.maxCoeff() - 1.0});
    return Eigen::VectorXd(scale * exact_grad(oracle, 5, psi));
  };
  SolverConfig cfg;
  cfg.method = SolverConfig::Method::kAnderson;
  cfg.tolerance = 1e-10;
  cfg.max_iterations = 100;
  const SolveReport rep =
      solve_fixed_point(fn, Eigen::VectorXd::Constant(5, 0.1), cfg);
  CHECK(rep.converged);
  CHECK(rep.residual <= cfg.tolerance);
  CHECK(violation <= 0.0);
}

TEST_CASE("contraction_check on closed-form instances") {
  std::vector<Eigen::VectorXd> psi_samples;
  rng::Stream gen(81);
  for (int s = 0; s < 8; ++s) {
    Eigen::VectorXd p(2);
    p << gen.uniform(), gen.uniform();
    psi_samples.push_back(p);
  }
  ScalingConfig none;

  SUBCASE("identically zero utility") {
    Eigen::VectorXd values = Eigen::VectorXd::Zero(2);
    Eigen::MatrixXd feats;
    const SetFunctionModel model = testing::modular_model(values, &feats);
    const ContractionReport rep = contraction_check(
        model, Tensor::from_matrix(feats), psi_samples, none);
    CHECK(rep.sup_abs_value <= 1e-12);
    CHECK(rep.bound <= 1e-12);
    CHECK(rep.satisfied);
  }
  SUBCASE("constant utility 1 on two items") {
    Eigen::MatrixXd feats;
    SetFunctionModel model =
        testing::modular_model(Eigen::VectorXd::Zero(2), &feats);
    model.params.at("out_b").flat()[0] += 1.0;  // F == 1 everywhere
    const ContractionReport rep = contraction_check(
        model, Tensor::from_matrix(feats), psi_samples, none);
    CHECK(rep.sup_abs_value == doctest::Approx(1.0));
    CHECK(rep.bound == doctest::Approx(2.0));
    CHECK_FALSE(rep.satisfied);
  }
  SUBCASE("modular weights 0.1") {
    Eigen::VectorXd values(2);
    values << 0.1, 0.1;
    Eigen::MatrixXd feats;
    const SetFunctionModel model = testing::modular_model(values, &feats);
    const ContractionReport rep = contraction_check(
        model, Tensor::from_matrix(feats), psi_samples, none);
    CHECK(rep.sup_abs_value == doctest::Approx(0.2).epsilon(1e-10));
    CHECK(rep.bound == doctest::Approx(0.4).epsilon(1e-10));
    CHECK(rep.satisfied);
  }
}

TEST_CASE("iteration_bound values and monotonicity") {
  CHECK(iteration_bound(0.5, 1e-6, 100) == doctest::Approx(24.25).epsilon(1e-3));
  CHECK(iteration_bound(0.1, 1e-6, 100) == doctest::Approx(7.05).epsilon(1e-2));
  CHECK(iteration_bound(0.5, 1e-6, 100) > iteration_bound(0.5, 1e-4, 100));
  CHECK(iteration_bound(0.5, 1e-4, 100) > iteration_bound(0.5, 1e-2, 100));
  CHECK_THROWS_AS(iteration_bound(1.2, 1e-6, 10), Error);
  CHECK_THROWS_AS(iteration_bound(0.5, -1.0, 10), Error);
}

TEST_CASE("solve_batch shares the batch norm and reports per-sample state") {
  SetFunctionModel model = model_init(testing::small_arch(), 91);
  const Eigen::MatrixXd f1 = testing::random_features(6, 2, 92);
  const Eigen::MatrixXd f2 = testing::random_features(6, 2, 93);
  EstimatorConfig ec;
  ec.exact = true;
  auto e1 = make_estimator(model, Tensor::from_matrix(f1), ec);
  auto e2 = make_estimator(model, Tensor::from_matrix(f2), ec);

  SolverConfig cfg;
  cfg.tolerance = 1e-8;
  cfg.max_iterations = 200;
  ScalingConfig sc;
  sc.mode = ScalingConfig::Mode::kFrobenius;

  const Eigen::MatrixXd psi0 = Eigen::MatrixXd::Constant(2, 6, 0.5);
  const BatchSolveResult a =
      solve_batch({e1.get(), e2.get()}, psi0, cfg, sc);
  CHECK(a.converged[0]);
  CHECK(a.converged[1]);
  CHECK(a.residuals[0] <= cfg.tolerance);
  CHECK(a.scale > 0.0);

  // Identical call is bit-identical.
  const BatchSolveResult b =
      solve_batch({e1.get(), e2.get()}, psi0, cfg, sc);
  CHECK(a.psi == b.psi);
  CHECK(a.iterations == b.iterations);
}
