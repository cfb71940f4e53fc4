#include "doctest.h"
#include "helpers.hpp"

#include <Eigen/Dense>

#include "setmf/implicit.hpp"
#include "setmf/train.hpp"

using namespace setmf;

namespace {

ImplicitWorkspace random_workspace(int n, std::uint64_t seed,
                                   double h_scale = 0.3) {
  rng::Stream gen(seed);
  ImplicitWorkspace ws;
  ws.psi_star = Eigen::VectorXd::Constant(n, 0.5);
  ws.grad = Eigen::VectorXd::Zero(n);
  ws.sigma_prime = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) ws.sigma_prime[i] = 0.05 + 0.2 * gen.uniform();
  ws.hessian = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      ws.hessian(i, j) = h_scale * gen.normal();
      ws.hessian(j, i) = ws.hessian(i, j);
    }
  return ws;
}

}  // namespace

TEST_CASE("a_matvec special cases and dense agreement") {
  ImplicitWorkspace zero_h = random_workspace(4, 11);
  zero_h.hessian.setZero();
  Eigen::VectorXd x(4);
  x << 1, -2, 3, 0.5;
  CHECK(a_matvec(zero_h, x) == x);

  ImplicitWorkspace one = random_workspace(1, 12);
  Eigen::VectorXd x1(1);
  x1 << -7.5;
  CHECK(one.hessian(0, 0) == 0.0);
  CHECK(a_matvec(one, x1) == x1);

  ImplicitWorkspace ws = random_workspace(5, 13);
  Eigen::VectorXd y(5);
  y << 0.3, -1.1, 2.2, 0.0, -0.4;
  const Eigen::MatrixXd dense =
      Eigen::MatrixXd::Identity(5, 5) -
      ws.sigma_prime.asDiagonal() * ws.hessian;
  CHECK((a_matvec(ws, y) - dense * y).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((at_matvec(ws, y) - dense.transpose() * y).lpNorm<Eigen::Infinity>() <=
        1e-12);
}

TEST_CASE("linear_solve on simple operators") {
  for (auto method : {LinearSolveConfig::Method::kNormalCg,
                      LinearSolveConfig::Method::kGmres}) {
    LinearSolveConfig cfg;
    cfg.method = method;
    cfg.tolerance = 1e-12;

    LinearOperator identity;
    identity.size = 3;
    identity.apply = [](const Eigen::VectorXd& x) { return x; };
    identity.apply_transpose = identity.apply;
    Eigen::VectorXd b(3);
    b << 1, 2, 3;
    const LinearSolveReport r1 = linear_solve(identity, b, cfg);
    CHECK(r1.converged);
    CHECK((r1.x - b).lpNorm<Eigen::Infinity>() <= 1e-10);

    LinearOperator diag;
    diag.size = 2;
    diag.apply = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd y(2);
      y << 2 * x[0], 4 * x[1];
      return y;
    };
    diag.apply_transpose = diag.apply;
    Eigen::VectorXd b2(2);
    b2 << 2, 4;
    const LinearSolveReport r2 = linear_solve(diag, b2, cfg);
    CHECK(r2.converged);
    CHECK(r2.x[0] == doctest::Approx(1.0));
    CHECK(r2.x[1] == doctest::Approx(1.0));
  }
}

TEST_CASE("linear_solve on a random diagonally dominant system") {
  rng::Stream gen(21);
  Eigen::MatrixXd a(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) a(i, j) = 0.2 * gen.normal();
  a.diagonal().array() += 4.0;
  Eigen::VectorXd b(8);
  for (int i = 0; i < 8; ++i) b[i] = gen.normal();

  LinearOperator op;
  op.size = 8;
  op.apply = [&](const Eigen::VectorXd& x) { return (a * x).eval(); };
  op.apply_transpose = [&](const Eigen::VectorXd& x) {
    return (a.transpose() * x).eval();
  };
  const Eigen::VectorXd reference = a.fullPivLu().solve(b);

  for (auto method : {LinearSolveConfig::Method::kNormalCg,
                      LinearSolveConfig::Method::kGmres}) {
    LinearSolveConfig cfg;
    cfg.method = method;
    cfg.tolerance = 1e-10;
    const LinearSolveReport rep = linear_solve(op, b, cfg);
    CHECK(rep.converged);
    CHECK((a * rep.x - b).norm() <= 1e-8);
    CHECK((rep.x - reference).lpNorm<Eigen::Infinity>() <= 1e-7);
  }
}

TEST_CASE("adjoint fallback survives a rank-deficient operator") {
  ImplicitWorkspace ws = random_workspace(3, 31);
  // Make A singular: sigma' H with eigenvalue exactly 1.
  ws.hessian.setZero();
  ws.hessian(0, 1) = ws.hessian(1, 0) = 1.0 / 0.25;
  ws.sigma_prime.setConstant(0.25);
  Eigen::VectorXd v(3);
  v << 1, 1, 1;
  LinearSolveConfig cfg;
  cfg.max_iterations = 50;
  std::string diag;
  const Eigen::VectorXd u = solve_adjoint(ws, v, cfg, &diag);
  CHECK(u.allFinite());
  CHECK(!diag.empty());
}

TEST_CASE("implicit_vjp: zero cotangent, modular finite differences") {
  Eigen::VectorXd values(4);
  values << 0.3, -0.2, 0.4, 0.1;
  Eigen::MatrixXd feats;
  const SetFunctionModel model = testing::modular_model(values, &feats);
  const Tensor tf = Tensor::from_matrix(feats);
  EstimatorConfig ec;
  ec.exact = true;
  auto est = make_estimator(model, tf, ec);

  // Modular: gradient map constant in psi, H = 0, converges in one step.
  SolverConfig scfg;
  scfg.tolerance = 1e-12;
  const GradFn fn = [&](const Eigen::VectorXd& psi) { return est->grad(psi); };
  const SolveReport rep =
      solve_fixed_point(fn, Eigen::VectorXd::Constant(4, 0.5), scfg);
  REQUIRE(rep.converged);

  ImplicitWorkspace ws = build_workspace(*est, rep.psi, est->grad(rep.psi), 1.0);
  CHECK(ws.hessian.cwiseAbs().maxCoeff() <= 1e-12);
  LinearSolveConfig lc;

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  CHECK(implicit_vjp(zero, ws, *est, lc).flatten().norm() == 0.0);

  rng::Stream gen(41);
  Eigen::VectorXd v(4);
  for (int i = 0; i < 4; ++i) v[i] = gen.normal();
  const Eigen::VectorXd grad = implicit_vjp(v, ws, *est, lc).flatten();
  const Eigen::VectorXd fd = finite_diff_grad(
      [&](const Eigen::VectorXd& theta) {
        SetFunctionModel m = model;
        m.params.unflatten(theta);
        EstimatorConfig c;
        c.exact = true;
        auto e = make_estimator(m, tf, c);
        const GradFn f = [&](const Eigen::VectorXd& psi) {
          return e->grad(psi);
        };
        return v.dot(
            solve_fixed_point(f, Eigen::VectorXd::Constant(4, 0.5), scfg).psi);
      },
      model.params.flatten(), 1e-5);
  CHECK((grad - fd).norm() / std::max(fd.norm(), 1e-12) <= 1e-4);
}

TEST_CASE("unrolled_vjp: zero cotangent and K=1 chain rule") {
  SetFunctionModel model = model_init(testing::small_arch(), 51);
  const Eigen::MatrixXd feats = testing::random_features(5, 2, 52);
  const Tensor tf = Tensor::from_matrix(feats);
  EstimatorConfig ec;
  ec.samples = 2;
  ec.seed = 53;
  auto est = make_estimator(model, tf, ec);
  const Eigen::VectorXd psi0 = Eigen::VectorXd::Constant(5, 0.5);

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(5);
  CHECK(unrolled_vjp(zero, psi0, 3, *est).grad.flatten().norm() == 0.0);

  rng::Stream gen(54);
  Eigen::VectorXd v(5);
  for (int i = 0; i < 5; ++i) v[i] = gen.normal();
  const Eigen::VectorXd grad =
      unrolled_vjp(v, psi0, 1, *est).grad.flatten();
  const Eigen::VectorXd fd = finite_diff_grad(
      [&](const Eigen::VectorXd& theta) {
        SetFunctionModel m = model;
        m.params.unflatten(theta);
        auto e = make_estimator(m, tf, ec);  // same seed: frozen samples
        return v.dot(sigmoid(Eigen::VectorXd(e->grad(psi0))));
      },
      model.params.flatten(), 1e-5);
  CHECK((grad - fd).norm() / fd.norm() <= 1e-4);
}

TEST_CASE("unrolled retention grows with K and honors the cap") {
  SetFunctionModel model = model_init(testing::small_arch(), 61);
  const Eigen::MatrixXd feats = testing::random_features(6, 2, 62);
  const Tensor tf = Tensor::from_matrix(feats);
  EstimatorConfig ec;
  ec.samples = 1;
  ec.seed = 63;
  auto est = make_estimator(model, tf, ec);
  const Eigen::VectorXd psi0 = Eigen::VectorXd::Constant(6, 0.5);
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(6);

  const std::size_t r5 = unrolled_vjp(v, psi0, 5, *est).retained_bytes;
  const std::size_t r10 = unrolled_vjp(v, psi0, 10, *est).retained_bytes;
  const std::size_t r20 = unrolled_vjp(v, psi0, 20, *est).retained_bytes;
  CHECK(r5 < r10);
  CHECK(r10 < r20);

  CHECK_THROWS_AS(unrolled_vjp(v, psi0, 20, *est, {}, r10), Error);
}

TEST_CASE("implicit workspace retention does not depend on K") {
  SetFunctionModel model = model_init(testing::small_arch(), 71);
  const Eigen::MatrixXd feats = testing::random_features(6, 2, 72);
  const Tensor tf = Tensor::from_matrix(feats);
  EstimatorConfig ec;
  ec.samples = 1;
  ec.seed = 73;
  auto est = make_estimator(model, tf, ec);

  std::vector<std::size_t> bytes;
  for (int k : {5, 20}) {
    SolverConfig cfg;
    cfg.tolerance = 1e-300;
    cfg.max_iterations = k;
    Eigen::VectorXd psi = Eigen::VectorXd::Constant(6, 0.5);
    for (int it = 0; it < k; ++it) psi = sigmoid(Eigen::VectorXd(est->grad(psi)));
    ImplicitWorkspace ws = build_workspace(*est, psi, est->grad(psi), 1.0);
    bytes.push_back(ws.retained_bytes());
  }
  CHECK(bytes[0] == bytes[1]);
}
