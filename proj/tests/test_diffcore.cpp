#include "doctest.h"

#include "setmf/diffcore.hpp"
#include "setmf/rng.hpp"
#include "setmf/setfn.hpp"

using namespace setmf;

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, Eigen::VectorXd::Zero(3)), Error);
  Eigen::VectorXd bad(2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Tensor({2}, bad), Error);
  const Tensor t = Tensor::from_matrix(Eigen::MatrixXd::Identity(2, 3));
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.flat().size() == 6);
}

TEST_CASE("param vector flatten/unflatten is a bijection") {
  ParamVector p;
  p.add("a", Tensor::from_vector(Eigen::Vector3d(1, 2, 3)));
  p.add("b", Tensor::from_matrix(Eigen::MatrixXd::Constant(2, 2, 4.0)));
  CHECK(p.total_count() == 7);
  Eigen::VectorXd flat = p.flatten();
  flat[5] = 9.5;
  p.unflatten(flat);
  CHECK(p.flatten() == flat);
  CHECK_THROWS_AS(p.add("a", Tensor::from_vector(Eigen::Vector2d(0, 0))),
                  Error);
  CHECK_THROWS_AS(p.unflatten(Eigen::VectorXd::Zero(6)), Error);
}

TEST_CASE("forward_eval: identity pipelines") {
  // Sum of inputs.
  {
    ComputationRecord r(1);
    r.reduce_sum(r.input_slot(0));
    ParamVector none;
    const Tensor in = Tensor::from_vector(Eigen::Vector3d(1, 2, 3));
    CHECK(forward_eval(r, none, in).scalar_value() == doctest::Approx(6.0));
  }
  // Affine with identity weights, zero bias.
  {
    ComputationRecord r(1);
    r.affine(r.input_slot(0), "w", "b");
    ParamVector p;
    p.add("w", Tensor::from_matrix(Eigen::MatrixXd::Identity(2, 2)));
    p.add("b", Tensor::from_vector(Eigen::Vector2d(0, 0)));
    Eigen::MatrixXd x(1, 2);
    x << 0.5, -0.5;
    const Tensor out = forward_eval(r, p, Tensor::from_matrix(x));
    CHECK(out.flat()[0] == doctest::Approx(0.5));
    CHECK(out.flat()[1] == doctest::Approx(-0.5));
  }
  // ReLU.
  {
    ComputationRecord r(1);
    r.relu(r.input_slot(0));
    ParamVector none;
    const Tensor out =
        forward_eval(r, none, Tensor::from_vector(Eigen::Vector3d(-1, 0, 2)));
    CHECK(out.flat() == Eigen::Vector3d(0, 0, 2));
  }
}

TEST_CASE("forward_eval rejects shape mismatches") {
  ComputationRecord r(1);
  r.affine(r.input_slot(0), "w", "b");
  ParamVector p;
  p.add("w", Tensor::from_matrix(Eigen::MatrixXd::Identity(2, 2)));
  p.add("b", Tensor::from_vector(Eigen::Vector2d(0, 0)));
  Eigen::MatrixXd x(1, 3);
  x << 1, 2, 3;
  CHECK_THROWS_AS(forward_eval(r, p, Tensor::from_matrix(x)), Error);
}

TEST_CASE("param_vjp on scalar programs") {
  // f(theta) = theta * x, x = 2.
  {
    ComputationRecord r(0);
    const int theta = r.param_ref("theta");
    const int x = r.constant(Tensor::from_vector(Eigen::VectorXd::Constant(1, 2.0)));
    r.reduce_sum(r.mul(theta, x));
    ParamVector p;
    p.add("theta", Tensor::from_vector(Eigen::VectorXd::Constant(1, 3.0)));
    const ParamVector g = param_vjp(
        r, p, std::span<const Tensor>{},
        Tensor::from_vector(Eigen::VectorXd::Constant(1, 1.0)));
    CHECK(g.at("theta").flat()[0] == doctest::Approx(2.0));
  }
  // f(theta) = sum theta_i^2 at theta = [1, 2].
  {
    ComputationRecord r(0);
    const int theta = r.param_ref("theta");
    r.reduce_sum(r.mul(theta, theta));
    ParamVector p;
    p.add("theta", Tensor::from_vector(Eigen::Vector2d(1, 2)));
    const ParamVector g = param_vjp(
        r, p, std::span<const Tensor>{},
        Tensor::from_vector(Eigen::VectorXd::Constant(1, 1.0)));
    CHECK(g.at("theta").flat()[0] == doctest::Approx(2.0));
    CHECK(g.at("theta").flat()[1] == doctest::Approx(4.0));
  }
}

TEST_CASE("param_vjp matches central finite differences on a 2-layer net") {
  Arch arch;
  arch.feature_dim = 2;
  arch.init_width = 8;
  arch.hidden_width = 8;
  arch.depth = 2;
  SetFunctionModel model = model_init(arch, 77);

  rng::Stream gen(78);
  Eigen::MatrixXd feats(5, 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) feats(i, j) = gen.normal();
  RowMatrixXd masks(2, 5);
  masks << 1, 0, 1, 1, 0, 0, 1, 0, 1, 1;
  Eigen::VectorXd cot(2);
  cot << 0.7, -1.2;
  const Tensor inputs[2] = {Tensor::from_matrix(feats),
                            Tensor::from_matrix(masks)};

  const Eigen::VectorXd grad =
      param_vjp(model.record, model.params, inputs, Tensor({2, 1}, cot))
          .flatten();
  const Eigen::VectorXd fd = finite_diff_grad(
      [&](const Eigen::VectorXd& theta) {
        SetFunctionModel m = model;
        m.params.unflatten(theta);
        return cot.dot(forward_eval(m.record, m.params, inputs).flat());
      },
      model.params.flatten(), 1e-5);
  const double rel = (grad - fd).norm() / fd.norm();
  CHECK(rel <= 1e-6);
}

TEST_CASE("finite_diff_grad basics") {
  auto square = [](const Eigen::VectorXd& x) { return x[0] * x[0]; };
  Eigen::VectorXd at(1);
  at << 3.0;
  CHECK(finite_diff_grad(square, at, 1e-5)[0] == doctest::Approx(6.0).epsilon(1e-4));

  auto constant = [](const Eigen::VectorXd&) { return 4.2; };
  CHECK(finite_diff_grad(constant, Eigen::Vector3d(1, 2, 3), 1e-5).norm() ==
        0.0);

  auto exp_fn = [](const Eigen::VectorXd& x) { return std::exp(x[0]); };
  Eigen::VectorXd zero(1);
  zero << 0.0;
  CHECK(std::abs(finite_diff_grad(exp_fn, zero, 1e-5)[0] - 1.0) <= 1e-5);

  CHECK_THROWS_AS(finite_diff_grad(square, at, 0.0), Error);
}
