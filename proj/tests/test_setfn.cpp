#include <cstdio>
#include <fstream>

#include "doctest.h"

#include "setmf/rng.hpp"
#include "setmf/setfn.hpp"

using namespace setmf;

namespace {

Eigen::MatrixXd random_features(Eigen::Index n, std::uint64_t seed) {
  rng::Stream gen(seed);
  Eigen::MatrixXd f(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    f(i, 0) = gen.normal();
    f(i, 1) = gen.normal();
  }
  return f;
}

}  // namespace

TEST_CASE("model_init builds the published layer sizes") {
  Arch arch;  // defaults: d_f=2, 256, 500, depth 3
  SetFunctionModel model = model_init(arch, 1);
  CHECK(model.params.at("init_w").shape() ==
        std::vector<Eigen::Index>{256, 2});
  CHECK(model.params.at("fc1_w").shape() ==
        std::vector<Eigen::Index>{500, 256});
  CHECK(model.params.at("fc2_w").shape() ==
        std::vector<Eigen::Index>{500, 500});
  CHECK(model.params.at("out_w").shape() == std::vector<Eigen::Index>{1, 500});

  Arch two = arch;
  two.depth = 2;
  SetFunctionModel shallow = model_init(two, 1);
  CHECK(shallow.params.at("out_w").shape() ==
        std::vector<Eigen::Index>{1, 500});
  CHECK_FALSE(shallow.params.has("fc2_w"));

  Arch bad = arch;
  bad.depth = 4;
  CHECK_THROWS_AS(model_init(bad, 1), Error);
}

TEST_CASE("model_init is deterministic per seed") {
  Arch arch;
  arch.init_width = 16;
  arch.hidden_width = 16;
  arch.depth = 2;
  const SetFunctionModel a = model_init(arch, 42);
  const SetFunctionModel b = model_init(arch, 42);
  const SetFunctionModel c = model_init(arch, 43);
  CHECK(a.params.flatten() == b.params.flatten());
  CHECK(a.params.flatten() != c.params.flatten());
}

TEST_CASE("eval_sets: permutation invariance and pooling semantics") {
  Arch arch;
  arch.init_width = 16;
  arch.hidden_width = 16;
  SetFunctionModel model = model_init(arch, 7);
  const Eigen::Index n = 8;
  const Eigen::MatrixXd feats = random_features(n, 8);
  rng::Stream gen(9);
  RowMatrixXd masks(3, n);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < n; ++c)
      masks(r, c) = gen.uniform() < 0.5 ? 1.0 : 0.0;

  const Eigen::VectorXd base = eval_sets(
      model, SubsetBatch(Tensor::from_matrix(feats), Tensor::from_matrix(masks)));

  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Eigen::Index> perm(n);
    for (Eigen::Index i = 0; i < n; ++i) perm[i] = i;
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[gen.below(i + 1)]);
    Eigen::MatrixXd pf(n, 2);
    RowMatrixXd pm(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      pf.row(perm[i]) = feats.row(i);
      pm.col(perm[i]) = masks.col(i);
    }
    const Eigen::VectorXd permuted = eval_sets(
        model, SubsetBatch(Tensor::from_matrix(pf), Tensor::from_matrix(pm)));
    CHECK((permuted - base).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("all-zero parameters map every subset to the same constant") {
  Arch arch;
  arch.init_width = 8;
  arch.hidden_width = 8;
  arch.depth = 2;
  SetFunctionModel model = model_init(arch, 3);
  model.params.unflatten(Eigen::VectorXd::Zero(model.params.total_count()));
  const Eigen::MatrixXd feats = random_features(5, 4);
  RowMatrixXd masks(3, 5);
  masks << 1, 1, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0;  // includes empty mask
  const Eigen::VectorXd out = eval_sets(
      model, SubsetBatch(Tensor::from_matrix(feats), Tensor::from_matrix(masks)));
  CHECK(out[0] == out[1]);
  CHECK(out[1] == out[2]);
  CHECK(std::isfinite(out[2]));
}

TEST_CASE("empty mask evaluates the head at the zero pooled vector") {
  Arch arch;
  arch.init_width = 8;
  arch.hidden_width = 8;
  arch.depth = 2;
  SetFunctionModel model = model_init(arch, 5);
  const Eigen::MatrixXd feats = random_features(4, 6);
  RowMatrixXd empty = RowMatrixXd::Zero(1, 4);
  const Eigen::VectorXd a = eval_sets(
      model, SubsetBatch(Tensor::from_matrix(feats), Tensor::from_matrix(empty)));
  const Eigen::VectorXd b =
      eval_pooled(model, Eigen::MatrixXd::Zero(1, arch.init_width));
  CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-15));
  CHECK(std::isfinite(a[0]));
}

TEST_CASE("cached mask evaluation equals the full record") {
  Arch arch;
  arch.init_width = 16;
  arch.hidden_width = 16;
  SetFunctionModel model = model_init(arch, 11);
  const Eigen::MatrixXd feats = random_features(7, 12);
  rng::Stream gen(13);
  RowMatrixXd masks(9, 7);
  for (Eigen::Index r = 0; r < 9; ++r)
    for (Eigen::Index c = 0; c < 7; ++c)
      masks(r, c) = gen.uniform() < 0.5 ? 1.0 : 0.0;
  const Tensor tf = Tensor::from_matrix(feats);
  const Eigen::VectorXd full =
      eval_sets(model, SubsetBatch(tf, Tensor::from_matrix(masks)));
  const Eigen::VectorXd cached =
      eval_masks_cached(model, item_embeddings(model, tf), masks);
  CHECK((full - cached).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("param_grad_weighted basics") {
  Arch arch;
  arch.init_width = 8;
  arch.hidden_width = 8;
  arch.depth = 2;
  SetFunctionModel model = model_init(arch, 15);
  const Eigen::MatrixXd feats = random_features(5, 16);
  RowMatrixXd masks(2, 5);
  masks << 1, 0, 1, 0, 1, 0, 1, 1, 0, 0;
  SubsetBatch batch(Tensor::from_matrix(feats), Tensor::from_matrix(masks));

  // Zero weights give a zero gradient.
  CHECK(param_grad_weighted(model, batch, Eigen::Vector2d(0, 0))
            .flatten()
            .norm() == 0.0);

  // A single unit weight reproduces the plain VJP of that evaluation.
  Eigen::VectorXd w(2);
  w << 1.0, 0.0;
  const Tensor inputs[2] = {batch.features, batch.masks};
  Eigen::VectorXd cot(2);
  cot << 1.0, 0.0;
  const Eigen::VectorXd a = param_grad_weighted(model, batch, w).flatten();
  const Eigen::VectorXd b =
      param_vjp(model.record, model.params, inputs, Tensor({2, 1}, cot))
          .flatten();
  CHECK((a - b).lpNorm<Eigen::Infinity>() == 0.0);

  // Random weights match finite differences of the weighted sum.
  Eigen::VectorXd rw(2);
  rw << 0.8, -0.6;
  const Eigen::VectorXd grad =
      param_grad_weighted(model, batch, rw).flatten();
  const Eigen::VectorXd fd = finite_diff_grad(
      [&](const Eigen::VectorXd& theta) {
        SetFunctionModel m = model;
        m.params.unflatten(theta);
        return rw.dot(eval_sets(m, batch));
      },
      model.params.flatten(), 1e-5);
  CHECK((grad - fd).norm() / fd.norm() <= 1e-6);
}

TEST_CASE("model save/load roundtrip and corruption reporting") {
  Arch arch;
  arch.init_width = 8;
  arch.hidden_width = 8;
  arch.depth = 2;
  SetFunctionModel model = model_init(arch, 17);
  const std::string path = "/tmp/setmf_test_model.json";
  save_model(model, path);
  const SetFunctionModel loaded = load_model(path);
  CHECK(loaded.arch == model.arch);
  CHECK(loaded.params.flatten() == model.params.flatten());

  // Corrupt one segment's shape and expect the segment to be named.
  {
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    const std::string needle = "\"name\":\"fc1_w\",\"shape\":[8,8]";
    const auto at = text.find(needle);
    REQUIRE(at != std::string::npos);
    text.replace(at, needle.size(), "\"name\":\"fc1_w\",\"shape\":[8,9]");
    std::ofstream out(path);
    out << text;
  }
  try {
    (void)load_model(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("fc1_w") != std::string::npos);
  }
  std::remove(path.c_str());
}
