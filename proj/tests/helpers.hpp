#pragma once

#include "setmf/rng.hpp"
#include "setmf/setfn.hpp"

namespace setmf::testing {

// A network that computes F(S) = sum_{i in S} values[i] exactly (up to
// rounding): the single hidden ReLU is kept in its linear region by a bias
// offset that the output layer subtracts again.
inline SetFunctionModel modular_model(const Eigen::VectorXd& values,
                                      Eigen::MatrixXd* features_out) {
  Arch arch;
  arch.feature_dim = 1;
  arch.init_width = 1;
  arch.hidden_width = 1;
  arch.depth = 2;
  SetFunctionModel model = model_init(arch, 0);
  const double offset = 16.0;
  model.params.at("init_w").flat() << 1.0;
  model.params.at("init_b").flat() << 0.0;
  model.params.at("fc1_w").flat() << 1.0;
  model.params.at("fc1_b").flat() << offset;
  model.params.at("out_w").flat() << 1.0;
  model.params.at("out_b").flat() << -offset;
  if (features_out) *features_out = values;
  return model;
}

inline Eigen::MatrixXd random_features(Eigen::Index n, Eigen::Index d,
                                       std::uint64_t seed) {
  rng::Stream gen(seed);
  Eigen::MatrixXd f(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) f(i, j) = gen.normal();
  return f;
}

inline Arch small_arch(int depth = 2, Eigen::Index width = 16) {
  Arch a;
  a.feature_dim = 2;
  a.init_width = width;
  a.hidden_width = width;
  a.depth = depth;
  return a;
}

}  // namespace setmf::testing
