#pragma once

#include <cstdint>
#include <string>

#include "setmf/diffcore.hpp"
#include "setmf/tensor.hpp"

// Permutation-invariant set utility F(S, V): per-item init layer, sum
// pooling over the masked items, fully connected head ending in a scalar.
namespace setmf {

struct Arch {
  Eigen::Index feature_dim = 2;
  Eigen::Index init_width = 256;
  Eigen::Index hidden_width = 500;
  int depth = 3;  // FC layers in the head, 2 or 3

  bool operator==(const Arch&) const = default;
};

// features: |V| x d_f item matrix; masks: one 0/1 row per evaluated subset.
struct SubsetBatch {
  Tensor features;
  Tensor masks;

  SubsetBatch(Tensor features_in, Tensor masks_in);
  Eigen::Index ground_size() const { return features.rows(); }
  Eigen::Index n_subsets() const { return masks.rows(); }
};

struct SetFunctionModel {
  Arch arch;
  ParamVector params;
  ComputationRecord record{2};       // (features, masks) -> n x 1
  ComputationRecord phi_record{1};   // features -> |V| x init_width
  ComputationRecord head_record{1};  // pooled -> n x 1
};

// Symmetric uniform fan-in init, deterministic per seed.
SetFunctionModel model_init(const Arch& arch, std::uint64_t seed);

// F for each masked subset. Masked-out rows contribute nothing to the pool.
Eigen::VectorXd eval_sets(const SetFunctionModel& model,
                          const SubsetBatch& batch);

// grad_theta of sum_k weights[k] * F(S_k, V).
ParamVector param_grad_weighted(const SetFunctionModel& model,
                                const SubsetBatch& batch,
                                const Eigen::VectorXd& weights);

// Cached fast path: the per-item embeddings depend only on theta and the
// features, so solvers reuse them across mask batches.
Eigen::MatrixXd item_embeddings(const SetFunctionModel& model,
                                const Tensor& features);
Eigen::VectorXd eval_pooled(const SetFunctionModel& model,
                            const Eigen::MatrixXd& pooled);
Eigen::VectorXd eval_masks_cached(const SetFunctionModel& model,
                                  const Eigen::MatrixXd& embeddings,
                                  const RowMatrixXd& masks);

void save_model(const SetFunctionModel& model, const std::string& path);
SetFunctionModel load_model(const std::string& path);

}  // namespace setmf
