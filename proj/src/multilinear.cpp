#include "setmf/multilinear.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "setmf/rng.hpp"

namespace setmf {

void check_probability_vector(const Eigen::VectorXd& psi) {
  check(psi.allFinite(), "probability vector has non-finite entries");
  check((psi.array() >= 0.0).all() && (psi.array() <= 1.0).all(),
        "probability vector must lie in [0,1]");
}

namespace {

void check_enum_size(int n) {
  check(n >= 1 && n <= kEnumerationLimit,
        "ground set of size " + std::to_string(n) +
            " exceeds the enumeration limit of " +
            std::to_string(kEnumerationLimit));
}

constexpr Eigen::Index kPooledChunkRows = 8192;

}  // namespace

Eigen::VectorXd subset_weights(const Eigen::VectorXd& psi) {
  const int n = static_cast<int>(psi.size());
  check_enum_size(n);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(std::uint64_t{1} << n);
  w[0] = 1.0;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t half = std::uint64_t{1} << i;
    for (std::uint64_t mask = 0; mask < half; ++mask) {
      w[mask | half] = w[mask] * psi[i];
      w[mask] *= 1.0 - psi[i];
    }
  }
  return w;
}

double exact_value(const SetOracle& f, int ground_size,
                   const Eigen::VectorXd& psi) {
  check_enum_size(ground_size);
  check(psi.size() == ground_size, "psi length mismatch");
  check_probability_vector(psi);
  const Eigen::VectorXd w = subset_weights(psi);
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < static_cast<std::uint64_t>(w.size());
       ++mask) {
    if (w[mask] != 0.0) total += w[mask] * f(mask);
  }
  return total;
}

Eigen::VectorXd exact_grad(const SetOracle& f, int ground_size,
                           const Eigen::VectorXd& psi) {
  check_enum_size(ground_size);
  check(psi.size() == ground_size, "psi length mismatch");
  check_probability_vector(psi);
  Eigen::VectorXd grad(ground_size);
  for (int i = 0; i < ground_size; ++i) {
    Eigen::VectorXd pinned = psi;
    pinned[i] = 0.0;
    const Eigen::VectorXd w = subset_weights(pinned);
    const std::uint64_t bit = std::uint64_t{1} << i;
    double g = 0.0;
    for (std::uint64_t mask = 0; mask < static_cast<std::uint64_t>(w.size());
         ++mask) {
      if ((mask & bit) == 0 && w[mask] != 0.0)
        g += w[mask] * (f(mask | bit) - f(mask));
    }
    grad[i] = g;
  }
  return grad;
}

Eigen::MatrixXd exact_hessian(const SetOracle& f, int ground_size,
                              const Eigen::VectorXd& psi) {
  check_enum_size(ground_size);
  check(psi.size() == ground_size, "psi length mismatch");
  check_probability_vector(psi);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(ground_size, ground_size);
  for (int i = 0; i < ground_size; ++i) {
    for (int j = i + 1; j < ground_size; ++j) {
      Eigen::VectorXd pinned = psi;
      pinned[i] = 0.0;
      pinned[j] = 0.0;
      const Eigen::VectorXd w = subset_weights(pinned);
      const std::uint64_t bi = std::uint64_t{1} << i;
      const std::uint64_t bj = std::uint64_t{1} << j;
      double h = 0.0;
      for (std::uint64_t mask = 0; mask < static_cast<std::uint64_t>(w.size());
           ++mask) {
        if ((mask & (bi | bj)) == 0 && w[mask] != 0.0)
          h += w[mask] * (f(mask | bi | bj) - f(mask | bi) - f(mask | bj) +
                          f(mask));
      }
      hess(i, j) = h;
      hess(j, i) = h;
    }
  }
  return hess;
}

Eigen::VectorXd enumerate_values(const SetFunctionModel& model,
                                 const Tensor& features) {
  const int n = static_cast<int>(features.rows());
  check_enum_size(n);
  const Eigen::MatrixXd emb = item_embeddings(model, features);
  const std::uint64_t total = std::uint64_t{1} << n;
  Eigen::VectorXd values(total);
  for (std::uint64_t at = 0; at < total; at += kPooledChunkRows) {
    const Eigen::Index len =
        static_cast<Eigen::Index>(std::min<std::uint64_t>(
            kPooledChunkRows, total - at));
    RowMatrixXd masks = RowMatrixXd::Zero(len, n);
    for (Eigen::Index r = 0; r < len; ++r) {
      const std::uint64_t mask = at + static_cast<std::uint64_t>(r);
      for (int i = 0; i < n; ++i)
        if (mask & (std::uint64_t{1} << i)) masks(r, i) = 1.0;
    }
    values.segment(static_cast<Eigen::Index>(at), len) =
        eval_masks_cached(model, emb, masks);
  }
  return values;
}

ScaledGradient scale_gradient(const Eigen::MatrixXd& grad_batch,
                              const ScalingConfig& cfg,
                              Eigen::Index ground_set_size) {
  ScaledGradient out;
  out.grad = grad_batch;
  switch (cfg.mode) {
    case ScalingConfig::Mode::kNone:
      return out;
    case ScalingConfig::Mode::kConstant:
      check(cfg.constant > 0.0, "constant scaling requires c > 0");
      out.q = cfg.constant;
      break;
    case ScalingConfig::Mode::kFrobenius:
      out.q = grad_batch.norm();
      if (out.q > 0.0) out.norm_gradient = grad_batch / out.q;
      break;
    case ScalingConfig::Mode::kNuclear: {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(
          grad_batch, Eigen::ComputeThinU | Eigen::ComputeThinV);
      out.q = svd.singularValues().sum();
      if (out.q > 0.0)
        out.norm_gradient = svd.matrixU() * svd.matrixV().transpose();
      break;
    }
  }
  if (out.q == 0.0) {
    out.zero_gradient = true;
    return out;
  }
  out.grad *= 2.0 / (static_cast<double>(ground_set_size) * out.q);
  return out;
}

namespace {

// Shared layout for the per-coordinate mask pairs: for coordinate j and
// sample l, row 2*(j*m + l) is the subset with j pinned out and the next
// row is the same subset with j added.
class MonteCarloEstimator final : public GradEstimator {
 public:
  MonteCarloEstimator(const SetFunctionModel& model, Tensor features,
                      const EstimatorConfig& cfg, std::uint64_t step_key)
      : model_(model),
        features_(std::move(features)),
        m_(cfg.samples),
        n_(features_.rows()) {
    check(m_ >= 1, "estimator needs at least one sample");
    const std::uint64_t base = rng::derive(cfg.seed, 0x6d63u, step_key);
    uniforms_.resize(m_, n_);
    for (int l = 0; l < m_; ++l) {
      const bool mirror = cfg.antithetic && (l % 2 == 1);
      const int src = mirror ? l - 1 : l;
      for (Eigen::Index i = 0; i < n_; ++i) {
        const double u = rng::uniform01(rng::derive(base, src, i));
        uniforms_(l, i) = mirror ? 1.0 - u : u;
      }
    }
    embeddings_ = item_embeddings(model_, features_);
  }

  Eigen::Index ground_size() const override { return n_; }

  Eigen::VectorXd grad(const Eigen::VectorXd& psi) const override {
    check(psi.size() == n_, "psi length mismatch");
    const Eigen::MatrixXd bits = sample_bits(psi);
    const Eigen::MatrixXd base_pool = bits * embeddings_;  // m x width
    const Eigen::Index width = embeddings_.cols();

    Eigen::MatrixXd pooled(2 * m_ * n_, width);
    for (Eigen::Index j = 0; j < n_; ++j) {
      for (int l = 0; l < m_; ++l) {
        const Eigen::Index r = 2 * (j * m_ + l);
        pooled.row(r) = base_pool.row(l) - bits(l, j) * embeddings_.row(j);
        pooled.row(r + 1) = pooled.row(r) + embeddings_.row(j);
      }
    }
    const Eigen::VectorXd values = eval_pooled(model_, pooled);
    Eigen::VectorXd g(n_);
    for (Eigen::Index j = 0; j < n_; ++j) {
      double acc = 0.0;
      for (int l = 0; l < m_; ++l) {
        const Eigen::Index r = 2 * (j * m_ + l);
        acc += values[r + 1] - values[r];
      }
      g[j] = acc / m_;
    }
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& psi) const override {
    check(psi.size() == n_, "psi length mismatch");
    const Eigen::MatrixXd bits = sample_bits(psi);
    const Eigen::MatrixXd base_pool = bits * embeddings_;
    const Eigen::Index width = embeddings_.cols();

    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n_, n_);
    const Eigen::Index pairs_per_chunk =
        std::max<Eigen::Index>(1, kPooledChunkRows / (4 * m_));

    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    pairs.reserve(n_ * (n_ - 1) / 2);
    for (Eigen::Index i = 0; i < n_; ++i)
      for (Eigen::Index j = i + 1; j < n_; ++j) pairs.emplace_back(i, j);

    Eigen::MatrixXd pooled(4 * m_ * pairs_per_chunk, width);
    for (std::size_t at = 0; at < pairs.size(); at += pairs_per_chunk) {
      const Eigen::Index len = static_cast<Eigen::Index>(
          std::min<std::size_t>(pairs_per_chunk, pairs.size() - at));
      for (Eigen::Index p = 0; p < len; ++p) {
        const auto [i, j] = pairs[at + p];
        for (int l = 0; l < m_; ++l) {
          const Eigen::Index r = 4 * (p * m_ + l);
          pooled.row(r) = base_pool.row(l) -
                          bits(l, i) * embeddings_.row(i) -
                          bits(l, j) * embeddings_.row(j);
          pooled.row(r + 1) = pooled.row(r) + embeddings_.row(i);
          pooled.row(r + 2) = pooled.row(r) + embeddings_.row(j);
          pooled.row(r + 3) = pooled.row(r + 1) + embeddings_.row(j);
        }
      }
      const Eigen::VectorXd values =
          eval_pooled(model_, pooled.topRows(4 * m_ * len));
      for (Eigen::Index p = 0; p < len; ++p) {
        const auto [i, j] = pairs[at + p];
        double acc = 0.0;
        for (int l = 0; l < m_; ++l) {
          const Eigen::Index r = 4 * (p * m_ + l);
          acc += values[r + 3] - values[r + 2] - values[r + 1] + values[r];
        }
        hess(i, j) = acc / m_;
        hess(j, i) = hess(i, j);
      }
    }
    return hess;
  }

  ParamVector theta_grad_weighted(
      const Eigen::VectorXd& psi,
      const Eigen::VectorXd& weights) const override {
    check(psi.size() == n_ && weights.size() == n_,
          "theta_grad_weighted size mismatch");
    const Eigen::MatrixXd bits = sample_bits(psi);
    RowMatrixXd masks(2 * m_ * n_, n_);
    Eigen::VectorXd row_weights(2 * m_ * n_);
    for (Eigen::Index j = 0; j < n_; ++j) {
      for (int l = 0; l < m_; ++l) {
        const Eigen::Index r = 2 * (j * m_ + l);
        masks.row(r) = bits.row(l);
        masks(r, j) = 0.0;
        masks.row(r + 1) = masks.row(r);
        masks(r + 1, j) = 1.0;
        row_weights[r] = -weights[j] / m_;
        row_weights[r + 1] = weights[j] / m_;
      }
    }
    SubsetBatch batch(features_, Tensor::from_matrix(masks));
    return param_grad_weighted(model_, batch, row_weights);
  }

  std::size_t retained_bytes() const override {
    return sizeof(double) * (static_cast<std::size_t>(uniforms_.size()) +
                             static_cast<std::size_t>(embeddings_.size()));
  }

 private:
  Eigen::MatrixXd sample_bits(const Eigen::VectorXd& psi) const {
    Eigen::MatrixXd bits(m_, n_);
    for (int l = 0; l < m_; ++l)
      for (Eigen::Index i = 0; i < n_; ++i)
        bits(l, i) = uniforms_(l, i) < psi[i] ? 1.0 : 0.0;
    return bits;
  }

  const SetFunctionModel& model_;
  Tensor features_;
  int m_;
  Eigen::Index n_;
  Eigen::MatrixXd uniforms_;    // m x |V|, frozen for this estimator
  Eigen::MatrixXd embeddings_;  // |V| x init_width
};

class ExactEstimator final : public GradEstimator {
 public:
  ExactEstimator(const SetFunctionModel& model, Tensor features)
      : model_(model), features_(std::move(features)), n_(features_.rows()) {
    check_enum_size(static_cast<int>(n_));
    table_ = enumerate_values(model_, features_);
  }

  Eigen::Index ground_size() const override { return n_; }

  Eigen::VectorXd grad(const Eigen::VectorXd& psi) const override {
    return exact_grad(oracle(), static_cast<int>(n_), psi);
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& psi) const override {
    return exact_hessian(oracle(), static_cast<int>(n_), psi);
  }

  ParamVector theta_grad_weighted(
      const Eigen::VectorXd& psi,
      const Eigen::VectorXd& weights) const override {
    check(psi.size() == n_ && weights.size() == n_,
          "theta_grad_weighted size mismatch");
    const std::uint64_t total = std::uint64_t{1} << n_;
    Eigen::VectorXd mask_weights = Eigen::VectorXd::Zero(total);
    for (Eigen::Index j = 0; j < n_; ++j) {
      Eigen::VectorXd pinned = psi;
      pinned[j] = 0.0;
      const Eigen::VectorXd w = subset_weights(pinned);
      const std::uint64_t bit = std::uint64_t{1} << j;
      for (std::uint64_t mask = 0; mask < total; ++mask) {
        if ((mask & bit) != 0 || w[mask] == 0.0) continue;
        mask_weights[mask | bit] += weights[j] * w[mask];
        mask_weights[mask] -= weights[j] * w[mask];
      }
    }
    ParamVector grads = ParamVector::zeros_like(model_.params);
    for (std::uint64_t at = 0; at < total; at += kPooledChunkRows) {
      const Eigen::Index len = static_cast<Eigen::Index>(
          std::min<std::uint64_t>(kPooledChunkRows, total - at));
      RowMatrixXd masks = RowMatrixXd::Zero(len, n_);
      for (Eigen::Index r = 0; r < len; ++r) {
        const std::uint64_t mask = at + static_cast<std::uint64_t>(r);
        for (Eigen::Index i = 0; i < n_; ++i)
          if (mask & (std::uint64_t{1} << i)) masks(r, i) = 1.0;
      }
      const Tensor inputs[2] = {features_, Tensor::from_matrix(masks)};
      Tensor cot({len, 1},
                 mask_weights.segment(static_cast<Eigen::Index>(at), len));
      grads.axpy(1.0, param_vjp(model_.record, model_.params, inputs, cot));
    }
    return grads;
  }

  std::size_t retained_bytes() const override {
    return sizeof(double) * static_cast<std::size_t>(table_.size());
  }

 private:
  SetOracle oracle() const {
    return [this](std::uint64_t mask) { return table_[mask]; };
  }

  const SetFunctionModel& model_;
  Tensor features_;
  Eigen::Index n_;
  Eigen::VectorXd table_;
};

}  // namespace

std::unique_ptr<GradEstimator> make_estimator(const SetFunctionModel& model,
                                              const Tensor& features,
                                              const EstimatorConfig& cfg,
                                              std::uint64_t step_key) {
  if (cfg.exact)
    return std::make_unique<ExactEstimator>(model, features);
  return std::make_unique<MonteCarloEstimator>(model, features, cfg, step_key);
}

Eigen::VectorXd mc_grad(const SetFunctionModel& model, const Tensor& features,
                        const Eigen::VectorXd& psi,
                        const EstimatorConfig& cfg) {
  check_probability_vector(psi);
  return MonteCarloEstimator(model, features, cfg, 0).grad(psi);
}

Eigen::MatrixXd mc_hessian(const SetFunctionModel& model,
                           const Tensor& features, const Eigen::VectorXd& psi,
                           const EstimatorConfig& cfg) {
  check_probability_vector(psi);
  return MonteCarloEstimator(model, features, cfg, 0).hessian(psi);
}

}  // namespace setmf
