#include "setmf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "setmf/parallel.hpp"
#include "setmf/rng.hpp"

namespace setmf {

namespace {

std::vector<Eigen::Index> top_k(const Eigen::VectorXd& psi, Eigen::Index k) {
  std::vector<Eigen::Index> idx(psi.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (psi[a] != psi[b]) return psi[a] > psi[b];
    return a < b;
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<Eigen::Index> infer_subset(const SetFunctionModel& model,
                                       const Tensor& features, Eigen::Index k,
                                       InferenceMode mode,
                                       const SolverConfig& solver,
                                       const ScalingConfig& scaling,
                                       const EstimatorConfig& estimator) {
  const Eigen::Index n = features.rows();
  check(k >= 1 && k <= n, "invalid subset size k");
  auto est = make_estimator(model, features, estimator);

  Eigen::VectorXd psi = Eigen::VectorXd::Constant(n, 0.5);
  if (mode == InferenceMode::kOneStep) {
    Eigen::MatrixXd row = est->grad(psi).transpose();
    psi = sigmoid(Eigen::VectorXd(scale_gradient(row, scaling, n).grad.row(0)));
  } else {
    std::vector<const GradEstimator*> one{est.get()};
    const BatchSolveResult solved =
        solve_batch(one, psi.transpose(), solver, scaling);
    psi = solved.psi.row(0).transpose();
  }
  return top_k(psi, k);
}

double jaccard(const std::vector<Eigen::Index>& a,
               const std::vector<Eigen::Index>& b) {
  std::vector<Eigen::Index> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<Eigen::Index> inter, uni;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                        std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(),
                 std::back_inserter(uni));
  if (uni.empty()) return 1.0;  // both empty
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

Metrics mean_jc(const SetFunctionModel& model, const Dataset& dataset,
                InferenceMode mode, const SolverConfig& solver,
                const ScalingConfig& scaling,
                const EstimatorConfig& estimator) {
  dataset.validate();
  Metrics metrics;
  metrics.mode = mode == InferenceMode::kOneStep ? "one-step" : "converge";
  metrics.per_sample.assign(dataset.samples.size(), 0.0);
  parallel_for(dataset.samples.size(), [&](std::size_t i) {
    const SetSample& s = dataset.samples[i];
    const auto predicted = infer_subset(
        model, Tensor::from_matrix(s.features),
        static_cast<Eigen::Index>(s.optimal.size()), mode, solver, scaling,
        estimator);
    metrics.per_sample[i] = jaccard(predicted, s.optimal);
  });
  metrics.mean_jc =
      std::accumulate(metrics.per_sample.begin(), metrics.per_sample.end(),
                      0.0) /
      static_cast<double>(metrics.per_sample.size());
  return metrics;
}

BruteForceResult brute_force_oracle(const SetFunctionModel& model,
                                    const Tensor& features) {
  const Eigen::Index n = features.rows();
  check(n <= 15, "brute_force_oracle is limited to |V| <= 15");
  const Eigen::VectorXd values = enumerate_values(model, features);

  BruteForceResult out;
  std::uint64_t best_mask = 0;
  double best = values[0];
  for (std::uint64_t mask = 1;
       mask < static_cast<std::uint64_t>(values.size()); ++mask) {
    if (values[mask] > best) {
      best = values[mask];
      best_mask = mask;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (best_mask & (std::uint64_t{1} << i)) out.argmax.push_back(i);

  const double lse = [&] {
    const double vmax = values.maxCoeff();
    double acc = 0.0;
    for (Eigen::Index m = 0; m < values.size(); ++m)
      acc += std::exp(values[m] - vmax);
    return vmax + std::log(acc);
  }();
  out.probabilities = (values.array() - lse).exp();
  return out;
}

RetentionProfile retention_profile(const Dataset& slice,
                                   const TrainConfig& cfg,
                                   const std::vector<int>& k_list,
                                   int repeats) {
  check(!k_list.empty(), "retention profile needs a nonempty K list");
  check(repeats >= 1, "repeats must be >= 1");
  slice.validate();

  RetentionProfile profile;
  profile.k_values = k_list;

  std::vector<const SetSample*> batch;
  for (const auto& s : slice.samples) batch.push_back(&s);

  auto run_mode = [&](TrainConfig::GradMode mode, int k) {
    TrainConfig step_cfg = cfg;
    step_cfg.grad_mode = mode;
    if (mode == TrainConfig::GradMode::kUnrolled) {
      step_cfg.unroll_iterations = k;
    } else {
      // Force exactly k forward iterations so the x-axis means the same
      // thing for both series.
      step_cfg.solver.max_iterations = k;
      step_cfg.solver.tolerance = 1e-300;
      step_cfg.backward_on_unconverged = true;
    }
    std::vector<std::size_t> bytes;
    for (int r = 0; r < repeats; ++r) {
      SetFunctionModel model =
          model_init(Arch{slice.meta.feature_dim, cfg.arch.init_width,
                          cfg.arch.hidden_width, cfg.arch.depth},
                     rng::derive(cfg.seed, 0x9e01, r));
      OptimizerState state;
      StepStats stats = train_step(model, batch, state, step_cfg,
                                   rng::derive(cfg.seed, 0xbe7c, r),
                                   /*apply_update=*/false);
      bytes.push_back(stats.retained_bytes);
    }
    return bytes;
  };

  auto summarize = [&](RetentionSeries& series,
                       const std::vector<std::size_t>& bytes) {
    series.min_bytes.push_back(*std::min_element(bytes.begin(), bytes.end()));
    series.max_bytes.push_back(*std::max_element(bytes.begin(), bytes.end()));
    series.mean_bytes.push_back(
        std::accumulate(bytes.begin(), bytes.end(), std::size_t{0}) /
        bytes.size());
  };

  for (int k : k_list) {
    check(k >= 1, "K values must be positive");
    summarize(profile.unrolled, run_mode(TrainConfig::GradMode::kUnrolled, k));
    summarize(profile.implicit, run_mode(TrainConfig::GradMode::kImplicit, k));
  }
  return profile;
}

}  // namespace setmf
