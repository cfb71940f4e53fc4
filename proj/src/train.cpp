#include "setmf/train.hpp"

#include <chrono>
#include <cmath>

#include "setmf/parallel.hpp"
#include "setmf/rng.hpp"

namespace setmf {

double mean_field_loss(const Eigen::VectorXd& psi,
                       const std::vector<Eigen::Index>& optimal,
                       double clamp) {
  check(clamp > 0.0 && clamp < 0.1, "clamp must lie in (0, 0.1)");
  check(!optimal.empty(), "loss needs a nonempty optimal subset");
  std::vector<char> in_opt(psi.size(), 0);
  for (Eigen::Index j : optimal) {
    check(j >= 0 && j < psi.size(), "optimal index exceeds mask length");
    in_opt[j] = 1;
  }
  double loss = 0.0;
  for (Eigen::Index j = 0; j < psi.size(); ++j) {
    const double p = std::min(1.0 - clamp, std::max(clamp, psi[j]));
    loss += in_opt[j] ? -std::log(p) : -std::log(1.0 - p);
  }
  return loss;
}

Eigen::VectorXd loss_cotangent(const Eigen::VectorXd& psi,
                               const std::vector<Eigen::Index>& optimal,
                               double clamp) {
  check(clamp > 0.0 && clamp < 0.1, "clamp must lie in (0, 0.1)");
  std::vector<char> in_opt(psi.size(), 0);
  for (Eigen::Index j : optimal) {
    check(j >= 0 && j < psi.size(), "optimal index exceeds mask length");
    in_opt[j] = 1;
  }
  Eigen::VectorXd v(psi.size());
  for (Eigen::Index j = 0; j < psi.size(); ++j) {
    const double p = std::min(1.0 - clamp, std::max(clamp, psi[j]));
    v[j] = in_opt[j] ? -1.0 / p : 1.0 / (1.0 - p);
  }
  return v;
}

double elbo_exact(const SetOracle& f, int ground_size,
                  const Eigen::VectorXd& psi) {
  double entropy = 0.0;
  for (Eigen::Index j = 0; j < psi.size(); ++j) {
    const double p = psi[j];
    if (p > 0.0) entropy -= p * std::log(p);
    if (p < 1.0) entropy -= (1.0 - p) * std::log(1.0 - p);
  }
  return exact_value(f, ground_size, psi) + entropy;
}

void optimizer_step(ParamVector& params, const ParamVector& grad,
                    OptimizerState& state, const OptimizerConfig& cfg) {
  check(cfg.learning_rate >= 0.0, "learning rate must be nonnegative");
  if (cfg.kind == OptimizerConfig::Kind::kSgd) {
    params.axpy(-cfg.learning_rate, grad);
    ++state.step;
    return;
  }
  const Eigen::VectorXd g = grad.flatten();
  Eigen::VectorXd theta = params.flatten();
  check(g.size() == theta.size(), "gradient/parameter size mismatch");
  if (state.first_moment.size() != g.size()) {
    state.first_moment = Eigen::VectorXd::Zero(g.size());
    state.second_moment = Eigen::VectorXd::Zero(g.size());
    state.step = 0;
  }
  ++state.step;
  state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * g;
  state.second_moment = cfg.beta2 * state.second_moment +
                        (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.step);
  const Eigen::VectorXd mhat = state.first_moment / bc1;
  const Eigen::VectorXd vhat = state.second_moment / bc2;
  theta -= cfg.learning_rate *
           (mhat.array() / (vhat.array().sqrt() + cfg.epsilon)).matrix();
  params.unflatten(theta);
}

namespace {

// Order-fixed pairwise reduction so batch averages do not depend on thread
// scheduling.
ParamVector pairwise_sum(std::vector<ParamVector>& grads) {
  check(!grads.empty(), "pairwise_sum over empty list");
  std::size_t width = 1;
  while (width < grads.size()) {
    for (std::size_t i = 0; i + width < grads.size(); i += 2 * width)
      grads[i].axpy(1.0, grads[i + width]);
    width *= 2;
  }
  return std::move(grads[0]);
}

}  // namespace

StepStats train_step(SetFunctionModel& model,
                     const std::vector<const SetSample*>& batch,
                     OptimizerState& state, const TrainConfig& cfg,
                     std::uint64_t step_key, bool apply_update) {
  const std::size_t bs = batch.size();
  check(bs >= 1, "empty batch");
  const Eigen::Index n = batch[0]->features.rows();
  for (const SetSample* s : batch)
    check(s->features.rows() == n, "batch mixes ground set sizes");

  StepStats stats;
  std::vector<std::unique_ptr<GradEstimator>> estimators(bs);
  parallel_for(bs, [&](std::size_t i) {
    estimators[i] = make_estimator(
        model, Tensor::from_matrix(batch[i]->features), cfg.estimator,
        rng::derive(step_key, i));
  });

  std::vector<ParamVector> grads(bs);
  std::vector<char> contributed(bs, 0);

  if (cfg.grad_mode == TrainConfig::GradMode::kImplicit) {
    std::vector<const GradEstimator*> raw(bs);
    for (std::size_t i = 0; i < bs; ++i) raw[i] = estimators[i].get();
    const Eigen::MatrixXd psi0 =
        Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(bs), n, 0.5);
    BatchSolveResult solved = solve_batch(raw, psi0, cfg.solver, cfg.scaling);

    std::vector<std::size_t> retained(bs, 0);
    parallel_for(bs, [&](std::size_t i) {
      const Eigen::VectorXd psi = solved.psi.row(i).transpose();
      if (!solved.converged[i] && !cfg.backward_on_unconverged) return;
      ImplicitWorkspace ws =
          build_workspace(*estimators[i], psi,
                          solved.scaled_grad.row(i).transpose(), solved.scale);
      const Eigen::VectorXd v = loss_cotangent(psi, batch[i]->optimal,
                                               cfg.clamp);
      grads[i] = implicit_vjp(v, ws, *estimators[i], cfg.linear);
      retained[i] = ws.retained_bytes();
      contributed[i] = 1;
    });
    for (std::size_t i = 0; i < bs; ++i) {
      stats.retained_bytes += retained[i];
      stats.mean_loss +=
          mean_field_loss(solved.psi.row(i).transpose(), batch[i]->optimal,
                          cfg.clamp);
      stats.mean_residual += solved.residuals[i];
      stats.mean_iterations += solved.iterations[i];
      if (!solved.converged[i]) ++stats.diverged;
    }
  } else {
    const Eigen::VectorXd psi0 = Eigen::VectorXd::Constant(n, 0.5);
    std::vector<double> losses(bs, 0.0), deltas(bs, 0.0);
    std::vector<std::size_t> retained(bs, 0);
    parallel_for(bs, [&](std::size_t i) {
      // The unrolled baseline treats each sample as its own stacked
      // network, so scaling norms are per sample here.
      const UnrolledRun run = unrolled_forward(
          psi0, cfg.unroll_iterations, *estimators[i], cfg.scaling);
      const Eigen::VectorXd v =
          loss_cotangent(run.psi_final, batch[i]->optimal, cfg.clamp);
      grads[i] = unrolled_backward(run, *estimators[i], v);
      contributed[i] = 1;
      losses[i] = mean_field_loss(run.psi_final, batch[i]->optimal, cfg.clamp);
      deltas[i] = (run.psi_final - run.layers.back().psi_in)
                      .lpNorm<Eigen::Infinity>();
      retained[i] = run.retained_bytes;
    });
    for (std::size_t i = 0; i < bs; ++i) {
      stats.mean_loss += losses[i];
      stats.mean_residual += deltas[i];
      stats.mean_iterations += cfg.unroll_iterations;
      stats.retained_bytes += retained[i];
    }
  }

  stats.mean_loss /= static_cast<double>(bs);
  stats.mean_residual /= static_cast<double>(bs);
  stats.mean_iterations /= static_cast<double>(bs);

  std::vector<ParamVector> contributing;
  for (std::size_t i = 0; i < bs; ++i)
    if (contributed[i]) contributing.push_back(std::move(grads[i]));
  if (!contributing.empty()) {
    stats.batch_grad = pairwise_sum(contributing);
    stats.batch_grad.scale(1.0 / static_cast<double>(contributing.size()));
    if (apply_update)
      optimizer_step(model.params, stats.batch_grad, state, cfg.optimizer);
  } else {
    stats.batch_grad = ParamVector::zeros_like(model.params);
  }
  return stats;
}

std::pair<SetFunctionModel, TrainHistory> train(const Dataset& dataset,
                                                const TrainConfig& cfg) {
  dataset.validate();
  check(cfg.epochs >= 1, "epochs must be >= 1");
  check(cfg.batch_size >= 1, "batch size must be >= 1");

  Arch arch = cfg.arch;
  arch.feature_dim = dataset.meta.feature_dim;
  SetFunctionModel model = model_init(arch, rng::derive(cfg.seed, 0x1417));
  OptimizerState state;
  TrainHistory history;

  const std::size_t n = dataset.samples.size();
  std::vector<std::size_t> order(n);
  std::uint64_t step_counter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng::Stream shuffle(rng::derive(cfg.seed, 0xe90c, epoch));
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.below(i + 1)]);

    double loss = 0.0, resid = 0.0, iters = 0.0;
    int diverged = 0;
    for (std::size_t at = 0; at < n; at += cfg.batch_size) {
      const std::size_t len =
          std::min<std::size_t>(cfg.batch_size, n - at);
      std::vector<const SetSample*> batch(len);
      for (std::size_t i = 0; i < len; ++i)
        batch[i] = &dataset.samples[order[at + i]];
      const StepStats stats = train_step(
          model, batch, state, cfg, rng::derive(cfg.seed, 0x57e9, step_counter));
      ++step_counter;
      loss += stats.mean_loss * len;
      resid += stats.mean_residual * len;
      iters += stats.mean_iterations * len;
      diverged += stats.diverged;
    }
    const auto t1 = std::chrono::steady_clock::now();
    history.mean_loss.push_back(loss / n);
    history.mean_residual.push_back(resid / n);
    history.mean_iterations.push_back(iters / n);
    history.wall_time_s.push_back(
        std::chrono::duration<double>(t1 - t0).count());

    if (2 * diverged > static_cast<int>(n))
      throw DivergenceError("solver diverged on " + std::to_string(diverged) +
                            " of " + std::to_string(n) + " samples in epoch " +
                            std::to_string(epoch + 1));
  }
  return {std::move(model), std::move(history)};
}

}  // namespace setmf
