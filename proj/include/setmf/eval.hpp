#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "setmf/data.hpp"
#include "setmf/train.hpp"

// Inference by topN rounding, Jaccard metrics, the exhaustive oracle for
// tiny instances, and the retained-memory profiler.
namespace setmf {

enum class InferenceMode { kOneStep, kConverge };

struct Metrics {
  double mean_jc = 0.0;
  std::vector<double> per_sample;
  std::string mode;
};

// One fixed-point step (or a full solve), then the k largest entries of
// psi; ties go to the lowest index.
std::vector<Eigen::Index> infer_subset(const SetFunctionModel& model,
                                       const Tensor& features, Eigen::Index k,
                                       InferenceMode mode,
                                       const SolverConfig& solver,
                                       const ScalingConfig& scaling,
                                       const EstimatorConfig& estimator);

double jaccard(const std::vector<Eigen::Index>& a,
               const std::vector<Eigen::Index>& b);

// k for each sample is the labelled |S*| (cardinality taken from the test
// label, matching the evaluation protocol this reproduces).
Metrics mean_jc(const SetFunctionModel& model, const Dataset& dataset,
                InferenceMode mode, const SolverConfig& solver,
                const ScalingConfig& scaling,
                const EstimatorConfig& estimator);

struct BruteForceResult {
  std::vector<Eigen::Index> argmax;
  Eigen::VectorXd probabilities;  // Boltzmann table over bitmask subsets
};

BruteForceResult brute_force_oracle(const SetFunctionModel& model,
                                    const Tensor& features);

struct RetentionSeries {
  std::vector<std::size_t> min_bytes;
  std::vector<std::size_t> mean_bytes;
  std::vector<std::size_t> max_bytes;
};

struct RetentionProfile {
  std::vector<int> k_values;
  RetentionSeries unrolled;
  RetentionSeries implicit;
};

// One instrumented training step per (mode, K) over the given slice.
RetentionProfile retention_profile(const Dataset& slice, const TrainConfig& cfg,
                                   const std::vector<int>& k_list,
                                   int repeats = 3);

}  // namespace setmf
