#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "setmf/tensor.hpp"

// Synthetic (optimal subset, ground set) datasets and their line-delimited
// file format.
namespace setmf {

struct SetSample {
  Eigen::MatrixXd features;           // |V| x d_f
  std::vector<Eigen::Index> optimal;  // sorted unique indices into V

  void validate() const;
};

struct DatasetMeta {
  std::string name;
  Eigen::Index feature_dim = 0;
  Eigen::Index ground_size = 0;
  std::uint64_t seed = 0;
  std::string split;  // "train", "test", or empty
};

struct Dataset {
  DatasetMeta meta;
  std::vector<SetSample> samples;

  void validate() const;
  Eigen::Index size() const {
    return static_cast<Eigen::Index>(samples.size());
  }
};

// Two-Gaussian mixture: the optimal subset is drawn from the sample's class,
// the remaining items from the opposite class.
Dataset gen_gaussian(int n_samples, Eigen::Index ground_size,
                     Eigen::Index optimal_size, std::uint64_t seed);

// Two interleaving moons, same subset construction. noise_std defaults to
// sqrt(0.1) via the CLI presets.
Dataset gen_moons(int n_samples, Eigen::Index ground_size,
                  Eigen::Index optimal_size, double noise_std,
                  std::uint64_t seed);

// First two thirds train, final third test.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace setmf
