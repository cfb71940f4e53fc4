#include "setmf/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "setmf/rng.hpp"

namespace setmf {

void SetSample::validate() const {
  check(features.rows() >= 1 && features.cols() >= 1,
        "sample needs a non-empty feature matrix");
  check(features.allFinite(), "sample features must be finite");
  check(!optimal.empty() &&
            optimal.size() <= static_cast<std::size_t>(features.rows()),
        "optimal subset size out of range");
  for (std::size_t i = 0; i < optimal.size(); ++i) {
    check(optimal[i] >= 0 && optimal[i] < features.rows(),
          "optimal index out of range");
    if (i > 0)
      check(optimal[i] > optimal[i - 1],
            "optimal indices must be sorted and unique");
  }
}

void Dataset::validate() const {
  check(!samples.empty(), "dataset must contain at least one sample");
  for (const auto& s : samples) {
    s.validate();
    check(s.features.cols() == meta.feature_dim,
          "sample feature dimension disagrees with dataset metadata");
    check(s.features.rows() == meta.ground_size,
          "sample ground set size disagrees with dataset metadata");
  }
}

namespace {

// Places class-conditional points at shuffled positions so subset indices
// carry no information.
SetSample assemble_sample(Eigen::Index ground_size, Eigen::Index optimal_size,
                          const std::vector<Eigen::VectorXd>& own_class,
                          const std::vector<Eigen::VectorXd>& other_class,
                          rng::Stream& gen) {
  std::vector<Eigen::Index> perm(ground_size);
  for (Eigen::Index i = 0; i < ground_size; ++i) perm[i] = i;
  for (Eigen::Index i = ground_size - 1; i > 0; --i)
    std::swap(perm[i], perm[gen.below(static_cast<std::uint64_t>(i) + 1)]);

  SetSample sample;
  sample.features.resize(ground_size, own_class.front().size());
  sample.optimal.reserve(optimal_size);
  for (Eigen::Index i = 0; i < ground_size; ++i) {
    const bool in_optimal = i < optimal_size;
    const Eigen::VectorXd& p =
        in_optimal ? own_class[i] : other_class[i - optimal_size];
    sample.features.row(perm[i]) = p.transpose();
    if (in_optimal) sample.optimal.push_back(perm[i]);
  }
  std::sort(sample.optimal.begin(), sample.optimal.end());
  return sample;
}

void check_sizes(int n_samples, Eigen::Index ground_size,
                 Eigen::Index optimal_size) {
  check(n_samples >= 1, "need at least one sample");
  check(ground_size >= 2, "ground set must hold at least two items");
  check(optimal_size >= 1 && optimal_size < ground_size,
        "optimal subset size must satisfy 1 <= |S*| < |V|");
}

}  // namespace

Dataset gen_gaussian(int n_samples, Eigen::Index ground_size,
                     Eigen::Index optimal_size, std::uint64_t seed) {
  check_sizes(n_samples, ground_size, optimal_size);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Eigen::Vector2d mu[2];
  mu[0] << inv_sqrt2, inv_sqrt2;
  mu[1] = -mu[0];
  const double stddev = 0.5;  // covariance I/4

  Dataset out;
  out.meta = {"gaussian", 2, ground_size, seed, ""};
  out.samples.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    rng::Stream gen(rng::derive(seed, 0xda7a, s));
    const int label = gen.uniform() < 0.5 ? 0 : 1;
    auto draw = [&](int cls) {
      Eigen::VectorXd p(2);
      p[0] = mu[cls][0] + stddev * gen.normal();
      p[1] = mu[cls][1] + stddev * gen.normal();
      return p;
    };
    std::vector<Eigen::VectorXd> own, other;
    for (Eigen::Index i = 0; i < optimal_size; ++i) own.push_back(draw(label));
    for (Eigen::Index i = 0; i < ground_size - optimal_size; ++i)
      other.push_back(draw(1 - label));
    out.samples.push_back(
        assemble_sample(ground_size, optimal_size, own, other, gen));
  }
  out.validate();
  return out;
}

Dataset gen_moons(int n_samples, Eigen::Index ground_size,
                  Eigen::Index optimal_size, double noise_std,
                  std::uint64_t seed) {
  check_sizes(n_samples, ground_size, optimal_size);
  check(noise_std >= 0.0, "noise_std must be nonnegative");

  Dataset out;
  out.meta = {"moons", 2, ground_size, seed, ""};
  out.samples.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    rng::Stream gen(rng::derive(seed, 0x6d6f6f6e, s));
    const int label = gen.uniform() < 0.5 ? 0 : 1;
    auto draw = [&](int cls) {
      const double t = std::numbers::pi * gen.uniform();
      Eigen::VectorXd p(2);
      if (cls == 0) {
        p[0] = std::cos(t);
        p[1] = std::sin(t);
      } else {
        // Mirrored half-circle shifted right by 1 and down by 0.5.
        p[0] = 1.0 - std::cos(t);
        p[1] = 0.5 - std::sin(t);
      }
      p[0] += noise_std * gen.normal();
      p[1] += noise_std * gen.normal();
      return p;
    };
    std::vector<Eigen::VectorXd> own, other;
    for (Eigen::Index i = 0; i < optimal_size; ++i) own.push_back(draw(label));
    for (Eigen::Index i = 0; i < ground_size - optimal_size; ++i)
      other.push_back(draw(1 - label));
    out.samples.push_back(
        assemble_sample(ground_size, optimal_size, own, other, gen));
  }
  out.validate();
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset) {
  const Eigen::Index n = dataset.size();
  check(n >= 3, "dataset too small to split 2:1");
  const Eigen::Index test_count = n / 3;
  Dataset train, test;
  train.meta = dataset.meta;
  train.meta.split = "train";
  test.meta = dataset.meta;
  test.meta.split = "test";
  train.samples.assign(dataset.samples.begin(),
                       dataset.samples.end() - test_count);
  test.samples.assign(dataset.samples.end() - test_count,
                      dataset.samples.end());
  return {std::move(train), std::move(test)};
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path);
  check(out.good(), "cannot write dataset file " + path);
  nlohmann::json header;
  header["version"] = 1;
  header["name"] = dataset.meta.name;
  header["d_f"] = dataset.meta.feature_dim;
  header["ground_size"] = dataset.meta.ground_size;
  header["seed"] = dataset.meta.seed;
  header["split"] = dataset.meta.split;
  out << header.dump() << "\n";
  for (const auto& s : dataset.samples) {
    nlohmann::json rec;
    auto& feats = rec["features"] = nlohmann::json::array();
    for (Eigen::Index r = 0; r < s.features.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < s.features.cols(); ++c)
        row.push_back(s.features(r, c));
      feats.push_back(std::move(row));
    }
    rec["optimal"] = s.optimal;
    out << rec.dump() << "\n";
  }
  check(out.good(), "write failure on dataset file " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot read dataset file " + path);

  std::string line;
  std::size_t line_no = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error("dataset " + path + " line " + std::to_string(line_no) +
                  ": " + e.what());
    }
  };

  check(static_cast<bool>(std::getline(in, line)),
        "dataset file " + path + " is empty");
  line_no = 1;
  const nlohmann::json header = parse_line(line);
  check(header.value("version", 0) == 1,
        "dataset " + path + ": unsupported format version");

  Dataset out;
  out.meta.name = header.value("name", "");
  out.meta.feature_dim = header.at("d_f").get<Eigen::Index>();
  out.meta.ground_size = header.at("ground_size").get<Eigen::Index>();
  out.meta.seed = header.value("seed", std::uint64_t{0});
  out.meta.split = header.value("split", "");

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json rec = parse_line(line);
    SetSample sample;
    try {
      const auto& feats = rec.at("features");
      const Eigen::Index rows = static_cast<Eigen::Index>(feats.size());
      check(rows == out.meta.ground_size, "ground set size mismatch");
      sample.features.resize(rows, out.meta.feature_dim);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = feats.at(r);
        check(static_cast<Eigen::Index>(row.size()) == out.meta.feature_dim,
              "feature dimension mismatch");
        for (Eigen::Index c = 0; c < out.meta.feature_dim; ++c)
          sample.features(r, c) = row.at(c).get<double>();
      }
      sample.optimal = rec.at("optimal").get<std::vector<Eigen::Index>>();
      sample.validate();
    } catch (const std::exception& e) {
      throw Error("dataset " + path + " line " + std::to_string(line_no) +
                  ": " + e.what());
    }
    out.samples.push_back(std::move(sample));
  }
  out.validate();
  return out;
}

}  // namespace setmf
