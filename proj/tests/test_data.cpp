#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"

#include "setmf/data.hpp"

using namespace setmf;

TEST_CASE("gen_gaussian: construction invariants and determinism") {
  const Dataset data = gen_gaussian(20, 12, 4, 7);
  CHECK(data.size() == 20);
  CHECK(data.meta.feature_dim == 2);
  for (const auto& s : data.samples) {
    CHECK(s.optimal.size() == 4);
    CHECK(s.features.rows() == 12);
    for (std::size_t i = 1; i < s.optimal.size(); ++i)
      CHECK(s.optimal[i] > s.optimal[i - 1]);
  }
  const Dataset again = gen_gaussian(20, 12, 4, 7);
  for (int i = 0; i < 20; ++i) {
    CHECK(data.samples[i].features == again.samples[i].features);
    CHECK(data.samples[i].optimal == again.samples[i].optimal);
  }
  const Dataset other = gen_gaussian(20, 12, 4, 8);
  CHECK(data.samples[0].features != other.samples[0].features);

  CHECK_THROWS_AS(gen_gaussian(5, 4, 4, 1), Error);  // |S*| must be < |V|
}

TEST_CASE("gen_gaussian class means sit near the mixture centers") {
  const Eigen::Index k = 5;
  const Dataset data = gen_gaussian(400, 10, k, 11);
  // Pool the optimal-class points; every sample's S* points share one
  // center, so their per-sample mean is near +-mu.
  const double mu = 1.0 / std::sqrt(2.0);
  int hits = 0;
  for (const auto& s : data.samples) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (Eigen::Index idx : s.optimal)
      mean += s.features.row(idx).transpose();
    mean /= static_cast<double>(k);
    const double dplus = (mean - Eigen::Vector2d(mu, mu)).norm();
    const double dminus = (mean + Eigen::Vector2d(mu, mu)).norm();
    // Within 4 standard errors of one of the two centers
    // (sd = 0.5/sqrt(5) per coordinate).
    if (std::min(dplus, dminus) < 4.0 * 0.5 / std::sqrt(double(k)) * 1.5)
      ++hits;
  }
  CHECK(hits >= 390);  // generous: misses are extreme outliers
}

TEST_CASE("gen_moons: noiseless points lie on the two half-circles") {
  const Dataset data = gen_moons(15, 10, 3, 0.0, 17);
  auto on_moon0 = [](const Eigen::Vector2d& p) {
    return std::abs(p.squaredNorm() - 1.0) < 1e-12 && p.y() >= -1e-12;
  };
  auto on_moon1 = [](const Eigen::Vector2d& p) {
    const double dx = p.x() - 1.0;
    const double dy = p.y() - 0.5;
    return std::abs(dx * dx + dy * dy - 1.0) < 1e-12 && p.y() <= 0.5 + 1e-12;
  };
  for (const auto& s : data.samples) {
    CHECK(s.optimal.size() == 3);
    std::vector<char> is_opt(10, 0);
    for (Eigen::Index i : s.optimal) is_opt[i] = 1;
    // Class purity: all optimal points on one moon, the rest on the other.
    int opt_on0 = 0, opt_on1 = 0, rest_on0 = 0, rest_on1 = 0;
    for (Eigen::Index i = 0; i < 10; ++i) {
      const Eigen::Vector2d p = s.features.row(i).transpose();
      CHECK((on_moon0(p) || on_moon1(p)));
      if (is_opt[i]) {
        opt_on0 += on_moon0(p);
        opt_on1 += on_moon1(p);
      } else {
        rest_on0 += on_moon0(p);
        rest_on1 += on_moon1(p);
      }
    }
    const bool pure = (opt_on0 == 3 && rest_on1 == 7) ||
                      (opt_on1 == 3 && rest_on0 == 7);
    CHECK(pure);
  }
}

TEST_CASE("split_train_test applies the 2:1 ratio") {
  const Dataset data = gen_gaussian(1000, 4, 2, 19);
  const auto [train_set, test_set] = split_train_test(data);
  CHECK(train_set.size() == 667);
  CHECK(test_set.size() == 333);
  CHECK(train_set.meta.split == "train");
  CHECK(test_set.meta.split == "test");
}

TEST_CASE("dataset file roundtrip and validation") {
  const std::string path = "/tmp/setmf_test_dataset.jsonl";
  const Dataset data = gen_gaussian(10, 6, 2, 23);
  save_dataset(data, path);
  const Dataset loaded = load_dataset(path);
  CHECK(loaded.size() == data.size());
  CHECK(loaded.meta.name == "gaussian");
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    CHECK(loaded.samples[i].features == data.samples[i].features);
    CHECK(loaded.samples[i].optimal == data.samples[i].optimal);
  }

  SUBCASE("truncated final line reports its line number") {
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path);
    out << text.substr(0, text.size() - 30);
    out.close();
    try {
      (void)load_dataset(path);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("line 11") != std::string::npos);
    }
  }

  SUBCASE("mismatched feature width is rejected") {
    std::ofstream out(path);
    out << R"({"version":1,"name":"x","d_f":2,"ground_size":2,"seed":0,"split":""})"
        << "\n";
    out << R"({"features":[[0.0,0.0],[1.0]],"optimal":[0]})" << "\n";
    out.close();
    CHECK_THROWS_AS((void)load_dataset(path), Error);
  }
  std::remove(path.c_str());
}
