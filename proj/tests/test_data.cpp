#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <vector>

#include "descent/data.hpp"
#include "descent/rng.hpp"

using namespace descent;

namespace {

// Orthonormal DCT-II basis vector k of length n, evaluated at position i.
double dct_entry(int k, int i, int n) {
  const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  return scale * std::cos(M_PI * (i + 0.5) * k / n);
}

// Analysis transform: coefficients of each column in the DCT basis.
std::vector<double> dct_coeffs_of_column(const Tensor& m, int col) {
  const int n = m.shape.rows(), t = m.shape.cols();
  std::vector<double> c(static_cast<size_t>(n), 0.0);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      c[static_cast<size_t>(k)] += dct_entry(k, i, n) * m.values[static_cast<size_t>(i) * t + col];
  return c;
}

}  // namespace

TEST_CASE("denoising generator determinism and empty case", "[data]") {
  REQUIRE(gen_denoising(0, 8, 4, DataStructure::smooth, 1).empty());
  Dataset a = gen_denoising(5, 8, 4, DataStructure::smooth, 9);
  Dataset b = gen_denoising(5, 8, 4, DataStructure::smooth, 9);
  REQUIRE(a.size() == 5);
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].clean.values == b[i].clean.values);
    REQUIRE(a[i].observed.values == a[i].clean.values);  // unperturbed
  }
  Dataset c = gen_denoising(5, 8, 4, DataStructure::smooth, 10);
  REQUIRE(a[0].clean.values != c[0].clean.values);
}

TEST_CASE("smooth data lives in the low-frequency dct span", "[data]") {
  const int n = 16, t = 6;
  Dataset d = gen_denoising(4, n, t, DataStructure::smooth, 3);
  const int keep = (n + 3) / 4;  // first ceil(n/4) basis vectors
  for (const auto& s : d)
    for (int col = 0; col < t; ++col) {
      auto c = dct_coeffs_of_column(s.clean, col);
      for (int k = keep; k < n; ++k) REQUIRE(std::fabs(c[static_cast<size_t>(k)]) < 1e-10);
    }
}

TEST_CASE("sparse dct data has exactly k nonzero coefficients per column", "[data]") {
  const int n = 16, t = 5;
  const int k = (n + 7) / 8;  // ceil(n/8)
  Dataset d = gen_denoising(6, n, t, DataStructure::sparse_dct, 4);
  for (const auto& s : d)
    for (int col = 0; col < t; ++col) {
      auto c = dct_coeffs_of_column(s.clean, col);
      int nonzero = 0;
      for (double v : c)
        if (std::fabs(v) > 1e-9) ++nonzero;
      REQUIRE(nonzero == k);
    }
}

TEST_CASE("perturb at gamma zero is exact and rejects negative gamma", "[data]") {
  Dataset d = gen_denoising(3, 8, 4, DataStructure::smooth, 5);
  const double sigma_x = measure_sigma_x(d);
  REQUIRE(sigma_x > 0.0);
  Dataset copy = d;
  perturb(copy, 0.0, sigma_x, 77);
  for (size_t i = 0; i < d.size(); ++i) {
    REQUIRE(copy[i].observed.values == d[i].clean.values);
    REQUIRE(copy[i].clean.values == d[i].clean.values);
  }
  REQUIRE_THROWS_AS(perturb(copy, -0.1, sigma_x, 77), ParamError);
}

TEST_CASE("perturbation noise has the configured standard deviation", "[data]") {
  const int n = 25, t = 25;  // 160 samples x 625 entries = 1e5 entries
  Dataset d = gen_denoising(160, n, t, DataStructure::smooth, 6);
  const double sigma_x = measure_sigma_x(d);
  const double gamma = 0.4;
  perturb(d, gamma, sigma_x, 78);

  double sum = 0.0, sumsq = 0.0;
  size_t count = 0;
  for (const auto& s : d)
    for (size_t i = 0; i < s.clean.values.size(); ++i) {
      const double eps = s.observed.values[i] - s.clean.values[i];
      sum += eps;
      sumsq += eps * eps;
      ++count;
    }
  REQUIRE(count == 100000);
  const double mean = sum / static_cast<double>(count);
  const double sd = std::sqrt(sumsq / static_cast<double>(count) - mean * mean);
  REQUIRE(std::fabs(sd - gamma * sigma_x) / (gamma * sigma_x) < 0.02);
}

TEST_CASE("classification labels are balanced and means separated", "[data]") {
  const int count = 120, c = 3;
  ClassData cd = gen_classification(count, 6, 4, c, 2.5, 11);
  REQUIRE(cd.samples.size() == count);
  REQUIRE(cd.means.size() == static_cast<size_t>(c));

  std::vector<int> tally(static_cast<size_t>(c), 0);
  for (const auto& s : cd.samples) {
    REQUIRE(s.label >= 0);
    REQUIRE(s.label < c);
    ++tally[static_cast<size_t>(s.label)];
  }
  for (int v : tally) REQUIRE(std::abs(v - count / c) <= 1);

  for (int a = 0; a < c; ++a)
    for (int b = a + 1; b < c; ++b) {
      double dist_sq = 0.0;
      for (size_t i = 0; i < cd.means[static_cast<size_t>(a)].values.size(); ++i) {
        const double diff = cd.means[static_cast<size_t>(a)].values[i] -
                            cd.means[static_cast<size_t>(b)].values[i];
        dist_sq += diff * diff;
      }
      REQUIRE(std::sqrt(dist_sq) >= 2.5 - 1e-9);
    }
}

TEST_CASE("large separation makes nearest mean exact", "[data]") {
  ClassData cd = gen_classification(100, 4, 8, 2, 50.0, 12);
  int correct = 0;
  for (const auto& s : cd.samples)
    if (nearest_mean_label(s.observed, cd.means) == s.label) ++correct;
  REQUIRE(correct == 100);
}

TEST_CASE("nearest mean accuracy matches the gaussian error integral", "[data]") {
  // Two unit-variance gaussian classes with mean distance exactly 2: the
  // optimal error is Phi(-1), i.e. accuracy Phi(1) ~= 0.8413.
  ClassData cd = gen_classification(10000, 8, 4, 2, 2.0, 13);
  int correct = 0;
  for (const auto& s : cd.samples)
    if (nearest_mean_label(s.observed, cd.means) == s.label) ++correct;
  const double acc = correct / 10000.0;
  const double phi1 = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));
  REQUIRE(std::fabs(acc - phi1) < 0.02);
}

TEST_CASE("id ood split shares clean data and draws fresh noise per gamma", "[data]") {
  Dataset heldout = gen_denoising(12, 8, 4, DataStructure::smooth, 14);
  const double sigma_x = 1.0;
  const double gamma_train = 0.2;

  auto single = split_id_ood(heldout, gamma_train, {gamma_train}, sigma_x, 15);
  REQUIRE(single.size() == 1);
  REQUIRE_FALSE(single[0].ood);

  auto sets = split_id_ood(heldout, gamma_train, {0.1, 0.2, 0.5}, sigma_x, 15);
  REQUIRE(sets.size() == 3);
  REQUIRE_FALSE(sets[0].ood);
  REQUIRE_FALSE(sets[1].ood);  // gamma == gamma_train counts as in-distribution
  REQUIRE(sets[2].ood);
  for (const auto& es : sets) {
    REQUIRE(es.samples.size() == heldout.size());
    for (size_t i = 0; i < es.samples.size(); ++i)
      REQUIRE(es.samples[i].clean.values == heldout[i].clean.values);
  }
  // Different gammas get different noise draws.
  REQUIRE(sets[0].samples[0].observed.values != sets[2].samples[0].observed.values);
}

TEST_CASE("dataset cache round-trips bit for bit", "[data]") {
  std::filesystem::create_directories("test_artifacts");
  Dataset d = gen_denoising(4, 6, 3, DataStructure::sparse_dct, 16);
  perturb(d, 0.3, measure_sigma_x(d), 17);

  DatasetCacheHeader h;
  h.task = 0;
  h.n = 6;
  h.t = 3;
  h.c = 0;
  h.count = static_cast<int32_t>(d.size());
  h.seed = 16;
  save_dataset_cache("test_artifacts/cache.bin", h, d);

  DatasetCacheHeader back;
  Dataset loaded = load_dataset_cache("test_artifacts/cache.bin", back);
  REQUIRE(back.n == h.n);
  REQUIRE(back.t == h.t);
  REQUIRE(back.count == h.count);
  REQUIRE(back.seed == h.seed);
  REQUIRE(loaded.size() == d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    REQUIRE(loaded[i].clean.values == d[i].clean.values);
    REQUIRE(loaded[i].observed.values == d[i].observed.values);
    REQUIRE(loaded[i].label == d[i].label);
  }
}
