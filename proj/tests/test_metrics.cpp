#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <vector>

#include "descent/data.hpp"
#include "descent/metrics.hpp"
#include "descent/models.hpp"
#include "descent/rng.hpp"

using namespace descent;

namespace {

// Generic model whose layers each scale the signal by `factor` elementwise:
// w = 0, u = factor * identity, relu. On nonnegative data against a zero
// clean target the layer losses scale by factor^2 per step.
ModelParams scaling_model(int n, int t, int layers, double factor) {
  ModelConfig cfg;
  cfg.kind = ModelKind::generic;
  cfg.n = n;
  cfg.t = t;
  cfg.d = 2;
  cfg.c = 0;
  cfg.layers = layers;
  ModelParams p = make_model(cfg, 1);
  for (auto& lp : p.generic_layers) {
    std::fill(lp.w.values.begin(), lp.w.values.end(), 0.0);
    std::fill(lp.u.values.begin(), lp.u.values.end(), 0.0);
    for (int i = 0; i < n; ++i) lp.u.values[static_cast<size_t>(i) * n + i] = factor;
  }
  return p;
}

// Nonnegative observations with zero clean targets, so the layer loss is the
// squared norm of the representation itself.
Dataset zero_target_data(int count, int n, int t, uint64_t seed) {
  Dataset d;
  Rng rng = derive_stream(seed, StreamTag::test, 0);
  for (int i = 0; i < count; ++i) {
    auto v = gaussian_vector(rng, static_cast<size_t>(n) * t);
    for (auto& x : v) x = std::fabs(x) + 0.1;
    Sample s;
    s.clean = Tensor(Shape{n, t}, std::vector<double>(static_cast<size_t>(n) * t, 0.0));
    s.observed = Tensor(Shape{n, t}, std::move(v));
    d.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("rmse analytic values and direct-formula oracle", "[metrics]") {
  const Tensor a = Tensor::matrix(1, 2, {3.0, 4.0});
  const Tensor z = Tensor::matrix(1, 2, {0.0, 0.0});
  REQUIRE(rmse({a}, {a}) == 0.0);
  REQUIRE_THAT(rmse({a}, {z}), Catch::Matchers::WithinAbs(5.0, 1e-15));
  REQUIRE_THAT(rmse({z}, {a}), Catch::Matchers::WithinAbs(5.0, 1e-15));  // symmetric

  Rng rng = derive_stream(301, StreamTag::test);
  std::vector<Tensor> pred, truth;
  double acc = 0.0;
  for (int i = 0; i < 7; ++i) {
    auto pv = gaussian_vector(rng, 12);
    auto tv = gaussian_vector(rng, 12);
    double frob = 0.0;
    for (size_t j = 0; j < pv.size(); ++j) frob += (pv[j] - tv[j]) * (pv[j] - tv[j]);
    acc += frob;
    pred.push_back(Tensor(Shape{3, 4}, std::move(pv)));
    truth.push_back(Tensor(Shape{3, 4}, std::move(tv)));
  }
  REQUIRE_THAT(rmse(pred, truth), Catch::Matchers::WithinAbs(std::sqrt(acc / 7.0), 1e-12));

  REQUIRE_THROWS_AS(rmse(pred, {a}), ParamError);
}

TEST_CASE("accuracy analytic values and counting oracle", "[metrics]") {
  REQUIRE(accuracy({1, 0, 2}, {1, 0, 2}) == 1.0);
  REQUIRE(accuracy({1, 0, 2}, {0, 1, 1}) == 0.0);

  std::mt19937 gen(17);
  std::vector<int> a(101), b(101);
  int matches = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = static_cast<int>(gen() % 3);
    b[i] = static_cast<int>(gen() % 3);
    if (a[i] == b[i]) ++matches;
  }
  REQUIRE(accuracy(a, b) == static_cast<double>(matches) / 101.0);
  REQUIRE_THROWS_AS(accuracy({1}, {1, 2}), ParamError);
}

TEST_CASE("layerwise eval on an identity model over clean data is zero", "[metrics]") {
  ModelParams p = scaling_model(4, 3, 2, 1.0);
  Dataset d = gen_denoising(6, 4, 3, DataStructure::smooth, 302);
  // Make the observations nonnegative copies of themselves as targets: use
  // zero-noise data where observed == clean, and shift everything up.
  for (auto& s : d) {
    for (auto& v : s.clean.values) v = std::fabs(v) + 0.2;
    s.observed = s.clean;
  }
  auto losses = layerwise_eval(p, d, Task::denoising);
  REQUIRE(losses.size() == 3);
  for (double f : losses) REQUIRE(f <= 1e-24);
}

TEST_CASE("layerwise eval equals averaged per-sample traces", "[metrics]") {
  ModelConfig cfg;
  cfg.kind = ModelKind::ut;
  cfg.n = 5;
  cfg.t = 4;
  cfg.d = 3;
  cfg.c = 0;
  cfg.layers = 3;
  ModelParams p = make_model(cfg, 303);
  Dataset d = gen_denoising(9, 5, 4, DataStructure::smooth, 304);
  perturb(d, 0.3, measure_sigma_x(d), 305);

  auto fast = layerwise_eval(p, d, Task::denoising);
  std::vector<double> slow(fast.size(), 0.0);
  for (const auto& s : d) {
    LossSpec spec;
    spec.task = Task::denoising;
    spec.clean = &s.clean;
    LayerTrace tr = model_forward(p, s.observed, spec);
    for (size_t l = 0; l < slow.size(); ++l) slow[l] += tr.losses[l] / static_cast<double>(d.size());
  }
  for (size_t l = 0; l < fast.size(); ++l)
    REQUIRE_THAT(fast[l], Catch::Matchers::WithinAbs(slow[l], 1e-10));
}

TEST_CASE("layerwise eval is invariant to dataset order", "[metrics]") {
  ModelConfig cfg;
  cfg.kind = ModelKind::ut;
  cfg.n = 4;
  cfg.t = 3;
  cfg.d = 2;
  cfg.c = 0;
  cfg.layers = 2;
  ModelParams p = make_model(cfg, 306);
  Dataset d = gen_denoising(11, 4, 3, DataStructure::smooth, 307);
  perturb(d, 0.2, measure_sigma_x(d), 308);

  auto before = layerwise_eval(p, d, Task::denoising);
  Dataset shuffled = d;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[0], shuffled[5]);
  auto after = layerwise_eval(p, shuffled, Task::denoising);
  for (size_t l = 0; l < before.size(); ++l)
    REQUIRE_THAT(after[l], Catch::Matchers::WithinAbs(before[l], 1e-10));
}

TEST_CASE("halving model produces ratios of exactly one quarter in squared loss", "[metrics]") {
  ModelParams p = scaling_model(4, 3, 3, 0.5);
  Dataset d = zero_target_data(5, 4, 3, 309);
  auto losses = layerwise_eval(p, d, Task::denoising);
  REQUIRE(losses.size() == 4);
  for (size_t l = 1; l < losses.size(); ++l)
    REQUIRE_THAT(losses[l] / losses[l - 1], Catch::Matchers::WithinAbs(0.25, 1e-12));
}

TEST_CASE("ratio stats on halving and identity models", "[metrics]") {
  // Layers scale by sqrt(1/2): per-sample loss ratios are exactly 0.5.
  ModelParams halver = scaling_model(4, 3, 3, std::sqrt(0.5));
  Dataset d = zero_target_data(6, 4, 3, 310);
  RatioStats st = ratio_stats(halver, d, Task::denoising, 0.2);
  REQUIRE(st.count == 18);  // 6 samples x 3 transitions
  REQUIRE(st.skipped == 0);
  REQUIRE_THAT(st.mean, Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE_THAT(st.median, Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE(st.fraction_descending == 1.0);
  REQUIRE(st.fraction_meeting_alpha == 1.0);  // 0.5 <= 1 - 0.2

  ModelParams ident = scaling_model(4, 3, 3, 1.0);
  RatioStats id = ratio_stats(ident, d, Task::denoising, 0.2);
  REQUIRE_THAT(id.mean, Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE(id.fraction_descending == 0.0);  // strict inequality
  REQUIRE(id.fraction_meeting_alpha == 0.0);

  // Histogram integrity: bin counts sum to the population.
  int64_t total = 0;
  for (int64_t b : st.histogram) total += b;
  REQUIRE(total == st.count);
  REQUIRE(st.histogram.size() == static_cast<size_t>(kRatioBins) + 1);
}

TEST_CASE("ratio stats skip near-zero denominators and order the fractions", "[metrics]") {
  RatioStats direct = ratio_stats_from({0.5, 0.9, 1.5, 0.7}, 3, 0.2);
  REQUIRE(direct.count == 4);
  REQUIRE(direct.skipped == 3);
  REQUIRE_THAT(direct.mean, Catch::Matchers::WithinAbs(0.9, 1e-12));
  REQUIRE_THAT(direct.median, Catch::Matchers::WithinAbs(0.8, 1e-12));
  REQUIRE_THAT(direct.fraction_descending, Catch::Matchers::WithinAbs(0.75, 1e-12));
  REQUIRE_THAT(direct.fraction_meeting_alpha, Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE(direct.fraction_meeting_alpha <= direct.fraction_descending);
}

TEST_CASE("trapezoid auc constant, single point, and oracle cases", "[metrics]") {
  AucResult flat = trapezoid_auc({0.1, 0.4, 0.9}, {0.7, 0.7, 0.7});
  REQUIRE_THAT(flat.normalized, Catch::Matchers::WithinAbs(0.7, 1e-12));
  REQUIRE_THAT(flat.raw, Catch::Matchers::WithinAbs(0.7 * 0.8, 1e-12));

  AucResult point = trapezoid_auc({0.3}, {0.42});
  REQUIRE_THAT(point.normalized, Catch::Matchers::WithinAbs(0.42, 1e-12));

  Rng rng = derive_stream(311, StreamTag::test);
  std::vector<double> gammas = {0.0, 0.2, 0.3, 0.7, 1.1};
  std::vector<double> vals;
  for (size_t i = 0; i < gammas.size(); ++i) vals.push_back(std::fabs(rng.gaussian()));
  double raw = 0.0;
  for (size_t i = 1; i < gammas.size(); ++i)
    raw += 0.5 * (vals[i] + vals[i - 1]) * (gammas[i] - gammas[i - 1]);
  AucResult got = trapezoid_auc(gammas, vals);
  REQUIRE_THAT(got.raw, Catch::Matchers::WithinAbs(raw, 1e-12));
  REQUIRE_THAT(got.normalized, Catch::Matchers::WithinAbs(raw / 1.1, 1e-12));

  // Bounded metric stays within its bounds after normalization.
  const double lo = *std::min_element(vals.begin(), vals.end());
  const double hi = *std::max_element(vals.begin(), vals.end());
  REQUIRE(got.normalized >= lo);
  REQUIRE(got.normalized <= hi);
}

TEST_CASE("sweep emits one row per gamma and model with csv round-trip", "[metrics]") {
  ModelConfig cfg;
  cfg.kind = ModelKind::ut;
  cfg.n = 4;
  cfg.t = 3;
  cfg.d = 2;
  cfg.c = 0;
  cfg.layers = 2;
  ModelParams a = make_model(cfg, 312);
  ModelParams b = make_model(cfg, 313);

  Dataset heldout = gen_denoising(8, 4, 3, DataStructure::smooth, 314);
  auto sets = split_id_ood(heldout, 0.2, {0.1, 0.2}, 1.0, 315);

  SweepResult res = sweep({{"constrained", &a}, {"unconstrained", &b}}, sets, Task::denoising, 7);
  REQUIRE(res.models.size() == 2);
  REQUIRE(res.models[0].tag == "constrained");
  REQUIRE(res.models[1].tag == "unconstrained");
  REQUIRE(res.gammas == std::vector<double>{0.1, 0.2});
  REQUIRE(res.models[0].metric.size() == 2);
  REQUIRE(res.models[0].layer_losses.size() == 2);
  REQUIRE(res.models[0].layer_losses[0].size() == 3);

  // Swapping the models swaps tags only; the numbers follow the model.
  SweepResult swapped = sweep({{"constrained", &b}, {"unconstrained", &a}}, sets, Task::denoising, 7);
  REQUIRE(swapped.models[0].metric == res.models[1].metric);
  REQUIRE(swapped.models[1].metric == res.models[0].metric);

  // CSV round-trip reproduces the in-memory result exactly.
  std::filesystem::create_directories("test_artifacts");
  write_metrics_csv("test_artifacts/metrics.csv", res);
  SweepResult back = read_metrics_csv("test_artifacts/metrics.csv", Task::denoising);
  REQUIRE(back.models.size() == res.models.size());
  REQUIRE(back.gammas == res.gammas);
  for (size_t m = 0; m < res.models.size(); ++m) {
    REQUIRE(back.models[m].tag == res.models[m].tag);
    REQUIRE(back.models[m].metric == res.models[m].metric);
    REQUIRE(back.models[m].layer_losses == res.models[m].layer_losses);
    REQUIRE_THAT(back.models[m].auc.normalized,
                 Catch::Matchers::WithinAbs(res.models[m].auc.normalized, 1e-12));
  }

  // Degenerate single-gamma grid.
  auto one = split_id_ood(heldout, 0.2, {0.2}, 1.0, 315);
  SweepResult single = sweep({{"constrained", &a}}, one, Task::denoising, 7);
  REQUIRE(single.gammas.size() == 1);
  REQUIRE_THAT(single.models[0].auc.normalized,
               Catch::Matchers::WithinAbs(single.models[0].metric[0], 1e-12));
}
