#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "descent/gradcheck.hpp"
#include "descent/rng.hpp"
#include "descent/tensor.hpp"

using namespace descent;

namespace {

// Central finite differences of a scalar-valued graph w.r.t. one input tensor.
std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double dn = f(x);
    x[i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("tensor invariants", "[tensor]") {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}, true);
  REQUIRE(t.values.size() == 6);
  REQUIRE(t.shape.rows() == 2);
  REQUIRE(t.shape.cols() == 3);
  t.zero_grad();
  REQUIRE(t.grad.size() == t.values.size());
}

TEST_CASE("matmul identity and zeros", "[tensor]") {
  Tape tape;
  Var id = tape.constant(Shape{2, 2}, {1, 0, 0, 1});
  Var a = tape.constant(Shape{2, 2}, {1, 2, 3, 4});
  Var prod = tape.matmul(id, a);
  REQUIRE(tape.values(prod) == std::vector<double>{1, 2, 3, 4});

  Var z = tape.constant(Shape{2, 2}, {0, 0, 0, 0});
  Var zprod = tape.matmul(z, a);
  REQUIRE(tape.values(zprod) == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("matmul shape error reports both shapes", "[tensor]") {
  Tape tape;
  Var a = tape.constant(Shape{2, 3}, std::vector<double>(6, 1.0));
  Var b = tape.constant(Shape{2, 3}, std::vector<double>(6, 1.0));
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("softmax rows analytic values", "[tensor]") {
  Tape tape;
  Var a = tape.constant(Shape{1, 2}, {0.0, 0.0});
  auto v = tape.values(tape.softmax_rows(a));
  REQUIRE_THAT(v[0], Catch::Matchers::WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(v[1], Catch::Matchers::WithinAbs(0.5, 1e-15));

  Var b = tape.constant(Shape{1, 2}, {std::log(2.0), 0.0});
  auto w = tape.values(tape.softmax_rows(b));
  REQUIRE_THAT(w[0], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  REQUIRE_THAT(w[1], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
}

TEST_CASE("softmax rows sum to one with entries in (0,1)", "[tensor]") {
  Rng rng = derive_stream(11, StreamTag::test);
  Tape tape;
  std::vector<double> vals = gaussian_vector(rng, 5 * 7);
  for (auto& v : vals) v *= 3.0;
  Var s = tape.softmax_rows(tape.constant(Shape{5, 7}, vals));
  auto out = tape.values(s);
  for (int i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) {
      const double e = out[static_cast<size_t>(i) * 7 + j];
      REQUIRE(e > 0.0);
      REQUIRE(e < 1.0);
      sum += e;
    }
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
  }
}

TEST_CASE("relu values", "[tensor]") {
  Tape tape;
  Var a = tape.constant(Shape{1, 3}, {-1.0, 0.0, 2.0});
  REQUIRE(tape.values(tape.relu(a)) == std::vector<double>{0.0, 0.0, 2.0});
  Var b = tape.constant(Shape{1, 3}, {0.5, 1.0, 3.0});
  REQUIRE(tape.values(tape.relu(b)) == std::vector<double>{0.5, 1.0, 3.0});
}

TEST_CASE("soft threshold values and identity at gamma zero", "[tensor]") {
  Tape tape;
  Var a = tape.constant(Shape{1, 2}, {1.2, -0.3});
  auto v = tape.values(tape.soft_threshold(a, 0.5));
  REQUIRE_THAT(v[0], Catch::Matchers::WithinAbs(0.7, 1e-15));
  REQUIRE(v[1] == 0.0);

  Var b = tape.constant(Shape{1, 3}, {-2.0, 0.25, 7.0});
  REQUIRE(tape.values(tape.soft_threshold(b, 0.0)) == std::vector<double>{-2.0, 0.25, 7.0});

  REQUIRE_THROWS_AS(tape.soft_threshold(a, -0.1), ParamError);
}

TEST_CASE("frobenius squared values", "[tensor]") {
  Tape tape;
  Var a = tape.constant(Shape{1, 2}, {3.0, 4.0});
  REQUIRE(tape.value(tape.frobenius_sq(a)) == 25.0);
  Var z = tape.constant(Shape{3, 2}, std::vector<double>(6, 0.0));
  REQUIRE(tape.value(tape.frobenius_sq(z)) == 0.0);
}

TEST_CASE("cross entropy certainty, uniform, and label errors", "[tensor]") {
  Tape tape;
  Var sure = tape.constant(Shape{1, 2}, {1.0, 0.0});
  REQUIRE(std::fabs(tape.value(tape.cross_entropy(sure, 0))) <= 1e-12);

  const int c = 5;
  Var uni = tape.constant(Shape{1, c}, std::vector<double>(c, 1.0 / c));
  REQUIRE_THAT(tape.value(tape.cross_entropy(uni, 3)),
               Catch::Matchers::WithinAbs(std::log(static_cast<double>(c)), 1e-12));

  REQUIRE_THROWS_AS(tape.cross_entropy(uni, 5), ParamError);
  REQUIRE_THROWS_AS(tape.cross_entropy(uni, -1), ParamError);

  Var bad = tape.constant(Shape{1, 2}, {0.9, 0.9});
  REQUIRE_THROWS_AS(tape.cross_entropy(bad, 0), ContractError);
}

TEST_CASE("backward of sum is all ones; unreachable leaf stays zero", "[tensor]") {
  Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 4, -5, 6}, true);
  Tensor other = Tensor::matrix(2, 2, {1, 1, 1, 1}, true);
  Tape tape;
  Var loss = tape.sum_all(tape.leaf(x));
  tape.leaf(other);  // on the tape but not reachable from the loss
  x.zero_grad();
  other.zero_grad();
  tape.backward(loss);
  for (double g : x.grad) REQUIRE(g == 1.0);
  for (double g : other.grad) REQUIRE(g == 0.0);
}

TEST_CASE("backward rejects non-scalar loss", "[tensor]") {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
  Tape tape;
  Var v = tape.relu(tape.leaf(x));
  REQUIRE_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("finite differences recover the derivative of x squared", "[tensor]") {
  auto f = [](const std::vector<double>& v) { return v[0] * v[0]; };
  auto g = finite_diff(f, {3.0});
  REQUIRE_THAT(g[0], Catch::Matchers::WithinAbs(6.0, 1e-6));

  auto konst = [](const std::vector<double>&) { return 7.5; };
  auto gz = finite_diff(konst, {0.3, -1.2});
  REQUIRE(gz[0] == 0.0);
  REQUIRE(gz[1] == 0.0);
}

TEST_CASE("composite chain gradient matches finite differences", "[tensor]") {
  Rng rng = derive_stream(5, StreamTag::test);
  std::vector<double> xv = gaussian_vector(rng, 3 * 4);
  std::vector<double> wv = gaussian_vector(rng, 2 * 3);

  auto eval = [&wv](const std::vector<double>& x) {
    Tape t;
    Var xa = t.constant(Shape{3, 4}, x);
    Var wa = t.constant(Shape{2, 3}, wv);
    return t.value(t.frobenius_sq(t.softmax_rows(t.matmul(wa, xa))));
  };

  Tensor x = Tensor::matrix(3, 4, xv, true);
  Tape t;
  Var loss = t.frobenius_sq(t.softmax_rows(t.matmul(t.constant(Shape{2, 3}, wv), t.leaf(x))));
  x.zero_grad();
  t.backward(loss);

  auto fd = finite_diff(eval, xv);
  for (size_t i = 0; i < fd.size(); ++i) {
    const double denom = std::max({std::fabs(fd[i]), std::fabs(x.grad[i]), 1e-8});
    REQUIRE(std::fabs(fd[i] - x.grad[i]) / denom < 1e-4);
  }
}

TEST_CASE("backward is linear in the loss", "[tensor]") {
  Rng rng = derive_stream(6, StreamTag::test);
  std::vector<double> xv = gaussian_vector(rng, 4 * 4);
  const double a = 0.7, b = -1.3;

  auto grads_of = [&xv](double ca, double cb) {
    Tensor x = Tensor::matrix(4, 4, xv, true);
    Tape t;
    Var leaf = t.leaf(x);
    Var f = t.frobenius_sq(leaf);
    Var g = t.sum_all(t.soft_threshold(leaf, 0.2));
    Var mix = t.weighted_sum({f, g}, {ca, cb});
    x.zero_grad();
    t.backward(mix);
    return x.grad;
  };

  auto gf = grads_of(1.0, 0.0);
  auto gg = grads_of(0.0, 1.0);
  auto gmix = grads_of(a, b);
  for (size_t i = 0; i < gmix.size(); ++i)
    REQUIRE_THAT(gmix[i], Catch::Matchers::WithinAbs(a * gf[i] + b * gg[i], 1e-10));
}

TEST_CASE("values and grads are bit-identical across reruns", "[tensor]") {
  auto run = [] {
    Rng rng = derive_stream(99, StreamTag::test);
    std::vector<double> xv = gaussian_vector(rng, 4 * 3);
    std::vector<double> wv = gaussian_vector(rng, 3 * 4);
    Tensor x = Tensor::matrix(4, 3, xv, true);
    Tape t;
    Var out = t.softmax_rows(t.matmul(t.leaf(x), t.constant(Shape{3, 4}, wv)));
    Var loss = t.frobenius_sq(out);
    x.zero_grad();
    t.backward(loss);
    std::pair<std::vector<double>, std::vector<double>> r{t.values(out), x.grad};
    return r;
  };
  auto first = run();
  auto second = run();
  REQUIRE(std::memcmp(first.first.data(), second.first.data(),
                      first.first.size() * sizeof(double)) == 0);
  REQUIRE(std::memcmp(first.second.data(), second.second.data(),
                      first.second.size() * sizeof(double)) == 0);
}

TEST_CASE("gradcheck suite passes and covers each case once", "[tensor][gradcheck]") {
  GradCheckOptions opt;
  opt.instances = 25;  // the acceptance run uses the full 100
  auto results = run_gradchecks(opt);
  REQUIRE(gradchecks_passed(results));

  std::set<std::string> names;
  for (const auto& r : results) {
    CAPTURE(r.name, r.max_rel_err);
    REQUIRE(r.ok);
    REQUIRE(r.max_rel_err <= opt.tol);
    REQUIRE(r.instances == opt.instances);
    REQUIRE(names.insert(r.name).second);  // no duplicates
  }
  for (const char* expected :
       {"matmul", "softmax_rows", "relu", "soft_threshold", "frobenius_sq", "cross_entropy",
        "ut_layer", "dust_layer", "generic_layer", "readout_chain"})
    REQUIRE(names.count(expected) == 1);
}

TEST_CASE("gradcheck harness catches a corrupted backward rule", "[tensor][gradcheck]") {
  GradCheckOptions opt;
  opt.instances = 5;
  opt.corrupt_relu = true;
  auto results = run_gradchecks(opt);
  REQUIRE_FALSE(gradchecks_passed(results));
  bool relu_failed = false;
  for (const auto& r : results)
    if (r.name == "relu") relu_failed = !r.ok;
  REQUIRE(relu_failed);
}
