#pragma once

// Gradient checks: every differentiable tape op plus the composed layer
// graphs, each verified against central finite differences on many random
// instances.  Instances whose nonlinearity inputs land within a margin of a
// kink are resampled so the finite-difference oracle stays valid.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "descent/errors.hpp"
#include "descent/models.hpp"
#include "descent/rng.hpp"
#include "descent/tensor.hpp"

namespace descent {

struct GradCheckOptions {
  int instances = 100;
  double tol = 1e-4;
  double kink_margin = 1e-3;
  double fd_step = 1e-5;
  uint64_t seed = 42;
  // Fault-injection fixture: offsets the reported relu gradient so the
  // harness itself can be shown to catch a wrong derivative.
  bool corrupt_relu = false;
};

struct GradCheckResult {
  std::string name;
  int instances = 0;
  double max_rel_err = 0.0;
  bool ok = false;
};

namespace detail {

struct BuiltGraph {
  Var loss;
  // Pre-nonlinearity nodes and their kink offsets (0 for relu, the shrinkage
  // threshold for soft_threshold); sampling rejects instances whose entries
  // come within the margin of |v| == offset.
  std::vector<std::pair<Var, double>> kinks;
};

struct InstanceGraph {
  std::vector<Tensor> inputs;
  std::function<BuiltGraph(Tape&, const std::vector<Var>&)> graph;
};

using CaseMaker = std::function<InstanceGraph(Rng&)>;

struct CheckCase {
  std::string name;
  CaseMaker make;
};

inline Tensor rand_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(r) * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::matrix(r, c, std::move(v), true);
}

inline std::vector<double> rand_weights(Rng& rng, size_t n) {
  std::vector<double> w(n);
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return w;
}

// Scalar probe: fixed random linear functional of a matrix-valued output.
inline BuiltGraph probed(Tape& t, Var out, const std::vector<double>& w) {
  return {t.inner_const(out, w), {}};
}

inline std::vector<CheckCase> all_cases() {
  std::vector<CheckCase> cases;
  auto add = [&cases](std::string name, CaseMaker make) {
    cases.push_back({std::move(name), std::move(make)});
  };

  add("matmul", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 3, 4), rand_matrix(rng, 4, 5)};
    auto w = rand_weights(rng, 15);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.matmul(v[0], v[1]), w);
    };
    return ig;
  });

  add("transpose", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 3, 5)};
    auto w = rand_weights(rng, 15);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.transpose(v[0]), w);
    };
    return ig;
  });

  add("add", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 3), rand_matrix(rng, 4, 3)};
    auto w = rand_weights(rng, 12);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.add(v[0], v[1]), w);
    };
    return ig;
  });

  add("sub", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 3), rand_matrix(rng, 4, 3)};
    auto w = rand_weights(rng, 12);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.sub(v[0], v[1]), w);
    };
    return ig;
  });

  add("scale", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 3, 3)};
    auto w = rand_weights(rng, 9);
    const double c = rng.uniform(-2.0, 2.0);
    ig.graph = [w, c](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.scale(v[0], c), w);
    };
    return ig;
  });

  add("add_const", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 3, 3)};
    auto w = rand_weights(rng, 9);
    const double c = rng.uniform(-2.0, 2.0);
    ig.graph = [w, c](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.add_const(v[0], c), w);
    };
    return ig;
  });

  add("relu", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 5)};
    auto w = rand_weights(rng, 20);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      BuiltGraph g = probed(t, t.relu(v[0]), w);
      g.kinks.push_back({v[0], 0.0});
      return g;
    };
    return ig;
  });

  add("soft_threshold", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 5)};
    auto w = rand_weights(rng, 20);
    const double gamma = rng.uniform(0.1, 0.5);
    ig.graph = [w, gamma](Tape& t, const std::vector<Var>& v) {
      BuiltGraph g = probed(t, t.soft_threshold(v[0], gamma), w);
      g.kinks.push_back({v[0], gamma});
      return g;
    };
    return ig;
  });

  add("softmax_rows", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 6, -2.0, 2.0)};
    auto w = rand_weights(rng, 24);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.softmax_rows(v[0]), w);
    };
    return ig;
  });

  add("frobenius_sq", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 4)};
    ig.graph = [](Tape& t, const std::vector<Var>& v) {
      return BuiltGraph{t.frobenius_sq(v[0]), {}};
    };
    return ig;
  });

  add("mean_cols", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 4, 6)};
    auto w = rand_weights(rng, 4);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return probed(t, t.mean_cols(v[0]), w);
    };
    return ig;
  });

  add("sum_all", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 5, 3)};
    ig.graph = [](Tape& t, const std::vector<Var>& v) {
      return BuiltGraph{t.sum_all(v[0]), {}};
    };
    return ig;
  });

  add("weighted_sum", [](Rng& rng) {
    InstanceGraph ig;
    for (int i = 0; i < 4; ++i) ig.inputs.push_back(Tensor::scalar(rng.uniform(-2.0, 2.0), true));
    auto w = rand_weights(rng, 4);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return BuiltGraph{t.weighted_sum(v, w), {}};
    };
    return ig;
  });

  add("inner_const", [](Rng& rng) {
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, 3, 4)};
    auto w = rand_weights(rng, 12);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      return BuiltGraph{t.inner_const(v[0], w), {}};
    };
    return ig;
  });

  add("cross_entropy", [](Rng& rng) {
    // Sample a point strictly inside the simplex so neither the sum check
    // nor the log clamp interferes with the finite-difference probes.
    const int c = 4;
    std::vector<double> u(c), p(c);
    double sum = 0.0;
    for (auto& x : u) {
      x = rng.uniform(0.2, 1.0);
      sum += x;
    }
    for (int i = 0; i < c; ++i) p[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] / sum;
    InstanceGraph ig;
    ig.inputs = {Tensor::matrix(1, c, std::move(p), true)};
    const int label = rng.uniform_int(c);
    ig.graph = [label](Tape& t, const std::vector<Var>& v) {
      return BuiltGraph{t.cross_entropy(v[0], label), {}};
    };
    return ig;
  });

  // Composed graphs.  These mirror the layer-forward bodies with the
  // pre-nonlinearity node kept visible for kink rejection; the exact layer
  // functions are pinned against dense oracles in the model tests.
  add("generic_layer", [](Rng& rng) {
    const int n = 5, tt = 4;
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, n, tt), rand_matrix(rng, n, n), rand_matrix(rng, n, n),
                 rand_matrix(rng, n, n), rand_matrix(rng, n, n), rand_matrix(rng, n, n)};
    auto w = rand_weights(rng, static_cast<size_t>(n) * tt);
    ig.graph = [w](Tape& t, const std::vector<Var>& v) {
      Var z = attention_forward(t, v[0], v[1], v[2], v[3], AttentionNorm::columns);
      Var pre = t.add(t.matmul(v[4], z), t.matmul(v[5], v[0]));
      BuiltGraph g = probed(t, t.relu(pre), w);
      g.kinks.push_back({pre, 0.0});
      return g;
    };
    return ig;
  });

  add("ut_layer", [](Rng& rng) {
    const int n = 5, tt = 4;
    const double eta = 0.7;
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, n, tt), rand_matrix(rng, n, n), rand_matrix(rng, n, n)};
    auto w = rand_weights(rng, static_cast<size_t>(n) * tt);
    ig.graph = [w, eta](Tape& t, const std::vector<Var>& v) {
      Var y = t.matmul(v[1], v[0]);
      Var half = t.matmul(v[0], attention_softmax(t, t.matmul(t.transpose(y), y), AttentionNorm::columns));
      half = t.add(t.scale(v[0], 1.0 - eta), t.scale(half, eta));
      Var ws = t.scale(t.add(v[2], t.transpose(v[2])), 0.5);
      Var pre = t.matmul(ws, half);
      BuiltGraph g = probed(t, t.relu(pre), w);
      g.kinks.push_back({pre, 0.0});
      return g;
    };
    return ig;
  });

  add("dust_layer", [](Rng& rng) {
    const int n = 4, d = 6, tt = 3;
    const DustHypers hp{0.3, 0.25, 1.3};
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, d, tt), rand_matrix(rng, n, tt), rand_matrix(rng, n, d)};
    auto w = rand_weights(rng, static_cast<size_t>(d) * tt);
    ig.graph = [w, hp](Tape& t, const std::vector<Var>& v) {
      Var dt = t.transpose(v[2]);
      Var gram = t.matmul(dt, v[2]);
      Var logits = t.matmul(t.transpose(v[0]), t.matmul(gram, v[0]));
      Var half = t.scale(t.matmul(v[0], attention_softmax(t, logits, AttentionNorm::columns)), hp.lambda2);
      Var pre = t.add(t.sub(half, t.scale(t.matmul(gram, half), 1.0 / hp.c)),
                      t.scale(t.matmul(dt, v[1]), 1.0 / hp.c));
      BuiltGraph g = probed(t, t.soft_threshold(pre, hp.lambda1 / hp.c), w);
      g.kinks.push_back({pre, hp.lambda1 / hp.c});
      return g;
    };
    return ig;
  });

  add("readout_chain", [](Rng& rng) {
    const int n = 5, tt = 4, c = 3;
    InstanceGraph ig;
    ig.inputs = {rand_matrix(rng, n, tt), rand_matrix(rng, c, n)};
    const int label = rng.uniform_int(c);
    ig.graph = [label](Tape& t, const std::vector<Var>& v) {
      return BuiltGraph{t.cross_entropy(readout_forward(t, v[0], v[1]), label), {}};
    };
    return ig;
  });

  return cases;
}

inline double min_kink_distance(const Tape& t, const BuiltGraph& g) {
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& [var, offset] : g.kinks)
    for (double x : t.values(var)) dmin = std::min(dmin, std::fabs(std::fabs(x) - offset));
  return dmin;
}

inline GradCheckResult run_case(const CheckCase& c, const GradCheckOptions& opt, Rng& rng) {
  GradCheckResult res;
  res.name = c.name;
  const bool corrupt = opt.corrupt_relu && c.name == "relu";
  for (int inst = 0; inst < opt.instances; ++inst) {
    InstanceGraph ig;
    std::unique_ptr<Tape> tape;
    BuiltGraph built;
    bool accepted = false;
    for (int attempt = 0; attempt < 200; ++attempt) {
      tape.reset();  // the tape binds the previous inputs; drop it first
      ig = c.make(rng);
      tape = std::make_unique<Tape>();
      std::vector<Var> vars;
      vars.reserve(ig.inputs.size());
      for (auto& in : ig.inputs) vars.push_back(tape->leaf(in));
      built = ig.graph(*tape, vars);
      if (min_kink_distance(*tape, built) > opt.kink_margin) {
        accepted = true;
        break;
      }
    }
    if (!accepted) throw ContractError("gradcheck " + c.name + ": could not sample away from kinks");
    tape->backward(built.loss);

    for (size_t i = 0; i < ig.inputs.size(); ++i) {
      std::vector<double> analytic =
          ig.inputs[i].grad.empty() ? std::vector<double>(ig.inputs[i].values.size(), 0.0)
                                    : ig.inputs[i].grad;
      if (corrupt)
        for (auto& gv : analytic) gv += 5e-3;
      auto value_at = [&ig, i](const Tensor& probe) {
        Tape t2;
        std::vector<Var> vs;
        vs.reserve(ig.inputs.size());
        for (size_t j = 0; j < ig.inputs.size(); ++j)
          vs.push_back(t2.constant(j == i ? probe : ig.inputs[j]));
        return t2.value(ig.graph(t2, vs).loss);
      };
      const auto fd = finite_diff_grad(value_at, ig.inputs[i], opt.fd_step);
      res.max_rel_err = std::max(res.max_rel_err, grad_rel_error(analytic, fd));
    }
    ++res.instances;
  }
  res.ok = res.max_rel_err <= opt.tol;
  return res;
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& opt = {}) {
  std::vector<GradCheckResult> out;
  const auto cases = detail::all_cases();
  for (size_t i = 0; i < cases.size(); ++i) {
    Rng rng(derive_stream(opt.seed, StreamTag::test, i));
    out.push_back(detail::run_case(cases[i], opt, rng));
  }
  return out;
}

inline bool gradchecks_passed(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results)
    if (!r.ok) return false;
  return !results.empty();
}

}  // namespace descent
