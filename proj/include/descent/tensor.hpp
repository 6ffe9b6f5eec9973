#pragma once

// Dense double-precision tensors and a reverse-mode tape.
//
// Tensors are row-major with an explicit shape (rank 0 = scalar, rank 1 =
// vector, rank 2 = matrix).  A Tape records operations as they execute;
// backward() walks the record in reverse and accumulates gradients into every
// bound tensor with requires_grad set.  Everything is single-threaded and
// evaluation order is fixed, so identical inputs give bit-identical values
// and gradients across runs.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "descent/errors.hpp"

namespace descent {

struct Shape {
  std::vector<int> dims;  // empty = scalar

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) {}
  explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

  int rank() const { return static_cast<int>(dims.size()); }
  bool is_scalar() const { return dims.empty(); }
  bool is_matrix() const { return dims.size() == 2; }
  int rows() const { return dims.at(0); }
  int cols() const { return dims.at(1); }

  size_t numel() const {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    return n;
  }

  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return dims != o.dims; }

  std::string str() const {
    if (dims.empty()) return "scalar";
    std::string s;
    for (size_t i = 0; i < dims.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims[i]);
    }
    return s;
  }
};

struct Tensor {
  Shape shape;
  std::vector<double> values;  // row-major
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches it

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v, bool rg = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    if (values.size() != shape.numel())
      throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " + shape.str());
  }

  static Tensor scalar(double v, bool rg = false) { return Tensor(Shape{}, {v}, rg); }

  static Tensor zeros(Shape s, bool rg = false) {
    size_t n = s.numel();
    return Tensor(std::move(s), std::vector<double>(n, 0.0), rg);
  }

  static Tensor matrix(int r, int c, std::vector<double> v, bool rg = false) {
    return Tensor(Shape{r, c}, std::move(v), rg);
  }

  double& at(int i, int j) { return values[static_cast<size_t>(i) * shape.cols() + j]; }
  double at(int i, int j) const { return values[static_cast<size_t>(i) * shape.cols() + j]; }

  void zero_grad() { grad.assign(values.size(), 0.0); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- node construction -------------------------------------------------

  // Binds an external tensor; repeated calls with the same tensor return the
  // same node, so its gradient contributions accumulate in one place.
  Var leaf(Tensor& t) {
    auto it = leaf_cache_.find(&t);
    if (it != leaf_cache_.end()) return Var{it->second};
    Var v = push(t.shape, t.values, t.requires_grad);
    node(v).bound = &t;
    leaf_cache_.emplace(&t, v.id);
    return v;
  }

  Var constant(const Tensor& t) { return push(t.shape, t.values, false); }
  Var constant(Shape s, std::vector<double> vals) { return push(std::move(s), std::move(vals), false); }
  Var constant_scalar(double v) { return push(Shape{}, {v}, false); }
  Var zeros(Shape s) {
    size_t n = s.numel();
    return push(std::move(s), std::vector<double>(n, 0.0), false);
  }

  // ---- access ------------------------------------------------------------

  const Shape& shape(Var v) const { return node(v).shape; }
  const std::vector<double>& values(Var v) const { return node(v).val; }
  const std::vector<double>& grad(Var v) const { return node(v).grad; }
  size_t node_count() const { return nodes_.size(); }

  double value(Var v) const {
    const auto& n = node(v);
    if (!n.shape.is_scalar()) throw ContractError("value: node is not scalar (" + n.shape.str() + ")");
    return n.val[0];
  }

  // ---- operations ----------------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& na = node(a);
    const auto& nb = node(b);
    if (!na.shape.is_matrix() || !nb.shape.is_matrix() || na.shape.cols() != nb.shape.rows())
      throw ShapeError("matmul: incompatible shapes " + na.shape.str() + " and " + nb.shape.str());
    const int m = na.shape.rows(), k = na.shape.cols(), n = nb.shape.cols();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const double aip = na.val[static_cast<size_t>(i) * k + p];
        if (aip == 0.0) continue;
        const double* brow = &nb.val[static_cast<size_t>(p) * n];
        double* orow = &out[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    check_finite("matmul", out);
    Var c = push(Shape{m, n}, std::move(out), na.requires_grad || nb.requires_grad);
    if (node(c).requires_grad)
      node(c).back = [a, b, c, m, k, n](Tape& t) {
        const auto& g = t.node(c).grad;
        if (t.node(a).requires_grad) {
          auto& ga = t.node(a).grad;
          const auto& bval = t.node(b).val;
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = &g[static_cast<size_t>(i) * n];
              const double* brow = &bval[static_cast<size_t>(p) * n];
              for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[static_cast<size_t>(i) * k + p] += acc;
            }
        }
        if (t.node(b).requires_grad) {
          auto& gb = t.node(b).grad;
          const auto& aval = t.node(a).val;
          for (int p = 0; p < k; ++p)
            for (int i = 0; i < m; ++i) {
              const double aip = aval[static_cast<size_t>(i) * k + p];
              if (aip == 0.0) continue;
              const double* grow = &g[static_cast<size_t>(i) * n];
              double* gbrow = &gb[static_cast<size_t>(p) * n];
              for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
        }
      };
    return c;
  }

  Var transpose(Var a) {
    const auto& na = node(a);
    if (!na.shape.is_matrix()) throw ShapeError("transpose: need matrix, got " + na.shape.str());
    const int m = na.shape.rows(), n = na.shape.cols();
    std::vector<double> out(na.val.size());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = na.val[static_cast<size_t>(i) * n + j];
    Var c = push(Shape{n, m}, std::move(out), na.requires_grad);
    if (node(c).requires_grad)
      node(c).back = [a, c, m, n](Tape& t) {
        const auto& g = t.node(c).grad;
        auto& ga = t.node(a).grad;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
      };
    return c;
  }

  Var add(Var a, Var b) { return add_sub(a, b, +1.0, "add"); }
  Var sub(Var a, Var b) { return add_sub(a, b, -1.0, "sub"); }

  Var scale(Var a, double c) {
    const auto& na = node(a);
    std::vector<double> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * na.val[i];
    check_finite("scale", out);
    Var r = push(na.shape, std::move(out), na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r, c](Tape& t) {
        const auto& g = t.node(r).grad;
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
      };
    return r;
  }

  Var add_const(Var a, double c) {
    const auto& na = node(a);
    std::vector<double> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = na.val[i] + c;
    check_finite("add_const", out);
    Var r = push(na.shape, std::move(out), na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r](Tape& t) {
        const auto& g = t.node(r).grad;
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      };
    return r;
  }

  Var relu(Var a) {
    const auto& na = node(a);
    std::vector<double> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = na.val[i] > 0.0 ? na.val[i] : 0.0;
    Var r = push(na.shape, std::move(out), na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r](Tape& t) {
        const auto& g = t.node(r).grad;
        const auto& x = t.node(a).val;
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) ga[i] += g[i];
      };
    return r;
  }

  // Soft threshold sign(u) * max(0, |u| - gamma); subgradient 0 at the kink.
  Var soft_threshold(Var a, double gamma) {
    if (!(gamma >= 0.0)) throw ParamError("soft_threshold: gamma must be >= 0");
    const auto& na = node(a);
    std::vector<double> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) {
      const double u = na.val[i];
      const double mag = std::fabs(u) - gamma;
      out[i] = mag > 0.0 ? (u > 0.0 ? mag : -mag) : 0.0;
    }
    check_finite("soft_threshold", out);
    Var r = push(na.shape, std::move(out), na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r, gamma](Tape& t) {
        const auto& g = t.node(r).grad;
        const auto& x = t.node(a).val;
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < g.size(); ++i)
          if (std::fabs(x[i]) > gamma) ga[i] += g[i];
      };
    return r;
  }

  // Row-wise softmax with max subtraction; every row sums to 1 exactly as computed.
  Var softmax_rows(Var a) {
    const auto& na = node(a);
    if (!na.shape.is_matrix()) throw ShapeError("softmax_rows: need matrix, got " + na.shape.str());
    const int m = na.shape.rows(), n = na.shape.cols();
    std::vector<double> out(na.val.size());
    for (int i = 0; i < m; ++i) {
      const double* row = &na.val[static_cast<size_t>(i) * n];
      double* orow = &out[static_cast<size_t>(i) * n];
      double mx = row[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
    check_finite("softmax_rows", out);
    Var r = push(na.shape, std::move(out), na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r, m, n](Tape& t) {
        const auto& g = t.node(r).grad;
        const auto& y = t.node(r).val;
        auto& ga = t.node(a).grad;
        for (int i = 0; i < m; ++i) {
          const double* grow = &g[static_cast<size_t>(i) * n];
          const double* yrow = &y[static_cast<size_t>(i) * n];
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += grow[j] * yrow[j];
          double* garow = &ga[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) garow[j] += yrow[j] * (grow[j] - dot);
        }
      };
    return r;
  }

  Var frobenius_sq(Var a) {
    const auto& na = node(a);
    double s = 0.0;
    for (double x : na.val) s += x * x;
    if (!std::isfinite(s)) throw NumericError("frobenius_sq: non-finite value produced");
    Var r = push(Shape{}, {s}, na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r](Tape& t) {
        const double g = t.node(r).grad[0];
        const auto& x = t.node(a).val;
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * x[i] * g;
      };
    return r;
  }

  // Mean over columns: m x n -> column vector m x 1.
  Var mean_cols(Var a) {
    const auto& na = node(a);
    if (!na.shape.is_matrix()) throw ShapeError("mean_cols: need matrix, got " + na.shape.str());
    const int m = na.shape.rows(), n = na.shape.cols();
    std::vector<double> out(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      const double* row = &na.val[static_cast<size_t>(i) * n];
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += row[j];
      out[static_cast<size_t>(i)] = s / n;
    }
    check_finite("mean_cols", out);
    Var r = push(Shape{m, 1}, std::move(out), na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r, m, n](Tape& t) {
        const auto& g = t.node(r).grad;
        auto& ga = t.node(a).grad;
        for (int i = 0; i < m; ++i) {
          const double gi = g[static_cast<size_t>(i)] / n;
          double* garow = &ga[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) garow[j] += gi;
        }
      };
    return r;
  }

  Var sum_all(Var a) {
    const auto& na = node(a);
    double s = 0.0;
    for (double x : na.val) s += x;
    if (!std::isfinite(s)) throw NumericError("sum_all: non-finite value produced");
    Var r = push(Shape{}, {s}, na.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, r](Tape& t) {
        const double g = t.node(r).grad[0];
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
      };
    return r;
  }

  // Fixed-order linear combination of scalar nodes.
  Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& w) {
    if (xs.size() != w.size()) throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " terms vs " + std::to_string(w.size()) + " weights");
    double s = 0.0;
    bool rg = false;
    for (size_t i = 0; i < xs.size(); ++i) {
      const auto& n = node(xs[i]);
      if (!n.shape.is_scalar()) throw ShapeError("weighted_sum: term " + std::to_string(i) + " is " + n.shape.str() + ", not scalar");
      s += w[i] * n.val[0];
      rg = rg || n.requires_grad;
    }
    if (!std::isfinite(s)) throw NumericError("weighted_sum: non-finite value produced");
    Var r = push(Shape{}, {s}, rg);
    if (rg) {
      std::vector<Var> terms = xs;
      std::vector<double> weights = w;
      node(r).back = [terms, weights, r](Tape& t) {
        const double g = t.node(r).grad[0];
        for (size_t i = 0; i < terms.size(); ++i)
          if (t.node(terms[i]).requires_grad) t.node(terms[i]).grad[0] += weights[i] * g;
      };
    }
    return r;
  }

  // Inner product with a constant coefficient vector: sum_i w[i] * a[i].
  Var inner_const(Var a, const std::vector<double>& w) {
    const auto& na = node(a);
    if (na.val.size() != w.size())
      throw ShapeError("inner_const: " + std::to_string(na.val.size()) + " entries vs " + std::to_string(w.size()) + " coefficients");
    double s = 0.0;
    for (size_t i = 0; i < w.size(); ++i) s += na.val[i] * w[i];
    if (!std::isfinite(s)) throw NumericError("inner_const: non-finite value produced");
    Var r = push(Shape{}, {s}, na.requires_grad);
    if (node(r).requires_grad) {
      std::vector<double> weights = w;
      node(r).back = [a, r, weights](Tape& t) {
        const double g = t.node(r).grad[0];
        auto& ga = t.node(a).grad;
        for (size_t i = 0; i < weights.size(); ++i) ga[i] += weights[i] * g;
      };
    }
    return r;
  }

  // Negative log-likelihood of a probability vector (probs, not logits),
  // clamped at 1e-12 before the log.
  Var cross_entropy(Var probs, int label) {
    const auto& np = node(probs);
    const int c = static_cast<int>(np.val.size());
    if (label < 0 || label >= c)
      throw ParamError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    double sum = 0.0;
    for (double p : np.val) sum += p;
    // Tolerance loose enough to admit finite-difference probes of one entry.
    if (std::fabs(sum - 1.0) > 1e-4)
      throw ContractError("cross_entropy: probabilities sum to " + std::to_string(sum) + ", expected 1");
    const double p = np.val[static_cast<size_t>(label)];
    const double clamped = p > 1e-12 ? p : 1e-12;
    Var r = push(Shape{}, {-std::log(clamped)}, np.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [probs, r, label](Tape& t) {
        const double g = t.node(r).grad[0];
        const double pv = t.node(probs).val[static_cast<size_t>(label)];
        if (pv > 1e-12) t.node(probs).grad[static_cast<size_t>(label)] += -g / pv;
      };
    return r;
  }

  // ---- reverse pass --------------------------------------------------------

  void backward(Var loss) {
    if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
      throw ContractError("backward: loss is not on this tape");
    auto& ln = node(loss);
    if (!ln.shape.is_scalar()) throw ContractError("backward: loss must be scalar, got " + ln.shape.str());
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    ln.grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.back) n.back(*this);
    }
    for (auto& n : nodes_) {
      if (n.bound && n.bound->requires_grad) {
        n.bound->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        check_finite("backward", n.bound->grad);
      }
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* bound = nullptr;
    std::function<void(Tape&)> back;
  };

  Node& node(Var v) { return nodes_.at(static_cast<size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<size_t>(v.id)); }

  Var push(Shape s, std::vector<double> vals, bool rg) {
    if (vals.size() != s.numel())
      throw ShapeError("tape: " + std::to_string(vals.size()) + " values for shape " + s.str());
    Node n;
    n.shape = std::move(s);
    n.val = std::move(vals);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var add_sub(Var a, Var b, double sign, const char* name) {
    const auto& na = node(a);
    const auto& nb = node(b);
    if (na.shape != nb.shape)
      throw ShapeError(std::string(name) + ": shapes differ, " + na.shape.str() + " vs " + nb.shape.str());
    std::vector<double> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = na.val[i] + sign * nb.val[i];
    check_finite(name, out);
    Var r = push(na.shape, std::move(out), na.requires_grad || nb.requires_grad);
    if (node(r).requires_grad)
      node(r).back = [a, b, r, sign](Tape& t) {
        const auto& g = t.node(r).grad;
        if (t.node(a).requires_grad) {
          auto& ga = t.node(a).grad;
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.node(b).requires_grad) {
          auto& gb = t.node(b).grad;
          for (size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        }
      };
    return r;
  }

  std::vector<Node> nodes_;
  std::map<const Tensor*, int> leaf_cache_;
};

// Central finite differences, the reference oracle for gradients.  Evaluates
// f at x +/- h*e_i coordinate by coordinate; completely independent of the
// tape's backward rules.
inline std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                            const Tensor& x, double h = 1e-5) {
  std::vector<double> g(x.values.size());
  Tensor probe = x;
  for (size_t i = 0; i < x.values.size(); ++i) {
    const double orig = x.values[i];
    probe.values[i] = orig + h;
    const double fp = f(probe);
    probe.values[i] = orig - h;
    const double fm = f(probe);
    probe.values[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ||a - b||_inf / (1 + ||b||_inf): relative for large gradients, absolute
// near zero, so dead-zone coordinates do not blow up the ratio.
inline double grad_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("grad_rel_error: size mismatch");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(a[i] - b[i]));
    den = std::max(den, std::fabs(b[i]));
  }
  return num / (1.0 + den);
}

}  // namespace descent
