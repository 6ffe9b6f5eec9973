#pragma once

// Unrolled layered models: generic attention blocks, the tied-weight variant
// with a symmetric mixing matrix, and unrolled sparse-coding (dictionary)
// layers.  Every forward runs on a Tape so the same code path serves training
// and evaluation; plain-value wrappers discard the tape afterwards.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "descent/dct.hpp"
#include "descent/errors.hpp"
#include "descent/rng.hpp"
#include "descent/tensor.hpp"

namespace descent {

enum class ModelKind { generic, ut, dust };
enum class Nonlin { relu, soft_threshold };

// columns: mixing weights over the T source positions of each output position
// sum to 1 (column-stochastic mixing matrix).  rows: literal row-wise softmax
// of the logit matrix.
enum class AttentionNorm { columns, rows };

struct AttentionLayerParams {
  Tensor q, k, v;  // D x N
  Tensor w;        // N x D
  Tensor u;        // N x N
};

struct UtLayerParams {
  Tensor shared;   // D x N, tied q = k = v
  Tensor ws_free;  // N x N; the mixing matrix used is (M + M^T) / 2
};

struct DustLayerParams {
  Tensor dict;  // m x codes
};

struct ReadoutParams {
  Tensor weight;  // C x N, applied to the mean-pooled representation
};

struct DustHypers {
  double lambda1 = 0.9;
  double lambda2 = 0.25;
  double c = 1.0;
};

// Architecture description; enough to rebuild parameter shapes.
struct ModelConfig {
  ModelKind kind = ModelKind::ut;
  int n = 16;      // representation rows (signal dim for dust)
  int t = 8;       // sequence length the model is trained on
  int d = 8;       // projection rows (generic/ut); code count (dust)
  int c = 0;       // classes; 0 = no readout
  int layers = 5;
  bool dust_shared_dict = false;  // one dictionary applied at every layer
  DustHypers dust;
  Nonlin nonlin = Nonlin::relu;  // generic layers only
  double nonlin_gamma = 0.1;     // soft_threshold width for generic layers
  AttentionNorm attn_norm = AttentionNorm::columns;
  double ut_eta = 1.0;  // convex-combination weight of the attention half-step
};

inline void validate_model_config(const ModelConfig& m) {
  if (m.n <= 0 || m.t <= 0 || m.d <= 0 || m.layers <= 0)
    throw ParamError("model config: dims and layer count must be positive");
  if (m.c < 0) throw ParamError("model config: class count must be >= 0");
  if (m.kind == ModelKind::dust) {
    if (m.d < m.n) throw ParamError("model config: dust needs code count >= signal dim");
    if (m.c > 0) throw ParamError("model config: dust models have no readout");
    if (m.dust.c <= 0.0) throw ParamError("model config: dust step constant c must be > 0");
    if (m.dust.lambda1 < 0.0) throw ParamError("model config: dust lambda1 must be >= 0");
  }
  if (!(m.ut_eta > 0.0 && m.ut_eta <= 1.0))
    throw ParamError("model config: ut_eta must be in (0, 1]");
  if (m.kind == ModelKind::generic && m.nonlin == Nonlin::soft_threshold && m.nonlin_gamma < 0.0)
    throw ParamError("model config: nonlin_gamma must be >= 0");
}

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct ModelParams {
  ModelConfig arch;
  std::vector<AttentionLayerParams> generic_layers;
  std::vector<UtLayerParams> ut_layers;
  std::vector<DustLayerParams> dust_layers;  // size 1 when dust_shared_dict
  std::optional<ReadoutParams> readout;

  int num_layers() const { return arch.layers; }

  const DustLayerParams& dust_layer(int l) const {
    return dust_layers[dust_layers.size() == 1 ? 0 : static_cast<size_t>(l)];
  }
  DustLayerParams& dust_layer(int l) {
    return dust_layers[dust_layers.size() == 1 ? 0 : static_cast<size_t>(l)];
  }

  std::vector<NamedParam> trainable() {
    std::vector<NamedParam> out;
    for (size_t i = 0; i < generic_layers.size(); ++i) {
      auto& lp = generic_layers[i];
      const std::string base = "layer" + std::to_string(i);
      out.push_back({base + ".q", &lp.q});
      out.push_back({base + ".k", &lp.k});
      out.push_back({base + ".v", &lp.v});
      out.push_back({base + ".w", &lp.w});
      out.push_back({base + ".u", &lp.u});
    }
    for (size_t i = 0; i < ut_layers.size(); ++i) {
      auto& lp = ut_layers[i];
      const std::string base = "layer" + std::to_string(i);
      out.push_back({base + ".shared", &lp.shared});
      out.push_back({base + ".ws_free", &lp.ws_free});
    }
    for (size_t i = 0; i < dust_layers.size(); ++i) {
      const std::string name =
          dust_layers.size() == 1 && arch.layers > 1 ? "dict.shared" : "layer" + std::to_string(i) + ".dict";
      out.push_back({name, &dust_layers[i].dict});
    }
    if (readout) out.push_back({"readout.weight", &readout->weight});
    return out;
  }
};

// ---- initialization --------------------------------------------------------

inline Tensor uniform_fanin_init(int rows, int cols, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(-s, s);
  return Tensor::matrix(rows, cols, std::move(v), true);
}

inline ModelParams make_model(const ModelConfig& cfg, uint64_t seed) {
  validate_model_config(cfg);
  ModelParams p;
  p.arch = cfg;
  Rng rng = derive_stream(seed, StreamTag::init);
  switch (cfg.kind) {
    case ModelKind::generic:
      for (int l = 0; l < cfg.layers; ++l) {
        AttentionLayerParams lp;
        lp.q = uniform_fanin_init(cfg.d, cfg.n, rng);
        lp.k = uniform_fanin_init(cfg.d, cfg.n, rng);
        lp.v = uniform_fanin_init(cfg.d, cfg.n, rng);
        lp.w = uniform_fanin_init(cfg.n, cfg.d, rng);
        lp.u = uniform_fanin_init(cfg.n, cfg.n, rng);
        p.generic_layers.push_back(std::move(lp));
      }
      break;
    case ModelKind::ut:
      for (int l = 0; l < cfg.layers; ++l) {
        UtLayerParams lp;
        lp.shared = uniform_fanin_init(cfg.d, cfg.n, rng);
        lp.ws_free = uniform_fanin_init(cfg.n, cfg.n, rng);
        p.ut_layers.push_back(std::move(lp));
      }
      break;
    case ModelKind::dust: {
      const int copies = cfg.dust_shared_dict ? 1 : cfg.layers;
      for (int i = 0; i < copies; ++i) {
        DustLayerParams lp;
        lp.dict = Tensor::matrix(cfg.n, cfg.d, dct_matrix(cfg.n, cfg.d), true);
        p.dust_layers.push_back(std::move(lp));
      }
      break;
    }
  }
  if (cfg.c > 0) p.readout = ReadoutParams{uniform_fanin_init(cfg.c, cfg.n, rng)};
  return p;
}

// ---- layer forwards --------------------------------------------------------

// Softmax of the logit matrix in the configured orientation.
inline Var attention_softmax(Tape& t, Var logits, AttentionNorm norm) {
  if (norm == AttentionNorm::rows) return t.softmax_rows(logits);
  return t.transpose(t.softmax_rows(t.transpose(logits)));
}

// Z = (V X) sm[(Q X)^T (K X)].
inline Var attention_forward(Tape& t, Var x, Var q, Var k, Var v,
                             AttentionNorm norm = AttentionNorm::columns) {
  Var qx = t.matmul(q, x);
  Var kx = t.matmul(k, x);
  Var logits = t.matmul(t.transpose(qx), kx);
  Var mix = attention_softmax(t, logits, norm);
  return t.matmul(t.matmul(v, x), mix);
}

inline Var apply_nonlin(Tape& t, Var x, Nonlin nl, double gamma) {
  return nl == Nonlin::relu ? t.relu(x) : t.soft_threshold(x, gamma);
}

// Y = nonlin(W Z + U X) with Z the attention output.
inline Var layer_forward(Tape& t, Var x, Var q, Var k, Var v, Var w, Var u,
                         Nonlin nl, double gamma, AttentionNorm norm) {
  Var z = attention_forward(t, x, q, k, v, norm);
  return apply_nonlin(t, t.add(t.matmul(w, z), t.matmul(u, x)), nl, gamma);
}

// Tied-weight layer: half-step X sm[(W1 X)^T (W1 X)] (optionally mixed with X
// by eta), then relu of the symmetric mixing matrix (M + M^T)/2 applied.
inline Var ut_layer_forward(Tape& t, Var x, Var shared, Var ws_free,
                            AttentionNorm norm = AttentionNorm::columns, double eta = 1.0) {
  Var y = t.matmul(shared, x);
  Var logits = t.matmul(t.transpose(y), y);
  Var half = t.matmul(x, attention_softmax(t, logits, norm));
  if (eta != 1.0) half = t.add(t.scale(x, 1.0 - eta), t.scale(half, eta));
  Var ws = t.scale(t.add(ws_free, t.transpose(ws_free)), 0.5);
  return t.relu(t.matmul(ws, half));
}

// One unrolled sparse-coding step with coupled update matrices derived from
// the dictionary:  H' = l2 * H sm(H^T D^T D H);
//                  H+ = soft_threshold((I - G/c) H' + D^T X / c, l1/c).
inline Var dust_layer_forward(Tape& t, Var h, Var x, Var dict, const DustHypers& hp,
                              AttentionNorm norm = AttentionNorm::columns) {
  if (hp.c <= 0.0) throw ParamError("dust_layer_forward: step constant c must be > 0");
  Var dt = t.transpose(dict);
  Var gram = t.matmul(dt, dict);
  Var logits = t.matmul(t.transpose(h), t.matmul(gram, h));
  Var half = t.scale(t.matmul(h, attention_softmax(t, logits, norm)), hp.lambda2);
  Var pre = t.add(t.sub(half, t.scale(t.matmul(gram, half), 1.0 / hp.c)),
                  t.scale(t.matmul(dt, x), 1.0 / hp.c));
  return t.soft_threshold(pre, hp.lambda1 / hp.c);
}

inline Var dust_reconstruct(Tape& t, Var dict, Var h) { return t.matmul(dict, h); }

// Mean-pool columns, linear map to class scores, softmax.  Returns a 1 x C
// row of probabilities.
inline Var readout_forward(Tape& t, Var x, Var weight) {
  Var pooled = t.mean_cols(x);
  Var scores = t.matmul(weight, pooled);
  return t.softmax_rows(t.transpose(scores));
}

// ---- whole-model traces ------------------------------------------------------

enum class Task { denoising, classification };

struct LossSpec {
  Task task = Task::denoising;
  const Tensor* clean = nullptr;  // denoising target
  int label = -1;                 // classification target
  std::optional<double> f0;       // fixed reference loss for slot 0
};

struct TraceVars {
  std::vector<Var> outputs;  // layers + 1 entries; slot 0 is the input
  std::vector<Var> losses;   // same length; slot 0 is f0 or the input's loss
};

// Per-layer outputs and losses as plain values.
struct LayerTrace {
  std::vector<Tensor> outputs;
  std::vector<double> losses;
};

namespace detail {

inline Var trace_loss(Tape& t, Var y, ModelParams& p, const LossSpec& spec) {
  if (spec.task == Task::denoising) {
    if (!spec.clean) throw ContractError("model trace: denoising needs a clean target");
    const int cols = t.shape(y).cols();
    return t.scale(t.frobenius_sq(t.sub(t.constant(*spec.clean), y)), 1.0 / cols);
  }
  if (!p.readout) throw ContractError("model trace: classification needs a readout");
  if (spec.label < 0) throw ContractError("model trace: classification needs a label");
  return t.cross_entropy(readout_forward(t, y, t.leaf(p.readout->weight)), spec.label);
}

}  // namespace detail

// Runs the unrolled model, recording every intermediate representation and
// its loss.  Slot 0 carries the raw input and either the configured f0 or the
// input's measured loss.
inline TraceVars model_trace(Tape& t, ModelParams& p, const Tensor& input, const LossSpec& spec) {
  validate_model_config(p.arch);
  if (!input.shape.is_matrix() || input.shape.rows() != p.arch.n)
    throw ShapeError("model trace: input " + input.shape.str() + " does not match model rows " +
                     std::to_string(p.arch.n));
  if (spec.task == Task::classification && p.arch.kind == ModelKind::dust)
    throw ParamError("model trace: dust models do not support classification");

  TraceVars tr;
  Var x = t.constant(input);
  tr.outputs.push_back(x);
  tr.losses.push_back(spec.f0 ? t.constant_scalar(*spec.f0) : detail::trace_loss(t, x, p, spec));

  const int big_l = p.num_layers();
  if (p.arch.kind == ModelKind::dust) {
    Var h = t.zeros(Shape{p.arch.d, input.shape.cols()});
    for (int l = 0; l < big_l; ++l) {
      Var dict = t.leaf(p.dust_layer(l).dict);
      h = dust_layer_forward(t, h, x, dict, p.arch.dust, p.arch.attn_norm);
      Var recon = dust_reconstruct(t, dict, h);
      tr.outputs.push_back(recon);
      tr.losses.push_back(detail::trace_loss(t, recon, p, spec));
    }
    return tr;
  }

  Var cur = x;
  for (int l = 0; l < big_l; ++l) {
    if (p.arch.kind == ModelKind::generic) {
      auto& lp = p.generic_layers[static_cast<size_t>(l)];
      cur = layer_forward(t, cur, t.leaf(lp.q), t.leaf(lp.k), t.leaf(lp.v), t.leaf(lp.w),
                          t.leaf(lp.u), p.arch.nonlin, p.arch.nonlin_gamma, p.arch.attn_norm);
    } else {
      auto& lp = p.ut_layers[static_cast<size_t>(l)];
      cur = ut_layer_forward(t, cur, t.leaf(lp.shared), t.leaf(lp.ws_free), p.arch.attn_norm,
                             p.arch.ut_eta);
    }
    tr.outputs.push_back(cur);
    tr.losses.push_back(detail::trace_loss(t, cur, p, spec));
  }
  return tr;
}

inline LayerTrace model_forward(ModelParams& p, const Tensor& input, const LossSpec& spec) {
  Tape t;
  TraceVars tr = model_trace(t, p, input, spec);
  LayerTrace out;
  for (size_t i = 0; i < tr.outputs.size(); ++i) {
    out.outputs.emplace_back(t.shape(tr.outputs[i]), t.values(tr.outputs[i]));
    out.losses.push_back(t.value(tr.losses[i]));
  }
  return out;
}

// Interaction-energy diagnostic of a projected point cloud:
//   -sum_{t,u} exp(-0.5 ||W x_t - W x_u||^2) + 0.5 sum_t ||W x_t||^2.
inline double energy_g1(const Tensor& x, const Tensor& w) {
  if (!x.shape.is_matrix() || !w.shape.is_matrix() || w.shape.cols() != x.shape.rows())
    throw ShapeError("energy_g1: incompatible shapes " + w.shape.str() + " and " + x.shape.str());
  const int d = w.shape.rows(), n = w.shape.cols(), t = x.shape.cols();
  std::vector<double> y(static_cast<size_t>(d) * t, 0.0);
  for (int i = 0; i < d; ++i)
    for (int p = 0; p < n; ++p) {
      const double wip = w.values[static_cast<size_t>(i) * n + p];
      if (wip == 0.0) continue;
      for (int j = 0; j < t; ++j) y[static_cast<size_t>(i) * t + j] += wip * x.values[static_cast<size_t>(p) * t + j];
    }
  double attract = 0.0, spread = 0.0;
  for (int a = 0; a < t; ++a) {
    for (int b = 0; b < t; ++b) {
      double dist_sq = 0.0;
      for (int i = 0; i < d; ++i) {
        const double diff = y[static_cast<size_t>(i) * t + a] - y[static_cast<size_t>(i) * t + b];
        dist_sq += diff * diff;
      }
      attract += std::exp(-0.5 * dist_sq);
    }
    double norm_sq = 0.0;
    for (int i = 0; i < d; ++i) norm_sq += y[static_cast<size_t>(i) * t + a] * y[static_cast<size_t>(i) * t + a];
    spread += norm_sq;
  }
  return -attract + 0.5 * spread;
}

}  // namespace descent
