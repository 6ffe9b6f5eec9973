#pragma once

// Primal-dual training under layerwise descent constraints.
//
// Constraints: f_l <= (1 - alpha_l) * f_{l-1} for l = 1..L, with an optional
// fixed reference f0 standing in for the l = 0 loss.  The saddle objective is
//   Lhat = f_L + sum_l lambda_l (f_l - (1 - alpha_l) f_{l-1}),
// minimized over parameters and ascended over lambda >= 0.  Resilient
// relaxation adds slacks u >= 0 with quadratic cost (beta/2)||u||^2, either
// as explicit variables (explicit_slack) or folded into a decaying dual
// update (weight_decay).
//
// The trainer is generic over a Problem, which exposes:
//   int layer_count() const;
//   int sample_count() const;
//   std::vector<NamedParam> trainable();
//   std::vector<Var> batch_losses(Tape&, const std::vector<int>& idx);
//     -> L + 1 batch-mean scalar losses, slot 0 = input representation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "descent/data.hpp"
#include "descent/errors.hpp"
#include "descent/log.hpp"
#include "descent/models.hpp"
#include "descent/rng.hpp"
#include "descent/tensor.hpp"

namespace descent {

struct ConstraintSchedule {
  std::vector<double> alpha;  // length L, one descent factor per transition
  double f0 = 0.0;            // fixed reference loss for the first constraint
  bool use_f0_for_first = false;
};

enum class ResilientMode { off, explicit_slack, weight_decay };

// weight_decay dual update: lambda <- max(0, factor * lambda + eta2 * g).
// step_scaled uses factor 1 - eta2/beta (the gradient of the quadratic
// regularizer folded into the ascent step); fixed uses factor 1 - 1/beta.
enum class DualDecay { step_scaled, fixed };

struct DualState {
  std::vector<double> lambda;  // length L, kept >= 0
  std::vector<double> slack;   // length L, kept >= 0 (explicit_slack mode)
  double beta = 1.0;
  double eta2 = 0.0;
  ResilientMode mode = ResilientMode::off;
  DualDecay decay = DualDecay::step_scaled;
};

inline DualState make_dual_state(int layers, double beta, double eta2, ResilientMode mode,
                                 DualDecay decay = DualDecay::step_scaled) {
  DualState d;
  d.lambda.assign(static_cast<size_t>(layers), 0.0);
  d.slack.assign(static_cast<size_t>(layers), 0.0);
  d.beta = beta;
  d.eta2 = eta2;
  d.mode = mode;
  d.decay = decay;
  return d;
}

inline void validate_schedule(const ConstraintSchedule& sched, int layers) {
  if (static_cast<int>(sched.alpha.size()) != layers)
    throw ParamError("schedule: " + std::to_string(sched.alpha.size()) + " alphas for " +
                     std::to_string(layers) + " layers");
  for (double a : sched.alpha)
    if (!(a > 0.0 && a < 1.0))
      log_warn("schedule: alpha " + std::to_string(a) + " outside (0, 1); constraints may be vacuous or infeasible");
}

// g_l = fhat_l - (1 - alpha_l) fhat_{l-1} - u_l, with fhat_0 replaced by the
// configured f0 when use_f0_for_first is set.  Pass empty u for zero slack.
inline std::vector<double> constraint_slacks(const std::vector<double>& losses,
                                             const ConstraintSchedule& sched,
                                             const std::vector<double>& u) {
  const int layers = static_cast<int>(losses.size()) - 1;
  if (layers < 1) throw ParamError("constraint_slacks: need at least one transition");
  if (static_cast<int>(sched.alpha.size()) != layers)
    throw ParamError("constraint_slacks: alpha size mismatch");
  if (!u.empty() && static_cast<int>(u.size()) != layers)
    throw ParamError("constraint_slacks: slack size mismatch");
  std::vector<double> g(static_cast<size_t>(layers));
  for (int l = 1; l <= layers; ++l) {
    const double prev = (l == 1 && sched.use_f0_for_first) ? sched.f0 : losses[static_cast<size_t>(l - 1)];
    g[static_cast<size_t>(l - 1)] = losses[static_cast<size_t>(l)] - (1.0 - sched.alpha[static_cast<size_t>(l - 1)]) * prev -
                                    (u.empty() ? 0.0 : u[static_cast<size_t>(l - 1)]);
  }
  return g;
}

// Builds the saddle objective on the tape from the L + 1 batch-mean losses.
// In explicit_slack mode the quadratic slack terms are added; pass a bound
// slack leaf to make them differentiable w.r.t. u as well (otherwise current
// slack values enter through `dual.slack` as constants).
inline Var lagrangian(Tape& t, const std::vector<Var>& losses, const ConstraintSchedule& sched,
                      const DualState& dual, Var slack_leaf = Var{}) {
  const int layers = static_cast<int>(losses.size()) - 1;
  if (layers < 1) throw ParamError("lagrangian: need at least one transition");
  if (static_cast<int>(sched.alpha.size()) != layers || static_cast<int>(dual.lambda.size()) != layers)
    throw ParamError("lagrangian: schedule/dual sized for a different depth");
  for (double lv : dual.lambda)
    if (lv < 0.0) throw ContractError("lagrangian: negative multiplier; dual state is corrupted");

  std::vector<Var> terms(losses.begin(), losses.end());
  if (sched.use_f0_for_first) terms[0] = t.constant_scalar(sched.f0);
  std::vector<double> coeff(static_cast<size_t>(layers) + 1, 0.0);
  coeff[static_cast<size_t>(layers)] = 1.0;
  for (int l = 1; l <= layers; ++l) {
    coeff[static_cast<size_t>(l)] += dual.lambda[static_cast<size_t>(l - 1)];
    coeff[static_cast<size_t>(l - 1)] -= dual.lambda[static_cast<size_t>(l - 1)] * (1.0 - sched.alpha[static_cast<size_t>(l - 1)]);
  }

  if (dual.mode == ResilientMode::explicit_slack) {
    Var u = slack_leaf;
    if (!u.valid()) u = t.constant(Tensor(Shape{layers}, dual.slack));
    terms.push_back(t.frobenius_sq(u));
    coeff.push_back(dual.beta / 2.0);
    terms.push_back(t.inner_const(u, dual.lambda));
    coeff.push_back(-1.0);
  }
  return t.weighted_sum(terms, coeff);
}

// Projected dual ascent; weight_decay mode shrinks lambda by the configured
// factor before the ascent step.
inline void dual_step(DualState& dual, const std::vector<double>& g) {
  if (g.size() != dual.lambda.size()) throw ParamError("dual_step: slack size mismatch");
  double factor = 1.0;
  if (dual.mode == ResilientMode::weight_decay) {
    if (!(dual.beta > 0.0)) throw ParamError("dual_step: beta must be > 0");
    factor = dual.decay == DualDecay::step_scaled ? 1.0 - dual.eta2 / dual.beta : 1.0 - 1.0 / dual.beta;
  }
  for (size_t l = 0; l < dual.lambda.size(); ++l) {
    const double next = factor * dual.lambda[l] + dual.eta2 * g[l];
    dual.lambda[l] = next > 0.0 ? next : 0.0;
  }
}

// Projected gradient step on the slack cost (beta/2)||u||^2 - u^T lambda;
// fixed point u = lambda / beta.
inline void resilient_slack_step(DualState& dual, double eta) {
  for (size_t l = 0; l < dual.slack.size(); ++l) {
    const double next = dual.slack[l] - eta * (dual.beta * dual.slack[l] - dual.lambda[l]);
    dual.slack[l] = next > 0.0 ? next : 0.0;
  }
}

// ---- primal optimizers -------------------------------------------------------

enum class Optimizer { sgd, adam };

struct AdamSlot {
  std::vector<double> m, v;
  int64_t step = 0;
};

inline void sgd_step(Tensor& p, double eta) {
  p.ensure_grad();
  for (size_t i = 0; i < p.values.size(); ++i) p.values[i] -= eta * p.grad[i];
}

inline void adam_step(Tensor& p, AdamSlot& slot, double eta, double beta1, double beta2, double eps) {
  p.ensure_grad();
  if (slot.m.size() != p.values.size()) {
    slot.m.assign(p.values.size(), 0.0);
    slot.v.assign(p.values.size(), 0.0);
    slot.step = 0;
  }
  ++slot.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(slot.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(slot.step));
  for (size_t i = 0; i < p.values.size(); ++i) {
    const double g = p.grad[i];
    slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
    slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
    const double mhat = slot.m[i] / bc1;
    const double vhat = slot.v[i] / bc2;
    p.values[i] -= eta * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---- training loop -------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double eta1 = 3e-4;  // primal step size
  double eta2 = 3e-2;  // dual step size (copied into DualState by callers)
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int primal_warmup_epochs = 1;  // constraints inactive, lambda frozen at 0
  bool resilience_restart_each_epoch = true;
  uint64_t seed = 1;
};

constexpr double kDivergenceGuard = 1e12;

struct LogRow {
  int epoch = 0;
  int batch = 0;
  std::vector<double> f;       // L + 1 batch-mean losses
  std::vector<double> lambda;  // state entering this batch
  std::vector<double> slack;   // state entering this batch
  std::vector<double> g;       // constraint slack used in this batch's dual update
  int64_t wall_ms = 0;         // 0 unless DESCENT_TIMING=1
};

using LogSink = std::function<void(const LogRow&)>;

struct TrainResult {
  std::vector<LogRow> rows;
  int batches_run = 0;
};

namespace detail {

inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size, uint64_t seed, int epoch) {
  Rng rng = derive_stream(seed, StreamTag::shuffle, static_cast<uint64_t>(epoch));
  std::vector<int> order = shuffled_indices(n, rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace detail

// One loop serves both regimes: `constrained = false` (erm_train) keeps
// lambda pinned at zero and never runs dual or slack updates, but builds the
// identical tape, so trajectories match the constrained path bit for bit
// whenever lambda stays zero.
template <class Problem>
TrainResult train(Problem& prob, const ConstraintSchedule& sched, DualState& dual,
                  const TrainConfig& cfg, bool constrained = true, const LogSink& sink = {}) {
  const int layers = prob.layer_count();
  validate_schedule(sched, layers);
  if (cfg.epochs < 0 || cfg.batch_size <= 0) throw ParamError("train: bad epochs or batch size");
  if (cfg.primal_warmup_epochs < 0) throw ParamError("train: warmup must be >= 0");
  if (static_cast<int>(dual.lambda.size()) != layers) throw ParamError("train: dual state sized for a different depth");
  if (dual.slack.size() != dual.lambda.size()) dual.slack.assign(dual.lambda.size(), 0.0);
  if (constrained && cfg.primal_warmup_epochs > 0) {
    dual.lambda.assign(dual.lambda.size(), 0.0);  // warmup freezes lambda at zero
    dual.slack.assign(dual.slack.size(), 0.0);
  }

  auto params = prob.trainable();
  std::vector<AdamSlot> slots(params.size());
  TrainResult result;
  const bool timing = timing_enabled();
  const std::vector<double> zero_slack(static_cast<size_t>(layers), 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool constraints_on = constrained && epoch >= cfg.primal_warmup_epochs;
    const auto batches = detail::epoch_batches(prob.sample_count(), cfg.batch_size, cfg.seed, epoch);
    for (size_t b = 0; b < batches.size(); ++b) {
      const auto t0 = std::chrono::steady_clock::now();
      LogRow row;
      row.epoch = epoch;
      row.batch = static_cast<int>(b);
      row.lambda = dual.lambda;
      row.slack = dual.slack;

      Tape tape;
      std::vector<Var> loss_vars = prob.batch_losses(tape, batches[b]);
      if (static_cast<int>(loss_vars.size()) != layers + 1)
        throw ContractError("train: problem produced " + std::to_string(loss_vars.size()) +
                            " losses for " + std::to_string(layers) + " layers");
      row.f.reserve(loss_vars.size());
      for (Var v : loss_vars) row.f.push_back(tape.value(v));

      Tensor slack_tensor;
      Var slack_leaf{};
      if (dual.mode == ResilientMode::explicit_slack) {
        slack_tensor = Tensor(Shape{layers}, dual.slack, true);
        slack_leaf = tape.leaf(slack_tensor);
      }
      const Var objective = lagrangian(tape, loss_vars, sched, dual, slack_leaf);
      const double objective_value = tape.value(objective);
      if (!std::isfinite(row.f.back()) || row.f.back() > kDivergenceGuard ||
          !std::isfinite(objective_value) || std::fabs(objective_value) > kDivergenceGuard) {
        if (sink) sink(row);
        result.rows.push_back(std::move(row));
        throw DivergenceError("train: objective diverged at epoch " + std::to_string(epoch) +
                              " batch " + std::to_string(b));
      }

      for (auto& np : params) np.tensor->zero_grad();
      tape.backward(objective);
      for (auto& np : params)
        for (double gv : np.tensor->grad)
          if (!std::isfinite(gv)) {
            if (sink) sink(row);
            result.rows.push_back(row);
            throw NumericError("train: gradient for " + np.name + " is not finite at epoch " +
                               std::to_string(epoch) + " batch " + std::to_string(b));
          }

      for (size_t i = 0; i < params.size(); ++i) {
        if (cfg.optimizer == Optimizer::sgd)
          sgd_step(*params[i].tensor, cfg.eta1);
        else
          adam_step(*params[i].tensor, slots[i], cfg.eta1, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      }

      if (constraints_on) {
        if (dual.mode == ResilientMode::explicit_slack) resilient_slack_step(dual, cfg.eta1);
        row.g = constraint_slacks(row.f, sched,
                                  dual.mode == ResilientMode::explicit_slack ? dual.slack : zero_slack);
        dual_step(dual, row.g);
      } else {
        row.g = constraint_slacks(row.f, sched, dual.slack);
      }

      if (timing)
        row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
      if (sink) sink(row);
      result.rows.push_back(std::move(row));
      ++result.batches_run;
    }
    if (constraints_on && dual.mode == ResilientMode::explicit_slack && cfg.resilience_restart_each_epoch)
      dual.slack.assign(dual.slack.size(), 0.0);  // resilience restart
  }
  return result;
}

// Plain risk minimization on the final-layer loss: the same loop with lambda
// pinned at zero and no dual activity.
template <class Problem>
TrainResult erm_train(Problem& prob, const TrainConfig& cfg, const LogSink& sink = {}) {
  const int layers = prob.layer_count();
  ConstraintSchedule sched;
  sched.alpha.assign(static_cast<size_t>(layers), 0.5);  // only logged; lambda stays 0
  DualState dual = make_dual_state(layers, 1.0, 0.0, ResilientMode::off);
  return train(prob, sched, dual, cfg, /*constrained=*/false, sink);
}

// ---- problem adapter for the unrolled models -----------------------------------

class ModelProblem {
 public:
  ModelProblem(ModelParams& params, const Dataset* data, Task task)
      : params_(params), data_(data), task_(task) {
    if (!data_) throw ParamError("ModelProblem: null dataset");
  }

  int layer_count() const { return params_.num_layers(); }
  int sample_count() const { return static_cast<int>(data_->size()); }
  std::vector<NamedParam> trainable() { return params_.trainable(); }

  // L + 1 batch-mean losses; slot 0 is the measured input-representation
  // loss (any configured f0 reference is substituted by the schedule inside
  // the Lagrangian, keeping the logged f column informative).
  std::vector<Var> batch_losses(Tape& t, const std::vector<int>& idx) {
    if (idx.empty()) throw ParamError("ModelProblem: empty batch");
    const int layers = layer_count();
    std::vector<std::vector<Var>> per_layer(static_cast<size_t>(layers) + 1);
    for (int i : idx) {
      const Sample& s = data_->at(static_cast<size_t>(i));
      LossSpec spec;
      spec.task = task_;
      spec.clean = &s.clean;
      spec.label = s.label;
      TraceVars tr = model_trace(t, params_, s.observed, spec);
      for (size_t l = 0; l < tr.losses.size(); ++l) per_layer[l].push_back(tr.losses[l]);
    }
    const std::vector<double> w(idx.size(), 1.0 / static_cast<double>(idx.size()));
    std::vector<Var> means;
    means.reserve(per_layer.size());
    for (auto& vars : per_layer) means.push_back(t.weighted_sum(vars, w));
    return means;
  }

 private:
  ModelParams& params_;
  const Dataset* data_;
  Task task_;
};

}  // namespace descent
