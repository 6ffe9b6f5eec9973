#pragma once

// Evaluation: RMSE / accuracy, layerwise loss profiles, per-sample descent
// ratios, and noise-grid sweeps with trapezoid AUC.  All reductions use a
// fixed fan-in-2 pairwise tree, so results are insensitive to evaluation
// order at the 1e-10 level.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "descent/csv.hpp"
#include "descent/data.hpp"
#include "descent/errors.hpp"
#include "descent/models.hpp"
#include "descent/tensor.hpp"

namespace descent {

// Pairwise tree reduction with fan-in 2.
inline double tree_sum(std::vector<double> v) {
  if (v.empty()) return 0.0;
  while (v.size() > 1) {
    size_t w = 0;
    for (size_t i = 0; i + 1 < v.size(); i += 2) v[w++] = v[i] + v[i + 1];
    if (v.size() % 2 == 1) v[w++] = v.back();
    v.resize(w);
  }
  return v[0];
}

inline double tree_mean(std::vector<double> v) {
  if (v.empty()) throw ParamError("tree_mean: empty input");
  const double n = static_cast<double>(v.size());
  return tree_sum(std::move(v)) / n;
}

// sqrt of the mean squared Frobenius distance between prediction/truth pairs.
inline double rmse(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths) {
  if (preds.size() != truths.size() || preds.empty())
    throw ParamError("rmse: need matching non-empty prediction/truth lists");
  std::vector<double> sq(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].shape != truths[i].shape)
      throw ShapeError("rmse: shape mismatch " + preds[i].shape.str() + " vs " + truths[i].shape.str());
    double s = 0.0;
    for (size_t j = 0; j < preds[i].values.size(); ++j) {
      const double d = preds[i].values[j] - truths[i].values[j];
      s += d * d;
    }
    sq[i] = s;
  }
  return std::sqrt(tree_mean(std::move(sq)));
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual) {
  if (predicted.size() != actual.size() || predicted.empty())
    throw ParamError("accuracy: need matching non-empty label lists");
  int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == actual[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline int argmax_label(const Tensor& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.values.size(); ++i)
    if (probs.values[i] > probs.values[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

namespace detail {

inline LossSpec eval_spec(const Sample& s, Task task) {
  LossSpec spec;
  spec.task = task;
  spec.clean = &s.clean;
  spec.label = s.label;
  return spec;  // slot 0 stays measured: evaluation never substitutes f0
}

inline Tensor readout_probs(ModelParams& p, const Tensor& representation) {
  if (!p.readout) throw ContractError("evaluate: classification model has no readout");
  Tape t;
  Var probs = readout_forward(t, t.constant(representation), t.leaf(p.readout->weight));
  return Tensor(t.shape(probs), t.values(probs));
}

}  // namespace detail

// Batch-mean loss at every layer (slot 0 = input representation), reduced
// with the pairwise tree in sample order.
inline std::vector<double> layerwise_eval(ModelParams& p, const Dataset& data, Task task) {
  if (data.empty()) throw ParamError("layerwise_eval: empty dataset");
  const size_t slots = static_cast<size_t>(p.num_layers()) + 1;
  std::vector<std::vector<double>> per_layer(slots);
  for (auto& v : per_layer) v.reserve(data.size());
  for (const auto& s : data) {
    LayerTrace tr = model_forward(p, s.observed, detail::eval_spec(s, task));
    for (size_t l = 0; l < slots; ++l) per_layer[l].push_back(tr.losses[l]);
  }
  std::vector<double> means(slots);
  for (size_t l = 0; l < slots; ++l) means[l] = tree_mean(std::move(per_layer[l]));
  return means;
}

struct EvalResult {
  std::vector<double> layer_losses;  // L + 1 means
  double metric = 0.0;               // rmse (denoising) or accuracy (classification)
};

// One pass over the dataset: layerwise means plus the headline metric of the
// final layer.
inline EvalResult evaluate(ModelParams& p, const Dataset& data, Task task) {
  if (data.empty()) throw ParamError("evaluate: empty dataset");
  const size_t slots = static_cast<size_t>(p.num_layers()) + 1;
  std::vector<std::vector<double>> per_layer(slots);
  std::vector<Tensor> finals, cleans;
  std::vector<int> pred_labels, true_labels;
  for (const auto& s : data) {
    LayerTrace tr = model_forward(p, s.observed, detail::eval_spec(s, task));
    for (size_t l = 0; l < slots; ++l) per_layer[l].push_back(tr.losses[l]);
    if (task == Task::denoising) {
      finals.push_back(tr.outputs.back());
      cleans.push_back(s.clean);
    } else {
      pred_labels.push_back(argmax_label(detail::readout_probs(p, tr.outputs.back())));
      true_labels.push_back(s.label);
    }
  }
  EvalResult out;
  out.layer_losses.resize(slots);
  for (size_t l = 0; l < slots; ++l) out.layer_losses[l] = tree_mean(std::move(per_layer[l]));
  out.metric = task == Task::denoising ? rmse(finals, cleans) : accuracy(pred_labels, true_labels);
  return out;
}

// ---- descent-ratio statistics -------------------------------------------------

struct RatioStats {
  double mean = 0.0;
  double median = 0.0;
  double fraction_descending = 0.0;    // ratios strictly below 1
  double fraction_meeting_alpha = 0.0; // ratios <= 1 - alpha
  double alpha = 0.0;
  int64_t count = 0;    // ratios included
  int64_t skipped = 0;  // denominators <= 1e-12, excluded
  std::vector<int64_t> histogram;  // 50 bins over [0, 2] plus one overflow bin
};

constexpr int kRatioBins = 50;
constexpr double kRatioHistMax = 2.0;
constexpr double kRatioDenomFloor = 1e-12;

inline RatioStats ratio_stats_from(const std::vector<double>& ratios, int64_t skipped, double alpha) {
  RatioStats st;
  st.alpha = alpha;
  st.skipped = skipped;
  st.count = static_cast<int64_t>(ratios.size());
  st.histogram.assign(kRatioBins + 1, 0);
  if (ratios.empty()) return st;
  int64_t below_1 = 0, meeting = 0;
  for (double r : ratios) {
    below_1 += r < 1.0;
    meeting += r <= 1.0 - alpha;
    int bin;
    if (r > kRatioHistMax)
      bin = kRatioBins;  // overflow
    else if (r == kRatioHistMax)
      bin = kRatioBins - 1;
    else
      bin = static_cast<int>(r / (kRatioHistMax / kRatioBins));
    ++st.histogram[static_cast<size_t>(bin)];
  }
  st.mean = tree_mean(std::vector<double>(ratios));
  std::vector<double> sorted(ratios);
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  st.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  st.fraction_descending = static_cast<double>(below_1) / static_cast<double>(n);
  st.fraction_meeting_alpha = static_cast<double>(meeting) / static_cast<double>(n);
  return st;
}

// Per-sample, per-transition ratios f_l / f_{l-1} over the whole dataset.
inline RatioStats ratio_stats(ModelParams& p, const Dataset& data, Task task, double alpha) {
  if (data.empty()) throw ParamError("ratio_stats: empty dataset");
  std::vector<double> ratios;
  int64_t skipped = 0;
  for (const auto& s : data) {
    LayerTrace tr = model_forward(p, s.observed, detail::eval_spec(s, task));
    for (size_t l = 1; l < tr.losses.size(); ++l) {
      const double denom = tr.losses[l - 1];
      if (denom <= kRatioDenomFloor) {
        ++skipped;
        continue;
      }
      ratios.push_back(tr.losses[l] / denom);
    }
  }
  return ratio_stats_from(ratios, skipped, alpha);
}

// ---- sweeps and AUC ---------------------------------------------------------------

struct AucResult {
  double raw = 0.0;         // trapezoid integral over the grid
  double normalized = 0.0;  // raw divided by the grid span
};

// Trapezoid rule over a strictly ascending grid.  A single-point grid
// degenerates to that point's value for both fields.
inline AucResult trapezoid_auc(const std::vector<double>& gammas, const std::vector<double>& values) {
  if (gammas.size() != values.size() || gammas.empty())
    throw ParamError("trapezoid_auc: need matching non-empty grids");
  for (size_t i = 1; i < gammas.size(); ++i)
    if (!(gammas[i] > gammas[i - 1])) throw ParamError("trapezoid_auc: grid must be strictly ascending");
  AucResult out;
  if (gammas.size() == 1) {
    out.raw = values[0];
    out.normalized = values[0];
    return out;
  }
  double acc = 0.0;
  for (size_t i = 1; i < gammas.size(); ++i)
    acc += (gammas[i] - gammas[i - 1]) * 0.5 * (values[i] + values[i - 1]);
  out.raw = acc;
  out.normalized = acc / (gammas.back() - gammas.front());
  return out;
}

struct SweepModelResult {
  std::string tag;
  std::vector<double> metric;                     // per gamma
  std::vector<std::vector<double>> layer_losses;  // per gamma, L + 1 entries
  AucResult auc;
};

struct SweepResult {
  Task task = Task::denoising;
  uint64_t seed = 0;
  std::vector<double> gammas;
  std::vector<SweepModelResult> models;
};

// Evaluates each tagged model on every per-gamma evaluation set.
inline SweepResult sweep(const std::vector<std::pair<std::string, ModelParams*>>& models,
                         const std::vector<EvalSet>& sets, Task task, uint64_t seed) {
  if (models.empty() || sets.empty()) throw ParamError("sweep: need at least one model and one set");
  SweepResult out;
  out.task = task;
  out.seed = seed;
  for (const auto& set : sets) out.gammas.push_back(set.gamma);
  for (size_t i = 1; i < out.gammas.size(); ++i)
    if (!(out.gammas[i] > out.gammas[i - 1])) throw ParamError("sweep: gamma grid must be strictly ascending");
  for (const auto& [tag, params] : models) {
    SweepModelResult mr;
    mr.tag = tag;
    for (const auto& set : sets) {
      EvalResult ev = evaluate(*params, set.samples, task);
      mr.metric.push_back(ev.metric);
      mr.layer_losses.push_back(std::move(ev.layer_losses));
    }
    mr.auc = trapezoid_auc(out.gammas, mr.metric);
    out.models.push_back(std::move(mr));
  }
  return out;
}

// ---- metrics CSV -------------------------------------------------------------------
//
// Columns: gamma,metric,auc_flag,layer_index,mean_loss,model_tag,seed.
// Per model block: one row per (gamma ascending, layer ascending) carrying
// that gamma's metric alongside the layer's mean loss (auc_flag 0), then two
// AUC summary rows (auc_flag 1 normalized, 2 raw) with empty gamma/mean_loss
// and layer_index -1.

inline const char* kMetricsHeader = "gamma,metric,auc_flag,layer_index,mean_loss,model_tag,seed";

inline std::string metrics_csv_string(const SweepResult& r) {
  std::string out = std::string(kMetricsHeader) + "\n";
  const std::string seed_str = fmt_int(static_cast<int64_t>(r.seed));
  for (const auto& m : r.models) {
    for (size_t gi = 0; gi < r.gammas.size(); ++gi)
      for (size_t l = 0; l < m.layer_losses[gi].size(); ++l)
        out += join_csv({fmt_double(r.gammas[gi]), fmt_double(m.metric[gi]), "0",
                         fmt_int(static_cast<int64_t>(l)), fmt_double(m.layer_losses[gi][l]), m.tag,
                         seed_str});
    out += join_csv({"", fmt_double(m.auc.normalized), "1", "-1", "", m.tag, seed_str});
    out += join_csv({"", fmt_double(m.auc.raw), "2", "-1", "", m.tag, seed_str});
  }
  return out;
}

inline void write_metrics_csv(const std::string& path, const SweepResult& r) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ParamError("metrics csv: cannot open " + path + " for writing");
  os << metrics_csv_string(r);
  if (!os) throw ParamError("metrics csv: write to " + path + " failed");
}

// Re-parses a metrics CSV into a SweepResult (task/seed: task is not stored,
// callers supply it; seed comes from the rows).  Used by the round-trip
// checks and the report tooling.
inline SweepResult read_metrics_csv(const std::string& path, Task task = Task::denoising) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParamError("metrics csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParamError("metrics csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw ParamError("metrics csv: unexpected header in " + path);
  SweepResult out;
  out.task = task;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 7) throw ParamError("metrics csv: malformed row in " + path);
    const std::string& tag = cells[5];
    out.seed = static_cast<uint64_t>(parse_int(cells[6]));
    if (out.models.empty() || out.models.back().tag != tag) {
      SweepModelResult mr;
      mr.tag = tag;
      out.models.push_back(std::move(mr));
    }
    SweepModelResult& m = out.models.back();
    const int64_t auc_flag = parse_int(cells[2]);
    if (auc_flag == 1) {
      m.auc.normalized = parse_double(cells[1]);
      continue;
    }
    if (auc_flag == 2) {
      m.auc.raw = parse_double(cells[1]);
      continue;
    }
    const double gamma = parse_double(cells[0]);
    const int64_t layer = parse_int(cells[3]);
    if (layer == 0) {
      if (out.models.size() == 1) out.gammas.push_back(gamma);
      m.metric.push_back(parse_double(cells[1]));
      m.layer_losses.emplace_back();
    }
    m.layer_losses.back().push_back(parse_double(cells[4]));
  }
  return out;
}

inline void write_layer_losses_csv(const std::string& path, const SweepResult& r) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ParamError("layer csv: cannot open " + path + " for writing");
  os << "gamma,layer_index,mean_loss,model_tag,seed\n";
  const std::string seed_str = fmt_int(static_cast<int64_t>(r.seed));
  for (const auto& m : r.models)
    for (size_t gi = 0; gi < r.gammas.size(); ++gi)
      for (size_t l = 0; l < m.layer_losses[gi].size(); ++l)
        os << join_csv({fmt_double(r.gammas[gi]), fmt_int(static_cast<int64_t>(l)),
                        fmt_double(m.layer_losses[gi][l]), m.tag, seed_str});
  if (!os) throw ParamError("layer csv: write to " + path + " failed");
}

}  // namespace descent
