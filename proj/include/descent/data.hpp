#pragma once

// Synthetic sequence tasks at desk scale.
//
// Denoising: clean N x T matrices, either smooth (random combinations of the
// first ceil(N/4) DCT basis vectors per column) or sparse_dct (exactly
// ceil(N/8) nonzero DCT coefficients per column).  Classification: frozen
// class mean patterns plus unit Gaussian deviations.  perturb() adds
// gamma * sigma_x Gaussian noise, where sigma_x is the global standard
// deviation of the clean training entries.
//
// Every sample draws from its own counter-derived stream, so datasets are
// identical regardless of generation order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "descent/dct.hpp"
#include "descent/errors.hpp"
#include "descent/rng.hpp"
#include "descent/tensor.hpp"

namespace descent {

struct Sample {
  Tensor clean;     // N x T
  Tensor observed;  // clean + noise; equals clean until perturbed
  int label = -1;   // classification only
};

using Dataset = std::vector<Sample>;

enum class DataStructure { smooth, sparse_dct };

// Test-time noise grid used throughout the experiments.
inline const std::vector<double>& default_gamma_grid() {
  static const std::vector<double> grid = {0.01, 0.05, 0.1, 0.2, 0.25, 0.5, 0.75, 1.0, 1.5};
  return grid;
}

inline Dataset gen_denoising(int count, int n, int t, DataStructure structure, uint64_t seed) {
  if (count < 0 || n <= 0 || t <= 0) throw ParamError("gen_denoising: bad count or dims");
  const std::vector<double> basis = dct_matrix(n, n);  // orthonormal, column k = atom k
  const int k_smooth = (n + 3) / 4;
  const int k_sparse = (n + 7) / 8;
  Dataset out;
  out.reserve(static_cast<size_t>(count));
  for (int s = 0; s < count; ++s) {
    Rng rng = derive_stream(seed, StreamTag::data_clean, static_cast<uint64_t>(s));
    Tensor clean = Tensor::zeros(Shape{n, t});
    for (int col = 0; col < t; ++col) {
      std::vector<double> coeff(static_cast<size_t>(n), 0.0);
      if (structure == DataStructure::smooth) {
        for (int j = 0; j < k_smooth; ++j) coeff[static_cast<size_t>(j)] = rng.gaussian();
      } else {
        std::vector<int> order = shuffled_indices(n, rng);
        for (int j = 0; j < k_sparse; ++j) coeff[static_cast<size_t>(order[j])] = rng.gaussian();
      }
      for (int i = 0; i < n; ++i) {
        double v = 0.0;
        for (int j = 0; j < n; ++j)
          if (coeff[static_cast<size_t>(j)] != 0.0) v += basis[static_cast<size_t>(i) * n + j] * coeff[static_cast<size_t>(j)];
        clean.at(i, col) = v;
      }
    }
    Sample smp;
    smp.observed = clean;
    smp.clean = std::move(clean);
    out.push_back(std::move(smp));
  }
  return out;
}

struct ClassData {
  Dataset samples;
  std::vector<Tensor> means;  // frozen per-class mean patterns
};

inline ClassData gen_classification(int count, int n, int t, int c, double separation, uint64_t seed) {
  if (count < 0 || n <= 0 || t <= 0 || c < 2) throw ParamError("gen_classification: bad count or dims");
  if (separation <= 0.0) throw ParamError("gen_classification: separation must be > 0");
  ClassData out;
  for (int cls = 0; cls < c; ++cls) {
    Rng rng = derive_stream(seed, StreamTag::data_label, static_cast<uint64_t>(cls));
    // One random column repeated across the sequence: the class signal then
    // survives the readout's column pooling instead of averaging away.
    const std::vector<double> col = gaussian_vector(rng, static_cast<size_t>(n));
    std::vector<double> pattern(static_cast<size_t>(n) * t);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < t; ++j) pattern[static_cast<size_t>(i) * t + j] = col[static_cast<size_t>(i)];
    out.means.push_back(Tensor(Shape{n, t}, std::move(pattern)));
  }
  // Rescale so the minimum pairwise distance equals `separation` exactly.
  double min_dist = 0.0;
  bool first = true;
  for (int a = 0; a < c; ++a)
    for (int b = a + 1; b < c; ++b) {
      double d2 = 0.0;
      for (size_t i = 0; i < out.means[a].values.size(); ++i) {
        const double diff = out.means[a].values[i] - out.means[b].values[i];
        d2 += diff * diff;
      }
      const double d = std::sqrt(d2);
      if (first || d < min_dist) min_dist = d;
      first = false;
    }
  if (min_dist <= 0.0) throw NumericError("gen_classification: degenerate class means");
  const double scale = separation / min_dist;
  for (auto& m : out.means)
    for (auto& v : m.values) v *= scale;

  out.samples.reserve(static_cast<size_t>(count));
  for (int s = 0; s < count; ++s) {
    const int label = s % c;  // balanced by construction
    Rng rng = derive_stream(seed, StreamTag::data_clean, static_cast<uint64_t>(s));
    Tensor clean = out.means[static_cast<size_t>(label)];
    clean.requires_grad = false;
    for (auto& v : clean.values) v += rng.gaussian();
    Sample smp;
    smp.observed = clean;
    smp.clean = std::move(clean);
    smp.label = label;
    out.samples.push_back(std::move(smp));
  }
  return out;
}

// Global standard deviation over every clean entry (population formula).
inline double measure_sigma_x(const Dataset& data) {
  double sum = 0.0, sum_sq = 0.0;
  size_t n = 0;
  for (const auto& s : data)
    for (double v : s.clean.values) {
      sum += v;
      sum_sq += v * v;
      ++n;
    }
  if (n == 0) throw ParamError("measure_sigma_x: empty dataset");
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  return std::sqrt(var > 0.0 ? var : 0.0);
}

// observed = clean + gamma * sigma_x * g, with a fresh stream per (gamma,
// sample index) so results do not depend on iteration order.
inline void perturb(Dataset& data, double gamma, double sigma_x, uint64_t seed,
                    StreamTag tag = StreamTag::data_noise) {
  if (gamma < 0.0) throw ParamError("perturb: gamma must be >= 0");
  const uint64_t gamma_key = std::bit_cast<uint64_t>(gamma);
  const double sigma = gamma * sigma_x;
  for (size_t i = 0; i < data.size(); ++i) {
    Rng rng = derive_stream(seed ^ gamma_key, tag, static_cast<uint64_t>(i));
    Tensor obs = data[i].clean;
    obs.requires_grad = false;
    if (sigma > 0.0)
      for (auto& v : obs.values) v += sigma * rng.gaussian();
    data[i].observed = std::move(obs);
  }
}

struct EvalSet {
  double gamma = 0.0;
  bool ood = false;  // gamma > gamma_train
  Dataset samples;
};

// One evaluation set per grid point: identical clean data, freshly drawn
// noise at each gamma.  `heldout` must be disjoint from the training split
// (the callers partition by sample index).
inline std::vector<EvalSet> split_id_ood(const Dataset& heldout, double gamma_train,
                                         const std::vector<double>& gamma_grid, double sigma_x,
                                         uint64_t seed) {
  std::vector<EvalSet> out;
  out.reserve(gamma_grid.size());
  for (double g : gamma_grid) {
    EvalSet set;
    set.gamma = g;
    set.ood = g > gamma_train;
    set.samples = heldout;
    perturb(set.samples, g, sigma_x, seed, StreamTag::eval_noise);
    out.push_back(std::move(set));
  }
  return out;
}

inline int nearest_mean_label(const Tensor& x, const std::vector<Tensor>& means) {
  int best = 0;
  double best_d = 0.0;
  for (size_t c = 0; c < means.size(); ++c) {
    double d2 = 0.0;
    for (size_t i = 0; i < x.values.size(); ++i) {
      const double diff = x.values[i] - means[c].values[i];
      d2 += diff * diff;
    }
    if (c == 0 || d2 < best_d) {
      best_d = d2;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// ---- dataset cache (optional; regeneration from seed is always possible) ----
//
// Layout (little-endian): magic "DSCNTDS1", u32 version (1), u32 task kind
// (0 denoising, 1 classification), i32 n, t, c, count, u64 seed, then per
// sample the clean matrix row-major (and an i32 label for classification).

namespace detail {
constexpr char kCacheMagic[8] = {'D', 'S', 'C', 'N', 'T', 'D', 'S', '1'};
}

struct DatasetCacheHeader {
  uint32_t task = 0;
  int32_t n = 0, t = 0, c = 0, count = 0;
  uint64_t seed = 0;
};

inline void save_dataset_cache(const std::string& path, const DatasetCacheHeader& h, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ParamError("dataset cache: cannot open " + path + " for writing");
  os.write(detail::kCacheMagic, 8);
  const uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&h.task), 4);
  os.write(reinterpret_cast<const char*>(&h.n), 4);
  os.write(reinterpret_cast<const char*>(&h.t), 4);
  os.write(reinterpret_cast<const char*>(&h.c), 4);
  os.write(reinterpret_cast<const char*>(&h.count), 4);
  os.write(reinterpret_cast<const char*>(&h.seed), 8);
  for (const auto& s : data) {
    for (double v : s.clean.values) os.write(reinterpret_cast<const char*>(&v), 8);
    for (double v : s.observed.values) os.write(reinterpret_cast<const char*>(&v), 8);
    if (h.task == 1) {
      const int32_t label = s.label;
      os.write(reinterpret_cast<const char*>(&label), 4);
    }
  }
  if (!os) throw ParamError("dataset cache: write to " + path + " failed");
}

inline Dataset load_dataset_cache(const std::string& path, DatasetCacheHeader& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParamError("dataset cache: cannot open " + path);
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCacheMagic, 8) != 0)
    throw ParamError("dataset cache: " + path + " is not a dataset cache");
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw ParamError("dataset cache: unsupported version " + std::to_string(version));
  is.read(reinterpret_cast<char*>(&h.task), 4);
  is.read(reinterpret_cast<char*>(&h.n), 4);
  is.read(reinterpret_cast<char*>(&h.t), 4);
  is.read(reinterpret_cast<char*>(&h.c), 4);
  is.read(reinterpret_cast<char*>(&h.count), 4);
  is.read(reinterpret_cast<char*>(&h.seed), 8);
  if (!is || h.n <= 0 || h.t <= 0 || h.count < 0) throw ParamError("dataset cache: bad header in " + path);
  Dataset data;
  data.reserve(static_cast<size_t>(h.count));
  for (int sidx = 0; sidx < h.count; ++sidx) {
    std::vector<double> clean(static_cast<size_t>(h.n) * h.t);
    for (auto& x : clean) is.read(reinterpret_cast<char*>(&x), 8);
    std::vector<double> observed(static_cast<size_t>(h.n) * h.t);
    for (auto& x : observed) is.read(reinterpret_cast<char*>(&x), 8);
    Sample s;
    s.clean = Tensor::matrix(h.n, h.t, std::move(clean));
    s.observed = Tensor::matrix(h.n, h.t, std::move(observed));
    if (h.task == 1) {
      int32_t label = -1;
      is.read(reinterpret_cast<char*>(&label), 4);
      s.label = label;
    }
    if (!is) throw ParamError("dataset cache: truncated payload in " + path);
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace descent
