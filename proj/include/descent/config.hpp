#pragma once

// Experiment configuration: a flat, sectioned key = value text format.
// Sections and keys are fixed; unknown keys and missing required fields are
// errors that name the offending field.  serialize_config() emits a canonical
// form (fixed section/key order, shortest round-trip numbers) used for the
// config copy in run directories and for the run-directory hash.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "descent/csv.hpp"
#include "descent/errors.hpp"
#include "descent/models.hpp"
#include "descent/trainer.hpp"

namespace descent {

struct ExperimentConfig {
  Task task = Task::denoising;
  ModelConfig model;

  // data
  int train_count = 2048;
  int eval_count = 512;
  DataStructure structure = DataStructure::smooth;
  double gamma_train = 0.2;
  double separation = 2.563;  // classification class-mean distance
  std::vector<double> gamma_grid = default_gamma_grid();

  // constraints
  std::vector<double> alpha;  // expanded to one entry per layer
  double f0 = 0.0;
  bool use_f0_for_first = false;

  // dual
  ResilientMode mode = ResilientMode::weight_decay;
  double beta = 1.0;
  DualDecay decay = DualDecay::step_scaled;

  // train (seed field is overwritten per run)
  TrainConfig train;
  bool train_constrained = true;
  bool train_unconstrained = true;
  std::vector<uint64_t> seeds = {1, 2, 3};
};

namespace detail {

struct RawConfig {
  std::map<std::string, std::string> kv;  // "section.key" -> value
  std::set<std::string> consumed;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  std::string require(const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing required field: " + key, key);
    consumed.insert(key);
    return it->second;
  }

  std::string optional(const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    return it->second;
  }
};

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline RawConfig tokenize_config(const std::string& text) {
  RawConfig raw;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    const std::string full = section + "." + key;
    if (raw.kv.count(full)) throw ConfigError("duplicate field: " + full, full);
    raw.kv[full] = value;
  }
  return raw;
}

inline double to_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  try {
    return parse_double(v);
  } catch (const ParamError&) {
    throw ConfigError("field " + key + ": '" + v + "' is not a number", key);
  }
}

inline int to_int(const std::string& key, const std::string& v) {
  try {
    return static_cast<int>(parse_int(v));
  } catch (const ParamError&) {
    throw ConfigError("field " + key + ": '" + v + "' is not an integer", key);
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("field " + key + ": expected true or false, got '" + v + "'", key);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : v) {
    if (ch == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

inline std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& p : split_list(v)) out.push_back(to_double(key, p));
  return out;
}

template <class T>
T to_enum(const std::string& key, const std::string& v,
          const std::vector<std::pair<std::string, T>>& table) {
  for (const auto& [name, val] : table)
    if (v == name) return val;
  std::string expected;
  for (const auto& [name, val] : table) {
    if (!expected.empty()) expected += " | ";
    expected += name;
  }
  throw ConfigError("field " + key + ": '" + v + "' is not one of " + expected, key);
}

inline const std::vector<std::pair<std::string, Task>>& task_names() {
  static const std::vector<std::pair<std::string, Task>> t = {
      {"denoising", Task::denoising}, {"classification", Task::classification}};
  return t;
}
inline const std::vector<std::pair<std::string, ModelKind>>& kind_names() {
  static const std::vector<std::pair<std::string, ModelKind>> t = {
      {"generic", ModelKind::generic}, {"ut", ModelKind::ut}, {"dust", ModelKind::dust}};
  return t;
}
inline const std::vector<std::pair<std::string, Nonlin>>& nonlin_names() {
  static const std::vector<std::pair<std::string, Nonlin>> t = {
      {"relu", Nonlin::relu}, {"soft_threshold", Nonlin::soft_threshold}};
  return t;
}
inline const std::vector<std::pair<std::string, AttentionNorm>>& attn_names() {
  static const std::vector<std::pair<std::string, AttentionNorm>> t = {
      {"columns", AttentionNorm::columns}, {"rows", AttentionNorm::rows}};
  return t;
}
inline const std::vector<std::pair<std::string, DataStructure>>& structure_names() {
  static const std::vector<std::pair<std::string, DataStructure>> t = {
      {"smooth", DataStructure::smooth}, {"sparse_dct", DataStructure::sparse_dct}};
  return t;
}
inline const std::vector<std::pair<std::string, ResilientMode>>& mode_names() {
  static const std::vector<std::pair<std::string, ResilientMode>> t = {
      {"off", ResilientMode::off},
      {"explicit_slack", ResilientMode::explicit_slack},
      {"weight_decay", ResilientMode::weight_decay}};
  return t;
}
inline const std::vector<std::pair<std::string, DualDecay>>& decay_names() {
  static const std::vector<std::pair<std::string, DualDecay>> t = {
      {"step_scaled", DualDecay::step_scaled}, {"fixed", DualDecay::fixed}};
  return t;
}
inline const std::vector<std::pair<std::string, Optimizer>>& optimizer_names() {
  static const std::vector<std::pair<std::string, Optimizer>> t = {
      {"adam", Optimizer::adam}, {"sgd", Optimizer::sgd}};
  return t;
}

template <class T>
std::string enum_name(T v, const std::vector<std::pair<std::string, T>>& table) {
  for (const auto& [name, val] : table)
    if (val == v) return name;
  throw ParamError("enum_name: unmapped value");
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& c) {
  using detail::to_double;
  if (c.task == Task::classification) {
    if (c.model.kind == ModelKind::dust)
      throw ConfigError("field experiment.task: classification is not supported for dust models", "experiment.task");
    if (c.model.c < 2) throw ConfigError("field dims.c: classification needs at least 2 classes", "dims.c");
    if (!(c.separation > 0.0)) throw ConfigError("field data.separation: must be > 0", "data.separation");
  } else if (c.model.c != 0) {
    throw ConfigError("field dims.c: denoising models take no readout (set c = 0)", "dims.c");
  }
  try {
    validate_model_config(c.model);
  } catch (const ParamError& e) {  // config mistakes always surface as ConfigError
    throw ConfigError(std::string("field dims: ") + e.what(), "dims");
  }
  if (c.train_count <= 0) throw ConfigError("field data.train_count: must be > 0", "data.train_count");
  if (c.eval_count <= 0) throw ConfigError("field data.eval_count: must be > 0", "data.eval_count");
  if (c.gamma_train < 0.0) throw ConfigError("field data.gamma_train: must be >= 0", "data.gamma_train");
  if (c.gamma_grid.empty()) throw ConfigError("field data.gamma_grid: must be non-empty", "data.gamma_grid");
  for (size_t i = 1; i < c.gamma_grid.size(); ++i)
    if (!(c.gamma_grid[i] > c.gamma_grid[i - 1]))
      throw ConfigError("field data.gamma_grid: must be strictly ascending", "data.gamma_grid");
  if (static_cast<int>(c.alpha.size()) != c.model.layers)
    throw ConfigError("field constraints.alpha: need 1 or layers values", "constraints.alpha");
  if (!(c.beta > 0.0)) throw ConfigError("field dual.beta: must be > 0", "dual.beta");
  if (c.train.eta2 < 0.0) throw ConfigError("field dual.eta2: must be >= 0", "dual.eta2");
  if (!(c.train.eta1 > 0.0)) throw ConfigError("field train.eta1: must be > 0", "train.eta1");
  if (c.train.epochs < 0) throw ConfigError("field train.epochs: must be >= 0", "train.epochs");
  if (c.train.batch_size <= 0) throw ConfigError("field train.batch_size: must be > 0", "train.batch_size");
  if (c.train.primal_warmup_epochs < 0)
    throw ConfigError("field train.primal_warmup_epochs: must be >= 0", "train.primal_warmup_epochs");
  if (c.seeds.empty()) throw ConfigError("field experiment.seeds: must be non-empty", "experiment.seeds");
  if (!c.train_constrained && !c.train_unconstrained)
    throw ConfigError("field train.train_constrained: at least one variant must be enabled", "train.train_constrained");
}

inline ExperimentConfig parse_config(const std::string& text) {
  using namespace detail;
  RawConfig raw = tokenize_config(text);
  ExperimentConfig c;

  c.task = to_enum("experiment.task", raw.require("experiment.task"), task_names());
  c.model.kind = to_enum("experiment.model", raw.require("experiment.model"), kind_names());
  {
    std::vector<uint64_t> seeds;
    for (const auto& s : split_list(raw.optional("experiment.seeds", "1,2,3")))
      seeds.push_back(static_cast<uint64_t>(to_int("experiment.seeds", s)));
    c.seeds = std::move(seeds);
  }

  c.model.n = to_int("dims.n", raw.require("dims.n"));
  c.model.t = to_int("dims.t", raw.require("dims.t"));
  c.model.d = to_int("dims.d", raw.require("dims.d"));
  c.model.c = to_int("dims.c", raw.optional("dims.c", "0"));
  c.model.layers = to_int("dims.layers", raw.require("dims.layers"));

  c.model.nonlin = to_enum("model.nonlinearity", raw.optional("model.nonlinearity", "relu"), nonlin_names());
  c.model.nonlin_gamma = to_double("model.nonlin_gamma", raw.optional("model.nonlin_gamma", "0.1"));
  c.model.attn_norm = to_enum("model.attention_norm", raw.optional("model.attention_norm", "columns"), attn_names());
  c.model.ut_eta = to_double("model.ut_eta", raw.optional("model.ut_eta", "1"));
  c.model.dust.lambda1 = to_double("model.dust_lambda1", raw.optional("model.dust_lambda1", "0.9"));
  c.model.dust.lambda2 = to_double("model.dust_lambda2", raw.optional("model.dust_lambda2", "0.25"));
  c.model.dust.c = to_double("model.dust_c", raw.optional("model.dust_c", "1"));
  c.model.dust_shared_dict = to_bool("model.dust_shared_dict", raw.optional("model.dust_shared_dict", "false"));

  c.train_count = to_int("data.train_count", raw.optional("data.train_count", "2048"));
  c.eval_count = to_int("data.eval_count", raw.optional("data.eval_count", "512"));
  c.structure = to_enum("data.structure", raw.optional("data.structure", "smooth"), structure_names());
  c.gamma_train = to_double("data.gamma_train", raw.require("data.gamma_train"));
  c.separation = to_double("data.separation", raw.optional("data.separation", "2.563"));
  {
    std::string def;
    for (double g : default_gamma_grid()) {
      if (!def.empty()) def += ",";
      def += fmt_double(g);
    }
    c.gamma_grid = to_double_list("data.gamma_grid", raw.optional("data.gamma_grid", def));
  }

  {
    const auto alphas = to_double_list("constraints.alpha", raw.require("constraints.alpha"));
    if (static_cast<int>(alphas.size()) == c.model.layers)
      c.alpha = alphas;
    else if (alphas.size() == 1)
      c.alpha.assign(static_cast<size_t>(c.model.layers), alphas[0]);
    else
      throw ConfigError("field constraints.alpha: need 1 or layers values", "constraints.alpha");
  }
  c.f0 = to_double("constraints.f0", raw.optional("constraints.f0", "0"));
  c.use_f0_for_first = to_bool("constraints.use_f0_for_first", raw.optional("constraints.use_f0_for_first", "false"));

  c.mode = to_enum("dual.mode", raw.optional("dual.mode", "weight_decay"), mode_names());
  c.beta = to_double("dual.beta", raw.optional("dual.beta", "1"));
  c.train.eta2 = to_double("dual.eta2", raw.optional("dual.eta2", "0.03"));
  c.decay = to_enum("dual.decay", raw.optional("dual.decay", "step_scaled"), decay_names());

  c.train.epochs = to_int("train.epochs", raw.require("train.epochs"));
  c.train.batch_size = to_int("train.batch_size", raw.optional("train.batch_size", "32"));
  c.train.eta1 = to_double("train.eta1", raw.optional("train.eta1", "0.0003"));
  c.train.optimizer = to_enum("train.optimizer", raw.optional("train.optimizer", "adam"), optimizer_names());
  c.train.adam_beta1 = to_double("train.adam_beta1", raw.optional("train.adam_beta1", "0.9"));
  c.train.adam_beta2 = to_double("train.adam_beta2", raw.optional("train.adam_beta2", "0.999"));
  c.train.adam_eps = to_double("train.adam_eps", raw.optional("train.adam_eps", "1e-08"));
  c.train.primal_warmup_epochs = to_int("train.primal_warmup_epochs", raw.optional("train.primal_warmup_epochs", "1"));
  c.train.resilience_restart_each_epoch =
      to_bool("train.resilience_restart_each_epoch", raw.optional("train.resilience_restart_each_epoch", "true"));
  c.train_constrained = to_bool("train.train_constrained", raw.optional("train.train_constrained", "true"));
  c.train_unconstrained = to_bool("train.train_unconstrained", raw.optional("train.train_unconstrained", "true"));

  for (const auto& [key, value] : raw.kv)
    if (!raw.consumed.count(key)) throw ConfigError("unknown field: " + key, key);

  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

inline std::string serialize_config(const ExperimentConfig& c) {
  using namespace detail;
  std::string s;
  auto line = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  auto dlist = [](const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out += ",";
      out += fmt_double(v[i]);
    }
    return out;
  };
  s += "[experiment]\n";
  line("task", enum_name(c.task, task_names()));
  line("model", enum_name(c.model.kind, kind_names()));
  {
    std::string seeds;
    for (size_t i = 0; i < c.seeds.size(); ++i) {
      if (i) seeds += ",";
      seeds += fmt_int(static_cast<int64_t>(c.seeds[i]));
    }
    line("seeds", seeds);
  }
  s += "\n[dims]\n";
  line("n", fmt_int(c.model.n));
  line("t", fmt_int(c.model.t));
  line("d", fmt_int(c.model.d));
  line("c", fmt_int(c.model.c));
  line("layers", fmt_int(c.model.layers));
  s += "\n[model]\n";
  line("nonlinearity", enum_name(c.model.nonlin, nonlin_names()));
  line("nonlin_gamma", fmt_double(c.model.nonlin_gamma));
  line("attention_norm", enum_name(c.model.attn_norm, attn_names()));
  line("ut_eta", fmt_double(c.model.ut_eta));
  line("dust_lambda1", fmt_double(c.model.dust.lambda1));
  line("dust_lambda2", fmt_double(c.model.dust.lambda2));
  line("dust_c", fmt_double(c.model.dust.c));
  line("dust_shared_dict", c.model.dust_shared_dict ? "true" : "false");
  s += "\n[data]\n";
  line("train_count", fmt_int(c.train_count));
  line("eval_count", fmt_int(c.eval_count));
  line("structure", enum_name(c.structure, structure_names()));
  line("gamma_train", fmt_double(c.gamma_train));
  line("separation", fmt_double(c.separation));
  line("gamma_grid", dlist(c.gamma_grid));
  s += "\n[constraints]\n";
  line("alpha", dlist(c.alpha));
  line("f0", fmt_double(c.f0));
  line("use_f0_for_first", c.use_f0_for_first ? "true" : "false");
  s += "\n[dual]\n";
  line("mode", enum_name(c.mode, mode_names()));
  line("beta", c.beta == std::numeric_limits<double>::infinity() ? "inf" : fmt_double(c.beta));
  line("eta2", fmt_double(c.train.eta2));
  line("decay", enum_name(c.decay, decay_names()));
  s += "\n[train]\n";
  line("epochs", fmt_int(c.train.epochs));
  line("batch_size", fmt_int(c.train.batch_size));
  line("eta1", fmt_double(c.train.eta1));
  line("optimizer", enum_name(c.train.optimizer, optimizer_names()));
  line("adam_beta1", fmt_double(c.train.adam_beta1));
  line("adam_beta2", fmt_double(c.train.adam_beta2));
  line("adam_eps", fmt_double(c.train.adam_eps));
  line("primal_warmup_epochs", fmt_int(c.train.primal_warmup_epochs));
  line("resilience_restart_each_epoch", c.train.resilience_restart_each_epoch ? "true" : "false");
  line("train_constrained", c.train_constrained ? "true" : "false");
  line("train_unconstrained", c.train_unconstrained ? "true" : "false");
  return s;
}

inline uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash_hex(const ExperimentConfig& c) {
  const uint64_t h = fnv1a_hash(serialize_config(c));
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[static_cast<size_t>(15 - i)] = digits[(h >> (4 * i)) & 0xf];
  return out;
}

// Run directory name: <config hash>_s<seed>.
inline std::string run_dir_name(const ExperimentConfig& c, uint64_t seed) {
  return config_hash_hex(c) + "_s" + fmt_int(static_cast<int64_t>(seed));
}

}  // namespace descent
