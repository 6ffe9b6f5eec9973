#pragma once

// Binary model checkpoints.
//
// Layout (little-endian, version 1):
//   bytes 0-7   magic "DSCNTCK1"
//   u32         format version (1)
//   u32         kind (0 generic, 1 ut, 2 dust)
//   i32 x 5     n, t, d, c, layers
//   u8  x 4     dust_shared_dict, nonlin, attn_norm, reserved(0)
//   f64 x 5     nonlin_gamma, ut_eta, dust lambda1, dust lambda2, dust c
//   f64 ...     weight matrices in declared order:
//                 generic: per layer q, k, v, w, u
//                 ut:      per layer shared, ws_free
//                 dust:    one dictionary if shared, else one per layer
//               then the readout weight when c > 0.
// Matrix extents are implied by the header, so the payload is raw doubles.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "descent/errors.hpp"
#include "descent/models.hpp"

namespace descent {

namespace detail {

constexpr char kCkptMagic[8] = {'D', 'S', 'C', 'N', 'T', 'C', 'K', '1'};
constexpr uint32_t kCkptVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u8(std::ostream& os, uint8_t v) { os.write(reinterpret_cast<const char*>(&v), 1); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline int32_t read_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline uint8_t read_u8(std::istream& is) {
  uint8_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 1);
  return v;
}
inline double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

inline void write_matrix(std::ostream& os, const Tensor& t) {
  for (double v : t.values) write_f64(os, v);
}

inline Tensor read_matrix(std::istream& is, int rows, int cols, bool rg) {
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = read_f64(is);
  if (!is) throw ParamError("checkpoint: truncated weight payload");
  check_finite("checkpoint", v);
  return Tensor::matrix(rows, cols, std::move(v), rg);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ParamError("checkpoint: cannot open " + path + " for writing");
  os.write(detail::kCkptMagic, 8);
  detail::write_u32(os, detail::kCkptVersion);
  detail::write_u32(os, static_cast<uint32_t>(p.arch.kind));
  detail::write_i32(os, p.arch.n);
  detail::write_i32(os, p.arch.t);
  detail::write_i32(os, p.arch.d);
  detail::write_i32(os, p.arch.c);
  detail::write_i32(os, p.arch.layers);
  detail::write_u8(os, p.arch.dust_shared_dict ? 1 : 0);
  detail::write_u8(os, static_cast<uint8_t>(p.arch.nonlin));
  detail::write_u8(os, static_cast<uint8_t>(p.arch.attn_norm));
  detail::write_u8(os, 0);
  detail::write_f64(os, p.arch.nonlin_gamma);
  detail::write_f64(os, p.arch.ut_eta);
  detail::write_f64(os, p.arch.dust.lambda1);
  detail::write_f64(os, p.arch.dust.lambda2);
  detail::write_f64(os, p.arch.dust.c);
  for (const auto& lp : p.generic_layers) {
    detail::write_matrix(os, lp.q);
    detail::write_matrix(os, lp.k);
    detail::write_matrix(os, lp.v);
    detail::write_matrix(os, lp.w);
    detail::write_matrix(os, lp.u);
  }
  for (const auto& lp : p.ut_layers) {
    detail::write_matrix(os, lp.shared);
    detail::write_matrix(os, lp.ws_free);
  }
  for (const auto& lp : p.dust_layers) detail::write_matrix(os, lp.dict);
  if (p.readout) detail::write_matrix(os, p.readout->weight);
  if (!os) throw ParamError("checkpoint: write to " + path + " failed");
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParamError("checkpoint: cannot open " + path);
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw ParamError("checkpoint: " + path + " is not a checkpoint file");
  const uint32_t version = detail::read_u32(is);
  if (version != detail::kCkptVersion)
    throw ParamError("checkpoint: unsupported format version " + std::to_string(version));
  ModelConfig cfg;
  const uint32_t kind = detail::read_u32(is);
  if (kind > 2) throw ParamError("checkpoint: unknown model kind " + std::to_string(kind));
  cfg.kind = static_cast<ModelKind>(kind);
  cfg.n = detail::read_i32(is);
  cfg.t = detail::read_i32(is);
  cfg.d = detail::read_i32(is);
  cfg.c = detail::read_i32(is);
  cfg.layers = detail::read_i32(is);
  cfg.dust_shared_dict = detail::read_u8(is) != 0;
  cfg.nonlin = static_cast<Nonlin>(detail::read_u8(is));
  cfg.attn_norm = static_cast<AttentionNorm>(detail::read_u8(is));
  detail::read_u8(is);
  cfg.nonlin_gamma = detail::read_f64(is);
  cfg.ut_eta = detail::read_f64(is);
  cfg.dust.lambda1 = detail::read_f64(is);
  cfg.dust.lambda2 = detail::read_f64(is);
  cfg.dust.c = detail::read_f64(is);
  if (!is) throw ParamError("checkpoint: truncated header in " + path);
  validate_model_config(cfg);

  ModelParams p;
  p.arch = cfg;
  if (cfg.kind == ModelKind::generic) {
    for (int l = 0; l < cfg.layers; ++l) {
      AttentionLayerParams lp;
      lp.q = detail::read_matrix(is, cfg.d, cfg.n, true);
      lp.k = detail::read_matrix(is, cfg.d, cfg.n, true);
      lp.v = detail::read_matrix(is, cfg.d, cfg.n, true);
      lp.w = detail::read_matrix(is, cfg.n, cfg.d, true);
      lp.u = detail::read_matrix(is, cfg.n, cfg.n, true);
      p.generic_layers.push_back(std::move(lp));
    }
  } else if (cfg.kind == ModelKind::ut) {
    for (int l = 0; l < cfg.layers; ++l) {
      UtLayerParams lp;
      lp.shared = detail::read_matrix(is, cfg.d, cfg.n, true);
      lp.ws_free = detail::read_matrix(is, cfg.n, cfg.n, true);
      p.ut_layers.push_back(std::move(lp));
    }
  } else {
    const int copies = cfg.dust_shared_dict ? 1 : cfg.layers;
    for (int i = 0; i < copies; ++i)
      p.dust_layers.push_back(DustLayerParams{detail::read_matrix(is, cfg.n, cfg.d, true)});
  }
  if (cfg.c > 0) p.readout = ReadoutParams{detail::read_matrix(is, cfg.c, cfg.n, true)};
  char extra = 0;
  if (is.read(&extra, 1)) throw ParamError("checkpoint: trailing bytes in " + path);
  return p;
}

}  // namespace descent
