#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gens/common.hpp"

namespace gens {

// Every tunable of the pipeline lives here and is overridable from a
// key=value config file. Values below are the shipped defaults.
struct Config {
  // volume
  int levels = 5;
  int finest = 256;      // finest grid resolution per axis
  int channels = 4;      // feature channels per level
  double bbox_min = -1.0;
  double bbox_max = 1.0;

  // field
  int sdf_depth = 4;      // hidden layers
  int sdf_width = 64;
  int blend_depth = 2;
  int blend_width = 32;
  double softplus_beta = 100.0;
  double geo_radius = 0.5;       // radius of the sphere the fresh field approximates
  double feat_weight_scale = 0.1;  // first-layer scale on volume-feature inputs
  double s_init = 30.0;
  double s_raw_min = -2.0;
  double s_raw_max = 8.0;

  // renderer
  int m_uniform = 64;
  int m_importance = 32;
  double sample_box_scale = 1.05;  // rays are sampled inside bbox scaled by this
  int blend_sources = 6;           // max source views per sample (nearest first)
  double blend_weight_cutoff = 1e-4;  // skip color blending below this weight; 0 = never

  // training
  int steps = 3000;
  int batch_rays = 512;
  double lr_volume = 1e-3;
  double lr_mlp = 5e-4;
  double mfc_alpha = 1.0;   // target weight after the ramp
  double ramp_frac = 0.2;   // fraction of steps over which alpha ramps 0 -> target
  double vc_beta = 0.0;     // 1.0 in distillation
  double eikonal_gamma = 0.1;
  double smooth_eta = 0.005;
  double tv_lambda = 0.01;
  double sparse_delta = 0.01;
  double sparse_tau = 10.0;
  double fd_eps = 1e-3;     // world-space step for finite-difference gradients
  int eik_ray_points = 1;   // eikonal points drawn per ray from its samples
  int eik_box_points = 1;   // eikonal points drawn per ray uniformly in the box
  int smooth_topk = 3;      // ray samples (by weight) entering the smooth loss; 0 = all
  int tv_samples = 16384;   // sampled voxels per level for the TV estimate; 0 = exact
  double prune_at_frac = 0.5;
  double prune_band_voxels = 4.0;  // band in units of the finest voxel size

  // consistency
  int patch_size = 5;
  int mfc_topk = 0;     // best-K NCCs; 0 = ceil(n_candidates / 2)
  int mfc_sources = 6;  // candidate source views (nearest first); 0 = all
  double mfc_min_var = 1e-6;   // patch-channel variance floor in training
  double mfc_grad_clip = 10.0; // per-pixel cap on |(d_ps, d_ns)|; 0 = off
  int mfc_normal_chain = 1;    // 1 = gradients flow through the surface normal

  // distillation
  double distill_band_voxels = 2.0;
  int distill_jitter = 4;
  int distill_rays_per_view = 1024;
  int vc_points = 1024;  // distill points per step

  // run
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency (or GENS_THREADS)
  std::string init = "zero";  // zero | meanvar

  std::vector<std::pair<std::string, std::string>> items() const;
  void set(const std::string& key, const std::string& value);
};

namespace detail {

template <class T>
std::string to_string_cfg(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

template <class T>
void from_string_cfg(const std::string& s, T& out, const std::string& key) {
  if constexpr (std::is_same_v<T, std::string>) {
    out = s;
    return;
  } else {
    std::istringstream is(s);
    T v{};
    is >> v;
    if (is.fail()) fail(Err::ParseError, "bad value '" + s + "' for config key '" + key + "'");
    out = v;
  }
}

}  // namespace detail

#define GENS_CONFIG_FIELDS(X) \
  X(levels) X(finest) X(channels) X(bbox_min) X(bbox_max) \
  X(sdf_depth) X(sdf_width) X(blend_depth) X(blend_width) \
  X(softplus_beta) X(geo_radius) X(feat_weight_scale) X(s_init) X(s_raw_min) X(s_raw_max) \
  X(m_uniform) X(m_importance) X(sample_box_scale) X(blend_sources) X(blend_weight_cutoff) \
  X(steps) X(batch_rays) X(lr_volume) X(lr_mlp) \
  X(mfc_alpha) X(ramp_frac) X(vc_beta) X(eikonal_gamma) X(smooth_eta) \
  X(tv_lambda) X(sparse_delta) X(sparse_tau) X(fd_eps) \
  X(eik_ray_points) X(eik_box_points) X(smooth_topk) X(tv_samples) \
  X(prune_at_frac) X(prune_band_voxels) \
  X(patch_size) X(mfc_topk) X(mfc_sources) X(mfc_min_var) X(mfc_grad_clip) X(mfc_normal_chain) \
  X(distill_band_voxels) X(distill_jitter) X(distill_rays_per_view) X(vc_points) \
  X(seed) X(threads) X(init)

inline std::vector<std::pair<std::string, std::string>> Config::items() const {
  std::vector<std::pair<std::string, std::string>> out;
#define GENS_CFG_ITEM(name) out.emplace_back(#name, detail::to_string_cfg(name));
  GENS_CONFIG_FIELDS(GENS_CFG_ITEM)
#undef GENS_CFG_ITEM
  return out;
}

inline void Config::set(const std::string& key, const std::string& value) {
#define GENS_CFG_SET(name)                       \
  if (key == #name) {                            \
    detail::from_string_cfg(value, name, key);   \
    return;                                      \
  }
  GENS_CONFIG_FIELDS(GENS_CFG_SET)
#undef GENS_CFG_SET
  fail(Err::ParseError, "unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline void parse_config_text(Config& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail(Err::ParseError, origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const Error& e) {
      fail(Err::ParseError, origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline Config load_config(const std::string& path) {
  Config cfg;
  std::ifstream in(path);
  if (!in) fail(Err::IoError, "cannot open config file " + path);
  parse_config_text(cfg, in, path);
  return cfg;
}

inline void save_config(const Config& cfg, std::ostream& out) {
  for (const auto& [k, v] : cfg.items()) out << k << " = " << v << "\n";
}

}  // namespace gens
