#pragma once

#include <functional>
#include <vector>

#include "gens/common.hpp"
#include "gens/geometry.hpp"
#include "gens/io.hpp"
#include "gens/pyramid.hpp"
#include "gens/rng.hpp"

namespace gens {

// One feature grid. Values are cell-centered: voxel (x, y, z) covers a cube
// whose center is bbox.min + (idx + 0.5) / dims * extent. Sampling outside
// the center lattice clamps to the border.
template <class S>
struct Grid {
  int nx = 0, ny = 0, nz = 0, ch = 0;
  std::vector<S> data;  // ((z * ny + y) * nx + x) * ch + c

  Grid() = default;
  Grid(int nx_, int ny_, int nz_, int ch_)
      : nx(nx_), ny(ny_), nz(nz_), ch(ch_), data(size_t(nx_) * ny_ * nz_ * ch_, S(0)) {}

  size_t voxels() const { return size_t(nx) * ny * nz; }
  size_t voxel_index(int x, int y, int z) const { return (size_t(z) * ny + y) * nx + x; }
  S* at(size_t vi) { return &data[vi * ch]; }
  const S* at(size_t vi) const { return &data[vi * ch]; }
};

// Geometry of one trilinear probe: the 8 corner voxels, their weights, and
// what a unit step in world space does to the in-cell coordinates (zero on
// axes where the probe clamped to the border).
struct TrilerpStamp {
  size_t corner[8];
  double w[8];
  double frac[3];
  double dcell_dworld[3];
  int x0, y0, z0, x1, y1, z1;
};

template <class S>
inline void make_stamp(const Grid<S>& g, const BBox& box, const Vec3& p, TrilerpStamp& st) {
  Vec3 ext = box.extent();
  for (int a = 0; a < 3; ++a) {
    int dim = a == 0 ? g.nx : (a == 1 ? g.ny : g.nz);
    double gc = (p[a] - box.min[a]) / ext[a] * dim - 0.5;
    double scale = dim / ext[a];
    if (gc < 0.0) {
      gc = 0.0;
      scale = 0.0;
    } else if (gc > dim - 1.0) {
      gc = dim - 1.0;
      scale = 0.0;
    }
    int i0 = std::min(int(gc), std::max(dim - 2, 0));
    double f = gc - i0;
    int i1 = std::min(i0 + 1, dim - 1);
    st.frac[a] = f;
    st.dcell_dworld[a] = scale;
    if (a == 0) { st.x0 = i0; st.x1 = i1; }
    if (a == 1) { st.y0 = i0; st.y1 = i1; }
    if (a == 2) { st.z0 = i0; st.z1 = i1; }
  }
  double fx = st.frac[0], fy = st.frac[1], fz = st.frac[2];
  double wx[2] = {1 - fx, fx}, wy[2] = {1 - fy, fy}, wz[2] = {1 - fz, fz};
  int xs[2] = {st.x0, st.x1}, ys[2] = {st.y0, st.y1}, zs[2] = {st.z0, st.z1};
  int i = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx, ++i) {
        st.corner[i] = g.voxel_index(xs[dx], ys[dy], zs[dz]);
        st.w[i] = wx[dx] * wy[dy] * wz[dz];
      }
}

template <class S>
inline void trilinear_sample(const Grid<S>& g, const BBox& box, const Vec3& p, double* out) {
  TrilerpStamp st;
  make_stamp(g, box, p, st);
  for (int c = 0; c < g.ch; ++c) out[c] = 0.0;
  for (int i = 0; i < 8; ++i) {
    const S* v = g.at(st.corner[i]);
    for (int c = 0; c < g.ch; ++c) out[c] += st.w[i] * double(v[c]);
  }
}

// Per-corner weight derivatives w.r.t. the in-cell fractional coordinates.
inline void stamp_dweights(const TrilerpStamp& st, double dw[8][3]) {
  double fx = st.frac[0], fy = st.frac[1], fz = st.frac[2];
  double wx[2] = {1 - fx, fx}, wy[2] = {1 - fy, fy}, wz[2] = {1 - fz, fz};
  double sx[2] = {-1, 1}, sy[2] = {-1, 1}, sz[2] = {-1, 1};
  int i = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx, ++i) {
        dw[i][0] = sx[dx] * wy[dy] * wz[dz];
        dw[i][1] = wx[dx] * sy[dy] * wz[dz];
        dw[i][2] = wx[dx] * wy[dy] * sz[dz];
      }
}

// Sparse per-level gradient accumulator. Contributions are appended as flat
// (voxel, g[ch]) records, which keeps the hot scatter path sequential;
// finalize() stable-radix-sorts by voxel and sums duplicates, so the
// reduction order (and therefore the result) is deterministic.
struct SparseLevelGrad {
  int ch = 0;
  std::vector<uint32_t> order;  // voxel ids; unique and ascending once finalized
  std::vector<double> vals;     // order.size() * ch
  bool finalized = false;

  void init(int channels, size_t = 0) {
    ch = channels;
    clear();
  }

  void clear() {
    order.clear();
    vals.clear();
    finalized = false;
  }

  // Contributions inside one group (typically one ray) are deduplicated in a
  // small epoch-stamped scratch table before being appended; consecutive ray
  // samples share most trilinear corners, so this shrinks the record stream
  // several-fold.
  void begin_group() {
    if (skey_.empty()) grow_scratch(4096);
    ++epoch_;
    if (epoch_ == 0) {  // wrapped: reset stamps
      std::fill(sepoch_.begin(), sepoch_.end(), 0u);
      epoch_ = 1;
    }
    sslots_.clear();
    in_group_ = true;
  }

  void end_group() {
    for (uint32_t slot : sslots_) {
      order.push_back(skey_[slot]);
      size_t base = vals.size();
      vals.resize(base + ch);
      for (int c = 0; c < ch; ++c) vals[base + c] = sval_[size_t(slot) * ch + c];
    }
    in_group_ = false;
    finalized = false;
  }

  void add(uint32_t voxel, const double* g, double scale = 1.0) {
    if (in_group_) {
      double* v = scratch_slot(voxel);
      for (int c = 0; c < ch; ++c) v[c] += scale * g[c];
      return;
    }
    order.push_back(voxel);
    size_t base = vals.size();
    vals.resize(base + ch);
    for (int c = 0; c < ch; ++c) vals[base + c] = scale * g[c];
    finalized = false;
  }

  void add_one(uint32_t voxel, int c, double g) {
    if (in_group_) {
      scratch_slot(voxel)[c] += g;
      return;
    }
    order.push_back(voxel);
    size_t base = vals.size();
    vals.resize(base + ch, 0.0);
    vals[base + c] = g;
    finalized = false;
  }

  void merge(const SparseLevelGrad& other) {
    order.insert(order.end(), other.order.begin(), other.order.end());
    vals.insert(vals.end(), other.vals.begin(), other.vals.end());
    finalized = false;
  }

  void finalize() {
    if (finalized || order.empty()) {
      finalized = true;
      return;
    }
    const size_t n = order.size();
    uint32_t max_key = 0;
    for (uint32_t k : order) max_key = std::max(max_key, k);
    int passes = 1;
    while (passes < 4 && (max_key >> (8 * passes)) != 0) ++passes;
    // keys and payload indices travel together so every pass streams
    std::vector<uint64_t> rec(n), tmp(n);
    for (size_t i = 0; i < n; ++i) rec[i] = (uint64_t(order[i]) << 32) | uint32_t(i);
    size_t count[256];
    for (int p = 0; p < passes; ++p) {
      std::fill(count, count + 256, 0);
      int shift = 32 + 8 * p;
      for (size_t i = 0; i < n; ++i) ++count[(rec[i] >> shift) & 0xff];
      size_t sum = 0;
      for (int b = 0; b < 256; ++b) {
        size_t c = count[b];
        count[b] = sum;
        sum += c;
      }
      for (size_t i = 0; i < n; ++i) tmp[count[(rec[i] >> shift) & 0xff]++] = rec[i];
      std::swap(rec, tmp);
    }
    std::vector<uint32_t> out_keys;
    std::vector<double> out_vals;
    out_keys.reserve(n);
    out_vals.reserve(vals.size());
    for (size_t i = 0; i < n; ++i) {
      uint32_t key = uint32_t(rec[i] >> 32);
      const double* src = &vals[size_t(uint32_t(rec[i])) * ch];
      if (out_keys.empty() || out_keys.back() != key) {
        out_keys.push_back(key);
        out_vals.insert(out_vals.end(), src, src + ch);
      } else {
        double* dst = &out_vals[(out_keys.size() - 1) * ch];
        for (int c = 0; c < ch; ++c) dst[c] += src[c];
      }
    }
    order = std::move(out_keys);
    vals = std::move(out_vals);
    finalized = true;
  }

 private:
  std::vector<uint32_t> skey_, sepoch_, sslots_;
  std::vector<double> sval_;
  uint32_t epoch_ = 0;
  size_t smask_ = 0;
  bool in_group_ = false;

  void grow_scratch(size_t cap) {
    std::vector<uint32_t> old_slots = sslots_;
    std::vector<uint32_t> okey = std::move(skey_);
    std::vector<uint32_t> oepoch = std::move(sepoch_);
    std::vector<double> oval = std::move(sval_);
    skey_.assign(cap, 0);
    sepoch_.assign(cap, 0);
    sval_.assign(cap * ch, 0.0);
    smask_ = cap - 1;
    sslots_.clear();
    for (uint32_t slot : old_slots) {
      double* v = scratch_slot(okey[slot]);
      for (int c = 0; c < ch; ++c) v[c] += oval[size_t(slot) * ch + c];
    }
  }

  double* scratch_slot(uint32_t voxel) {
    if ((sslots_.size() + 1) * 4 > (smask_ + 1) * 3) grow_scratch((smask_ + 1) * 2);
    size_t h = (uint64_t(voxel) * 0x9e3779b97f4a7c15ULL) >> 40 & smask_;
    while (true) {
      if (sepoch_[h] != epoch_) {
        sepoch_[h] = epoch_;
        skey_[h] = voxel;
        sslots_.push_back(uint32_t(h));
        double* v = &sval_[h * ch];
        for (int c = 0; c < ch; ++c) v[c] = 0.0;
        return v;
      }
      if (skey_[h] == voxel) return &sval_[h * ch];
      h = (h + 1) & smask_;
    }
  }
};

struct VolumeGrad {
  std::vector<SparseLevelGrad> levels;

  void init(int n_levels, int ch) {
    levels.resize(n_levels);
    for (auto& l : levels) l.init(ch);
  }
  void clear() {
    for (auto& l : levels) l.clear();
  }
  void merge(const VolumeGrad& other) {
    for (size_t j = 0; j < levels.size(); ++j) levels[j].merge(other.levels[j]);
  }
  void finalize() {
    for (auto& l : levels) l.finalize();
  }
  void begin_group() {
    for (auto& l : levels) l.begin_group();
  }
  void end_group() {
    for (auto& l : levels) l.end_group();
  }
};

// Adjoint of trilinear_sample: scatters `upstream` into the 8 corner voxels
// and returns the spatial derivative contracted with `upstream`.
template <class S>
inline Vec3 trilinear_backward(const Grid<S>& g, const BBox& box, const Vec3& p,
                               const double* upstream, SparseLevelGrad* grad) {
  TrilerpStamp st;
  make_stamp(g, box, p, st);
  double dw[8][3];
  stamp_dweights(st, dw);
  Vec3 grad_p = Vec3::Zero();
  for (int i = 0; i < 8; ++i) {
    const S* v = g.at(st.corner[i]);
    double dot = 0.0;
    for (int c = 0; c < g.ch; ++c) dot += double(v[c]) * upstream[c];
    for (int a = 0; a < 3; ++a) grad_p[a] += dw[i][a] * st.dcell_dworld[a] * dot;
    if (grad) grad->add(uint32_t(st.corner[i]), upstream, st.w[i]);
  }
  return grad_p;
}

// Boolean occupancy per level; voxels with mask 0 are frozen.
struct VoxelMask {
  std::vector<std::vector<uint8_t>> levels;

  bool empty() const { return levels.empty(); }
  bool kept(int level, size_t voxel) const {
    return levels.empty() || levels[level][voxel] != 0;
  }
};

template <class S>
struct MultiScaleVolume {
  BBox box;
  int ch = 0;
  std::vector<Grid<S>> levels;  // fine -> coarse

  static MultiScaleVolume create(int n_levels, int finest, int channels, const BBox& box_) {
    MultiScaleVolume v;
    v.box = box_;
    v.ch = channels;
    for (int j = 0; j < n_levels; ++j) {
      int d = std::max(finest >> j, 1);
      v.levels.emplace_back(d, d, d, channels);
    }
    return v;
  }

  int n_levels() const { return int(levels.size()); }
  int feature_dim() const { return n_levels() * ch; }
  double finest_voxel_size() const { return box.extent().x() / levels.front().nx; }

  // Concatenated per-level trilinear samples, fine to coarse.
  void feature(const Vec3& p, double* out) const {
    for (int j = 0; j < n_levels(); ++j) trilinear_sample(levels[j], box, p, out + j * ch);
  }

  // Adjoint of feature(): scatters into per-level grads (respecting the
  // mask) and returns the spatial derivative contracted with upstream. The
  // spatial part costs an extra gather, so it is skipped unless asked for.
  Vec3 feature_backward(const Vec3& p, const double* upstream, VolumeGrad* grads,
                        const VoxelMask* vmask, bool want_dp = true) const {
    Vec3 gp = Vec3::Zero();
    TrilerpStamp st;
    double dw[8][3];
    for (int j = 0; j < n_levels(); ++j) {
      const Grid<S>& g = levels[j];
      const double* up = upstream + j * ch;
      make_stamp(g, box, p, st);
      if (want_dp) stamp_dweights(st, dw);
      for (int i = 0; i < 8; ++i) {
        if (want_dp) {
          const S* v = g.at(st.corner[i]);
          double dot = 0.0;
          for (int c = 0; c < ch; ++c) dot += double(v[c]) * up[c];
          for (int a = 0; a < 3; ++a) gp[a] += dw[i][a] * st.dcell_dworld[a] * dot;
        }
        if (grads && (!vmask || vmask->kept(j, st.corner[i])))
          grads->levels[j].add(uint32_t(st.corner[i]), up, st.w[i]);
      }
    }
    return gp;
  }

  Vec3 voxel_center(int level, int x, int y, int z) const {
    const Grid<S>& g = levels[level];
    Vec3 ext = box.extent();
    return Vec3(box.min.x() + (x + 0.5) * ext.x() / g.nx,
                box.min.y() + (y + 0.5) * ext.y() / g.ny,
                box.min.z() + (z + 0.5) * ext.z() / g.nz);
  }
};

template <class S>
inline void multiscale_feature(const MultiScaleVolume<S>& vol, const Vec3& p, double* out) {
  vol.feature(p, out);
}

// ----------------------------------------------------------------------------
// Total variation

// Sum of squared forward differences per level; the loss per level is
// sqrt(sum_x + sum_y + sum_z + eps).
constexpr double kTvEps = 1e-8;

template <class S>
inline double tv_loss(const MultiScaleVolume<S>& vol) {
  double total = 0.0;
  for (const auto& g : vol.levels) {
    double s = 0.0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          const S* v = g.at(g.voxel_index(x, y, z));
          for (int c = 0; c < g.ch; ++c) {
            if (x + 1 < g.nx) {
              double d = double(g.at(g.voxel_index(x + 1, y, z))[c]) - double(v[c]);
              s += d * d;
            }
            if (y + 1 < g.ny) {
              double d = double(g.at(g.voxel_index(x, y + 1, z))[c]) - double(v[c]);
              s += d * d;
            }
            if (z + 1 < g.nz) {
              double d = double(g.at(g.voxel_index(x, y, z + 1))[c]) - double(v[c]);
              s += d * d;
            }
          }
        }
    total += std::sqrt(s + kTvEps);
  }
  return total;
}

// TV with gradient accumulation, scaled by `weight`. When n_samples > 0 the
// per-level sum is estimated from that many uniformly drawn voxels and scaled
// to the full count, which keeps the cost independent of resolution; the
// estimate is exact when n_samples == 0.
template <class S>
inline double tv_loss_grad(const MultiScaleVolume<S>& vol, double weight, int n_samples, Rng* rng,
                           VolumeGrad* grads, const VoxelMask* mask) {
  double total = 0.0;
  for (int j = 0; j < vol.n_levels(); ++j) {
    const Grid<S>& g = vol.levels[j];
    size_t n_vox = g.voxels();
    bool sampled = n_samples > 0 && size_t(n_samples) < n_vox;
    size_t count = sampled ? size_t(n_samples) : n_vox;
    double scale = sampled ? double(n_vox) / double(count) : 1.0;

    // diffs are visited twice (once for the sum, once for the gradient);
    // voxel picks must match, so the sampled index list is drawn up front.
    std::vector<uint32_t> picks;
    if (sampled) {
      picks.resize(count);
      for (auto& v : picks) v = uint32_t(rng->uniform_idx(n_vox));
    }

    auto for_each_diff = [&](auto&& fn) {
      for (size_t i = 0; i < count; ++i) {
        size_t vi = sampled ? picks[i] : i;
        int x = int(vi % g.nx), y = int((vi / g.nx) % g.ny), z = int(vi / (size_t(g.nx) * g.ny));
        const S* v = g.at(vi);
        if (x + 1 < g.nx) {
          size_t ni = g.voxel_index(x + 1, y, z);
          for (int c = 0; c < g.ch; ++c) fn(vi, ni, c, double(g.at(ni)[c]) - double(v[c]));
        }
        if (y + 1 < g.ny) {
          size_t ni = g.voxel_index(x, y + 1, z);
          for (int c = 0; c < g.ch; ++c) fn(vi, ni, c, double(g.at(ni)[c]) - double(v[c]));
        }
        if (z + 1 < g.nz) {
          size_t ni = g.voxel_index(x, y, z + 1);
          for (int c = 0; c < g.ch; ++c) fn(vi, ni, c, double(g.at(ni)[c]) - double(v[c]));
        }
      }
    };

    double s = 0.0;
    for_each_diff([&](size_t, size_t, int, double d) { s += d * d; });
    double level_tv = std::sqrt(scale * s + kTvEps);
    total += level_tv;

    if (grads) {
      double coef = weight * scale / level_tv;
      for_each_diff([&](size_t vi, size_t ni, int c, double d) {
        if (!mask || mask->kept(j, vi)) grads->levels[j].add_one(uint32_t(vi), c, -coef * d);
        if (!mask || mask->kept(j, ni)) grads->levels[j].add_one(uint32_t(ni), c, coef * d);
      });
    }
  }
  return total;
}

// ----------------------------------------------------------------------------
// Mean/variance initialization from posed feature pyramids

// Projects every voxel center into every view, fetches the matching-scale
// pyramid feature, and writes block-averaged [mean, variance] statistics into
// the grid. Voxels seen by fewer than two views stay zero.
template <class S>
inline void init_mean_var(MultiScaleVolume<S>& vol, const std::vector<FeaturePyramid>& pyramids,
                          const std::vector<Camera>& cams) {
  require(cams.size() >= 2 && pyramids.size() == cams.size(), Err::InsufficientViews,
          "mean/var init needs at least two posed views");
  const int chf = kFeatChannels;
  const int half = vol.ch / 2;
  require(vol.ch % 2 == 0 && chf % half == 0, Err::ParseError,
          "channel count must allow 2*Chf -> Ch block averaging");
  const int block = chf / half;
  for (int j = 0; j < vol.n_levels(); ++j) {
    Grid<S>& g = vol.levels[j];
    require(int(pyramids[0].levels.size()) > j, Err::ImageTooSmall,
            "pyramid has fewer levels than the volume");
    double scale = 1.0 / double(1 << j);
    std::vector<double> feat(chf), mean(chf), m2(chf);
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          Vec3 p = vol.voxel_center(j, x, y, z);
          std::fill(mean.begin(), mean.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          int seen = 0;
          for (size_t i = 0; i < cams.size(); ++i) {
            Projection pr;
            if (!try_project(cams[i], p, pr)) continue;
            if (!(pr.pixel.x() >= 0 && pr.pixel.y() >= 0 && pr.pixel.x() <= cams[i].width - 1 &&
                  pr.pixel.y() <= cams[i].height - 1))
              continue;
            pyramids[i].levels[j].fetch(pr.pixel.x() * scale, pr.pixel.y() * scale, feat.data());
            ++seen;
            for (int c = 0; c < chf; ++c) {
              double delta = feat[c] - mean[c];
              mean[c] += delta / seen;
              m2[c] += delta * (feat[c] - mean[c]);
            }
          }
          S* out = g.at(g.voxel_index(x, y, z));
          if (seen < 2) {
            for (int c = 0; c < g.ch; ++c) out[c] = S(0);
            continue;
          }
          for (int b = 0; b < half; ++b) {
            double ms = 0.0, vs = 0.0;
            for (int c = b * block; c < (b + 1) * block; ++c) {
              ms += mean[c];
              vs += m2[c] / seen;
            }
            out[b] = S(ms / block);
            out[half + b] = S(vs / block);
          }
        }
  }
}

// ----------------------------------------------------------------------------
// Pruning

using SdfBatchFn = std::function<void(const std::vector<Vec3>&, std::vector<double>&)>;

// Keeps voxels whose center SDF magnitude is within `band` (world units),
// plus any voxel adjacent to a sign change between neighboring centers, then
// dilates by one voxel per level.
template <class S>
inline VoxelMask prune(const MultiScaleVolume<S>& vol, const SdfBatchFn& sdf, double band) {
  require(band > 0.0, Err::ParseError, "prune band must be positive");
  VoxelMask mask;
  mask.levels.resize(vol.n_levels());
  std::vector<Vec3> pts;
  std::vector<double> vals;
  for (int j = 0; j < vol.n_levels(); ++j) {
    const Grid<S>& g = vol.levels[j];
    std::vector<float> sdfv(g.voxels());
    pts.resize(size_t(g.nx) * g.ny);
    for (int z = 0; z < g.nz; ++z) {
      size_t i = 0;
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) pts[i++] = vol.voxel_center(j, x, y, z);
      sdf(pts, vals);
      for (size_t q = 0; q < pts.size(); ++q) sdfv[size_t(z) * pts.size() + q] = float(vals[q]);
    }
    std::vector<uint8_t> keep(g.voxels(), 0);
    auto sv = [&](int x, int y, int z) { return sdfv[g.voxel_index(x, y, z)]; };
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          float v = sv(x, y, z);
          bool k = std::abs(v) <= band;
          if (!k && x + 1 < g.nx && std::signbit(v) != std::signbit(sv(x + 1, y, z))) k = true;
          if (!k && y + 1 < g.ny && std::signbit(v) != std::signbit(sv(x, y + 1, z))) k = true;
          if (!k && z + 1 < g.nz && std::signbit(v) != std::signbit(sv(x, y, z + 1))) k = true;
          if (!k && x > 0 && std::signbit(v) != std::signbit(sv(x - 1, y, z))) k = true;
          if (!k && y > 0 && std::signbit(v) != std::signbit(sv(x, y - 1, z))) k = true;
          if (!k && z > 0 && std::signbit(v) != std::signbit(sv(x, y, z - 1))) k = true;
          if (k) keep[g.voxel_index(x, y, z)] = 1;
        }
    // one-voxel box dilation
    std::vector<uint8_t> dil(g.voxels(), 0);
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          if (!keep[g.voxel_index(x, y, z)]) continue;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                int xx = x + dx, yy = y + dy, zz = z + dz;
                if (xx < 0 || yy < 0 || zz < 0 || xx >= g.nx || yy >= g.ny || zz >= g.nz) continue;
                dil[g.voxel_index(xx, yy, zz)] = 1;
              }
        }
    mask.levels[j] = std::move(dil);
  }
  return mask;
}

// ----------------------------------------------------------------------------
// Serialization (section magic "GENSVOL1")

template <class S>
inline void save_volume(std::ostream& out, const MultiScaleVolume<S>& vol, const VoxelMask& mask) {
  write_magic(out, "GENSVOL1");
  write_pod<uint32_t>(out, uint32_t(vol.n_levels()));
  write_pod<uint32_t>(out, uint32_t(vol.ch));
  double box[6] = {vol.box.min.x(), vol.box.min.y(), vol.box.min.z(),
                   vol.box.max.x(), vol.box.max.y(), vol.box.max.z()};
  write_pods(out, box, 6);
  for (const auto& g : vol.levels) {
    write_pod<uint32_t>(out, uint32_t(g.nx));
    write_pod<uint32_t>(out, uint32_t(g.ny));
    write_pod<uint32_t>(out, uint32_t(g.nz));
    if constexpr (std::is_same_v<S, float>) {
      write_pods(out, g.data.data(), g.data.size());
    } else {
      std::vector<float> tmp(g.data.begin(), g.data.end());
      write_pods(out, tmp.data(), tmp.size());
    }
  }
  for (int j = 0; j < vol.n_levels(); ++j) {
    size_t n = vol.levels[j].voxels();
    std::vector<uint8_t> bits((n + 7) / 8, 0);
    for (size_t i = 0; i < n; ++i)
      if (mask.kept(j, i)) bits[i >> 3] |= uint8_t(1u << (i & 7));
    write_pods(out, bits.data(), bits.size());
  }
}

template <class S>
inline void load_volume(std::istream& in, MultiScaleVolume<S>& vol, VoxelMask& mask,
                        const std::string& origin) {
  expect_magic(in, "GENSVOL1", origin);
  uint32_t n_levels = read_pod<uint32_t>(in, origin);
  uint32_t ch = read_pod<uint32_t>(in, origin);
  double box[6];
  read_pods(in, box, 6, origin);
  vol.box = BBox{Vec3(box[0], box[1], box[2]), Vec3(box[3], box[4], box[5])};
  vol.ch = int(ch);
  vol.levels.clear();
  for (uint32_t j = 0; j < n_levels; ++j) {
    uint32_t nx = read_pod<uint32_t>(in, origin);
    uint32_t ny = read_pod<uint32_t>(in, origin);
    uint32_t nz = read_pod<uint32_t>(in, origin);
    Grid<S> g{int(nx), int(ny), int(nz), int(ch)};
    if constexpr (std::is_same_v<S, float>) {
      read_pods(in, g.data.data(), g.data.size(), origin);
    } else {
      std::vector<float> tmp(g.data.size());
      read_pods(in, tmp.data(), tmp.size(), origin);
      std::copy(tmp.begin(), tmp.end(), g.data.begin());
    }
    vol.levels.push_back(std::move(g));
  }
  mask.levels.assign(n_levels, {});
  for (uint32_t j = 0; j < n_levels; ++j) {
    size_t n = vol.levels[j].voxels();
    std::vector<uint8_t> bits((n + 7) / 8);
    read_pods(in, bits.data(), bits.size(), origin);
    mask.levels[j].assign(n, 0);
    for (size_t i = 0; i < n; ++i)
      mask.levels[j][i] = (bits[i >> 3] >> (i & 7)) & 1u;
  }
}

}  // namespace gens
