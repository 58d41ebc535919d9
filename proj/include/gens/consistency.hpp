#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "gens/common.hpp"
#include "gens/geometry.hpp"
#include "gens/pyramid.hpp"

namespace gens {

struct WarpedLattice {
  int k = 0;
  std::vector<Vec2> positions;   // k*k source-pixel positions
  std::vector<uint8_t> valid;    // 0 where the warp lands behind the camera
};

// Maps the k x k reference lattice centered at q0 (1 px spacing) through H.
inline WarpedLattice warp_patch(const Homography& h, const Vec2& q0, int k) {
  require(k >= 1 && k % 2 == 1, Err::ParseError, "patch size must be odd");
  WarpedLattice out;
  out.k = k;
  out.positions.assign(size_t(k) * k, Vec2::Zero());
  out.valid.assign(size_t(k) * k, 0);
  int r = k / 2;
  int i = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx, ++i) {
      Vec2 q = q0 + Vec2(dx, dy);
      Vec2 mapped;
      if (h.try_apply(q, mapped)) {
        out.positions[i] = mapped;
        out.valid[i] = 1;
      }
    }
  return out;
}

// Mean per-channel normalized cross correlation over the jointly valid
// lattice entries. Channels whose variance collapses on either side are
// skipped and the average renormalized.
struct NccResult {
  double value = 0.0;
  int used_channels = 0;
  int joint_count = 0;
};

namespace detail {

struct ChannelStats {
  double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
};

inline ChannelStats channel_stats(const FeaturePatch& ref, const FeaturePatch& src, int l,
                                  const std::vector<int>& joint) {
  ChannelStats s;
  const int n = int(joint.size());
  for (int i : joint) {
    s.mean_a += ref.value(l, i);
    s.mean_b += src.value(l, i);
  }
  s.mean_a /= n;
  s.mean_b /= n;
  for (int i : joint) {
    double da = ref.value(l, i) - s.mean_a;
    double db = src.value(l, i) - s.mean_b;
    s.var_a += da * da;
    s.var_b += db * db;
    s.cov += da * db;
  }
  s.var_a /= n;
  s.var_b /= n;
  s.cov /= n;
  return s;
}

}  // namespace detail

constexpr double kNccVarEps = 1e-10;
constexpr int kNccMinJoint = 9;

inline NccResult ncc_full(const FeaturePatch& ref, const FeaturePatch& src,
                          double var_eps = kNccVarEps) {
  std::vector<int> joint;
  for (int i = 0; i < ref.k * ref.k; ++i)
    if (ref.mask[i] && src.mask[i]) joint.push_back(i);
  require(int(joint.size()) >= kNccMinJoint, Err::DegeneratePatch,
          "fewer than 9 jointly valid patch entries");
  NccResult r;
  r.joint_count = int(joint.size());
  for (int l = 0; l < ref.ch2; ++l) {
    auto s = detail::channel_stats(ref, src, l, joint);
    if (s.var_a < var_eps || s.var_b < var_eps) continue;
    r.value += s.cov / std::sqrt(s.var_a * s.var_b);
    ++r.used_channels;
  }
  require(r.used_channels > 0, Err::DegeneratePatch, "all patch channels degenerate");
  r.value = clamp(r.value / r.used_channels, -1.0, 1.0);
  return r;
}

inline double ncc(const FeaturePatch& ref, const FeaturePatch& src) {
  return ncc_full(ref, src).value;
}

// d(ncc)/d(src values). Only jointly valid entries receive gradient; the
// layout mirrors FeaturePatch::values.
inline double ncc_with_grad(const FeaturePatch& ref, const FeaturePatch& src,
                            std::vector<double>& dsrc, double var_eps = kNccVarEps) {
  std::vector<int> joint;
  for (int i = 0; i < ref.k * ref.k; ++i)
    if (ref.mask[i] && src.mask[i]) joint.push_back(i);
  require(int(joint.size()) >= kNccMinJoint, Err::DegeneratePatch,
          "fewer than 9 jointly valid patch entries");
  dsrc.assign(src.values.size(), 0.0);
  const int n = int(joint.size());
  double total = 0.0;
  int used = 0;
  std::vector<int> used_channels;
  std::vector<detail::ChannelStats> stats(ref.ch2);
  for (int l = 0; l < ref.ch2; ++l) {
    stats[l] = detail::channel_stats(ref, src, l, joint);
    if (stats[l].var_a < var_eps || stats[l].var_b < var_eps) continue;
    total += stats[l].cov / std::sqrt(stats[l].var_a * stats[l].var_b);
    used_channels.push_back(l);
    ++used;
  }
  require(used > 0, Err::DegeneratePatch, "all patch channels degenerate");
  for (int l : used_channels) {
    const auto& s = stats[l];
    double root = std::sqrt(s.var_a * s.var_b);
    for (int i : joint) {
      double da = ref.value(l, i) - s.mean_a;
      double db = src.value(l, i) - s.mean_b;
      double d = da / (n * root) - s.cov * db / (n * s.var_b * root);
      dsrc[size_t(l) * src.k * src.k + i] = d / used;
    }
  }
  return clamp(total / used, -1.0, 1.0);
}

// ----------------------------------------------------------------------------
// Per-pixel multi-scale feature-metric consistency

struct MfcPixelTerm {
  bool contributes = false;
  double loss = 0.0;                // (1/K) sum (1 - NCC_k) over the best K
  Vec3 d_ps = Vec3::Zero();         // d(loss)/d(p_s)
  Vec3 d_ns = Vec3::Zero();         // d(loss)/d(n_s)
  double best_ncc_mean = 0.0;       // for diagnostics / NCC map dumps
};

struct MfcOpts {
  int patch = 5;
  int top_k = 0;  // 0 = ceil(n_sources / 2)
  bool with_grad = true;
  // variance floor for patch channels; low-contrast patches otherwise emit
  // NCC gradients that scale as 1/sigma and destabilize the optimization
  double min_var = kNccVarEps;
};

namespace detail {

// Source patch sampled at warped positions, keeping per-entry spatial
// derivatives for the gradient chain.
struct SampledSrcPatch {
  FeaturePatch patch;
  std::vector<double> dvx;  // ch2 * k * k, d(value)/d(source pixel x)
  std::vector<double> dvy;
};

inline SampledSrcPatch sample_src_patch(const FeaturePyramid& pyr, const WarpedLattice& warp,
                                        bool with_grad) {
  SampledSrcPatch out;
  FeaturePatch& p = out.patch;
  p.k = warp.k;
  const int kk = warp.k * warp.k;
  p.values.assign(size_t(p.ch2) * kk, 0.0);
  p.mask.assign(kk, 0);
  if (with_grad) {
    out.dvx.assign(size_t(p.ch2) * kk, 0.0);
    out.dvy.assign(size_t(p.ch2) * kk, 0.0);
  }
  const FeatureMap& l0 = pyr.levels[0];
  double feat[kFeatChannels], dx[kFeatChannels], dy[kFeatChannels];
  for (int i = 0; i < kk; ++i) {
    if (!warp.valid[i]) continue;
    const Vec2& q = warp.positions[i];
    if (!(q.x() >= 0.0 && q.y() >= 0.0 && q.x() <= l0.width - 1.0 && q.y() <= l0.height - 1.0))
      continue;
    p.mask[i] = 1;
    for (int j = 0; j < kPatchLevels; ++j) {
      double scale = 1.0 / double(1 << j);
      pyr.levels[j].fetch(q.x() * scale, q.y() * scale, feat, with_grad ? dx : nullptr,
                          with_grad ? dy : nullptr);
      for (int c = 0; c < kFeatChannels; ++c) {
        int l = j * kFeatChannels + c;
        p.values[size_t(l) * kk + i] = feat[c];
        if (with_grad) {
          out.dvx[size_t(l) * kk + i] = dx[c] * scale;
          out.dvy[size_t(l) * kk + i] = dy[c] * scale;
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// Evaluates the MFC term of one reference pixel given an explicit surface
// point and normal. Gradient output is w.r.t. (p_s, n_s); the caller owns the
// chain from those to the field parameters. `sources` restricts the
// candidate views (null = all views but the reference).
inline MfcPixelTerm mfc_pixel(const std::vector<Camera>& cams,
                              const std::vector<FeaturePyramid>& pyramids, int ref_view,
                              const Vec2& q0, const Vec3& p_s, const Vec3& n_s,
                              const MfcOpts& opts, const std::vector<int>* sources = nullptr) {
  MfcPixelTerm term;
  const Camera& ref = cams[ref_view];
  double den = n_s.dot(p_s - ref.t);
  if (std::abs(den) <= 1e-9) return term;

  FeaturePatch ref_patch = sample_patch(pyramids[ref_view], q0, opts.patch);
  int valid_ref = std::accumulate(ref_patch.mask.begin(), ref_patch.mask.end(), 0);
  if (valid_ref < kNccMinJoint) return term;

  struct Candidate {
    double ncc;
    int src;
    Vec3 d_ps, d_ns;
  };
  std::vector<Candidate> cands;
  const int kk = opts.patch * opts.patch;
  std::vector<double> dsrc;
  Mat3 ref_Kinv = ref.K.inverse();

  std::vector<int> all_sources;
  if (!sources) {
    for (int v = 0; v < int(cams.size()); ++v)
      if (v != ref_view) all_sources.push_back(v);
    sources = &all_sources;
  }
  for (int src : *sources) {
    if (src == ref_view) continue;
    Homography h;
    try {
      h = plane_homography(ref, cams[src], p_s, n_s);
    } catch (const Error&) {
      continue;
    }
    WarpedLattice warp = warp_patch(h, q0, opts.patch);
    auto sp = detail::sample_src_patch(pyramids[src], warp, opts.with_grad);
    Candidate cand;
    cand.src = src;
    try {
      if (opts.with_grad) {
        cand.ncc = ncc_with_grad(ref_patch, sp.patch, dsrc, opts.min_var);
      } else {
        cand.ncc = ncc_full(ref_patch, sp.patch, opts.min_var).value;
        cands.push_back(cand);
        continue;
      }
    } catch (const Error&) {
      continue;
    }

    // chain d(ncc)/d(values) -> positions -> H -> (p_s, n_s)
    Mat3 dH = Mat3::Zero();
    int r = opts.patch / 2, i = 0;
    for (int dyp = -r; dyp <= r; ++dyp)
      for (int dxp = -r; dxp <= r; ++dxp, ++i) {
        if (!sp.patch.mask[i]) continue;
        double gx = 0.0, gy = 0.0;
        for (int l = 0; l < sp.patch.ch2; ++l) {
          double dv = dsrc[size_t(l) * kk + i];
          gx += dv * sp.dvx[size_t(l) * kk + i];
          gy += dv * sp.dvy[size_t(l) * kk + i];
        }
        Vec3 u(q0.x() + dxp, q0.y() + dyp, 1.0);
        Vec3 rr = h.H * u;
        double iz = 1.0 / rr.z();
        // q = (r0/r2, r1/r2)
        Vec3 dr(gx * iz, gy * iz, -(gx * rr.x() + gy * rr.y()) * iz * iz);
        dH += dr * u.transpose();
      }
    // H = K_src * (rel + u_t v^T / den) * K_ref^-1
    Mat3 G = cams[src].K.transpose() * dH * ref_Kinv.transpose();
    Vec3 u_t = cams[src].R.transpose() * (ref.t - cams[src].t);
    Vec3 v = ref.R.transpose() * n_s;
    Vec3 dv_vec = G.transpose() * u_t / den;
    double dden = -u_t.dot(G * v) / (den * den);
    cand.d_ns = ref.R * dv_vec + dden * (p_s - ref.t);
    cand.d_ps = dden * n_s;
    cands.push_back(cand);
  }

  if (cands.empty()) return term;
  int k_best = opts.top_k > 0 ? opts.top_k : (int(sources->size()) + 1) / 2;
  k_best = std::min(k_best, int(cands.size()));
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.ncc > b.ncc; });
  term.contributes = true;
  for (int k = 0; k < k_best; ++k) {
    term.loss += (1.0 - cands[k].ncc) / k_best;
    term.best_ncc_mean += cands[k].ncc / k_best;
    if (opts.with_grad) {
      term.d_ps -= cands[k].d_ps / k_best;
      term.d_ns -= cands[k].d_ns / k_best;
    }
  }
  return term;
}

}  // namespace gens
