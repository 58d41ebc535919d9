#pragma once

#include <optional>
#include <vector>

#include "gens/common.hpp"
#include "gens/config.hpp"
#include "gens/consistency.hpp"
#include "gens/renderer.hpp"

namespace gens {

// Flattened projection data for the per-sample source loops.
struct ProjView {
  double P[9];  // K * R^T, row-major
  double t[3];  // camera center
  double max_x = 0, max_y = 0;
};

// View data shared by every ray of a scene during training/rendering.
template <class S>
struct SceneViews {
  std::vector<Camera> cams;
  std::vector<ImageRGB> images;
  std::vector<FeaturePyramid> pyramids;
  std::vector<std::vector<int>> blend_sources;  // per view, capped nearest views
  std::vector<std::vector<int>> mfc_sources;    // per view, capped nearest views
  std::vector<ProjView> proj;

  static SceneViews build(const std::vector<Camera>& cams, const std::vector<ImageRGB>& images,
                          int pyramid_levels, int max_sources, int max_mfc_sources = 0) {
    SceneViews v;
    v.cams = cams;
    v.images = images;
    for (const auto& img : images) v.pyramids.push_back(build_pyramid(img, pyramid_levels));
    v.blend_sources.resize(cams.size());
    for (size_t r = 0; r < cams.size(); ++r) {
      std::vector<std::pair<double, int>> ranked;
      for (size_t s = 0; s < cams.size(); ++s) {
        if (s == r) continue;
        double d = (cams[s].t - cams[r].t).norm();
        ranked.emplace_back(d, int(s));
      }
      std::stable_sort(ranked.begin(), ranked.end());
      int n = std::min<int>(max_sources, int(ranked.size()));
      for (int i = 0; i < n; ++i) v.blend_sources[r].push_back(ranked[i].second);
      std::sort(v.blend_sources[r].begin(), v.blend_sources[r].end());
      v.mfc_sources.resize(cams.size());
      int nm = max_mfc_sources > 0 ? std::min<int>(max_mfc_sources, int(ranked.size()))
                                   : int(ranked.size());
      for (int i = 0; i < nm; ++i) v.mfc_sources[r].push_back(ranked[i].second);
      std::sort(v.mfc_sources[r].begin(), v.mfc_sources[r].end());
    }
    for (const auto& cam : cams) {
      ProjView pv;
      Mat3 P = cam.K * cam.R.transpose();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) pv.P[r * 3 + c] = P(r, c);
      for (int a = 0; a < 3; ++a) pv.t[a] = cam.t[a];
      pv.max_x = cam.width - 1.0;
      pv.max_y = cam.height - 1.0;
      v.proj.push_back(pv);
    }
    return v;
  }

  int n_views() const { return int(cams.size()); }
};

// Snapshot of the loss weights at one step (alpha follows the ramp).
struct StepWeights {
  double color = 1.0;
  double mfc = 0.0;
  double vc = 0.0;
  double eikonal = 0.0;
  double smooth = 0.0;
  double tv = 0.0;
  double sparse = 0.0;
  double tau = 10.0;
};

// Everything recorded while rendering one training ray, enough to replay the
// chain rule without re-deriving geometry.
template <class S>
struct RayUnit {
  int view = -1;
  Vec2 pixel = Vec2::Zero();
  Vec3 gt_color = Vec3::Zero();
  Ray ray;
  bool in_box = false;

  // one combined taped batch: [m ray samples][eikonal stencils][smooth stencils]
  std::vector<double> ts;
  std::vector<Vec3> points;
  SdfTape<S> tape;
  VecX<double> vals;
  int m = 0;              // ray sample count (prefix of vals)
  int eik_off = 0;        // offset of the eikonal block
  int smooth_off = 0;     // offset of the smooth block
  std::vector<Vec3> eik_points;
  std::vector<int> smooth_sel;  // ray-sample indices entering the smooth term

  std::vector<double> alphas;

  // blend pairs: flattened (sample, source) entries with valid projections,
  // assembled only for samples whose compositing weight clears the cutoff
  MatX<S> blend_in;
  std::vector<int> pair_begin;  // per sample, offset into pairs (+ final end)
  std::vector<Vec3> pair_color;
  VecX<double> logits;
  std::vector<Vec3> sample_color;

  CompositeResult comp;

  bool has_surface = false;
  int surf_idx = -1;
  double t_s = 0.0;
  Vec3 p_s = Vec3::Zero();

  // normal stencil (depends on t_s, so it lives in its own small tape)
  SdfTape<S> normal_tape;
  VecX<double> normal_vals;
  Vec3 g_fd = Vec3::Zero();
  Vec3 n_s = Vec3::Zero();
  bool has_normal = false;

  MfcPixelTerm mfc;

  // per-ray loss pieces
  double loss_color = 0.0;
  double sparse_sum = 0.0;
  double eik_sum = 0.0;
  double loss_smooth = 0.0;
  Vec3 n_grad = Vec3::Zero();
  std::vector<Vec3> smooth_h;

  // clears per-ray state while keeping buffer capacity for reuse
  void reset() {
    in_box = false;
    m = 0;
    eik_points.clear();
    smooth_sel.clear();
    smooth_h.clear();
    has_surface = false;
    has_normal = false;
    surf_idx = -1;
    mfc = MfcPixelTerm{};
    comp = CompositeResult{};
    loss_color = sparse_sum = eik_sum = loss_smooth = 0.0;
    n_grad = Vec3::Zero();
  }
};

namespace detail {

// Central-difference gradient stencil: 6 points around x.
inline void fd_stencil(const Vec3& x, double eps, Vec3* out) {
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = eps;
    out[2 * a] = x + e;
    out[2 * a + 1] = x - e;
  }
}

inline Vec3 fd_gather(const VecX<double>& vals, int off, double eps) {
  return Vec3(vals[off] - vals[off + 1], vals[off + 2] - vals[off + 3],
              vals[off + 4] - vals[off + 5]) /
         (2.0 * eps);
}

// Scatters d(loss)/d(gradient estimate) back onto the 6 stencil values.
inline void fd_scatter(VecX<double>& dvals, int off, double eps, const Vec3& dg) {
  for (int a = 0; a < 3; ++a) {
    dvals[off + 2 * a] += dg[a] / (2.0 * eps);
    dvals[off + 2 * a + 1] -= dg[a] / (2.0 * eps);
  }
}

}  // namespace detail

// Forward pass of one training ray. The rng arguments are per-ray streams.
template <class S>
inline void ray_forward(const Model<S>& model, const SceneViews<S>& views, const Config& cfg,
                        const StepWeights& w, RayUnit<S>& u, Rng rng_strat, Rng rng_imp,
                        Rng rng_eik) {
  const Camera& cam = views.cams[u.view];
  BBox sample_box = model.volume.box.scaled(cfg.sample_box_scale);
  Ray ray = generate_ray(cam, u.pixel, 0.0, 1.0);
  double t0, t1;
  u.in_box = intersect_box(ray.origin, ray.dir, sample_box, t0, t1) && t1 > 1e-6;
  u.loss_color = (Vec3::Zero() - u.gt_color).cwiseAbs().sum();
  if (!u.in_box) return;
  ray.near = std::max(t0, 1e-6);
  ray.far = t1;
  u.ray = ray;

  const double s = model.field.s();
  u.ts = stratified_samples(ray.near, ray.far, cfg.m_uniform, rng_strat);

  // provisional pass: importance distribution and the smooth-sample picks
  std::vector<double> prov_t;     // ts of the provisional pass
  std::vector<double> prov_w;
  const bool need_prov = cfg.m_importance > 0 || (w.smooth > 0.0 && cfg.smooth_topk > 0);
  if (need_prov) {
    std::vector<Vec3> pts(u.ts.size());
    for (size_t i = 0; i < u.ts.size(); ++i) pts[i] = ray.at(u.ts[i]);
    VecX<double> prov = sdf_forward(model, pts);
    std::vector<double> pal(u.ts.size(), 0.0);
    for (size_t i = 0; i + 1 < u.ts.size(); ++i)
      pal[i] = alpha_from_sdf(prov[i], prov[i + 1], s);
    std::vector<Vec3> dummy(u.ts.size(), Vec3::Zero());
    CompositeResult pc = composite(pal, dummy, u.ts);
    prov_t = u.ts;
    prov_w = pc.weight;
    if (cfg.m_importance > 0) {
      std::vector<double> extra = importance_samples(u.ts, pc.weight, cfg.m_importance, rng_imp);
      u.ts.insert(u.ts.end(), extra.begin(), extra.end());
      std::sort(u.ts.begin(), u.ts.end());
      for (size_t i = 1; i < u.ts.size(); ++i)
        if (!(u.ts[i] > u.ts[i - 1])) u.ts[i] = std::nextafter(u.ts[i - 1], ray.far + 1.0);
    }
  }
  const int m = int(u.ts.size());
  u.m = m;
  u.points.resize(m);
  for (int i = 0; i < m; ++i) u.points[i] = ray.at(u.ts[i]);

  // pick the auxiliary stencil centers before the main evaluation so that a
  // single taped batch covers everything
  const double eps = cfg.fd_eps;
  std::vector<Vec3> batch = u.points;
  Vec3 st[6];
  u.eik_off = int(batch.size()) * 0 + m * 0 + int(batch.size());
  u.eik_points.clear();
  if (w.eikonal > 0.0) {
    for (int k = 0; k < cfg.eik_ray_points; ++k)
      u.eik_points.push_back(ray.at(rng_eik.uniform(ray.near, ray.far)));
    for (int k = 0; k < cfg.eik_box_points; ++k) {
      Vec3 p;
      for (int a = 0; a < 3; ++a)
        p[a] = rng_eik.uniform(model.volume.box.min[a], model.volume.box.max[a]);
      u.eik_points.push_back(p);
    }
    for (const Vec3& p : u.eik_points) {
      detail::fd_stencil(p, eps, st);
      batch.insert(batch.end(), st, st + 6);
    }
  }
  u.smooth_off = int(batch.size());
  u.smooth_sel.clear();
  if (w.smooth > 0.0 && !prov_w.empty()) {
    // rank by the provisional weights (a detached heuristic); the loss value
    // still uses the final compositing weights
    std::vector<std::pair<double, int>> ranked;
    for (size_t i = 0; i + 1 < prov_t.size(); ++i)
      if (prov_w[i] > 1e-12) ranked.emplace_back(prov_w[i], int(i));
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    int n_sel = cfg.smooth_topk > 0 ? std::min<int>(cfg.smooth_topk, int(ranked.size()))
                                    : int(ranked.size());
    for (int k = 0; k < n_sel; ++k) {
      // map the provisional sample to its post-merge index via its exact t
      double tv = prov_t[ranked[k].second];
      int idx = int(std::lower_bound(u.ts.begin(), u.ts.end(), tv) - u.ts.begin());
      if (idx < m && u.ts[idx] == tv) u.smooth_sel.push_back(idx);
    }
    std::sort(u.smooth_sel.begin(), u.smooth_sel.end());
    u.smooth_sel.erase(std::unique(u.smooth_sel.begin(), u.smooth_sel.end()), u.smooth_sel.end());
    for (int i : u.smooth_sel) {
      for (int side = 0; side < 2; ++side) {
        Vec3 c = u.points[i] + (side == 0 ? eps : -eps) * ray.dir;
        detail::fd_stencil(c, eps, st);
        batch.insert(batch.end(), st, st + 6);
      }
    }
  }

  u.vals = sdf_forward(model, batch, &u.tape);

  u.alphas.assign(m, 0.0);
  for (int i = 0; i + 1 < m; ++i)
    u.alphas[i] = std::min(alpha_from_sdf(u.vals[i], u.vals[i + 1], s), 1.0 - 1e-10);

  // compositing weights from the alphas alone; colors are blended only where
  // the weight clears the cutoff
  u.comp = CompositeResult{};
  u.comp.weight.resize(m);
  {
    double trans = 1.0;
    for (int i = 0; i < m; ++i) {
      u.comp.weight[i] = trans * u.alphas[i];
      trans *= 1.0 - u.alphas[i];
    }
  }

  const auto& srcs = views.blend_sources[u.view];
  u.pair_begin.assign(m + 1, 0);
  const int max_pairs = (m - 1) * int(srcs.size());
  u.blend_in.resize(kFeatChannels + 3, max_pairs);
  u.pair_color.resize(max_pairs);
  const double cutoff = cfg.blend_weight_cutoff;
  int n_pairs = 0;
  for (int i = 0; i + 1 < m; ++i) {
    u.pair_begin[i] = n_pairs;
    if (u.comp.weight[i] <= cutoff) continue;
    const Vec3& p = u.points[i];
    for (int sv : srcs) {
      const ProjView& pv = views.proj[sv];
      double d0 = p[0] - pv.t[0], d1 = p[1] - pv.t[1], d2 = p[2] - pv.t[2];
      double z = pv.P[6] * d0 + pv.P[7] * d1 + pv.P[8] * d2;
      if (!(z > 1e-9)) continue;
      double iz = 1.0 / z;
      double px = (pv.P[0] * d0 + pv.P[1] * d1 + pv.P[2] * d2) * iz;
      double py = (pv.P[3] * d0 + pv.P[4] * d1 + pv.P[5] * d2) * iz;
      if (!(px >= 0.0 && py >= 0.0 && px <= pv.max_x && py <= pv.max_y)) continue;
      const ImageRGB& img = views.images[sv];
      int x0 = std::min(int(px), img.width - 2), y0 = std::min(int(py), img.height - 2);
      double fx = px - x0, fy = py - y0;
      double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy, w11 = fx * fy;
      const float* c00 = img.px(x0, y0);
      const float* c10 = c00 + 3;
      const float* c01 = img.px(x0, y0 + 1);
      const float* c11 = c01 + 3;
      Vec3& color = u.pair_color[n_pairs];
      for (int c = 0; c < 3; ++c)
        color[c] = w00 * c00[c] + w10 * c10[c] + w01 * c01[c] + w11 * c11[c];
      const FeatureMap& fm = views.pyramids[sv].levels[0];
      const float* f00 = fm.px(x0, y0);
      const float* f10 = f00 + kFeatChannels;
      const float* f01 = fm.px(x0, y0 + 1);
      const float* f11 = f01 + kFeatChannels;
      S* col = u.blend_in.data() + size_t(n_pairs) * (kFeatChannels + 3);
      for (int c = 0; c < kFeatChannels; ++c)
        col[c] = S(w00 * f00[c] + w10 * f10[c] + w01 * f01[c] + w11 * f11[c]);
      double inv_len = 1.0 / std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
      col[kFeatChannels + 0] = S(ray.dir[0] - d0 * inv_len);
      col[kFeatChannels + 1] = S(ray.dir[1] - d1 * inv_len);
      col[kFeatChannels + 2] = S(ray.dir[2] - d2 * inv_len);
      ++n_pairs;
    }
  }
  // the last sample never contributes (its alpha is 0), so it gets no pairs
  u.pair_begin[m - 1] = n_pairs;
  u.pair_begin[m] = n_pairs;
  const int P = n_pairs;
  u.blend_in.conservativeResize(Eigen::NoChange, P);
  u.pair_color.resize(P);
  u.logits.resize(P);
  if (P > 0) {
    MatX<S> lg = mlp_forward(model.field.blend_mlp, u.blend_in);
    for (int p = 0; p < P; ++p) u.logits[p] = double(lg(0, p));
  }
  u.sample_color.assign(m, Vec3::Zero());
  for (int i = 0; i + 1 < m; ++i) {
    int b = u.pair_begin[i], e = u.pair_begin[i + 1];
    if (b == e) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (int p = b; p < e; ++p) mx = std::max(mx, u.logits[p]);
    double den = 0.0;
    for (int p = b; p < e; ++p) den += std::exp(u.logits[p] - mx);
    Vec3 c = Vec3::Zero();
    for (int p = b; p < e; ++p) c += std::exp(u.logits[p] - mx) / den * u.pair_color[p];
    u.sample_color[i] = c;
  }
  for (int i = 0; i < m; ++i) {
    u.comp.color += u.comp.weight[i] * u.sample_color[i];
    u.comp.depth += u.comp.weight[i] * u.ts[i];
    u.comp.opacity += u.comp.weight[i];
  }
  u.loss_color = (u.comp.color - u.gt_color).cwiseAbs().sum();

  for (int i = 0; i < m; ++i) u.sparse_sum += std::exp(-w.tau * std::abs(u.vals[i]));

  if (auto hit = locate_surface(u.ts, u.vals)) {
    u.has_surface = true;
    u.surf_idx = hit->index;
    u.t_s = hit->t_s;
    u.p_s = ray.at(hit->t_s);
  }

  for (size_t k = 0; k < u.eik_points.size(); ++k) {
    Vec3 g = detail::fd_gather(u.vals, u.eik_off + 6 * int(k), eps);
    double d = g.norm() - 1.0;
    u.eik_sum += d * d;
  }
  u.n_grad = Vec3::Zero();
  u.loss_smooth = 0.0;
  if (!u.smooth_sel.empty()) {
    u.smooth_h.resize(u.smooth_sel.size());
    for (size_t k = 0; k < u.smooth_sel.size(); ++k) {
      Vec3 gp = detail::fd_gather(u.vals, u.smooth_off + 12 * int(k), eps);
      Vec3 gm = detail::fd_gather(u.vals, u.smooth_off + 12 * int(k) + 6, eps);
      u.smooth_h[k] = (gp - gm) / (2.0 * eps);
      u.n_grad += u.comp.weight[u.smooth_sel[k]] * u.smooth_h[k];
    }
    u.loss_smooth = u.n_grad.norm();
  }

  // normal stencil at the surface point (own tape: positions depend on t_s)
  if (u.has_surface && w.mfc > 0.0) {
    detail::fd_stencil(u.p_s, eps, st);
    std::vector<Vec3> npts(st, st + 6);
    u.normal_vals = sdf_forward(model, npts, &u.normal_tape);
    u.g_fd = detail::fd_gather(u.normal_vals, 0, eps);
    if (u.g_fd.norm() > 1e-12) {
      u.n_s = u.g_fd.normalized();
      u.has_normal = true;
      MfcOpts mo;
      mo.patch = cfg.patch_size;
      mo.top_k = cfg.mfc_topk;
      mo.with_grad = true;
      mo.min_var = cfg.mfc_min_var;
      u.mfc = mfc_pixel(views.cams, views.pyramids, u.view, u.pixel, u.p_s, u.n_s, mo,
                        &views.mfc_sources[u.view]);
      if (cfg.mfc_grad_clip > 0.0) {
        // optimizer-side safeguard: bound the per-pixel surface gradient
        double norm = std::sqrt(u.mfc.d_ps.squaredNorm() + u.mfc.d_ns.squaredNorm());
        if (norm > cfg.mfc_grad_clip) {
          double f = cfg.mfc_grad_clip / norm;
          u.mfc.d_ps *= f;
          u.mfc.d_ns *= f;
        }
      }
    }
  }
}

// Normalizers shared by a whole batch; fixed before backward.
struct BatchNorms {
  double inv_rays = 0.0;     // 1 / |Q|
  double inv_sparse = 0.0;   // 1 / total sample count
  double inv_eik = 0.0;      // 1 / total eikonal points
  double inv_mfc = 0.0;      // 1 / contributing pixels
};

template <class S>
inline void ray_backward(const Model<S>& model, const Config& cfg, const StepWeights& w,
                         const BatchNorms& nm, RayUnit<S>& u, FieldGrads<S>& grads) {
  if (!u.in_box) return;
  const int m = u.m;
  const double s = model.field.s();
  const double eps = cfg.fd_eps;

  Vec3 dC;
  for (int a = 0; a < 3; ++a) {
    double d = u.comp.color[a] - u.gt_color[a];
    dC[a] = w.color * nm.inv_rays * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
  }

  VecX<double> dvals = VecX<double>::Zero(u.vals.size());
  if (w.sparse > 0.0) {
    for (int i = 0; i < m; ++i) {
      double v = u.vals[i];
      double sign = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
      dvals[i] += w.sparse * nm.inv_sparse * (-w.tau * sign * std::exp(-w.tau * std::abs(v)));
    }
  }

  std::vector<double> dweight(m, 0.0);
  if (w.smooth > 0.0 && !u.smooth_sel.empty() && u.loss_smooth > 1e-12) {
    // n_grad = sum_sel w_i * h_i with h_i = (g(p+eps u) - g(p-eps u)) / 2eps
    Vec3 dn_grad = w.smooth * nm.inv_rays * u.n_grad / u.loss_smooth;
    for (size_t k = 0; k < u.smooth_sel.size(); ++k) {
      int i = u.smooth_sel[k];
      dweight[i] += dn_grad.dot(u.smooth_h[k]);
      Vec3 dh = u.comp.weight[i] * dn_grad;
      detail::fd_scatter(dvals, u.smooth_off + 12 * int(k), eps, dh / (2.0 * eps));
      detail::fd_scatter(dvals, u.smooth_off + 12 * int(k) + 6, eps, -dh / (2.0 * eps));
    }
  }

  if (w.eikonal > 0.0) {
    for (size_t k = 0; k < u.eik_points.size(); ++k) {
      int off = u.eik_off + 6 * int(k);
      Vec3 g = detail::fd_gather(u.vals, off, eps);
      double n = g.norm();
      if (n < 1e-12) continue;
      Vec3 dg = w.eikonal * nm.inv_eik * 2.0 * (n - 1.0) * g / n;
      detail::fd_scatter(dvals, off, eps, dg);
    }
  }

  // MFC chain: d(loss)/d(n_s) through the normal stencil, d(loss)/d(p_s)
  // through both the homography and the moving stencil, then into t_s and
  // the bracketing SDF samples.
  if (u.has_normal && w.mfc > 0.0 && u.mfc.contributes) {
    double sc = w.mfc * nm.inv_mfc;
    Vec3 dps_total = sc * u.mfc.d_ps;
    if (cfg.mfc_normal_chain) {
      VecX<double> dnv = VecX<double>::Zero(6);
      Vec3 dn = sc * u.mfc.d_ns;
      double gn = u.g_fd.norm();
      Vec3 dg = (Mat3::Identity() - u.n_s * u.n_s.transpose()) / gn * dn;
      detail::fd_scatter(dnv, 0, eps, dg);
      std::vector<Vec3> dnpts;
      sdf_backward(model, u.normal_tape, dnv, &grads, &dnpts);
      for (int j = 0; j < 6; ++j) dps_total += dnpts[j];
    }
    double dts = dps_total.dot(u.ray.dir);
    if (dts != 0.0) {
      double d1, d2;
      locate_surface_grad(u.ts[u.surf_idx], u.ts[u.surf_idx + 1], u.vals[u.surf_idx],
                          u.vals[u.surf_idx + 1], d1, d2);
      dvals[u.surf_idx] += dts * d1;
      dvals[u.surf_idx + 1] += dts * d2;
    }
  }

  // blend backward: d(loss)/d(logits) via softmax, then through the MLP
  const int P = int(u.logits.size());
  if (P > 0) {
    MatX<S> dlogit(1, P);
    for (int p = 0; p < P; ++p) dlogit(0, p) = S(0);
    for (int i = 0; i + 1 < m; ++i) {
      int b = u.pair_begin[i], e = u.pair_begin[i + 1];
      if (b == e) continue;
      Vec3 dci = u.comp.weight[i] * dC;
      double mx = -std::numeric_limits<double>::infinity();
      for (int p = b; p < e; ++p) mx = std::max(mx, u.logits[p]);
      double den = 0.0;
      for (int p = b; p < e; ++p) den += std::exp(u.logits[p] - mx);
      double wsum = 0.0;
      std::vector<double> wp(e - b), gp(e - b);
      for (int p = b; p < e; ++p) {
        wp[p - b] = std::exp(u.logits[p] - mx) / den;
        gp[p - b] = dci.dot(u.pair_color[p]);
        wsum += wp[p - b] * gp[p - b];
      }
      for (int p = b; p < e; ++p) dlogit(0, p) = S(wp[p - b] * (gp[p - b] - wsum));
    }
    static thread_local MlpTape<S> btape;
    mlp_forward(model.field.blend_mlp, u.blend_in, &btape);
    mlp_backward(model.field.blend_mlp, btape, dlogit, &grads.blend, nullptr);
  }

  // composite backward: fold color and direct weight upstreams into alpha
  std::vector<double> gw(m, 0.0);
  for (int i = 0; i < m; ++i) gw[i] = dC.dot(u.sample_color[i]) + dweight[i];
  std::vector<double> dalpha;
  composite_backward(u.alphas, gw, dalpha);
  for (int i = 0; i + 1 < m; ++i) {
    if (dalpha[i] == 0.0) continue;
    if (u.alphas[i] >= 1.0 - 1e-10) continue;  // clamped
    double d1, d2, ds;
    alpha_from_sdf_grad(u.vals[i], u.vals[i + 1], s, d1, d2, ds);
    dvals[i] += dalpha[i] * d1;
    dvals[i + 1] += dalpha[i] * d2;
    grads.s_raw += dalpha[i] * ds * model.field.ds_dsraw();
  }

  sdf_backward(model, u.tape, dvals, &grads, nullptr);
}

// ----------------------------------------------------------------------------
// Multi-scale feature-metric consistency over a pixel batch

struct MfcLossResult {
  double loss = 0.0;
  int contributing = 0;
};

// Per pixel with a located surface: surface point via the first-interval
// rule, normal from the finite-difference stencil, best-K NCC term per
// Eq.-10 semantics. Pixels without a surface (or with degenerate patches)
// contribute zero. Gradients flow into the field and volume when `grads` is
// given.
template <class S>
inline MfcLossResult mfc_loss(const Model<S>& model, const SceneViews<S>& views,
                              const std::vector<std::pair<int, Vec2>>& pixels, const Config& cfg,
                              std::type_identity_t<FieldGrads<S>*> grads) {
  require(views.n_views() >= 2, Err::InsufficientViews, "mfc needs at least two views");
  StepWeights w;
  w.color = 0.0;
  w.mfc = 1.0;
  w.eikonal = w.smooth = w.tv = w.sparse = w.vc = 0.0;
  std::vector<RayUnit<S>> units(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    units[i].view = pixels[i].first;
    units[i].pixel = pixels[i].second;
    ray_forward(model, views, cfg, w, units[i], make_rng(cfg.seed, Stream::Stratify, i),
                make_rng(cfg.seed, Stream::Importance, i),
                make_rng(cfg.seed, Stream::EikonalPoints, i));
  }
  MfcLossResult out;
  for (const auto& u : units)
    if (u.mfc.contributes) {
      out.loss += u.mfc.loss;
      ++out.contributing;
    }
  if (out.contributing > 0) out.loss /= out.contributing;
  if (grads && out.contributing > 0) {
    BatchNorms nm;
    nm.inv_rays = 1.0 / double(pixels.size());
    nm.inv_mfc = 1.0 / double(out.contributing);
    nm.inv_sparse = nm.inv_eik = 0.0;
    for (auto& u : units) ray_backward(model, cfg, w, nm, u, *grads);
    grads->volume.finalize();
  }
  return out;
}

// ----------------------------------------------------------------------------
// Fast forward-only rendering (batched SDF evaluations), used by the CLI and
// evaluation paths.

template <class S>
inline PixelRender render_ray_batched(const Model<S>& model, const SceneViews<S>& views, int view,
                                      const Vec2& pixel, const Config& cfg, Rng rng_strat,
                                      Rng rng_imp, bool want_surface = true) {
  PixelRender out;
  BBox sample_box = model.volume.box.scaled(cfg.sample_box_scale);
  Ray ray = generate_ray(views.cams[view], pixel, 0.0, 1.0);
  double t0, t1;
  if (!intersect_box(ray.origin, ray.dir, sample_box, t0, t1) || t1 <= 1e-6) return out;
  ray.near = std::max(t0, 1e-6);
  ray.far = t1;
  const double s = model.field.s();

  std::vector<double> ts = stratified_samples(ray.near, ray.far, cfg.m_uniform, rng_strat);
  std::vector<Vec3> pts(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) pts[i] = ray.at(ts[i]);
  if (cfg.m_importance > 0) {
    VecX<double> prov = sdf_forward(model, pts);
    std::vector<double> pal(ts.size(), 0.0);
    for (size_t i = 0; i + 1 < ts.size(); ++i) pal[i] = alpha_from_sdf(prov[i], prov[i + 1], s);
    std::vector<Vec3> dummy(ts.size(), Vec3::Zero());
    CompositeResult pc = composite(pal, dummy, ts);
    std::vector<double> extra = importance_samples(ts, pc.weight, cfg.m_importance, rng_imp);
    ts.insert(ts.end(), extra.begin(), extra.end());
    std::sort(ts.begin(), ts.end());
    for (size_t i = 1; i < ts.size(); ++i)
      if (!(ts[i] > ts[i - 1])) ts[i] = std::nextafter(ts[i - 1], ray.far + 1.0);
    pts.resize(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) pts[i] = ray.at(ts[i]);
  }
  const int m = int(ts.size());
  VecX<double> sdfs = sdf_forward(model, pts);
  RaySampleBatch& b = out.samples;
  b.t = ts;
  b.sdf.assign(sdfs.data(), sdfs.data() + m);
  b.alpha.assign(m, 0.0);
  for (int i = 0; i + 1 < m; ++i) b.alpha[i] = alpha_from_sdf(sdfs[i], sdfs[i + 1], s);
  b.color.assign(m, Vec3::Zero());
  std::vector<SourceView> svs;
  for (int sv : views.blend_sources[view])
    svs.push_back(SourceView{&views.cams[sv], &views.images[sv], &views.pyramids[sv]});
  for (int i = 0; i + 1 < m; ++i)
    b.color[i] = model_point_color(model, svs, pts[i], ray.dir);
  CompositeResult comp = composite(b.alpha, b.color, b.t);
  b.weight = comp.weight;
  out.color = comp.color;
  out.depth = comp.depth;
  out.opacity = comp.opacity;
  if (want_surface) {
    if (auto hit = locate_surface(b.t, b.sdf)) {
      SurfacePoint sp;
      sp.t_s = hit->t_s;
      sp.position = ray.at(hit->t_s);
      Vec3 g = sdf_gradient(model, sp.position);
      if (g.norm() > 1e-12) {
        sp.normal = g.normalized();
        out.surface = sp;
      }
    }
  }
  return out;
}

}  // namespace gens
