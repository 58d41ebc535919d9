#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

#include "gens/common.hpp"
#include "gens/field.hpp"
#include "gens/geometry.hpp"
#include "gens/image.hpp"
#include "gens/pyramid.hpp"
#include "gens/rng.hpp"

namespace gens {

// Per-ray sample data after compositing (Eq. style: alpha_i pairs sample i
// with sample i+1; the final sample carries alpha 0).
struct RaySampleBatch {
  std::vector<double> t;
  std::vector<double> sdf;
  std::vector<double> alpha;
  std::vector<double> weight;
  std::vector<Vec3> color;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// NeuS-style opacity from two consecutive SDF samples. The denominator is
// clamped at 1e-6; deeply interior samples otherwise divide by ~0.
inline double alpha_from_sdf(double sdf_i, double sdf_next, double s) {
  require(s > 0.0, Err::ParseError, "anneal factor must be positive");
  double phi1 = sigmoid(s * sdf_i);
  double phi2 = sigmoid(s * sdf_next);
  return std::max((phi1 - phi2) / std::max(phi1, 1e-6), 0.0);
}

// d(alpha)/d(sdf_i), d(alpha)/d(sdf_next), d(alpha)/d(s) of the exact
// expression above (zero in the max-clamped region).
inline void alpha_from_sdf_grad(double sdf_i, double sdf_next, double s, double& da_d1,
                                double& da_d2, double& da_ds) {
  double phi1 = sigmoid(s * sdf_i);
  double phi2 = sigmoid(s * sdf_next);
  double den = std::max(phi1, 1e-6);
  double raw = (phi1 - phi2) / den;
  if (raw <= 0.0) {
    da_d1 = da_d2 = da_ds = 0.0;
    return;
  }
  double dphi1_dx = s * phi1 * (1 - phi1);
  double dphi2_dx = s * phi2 * (1 - phi2);
  double dphi1_ds = sdf_i * phi1 * (1 - phi1);
  double dphi2_ds = sdf_next * phi2 * (1 - phi2);
  double dden_dphi1 = phi1 > 1e-6 ? 1.0 : 0.0;
  // alpha = (phi1 - phi2) / den
  double dalpha_dphi1 = 1.0 / den - (phi1 - phi2) / (den * den) * dden_dphi1;
  double dalpha_dphi2 = -1.0 / den;
  da_d1 = dalpha_dphi1 * dphi1_dx;
  da_d2 = dalpha_dphi2 * dphi2_dx;
  da_ds = dalpha_dphi1 * dphi1_ds + dalpha_dphi2 * dphi2_ds;
}

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double opacity = 0.0;
  std::vector<double> weight;
};

inline CompositeResult composite(const std::vector<double>& alphas, const std::vector<Vec3>& colors,
                                 const std::vector<double>& ts) {
  CompositeResult r;
  r.weight.resize(alphas.size());
  double trans = 1.0;
  for (size_t i = 0; i < alphas.size(); ++i) {
    double w = trans * alphas[i];
    r.weight[i] = w;
    r.color += w * colors[i];
    if (!ts.empty()) r.depth += w * ts[i];
    r.opacity += w;
    trans *= 1.0 - alphas[i];
  }
  return r;
}

// Adjoint of composite: turns per-weight upstreams into per-alpha upstreams.
// g[i] must already hold dL/dweight_i (color, depth and any direct terms
// folded in by the caller).
inline void composite_backward(const std::vector<double>& alphas, const std::vector<double>& g,
                               std::vector<double>& dalpha) {
  const size_t n = alphas.size();
  dalpha.assign(n, 0.0);
  std::vector<double> trans(n, 1.0);
  for (size_t i = 1; i < n; ++i) trans[i] = trans[i - 1] * (1.0 - alphas[i - 1]);
  // suffix[k] = sum_{i>k} w_i * g_i, with w_i = trans[i] * alpha_i
  double suffix = 0.0;
  for (size_t k = n; k-- > 0;) {
    double om = std::max(1.0 - alphas[k], 1e-12);
    dalpha[k] = trans[k] * g[k] - suffix / om;
    suffix += trans[k] * alphas[k] * g[k];
  }
}

struct SurfaceHit {
  int index = -1;   // bracketing pair (index, index + 1)
  double t_s = 0.0;
};

// First sign change from non-negative to negative along the ray; linear
// interpolation of the bracketing samples gives t_s.
template <class Ts, class Sdfs>
inline std::optional<SurfaceHit> locate_surface(const Ts& ts, const Sdfs& sdfs) {
  for (size_t i = 0; i + 1 < size_t(ts.size()); ++i) {
    if (sdfs[i] >= 0.0 && sdfs[i + 1] < 0.0) {
      double t_s = (sdfs[i] * ts[i + 1] - sdfs[i + 1] * ts[i]) / (sdfs[i] - sdfs[i + 1]);
      return SurfaceHit{int(i), t_s};
    }
  }
  return std::nullopt;
}

// d(t_s)/d(sdf_1), d(t_s)/d(sdf_2) for the bracketing pair.
inline void locate_surface_grad(double t1, double t2, double s1, double s2, double& dts_ds1,
                                double& dts_ds2) {
  double den = s1 - s2;
  dts_ds1 = -s2 * (t2 - t1) / (den * den);
  dts_ds2 = s1 * (t2 - t1) / (den * den);
}

// ----------------------------------------------------------------------------
// Ray sampling

inline std::vector<double> stratified_samples(double near, double far, int m, Rng& rng) {
  std::vector<double> ts(m);
  double step = (far - near) / m;
  for (int i = 0; i < m; ++i) ts[i] = near + (i + rng.uniform()) * step;
  return ts;
}

// Draws `m_imp` samples from the piecewise-constant distribution over the
// intervals of `ts` with density proportional to the provisional weights
// (floored so empty rays degrade to uniform).
inline std::vector<double> importance_samples(const std::vector<double>& ts,
                                              const std::vector<double>& weights, int m_imp,
                                              Rng& rng) {
  const int n_int = int(ts.size()) - 1;
  std::vector<double> pdf(n_int);
  double total = 0.0;
  for (int i = 0; i < n_int; ++i) {
    pdf[i] = 0.5 * (weights[i] + weights[i + 1]) + 1e-4 / n_int;
    total += pdf[i];
  }
  std::vector<double> cdf(n_int + 1, 0.0);
  for (int i = 0; i < n_int; ++i) cdf[i + 1] = cdf[i] + pdf[i] / total;
  cdf[n_int] = 1.0;
  std::vector<double> out(m_imp);
  for (int k = 0; k < m_imp; ++k) {
    double u = (k + rng.uniform()) / m_imp;
    int i = int(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) - 1;
    i = clamp(i, 0, n_int - 1);
    double span = cdf[i + 1] - cdf[i];
    double f = span > 0 ? (u - cdf[i]) / span : 0.5;
    out[k] = ts[i] + f * (ts[i + 1] - ts[i]);
  }
  return out;
}

using SdfFn = std::function<double(const Vec3&)>;

// Stratified uniform samples plus one importance round against a provisional
// compositing pass of the supplied field. Returns strictly increasing ts.
inline std::vector<double> sample_ray(const Ray& ray, int m_uniform, int m_importance, Rng& rng,
                                      const SdfFn& sdf_fn = nullptr, double s = 30.0) {
  require(m_uniform >= 2, Err::ParseError, "need at least two uniform samples");
  std::vector<double> ts = stratified_samples(ray.near, ray.far, m_uniform, rng);
  if (m_importance > 0 && sdf_fn) {
    std::vector<double> sdfs(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) sdfs[i] = sdf_fn(ray.at(ts[i]));
    std::vector<double> alphas(ts.size(), 0.0);
    for (size_t i = 0; i + 1 < ts.size(); ++i) alphas[i] = alpha_from_sdf(sdfs[i], sdfs[i + 1], s);
    std::vector<Vec3> dummy(ts.size(), Vec3::Zero());
    CompositeResult provisional = composite(alphas, dummy, ts);
    std::vector<double> extra = importance_samples(ts, provisional.weight, m_importance, rng);
    ts.insert(ts.end(), extra.begin(), extra.end());
    std::sort(ts.begin(), ts.end());
    for (size_t i = 1; i < ts.size(); ++i)
      if (!(ts[i] > ts[i - 1])) ts[i] = std::nextafter(ts[i - 1], ray.far + 1.0);
  }
  return ts;
}

// ----------------------------------------------------------------------------
// Generic pixel rendering

struct RenderOpts {
  int m_uniform = 64;
  int m_importance = 32;
  double s = 30.0;
};

struct PixelRender {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double opacity = 0.0;
  std::optional<SurfacePoint> surface;
  RaySampleBatch samples;
};

// Composes sampling, SDF-to-alpha conversion, per-sample coloring,
// compositing and first-interval surface extraction. Field and color are
// injected so tests can drive the pipeline with analytic oracles.
template <class SdfF, class GradF, class ColorF>
PixelRender render_pixel_with(const Ray& ray, SdfF&& sdf_fn, GradF&& grad_fn, ColorF&& color_fn,
                              const RenderOpts& opt, Rng rng) {
  PixelRender out;
  std::vector<double> ts =
      sample_ray(ray, opt.m_uniform, opt.m_importance, rng, SdfFn(sdf_fn), opt.s);
  const size_t m = ts.size();
  RaySampleBatch& b = out.samples;
  b.t = ts;
  b.sdf.resize(m);
  b.alpha.assign(m, 0.0);
  b.color.assign(m, Vec3::Zero());
  for (size_t i = 0; i < m; ++i) b.sdf[i] = sdf_fn(ray.at(ts[i]));
  for (size_t i = 0; i + 1 < m; ++i) b.alpha[i] = alpha_from_sdf(b.sdf[i], b.sdf[i + 1], opt.s);
  for (size_t i = 0; i + 1 < m; ++i) b.color[i] = color_fn(ray.at(ts[i]));
  CompositeResult comp = composite(b.alpha, b.color, b.t);
  b.weight = comp.weight;
  out.color = comp.color;
  out.depth = comp.depth;
  out.opacity = comp.opacity;
  if (auto hit = locate_surface(b.t, b.sdf)) {
    SurfacePoint sp;
    sp.t_s = hit->t_s;
    sp.position = ray.at(hit->t_s);
    Vec3 g = grad_fn(sp.position);
    if (g.norm() > 1e-12) {
      sp.normal = g.normalized();
      out.surface = sp;
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Model-backed rendering (shared by the CLI renderer and tests)

struct SourceView {
  const Camera* cam = nullptr;
  const ImageRGB* image = nullptr;
  const FeaturePyramid* pyramid = nullptr;
};

// Blends source-view colors at p as seen from direction `dir`.
template <class S>
inline Vec3 model_point_color(const Model<S>& model, const std::vector<SourceView>& sources,
                              const Vec3& p, const Vec3& dir) {
  std::vector<Vec3> colors, dirs;
  std::vector<VecX<double>> feats;
  for (const auto& sv : sources) {
    Projection pr;
    if (!try_project(*sv.cam, p, pr)) continue;
    if (!sv.image->inside(pr.pixel.x(), pr.pixel.y())) continue;
    colors.push_back(sv.image->bilinear(pr.pixel.x(), pr.pixel.y()));
    VecX<double> f(kFeatChannels);
    double tmp[kFeatChannels];
    sv.pyramid->levels[0].fetch(pr.pixel.x(), pr.pixel.y(), tmp);
    for (int c = 0; c < kFeatChannels; ++c) f[c] = tmp[c];
    feats.push_back(std::move(f));
    dirs.push_back(dir - (p - sv.cam->t).normalized());
  }
  if (colors.empty()) return Vec3::Zero();
  return blend_color(model.field, colors, feats, dirs);
}

template <class S>
inline PixelRender render_pixel(const Model<S>& model, const std::vector<SourceView>& sources,
                                const Ray& ray, const RenderOpts& opt_in, Rng rng) {
  RenderOpts opt = opt_in;
  opt.s = model.field.s();
  return render_pixel_with(
      ray, [&](const Vec3& p) { return sdf(model, p); },
      [&](const Vec3& p) { return sdf_gradient(model, p); },
      [&](const Vec3& p) { return model_point_color(model, sources, p, ray.dir); }, opt, rng);
}

}  // namespace gens
