#pragma once

#include <vector>

#include "gens/common.hpp"
#include "gens/config.hpp"
#include "gens/mlp.hpp"
#include "gens/volume.hpp"

namespace gens {

// SDF decoder and color-blending MLP weights plus the anneal sharpness.
// s = exp(clamp(s_raw, lo, hi)) keeps the anneal factor strictly positive.
template <class S>
struct FieldParams {
  Mlp<S> sdf_mlp;    // (3 + Ch1) -> 1
  Mlp<S> blend_mlp;  // (kFeatChannels + 3) -> 1 logit per source
  double s_raw = 0.0;
  double s_raw_min = -2.0, s_raw_max = 8.0;

  double s() const { return std::exp(clamp(s_raw, s_raw_min, s_raw_max)); }
  double ds_dsraw() const {
    return (s_raw > s_raw_min && s_raw < s_raw_max) ? s() : 0.0;
  }
};

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double t_s = 0.0;
};

template <class S>
struct Model {
  MultiScaleVolume<S> volume;
  VoxelMask mask;
  FieldParams<S> field;

  int feature_dim() const { return volume.feature_dim(); }

  static Model create(const Config& cfg, Rng& rng) {
    Model m;
    m.volume = MultiScaleVolume<S>::create(cfg.levels, cfg.finest, cfg.channels,
                                           BBox{Vec3::Constant(cfg.bbox_min),
                                                Vec3::Constant(cfg.bbox_max)});
    m.field.sdf_mlp = Mlp<S>::make(3 + m.volume.feature_dim(), cfg.sdf_width, cfg.sdf_depth, 1,
                                   cfg.softplus_beta);
    geometric_init(m.field.sdf_mlp, rng, cfg.geo_radius, cfg.feat_weight_scale);
    m.field.blend_mlp =
        Mlp<S>::make(kFeatChannels + 3, cfg.blend_width, cfg.blend_depth, 1, cfg.softplus_beta);
    he_init(m.field.blend_mlp, rng);
    m.field.s_raw_min = cfg.s_raw_min;
    m.field.s_raw_max = cfg.s_raw_max;
    m.field.s_raw = clamp(std::log(cfg.s_init), cfg.s_raw_min, cfg.s_raw_max);
    return m;
  }
};

// Gradient buffers for everything a training step touches.
template <class S>
struct FieldGrads {
  MlpGrad<S> sdf;
  MlpGrad<S> blend;
  double s_raw = 0.0;
  VolumeGrad volume;

  void init(const Model<S>& m) {
    sdf.init(m.field.sdf_mlp);
    blend.init(m.field.blend_mlp);
    s_raw = 0.0;
    volume.init(m.volume.n_levels(), m.volume.ch);
  }
  void clear() {
    sdf.clear();
    blend.clear();
    s_raw = 0.0;
    volume.clear();
  }
  void merge(const FieldGrads& o) {
    sdf.merge(o.sdf);
    blend.merge(o.blend);
    s_raw += o.s_raw;
    volume.merge(o.volume);
  }
};

// Activations of one batched SDF evaluation. One backward per forward.
template <class S>
struct SdfTape {
  std::vector<Vec3> points;
  MlpTape<S> mlp;
};

// Evaluates sdf at a batch of points, recording activations when `tape` is
// given. Returns one value per point.
template <class S>
inline VecX<double> sdf_forward(const Model<S>& m, const std::vector<Vec3>& pts,
                                SdfTape<S>* tape = nullptr) {
  const int in_dim = 3 + m.volume.feature_dim();
  MatX<S> x(in_dim, pts.size());
  std::vector<double> feat(m.volume.feature_dim());
  for (size_t i = 0; i < pts.size(); ++i) {
    for (int a = 0; a < 3; ++a) x(a, i) = S(pts[i][a]);
    m.volume.feature(pts[i], feat.data());
    for (int c = 0; c < int(feat.size()); ++c) x(3 + c, i) = S(feat[c]);
  }
  if (tape) tape->points = pts;
  MatX<S> y = mlp_forward(m.field.sdf_mlp, x, tape ? &tape->mlp : nullptr);
  return y.row(0).transpose().template cast<double>();
}

// Backward through a recorded evaluation. Parameter gradients go to `grads`
// (may be null for position-only gradients); returns d(loss)/d(point) when
// `dpts` is non-null. The volume path respects the prune mask.
template <class S>
inline void sdf_backward(const Model<S>& m, SdfTape<S>& tape, const VecX<double>& dvals,
                         std::type_identity_t<FieldGrads<S>*> grads, std::vector<Vec3>* dpts) {
  MatX<S> dy(1, dvals.size());
  for (Eigen::Index i = 0; i < dvals.size(); ++i) dy(0, i) = S(dvals[i]);
  MatX<S> dx;
  mlp_backward(m.field.sdf_mlp, tape.mlp, dy, grads ? &grads->sdf : nullptr, &dx);
  if (dpts) dpts->assign(tape.points.size(), Vec3::Zero());
  if (grads) grads->volume.begin_group();
  std::vector<double> upstream(m.volume.feature_dim());
  for (size_t i = 0; i < tape.points.size(); ++i) {
    for (int c = 0; c < m.volume.feature_dim(); ++c) upstream[c] = double(dx(3 + c, i));
    Vec3 gp = m.volume.feature_backward(tape.points[i], upstream.data(),
                                        grads ? &grads->volume : nullptr,
                                        grads ? &m.mask : nullptr, dpts != nullptr);
    if (dpts) {
      (*dpts)[i] = gp + Vec3(double(dx(0, i)), double(dx(1, i)), double(dx(2, i)));
    }
  }
  if (grads) grads->volume.end_group();
}

template <class S>
inline double sdf(const Model<S>& m, const Vec3& p) {
  return sdf_forward(m, {p})[0];
}

// Analytic spatial gradient through the MLP and trilinear chain.
template <class S>
inline Vec3 sdf_gradient(const Model<S>& m, const Vec3& p) {
  SdfTape<S> tape;
  sdf_forward(m, {p}, &tape);
  VecX<double> dv(1);
  dv[0] = 1.0;
  std::vector<Vec3> dp;
  sdf_backward(m, tape, dv, nullptr, &dp);
  return dp[0];
}

template <class S>
inline std::vector<Vec3> sdf_gradients(const Model<S>& m, const std::vector<Vec3>& pts) {
  SdfTape<S> tape;
  sdf_forward(m, pts, &tape);
  VecX<double> dv = VecX<double>::Ones(pts.size());
  // a single backward contracts all rows at once only if each point's value
  // is treated as its own objective; run the input-grad pass per batch with
  // unit upstream, which is exactly that since points do not interact.
  std::vector<Vec3> dp;
  sdf_backward(m, tape, dv, nullptr, &dp);
  return dp;
}

// Softmax blend of per-source colors. Logits come from the blend MLP applied
// to (source feature, viewing-direction difference).
template <class S>
inline Vec3 blend_color(const FieldParams<S>& f, const std::vector<Vec3>& src_colors,
                        const std::vector<VecX<double>>& src_feats,
                        const std::vector<Vec3>& dirs) {
  require(!src_colors.empty(), Err::NoSources, "blend_color needs at least one source");
  const int n = int(src_colors.size());
  MatX<S> x(kFeatChannels + 3, n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < kFeatChannels; ++c) x(c, i) = S(src_feats[i][c]);
    for (int a = 0; a < 3; ++a) x(kFeatChannels + a, i) = S(dirs[i][a]);
  }
  MatX<S> logits = mlp_forward(f.blend_mlp, x);
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, double(logits(0, i)));
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += std::exp(double(logits(0, i)) - mx);
  Vec3 out = Vec3::Zero();
  for (int i = 0; i < n; ++i) out += std::exp(double(logits(0, i)) - mx) / denom * src_colors[i];
  return out;
}

// ----------------------------------------------------------------------------
// Checkpoints: GENSVOL1 volume section followed by a GENSMLP1 field section.

template <class S>
inline void save_model(std::ostream& out, const Model<S>& m) {
  save_volume(out, m.volume, m.mask);
  write_magic(out, "GENSMLP1");
  save_mlp(out, m.field.sdf_mlp);
  save_mlp(out, m.field.blend_mlp);
  write_pod<double>(out, m.field.s_raw);
  write_pod<double>(out, m.field.s_raw_min);
  write_pod<double>(out, m.field.s_raw_max);
  write_pod<double>(out, m.field.sdf_mlp.beta);
}

template <class S>
inline void save_model(const std::string& path, const Model<S>& m) {
  auto out = open_out(path);
  save_model(out, m);
  if (!out) fail(Err::IoError, "short write to " + path);
}

template <class S>
inline Model<S> load_model(std::istream& in, const std::string& origin) {
  Model<S> m;
  load_volume(in, m.volume, m.mask, origin);
  expect_magic(in, "GENSMLP1", origin);
  m.field.sdf_mlp = load_mlp<S>(in, 100.0, origin);
  m.field.blend_mlp = load_mlp<S>(in, 100.0, origin);
  m.field.s_raw = read_pod<double>(in, origin);
  m.field.s_raw_min = read_pod<double>(in, origin);
  m.field.s_raw_max = read_pod<double>(in, origin);
  double beta = read_pod<double>(in, origin);
  m.field.sdf_mlp.beta = beta;
  m.field.blend_mlp.beta = beta;
  return m;
}

template <class S>
inline Model<S> load_model(const std::string& path) {
  auto in = open_in(path);
  return load_model<S>(in, path);
}

}  // namespace gens
