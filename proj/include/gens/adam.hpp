#pragma once

#include <vector>

#include "gens/common.hpp"
#include "gens/field.hpp"

namespace gens {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One scalar Adam update with bias correction; t counts from 1.
inline double adam_update(double& m, double& v, double g, int64_t t, double lr,
                          const AdamHyper& h) {
  m = h.beta1 * m + (1.0 - h.beta1) * g;
  v = h.beta2 * v + (1.0 - h.beta2) * g * g;
  double mhat = m / (1.0 - std::pow(h.beta1, double(t)));
  double vhat = v / (1.0 - std::pow(h.beta2, double(t)));
  return -lr * mhat / (std::sqrt(vhat) + h.eps);
}

// Optimizer state: dense moments for the MLPs and s_raw, sparse per-voxel
// moments for the volume (voxels with zero gradient this step keep their
// moments and parameters untouched).
template <class S>
struct AdamState {
  std::vector<MatX<double>> sdf_m, sdf_v;  // per layer, W then b appended as columns? kept separate
  std::vector<VecX<double>> sdf_bm, sdf_bv;
  std::vector<MatX<double>> blend_m, blend_v;
  std::vector<VecX<double>> blend_bm, blend_bv;
  double s_m = 0.0, s_v = 0.0;
  std::vector<std::vector<float>> vol_m, vol_v;  // per level, voxel * ch
  int64_t step = 0;
  AdamHyper hyper;

  static AdamState create(const Model<S>& model) {
    AdamState st;
    auto zeros_like = [](const Mlp<S>& m, std::vector<MatX<double>>& wm,
                         std::vector<VecX<double>>& bm) {
      for (int l = 0; l < m.n_layers(); ++l) {
        wm.push_back(MatX<double>::Zero(m.W[l].rows(), m.W[l].cols()));
        bm.push_back(VecX<double>::Zero(m.b[l].size()));
      }
    };
    zeros_like(model.field.sdf_mlp, st.sdf_m, st.sdf_bm);
    zeros_like(model.field.sdf_mlp, st.sdf_v, st.sdf_bv);
    zeros_like(model.field.blend_mlp, st.blend_m, st.blend_bm);
    zeros_like(model.field.blend_mlp, st.blend_v, st.blend_bv);
    for (const auto& g : model.volume.levels) {
      st.vol_m.emplace_back(g.data.size(), 0.f);
      st.vol_v.emplace_back(g.data.size(), 0.f);
    }
    return st;
  }
};

template <class S>
inline bool grads_finite(const FieldGrads<S>& g) {
  auto ok_mat = [](const auto& m) { return m.allFinite(); };
  for (const auto& m : g.sdf.gW)
    if (!ok_mat(m)) return false;
  for (const auto& m : g.sdf.gb)
    if (!ok_mat(m)) return false;
  for (const auto& m : g.blend.gW)
    if (!ok_mat(m)) return false;
  for (const auto& m : g.blend.gb)
    if (!ok_mat(m)) return false;
  if (!std::isfinite(g.s_raw)) return false;
  for (const auto& lvl : g.volume.levels)
    for (double v : lvl.vals)
      if (!std::isfinite(v)) return false;
  return true;
}

// Applies one optimization step. Throws NonFiniteGradient (leaving the model
// untouched) when any gradient is NaN or infinite.
template <class S>
inline void adam_step(AdamState<S>& st, Model<S>& model, const FieldGrads<S>& grads,
                      double lr_volume, double lr_mlp) {
  require(grads_finite(grads), Err::NonFiniteGradient, "step aborted on non-finite gradient");
  st.step += 1;
  const int64_t t = st.step;
  const AdamHyper& h = st.hyper;
  // bias corrections hoisted out of the per-parameter loops
  const double c1 = 1.0 / (1.0 - std::pow(h.beta1, double(t)));
  const double c2 = 1.0 / (1.0 - std::pow(h.beta2, double(t)));
  auto update = [&](double& m, double& v, double g, double lr) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    return -lr * (m * c1) / (std::sqrt(v * c2) + h.eps);
  };

  auto step_mlp = [&](Mlp<S>& m, const MlpGrad<S>& g, std::vector<MatX<double>>& wm,
                      std::vector<MatX<double>>& wv, std::vector<VecX<double>>& bm,
                      std::vector<VecX<double>>& bv) {
    for (int l = 0; l < m.n_layers(); ++l) {
      for (Eigen::Index i = 0; i < m.W[l].size(); ++i) {
        double d = update(wm[l].data()[i], wv[l].data()[i], g.gW[l].data()[i], lr_mlp);
        m.W[l].data()[i] = S(double(m.W[l].data()[i]) + d);
      }
      for (Eigen::Index i = 0; i < m.b[l].size(); ++i) {
        double d = update(bm[l].data()[i], bv[l].data()[i], g.gb[l].data()[i], lr_mlp);
        m.b[l].data()[i] = S(double(m.b[l].data()[i]) + d);
      }
    }
  };
  step_mlp(model.field.sdf_mlp, grads.sdf, st.sdf_m, st.sdf_v, st.sdf_bm, st.sdf_bv);
  step_mlp(model.field.blend_mlp, grads.blend, st.blend_m, st.blend_v, st.blend_bm, st.blend_bv);
  {
    double d = update(st.s_m, st.s_v, grads.s_raw, lr_mlp);
    model.field.s_raw = clamp(model.field.s_raw + d, model.field.s_raw_min,
                              model.field.s_raw_max);
  }

  for (int j = 0; j < model.volume.n_levels(); ++j) {
    Grid<S>& grid = model.volume.levels[j];
    const SparseLevelGrad& lg = grads.volume.levels[j];
    const int ch = grid.ch;
    for (size_t e = 0; e < lg.order.size(); ++e) {
      size_t vi = lg.order[e];
      if (!model.mask.kept(j, vi)) continue;
      for (int c = 0; c < ch; ++c) {
        double g = lg.vals[e * ch + c];
        if (g == 0.0) continue;
        size_t pi = vi * ch + c;
        double m = st.vol_m[j][pi], v = st.vol_v[j][pi];
        double d = update(m, v, g, lr_volume);
        st.vol_m[j][pi] = float(m);
        st.vol_v[j][pi] = float(v);
        grid.data[pi] = S(double(grid.data[pi]) + d);
      }
    }
  }
}

}  // namespace gens
