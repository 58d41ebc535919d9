#pragma once

#include <chrono>
#include <fstream>
#include <vector>

#include "gens/adam.hpp"
#include "gens/config.hpp"
#include "gens/losses.hpp"
#include "gens/pipeline.hpp"
#include "gens/thread.hpp"

namespace gens {

struct StepMetrics {
  int step = 0;
  double color = 0, mfc = 0, vc = 0, eikonal = 0, smooth = 0, tv = 0, sparse = 0;
  double total = 0, s = 0, wall_ms = 0;
};

inline void write_metrics_csv(const std::vector<StepMetrics>& rows, std::ostream& out) {
  out << "step,color,mfc,vc,eikonal,smooth,tv,sparse,total,s,wall_ms\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.step << ',' << r.color << ',' << r.mfc << ',' << r.vc << ',' << r.eikonal << ','
        << r.smooth << ',' << r.tv << ',' << r.sparse << ',' << r.total << ',' << r.s << ','
        << r.wall_ms << "\n";
}

template <class S>
struct TotalLossResult {
  StepMetrics metrics;
  BatchNorms norms;
};

// Per-scene optimizer: one model, one Adam state, deterministic per-step
// randomness derived from (seed, stream, step).
template <class S>
class Trainer {
 public:
  Config cfg;
  SceneViews<S> views;
  Model<S> model;
  AdamState<S> adam;
  DistillSet distill;
  std::vector<StepMetrics> history;
  int threads = 1;

  Trainer(const Config& cfg_, SceneViews<S> views_) : cfg(cfg_), views(std::move(views_)) {
    threads = resolve_threads(cfg.threads);
    Rng rng = make_rng(cfg.seed, Stream::Init);
    model = Model<S>::create(cfg, rng);
    if (cfg.init == "meanvar") init_mean_var(model.volume, views.pyramids, views.cams);
    adam = AdamState<S>::create(model);
    units_.resize(cfg.batch_rays);
  }

  StepWeights weights_at(int step) const {
    StepWeights w;
    int ramp_end = std::max(1, int(std::lround(cfg.ramp_frac * cfg.steps)));
    w.mfc = cfg.mfc_alpha * std::min(1.0, double(step) / ramp_end);
    w.vc = cfg.vc_beta;
    w.eikonal = cfg.eikonal_gamma;
    w.smooth = cfg.smooth_eta;
    w.tv = cfg.tv_lambda;
    w.sparse = cfg.sparse_delta;
    w.tau = cfg.sparse_tau;
    return w;
  }

  // Assembles Eq.-12-style total loss for one step. When `grads` is given the
  // full backward pass runs and fills it; the value is identical either way
  // for a fixed (params, step, seed).
  StepMetrics total_loss(int step, FieldGrads<S>* grads) {
    StepWeights w = weights_at(step);
    const int q = cfg.batch_rays;
    Rng pix_rng = make_rng(cfg.seed, Stream::PixelBatch, uint64_t(step));
    for (int i = 0; i < q; ++i) {
      RayUnit<S>& u = units_[i];
      u.reset();
      u.view = int(pix_rng.uniform_idx(views.n_views()));
      int px = int(pix_rng.uniform_idx(views.cams[u.view].width));
      int py = int(pix_rng.uniform_idx(views.cams[u.view].height));
      u.pixel = Vec2(px, py);
      u.gt_color = views.images[u.view].at(px, py);
    }
    parallel_chunks(size_t(q), threads, [&](size_t b, size_t e, int) {
      for (size_t i = b; i < e; ++i) {
        uint64_t rix = uint64_t(step) * q + i;
        ray_forward(model, views, cfg, w, units_[i],
                    make_rng(cfg.seed, Stream::Stratify, rix),
                    make_rng(cfg.seed, Stream::Importance, rix),
                    make_rng(cfg.seed, Stream::EikonalPoints, rix));
      }
    });

    BatchNorms nm;
    size_t n_sparse = 0, n_eik = 0, n_mfc = 0;
    StepMetrics mt;
    mt.step = step;
    mt.s = model.field.s();
    for (int i = 0; i < q; ++i) {
      const RayUnit<S>& u = units_[i];
      mt.color += u.loss_color;
      n_sparse += u.ts.size();
      n_eik += u.eik_points.size();
      mt.sparse += u.sparse_sum;
      mt.eikonal += u.eik_sum;
      mt.smooth += u.loss_smooth;
      if (u.mfc.contributes) {
        ++n_mfc;
        mt.mfc += u.mfc.loss;
      }
    }
    nm.inv_rays = 1.0 / q;
    nm.inv_sparse = n_sparse ? 1.0 / double(n_sparse) : 0.0;
    nm.inv_eik = n_eik ? 1.0 / double(n_eik) : 0.0;
    nm.inv_mfc = n_mfc ? 1.0 / double(n_mfc) : 0.0;
    mt.color /= q;
    mt.smooth /= q;
    mt.sparse = n_sparse ? mt.sparse / double(n_sparse) : 0.0;
    mt.eikonal = n_eik ? mt.eikonal / double(n_eik) : 0.0;
    mt.mfc = n_mfc ? mt.mfc / double(n_mfc) : 0.0;

    // view contrast on a per-step subset of the distill set
    std::vector<Vec3> vc_pts;
    std::vector<double> vc_tgt;
    if (w.vc > 0.0 && distill.size() > 0) {
      Rng vc_rng = make_rng(cfg.seed, Stream::ViewContrast, uint64_t(step));
      int n = std::min<int>(cfg.vc_points, int(distill.size()));
      vc_pts.reserve(n);
      for (int i = 0; i < n; ++i) {
        size_t idx = vc_rng.uniform_idx(distill.size());
        vc_pts.push_back(distill.points[idx]);
        vc_tgt.push_back(distill.values[idx]);
      }
      SdfTape<S> tape;
      VecX<double> vals = sdf_forward(model, vc_pts, grads ? &tape : nullptr);
      double sum = 0.0;
      VecX<double> dvals(vc_pts.size());
      for (size_t i = 0; i < vc_pts.size(); ++i) {
        double d = vals[i] - vc_tgt[i];
        sum += std::abs(d);
        dvals[i] = w.vc * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / double(vc_pts.size());
      }
      mt.vc = sum / double(vc_pts.size());
      if (grads) sdf_backward(model, tape, dvals, grads, nullptr);
    }

    // total variation (sampled estimate above the exact-size threshold)
    {
      Rng tv_rng = make_rng(cfg.seed, Stream::TvSamples, uint64_t(step));
      mt.tv = tv_loss_grad(model.volume, w.tv, cfg.tv_samples, &tv_rng,
                           (grads && w.tv > 0.0) ? &grads->volume : nullptr, &model.mask);
    }

    mt.total = w.color * mt.color + w.mfc * mt.mfc + w.vc * mt.vc + w.eikonal * mt.eikonal +
               w.smooth * mt.smooth + w.tv * mt.tv + w.sparse * mt.sparse;

    if (grads) {
      if (grads_work_.empty()) {
        grads_work_.resize(std::max(1, threads));
        for (auto& g : grads_work_) g.init(model);
      }
      for (auto& g : grads_work_) g.clear();
      parallel_chunks(size_t(q), threads, [&](size_t b, size_t e, int slot) {
        for (size_t i = b; i < e; ++i)
          ray_backward(model, cfg, w, nm, units_[i], grads_work_[slot]);
      });
      for (auto& g : grads_work_) grads->merge(g);
      grads->volume.finalize();
    }
    return mt;
  }

  void step(int step_index) {
    auto t0 = std::chrono::steady_clock::now();
    int prune_step = prune_step_index();
    if (prune_step > 0 && step_index == prune_step) run_prune();
    if (batch_grads_.volume.levels.empty()) batch_grads_.init(model);
    batch_grads_.clear();
    StepMetrics mt = total_loss(step_index, &batch_grads_);
    adam_step(adam, model, batch_grads_, cfg.lr_volume, cfg.lr_mlp);
    auto t1 = std::chrono::steady_clock::now();
    mt.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    history.push_back(mt);
  }

  void train() {
    for (int i = 0; i < cfg.steps; ++i) step(i);
  }

  int prune_step_index() const {
    if (cfg.prune_at_frac <= 0.0 || cfg.prune_at_frac >= 1.0) return -1;
    return int(cfg.prune_at_frac * cfg.steps);
  }

  void run_prune() {
    double band = cfg.prune_band_voxels * model.volume.finest_voxel_size();
    model.mask = prune(model.volume, batch_sdf_fn(), band);
  }

  // Thread-parallel batched SDF evaluator over the current model.
  SdfBatchFn batch_sdf_fn() const {
    const Model<S>* m = &model;
    int th = threads;
    return [m, th](const std::vector<Vec3>& pts, std::vector<double>& out) {
      out.resize(pts.size());
      parallel_chunks(pts.size(), th, [&](size_t b, size_t e, int) {
        std::vector<Vec3> chunk(pts.begin() + b, pts.begin() + e);
        VecX<double> vals = sdf_forward(*m, chunk);
        for (size_t i = b; i < e; ++i) out[i] = vals[i - b];
      });
    };
  }

 private:
  std::vector<RayUnit<S>> units_;
  std::vector<FieldGrads<S>> grads_work_;
  FieldGrads<S> batch_grads_;

 public:
  // exposed for gradient-check tests
  std::vector<RayUnit<S>>& units() { return units_; }
};

// ----------------------------------------------------------------------------
// Distillation

// Renders rays over every view of the teacher scene, keeps located surface
// points plus jittered near-surface points, and stores the teacher SDF there.
template <class S>
inline DistillSet build_distill_set(Trainer<S>& teacher, double band_voxels, int jitter,
                                    int rays_per_view) {
  const Config& cfg = teacher.cfg;
  double band = band_voxels * teacher.model.volume.finest_voxel_size();
  DistillSet set;
  std::vector<Vec3> candidates;
  std::vector<uint8_t> is_surface;
  for (int v = 0; v < teacher.views.n_views(); ++v) {
    for (int r = 0; r < rays_per_view; ++r) {
      uint64_t rix = uint64_t(v) * rays_per_view + r;
      Rng rng = make_rng(cfg.seed, Stream::DistillJitter, rix);
      int px = int(rng.uniform_idx(teacher.views.cams[v].width));
      int py = int(rng.uniform_idx(teacher.views.cams[v].height));
      BBox sample_box = teacher.model.volume.box.scaled(cfg.sample_box_scale);
      Ray ray = generate_ray(teacher.views.cams[v], Vec2(px, py), 0.0, 1.0);
      double t0, t1;
      if (!intersect_box(ray.origin, ray.dir, sample_box, t0, t1) || t1 <= 1e-6) continue;
      ray.near = std::max(t0, 1e-6);
      ray.far = t1;
      std::vector<double> ts = stratified_samples(ray.near, ray.far, cfg.m_uniform, rng);
      std::vector<Vec3> pts(ts.size());
      for (size_t i = 0; i < ts.size(); ++i) pts[i] = ray.at(ts[i]);
      VecX<double> sdfs = sdf_forward(teacher.model, pts);
      std::vector<double> sv(sdfs.data(), sdfs.data() + sdfs.size());
      auto hit = locate_surface(ts, sv);
      if (!hit) continue;
      candidates.push_back(ray.at(hit->t_s));
      is_surface.push_back(1);
      for (int k = 0; k < jitter; ++k) {
        candidates.push_back(ray.at(hit->t_s + band * rng.uniform(-1.0, 1.0)));
        is_surface.push_back(0);
      }
    }
  }
  if (candidates.empty()) fail(Err::EmptyDistillSet, "teacher located no surfaces");
  std::vector<double> vals;
  teacher.batch_sdf_fn()(candidates, vals);
  for (size_t i = 0; i < candidates.size(); ++i) {
    // located surface points carry s ~ 0 by construction and are always
    // kept; jittered points must land inside the band
    if (is_surface[i] || std::abs(vals[i]) <= band) {
      set.points.push_back(candidates[i]);
      set.values.push_back(vals[i]);
    }
  }
  if (set.points.empty()) fail(Err::EmptyDistillSet, "no candidates within the band");
  return set;
}

}  // namespace gens
