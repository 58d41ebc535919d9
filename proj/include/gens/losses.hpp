#pragma once

#include <functional>
#include <vector>

#include "gens/common.hpp"
#include "gens/field.hpp"
#include "gens/renderer.hpp"

namespace gens {

// Value-level loss definitions. The training pipeline re-expresses these with
// taped evaluations; tests drive them with analytic oracles.

inline double color_loss(const std::vector<Vec3>& rendered, const std::vector<Vec3>& gt) {
  require(rendered.size() == gt.size(), Err::EmptyBatch, "batch length mismatch");
  require(!rendered.empty(), Err::EmptyBatch, "empty color batch");
  double sum = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) sum += (rendered[i] - gt[i]).cwiseAbs().sum();
  return sum / double(rendered.size());
}

// Central-difference spatial gradient of an arbitrary scalar field.
inline Vec3 fd_gradient(const SdfFn& f, const Vec3& p, double eps) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = eps;
    g[a] = (f(p + e) - f(p - e)) / (2.0 * eps);
  }
  return g;
}

inline double eikonal_loss(const SdfFn& f, const std::vector<Vec3>& pts, double eps) {
  require(!pts.empty(), Err::EmptyBatch, "eikonal loss needs at least one point");
  double sum = 0.0;
  for (const Vec3& p : pts) {
    double d = fd_gradient(f, p, eps).norm() - 1.0;
    sum += d * d;
  }
  return sum / double(pts.size());
}

template <class S>
inline double eikonal_loss(const Model<S>& m, const std::vector<Vec3>& pts, double eps) {
  return eikonal_loss([&](const Vec3& p) { return sdf(m, p); }, pts, eps);
}

struct SmoothRay {
  Vec3 dir;
  std::vector<Vec3> points;
  std::vector<double> weights;
};

// Alpha-composited norm of the directional derivative of the SDF gradient.
inline double smooth_loss(const SdfFn& f, const std::vector<SmoothRay>& rays, double eps) {
  if (rays.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rays) {
    Vec3 n_grad = Vec3::Zero();
    for (size_t i = 0; i < r.points.size(); ++i) {
      Vec3 gp = fd_gradient(f, r.points[i] + eps * r.dir, eps);
      Vec3 gm = fd_gradient(f, r.points[i] - eps * r.dir, eps);
      n_grad += r.weights[i] * (gp - gm) / (2.0 * eps);
    }
    sum += n_grad.norm();
  }
  return sum / double(rays.size());
}

inline double sparse_loss(const SdfFn& f, const std::vector<Vec3>& pts, double tau) {
  require(!pts.empty(), Err::EmptyBatch, "sparse loss needs at least one point");
  double sum = 0.0;
  for (const Vec3& p : pts) sum += std::exp(-tau * std::abs(f(p)));
  return sum / double(pts.size());
}

template <class S>
inline double sparse_loss(const Model<S>& m, const std::vector<Vec3>& pts, double tau) {
  return sparse_loss([&](const Vec3& p) { return sdf(m, p); }, pts, tau);
}

// Near-surface SDF targets distilled from a teacher model.
struct DistillSet {
  std::vector<Vec3> points;
  std::vector<double> values;  // teacher SDF at points

  size_t size() const { return points.size(); }
};

template <class S>
inline double view_contrast_loss(const Model<S>& student, const DistillSet& set) {
  require(set.size() > 0, Err::EmptyDistillSet, "view contrast loss needs distilled points");
  VecX<double> vals = sdf_forward(student, set.points);
  double sum = 0.0;
  for (size_t i = 0; i < set.size(); ++i) sum += std::abs(set.values[i] - vals[i]);
  return sum / double(set.size());
}

}  // namespace gens
