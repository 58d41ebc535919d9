#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gens {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Err {
  BehindCamera,
  InvalidDepth,
  OutOfImage,
  DegeneratePlane,
  ImageTooSmall,
  DegeneratePatch,
  InsufficientViews,
  NoSources,
  StaleTape,
  EmptyBatch,
  EmptyDistillSet,
  EmptyPointSet,
  EmptyMesh,
  NonFiniteGradient,
  ParseError,
  IoError,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::BehindCamera: return "BehindCamera";
    case Err::InvalidDepth: return "InvalidDepth";
    case Err::OutOfImage: return "OutOfImage";
    case Err::DegeneratePlane: return "DegeneratePlane";
    case Err::ImageTooSmall: return "ImageTooSmall";
    case Err::DegeneratePatch: return "DegeneratePatch";
    case Err::InsufficientViews: return "InsufficientViews";
    case Err::NoSources: return "NoSources";
    case Err::StaleTape: return "StaleTape";
    case Err::EmptyBatch: return "EmptyBatch";
    case Err::EmptyDistillSet: return "EmptyDistillSet";
    case Err::EmptyPointSet: return "EmptyPointSet";
    case Err::EmptyMesh: return "EmptyMesh";
    case Err::NonFiniteGradient: return "NonFiniteGradient";
    case Err::ParseError: return "ParseError";
    case Err::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Err code, const std::string& what) {
  if (!ok) fail(code, what);
}

struct BBox {
  Vec3 min{-1.0, -1.0, -1.0};
  Vec3 max{1.0, 1.0, 1.0};

  Vec3 extent() const { return max - min; }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  BBox scaled(double s) const {
    Vec3 c = 0.5 * (min + max), h = 0.5 * s * extent();
    return BBox{c - h, c + h};
  }
};

// Ray/box slab intersection. Returns false when the ray misses [lo, hi].
inline bool intersect_box(const Vec3& o, const Vec3& d, const BBox& box, double& t0, double& t1) {
  t0 = -std::numeric_limits<double>::infinity();
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-14) {
      if (o[a] < box.min[a] || o[a] > box.max[a]) return false;
      continue;
    }
    double ta = (box.min[a] - o[a]) / d[a];
    double tb = (box.max[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 < t1;
}

template <class T>
inline T clamp(T v, T lo, T hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace gens
