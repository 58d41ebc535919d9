#pragma once

#include <istream>
#include <ostream>
#include <sstream>

#include "gens/common.hpp"

namespace gens {

// Pinhole camera. Pose is stored camera-to-world: R maps camera axes into
// world axes and t is the camera center, so a world point v projects as
// pi(K * R^T * (v - t)). The camera looks along +z of its own frame; image y
// grows downward. Pixel centers sit at integer coordinates.
struct Camera {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 1, height = 1;

  void validate() const {
    require(width > 0 && height > 0, Err::ParseError, "camera image size must be positive");
    require((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9,
            Err::ParseError, "camera rotation is not orthonormal");
    require(R.determinant() > 0.0, Err::ParseError, "camera rotation is not proper");
    require(K(0, 0) > 0 && K(1, 1) > 0, Err::ParseError, "camera focal lengths must be positive");
    require(std::abs(K(2, 2) - 1.0) <= 1e-12 && std::abs(K(1, 0)) <= 1e-12 &&
                std::abs(K(2, 0)) <= 1e-12 && std::abs(K(2, 1)) <= 1e-12,
            Err::ParseError, "camera intrinsics must be upper-triangular with K22 = 1");
  }

  Vec3 center() const { return t; }
  Vec3 optical_axis() const { return R.col(2); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit length
  double near = 0.0, far = 1.0;

  Vec3 at(double s) const { return origin + s * dir; }
};

struct Homography {
  Mat3 H = Mat3::Identity();

  // Maps a reference pixel to a source pixel. Fails when the warped point
  // lands behind the source camera.
  Vec2 apply(const Vec2& q) const {
    Vec3 r = H * Vec3(q.x(), q.y(), 1.0);
    require(r.z() > 1e-9, Err::BehindCamera, "homography maps pixel behind source camera");
    return Vec2(r.x() / r.z(), r.y() / r.z());
  }

  bool try_apply(const Vec2& q, Vec2& out) const {
    Vec3 r = H * Vec3(q.x(), q.y(), 1.0);
    if (!(r.z() > 1e-9)) return false;
    out = Vec2(r.x() / r.z(), r.y() / r.z());
    return true;
  }
};

struct Projection {
  Vec2 pixel;
  double depth;
};

inline bool try_project(const Camera& cam, const Vec3& p, Projection& out) {
  Vec3 pc = cam.R.transpose() * (p - cam.t);
  if (!(pc.z() > 1e-9)) return false;
  Vec3 q = cam.K * pc;
  out.pixel = Vec2(q.x() / q.z(), q.y() / q.z());
  out.depth = pc.z();
  return true;
}

inline Projection project(const Camera& cam, const Vec3& p) {
  Projection out;
  require(try_project(cam, p, out), Err::BehindCamera, "point at or behind camera plane");
  return out;
}

inline Vec3 unproject(const Camera& cam, const Vec2& pixel, double depth) {
  require(depth > 0.0, Err::InvalidDepth, "unproject requires depth > 0");
  Vec3 q(pixel.x(), pixel.y(), 1.0);
  Vec3 pc = cam.K.inverse() * q * depth;
  return cam.R * pc + cam.t;
}

inline Ray generate_ray(const Camera& cam, const Vec2& pixel, double near, double far) {
  require(pixel.x() >= 0.0 && pixel.x() < cam.width && pixel.y() >= 0.0 && pixel.y() < cam.height,
          Err::OutOfImage, "pixel outside image bounds");
  Ray ray;
  ray.origin = cam.t;
  Vec3 dc = cam.K.inverse() * Vec3(pixel.x(), pixel.y(), 1.0);
  ray.dir = (cam.R * dc).normalized();
  ray.near = near;
  ray.far = far;
  return ray;
}

// Homography induced by the plane through p_s with unit normal n_s, mapping
// reference pixels to source pixels. Degenerate when the plane contains the
// reference camera center.
inline Homography plane_homography(const Camera& ref, const Camera& src, const Vec3& p_s,
                                   const Vec3& n_s) {
  double den = n_s.dot(p_s - ref.t);
  require(std::abs(den) > 1e-9, Err::DegeneratePlane, "plane passes through reference camera");
  Mat3 rel = src.R.transpose() * ref.R;
  Vec3 u = src.R.transpose() * (ref.t - src.t);
  Vec3 v = ref.R.transpose() * n_s;
  Homography h;
  h.H = src.K * (rel + u * v.transpose() / den) * ref.K.inverse();
  require(std::abs(h.H.determinant()) > 1e-12, Err::DegeneratePlane, "homography is singular");
  return h;
}

// One text record per camera: K row-major, R row-major, t, width, height.
inline void write_camera_record(std::ostream& out, const Camera& cam) {
  out.precision(17);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out << cam.K(r, c) << " ";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out << cam.R(r, c) << " ";
  for (int i = 0; i < 3; ++i) out << cam.t[i] << " ";
  out << cam.width << " " << cam.height << "\n";
}

inline Camera parse_camera_record(const std::string& line, const std::string& origin) {
  std::istringstream is(line);
  Camera cam;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) is >> cam.K(r, c);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) is >> cam.R(r, c);
  for (int i = 0; i < 3; ++i) is >> cam.t[i];
  is >> cam.width >> cam.height;
  if (is.fail()) fail(Err::ParseError, origin + ": malformed camera record");
  cam.validate();
  return cam;
}

}  // namespace gens
