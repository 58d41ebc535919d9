#pragma once

#include <json.hpp>

#include <filesystem>
#include <vector>

#include "gens/common.hpp"
#include "gens/geometry.hpp"
#include "gens/config.hpp"
#include "gens/image.hpp"
#include "gens/rng.hpp"
#include "gens/thread.hpp"

namespace gens {

// CSG tree of analytic signed distance primitives. Single primitives are
// exact distances; boolean combinations are valid lower bounds.
struct AnalyticSdf {
  enum class Kind { Sphere, Box, Torus, Union, Intersection, Difference };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  double radius = 0.5;      // sphere; torus major
  double radius2 = 0.15;    // torus minor
  Vec3 half = Vec3::Constant(0.4);
  std::vector<AnalyticSdf> children;

  static AnalyticSdf sphere(const Vec3& c, double r) {
    AnalyticSdf s;
    s.kind = Kind::Sphere;
    s.center = c;
    s.radius = r;
    return s;
  }
  static AnalyticSdf box(const Vec3& c, const Vec3& h) {
    AnalyticSdf s;
    s.kind = Kind::Box;
    s.center = c;
    s.half = h;
    return s;
  }
  static AnalyticSdf torus(const Vec3& c, double major, double minor) {
    AnalyticSdf s;
    s.kind = Kind::Torus;
    s.center = c;
    s.radius = major;
    s.radius2 = minor;
    return s;
  }
  static AnalyticSdf combine(Kind k, std::vector<AnalyticSdf> kids) {
    AnalyticSdf s;
    s.kind = k;
    s.children = std::move(kids);
    return s;
  }
};

inline double eval_sdf(const AnalyticSdf& s, const Vec3& p) {
  switch (s.kind) {
    case AnalyticSdf::Kind::Sphere:
      return (p - s.center).norm() - s.radius;
    case AnalyticSdf::Kind::Box: {
      Vec3 q = (p - s.center).cwiseAbs() - s.half;
      Vec3 qp = q.cwiseMax(0.0);
      return qp.norm() + std::min(q.maxCoeff(), 0.0);
    }
    case AnalyticSdf::Kind::Torus: {
      Vec3 d = p - s.center;
      double qx = std::sqrt(d.x() * d.x() + d.y() * d.y()) - s.radius;
      return std::sqrt(qx * qx + d.z() * d.z()) - s.radius2;
    }
    case AnalyticSdf::Kind::Union: {
      double v = std::numeric_limits<double>::infinity();
      for (const auto& c : s.children) v = std::min(v, eval_sdf(c, p));
      return v;
    }
    case AnalyticSdf::Kind::Intersection: {
      double v = -std::numeric_limits<double>::infinity();
      for (const auto& c : s.children) v = std::max(v, eval_sdf(c, p));
      return v;
    }
    case AnalyticSdf::Kind::Difference: {
      require(s.children.size() >= 1, Err::ParseError, "difference needs children");
      double v = eval_sdf(s.children[0], p);
      for (size_t i = 1; i < s.children.size(); ++i) v = std::max(v, -eval_sdf(s.children[i], p));
      return v;
    }
  }
  return 0.0;
}

inline nlohmann::json sdf_to_json(const AnalyticSdf& s) {
  nlohmann::json j;
  switch (s.kind) {
    case AnalyticSdf::Kind::Sphere:
      j["type"] = "sphere";
      j["center"] = {s.center.x(), s.center.y(), s.center.z()};
      j["radius"] = s.radius;
      break;
    case AnalyticSdf::Kind::Box:
      j["type"] = "box";
      j["center"] = {s.center.x(), s.center.y(), s.center.z()};
      j["half_extents"] = {s.half.x(), s.half.y(), s.half.z()};
      break;
    case AnalyticSdf::Kind::Torus:
      j["type"] = "torus";
      j["center"] = {s.center.x(), s.center.y(), s.center.z()};
      j["radii"] = {s.radius, s.radius2};
      break;
    case AnalyticSdf::Kind::Union:
    case AnalyticSdf::Kind::Intersection:
    case AnalyticSdf::Kind::Difference:
      j["type"] = s.kind == AnalyticSdf::Kind::Union
                      ? "union"
                      : (s.kind == AnalyticSdf::Kind::Intersection ? "intersection" : "difference");
      for (const auto& c : s.children) j["children"].push_back(sdf_to_json(c));
      break;
  }
  return j;
}

inline AnalyticSdf sdf_from_json(const nlohmann::json& j, const std::string& origin) {
  try {
    std::string type = j.at("type");
    auto vec3 = [&](const nlohmann::json& a) { return Vec3(a.at(0), a.at(1), a.at(2)); };
    if (type == "sphere") return AnalyticSdf::sphere(vec3(j.at("center")), j.at("radius"));
    if (type == "box") return AnalyticSdf::box(vec3(j.at("center")), vec3(j.at("half_extents")));
    if (type == "torus")
      return AnalyticSdf::torus(vec3(j.at("center")), j.at("radii").at(0), j.at("radii").at(1));
    AnalyticSdf::Kind k;
    if (type == "union") {
      k = AnalyticSdf::Kind::Union;
    } else if (type == "intersection") {
      k = AnalyticSdf::Kind::Intersection;
    } else if (type == "difference") {
      k = AnalyticSdf::Kind::Difference;
    } else {
      fail(Err::ParseError, origin + ": unknown primitive type '" + type + "'");
    }
    std::vector<AnalyticSdf> kids;
    for (const auto& c : j.at("children")) kids.push_back(sdf_from_json(c, origin));
    return AnalyticSdf::combine(k, std::move(kids));
  } catch (const nlohmann::json::exception& e) {
    fail(Err::ParseError, origin + ": " + e.what());
  }
  fail(Err::ParseError, origin + ": unreachable");
}

// ----------------------------------------------------------------------------
// Procedural appearance

// Deterministic value-noise color field; three octaves of hashed lattice
// noise per channel, mapped into [0.15, 0.95].
struct ValueNoiseTexture {
  uint64_t seed = 0;
  bool flat = false;  // textureless variant for low-texture failure probes

  static double lattice(uint64_t seed, int x, int y, int z, int c) {
    uint64_t h = seed;
    h ^= uint64_t(uint32_t(x)) * 0x8da6b343ULL;
    h ^= uint64_t(uint32_t(y)) * 0xd8163841ULL;
    h ^= uint64_t(uint32_t(z)) * 0xcb1ab31fULL;
    h ^= uint64_t(uint32_t(c)) * 0x9e3779b9ULL;
    h = splitmix64(h);
    return double(h >> 11) * 0x1.0p-53;
  }

  static double noise(uint64_t seed, const Vec3& p, int c) {
    int ix = int(std::floor(p.x())), iy = int(std::floor(p.y())), iz = int(std::floor(p.z()));
    double fx = p.x() - ix, fy = p.y() - iy, fz = p.z() - iz;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
          acc += w * lattice(seed, ix + dx, iy + dy, iz + dz, c);
        }
    return acc;
  }

  Vec3 albedo(const Vec3& p) const {
    if (flat) return Vec3::Constant(0.7);
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
      double v = noise(seed, p * 2.0, c) + 0.5 * noise(seed ^ 0xabcdef, p * 4.0, c) +
                 0.25 * noise(seed ^ 0x123456, p * 8.0, c);
      out[c] = 0.15 + 0.8 * clamp(v / 1.75, 0.0, 1.0);
    }
    return out;
  }
};

// ----------------------------------------------------------------------------
// Ground-truth rendering

struct TraceOpts {
  double tolerance = 1e-5;
  int max_steps = 256;
  Vec3 light = Vec3(0.45, 0.35, 0.82).normalized();
  double ambient = 0.25;
};

inline Vec3 analytic_normal(const AnalyticSdf& gt, const Vec3& p, double h = 1e-5) {
  Vec3 n;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    n[a] = eval_sdf(gt, p + e) - eval_sdf(gt, p - e);
  }
  double len = n.norm();
  return len > 1e-20 ? Vec3(n / len) : Vec3::UnitZ();
}

// Sphere-traces one ray; returns the hit parameter t or +inf on miss.
inline double sphere_trace(const AnalyticSdf& gt, const Ray& ray, const TraceOpts& opt) {
  double t0, t1;
  BBox march_box{Vec3::Constant(-1.2), Vec3::Constant(1.2)};
  if (!intersect_box(ray.origin, ray.dir, march_box, t0, t1))
    return std::numeric_limits<double>::infinity();
  double t = std::max(t0, 0.0);
  for (int i = 0; i < opt.max_steps && t <= t1; ++i) {
    double d = eval_sdf(gt, ray.at(t));
    if (d < opt.tolerance) return t;
    t += d;
  }
  return std::numeric_limits<double>::infinity();
}

// Lambertian render of the ground-truth SDF under a fixed directional light;
// misses are black, depth is the ray parameter (+inf sentinel on miss).
inline void sphere_trace_render(const AnalyticSdf& gt, const ValueNoiseTexture& tex,
                                const Camera& cam, const TraceOpts& opt, ImageRGB& image,
                                ImageF& depth, int threads = 1) {
  image = ImageRGB(cam.width, cam.height);
  depth = ImageF(cam.width, cam.height, std::numeric_limits<float>::infinity());
  parallel_chunks(size_t(cam.height), threads, [&](size_t y0, size_t y1, int) {
    for (size_t y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        Ray ray = generate_ray(cam, Vec2(double(x), double(y)), 0.0, 1.0);
        double t = sphere_trace(gt, ray, opt);
        if (!std::isfinite(t)) continue;
        depth.at(x, int(y)) = float(t);
        Vec3 p = ray.at(t);
        Vec3 n = analytic_normal(gt, p);
        double lambert = std::max(0.0, n.dot(opt.light));
        Vec3 c = tex.albedo(p) * (opt.ambient + (1.0 - opt.ambient) * lambert);
        float* px = image.px(x, int(y));
        for (int ch = 0; ch < 3; ++ch) px[ch] = float(clamp(c[ch], 0.0, 1.0));
      }
  });
}

// ----------------------------------------------------------------------------
// Camera rigs

constexpr double kRigHalfFovTan = 0.45;

inline Camera look_at_camera(const Vec3& position, int width, int height) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  double f = 0.5 * width / kRigHalfFovTan;
  cam.K << f, 0, (width - 1) * 0.5, 0, f, (height - 1) * 0.5, 0, 0, 1;
  Vec3 fwd = (-position).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(fwd.dot(up)) > 0.999) up = Vec3::UnitX();
  Vec3 xc = fwd.cross(up).normalized();
  Vec3 yc = fwd.cross(xc);  // = z x x, points image-down
  cam.R.col(0) = xc;
  cam.R.col(1) = yc;
  cam.R.col(2) = fwd;
  cam.t = position;
  cam.validate();
  return cam;
}

// Cameras on a sphere looking at the origin: stratified azimuths (jittered
// when n > 1), elevations uniform in [elev_lo, elev_hi] radians.
inline std::vector<Camera> make_rig(int n_views, double radius, double elev_lo, double elev_hi,
                                    uint64_t seed, int width, int height) {
  require(n_views >= 1, Err::ParseError, "rig needs at least one view");
  std::vector<Camera> cams;
  Rng rng = make_rng(seed, Stream::Rig);
  for (int i = 0; i < n_views; ++i) {
    double jitter = n_views > 1 ? 0.18 * (rng.uniform() - 0.5) : 0.0;
    double az = 2.0 * M_PI * (i + jitter) / n_views;
    double el = rng.uniform(elev_lo, elev_hi);
    Vec3 pos(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
             radius * std::sin(el));
    cams.push_back(look_at_camera(pos, width, height));
  }
  return cams;
}

// One-sided MVS-style rig: azimuths stratified over a limited arc, image
// frames nearly aligned between neighbors.
inline std::vector<Camera> make_arc_rig(int n_views, double radius, double az_lo, double az_hi,
                                        double elev_lo, double elev_hi, uint64_t seed, int width,
                                        int height) {
  require(n_views >= 1, Err::ParseError, "rig needs at least one view");
  std::vector<Camera> cams;
  Rng rng = make_rng(seed, Stream::Rig);
  for (int i = 0; i < n_views; ++i) {
    double f = n_views > 1 ? double(i) / (n_views - 1) : 0.5;
    double az = az_lo + f * (az_hi - az_lo) +
                (n_views > 1 ? 0.1 * (rng.uniform() - 0.5) * (az_hi - az_lo) / n_views : 0.0);
    double el = rng.uniform(elev_lo, elev_hi);
    Vec3 pos(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
             radius * std::sin(el));
    cams.push_back(look_at_camera(pos, width, height));
  }
  return cams;
}

// ----------------------------------------------------------------------------
// Dataset container and directory layout

struct SceneDataset {
  std::vector<Camera> cameras;
  std::vector<ImageRGB> images;
  bool has_gt = false;
  AnalyticSdf gt;
  double scale = 1.0;
};

inline void save_scene(const SceneDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  require(ds.cameras.size() == ds.images.size(), Err::IoError,
          "camera/image count mismatch");
  fs::create_directories(fs::path(dir) / "images");
  {
    auto out = open_out((fs::path(dir) / "cameras.txt").string(), false);
    for (const auto& cam : ds.cameras) write_camera_record(out, cam);
  }
  for (size_t i = 0; i < ds.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d.png", int(i));
    save_png(ds.images[i], (fs::path(dir) / "images" / name).string());
  }
  if (ds.has_gt) {
    auto out = open_out((fs::path(dir) / "gt.json").string(), false);
    out << sdf_to_json(ds.gt).dump(2) << "\n";
  }
  {
    auto out = open_out((fs::path(dir) / "meta.txt").string(), false);
    out.precision(17);
    out << "scale = " << ds.scale << "\n";
    out << "views = " << ds.cameras.size() << "\n";
  }
}

inline SceneDataset load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneDataset ds;
  std::string cam_path = (fs::path(dir) / "cameras.txt").string();
  {
    auto in = open_in(cam_path, false);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      ds.cameras.push_back(parse_camera_record(line, cam_path + ":" + std::to_string(lineno)));
    }
  }
  require(!ds.cameras.empty(), Err::ParseError, cam_path + ": no camera records");
  for (size_t i = 0; i < ds.cameras.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d.png", int(i));
    std::string path = (fs::path(dir) / "images" / name).string();
    ds.images.push_back(load_png(path));
    require(ds.images.back().width == ds.cameras[i].width &&
                ds.images.back().height == ds.cameras[i].height,
            Err::ParseError, path + ": image size does not match camera record");
  }
  std::string gt_path = (fs::path(dir) / "gt.json").string();
  if (fs::exists(gt_path)) {
    auto in = open_in(gt_path, false);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(Err::ParseError, gt_path + ": " + e.what());
    }
    ds.gt = sdf_from_json(j, gt_path);
    ds.has_gt = true;
  }
  std::string meta_path = (fs::path(dir) / "meta.txt").string();
  if (fs::exists(meta_path)) {
    auto in = open_in(meta_path, false);
    std::string line;
    while (std::getline(in, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      if (trim(line.substr(0, eq)) == "scale") ds.scale = std::stod(line.substr(eq + 1));
    }
  }
  return ds;
}

// Named shapes for the synth workflow.
inline AnalyticSdf named_shape(const std::string& name) {
  if (name == "sphere") return AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  if (name == "box") return AnalyticSdf::box(Vec3::Zero(), Vec3(0.45, 0.38, 0.42));
  if (name == "torus") return AnalyticSdf::torus(Vec3::Zero(), 0.45, 0.18);
  if (name == "plane_sphere")
    return AnalyticSdf::combine(
        AnalyticSdf::Kind::Union,
        {AnalyticSdf::box(Vec3(0, 0, -0.62), Vec3(0.92, 0.92, 0.07)),
         AnalyticSdf::sphere(Vec3(0, 0, -0.18), 0.36)});
  if (name == "sphere_box")
    return AnalyticSdf::combine(AnalyticSdf::Kind::Difference,
                                {AnalyticSdf::sphere(Vec3::Zero(), 0.52),
                                 AnalyticSdf::box(Vec3(0.3, 0.3, 0.3), Vec3::Constant(0.28))});
  fail(Err::ParseError, "unknown shape '" + name + "'");
}

inline SceneDataset synth_scene(const std::string& shape, int n_views, int res, uint64_t seed,
                                bool textureless = false, double radius = 3.0, int threads = 1,
                                const std::string& rig = "ring") {
  SceneDataset ds;
  ds.gt = named_shape(shape);
  ds.has_gt = true;
  if (rig == "ring") {
    ds.cameras = make_rig(n_views, radius, 0.12, 0.62, seed, res, res);
  } else if (rig == "arc") {
    ds.cameras = make_arc_rig(n_views, radius, -0.45, 0.45, 0.55, 0.95, seed, res, res);
  } else {
    fail(Err::ParseError, "unknown rig '" + rig + "'");
  }
  ValueNoiseTexture tex;
  uint64_t tex_seed = seed + 0x1234;
  tex.seed = splitmix64(tex_seed);
  tex.flat = textureless;
  TraceOpts opt;
  ds.images.resize(n_views);
  ImageF depth;
  for (int i = 0; i < n_views; ++i)
    sphere_trace_render(ds.gt, tex, ds.cameras[i], opt, ds.images[i], depth, threads);
  return ds;
}

}  // namespace gens
