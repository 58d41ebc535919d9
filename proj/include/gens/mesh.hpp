#pragma once

#include <fstream>
#include <unordered_map>
#include <vector>

#include "gens/common.hpp"
#include "gens/io.hpp"
#include "gens/mc_tables.hpp"
#include "gens/rng.hpp"
#include "gens/volume.hpp"

namespace gens {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

// Standard marching cubes over an R^3 cell grid spanning `box`. Vertices sit
// on grid edges at the linear zero crossing. Inside = negative SDF.
inline TriangleMesh marching_cubes(const SdfBatchFn& field, const BBox& box, int res) {
  require(res >= 8, Err::ParseError, "marching cubes resolution must be at least 8");
  const int n = res + 1;  // lattice points per axis
  Vec3 ext = box.extent();
  auto lattice_point = [&](int x, int y, int z) {
    return Vec3(box.min.x() + ext.x() * x / res, box.min.y() + ext.y() * y / res,
                box.min.z() + ext.z() * z / res);
  };
  std::vector<float> values(size_t(n) * n * n);
  {
    std::vector<Vec3> pts(size_t(n) * n);
    std::vector<double> vals;
    for (int z = 0; z < n; ++z) {
      size_t i = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) pts[i++] = lattice_point(x, y, z);
      field(pts, vals);
      for (size_t q = 0; q < pts.size(); ++q) values[size_t(z) * n * n + q] = float(vals[q]);
    }
  }
  auto value = [&](int x, int y, int z) -> double {
    return values[(size_t(z) * n + y) * n + x];
  };

  TriangleMesh mesh;
  std::unordered_map<uint64_t, int> edge_vertex;
  // cube corner offsets in the Bourke convention
  static const int off[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static const int edges[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                   {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

  auto edge_key = [&](int x0, int y0, int z0, int x1, int y1, int z1) -> uint64_t {
    // canonical key: lower lattice corner plus axis
    int axis = x0 != x1 ? 0 : (y0 != y1 ? 1 : 2);
    int lx = std::min(x0, x1), ly = std::min(y0, y1), lz = std::min(z0, z1);
    return (uint64_t((size_t(lz) * n + ly) * n + lx) << 2) | uint64_t(axis);
  };

  int corner_x[8], corner_y[8], corner_z[8];
  double corner_v[8];
  int edge_vid[12];
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          corner_x[c] = x + off[c][0];
          corner_y[c] = y + off[c][1];
          corner_z[c] = z + off[c][2];
          corner_v[c] = value(corner_x[c], corner_y[c], corner_z[c]);
          if (corner_v[c] < 0.0) cube |= 1 << c;
        }
        int emask = kMcEdgeTable[cube];
        if (!emask) continue;
        for (int e = 0; e < 12; ++e) {
          if (!(emask & (1 << e))) continue;
          int a = edges[e][0], b = edges[e][1];
          uint64_t key = edge_key(corner_x[a], corner_y[a], corner_z[a], corner_x[b], corner_y[b],
                                  corner_z[b]);
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            edge_vid[e] = it->second;
            continue;
          }
          double va = corner_v[a], vb = corner_v[b];
          double t = std::abs(va - vb) > 1e-12 ? va / (va - vb) : 0.5;
          Vec3 pa = lattice_point(corner_x[a], corner_y[a], corner_z[a]);
          Vec3 pb = lattice_point(corner_x[b], corner_y[b], corner_z[b]);
          int vid = int(mesh.vertices.size());
          mesh.vertices.push_back(pa + clamp(t, 0.0, 1.0) * (pb - pa));
          edge_vertex.emplace(key, vid);
          edge_vid[e] = vid;
        }
        for (int tIdx = 0; kMcTriTable[cube][tIdx] != -1; tIdx += 3) {
          mesh.triangles.push_back({edge_vid[kMcTriTable[cube][tIdx]],
                                    edge_vid[kMcTriTable[cube][tIdx + 1]],
                                    edge_vid[kMcTriTable[cube][tIdx + 2]]});
        }
      }
  return mesh;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// Area-weighted uniform surface samples, deterministic per seed.
inline std::vector<Vec3> sample_mesh(const TriangleMesh& mesh, int n, uint64_t seed) {
  require(!mesh.empty(), Err::EmptyMesh, "cannot sample an empty mesh");
  require(n >= 1, Err::EmptyMesh, "need at least one sample");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    cum[i] = total;
  }
  require(total > 0.0, Err::EmptyMesh, "mesh has zero surface area");
  Rng rng = make_rng(seed, Stream::MeshSample);
  std::vector<Vec3> out(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    size_t tri = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (tri >= mesh.triangles.size()) tri = mesh.triangles.size() - 1;
    const auto& t = mesh.triangles[tri];
    double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    out[i] = (1 - r1) * mesh.vertices[t[0]] + r1 * (1 - r2) * mesh.vertices[t[1]] +
             r1 * r2 * mesh.vertices[t[2]];
  }
  return out;
}

namespace detail {

// Uniform hash grid for exact nearest neighbours with expanding-ring search.
class PointGrid {
 public:
  explicit PointGrid(const std::vector<Vec3>& pts) : pts_(pts) {
    lo_ = pts[0];
    hi_ = pts[0];
    for (const Vec3& p : pts) {
      lo_ = lo_.cwiseMin(p);
      hi_ = hi_.cwiseMax(p);
    }
    double vol = std::max((hi_ - lo_).prod(), 1e-30);
    cell_ = std::max(std::cbrt(vol / double(pts.size())), 1e-12);
    for (int a = 0; a < 3; ++a)
      dims_[a] = std::max(1, int((hi_[a] - lo_[a]) / cell_) + 1);
    cells_.resize(size_t(dims_[0]) * dims_[1] * dims_[2]);
    for (size_t i = 0; i < pts.size(); ++i) cells_[cell_index(pts[i])].push_back(int(i));
  }

  double nearest_dist(const Vec3& q) const {
    int cx = coord(q.x(), 0), cy = coord(q.y(), 1), cz = coord(q.z(), 2);
    double best = std::numeric_limits<double>::infinity();
    int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int ring = 0; ring <= max_ring; ++ring) {
      // once a candidate is found, ring r can only help while
      // (r-1)*cell < best
      if (std::isfinite(best) && double(ring - 1) * cell_ > best) break;
      bool any = false;
      for (int dz = -ring; dz <= ring; ++dz)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            int x = cx + dx, y = cy + dy, z = cz + dz;
            if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2])
              continue;
            any = true;
            for (int i : cells_[(size_t(z) * dims_[1] + y) * dims_[0] + x])
              best = std::min(best, (pts_[i] - q).norm());
          }
      if (!any && std::isfinite(best)) break;
    }
    return best;
  }

 private:
  int coord(double v, int a) const {
    return clamp(int((v - lo_[a]) / cell_), 0, dims_[a] - 1);
  }
  size_t cell_index(const Vec3& p) const {
    return (size_t(coord(p.z(), 2)) * dims_[1] + coord(p.y(), 1)) * dims_[0] + coord(p.x(), 0);
  }
  const std::vector<Vec3>& pts_;
  Vec3 lo_, hi_;
  double cell_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<std::vector<int>> cells_;
};

}  // namespace detail

struct ChamferResult {
  double chamfer = 0.0;       // 0.5 * (accuracy + completeness)
  double accuracy = 0.0;      // mean_a min_b |a - b|
  double completeness = 0.0;  // mean_b min_a |b - a|
};

inline ChamferResult chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require(!a.empty() && !b.empty(), Err::EmptyPointSet, "chamfer needs two non-empty point sets");
  detail::PointGrid ga(a), gb(b);
  ChamferResult r;
  for (const Vec3& p : a) r.accuracy += gb.nearest_dist(p);
  for (const Vec3& p : b) r.completeness += ga.nearest_dist(p);
  r.accuracy /= double(a.size());
  r.completeness /= double(b.size());
  r.chamfer = 0.5 * (r.accuracy + r.completeness);
  return r;
}

// ----------------------------------------------------------------------------
// OBJ I/O (v/f records only)

inline void save_obj(const TriangleMesh& mesh, const std::string& path) {
  auto out = open_out(path, false);
  out.precision(17);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!out) fail(Err::IoError, "short write to " + path);
}

inline TriangleMesh load_obj(const std::string& path) {
  auto in = open_in(path, false);
  TriangleMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("v ", 0) == 0) {
      std::istringstream is(line.substr(2));
      Vec3 v;
      is >> v.x() >> v.y() >> v.z();
      if (is.fail()) fail(Err::ParseError, path + ":" + std::to_string(lineno) + ": bad vertex");
      mesh.vertices.push_back(v);
    } else if (line.rfind("f ", 0) == 0) {
      std::istringstream is(line.substr(2));
      std::array<int, 3> t{};
      for (int i = 0; i < 3; ++i) {
        std::string tok;
        is >> tok;
        if (tok.empty()) fail(Err::ParseError, path + ":" + std::to_string(lineno) + ": bad face");
        t[i] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
        if (t[i] < 0) fail(Err::ParseError, path + ":" + std::to_string(lineno) + ": bad index");
      }
      mesh.triangles.push_back(t);
    }
  }
  for (const auto& t : mesh.triangles)
    for (int i : t)
      if (i >= int(mesh.vertices.size()))
        fail(Err::ParseError, path + ": face index out of range");
  return mesh;
}

}  // namespace gens
