#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "gens/mesh.hpp"
#include "gens/scenes.hpp"

using namespace gens;

namespace {

SdfBatchFn analytic_fn(const AnalyticSdf& s) {
  return [&s](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) out[i] = eval_sdf(s, pts[i]);
  };
}

BBox unit_box() { return BBox{Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }

}  // namespace

TEST(MarchingCubes, SphereVertexRadii) {
  AnalyticSdf gt = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  TriangleMesh mesh = marching_cubes(analytic_fn(gt), unit_box(), 64);
  ASSERT_FALSE(mesh.empty());
  double spacing = 2.0 / 64;
  for (const Vec3& v : mesh.vertices) EXPECT_NEAR(v.norm(), 0.5, 1.5 * spacing);
}

TEST(MarchingCubes, AllPositiveFieldEmpty) {
  auto fn = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.assign(pts.size(), 1.0);
  };
  TriangleMesh mesh = marching_cubes(fn, unit_box(), 16);
  EXPECT_TRUE(mesh.empty());
}

TEST(MarchingCubes, NegationFlipsOrientation) {
  AnalyticSdf gt = AnalyticSdf::sphere(Vec3(0.05, -0.02, 0.11), 0.4);
  auto neg_fn = [&](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) out[i] = -eval_sdf(gt, pts[i]);
  };
  TriangleMesh a = marching_cubes(analytic_fn(gt), unit_box(), 24);
  TriangleMesh b = marching_cubes(neg_fn, unit_box(), 24);
  ASSERT_EQ(a.vertices.size(), b.vertices.size());
  ASSERT_EQ(a.triangles.size(), b.triangles.size());
  // same vertex set
  for (size_t i = 0; i < a.vertices.size(); ++i)
    EXPECT_LT((a.vertices[i] - b.vertices[i]).norm(), 1e-12);
  // orientation flips: compare signed volume contributions
  double va = 0, vb = 0;
  for (const auto& t : a.triangles)
    va += a.vertices[t[0]].dot(a.vertices[t[1]].cross(a.vertices[t[2]]));
  for (const auto& t : b.triangles)
    vb += b.vertices[t[0]].dot(b.vertices[t[1]].cross(b.vertices[t[2]]));
  EXPECT_GT(std::abs(va), 1e-6);
  EXPECT_NEAR(va, -vb, 1e-9 * std::abs(va) + 1e-12);
}

TEST(MarchingCubes, WatertightOnClosedSurface) {
  AnalyticSdf gt = AnalyticSdf::sphere(Vec3::Zero(), 0.45);
  TriangleMesh mesh = marching_cubes(analytic_fn(gt), unit_box(), 32);
  // every edge is shared by exactly two triangles
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      edge_count[{std::min(a, b), std::max(a, b)}] += 1;
    }
  for (const auto& [edge, count] : edge_count) EXPECT_EQ(count, 2);
}

TEST(MarchingCubes, VertexResidualBounded) {
  AnalyticSdf gt = named_shape("torus");
  TriangleMesh mesh = marching_cubes(analytic_fn(gt), unit_box(), 48);
  double cell = 2.0 / 48;
  for (const Vec3& v : mesh.vertices)
    EXPECT_LE(std::abs(eval_sdf(gt, v)), cell);  // |sdf| at vertices below cell variation
}

TEST(Chamfer, IdenticalSetsZero) {
  Rng rng = make_rng(1, Stream::Test);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
  auto r = chamfer(pts, pts);
  EXPECT_EQ(r.chamfer, 0.0);
}

TEST(Chamfer, UnitSeparation) {
  std::vector<Vec3> a = {Vec3(0, 0, 0)};
  std::vector<Vec3> b = {Vec3(1, 0, 0)};
  auto r = chamfer(a, b);
  EXPECT_NEAR(r.chamfer, 1.0, 1e-15);
  EXPECT_NEAR(r.accuracy, 1.0, 1e-15);
  EXPECT_NEAR(r.completeness, 1.0, 1e-15);
}

TEST(Chamfer, MatchesBruteForce) {
  Rng rng = make_rng(3, Stream::Test);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 200; ++i) {
    a.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    b.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.3 * rng.normal());
  }
  auto r = chamfer(a, b);
  double acc = 0, comp = 0;
  for (const Vec3& p : a) {
    double best = 1e300;
    for (const Vec3& q : b) best = std::min(best, (p - q).norm());
    acc += best;
  }
  for (const Vec3& q : b) {
    double best = 1e300;
    for (const Vec3& p : a) best = std::min(best, (p - q).norm());
    comp += best;
  }
  acc /= a.size();
  comp /= b.size();
  EXPECT_NEAR(r.accuracy, acc, 1e-12);
  EXPECT_NEAR(r.completeness, comp, 1e-12);
  EXPECT_NEAR(r.chamfer, 0.5 * (acc + comp), 1e-12);
}

TEST(Chamfer, SymmetryAndNonNegativity) {
  Rng rng = make_rng(5, Stream::Test);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 80; ++i) {
    a.emplace_back(rng.normal(), rng.normal(), rng.normal());
    b.emplace_back(rng.normal(), rng.normal(), rng.normal());
  }
  auto ab = chamfer(a, b);
  auto ba = chamfer(b, a);
  EXPECT_NEAR(ab.chamfer, ba.chamfer, 1e-12);
  EXPECT_GE(ab.chamfer, 0.0);
  EXPECT_NEAR(ab.accuracy, ba.completeness, 1e-12);
}

TEST(Chamfer, EmptySetThrows) {
  std::vector<Vec3> a = {Vec3::Zero()};
  try {
    chamfer(a, {});
    FAIL() << "expected EmptyPointSet";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::EmptyPointSet);
  }
}

TEST(SampleMesh, SingleTriangleBarycentricity) {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  mesh.triangles = {{0, 1, 2}};
  auto pts = sample_mesh(mesh, 500, 7);
  for (const Vec3& p : pts) {
    EXPECT_GE(p.x(), -1e-12);
    EXPECT_GE(p.y(), -1e-12);
    EXPECT_LE(p.x() + p.y(), 1.0 + 1e-12);
    EXPECT_NEAR(p.z(), 0.0, 1e-15);
  }
}

TEST(SampleMesh, AreaWeighting) {
  // two triangles with area ratio 4:1
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0),
                   Vec3(5, 0, 0), Vec3(6, 0, 0), Vec3(5, 1, 0)};
  mesh.triangles = {{0, 1, 2}, {3, 4, 5}};
  auto pts = sample_mesh(mesh, 100000, 9);
  int big = 0;
  for (const Vec3& p : pts)
    if (p.x() < 4.0) ++big;
  double frac = double(big) / pts.size();
  EXPECT_NEAR(frac, 0.8, 0.01);
}

TEST(SampleMesh, DeterministicPerSeed) {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  mesh.triangles = {{0, 1, 2}};
  auto a = sample_mesh(mesh, 50, 11);
  auto b = sample_mesh(mesh, 50, 11);
  auto c = sample_mesh(mesh, 50, 12);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SampleMesh, EmptyMeshThrows) {
  TriangleMesh mesh;
  try {
    sample_mesh(mesh, 10, 1);
    FAIL() << "expected EmptyMesh";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::EmptyMesh);
  }
}

TEST(Obj, RoundTrip) {
  AnalyticSdf gt = AnalyticSdf::sphere(Vec3::Zero(), 0.4);
  TriangleMesh mesh = marching_cubes(analytic_fn(gt), unit_box(), 16);
  auto path = std::filesystem::temp_directory_path() / "gens_mesh_test.obj";
  save_obj(mesh, path.string());
  TriangleMesh back = load_obj(path.string());
  ASSERT_EQ(back.vertices.size(), mesh.vertices.size());
  ASSERT_EQ(back.triangles.size(), mesh.triangles.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    EXPECT_LT((back.vertices[i] - mesh.vertices[i]).norm(), 1e-12);
  EXPECT_EQ(back.triangles, mesh.triangles);
  std::filesystem::remove(path);
}

TEST(Obj, MalformedFaceThrows) {
  auto path = std::filesystem::temp_directory_path() / "gens_mesh_bad.obj";
  {
    std::ofstream out(path);
    out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n";
  }
  try {
    load_obj(path.string());
    FAIL() << "expected ParseError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::ParseError);
  }
  std::filesystem::remove(path);
}

// Chamfer between a fine GT sampling and a marching-cubes extraction stays
// within the linear-interpolation error budget.
TEST(MeshEval, SphereExtractionChamfer) {
  AnalyticSdf gt = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  TriangleMesh mesh = marching_cubes(analytic_fn(gt), unit_box(), 64);
  TriangleMesh gt_mesh = marching_cubes(analytic_fn(gt), unit_box(), 128);
  auto a = sample_mesh(mesh, 20000, 13);
  auto b = sample_mesh(gt_mesh, 20000, 14);
  auto r = chamfer(a, b);
  EXPECT_LT(r.chamfer, 2.0 / 64);
}
