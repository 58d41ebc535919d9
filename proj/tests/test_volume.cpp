#include <gtest/gtest.h>

#include <sstream>

#include "gens/scenes.hpp"
#include "gens/volume.hpp"

using namespace gens;

namespace {

BBox unit_box() { return BBox{Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }

template <class S>
MultiScaleVolume<S> random_volume(int levels, int finest, int ch, Rng& rng, double scale = 1.0) {
  auto vol = MultiScaleVolume<S>::create(levels, finest, ch, unit_box());
  for (auto& g : vol.levels)
    for (auto& v : g.data) v = S(scale * rng.normal());
  return vol;
}

// independent scalar re-implementation of trilinear sampling for one channel
double trilerp_oracle(const Grid<double>& g, const BBox& box, const Vec3& p, int c) {
  auto cell = [&](double v, int dim) {
    double gc = (v + 1.0) / 2.0 * dim - 0.5;
    return clamp(gc, 0.0, double(dim - 1));
  };
  double gx = cell(p.x(), g.nx), gy = cell(p.y(), g.ny), gz = cell(p.z(), g.nz);
  int x0 = std::min(int(gx), g.nx - 2), y0 = std::min(int(gy), g.ny - 2),
      z0 = std::min(int(gz), g.nz - 2);
  double fx = gx - x0, fy = gy - y0, fz = gz - z0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        acc += w * g.at(g.voxel_index(x0 + dx, y0 + dy, z0 + dz))[c];
      }
  return acc;
}

}  // namespace

TEST(Trilinear, VoxelCenterHitsValue) {
  Rng rng = make_rng(1, Stream::Test);
  auto vol = random_volume<double>(1, 8, 2, rng);
  const auto& g = vol.levels[0];
  Vec3 p = vol.voxel_center(0, 3, 5, 2);
  double out[2];
  trilinear_sample(g, vol.box, p, out);
  const double* v = g.at(g.voxel_index(3, 5, 2));
  EXPECT_NEAR(out[0], v[0], 1e-12);
  EXPECT_NEAR(out[1], v[1], 1e-12);
}

TEST(Trilinear, ConstantGrid) {
  auto vol = MultiScaleVolume<double>::create(1, 8, 1, unit_box());
  for (auto& v : vol.levels[0].data) v = 3.25;
  Rng rng = make_rng(2, Stream::Test);
  for (int i = 0; i < 50; ++i) {
    Vec3 p(rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3));
    double out;
    trilinear_sample(vol.levels[0], vol.box, p, &out);
    EXPECT_NEAR(out, 3.25, 1e-12);
  }
}

TEST(Trilinear, MidpointIsMean) {
  Rng rng = make_rng(3, Stream::Test);
  auto vol = random_volume<double>(1, 8, 1, rng);
  const auto& g = vol.levels[0];
  Vec3 a = vol.voxel_center(0, 2, 4, 6), b = vol.voxel_center(0, 3, 4, 6);
  double out;
  trilinear_sample(g, vol.box, 0.5 * (a + b), &out);
  double va = g.at(g.voxel_index(2, 4, 6))[0], vb = g.at(g.voxel_index(3, 4, 6))[0];
  EXPECT_NEAR(out, 0.5 * (va + vb), 1e-12);
}

TEST(MultiscaleFeature, ConstantLevels) {
  auto vol = MultiScaleVolume<double>::create(3, 8, 2, unit_box());
  for (auto& g : vol.levels)
    for (auto& v : g.data) v = 1.5;
  std::vector<double> feat(vol.feature_dim());
  vol.feature(Vec3(0.1, 0.2, -0.3), feat.data());
  for (double f : feat) EXPECT_NEAR(f, 1.5, 1e-12);
}

TEST(MultiscaleFeature, SingleNonzeroLevelConfinesSlice) {
  auto vol = MultiScaleVolume<double>::create(3, 8, 2, unit_box());
  for (auto& v : vol.levels[1].data) v = 2.0;
  std::vector<double> feat(vol.feature_dim());
  vol.feature(Vec3(0.1, 0.2, -0.3), feat.data());
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 2; ++c)
      EXPECT_NEAR(feat[j * 2 + c], j == 1 ? 2.0 : 0.0, 1e-12);
}

TEST(MultiscaleFeature, MatchesPerLevelOracle) {
  Rng rng = make_rng(4, Stream::Test);
  auto vol = random_volume<double>(3, 8, 2, rng);
  std::vector<double> feat(vol.feature_dim());
  for (int it = 0; it < 100; ++it) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    vol.feature(p, feat.data());
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < 2; ++c)
        EXPECT_NEAR(feat[j * 2 + c], trilerp_oracle(vol.levels[j], vol.box, p, c), 1e-12);
  }
}

TEST(TrilinearBackward, ZeroUpstreamZeroGrads) {
  Rng rng = make_rng(5, Stream::Test);
  auto vol = random_volume<double>(1, 8, 2, rng);
  SparseLevelGrad grads;
  grads.init(2);
  double up[2] = {0.0, 0.0};
  Vec3 gp = trilinear_backward(vol.levels[0], vol.box, Vec3(0.1, 0.2, 0.3), up, &grads);
  EXPECT_LT(gp.norm(), 1e-15);
  for (double v : grads.vals) EXPECT_EQ(v, 0.0);
}

TEST(TrilinearBackward, ConstantGridFlatField) {
  auto vol = MultiScaleVolume<double>::create(1, 8, 1, unit_box());
  for (auto& v : vol.levels[0].data) v = 2.0;
  double up = 1.0;
  Vec3 gp = trilinear_backward(vol.levels[0], vol.box, Vec3(0.17, -0.21, 0.63), &up, nullptr);
  EXPECT_LT(gp.norm(), 1e-12);
}

TEST(TrilinearBackward, GradPMatchesFiniteDifferences) {
  Rng rng = make_rng(6, Stream::Test);
  auto vol = random_volume<double>(1, 8, 1, rng);
  const auto& g = vol.levels[0];
  double voxel = 2.0 / 8;
  int checked = 0;
  for (int it = 0; it < 200 && checked < 50; ++it) {
    Vec3 p(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    double h = 1e-4 * voxel;
    // stay inside one cell so the analytic derivative is smooth
    TrilerpStamp st;
    make_stamp(g, vol.box, p, st);
    bool interior = true;
    for (int a = 0; a < 3; ++a)
      if (st.frac[a] < 2 * h * 8 || st.frac[a] > 1 - 2 * h * 8) interior = false;
    if (!interior) continue;
    ++checked;
    double up = 1.0;
    Vec3 gp = trilinear_backward(g, vol.box, p, &up, nullptr);
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      double vp, vm;
      trilinear_sample(g, vol.box, p + e, &vp);
      trilinear_sample(g, vol.box, p - e, &vm);
      double fd = (vp - vm) / (2 * h);
      EXPECT_NEAR(gp[a], fd, 1e-3 * std::max(1.0, std::abs(fd)));
    }
  }
  EXPECT_GE(checked, 50);
}

// Trilinear sampling is linear in grid values, so the adjoint identity
// <sample(g + dg), u> - <sample(g), u> = <dg, grad_grid> holds exactly.
TEST(TrilinearBackward, AdjointIdentity) {
  Rng rng = make_rng(7, Stream::Test);
  auto vol = random_volume<double>(1, 4, 1, rng);
  auto& g = vol.levels[0];
  Vec3 p(0.13, -0.42, 0.55);
  double up = 0.7;
  SparseLevelGrad grads;
  grads.init(1);
  trilinear_backward(g, vol.box, p, &up, &grads);
  // perturb every voxel by a random dg and compare
  std::vector<double> dg(g.voxels());
  for (auto& v : dg) v = rng.normal();
  double before;
  trilinear_sample(g, vol.box, p, &before);
  double inner = 0.0;
  for (size_t e = 0; e < grads.order.size(); ++e) inner += grads.vals[e] * dg[grads.order[e]];
  for (size_t i = 0; i < g.voxels(); ++i) g.data[i] += dg[i];
  double after;
  trilinear_sample(g, vol.box, p, &after);
  EXPECT_NEAR((after - before) * up, inner, 1e-10);
}

TEST(Continuity, AcrossVoxelFaces) {
  Rng rng = make_rng(8, Stream::Test);
  auto vol = random_volume<double>(2, 8, 2, rng);
  std::vector<double> fa(vol.feature_dim()), fb(vol.feature_dim());
  // face between voxel centers along x at grid coordinate boundary
  Vec3 face = vol.voxel_center(0, 3, 4, 4);
  face.x() += 0.5 * 2.0 / 8;  // cell boundary
  for (double eps : {1e-4, 1e-6, 1e-8}) {
    vol.feature(face - Vec3(eps, 0, 0), fa.data());
    vol.feature(face + Vec3(eps, 0, 0), fb.data());
    double diff = 0.0;
    for (int c = 0; c < vol.feature_dim(); ++c) diff = std::max(diff, std::abs(fa[c] - fb[c]));
    EXPECT_LT(diff, 50 * eps);
  }
}

// ----------------------------------------------------------------------------
// TV

TEST(TvLoss, ConstantVolumeIsZero) {
  auto vol = MultiScaleVolume<double>::create(2, 8, 2, unit_box());
  for (auto& g : vol.levels)
    for (auto& v : g.data) v = 0.73;
  EXPECT_NEAR(tv_loss(vol), 2 * std::sqrt(kTvEps), 1e-3);
}

TEST(TvLoss, SingleDifference) {
  MultiScaleVolume<double> vol;
  vol.box = unit_box();
  vol.ch = 1;
  vol.levels.emplace_back(2, 1, 1, 1);
  vol.levels[0].data = {0.0, 1.7};
  EXPECT_NEAR(tv_loss(vol), 1.7, 1e-4);
}

TEST(TvLoss, MatchesTripleLoopOracle) {
  Rng rng = make_rng(9, Stream::Test);
  auto vol = random_volume<double>(2, 6, 2, rng);
  double oracle = 0.0;
  for (const auto& g : vol.levels) {
    double s = 0.0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x)
          for (int c = 0; c < g.ch; ++c) {
            double v = g.at(g.voxel_index(x, y, z))[c];
            if (x + 1 < g.nx) {
              double d = g.at(g.voxel_index(x + 1, y, z))[c] - v;
              s += d * d;
            }
            if (y + 1 < g.ny) {
              double d = g.at(g.voxel_index(x, y + 1, z))[c] - v;
              s += d * d;
            }
            if (z + 1 < g.nz) {
              double d = g.at(g.voxel_index(x, y, z + 1))[c] - v;
              s += d * d;
            }
          }
    oracle += std::sqrt(s + 1e-8);
  }
  EXPECT_NEAR(tv_loss(vol), oracle, 1e-10);
}

TEST(TvLoss, ExactGradMatchesFiniteDifferences) {
  Rng rng = make_rng(10, Stream::Test);
  auto vol = random_volume<double>(1, 4, 1, rng);
  VolumeGrad grads;
  grads.init(1, 1);
  double val = tv_loss_grad(vol, 1.0, 0, nullptr, &grads, nullptr);
  grads.finalize();
  EXPECT_NEAR(val, tv_loss(vol), 1e-12);
  auto& g = vol.levels[0];
  for (int it = 0; it < 20; ++it) {
    size_t vi = rng.uniform_idx(g.voxels());
    double h = 1e-6;
    double orig = g.data[vi];
    g.data[vi] = orig + h;
    double up = tv_loss(vol);
    g.data[vi] = orig - h;
    double dn = tv_loss(vol);
    g.data[vi] = orig;
    double fd = (up - dn) / (2 * h);
    double an = 0.0;
    for (size_t e = 0; e < grads.levels[0].order.size(); ++e)
      if (grads.levels[0].order[e] == vi) an = grads.levels[0].vals[e];
    EXPECT_NEAR(an, fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

// ----------------------------------------------------------------------------
// init_mean_var

TEST(InitMeanVar, RequiresTwoViews) {
  auto vol = MultiScaleVolume<float>::create(1, 4, 4, unit_box());
  std::vector<FeaturePyramid> pyrs(1);
  std::vector<Camera> cams(1);
  try {
    init_mean_var(vol, pyrs, cams);
    FAIL() << "expected InsufficientViews";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::InsufficientViews);
  }
}

TEST(InitMeanVar, ConstantImagesGiveMeanAndZeroVariance) {
  // constant images: luma channel equals the constant, derivative channels 0
  ImageRGB img(32, 32);
  for (auto& v : img.data) v = 0.5f;
  auto cams = make_rig(3, 3.0, 0.1, 0.4, 5, 32, 32);
  std::vector<FeaturePyramid> pyrs;
  for (int i = 0; i < 3; ++i) pyrs.push_back(build_pyramid(img, 2));
  auto vol = MultiScaleVolume<float>::create(2, 8, 4, unit_box());
  init_mean_var(vol, pyrs, cams);
  float luma = 0.299f * 0.5f + 0.587f * 0.5f + 0.114f * 0.5f;
  // center voxel is seen by all three cameras
  const auto& g = vol.levels[0];
  const float* v = g.at(g.voxel_index(4, 4, 4));
  // mean block: channels 0..1 average luma+dx and dy+lap pairs
  EXPECT_NEAR(v[0], 0.5f * (luma + 0.f), 1e-5);
  EXPECT_NEAR(v[1], 0.0f, 1e-5);
  // variance block is zero for identical views
  EXPECT_NEAR(v[2], 0.0f, 1e-6);
  EXPECT_NEAR(v[3], 0.0f, 1e-6);
}

TEST(InitMeanVar, VoxelBehindAllCamerasIsZero) {
  ImageRGB img(32, 32);
  for (auto& v : img.data) v = 0.9f;
  // two cameras close together looking along -x from x = +3
  std::vector<Camera> cams = {look_at_camera(Vec3(3, 0.2, 0.3), 32, 32),
                              look_at_camera(Vec3(3, -0.2, 0.3), 32, 32)};
  std::vector<FeaturePyramid> pyrs = {build_pyramid(img, 1), build_pyramid(img, 1)};
  auto vol = MultiScaleVolume<float>::create(1, 4, 4, unit_box());
  // enlarge the box so some voxels sit behind the cameras
  vol.box = BBox{Vec3(2.5, -1, -1), Vec3(6.0, 1, 1)};
  init_mean_var(vol, pyrs, cams);
  const auto& g = vol.levels[0];
  // voxel near x=5.5 is behind both cameras
  const float* v = g.at(g.voxel_index(3, 2, 2));
  for (int c = 0; c < 4; ++c) EXPECT_EQ(v[c], 0.f);
}

TEST(InitMeanVar, MatchesHandComputedStats) {
  // three distinct constant images; all derivative channels vanish, so
  // channel blocks reduce to luma statistics
  std::vector<double> lumas;
  std::vector<FeaturePyramid> pyrs;
  std::vector<double> vals = {0.2, 0.5, 0.8};
  for (double val : vals) {
    ImageRGB img(32, 32);
    for (auto& v : img.data) v = float(val);
    pyrs.push_back(build_pyramid(img, 1));
    lumas.push_back(val);  // luma of a gray image equals its value
  }
  auto cams = make_rig(3, 3.0, 0.1, 0.4, 5, 32, 32);
  auto vol = MultiScaleVolume<float>::create(1, 4, 4, unit_box());
  init_mean_var(vol, pyrs, cams);
  double mean = (lumas[0] + lumas[1] + lumas[2]) / 3.0;
  double var = 0.0;
  for (double l : lumas) var += (l - mean) * (l - mean);
  var /= 3.0;
  const auto& g = vol.levels[0];
  const float* v = g.at(g.voxel_index(2, 2, 2));
  EXPECT_NEAR(v[0], 0.5 * mean, 1e-5);          // mean of (luma, dx)
  EXPECT_NEAR(v[1], 0.0, 1e-6);                 // mean of (dy, lap)
  EXPECT_NEAR(v[2], 0.5 * var, 1e-6);           // var of (luma, dx)
  EXPECT_NEAR(v[3], 0.0, 1e-7);
}

// ----------------------------------------------------------------------------
// prune

TEST(Prune, SphereBandKeepsShell) {
  auto vol = MultiScaleVolume<float>::create(1, 32, 1, unit_box());
  double voxel = 2.0 / 32;
  auto sdf = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) out[i] = pts[i].norm() - 0.5;
  };
  VoxelMask mask = prune(vol, sdf, 2 * voxel);
  const auto& g = vol.levels[0];
  int kept = 0;
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        Vec3 c = vol.voxel_center(0, x, y, z);
        double d = std::abs(c.norm() - 0.5);
        bool m = mask.kept(0, g.voxel_index(x, y, z));
        if (m) ++kept;
        if (d <= 2 * voxel) EXPECT_TRUE(m);          // inside the band
        if (d > 2 * voxel + 2.0 * voxel * 1.7321) EXPECT_FALSE(m);  // beyond band + dilation
      }
  EXPECT_GT(kept, 0);
  EXPECT_LT(kept, int(g.voxels()));
}

TEST(Prune, InfiniteBandKeepsAll) {
  auto vol = MultiScaleVolume<float>::create(2, 8, 1, unit_box());
  auto sdf = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) out[i] = pts[i].norm() - 0.5;
  };
  VoxelMask mask = prune(vol, sdf, 1e9);
  for (int j = 0; j < vol.n_levels(); ++j)
    for (size_t i = 0; i < vol.levels[j].voxels(); ++i) EXPECT_TRUE(mask.kept(j, i));
}

TEST(Prune, FarFieldEmptyMask) {
  auto vol = MultiScaleVolume<float>::create(1, 8, 1, unit_box());
  auto sdf = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.assign(pts.size(), 7.0);
  };
  VoxelMask mask = prune(vol, sdf, 0.5);
  for (size_t i = 0; i < vol.levels[0].voxels(); ++i) EXPECT_FALSE(mask.kept(0, i));
}

TEST(Prune, ZeroCrossingCellsAlwaysKept) {
  auto vol = MultiScaleVolume<float>::create(1, 16, 1, unit_box());
  AnalyticSdf shape = named_shape("box");
  auto sdf = [&](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) out[i] = eval_sdf(shape, pts[i]);
  };
  double voxel = 2.0 / 16;
  VoxelMask mask = prune(vol, sdf, 2 * voxel);
  const auto& g = vol.levels[0];
  Vec3 ext = vol.box.extent();
  for (int z = 0; z + 1 <= g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        // corners of cell (x,y,z)
        bool pos = false, neg = false;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              Vec3 corner(vol.box.min.x() + (x + dx) * ext.x() / g.nx,
                          vol.box.min.y() + (y + dy) * ext.y() / g.ny,
                          vol.box.min.z() + (z + dz) * ext.z() / g.nz);
              (eval_sdf(shape, corner) >= 0 ? pos : neg) = true;
            }
        if (pos && neg) EXPECT_TRUE(mask.kept(0, g.voxel_index(x, y, z)));
      }
}

// ----------------------------------------------------------------------------
// serialization

TEST(Checkpoint, VolumeRoundTrip) {
  Rng rng = make_rng(11, Stream::Test);
  auto vol = random_volume<float>(3, 8, 4, rng);
  VoxelMask mask;
  mask.levels.resize(3);
  for (int j = 0; j < 3; ++j) {
    mask.levels[j].assign(vol.levels[j].voxels(), 1);
    for (size_t i = 0; i < mask.levels[j].size(); i += 3) mask.levels[j][i] = 0;
  }
  std::stringstream ss;
  save_volume(ss, vol, mask);
  MultiScaleVolume<float> back;
  VoxelMask bmask;
  load_volume(ss, back, bmask, "test");
  ASSERT_EQ(back.n_levels(), vol.n_levels());
  EXPECT_EQ(back.ch, vol.ch);
  for (int j = 0; j < 3; ++j) {
    ASSERT_EQ(back.levels[j].data.size(), vol.levels[j].data.size());
    for (size_t i = 0; i < vol.levels[j].data.size(); ++i)
      EXPECT_EQ(back.levels[j].data[i], vol.levels[j].data[i]);
    for (size_t i = 0; i < mask.levels[j].size(); ++i)
      EXPECT_EQ(bmask.levels[j][i], mask.levels[j][i]);
  }
}

TEST(Checkpoint, TruncatedVolumeThrows) {
  Rng rng = make_rng(12, Stream::Test);
  auto vol = random_volume<float>(1, 8, 2, rng);
  std::stringstream ss;
  save_volume(ss, vol, VoxelMask{});
  std::string full = ss.str();
  std::stringstream cut(full.substr(0, full.size() / 2));
  MultiScaleVolume<float> back;
  VoxelMask mask;
  try {
    load_volume(cut, back, mask, "test");
    FAIL() << "expected ParseError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::ParseError);
  }
}
