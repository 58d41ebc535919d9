#include <gtest/gtest.h>

#include <filesystem>

#include "gens/renderer.hpp"

using namespace gens;

TEST(SampleRay, UniformOnlyStratification) {
  Ray ray;
  ray.near = 0.0;
  ray.far = 1.0;
  Rng rng = make_rng(1, Stream::Test);
  auto ts = sample_ray(ray, 4, 0, rng);
  ASSERT_EQ(ts.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_GE(ts[i], i / 4.0);
    EXPECT_LT(ts[i], (i + 1) / 4.0);
  }
  // fixed rng: calling twice with the same stream state reproduces exactly
  Rng rng2 = make_rng(1, Stream::Test);
  auto ts2 = sample_ray(ray, 4, 0, rng2);
  EXPECT_EQ(ts, ts2);
}

TEST(SampleRay, ImportanceConcentration) {
  std::vector<double> ts(65);
  for (int i = 0; i <= 64; ++i) ts[i] = i / 64.0;
  std::vector<double> weights(65, 0.0);
  weights[40] = 1.0;
  weights[41] = 1.0;  // interval 40 carries all mass
  int inside = 0, total = 0;
  for (int rep = 0; rep < 10; ++rep) {
    Rng rng = make_rng(2 + rep, Stream::Test);
    auto extra = importance_samples(ts, weights, 100, rng);
    for (double t : extra) {
      ++total;
      if (t >= ts[39] && t <= ts[42]) ++inside;
    }
  }
  EXPECT_EQ(total, 1000);
  EXPECT_GE(inside, 800);
}

TEST(SampleRay, MergedSortedStrictlyIncreasing) {
  Ray ray;
  ray.near = 0.2;
  ray.far = 2.0;
  Rng rng = make_rng(3, Stream::Test);
  auto sdf_fn = [](const Vec3& p) { return p.z() - 1.0; };
  auto ts = sample_ray(ray, 64, 32, rng, sdf_fn, 30.0);
  ASSERT_EQ(ts.size(), 96u);
  for (size_t i = 1; i < ts.size(); ++i) EXPECT_GT(ts[i], ts[i - 1]);
  EXPECT_GE(ts.front(), ray.near);
  EXPECT_LE(ts.back(), ray.far);
}

TEST(AlphaFromSdf, NonDecreasingSdfGivesZero) {
  EXPECT_EQ(alpha_from_sdf(0.2, 0.2, 30.0), 0.0);
  EXPECT_EQ(alpha_from_sdf(0.2, 0.5, 30.0), 0.0);
}

TEST(AlphaFromSdf, SaturatesForLargeS) {
  EXPECT_GT(alpha_from_sdf(0.5, -0.5, 500.0), 1.0 - 1e-6);
  EXPECT_LE(alpha_from_sdf(0.5, -0.5, 500.0), 1.0);
}

TEST(AlphaFromSdf, MatchesSigmoidFormula) {
  // independent evaluation of Eq.-5 style quotient at s = 1
  auto phi = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double expected = (phi(0.5) - phi(-0.5)) / phi(0.5);
  EXPECT_NEAR(alpha_from_sdf(0.5, -0.5, 1.0), expected, 1e-15);
  EXPECT_NEAR(expected, 0.39346934028736658, 1e-12);
}

TEST(AlphaFromSdf, GradMatchesFiniteDifferences) {
  Rng rng = make_rng(5, Stream::Test);
  for (int it = 0; it < 200; ++it) {
    double s1 = rng.uniform(-0.5, 0.8);
    double s2 = rng.uniform(-0.8, 0.5);
    double s = rng.uniform(0.5, 80.0);
    double d1, d2, ds;
    alpha_from_sdf_grad(s1, s2, s, d1, d2, ds);
    double h = 1e-6;
    auto fd = [&](double a, double b, double c, double e, double f, double g) {
      return (alpha_from_sdf(a, b, c) - alpha_from_sdf(e, f, g)) / (2 * h);
    };
    double f1 = fd(s1 + h, s2, s, s1 - h, s2, s);
    double f2 = fd(s1, s2 + h, s, s1, s2 - h, s);
    double fs = fd(s1, s2, s + h, s1, s2, s - h);
    // skip the kink of the max clamp
    if (std::abs(alpha_from_sdf(s1, s2, s)) < 1e-9) continue;
    EXPECT_NEAR(d1, f1, 1e-4 * std::max(1.0, std::abs(f1)));
    EXPECT_NEAR(d2, f2, 1e-4 * std::max(1.0, std::abs(f2)));
    EXPECT_NEAR(ds, fs, 1e-4 * std::max(1.0, std::abs(fs)));
  }
}

TEST(Composite, OpaqueFirstSample) {
  std::vector<double> alphas = {1.0, 0.3, 0.7};
  std::vector<Vec3> colors = {Vec3(0.1, 0.2, 0.3), Vec3(1, 1, 1), Vec3(1, 1, 1)};
  std::vector<double> ts = {1.0, 2.0, 3.0};
  auto r = composite(alphas, colors, ts);
  EXPECT_LT((r.color - colors[0]).norm(), 1e-15);
  EXPECT_NEAR(r.opacity, 1.0, 1e-15);
  EXPECT_NEAR(r.depth, 1.0, 1e-15);
}

TEST(Composite, AllZeroAlphas) {
  std::vector<double> alphas(5, 0.0);
  std::vector<Vec3> colors(5, Vec3(1, 1, 1));
  std::vector<double> ts = {1, 2, 3, 4, 5};
  auto r = composite(alphas, colors, ts);
  EXPECT_EQ(r.color.norm(), 0.0);
  EXPECT_EQ(r.opacity, 0.0);
}

TEST(Composite, HalfHalfArithmetic) {
  std::vector<double> alphas = {0.5, 0.5};
  std::vector<Vec3> colors = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  auto r = composite(alphas, colors, {1.0, 2.0});
  EXPECT_NEAR(r.weight[0], 0.5, 1e-15);
  EXPECT_NEAR(r.weight[1], 0.25, 1e-15);
  EXPECT_NEAR(r.opacity, 0.75, 1e-15);
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
  Rng rng = make_rng(7, Stream::Test);
  const int m = 8;
  std::vector<double> alphas(m), g(m);
  for (int i = 0; i < m; ++i) {
    alphas[i] = rng.uniform(0.0, 0.9);
    g[i] = rng.normal();
  }
  auto weight_loss = [&](const std::vector<double>& a) {
    std::vector<Vec3> colors(m, Vec3::Zero());
    auto r = composite(a, colors, {});
    double loss = 0;
    for (int i = 0; i < m; ++i) loss += g[i] * r.weight[i];
    return loss;
  };
  std::vector<double> dalpha;
  composite_backward(alphas, g, dalpha);
  for (int k = 0; k < m; ++k) {
    double h = 1e-7;
    auto up = alphas, dn = alphas;
    up[k] += h;
    dn[k] -= h;
    double fd = (weight_loss(up) - weight_loss(dn)) / (2 * h);
    EXPECT_NEAR(dalpha[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(LocateSurface, SymmetricRoots) {
  auto hit = locate_surface(std::vector<double>{1.0, 2.0}, std::vector<double>{0.5, -0.5});
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->t_s, 1.5, 1e-15);
}

TEST(LocateSurface, ZeroAtFirstSample) {
  auto hit = locate_surface(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, -0.5});
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->t_s, 1.0);
}

TEST(LocateSurface, AllPositiveIsNone) {
  EXPECT_FALSE(locate_surface(std::vector<double>{1.0, 2.0, 3.0},
                              std::vector<double>{0.5, 0.4, 0.1})
                   .has_value());
}

TEST(LocateSurface, FirstIntervalOnly) {
  auto hit = locate_surface(std::vector<double>{1, 2, 3, 4},
                            std::vector<double>{0.5, -0.5, 0.5, -0.5});
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->index, 0);
}

TEST(LocateSurface, ExactForAffineSdf) {
  Rng rng = make_rng(9, Stream::Test);
  for (int it = 0; it < 100; ++it) {
    double t0 = rng.uniform(0, 1), t1 = t0 + rng.uniform(0.01, 1.0);
    double root = t0 + rng.uniform(0.0, 1.0) * (t1 - t0);
    double slope = -rng.uniform(0.1, 5.0);
    auto f = [&](double t) { return slope * (t - root); };
    if (f(t0) < 0) continue;
    auto hit = locate_surface(std::vector<double>{t0, t1}, std::vector<double>{f(t0), f(t1)});
    if (f(t1) >= 0) {
      EXPECT_FALSE(hit.has_value());
      continue;
    }
    ASSERT_TRUE(hit.has_value());
    EXPECT_NEAR(hit->t_s, root, 1e-12);
    EXPECT_GE(hit->t_s, t0);
    EXPECT_LE(hit->t_s, t1);
  }
}

// Unbiasedness probe: linear SDF along the ray, weight argmax within one
// sample spacing of the true crossing for a spread of sharpness values.
TEST(Renderer, PlanarWeightArgmaxUnbiased) {
  const int m = 512;
  const double t_star = 0.6180339887;
  for (double s : {5.0, 30.0, 200.0}) {
    std::vector<double> ts(m), sdfs(m);
    for (int i = 0; i < m; ++i) {
      ts[i] = double(i) / (m - 1);
      sdfs[i] = t_star - ts[i];  // unit-slope plane
    }
    std::vector<double> alphas(m, 0.0);
    for (int i = 0; i + 1 < m; ++i) alphas[i] = alpha_from_sdf(sdfs[i], sdfs[i + 1], s);
    std::vector<Vec3> colors(m, Vec3::Zero());
    auto r = composite(alphas, colors, ts);
    int argmax = 0;
    for (int i = 1; i < m; ++i)
      if (r.weight[i] > r.weight[argmax]) argmax = i;
    EXPECT_NEAR(ts[argmax], t_star, 1.0 / (m - 1) + 1e-12) << "s = " << s;
  }
}

TEST(Renderer, SphereOracleSurface) {
  // analytic sphere SDF drives the full pixel pipeline
  Ray ray;
  ray.origin = Vec3(0, 0, -2);
  ray.dir = Vec3(0, 0, 1);
  ray.near = 0.5;
  ray.far = 3.5;
  RenderOpts opt;
  opt.m_uniform = 128;
  opt.m_importance = 0;
  opt.s = 200.0;
  auto sdf_fn = [](const Vec3& p) { return p.norm() - 0.5; };
  auto grad_fn = [](const Vec3& p) { return Vec3(p.normalized()); };
  auto color_fn = [](const Vec3&) { return Vec3(1, 0, 0); };
  auto pr = render_pixel_with(ray, sdf_fn, grad_fn, color_fn, opt, make_rng(11, Stream::Test));
  ASSERT_TRUE(pr.surface.has_value());
  EXPECT_NEAR(pr.surface->t_s, 1.5, 1e-3);
  EXPECT_LT((pr.surface->normal - Vec3(0, 0, -1)).norm(), 1e-6);
  EXPECT_GT(pr.opacity, 0.9);
  // invariants on the sample batch
  double wsum = 0.0;
  for (size_t i = 0; i < pr.samples.weight.size(); ++i) {
    EXPECT_GE(pr.samples.alpha[i], 0.0);
    EXPECT_LE(pr.samples.alpha[i], 1.0);
    EXPECT_GE(pr.samples.weight[i], 0.0);
    wsum += pr.samples.weight[i];
  }
  EXPECT_LE(wsum, 1.0 + 1e-6);
}

TEST(Renderer, DeterministicGivenSeed) {
  Ray ray;
  ray.origin = Vec3(0.1, -0.2, -2);
  ray.dir = Vec3(0.05, 0.02, 1).normalized();
  ray.near = 0.5;
  ray.far = 3.5;
  RenderOpts opt;
  auto sdf_fn = [](const Vec3& p) { return p.norm() - 0.5; };
  auto grad_fn = [](const Vec3& p) { return Vec3(p.normalized()); };
  auto color_fn = [](const Vec3& p) { return Vec3(0.5 + 0.5 * p.x(), 0.5, 0.5); };
  auto a = render_pixel_with(ray, sdf_fn, grad_fn, color_fn, opt, make_rng(13, Stream::Test));
  auto b = render_pixel_with(ray, sdf_fn, grad_fn, color_fn, opt, make_rng(13, Stream::Test));
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.samples.t, b.samples.t);
  EXPECT_EQ(a.depth, b.depth);
}

TEST(DepthRaster, RoundTrip) {
  ImageF img(7, 5);
  Rng rng = make_rng(17, Stream::Test);
  for (auto& v : img.data) v = float(rng.normal());
  img.data[3] = std::numeric_limits<float>::infinity();
  std::string path = (std::filesystem::temp_directory_path() / "gens_depth_test.bin").string();
  save_raster(img, path);
  ImageF back = load_raster(path);
  EXPECT_EQ(back.width, 7);
  EXPECT_EQ(back.height, 5);
  for (size_t i = 0; i < img.data.size(); ++i) {
    if (std::isfinite(img.data[i]))
      EXPECT_EQ(back.data[i], img.data[i]);
    else
      EXPECT_TRUE(std::isinf(back.data[i]));
  }
  std::filesystem::remove(path);
}
