#include <gtest/gtest.h>

#include "gens/geometry.hpp"
#include "gens/rng.hpp"
#include "gens/scenes.hpp"

using namespace gens;

namespace {

Camera identity_camera(int w = 64, int h = 64) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  return cam;
}

Camera random_camera(Rng& rng) {
  // random position on a shell, looking at a jittered target near the origin
  Vec3 pos(rng.normal(), rng.normal(), rng.normal());
  pos = pos.normalized() * rng.uniform(2.0, 4.0);
  Camera cam = look_at_camera(pos, 128, 96);
  cam.K(0, 0) = 80.0 + 60.0 * rng.uniform();
  cam.K(1, 1) = 80.0 + 60.0 * rng.uniform();
  cam.K(0, 1) = 0.2 * rng.uniform();  // slight skew stays upper-triangular
  cam.validate();
  return cam;
}

}  // namespace

TEST(Project, IdentityCamera) {
  Camera cam = identity_camera();
  auto pr = project(cam, Vec3(0, 0, 1));
  EXPECT_NEAR(pr.pixel.x(), 0.0, 1e-15);
  EXPECT_NEAR(pr.pixel.y(), 0.0, 1e-15);
  EXPECT_NEAR(pr.depth, 1.0, 1e-15);
}

TEST(Project, DiagonalIntrinsics) {
  Camera cam = identity_camera();
  cam.K = Vec3(2, 2, 1).asDiagonal();
  auto pr = project(cam, Vec3(1, 2, 2));
  EXPECT_NEAR(pr.pixel.x(), 1.0, 1e-15);
  EXPECT_NEAR(pr.pixel.y(), 2.0, 1e-15);
  EXPECT_NEAR(pr.depth, 2.0, 1e-15);
}

TEST(Project, BehindCameraThrows) {
  Camera cam = identity_camera();
  try {
    project(cam, Vec3(0, 0, -1));
    FAIL() << "expected BehindCamera";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::BehindCamera);
  }
}

TEST(Unproject, Trivials) {
  Camera cam = identity_camera();
  EXPECT_LT((unproject(cam, Vec2(0, 0), 1.0) - Vec3(0, 0, 1)).norm(), 1e-15);
  cam.t = Vec3(0, 0, -1);
  EXPECT_LT((unproject(cam, Vec2(0, 0), 1.0) - Vec3(0, 0, 0)).norm(), 1e-15);
  try {
    unproject(cam, Vec2(0, 0), 0.0);
    FAIL() << "expected InvalidDepth";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::InvalidDepth);
  }
}

TEST(Project, RoundTripOracle) {
  Rng rng = make_rng(42, Stream::Test);
  for (int it = 0; it < 200; ++it) {
    Camera cam = random_camera(rng);
    Vec2 pixel(rng.uniform(0, cam.width - 1), rng.uniform(0, cam.height - 1));
    double depth = rng.uniform(0.5, 5.0);
    Vec3 p = unproject(cam, pixel, depth);
    auto pr = project(cam, p);
    EXPECT_NEAR(pr.pixel.x(), pixel.x(), 1e-9);
    EXPECT_NEAR(pr.pixel.y(), pixel.y(), 1e-9);
    EXPECT_NEAR(pr.depth, depth, 1e-9);
  }
}

TEST(GenerateRay, IdentityCamera) {
  Camera cam = identity_camera();
  Ray r = generate_ray(cam, Vec2(0, 0), 0.1, 2.0);
  EXPECT_LT(r.origin.norm(), 1e-15);
  EXPECT_LT((r.dir - Vec3(0, 0, 1)).norm(), 1e-12);
}

TEST(GenerateRay, CenterPixelIsOpticalAxis) {
  Rng rng = make_rng(7, Stream::Test);
  Camera cam = random_camera(rng);
  cam.K(0, 1) = 0.0;
  Vec2 center(cam.K(0, 2), cam.K(1, 2));
  Ray r = generate_ray(cam, center, 0.1, 2.0);
  EXPECT_LT((r.dir - cam.optical_axis()).norm(), 1e-9);
}

TEST(GenerateRay, OutOfImageThrows) {
  Camera cam = identity_camera();
  try {
    generate_ray(cam, Vec2(-1, 0), 0.1, 1.0);
    FAIL() << "expected OutOfImage";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::OutOfImage);
  }
}

TEST(GenerateRay, ReprojectionOracle) {
  Rng rng = make_rng(11, Stream::Test);
  for (int it = 0; it < 100; ++it) {
    Camera cam = random_camera(rng);
    Vec2 pixel(rng.uniform(0, cam.width - 1), rng.uniform(0, cam.height - 1));
    Ray r = generate_ray(cam, pixel, 0.1, 3.0);
    EXPECT_NEAR(r.dir.norm(), 1.0, 1e-9);
    auto pr = project(cam, r.at(1.7));
    EXPECT_NEAR(pr.pixel.x(), pixel.x(), 1e-6);
    EXPECT_NEAR(pr.pixel.y(), pixel.y(), 1e-6);
  }
}

TEST(PlaneHomography, CoincidentCamerasGiveIdentity) {
  Rng rng = make_rng(3, Stream::Test);
  Camera cam = random_camera(rng);
  Homography h = plane_homography(cam, cam, Vec3(0.1, -0.2, 0.05), Vec3(0, 0, 1));
  EXPECT_LT((h.H - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PlaneHomography, DegeneratePlaneThrows) {
  // plane through the reference camera center; built with the camera at the
  // origin so n.p_s = 0 exactly matches the degenerate configuration
  Camera ref = identity_camera();
  Camera src = identity_camera();
  src.t = Vec3(1, 0, 0);
  Vec3 n(0, 0, 1);
  Vec3 p_s(1.0, 2.0, 0.0);  // n . p_s = 0
  try {
    plane_homography(ref, src, p_s, n);
    FAIL() << "expected DegeneratePlane";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::DegeneratePlane);
  }
}

// Oracle: intersect the reference pixel ray with the plane, project the hit
// point into the source camera, and compare with H q0.
TEST(PlaneHomography, RayPlaneOracle) {
  Rng rng = make_rng(19, Stream::Test);
  int tested = 0;
  for (int it = 0; it < 400 && tested < 100; ++it) {
    Camera ref = random_camera(rng);
    Camera src = random_camera(rng);
    Vec3 n(rng.normal(), rng.normal(), rng.normal());
    n.normalize();
    Vec3 p_s(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    if (std::abs(n.dot(p_s - ref.t)) < 0.3) continue;
    Vec2 q0(rng.uniform(2, ref.width - 3), rng.uniform(2, ref.height - 3));
    Ray ray = generate_ray(ref, q0, 0.01, 10.0);
    double denom = n.dot(ray.dir);
    if (std::abs(denom) < 0.1) continue;
    double t = n.dot(p_s - ray.origin) / denom;
    if (t < 0.05) continue;
    Vec3 x = ray.at(t);
    Projection pr;
    if (!try_project(src, x, pr)) continue;
    Homography h = plane_homography(ref, src, p_s, n);
    Vec2 mapped;
    if (!h.try_apply(q0, mapped)) continue;
    EXPECT_NEAR(mapped.x(), pr.pixel.x(), 1e-6);
    EXPECT_NEAR(mapped.y(), pr.pixel.y(), 1e-6);
    ++tested;
  }
  EXPECT_GE(tested, 100);
}

// H(ref->b) * H(ref->a)^-1 maps a-pixels of plane points to b-pixels.
TEST(PlaneHomography, Composition) {
  Rng rng = make_rng(23, Stream::Test);
  int tested = 0;
  for (int it = 0; it < 400 && tested < 50; ++it) {
    Camera ref = random_camera(rng);
    Camera a = random_camera(rng);
    Camera b = random_camera(rng);
    Vec3 n = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    Vec3 p_s(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4));
    if (std::abs(n.dot(p_s - ref.t)) < 0.3) continue;
    Vec2 q0(rng.uniform(2, ref.width - 3), rng.uniform(2, ref.height - 3));
    Ray ray = generate_ray(ref, q0, 0.01, 10.0);
    double denom = n.dot(ray.dir);
    if (std::abs(denom) < 0.1) continue;
    double t = n.dot(p_s - ray.origin) / denom;
    if (t < 0.05) continue;
    Vec3 x = ray.at(t);
    Projection pa, pb;
    if (!try_project(a, x, pa) || !try_project(b, x, pb)) continue;
    Homography ha = plane_homography(ref, a, p_s, n);
    Homography hb = plane_homography(ref, b, p_s, n);
    Mat3 a_to_b = hb.H * ha.H.inverse();
    Vec3 r = a_to_b * Vec3(pa.pixel.x(), pa.pixel.y(), 1.0);
    ASSERT_GT(std::abs(r.z()), 1e-12);
    EXPECT_NEAR(r.x() / r.z(), pb.pixel.x(), 1e-6);
    EXPECT_NEAR(r.y() / r.z(), pb.pixel.y(), 1e-6);
    ++tested;
  }
  EXPECT_GE(tested, 50);
}

TEST(Camera, RecordRoundTrip) {
  Rng rng = make_rng(31, Stream::Test);
  Camera cam = random_camera(rng);
  std::ostringstream os;
  write_camera_record(os, cam);
  Camera back = parse_camera_record(os.str(), "test");
  EXPECT_LT((back.K - cam.K).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.R - cam.R).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.t - cam.t).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(back.width, cam.width);
  EXPECT_EQ(back.height, cam.height);
}

TEST(Camera, MalformedRecordThrows) {
  try {
    parse_camera_record("1 2 3", "test");
    FAIL() << "expected ParseError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::ParseError);
  }
}
