#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>

#include "angiomatch/geometry.hpp"
#include "angiomatch/rng.hpp"

using namespace angiomatch;
using namespace angiomatch::geometry;

namespace {

// Elementary rotations rebuilt by hand so the test does not share code with
// the implementation.
Eigen::Matrix3d hand_rot_x(double deg) {
  const double a = deg * M_PI / 180.0;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(1, 1) = std::cos(a);
  m(1, 2) = -std::sin(a);
  m(2, 1) = std::sin(a);
  m(2, 2) = std::cos(a);
  return m;
}

Eigen::Matrix3d hand_rot_y(double deg) {
  const double a = deg * M_PI / 180.0;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = std::cos(a);
  m(0, 2) = std::sin(a);
  m(2, 0) = -std::sin(a);
  m(2, 2) = std::cos(a);
  return m;
}

CameraModel default_cam(double lao, double cra) {
  return make_camera({lao, cra}, 1200.0, 800.0, 0.3, 512, 512);
}

}  // namespace

TEST_CASE("zero angulation gives the identity pose") {
  const Extrinsics e = angulation_to_extrinsics({0.0, 0.0}, 750.0);
  CHECK((e.rotation - Eigen::Matrix3d::Identity()).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(e.translation.isApprox(Eigen::Vector3d(0, 0, 750.0)));
}

TEST_CASE("single-axis angulations compose to their angle difference") {
  const Extrinsics a = angulation_to_extrinsics({-30.0, 0.0}, 800.0);  // RAO 30
  const Extrinsics b = angulation_to_extrinsics({-25.0, 0.0}, 800.0);  // RAO 25
  CHECK(rotation_error(a.rotation, b.rotation) == Catch::Approx(5.0).margin(1e-10));
}

TEST_CASE("angulation matches hand-composed elementary rotations") {
  const Extrinsics e = angulation_to_extrinsics({45.0, 20.0}, 800.0);  // LAO 45, CRA 20
  const Eigen::Matrix3d expected = hand_rot_x(20.0) * hand_rot_y(45.0);
  CHECK((e.rotation - expected).lpNorm<Eigen::Infinity>() < 1e-14);
  // action on the basis vectors
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d v = Eigen::Vector3d::Unit(i);
    CHECK((e.rotation * v - expected * v).norm() < 1e-14);
  }
}

TEST_CASE("angulation rotations stay orthonormal over random angles") {
  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const CArmAngulation ang{rng.uniform(-180.0, 180.0), rng.uniform(-180.0, 180.0)};
    const Eigen::Matrix3d r = angulation_to_extrinsics(ang, 500.0).rotation;
    worst = std::max(worst,
                     (r.transpose() * r - Eigen::Matrix3d::Identity()).lpNorm<Eigen::Infinity>());
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("angulation outside the valid range is rejected") {
  CHECK_THROWS_AS(angulation_to_extrinsics({181.0, 0.0}, 800.0), ConfigError);
  CHECK_THROWS_AS(angulation_to_extrinsics({0.0, -200.0}, 800.0), ConfigError);
}

TEST_CASE("isocenter projects to the principal point") {
  const CameraModel cam = default_cam(0, 0);
  const Eigen::Vector2d px = project_point(cam, Eigen::Vector3d::Zero());
  CHECK(px.isApprox(cam.principal_point, 1e-12));
}

TEST_CASE("lateral millimeter offset maps through the magnification") {
  // pinhole arithmetic: 1 mm * (SID/SOD) / spacing = 1 * 1.5 / 0.3 = 5 px
  CameraModel cam = make_camera({0, 0}, 1500.0, 1000.0, 0.3, 512, 512);
  const Eigen::Vector2d px = project_point(cam, Eigen::Vector3d(1.0, 0.0, 0.0));
  CHECK(px.x() - cam.principal_point.x() == Catch::Approx(5.0).margin(1e-12));
  CHECK(px.y() - cam.principal_point.y() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("points at or behind the source are rejected") {
  const CameraModel cam = default_cam(0, 0);
  // the source sits at world (0,0,-SOD); anything at depth <= 0 must throw
  const Eigen::Vector3d behind(0.0, 0.0, -cam.source_to_isocenter - 1.0);
  CHECK_THROWS_AS(project_point(cam, behind), NonPositiveDepth);
  std::vector<Eigen::Vector3d> pts{Eigen::Vector3d::Zero(), behind};
  CHECK_THROWS_AS(project_points(cam, pts), NonPositiveDepth);
}

TEST_CASE("projected correspondences satisfy the epipolar constraint") {
  const CameraModel cam_a = default_cam(-30.0, 20.0);
  const CameraModel cam_b = default_cam(40.0, -10.0);
  const Eigen::Matrix3d f = fundamental_from_cameras(cam_a, cam_b);
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d p(rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-40, 40));
    const Eigen::Vector2d a = project_point(cam_a, p);
    const Eigen::Vector2d b = project_point(cam_b, p);
    CHECK(epipolar_distance(f, a, b) < 1e-9);
  }
}

TEST_CASE("pure rotation pairs have no fundamental matrix") {
  CameraModel cam_a = default_cam(0, 0);
  CameraModel cam_b = cam_a;
  cam_b.rotation = rotation_z(15.0) * cam_a.rotation;  // roll about the optical axis
  CHECK_THROWS_AS(fundamental_from_cameras(cam_a, cam_b), DegenerateGeometry);
}

TEST_CASE("fundamental matrices have rank 2") {
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    const CameraModel cam_a = default_cam(rng.uniform(-60, 60), rng.uniform(-40, 40));
    CArmAngulation ang_b{rng.uniform(-60, 60), rng.uniform(-40, 40)};
    if (view_separation_deg(cam_a.angulation, ang_b) < 5.0) {
      --i;
      continue;
    }
    const Eigen::Matrix3d f = fundamental_from_cameras(cam_a, default_cam(ang_b.lao_rao, ang_b.cra_cau));
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(f);
    const Eigen::Vector3d s = svd.singularValues();
    CHECK(s(1) > 1e-10);        // rank at least 2
    CHECK(s(2) / s(0) < 1e-10);  // and not 3
  }
}

TEST_CASE("epipolar distance equals the direct point-line formula") {
  const CameraModel cam_a = default_cam(-25.0, 15.0);
  const CameraModel cam_b = default_cam(35.0, -20.0);
  const Eigen::Matrix3d f = fundamental_from_cameras(cam_a, cam_b);
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector2d a(rng.uniform(0, 511), rng.uniform(0, 511));
    const Eigen::Vector2d b(rng.uniform(0, 511), rng.uniform(0, 511));
    const Eigen::Vector3d xa(a.x(), a.y(), 1.0), xb(b.x(), b.y(), 1.0);
    const Eigen::Vector3d lb = f * xa;
    const Eigen::Vector3d la = f.transpose() * xb;
    const double db = std::abs(lb.dot(xb)) / std::sqrt(lb.x() * lb.x() + lb.y() * lb.y());
    const double da = std::abs(la.dot(xa)) / std::sqrt(la.x() * la.x() + la.y() * la.y());
    CHECK(epipolar_distance(f, a, b) == Catch::Approx(0.5 * (da + db)).margin(1e-12));
  }
}

TEST_CASE("perpendicular displacement yields that one-sided distance") {
  const CameraModel cam_a = default_cam(-30.0, 0.0);
  const CameraModel cam_b = default_cam(30.0, 10.0);
  const Eigen::Matrix3d f = fundamental_from_cameras(cam_a, cam_b);
  const Eigen::Vector3d p(10.0, -5.0, 20.0);
  const Eigen::Vector2d a = project_point(cam_a, p);
  const Eigen::Vector2d b = project_point(cam_b, p);
  const Eigen::Vector3d line_b = f * Eigen::Vector3d(a.x(), a.y(), 1.0);
  const Eigen::Vector2d normal =
      Eigen::Vector2d(line_b.x(), line_b.y()).normalized();
  const Eigen::Vector2d b_shifted = b + 2.0 * normal;
  const Eigen::Vector3d xb(b_shifted.x(), b_shifted.y(), 1.0);
  const double one_sided =
      std::abs(line_b.dot(xb)) / std::hypot(line_b.x(), line_b.y());
  CHECK(one_sided == Catch::Approx(2.0).margin(1e-9));
  // the symmetric distance averages this with the (different) other side
  const double sym = epipolar_distance(f, a, b_shifted);
  CHECK(sym > 0.0);
  CHECK(sym <= 2.0 + 1e-9);
}

TEST_CASE("rotation error basics") {
  const Eigen::Matrix3d r = angulation_to_extrinsics({33.0, -12.0}, 1.0).rotation;
  CHECK(rotation_error(r, r) == Catch::Approx(0.0).margin(1e-12));

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const Eigen::Matrix3d r30(Eigen::AngleAxisd(30.0 * M_PI / 180.0, axis));
    CHECK(rotation_error(r * r30, r) == Catch::Approx(30.0).margin(1e-9));
  }
}

TEST_CASE("rotation error agrees with the quaternion oracle") {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector3d ax_a(rng.normal(), rng.normal(), rng.normal());
    Eigen::Vector3d ax_b(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Matrix3d ra(Eigen::AngleAxisd(rng.uniform(0, M_PI), ax_a.normalized()));
    const Eigen::Matrix3d rb(Eigen::AngleAxisd(rng.uniform(0, M_PI), ax_b.normalized()));
    const double oracle =
        Eigen::Quaterniond(ra).angularDistance(Eigen::Quaterniond(rb)) * 180.0 / M_PI;
    CHECK(rotation_error(ra, rb) == Catch::Approx(oracle).margin(1e-9));
  }
}

TEST_CASE("rotation error is symmetric and satisfies the triangle inequality") {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    Eigen::Matrix3d r[3];
    for (auto& m : r) {
      Eigen::Vector3d ax(rng.normal(), rng.normal(), rng.normal());
      m = Eigen::Matrix3d(Eigen::AngleAxisd(rng.uniform(0, M_PI), ax.normalized()));
    }
    const double ab = rotation_error(r[0], r[1]);
    const double ba = rotation_error(r[1], r[0]);
    const double bc = rotation_error(r[1], r[2]);
    const double ac = rotation_error(r[0], r[2]);
    CHECK(ab == Catch::Approx(ba).margin(1e-9));
    CHECK(ac <= ab + bc + 1e-9);
  }
}
