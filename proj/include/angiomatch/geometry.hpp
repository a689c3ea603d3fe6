#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "angiomatch/errors.hpp"

namespace angiomatch::geometry {

// C-arm gantry angles in degrees. Positive lao_rao = LAO, negative = RAO;
// positive cra_cau = CRA, negative = CAU.
struct CArmAngulation {
  double lao_rao = 0.0;
  double cra_cau = 0.0;
};

constexpr double kDegToRad = M_PI / 180.0;
constexpr double kRadToDeg = 180.0 / M_PI;

inline Eigen::Matrix3d rotation_x(double deg) {
  const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Eigen::Matrix3d rotation_y(double deg) {
  const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
  Eigen::Matrix3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Eigen::Matrix3d rotation_z(double deg) {
  const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
  Eigen::Matrix3d r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

// Cone-beam C-arm camera.
//
// World frame (synthetic patient convention): x = patient left, y = posterior,
// z = cranial, origin at the isocenter. Camera frame: pinhole with the optical
// axis along +z_cam, x_cam = image u, y_cam = image v. World-to-camera map:
// X_cam = rotation * X_world + translation.
//
// At zero angulation the camera frame coincides with the world frame and the
// isocenter sits at depth SOD on the optical axis. LAO/RAO swings the source
// about the world y axis, CRA/CAU about the swung lateral (x) axis:
// rotation = R_x(cra_cau) * R_y(lao_rao). This relabeled frame keeps the
// zero-angulation pose the identity; it is not the clinical gantry frame.
struct CameraModel {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double source_to_detector = 1200.0;   // SID, mm
  double source_to_isocenter = 800.0;   // SOD, mm
  double pixel_spacing = 0.3;           // mm per pixel on the detector plane at the isocenter
  Eigen::Vector2d principal_point = Eigen::Vector2d(255.5, 255.5);
  int width = 512;
  int height = 512;
  CArmAngulation angulation;  // kept for serialization; extrinsics derive from it

  double focal_px() const { return source_to_detector / pixel_spacing; }

  Eigen::Matrix3d intrinsic_matrix() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = k(1, 1) = focal_px();
    k(0, 2) = principal_point.x();
    k(1, 2) = principal_point.y();
    return k;
  }

  // Source position in world coordinates.
  Eigen::Vector3d camera_center() const { return -rotation.transpose() * translation; }
};

struct Extrinsics {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
};

// rotation = R_x(cra_cau) * R_y(lao_rao); translation puts the isocenter at
// depth SOD on the optical axis.
inline Extrinsics angulation_to_extrinsics(const CArmAngulation& ang, double sod) {
  if (std::abs(ang.lao_rao) > 180.0 || std::abs(ang.cra_cau) > 180.0)
    throw ConfigError("angulation out of [-180, 180] degrees");
  if (!(sod > 0.0)) throw ConfigError("SOD must be positive");
  Extrinsics e;
  e.rotation = rotation_x(ang.cra_cau) * rotation_y(ang.lao_rao);
  e.translation = Eigen::Vector3d(0.0, 0.0, sod);
  return e;
}

inline CameraModel make_camera(const CArmAngulation& ang, double sid, double sod,
                               double pixel_spacing, int width, int height) {
  if (!(sid > sod && sod > 0.0)) throw ConfigError("camera requires SID > SOD > 0");
  if (!(pixel_spacing > 0.0)) throw ConfigError("pixel_spacing must be positive");
  CameraModel cam;
  const Extrinsics e = angulation_to_extrinsics(ang, sod);
  cam.rotation = e.rotation;
  cam.translation = e.translation;
  cam.source_to_detector = sid;
  cam.source_to_isocenter = sod;
  cam.pixel_spacing = pixel_spacing;
  cam.width = width;
  cam.height = height;
  cam.principal_point = Eigen::Vector2d((width - 1) * 0.5, (height - 1) * 0.5);
  cam.angulation = ang;
  return cam;
}

inline Eigen::Vector2d project_point(const CameraModel& cam, const Eigen::Vector3d& p) {
  const Eigen::Vector3d pc = cam.rotation * p + cam.translation;
  if (!(pc.z() > 0.0)) throw NonPositiveDepth("3D point at or behind the X-ray source");
  const double f = cam.focal_px();
  return Eigen::Vector2d(f * pc.x() / pc.z() + cam.principal_point.x(),
                         f * pc.y() / pc.z() + cam.principal_point.y());
}

inline std::vector<Eigen::Vector2d> project_points(const CameraModel& cam,
                                                   const std::vector<Eigen::Vector3d>& pts) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(project_point(cam, p));
  return out;
}

inline Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& t) {
  Eigen::Matrix3d m;
  m << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  return m;
}

// Fundamental matrix with x_B^T F x_A = 0 for pixel correspondences.
// Normalized to unit Frobenius norm with a deterministic sign.
inline Eigen::Matrix3d fundamental_from_cameras(const CameraModel& cam_a,
                                                const CameraModel& cam_b) {
  const Eigen::Matrix3d r_rel = cam_b.rotation * cam_a.rotation.transpose();
  const Eigen::Vector3d t_rel = cam_b.translation - r_rel * cam_a.translation;
  if (t_rel.norm() < 1e-6)
    throw DegenerateGeometry("camera pair related by pure rotation has no epipolar geometry");
  const Eigen::Matrix3d e = cross_matrix(t_rel) * r_rel;
  Eigen::Matrix3d f = cam_b.intrinsic_matrix().transpose().inverse() * e *
                      cam_a.intrinsic_matrix().inverse();
  f /= f.norm();
  // deterministic sign: make the entry of largest magnitude positive
  int r = 0, c = 0;
  f.cwiseAbs().maxCoeff(&r, &c);
  if (f(r, c) < 0) f = -f;
  return f;
}

// Symmetric epipolar distance in pixels: mean of the two point-to-line
// distances |x_B^T F x_A| / |l| taken in each image.
inline double epipolar_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& pt_a,
                                const Eigen::Vector2d& pt_b) {
  const Eigen::Vector3d xa(pt_a.x(), pt_a.y(), 1.0);
  const Eigen::Vector3d xb(pt_b.x(), pt_b.y(), 1.0);
  const Eigen::Vector3d line_b = f * xa;            // epipolar line of A's point in image B
  const Eigen::Vector3d line_a = f.transpose() * xb;  // and vice versa
  const double num = std::abs(xb.dot(line_b));
  const double nb = std::hypot(line_b.x(), line_b.y());
  const double na = std::hypot(line_a.x(), line_a.y());
  double d = 0.0;
  d += (nb > 0.0) ? num / nb : 0.0;
  d += (na > 0.0) ? num / na : 0.0;
  return 0.5 * d;
}

// Geodesic rotation distance in degrees, clamped to [0, 180].
inline double rotation_error(const Eigen::Matrix3d& r_est, const Eigen::Matrix3d& r_true) {
  const double tr = (r_est.transpose() * r_true).trace();
  const double c = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

// Angular separation between two views = geodesic distance of their
// extrinsic rotations. Used by the pairing rule of the data engine.
inline double view_separation_deg(const CArmAngulation& a, const CArmAngulation& b) {
  const Eigen::Matrix3d ra = angulation_to_extrinsics(a, 1.0).rotation;
  const Eigen::Matrix3d rb = angulation_to_extrinsics(b, 1.0).rotation;
  return rotation_error(ra, rb);
}

}  // namespace angiomatch::geometry
