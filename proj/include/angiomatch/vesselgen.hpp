#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "angiomatch/errors.hpp"
#include "angiomatch/geometry.hpp"
#include "angiomatch/image.hpp"
#include "angiomatch/rng.hpp"

namespace angiomatch::vesselgen {

using geometry::CameraModel;
using geometry::CArmAngulation;

enum class VesselClass { LAD = 0, LCX = 1, RCA = 2 };

inline const char* to_string(VesselClass c) {
  switch (c) {
    case VesselClass::LAD: return "LAD";
    case VesselClass::LCX: return "LCX";
    default: return "RCA";
  }
}

inline VesselClass vessel_class_from_string(const std::string& s) {
  if (s == "LAD") return VesselClass::LAD;
  if (s == "LCX") return VesselClass::LCX;
  if (s == "RCA") return VesselClass::RCA;
  throw FormatError("unknown vessel class: " + s);
}

// 3D centerline tree. Points are stored curve by curve; parent_index links a
// point to its predecessor (-1 for the root). bifurcation_indices are the
// trunk points where side branches attach.
struct VesselTree {
  std::vector<Eigen::Vector3d> points;  // mm, world frame (isocenter at origin)
  std::vector<double> radii;            // mm
  std::vector<int> parent_index;
  std::vector<int> bifurcation_indices;
  VesselClass vessel_class = VesselClass::LAD;
};

// Returns an empty string when all structural invariants hold, otherwise a
// description of the first violation.
inline std::string check_tree(const VesselTree& t) {
  const std::size_t n = t.points.size();
  if (n == 0) return "empty tree";
  if (t.radii.size() != n || t.parent_index.size() != n) return "field length mismatch";
  int roots = 0;
  std::vector<int> child_count(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = t.parent_index[i];
    if (p == -1) {
      ++roots;
      continue;
    }
    if (p < 0 || static_cast<std::size_t>(p) >= i) return "parent indices must precede children";
    ++child_count[p];
    if (t.radii[i] <= 0) return "non-positive radius";
    if (t.radii[i] > t.radii[p] + 1e-12) return "radius grows from parent to child";
    const double d = (t.points[i] - t.points[p]).norm();
    if (d < 0.2 - 1e-9 || d > 1.0 + 1e-9) return "consecutive spacing outside [0.2, 1.0] mm";
  }
  if (roots != 1) return "tree must have exactly one root";
  for (int b : t.bifurcation_indices) {
    if (b < 0 || static_cast<std::size_t>(b) >= n) return "bifurcation index out of range";
    if (child_count[b] < 2) return "bifurcation point with fewer than two children";
  }
  return {};
}

namespace detail {

inline Eigen::Vector3d random_unit(Rng& rng) {
  while (true) {
    const Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

inline Eigen::Vector3d perpendicular_unit(const Eigen::Vector3d& d, Rng& rng) {
  const Eigen::Vector3d r = random_unit(rng);
  const Eigen::Vector3d p = r - r.dot(d) * d;
  const double n = p.norm();
  if (n < 1e-6) return d.unitOrthogonal();
  return p / n;
}

struct GrowthParams {
  double length_mm;
  double step_mm;
  double root_radius_mm;
  double turn_sigma_deg;     // per-step random bend
  double taper_end_fraction; // radius at the far end relative to the start
};

// Grows one space curve from a start point. Appends points to the tree and
// returns the index range [first, last].
inline std::pair<int, int> grow_curve(VesselTree& tree, int parent, Eigen::Vector3d pos,
                                      Eigen::Vector3d dir, double start_radius,
                                      const GrowthParams& gp, Rng& rng,
                                      double containment_radius_mm) {
  const int steps = std::max(4, static_cast<int>(std::lround(gp.length_mm / gp.step_mm)));
  const double taper = std::pow(gp.taper_end_fraction, 1.0 / steps);
  double radius = start_radius;
  const int first = static_cast<int>(tree.points.size());
  for (int i = 0; i < steps; ++i) {
    // random bend about a perpendicular axisplus a pull back toward the
    // isocenter when the curve drifts out of the containment sphere
    const double bend = rng.normal(0.0, gp.turn_sigma_deg * geometry::kDegToRad);
    const Eigen::Vector3d axis = perpendicular_unit(dir, rng);
    dir = Eigen::AngleAxisd(bend, axis) * dir;
    const double r_pos = pos.norm();
    if (r_pos > 0.7 * containment_radius_mm) {
      const double pull = 0.12 * (r_pos - 0.7 * containment_radius_mm) / containment_radius_mm;
      dir = (dir - pull * pos / r_pos).normalized();
    }
    pos += gp.step_mm * dir;
    radius = std::max(0.35, radius * taper);
    radius = std::min(radius, tree.radii[parent]);  // never grows toward the tip
    tree.points.push_back(pos);
    tree.radii.push_back(radius);
    tree.parent_index.push_back(parent);
    parent = static_cast<int>(tree.points.size()) - 1;
  }
  return {first, static_cast<int>(tree.points.size()) - 1};
}

}  // namespace detail

// Procedural coronary-like centerline tree: a curved trunk with side branches
// at sampled arclengths. LAD/LCX carry 4-7 bifurcations, RCA 2-4.
// Deterministic per (class, seed).
inline VesselTree generate_tree(VesselClass vessel_class, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(vessel_class) + 101));
  VesselTree tree;
  tree.vessel_class = vessel_class;

  const double containment = 42.0;  // keep points projectable in a 512 px frame
  detail::GrowthParams trunk;
  trunk.step_mm = rng.uniform(0.45, 0.6);
  int n_branches = 0;
  switch (vessel_class) {
    case VesselClass::LAD:
      trunk.length_mm = rng.uniform(95.0, 135.0);
      trunk.root_radius_mm = rng.uniform(1.6, 2.0);
      trunk.turn_sigma_deg = rng.uniform(2.5, 4.0);
      n_branches = rng.uniform_int(4, 7);
      break;
    case VesselClass::LCX:
      trunk.length_mm = rng.uniform(80.0, 115.0);
      trunk.root_radius_mm = rng.uniform(1.5, 1.9);
      trunk.turn_sigma_deg = rng.uniform(3.0, 4.5);
      n_branches = rng.uniform_int(4, 7);
      break;
    case VesselClass::RCA:
      trunk.length_mm = rng.uniform(100.0, 140.0);
      trunk.root_radius_mm = rng.uniform(1.7, 2.1);
      trunk.turn_sigma_deg = rng.uniform(3.5, 5.0);
      n_branches = rng.uniform_int(2, 4);
      break;
  }
  trunk.taper_end_fraction = rng.uniform(0.4, 0.5);

  // start near the containment boundary heading inward-tangential
  const Eigen::Vector3d u = detail::random_unit(rng);
  const Eigen::Vector3d tangent = detail::perpendicular_unit(u, rng);
  Eigen::Vector3d pos = 26.0 * u;
  Eigen::Vector3d dir = (-0.8 * u + 0.9 * tangent).normalized();

  tree.points.push_back(pos);
  tree.radii.push_back(trunk.root_radius_mm);
  tree.parent_index.push_back(-1);
  const auto [trunk_first, trunk_last] =
      detail::grow_curve(tree, 0, pos, dir, trunk.root_radius_mm, trunk, rng, containment);
  const int trunk_len = trunk_last - trunk_first + 1;

  // branch attachment points: sorted arclength fractions with a minimum
  // separation, interior of the trunk only
  std::vector<int> attach;
  const int min_gap = 8;
  for (int tries = 0; tries < 200 && static_cast<int>(attach.size()) < n_branches; ++tries) {
    const int idx = trunk_first +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(
                        std::max(1, trunk_len - 2 * min_gap)))) +
                    min_gap;
    bool clash = false;
    for (int a : attach)
      if (std::abs(a - idx) < min_gap) clash = true;
    if (!clash && idx < trunk_last - 2) attach.push_back(idx);
  }
  std::sort(attach.begin(), attach.end());

  for (int a : attach) {
    const Eigen::Vector3d at = tree.points[a];
    const Eigen::Vector3d trunk_dir = (tree.points[a + 1] - tree.points[a - 1]).normalized();
    const double polar = rng.uniform(35.0, 65.0) * geometry::kDegToRad;
    const Eigen::Vector3d perp = detail::perpendicular_unit(trunk_dir, rng);
    const Eigen::Vector3d bdir =
        (std::cos(polar) * trunk_dir + std::sin(polar) * perp).normalized();

    detail::GrowthParams bp;
    bp.length_mm = rng.uniform(18.0, 45.0);
    bp.step_mm = trunk.step_mm;
    bp.turn_sigma_deg = trunk.turn_sigma_deg * rng.uniform(1.0, 1.4);
    bp.taper_end_fraction = rng.uniform(0.45, 0.6);
    bp.root_radius_mm = 0.0;  // unused for branches
    const double branch_radius = tree.radii[a] * rng.uniform(0.55, 0.8);
    detail::grow_curve(tree, a, at, bdir, branch_radius, bp, rng, containment);
    tree.bifurcation_indices.push_back(a);
  }

  // recenter on the isocenter
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : tree.points) centroid += p;
  centroid /= static_cast<double>(tree.points.size());
  for (auto& p : tree.points) p -= centroid;
  return tree;
}

// ---------------------------------------------------------------------------
// View-angle protocol: per-class base angles expanded by a 5-degree grid.

struct AngleBlock {
  CArmAngulation base;
  std::vector<std::pair<double, double>> offsets;  // (d_lao, d_cra), degrees
};

using AngleTable = std::vector<AngleBlock>;

struct AngleTables {
  AngleTable lad, lcx, rca;
};

namespace detail {

inline std::vector<std::pair<double, double>> grid9() {
  std::vector<std::pair<double, double>> v;
  for (double a : {-5.0, 0.0, 5.0})
    for (double c : {-5.0, 0.0, 5.0}) v.emplace_back(a, c);
  return v;
}
inline std::vector<std::pair<double, double>> grid6() {
  std::vector<std::pair<double, double>> v;
  for (double a : {-5.0, 0.0, 5.0})
    for (double c : {-5.0, 0.0}) v.emplace_back(a, c);
  return v;
}
inline std::vector<std::pair<double, double>> grid4() {
  return {{0, 0}, {0, 5}, {5, 0}, {5, 5}};
}
inline std::vector<std::pair<double, double>> cross5() {
  return {{0, 0}, {-5, 0}, {5, 0}, {0, -5}, {0, 5}};
}
inline std::vector<std::pair<double, double>> row3() {
  return {{-5, 0}, {0, 0}, {5, 0}};
}
inline std::vector<std::pair<double, double>> one1() { return {{0, 0}}; }

}  // namespace detail

// Default tables. Bases follow standard clinical working views; block layout
// and the 5-degree perturbation grids are sized so that the 25-degree pairing
// rule yields 242 LCA + 108 RCA = 350 pairs per subject.
inline const AngleTables& default_angle_tables() {
  static const AngleTables tables = [] {
    AngleTables t;
    // LAD: 9 + 9 + 1 = 19 views, three mutually distant blocks
    t.lad = {{{-30.0, 25.0}, detail::grid9()},
             {{45.0, 30.0}, detail::grid9()},
             {{0.0, -30.0}, detail::one1()}};
    // LCX: 9 + 4 + 6 + 5 = 24 views, two clusters (RAO-caudal, LAO-caudal)
    t.lcx = {{{-25.0, -25.0}, detail::grid9()},
             {{-28.0, -14.0}, detail::grid4()},
             {{45.0, -25.0}, detail::grid6()},
             {{47.0, -38.0}, detail::cross5()}};
    // RCA: 9 + 9 + 3 = 21 views, the 3-row clusters with the RAO block
    t.rca = {{{45.0, 0.0}, detail::grid9()},
             {{-30.0, 0.0}, detail::grid9()},
             {{-28.0, 12.0}, detail::row3()}};
    return t;
  }();
  return tables;
}

inline const AngleTable& table_for(VesselClass c, const AngleTables& tables) {
  switch (c) {
    case VesselClass::LAD: return tables.lad;
    case VesselClass::LCX: return tables.lcx;
    default: return tables.rca;
  }
}

inline std::vector<CArmAngulation> sample_view_angles(
    VesselClass c, const AngleTables& tables = default_angle_tables()) {
  std::vector<CArmAngulation> out;
  for (const AngleBlock& block : table_for(c, tables))
    for (const auto& [da, dc] : block.offsets)
      out.push_back({block.base.lao_rao + da, block.base.cra_cau + dc});
  return out;
}

// All unordered within-group view pairs whose extrinsic rotations are at
// least min_separation_deg apart.
inline std::vector<std::pair<int, int>> make_pairs(const std::vector<CArmAngulation>& views,
                                                   double min_separation_deg = 25.0) {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < views.size(); ++i)
    for (std::size_t j = i + 1; j < views.size(); ++j)
      if (geometry::view_separation_deg(views[i], views[j]) >= min_separation_deg)
        pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return pairs;
}

// ---------------------------------------------------------------------------
// Projection of a tree into views with exact ground-truth correspondences.

struct ProjectionSettings {
  double sid = 1200.0;
  double sod = 800.0;
  double pixel_spacing = 0.3;
  int width = 512;
  int height = 512;
};

struct ViewProjection {
  CameraModel cam;
  std::vector<Eigen::Vector2d> keypoints;  // projected centerline points, visible only
  std::vector<int> point_ids;              // tree point index per keypoint
  std::vector<bool> visible;               // per tree point
  GrayImage mask;                          // vessel silhouette
  FloatImage radii_px;                     // projected radius at vessel pixels
};

// A point is visible iff it lands inside the raster. Vessel self-overlap does
// not remove keypoints; overlapped centerline points stay in play.
inline ViewProjection project_view(const VesselTree& tree, const CameraModel& cam) {
  ViewProjection v;
  v.cam = cam;
  v.mask = GrayImage(cam.width, cam.height, 0);
  v.radii_px = FloatImage(cam.width, cam.height, 0.0);
  const std::size_t n = tree.points.size();
  v.visible.assign(n, false);

  std::vector<Eigen::Vector2d> px(n);
  std::vector<double> rpx(n);
  const double f = cam.focal_px();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pc = cam.rotation * tree.points[i] + cam.translation;
    if (!(pc.z() > 0.0)) throw NonPositiveDepth("tree point at or behind the X-ray source");
    px[i] = Eigen::Vector2d(f * pc.x() / pc.z() + cam.principal_point.x(),
                            f * pc.y() / pc.z() + cam.principal_point.y());
    rpx[i] = std::max(1.0, tree.radii[i] * f / pc.z());
    v.visible[i] = px[i].x() >= 0.0 && px[i].x() <= cam.width - 1.0 && px[i].y() >= 0.0 &&
                   px[i].y() <= cam.height - 1.0;
    if (v.visible[i]) {
      v.keypoints.push_back(px[i]);
      v.point_ids.push_back(static_cast<int>(i));
    }
  }

  // rasterize: capsule stamps between each point and its parent
  for (std::size_t i = 0; i < n; ++i) {
    const int p = tree.parent_index[i];
    if (p < 0) {
      fill_disk(v.mask, px[i].x(), px[i].y(), rpx[i], 255);
      fill_disk_max(v.radii_px, px[i].x(), px[i].y(), rpx[i], rpx[i]);
      continue;
    }
    const double seg = (px[i] - px[p]).norm();
    const int steps = std::max(1, static_cast<int>(std::ceil(seg)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const Eigen::Vector2d c = (1.0 - t) * px[p] + t * px[i];
      const double r = (1.0 - t) * rpx[p] + t * rpx[i];
      fill_disk(v.mask, c.x(), c.y(), r, 255);
      fill_disk_max(v.radii_px, c.x(), c.y(), r, r);
    }
  }
  return v;
}

struct ViewPair {
  GrayImage imageA, imageB;  // mask rasters (the rendered X-ray is produced downstream)
  CameraModel camA, camB;
  std::vector<Eigen::Vector2d> keypointsA, keypointsB;
  std::vector<int> point_idsA, point_idsB;
  std::vector<bool> visibleA, visibleB;
  std::vector<std::pair<int, int>> gt_matches;  // indices into the keypoint lists
};

// Ground-truth correspondences between two projected views: keypoints whose
// 3D source point is visible in both.
inline std::vector<std::pair<int, int>> pair_ground_truth(const ViewProjection& a,
                                                          const ViewProjection& b) {
  std::vector<int> id_to_b(b.visible.size(), -1);
  for (std::size_t k = 0; k < b.point_ids.size(); ++k) id_to_b[b.point_ids[k]] = static_cast<int>(k);
  std::vector<std::pair<int, int>> gt;
  for (std::size_t k = 0; k < a.point_ids.size(); ++k) {
    const int j = id_to_b[a.point_ids[k]];
    if (j >= 0) gt.emplace_back(static_cast<int>(k), j);
  }
  return gt;
}

inline ViewPair project_pair(const VesselTree& tree, const CameraModel& cam_a,
                             const CameraModel& cam_b) {
  ViewProjection a = project_view(tree, cam_a);
  ViewProjection b = project_view(tree, cam_b);
  ViewPair vp;
  vp.camA = cam_a;
  vp.camB = cam_b;
  vp.gt_matches = pair_ground_truth(a, b);
  vp.imageA = std::move(a.mask);
  vp.imageB = std::move(b.mask);
  vp.keypointsA = std::move(a.keypoints);
  vp.keypointsB = std::move(b.keypoints);
  vp.point_idsA = std::move(a.point_ids);
  vp.point_idsB = std::move(b.point_ids);
  vp.visibleA = std::move(a.visible);
  vp.visibleB = std::move(b.visible);
  return vp;
}

}  // namespace angiomatch::vesselgen
