#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "angiomatch/geometry.hpp"
#include "angiomatch/vesselgen.hpp"

using namespace angiomatch;
using namespace angiomatch::vesselgen;

namespace {

// independent elementary-rotation composition for the separation oracle
Eigen::Matrix3d hand_rotation(const CArmAngulation& ang) {
  const double a = ang.lao_rao * M_PI / 180.0, c = ang.cra_cau * M_PI / 180.0;
  Eigen::Matrix3d ry, rx;
  ry << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  rx << 1, 0, 0, 0, std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c);
  return rx * ry;
}

double hand_separation(const CArmAngulation& a, const CArmAngulation& b) {
  const double tr = (hand_rotation(a).transpose() * hand_rotation(b)).trace();
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0)) * 180.0 / M_PI;
}

int count_components_8conn(const GrayImage& mask) {
  std::vector<int> label(mask.pixels.size(), 0);
  int components = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y) || label[y * mask.width + x]) continue;
      ++components;
      stack.push_back({x, y});
      label[y * mask.width + x] = components;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
            if (mask.at(nx, ny) && !label[ny * mask.width + nx]) {
              label[ny * mask.width + nx] = components;
              stack.push_back({nx, ny});
            }
          }
      }
    }
  return components;
}

}  // namespace

TEST_CASE("tree generation is deterministic per class and seed") {
  for (auto cls : {VesselClass::LAD, VesselClass::RCA}) {
    const VesselTree a = generate_tree(cls, 42);
    const VesselTree b = generate_tree(cls, 42);
    REQUIRE(a.points.size() == b.points.size());
    CHECK(std::memcmp(a.points.data(), b.points.data(),
                      a.points.size() * sizeof(Eigen::Vector3d)) == 0);
    CHECK(a.radii == b.radii);
    CHECK(a.parent_index == b.parent_index);
    CHECK(a.bifurcation_indices == b.bifurcation_indices);
  }
  const VesselTree c = generate_tree(VesselClass::LAD, 43);
  const VesselTree d = generate_tree(VesselClass::LAD, 42);
  CHECK(c.points.size() != d.points.size());  // different seeds diverge (length is random)
}

TEST_CASE("generated trees satisfy the structural invariants") {
  for (auto cls : {VesselClass::LAD, VesselClass::LCX, VesselClass::RCA})
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const VesselTree t = generate_tree(cls, seed);
      INFO(to_string(cls) << " seed " << seed);
      CHECK(check_tree(t).empty());
    }
}

TEST_CASE("RCA trees branch less than LAD trees on average") {
  double lad = 0, rca = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    lad += static_cast<double>(generate_tree(VesselClass::LAD, seed).bifurcation_indices.size());
    rca += static_cast<double>(generate_tree(VesselClass::RCA, seed).bifurcation_indices.size());
  }
  CHECK(rca / 100.0 < lad / 100.0);
}

TEST_CASE("per-class view counts follow the acquisition protocol") {
  CHECK(sample_view_angles(VesselClass::LAD).size() == 19);
  CHECK(sample_view_angles(VesselClass::LCX).size() == 24);
  CHECK(sample_view_angles(VesselClass::RCA).size() == 21);
}

TEST_CASE("within-class view lists contain no duplicate angle pairs") {
  for (auto cls : {VesselClass::LAD, VesselClass::LCX, VesselClass::RCA}) {
    const auto views = sample_view_angles(cls);
    std::set<std::pair<double, double>> seen;
    for (const auto& v : views) seen.insert({v.lao_rao, v.cra_cau});
    CHECK(seen.size() == views.size());
  }
}

TEST_CASE("default tables give the per-subject pair counts") {
  const auto lad = make_pairs(sample_view_angles(VesselClass::LAD));
  const auto lcx = make_pairs(sample_view_angles(VesselClass::LCX));
  const auto rca = make_pairs(sample_view_angles(VesselClass::RCA));
  CHECK(lad.size() + lcx.size() == 242);  // LCA
  CHECK(rca.size() == 108);
  CHECK(lad.size() + lcx.size() + rca.size() == 350);
}

TEST_CASE("single view yields no pairs") {
  CHECK(make_pairs({{0.0, 0.0}}).empty());
}

TEST_CASE("every emitted pair is separated by at least 25 degrees") {
  for (auto cls : {VesselClass::LAD, VesselClass::LCX, VesselClass::RCA}) {
    const auto views = sample_view_angles(cls);
    for (const auto& [i, j] : make_pairs(views))
      CHECK(hand_separation(views[i], views[j]) >= 25.0);
  }
}

TEST_CASE("identical cameras give the identity ground-truth pairing") {
  const VesselTree tree = generate_tree(VesselClass::LAD, 7);
  const CameraModel cam = geometry::make_camera({-30, 25}, 1200, 800, 0.3, 512, 512);
  const ViewPair vp = project_pair(tree, cam, cam);
  REQUIRE(vp.keypointsA.size() == vp.keypointsB.size());
  REQUIRE(vp.gt_matches.size() == vp.keypointsA.size());
  for (const auto& [i, j] : vp.gt_matches) CHECK(i == j);
}

TEST_CASE("ground-truth pairs satisfy the epipolar constraint") {
  const VesselTree tree = generate_tree(VesselClass::LCX, 9);
  const CameraModel cam_a = geometry::make_camera({-25, -25}, 1200, 800, 0.3, 512, 512);
  const CameraModel cam_b = geometry::make_camera({45, -25}, 1200, 800, 0.3, 512, 512);
  const ViewPair vp = project_pair(tree, cam_a, cam_b);
  REQUIRE(!vp.gt_matches.empty());
  const Eigen::Matrix3d f = geometry::fundamental_from_cameras(cam_a, cam_b);
  for (const auto& [i, j] : vp.gt_matches)
    CHECK(geometry::epipolar_distance(f, vp.keypointsA[i], vp.keypointsB[j]) < 1e-6);
}

TEST_CASE("points outside the raster are excluded from keypoints and matches") {
  VesselTree tree;
  tree.vessel_class = VesselClass::LAD;
  tree.points = {{0, 0, 0}, {-200, 0, 0}, {0.0, 0.5, 0.0}};  // middle point projects far left
  tree.radii = {1.0, 1.0, 1.0};
  tree.parent_index = {-1, 0, 0};
  const CameraModel cam = geometry::make_camera({0, 0}, 1200, 800, 0.3, 512, 512);
  const ViewProjection v = project_view(tree, cam);
  CHECK_FALSE(v.visible[1]);
  CHECK(v.keypoints.size() == 2);
  for (int id : v.point_ids) CHECK(id != 1);
  const ViewPair vp = project_pair(tree, cam, cam);
  for (const auto& [i, j] : vp.gt_matches) {
    CHECK(vp.point_idsA[i] != 1);
    CHECK(vp.point_idsB[j] != 1);
  }
}

TEST_CASE("mask pixels form a single 8-connected component for in-frame trees") {
  for (std::uint64_t seed : {1ull, 5ull, 12ull}) {
    for (auto cls : {VesselClass::LAD, VesselClass::RCA}) {
      const VesselTree tree = generate_tree(cls, seed);
      const CameraModel cam = geometry::make_camera({-30, 25}, 1200, 800, 0.3, 512, 512);
      const ViewProjection v = project_view(tree, cam);
      bool all_visible = true;
      for (bool b : v.visible) all_visible = all_visible && b;
      if (!all_visible) continue;  // clipped trees may split legitimately
      CHECK(count_components_8conn(v.mask) == 1);
    }
  }
}

TEST_CASE("ground truth is a partial injection") {
  const VesselTree tree = generate_tree(VesselClass::RCA, 3);
  const CameraModel cam_a = geometry::make_camera({45, 0}, 1200, 800, 0.3, 512, 512);
  const CameraModel cam_b = geometry::make_camera({-30, 0}, 1200, 800, 0.3, 512, 512);
  const ViewPair vp = project_pair(tree, cam_a, cam_b);
  std::set<int> lhs, rhs;
  for (const auto& [i, j] : vp.gt_matches) {
    CHECK(lhs.insert(i).second);
    CHECK(rhs.insert(j).second);
  }
}

TEST_CASE("projection output is reproducible byte for byte") {
  const VesselTree tree = generate_tree(VesselClass::LAD, 21);
  const CameraModel cam_a = geometry::make_camera({-30, 25}, 1200, 800, 0.3, 512, 512);
  const CameraModel cam_b = geometry::make_camera({45, 30}, 1200, 800, 0.3, 512, 512);
  const ViewPair x = project_pair(tree, cam_a, cam_b);
  const ViewPair y = project_pair(tree, cam_a, cam_b);
  CHECK(x.imageA.pixels == y.imageA.pixels);
  CHECK(x.imageB.pixels == y.imageB.pixels);
  CHECK(x.gt_matches == y.gt_matches);
}
