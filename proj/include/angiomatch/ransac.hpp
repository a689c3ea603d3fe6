#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "angiomatch/errors.hpp"
#include "angiomatch/geometry.hpp"
#include "angiomatch/rng.hpp"

namespace angiomatch::geometry {

struct EssentialEstimate {
  Eigen::Matrix3d essential = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // X_B = R * X_A + t
  Eigen::Vector3d translation_dir = Eigen::Vector3d::Zero();
  std::vector<bool> inlier_mask;
  int num_iterations = 0;
};

namespace detail {

// Hartley conditioning: translate to the centroid, scale mean distance to
// sqrt(2).
inline Eigen::Matrix3d conditioning_transform(const std::vector<Eigen::Vector2d>& pts,
                                              const std::vector<int>& idx) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (int i : idx) centroid += pts[i];
  centroid /= static_cast<double>(idx.size());
  double mean_dist = 0.0;
  for (int i : idx) mean_dist += (pts[i] - centroid).norm();
  mean_dist /= static_cast<double>(idx.size());
  const double s = (mean_dist > 1e-12) ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  return t;
}

// Normalized 8-point solve of x_b^T F x_a = 0 over the selected rows. The
// rank-2 constraint is enforced in the conditioned frame (HZ Alg. 11.1);
// enforcing it after de-conditioning wrecks the fit at long focal lengths.
inline Eigen::Matrix3d solve_rank2(const std::vector<Eigen::Vector2d>& xa,
                                   const std::vector<Eigen::Vector2d>& xb,
                                   const std::vector<int>& idx) {
  const Eigen::Matrix3d ta = conditioning_transform(xa, idx);
  const Eigen::Matrix3d tb = conditioning_transform(xb, idx);
  Eigen::MatrixXd a(static_cast<long>(idx.size()), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const int i = idx[r];
    const Eigen::Vector3d pa = ta * Eigen::Vector3d(xa[i].x(), xa[i].y(), 1.0);
    const Eigen::Vector3d pb = tb * Eigen::Vector3d(xb[i].x(), xb[i].y(), 1.0);
    a.row(static_cast<long>(r)) << pb.x() * pa.x(), pb.x() * pa.y(), pb.x() * pa.z(),
        pb.y() * pa.x(), pb.y() * pa.y(), pb.y() * pa.z(),
        pb.z() * pa.x(), pb.z() * pa.y(), pb.z() * pa.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd f_vec = svd.matrixV().col(8);
  Eigen::Matrix3d f;
  f << f_vec(0), f_vec(1), f_vec(2), f_vec(3), f_vec(4), f_vec(5), f_vec(6), f_vec(7), f_vec(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = fsvd.singularValues();
  f = fsvd.matrixU() * Eigen::Vector3d(s(0), s(1), 0.0).asDiagonal() * fsvd.matrixV().transpose();
  f = tb.transpose() * f * ta;
  return f / f.norm();
}

// Closest essential matrix in Frobenius norm: singular values (m, m, 0).
inline Eigen::Matrix3d closest_essential(const Eigen::Matrix3d& f) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  const double m = 0.5 * (s(0) + s(1));
  Eigen::Matrix3d e =
      svd.matrixU() * Eigen::Vector3d(m, m, 0.0).asDiagonal() * svd.matrixV().transpose();
  return e / e.norm();
}

// Linear (DLT) triangulation in normalized camera coordinates with
// P_A = [I | 0], P_B = [R | t].
inline Eigen::Vector3d triangulate(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                                   const Eigen::Vector2d& xa, const Eigen::Vector2d& xb) {
  Eigen::Matrix<double, 3, 4> pa = Eigen::Matrix<double, 3, 4>::Zero();
  pa.leftCols<3>() = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> pb;
  pb.leftCols<3>() = r;
  pb.col(3) = t;
  Eigen::Matrix4d a;
  a.row(0) = xa.x() * pa.row(2) - pa.row(0);
  a.row(1) = xa.y() * pa.row(2) - pa.row(1);
  a.row(2) = xb.x() * pb.row(2) - pb.row(0);
  a.row(3) = xb.y() * pb.row(2) - pb.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) < 1e-15) return Eigen::Vector3d(0, 0, -1);  // point at infinity
  return x.head<3>() / x(3);
}

struct PoseCandidate {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
  int positive_depth = 0;
  double residual = 0.0;
};

// Decompose E into the four (R, t) candidates and pick the one with the
// majority of positive triangulated depths over the inliers; ties fall back
// to the smallest mean reprojection residual in normalized coordinates.
inline PoseCandidate recover_pose(const Eigen::Matrix3d& e,
                                  const std::vector<Eigen::Vector2d>& xa,
                                  const std::vector<Eigen::Vector2d>& xb,
                                  const std::vector<int>& inliers) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u.col(2) *= -1.0;
  if (v.determinant() < 0) v.col(2) *= -1.0;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2);

  std::vector<PoseCandidate> candidates;
  for (const Eigen::Matrix3d& r : {r1, r2})
    for (const double sign : {1.0, -1.0}) {
      PoseCandidate c;
      c.rotation = r;
      c.translation = sign * t;
      for (int i : inliers) {
        const Eigen::Vector3d p = triangulate(c.rotation, c.translation, xa[i], xb[i]);
        const Eigen::Vector3d pb = c.rotation * p + c.translation;
        if (p.z() > 0.0 && pb.z() > 0.0) {
          ++c.positive_depth;
          c.residual += (Eigen::Vector2d(p.x() / p.z(), p.y() / p.z()) - xa[i]).squaredNorm() +
                        (Eigen::Vector2d(pb.x() / pb.z(), pb.y() / pb.z()) - xb[i]).squaredNorm();
        }
      }
      c.residual = (c.positive_depth > 0) ? c.residual / c.positive_depth
                                          : std::numeric_limits<double>::max();
      candidates.push_back(c);
    }
  return *std::max_element(candidates.begin(), candidates.end(),
                           [](const PoseCandidate& a, const PoseCandidate& b) {
                             if (a.positive_depth != b.positive_depth)
                               return a.positive_depth < b.positive_depth;
                             return a.residual > b.residual;
                           });
}

// Sampson epipolar residual of one correspondence in normalized coordinates.
inline double sampson_residual(const Eigen::Matrix3d& e, const Eigen::Vector2d& xa,
                               const Eigen::Vector2d& xb) {
  const Eigen::Vector3d pa(xa.x(), xa.y(), 1.0), pb(xb.x(), xb.y(), 1.0);
  const Eigen::Vector3d fx = e * pa;
  const Eigen::Vector3d ftx = e.transpose() * pb;
  const double num = pb.dot(fx);
  const double den =
      std::sqrt(fx(0) * fx(0) + fx(1) * fx(1) + ftx(0) * ftx(0) + ftx(1) * ftx(1));
  return (den > 0.0) ? num / den : 0.0;
}

// Deterministic Levenberg-Marquardt polish of (R, t) on the consensus set,
// minimizing Huber-weighted Sampson error (IRLS weights, cutoff delta).
// Steps are only accepted when the cost drops.
inline void refine_pose(Eigen::Matrix3d& rotation, Eigen::Vector3d& translation,
                        const std::vector<Eigen::Vector2d>& xa,
                        const std::vector<Eigen::Vector2d>& xb,
                        const std::vector<int>& inliers, double delta) {
  if (inliers.size() < 6) return;
  translation.normalize();
  auto total_cost = [&](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    const Eigen::Matrix3d e = cross_matrix(t) * r;
    double c = 0.0;
    for (int i : inliers) {
      const double s = std::abs(sampson_residual(e, xa[i], xb[i]));
      c += (s <= delta) ? 0.5 * s * s : delta * (s - 0.5 * delta);
    }
    return c;
  };

  double lambda = 1e-3;
  double cost = total_cost(rotation, translation);
  const long n = static_cast<long>(inliers.size());
  Eigen::MatrixXd j(n, 5);
  Eigen::VectorXd r(n), weight(n);
  for (int it = 0; it < 100; ++it) {
    const Eigen::Vector3d b1 = translation.unitOrthogonal();
    const Eigen::Vector3d b2 = translation.cross(b1);
    const Eigen::Matrix3d e = cross_matrix(translation) * rotation;
    const double h = 1e-6;
    for (long k = 0; k < n; ++k) {
      r(k) = sampson_residual(e, xa[inliers[k]], xb[inliers[k]]);
      const double a = std::abs(r(k));
      weight(k) = (a <= delta) ? 1.0 : delta / a;
    }
    for (int p = 0; p < 5; ++p) {
      Eigen::Matrix3d rp = rotation;
      Eigen::Vector3d tp = translation;
      if (p < 3)
        rp = Eigen::AngleAxisd(h, Eigen::Vector3d::Unit(p)).toRotationMatrix() * rotation;
      else if (p == 3)
        tp = (translation + h * b1).normalized();
      else
        tp = (translation + h * b2).normalized();
      const Eigen::Matrix3d ep = cross_matrix(tp) * rp;
      for (long k = 0; k < n; ++k)
        j(k, p) = (sampson_residual(ep, xa[inliers[k]], xb[inliers[k]]) - r(k)) / h;
    }
    const Eigen::MatrixXd jtj = j.transpose() * weight.asDiagonal() * j;
    const Eigen::VectorXd g = j.transpose() * (weight.asDiagonal() * r);
    bool stepped = false;
    for (int tries = 0; tries < 8 && !stepped; ++tries) {
      const Eigen::VectorXd d =
          (jtj + lambda * Eigen::MatrixXd(jtj.diagonal().asDiagonal()) +
           1e-15 * Eigen::MatrixXd::Identity(5, 5))
              .ldlt()
              .solve(-g);
      const Eigen::Vector3d dw = d.head<3>();
      Eigen::Matrix3d rn = rotation;
      if (dw.norm() > 0.0)
        rn = Eigen::AngleAxisd(dw.norm(), dw.normalized()).toRotationMatrix() * rotation;
      const Eigen::Vector3d tn = (translation + d(3) * b1 + d(4) * b2).normalized();
      const double cn = total_cost(rn, tn);
      if (cn < cost) {
        rotation = rn;
        translation = tn;
        cost = cn;
        lambda = std::max(1e-9, lambda * 0.3);
        stepped = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) break;
  }
}

}  // namespace detail

// Robust two-view relative pose: normalized 8-point solver inside RANSAC with
// the symmetric epipolar distance (pixels) as the inlier criterion and a
// 99%-confidence early exit, followed by SVD pose recovery with a cheirality
// vote and a deterministic Sampson polish on the consensus set. Deterministic
// given the seed.
inline EssentialEstimate estimate_pose_ransac(const std::vector<Eigen::Vector2d>& pts_a,
                                              const std::vector<Eigen::Vector2d>& pts_b,
                                              const Eigen::Matrix3d& intrinsics_a,
                                              const Eigen::Matrix3d& intrinsics_b,
                                              double threshold_px, int max_iters,
                                              std::uint64_t seed) {
  const int n = static_cast<int>(pts_a.size());
  if (n != static_cast<int>(pts_b.size()))
    throw ConfigError("correspondence lists differ in length");
  if (n < 8) throw InsufficientMatches("RANSAC pose estimation needs at least 8 matches");

  const Eigen::Matrix3d ka_inv = intrinsics_a.inverse();
  const Eigen::Matrix3d kb_inv = intrinsics_b.inverse();
  std::vector<Eigen::Vector2d> xa(n), xb(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d a = ka_inv * Eigen::Vector3d(pts_a[i].x(), pts_a[i].y(), 1.0);
    const Eigen::Vector3d b = kb_inv * Eigen::Vector3d(pts_b[i].x(), pts_b[i].y(), 1.0);
    xa[i] = a.head<2>() / a.z();
    xb[i] = b.head<2>() / b.z();
  }

  auto pixel_fundamental = [&](const Eigen::Matrix3d& f_cam) {
    return Eigen::Matrix3d(kb_inv.transpose() * f_cam * ka_inv);
  };
  auto count_inliers = [&](const Eigen::Matrix3d& f_px, std::vector<bool>& mask) {
    int count = 0;
    for (int i = 0; i < n; ++i) {
      const bool in = epipolar_distance(f_px, pts_a[i], pts_b[i]) < threshold_px;
      mask[i] = in;
      if (in) ++count;
    }
    return count;
  };

  Rng rng(seed);
  std::vector<bool> mask(n, false), best_mask(n, false);
  int best_count = -1;
  int iters_needed = max_iters;
  int iter = 0;
  std::vector<int> sample(8);
  std::vector<int> pool(n);
  for (; iter < max_iters && iter < iters_needed; ++iter) {
    // partial Fisher-Yates draw of 8 distinct indices
    std::iota(pool.begin(), pool.end(), 0);
    for (int k = 0; k < 8; ++k) {
      const int j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - k)));
      std::swap(pool[k], pool[j]);
      sample[k] = pool[k];
    }
    const Eigen::Matrix3d f = detail::solve_rank2(xa, xb, sample);
    const int count = count_inliers(pixel_fundamental(f), mask);
    if (count > best_count) {
      best_count = count;
      best_mask = mask;
      const double w = static_cast<double>(count) / n;
      const double p_all = std::pow(w, 8);
      if (p_all >= 1.0 - 1e-12) {
        iters_needed = iter + 1;
      } else if (p_all > 1e-12) {
        const double need = std::log(0.01) / std::log(1.0 - p_all);
        iters_needed = static_cast<int>(std::min<double>(max_iters, std::ceil(need)));
      }
    }
  }

  if (best_count < 8) throw NoConsensus("RANSAC consensus below the 8-match minimum");

  // refit on the consensus set and refresh the inlier mask once
  std::vector<int> consensus;
  for (int i = 0; i < n; ++i)
    if (best_mask[i]) consensus.push_back(i);
  Eigen::Matrix3d f_final = detail::solve_rank2(xa, xb, consensus);
  std::vector<bool> final_mask(n, false);
  if (count_inliers(pixel_fundamental(f_final), final_mask) < 8) final_mask = best_mask;

  std::vector<int> inliers;
  for (int i = 0; i < n; ++i)
    if (final_mask[i]) inliers.push_back(i);

  const Eigen::Matrix3d e_init = detail::closest_essential(f_final);
  detail::PoseCandidate pose = detail::recover_pose(e_init, xa, xb, inliers);
  Eigen::Matrix3d rotation = pose.rotation;
  Eigen::Vector3d translation = pose.translation;

  // mean focal converts the pixel threshold into normalized coordinates
  const double focal = 0.25 * (intrinsics_a(0, 0) + intrinsics_a(1, 1) +
                               intrinsics_b(0, 0) + intrinsics_b(1, 1));
  const double huber_delta = 0.5 * threshold_px / focal;
  detail::refine_pose(rotation, translation, xa, xb, inliers, huber_delta);
  // one inlier refresh against the polished pose, then a final polish
  {
    const Eigen::Matrix3d e_mid = cross_matrix(translation.normalized()) * rotation;
    std::vector<bool> mid_mask(n, false);
    if (count_inliers(pixel_fundamental(e_mid), mid_mask) >= 8) {
      final_mask = mid_mask;
      inliers.clear();
      for (int i = 0; i < n; ++i)
        if (final_mask[i]) inliers.push_back(i);
      detail::refine_pose(rotation, translation, xa, xb, inliers, huber_delta);
    }
  }

  EssentialEstimate out;
  Eigen::Matrix3d e_refined = cross_matrix(translation.normalized()) * rotation;
  out.essential = e_refined / e_refined.norm();
  out.rotation = rotation;
  out.translation_dir = translation.normalized();
  out.inlier_mask = final_mask;
  out.num_iterations = iter;
  return out;
}

}  // namespace angiomatch::geometry
