#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "angiomatch/descriptors.hpp"
#include "angiomatch/errors.hpp"
#include "angiomatch/geometry.hpp"
#include "angiomatch/image.hpp"
#include "angiomatch/matcher.hpp"
#include "angiomatch/ransac.hpp"

namespace angiomatch::eval {

using matcher::Match;

// Area under the cumulative error curve up to the threshold, normalized by
// the threshold (the SuperGlue convention): mean_i max(0, t - e_i) / t.
inline double match_auc(const std::vector<double>& errors_px, double threshold_px) {
  if (errors_px.empty()) throw EmptyInput("match AUC of an empty error list");
  if (!(threshold_px > 0.0)) throw ConfigError("AUC threshold must be positive");
  double area = 0.0;
  for (double e : errors_px) area += std::max(0.0, threshold_px - e);
  return area / (threshold_px * static_cast<double>(errors_px.size()));
}

// Same cumulative-curve construction over rotation errors in degrees. Failed
// estimations enter as 180 degrees so methods share a denominator.
inline double pose_auc(const std::vector<double>& errors_deg, double threshold_deg) {
  if (errors_deg.empty()) throw EmptyInput("pose AUC of an empty error list");
  if (!(threshold_deg > 0.0)) throw ConfigError("AUC threshold must be positive");
  double area = 0.0;
  for (double e : errors_deg) area += std::max(0.0, threshold_deg - e);
  return area / (threshold_deg * static_cast<double>(errors_deg.size()));
}

// Pooled mean and population standard deviation of epipolar distances.
inline std::pair<double, double> epipolar_stats(const std::vector<double>& distances_px) {
  if (distances_px.empty()) throw NoMatches("epipolar statistics of an empty match set");
  double mean = 0.0;
  for (double d : distances_px) mean += d;
  mean /= static_cast<double>(distances_px.size());
  double var = 0.0;
  for (double d : distances_px) var += (d - mean) * (d - mean);
  var /= static_cast<double>(distances_px.size());
  return {mean, std::sqrt(var)};
}

// Mutual nearest neighbors under cosine similarity. Rows with zero norm never
// match.
inline std::vector<Match> mnn_baseline(const Eigen::MatrixXd& desc_a,
                                       const Eigen::MatrixXd& desc_b) {
  if (desc_a.rows() == 0 || desc_b.rows() == 0)
    throw EmptyInput("MNN matching of an empty descriptor set");
  Eigen::MatrixXd a = desc_a, b = desc_b;
  nn::normalize_rows(a);
  nn::normalize_rows(b);
  const Eigen::MatrixXd sim = a * b.transpose();
  const long m = sim.rows(), n = sim.cols();
  std::vector<int> best_b(m), best_a(n);
  for (long i = 0; i < m; ++i) {
    int arg = 0;
    for (long j = 1; j < n; ++j)
      if (sim(i, j) > sim(i, arg)) arg = static_cast<int>(j);
    best_b[i] = arg;
  }
  for (long j = 0; j < n; ++j) {
    int arg = 0;
    for (long i = 1; i < m; ++i)
      if (sim(i, j) > sim(arg, j)) arg = static_cast<int>(i);
    best_a[j] = arg;
  }
  std::vector<Match> out;
  for (long i = 0; i < m; ++i) {
    const int j = best_b[i];
    if (best_a[j] == static_cast<int>(i) && a.row(i).norm() > 0.0 && b.row(j).norm() > 0.0)
      out.push_back({static_cast<int>(i), j, sim(i, j)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA false-color visualization of a feature map.

struct PcaProjection {
  Eigen::MatrixXd projected;  // (h*w) x 3, PC scores before rescaling
  Eigen::MatrixXd basis;      // channels x 3
};

inline PcaProjection pca_project(const descriptors::FeatureMap& fmap) {
  if (fmap.channels < 3) throw ConfigError("PCA visualization needs at least 3 channels");
  const long cells = static_cast<long>(fmap.height) * fmap.width;
  Eigen::MatrixXd x(cells, fmap.channels);
  for (int y = 0; y < fmap.height; ++y)
    for (int xx = 0; xx < fmap.width; ++xx)
      for (int c = 0; c < fmap.channels; ++c)
        x(static_cast<long>(y) * fmap.width + xx, c) = fmap.at(c, y, xx);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(std::max<long>(1, cells - 1));
  if (cov.trace() < 1e-12) throw DegenerateCovariance("feature variance is zero");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  PcaProjection out;
  out.basis.resize(fmap.channels, 3);
  for (int k = 0; k < 3; ++k) out.basis.col(k) = eig.eigenvectors().col(fmap.channels - 1 - k);
  out.projected = x * out.basis;
  return out;
}

inline RgbImage pca_rgb(const descriptors::FeatureMap& fmap) {
  const PcaProjection pca = pca_project(fmap);
  RgbImage im(fmap.width, fmap.height);
  double lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = pca.projected.col(k).minCoeff();
    hi[k] = pca.projected.col(k).maxCoeff();
    if (hi[k] - lo[k] < 1e-15) hi[k] = lo[k] + 1.0;
  }
  for (int y = 0; y < fmap.height; ++y)
    for (int x = 0; x < fmap.width; ++x) {
      const long r = static_cast<long>(y) * fmap.width + x;
      std::uint8_t rgb[3];
      for (int k = 0; k < 3; ++k)
        rgb[k] = static_cast<std::uint8_t>(
            std::clamp(255.0 * (pca.projected(r, k) - lo[k]) / (hi[k] - lo[k]), 0.0, 255.0) + 0.5);
      im.set(x, y, rgb[0], rgb[1], rgb[2]);
    }
  return im;
}

// ---------------------------------------------------------------------------
// Benchmark harness

struct EvalPair {
  std::string id;
  descriptors::DescriptorSet a, b;
  std::vector<int> partner_a;  // per a-keypoint: index of the true partner, -1 if none
  geometry::CameraModel cam_a, cam_b;
};

struct PairRecord {
  std::string id;
  int num_matches = 0;
  double rotation_error_deg = 180.0;
  bool pose_ok = false;
};

struct MetricsReport {
  std::string method;
  double match_auc_1px = 0.0;
  double match_auc_3px = 0.0;
  double pose_auc_15 = 0.0;
  double pose_auc_30 = 0.0;
  double epipolar_mean = 0.0;
  double epipolar_std = 0.0;
  int num_pairs = 0;
  int num_failed_poses = 0;
  long num_matches = 0;
  std::vector<PairRecord> per_pair;
};

struct RansacSettings {
  double threshold_px = 1.0;
  int max_iters = 2000;
};

using MethodFn = std::function<std::vector<Match>(const EvalPair&)>;

// Runs one method over all pairs: pooled match-error AUCs, RANSAC pose AUCs
// (failures scored at 180 degrees) and pooled epipolar statistics against the
// ground-truth cameras' fundamental matrix. Deterministic given the seed.
inline MetricsReport run_benchmark_method(const std::vector<EvalPair>& pairs,
                                          const std::string& name, const MethodFn& method,
                                          const RansacSettings& ransac, std::uint64_t seed) {
  MetricsReport report;
  report.method = name;
  report.num_pairs = static_cast<int>(pairs.size());
  std::vector<double> match_errors, pose_errors, epi_distances;

  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const EvalPair& pair = pairs[pi];
    const std::vector<Match> matches = method(pair);
    PairRecord record;
    record.id = pair.id;
    record.num_matches = static_cast<int>(matches.size());
    report.num_matches += static_cast<long>(matches.size());

    for (const Match& match : matches) {
      const int truth = pair.partner_a[match.a];
      match_errors.push_back(
          truth < 0 ? std::numeric_limits<double>::infinity()
                    : (pair.b.keypoints[match.b] - pair.b.keypoints[truth]).norm());
    }

    const Eigen::Matrix3d f_true =
        geometry::fundamental_from_cameras(pair.cam_a, pair.cam_b);
    for (const Match& match : matches)
      epi_distances.push_back(geometry::epipolar_distance(
          f_true, pair.a.keypoints[match.a], pair.b.keypoints[match.b]));

    double rot_err = 180.0;
    if (matches.size() >= 8) {
      std::vector<Eigen::Vector2d> pa, pb;
      pa.reserve(matches.size());
      pb.reserve(matches.size());
      for (const Match& match : matches) {
        pa.push_back(pair.a.keypoints[match.a]);
        pb.push_back(pair.b.keypoints[match.b]);
      }
      try {
        const geometry::EssentialEstimate est = geometry::estimate_pose_ransac(
            pa, pb, pair.cam_a.intrinsic_matrix(), pair.cam_b.intrinsic_matrix(),
            ransac.threshold_px, ransac.max_iters, derive_seed(seed, pi));
        const Eigen::Matrix3d r_true =
            pair.cam_b.rotation * pair.cam_a.rotation.transpose();
        rot_err = geometry::rotation_error(est.rotation, r_true);
        record.pose_ok = true;
      } catch (const NumericError&) {
        record.pose_ok = false;
      }
    }
    if (!record.pose_ok) ++report.num_failed_poses;
    record.rotation_error_deg = rot_err;
    pose_errors.push_back(rot_err);
    report.per_pair.push_back(std::move(record));
  }

  report.match_auc_1px = match_errors.empty() ? 0.0 : match_auc(match_errors, 1.0);
  report.match_auc_3px = match_errors.empty() ? 0.0 : match_auc(match_errors, 3.0);
  report.pose_auc_15 = pose_errors.empty() ? 0.0 : pose_auc(pose_errors, 15.0);
  report.pose_auc_30 = pose_errors.empty() ? 0.0 : pose_auc(pose_errors, 30.0);
  if (!epi_distances.empty()) {
    const auto [mean, sd] = epipolar_stats(epi_distances);
    report.epipolar_mean = mean;
    report.epipolar_std = sd;
  }
  return report;
}

inline std::vector<MetricsReport> run_benchmark(
    const std::vector<EvalPair>& pairs,
    const std::vector<std::pair<std::string, MethodFn>>& methods, const RansacSettings& ransac,
    std::uint64_t seed) {
  std::vector<MetricsReport> reports;
  for (const auto& [name, fn] : methods)
    reports.push_back(run_benchmark_method(pairs, name, fn, ransac, seed));
  return reports;
}

// ---------------------------------------------------------------------------
// Report writers

inline void write_report_csv(const std::string& path, const std::vector<MetricsReport>& reports) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  // epipolar std is the population standard deviation
  f << "method,pose_auc_15,pose_auc_30,match_auc_1px,match_auc_3px,"
       "epipolar_mean,epipolar_std,num_pairs,num_failed_poses,num_matches\n";
  for (const auto& r : reports) {
    char line[512];
    std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%ld\n",
                  r.method.c_str(), r.pose_auc_15, r.pose_auc_30, r.match_auc_1px,
                  r.match_auc_3px, r.epipolar_mean, r.epipolar_std, r.num_pairs,
                  r.num_failed_poses, r.num_matches);
    f << line;
  }
}

inline std::string format_report_table(const std::vector<MetricsReport>& reports) {
  char line[512];
  std::string out;
  std::snprintf(line, sizeof(line), "%-22s %9s %9s %9s %9s %12s %8s %8s\n", "method",
                "pose@15", "pose@30", "match@1px", "match@3px", "epi(mean+-sd)", "pairs",
                "matches");
  out += line;
  out += std::string(94, '-') + "\n";
  for (const auto& r : reports) {
    char epi[64];
    std::snprintf(epi, sizeof(epi), "%.2f+-%.2f", r.epipolar_mean, r.epipolar_std);
    std::snprintf(line, sizeof(line), "%-22s %9.4f %9.4f %9.4f %9.4f %12s %8d %8ld\n",
                  r.method.c_str(), r.pose_auc_15, r.pose_auc_30, r.match_auc_1px,
                  r.match_auc_3px, epi, r.num_pairs, r.num_matches);
    out += line;
  }
  return out;
}

// Side-by-side overlay: keypoints as green dots, correspondences as green
// lines, per-pair mean epipolar error printed below.
inline RgbImage draw_match_overlay(const GrayImage& image_a, const GrayImage& image_b,
                                   const std::vector<Eigen::Vector2d>& kp_a,
                                   const std::vector<Eigen::Vector2d>& kp_b,
                                   const std::vector<Match>& matches, double epi_mean_px) {
  const int gap = 8, footer = 24;
  RgbImage canvas(image_a.width + image_b.width + gap,
                  std::max(image_a.height, image_b.height) + footer);
  for (int y = 0; y < canvas.height; ++y)
    for (int x = 0; x < canvas.width; ++x) canvas.set(x, y, 16, 16, 16);
  for (int y = 0; y < image_a.height; ++y)
    for (int x = 0; x < image_a.width; ++x) {
      const std::uint8_t v = image_a.at(x, y);
      canvas.set(x, y, v, v, v);
    }
  const int off = image_a.width + gap;
  for (int y = 0; y < image_b.height; ++y)
    for (int x = 0; x < image_b.width; ++x) {
      const std::uint8_t v = image_b.at(x, y);
      canvas.set(off + x, y, v, v, v);
    }
  for (const Match& match : matches) {
    const Eigen::Vector2d& a = kp_a[match.a];
    const Eigen::Vector2d& b = kp_b[match.b];
    draw_line(canvas, a.x(), a.y(), off + b.x(), b.y(), 40, 200, 40);
  }
  for (const Match& match : matches) {
    const Eigen::Vector2d& a = kp_a[match.a];
    const Eigen::Vector2d& b = kp_b[match.b];
    draw_dot(canvas, a.x(), a.y(), 2, 30, 255, 30);
    draw_dot(canvas, off + b.x(), b.y(), 2, 30, 255, 30);
  }
  char text[64];
  std::snprintf(text, sizeof(text), "%.2f px", epi_mean_px);
  draw_text(canvas, 6, canvas.height - footer + 4, text, 240, 240, 80);
  return canvas;
}

}  // namespace angiomatch::eval
