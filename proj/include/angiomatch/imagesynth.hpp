#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "angiomatch/errors.hpp"
#include "angiomatch/image.hpp"
#include "angiomatch/rng.hpp"

namespace angiomatch::imagesynth {

using Field = Eigen::ArrayXXd;  // diffusion state; 1xN rows double as 1D signals

// ---------------------------------------------------------------------------
// Noise schedule. Step index t runs over [1, T]; alpha_bar(0) == 1.

enum class ScheduleKind { Cosine, Linear };

struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;      // alpha_t, index t-1
  std::vector<double> alpha_bar;  // running product, index t-1
  std::vector<double> beta;       // 1 - alpha_t

  double a(int t) const { return alpha[t - 1]; }
  double abar(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
  double b(int t) const { return beta[t - 1]; }

  // posterior variance ((1 - abar_{t-1}) / (1 - abar_t)) * beta_t; zero at t=1
  double beta_tilde(int t) const {
    return (1.0 - abar(t - 1)) / (1.0 - abar(t)) * b(t);
  }
};

inline NoiseSchedule build_schedule(int t_steps, ScheduleKind kind = ScheduleKind::Cosine) {
  if (t_steps < 2) throw InvalidT("noise schedule needs at least 2 steps");
  NoiseSchedule s;
  s.T = t_steps;
  s.alpha.resize(t_steps);
  s.alpha_bar.resize(t_steps);
  s.beta.resize(t_steps);
  if (kind == ScheduleKind::Cosine) {
    const double off = 0.008;
    auto f = [off](double u) {
      const double v = std::cos((u + off) / (1.0 + off) * M_PI / 2.0);
      return v * v;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= t_steps; ++t) {
      const double raw = f(static_cast<double>(t) / t_steps) / f0;
      double a = raw / prev;
      a = std::clamp(a, 0.001, 0.9999);  // beta clipped away from 0 and 1
      s.alpha[t - 1] = a;
      prev *= a;
    }
  } else {
    const double b0 = 1e-4, b1 = 0.02;
    for (int t = 1; t <= t_steps; ++t) {
      const double frac = static_cast<double>(t - 1) / (t_steps - 1);
      s.alpha[t - 1] = 1.0 - (b0 + (b1 - b0) * frac);
    }
  }
  // alpha_bar is defined by the recurrence so the product identity is exact
  double run = 1.0;
  for (int t = 1; t <= t_steps; ++t) {
    run *= s.alpha[t - 1];
    s.alpha_bar[t - 1] = run;
    s.beta[t - 1] = 1.0 - s.alpha[t - 1];
  }
  return s;
}

inline Field standard_normal_field(long rows, long cols, Rng& rng) {
  Field f(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) f(r, c) = rng.normal();
  return f;
}

// Forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Field forward_sample(const Field& x0, int t, const NoiseSchedule& s, Rng& rng) {
  const double ab = s.abar(t);
  return std::sqrt(ab) * x0 +
         std::sqrt(1.0 - ab) * standard_normal_field(x0.rows(), x0.cols(), rng);
}

inline Field forward_sample(const Field& x0, int t, const NoiseSchedule& s, std::uint64_t seed) {
  Rng rng(seed);
  return forward_sample(x0, t, s, rng);
}

// Reverse mean: (x_t - (1 - alpha_t)/sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t).
// A noiseless step (alpha_t = 1, so abar_t may equal 1) has coefficient 0.
inline Field reverse_mean(const Field& x_t, int t, const Field& eps_hat,
                          const NoiseSchedule& s) {
  const double denom = std::sqrt(1.0 - s.abar(t));
  const double coef = (denom > 0.0) ? (1.0 - s.a(t)) / denom : 0.0;
  return (x_t - coef * eps_hat) / std::sqrt(s.a(t));
}

// Reverse variance: log-space interpolation between beta_t (v = 1) and the
// posterior beta_tilde_t (v = 0). beta_tilde_1 = 0 is floored at 1e-20
// before the log.
inline double reverse_variance(int t, double v_theta, const NoiseSchedule& s) {
  const double bt = s.b(t);
  const double btilde = std::max(s.beta_tilde(t), 1e-20);
  return std::exp(v_theta * std::log(bt) + (1.0 - v_theta) * std::log(btilde));
}

inline Field reverse_variance(int t, const Field& v_theta, const NoiseSchedule& s) {
  const double log_bt = std::log(s.b(t));
  const double log_btilde = std::log(std::max(s.beta_tilde(t), 1e-20));
  return (v_theta * log_bt + (1.0 - v_theta) * log_btilde).exp();
}

// ---------------------------------------------------------------------------
// Denoisers

struct DenoiserOutput {
  Field eps_hat;
  Field v_hat;  // per-element in [0, 1]
};

struct Denoiser {
  virtual ~Denoiser() = default;
  virtual DenoiserOutput predict(const Field& x_t, int t, const Field& mask) const = 0;
};

// eps_hat = 0, fixed variance weight.
struct ZeroDenoiser : Denoiser {
  double v = 0.0;
  explicit ZeroDenoiser(double v_fixed = 0.0) : v(v_fixed) {}
  DenoiserOutput predict(const Field& x_t, int, const Field&) const override {
    return {Field::Zero(x_t.rows(), x_t.cols()), Field::Constant(x_t.rows(), x_t.cols(), v)};
  }
};

// Analytic optimal predictor for a point mass at the conditioning mask:
// eps_hat = (x_t - sqrt(abar_t) * mask) / sqrt(1 - abar_t). The reverse chain
// converges to the mask image.
struct PointMassOracleDenoiser : Denoiser {
  const NoiseSchedule* schedule;
  explicit PointMassOracleDenoiser(const NoiseSchedule& s) : schedule(&s) {}
  DenoiserOutput predict(const Field& x_t, int t, const Field& mask) const override {
    const double ab = schedule->abar(t);
    Field eps = (x_t - std::sqrt(ab) * mask) / std::sqrt(1.0 - ab);
    return {std::move(eps), Field::Zero(x_t.rows(), x_t.cols())};
  }
};

// Analytic optimal predictor for 1D Gaussian data x0 ~ N(mean, var), var <= 1.
// eps_hat comes from the posterior mean of x0 given x_t; v_hat inverts the
// log-interpolation so the sampled variance equals the exact reverse kernel
// variance V_{t-1} * beta_t / V_t with V_t = abar_t var + 1 - abar_t.
struct GaussianOracleDenoiser : Denoiser {
  const NoiseSchedule* schedule;
  double mean, var;
  GaussianOracleDenoiser(const NoiseSchedule& s, double mean_, double var_)
      : schedule(&s), mean(mean_), var(var_) {}

  DenoiserOutput predict(const Field& x_t, int t, const Field&) const override {
    const NoiseSchedule& s = *schedule;
    const double ab = s.abar(t);
    const double v_t = ab * var + 1.0 - ab;
    // E[x0 | x_t]
    Field x0_hat = (std::sqrt(ab) * var * x_t + (1.0 - ab) * mean) / v_t;
    Field eps = (x_t - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);

    double v_param = 0.0;
    if (t > 1) {
      const double v_prev = s.abar(t - 1) * var + 1.0 - s.abar(t - 1);
      const double sigma2 = v_prev * s.b(t) / v_t;  // exact reverse kernel variance
      const double log_bt = std::log(s.b(t));
      const double log_btilde = std::log(std::max(s.beta_tilde(t), 1e-20));
      v_param = std::clamp((std::log(sigma2) - log_btilde) / (log_bt - log_btilde), 0.0, 1.0);
    }
    return {std::move(eps), Field::Constant(x_t.rows(), x_t.cols(), v_param)};
  }
};

// One reverse step x_{t-1} ~ N(mu, sigma^2 I); the final step (t = 1) returns
// the mean without noise.
inline Field reverse_step(const Field& x_t, int t, const Denoiser& denoiser, const Field& mask,
                          const NoiseSchedule& s, Rng& rng) {
  const DenoiserOutput out = denoiser.predict(x_t, t, mask);
  Field mu = reverse_mean(x_t, t, out.eps_hat, s);
  if (t == 1) return mu;
  const Field sigma2 = reverse_variance(t, out.v_hat, s);
  return mu + sigma2.sqrt() * standard_normal_field(x_t.rows(), x_t.cols(), rng);
}

inline Field reverse_step(const Field& x_t, int t, const Denoiser& denoiser, const Field& mask,
                          const NoiseSchedule& s, std::uint64_t seed) {
  Rng rng(seed);
  return reverse_step(x_t, t, denoiser, mask, s, rng);
}

// Full reverse chain from pure noise, conditioned on the mask. step_counter,
// when given, receives the number of reverse steps taken.
inline Field generate(const Field& mask, const Denoiser& denoiser, const NoiseSchedule& s,
                      std::uint64_t seed, int* step_counter = nullptr) {
  Rng rng(derive_seed(seed, 0xD1FFu));
  Field x = standard_normal_field(mask.rows(), mask.cols(), rng);
  int steps = 0;
  for (int t = s.T; t >= 1; --t) {
    x = reverse_step(x, t, denoiser, mask, s, rng);
    ++steps;
  }
  if (step_counter) *step_counter = steps;
  return x;
}

// ---------------------------------------------------------------------------
// Deterministic mask-conditioned renderer. Stands in for the trained image
// generator in the production pipeline: distance-transform vessel attenuation
// (thicker vessel = darker), low-frequency tissue background, Poisson-like
// grain, a catheter curve entering at the root inlet, and global contrast
// jitter. Intensities are 8-bit, darker inside vessels.

inline GrayImage procedural_render(const GrayImage& mask, const FloatImage& radii_px,
                                   std::uint64_t seed) {
  const int w = mask.width, h = mask.height;
  Rng rng(derive_seed(seed, 0xA77Eu));

  // low-frequency tissue background from a coarse value-noise grid
  const int grid = 9;
  FloatImage coarse(grid, grid);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) coarse.at(x, y) = rng.uniform(-1.0, 1.0);
  FloatImage background(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) / (w - 1) * (grid - 1);
      const double gy = static_cast<double>(y) / (h - 1) * (grid - 1);
      const int ix = std::min(grid - 2, static_cast<int>(gx));
      const int iy = std::min(grid - 2, static_cast<int>(gy));
      const double fx = gx - ix, fy = gy - iy;
      const double v = (1 - fx) * (1 - fy) * coarse.at(ix, iy) +
                       fx * (1 - fy) * coarse.at(ix + 1, iy) +
                       (1 - fx) * fy * coarse.at(ix, iy + 1) + fx * fy * coarse.at(ix + 1, iy + 1);
      background.at(x, y) = 0.74 + 0.10 * v;
    }
  background = box_gaussian(background, 12.0);

  // vessel attenuation from the in-mask distance transform (approximate
  // chord length of a contrast-filled tube)
  const FloatImage dist2 = distance_transform_squared(mask);
  FloatImage intensity = background;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = std::sqrt(dist2.at(x, y));
      if (d > 0.0) {
        const double att = 0.62 * (1.0 - std::exp(-d / 2.4));
        intensity.at(x, y) *= (1.0 - att);
      }
    }

  // catheter: a quadratic curve from the nearest border point to the root
  // inlet (taken as the thickest vessel pixel)
  double best_r = 0.0;
  int rx = w / 2, ry = h / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (radii_px.at(x, y) > best_r) {
        best_r = radii_px.at(x, y);
        rx = x;
        ry = y;
      }
  if (best_r > 0.0) {
    const double d_left = rx, d_right = w - 1 - rx, d_top = ry, d_bottom = h - 1 - ry;
    double ex = 0, ey = 0;
    const double dmin = std::min({d_left, d_right, d_top, d_bottom});
    if (dmin == d_left) {
      ex = 0;
      ey = std::clamp(ry + rng.uniform(-60.0, 60.0), 0.0, h - 1.0);
    } else if (dmin == d_right) {
      ex = w - 1;
      ey = std::clamp(ry + rng.uniform(-60.0, 60.0), 0.0, h - 1.0);
    } else if (dmin == d_top) {
      ey = 0;
      ex = std::clamp(rx + rng.uniform(-60.0, 60.0), 0.0, w - 1.0);
    } else {
      ey = h - 1;
      ex = std::clamp(rx + rng.uniform(-60.0, 60.0), 0.0, w - 1.0);
    }
    const double mx = 0.5 * (ex + rx) + rng.uniform(-40.0, 40.0);
    const double my = 0.5 * (ey + ry) + rng.uniform(-40.0, 40.0);
    const double cath_r = std::clamp(0.55 * best_r, 1.2, 3.5);
    const int steps = 2 * (w + h);
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double bx = (1 - t) * (1 - t) * ex + 2 * (1 - t) * t * mx + t * t * rx;
      const double by = (1 - t) * (1 - t) * ey + 2 * (1 - t) * t * my + t * t * ry;
      const int x0 = std::max(0, static_cast<int>(bx - cath_r - 1));
      const int x1 = std::min(w - 1, static_cast<int>(bx + cath_r + 1));
      const int y0 = std::max(0, static_cast<int>(by - cath_r - 1));
      const int y1 = std::min(h - 1, static_cast<int>(by + cath_r + 1));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dd = std::hypot(x - bx, y - by);
          if (dd <= cath_r) {
            const double att = 0.4 * (1.0 - dd / (cath_r + 0.5));
            intensity.at(x, y) = std::min(intensity.at(x, y), intensity.at(x, y) * (1.0 - att));
          }
        }
    }
  }

  // Poisson-like grain (variance proportional to signal) and contrast jitter
  const double gain = rng.uniform(0.92, 1.08);
  const double offset = rng.uniform(-0.04, 0.04);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = intensity.at(x, y);
      v += 0.022 * std::sqrt(std::max(0.0, v)) * rng.normal();
      v = gain * v + offset;
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(v * 255.0, 0.0, 255.0) + 0.5);
    }
  return out;
}

// Schedule dump for inspection: CSV with one row per step.
inline void write_schedule_csv(const std::string& path, const NoiseSchedule& s) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "t,alpha,alpha_bar,beta\n";
  for (int t = 1; t <= s.T; ++t) {
    char line[128];
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", t, s.a(t), s.abar(t), s.b(t));
    f << line;
  }
}

}  // namespace angiomatch::imagesynth
