#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "angiomatch/errors.hpp"
#include "angiomatch/image.hpp"
#include "angiomatch/nn.hpp"

namespace angiomatch::descriptors {

// Dense descriptor grid. data is channel-major: data[(c * height + y) * width + x].
struct FeatureMap {
  int channels = 0;
  int height = 0;  // cells
  int width = 0;   // cells
  double stride = 1.0;
  std::vector<double> data;

  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

namespace detail {

inline FloatImage central_gradient_x(const FloatImage& im) {
  FloatImage g(im.width, im.height);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      const int x0 = std::max(0, x - 1), x1 = std::min(im.width - 1, x + 1);
      g.at(x, y) = 0.5 * (im.at(x1, y) - im.at(x0, y));
    }
  return g;
}

inline FloatImage central_gradient_y(const FloatImage& im) {
  FloatImage g(im.width, im.height);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      const int y0 = std::max(0, y - 1), y1 = std::min(im.height - 1, y + 1);
      g.at(x, y) = 0.5 * (im.at(x, y1) - im.at(x, y0));
    }
  return g;
}

inline void pool_into(const FloatImage& im, int stride, FeatureMap& fmap, int channel) {
  const FloatImage pooled = downsample_mean(im, stride);
  for (int y = 0; y < fmap.height; ++y)
    for (int x = 0; x < fmap.width; ++x) fmap.at(channel, y, x) = pooled.at(x, y);
}

}  // namespace detail

// Fixed multi-scale filter bank standing in for a learned dense local
// descriptor: raw + blurred intensities, difference-of-Gaussian bands and
// half-wave-rectified oriented gradients at three scales. 32 channels at
// stride 4. The learnable linear lift to the matcher dimension lives in the
// matcher parameters and is trained jointly.
inline FeatureMap extract_local_features(const GrayImage& image) {
  const int stride = 4;
  FeatureMap fmap;
  fmap.channels = 32;
  fmap.stride = stride;
  fmap.width = (image.width + stride - 1) / stride;
  fmap.height = (image.height + stride - 1) / stride;
  fmap.data.assign(static_cast<std::size_t>(fmap.channels) * fmap.height * fmap.width, 0.0);

  const FloatImage raw = to_float(image);
  const FloatImage blur1 = gaussian_blur(raw, 1.0);
  const FloatImage blur2 = gaussian_blur(raw, 2.0);
  const FloatImage blur4 = gaussian_blur(raw, 4.0);
  const FloatImage blur8 = gaussian_blur(raw, 8.0);

  int ch = 0;
  detail::pool_into(raw, stride, fmap, ch++);
  for (const FloatImage* b : {&blur1, &blur2, &blur4}) detail::pool_into(*b, stride, fmap, ch++);

  // difference-of-Gaussian bands
  auto diff = [](const FloatImage& a, const FloatImage& b) {
    FloatImage d(a.width, a.height);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = a.data[i] - b.data[i];
    return d;
  };
  detail::pool_into(diff(raw, blur1), stride, fmap, ch++);
  detail::pool_into(diff(blur1, blur2), stride, fmap, ch++);
  detail::pool_into(diff(blur2, blur4), stride, fmap, ch++);
  detail::pool_into(diff(blur4, blur8), stride, fmap, ch++);

  // oriented gradient responses, 8 half-wave-rectified orientations x 3 scales
  for (const FloatImage* b : {&blur1, &blur2, &blur4}) {
    const FloatImage gx = detail::central_gradient_x(*b);
    const FloatImage gy = detail::central_gradient_y(*b);
    for (int k = 0; k < 8; ++k) {
      const double theta = k * M_PI / 4.0;
      const double cs = std::cos(theta), sn = std::sin(theta);
      FloatImage resp(gx.width, gx.height);
      for (std::size_t i = 0; i < resp.data.size(); ++i)
        resp.data[i] = std::max(0.0, cs * gx.data[i] + sn * gy.data[i]);
      detail::pool_into(resp, stride, fmap, ch++);
    }
  }
  return fmap;
}

// ---------------------------------------------------------------------------
// Global feature providers (the paper's foundation-model slot). Any provider
// that produces a FeatureMap plugs into guidance; the default is a pyramid of
// heavily pooled structural context channels.

struct GlobalFeatureProvider {
  virtual ~GlobalFeatureProvider() = default;
  virtual FeatureMap extract(const GrayImage& image) const = 0;
  virtual std::string name() const = 0;
};

// 16 structural base channels (intensity, gradients, dark-vessel mass and its
// coordinate moments, local variance) pooled at 4 context scales: 64 channels
// at stride 16. Per-base gains keep channel magnitudes comparable so cosine
// similarity is not dominated by any single feature family.
struct PyramidContextProvider final : GlobalFeatureProvider {
  FeatureMap extract(const GrayImage& image) const override {
    const int stride = 16;
    const int pre = 4;  // work at quarter resolution
    FeatureMap fmap;
    fmap.channels = 64;
    fmap.stride = stride;
    fmap.width = (image.width + stride - 1) / stride;
    fmap.height = (image.height + stride - 1) / stride;
    fmap.data.assign(static_cast<std::size_t>(fmap.channels) * fmap.height * fmap.width, 0.0);

    const FloatImage quarter = downsample_mean(to_float(image), pre);
    const FloatImage base = gaussian_blur(quarter, 1.0);
    const int w = base.width, h = base.height;

    const FloatImage gx = detail::central_gradient_x(base);
    const FloatImage gy = detail::central_gradient_y(base);
    const FloatImage blur2 = gaussian_blur(quarter, 2.0);

    double mean_intensity = 0.0;
    for (double v : base.data) mean_intensity += v;
    mean_intensity /= base.data.size();

    std::vector<FloatImage> bases(16, FloatImage(w, h));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double i0 = base.at(x, y);
        const double dx = gx.at(x, y), dy = gy.at(x, y);
        const double mass = std::max(0.0, mean_intensity - i0);  // dark-vessel mass
        const double xn = 2.0 * x / (w - 1) - 1.0;
        const double yn = 2.0 * y / (h - 1) - 1.0;
        bases[0].at(x, y) = i0;
        bases[1].at(x, y) = 6.0 * std::abs(dx);
        bases[2].at(x, y) = 6.0 * std::abs(dy);
        bases[3].at(x, y) = 6.0 * std::hypot(dx, dy);
        bases[4].at(x, y) = 8.0 * std::abs(base.at(x, y) - blur2.at(x, y));
        bases[6].at(x, y) = 2.0 * mass;
        bases[7].at(x, y) = 2.0 * xn * mass;
        bases[8].at(x, y) = 2.0 * yn * mass;
        bases[9].at(x, y) = 2.0 * (xn * xn + yn * yn) * mass;
        bases[10].at(x, y) = 4.0 * mass * mass;
        for (int k = 0; k < 4; ++k) {
          const double theta = k * M_PI / 4.0;
          bases[11 + k].at(x, y) =
              6.0 * std::abs(std::cos(theta) * dx + std::sin(theta) * dy);
        }
      }
    // Laplacian magnitude of the blurred intensity
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int x0 = std::max(0, x - 1), x1 = std::min(w - 1, x + 1);
        const int y0 = std::max(0, y - 1), y1 = std::min(h - 1, y + 1);
        bases[5].at(x, y) = 4.0 * std::abs(base.at(x0, y) + base.at(x1, y) + base.at(x, y0) +
                                           base.at(x, y1) - 4.0 * base.at(x, y));
      }
    // local variance
    {
      FloatImage sq(w, h);
      for (std::size_t i = 0; i < sq.data.size(); ++i) sq.data[i] = base.data[i] * base.data[i];
      const FloatImage m1 = box_gaussian(base, 3.0);
      const FloatImage m2 = box_gaussian(sq, 3.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          bases[15].at(x, y) = 10.0 * std::max(0.0, m2.at(x, y) - m1.at(x, y) * m1.at(x, y));
    }

    const double context_sigmas[4] = {3.0, 6.0, 12.0, 24.0};  // in quarter-res pixels
    const int pool = stride / pre;
    int ch = 0;
    for (const double sigma : context_sigmas)
      for (int b = 0; b < 16; ++b) {
        const FloatImage ctx = box_gaussian(bases[b], sigma);
        detail::pool_into(ctx, pool, fmap, ch++);
      }
    return fmap;
  }

  std::string name() const override { return "pyramid-context"; }
};

// ---------------------------------------------------------------------------
// Bilinear sampling in stride-scaled coordinates with border clamp. Cell
// (i, j) is centered at pixel (i + 0.5) * stride - 0.5... i.e. the mean
// position of the pooled block; keypoints on a cell center reproduce that
// cell exactly.
inline Eigen::MatrixXd sample_bilinear(const FeatureMap& fmap,
                                       const std::vector<Eigen::Vector2d>& keypoints) {
  const double raster_w = fmap.width * fmap.stride;
  const double raster_h = fmap.height * fmap.stride;
  Eigen::MatrixXd out(static_cast<long>(keypoints.size()), fmap.channels);
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    const double px = keypoints[k].x(), py = keypoints[k].y();
    if (px < 0.0 || py < 0.0 || px > raster_w - 1.0 || py > raster_h - 1.0)
      throw OutOfBounds("keypoint outside the feature raster");
    const double cx = std::clamp((px - 0.5 * (fmap.stride - 1.0)) / fmap.stride, 0.0,
                                 static_cast<double>(fmap.width - 1));
    const double cy = std::clamp((py - 0.5 * (fmap.stride - 1.0)) / fmap.stride, 0.0,
                                 static_cast<double>(fmap.height - 1));
    const int x0 = std::min(fmap.width - 1, static_cast<int>(cx));
    const int y0 = std::min(fmap.height - 1, static_cast<int>(cy));
    const int x1 = std::min(fmap.width - 1, x0 + 1);
    const int y1 = std::min(fmap.height - 1, y0 + 1);
    const double fx = cx - x0, fy = cy - y0;
    for (int c = 0; c < fmap.channels; ++c) {
      out(static_cast<long>(k), c) = (1 - fx) * (1 - fy) * fmap.at(c, y0, x0) +
                                     fx * (1 - fy) * fmap.at(c, y0, x1) +
                                     (1 - fx) * fy * fmap.at(c, y1, x0) +
                                     fx * fy * fmap.at(c, y1, x1);
    }
  }
  return out;
}

// Keypoint locations mapped to [-1, 1]^2 (corner (0,0) -> (-1,-1)).
inline Eigen::MatrixXd normalized_coords(const std::vector<Eigen::Vector2d>& keypoints,
                                         int image_width, int image_height) {
  Eigen::MatrixXd out(static_cast<long>(keypoints.size()), 2);
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    out(static_cast<long>(k), 0) = 2.0 * keypoints[k].x() / (image_width - 1) - 1.0;
    out(static_cast<long>(k), 1) = 2.0 * keypoints[k].y() / (image_height - 1) - 1.0;
  }
  return out;
}

// Two-layer MLP mapping normalized keypoint locations to d-dim position
// embeddings.
struct PosMlpParams {
  Eigen::MatrixXd w1;  // hidden x 2
  Eigen::VectorXd b1;  // hidden
  Eigen::MatrixXd w2;  // d x hidden
  Eigen::VectorXd b2;  // d
};

struct PosMlpTrace {
  Eigen::MatrixXd coords;  // n x 2
  Eigen::MatrixXd h_pre;   // n x hidden
};

inline Eigen::MatrixXd pos_mlp_forward(const Eigen::MatrixXd& coords, const PosMlpParams& p,
                                       PosMlpTrace* trace = nullptr) {
  Eigen::MatrixXd h_pre = (coords * p.w1.transpose()).rowwise() + p.b1.transpose();
  Eigen::MatrixXd h = nn::gelu(h_pre);
  Eigen::MatrixXd out = (h * p.w2.transpose()).rowwise() + p.b2.transpose();
  if (trace) {
    trace->coords = coords;
    trace->h_pre = std::move(h_pre);
  }
  return out;
}

// Reverse-mode gradients of the position MLP; returns dL/d(coords) ignored
// (coords are data). Accumulates into grad.
inline void pos_mlp_backward(const PosMlpTrace& trace, const PosMlpParams& p,
                             const Eigen::MatrixXd& d_out, PosMlpParams& grad) {
  const Eigen::MatrixXd h = nn::gelu(trace.h_pre);
  grad.w2 += d_out.transpose() * h;
  grad.b2 += d_out.colwise().sum().transpose();
  Eigen::MatrixXd dh = d_out * p.w2;
  Eigen::MatrixXd dh_pre = dh.cwiseProduct(nn::gelu_grad(trace.h_pre));
  grad.w1 += dh_pre.transpose() * trace.coords;
  grad.b1 += dh_pre.colwise().sum().transpose();
}

inline Eigen::MatrixXd positional_embedding(const std::vector<Eigen::Vector2d>& keypoints,
                                            int image_width, int image_height,
                                            const PosMlpParams& p) {
  if (keypoints.empty()) throw EmptyInput("positional embedding of an empty keypoint set");
  return pos_mlp_forward(normalized_coords(keypoints, image_width, image_height), p);
}

// ---------------------------------------------------------------------------
// Per-image descriptor bundle consumed by the matcher. local_raw rows are the
// sampled filter-bank vectors (pre-lift); global rows feed guidance.
struct DescriptorSet {
  std::vector<Eigen::Vector2d> keypoints;
  Eigen::MatrixXd local_raw;  // n x 32
  Eigen::MatrixXd global_g;   // n x g
  Eigen::MatrixXd coords;     // n x 2, normalized to [-1, 1]
  int image_width = 0;
  int image_height = 0;
};

inline DescriptorSet build_descriptor_set(const GrayImage& image,
                                          const std::vector<Eigen::Vector2d>& keypoints,
                                          const GlobalFeatureProvider& provider) {
  DescriptorSet set;
  set.keypoints = keypoints;
  set.image_width = image.width;
  set.image_height = image.height;
  set.local_raw = sample_bilinear(extract_local_features(image), keypoints);
  set.global_g = sample_bilinear(provider.extract(image), keypoints);
  set.coords = normalized_coords(keypoints, image.width, image.height);
  return set;
}

// ---------------------------------------------------------------------------
// Flat binary dump (debugging + PCA visualization): magic "AMFM", u32
// channels, u32 height, u32 width, f32 stride, then f32 payload, channel
// major, little endian.

inline void write_feature_map(const std::string& path, const FeatureMap& fmap) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  const char magic[4] = {'A', 'M', 'F', 'M'};
  f.write(magic, 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(fmap.channels),
                                 static_cast<std::uint32_t>(fmap.height),
                                 static_cast<std::uint32_t>(fmap.width)};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const float stride = static_cast<float>(fmap.stride);
  f.write(reinterpret_cast<const char*>(&stride), sizeof(float));
  std::vector<float> payload(fmap.data.begin(), fmap.data.end());
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw IoError("short write: " + path);
}

inline FeatureMap read_feature_map(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "AMFM", 4) != 0)
    throw FormatError("not a feature-map dump: " + path);
  std::uint32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  float stride = 0;
  f.read(reinterpret_cast<char*>(&stride), sizeof(float));
  FeatureMap fmap;
  fmap.channels = static_cast<int>(dims[0]);
  fmap.height = static_cast<int>(dims[1]);
  fmap.width = static_cast<int>(dims[2]);
  fmap.stride = stride;
  std::vector<float> payload(static_cast<std::size_t>(fmap.channels) * fmap.height * fmap.width);
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw FormatError("truncated feature-map dump: " + path);
  fmap.data.assign(payload.begin(), payload.end());
  return fmap;
}

}  // namespace angiomatch::descriptors
