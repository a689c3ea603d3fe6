#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "angiomatch/errors.hpp"
#include "angiomatch/matcher.hpp"
#include "angiomatch/matcher_grad.hpp"
#include "angiomatch/rng.hpp"
#include "angiomatch/weights_io.hpp"

namespace angiomatch::matcher {

struct TrainingExample {
  DescriptorSet a, b;
  Supervision sup;
};

struct TrainConfig {
  int dim = 64;
  int num_blocks = 3;
  int pos_hidden = 32;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 3;
  int batch = 8;
  bool guidance = false;
  double k_percent = 20.0;
  double tau = 0.1;
  MaskVariant mask_variant = MaskVariant::Multiplicative;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty = no checkpoints

  MatcherOptions options() const {
    MatcherOptions o;
    o.guidance = guidance;
    o.k_percent = k_percent;
    o.tau = tau;
    o.mask_variant = mask_variant;
    return o;
  }

  void validate() const {
    if (dim < 2 || dim > 4096) throw ConfigError("matcher dim out of range");
    if (num_blocks < 1 || num_blocks > 64) throw ConfigError("num_blocks out of range");
    if (!(lr > 0.0) || lr > 1.0) throw ConfigError("learning rate out of range");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch < 1) throw ConfigError("batch size must be positive");
    if (!(k_percent > 0.0 && k_percent <= 100.0)) throw ConfigError("k_percent out of (0, 100]");
    if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau out of [0, 1)");
  }
};

struct AdamState {
  std::vector<Eigen::VectorXd> m, v;
  long step = 0;
};

inline AdamState init_adam(MatcherParams& params) {
  AdamState s;
  for (const auto& t : collect_tensors(params)) {
    s.m.push_back(Eigen::VectorXd::Zero(t.size()));
    s.v.push_back(Eigen::VectorXd::Zero(t.size()));
  }
  return s;
}

inline void adam_step(MatcherParams& params, MatcherParams& grads, AdamState& state,
                      const TrainConfig& cfg) {
  auto p_tensors = collect_tensors(params);
  auto g_tensors = collect_tensors(grads);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p_tensors.size(); ++i) {
    Eigen::Map<Eigen::VectorXd> p(p_tensors[i].data, p_tensors[i].size());
    Eigen::Map<const Eigen::VectorXd> g(g_tensors[i].data, g_tensors[i].size());
    Eigen::VectorXd& m = state.m[i];
    Eigen::VectorXd& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v.array().matrix() + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Eigen::ArrayXd m_hat = m.array() / bc1;
    const Eigen::ArrayXd v_hat = v.array() / bc2;
    p.array() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
  }
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double val_match_auc = 0.0;
};

struct TrainResult {
  MatcherParams params;
  std::vector<EpochLog> log;
};

// Match AUC at threshold_px over the validation pairs: pixel error of each
// selected match against the true partner's keypoint location (matches of
// unmatchable keypoints count as infinitely wrong). Used for the training log.
inline double validation_match_auc(const std::vector<TrainingExample>& val,
                                   const MatcherParams& params, const MatcherOptions& options,
                                   double threshold_px = 3.0) {
  double area = 0.0;
  long count = 0;
  for (const auto& ex : val) {
    std::vector<int> partner(ex.a.keypoints.size(), -1);
    for (const auto& [i, j] : ex.sup.gt) partner[i] = j;
    const AssignmentResult res = forward(ex.a, ex.b, params, options);
    for (const Match& match : res.matches) {
      ++count;
      if (partner[match.a] < 0) continue;  // no true partner: zero credit
      const double err = (ex.b.keypoints[match.b] - ex.b.keypoints[partner[match.a]]).norm();
      area += std::max(0.0, threshold_px - err);
    }
  }
  return (count > 0) ? area / (static_cast<double>(count) * threshold_px) : 0.0;
}

// Checkpoint: weights + optimizer moments + epoch + rng engine state, enough
// to resume mid-run deterministically.
inline void save_checkpoint(const std::string& path, const MatcherParams& params,
                            const AdamState& adam, int next_epoch, const Rng& rng_state,
                            double last_loss) {
  MatcherParams& p = const_cast<MatcherParams&>(params);
  auto tensors = collect_tensors(p);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  const char magic[4] = {'A', 'M', 'C', 'K'};
  f.write(magic, 4);
  const std::uint32_t header[5] = {1u, static_cast<std::uint32_t>(next_epoch),
                                   static_cast<std::uint32_t>(p.num_blocks()),
                                   static_cast<std::uint32_t>(p.dim),
                                   static_cast<std::uint32_t>(tensors.size())};
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  const std::uint32_t aux[2] = {static_cast<std::uint32_t>(p.local_channels()),
                                static_cast<std::uint32_t>(p.pos_mlp.w1.rows())};
  f.write(reinterpret_cast<const char*>(aux), sizeof(aux));
  const std::int64_t step = adam.step;
  f.write(reinterpret_cast<const char*>(&step), sizeof(step));
  f.write(reinterpret_cast<const char*>(&last_loss), sizeof(last_loss));
  for (const auto& t : tensors)
    f.write(reinterpret_cast<const char*>(t.data),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  for (const auto& m : adam.m)
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
  for (const auto& v : adam.v)
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  std::ostringstream engine_text;
  engine_text << const_cast<Rng&>(rng_state).engine();
  const std::string s = engine_text.str();
  const std::uint64_t len = s.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(s.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError("short write: " + path);
}

struct Checkpoint {
  MatcherParams params;
  AdamState adam;
  int next_epoch = 0;
  double last_loss = 0.0;
  std::string engine_state;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "AMCK", 4) != 0) throw FormatError("not a checkpoint: " + path);
  std::uint32_t header[5];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!f || header[0] != 1) throw FormatError("unsupported checkpoint version: " + path);
  std::uint32_t aux[2];
  f.read(reinterpret_cast<char*>(aux), sizeof(aux));
  Checkpoint ck;
  ck.next_epoch = static_cast<int>(header[1]);
  Rng rng(0);
  ck.params = init_params(static_cast<int>(header[3]), static_cast<int>(header[2]), rng,
                          static_cast<int>(aux[0]), static_cast<int>(aux[1]));
  auto tensors = collect_tensors(ck.params);
  if (tensors.size() != header[4]) throw FormatError("tensor count mismatch: " + path);
  std::int64_t step = 0;
  f.read(reinterpret_cast<char*>(&step), sizeof(step));
  f.read(reinterpret_cast<char*>(&ck.last_loss), sizeof(ck.last_loss));
  for (auto& t : tensors)
    f.read(reinterpret_cast<char*>(t.data),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  ck.adam.step = step;
  for (const auto& t : tensors) {
    Eigen::VectorXd m(t.size());
    f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    ck.adam.m.push_back(std::move(m));
  }
  for (const auto& t : tensors) {
    Eigen::VectorXd v(t.size());
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    ck.adam.v.push_back(std::move(v));
  }
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  ck.engine_state.resize(len);
  f.read(ck.engine_state.data(), static_cast<std::streamsize>(len));
  if (!f) throw FormatError("truncated checkpoint: " + path);
  return ck;
}

// Mini-batch Adam over the training set with a seeded shuffle per epoch.
// Deterministic: same seed + data -> bitwise identical weights. Checkpoints
// (when enabled) are written every epoch and training can resume from one.
inline TrainResult train(const std::vector<TrainingExample>& train_set,
                         const std::vector<TrainingExample>& val_set, const TrainConfig& cfg,
                         const Checkpoint* resume = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");

  Rng init_rng(derive_seed(cfg.seed, 0x11));
  MatcherParams params = resume ? resume->params
                                : init_params(cfg.dim, cfg.num_blocks, init_rng,
                                              static_cast<int>(train_set[0].a.local_raw.cols()),
                                              cfg.pos_hidden);
  AdamState adam = resume ? resume->adam : init_adam(params);
  const int first_epoch = resume ? resume->next_epoch : 0;
  const MatcherOptions options = cfg.options();

  TrainResult result;
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  MatcherParams grads = zero_like(params);

  for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    // epoch order is a pure function of (seed, epoch) so resumed runs replay it
    Rng shuffle_rng(derive_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch_end = std::min(done + static_cast<std::size_t>(cfg.batch),
                                             order.size());
      auto g_tensors = collect_tensors(grads);
      for (auto& t : g_tensors) std::fill(t.data, t.data + t.size(), 0.0);
      for (std::size_t k = done; k < batch_end; ++k) {
        const TrainingExample& ex = train_set[order[k]];
        epoch_loss += loss_and_backward(ex.a, ex.b, params, options, ex.sup, grads);
      }
      const double scale = 1.0 / static_cast<double>(batch_end - done);
      for (auto& t : g_tensors)
        for (long q = 0; q < t.size(); ++q) t.data[q] *= scale;
      adam_step(params, grads, adam, cfg);
      done = batch_end;
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss = epoch_loss / static_cast<double>(order.size());
    log.val_match_auc =
        val_set.empty() ? 0.0 : validation_match_auc(val_set, params, options);
    result.log.push_back(log);

    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_checkpoint(cfg.checkpoint_dir + "/epoch_" + std::to_string(epoch) + ".ckpt", params,
                      adam, epoch + 1, shuffle_rng, log.loss);
      save_weights(cfg.checkpoint_dir + "/latest.weights", params);
    }
  }
  result.params = std::move(params);
  return result;
}

inline void write_training_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "epoch,loss,val_match_auc\n";
  for (const auto& row : log) {
    char line[128];
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", row.epoch, row.loss,
                  row.val_match_auc);
    f << line;
  }
}

}  // namespace angiomatch::matcher
