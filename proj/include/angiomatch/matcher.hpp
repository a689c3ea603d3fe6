#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "angiomatch/descriptors.hpp"
#include "angiomatch/errors.hpp"
#include "angiomatch/nn.hpp"
#include "angiomatch/rng.hpp"

namespace angiomatch::matcher {

using descriptors::DescriptorSet;
using descriptors::PosMlpParams;
using descriptors::PosMlpTrace;

// How the guidance mask enters the cross-attention logits. Multiplicative is
// the form printed in the matching framework (logits scaled by the binary
// mask before the softmax; masked entries keep weight exp(0)); NegativeInfinity
// is the conventional alternative that removes masked entries entirely.
enum class MaskVariant { Multiplicative, NegativeInfinity };

struct AttentionParams {
  Eigen::MatrixXd wq, wk, wv;  // d x d projections, no bias
  Eigen::MatrixXd w1;          // update MLP: 2d -> 2d
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;          // 2d -> d
  Eigen::VectorXd b2;
};

struct BlockParams {
  AttentionParams self_attn;   // shared by both images
  AttentionParams cross_attn;  // shared by both directions
};

struct MatcherParams {
  int dim = 64;
  Eigen::MatrixXd lift_w;  // d x local_channels
  Eigen::VectorXd lift_b;
  PosMlpParams pos_mlp;
  std::vector<BlockParams> blocks;
  Eigen::MatrixXd head_w;  // d x d, assignment transform f
  Eigen::VectorXd head_b;
  Eigen::VectorXd match_w;  // d, matchability head
  double match_b = 0.0;

  int num_blocks() const { return static_cast<int>(blocks.size()); }
  int local_channels() const { return static_cast<int>(lift_w.cols()); }
};

// Uniform flat view over every learnable tensor, in a fixed documented order.
// Serialization, the optimizer and finite differencing all iterate this list.
struct TensorRef {
  std::string name;
  double* data;
  long rows, cols;
  long size() const { return rows * cols; }
};

inline std::vector<TensorRef> collect_tensors(MatcherParams& p) {
  std::vector<TensorRef> out;
  auto add = [&out](const std::string& name, Eigen::MatrixXd& m) {
    out.push_back({name, m.data(), m.rows(), m.cols()});
  };
  auto addv = [&out](const std::string& name, Eigen::VectorXd& v) {
    out.push_back({name, v.data(), v.rows(), 1});
  };
  add("lift_w", p.lift_w);
  addv("lift_b", p.lift_b);
  add("pos_w1", p.pos_mlp.w1);
  addv("pos_b1", p.pos_mlp.b1);
  add("pos_w2", p.pos_mlp.w2);
  addv("pos_b2", p.pos_mlp.b2);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    for (auto [tag, attn] : {std::pair{"self.", &p.blocks[b].self_attn},
                             std::pair{"cross.", &p.blocks[b].cross_attn}}) {
      add(pre + tag + "wq", attn->wq);
      add(pre + tag + "wk", attn->wk);
      add(pre + tag + "wv", attn->wv);
      add(pre + tag + "w1", attn->w1);
      addv(pre + tag + "b1", attn->b1);
      add(pre + tag + "w2", attn->w2);
      addv(pre + tag + "b2", attn->b2);
    }
  }
  add("head_w", p.head_w);
  addv("head_b", p.head_b);
  addv("match_w", p.match_w);
  out.push_back({"match_b", &p.match_b, 1, 1});
  return out;
}

inline MatcherParams init_params(int dim, int num_blocks, Rng& rng, int local_channels = 32,
                                 int pos_hidden = 32) {
  MatcherParams p;
  p.dim = dim;
  auto randm = [&rng](long r, long c, double scale) {
    Eigen::MatrixXd m(r, c);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
    return m;
  };
  p.lift_w = randm(dim, local_channels, 1.0 / std::sqrt(local_channels));
  p.lift_b = Eigen::VectorXd::Zero(dim);
  p.pos_mlp.w1 = randm(pos_hidden, 2, 1.0 / std::sqrt(2.0));
  p.pos_mlp.b1 = Eigen::VectorXd::Zero(pos_hidden);
  p.pos_mlp.w2 = randm(dim, pos_hidden, 1.0 / std::sqrt(pos_hidden));
  p.pos_mlp.b2 = Eigen::VectorXd::Zero(dim);
  p.blocks.resize(num_blocks);
  for (auto& block : p.blocks)
    for (AttentionParams* attn : {&block.self_attn, &block.cross_attn}) {
      attn->wq = randm(dim, dim, 1.0 / std::sqrt(dim));
      attn->wk = randm(dim, dim, 1.0 / std::sqrt(dim));
      attn->wv = randm(dim, dim, 1.0 / std::sqrt(dim));
      attn->w1 = randm(2 * dim, 2 * dim, 1.0 / std::sqrt(2.0 * dim));
      attn->b1 = Eigen::VectorXd::Zero(2 * dim);
      attn->w2 = randm(dim, 2 * dim, 0.5 / std::sqrt(2.0 * dim));
      attn->b2 = Eigen::VectorXd::Zero(dim);
    }
  p.head_w = randm(dim, dim, 1.0 / std::sqrt(dim));
  p.head_b = Eigen::VectorXd::Zero(dim);
  p.match_w = randm(dim, 1, 1.0 / std::sqrt(dim)).col(0);
  p.match_b = 0.0;
  return p;
}

inline MatcherParams zero_like(const MatcherParams& p) {
  MatcherParams z = p;
  auto tensors = collect_tensors(z);
  for (auto& t : tensors) std::fill(t.data, t.data + t.size(), 0.0);
  return z;
}

// ---------------------------------------------------------------------------
// Guidance (global-feature similarity mask)

struct GuidanceMask {
  Eigen::MatrixXd G;       // cosine similarity, M x N
  Eigen::MatrixXd M_guid;  // binary retention mask, M x N
  double k_percent = 20.0;
};

inline Eigen::MatrixXd guidance_similarity(const Eigen::MatrixXd& g_a,
                                           const Eigen::MatrixXd& g_b) {
  Eigen::VectorXd na(g_a.rows()), nb(g_b.rows());
  for (long i = 0; i < g_a.rows(); ++i) {
    na(i) = g_a.row(i).norm();
    if (na(i) <= 0.0) throw ZeroVector("zero global descriptor (image A)");
  }
  for (long j = 0; j < g_b.rows(); ++j) {
    nb(j) = g_b.row(j).norm();
    if (nb(j) <= 0.0) throw ZeroVector("zero global descriptor (image B)");
  }
  Eigen::MatrixXd g = g_a * g_b.transpose();
  for (long i = 0; i < g.rows(); ++i)
    for (long j = 0; j < g.cols(); ++j) g(i, j) /= na(i) * nb(j);
  return g;
}

// Per row, retain the top k% highest similarities (nearest-integer count, at
// least one); ties at the threshold are all retained, so rows may carry more
// ones than the nominal count.
inline Eigen::MatrixXd guidance_mask(const Eigen::MatrixXd& g, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0))
    throw ConfigError("guidance k_percent must lie in (0, 100]");
  const long n = g.cols();
  const long keep = std::clamp<long>(
      std::llround(k_percent / 100.0 * static_cast<double>(n)), 1, n);
  Eigen::MatrixXd mask(g.rows(), n);
  std::vector<double> row(n);
  for (long i = 0; i < g.rows(); ++i) {
    for (long j = 0; j < n; ++j) row[j] = g(i, j);
    std::nth_element(row.begin(), row.begin() + (keep - 1), row.end(), std::greater<double>());
    const double threshold = row[keep - 1];
    for (long j = 0; j < n; ++j) mask(i, j) = (g(i, j) >= threshold) ? 1.0 : 0.0;
  }
  return mask;
}

inline GuidanceMask build_guidance(const Eigen::MatrixXd& g_a, const Eigen::MatrixXd& g_b,
                                   double k_percent) {
  GuidanceMask out;
  out.G = guidance_similarity(g_a, g_b);
  out.M_guid = guidance_mask(out.G, k_percent);
  out.k_percent = k_percent;
  return out;
}

// ---------------------------------------------------------------------------
// Attention layers

struct AttentionTrace {
  Eigen::MatrixXd x_q, x_s;  // inputs (query side, source side)
  Eigen::MatrixXd qp, kp;    // projected queries/keys (with positions for self)
  Eigen::MatrixXd v;
  Eigen::MatrixXd w;    // softmax weights
  Eigen::MatrixXd h1;   // update-MLP hidden pre-activation
  Eigen::MatrixXd msg;  // w * v
};

// Self attention: scores ((q_i + p_i) . (k_j + p_j)) / sqrt(d) over keypoints
// of the same image, message = softmax-weighted values, residual MLP update
// on [x | m]. Positions enter q and k only.
inline Eigen::MatrixXd self_attention_update(const Eigen::MatrixXd& x,
                                             const Eigen::MatrixXd& pos,
                                             const AttentionParams& ap,
                                             AttentionTrace* trace = nullptr) {
  const long d = ap.wq.rows();
  Eigen::MatrixXd qp = x * ap.wq.transpose() + pos;
  Eigen::MatrixXd kp = x * ap.wk.transpose() + pos;
  Eigen::MatrixXd v = x * ap.wv.transpose();
  Eigen::MatrixXd logits = qp * kp.transpose() / std::sqrt(static_cast<double>(d));
  Eigen::MatrixXd w = nn::softmax_rows(logits);
  Eigen::MatrixXd msg = w * v;
  Eigen::MatrixXd c(x.rows(), 2 * d);
  c << x, msg;
  Eigen::MatrixXd h1 = (c * ap.w1.transpose()).rowwise() + ap.b1.transpose();
  Eigen::MatrixXd out =
      x + ((nn::gelu(h1) * ap.w2.transpose()).rowwise() + ap.b2.transpose());
  if (trace) {
    trace->x_q = x;
    trace->x_s = x;
    trace->qp = std::move(qp);
    trace->kp = std::move(kp);
    trace->v = std::move(v);
    trace->w = std::move(w);
    trace->h1 = std::move(h1);
    trace->msg = std::move(msg);
  }
  return out;
}

// Cross attention: queries from x_i, keys/values from the other image x_s;
// no positional terms. With a guidance mask, logits are multiplied by the
// binary mask before the softmax (as-printed form), or masked to -inf under
// the NegativeInfinity variant.
inline Eigen::MatrixXd cross_attention_update(const Eigen::MatrixXd& x_i,
                                              const Eigen::MatrixXd& x_s,
                                              const AttentionParams& ap,
                                              const Eigen::MatrixXd* mask = nullptr,
                                              MaskVariant variant = MaskVariant::Multiplicative,
                                              AttentionTrace* trace = nullptr) {
  const long d = ap.wq.rows();
  Eigen::MatrixXd q = x_i * ap.wq.transpose();
  Eigen::MatrixXd k = x_s * ap.wk.transpose();
  Eigen::MatrixXd v = x_s * ap.wv.transpose();
  Eigen::MatrixXd logits = q * k.transpose() / std::sqrt(static_cast<double>(d));
  if (mask) {
    if (variant == MaskVariant::Multiplicative) {
      logits = logits.cwiseProduct(*mask);
    } else {
      const double neg_inf = -std::numeric_limits<double>::infinity();
      for (long i = 0; i < logits.rows(); ++i)
        for (long j = 0; j < logits.cols(); ++j)
          if ((*mask)(i, j) == 0.0) logits(i, j) = neg_inf;
    }
  }
  Eigen::MatrixXd w = nn::softmax_rows(logits);
  Eigen::MatrixXd msg = w * v;
  Eigen::MatrixXd c(x_i.rows(), 2 * d);
  c << x_i, msg;
  Eigen::MatrixXd h1 = (c * ap.w1.transpose()).rowwise() + ap.b1.transpose();
  Eigen::MatrixXd out =
      x_i + ((nn::gelu(h1) * ap.w2.transpose()).rowwise() + ap.b2.transpose());
  if (trace) {
    trace->x_q = x_i;
    trace->x_s = x_s;
    trace->qp = std::move(q);
    trace->kp = std::move(k);
    trace->v = std::move(v);
    trace->w = std::move(w);
    trace->h1 = std::move(h1);
    trace->msg = std::move(msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correspondence matching layer

inline Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& x_a, const Eigen::MatrixXd& x_b,
                                         const Eigen::MatrixXd& head_w,
                                         const Eigen::VectorXd& head_b) {
  const Eigen::MatrixXd fa = (x_a * head_w.transpose()).rowwise() + head_b.transpose();
  const Eigen::MatrixXd fb = (x_b * head_w.transpose()).rowwise() + head_b.transpose();
  return fa * fb.transpose();
}

inline Eigen::VectorXd matchability(const Eigen::MatrixXd& x, const Eigen::VectorXd& match_w,
                                    double match_b) {
  Eigen::VectorXd z = x * match_w;
  z.array() += match_b;
  return z.unaryExpr([](double v) { return nn::sigmoid(v); });
}

// Soft partial assignment: dual softmax over the similarity matrix scaled by
// both matchabilities.
inline Eigen::MatrixXd assignment(const Eigen::MatrixXd& s, const Eigen::VectorXd& sigma_a,
                                  const Eigen::VectorXd& sigma_b) {
  const Eigen::MatrixXd rs = nn::softmax_rows(s);
  const Eigen::MatrixXd cs = nn::softmax_rows(s.transpose()).transpose();
  Eigen::MatrixXd p = rs.cwiseProduct(cs);
  for (long i = 0; i < p.rows(); ++i)
    for (long j = 0; j < p.cols(); ++j) p(i, j) *= sigma_a(i) * sigma_b(j);
  return p;
}

struct Match {
  int a = 0;
  int b = 0;
  double score = 0.0;
  bool operator==(const Match&) const = default;
};

// Pairs whose P exceeds tau and is the strict maximum of both its row and its
// column; duplicated maxima disqualify the cell.
inline std::vector<Match> select_matches(const Eigen::MatrixXd& p, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("match threshold tau must lie in [0, 1)");
  const long m = p.rows(), n = p.cols();
  std::vector<int> row_arg(m, -1), col_arg(n, -1);
  std::vector<double> row_max(m), col_max(n);
  std::vector<int> row_ties(m, 0), col_ties(n, 0);
  for (long i = 0; i < m; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (long j = 0; j < n; ++j) best = std::max(best, p(i, j));
    row_max[i] = best;
    for (long j = 0; j < n; ++j)
      if (p(i, j) == best) {
        ++row_ties[i];
        row_arg[i] = static_cast<int>(j);
      }
  }
  for (long j = 0; j < n; ++j) {
    double best = -std::numeric_limits<double>::infinity();
    for (long i = 0; i < m; ++i) best = std::max(best, p(i, j));
    col_max[j] = best;
    for (long i = 0; i < m; ++i)
      if (p(i, j) == best) {
        ++col_ties[j];
        col_arg[j] = static_cast<int>(i);
      }
  }
  std::vector<Match> matches;
  for (long i = 0; i < m; ++i) {
    if (row_ties[i] != 1) continue;
    const int j = row_arg[i];
    if (col_ties[j] != 1 || col_arg[j] != static_cast<int>(i)) continue;
    if (p(i, j) > tau) matches.push_back({static_cast<int>(i), j, p(i, j)});
  }
  return matches;
}

// ---------------------------------------------------------------------------
// Full forward pass

struct MatcherOptions {
  bool guidance = false;
  double k_percent = 20.0;
  double tau = 0.1;
  MaskVariant mask_variant = MaskVariant::Multiplicative;
};

struct AssignmentResult {
  Eigen::MatrixXd S;
  Eigen::VectorXd sigmaA, sigmaB;
  Eigen::MatrixXd P;
  std::vector<Match> matches;
  double tau = 0.1;
};

struct BlockTrace {
  AttentionTrace self_a, self_b, cross_a, cross_b;
};

struct ForwardTrace {
  Eigen::MatrixXd lift_pre_a, lift_pre_b;  // lift output before row normalization
  Eigen::VectorXd lift_norm_a, lift_norm_b;
  PosMlpTrace pos_trace_a, pos_trace_b;
  Eigen::MatrixXd pos_a, pos_b;
  Eigen::MatrixXd mask_ab, mask_ba;  // empty when unguided
  Eigen::MatrixXd guidance_g;        // cosine similarity (A rows, B cols)
  std::vector<BlockTrace> blocks;
  Eigen::MatrixXd x_a, x_b;    // final features
  Eigen::MatrixXd f_a, f_b;    // head projections
  Eigen::VectorXd z_a, z_b;    // matchability logits
  Eigen::MatrixXd s, log_rs, log_cs;
  Eigen::VectorXd sigma_a, sigma_b;
  MatcherOptions options;
};

// Lift + row-normalize the raw local descriptors into the matcher dimension.
inline Eigen::MatrixXd lift_descriptors(const Eigen::MatrixXd& raw, const MatcherParams& p,
                                        Eigen::MatrixXd* pre = nullptr,
                                        Eigen::VectorXd* norms = nullptr) {
  Eigen::MatrixXd x = (raw * p.lift_w.transpose()).rowwise() + p.lift_b.transpose();
  if (pre) *pre = x;
  Eigen::VectorXd n = nn::normalize_rows(x);
  if (norms) *norms = n;
  return x;
}

inline AssignmentResult forward(const DescriptorSet& a, const DescriptorSet& b,
                                const MatcherParams& params, const MatcherOptions& options,
                                ForwardTrace* trace = nullptr) {
  if (a.local_raw.rows() == 0 || b.local_raw.rows() == 0)
    throw EmptyInput("matcher forward needs at least one keypoint per image");

  ForwardTrace local_trace;
  ForwardTrace& tr = trace ? *trace : local_trace;
  tr.options = options;

  Eigen::MatrixXd x_a =
      lift_descriptors(a.local_raw, params, &tr.lift_pre_a, &tr.lift_norm_a);
  Eigen::MatrixXd x_b =
      lift_descriptors(b.local_raw, params, &tr.lift_pre_b, &tr.lift_norm_b);
  tr.pos_a = descriptors::pos_mlp_forward(a.coords, params.pos_mlp, &tr.pos_trace_a);
  tr.pos_b = descriptors::pos_mlp_forward(b.coords, params.pos_mlp, &tr.pos_trace_b);

  const Eigen::MatrixXd* mask_ab = nullptr;
  const Eigen::MatrixXd* mask_ba = nullptr;
  if (options.guidance) {
    tr.guidance_g = guidance_similarity(a.global_g, b.global_g);
    tr.mask_ab = guidance_mask(tr.guidance_g, options.k_percent);
    tr.mask_ba = guidance_mask(tr.guidance_g.transpose(), options.k_percent);
    mask_ab = &tr.mask_ab;
    mask_ba = &tr.mask_ba;
  }

  tr.blocks.resize(params.blocks.size());
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const BlockParams& bp = params.blocks[l];
    BlockTrace& bt = tr.blocks[l];
    x_a = self_attention_update(x_a, tr.pos_a, bp.self_attn, &bt.self_a);
    x_b = self_attention_update(x_b, tr.pos_b, bp.self_attn, &bt.self_b);
    // both cross directions read the post-self snapshot
    Eigen::MatrixXd x_a_new = cross_attention_update(x_a, x_b, bp.cross_attn, mask_ab,
                                                     options.mask_variant, &bt.cross_a);
    Eigen::MatrixXd x_b_new = cross_attention_update(x_b, x_a, bp.cross_attn, mask_ba,
                                                     options.mask_variant, &bt.cross_b);
    x_a = std::move(x_a_new);
    x_b = std::move(x_b_new);
  }

  tr.f_a = (x_a * params.head_w.transpose()).rowwise() + params.head_b.transpose();
  tr.f_b = (x_b * params.head_w.transpose()).rowwise() + params.head_b.transpose();
  tr.s = tr.f_a * tr.f_b.transpose();

  tr.z_a = x_a * params.match_w;
  tr.z_a.array() += params.match_b;
  tr.z_b = x_b * params.match_w;
  tr.z_b.array() += params.match_b;
  tr.sigma_a = tr.z_a.unaryExpr([](double v) { return nn::sigmoid(v); });
  tr.sigma_b = tr.z_b.unaryExpr([](double v) { return nn::sigmoid(v); });

  tr.log_rs = nn::log_softmax_rows(tr.s);
  tr.log_cs = nn::log_softmax_rows(tr.s.transpose()).transpose();
  tr.x_a = std::move(x_a);
  tr.x_b = std::move(x_b);

  AssignmentResult result;
  result.S = tr.s;
  result.sigmaA = tr.sigma_a;
  result.sigmaB = tr.sigma_b;
  result.tau = options.tau;
  Eigen::MatrixXd p = (tr.log_rs + tr.log_cs).array().exp().matrix();
  for (long i = 0; i < p.rows(); ++i)
    for (long j = 0; j < p.cols(); ++j) p(i, j) *= tr.sigma_a(i) * tr.sigma_b(j);
  result.P = std::move(p);
  result.matches = select_matches(result.P, options.tau);
  return result;
}

// ---------------------------------------------------------------------------
// Negative log-likelihood of the assignment (LightGlue composition): mean
// -log P over ground-truth pairs plus half the mean -log(1 - sigma) over
// unmatchable points of each image. log P is floored at 1e-30.

struct Supervision {
  std::vector<std::pair<int, int>> gt;  // keypoint index pairs (a, b)
  std::vector<int> unmatched_a, unmatched_b;
};

constexpr double kLogFloor = -69.07755278982137;  // log(1e-30)

inline double nll_loss(const Eigen::MatrixXd& p, const Eigen::VectorXd& sigma_a,
                       const Eigen::VectorXd& sigma_b, const Supervision& sup) {
  double loss = 0.0;
  if (!sup.gt.empty()) {
    double acc = 0.0;
    for (const auto& [i, j] : sup.gt)
      acc -= std::log(std::max(p(i, j), 1e-30));
    loss += acc / static_cast<double>(sup.gt.size());
  }
  if (!sup.unmatched_a.empty()) {
    double acc = 0.0;
    for (int i : sup.unmatched_a) acc -= std::log(std::max(1.0 - sigma_a(i), 1e-30));
    loss += 0.5 * acc / static_cast<double>(sup.unmatched_a.size());
  }
  if (!sup.unmatched_b.empty()) {
    double acc = 0.0;
    for (int j : sup.unmatched_b) acc -= std::log(std::max(1.0 - sigma_b(j), 1e-30));
    loss += 0.5 * acc / static_cast<double>(sup.unmatched_b.size());
  }
  return loss;
}

// Loss evaluated from a forward trace via log-softmax terms; identical in
// exact arithmetic to nll_loss on the assembled P matrix.
inline double trace_loss(const ForwardTrace& tr, const Supervision& sup) {
  double loss = 0.0;
  if (!sup.gt.empty()) {
    double acc = 0.0;
    for (const auto& [i, j] : sup.gt) {
      const double log_p = nn::log_sigmoid(tr.z_a(i)) + nn::log_sigmoid(tr.z_b(j)) +
                           tr.log_rs(i, j) + tr.log_cs(i, j);
      acc -= std::max(log_p, kLogFloor);
    }
    loss += acc / static_cast<double>(sup.gt.size());
  }
  if (!sup.unmatched_a.empty()) {
    double acc = 0.0;
    for (int i : sup.unmatched_a) acc -= nn::log_one_minus_sigmoid(tr.z_a(i));
    loss += 0.5 * acc / static_cast<double>(sup.unmatched_a.size());
  }
  if (!sup.unmatched_b.empty()) {
    double acc = 0.0;
    for (int j : sup.unmatched_b) acc -= nn::log_one_minus_sigmoid(tr.z_b(j));
    loss += 0.5 * acc / static_cast<double>(sup.unmatched_b.size());
  }
  return loss;
}

}  // namespace angiomatch::matcher
