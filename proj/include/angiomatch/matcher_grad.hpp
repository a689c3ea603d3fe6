#pragma once

#include "angiomatch/matcher.hpp"

namespace angiomatch::matcher {

// Reverse-mode gradients, layer by layer, mirroring the forward caches. All
// functions accumulate (+=) into their output gradients.

namespace detail {

// Shared tail of both attention layers: residual + update MLP + message.
// Returns d(msg); accumulates dx_q (residual + concat slot) and MLP grads.
inline Eigen::MatrixXd attention_mlp_backward(const AttentionTrace& tr,
                                              const AttentionParams& ap,
                                              const Eigen::MatrixXd& d_out,
                                              Eigen::MatrixXd& dx_q, AttentionParams& grad) {
  const long d = ap.wq.rows();
  dx_q += d_out;  // residual path
  const Eigen::MatrixXd hact = nn::gelu(tr.h1);
  grad.w2 += d_out.transpose() * hact;
  grad.b2 += d_out.colwise().sum().transpose();
  const Eigen::MatrixXd dhact = d_out * ap.w2;
  const Eigen::MatrixXd dh1 = dhact.cwiseProduct(nn::gelu_grad(tr.h1));
  Eigen::MatrixXd c(tr.x_q.rows(), 2 * d);
  c << tr.x_q, tr.msg;
  grad.w1 += dh1.transpose() * c;
  grad.b1 += dh1.colwise().sum().transpose();
  const Eigen::MatrixXd dc = dh1 * ap.w1;
  dx_q += dc.leftCols(d);
  return dc.rightCols(d);  // d(msg)
}

}  // namespace detail

inline void self_attention_backward(const AttentionTrace& tr, const AttentionParams& ap,
                                    const Eigen::MatrixXd& d_out, Eigen::MatrixXd& dx,
                                    Eigen::MatrixXd& dpos, AttentionParams& grad) {
  const long d = ap.wq.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const Eigen::MatrixXd dmsg = detail::attention_mlp_backward(tr, ap, d_out, dx, grad);

  const Eigen::MatrixXd dw = dmsg * tr.v.transpose();
  const Eigen::MatrixXd dv = tr.w.transpose() * dmsg;
  const Eigen::MatrixXd da = nn::softmax_rows_backward(tr.w, dw);
  const Eigen::MatrixXd dqp = da * tr.kp * inv_sqrt_d;
  const Eigen::MatrixXd dkp = da.transpose() * tr.qp * inv_sqrt_d;
  dpos += dqp + dkp;  // positions enter both q and k
  grad.wq += dqp.transpose() * tr.x_q;
  dx += dqp * ap.wq;
  grad.wk += dkp.transpose() * tr.x_q;
  dx += dkp * ap.wk;
  grad.wv += dv.transpose() * tr.x_q;
  dx += dv * ap.wv;
}

// mask may be null; the guidance mask is data, no gradient flows through its
// construction. Under the NegativeInfinity variant masked weights are exactly
// zero so the softmax backward already blocks those paths.
inline void cross_attention_backward(const AttentionTrace& tr, const AttentionParams& ap,
                                     const Eigen::MatrixXd* mask, MaskVariant variant,
                                     const Eigen::MatrixXd& d_out, Eigen::MatrixXd& dx_q,
                                     Eigen::MatrixXd& dx_s, AttentionParams& grad) {
  const long d = ap.wq.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const Eigen::MatrixXd dmsg = detail::attention_mlp_backward(tr, ap, d_out, dx_q, grad);

  const Eigen::MatrixXd dw = dmsg * tr.v.transpose();
  const Eigen::MatrixXd dv = tr.w.transpose() * dmsg;
  Eigen::MatrixXd da = nn::softmax_rows_backward(tr.w, dw);
  if (mask && variant == MaskVariant::Multiplicative) da = da.cwiseProduct(*mask);
  const Eigen::MatrixXd dq = da * tr.kp * inv_sqrt_d;
  const Eigen::MatrixXd dk = da.transpose() * tr.qp * inv_sqrt_d;
  grad.wq += dq.transpose() * tr.x_q;
  dx_q += dq * ap.wq;
  grad.wk += dk.transpose() * tr.x_s;
  dx_s += dk * ap.wk;
  grad.wv += dv.transpose() * tr.x_s;
  dx_s += dv * ap.wv;
}

namespace detail {

// Backward through lift + row normalization. dx0 is the gradient w.r.t. the
// normalized rows.
inline void lift_backward(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& pre,
                          const Eigen::VectorXd& norms, const Eigen::MatrixXd& dx0,
                          MatcherParams& grad) {
  Eigen::MatrixXd dpre(pre.rows(), pre.cols());
  for (long i = 0; i < pre.rows(); ++i) {
    const double n = norms(i);
    if (n > 1e-12) {
      const Eigen::RowVectorXd unit = pre.row(i) / n;
      const double dot = unit.dot(dx0.row(i));
      dpre.row(i) = (dx0.row(i) - dot * unit) / n;
    } else {
      dpre.row(i).setZero();
    }
  }
  grad.lift_w += dpre.transpose() * raw;
  grad.lift_b += dpre.colwise().sum().transpose();
}

}  // namespace detail

// Forward + loss + full backward. Gradients accumulate into grad (caller
// zeroes or batches as needed). Returns the loss; optionally hands out the
// assignment result of the forward pass.
inline double loss_and_backward(const DescriptorSet& a, const DescriptorSet& b,
                                const MatcherParams& params, const MatcherOptions& options,
                                const Supervision& sup, MatcherParams& grad,
                                AssignmentResult* result_out = nullptr) {
  ForwardTrace tr;
  AssignmentResult result = forward(a, b, params, options, &tr);
  if (result_out) *result_out = std::move(result);
  const double loss = trace_loss(tr, sup);

  const long m = tr.s.rows(), n = tr.s.cols();
  const int d = params.dim;
  Eigen::MatrixXd ds = Eigen::MatrixXd::Zero(m, n);
  Eigen::VectorXd dz_a = Eigen::VectorXd::Zero(m), dz_b = Eigen::VectorXd::Zero(n);

  if (!sup.gt.empty()) {
    const double inv = 1.0 / static_cast<double>(sup.gt.size());
    const Eigen::MatrixXd rs = tr.log_rs.array().exp().matrix();
    const Eigen::MatrixXd cs = tr.log_cs.array().exp().matrix();
    for (const auto& [i, j] : sup.gt) {
      const double log_p = nn::log_sigmoid(tr.z_a(i)) + nn::log_sigmoid(tr.z_b(j)) +
                           tr.log_rs(i, j) + tr.log_cs(i, j);
      if (log_p <= kLogFloor) continue;  // clamped term, zero gradient
      dz_a(i) -= inv * (1.0 - tr.sigma_a(i));
      dz_b(j) -= inv * (1.0 - tr.sigma_b(j));
      ds.row(i) += inv * rs.row(i);
      ds.col(j) += inv * cs.col(j);
      ds(i, j) -= 2.0 * inv;  // the two one-hot terms of row- and col-softmax
    }
  }
  if (!sup.unmatched_a.empty()) {
    const double w = 0.5 / static_cast<double>(sup.unmatched_a.size());
    for (int i : sup.unmatched_a) dz_a(i) += w * tr.sigma_a(i);
  }
  if (!sup.unmatched_b.empty()) {
    const double w = 0.5 / static_cast<double>(sup.unmatched_b.size());
    for (int j : sup.unmatched_b) dz_b(j) += w * tr.sigma_b(j);
  }

  // assignment head: S = f_a f_b^T with f = x W^T + b
  const Eigen::MatrixXd df_a = ds * tr.f_b;
  const Eigen::MatrixXd df_b = ds.transpose() * tr.f_a;
  grad.head_w += df_a.transpose() * tr.x_a + df_b.transpose() * tr.x_b;
  grad.head_b += df_a.colwise().sum().transpose() + df_b.colwise().sum().transpose();
  Eigen::MatrixXd dx_a = df_a * params.head_w;
  Eigen::MatrixXd dx_b = df_b * params.head_w;

  // matchability head
  grad.match_w += tr.x_a.transpose() * dz_a + tr.x_b.transpose() * dz_b;
  grad.match_b += dz_a.sum() + dz_b.sum();
  dx_a += dz_a * params.match_w.transpose();
  dx_b += dz_b * params.match_w.transpose();

  const Eigen::MatrixXd* mask_ab = tr.options.guidance ? &tr.mask_ab : nullptr;
  const Eigen::MatrixXd* mask_ba = tr.options.guidance ? &tr.mask_ba : nullptr;

  Eigen::MatrixXd dpos_a = Eigen::MatrixXd::Zero(m, d);
  Eigen::MatrixXd dpos_b = Eigen::MatrixXd::Zero(n, d);
  for (int l = static_cast<int>(params.blocks.size()) - 1; l >= 0; --l) {
    const BlockParams& bp = params.blocks[l];
    const BlockTrace& bt = tr.blocks[l];
    AttentionParams& gcross = grad.blocks[l].cross_attn;
    AttentionParams& gself = grad.blocks[l].self_attn;
    // both cross directions read the post-self snapshots
    Eigen::MatrixXd dxa_snap = Eigen::MatrixXd::Zero(m, d);
    Eigen::MatrixXd dxb_snap = Eigen::MatrixXd::Zero(n, d);
    cross_attention_backward(bt.cross_a, bp.cross_attn, mask_ab, tr.options.mask_variant, dx_a,
                             dxa_snap, dxb_snap, gcross);
    cross_attention_backward(bt.cross_b, bp.cross_attn, mask_ba, tr.options.mask_variant, dx_b,
                             dxb_snap, dxa_snap, gcross);
    dx_a.setZero();
    dx_b.setZero();
    self_attention_backward(bt.self_a, bp.self_attn, dxa_snap, dx_a, dpos_a, gself);
    self_attention_backward(bt.self_b, bp.self_attn, dxb_snap, dx_b, dpos_b, gself);
  }

  // position embeddings are computed once and reused by every block
  descriptors::pos_mlp_backward(tr.pos_trace_a, params.pos_mlp, dpos_a, grad.pos_mlp);
  descriptors::pos_mlp_backward(tr.pos_trace_b, params.pos_mlp, dpos_b, grad.pos_mlp);

  detail::lift_backward(a.local_raw, tr.lift_pre_a, tr.lift_norm_a, dx_a, grad);
  detail::lift_backward(b.local_raw, tr.lift_pre_b, tr.lift_norm_b, dx_b, grad);
  return loss;
}

}  // namespace angiomatch::matcher
