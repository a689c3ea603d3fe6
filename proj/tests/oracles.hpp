// Brute-force reference implementations used as independent oracles by the
// unit and acceptance suites. Everything here is plain scalar loops over
// std::vector so it shares no code path with the library implementation.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat from_eigen(const Eigen::MatrixXd& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Eigen::MatrixXd to_eigen(const Mat& m) {
  Eigen::MatrixXd out(static_cast<long>(m.size()), static_cast<long>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) out(i, j) = m[i][j];
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// y = W x (+ b), W given row-wise
inline Vec matvec(const Mat& w, const Vec& x, const Vec* b = nullptr) {
  Vec y(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += w[i][j] * x[j];
    if (b) y[i] += (*b)[i];
  }
  return y;
}

inline Vec softmax(const Vec& a) {
  double m = -1e300;
  for (double v : a) m = std::max(m, v);
  Vec e(a.size());
  double z = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    e[i] = std::exp(a[i] - m);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct AttentionWeights {
  Mat wq, wk, wv;  // d x d
  Mat w1;          // 2d x 2d
  Vec b1;
  Mat w2;  // d x 2d
  Vec b2;
};

inline Vec mlp_update(const Vec& x, const Vec& msg, const AttentionWeights& w) {
  Vec c(x.size() + msg.size());
  std::copy(x.begin(), x.end(), c.begin());
  std::copy(msg.begin(), msg.end(), c.begin() + x.size());
  Vec h = matvec(w.w1, c, &w.b1);
  for (double& v : h) v = gelu(v);
  Vec u = matvec(w.w2, h, &w.b2);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + u[i];
  return out;
}

// Self attention as printed: a_ij = (q_i + p_i).(k_j + p_j)/sqrt(d); message is
// the softmax-weighted sum of values; residual MLP update on [x | m].
inline Mat self_attention_reference(const Mat& x, const Mat& pos, const AttentionWeights& w) {
  const std::size_t n = x.size(), d = x[0].size();
  Mat q(n), k(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = matvec(w.wq, x[i]);
    k[i] = matvec(w.wk, x[i]);
    v[i] = matvec(w.wv, x[i]);
    for (std::size_t c = 0; c < d; ++c) {
      q[i][c] += pos[i][c];
      k[i][c] += pos[i][c];
    }
  }
  Mat out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec logits(n);
    for (std::size_t j = 0; j < n; ++j) logits[j] = dot(q[i], k[j]) / std::sqrt(double(d));
    const Vec weights = softmax(logits);
    Vec msg(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) msg[c] += weights[j] * v[j][c];
    out[i] = mlp_update(x[i], msg, w);
  }
  return out;
}

// Cross attention: a_ij = q_i.k_j/sqrt(d), no positions. mask (optional):
// multiplicative form scales logits by the binary mask; otherwise masked
// entries drop out of the softmax entirely.
inline Mat cross_attention_reference(const Mat& x_i, const Mat& x_s, const AttentionWeights& w,
                                     const Mat* mask = nullptr, bool multiplicative = true) {
  const std::size_t m = x_i.size(), n = x_s.size(), d = x_i[0].size();
  Mat k(n), v(n);
  for (std::size_t j = 0; j < n; ++j) {
    k[j] = matvec(w.wk, x_s[j]);
    v[j] = matvec(w.wv, x_s[j]);
  }
  Mat out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Vec q = matvec(w.wq, x_i[i]);
    Vec logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      logits[j] = dot(q, k[j]) / std::sqrt(double(d));
      if (mask) {
        if (multiplicative)
          logits[j] *= (*mask)[i][j];
        else if ((*mask)[i][j] == 0.0)
          logits[j] = -std::numeric_limits<double>::infinity();
      }
    }
    const Vec weights = softmax(logits);
    Vec msg(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) msg[c] += weights[j] * v[j][c];
    out[i] = mlp_update(x_i[i], msg, w);
  }
  return out;
}

// Similarity matrix S_ij = f(x_a_i) . f(x_b_j), f linear with bias.
inline Mat similarity_reference(const Mat& x_a, const Mat& x_b, const Mat& head_w,
                                const Vec& head_b) {
  Mat fa(x_a.size()), fb(x_b.size());
  for (std::size_t i = 0; i < x_a.size(); ++i) fa[i] = matvec(head_w, x_a[i], &head_b);
  for (std::size_t j = 0; j < x_b.size(); ++j) fb[j] = matvec(head_w, x_b[j], &head_b);
  Mat s(x_a.size(), Vec(x_b.size()));
  for (std::size_t i = 0; i < x_a.size(); ++i)
    for (std::size_t j = 0; j < x_b.size(); ++j) s[i][j] = dot(fa[i], fb[j]);
  return s;
}

// Soft partial assignment P_ij = sigma_a_i sigma_b_j softmax_col(S)_ij
// softmax_row(S)_ij.
inline Mat assignment_reference(const Mat& s, const Vec& sigma_a, const Vec& sigma_b) {
  const std::size_t m = s.size(), n = s[0].size();
  Mat p(m, Vec(n));
  for (std::size_t i = 0; i < m; ++i) {
    const Vec row_sm = softmax(s[i]);
    for (std::size_t j = 0; j < n; ++j) {
      Vec col(m);
      for (std::size_t k = 0; k < m; ++k) col[k] = s[k][j];
      const Vec col_sm = softmax(col);
      p[i][j] = sigma_a[i] * sigma_b[j] * col_sm[i] * row_sm[j];
    }
  }
  return p;
}

// Mutual strict-argmax selection above tau.
inline std::vector<std::pair<int, int>> select_reference(const Mat& p, double tau) {
  const int m = static_cast<int>(p.size()), n = static_cast<int>(p[0].size());
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      if (!(p[i][j] > tau)) continue;
      bool strict = true;
      for (int jj = 0; jj < n && strict; ++jj)
        if (jj != j && p[i][jj] >= p[i][j]) strict = false;
      for (int ii = 0; ii < m && strict; ++ii)
        if (ii != i && p[ii][j] >= p[i][j]) strict = false;
      if (strict) out.push_back({i, j});
    }
  return out;
}

// Step-function integral of the empirical CDF of errors over [0, threshold],
// normalized by the threshold: integrates segment by segment between sorted
// breakpoints.
inline double auc_reference(std::vector<double> errors, double threshold) {
  std::sort(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());
  std::vector<double> breaks{0.0};
  for (double e : errors)
    if (e > 0.0 && e < threshold) breaks.push_back(e);
  breaks.push_back(threshold);
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    const double mid = 0.5 * (breaks[k] + breaks[k + 1]);
    double frac = 0.0;
    for (double e : errors)
      if (e <= mid) frac += 1.0;
    area += (breaks[k + 1] - breaks[k]) * frac / n;
  }
  return area / threshold;
}

}  // namespace oracle
