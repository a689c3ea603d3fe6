#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "angiomatch/matcher.hpp"
#include "angiomatch/matcher_grad.hpp"
#include "angiomatch/train.hpp"
#include "angiomatch/rng.hpp"

using namespace angiomatch;
using namespace angiomatch::matcher;

namespace {

Eigen::MatrixXd random_matrix(long r, long c, Rng& rng, double s = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0, s);
  return m;
}

DescriptorSet random_descriptor_set(int n, int local_c, int global_c, Rng& rng) {
  DescriptorSet set;
  set.local_raw = random_matrix(n, local_c, rng);
  set.global_g = random_matrix(n, global_c, rng);
  set.coords = random_matrix(n, 2, rng, 0.5);
  set.image_width = 512;
  set.image_height = 512;
  set.keypoints.resize(n);
  for (int i = 0; i < n; ++i)
    set.keypoints[i] =
        Eigen::Vector2d(255.5 * (1.0 + set.coords(i, 0)), 255.5 * (1.0 + set.coords(i, 1)));
  return set;
}

Supervision random_supervision(int m, int n, Rng& rng) {
  Supervision sup;
  std::vector<int> a_idx(m), b_idx(n);
  std::iota(a_idx.begin(), a_idx.end(), 0);
  std::iota(b_idx.begin(), b_idx.end(), 0);
  for (std::size_t i = a_idx.size(); i > 1; --i) std::swap(a_idx[i - 1], a_idx[rng.below(i)]);
  for (std::size_t i = b_idx.size(); i > 1; --i) std::swap(b_idx[i - 1], b_idx[rng.below(i)]);
  const int n_gt = std::min({m, n, 1 + static_cast<int>(rng.below(4))});
  for (int k = 0; k < n_gt; ++k) sup.gt.push_back({a_idx[k], b_idx[k]});
  for (int k = n_gt; k < m; ++k)
    if (rng.uniform() < 0.6) sup.unmatched_a.push_back(a_idx[k]);
  for (int k = n_gt; k < n; ++k)
    if (rng.uniform() < 0.6) sup.unmatched_b.push_back(b_idx[k]);
  return sup;
}

struct Instance {
  DescriptorSet a, b;
  Supervision sup;
  MatcherParams params;
  MatcherOptions options;
};

Instance random_instance(std::uint64_t seed) {
  Rng rng(seed);
  Instance in;
  const int m = 1 + static_cast<int>(rng.below(8));
  const int n = 1 + static_cast<int>(rng.below(8));
  const int d = 4 << rng.below(3);  // 4, 8, 16
  const int blocks = 1 + static_cast<int>(rng.below(2));
  const int local_c = 6;
  in.a = random_descriptor_set(m, local_c, 5, rng);
  in.b = random_descriptor_set(n, local_c, 5, rng);
  in.sup = random_supervision(m, n, rng);
  in.params = init_params(d, blocks, rng, local_c, 8);
  in.options.guidance = (seed % 2 == 0);
  in.options.k_percent = (seed % 4 < 2) ? 60.0 : 35.0;
  in.options.mask_variant =
      (seed % 3 == 0) ? MaskVariant::NegativeInfinity : MaskVariant::Multiplicative;
  return in;
}

double loss_only(const Instance& in, const MatcherParams& params) {
  ForwardTrace tr;
  forward(in.a, in.b, params, in.options, &tr);
  return trace_loss(tr, in.sup);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  // 20 random instances, every parameter group; the per-group norm-relative
  // error must stay under 1e-4 at fp64
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Instance in = random_instance(seed);
    MatcherParams grad = zero_like(in.params);
    loss_and_backward(in.a, in.b, in.params, in.options, in.sup, grad);

    auto p_tensors = collect_tensors(in.params);
    auto g_tensors = collect_tensors(grad);
    const double h = 1e-5;
    for (std::size_t t = 0; t < p_tensors.size(); ++t) {
      double num2 = 0.0, an2 = 0.0, fd2 = 0.0;
      for (long q = 0; q < p_tensors[t].size(); ++q) {
        const double orig = p_tensors[t].data[q];
        p_tensors[t].data[q] = orig + h;
        const double up = loss_only(in, in.params);
        p_tensors[t].data[q] = orig - h;
        const double dn = loss_only(in, in.params);
        p_tensors[t].data[q] = orig;
        const double fd = (up - dn) / (2.0 * h);
        const double an = g_tensors[t].data[q];
        num2 += (fd - an) * (fd - an);
        an2 += an * an;
        fd2 += fd * fd;
      }
      const double rel =
          std::sqrt(num2) / std::max({std::sqrt(an2), std::sqrt(fd2), 1e-8});
      INFO("seed " << seed << " tensor " << p_tensors[t].name);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("empty supervision yields zero loss and zero gradients") {
  Instance in = random_instance(33);
  in.sup = Supervision{};
  MatcherParams grad = zero_like(in.params);
  const double loss = loss_and_backward(in.a, in.b, in.params, in.options, in.sup, grad);
  CHECK(loss == 0.0);
  for (const auto& t : collect_tensors(grad))
    for (long q = 0; q < t.size(); ++q) CHECK(std::abs(t.data[q]) < 1e-10);
}

TEST_CASE("unmatched supervision alone drives the matchability head") {
  Instance in = random_instance(7);
  in.sup.gt.clear();
  in.sup.unmatched_a = {0};
  in.sup.unmatched_b.clear();
  MatcherParams grad = zero_like(in.params);
  loss_and_backward(in.a, in.b, in.params, in.options, in.sup, grad);
  CHECK(grad.match_w.lpNorm<Eigen::Infinity>() > 1e-12);
  CHECK(std::abs(grad.match_b) > 1e-12);
}

TEST_CASE("the two loss routes agree") {
  for (std::uint64_t seed = 40; seed < 60; ++seed) {
    Instance in = random_instance(seed);
    ForwardTrace tr;
    const AssignmentResult res = forward(in.a, in.b, in.params, in.options, &tr);
    const double via_trace = trace_loss(tr, in.sup);
    const double via_p = nll_loss(res.P, res.sigmaA, res.sigmaB, in.sup);
    CHECK(std::abs(via_trace - via_p) < 1e-10 * std::max(1.0, std::abs(via_p)));
  }
}

TEST_CASE("one optimizer step reduces the loss on a toy instance") {
  Instance in = random_instance(11);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  const double before = loss_only(in, in.params);
  MatcherParams grad = zero_like(in.params);
  loss_and_backward(in.a, in.b, in.params, in.options, in.sup, grad);
  AdamState adam = init_adam(in.params);
  adam_step(in.params, grad, adam, cfg);
  const double after = loss_only(in, in.params);
  CHECK(after < before);
}

TEST_CASE("weights round-trip through the binary format") {
  Rng rng(5);
  MatcherParams p = init_params(16, 2, rng, 6, 8);
  const std::string path =
      (std::filesystem::temp_directory_path() / "am_weights_test.bin").string();
  matcher::save_weights(path, p);
  MatcherParams q = matcher::load_weights(path);
  auto pt = collect_tensors(p);
  auto qt = collect_tensors(q);
  REQUIRE(pt.size() == qt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) {
    REQUIRE(pt[i].rows == qt[i].rows);
    REQUIRE(pt[i].cols == qt[i].cols);
    for (long k = 0; k < pt[i].size(); ++k)
      CHECK(qt[i].data[k] == Catch::Approx(pt[i].data[k]).margin(1e-6));
  }
  std::filesystem::remove(path);
}
