#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "angiomatch/matcher.hpp"
#include "angiomatch/train.hpp"
#include "angiomatch/rng.hpp"

using namespace angiomatch;
using namespace angiomatch::matcher;

namespace {

// Synthetic learnable pairs: ground-truth partners share a latent raw
// descriptor (plus noise) and nearby normalized coordinates.
TrainingExample planted_example(int m, int n, int n_gt, Rng& rng) {
  TrainingExample ex;
  auto rand_mat = [&rng](long r, long c, double s) {
    Eigen::MatrixXd v(r, c);
    for (long i = 0; i < v.size(); ++i) v.data()[i] = rng.normal(0, s);
    return v;
  };
  ex.a.local_raw = rand_mat(m, 12, 1.0);
  ex.b.local_raw = rand_mat(n, 12, 1.0);
  ex.a.global_g = rand_mat(m, 6, 1.0);
  ex.b.global_g = rand_mat(n, 6, 1.0);
  ex.a.coords = rand_mat(m, 2, 0.5);
  ex.b.coords = rand_mat(n, 2, 0.5);
  ex.a.image_width = ex.b.image_width = 512;
  ex.a.image_height = ex.b.image_height = 512;
  ex.a.keypoints.assign(m, Eigen::Vector2d(0, 0));
  ex.b.keypoints.assign(n, Eigen::Vector2d(0, 0));
  for (int i = 0; i < m; ++i)
    ex.a.keypoints[i] = Eigen::Vector2d(255.5 * (1 + ex.a.coords(i, 0)),
                                        255.5 * (1 + ex.a.coords(i, 1)));
  for (int k = 0; k < n_gt; ++k) {
    ex.b.local_raw.row(k) = ex.a.local_raw.row(k) + 0.05 * rand_mat(1, 12, 1.0);
    ex.b.global_g.row(k) = ex.a.global_g.row(k) + 0.05 * rand_mat(1, 6, 1.0);
    ex.b.coords.row(k) = ex.a.coords.row(k) + 0.02 * rand_mat(1, 2, 1.0);
    ex.sup.gt.push_back({k, k});
  }
  for (int i = 0; i < n; ++i)
    ex.b.keypoints[i] = Eigen::Vector2d(255.5 * (1 + ex.b.coords(i, 0)),
                                        255.5 * (1 + ex.b.coords(i, 1)));
  for (int i = n_gt; i < m; ++i) ex.sup.unmatched_a.push_back(i);
  for (int j = n_gt; j < n; ++j) ex.sup.unmatched_b.push_back(j);
  return ex;
}

bool params_equal(MatcherParams& a, MatcherParams& b) {
  auto ta = collect_tensors(a), tb = collect_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].size() != tb[i].size()) return false;
    if (std::memcmp(ta[i].data, tb[i].data, sizeof(double) * ta[i].size()) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("a single pair overfits with mostly monotone loss") {
  Rng rng(3);
  std::vector<TrainingExample> train_set{planted_example(10, 12, 7, rng)};
  TrainConfig cfg;
  cfg.dim = 16;
  cfg.num_blocks = 2;
  cfg.pos_hidden = 8;
  cfg.lr = 1e-3;
  cfg.epochs = 200;  // one step per epoch with a single pair
  cfg.batch = 1;
  cfg.seed = 5;
  const TrainResult res = train(train_set, {}, cfg);
  REQUIRE(res.log.size() == 200);
  int increases = 0;
  for (std::size_t i = 1; i < res.log.size(); ++i)
    if (res.log[i].loss > res.log[i - 1].loss) ++increases;
  CHECK(increases <= 10);  // <= 5% non-monotone steps
  CHECK(res.log.back().loss < 0.25 * res.log.front().loss);
}

TEST_CASE("training is deterministic given seed and data") {
  Rng rng(9);
  std::vector<TrainingExample> train_set;
  for (int i = 0; i < 6; ++i) train_set.push_back(planted_example(8, 9, 5, rng));
  TrainConfig cfg;
  cfg.dim = 16;
  cfg.num_blocks = 1;
  cfg.pos_hidden = 8;
  cfg.lr = 1e-3;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.seed = 77;
  TrainResult r1 = train(train_set, {}, cfg);
  TrainResult r2 = train(train_set, {}, cfg);
  CHECK(params_equal(r1.params, r2.params));
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r2.log[i].loss);
}

TEST_CASE("training resumes exactly from a checkpoint") {
  namespace fs = std::filesystem;
  Rng rng(21);
  std::vector<TrainingExample> train_set;
  for (int i = 0; i < 5; ++i) train_set.push_back(planted_example(7, 8, 4, rng));
  const fs::path dir = fs::temp_directory_path() / "am_ckpt_test";
  fs::remove_all(dir);

  TrainConfig cfg;
  cfg.dim = 16;
  cfg.num_blocks = 1;
  cfg.pos_hidden = 8;
  cfg.lr = 1e-3;
  cfg.epochs = 4;
  cfg.batch = 2;
  cfg.seed = 13;

  TrainResult straight = train(train_set, {}, cfg);

  TrainConfig cfg_half = cfg;
  cfg_half.epochs = 2;
  cfg_half.checkpoint_dir = dir.string();
  train(train_set, {}, cfg_half);
  const Checkpoint ck = load_checkpoint((dir / "epoch_1.ckpt").string());
  CHECK(ck.next_epoch == 2);
  TrainResult resumed = train(train_set, {}, cfg, &ck);

  CHECK(params_equal(straight.params, resumed.params));
  fs::remove_all(dir);
}

TEST_CASE("training rejects bad hyperparameters") {
  Rng rng(1);
  std::vector<TrainingExample> train_set{planted_example(6, 6, 4, rng)};
  TrainConfig cfg;
  cfg.lr = -1.0;
  CHECK_THROWS_AS(train(train_set, {}, cfg), ConfigError);
  TrainConfig cfg2;
  CHECK_THROWS_AS(train({}, {}, cfg2), ConfigError);
  TrainConfig cfg3;
  cfg3.k_percent = 0.0;
  CHECK_THROWS_AS(train(train_set, {}, cfg3), ConfigError);
}

TEST_CASE("validation match AUC improves while overfitting a tiny set") {
  Rng rng(31);
  std::vector<TrainingExample> train_set;
  for (int i = 0; i < 4; ++i) train_set.push_back(planted_example(10, 10, 8, rng));
  TrainConfig cfg;
  cfg.dim = 16;
  cfg.num_blocks = 2;
  cfg.pos_hidden = 8;
  cfg.lr = 3e-3;
  cfg.epochs = 30;
  cfg.batch = 2;
  cfg.seed = 3;
  const TrainResult res = train(train_set, train_set, cfg);
  CHECK(res.log.back().val_match_auc > res.log.front().val_match_auc);
  CHECK(res.log.back().val_match_auc > 0.5);
}
