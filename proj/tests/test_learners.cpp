#include "oracles.hpp"
#include "wearstress/learners.hpp"
#include "wearstress/stack.hpp"

#include <gtest/gtest.h>

using namespace wearstress;

namespace {

struct Data {
  Matrix X;
  std::vector<int> y;
};

/// Three Gaussian blobs in d dimensions with centres 4 apart.
Data blobs(std::uint64_t seed, std::size_t n, Eigen::Index d = 3) {
  Rng rng(seed, "blobs");
  Data out;
  out.X.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    for (Eigen::Index j = 0; j < d; ++j) out.X(static_cast<Eigen::Index>(i), j) = rng.normal(j == c % d ? 4.0 : 0.0, 0.7);
    out.y.push_back(c);
  }
  return out;
}

/// Class = XOR of the signs of two uniform columns (classes 0 and 1 only).
Data xor_data(std::uint64_t seed, std::size_t n) {
  Rng rng(seed, "xor");
  Data out;
  out.X.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
    out.X.row(static_cast<Eigen::Index>(i)) << a, b;
    out.y.push_back((a > 0) != (b > 0) ? 1 : 0);
  }
  return out;
}

double accuracy(const Matrix& P, const std::vector<int>& y) {
  const auto pred = argmax_rows(P);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

void expect_rows_sum_to_one(const Matrix& P) {
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(P.row(i).minCoeff(), 0.0);
  }
}

ForestParams small_forest() {
  ForestParams p;
  p.n_trees = 60;
  p.min_samples_leaf = 1;
  p.seed = 3;
  return p;
}

BoostParams small_boost(std::size_t rounds = 50) {
  BoostParams p;
  p.n_rounds = rounds;
  p.early_stopping_rounds = 0;
  p.class_weight = {1.0, 1.0, 1.0};
  p.gamma = 0.0;
  p.max_depth = 4;
  return p;
}

/// Relative error |a - b| / max(|a| + |b|, floor).
double rel_err(double a, double b, double floor = 1e-8) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor); }

/// Exhaustive best root split by unweighted Gini decrease over every
/// feature and every midpoint between consecutive distinct values.
struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};
Split brute_force_gini_split(const Matrix& X, const std::vector<int>& y) {
  auto weighted_gini = [](const std::array<double, 3>& c) {
    const double n = c[0] + c[1] + c[2];
    if (n == 0) return 0.0;
    return n * (1.0 - (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) / (n * n));
  };
  std::array<double, 3> all{};
  for (int c : y) all[static_cast<std::size_t>(c)] += 1;
  Split best;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    std::vector<double> v(X.col(j).data(), X.col(j).data() + X.rows());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double thr = v[k] + (v[k + 1] - v[k]) / 2.0;
      std::array<double, 3> l{};
      for (Eigen::Index i = 0; i < X.rows(); ++i)
        if (X(i, j) <= thr) l[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])] += 1;
      std::array<double, 3> r{all[0] - l[0], all[1] - l[1], all[2] - l[2]};
      const double g = weighted_gini(all) - weighted_gini(l) - weighted_gini(r);
      if (g > best.gain + 1e-12) best = {static_cast<int>(j), thr, g};
    }
  }
  return best;
}

}  // namespace

TEST(Forest, SingleClassPredictsCertainty) {
  auto d = blobs(1, 30);
  std::fill(d.y.begin(), d.y.end(), 2);
  const auto m = forest_fit(d.X, d.y, small_forest());
  const Matrix P = predict_proba(m, d.X);
  for (Eigen::Index i = 0; i < P.rows(); ++i) EXPECT_EQ(P(i, 2), 1.0);
}

TEST(Forest, LearnsXor) {
  const auto train = xor_data(1, 400), test = xor_data(2, 400);
  const auto m = forest_fit(train.X, train.y, small_forest());
  EXPECT_GE(accuracy(predict_proba(m, test.X), test.y), 0.95);
}

TEST(Forest, ProbabilityIsMeanOfTreeDistributions) {
  const auto d = blobs(2, 90);
  const auto m = forest_fit(d.X, d.y, small_forest());
  const Matrix P = predict_proba(m, d.X);
  expect_rows_sum_to_one(P);
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    std::array<double, 3> acc{};
    for (const auto& t : m.trees) {
      const auto& leaf = t.nodes[t.leaf(d.X.row(i))].dist;
      const double s = leaf[0] + leaf[1] + leaf[2];
      for (std::size_t c = 0; c < 3; ++c) acc[c] += leaf[c] / s;
    }
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(P(i, c), acc[static_cast<std::size_t>(c)] / static_cast<double>(m.trees.size()), 1e-12);
  }
}

TEST(Forest, PredictionsPermuteWithRows) {
  const auto d = blobs(3, 60);
  const auto m = forest_fit(d.X, d.y, small_forest());
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(d.X.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng(4).shuffle(perm);
  Matrix Xp(d.X.rows(), d.X.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) Xp.row(static_cast<Eigen::Index>(i)) = d.X.row(perm[i]);
  const Matrix P = predict_proba(m, d.X), Pp = predict_proba(m, Xp);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_TRUE(Pp.row(static_cast<Eigen::Index>(i)) == P.row(perm[i]));
}

TEST(Forest, DeterministicAcrossThreadCounts) {
  const auto d = blobs(4, 120);
  set_threads(1);
  const auto a = forest_fit(d.X, d.y, small_forest());
  set_threads(3);
  const auto b = forest_fit(d.X, d.y, small_forest());
  set_threads(1);
  EXPECT_TRUE(a.trees == b.trees);
}

TEST(Tree, RootSplitMatchesExhaustiveGiniSearch) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s, "gini");
    const std::size_t n = 20 + rng.below(80);
    Matrix X(static_cast<Eigen::Index>(n), 4);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(3));
      for (Eigen::Index j = 0; j < 4; ++j) X(static_cast<Eigen::Index>(i), j) = std::round(4.0 * rng.normal(0.4 * y[i] * (j == 1), 1.0)) / 4.0;
    }
    std::vector<double> w(n, 1.0);
    std::vector<std::uint32_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0u);
    GiniCriterion crit{y, w};
    const Tree t = TreeGrower<GiniCriterion>(X, crit, {1, 1, 0}, nullptr).grow(sort_columns(X, rows));
    const auto oracle_split = brute_force_gini_split(X, y);
    ASSERT_EQ(t.nodes[0].feature, oracle_split.feature) << s;
    EXPECT_EQ(t.nodes[0].threshold, oracle_split.threshold) << s;
    EXPECT_NEAR(t.nodes[0].gain, oracle_split.gain, 1e-9) << s;
  }
}

TEST(Boost, ZeroRoundsPredictsPriors) {
  const auto d = blobs(5, 30);
  auto y = d.y;
  y[0] = y[1] = y[2] = 0;  // priors 12/30, 9/30, 9/30
  const auto m = boost_fit(d.X, y, small_boost(0));
  const Matrix P = predict_proba(m, d.X);
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    EXPECT_NEAR(P(i, 0), 12.0 / 30.0, 1e-12);
    EXPECT_NEAR(P(i, 1), 9.0 / 30.0, 1e-12);
    EXPECT_NEAR(P(i, 2), 9.0 / 30.0, 1e-12);
  }
}

TEST(Boost, TrainingLossNeverIncreases) {
  const auto d = blobs(6, 150);
  const auto m = boost_fit(d.X, d.y, small_boost(60));
  ASSERT_EQ(m.train_loss.size(), 60u);
  for (std::size_t r = 1; r < m.train_loss.size(); ++r) EXPECT_LE(m.train_loss[r], m.train_loss[r - 1] + 1e-12) << r;
}

TEST(Boost, SeparableDataFitPerfectly) {
  const auto d = blobs(7, 90);
  const auto m = boost_fit(d.X, d.y, small_boost(50));
  const Matrix P = predict_proba(m, d.X);
  expect_rows_sum_to_one(P);
  EXPECT_EQ(accuracy(P, d.y), 1.0);
}

TEST(Boost, EarlyStoppingTruncatesToBestRound) {
  const auto d = blobs(8, 200);
  auto p = small_boost(300);
  p.early_stopping_rounds = 5;
  const auto m = boost_fit(d.X, d.y, p);
  ASSERT_FALSE(m.valid_loss.empty());
  EXPECT_EQ(m.rounds.size(), m.valid_loss.size());
  EXPECT_EQ(std::min_element(m.valid_loss.begin(), m.valid_loss.end()) - m.valid_loss.begin(),
            static_cast<std::ptrdiff_t>(m.valid_loss.size()) - 1);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  for (bool bn : {false, true}) {
    MlpParams p;
    p.hidden = {2};
    p.batch_norm = bn;
    p.dropout = 0.0;
    p.seed = 11;
    auto m = mlp_init(4, p);
    const auto d = blobs(9, 10, 4);
    auto params = m.parameters();
    const auto [loss, grad] = mlp_loss_and_grad(m, d.X, d.y);
    ASSERT_EQ(grad.size(), params.size());
    const double h = 1e-6;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto plus = params, minus = params;
      plus[k] += h;
      minus[k] -= h;
      m.set_parameters(plus);
      const double fp = mlp_loss_and_grad(m, d.X, d.y).first;
      m.set_parameters(minus);
      const double fm = mlp_loss_and_grad(m, d.X, d.y).first;
      m.set_parameters(params);
      const double numeric = (fp - fm) / (2.0 * h);
      // Biases feeding batch norm have an exact zero gradient; central
      // differences at h = 1e-6 carry about 1e-10 of roundoff there.
      if (std::abs(grad[k] - numeric) < 1e-8) continue;
      EXPECT_LT(rel_err(grad[k], numeric), 1e-4) << "bn=" << bn << " k=" << k << " analytic " << grad[k] << " numeric " << numeric;
    }
    EXPECT_TRUE(std::isfinite(loss));
  }
}

TEST(Mlp, SeparatesBlobs) {
  const auto train = blobs(10, 300), test = blobs(11, 300);
  MlpParams p;
  p.hidden = {32, 16};
  p.epochs = 60;
  p.seed = 2;
  const auto m = mlp_fit(train.X, train.y, p);
  const Matrix P = predict_proba(m, test.X);
  expect_rows_sum_to_one(P);
  EXPECT_GE(accuracy(P, test.y), 0.98);
}

TEST(Mlp, Deterministic) {
  const auto d = blobs(12, 120);
  MlpParams p;
  p.hidden = {16};
  p.epochs = 5;
  EXPECT_TRUE(mlp_fit(d.X, d.y, p) == mlp_fit(d.X, d.y, p));
}

TEST(LogReg, ZeroWeightsGiveLogThree) {
  const auto d = blobs(13, 30);
  const Matrix W = Matrix::Zero(3, d.X.cols() + 1);
  const double f = logreg_loss_and_grad(W, d.X, d.y, 1.0, {true, true, true}, nullptr);
  EXPECT_NEAR(f, std::log(3.0), 1e-15);
}

TEST(LogReg, GradientMatchesFiniteDifferences) {
  const auto d = blobs(14, 25, 4);
  Rng rng(15);
  Matrix W(3, 5);
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = rng.normal(0.0, 0.5);
  Matrix g;
  logreg_loss_and_grad(W, d.X, d.y, 0.7, {true, true, true}, &g);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < W.size(); ++k) {
    Matrix Wp = W, Wm = W;
    Wp.data()[k] += h;
    Wm.data()[k] -= h;
    const double numeric = (logreg_loss_and_grad(Wp, d.X, d.y, 0.7, {true, true, true}, nullptr) -
                            logreg_loss_and_grad(Wm, d.X, d.y, 0.7, {true, true, true}, nullptr)) /
                           (2.0 * h);
    EXPECT_LT(rel_err(g.data()[k], numeric), 1e-5) << k;
  }
}

TEST(LogReg, SeparatesOneDimensionalClasses) {
  Matrix X(30, 1);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) {
    X(i, 0) = (i % 3) * 10.0 + 0.1 * (i / 3);
    y.push_back(i % 3);
  }
  LogRegParams p;
  p.C = 100.0;
  const auto m = logreg_fit(X, y, p);
  const Matrix P = predict_proba(m, X);
  expect_rows_sum_to_one(P);
  EXPECT_EQ(accuracy(P, y), 1.0);
}

TEST(LogReg, SingleRowMatchesBatch) {
  const auto d = blobs(16, 60);
  const auto m = logreg_fit(d.X, d.y);
  const Matrix P = predict_proba(m, d.X);
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    const Matrix one = predict_proba(m, Matrix(d.X.row(i)));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(one(0, c), P(i, c), 1e-12);
  }
}

TEST(LogReg, AbsentClassKeepsZeroWeights) {
  auto d = blobs(17, 60);
  for (int& c : d.y)
    if (c == 2) c = 0;
  const auto m = logreg_fit(d.X, d.y);
  EXPECT_TRUE(m.W.row(2).isZero());
}

TEST(Config, PresetsMatchPublishedValues) {
  const auto impl = learner_preset("implementation");
  EXPECT_EQ(impl.forest.n_trees, 500u);
  EXPECT_EQ(impl.forest.min_samples_leaf, 5u);
  EXPECT_TRUE(impl.forest.balanced);
  EXPECT_EQ(impl.boost.max_depth, 7u);
  EXPECT_DOUBLE_EQ(impl.boost.gamma, 1.2);
  EXPECT_DOUBLE_EQ(impl.boost.class_weight[1], 6.3);
  EXPECT_EQ(impl.mlp.hidden, (std::vector<std::size_t>{256, 128, 64}));
  EXPECT_DOUBLE_EQ(impl.mlp.dropout, 0.3);
  const auto method = learner_preset("method");
  EXPECT_EQ(method.forest.n_trees, 200u);
  EXPECT_EQ(method.boost.max_depth, 8u);
  EXPECT_DOUBLE_EQ(method.boost.gamma, 0.5);
  EXPECT_EQ(method.mlp.hidden, (std::vector<std::size_t>{128, 64, 32}));
  EXPECT_THROW(learner_preset("fast"), ConfigError);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  auto c = learner_preset("method");
  c.boost.n_rounds = 17;
  c.mlp.hidden = {8, 4};
  const auto back = learner_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_THROW(learner_config_from_json(nlohmann::json::parse(R"({"forest":{"n_tree":5}})")), ConfigError);
  EXPECT_THROW(learner_config_from_json(nlohmann::json::parse(R"({"knn":{}})")), ConfigError);
  EXPECT_THROW(learner_config_from_json(nlohmann::json::parse(R"({"boost":{"gamma":"high"}})")), ConfigError);
}

TEST(Serialization, EveryLearnerRoundTrips) {
  const auto d = blobs(18, 90);
  const auto f = forest_fit(d.X, d.y, small_forest());
  const auto b = boost_fit(d.X, d.y, small_boost(10));
  MlpParams mp;
  mp.hidden = {8};
  mp.epochs = 3;
  const auto m = mlp_fit(d.X, d.y, mp);
  const auto l = logreg_fit(d.X, d.y);
  const ModelHeader h{"", "method", "abc", nlohmann::ordered_json::object()};
  EXPECT_TRUE(decode_model<ForestModel>(encode_model(f, h)).trees == f.trees);
  EXPECT_TRUE(decode_model<BoostModel>(encode_model(b, h)) == b);
  EXPECT_TRUE(decode_model<MlpModel>(encode_model(m, h)) == m);
  EXPECT_TRUE(decode_model<LogRegModel>(encode_model(l, h)).W == l.W);
  const auto bytes = encode_model(f, h);
  EXPECT_THROW(decode_model<BoostModel>(bytes), FormatError);
  EXPECT_THROW(decode_model<ForestModel>(bytes.substr(0, bytes.size() - 3)), FormatError);
}
