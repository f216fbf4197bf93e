#include "oracles.hpp"
#include "wearstress/stack.hpp"
#include "wearstress/synthetic_tasks.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace wearstress;

namespace {

StackParams light_params(std::uint64_t seed = 1) {
  StackParams p;
  p.learners = learner_preset("implementation");
  p.learners.forest.n_trees = 20;
  p.learners.boost.n_rounds = 10;
  p.learners.mlp.hidden = {8};
  p.learners.mlp.epochs = 5;
  p.importance_repeats = 2;
  p.seed = seed;
  return p;
}

const FeatureTable& task() {
  static const FeatureTable t = [] {
    ComplementaryTaskConfig c;
    c.seed = 5;
    c.shifts_per_subject = 4;
    c.rows_per_shift = 12;
    return complementary_task(c);
  }();
  return t;
}

struct Fitted {
  StackModel model;
  StackFitInfo info;
};

const Fitted& fitted() {
  static const Fitted f = [] {
    Fitted out;
    out.model = stack_fit(task().X, task().y, light_params(), &out.info, "feedbeef");
    return out;
  }();
  return f;
}

}  // namespace

TEST(Stack, MetaInputHasFourteenColumns) {
  const auto& f = fitted();
  EXPECT_EQ(f.model.meta_width(), 14u);
  EXPECT_EQ(f.info.meta_X.cols(), 14);
  EXPECT_EQ(f.model.top_features.size(), 5u);
  EXPECT_EQ(std::set<std::size_t>(f.model.top_features.begin(), f.model.top_features.end()).size(), 5u);
}

TEST(Stack, MetaMatrixLayout) {
  Matrix P(4, 3);
  P << 0.2, 0.3, 0.5, 1, 0, 0, 0, 1, 0, 0.1, 0.1, 0.8;
  Matrix Xs = Matrix::Random(4, 6);
  const std::vector<std::size_t> top{4, 1};
  const Matrix M = meta_matrix({P, P, P}, Xs, top);
  ASSERT_EQ(M.cols(), 11);
  EXPECT_TRUE(M.middleCols(0, 3) == M.middleCols(3, 3));
  EXPECT_TRUE(M.middleCols(3, 3) == M.middleCols(6, 3));
  EXPECT_TRUE(M.col(9) == Xs.col(4));
  EXPECT_TRUE(M.col(10) == Xs.col(1));
}

TEST(Stack, EveryRowIsHeldOutExactlyOnce) {
  const auto& info = fitted().info;
  std::vector<int> seen(task().y.size(), 0);
  for (const auto& plan : info.folds)
    for (auto i : plan.test) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Stack, FoldTrainingNeverTouchesHeldOutRows) {
  const auto& info = fitted().info;
  ASSERT_EQ(info.fold_training.size(), info.folds.size());
  for (std::size_t f = 0; f < info.folds.size(); ++f) {
    const std::set<std::size_t> held(info.folds[f].test.begin(), info.folds[f].test.end());
    const auto& tr = info.fold_training[f];
    EXPECT_GT(tr.synthetic_count(), 0u);
    for (std::size_t r = 0; r < tr.rows(); ++r) {
      EXPECT_EQ(held.count(static_cast<std::size_t>(tr.origin[r])), 0u) << "fold " << f << " row " << r;
      if (tr.partner[r] >= 0) {
        EXPECT_EQ(held.count(static_cast<std::size_t>(tr.partner[r])), 0u) << "fold " << f;
      }
      EXPECT_NE(info.fold_of_row[static_cast<std::size_t>(tr.origin[r])], f);
    }
  }
}

TEST(Stack, OutOfFoldColumnsComeFromFoldModels) {
  // Refit fold 0's base learners from its recorded training set alone and
  // compare with the stored meta rows of the held-out fold.
  const auto& f = fitted();
  const auto& plan = f.info.folds[0];
  const auto& tr = f.info.fold_training[0];
  const auto p = light_params();
  const auto models = fit_base_models(tr.X, tr.y, p.learners, p.seed, 0);
  const Matrix Xs = f.model.standardizer.apply(task().X);
  const auto probs = base_probabilities(models, gather_rows(Xs, plan.test));
  for (std::size_t r = 0; r < plan.test.size(); ++r)
    for (std::size_t b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(f.info.meta_X(static_cast<Eigen::Index>(plan.test[r]), static_cast<Eigen::Index>(3 * b) + c),
                  probs[b](static_cast<Eigen::Index>(r), c));
}

TEST(Stack, DeterministicAcrossThreadCounts) {
  set_threads(1);
  const auto a = encode_stack(stack_fit(task().X, task().y, light_params(3)));
  set_threads(2);
  const auto b = encode_stack(stack_fit(task().X, task().y, light_params(3)));
  set_threads(1);
  EXPECT_EQ(fnv1a(a), fnv1a(b));
  EXPECT_TRUE(a == b);
}

TEST(Stack, SingleRowPredictionMatchesBatch) {
  const auto& m = fitted().model;
  const auto batch = stack_predict(m, task().X);
  for (Eigen::Index i = 0; i < task().X.rows(); i += 7) {
    const auto one = stack_predict(m, Matrix(task().X.row(i)));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(one.proba(0, c), batch.proba(i, c), 1e-12);
    EXPECT_EQ(one.labels[0], batch.labels[static_cast<std::size_t>(i)]);
  }
  for (Eigen::Index i = 0; i < batch.proba.rows(); ++i) EXPECT_NEAR(batch.proba.row(i).sum(), 1.0, 1e-12);
}

TEST(Stack, ModelRoundTripPreservesPredictions) {
  const auto& m = fitted().model;
  const auto bytes = encode_stack(m, 0.8);
  ModelHeader h;
  const auto back = decode_model<StackModel>(bytes, &h);
  EXPECT_EQ(h.kind, "stack");
  EXPECT_EQ(h.manifest_hash, "feedbeef");
  EXPECT_EQ(h.config.at("train_frac").get<double>(), 0.8);
  EXPECT_EQ(back.manifest_hash, "feedbeef");
  EXPECT_EQ(back.top_features, m.top_features);
  EXPECT_TRUE(stack_predict(back, task().X).proba == stack_predict(m, task().X).proba);
  EXPECT_EQ(encode_stack(back, 0.8), bytes);
}

TEST(Stack, MissingClassRejected) {
  auto y = task().y;
  for (int& c : y)
    if (c == 2) c = 1;
  EXPECT_THROW(stack_fit(task().X, y, light_params()), StratificationError);
  auto p = light_params();
  p.oof_k = 1;
  EXPECT_THROW(stack_fit(task().X, task().y, p), ConfigError);
}

TEST(Stack, WrongWidthRejectedAtPrediction) {
  EXPECT_THROW(stack_predict(fitted().model, Matrix::Zero(2, 41)), ConfigError);
}
