#include "oracles.hpp"
#include "wearstress/balance.hpp"

#include <gtest/gtest.h>

using namespace wearstress;

namespace {

LabeledMatrix imbalanced(std::uint64_t seed, std::array<std::size_t, 3> counts, Eigen::Index cols = 4) {
  Rng rng(seed, "imbalanced");
  const std::size_t n = counts[0] + counts[1] + counts[2];
  Matrix X(static_cast<Eigen::Index>(n), cols);
  std::vector<int> y;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      const auto r = static_cast<Eigen::Index>(y.size());
      for (Eigen::Index j = 0; j < cols; ++j) X(r, j) = rng.normal(1.5 * c, 1.0);
      y.push_back(c);
    }
  return LabeledMatrix::from(std::move(X), std::move(y));
}

}  // namespace

TEST(Smote, BalancedInputIsIdentity) {
  const auto d = imbalanced(1, {10, 10, 10});
  const auto out = smote(d, 5, 3);
  EXPECT_EQ(out.rows(), d.rows());
  EXPECT_TRUE(out.X == d.X);
  EXPECT_EQ(out.y, d.y);
  EXPECT_EQ(out.synthetic_count(), 0u);
}

TEST(Smote, OneDimensionalMinorityStaysOnSegment) {
  Matrix X(12, 1);
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    X(i, 0) = 5.0 + i;
    y.push_back(0);
  }
  X(10, 0) = 0.0;
  X(11, 0) = 1.0;
  y.push_back(1);
  y.push_back(1);
  const auto out = smote(LabeledMatrix::from(X, y), 1, 9);
  ASSERT_EQ(out.synthetic_count(), 8u);
  for (std::size_t i = 12; i < out.rows(); ++i) {
    EXPECT_EQ(out.y[i], 1);
    EXPECT_GE(out.X(static_cast<Eigen::Index>(i), 0), 0.0);
    EXPECT_LE(out.X(static_cast<Eigen::Index>(i), 0), 1.0);
  }
}

TEST(Smote, EqualizesEveryNonEmptyClass) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s, "counts");
    std::array<std::size_t, 3> counts{20 + rng.below(40), 2 + rng.below(20), 2 + rng.below(10)};
    const auto out = smote(imbalanced(s, counts), 5, s);
    const auto c = class_counts(out.y);
    const std::size_t maj = *std::max_element(counts.begin(), counts.end());
    for (auto v : c) EXPECT_EQ(v, maj) << s;
  }
  // Absent classes stay absent.
  const auto two = smote(imbalanced(3, {30, 5, 0}), 5, 0);
  EXPECT_EQ(class_counts(two.y)[2], 0u);
  EXPECT_EQ(class_counts(two.y)[1], 30u);
}

TEST(Smote, SyntheticRowsInterpolateSameClassNeighbours) {
  const std::size_t k = 5;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto d = imbalanced(s, {60, 15, 8}, 6);
    const auto out = smote(d, k, s);
    // Originals are kept verbatim and first.
    EXPECT_TRUE(out.X.topRows(d.X.rows()) == d.X);
    for (std::size_t i = d.rows(); i < out.rows(); ++i) {
      ASSERT_EQ(out.provenance[i], Provenance::Synthetic);
      const auto o = static_cast<std::size_t>(out.origin[i]);
      const auto p = static_cast<std::size_t>(out.partner[i]);
      EXPECT_EQ(d.y[o], out.y[i]);
      EXPECT_EQ(d.y[p], out.y[i]);
      const auto knn = oracle::same_class_knn(d.X, d.y, o, k);
      EXPECT_NE(std::find(knn.begin(), knn.end(), p), knn.end()) << "partner outside the same-class kNN";
      const double dist = oracle::distance_to_segment(out.X.row(static_cast<Eigen::Index>(i)), d.X.row(static_cast<Eigen::Index>(o)),
                                                      d.X.row(static_cast<Eigen::Index>(p)));
      EXPECT_LT(dist, 1e-9);
    }
  }
}

TEST(Smote, SingleMemberClassRejected) {
  EXPECT_THROW(smote(imbalanced(1, {10, 1, 4})), InsufficientData);
  EXPECT_THROW(smote(imbalanced(1, {10, 4, 4}), 0), ConfigError);
}

TEST(Smote, DeterministicAcrossThreadCounts) {
  const auto d = imbalanced(4, {80, 20, 9});
  set_threads(1);
  const auto a = smote_tomek(d, 5, 17);
  set_threads(3);
  const auto b = smote_tomek(d, 5, 17);
  set_threads(1);
  EXPECT_TRUE(a.X == b.X);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.origin, b.origin);
  const auto c = smote(d, 5, 18);
  EXPECT_FALSE(c.X == smote(d, 5, 17).X);
}

TEST(Tomek, SingleClassHasNoLinks) {
  const auto d = imbalanced(2, {30, 0, 0});
  EXPECT_TRUE(tomek_links(d).empty());
  EXPECT_EQ(remove_tomek_links(d).rows(), d.rows());
}

TEST(Tomek, FindsTheOnlyLink) {
  Matrix X(4, 1);
  X << 0.0, 5.0, 5.1, 10.0;
  const auto d = LabeledMatrix::from(X, {0, 0, 1, 1});
  const auto links = tomek_links(d);
  ASSERT_EQ(links.size(), 1u);
  EXPECT_EQ(links[0], std::make_pair(std::size_t{1}, std::size_t{2}));
  const auto cleaned = remove_tomek_links(d);
  ASSERT_EQ(cleaned.rows(), 2u);
  EXPECT_EQ(cleaned.X(0, 0), 0.0);
  EXPECT_EQ(cleaned.X(1, 0), 10.0);
}

TEST(Tomek, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 8; ++s) {
    Rng rng(s, "tomek-size");
    const std::size_t n0 = 10 + rng.below(200), n1 = 5 + rng.below(150), n2 = rng.below(100);
    auto d = imbalanced(s, {n0, n1, n2}, 1 + static_cast<Eigen::Index>(rng.below(5)));
    if (s % 2) d.X = d.X.array().round();  // force distance ties
    const auto fast = tomek_links(d);
    const auto slow = oracle::tomek_links(d.X, d.y);
    EXPECT_EQ(fast, slow) << s;
  }
}

TEST(Tomek, SeparableDataMakesHybridEqualSmote) {
  Matrix X(14, 2);
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    X.row(i) << i * 0.1, 0.0;
    y.push_back(0);
  }
  for (int i = 0; i < 4; ++i) {
    X.row(10 + i) << 100.0 + i * 0.1, 0.0;
    y.push_back(1);
  }
  const auto d = LabeledMatrix::from(X, y);
  const auto a = smote(d, 3, 5), b = smote_tomek(d, 3, 5);
  EXPECT_TRUE(a.X == b.X);
  EXPECT_EQ(a.y, b.y);
}

TEST(Resample, HybridIsSmoteThenTomekRemoval) {
  const auto d = imbalanced(6, {50, 12, 7});
  const auto composed = remove_tomek_links(smote(d, 5, 2));
  const auto hybrid = resample(d, Resampler::SmoteTomek, 5, 2);
  EXPECT_TRUE(composed.X == hybrid.X);
  EXPECT_EQ(composed.y, hybrid.y);
  EXPECT_TRUE(resample(d, Resampler::None, 5, 2).X == d.X);
  EXPECT_EQ(parse_resampler("smote-tomek"), Resampler::SmoteTomek);
  EXPECT_THROW(parse_resampler("adasyn"), ConfigError);
}
