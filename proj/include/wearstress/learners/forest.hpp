/// @file forest.hpp
/// Random forest of Gini trees on bootstrap samples.

#pragma once

#include "wearstress/learners/tree.hpp"

namespace wearstress {

struct ForestParams {
  std::size_t n_trees = 500;
  std::size_t max_depth = 15;
  std::size_t min_samples_leaf = 5;
  bool balanced = true;          // class weight n / (C count_c), C = classes present
  std::size_t max_features = 0;  // 0 = round(sqrt(d))
  std::uint64_t seed = 0;
};

struct ForestModel {
  ForestParams params;
  std::size_t n_features = 0;
  std::array<double, kNumClasses> class_weight{1.0, 1.0, 1.0};
  std::vector<Tree> trees;

  bool operator==(const ForestModel& o) const {
    return n_features == o.n_features && class_weight == o.class_weight && trees == o.trees;
  }
};

inline std::array<double, kNumClasses> balanced_class_weights(std::span<const int> y) {
  std::array<std::size_t, kNumClasses> count{};
  for (int c : y) ++count[static_cast<std::size_t>(c)];
  const double present = static_cast<double>(std::count_if(count.begin(), count.end(), [](auto c) { return c > 0; }));
  std::array<double, kNumClasses> w{};
  for (std::size_t c = 0; c < count.size(); ++c)
    w[c] = count[c] ? static_cast<double>(y.size()) / (present * static_cast<double>(count[c])) : 0.0;
  return w;
}

inline void check_training_input(const Matrix& X, std::span<const int> y, std::string_view who) {
  if (X.rows() == 0 || X.cols() == 0) throw InsufficientData(std::string(who) + ": empty training matrix");
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw ConfigError(std::string(who) + ": row/label count mismatch");
  for (int c : y)
    if (c < 0 || c >= kNumClasses) throw ConfigError(std::string(who) + ": class index out of range");
  if (!X.allFinite()) throw ConfigError(std::string(who) + ": non-finite feature value");
}

inline void check_predict_input(const Matrix& X, std::size_t n_features, std::string_view who) {
  if (static_cast<std::size_t>(X.cols()) != n_features)
    throw ConfigError(std::string(who) + ": expected " + std::to_string(n_features) + " feature columns, got " +
                      std::to_string(X.cols()));
}

/// One tree on a bootstrap sample drawn from Rng(seed, "forest-tree", index);
/// duplicate draws become sample weights.
inline Tree fit_forest_tree(const Matrix& X, std::span<const int> y, const ForestParams& p,
                            const std::array<double, kNumClasses>& cw, std::size_t index) {
  const std::size_t n = y.size();
  Rng rng(p.seed, "forest-tree", index);
  std::vector<double> weight(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) weight[rng.below(n)] += 1.0;
  std::vector<std::uint32_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (weight[i] > 0.0) {
      weight[i] *= cw[static_cast<std::size_t>(y[i])];
      rows.push_back(static_cast<std::uint32_t>(i));
    }
  GiniCriterion crit{y, weight};
  const std::size_t d = static_cast<std::size_t>(X.cols());
  GrowParams gp{p.max_depth, p.min_samples_leaf,
                p.max_features ? p.max_features
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(d)))))};
  return TreeGrower<GiniCriterion>(X, crit, gp, &rng).grow(sort_columns(X, rows));
}

inline ForestModel forest_fit(const Matrix& X, std::span<const int> y, const ForestParams& p) {
  check_training_input(X, y, "forest_fit");
  if (p.n_trees == 0) throw ConfigError("forest_fit: n_trees must be positive");
  ForestModel m;
  m.params = p;
  m.n_features = static_cast<std::size_t>(X.cols());
  if (p.balanced) m.class_weight = balanced_class_weights(y);
  m.trees.resize(p.n_trees);
  parallel_for(p.n_trees, [&](std::size_t t) { m.trees[t] = fit_forest_tree(X, y, p, m.class_weight, t); });
  return m;
}

/// Class distribution of one tree's leaf for a row, normalised to sum 1.
template <class Row>
std::array<double, kNumClasses> tree_distribution(const Tree& t, const Row& x) {
  auto d = t.nodes[t.leaf(x)].dist;
  const double s = d[0] + d[1] + d[2];
  for (double& v : d) v /= s;
  return d;
}

/// Mean of the per-tree leaf distributions.
inline Matrix predict_proba(const ForestModel& m, const Matrix& X) {
  check_predict_input(X, m.n_features, "forest predict");
  Matrix P = Matrix::Zero(X.rows(), kNumClasses);
  parallel_for(static_cast<std::size_t>(X.rows()), [&](std::size_t i) {
    const auto row = X.row(static_cast<Eigen::Index>(i));
    std::array<double, kNumClasses> acc{};
    for (const auto& t : m.trees) {
      const auto d = tree_distribution(t, row);
      for (int c = 0; c < kNumClasses; ++c) acc[static_cast<std::size_t>(c)] += d[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < kNumClasses; ++c)
      P(static_cast<Eigen::Index>(i), c) = acc[static_cast<std::size_t>(c)] / static_cast<double>(m.trees.size());
  });
  return P;
}

inline void write_model(binio::Writer& w, const ForestModel& m) {
  w.put<std::uint64_t>(m.params.n_trees);
  w.put<std::uint64_t>(m.params.max_depth);
  w.put<std::uint64_t>(m.params.min_samples_leaf);
  w.put<std::uint8_t>(m.params.balanced);
  w.put<std::uint64_t>(m.params.max_features);
  w.put<std::uint64_t>(m.params.seed);
  w.put<std::uint64_t>(m.n_features);
  for (double c : m.class_weight) w.put(c);
  w.put<std::uint64_t>(m.trees.size());
  for (const auto& t : m.trees) t.write(w);
}

inline void read_model(binio::Reader& r, ForestModel& m) {
  m.params.n_trees = r.get<std::uint64_t>();
  m.params.max_depth = r.get<std::uint64_t>();
  m.params.min_samples_leaf = r.get<std::uint64_t>();
  m.params.balanced = r.get<std::uint8_t>() != 0;
  m.params.max_features = r.get<std::uint64_t>();
  m.params.seed = r.get<std::uint64_t>();
  m.n_features = r.get<std::uint64_t>();
  for (double& c : m.class_weight) c = r.get<double>();
  const auto n = r.get<std::uint64_t>();
  if (n == 0 || n > (1u << 20)) throw FormatError("forest: implausible tree count");
  m.trees.clear();
  for (std::uint64_t i = 0; i < n; ++i) m.trees.push_back(Tree::read(r));
}

}  // namespace wearstress
