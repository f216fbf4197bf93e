/// @file boost.hpp
/// Newton-boosted regression trees under the multiclass softmax objective.

#pragma once

#include "wearstress/learners/forest.hpp"

namespace wearstress {

struct BoostParams {
  double learning_rate = 0.1;
  std::size_t max_depth = 7;
  double gamma = 1.2;
  double lambda = 1.0;
  double min_child_weight = 1.0;
  std::size_t n_rounds = 200;
  std::array<double, kNumClasses> class_weight{1.0, 6.3, 1.0};
  std::size_t early_stopping_rounds = 20;  // 0 disables the holdout
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct BoostModel {
  BoostParams params;
  std::size_t n_features = 0;
  std::array<double, kNumClasses> base{};  // log class priors
  std::vector<std::array<Tree, kNumClasses>> rounds;
  std::vector<double> train_loss;  // weighted log-loss on the fitting rows after each round
  std::vector<double> valid_loss;  // same on the holdout, empty without early stopping

  bool operator==(const BoostModel& o) const {
    return n_features == o.n_features && base == o.base && rounds == o.rounds && train_loss == o.train_loss &&
           valid_loss == o.valid_loss;
  }
};

namespace detail {

inline void softmax_row(std::span<double, kNumClasses> z) {
  const double mx = std::max({z[0], z[1], z[2]});
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : z) v /= s;
}

inline double weighted_log_loss(const Matrix& F, std::span<const int> y, std::span<const double> w,
                                std::span<const std::uint32_t> rows) {
  double num = 0.0, den = 0.0;
  for (auto r : rows) {
    const auto ri = static_cast<Eigen::Index>(r);
    const double mx = std::max({F(ri, 0), F(ri, 1), F(ri, 2)});
    const double lse = mx + std::log(std::exp(F(ri, 0) - mx) + std::exp(F(ri, 1) - mx) + std::exp(F(ri, 2) - mx));
    num += w[r] * (lse - F(ri, y[r]));
    den += w[r];
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Per-class holdout of round(fraction * count) rows, keeping at least one
/// fitting row per present class.
inline std::vector<char> holdout_mask(std::span<const int> y, double fraction, std::uint64_t seed) {
  std::vector<char> hold(y.size(), 0);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) idx.push_back(i);
    if (idx.size() < 2) continue;
    Rng(seed, "boost-holdout", static_cast<std::uint64_t>(c)).shuffle(idx);
    const auto take = std::min(idx.size() - 1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    for (std::size_t k = 0; k < take; ++k) hold[idx[k]] = 1;
  }
  return hold;
}

}  // namespace detail

/// Raw scores base + sum over rounds of learning_rate * leaf value.
inline Matrix boost_scores(const BoostModel& m, const Matrix& X, std::size_t n_rounds) {
  Matrix F(X.rows(), kNumClasses);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto row = X.row(i);
    for (int c = 0; c < kNumClasses; ++c) {
      double s = m.base[static_cast<std::size_t>(c)];
      for (std::size_t t = 0; t < n_rounds; ++t) {
        const auto& tree = m.rounds[t][static_cast<std::size_t>(c)];
        s += m.params.learning_rate * tree.nodes[tree.leaf(row)].value;
      }
      F(i, c) = s;
    }
  }
  return F;
}

inline Matrix predict_proba(const BoostModel& m, const Matrix& X) {
  check_predict_input(X, m.n_features, "boosted predict");
  Matrix P = boost_scores(m, X, m.rounds.size());
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    std::array<double, kNumClasses> z{P(i, 0), P(i, 1), P(i, 2)};
    detail::softmax_row(z);
    for (int c = 0; c < kNumClasses; ++c) P(i, c) = z[static_cast<std::size_t>(c)];
  }
  return P;
}

/// Softmax boosting: each round fits one tree per class to g = (p_c - y_c) w,
/// h = 2 p_c (1 - p_c) w; leaf weight -G/(H + lambda). With early stopping the
/// model is truncated to the round with the lowest holdout loss.
inline BoostModel boost_fit(const Matrix& X, std::span<const int> y, const BoostParams& p) {
  check_training_input(X, y, "boost_fit");
  if (!(p.learning_rate > 0.0)) throw ConfigError("boost_fit: learning_rate must be positive");
  const std::size_t n = y.size();
  BoostModel m;
  m.params = p;
  m.n_features = static_cast<std::size_t>(X.cols());

  std::array<double, kNumClasses> count{};
  for (int c : y) count[static_cast<std::size_t>(c)] += 1.0;
  for (int c = 0; c < kNumClasses; ++c)
    m.base[static_cast<std::size_t>(c)] = std::log(std::max(count[static_cast<std::size_t>(c)] / static_cast<double>(n), 1e-12));

  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = p.class_weight[static_cast<std::size_t>(y[i])];

  const bool early = p.early_stopping_rounds > 0 && p.n_rounds > 0 && n >= 20;
  const auto hold = early ? detail::holdout_mask(y, p.validation_fraction, p.seed) : std::vector<char>(n, 0);
  std::vector<std::uint32_t> fit_rows, valid_rows;
  for (std::size_t i = 0; i < n; ++i) (hold[i] ? valid_rows : fit_rows).push_back(static_cast<std::uint32_t>(i));
  const bool use_valid = early && !valid_rows.empty();

  const SortedColumns root = sort_columns(X, fit_rows);
  Matrix F(static_cast<Eigen::Index>(n), kNumClasses);
  for (Eigen::Index i = 0; i < F.rows(); ++i)
    for (int c = 0; c < kNumClasses; ++c) F(i, c) = m.base[static_cast<std::size_t>(c)];

  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t best_rounds = 0, since_best = 0;
  std::array<std::vector<double>, kNumClasses> grad, hess;
  for (auto& v : grad) v.assign(n, 0.0);
  for (auto& v : hess) v.assign(n, 0.0);

  for (std::size_t round = 0; round < p.n_rounds; ++round) {
    for (auto r : fit_rows) {
      const auto ri = static_cast<Eigen::Index>(r);
      std::array<double, kNumClasses> z{F(ri, 0), F(ri, 1), F(ri, 2)};
      detail::softmax_row(z);
      for (std::size_t c = 0; c < static_cast<std::size_t>(kNumClasses); ++c) {
        grad[c][r] = (z[c] - (y[r] == static_cast<int>(c) ? 1.0 : 0.0)) * w[r];
        hess[c][r] = std::max(2.0 * z[c] * (1.0 - z[c]), 1e-16) * w[r];
      }
    }
    std::array<Tree, kNumClasses> trees;
    parallel_for(kNumClasses, [&](std::size_t c) {
      NewtonCriterion crit{grad[c], hess[c], p.lambda, p.gamma, p.min_child_weight};
      trees[c] = TreeGrower<NewtonCriterion>(X, crit, {p.max_depth, 1, 0}, nullptr).grow(root);
    });
    for (Eigen::Index i = 0; i < F.rows(); ++i) {
      const auto row = X.row(i);
      for (int c = 0; c < kNumClasses; ++c) {
        const auto& t = trees[static_cast<std::size_t>(c)];
        F(i, c) += p.learning_rate * t.nodes[t.leaf(row)].value;
      }
    }
    m.rounds.push_back(std::move(trees));
    const double tl = detail::weighted_log_loss(F, y, w, fit_rows);
    if (!std::isfinite(tl)) throw DivergenceError("boost_fit: non-finite loss at round " + std::to_string(round + 1));
    m.train_loss.push_back(tl);
    if (use_valid) {
      const double vl = detail::weighted_log_loss(F, y, w, valid_rows);
      m.valid_loss.push_back(vl);
      if (vl < best_valid) {
        best_valid = vl;
        best_rounds = m.rounds.size();
        since_best = 0;
      } else if (++since_best >= p.early_stopping_rounds) {
        break;
      }
    }
  }
  if (use_valid) {
    m.rounds.resize(best_rounds);
    m.train_loss.resize(best_rounds);
    m.valid_loss.resize(best_rounds);
  }
  return m;
}

inline void write_model(binio::Writer& w, const BoostModel& m) {
  w.put(m.params.learning_rate);
  w.put<std::uint64_t>(m.params.max_depth);
  w.put(m.params.gamma);
  w.put(m.params.lambda);
  w.put(m.params.min_child_weight);
  w.put<std::uint64_t>(m.params.n_rounds);
  for (double c : m.params.class_weight) w.put(c);
  w.put<std::uint64_t>(m.params.early_stopping_rounds);
  w.put(m.params.validation_fraction);
  w.put<std::uint64_t>(m.params.seed);
  w.put<std::uint64_t>(m.n_features);
  for (double b : m.base) w.put(b);
  w.put<std::uint64_t>(m.rounds.size());
  for (const auto& r : m.rounds)
    for (const auto& t : r) t.write(w);
  w.put_doubles(m.train_loss);
  w.put_doubles(m.valid_loss);
}

inline void read_model(binio::Reader& r, BoostModel& m) {
  m.params.learning_rate = r.get<double>();
  m.params.max_depth = r.get<std::uint64_t>();
  m.params.gamma = r.get<double>();
  m.params.lambda = r.get<double>();
  m.params.min_child_weight = r.get<double>();
  m.params.n_rounds = r.get<std::uint64_t>();
  for (double& c : m.params.class_weight) c = r.get<double>();
  m.params.early_stopping_rounds = r.get<std::uint64_t>();
  m.params.validation_fraction = r.get<double>();
  m.params.seed = r.get<std::uint64_t>();
  m.n_features = r.get<std::uint64_t>();
  for (double& b : m.base) b = r.get<double>();
  const auto n = r.get<std::uint64_t>();
  if (n > (1u << 20)) throw FormatError("boosted model: implausible round count");
  m.rounds.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::array<Tree, kNumClasses> trees;
    for (auto& t : trees) t = Tree::read(r);
    m.rounds.push_back(std::move(trees));
  }
  m.train_loss = r.get_doubles();
  m.valid_loss = r.get_doubles();
}

}  // namespace wearstress
