/// @file synthetic_tasks.hpp
/// Feature-level classification tasks with known structure, used to check
/// learner, stacking and selection behaviour without the signal pipeline.

#pragma once

#include "wearstress/features.hpp"

namespace wearstress {

struct ComplementaryTaskConfig {
  std::uint64_t seed = 0;
  int n_subjects = 3;
  int shifts_per_subject = 10;
  int rows_per_shift = 20;
  double effect_size = 2.0;
  std::array<double, kNumClasses> class_mix{0.70, 0.18, 0.12};
};

/// Three-class task whose 42 columns form three groups of 14, each carrying
/// class evidence in a shape suited to a different learner family:
///   0-13   oblique mean shifts along random directions (smooth boundary),
///   14-27  class-specific value intervals on single columns (axis-aligned),
///   28-41  sign interactions between column pairs (XOR-like).
/// Each group alone is ambiguous; the groups are conditionally independent
/// given the class. effect_size scales every signal.
inline FeatureTable complementary_task(const ComplementaryTaskConfig& cfg) {
  constexpr int kGroup = 14;
  Rng design(cfg.seed, "complementary-design");
  // Oblique directions per class.
  std::array<Vector, kNumClasses> dir;
  for (auto& d : dir) {
    d.resize(kGroup);
    for (int j = 0; j < kGroup; ++j) d(j) = design.normal();
    d.normalize();
  }
  // Interval centres per (class, column) in the axis-aligned group.
  std::array<std::array<double, kGroup>, kNumClasses> centre{};
  for (auto& row : centre)
    for (double& v : row) v = design.uniform(-2.0, 2.0);
  // Sign pattern per (class, pair) in the interaction group.
  std::array<std::array<int, kGroup / 2>, kNumClasses> sign{};
  for (auto& row : sign)
    for (int& v : row) v = design.uniform() < 0.5 ? -1 : 1;

  const int n = cfg.n_subjects * cfg.shifts_per_subject * cfg.rows_per_shift;
  FeatureTable t;
  t.X.resize(n, 3 * kGroup);
  const double e = cfg.effect_size;
  const double p_interval = std::min(0.9, 0.25 * e);
  const double p_sign = std::min(0.98, 0.5 + 0.2 * e);
  int row = 0;
  for (int s = 0; s < cfg.n_subjects; ++s)
    for (int sh = 0; sh < cfg.shifts_per_subject; ++sh)
      for (int k = 0; k < cfg.rows_per_shift; ++k, ++row) {
        Rng rng(cfg.seed, "complementary-row", static_cast<std::uint64_t>(row));
        const double u = rng.uniform();
        int c = 0;
        if (u >= cfg.class_mix[0]) c = u < cfg.class_mix[0] + cfg.class_mix[1] ? 1 : 2;
        const auto cc = static_cast<std::size_t>(c);
        for (int j = 0; j < kGroup; ++j) t.X(row, j) = 0.45 * e * dir[cc](j) + rng.normal();
        for (int j = 0; j < kGroup; ++j)
          t.X(row, kGroup + j) = rng.uniform() < p_interval ? centre[cc][static_cast<std::size_t>(j)] + rng.uniform(-0.15, 0.15)
                                                              : rng.uniform(-2.5, 2.5);
        for (int q = 0; q < kGroup / 2; ++q) {
          const double a = std::abs(rng.normal()) + 0.1, b = std::abs(rng.normal()) + 0.1;
          const bool follow = rng.uniform() < p_sign;
          const int target = follow ? sign[cc][static_cast<std::size_t>(q)] : (rng.uniform() < 0.5 ? -1 : 1);
          const int sa = rng.uniform() < 0.5 ? -1 : 1;
          t.X(row, 2 * kGroup + 2 * q) = sa * a;
          t.X(row, 2 * kGroup + 2 * q + 1) = sa * target * b;
        }
        t.y.push_back(c);
        t.subject_id.push_back("S" + std::to_string(s + 1));
        t.shift_id.push_back(sh);
        t.t0.push_back(static_cast<double>(sh * 86400 + k * 150));
      }
  return t;
}

struct InformativeTaskConfig {
  std::uint64_t seed = 0;
  std::size_t n_rows = 300;
  std::size_t n_informative = 5;
  std::size_t n_features = 42;
  double separation = 1.5;
};

/// Columns 0..n_informative-1 place the three class means at
/// separation * {-1, 0, +1} in a per-column random order, so every such column
/// separates every class pair by at least `separation` noise SDs. The rest is
/// independent standard normal noise. Classes are balanced in expectation.
inline FeatureTable informative_task(const InformativeTaskConfig& cfg) {
  if (cfg.n_informative > cfg.n_features) throw ConfigError("informative_task: more informative columns than features");
  Rng design(cfg.seed, "informative-design");
  Matrix means(kNumClasses, static_cast<Eigen::Index>(cfg.n_informative));
  for (Eigen::Index j = 0; j < means.cols(); ++j) {
    std::vector<double> levels{-1.0, 0.0, 1.0};
    design.shuffle(levels);
    for (Eigen::Index c = 0; c < means.rows(); ++c) means(c, j) = cfg.separation * levels[static_cast<std::size_t>(c)];
  }
  FeatureTable t;
  t.X.resize(static_cast<Eigen::Index>(cfg.n_rows), static_cast<Eigen::Index>(cfg.n_features));
  Rng rng(cfg.seed, "informative-rows");
  for (std::size_t i = 0; i < cfg.n_rows; ++i) {
    const int c = static_cast<int>(i % kNumClasses);
    for (std::size_t j = 0; j < cfg.n_features; ++j) {
      double v = rng.normal();
      if (j < cfg.n_informative) v += means(c, static_cast<Eigen::Index>(j));
      t.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
    t.y.push_back(c);
    t.subject_id.push_back("S1");
    t.shift_id.push_back(0);
    t.t0.push_back(static_cast<double>(i));
  }
  return t;
}

}  // namespace wearstress
