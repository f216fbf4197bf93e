/// @file eval.hpp
/// Train/test protocols, classification metrics, permutation importance and
/// recursive feature elimination.

#pragma once

#include "wearstress/learners.hpp"

#include <functional>
#include <map>
#include <numeric>
#include <optional>

namespace wearstress {

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::string description;
};

/// Per subject, the first ceil(train_frac * shifts) distinct shift ids (in
/// ascending order) go to training and the rest to test. With train_frac < 1
/// a subject with two or more shifts always keeps its last shift for test.
inline SplitPlan temporal_split(std::span<const std::string> subject_id, std::span<const int> shift_id,
                                double train_frac = 0.8) {
  if (!(train_frac > 0.0 && train_frac <= 1.0)) throw ConfigError("temporal_split: train_frac must be in (0, 1]");
  if (subject_id.size() != shift_id.size()) throw ConfigError("temporal_split: column length mismatch");
  std::map<std::string, std::vector<int>> shifts;
  for (std::size_t i = 0; i < shift_id.size(); ++i) shifts[subject_id[i]].push_back(shift_id[i]);
  std::map<std::string, int> last_train;
  for (auto& [subject, v] : shifts) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    auto n_train = static_cast<std::size_t>(std::ceil(train_frac * static_cast<double>(v.size()) - 1e-9));
    if (train_frac < 1.0 && v.size() >= 2) n_train = std::min(n_train, v.size() - 1);
    last_train[subject] = n_train == 0 ? std::numeric_limits<int>::min() : v[std::min(n_train, v.size()) - 1];
  }
  SplitPlan plan;
  plan.description = "temporal";
  for (std::size_t i = 0; i < shift_id.size(); ++i)
    (shift_id[i] <= last_train[subject_id[i]] ? plan.train : plan.test).push_back(i);
  return plan;
}

/// Per class, indices shuffled by Rng(seed, "kfold", class) are dealt
/// round-robin into k folds; the dealing position carries over between
/// classes so fold sizes differ by at most one.
inline std::vector<SplitPlan> stratified_kfold(std::span<const int> y, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be at least 2");
  std::vector<std::size_t> fold(y.size(), 0);
  std::size_t cursor = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) idx.push_back(i);
    if (idx.empty()) continue;
    if (idx.size() < k)
      throw StratificationError("stratified_kfold: class '" + std::string(label_name(label_from_index(c))) + "' has " +
                                std::to_string(idx.size()) + " members, fewer than k = " + std::to_string(k));
    Rng(seed, "kfold", static_cast<std::uint64_t>(c)).shuffle(idx);
    for (auto i : idx) fold[i] = cursor++ % k;
  }
  std::vector<SplitPlan> plans(k);
  for (std::size_t f = 0; f < k; ++f) plans[f].description = "fold " + std::to_string(f + 1) + "/" + std::to_string(k);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (fold[i] == f ? plans[f].test : plans[f].train).push_back(i);
  return plans;
}

/// Per class, round(test_frac * count) shuffled rows go to test, keeping at
/// least one training row per class.
inline SplitPlan stratified_holdout(std::span<const int> y, double test_frac, std::uint64_t seed) {
  std::vector<char> test(y.size(), 0);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) idx.push_back(i);
    if (idx.size() < 2) continue;
    Rng(seed, "holdout", static_cast<std::uint64_t>(c)).shuffle(idx);
    const auto take = std::min(idx.size() - 1, static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(idx.size()))));
    for (std::size_t t = 0; t < take; ++t) test[idx[t]] = 1;
  }
  SplitPlan p;
  p.description = "holdout";
  for (std::size_t i = 0; i < y.size(); ++i) (test[i] ? p.test : p.train).push_back(i);
  return p;
}

template <class T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

inline Matrix gather_rows(const Matrix& X, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

inline Matrix gather_cols(const Matrix& X, std::span<const std::size_t> idx) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = X.col(static_cast<Eigen::Index>(idx[c]));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

  long total() const {
    long s = 0;
    for (const auto& r : counts)
      for (long v : r) s += v;
    return s;
  }
  long operator()(int t, int p) const { return counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]; }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw ConfigError("confusion: length mismatch");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= kNumClasses || y_pred[i] < 0 || y_pred[i] >= kNumClasses)
      throw ConfigError("confusion: class index out of range");
    ++cm.counts[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
  bool undefined = false;  // never true and never predicted; metrics set to 0
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::optional<double> auc;
  std::vector<int> auc_excluded;  // classes absent from y_true
  ConfusionMatrix cm;
};

/// Per-class precision/recall/F1 with 0/0 -> 0; macro = mean over the 3 classes.
inline MetricsReport macro_metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.cm = cm;
  long correct = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    long tp = cm(c, c), fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += cm(o, c);
      fn += cm(c, o);
    }
    correct += tp;
    auto& m = r.per_class[static_cast<std::size_t>(c)];
    m.support = tp + fn;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.undefined = tp + fp + fn == 0;
    r.macro_precision += m.precision / kNumClasses;
    r.macro_recall += m.recall / kNumClasses;
    r.macro_f1 += m.f1 / kNumClasses;
  }
  const long n = cm.total();
  r.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return r;
}

inline double macro_f1(std::span<const int> y_true, std::span<const int> y_pred) {
  return macro_metrics(confusion(y_true, y_pred)).macro_f1;
}

/// Mann-Whitney AUC with midranks for tied scores; nullopt when either
/// side is empty.
inline std::optional<double> binary_auc(std::span<const double> score, std::span<const char> positive) {
  const std::size_t n = score.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (positive[order[k]]) {
        rank_sum += mid;
        ++n_pos;
      }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

/// Macro one-vs-rest AUC over classes present in y_true (and absent from
/// at least one row); excluded classes are appended to *excluded.
inline double auc_ovr_macro(std::span<const int> y_true, const Matrix& P, std::vector<int>* excluded = nullptr) {
  if (static_cast<std::size_t>(P.rows()) != y_true.size() || P.cols() != kNumClasses)
    throw ConfigError("auc_ovr_macro: shape mismatch");
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> s(y_true.size());
    std::vector<char> pos(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      s[i] = P(static_cast<Eigen::Index>(i), c);
      pos[i] = y_true[i] == c;
    }
    const auto a = binary_auc(s, pos);
    if (a) {
      sum += *a;
      ++used;
    } else if (excluded) {
      excluded->push_back(c);
    }
  }
  return used ? sum / used : 0.0;
}

inline MetricsReport evaluate_probabilities(std::span<const int> y_true, const Matrix& P) {
  const auto pred = argmax_rows(P);
  auto r = macro_metrics(confusion(y_true, pred));
  if (!y_true.empty()) r.auc = auc_ovr_macro(y_true, P, &r.auc_excluded);
  return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["auc_ovr_macro"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  j["auc_excluded_classes"] = nlohmann::ordered_json::array();
  for (int c : r.auc_excluded) j["auc_excluded_classes"].push_back(label_name(label_from_index(c)));
  j["per_class"] = nlohmann::ordered_json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[static_cast<std::size_t>(c)];
    j["per_class"][std::string(label_name(label_from_index(c)))] = {
        {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}, {"undefined", m.undefined}};
  }
  j["confusion"] = r.cm.counts;
  return j;
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string s = "true\\predicted";
  for (auto l : kAllLabels) s += "," + std::string(label_name(l));
  s += "\n";
  for (int t = 0; t < kNumClasses; ++t) {
    s += label_name(label_from_index(t));
    for (int p = 0; p < kNumClasses; ++p) s += "," + std::to_string(cm(t, p));
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Importance and selection
// ---------------------------------------------------------------------------

using ProbaFn = std::function<Matrix(const Matrix&)>;

/// importance_j = baseline macro F1 - mean macro F1 with column j shuffled,
/// shuffle r of column j drawn from Rng(seed, "permutation", j * repeats + r).
inline std::vector<double> permutation_importance(const ProbaFn& predict, const Matrix& X, std::span<const int> y,
                                                  std::size_t n_repeats = 10, std::uint64_t seed = 0) {
  if (n_repeats == 0) throw ConfigError("permutation_importance: n_repeats must be positive");
  const double baseline = macro_f1(y, argmax_rows(predict(X)));
  const auto d = static_cast<std::size_t>(X.cols());
  std::vector<double> scores(d * n_repeats);
  parallel_for(d * n_repeats, [&](std::size_t task) {
    const std::size_t j = task / n_repeats;
    Matrix Xp = X;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(X.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng(seed, "permutation", task).shuffle(perm);
    for (std::size_t i = 0; i < perm.size(); ++i)
      Xp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = X(perm[i], static_cast<Eigen::Index>(j));
    scores[task] = macro_f1(y, argmax_rows(predict(Xp)));
  });
  std::vector<double> imp(d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < n_repeats; ++r) s += scores[j * n_repeats + r];
    imp[j] = baseline - s / static_cast<double>(n_repeats);
  }
  return imp;
}

/// Indices of the n largest values; equal values keep manifest order.
inline std::vector<std::size_t> select_top_features(std::span<const double> importance, std::size_t n) {
  std::vector<std::size_t> idx(importance.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return importance[a] > importance[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

struct RfeResult {
  std::vector<std::size_t> selected;           // ascending feature indices
  std::vector<std::size_t> elimination_order;  // first eliminated first
  std::vector<std::size_t> ranking;            // 1 = kept; larger = eliminated earlier
};

struct RfeParams {
  std::size_t keep = 25;
  std::size_t step = 1;
  std::size_t cv_folds = 5;
  std::size_t n_repeats = 5;
  std::uint64_t seed = 0;
};

/// Repeatedly fits the boosted learner on the current feature subset in each
/// CV fold, averages permutation importance over the held-out folds, and
/// drops the `step` weakest features (ties drop the higher index) until
/// `keep` remain.
inline RfeResult rfe(const BoostParams& learner, const Matrix& X, std::span<const int> y, const RfeParams& p) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (p.keep == 0 || p.keep > d) throw ConfigError("rfe: keep must be in [1, d]");
  if (p.step == 0) throw ConfigError("rfe: step must be positive");
  std::vector<std::size_t> current(d);
  std::iota(current.begin(), current.end(), 0);
  RfeResult res;
  const auto folds = stratified_kfold(y, p.cv_folds, derive_seed(p.seed, "rfe-folds"));
  std::size_t iteration = 0;
  while (current.size() > p.keep) {
    const Matrix Xc = gather_cols(X, current);
    std::vector<std::vector<double>> per_fold(folds.size());
    parallel_for(folds.size(), [&](std::size_t f) {
      BoostParams bp = learner;
      bp.seed = derive_seed(p.seed, "rfe-fit", iteration * 1000 + f);
      const auto ytr = gather<int>(y, folds[f].train);
      const auto yte = gather<int>(y, folds[f].test);
      const auto model = boost_fit(gather_rows(Xc, folds[f].train), ytr, bp);
      per_fold[f] = permutation_importance([&](const Matrix& Z) { return predict_proba(model, Z); },
                                           gather_rows(Xc, folds[f].test), yte, p.n_repeats,
                                           derive_seed(p.seed, "rfe-perm", iteration * 1000 + f));
    });
    std::vector<double> mean(current.size(), 0.0);
    for (const auto& v : per_fold)
      for (std::size_t j = 0; j < v.size(); ++j) mean[j] += v[j] / static_cast<double>(folds.size());
    std::vector<std::size_t> pos(current.size());
    std::iota(pos.begin(), pos.end(), 0);
    std::sort(pos.begin(), pos.end(), [&](auto a, auto b) {
      return mean[a] < mean[b] || (mean[a] == mean[b] && current[a] > current[b]);
    });
    const std::size_t drop = std::min(p.step, current.size() - p.keep);
    std::vector<char> gone(current.size(), 0);
    for (std::size_t k = 0; k < drop; ++k) {
      gone[pos[k]] = 1;
      res.elimination_order.push_back(current[pos[k]]);
    }
    std::vector<std::size_t> next;
    for (std::size_t j = 0; j < current.size(); ++j)
      if (!gone[j]) next.push_back(current[j]);
    current = std::move(next);
    ++iteration;
  }
  res.selected = current;
  res.ranking.assign(d, 1);
  const std::size_t m = res.elimination_order.size();
  for (std::size_t k = 0; k < m; ++k) res.ranking[res.elimination_order[k]] = 1 + m - k;
  return res;
}

}  // namespace wearstress
