/// @file tree.hpp
/// Axis-aligned binary trees grown by exhaustive threshold search, shared by
/// the random forest (weighted Gini) and the boosted model (second-order
/// gain on gradients and hessians).

#pragma once

#include "wearstress/binio.hpp"

namespace wearstress {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::array<double, kNumClasses> dist{};  // classification leaves: weighted class totals
  double value = 0.0;                      // regression leaves: leaf weight
  double gain = 0.0;                       // internal nodes: criterion improvement of the split

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

class Tree {
 public:
  std::vector<TreeNode> nodes;

  /// Index of the leaf reached by row r of X; x <= threshold goes left.
  template <class Row>
  std::size_t leaf(const Row& x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
    }
    return i;
  }

  std::size_t depth() const { return depth_from(0); }
  bool operator==(const Tree&) const = default;

  void write(binio::Writer& w) const {
    w.put<std::uint64_t>(nodes.size());
    for (const auto& n : nodes) {
      w.put<std::int32_t>(n.feature);
      w.put(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      for (double d : n.dist) w.put(d);
      w.put(n.value);
      w.put(n.gain);
    }
  }

  static Tree read(binio::Reader& r) {
    Tree t;
    const auto n = r.get<std::uint64_t>();
    if (n > (1u << 26)) throw FormatError("tree: implausible node count");
    t.nodes.resize(static_cast<std::size_t>(n));
    for (auto& node : t.nodes) {
      node.feature = r.get<std::int32_t>();
      node.threshold = r.get<double>();
      node.left = r.get<std::int32_t>();
      node.right = r.get<std::int32_t>();
      for (double& d : node.dist) d = r.get<double>();
      node.value = r.get<double>();
      node.gain = r.get<double>();
    }
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto& node = t.nodes[i];
      if (node.is_leaf()) continue;
      auto valid = [&](int c) { return c > static_cast<int>(i) && static_cast<std::size_t>(c) < t.nodes.size(); };
      if (!valid(node.left) || !valid(node.right)) throw FormatError("tree: corrupt child index");
    }
    if (t.nodes.empty()) throw FormatError("tree: no nodes");
    return t;
  }

 private:
  std::size_t depth_from(std::size_t i) const {
    if (nodes[i].is_leaf()) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(nodes[i].left)),
                        depth_from(static_cast<std::size_t>(nodes[i].right)));
  }
};

/// Row indices sorted by each feature's value (ties by row index).
using SortedColumns = std::vector<std::vector<std::uint32_t>>;

inline SortedColumns sort_columns(const Matrix& X, std::span<const std::uint32_t> rows) {
  SortedColumns cols(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    auto& c = cols[static_cast<std::size_t>(j)];
    c.assign(rows.begin(), rows.end());
    std::sort(c.begin(), c.end(), [&](auto a, auto b) {
      const double va = X(a, j), vb = X(b, j);
      return va < vb || (va == vb && a < b);
    });
  }
  return cols;
}

/// Midpoint between consecutive distinct values, kept strictly below hi.
inline double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid < hi ? mid : lo;
}

struct GrowParams {
  std::size_t max_depth = 15;
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // features examined per node; 0 = all
};

/// Depth-first tree growth over presorted columns. The criterion supplies the
/// node statistic, split gain, stopping rule and leaf filling.
template <class Criterion>
class TreeGrower {
 public:
  using Stat = typename Criterion::Stat;

  TreeGrower(const Matrix& X, const Criterion& crit, GrowParams p, Rng* rng)
      : X_(X), crit_(crit), p_(p), rng_(rng), goes_left_(static_cast<std::size_t>(X.rows()), 0) {}

  Tree grow(SortedColumns cols) {
    Tree t;
    build(t, std::move(cols), 0);
    return t;
  }

 private:
  struct Best {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  std::vector<std::size_t> candidate_features() {
    const std::size_t d = static_cast<std::size_t>(X_.cols());
    std::vector<std::size_t> f(d);
    for (std::size_t j = 0; j < d; ++j) f[j] = j;
    if (p_.max_features == 0 || p_.max_features >= d || rng_ == nullptr) return f;
    for (std::size_t i = 0; i < p_.max_features; ++i) std::swap(f[i], f[i + rng_->below(d - i)]);
    f.resize(p_.max_features);
    return f;
  }

  int build(Tree& t, SortedColumns cols, std::size_t depth) {
    const auto& rows = cols[0];
    Stat total = crit_.empty();
    for (auto r : rows) crit_.add(total, r);
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    crit_.fill_leaf(t.nodes.back(), total);

    if (depth >= p_.max_depth || rows.size() < 2 * p_.min_samples_leaf || rows.size() < 2 || crit_.pure(total))
      return id;

    Best best;
    for (std::size_t j : candidate_features()) {
      const auto& col = cols[j];
      const auto fj = static_cast<Eigen::Index>(j);
      Stat left = crit_.empty();
      for (std::size_t pos = 0; pos + 1 < col.size(); ++pos) {
        crit_.add(left, col[pos]);
        const double lo = X_(col[pos], fj), hi = X_(col[pos + 1], fj);
        if (!(lo < hi)) continue;
        const std::size_t nl = pos + 1, nr = col.size() - nl;
        if (nl < p_.min_samples_leaf || nr < p_.min_samples_leaf) continue;
        const Stat right = crit_.minus(total, left);
        if (!crit_.admissible(left, right)) continue;
        const double g = crit_.gain(total, left, right);
        if (g > best.gain) best = {static_cast<int>(j), split_threshold(lo, hi), g};
      }
    }
    if (best.feature < 0 || !(best.gain > crit_.min_gain(total))) return id;

    const auto bf = static_cast<Eigen::Index>(best.feature);
    for (auto r : rows) goes_left_[r] = X_(r, bf) <= best.threshold ? 1 : 0;
    SortedColumns lcols(cols.size()), rcols(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      for (auto r : cols[j]) (goes_left_[r] ? lcols[j] : rcols[j]).push_back(r);
      std::vector<std::uint32_t>().swap(cols[j]);
    }
    t.nodes[static_cast<std::size_t>(id)].feature = best.feature;
    t.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
    t.nodes[static_cast<std::size_t>(id)].gain = best.gain;
    const int l = build(t, std::move(lcols), depth + 1);
    const int r = build(t, std::move(rcols), depth + 1);
    t.nodes[static_cast<std::size_t>(id)].left = l;
    t.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  const Matrix& X_;
  const Criterion& crit_;
  GrowParams p_;
  Rng* rng_;
  std::vector<char> goes_left_;
};

/// Weighted Gini impurity decrease, W G(parent) - W_L G(left) - W_R G(right).
struct GiniCriterion {
  struct Stat {
    std::array<double, kNumClasses> w{};
  };
  std::span<const int> y;
  std::span<const double> weight;

  Stat empty() const { return {}; }
  void add(Stat& s, std::uint32_t r) const { s.w[static_cast<std::size_t>(y[r])] += weight[r]; }
  Stat minus(const Stat& a, const Stat& b) const {
    Stat s;
    for (int c = 0; c < kNumClasses; ++c) s.w[static_cast<std::size_t>(c)] = a.w[static_cast<std::size_t>(c)] - b.w[static_cast<std::size_t>(c)];
    return s;
  }
  static double total(const Stat& s) { return s.w[0] + s.w[1] + s.w[2]; }
  /// W * Gini(s) = W - sum(w_c^2) / W.
  static double weighted_impurity(const Stat& s) {
    const double W = total(s);
    if (W <= 0.0) return 0.0;
    return W - (s.w[0] * s.w[0] + s.w[1] * s.w[1] + s.w[2] * s.w[2]) / W;
  }
  bool pure(const Stat& s) const {
    int nonzero = 0;
    for (double v : s.w) nonzero += v > 0.0;
    return nonzero <= 1;
  }
  bool admissible(const Stat& l, const Stat& r) const { return total(l) > 0.0 && total(r) > 0.0; }
  double gain(const Stat& parent, const Stat& l, const Stat& r) const {
    return weighted_impurity(parent) - weighted_impurity(l) - weighted_impurity(r);
  }
  double min_gain(const Stat& parent) const { return 1e-12 * total(parent); }
  void fill_leaf(TreeNode& n, const Stat& s) const { n.dist = s.w; }
};

/// Second-order boosting gain on gradient and hessian sums.
struct NewtonCriterion {
  struct Stat {
    double g = 0.0;
    double h = 0.0;
  };
  std::span<const double> grad;
  std::span<const double> hess;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;

  Stat empty() const { return {}; }
  void add(Stat& s, std::uint32_t r) const {
    s.g += grad[r];
    s.h += hess[r];
  }
  Stat minus(const Stat& a, const Stat& b) const { return {a.g - b.g, a.h - b.h}; }
  bool pure(const Stat&) const { return false; }
  bool admissible(const Stat& l, const Stat& r) const { return l.h >= min_child_weight && r.h >= min_child_weight; }
  double score(const Stat& s) const { return s.g * s.g / (s.h + lambda); }
  double gain(const Stat& parent, const Stat& l, const Stat& r) const {
    return 0.5 * (score(l) + score(r) - score(parent)) - gamma;
  }
  double min_gain(const Stat&) const { return 0.0; }
  void fill_leaf(TreeNode& n, const Stat& s) const { n.value = -s.g / (s.h + lambda); }
};

}  // namespace wearstress
