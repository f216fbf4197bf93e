/// @file balance.hpp
/// Minority oversampling (SMOTE), Tomek-link cleaning and their hybrid.
/// Only ever applied to training partitions.

#pragma once

#include "wearstress/core.hpp"

#include <map>

namespace wearstress {

enum class Provenance : std::uint8_t { Original = 0, Synthetic = 1 };

/// Feature rows with labels and, per row, where it came from. For original
/// rows `origin` is the row index in the caller's input; for synthetic rows
/// `origin` and `partner` are the two original rows it interpolates.
struct LabeledMatrix {
  Matrix X;
  std::vector<int> y;
  std::vector<Provenance> provenance;
  std::vector<std::ptrdiff_t> origin;
  std::vector<std::ptrdiff_t> partner;

  std::size_t rows() const { return y.size(); }

  static LabeledMatrix from(Matrix X, std::vector<int> y) {
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw ConfigError("LabeledMatrix: row/label count mismatch");
    LabeledMatrix m;
    m.X = std::move(X);
    m.y = std::move(y);
    const std::size_t n = m.y.size();
    m.provenance.assign(n, Provenance::Original);
    m.origin.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.origin[i] = static_cast<std::ptrdiff_t>(i);
    m.partner.assign(n, -1);
    return m;
  }

  std::size_t synthetic_count() const {
    return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), Provenance::Synthetic));
  }

  LabeledMatrix without(std::span<const std::size_t> drop) const {
    std::vector<char> gone(rows(), 0);
    for (auto i : drop) gone[i] = 1;
    LabeledMatrix out;
    const auto keep = static_cast<Eigen::Index>(rows() - static_cast<std::size_t>(std::count(gone.begin(), gone.end(), 1)));
    out.X.resize(keep, X.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < rows(); ++i) {
      if (gone[i]) continue;
      out.X.row(r++) = X.row(static_cast<Eigen::Index>(i));
      out.y.push_back(y[i]);
      out.provenance.push_back(provenance[i]);
      out.origin.push_back(origin[i]);
      out.partner.push_back(partner[i]);
    }
    return out;
  }
};

inline std::array<std::size_t, kNumClasses> class_counts(std::span<const int> y) {
  std::array<std::size_t, kNumClasses> c{};
  for (int v : y) {
    if (v < 0 || v >= kNumClasses) throw ConfigError("class index out of range");
    ++c[static_cast<std::size_t>(v)];
  }
  return c;
}

namespace detail {
inline double sq_dist(const Matrix& X, Eigen::Index a, Eigen::Index b) { return (X.row(a) - X.row(b)).squaredNorm(); }
}  // namespace detail

/// Oversamples every non-empty class below the majority count up to it.
/// Synthetic row = x + u (nn - x), u ~ U[0,1], nn drawn from the k nearest
/// same-class originals of x (Euclidean, ties to the lower row index).
/// Original rows are kept first and verbatim; synthetic rows follow, grouped
/// by class in ascending class order.
inline LabeledMatrix smote(const LabeledMatrix& data, std::size_t k = 5, std::uint64_t seed = 0) {
  if (k < 1) throw ConfigError("smote: k must be >= 1");
  const auto counts = class_counts(data.y);
  const std::size_t majority = *std::max_element(counts.begin(), counts.end());
  for (int c = 0; c < kNumClasses; ++c)
    if (counts[static_cast<std::size_t>(c)] == 1 && majority > 1)
      throw InsufficientData("smote: class '" + std::string(label_name(label_from_index(c))) +
                             "' has a single member; at least 2 are needed");

  LabeledMatrix out = data;
  for (int c = 0; c < kNumClasses; ++c) {
    const std::size_t nc = counts[static_cast<std::size_t>(c)];
    if (nc == 0 || nc == majority) continue;
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < data.rows(); ++i)
      if (data.y[i] == c) members.push_back(static_cast<Eigen::Index>(i));
    const std::size_t keff = std::min(k, nc - 1);

    std::vector<std::vector<Eigen::Index>> neighbours(nc);
    parallel_for(nc, [&](std::size_t a) {
      std::vector<std::pair<double, Eigen::Index>> d;
      d.reserve(nc - 1);
      for (std::size_t b = 0; b < nc; ++b)
        if (b != a) d.emplace_back(detail::sq_dist(data.X, members[a], members[b]), members[b]);
      std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(keff), d.end());
      for (std::size_t t = 0; t < keff; ++t) neighbours[a].push_back(d[t].second);
    });

    const std::size_t need = majority - nc;
    Rng rng(seed, "smote", static_cast<std::uint64_t>(c));
    const Eigen::Index base = out.X.rows();
    out.X.conservativeResize(base + static_cast<Eigen::Index>(need), Eigen::NoChange);
    for (std::size_t s = 0; s < need; ++s) {
      const std::size_t a = rng.below(nc);
      const Eigen::Index nn = neighbours[a][rng.below(keff)];
      const double u = rng.uniform();
      const Eigen::Index x = members[a];
      out.X.row(base + static_cast<Eigen::Index>(s)) = data.X.row(x) + u * (data.X.row(nn) - data.X.row(x));
      out.y.push_back(c);
      out.provenance.push_back(Provenance::Synthetic);
      out.origin.push_back(data.origin[static_cast<std::size_t>(x)]);
      out.partner.push_back(data.origin[static_cast<std::size_t>(nn)]);
    }
  }
  return out;
}

/// Nearest other row of every row (squared Euclidean, ties to the lower index).
inline std::vector<std::size_t> nearest_neighbours(const Matrix& X) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> nn(n, 0);
  parallel_for(n, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (Eigen::Index c = 0; c < X.cols() && s < best; ++c) {
        const double d = X(static_cast<Eigen::Index>(i), c) - X(static_cast<Eigen::Index>(j), c);
        s += d * d;
      }
      if (s < best) {
        best = s;
        arg = j;
      }
    }
    nn[i] = arg;
  });
  return nn;
}

/// Pairs (i < j) of opposite-class rows that are each other's nearest neighbour.
inline std::vector<std::pair<std::size_t, std::size_t>> tomek_links(const LabeledMatrix& data) {
  std::vector<std::pair<std::size_t, std::size_t>> links;
  if (data.rows() < 2) return links;
  const auto nn = nearest_neighbours(data.X);
  for (std::size_t i = 0; i < nn.size(); ++i) {
    const std::size_t j = nn[i];
    if (i < j && nn[j] == i && data.y[i] != data.y[j]) links.emplace_back(i, j);
  }
  return links;
}

inline LabeledMatrix remove_tomek_links(const LabeledMatrix& data) {
  std::vector<std::size_t> drop;
  for (auto [i, j] : tomek_links(data)) {
    drop.push_back(i);
    drop.push_back(j);
  }
  return data.without(drop);
}

/// SMOTE followed by removal of both members of every Tomek link.
inline LabeledMatrix smote_tomek(const LabeledMatrix& data, std::size_t k = 5, std::uint64_t seed = 0) {
  return remove_tomek_links(smote(data, k, seed));
}

enum class Resampler { None, Smote, SmoteTomek };

inline std::string_view resampler_name(Resampler r) {
  switch (r) {
    case Resampler::None: return "none";
    case Resampler::Smote: return "smote";
    case Resampler::SmoteTomek: return "smote-tomek";
  }
  return "?";
}

inline Resampler parse_resampler(std::string_view s) {
  if (s == "none") return Resampler::None;
  if (s == "smote") return Resampler::Smote;
  if (s == "smote-tomek") return Resampler::SmoteTomek;
  throw ConfigError("unknown resampler '" + std::string(s) + "' (expected none, smote or smote-tomek)");
}

inline LabeledMatrix resample(const LabeledMatrix& data, Resampler r, std::size_t k, std::uint64_t seed) {
  switch (r) {
    case Resampler::None: return data;
    case Resampler::Smote: return smote(data, k, seed);
    case Resampler::SmoteTomek: return smote_tomek(data, k, seed);
  }
  return data;
}

}  // namespace wearstress
