/// @file logreg.hpp
/// L2-regularised multinomial logistic regression (the stacking meta-learner).

#pragma once

#include "wearstress/learners/forest.hpp"

namespace wearstress {

struct LogRegParams {
  double C = 1.0;
  std::size_t max_iter = 5000;
  double tol = 1e-6;
};

struct LogRegModel {
  LogRegParams params;
  Matrix W;  // classes x (features + 1); last column is the bias
  std::size_t iterations = 0;

  std::size_t n_features() const { return static_cast<std::size_t>(W.cols() - 1); }
  bool operator==(const LogRegModel& o) const { return W == o.W; }
};

inline Matrix logreg_scores(const Matrix& W, const Matrix& X) {
  const auto d = X.cols();
  return (X * W.leftCols(d).transpose()).rowwise() + W.col(d).transpose();
}

/// Mean cross-entropy + ||W_features||^2 / (2 C n) and its gradient. Rows of
/// classes flagged inactive receive a zero gradient.
inline double logreg_loss_and_grad(const Matrix& W, const Matrix& X, std::span<const int> y, double C,
                                   const std::array<bool, kNumClasses>& active, Matrix* grad) {
  const auto n = X.rows();
  const auto d = X.cols();
  Matrix Z = logreg_scores(W, X);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = Z.row(i).maxCoeff();
    const double lse = mx + std::log((Z.row(i).array() - mx).exp().sum());
    loss += lse - Z(i, y[static_cast<std::size_t>(i)]);
    Z.row(i) = (Z.row(i).array() - lse).exp();
    Z(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  }
  const double nn = static_cast<double>(n);
  loss = loss / nn + W.leftCols(d).squaredNorm() / (2.0 * C * nn);
  if (grad != nullptr) {
    grad->resize(W.rows(), W.cols());
    grad->leftCols(d) = Z.transpose() * X / nn + W.leftCols(d) / (C * nn);
    grad->col(d) = Z.colwise().sum().transpose() / nn;
    for (int c = 0; c < kNumClasses; ++c)
      if (!active[static_cast<std::size_t>(c)]) grad->row(c).setZero();
  }
  return loss;
}

/// Full-batch gradient descent from zero weights with Armijo backtracking,
/// until the gradient norm drops below tol or max_iter is reached. Classes
/// absent from y keep all-zero rows.
inline LogRegModel logreg_fit(const Matrix& X, std::span<const int> y, const LogRegParams& p = {}) {
  check_training_input(X, y, "logreg_fit");
  if (!(p.C > 0.0)) throw ConfigError("logreg_fit: C must be positive");
  std::array<bool, kNumClasses> active{};
  for (int c : y) active[static_cast<std::size_t>(c)] = true;
  LogRegModel m;
  m.params = p;
  m.W = Matrix::Zero(kNumClasses, X.cols() + 1);
  Matrix g, g_new;
  double f = logreg_loss_and_grad(m.W, X, y, p.C, active, &g);
  double t = 1.0;
  for (std::size_t it = 0; it < p.max_iter; ++it) {
    const double gg = g.squaredNorm();
    if (std::sqrt(gg) < p.tol) break;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      const Matrix cand = m.W - t * g;
      const double fc = logreg_loss_and_grad(cand, X, y, p.C, active, &g_new);
      if (fc <= f - 1e-4 * t * gg) {
        m.W = cand;
        f = fc;
        g.swap(g_new);
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    m.iterations = it + 1;
    if (!accepted) break;
    t = std::min(t * 2.0, 1e6);
  }
  if (!std::isfinite(f)) throw DivergenceError("logreg_fit: non-finite loss");
  return m;
}

inline Matrix predict_proba(const LogRegModel& m, const Matrix& X) {
  check_predict_input(X, m.n_features(), "logreg predict");
  Matrix Z = logreg_scores(m.W, X);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double mx = Z.row(i).maxCoeff();
    Z.row(i) = (Z.row(i).array() - mx).exp();
    Z.row(i) /= Z.row(i).sum();
  }
  return Z;
}

inline void write_model(binio::Writer& w, const LogRegModel& m) {
  w.put(m.params.C);
  w.put<std::uint64_t>(m.params.max_iter);
  w.put(m.params.tol);
  w.put<std::uint64_t>(m.iterations);
  w.put_matrix(m.W);
}

inline void read_model(binio::Reader& r, LogRegModel& m) {
  m.params.C = r.get<double>();
  m.params.max_iter = r.get<std::uint64_t>();
  m.params.tol = r.get<double>();
  m.iterations = r.get<std::uint64_t>();
  m.W = r.get_matrix();
  if (m.W.rows() != kNumClasses || m.W.cols() < 1) throw FormatError("logreg: bad weight matrix shape");
}

}  // namespace wearstress
