/// @file mlp.hpp
/// Multilayer perceptron: ReLU hidden layers with optional batch
/// normalisation and inverted dropout, softmax output, Adam updates.

#pragma once

#include "wearstress/learners/forest.hpp"

namespace wearstress {

struct MlpParams {
  std::vector<std::size_t> hidden{256, 128, 64};
  double dropout = 0.3;
  bool batch_norm = true;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct MlpLayer {
  Matrix W;  // fan_in x fan_out
  Vector b;
  // Batch-norm parameters and running statistics; empty when disabled.
  Vector gamma, beta, running_mean, running_var;

  bool operator==(const MlpLayer&) const = default;
};

struct MlpModel {
  MlpParams params;
  Vector input_mean, input_scale;  // features are standardised before the first layer
  std::vector<MlpLayer> layers;    // hidden layers then the output layer

  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.9;

  std::size_t n_features() const { return static_cast<std::size_t>(input_mean.size()); }
  bool uses_bn(std::size_t l) const { return params.batch_norm && l + 1 < layers.size(); }
  bool operator==(const MlpModel& o) const {
    return input_mean == o.input_mean && input_scale == o.input_scale && layers == o.layers;
  }

  /// Trainable parameters, flattened in layer order: W, b, then gamma, beta.
  std::vector<double> parameters() const {
    std::vector<double> v;
    for_each_param([&](const auto& m) { v.insert(v.end(), m.data(), m.data() + m.size()); });
    return v;
  }

  void set_parameters(std::span<const double> v) {
    std::size_t k = 0;
    for_each_param_mut([&](auto& m) {
      if (k + static_cast<std::size_t>(m.size()) > v.size()) throw ConfigError("mlp: parameter vector too short");
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(k), v.begin() + static_cast<std::ptrdiff_t>(k + m.size()), m.data());
      k += static_cast<std::size_t>(m.size());
    });
    if (k != v.size()) throw ConfigError("mlp: parameter vector too long");
  }

  template <class F>
  void for_each_param(F&& f) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      f(layers[l].W);
      f(layers[l].b);
      if (uses_bn(l)) {
        f(layers[l].gamma);
        f(layers[l].beta);
      }
    }
  }
  template <class F>
  void for_each_param_mut(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      f(layers[l].W);
      f(layers[l].b);
      if (uses_bn(l)) {
        f(layers[l].gamma);
        f(layers[l].beta);
      }
    }
  }

  Matrix standardize(const Matrix& X) const {
    return (X.rowwise() - input_mean.transpose()).array().rowwise() / input_scale.transpose().array();
  }
};

namespace detail {

inline void softmax_rows(Matrix& Z) {
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double mx = Z.row(i).maxCoeff();
    Z.row(i) = (Z.row(i).array() - mx).exp();
    Z.row(i) /= Z.row(i).sum();
  }
}

struct MlpCache {
  std::vector<Matrix> input;  // activation entering each layer
  std::vector<Matrix> pre;    // affine output of each hidden layer
  std::vector<Matrix> xhat;   // normalised pre-activations (batch norm)
  std::vector<Vector> inv_std;
  std::vector<Matrix> post;   // after batch norm / affine, before ReLU
  std::vector<Matrix> keep;   // dropout keep-mask scaled by 1/(1-p)
  Matrix prob;
};

}  // namespace detail

/// Inference pass: frozen batch-norm statistics, no dropout.
inline Matrix predict_proba(const MlpModel& m, const Matrix& X) {
  check_predict_input(X, m.n_features(), "mlp predict");
  Matrix A = m.standardize(X);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    Matrix Z = (A * L.W).rowwise() + L.b.transpose();
    if (l + 1 == m.layers.size()) {
      detail::softmax_rows(Z);
      return Z;
    }
    if (m.uses_bn(l)) {
      const Vector inv = (L.running_var.array() + MlpModel::kBnEps).rsqrt();
      Z = ((Z.rowwise() - L.running_mean.transpose()).array().rowwise() * (inv.array() * L.gamma.array()).transpose())
              .rowwise() +
          L.beta.transpose().array();
    }
    A = Z.cwiseMax(0.0);
  }
  return A;
}

namespace detail {

/// Training-mode forward pass on standardised inputs. Batch norm uses batch
/// statistics; dropout is applied when rng is non-null.
inline MlpCache mlp_forward(const MlpModel& m, const Matrix& Xs, Rng* rng) {
  MlpCache c;
  const std::size_t L = m.layers.size();
  c.input.resize(L);
  c.pre.resize(L);
  c.xhat.resize(L);
  c.inv_std.resize(L);
  c.post.resize(L);
  c.keep.resize(L);
  Matrix A = Xs;
  const double p = m.params.dropout;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = m.layers[l];
    c.input[l] = A;
    Matrix Z = (A * layer.W).rowwise() + layer.b.transpose();
    if (l + 1 == L) {
      softmax_rows(Z);
      c.prob = std::move(Z);
      break;
    }
    c.pre[l] = Z;
    if (m.uses_bn(l)) {
      const Vector mean = Z.colwise().mean();
      const Matrix centered = Z.rowwise() - mean.transpose();
      const Vector var = centered.array().square().colwise().mean();
      c.inv_std[l] = (var.array() + MlpModel::kBnEps).rsqrt();
      c.xhat[l] = centered.array().rowwise() * c.inv_std[l].transpose().array();
      Z = (c.xhat[l].array().rowwise() * layer.gamma.transpose().array()).rowwise() + layer.beta.transpose().array();
    }
    c.post[l] = Z;
    A = Z.cwiseMax(0.0);
    if (rng != nullptr && p > 0.0) {
      c.keep[l].resize(A.rows(), A.cols());
      for (Eigen::Index j = 0; j < A.cols(); ++j)
        for (Eigen::Index i = 0; i < A.rows(); ++i) c.keep[l](i, j) = rng->uniform() >= p ? 1.0 / (1.0 - p) : 0.0;
      A = A.cwiseProduct(c.keep[l]);
    }
  }
  return c;
}

/// Mean cross-entropy of the cached forward pass and gradients in the same
/// order as MlpModel::parameters().
inline double mlp_backward(const MlpModel& m, const MlpCache& c, std::span<const int> y, std::vector<Matrix>& grads) {
  const std::size_t L = m.layers.size();
  const auto B = c.prob.rows();
  double loss = 0.0;
  Matrix dZ = c.prob;
  for (Eigen::Index i = 0; i < B; ++i) {
    loss -= std::log(std::max(c.prob(i, y[static_cast<std::size_t>(i)]), 1e-300));
    dZ(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  }
  loss /= static_cast<double>(B);
  dZ /= static_cast<double>(B);

  std::vector<std::vector<Matrix>> per_layer(L);
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = m.layers[l];
    if (l + 1 < L) {
      Matrix dA = std::move(dZ);
      if (c.keep[l].size() > 0) dA = dA.cwiseProduct(c.keep[l]);
      Matrix dPost = (c.post[l].array() > 0.0).select(dA, 0.0);
      if (m.uses_bn(l)) {
        const Vector dgamma = (dPost.array() * c.xhat[l].array()).colwise().sum();
        const Vector dbeta = dPost.colwise().sum();
        const Matrix dxhat = dPost.array().rowwise() * layer.gamma.transpose().array();
        const Vector sum_dxhat = dxhat.colwise().sum();
        const Vector sum_dxhat_xhat = (dxhat.array() * c.xhat[l].array()).colwise().sum();
        const double nb = static_cast<double>(B);
        Matrix t = (dxhat * nb).rowwise() - sum_dxhat.transpose();
        t -= (c.xhat[l].array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
        dZ = (t.array().rowwise() * (c.inv_std[l].transpose().array() / nb)).matrix();
        per_layer[l] = {c.input[l].transpose() * dZ, dZ.colwise().sum().transpose(), dgamma, dbeta};
      } else {
        dZ = std::move(dPost);
        per_layer[l] = {c.input[l].transpose() * dZ, dZ.colwise().sum().transpose()};
      }
    } else {
      per_layer[l] = {c.input[l].transpose() * dZ, dZ.colwise().sum().transpose()};
    }
    if (l > 0) dZ = dZ * layer.W.transpose();
  }
  grads.clear();
  for (auto& v : per_layer)
    for (auto& g : v) grads.push_back(std::move(g));
  return loss;
}

}  // namespace detail

/// Mean cross-entropy and its gradient (flattened like parameters()) for
/// already standardised inputs, using batch statistics and no dropout.
inline std::pair<double, std::vector<double>> mlp_loss_and_grad(const MlpModel& m, const Matrix& Xs, std::span<const int> y) {
  const auto cache = detail::mlp_forward(m, Xs, nullptr);
  std::vector<Matrix> grads;
  const double loss = detail::mlp_backward(m, cache, y, grads);
  std::vector<double> flat;
  for (const auto& g : grads) flat.insert(flat.end(), g.data(), g.data() + g.size());
  return {loss, flat};
}

/// He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases,
/// unit batch-norm scale. Input standardisation is the identity.
inline MlpModel mlp_init(std::size_t n_features, const MlpParams& p) {
  MlpModel m;
  m.params = p;
  m.input_mean = Vector::Zero(static_cast<Eigen::Index>(n_features));
  m.input_scale = Vector::Ones(static_cast<Eigen::Index>(n_features));
  Rng rng(p.seed, "mlp-init");
  std::vector<std::size_t> widths{n_features};
  widths.insert(widths.end(), p.hidden.begin(), p.hidden.end());
  widths.push_back(kNumClasses);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    MlpLayer layer;
    const auto fi = static_cast<Eigen::Index>(widths[l]), fo = static_cast<Eigen::Index>(widths[l + 1]);
    const double lim = std::sqrt(6.0 / static_cast<double>(widths[l]));
    layer.W.resize(fi, fo);
    for (Eigen::Index j = 0; j < fo; ++j)
      for (Eigen::Index i = 0; i < fi; ++i) layer.W(i, j) = rng.uniform(-lim, lim);
    layer.b = Vector::Zero(fo);
    if (p.batch_norm && l + 2 < widths.size()) {
      layer.gamma = Vector::Ones(fo);
      layer.beta = Vector::Zero(fo);
      layer.running_mean = Vector::Zero(fo);
      layer.running_var = Vector::Ones(fo);
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

/// Mini-batch Adam on mean cross-entropy. Batches are reshuffled every
/// epoch from Rng(seed, "mlp-epoch", epoch); the last batch may be short.
inline MlpModel mlp_fit(const Matrix& X, std::span<const int> y, const MlpParams& p) {
  check_training_input(X, y, "mlp_fit");
  if (p.dropout < 0.0 || p.dropout >= 1.0) throw ConfigError("mlp_fit: dropout must be in [0, 1)");
  if (p.batch_size == 0) throw ConfigError("mlp_fit: batch_size must be positive");
  MlpModel m = mlp_init(static_cast<std::size_t>(X.cols()), p);
  m.input_mean = X.colwise().mean().transpose();
  m.input_scale = ((X.rowwise() - m.input_mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
  for (Eigen::Index j = 0; j < m.input_scale.size(); ++j)
    if (!(m.input_scale(j) > 1e-12)) m.input_scale(j) = 1.0;
  const Matrix Xs = m.standardize(X);

  std::vector<Matrix> mom, vel;
  m.for_each_param([&](const auto& P) {
    mom.push_back(Matrix::Zero(P.rows(), P.cols()));
    vel.push_back(Matrix::Zero(P.rows(), P.cols()));
  });
  const std::size_t n = y.size();
  const std::size_t bs = std::min(p.batch_size, n);
  std::vector<std::size_t> order(n);
  std::vector<Matrix> grads;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < p.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(p.seed, "mlp-epoch", epoch);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      Matrix xb(static_cast<Eigen::Index>(len), Xs.cols());
      std::vector<int> yb(len);
      for (std::size_t k = 0; k < len; ++k) {
        xb.row(static_cast<Eigen::Index>(k)) = Xs.row(static_cast<Eigen::Index>(order[start + k]));
        yb[k] = y[order[start + k]];
      }
      const auto cache = detail::mlp_forward(m, xb, &rng);
      const double loss = detail::mlp_backward(m, cache, yb, grads);
      if (!std::isfinite(loss)) throw DivergenceError("mlp_fit: non-finite loss at epoch " + std::to_string(epoch + 1));
      epoch_loss += loss * static_cast<double>(len);

      for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
        if (!m.uses_bn(l)) continue;
        const Vector mean = cache.pre[l].colwise().mean();
        const Vector var = (cache.pre[l].rowwise() - mean.transpose()).array().square().colwise().mean();
        auto& L = m.layers[l];
        L.running_mean = MlpModel::kBnMomentum * L.running_mean + (1.0 - MlpModel::kBnMomentum) * mean;
        L.running_var = MlpModel::kBnMomentum * L.running_var + (1.0 - MlpModel::kBnMomentum) * var;
      }

      ++step;
      const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
      std::size_t k = 0;
      m.for_each_param_mut([&](auto& P) {
        auto& g = grads[k];
        mom[k] = p.beta1 * mom[k] + (1.0 - p.beta1) * g;
        vel[k] = p.beta2 * vel[k] + (1.0 - p.beta2) * g.cwiseProduct(g);
        const Matrix upd = (mom[k] / c1).array() / ((vel[k] / c2).array().sqrt() + p.epsilon);
        P -= p.learning_rate * Eigen::Map<const Matrix>(upd.data(), P.rows(), P.cols());
        ++k;
      });
    }
    if (!std::isfinite(epoch_loss)) throw DivergenceError("mlp_fit: non-finite loss at epoch " + std::to_string(epoch + 1));
  }
  return m;
}

inline void write_model(binio::Writer& w, const MlpModel& m) {
  std::vector<int> hidden(m.params.hidden.begin(), m.params.hidden.end());
  w.put_ints(hidden);
  w.put(m.params.dropout);
  w.put<std::uint8_t>(m.params.batch_norm);
  w.put(m.params.learning_rate);
  w.put(m.params.beta1);
  w.put(m.params.beta2);
  w.put(m.params.epsilon);
  w.put<std::uint64_t>(m.params.epochs);
  w.put<std::uint64_t>(m.params.batch_size);
  w.put<std::uint64_t>(m.params.seed);
  w.put_doubles({m.input_mean.data(), static_cast<std::size_t>(m.input_mean.size())});
  w.put_doubles({m.input_scale.data(), static_cast<std::size_t>(m.input_scale.size())});
  w.put<std::uint64_t>(m.layers.size());
  auto vec = [&](const Vector& v) { w.put_doubles({v.data(), static_cast<std::size_t>(v.size())}); };
  for (const auto& L : m.layers) {
    w.put_matrix(L.W);
    vec(L.b);
    vec(L.gamma);
    vec(L.beta);
    vec(L.running_mean);
    vec(L.running_var);
  }
}

inline void read_model(binio::Reader& r, MlpModel& m) {
  const auto hidden = r.get_ints();
  m.params.hidden.assign(hidden.begin(), hidden.end());
  m.params.dropout = r.get<double>();
  m.params.batch_norm = r.get<std::uint8_t>() != 0;
  m.params.learning_rate = r.get<double>();
  m.params.beta1 = r.get<double>();
  m.params.beta2 = r.get<double>();
  m.params.epsilon = r.get<double>();
  m.params.epochs = r.get<std::uint64_t>();
  m.params.batch_size = r.get<std::uint64_t>();
  m.params.seed = r.get<std::uint64_t>();
  auto vec = [&]() {
    const auto v = r.get_doubles();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  m.input_mean = vec();
  m.input_scale = vec();
  const auto n = r.get<std::uint64_t>();
  if (n != hidden.size() + 1) throw FormatError("mlp: layer count does not match architecture");
  m.layers.clear();
  Eigen::Index width = m.input_mean.size();
  for (std::uint64_t l = 0; l < n; ++l) {
    MlpLayer L;
    L.W = r.get_matrix();
    L.b = vec();
    L.gamma = vec();
    L.beta = vec();
    L.running_mean = vec();
    L.running_var = vec();
    if (L.W.rows() != width || L.b.size() != L.W.cols()) throw FormatError("mlp: inconsistent layer shapes");
    width = L.W.cols();
    m.layers.push_back(std::move(L));
  }
  if (width != kNumClasses) throw FormatError("mlp: output width must be 3");
}

}  // namespace wearstress
