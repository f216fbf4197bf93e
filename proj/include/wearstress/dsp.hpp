/// @file dsp.hpp
/// Signal-processing primitives shared by preprocessing and feature
/// extraction.

#pragma once

#include "wearstress/core.hpp"

#include <complex>

namespace wearstress::dsp {

/// In-place iterative radix-2 FFT. Length must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("fft length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

/// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct Spectrum {
  double df = 0.0;
  std::vector<double> freqs;
  std::vector<double> psd;  // one-sided density, units^2 / Hz

  double total_power() const {
    double s = 0.0;
    for (double p : psd) s += p * df;
    return s;
  }
};

/// Welch estimate: Hann-windowed segments with constant detrend, one-sided
/// periodogram averaged over segments.
inline Spectrum welch(std::span<const double> x, double fs, std::size_t segment = 64,
                      double overlap = 0.5) {
  if (x.size() < segment) throw InsufficientData("welch: series shorter than one segment");
  const std::size_t step = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(segment * (1.0 - overlap))));
  const auto w = hann(segment);
  double wss = 0.0;
  for (double v : w) wss += v * v;
  const std::size_t nbins = segment / 2 + 1;
  Spectrum sp;
  sp.df = fs / static_cast<double>(segment);
  sp.freqs.resize(nbins);
  sp.psd.assign(nbins, 0.0);
  for (std::size_t k = 0; k < nbins; ++k) sp.freqs[k] = sp.df * static_cast<double>(k);

  std::vector<std::complex<double>> buf(segment);
  std::size_t nseg = 0;
  for (std::size_t start = 0; start + segment <= x.size(); start += step, ++nseg) {
    double mean = 0.0;
    for (std::size_t i = 0; i < segment; ++i) mean += x[start + i];
    mean /= static_cast<double>(segment);
    for (std::size_t i = 0; i < segment; ++i) buf[i] = (x[start + i] - mean) * w[i];
    fft(buf);
    for (std::size_t k = 0; k < nbins; ++k) {
      double p = std::norm(buf[k]) / (fs * wss);
      if (k != 0 && !(segment % 2 == 0 && k == segment / 2)) p *= 2.0;
      sp.psd[k] += p;
    }
  }
  for (double& p : sp.psd) p /= static_cast<double>(nseg);
  return sp;
}

/// Rectangle-rule power over bins with f_lo <= f < f_hi; the Nyquist bin is
/// included when f_hi reaches it, so a partition of [0, fs/2] sums to the total.
inline double integrate_band(const Spectrum& sp, double f_lo, double f_hi) {
  const double nyquist = sp.freqs.back();
  double s = 0.0;
  for (std::size_t k = 0; k < sp.freqs.size(); ++k) {
    const double f = sp.freqs[k];
    if (f >= f_lo && (f < f_hi || (f_hi >= nyquist && f == nyquist))) s += sp.psd[k] * sp.df;
  }
  return s;
}

/// Centered rolling median with window 2*half+1; indices beyond the ends
/// are clamped to the first/last sample.
inline std::vector<double> rolling_median(std::span<const double> x, std::size_t half) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  auto at = [&](std::ptrdiff_t i) {
    return x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1))];
  };
  const auto h = static_cast<std::ptrdiff_t>(half);
  std::vector<double> win;
  win.reserve(2 * half + 1);
  for (std::ptrdiff_t j = -h; j <= h; ++j) win.push_back(at(j));
  std::sort(win.begin(), win.end());
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = win[half];
    if (i + 1 == n) break;
    const double leaving = at(static_cast<std::ptrdiff_t>(i) - h);
    const double entering = at(static_cast<std::ptrdiff_t>(i) + h + 1);
    win.erase(std::lower_bound(win.begin(), win.end(), leaving));
    win.insert(std::upper_bound(win.begin(), win.end(), entering), entering);
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

/// Least-squares slope of y against x.
inline double ls_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

/// Interpolating cubic spline with not-a-knot end conditions (the third
/// derivative is continuous across the second and penultimate knots).
/// Reproduces any cubic polynomial exactly.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n != y_.size()) throw ConfigError("spline: knot arrays differ in length");
    if (n < 4) throw InsufficientData("spline: need at least 4 knots");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw ConfigError("spline: knots must be strictly increasing");

    std::vector<double> h(n - 1), slope(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      slope[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    // Unknowns M_1..M_{n-2} (second derivatives at interior knots); the end
    // values follow from the not-a-knot relations
    //   M_0     = ((h0 + h1) M_1 - h0 M_2) / h1
    //   M_{n-1} = ((h_{n-3} + h_{n-2}) M_{n-2} - h_{n-2} M_{n-3}) / h_{n-3}.
    const std::size_t m = n - 2;
    std::vector<double> sub(m, 0.0), diag(m, 0.0), sup(m, 0.0), rhs(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t i = r + 1;
      sub[r] = h[i - 1];
      diag[r] = 2.0 * (h[i - 1] + h[i]);
      sup[r] = h[i];
      rhs[r] = 6.0 * (slope[i] - slope[i - 1]);
    }
    {
      const double h0 = h[0], h1 = h[1];
      diag[0] += h0 * (h0 + h1) / h1;
      sup[0] -= h0 * h0 / h1;
      sub[0] = 0.0;
    }
    {
      const double a = h[n - 3], b = h[n - 2];
      diag[m - 1] += b * (a + b) / a;
      sub[m - 1] -= b * b / a;
      sup[m - 1] = 0.0;
    }
    std::vector<double> M(n, 0.0);
    if (m == 2) {
      // n == 4: both interior rows couple M_1 and M_2 directly.
      const double det = diag[0] * diag[1] - sup[0] * sub[1];
      M[1] = (rhs[0] * diag[1] - sup[0] * rhs[1]) / det;
      M[2] = (diag[0] * rhs[1] - sub[1] * rhs[0]) / det;
    } else {
      // Thomas algorithm.
      for (std::size_t r = 1; r < m; ++r) {
        const double f = sub[r] / diag[r - 1];
        diag[r] -= f * sup[r - 1];
        rhs[r] -= f * rhs[r - 1];
      }
      M[m] = rhs[m - 1] / diag[m - 1];
      for (std::size_t r = m - 1; r-- > 0;) M[r + 1] = (rhs[r] - sup[r] * M[r + 2]) / diag[r];
    }
    M[0] = ((h[0] + h[1]) * M[1] - h[0] * M[2]) / h[1];
    M[n - 1] = ((h[n - 3] + h[n - 2]) * M[n - 2] - h[n - 2] * M[n - 3]) / h[n - 3];
    m_ = std::move(M);
    h_ = std::move(h);
  }

  double front() const { return x_.front(); }
  double back() const { return x_.back(); }
  const std::vector<double>& knots() const { return x_; }

  /// Evaluates at t inside [front, back].
  double operator()(double t) const { return eval(t, locate(t)); }

  /// Evaluates at increasing query times in a single pass.
  std::vector<double> evaluate_sorted(std::span<const double> ts) const {
    std::vector<double> out(ts.size());
    std::size_t seg = 0;
    for (std::size_t q = 0; q < ts.size(); ++q) {
      while (seg + 2 < x_.size() && ts[q] > x_[seg + 1]) ++seg;
      out[q] = eval(ts[q], seg);
    }
    return out;
  }

 private:
  std::size_t locate(double t) const {
    auto it = std::upper_bound(x_.begin(), x_.end(), t);
    std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    return std::min(i, x_.size() - 2);
  }

  double eval(double t, std::size_t i) const {
    const double h = h_[i];
    const double a = x_[i + 1] - t;
    const double b = t - x_[i];
    return m_[i] * a * a * a / (6.0 * h) + m_[i + 1] * b * b * b / (6.0 * h) +
           (y_[i] / h - m_[i] * h / 6.0) * a + (y_[i + 1] / h - m_[i + 1] * h / 6.0) * b;
  }

  std::vector<double> x_, y_, m_, h_;
};

}  // namespace wearstress::dsp
