/// @file features.hpp
/// The 42-feature epoch description: time-domain, spectral, nonlinear,
/// statistical-moment and cepstral summaries of EDA, heart rhythm,
/// skin temperature and accelerometer magnitude.

#pragma once

#include "wearstress/dsp.hpp"
#include "wearstress/preprocess.hpp"

#include <json.hpp>

#include <unordered_map>

namespace wearstress {

inline constexpr std::string_view kFeatureFormat = "wearstress-features-v1";

/// Raised when an epoch cannot produce a complete feature vector.
struct FeatureRejection : InsufficientData {
  using InsufficientData::InsufficientData;
};

// ---------------------------------------------------------------------------
// EDA decomposition
// ---------------------------------------------------------------------------

struct EdaDecomposition {
  std::vector<double> tonic;
  std::vector<double> phasic;
  std::vector<std::size_t> scr_peaks;
};

struct EdaParams {
  double fs_hz = 4.0;
  std::size_t tonic_window = 81;  // 20 s at 4 Hz
  double scr_threshold = 0.05;
  double min_peak_distance_s = 1.0;
};

/// Tonic level = centered rolling median (edges clamped); phasic = residual;
/// SCR peaks = local maxima of the phasic part above the amplitude threshold,
/// thinned greedily by amplitude to the minimum inter-peak distance.
inline EdaDecomposition decompose_eda(std::span<const double> eda, const EdaParams& p = {}) {
  EdaDecomposition d;
  d.tonic = dsp::rolling_median(eda, p.tonic_window / 2);
  d.phasic.resize(eda.size());
  for (std::size_t i = 0; i < eda.size(); ++i) d.phasic[i] = eda[i] - d.tonic[i];

  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < eda.size(); ++i)
    if (d.phasic[i] > d.phasic[i - 1] && d.phasic[i] >= d.phasic[i + 1] && d.phasic[i] > p.scr_threshold)
      cand.push_back(i);
  std::stable_sort(cand.begin(), cand.end(), [&](auto a, auto b) { return d.phasic[a] > d.phasic[b]; });
  const auto min_dist = static_cast<std::size_t>(std::ceil(p.min_peak_distance_s * p.fs_hz));
  for (auto c : cand) {
    bool keep = true;
    for (auto k : d.scr_peaks)
      if ((c > k ? c - k : k - c) < min_dist) {
        keep = false;
        break;
      }
    if (keep) d.scr_peaks.push_back(c);
  }
  std::sort(d.scr_peaks.begin(), d.scr_peaks.end());
  return d;
}

/// Area of the positive phasic component, rectangle rule (units x seconds).
inline double phasic_auc(std::span<const double> phasic, double fs_hz) {
  double s = 0.0;
  for (double v : phasic) s += std::max(v, 0.0);
  return s / fs_hz;
}

// ---------------------------------------------------------------------------
// Heart-rate variability
// ---------------------------------------------------------------------------

struct HrvTime {
  double hr_mean_bpm = 0.0;
  double rmssd_ms = 0.0;
  double pnn50_pct = 0.0;
};

inline HrvTime hrv_time(std::span<const double> ibi_ms) {
  if (ibi_ms.size() < 3) throw InsufficientData("hrv insufficient-data");
  double mean = 0.0;
  for (double v : ibi_ms) mean += v;
  mean /= static_cast<double>(ibi_ms.size());
  double ss = 0.0;
  std::size_t over = 0;
  for (std::size_t i = 1; i < ibi_ms.size(); ++i) {
    const double d = ibi_ms[i] - ibi_ms[i - 1];
    ss += d * d;
    if (std::abs(d) > 50.0) ++over;
  }
  const double nd = static_cast<double>(ibi_ms.size() - 1);
  return {60000.0 / mean, std::sqrt(ss / nd), 100.0 * static_cast<double>(over) / nd};
}

struct PoincareSd {
  double sd1 = 0.0;
  double sd2 = 0.0;
};

/// SD1 = sqrt(var(diff)/2), SD2 = sqrt(2 var(ibi) - var(diff)/2), population
/// variances; a negative radicand from rounding is clamped to zero.
inline PoincareSd poincare_sd(std::span<const double> ibi_ms) {
  if (ibi_ms.size() < 3) throw InsufficientData("hrv insufficient-data");
  auto pvar = [](std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };
  std::vector<double> diffs(ibi_ms.size() - 1);
  for (std::size_t i = 1; i < ibi_ms.size(); ++i) diffs[i - 1] = ibi_ms[i] - ibi_ms[i - 1];
  const double vd = pvar(diffs);
  const double vi = pvar(ibi_ms);
  return {std::sqrt(std::max(0.0, vd / 2.0)), std::sqrt(std::max(0.0, 2.0 * vi - vd / 2.0))};
}

// ---------------------------------------------------------------------------
// Spectral
// ---------------------------------------------------------------------------

/// Welch band power over [f_lo, f_hi): Hann window, 64-sample segments, 50%
/// overlap; the Nyquist bin counts when f_hi = fs/2.
inline double band_power(std::span<const double> series, double fs_hz, double f_lo, double f_hi) {
  if (series.size() < 64) throw InsufficientData("band_power: need at least 64 samples");
  if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi <= fs_hz / 2.0 + 1e-12))
    throw ConfigError("band_power: band must satisfy 0 <= f_lo < f_hi <= fs/2");
  return dsp::integrate_band(dsp::welch(series, fs_hz), f_lo, f_hi);
}

/// Frequency of the largest Welch bin in (0, f_max]; ties go to the lower bin.
inline double dominant_frequency(std::span<const double> series, double fs_hz, double f_max = 5.0) {
  const auto sp = dsp::welch(series, fs_hz);
  double best_f = 0.0, best_p = -1.0;
  for (std::size_t k = 1; k < sp.freqs.size(); ++k) {
    if (sp.freqs[k] > f_max) break;
    if (sp.psd[k] > best_p) {
      best_p = sp.psd[k];
      best_f = sp.freqs[k];
    }
  }
  return best_p > 0.0 ? best_f : 0.0;
}

// ---------------------------------------------------------------------------
// Entropy and dynamics
// ---------------------------------------------------------------------------

inline double population_sd(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

struct TemplateCounts {
  std::uint64_t b = 0;  // matching pairs of length m
  std::uint64_t a = 0;  // matching pairs of length m + 1
};

/// Counts template pairs (i < j, both among the first N - m templates) whose
/// Chebyshev distance is <= r, for lengths m and m + 1.
///
/// Templates are bucketed by their first value into cells slightly wider
/// than r, so matching pairs share a cell or sit in adjacent cells; within a
/// cell they are ordered by their second value, which bounds each scan to a
/// window of width 2r on both leading coordinates.
inline TemplateCounts count_template_matches(std::span<const double> x, int m, double r) {
  TemplateCounts c;
  const std::size_t n = x.size();
  if (m < 1 || n <= static_cast<std::size_t>(m)) return c;
  const std::size_t nt = n - static_cast<std::size_t>(m);
  const std::size_t w = static_cast<std::size_t>(m) + 1;
  const bool grid = m >= 2 && r > 0.0;
  const double width = r * (1.0 + 1e-9);
  std::vector<std::int64_t> cell(nt, 0);
  if (grid)
    for (std::size_t i = 0; i < nt; ++i) cell[i] = static_cast<std::int64_t>(std::floor(x[i] / width));
  std::vector<std::size_t> order(nt);
  for (std::size_t i = 0; i < nt; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (grid) {
      if (cell[a] != cell[b]) return cell[a] < cell[b];
      if (x[a + 1] != x[b + 1]) return x[a + 1] < x[b + 1];
    } else if (x[a] != x[b]) {
      return x[a] < x[b];
    }
    return a < b;
  });
  std::vector<double> t(nt * w);
  for (std::size_t p = 0; p < nt; ++p)
    for (std::size_t k = 0; k < w; ++k) t[p * w + k] = x[order[p] + k];
  auto tally = [&](const double* a, const double* b) {
    for (std::size_t k = 0; k + 1 < w; ++k)
      if (std::abs(a[k] - b[k]) > r) return;
    ++c.b;
    if (std::abs(a[w - 1] - b[w - 1]) <= r) ++c.a;
  };

  if (!grid) {
    for (std::size_t p = 0; p < nt; ++p)
      for (std::size_t q = p + 1; q < nt && t[q * w] - t[p * w] <= r; ++q) tally(&t[p * w], &t[q * w]);
    return c;
  }
  // Cell groups [begin, end) in the sorted layout.
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t p = 0; p < nt;) {
    std::size_t q = p;
    while (q < nt && cell[order[q]] == cell[order[p]]) ++q;
    groups.emplace_back(p, q);
    p = q;
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [b0, e0] = groups[g];
    for (std::size_t p = b0; p < e0; ++p)
      for (std::size_t q = p + 1; q < e0 && t[q * w + 1] - t[p * w + 1] <= r; ++q) tally(&t[p * w], &t[q * w]);
    if (g + 1 == groups.size() || cell[order[groups[g + 1].first]] != cell[order[b0]] + 1) continue;
    const auto [b1, e1] = groups[g + 1];
    std::size_t lo = b1;
    for (std::size_t p = b0; p < e0; ++p) {
      const double y1 = t[p * w + 1];
      while (lo < e1 && t[lo * w + 1] < y1 - r) ++lo;
      for (std::size_t q = lo; q < e1 && t[q * w + 1] <= y1 + r; ++q) tally(&t[p * w], &t[q * w]);
    }
  }
  return c;
}

/// Sample entropy with an explicit tolerance r: -ln(A/B). When no pair
/// matches (A or B zero) the value is capped at ln((N-m-1)(N-m)).
inline double sample_entropy_r(std::span<const double> x, int m, double r) {
  if (x.size() < static_cast<std::size_t>(m) + 2) throw InsufficientData("sample_entropy: series too short");
  const auto c = count_template_matches(x, m, r);
  const double n = static_cast<double>(x.size());
  if (c.a == 0 || c.b == 0) return std::log((n - m - 1) * (n - m));
  return -std::log(static_cast<double>(c.a) / static_cast<double>(c.b));
}

/// Sample entropy with r = r_factor * population sd; zero for flat series.
inline double sample_entropy(std::span<const double> x, int m = 2, double r_factor = 0.2) {
  if (x.size() < static_cast<std::size_t>(m) + 2) throw InsufficientData("sample_entropy: series too short");
  const double sd = population_sd(x);
  if (!(sd > 0.0)) return 0.0;
  return sample_entropy_r(x, m, r_factor * sd);
}

/// Non-overlapping window means of width tau; floor(N / tau) points.
inline std::vector<double> coarse_grain(std::span<const double> x, std::size_t tau) {
  std::vector<double> y(x.size() / tau);
  for (std::size_t j = 0; j < y.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < tau; ++k) s += x[j * tau + k];
    y[j] = s / static_cast<double>(tau);
  }
  return y;
}

/// Mean sample entropy over coarse-grained copies, r fixed from the original series.
inline double multiscale_entropy(std::span<const double> x, std::span<const int> scales, int m = 2,
                                 double r_factor = 0.2) {
  if (scales.empty()) throw ConfigError("multiscale_entropy: no scales");
  const int max_scale = *std::max_element(scales.begin(), scales.end());
  if (x.size() < static_cast<std::size_t>(max_scale) * static_cast<std::size_t>(m + 2))
    throw InsufficientData("multiscale_entropy: series too short");
  const double sd = population_sd(x);
  if (!(sd > 0.0)) return 0.0;
  const double r = r_factor * sd;
  double total = 0.0;
  for (int tau : scales) total += sample_entropy_r(coarse_grain(x, static_cast<std::size_t>(tau)), m, r);
  return total / static_cast<double>(scales.size());
}

inline double multiscale_entropy(std::span<const double> x, int max_scale = 5, int m = 2) {
  std::vector<int> scales(static_cast<std::size_t>(max_scale));
  for (int i = 0; i < max_scale; ++i) scales[static_cast<std::size_t>(i)] = i + 1;
  return multiscale_entropy(x, scales, m);
}

/// Largest Lyapunov exponent (nats per sample) by Rosenstein's method:
/// delay embedding, nearest neighbour per point outside one mean period,
/// mean log divergence over the first fit_steps steps, least-squares slope.
/// Log distances are floored at 1e-9 sd so exactly recurring neighbours
/// contribute a flat curve.
inline double lyapunov_exponent(std::span<const double> x, int embed_m = 3, int delay = 1, int fit_steps = 10) {
  if (x.size() < 200) throw InsufficientData("lyapunov: need at least 200 samples");
  const double sd = population_sd(x);
  if (!(sd > 0.0)) return 0.0;
  const std::size_t span_len = static_cast<std::size_t>((embed_m - 1) * delay);
  const std::size_t M = x.size() - span_len;
  auto coord = [&](std::size_t i, int d) { return x[i + static_cast<std::size_t>(d * delay)]; };

  // Mean period from the mean frequency of the Welch spectrum (cycles/sample).
  const auto sp = dsp::welch(x, 1.0);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < sp.freqs.size(); ++k) {
    num += sp.freqs[k] * sp.psd[k];
    den += sp.psd[k];
  }
  const double mean_f = den > 0.0 ? num / den : 0.0;
  const std::size_t period = mean_f > 0.0 ? static_cast<std::size_t>(std::ceil(1.0 / mean_f)) : 1;

  auto dist2 = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (int d = 0; d < embed_m; ++d) {
      const double v = coord(i, d) - coord(j, d);
      s += v * v;
    }
    return s;
  };

  // Exact nearest-neighbour search over a grid on the first two embedding
  // coordinates, visiting square rings of cells outward; after ring k every
  // unvisited point is farther than k cell widths on some coordinate.
  const int gdim = std::min(embed_m, 2);
  // Cell width from a robust spread so heavy tails do not inflate it.
  std::vector<double> dev(x.begin(), x.end());
  const double med = dsp::median(dev);
  for (double& v : dev) v = std::abs(v - med);
  const double spread = std::max(1.4826 * dsp::median(dev), 1e-3 * sd);
  const double width = 16.0 * spread / std::sqrt(static_cast<double>(M));
  auto cell_of = [&](std::size_t i, int d) {
    return d < gdim ? static_cast<std::int64_t>(std::floor(coord(i, d) / width)) : std::int64_t{0};
  };
  auto key = [](std::int64_t c0, std::int64_t c1) {
    return (static_cast<std::uint64_t>(c0 + (1LL << 31)) << 32) ^ static_cast<std::uint64_t>(c1 + (1LL << 31));
  };
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells;
  std::int64_t lo0 = std::numeric_limits<std::int64_t>::max(), hi0 = std::numeric_limits<std::int64_t>::min();
  std::int64_t lo1 = lo0, hi1 = hi0;
  for (std::size_t i = 0; i < M; ++i) {
    const auto c0 = cell_of(i, 0), c1 = cell_of(i, 1);
    cells[key(c0, c1)].push_back(static_cast<std::uint32_t>(i));
    lo0 = std::min(lo0, c0);
    hi0 = std::max(hi0, c0);
    lo1 = std::min(lo1, c1);
    hi1 = std::max(hi1, c1);
  }

  std::vector<std::ptrdiff_t> nn(M, -1);
  parallel_for(M, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    std::ptrdiff_t arg = -1;
    auto visit = [&](std::int64_t c0, std::int64_t c1) {
      auto it = cells.find(key(c0, c1));
      if (it == cells.end()) return;
      for (auto j : it->second) {
        if ((i > j ? i - j : j - i) <= period) continue;
        const double d = dist2(i, j);
        if (d < best || (d == best && static_cast<std::ptrdiff_t>(j) < arg)) {
          best = d;
          arg = static_cast<std::ptrdiff_t>(j);
        }
      }
    };
    const auto c0 = cell_of(i, 0), c1 = cell_of(i, 1);
    const std::int64_t max_ring = std::max({c0 - lo0, hi0 - c0, c1 - lo1, hi1 - c1});
    bool resolved = false;
    for (std::int64_t k = 0; k <= std::min<std::int64_t>(max_ring, 6); ++k) {
      if (k == 0) {
        visit(c0, c1);
      } else {
        const std::int64_t side = gdim == 2 ? k : 0;
        for (std::int64_t d = -side; d <= side; ++d) {
          visit(c0 - k, c1 + d);
          visit(c0 + k, c1 + d);
        }
        if (gdim == 2)
          for (std::int64_t d = -k + 1; d <= k - 1; ++d) {
            visit(c0 + d, c1 - k);
            visit(c0 + d, c1 + k);
          }
      }
      const double reach = static_cast<double>(k) * width * (1.0 - 1e-9);
      if (best < reach * reach || k == max_ring) {
        resolved = true;
        break;
      }
    }
    if (!resolved) {
      // Isolated point: a linear scan is cheaper than many more rings.
      for (std::size_t j = 0; j < M; ++j) {
        if ((i > j ? i - j : j - i) <= period) continue;
        const double d = dist2(i, j);
        if (d < best || (d == best && static_cast<std::ptrdiff_t>(j) < arg)) {
          best = d;
          arg = static_cast<std::ptrdiff_t>(j);
        }
      }
    }
    nn[i] = arg;
  });

  const double floor_log = std::log(1e-9 * sd);
  std::vector<double> ks, ys;
  for (int k = 0; k < fit_steps; ++k) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < M; ++i) {
      if (nn[i] < 0) continue;
      const std::size_t j = static_cast<std::size_t>(nn[i]);
      const std::size_t ik = i + static_cast<std::size_t>(k), jk = j + static_cast<std::size_t>(k);
      if (ik >= M || jk >= M) continue;
      const double d = std::sqrt(dist2(ik, jk));
      sum += d > 0.0 ? std::max(std::log(d), floor_log) : floor_log;
      ++cnt;
    }
    if (cnt == 0) break;
    ks.push_back(static_cast<double>(k));
    ys.push_back(sum / static_cast<double>(cnt));
  }
  return dsp::ls_slope(ks, ys);
}

// ---------------------------------------------------------------------------
// Cepstral
// ---------------------------------------------------------------------------

struct MfccParams {
  std::size_t n_mel = 20;
  std::size_t n_coef = 4;
  std::size_t frame = 256;
  std::size_t hop = 128;
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular filters with centres equally spaced on the mel scale over
/// [0, fs/2]; rows = filters, columns = FFT bins 0..frame/2.
inline Matrix mel_filterbank(std::size_t n_mel, std::size_t frame, double fs_hz) {
  const std::size_t nbins = frame / 2 + 1;
  const double mel_hi = hz_to_mel(fs_hz / 2.0);
  std::vector<double> edges(n_mel + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_mel + 1));
  Matrix fb = Matrix::Zero(static_cast<Eigen::Index>(n_mel), static_cast<Eigen::Index>(nbins));
  for (std::size_t m = 0; m < n_mel; ++m) {
    const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < nbins; ++k) {
      const double f = fs_hz * static_cast<double>(k) / static_cast<double>(frame);
      double w = 0.0;
      if (f > lo && f <= c) w = (f - lo) / (c - lo);
      else if (f > c && f < hi) w = (hi - f) / (hi - c);
      fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = w;
    }
  }
  return fb;
}

/// Frame-averaged MFCCs: Hann window, magnitude spectrum, mel filterbank,
/// log(energy + 1e-10), orthonormal DCT-II, coefficients 0..n_coef-1.
inline std::vector<double> mfcc(std::span<const double> x, double fs_hz, const MfccParams& p = {}) {
  if (x.size() < p.frame) throw InsufficientData("mfcc: series shorter than one frame");
  const auto fb = mel_filterbank(p.n_mel, p.frame, fs_hz);
  const auto win = dsp::hann(p.frame);
  const std::size_t nbins = p.frame / 2 + 1;
  const std::size_t frames = (x.size() - p.frame) / p.hop + 1;
  std::vector<double> acc(p.n_coef, 0.0);
  std::vector<std::complex<double>> buf(p.frame);
  Vector mag(static_cast<Eigen::Index>(nbins));
  const double nm = static_cast<double>(p.n_mel);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < p.frame; ++i) buf[i] = x[f * p.hop + i] * win[i];
    dsp::fft(buf);
    for (std::size_t k = 0; k < nbins; ++k) mag(static_cast<Eigen::Index>(k)) = std::abs(buf[k]);
    const Vector energy = fb * mag;
    for (std::size_t c = 0; c < p.n_coef; ++c) {
      double s = 0.0;
      for (std::size_t m = 0; m < p.n_mel; ++m)
        s += std::log(energy(static_cast<Eigen::Index>(m)) + 1e-10) *
             std::cos(M_PI * static_cast<double>(c) * (2.0 * static_cast<double>(m) + 1.0) / (2.0 * nm));
      acc[c] += s * (c == 0 ? std::sqrt(1.0 / nm) : std::sqrt(2.0 / nm));
    }
  }
  for (double& v : acc) v /= static_cast<double>(frames);
  return acc;
}

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

/// Population moments; skewness and kurtosis are 0 when m2 < 1e-12.
inline Moments moments(std::span<const double> x) {
  if (x.size() < 2) throw InsufficientData("moments: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  Moments r{mean, m2, 0.0, 0.0};
  if (m2 >= 1e-12) {
    r.skewness = m3 / std::pow(m2, 1.5);
    r.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct FeatureSpec {
  std::string_view name;
  std::string_view channel;
  std::string_view family;
  std::string_view unit;
};

inline constexpr std::size_t kNumFeatures = 42;

inline constexpr std::array<FeatureSpec, kNumFeatures> kFeatureManifest = {{
    {"eda_scr_count", "eda", "time", "count"},
    {"eda_scl_mean", "eda", "time", "z"},
    {"eda_phasic_auc", "eda", "time", "z*s"},
    {"eda_lf_power", "eda", "frequency", "z^2"},
    {"eda_sample_entropy", "eda", "nonlinear", "nats"},
    {"eda_mean", "eda", "moment", "z"},
    {"eda_variance", "eda", "moment", "z^2"},
    {"eda_skew", "eda", "moment", "1"},
    {"eda_kurtosis", "eda", "moment", "1"},
    {"eda_mfcc1", "eda", "cepstral", "1"},
    {"eda_mfcc2", "eda", "cepstral", "1"},
    {"eda_mfcc3", "eda", "cepstral", "1"},
    {"eda_mfcc4", "eda", "cepstral", "1"},
    {"hr_mean", "hr", "time", "bpm"},
    {"hr_rmssd", "hr", "time", "ms"},
    {"hr_pnn50", "hr", "time", "%"},
    {"hr_hf_power", "hr", "frequency", "z^2"},
    {"hr_sd1", "hr", "nonlinear", "ms"},
    {"hr_sd2", "hr", "nonlinear", "ms"},
    {"hr_sd1_sd2_ratio", "hr", "nonlinear", "1"},
    {"hr_variance", "hr", "moment", "z^2"},
    {"hr_skew", "hr", "moment", "1"},
    {"hr_kurtosis", "hr", "moment", "1"},
    {"hr_mfcc1", "hr", "cepstral", "1"},
    {"hr_mfcc2", "hr", "cepstral", "1"},
    {"hr_mfcc3", "hr", "cepstral", "1"},
    {"hr_mfcc4", "hr", "cepstral", "1"},
    {"temp_mean", "temp", "time", "z"},
    {"temp_gradient", "temp", "time", "degC/min"},
    {"temp_multiscale_entropy", "temp", "nonlinear", "nats"},
    {"temp_variance", "temp", "moment", "z^2"},
    {"temp_skew", "temp", "moment", "1"},
    {"temp_kurtosis", "temp", "moment", "1"},
    {"acc_mean", "acc", "time", "g"},
    {"acc_variability", "acc", "time", "g"},
    {"acc_dominant_frequency", "acc", "frequency", "Hz"},
    {"acc_lyapunov", "acc", "nonlinear", "nats/sample"},
    {"acc_sample_entropy", "acc", "nonlinear", "nats"},
    {"acc_skew", "acc", "moment", "1"},
    {"acc_kurtosis", "acc", "moment", "1"},
    {"acc_mfcc1", "acc", "cepstral", "1"},
    {"acc_mfcc2", "acc", "cepstral", "1"},
}};

inline std::size_t feature_index(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureManifest.size(); ++i)
    if (kFeatureManifest[i].name == name) return i;
  throw ConfigError("unknown feature '" + std::string(name) + "'");
}

inline std::vector<std::string> feature_names() {
  std::vector<std::string> v;
  for (const auto& f : kFeatureManifest) v.emplace_back(f.name);
  return v;
}

inline std::uint64_t manifest_hash() {
  std::uint64_t h = fnv1a(kFeatureFormat);
  for (const auto& f : kFeatureManifest) {
    h = fnv1a(f.name, h);
    h = fnv1a("|", h);
  }
  return h;
}

inline nlohmann::ordered_json manifest_json() {
  nlohmann::ordered_json j;
  j["format"] = kFeatureFormat;
  j["hash"] = hex64(manifest_hash());
  j["features"] = nlohmann::ordered_json::array();
  for (const auto& f : kFeatureManifest)
    j["features"].push_back({{"name", f.name}, {"channel", f.channel}, {"family", f.family}, {"unit", f.unit}});
  return j;
}

// ---------------------------------------------------------------------------
// Featurisation
// ---------------------------------------------------------------------------

struct FeatureVector {
  std::array<double, kNumFeatures> values{};
  std::string subject_id;
  int shift_id = 0;
  double t0 = 0.0;
  StressLabel label = StressLabel::Baseline;
};

/// Computes the manifest features of one epoch. EDA, HR and TEMP use the
/// 4 Hz z-scored channels (temperature gradient uses degrees Celsius);
/// every accelerometer feature uses the native-rate magnitude.
inline FeatureVector featurize(const Epoch& e) {
  const double fs = 4.0;
  if (e.ibi_ms.size() < 3) throw FeatureRejection("hrv insufficient-data");
  const auto& eda = e.channel(ChannelKind::EDA);
  const auto& hr = e.channel(ChannelKind::HR);
  const auto& temp = e.channel(ChannelKind::TEMP);
  const auto& acc = e.native_acc;
  if (eda.size() < 256 || hr.size() < 256 || temp.size() < 256) throw FeatureRejection("channels insufficient-data");
  if (acc.size() < 256) throw FeatureRejection("accelerometer insufficient-data");

  FeatureVector fv;
  fv.subject_id = e.subject_id;
  fv.shift_id = e.shift_id;
  fv.t0 = e.t0;
  fv.label = e.label;
  auto& v = fv.values;
  std::size_t i = 0;

  const auto dec = decompose_eda(eda);
  const auto em = moments(eda);
  const auto emf = mfcc(eda, fs);
  double scl = 0.0;
  for (double t : dec.tonic) scl += t;
  v[i++] = static_cast<double>(dec.scr_peaks.size());
  v[i++] = scl / static_cast<double>(dec.tonic.size());
  v[i++] = phasic_auc(dec.phasic, fs);
  v[i++] = band_power(eda, fs, 0.05, 0.15);
  v[i++] = sample_entropy(eda);
  v[i++] = em.mean;
  v[i++] = em.variance;
  v[i++] = em.skewness;
  v[i++] = em.excess_kurtosis;
  for (double c : emf) v[i++] = c;

  const auto hrv = hrv_time(e.ibi_ms);
  const auto pc = poincare_sd(e.ibi_ms);
  const auto hm = moments(hr);
  const auto hmf = mfcc(hr, fs);
  v[i++] = hrv.hr_mean_bpm;
  v[i++] = hrv.rmssd_ms;
  v[i++] = hrv.pnn50_pct;
  v[i++] = band_power(hr, fs, 0.15, 0.4);
  v[i++] = pc.sd1;
  v[i++] = pc.sd2;
  v[i++] = pc.sd2 > 0.0 ? pc.sd1 / pc.sd2 : 0.0;
  v[i++] = hm.variance;
  v[i++] = hm.skewness;
  v[i++] = hm.excess_kurtosis;
  for (double c : hmf) v[i++] = c;

  const auto tm = moments(temp);
  std::vector<double> minutes(e.temp_celsius.size());
  for (std::size_t k = 0; k < minutes.size(); ++k) minutes[k] = static_cast<double>(k) / fs / 60.0;
  v[i++] = tm.mean;
  v[i++] = dsp::ls_slope(minutes, e.temp_celsius);
  v[i++] = multiscale_entropy(temp);
  v[i++] = tm.variance;
  v[i++] = tm.skewness;
  v[i++] = tm.excess_kurtosis;

  const auto am = moments(acc);
  MfccParams ap;
  ap.n_coef = 2;
  const auto amf = mfcc(acc, e.acc_rate_hz, ap);
  v[i++] = am.mean;
  v[i++] = std::sqrt(am.variance);
  v[i++] = dominant_frequency(acc, e.acc_rate_hz, 5.0);
  v[i++] = lyapunov_exponent(acc);
  v[i++] = sample_entropy(acc);
  v[i++] = am.skewness;
  v[i++] = am.excess_kurtosis;
  for (double c : amf) v[i++] = c;

  require(i == kNumFeatures, "featurize produced " + std::to_string(i) + " features");
  for (double x : v)
    if (!std::isfinite(x)) throw FeatureRejection("non-finite feature value");
  return fv;
}

struct FeaturizeResult {
  std::vector<FeatureVector> rows;
  std::vector<std::pair<std::size_t, std::string>> rejected;  // epoch index, reason
};

inline FeaturizeResult featurize_all(const std::vector<Epoch>& epochs) {
  std::vector<std::optional<FeatureVector>> out(epochs.size());
  std::vector<std::string> reasons(epochs.size());
  parallel_for(epochs.size(), [&](std::size_t i) {
    try {
      out[i] = featurize(epochs[i]);
    } catch (const InsufficientData& e) {
      reasons[i] = e.what();
    }
  });
  FeaturizeResult r;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (out[i]) r.rows.push_back(std::move(*out[i]));
    else r.rejected.emplace_back(i, reasons[i]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Feature table (CSV)
// ---------------------------------------------------------------------------

/// Rows of features with their provenance, as learners consume them.
struct FeatureTable {
  Matrix X;
  std::vector<int> y;
  std::vector<std::string> subject_id;
  std::vector<int> shift_id;
  std::vector<double> t0;

  std::size_t rows() const { return y.size(); }

  static FeatureTable from_vectors(const std::vector<FeatureVector>& rows) {
    FeatureTable t;
    t.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kNumFeatures));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < kNumFeatures; ++c)
        t.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].values[c];
      t.y.push_back(class_index(rows[r].label));
      t.subject_id.push_back(rows[r].subject_id);
      t.shift_id.push_back(rows[r].shift_id);
      t.t0.push_back(rows[r].t0);
    }
    return t;
  }

  FeatureTable select(std::span<const std::size_t> idx) const {
    FeatureTable t;
    t.X.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      t.X.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
      t.y.push_back(y[idx[r]]);
      t.subject_id.push_back(subject_id[idx[r]]);
      t.shift_id.push_back(shift_id[idx[r]]);
      t.t0.push_back(t0[idx[r]]);
    }
    return t;
  }
};

inline std::string feature_csv_header() {
  std::string h;
  for (const auto& f : kFeatureManifest) {
    h += f.name;
    h += ',';
  }
  return h + "subject_id,shift_id,t0,label";
}

inline std::string format_features_csv(const FeatureTable& t) {
  std::string out = feature_csv_header() + "\n";
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.X.cols(); ++c) {
      out += format_double(t.X(static_cast<Eigen::Index>(r), c));
      out += ',';
    }
    out += t.subject_id[r] + "," + std::to_string(t.shift_id[r]) + "," + format_double(t.t0[r]) + "," +
           std::string(label_name(label_from_index(t.y[r]))) + "\n";
  }
  return out;
}

inline FeatureTable parse_features_csv(std::string_view text, std::string_view context = "features.csv") {
  auto lines = split(text, '\n');
  auto trim = [](std::string_view l) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    return l;
  };
  if (lines.empty() || trim(lines[0]) != feature_csv_header())
    throw FormatError(std::string(context) + ": header does not match the feature manifest");
  std::vector<std::vector<double>> vals;
  FeatureTable t;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != kNumFeatures + 4) throw FormatError(std::string(context) + ": wrong column count on line " + std::to_string(i + 1));
    std::vector<double> row(kNumFeatures);
    for (std::size_t c = 0; c < kNumFeatures; ++c) row[c] = parse_double(f[c], context);
    vals.push_back(std::move(row));
    t.subject_id.emplace_back(f[kNumFeatures]);
    t.shift_id.push_back(static_cast<int>(parse_int(f[kNumFeatures + 1], context)));
    t.t0.push_back(parse_double(f[kNumFeatures + 2], context));
    t.y.push_back(class_index(parse_label(f[kNumFeatures + 3])));
  }
  t.X.resize(static_cast<Eigen::Index>(vals.size()), static_cast<Eigen::Index>(kNumFeatures));
  for (std::size_t r = 0; r < vals.size(); ++r)
    for (std::size_t c = 0; c < kNumFeatures; ++c) t.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vals[r][c];
  return t;
}

}  // namespace wearstress
