#include "oracles.hpp"
#include "wearstress/data.hpp"
#include "wearstress/features.hpp"
#include "wearstress/preprocess.hpp"

#include <gtest/gtest.h>

#include <complex>

using namespace wearstress;

namespace {

std::vector<double> random_series(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.uniform();
  return x;
}

const std::vector<Epoch>& sample_epochs() {
  static const std::vector<Epoch> epochs = [] {
    SynthConfig cfg;
    cfg.n_subjects = 1;
    cfg.shifts_per_subject = 1;
    return preprocess_dataset(generate_synthetic(cfg), PreprocessParams{}).epochs;
  }();
  return epochs;
}

}  // namespace

TEST(Eda, ConstantInputHasNoPhasicActivity) {
  const std::vector<double> x(400, 2.0);
  const auto d = decompose_eda(x);
  for (double v : d.phasic) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(d.scr_peaks.empty());
  EXPECT_EQ(phasic_auc(d.phasic, 4.0), 0.0);
}

TEST(Eda, CountsInjectedBumps) {
  std::vector<double> x(1200);
  const double centres[] = {60.0, 90.0, 120.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / 4.0;
    x[i] = 0.001 * t;
    for (double c : centres) x[i] += 0.2 * std::exp(-0.5 * (t - c) * (t - c) / (2.0 * 2.0));
  }
  const auto d = decompose_eda(x);
  ASSERT_EQ(d.scr_peaks.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(static_cast<double>(d.scr_peaks[k]) / 4.0, centres[k], 0.5);
}

TEST(Eda, TonicPlusPhasicReconstructs) {
  const auto x = random_series(1, 600);
  const auto d = decompose_eda(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(d.tonic[i] + d.phasic[i], x[i], 1e-12);
}

TEST(Hrv, HandComputedValues) {
  const std::vector<double> a{800, 810, 790};
  EXPECT_NEAR(hrv_time(a).rmssd_ms, std::sqrt(250.0), 1e-12);
  const std::vector<double> b{800, 860, 870};
  EXPECT_DOUBLE_EQ(hrv_time(b).pnn50_pct, 50.0);
  const std::vector<double> c(10, 850.0);
  EXPECT_EQ(hrv_time(c).rmssd_ms, 0.0);
  EXPECT_EQ(hrv_time(c).pnn50_pct, 0.0);
  const std::vector<double> two{800, 810};
  EXPECT_THROW(hrv_time(two), InsufficientData);
}

TEST(Spectral, ZeroSeriesHasNoPower) {
  const std::vector<double> x(256, 0.0);
  EXPECT_EQ(band_power(x, 4.0, 0.0, 2.0), 0.0);
}

TEST(Spectral, SineConcentratesInItsBand) {
  std::vector<double> x(1200);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * M_PI * 0.1 * static_cast<double>(i) / 4.0);
  const double in = band_power(x, 4.0, 0.05, 0.15);
  const double total = band_power(x, 4.0, 0.0, 2.0);
  EXPECT_GE(in / total, 0.9);
}

TEST(Spectral, BandPowersAreAdditive) {
  const auto x = random_series(2, 1000);
  const double edges[] = {0.0, 0.05, 0.15, 0.4, 0.9, 1.3, 2.0};
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < std::size(edges); ++k) sum += band_power(x, 4.0, edges[k], edges[k + 1]);
  EXPECT_NEAR(sum, dsp::welch(x, 4.0).total_power(), 1e-9);
}

TEST(Spectral, DominantFrequencyFindsTone) {
  std::vector<double> x(32 * 60);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * M_PI * 2.0 * static_cast<double>(i) / 32.0);
  EXPECT_NEAR(dominant_frequency(x, 32.0), 2.0, 0.5);
}

TEST(SampleEntropy, ConstantSeriesIsZero) {
  const std::vector<double> x(100, 1.0);
  EXPECT_EQ(sample_entropy_r(x, 2, 0.1), 0.0);
  EXPECT_EQ(sample_entropy(x), 0.0);
}

TEST(SampleEntropy, MatchesBruteForceCounter) {
  const auto x = random_series(42, 200);
  const double r = 0.2 * population_sd(x);
  const auto fast = count_template_matches(x, 2, r);
  const auto slow = oracle::template_matches(x, 2, r);
  EXPECT_EQ(fast.a, slow.a);
  EXPECT_EQ(fast.b, slow.b);
  EXPECT_DOUBLE_EQ(sample_entropy(x), -std::log(static_cast<double>(slow.a) / static_cast<double>(slow.b)));
}

TEST(SampleEntropy, BruteForceOnQuantizedAndVariedSeries) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const std::size_t n = 30 + rng.below(300);
    const int m = 1 + static_cast<int>(rng.below(3));
    std::vector<double> x(n);
    for (double& v : x) v = s % 2 ? std::round(4.0 * rng.normal()) / 4.0 : rng.normal();
    const double r = 0.25 * population_sd(x);
    const auto fast = count_template_matches(x, m, r);
    const auto slow = oracle::template_matches(x, m, r);
    EXPECT_EQ(fast.a, slow.a) << s;
    EXPECT_EQ(fast.b, slow.b) << s;
  }
}

TEST(SampleEntropy, PeriodicBelowShuffled) {
  std::vector<double> x(300);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * M_PI * static_cast<double>(i) / 20.0);
  auto y = x;
  Rng(5).shuffle(y);
  EXPECT_LT(sample_entropy(x), sample_entropy(y));
}

TEST(Multiscale, SingleScaleEqualsSampleEntropy) {
  const auto x = random_series(6, 400);
  const std::vector<int> one{1};
  EXPECT_EQ(multiscale_entropy(x, one), sample_entropy(x));
}

TEST(Multiscale, MeanOfCoarseGrainedCopies) {
  const auto x = random_series(7, 600);
  const double r = 0.2 * population_sd(x);
  double sum = 0.0;
  for (std::size_t tau = 1; tau <= 5; ++tau) sum += sample_entropy_r(coarse_grain(x, tau), 2, r);
  EXPECT_NEAR(multiscale_entropy(x, 5), sum / 5.0, 1e-12);
  EXPECT_EQ(coarse_grain(random_series(8, 1203), 5).size(), 240u);
}

TEST(Poincare, ConstantIsZero) {
  const std::vector<double> x(10, 900.0);
  const auto p = poincare_sd(x);
  EXPECT_EQ(p.sd1, 0.0);
  EXPECT_EQ(p.sd2, 0.0);
}

TEST(Poincare, HandComputed) {
  const std::vector<double> ibi{800, 810, 790, 805};
  // diffs 10, -20, 15: mean 5/3, population var = 725/3 - 25/9.
  const double vd = 725.0 / 3.0 - 25.0 / 9.0;
  // ibi mean 801.25, population var = (1.5625+76.5625+126.5625+14.0625)/4.
  const double vi = (1.5625 + 76.5625 + 126.5625 + 14.0625) / 4.0;
  const auto p = poincare_sd(ibi);
  EXPECT_NEAR(p.sd1, std::sqrt(vd / 2.0), 1e-12);
  // 2 vi - vd/2 = 109.375 - 119.44 < 0: this short alternating series has a
  // negative radicand, so sd2 clamps to 0.
  ASSERT_LT(2.0 * vi - vd / 2.0, 0.0);
  EXPECT_EQ(p.sd2, 0.0);
}

TEST(Poincare, IdentityOnRandomSeries) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s, "ibi");
    std::vector<double> ibi(20 + rng.below(300));
    double level = 800.0;
    for (double& v : ibi) {
      level += 0.3 * (800.0 - level) + rng.normal(0.0, 20.0);
      v = level;
    }
    double m = 0.0, var = 0.0;
    for (double v : ibi) m += v;
    m /= static_cast<double>(ibi.size());
    for (double v : ibi) var += (v - m) * (v - m);
    var /= static_cast<double>(ibi.size());
    const auto p = poincare_sd(ibi);
    EXPECT_NEAR(p.sd1 * p.sd1 + p.sd2 * p.sd2, 2.0 * var, 1e-9 * std::max(1.0, var)) << s;
  }
}

TEST(Lyapunov, ConstantIsZero) {
  const std::vector<double> x(500, 3.0);
  EXPECT_EQ(lyapunov_exponent(x), 0.0);
}

TEST(Lyapunov, LogisticMapNearLn2) {
  std::vector<double> x(1000);
  x[0] = 0.1234;
  for (std::size_t i = 1; i < x.size(); ++i) x[i] = 4.0 * x[i - 1] * (1.0 - x[i - 1]);
  EXPECT_NEAR(lyapunov_exponent(x), std::log(2.0), 0.15);
}

TEST(Lyapunov, SineNearZero) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * M_PI * static_cast<double>(i) / 37.3);
  EXPECT_LE(lyapunov_exponent(x), 0.05);
}

TEST(Lyapunov, MatchesExhaustiveSearch) {
  std::vector<double> logistic(1000);
  logistic[0] = 0.31;
  for (std::size_t i = 1; i < logistic.size(); ++i) logistic[i] = 4.0 * logistic[i - 1] * (1.0 - logistic[i - 1]);
  EXPECT_NEAR(lyapunov_exponent(logistic), oracle::lyapunov(logistic), 1e-12);
  const auto& acc = sample_epochs().front().native_acc;
  EXPECT_NEAR(lyapunov_exponent(acc), oracle::lyapunov(acc), 1e-12);
}

TEST(Mfcc, Deterministic) {
  const auto x = random_series(9, 1024);
  EXPECT_EQ(mfcc(x, 4.0), mfcc(x, 4.0));
}

TEST(Mfcc, ScalingMovesOnlyCoefficientZero) {
  const auto x = random_series(10, 1024);
  auto y = x;
  for (double& v : y) v *= 10.0;
  const auto a = mfcc(x, 4.0), b = mfcc(y, 4.0);
  EXPECT_NEAR(b[0] - a[0], std::log(10.0) * std::sqrt(20.0), 1e-6);
  for (std::size_t c = 1; c < 4; ++c) EXPECT_NEAR(a[c], b[c], 1e-6);
}

TEST(Mfcc, SingleFrameMatchesTextbookSteps) {
  const std::size_t N = 256, n_mel = 20;
  const double fs = 4.0;
  const auto x = random_series(11, N);
  // Direct DFT magnitude of the frame under a periodic Hann window.
  std::vector<double> mag(N / 2 + 1);
  for (std::size_t k = 0; k <= N / 2; ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) / static_cast<double>(N));
      s += x[n] * w * std::polar(1.0, -2.0 * M_PI * static_cast<double>(k * n) / static_cast<double>(N));
    }
    mag[k] = std::abs(s);
  }
  // Triangular mel filters with edges equally spaced in mel over [0, fs/2].
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> logE(n_mel);
  for (std::size_t m = 0; m < n_mel; ++m) {
    const double lo = hz(mel(fs / 2) * m / (n_mel + 1.0)), c = hz(mel(fs / 2) * (m + 1) / (n_mel + 1.0)),
                 hi = hz(mel(fs / 2) * (m + 2) / (n_mel + 1.0));
    double e = 0.0;
    for (std::size_t k = 0; k <= N / 2; ++k) {
      const double f = fs * static_cast<double>(k) / static_cast<double>(N);
      if (f > lo && f <= c) e += mag[k] * (f - lo) / (c - lo);
      else if (f > c && f < hi) e += mag[k] * (hi - f) / (hi - c);
    }
    logE[m] = std::log(e + 1e-10);
  }
  const auto got = mfcc(x, fs);
  for (std::size_t q = 0; q < 4; ++q) {
    double s = 0.0;
    for (std::size_t m = 0; m < n_mel; ++m) s += logE[m] * std::cos(M_PI * q * (2.0 * m + 1.0) / (2.0 * n_mel));
    s *= q == 0 ? std::sqrt(1.0 / n_mel) : std::sqrt(2.0 / n_mel);
    EXPECT_NEAR(got[q], s, 1e-9) << q;
  }
}

TEST(Moments, HandComputed) {
  const std::vector<double> x{1, 2, 3, 4};
  const auto m = moments(x);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.variance, 1.25);
  EXPECT_NEAR(m.skewness, 0.0, 1e-15);
  EXPECT_NEAR(m.excess_kurtosis, -1.36, 1e-12);
  const std::vector<double> c(5, 7.0);
  const auto mc = moments(c);
  EXPECT_EQ(mc.mean, 7.0);
  EXPECT_EQ(mc.variance, 0.0);
  EXPECT_EQ(mc.skewness, 0.0);
  EXPECT_EQ(mc.excess_kurtosis, 0.0);
}

TEST(Moments, MirrorSymmetricHasZeroSkew) {
  auto x = random_series(12, 50);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) x.push_back(-x[i]);
  EXPECT_NEAR(moments(x).skewness, 0.0, 1e-12);
}

TEST(Moments, ShapeInvariantUnderPositiveAffineMap) {
  const auto x = random_series(13, 300);
  auto y = x;
  for (double& v : y) v = 4.0 * v + 11.0;
  EXPECT_NEAR(moments(x).skewness, moments(y).skewness, 1e-9);
  EXPECT_NEAR(moments(x).excess_kurtosis, moments(y).excess_kurtosis, 1e-9);
}

TEST(Manifest, FortyTwoUniqueNamesWithChannelCounts) {
  EXPECT_EQ(kFeatureManifest.size(), 42u);
  std::set<std::string_view> names;
  std::map<std::string_view, int> per_channel;
  for (const auto& f : kFeatureManifest) {
    names.insert(f.name);
    ++per_channel[f.channel];
  }
  EXPECT_EQ(names.size(), 42u);
  EXPECT_EQ(per_channel.size(), 4u);
  EXPECT_EQ(feature_index("eda_phasic_auc"), 2u);
}

TEST(Featurize, ContractAndComposition) {
  const auto& e = sample_epochs().front();
  const auto fv = featurize(e);
  for (double v : fv.values) EXPECT_TRUE(std::isfinite(v));
  const auto& eda = e.channel(ChannelKind::EDA);
  const auto& hr = e.channel(ChannelKind::HR);
  const auto& temp = e.channel(ChannelKind::TEMP);
  auto at = [&](std::string_view n) { return fv.values[feature_index(n)]; };
  EXPECT_EQ(at("eda_scr_count"), static_cast<double>(decompose_eda(eda).scr_peaks.size()));
  EXPECT_EQ(at("eda_phasic_auc"), phasic_auc(decompose_eda(eda).phasic, 4.0));
  EXPECT_EQ(at("eda_lf_power"), band_power(eda, 4.0, 0.05, 0.15));
  EXPECT_EQ(at("eda_sample_entropy"), sample_entropy(eda));
  EXPECT_EQ(at("eda_skew"), moments(eda).skewness);
  EXPECT_EQ(at("hr_rmssd"), hrv_time(e.ibi_ms).rmssd_ms);
  EXPECT_EQ(at("hr_pnn50"), hrv_time(e.ibi_ms).pnn50_pct);
  EXPECT_EQ(at("hr_hf_power"), band_power(hr, 4.0, 0.15, 0.4));
  EXPECT_EQ(at("hr_sd1"), poincare_sd(e.ibi_ms).sd1);
  EXPECT_EQ(at("hr_sd2"), poincare_sd(e.ibi_ms).sd2);
  EXPECT_EQ(at("temp_multiscale_entropy"), multiscale_entropy(temp));
  EXPECT_EQ(at("temp_mean"), moments(temp).mean);
  EXPECT_EQ(at("acc_lyapunov"), lyapunov_exponent(e.native_acc));
  EXPECT_EQ(at("acc_dominant_frequency"), dominant_frequency(e.native_acc, e.acc_rate_hz, 5.0));
  EXPECT_EQ(at("acc_sample_entropy"), sample_entropy(e.native_acc));
  EXPECT_EQ(at("eda_mfcc1"), mfcc(eda, 4.0)[0]);
  // Poincare identity holds for this epoch too.
  double m = 0.0, s = 0.0;
  for (double v : e.ibi_ms) m += v;
  m /= static_cast<double>(e.ibi_ms.size());
  for (double v : e.ibi_ms) s += (v - m) * (v - m);
  EXPECT_NEAR(at("hr_sd1") * at("hr_sd1") + at("hr_sd2") * at("hr_sd2"), 2.0 * s / static_cast<double>(e.ibi_ms.size()),
              1e-9 * s);
}

TEST(Featurize, TooFewBeatsRejected) {
  auto e = sample_epochs().front();
  e.ibi_ms.resize(2);
  try {
    featurize(e);
    FAIL() << "expected rejection";
  } catch (const FeatureRejection& err) {
    EXPECT_STREQ(err.what(), "hrv insufficient-data");
  }
  const auto res = featurize_all({e, sample_epochs().front()});
  ASSERT_EQ(res.rejected.size(), 1u);
  EXPECT_EQ(res.rejected[0].first, 0u);
  EXPECT_EQ(res.rejected[0].second, "hrv insufficient-data");
  EXPECT_EQ(res.rows.size(), 1u);
}

TEST(Featurize, CsvRoundTrip) {
  const auto res = featurize_all(std::vector<Epoch>(sample_epochs().begin(), sample_epochs().begin() + 3));
  const auto t = FeatureTable::from_vectors(res.rows);
  const auto back = parse_features_csv(format_features_csv(t));
  EXPECT_EQ(back.X, t.X);
  EXPECT_EQ(back.y, t.y);
  EXPECT_EQ(back.subject_id, t.subject_id);
  EXPECT_EQ(back.shift_id, t.shift_id);
  EXPECT_EQ(back.t0, t.t0);
  auto text = format_features_csv(t);
  text.replace(0, 13, "eda_scr_countX");
  EXPECT_THROW(parse_features_csv(text), FormatError);
}
