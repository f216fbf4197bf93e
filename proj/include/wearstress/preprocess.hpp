/// @file preprocess.hpp
/// Raw streams to labelled 5-minute epochs.
///
/// Stage order per (subject, channel):
///   artifact masking (accelerometer driven) -> median replacement or
///   Kalman imputation -> 4 Hz cubic-spline resampling -> per-subject
///   z-scoring -> 50%-overlap segmentation.
/// Imputation runs before resampling because spline knots must be gap free.

#pragma once

#include "wearstress/binio.hpp"
#include "wearstress/data.hpp"
#include "wearstress/dsp.hpp"

#include <json.hpp>

#include <map>
#include <set>

namespace wearstress {

inline constexpr std::string_view kEpochFormat = "wearstress-epochs-v1";

enum class ArtifactMode { Median, Mask };

inline std::string_view artifact_mode_name(ArtifactMode m) { return m == ArtifactMode::Median ? "median" : "mask"; }
inline ArtifactMode parse_artifact_mode(std::string_view s) {
  if (s == "median") return ArtifactMode::Median;
  if (s == "mask") return ArtifactMode::Mask;
  throw ConfigError("unknown artifact mode '" + std::string(s) + "'");
}

struct PreprocessParams {
  double artifact_threshold_g = 0.3;
  double median_window_s = 5.0;
  double target_hz = 4.0;
  double epoch_s = 300.0;
  double overlap = 0.5;
  double max_missing_frac = 0.02;
  double kalman_q = 1e-2;
  double kalman_r = 1e-1;
  ArtifactMode artifact_mode = ArtifactMode::Median;
  std::size_t replace_window = 21;
  /// Sample gaps longer than this split a stream into separate runs.
  double max_gap_s = 2.0;
  /// Grid points farther than this from any spline knot are low quality.
  double max_knot_distance_s = 2.0;

  void validate() const {
    if (!(artifact_threshold_g > 0.0) || !(median_window_s > 0.0) || !(target_hz > 0.0) || !(epoch_s > 0.0))
      throw ConfigError("preprocess thresholds must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1)");
    if (!(max_missing_frac >= 0.0)) throw ConfigError("max_missing_frac must be non-negative");
    if (!(kalman_q > 0.0) || !(kalman_r > 0.0)) throw ConfigError("Kalman variances must be positive");
    if (replace_window == 0 || replace_window % 2 == 0) throw ConfigError("replace_window must be odd");
  }

  std::size_t epoch_samples() const { return static_cast<std::size_t>(std::llround(epoch_s * target_hz)); }
  std::size_t step_samples() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(epoch_samples()) * (1.0 - overlap))));
  }

  nlohmann::ordered_json to_json() const {
    return {{"artifact_threshold_g", artifact_threshold_g}, {"median_window_s", median_window_s},
            {"target_hz", target_hz},                       {"epoch_s", epoch_s},
            {"overlap", overlap},                           {"max_missing_frac", max_missing_frac},
            {"kalman_q", kalman_q},                         {"kalman_r", kalman_r},
            {"artifact_mode", artifact_mode_name(artifact_mode)},
            {"replace_window", replace_window},             {"max_gap_s", max_gap_s},
            {"max_knot_distance_s", max_knot_distance_s}};
  }
};

/// A stream on the absolute target-rate grid: sample i sits at
/// (start_index + i) / rate seconds.
struct UniformStream {
  std::string subject_id;
  ChannelKind kind = ChannelKind::EDA;
  std::int64_t start_index = 0;
  double rate_hz = 4.0;
  std::vector<double> samples;
  std::vector<bool> quality_mask;  // true = trusted

  double start_time() const { return static_cast<double>(start_index) / rate_hz; }
  std::int64_t end_index() const { return start_index + static_cast<std::int64_t>(samples.size()); }
};

/// Artifact flags on the accelerometer time grid.
struct ArtifactMask {
  std::vector<double> times;
  std::vector<bool> flags;
  /// Accelerometer sampling period; stream samples farther than this from
  /// every mask time are never flagged.
  double period_s = 0.0;

  bool empty() const { return std::find(flags.begin(), flags.end(), true) == flags.end(); }
};

// ---------------------------------------------------------------------------
// Artifact handling
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<double> fill_gaps_nearest(const RawStream& s) {
  std::vector<double> v = s.samples;
  std::size_t first = 0;
  while (first < v.size() && s.missing_mask[first]) ++first;
  if (first == v.size()) return std::vector<double>(v.size(), 0.0);
  for (std::size_t i = 0; i < first; ++i) v[i] = v[first];
  for (std::size_t i = first + 1; i < v.size(); ++i)
    if (s.missing_mask[i]) v[i] = v[i - 1];
  return v;
}
}  // namespace detail

/// Flags accelerometer sample i when |ax-mx| + |ay-my| + |az-mz| > threshold_g,
/// with m the per-axis centered rolling median over median_window_s (the
/// local gravity baseline). Missing samples are bridged with the previous value.
inline ArtifactMask artifact_mask(const RawStream& ax, const RawStream& ay, const RawStream& az,
                                  double threshold_g, double median_window_s) {
  if (ax.size() != ay.size() || ax.size() != az.size())
    throw ConfigError("artifact_mask: accelerometer axes differ in length");
  if (ax.times != ay.times || ax.times != az.times)
    throw ConfigError("artifact_mask: accelerometer axes do not share timestamps");
  ArtifactMask mask;
  mask.times = ax.times;
  mask.period_s = 1.0 / ax.rate_hz;
  mask.flags.assign(ax.size(), false);
  if (ax.size() == 0) return mask;
  const auto half = static_cast<std::size_t>(std::llround(median_window_s * ax.rate_hz / 2.0));
  std::array<std::vector<double>, 3> dev;
  const RawStream* axes[3] = {&ax, &ay, &az};
  for (int a = 0; a < 3; ++a) {
    const auto v = detail::fill_gaps_nearest(*axes[a]);
    const auto med = dsp::rolling_median(v, half);
    dev[a].resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) dev[a][i] = std::abs(v[i] - med[i]);
  }
  for (std::size_t i = 0; i < ax.size(); ++i)
    mask.flags[i] = dev[0][i] + dev[1][i] + dev[2][i] > threshold_g;
  return mask;
}

/// Maps the mask onto the stream's samples (nearest accelerometer sample in
/// time, only within one accelerometer period) and either replaces flagged
/// samples by the centered median of `window` neighbours or marks them missing.
inline RawStream apply_artifact_mask(const RawStream& stream, const ArtifactMask& mask, ArtifactMode mode,
                                     std::size_t window = 21) {
  if (mask.times.size() != mask.flags.size()) throw ConfigError("apply_artifact_mask: malformed mask");
  if (mask.empty()) return stream;
  const double tol = mask.period_s > 0.0 ? mask.period_s
                     : mask.times.size() > 1 ? mask.times[1] - mask.times[0] : 0.0;
  std::vector<bool> flagged(stream.size(), false);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const double t = stream.times[i];
    auto it = std::lower_bound(mask.times.begin(), mask.times.end(), t);
    std::size_t j;
    if (it == mask.times.end()) j = mask.times.size() - 1;
    else if (it == mask.times.begin()) j = 0;
    else {
      j = static_cast<std::size_t>(it - mask.times.begin());
      if (t - mask.times[j - 1] <= mask.times[j] - t) --j;
    }
    if (std::abs(mask.times[j] - t) <= tol) flagged[i] = mask.flags[j];
  }

  RawStream out = stream;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(stream.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (!flagged[static_cast<std::size_t>(i)]) continue;
    if (mode == ArtifactMode::Mask) {
      out.samples[static_cast<std::size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
      out.missing_mask[static_cast<std::size_t>(i)] = true;
      continue;
    }
    if (stream.missing_mask[static_cast<std::size_t>(i)]) continue;
    std::vector<double> w;
    for (std::ptrdiff_t k = i - half; k <= i + half; ++k) {
      const auto c = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, n - 1));
      if (!stream.missing_mask[c]) w.push_back(stream.samples[c]);
    }
    out.samples[static_cast<std::size_t>(i)] = dsp::median(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imputation
// ---------------------------------------------------------------------------

struct ImputationRejected : InsufficientData {
  using InsufficientData::InsufficientData;
};

/// Fills missing samples with a local-linear (constant-velocity) Kalman
/// filter followed by a Rauch-Tung-Striebel smoother. Missing observations
/// get prediction-only updates; observed samples are returned verbatim.
/// q and r are in units of the stream's observed variance.
inline RawStream kalman_impute(const RawStream& stream, double q, double r, double max_missing_frac) {
  const std::size_t n = stream.size();
  const std::size_t missing = static_cast<std::size_t>(std::count(stream.missing_mask.begin(), stream.missing_mask.end(), true));
  if (missing == 0) return stream;
  const double frac = static_cast<double>(missing) / static_cast<double>(n);
  if (frac > max_missing_frac)
    throw ImputationRejected("stream " + stream.subject_id + "/" + std::string(channel_name(stream.kind)) +
                             ": missing fraction " + format_double(frac) + " exceeds " + format_double(max_missing_frac));
  if (missing == n)
    throw ImputationRejected("stream " + stream.subject_id + "/" + std::string(channel_name(stream.kind)) + ": no observations");

  double mean = 0.0, var = 0.0;
  std::size_t first = n;
  for (std::size_t i = 0; i < n; ++i)
    if (!stream.missing_mask[i]) {
      if (first == n) first = i;
      mean += stream.samples[i];
    }
  mean /= static_cast<double>(n - missing);
  for (std::size_t i = 0; i < n; ++i)
    if (!stream.missing_mask[i]) var += (stream.samples[i] - mean) * (stream.samples[i] - mean);
  var /= static_cast<double>(n - missing);
  if (!(var > 1e-24)) var = 1.0;

  using M2 = Eigen::Matrix2d;
  using V2 = Eigen::Vector2d;
  M2 F;
  F << 1.0, 1.0, 0.0, 1.0;
  M2 Q;
  Q << 1.0 / 3.0, 0.5, 0.5, 1.0;
  Q *= q * var;
  const double R = r * var;

  std::vector<V2> xp(n), xf(n);
  std::vector<M2> Pp(n), Pf(n);
  V2 x(stream.samples[first], 0.0);
  M2 P = M2::Identity() * 1e6 * var;
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      x = F * x;
      P = F * P * F.transpose() + Q;
    }
    xp[t] = x;
    Pp[t] = P;
    if (!stream.missing_mask[t]) {
      const double s = P(0, 0) + R;
      const V2 k = P.col(0) / s;
      x = x + k * (stream.samples[t] - x(0));
      P = P - k * P.row(0);
      P = 0.5 * (P + P.transpose());
    }
    xf[t] = x;
    Pf[t] = P;
  }
  RawStream out = stream;
  V2 xs = xf[n - 1];
  if (out.missing_mask[n - 1]) out.samples[n - 1] = xs(0);
  for (std::size_t t = n - 1; t-- > 0;) {
    const M2 C = Pf[t] * F.transpose() * Pp[t + 1].inverse();
    xs = xf[t] + C * (xs - xp[t + 1]);
    if (out.missing_mask[t]) out.samples[t] = xs(0);
  }
  for (std::size_t t = 0; t < n; ++t) out.missing_mask[t] = false;
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Fits a not-a-knot cubic spline through the non-missing samples and
/// evaluates it on the absolute `hz` grid between the first and last knot.
inline UniformStream resample_uniform(const RawStream& stream, double hz, double max_knot_distance_s = 2.0) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < stream.size(); ++i)
    if (!stream.missing_mask[i] && std::isfinite(stream.samples[i])) {
      x.push_back(stream.times[i]);
      y.push_back(stream.samples[i]);
    }
  if (x.size() < 4)
    throw InsufficientData("resample: stream " + stream.subject_id + "/" + std::string(channel_name(stream.kind)) +
                           " has fewer than 4 knots");
  const auto g0 = static_cast<std::int64_t>(std::ceil(x.front() * hz - 1e-9));
  const auto g1 = static_cast<std::int64_t>(std::floor(x.back() * hz + 1e-9));
  UniformStream u;
  u.subject_id = stream.subject_id;
  u.kind = stream.kind;
  u.rate_hz = hz;
  u.start_index = g0;
  if (g1 < g0) return u;
  std::vector<double> grid(static_cast<std::size_t>(g1 - g0 + 1));
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(g0 + static_cast<std::int64_t>(i)) / hz;
  // Clamp the ends onto the knot range; they can only differ by rounding.
  grid.front() = std::max(grid.front(), x.front());
  grid.back() = std::min(grid.back(), x.back());
  dsp::CubicSpline spline(x, std::move(y));
  u.samples = spline.evaluate_sorted(grid);
  u.quality_mask.resize(grid.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    while (k + 1 < x.size() && x[k + 1] <= grid[i]) ++k;
    double d = std::abs(grid[i] - x[k]);
    if (k + 1 < x.size()) d = std::min(d, std::abs(x[k + 1] - grid[i]));
    u.quality_mask[i] = d <= max_knot_distance_s;
  }
  return u;
}

inline UniformStream resample_to_4hz(const RawStream& stream) { return resample_uniform(stream, 4.0); }

/// Splits a stream wherever consecutive samples are more than max_gap_s apart.
inline std::vector<RawStream> split_runs(const RawStream& s, double max_gap_s) {
  std::vector<RawStream> runs;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= s.size(); ++i) {
    if (i == s.size() || s.times[i] - s.times[i - 1] > max_gap_s) {
      RawStream r;
      r.subject_id = s.subject_id;
      r.kind = s.kind;
      r.rate_hz = s.rate_hz;
      r.start_time = s.times[begin];
      const auto b = static_cast<std::ptrdiff_t>(begin), e = static_cast<std::ptrdiff_t>(i);
      r.times.assign(s.times.begin() + b, s.times.begin() + e);
      r.samples.assign(s.samples.begin() + b, s.samples.begin() + e);
      r.missing_mask.assign(s.missing_mask.begin() + b, s.missing_mask.begin() + e);
      runs.push_back(std::move(r));
      begin = i;
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

/// z-scores every (subject, kind) group with the mean and population standard
/// deviation pooled over all of that group's streams. Degenerate groups
/// (sd < 1e-12) become zeros.
inline std::vector<UniformStream> zscore_per_subject(std::vector<UniformStream> streams) {
  std::map<std::pair<std::string, ChannelKind>, std::pair<double, double>> stats;
  std::map<std::pair<std::string, ChannelKind>, std::size_t> counts;
  for (const auto& s : streams) {
    auto& [sum, _] = stats[{s.subject_id, s.kind}];
    for (double v : s.samples) sum += v;
    counts[{s.subject_id, s.kind}] += s.samples.size();
  }
  for (auto& [key, st] : stats) st.first /= static_cast<double>(std::max<std::size_t>(1, counts[key]));
  for (const auto& s : streams) {
    auto& [mu, ss] = stats[{s.subject_id, s.kind}];
    for (double v : s.samples) ss += (v - mu) * (v - mu);
  }
  for (auto& s : streams) {
    const auto key = std::make_pair(s.subject_id, s.kind);
    const double mu = stats[key].first;
    const double sd = std::sqrt(stats[key].second / static_cast<double>(std::max<std::size_t>(1, counts[key])));
    for (double& v : s.samples) v = sd < 1e-12 ? 0.0 : (v - mu) / sd;
  }
  return streams;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

struct Epoch {
  std::string subject_id;
  int shift_id = 0;
  double t0 = 0.0;
  StressLabel label = StressLabel::Baseline;
  /// z-scored EDA, HR and TEMP at the target rate, epoch_samples each.
  std::map<ChannelKind, std::vector<double>> channels;
  /// TEMP before z-scoring (degrees Celsius), same grid as channels.
  std::vector<double> temp_celsius;
  /// Accelerometer magnitude (g) at the native rate covering [t0, t0 + epoch_s).
  std::vector<double> native_acc;
  double acc_rate_hz = 32.0;
  /// Inter-beat intervals whose beat falls in the window, milliseconds.
  std::vector<double> ibi_ms;

  const std::vector<double>& channel(ChannelKind k) const {
    auto it = channels.find(k);
    if (it == channels.end()) throw FormatError("epoch lacks channel " + std::string(channel_name(k)));
    return it->second;
  }
  friend bool operator==(const Epoch&, const Epoch&) = default;
};

/// Everything segmentation needs for one subject, already preprocessed.
struct SubjectSignals {
  std::string subject_id;
  std::vector<UniformStream> eda, hr, temp;  // z-scored runs
  std::vector<UniformStream> temp_celsius;   // same runs before z-scoring
  std::vector<double> acc_times, acc_magnitude;
  double acc_rate_hz = 32.0;
  std::vector<double> ibi_times, ibi_ms;
};

namespace detail {
using Run = std::pair<std::int64_t, std::int64_t>;  // [begin, end) grid indices

inline std::vector<Run> runs_of(const std::vector<UniformStream>& v) {
  std::vector<Run> r;
  for (const auto& s : v)
    if (!s.samples.empty()) r.emplace_back(s.start_index, s.end_index());
  std::sort(r.begin(), r.end());
  return r;
}

inline std::vector<Run> intersect(const std::vector<Run>& a, const std::vector<Run>& b) {
  std::vector<Run> out;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const auto lo = std::max(a[i].first, b[j].first);
    const auto hi = std::min(a[i].second, b[j].second);
    if (lo < hi) out.emplace_back(lo, hi);
    if (a[i].second < b[j].second) ++i;
    else ++j;
  }
  return out;
}

inline const UniformStream* containing(const std::vector<UniformStream>& v, std::int64_t begin, std::int64_t end) {
  for (const auto& s : v)
    if (s.start_index <= begin && end <= s.end_index()) return &s;
  return nullptr;
}
}  // namespace detail

/// Number of epochs of L samples with step S that fit in N samples.
inline std::size_t epoch_count(std::size_t n, std::size_t len, std::size_t step) {
  return n < len ? 0 : (n - len) / step + 1;
}

/// Cuts one subject's common coverage into overlapping epochs. Epochs are
/// labelled by the interval with the greatest time overlap (ties to the
/// earlier interval); epochs without any overlapping interval, straddling
/// two shifts, or with too many low-quality samples are dropped.
inline std::vector<Epoch> segment(const SubjectSignals& sig, const std::vector<LabeledInterval>& intervals,
                                  const PreprocessParams& p) {
  const std::size_t L = p.epoch_samples();
  const std::size_t S = p.step_samples();
  const double hz = p.target_hz;

  auto common = detail::intersect(detail::intersect(detail::runs_of(sig.eda), detail::runs_of(sig.hr)),
                                  detail::runs_of(sig.temp));
  if (!sig.acc_times.empty()) {
    std::vector<detail::Run> acc_runs;
    const double gap = 2.0 / sig.acc_rate_hz + 1e-9;
    std::size_t b = 0;
    for (std::size_t i = 1; i <= sig.acc_times.size(); ++i)
      if (i == sig.acc_times.size() || sig.acc_times[i] - sig.acc_times[i - 1] > gap) {
        acc_runs.emplace_back(static_cast<std::int64_t>(std::ceil(sig.acc_times[b] * hz - 1e-9)),
                              static_cast<std::int64_t>(std::floor(sig.acc_times[i - 1] * hz + 1e-9)) + 1);
        b = i;
      }
    common = detail::intersect(common, acc_runs);
  } else {
    common.clear();
  }

  std::vector<const LabeledInterval*> ivs;
  for (const auto& iv : intervals)
    if (iv.subject_id == sig.subject_id) ivs.push_back(&iv);
  std::sort(ivs.begin(), ivs.end(), [](auto* a, auto* b) { return a->t_start < b->t_start; });

  std::vector<Epoch> out;
  for (const auto& [rb, re] : common) {
    const std::size_t count = epoch_count(static_cast<std::size_t>(re - rb), L, S);
    for (std::size_t k = 0; k < count; ++k) {
      const std::int64_t g0 = rb + static_cast<std::int64_t>(k * S);
      const std::int64_t g1 = g0 + static_cast<std::int64_t>(L);
      const double t0 = static_cast<double>(g0) / hz;
      const double t1 = static_cast<double>(g1) / hz;

      const LabeledInterval* best = nullptr;
      double best_overlap = 0.0;
      std::set<int> shifts;
      for (const auto* iv : ivs) {
        const double ov = std::min(t1, iv->t_end) - std::max(t0, iv->t_start);
        if (ov <= 0.0) continue;
        shifts.insert(iv->shift_id);
        if (ov > best_overlap) {
          best_overlap = ov;
          best = iv;
        }
      }
      if (!best || shifts.size() != 1) continue;

      Epoch e;
      e.subject_id = sig.subject_id;
      e.shift_id = best->shift_id;
      e.t0 = t0;
      e.label = best->label;
      bool ok = true;
      auto take = [&](const std::vector<UniformStream>& v, std::vector<double>& dst) {
        const auto* s = detail::containing(v, g0, g1);
        if (!s) {
          ok = false;
          return;
        }
        const auto off = static_cast<std::ptrdiff_t>(g0 - s->start_index);
        dst.assign(s->samples.begin() + off, s->samples.begin() + off + static_cast<std::ptrdiff_t>(L));
        const auto bad = std::count(s->quality_mask.begin() + off, s->quality_mask.begin() + off + static_cast<std::ptrdiff_t>(L), false);
        if (static_cast<double>(bad) > p.max_missing_frac * static_cast<double>(L)) ok = false;
        for (double v2 : dst)
          if (!std::isfinite(v2)) ok = false;
      };
      take(sig.eda, e.channels[ChannelKind::EDA]);
      take(sig.hr, e.channels[ChannelKind::HR]);
      take(sig.temp, e.channels[ChannelKind::TEMP]);
      take(sig.temp_celsius, e.temp_celsius);
      if (!ok) continue;

      auto lo = std::lower_bound(sig.acc_times.begin(), sig.acc_times.end(), t0);
      auto hi = std::lower_bound(sig.acc_times.begin(), sig.acc_times.end(), t1);
      e.native_acc.assign(sig.acc_magnitude.begin() + (lo - sig.acc_times.begin()),
                          sig.acc_magnitude.begin() + (hi - sig.acc_times.begin()));
      e.acc_rate_hz = sig.acc_rate_hz;
      auto blo = std::lower_bound(sig.ibi_times.begin(), sig.ibi_times.end(), t0);
      auto bhi = std::lower_bound(sig.ibi_times.begin(), sig.ibi_times.end(), t1);
      e.ibi_ms.assign(sig.ibi_ms.begin() + (blo - sig.ibi_times.begin()), sig.ibi_ms.begin() + (bhi - sig.ibi_times.begin()));
      out.push_back(std::move(e));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-dataset pipeline
// ---------------------------------------------------------------------------

struct PreprocessReport {
  std::vector<std::string> rejected_runs;
  std::size_t epochs = 0;
};

struct PreprocessResult {
  std::vector<Epoch> epochs;
  PreprocessReport report;
};

inline PreprocessResult preprocess_dataset(const Dataset& ds, const PreprocessParams& p) {
  p.validate();
  std::vector<std::string> subjects;
  for (const auto& s : ds.streams)
    if (std::find(subjects.begin(), subjects.end(), s.subject_id) == subjects.end()) subjects.push_back(s.subject_id);
  std::sort(subjects.begin(), subjects.end());

  struct Partial {
    SubjectSignals sig;
    std::vector<std::string> rejected;
  };
  std::vector<Partial> parts(subjects.size());

  parallel_for(subjects.size(), [&](std::size_t si) {
    auto& part = parts[si];
    auto& sig = part.sig;
    sig.subject_id = subjects[si];
    std::map<ChannelKind, const RawStream*> by_kind;
    for (const auto& s : ds.streams)
      if (s.subject_id == sig.subject_id) by_kind[s.kind] = &s;

    auto impute = [&](const RawStream& r) -> std::optional<RawStream> {
      try {
        return kalman_impute(r, p.kalman_q, p.kalman_r, p.max_missing_frac);
      } catch (const ImputationRejected& e) {
        part.rejected.push_back(e.what());
        return std::nullopt;
      }
    };

    ArtifactMask mask;
    if (by_kind.count(ChannelKind::ACC_X) && by_kind.count(ChannelKind::ACC_Y) && by_kind.count(ChannelKind::ACC_Z)) {
      const auto& x = *by_kind[ChannelKind::ACC_X];
      const auto& y = *by_kind[ChannelKind::ACC_Y];
      const auto& z = *by_kind[ChannelKind::ACC_Z];
      sig.acc_rate_hz = x.rate_hz;
      auto rx = split_runs(x, p.max_gap_s), ry = split_runs(y, p.max_gap_s), rz = split_runs(z, p.max_gap_s);
      if (rx.size() != ry.size() || rx.size() != rz.size())
        throw FormatError("accelerometer axes of " + sig.subject_id + " are not aligned");
      for (std::size_t r = 0; r < rx.size(); ++r) {
        auto m = artifact_mask(rx[r], ry[r], rz[r], p.artifact_threshold_g, p.median_window_s);
        mask.period_s = m.period_s;
        mask.times.insert(mask.times.end(), m.times.begin(), m.times.end());
        mask.flags.insert(mask.flags.end(), m.flags.begin(), m.flags.end());
        auto ix = impute(rx[r]), iy = impute(ry[r]), iz = impute(rz[r]);
        if (!ix || !iy || !iz) continue;
        for (std::size_t i = 0; i < ix->size(); ++i) {
          sig.acc_times.push_back(ix->times[i]);
          sig.acc_magnitude.push_back(std::sqrt(ix->samples[i] * ix->samples[i] + iy->samples[i] * iy->samples[i] +
                                                iz->samples[i] * iz->samples[i]));
        }
      }
    }

    auto process = [&](ChannelKind kind, std::vector<UniformStream>& dst) {
      if (!by_kind.count(kind)) return;
      for (const auto& run : split_runs(*by_kind[kind], p.max_gap_s)) {
        auto cleaned = apply_artifact_mask(run, mask, p.artifact_mode, p.replace_window);
        auto filled = impute(cleaned);
        if (!filled) continue;
        try {
          dst.push_back(resample_uniform(*filled, p.target_hz, p.max_knot_distance_s));
        } catch (const InsufficientData& e) {
          part.rejected.push_back(e.what());
        }
      }
    };
    process(ChannelKind::EDA, sig.eda);
    process(ChannelKind::TEMP, sig.temp);

    if (by_kind.count(ChannelKind::IBI)) {
      // HR is derived from the beat series: knots at beat times, 60000 / IBI.
      const auto& ibi = *by_kind[ChannelKind::IBI];
      RawStream hr;
      hr.subject_id = sig.subject_id;
      hr.kind = ChannelKind::HR;
      hr.rate_hz = ibi.rate_hz;
      for (std::size_t i = 0; i < ibi.size(); ++i) {
        if (ibi.missing_mask[i] || !(ibi.samples[i] > 0.0)) continue;
        sig.ibi_times.push_back(ibi.times[i]);
        sig.ibi_ms.push_back(ibi.samples[i]);
        hr.times.push_back(ibi.times[i]);
        hr.samples.push_back(60000.0 / ibi.samples[i]);
        hr.missing_mask.push_back(false);
      }
      if (!hr.times.empty()) {
        hr.start_time = hr.times.front();
        // Beats are irregular; allow gaps of a few beats before splitting.
        for (const auto& run : split_runs(hr, 3.0 * p.max_gap_s)) {
          try {
            sig.hr.push_back(resample_uniform(run, p.target_hz, p.max_knot_distance_s));
          } catch (const InsufficientData& e) {
            part.rejected.push_back(e.what());
          }
        }
      }
    } else if (by_kind.count(ChannelKind::HR)) {
      process(ChannelKind::HR, sig.hr);
    }
    sig.temp_celsius = sig.temp;
  });

  // Pooled per-subject normalisation across every run of a channel.
  std::vector<UniformStream> all;
  for (auto& part : parts)
    for (auto* v : {&part.sig.eda, &part.sig.hr, &part.sig.temp})
      for (auto& s : *v) all.push_back(std::move(s));
  all = zscore_per_subject(std::move(all));
  {
    std::size_t idx = 0;
    for (auto& part : parts)
      for (auto* v : {&part.sig.eda, &part.sig.hr, &part.sig.temp})
        for (auto& s : *v) s = std::move(all[idx++]);
  }

  std::vector<std::vector<Epoch>> per(parts.size());
  parallel_for(parts.size(), [&](std::size_t i) { per[i] = segment(parts[i].sig, ds.intervals, p); });

  PreprocessResult res;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (auto& e : per[i]) res.epochs.push_back(std::move(e));
    for (auto& r : parts[i].rejected) res.report.rejected_runs.push_back(std::move(r));
  }
  res.report.epochs = res.epochs.size();
  return res;
}

// ---------------------------------------------------------------------------
// Epoch container: "WSEPOCH1" magic, then (u64 length, payload) records.
// A JSON sidecar <file>.json carries the format version and parameters.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kEpochMagic = "WSEPOCH1";

inline std::string encode_epoch(const Epoch& e) {
  binio::Writer w;
  w.put_string(e.subject_id);
  w.put<std::int32_t>(e.shift_id);
  w.put<double>(e.t0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(e.label));
  w.put<double>(e.acc_rate_hz);
  w.put_doubles(e.channel(ChannelKind::EDA));
  w.put_doubles(e.channel(ChannelKind::HR));
  w.put_doubles(e.channel(ChannelKind::TEMP));
  w.put_doubles(e.temp_celsius);
  w.put_doubles(e.native_acc);
  w.put_doubles(e.ibi_ms);
  return w.take();
}

inline Epoch decode_epoch(std::string_view payload) {
  binio::Reader r(payload, "epoch record");
  Epoch e;
  e.subject_id = r.get_string();
  e.shift_id = r.get<std::int32_t>();
  e.t0 = r.get<double>();
  const auto lab = r.get<std::uint8_t>();
  e.label = label_from_index(lab);
  e.acc_rate_hz = r.get<double>();
  e.channels[ChannelKind::EDA] = r.get_doubles();
  e.channels[ChannelKind::HR] = r.get_doubles();
  e.channels[ChannelKind::TEMP] = r.get_doubles();
  e.temp_celsius = r.get_doubles();
  e.native_acc = r.get_doubles();
  e.ibi_ms = r.get_doubles();
  if (!r.done()) throw FormatError("epoch record has trailing bytes");
  return e;
}

inline void save_epochs(const std::vector<Epoch>& epochs, const PreprocessParams& p,
                        const std::filesystem::path& path) {
  binio::Writer w;
  w.put_bytes(kEpochMagic);
  for (const auto& e : epochs) {
    const auto payload = encode_epoch(e);
    w.put<std::uint64_t>(payload.size());
    w.put_bytes(payload);
  }
  binio::write_all(path, w.bytes());
  nlohmann::ordered_json side;
  side["format"] = kEpochFormat;
  side["count"] = epochs.size();
  side["params"] = p.to_json();
  binio::write_all(path.string() + ".json", side.dump(2) + "\n");
}

inline std::vector<Epoch> load_epochs(const std::filesystem::path& path) {
  const auto side_path = std::filesystem::path(path.string() + ".json");
  if (!std::filesystem::exists(side_path)) throw FormatError(path.string() + ": missing sidecar " + side_path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(binio::read_all(side_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  }
  if (side.value("format", std::string{}) != kEpochFormat) throw FormatError(side_path.string() + ": unsupported format version");
  const std::string data = binio::read_all(path);
  binio::Reader r(data, path.string());
  if (r.get_bytes(kEpochMagic.size()) != kEpochMagic) throw FormatError(path.string() + ": bad magic");
  std::vector<Epoch> out;
  while (!r.done()) {
    const auto n = r.get<std::uint64_t>();
    out.push_back(decode_epoch(r.get_bytes(static_cast<std::size_t>(n))));
  }
  if (out.size() != side.value("count", std::size_t{0})) throw FormatError(path.string() + ": record count mismatch");
  return out;
}

}  // namespace wearstress
