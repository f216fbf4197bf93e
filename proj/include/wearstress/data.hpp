/// @file data.hpp
/// Raw sensor data model, on-disk stream layout and the seeded synthetic
/// dataset generator.
///
/// On disk a dataset is a directory:
///
///     <root>/manifest.json              format "wearstress-v1" + file list
///     <root>/labels.csv                 subject_id,shift_id,t_start,t_end,label
///     <root>/<subject_id>/<channel>.csv "# start=<unix_s> rate=<hz>" then timestamp,value rows
///
/// An empty value field marks a missing sample.

#pragma once

#include "wearstress/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

namespace wearstress {

inline constexpr std::string_view kDataFormat = "wearstress-v1";

enum class ChannelKind : std::uint8_t { EDA, HR, IBI, TEMP, ACC_X, ACC_Y, ACC_Z };

inline constexpr std::array<ChannelKind, 7> kAllChannels = {
    ChannelKind::EDA,  ChannelKind::HR,    ChannelKind::IBI,  ChannelKind::TEMP,
    ChannelKind::ACC_X, ChannelKind::ACC_Y, ChannelKind::ACC_Z};

inline std::string_view channel_name(ChannelKind k) {
  switch (k) {
    case ChannelKind::EDA: return "eda";
    case ChannelKind::HR: return "hr";
    case ChannelKind::IBI: return "ibi";
    case ChannelKind::TEMP: return "temp";
    case ChannelKind::ACC_X: return "acc_x";
    case ChannelKind::ACC_Y: return "acc_y";
    case ChannelKind::ACC_Z: return "acc_z";
  }
  return "?";
}

inline std::optional<ChannelKind> parse_channel(std::string_view s) {
  for (auto k : kAllChannels)
    if (channel_name(k) == s) return k;
  return std::nullopt;
}

/// One subject/channel series at its native rate.
///
/// Sample times are carried explicitly: uniform channels hold start + i/rate,
/// while IBI is an event series (one entry per detected beat, value = the
/// interval ending at that beat, rate_hz = nominal beat rate). Missing samples
/// hold NaN and are flagged in missing_mask.
struct RawStream {
  std::string subject_id;
  ChannelKind kind = ChannelKind::EDA;
  double start_time = 0.0;
  double rate_hz = 1.0;
  std::vector<double> times;
  std::vector<double> samples;
  std::vector<bool> missing_mask;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    if (!(rate_hz > 0.0)) throw FormatError("stream " + subject_id + "/" + std::string(channel_name(kind)) + ": rate_hz must be positive");
    if (samples.empty()) throw FormatError("stream " + subject_id + "/" + std::string(channel_name(kind)) + ": no samples");
    if (missing_mask.size() != samples.size() || times.size() != samples.size())
      throw FormatError("stream " + subject_id + "/" + std::string(channel_name(kind)) + ": length mismatch");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw FormatError("stream " + subject_id + "/" + std::string(channel_name(kind)) + ": timestamps not increasing");
  }

  double missing_fraction() const {
    if (missing_mask.empty()) return 0.0;
    return static_cast<double>(std::count(missing_mask.begin(), missing_mask.end(), true)) /
           static_cast<double>(missing_mask.size());
  }

  /// Uniformly sampled stream starting at t0.
  static RawStream uniform(std::string subject, ChannelKind kind, double t0, double rate,
                           std::vector<double> values) {
    RawStream s;
    s.subject_id = std::move(subject);
    s.kind = kind;
    s.start_time = t0;
    s.rate_hz = rate;
    s.times.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) s.times[i] = t0 + static_cast<double>(i) / rate;
    s.missing_mask.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) s.missing_mask[i] = std::isnan(values[i]);
    s.samples = std::move(values);
    return s;
  }
};

/// Equality ignores the payload of missing samples.
inline bool operator==(const RawStream& a, const RawStream& b) {
  if (a.subject_id != b.subject_id || a.kind != b.kind || a.start_time != b.start_time ||
      a.rate_hz != b.rate_hz || a.times != b.times || a.missing_mask != b.missing_mask ||
      a.samples.size() != b.samples.size())
    return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    if (!a.missing_mask[i] && a.samples[i] != b.samples[i]) return false;
  return true;
}

struct LabeledInterval {
  std::string subject_id;
  int shift_id = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  StressLabel label = StressLabel::Baseline;

  double duration() const { return t_end - t_start; }
  friend bool operator==(const LabeledInterval&, const LabeledInterval&) = default;
};

struct Dataset {
  std::vector<RawStream> streams;
  std::vector<LabeledInterval> intervals;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks the interval invariants: t_start < t_end and no overlap within a subject.
inline void validate_intervals(const std::vector<LabeledInterval>& intervals) {
  std::map<std::string, std::vector<const LabeledInterval*>> by_subject;
  for (const auto& iv : intervals) {
    if (!(iv.t_start < iv.t_end))
      throw FormatError("interval for " + iv.subject_id + " has t_start >= t_end");
    if (iv.shift_id < 0) throw FormatError("interval for " + iv.subject_id + " has negative shift_id");
    by_subject[iv.subject_id].push_back(&iv);
  }
  for (auto& [subject, ivs] : by_subject) {
    std::sort(ivs.begin(), ivs.end(),
              [](auto* a, auto* b) { return a->t_start < b->t_start; });
    for (std::size_t i = 1; i < ivs.size(); ++i)
      if (ivs[i]->t_start < ivs[i - 1]->t_end)
        throw FormatError("overlapping label intervals for subject " + subject);
  }
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

namespace detail {

inline void check_subject_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\,\n\r") != std::string::npos || id == "." || id == "..")
    throw FormatError("invalid subject id '" + id + "'");
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

inline std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

inline RawStream parse_stream_file(const std::filesystem::path& path, const std::string& subject,
                                   ChannelKind kind) {
  const std::string text = read_file(path);
  const std::string name = path.string();
  std::string_view rest(text);
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (rest.empty()) return std::nullopt;
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    return trim_cr(line);
  };

  auto header = next_line();
  if (!header || !header->starts_with("# ")) throw FormatError(name + ": missing header line");
  RawStream s;
  s.subject_id = subject;
  s.kind = kind;
  bool have_start = false, have_rate = false;
  for (auto tok : split(header->substr(2), ' ')) {
    if (tok.empty()) continue;
    if (tok.starts_with("start=")) {
      s.start_time = parse_double(tok.substr(6), name);
      have_start = true;
    } else if (tok.starts_with("rate=")) {
      s.rate_hz = parse_double(tok.substr(5), name);
      have_rate = true;
    }
  }
  if (!have_start || !have_rate) throw FormatError(name + ": header must declare start= and rate=");
  if (!(s.rate_hz > 0.0)) throw FormatError(name + ": rate must be positive");

  while (auto line = next_line()) {
    if (line->empty()) continue;
    const auto comma = line->find(',');
    if (comma == std::string_view::npos) throw FormatError(name + ": row without comma");
    const double t = parse_double(line->substr(0, comma), name);
    if (!s.times.empty() && !(t > s.times.back()))
      throw FormatError(name + ": non-monotonic timestamps");
    const auto field = line->substr(comma + 1);
    s.times.push_back(t);
    if (field.empty()) {
      s.samples.push_back(std::numeric_limits<double>::quiet_NaN());
      s.missing_mask.push_back(true);
    } else {
      s.samples.push_back(parse_double(field, name));
      s.missing_mask.push_back(false);
    }
  }
  if (s.samples.empty()) throw FormatError(name + ": no samples");
  return s;
}

inline std::string format_stream_file(const RawStream& s) {
  std::string out;
  out.reserve(s.size() * 28 + 64);
  out += "# start=" + format_double(s.start_time) + " rate=" + format_double(s.rate_hz) + "\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += format_double(s.times[i]);
    out += ',';
    if (!s.missing_mask[i]) out += format_double(s.samples[i]);
    out += '\n';
  }
  return out;
}

}  // namespace detail

/// Writes a dataset directory. Two streams for one (subject, channel) are
/// rejected because they would share a file.
inline void save_streams(const std::vector<RawStream>& streams,
                         const std::vector<LabeledInterval>& intervals,
                         const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::map<std::pair<std::string, ChannelKind>, const RawStream*> index;
  for (const auto& s : streams) {
    detail::check_subject_id(s.subject_id);
    s.validate();
    if (!index.emplace(std::make_pair(s.subject_id, s.kind), &s).second)
      throw FormatError("two streams for " + s.subject_id + "/" + std::string(channel_name(s.kind)));
  }
  validate_intervals(intervals);

  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw IoError("cannot create directory " + root.string());

  nlohmann::ordered_json manifest;
  manifest["format"] = kDataFormat;
  manifest["streams"] = nlohmann::ordered_json::array();
  for (const auto& [key, s] : index) {
    const fs::path dir = root / s->subject_id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
    const std::string rel = s->subject_id + "/" + std::string(channel_name(s->kind)) + ".csv";
    detail::write_file(root / rel, detail::format_stream_file(*s));
    manifest["streams"].push_back({{"subject_id", s->subject_id},
                                   {"channel", channel_name(s->kind)},
                                   {"file", rel},
                                   {"samples", s->size()}});
  }
  if (!intervals.empty()) {
    std::string labels = "subject_id,shift_id,t_start,t_end,label\n";
    for (const auto& iv : intervals) {
      detail::check_subject_id(iv.subject_id);
      labels += iv.subject_id + "," + std::to_string(iv.shift_id) + "," + format_double(iv.t_start) +
                "," + format_double(iv.t_end) + "," + std::string(label_name(iv.label)) + "\n";
    }
    detail::write_file(root / "labels.csv", labels);
    manifest["labels"] = "labels.csv";
  } else {
    manifest["labels"] = nullptr;
  }
  detail::write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

/// Reads a dataset directory written by save_streams (or by hand, following
/// the same layout).
inline Dataset load_streams(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError(root.string() + ": missing manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", std::string{}) != kDataFormat)
    throw FormatError(manifest_path.string() + ": unsupported format version");

  Dataset ds;
  for (const auto& entry : manifest.at("streams")) {
    const std::string subject = entry.at("subject_id").get<std::string>();
    detail::check_subject_id(subject);
    const auto kind = parse_channel(entry.at("channel").get<std::string>());
    if (!kind) throw FormatError(manifest_path.string() + ": unknown channel " + entry.at("channel").dump());
    const fs::path file = root / subject / (std::string(channel_name(*kind)) + ".csv");
    ds.streams.push_back(detail::parse_stream_file(file, subject, *kind));
  }

  if (manifest.contains("labels") && !manifest["labels"].is_null()) {
    const fs::path lp = root / manifest["labels"].get<std::string>();
    const std::string text = detail::read_file(lp);
    auto lines = split(text, '\n');
    if (lines.empty() || detail::trim_cr(lines[0]) != "subject_id,shift_id,t_start,t_end,label")
      throw FormatError(lp.string() + ": missing header");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto line = detail::trim_cr(lines[i]);
      if (line.empty()) continue;
      auto f = split(line, ',');
      if (f.size() != 5) throw FormatError(lp.string() + ": expected 5 columns");
      LabeledInterval iv;
      iv.subject_id = std::string(f[0]);
      iv.shift_id = static_cast<int>(parse_int(f[1], lp.string()));
      iv.t_start = parse_double(f[2], lp.string());
      iv.t_end = parse_double(f[3], lp.string());
      iv.label = parse_label(f[4]);
      ds.intervals.push_back(std::move(iv));
    }
    validate_intervals(ds.intervals);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_subjects = 3;
  int shifts_per_subject = 5;
  double shift_hours = 1.0;
  std::array<double, 3> class_mix = {0.80, 0.12, 0.08};
  double effect_size = 1.5;

  void validate() const {
    if (n_subjects < 0 || shifts_per_subject < 0) throw ConfigError("subject and shift counts must be non-negative");
    if (!(shift_hours > 0.0)) throw ConfigError("shift_hours must be positive");
    if (!(effect_size >= 0.0)) throw ConfigError("effect_size must be non-negative");
    double sum = 0.0;
    for (double p : class_mix) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("class proportions must lie in [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("class proportions must sum to 1");
  }
};

namespace detail {

inline constexpr double kSynthEpoch = 1.6e9;
inline constexpr double kLabelBlockS = 600.0;

inline double quantize(double v, double step) { return std::round(v / step) * step; }

struct ShiftPlan {
  int subject = 0;
  int shift = 0;
  double t0 = 0.0;
  double duration = 0.0;
};

/// First-order lag of a 0/1 indicator sampled at dt.
inline std::vector<double> lagged(const std::vector<double>& ind, double dt, double tau) {
  std::vector<double> out(ind.size());
  const double a = 1.0 - std::exp(-dt / tau);
  double s = ind.empty() ? 0.0 : ind[0];
  for (std::size_t i = 0; i < ind.size(); ++i) {
    s += a * (ind[i] - s);
    out[i] = s;
  }
  return out;
}

/// Drops short bursts of samples to exercise imputation; about `rate` of samples.
inline void inject_missing(std::vector<double>& v, Rng& rng, double rate) {
  const double mean_burst = 4.0;
  const int bursts = rng.poisson(rate * static_cast<double>(v.size()) / mean_burst);
  for (int b = 0; b < bursts; ++b) {
    const std::size_t at = 1 + rng.below(v.size() > 2 ? v.size() - 2 : 1);
    const std::size_t len = 2 + rng.below(5);
    for (std::size_t i = at; i < std::min(v.size() - 1, at + len); ++i)
      v[i] = std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace detail

/// Generates a labelled multi-subject dataset. The output is a pure function
/// of cfg. Labels tile every shift in 10-minute blocks whose class counts
/// follow class_mix by largest remainder; the class signatures are:
///   acute   - extra skin-conductance responses, raised EDA, shorter and less
///             variable inter-beat intervals, mild fidget motion;
///   chronic - raised tonic EDA, a rising skin-temperature trend, slightly
///             shorter inter-beat intervals;
/// all scaled by effect_size.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  using detail::quantize;
  cfg.validate();
  Dataset ds;
  if (cfg.n_subjects == 0 || cfg.shifts_per_subject == 0) return ds;

  const double shift_s = std::floor(cfg.shift_hours * 3600.0 * 4.0) / 4.0;
  if (shift_s < 1.0) throw ConfigError("shift_hours too small");

  // Label blocks, allocated globally so proportions hold across the dataset.
  struct Block {
    int subject, shift;
    double t0, t1;
    StressLabel label = StressLabel::Baseline;
  };
  std::vector<Block> blocks;
  for (int s = 0; s < cfg.n_subjects; ++s)
    for (int j = 0; j < cfg.shifts_per_subject; ++j) {
      const double t0 = detail::kSynthEpoch + j * 86400.0 + 7 * 3600.0;
      for (double b = 0.0; b < shift_s; b += detail::kLabelBlockS)
        blocks.push_back({s, j, t0 + b, t0 + std::min(shift_s, b + detail::kLabelBlockS)});
    }
  {
    const double total = static_cast<double>(blocks.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int c = 0; c < 3; ++c) {
      const double exact = cfg.class_mix[static_cast<std::size_t>(c)] * total;
      counts[static_cast<std::size_t>(c)] = static_cast<std::size_t>(std::floor(exact));
      rem[static_cast<std::size_t>(c)] = exact - std::floor(exact);
      assigned += counts[static_cast<std::size_t>(c)];
    }
    while (assigned < blocks.size()) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 3; ++c)
        if (rem[c] > rem[best]) best = c;
      ++counts[best];
      rem[best] = -1.0;
      ++assigned;
    }
    std::vector<StressLabel> labels;
    for (std::size_t c = 0; c < 3; ++c) labels.insert(labels.end(), counts[c], label_from_index(static_cast<int>(c)));
    Rng rng(cfg.seed, "labels");
    rng.shuffle(labels);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].label = labels[i];
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string sid = "S" + std::string(b.subject < 9 ? "0" : "") + std::to_string(b.subject + 1);
    auto& ivs = ds.intervals;
    if (!ivs.empty() && ivs.back().subject_id == sid && ivs.back().shift_id == b.shift &&
        ivs.back().label == b.label && ivs.back().t_end == b.t0)
      ivs.back().t_end = b.t1;
    else
      ivs.push_back({sid, b.shift, b.t0, b.t1, b.label});
  }

  std::vector<std::vector<RawStream>> per_subject(static_cast<std::size_t>(cfg.n_subjects));
  parallel_for(per_subject.size(), [&](std::size_t s) {
    Rng rng(cfg.seed, "subject", s);
    const std::string sid = "S" + std::string(s < 9 ? "0" : "") + std::to_string(s + 1);
    const double e = cfg.effect_size;
    const double eda_base = rng.uniform(2.0, 6.0);
    const double ibi_base = rng.uniform(720.0, 950.0);
    const double temp_base = rng.uniform(32.5, 34.5);
    const double rsa_amp = rng.uniform(20.0, 40.0);

    std::vector<double> eda_t, eda_v, temp_v, ibi_t, ibi_v, acc_t, ax, ay, az;
    std::vector<double> temp_t;
    for (int j = 0; j < cfg.shifts_per_subject; ++j) {
      const double t0 = detail::kSynthEpoch + j * 86400.0 + 7 * 3600.0;
      const std::size_t n4 = static_cast<std::size_t>(shift_s * 4.0);
      const double dt4 = 0.25;

      std::vector<double> acute_ind(n4, 0.0), chronic_ind(n4, 0.0);
      for (const auto& b : blocks) {
        if (b.subject != static_cast<int>(s) || b.shift != j) continue;
        const auto i0 = static_cast<std::size_t>((b.t0 - t0) * 4.0);
        const auto i1 = std::min(n4, static_cast<std::size_t>((b.t1 - t0) * 4.0));
        for (std::size_t i = i0; i < i1; ++i) {
          if (b.label == StressLabel::Acute) acute_ind[i] = 1.0;
          if (b.label == StressLabel::Chronic) chronic_ind[i] = 1.0;
        }
      }
      const auto acute = detail::lagged(acute_ind, dt4, 20.0);
      const auto chronic = detail::lagged(chronic_ind, dt4, 60.0);

      // Slow drifts shared by several channels.
      const double p1 = rng.uniform(1200.0, 2400.0), ph1 = rng.uniform(0.0, 2 * M_PI);
      const double p2 = rng.uniform(600.0, 1500.0), ph2 = rng.uniform(0.0, 2 * M_PI);
      auto slow = [&](double t) { return std::sin(2 * M_PI * t / p1 + ph1) + 0.5 * std::sin(2 * M_PI * t / p2 + ph2); };

      // EDA: tonic level + SCR impulses.
      std::vector<double> eda(n4);
      std::vector<double> scr(n4 + 200, 0.0);
      for (std::size_t i = 0; i < n4; ++i) {
        const double rate_per_s = (1.5 + 3.0 * e * acute[i]) / 60.0;
        if (rng.uniform() < rate_per_s * dt4) {
          const double amp = (0.05 + 0.15 * -std::log(1.0 - rng.uniform())) * (1.0 + 0.5 * e * acute[i]);
          for (std::size_t k = 0; k < 160 && i + k < scr.size(); ++k) {
            const double tk = static_cast<double>(k) * dt4;
            // Bateman shape, peak normalised to 1 (tau_r 0.75 s, tau_d 2 s).
            scr[i + k] += amp * (std::exp(-tk / 2.0) - std::exp(-tk / 0.75)) / 0.4496;
          }
        }
      }
      // TEMP: integrated warming during chronic stress, relaxing afterwards.
      std::vector<double> temp(n4);
      double warm = 0.0;
      for (std::size_t i = 0; i < n4; ++i) {
        const double t = static_cast<double>(i) * dt4;
        warm += dt4 * (0.04 / 60.0 * e * chronic[i] - warm / 900.0);
        eda[i] = eda_base + 0.3 * slow(t) + 0.8 * e * chronic[i] + 0.25 * e * acute[i] + scr[i] + rng.normal(0.0, 0.005);
        temp[i] = temp_base + 0.15 * slow(t + 300.0) + warm - 0.1 * e * acute[i] + rng.normal(0.0, 0.01);
      }

      // ACC at 32 Hz: gravity with slow orientation wander, walking bouts,
      // fidget during acute stress, occasional motion-artifact spikes.
      const std::size_t n32 = static_cast<std::size_t>(shift_s * 32.0);
      std::vector<double> walk(n32, 0.0);
      {
        const int bouts = rng.poisson(shift_s / 600.0);
        for (int b = 0; b < bouts; ++b) {
          const std::size_t at = rng.below(n32);
          const std::size_t len = static_cast<std::size_t>(rng.uniform(30.0, 120.0) * 32.0);
          for (std::size_t i = at; i < std::min(n32, at + len); ++i) walk[i] = 1.0;
        }
      }
      const double wf = rng.uniform(1.8, 2.2);
      const double th0 = rng.uniform(0.2, 0.8), phi0 = rng.uniform(0.0, 2 * M_PI);
      std::vector<double> spike(n32, 0.0);
      std::vector<int> spike_axis(n32, -1);
      {
        const int spikes = rng.poisson(shift_s / 120.0);
        for (int k = 0; k < spikes; ++k) {
          const std::size_t at = rng.below(n32);
          const std::size_t len = 3 + rng.below(8);
          const double amp = rng.uniform(0.8, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
          const int axis = static_cast<int>(rng.below(3));
          for (std::size_t i = at; i < std::min(n32, at + len); ++i) {
            spike[i] = amp;
            spike_axis[i] = axis;
          }
        }
      }
      for (std::size_t i = 0; i < n32; ++i) {
        const double t = static_cast<double>(i) / 32.0;
        const double th = th0 + 0.3 * slow(t * 0.7);
        const double phi = phi0 + 0.5 * slow(t * 1.3 + 100.0);
        const double a4 = acute[std::min(n4 - 1, i / 8)];
        const double osc = 0.25 * walk[i] * std::sin(2 * M_PI * wf * t);
        const double fid = 0.03 * e * a4 * std::sin(2 * M_PI * 3.0 * t);
        double v[3] = {std::sin(th) * std::cos(phi) + osc + fid + rng.normal(0.0, 0.01),
                       std::sin(th) * std::sin(phi) + 0.5 * osc + rng.normal(0.0, 0.01),
                       std::cos(th) + 0.7 * osc + fid + rng.normal(0.0, 0.01)};
        if (spike_axis[i] >= 0) v[spike_axis[i]] += spike[i];
        acc_t.push_back(t0 + t);
        ax.push_back(quantize(v[0], 1e-3));
        ay.push_back(quantize(v[1], 1e-3));
        az.push_back(quantize(v[2], 1e-3));
        // Motion artifacts also corrupt skin conductance.
        if (spike_axis[i] >= 0) eda[std::min(n4 - 1, i / 8)] += 0.0625 * std::abs(spike[i]);
      }

      detail::inject_missing(eda, rng, 0.003);
      detail::inject_missing(temp, rng, 0.003);
      for (std::size_t i = 0; i < n4; ++i) {
        eda_t.push_back(t0 + static_cast<double>(i) * dt4);
        eda_v.push_back(std::isnan(eda[i]) ? eda[i] : quantize(std::max(0.01, eda[i]), 1e-4));
        temp_t.push_back(t0 + static_cast<double>(i) * dt4);
        temp_v.push_back(std::isnan(temp[i]) ? temp[i] : quantize(temp[i], 1e-3));
      }

      // IBI event series: respiratory (0.25 Hz) and Mayer-wave (0.1 Hz)
      // modulation; acute stress shortens intervals and damps the
      // respiratory component.
      const double mph = rng.uniform(0.0, 2 * M_PI);
      double t = t0 + 0.5;
      while (true) {
        const double rel = t - t0;
        const std::size_t k = std::min(n4 - 1, static_cast<std::size_t>(rel * 4.0));
        const double a = acute[k], c = chronic[k];
        double ibi = ibi_base - 60.0 * e * a - 30.0 * e * c +
                     rsa_amp * (1.0 - 0.5 * std::min(1.0, e * a)) * std::sin(2 * M_PI * 0.25 * rel) +
                     15.0 * std::sin(2 * M_PI * 0.1 * rel + mph) + rng.normal(0.0, 12.0);
        ibi = quantize(std::clamp(ibi, 300.0, 2000.0), 1e-2);
        t += ibi / 1000.0;
        if (t - t0 >= shift_s) break;
        ibi_t.push_back(quantize(t, 1e-4));
        ibi_v.push_back(ibi);
      }
    }

    auto make = [&](ChannelKind kind, double rate, std::vector<double>& times, std::vector<double>& vals) {
      RawStream st;
      st.subject_id = sid;
      st.kind = kind;
      st.start_time = times.front();
      st.rate_hz = rate;
      st.times = times;
      st.missing_mask.resize(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i) st.missing_mask[i] = std::isnan(vals[i]);
      st.samples = std::move(vals);
      return st;
    };
    auto& out = per_subject[s];
    out.push_back(make(ChannelKind::EDA, 4.0, eda_t, eda_v));
    out.push_back(make(ChannelKind::IBI, quantize(1000.0 / ibi_base, 1e-3), ibi_t, ibi_v));
    out.push_back(make(ChannelKind::TEMP, 4.0, temp_t, temp_v));
    out.push_back(make(ChannelKind::ACC_X, 32.0, acc_t, ax));
    out.push_back(make(ChannelKind::ACC_Y, 32.0, acc_t, ay));
    out.push_back(make(ChannelKind::ACC_Z, 32.0, acc_t, az));
  });
  for (auto& v : per_subject)
    for (auto& st : v) ds.streams.push_back(std::move(st));
  return ds;
}

}  // namespace wearstress
