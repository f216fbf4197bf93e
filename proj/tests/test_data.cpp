#include "oracles.hpp"
#include "wearstress/data.hpp"

#include <gtest/gtest.h>

using namespace wearstress;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  binio::write_all(p, s);
}

fs::path hand_dataset(const std::string& name, const std::string& rate) {
  const auto root = oracle::scratch_dir(name);
  write_text(root / "manifest.json",
             R"({"format":"wearstress-v1","streams":[{"subject_id":"S01","channel":"eda","file":"S01/eda.csv","samples":8}],"labels":null})");
  std::string csv = "# start=100 rate=" + rate + "\n";
  for (int i = 0; i < 8; ++i) csv += std::to_string(100.0 + 0.25 * i) + "," + std::to_string(1.0 + i) + "\n";
  write_text(root / "S01" / "eda.csv", csv);
  return root;
}

}  // namespace

TEST(Data, ReadsDeclaredRateAndSamples) {
  const auto ds = load_streams(hand_dataset("rate", "4"));
  ASSERT_EQ(ds.streams.size(), 1u);
  EXPECT_EQ(ds.streams[0].size(), 8u);
  EXPECT_EQ(ds.streams[0].rate_hz, 4.0);
  EXPECT_EQ(ds.streams[0].kind, ChannelKind::EDA);
  EXPECT_EQ(ds.streams[0].samples[7], 8.0);
}

TEST(Data, NegativeRateIsFormatError) { EXPECT_THROW(load_streams(hand_dataset("negrate", "-1")), FormatError); }

TEST(Data, EmptyStreamListWritesOnlyManifest) {
  const auto root = oracle::scratch_dir("empty");
  save_streams({}, {}, root);
  const auto files = oracle::tree_hashes(root);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files.begin()->first, "manifest.json");
  EXPECT_TRUE(load_streams(root).streams.empty());
}

TEST(Data, RoundTripIsBitExact) {
  SynthConfig cfg;
  cfg.n_subjects = 2;
  cfg.shifts_per_subject = 2;
  cfg.shift_hours = 0.5;
  const auto ds = generate_synthetic(cfg);
  const auto root = oracle::scratch_dir("roundtrip");
  save_streams(ds.streams, ds.intervals, root);
  const auto back = load_streams(root);
  ASSERT_EQ(back.streams.size(), ds.streams.size());
  // Streams come back in (subject, channel) order.
  for (const auto& s : ds.streams) {
    auto it = std::find_if(back.streams.begin(), back.streams.end(),
                           [&](const RawStream& b) { return b.subject_id == s.subject_id && b.kind == s.kind; });
    ASSERT_NE(it, back.streams.end());
    EXPECT_TRUE(*it == s);
  }
  EXPECT_EQ(back.intervals, ds.intervals);
}

TEST(Data, DuplicateSubjectChannelRejected) {
  const auto a = RawStream::uniform("S01", ChannelKind::EDA, 0.0, 4.0, {1, 2, 3});
  EXPECT_THROW(save_streams({a, a}, {}, oracle::scratch_dir("dup")), FormatError);
}

TEST(Data, ZeroShiftsGivesEmptyDataset) {
  SynthConfig cfg;
  cfg.shifts_per_subject = 0;
  const auto ds = generate_synthetic(cfg);
  EXPECT_TRUE(ds.streams.empty());
  EXPECT_TRUE(ds.intervals.empty());
}

TEST(Data, GeneratorIsDeterministic) {
  SynthConfig cfg;
  cfg.seed = 11;
  cfg.n_subjects = 2;
  cfg.shifts_per_subject = 2;
  cfg.shift_hours = 0.5;
  const auto r1 = oracle::scratch_dir("det1"), r2 = oracle::scratch_dir("det2");
  auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  save_streams(a.streams, a.intervals, r1);
  save_streams(b.streams, b.intervals, r2);
  EXPECT_EQ(oracle::tree_hashes(r1), oracle::tree_hashes(r2));
  cfg.seed = 12;
  auto c = generate_synthetic(cfg);
  EXPECT_FALSE(c == a);
}

TEST(Data, AcuteRaisesEda) {
  SynthConfig cfg;
  cfg.effect_size = 3.0;
  cfg.n_subjects = 2;
  cfg.shifts_per_subject = 3;
  const auto ds = generate_synthetic(cfg);
  double sum[3] = {0, 0, 0};
  double cnt[3] = {0, 0, 0};
  for (const auto& s : ds.streams) {
    if (s.kind != ChannelKind::EDA) continue;
    for (const auto& iv : ds.intervals) {
      if (iv.subject_id != s.subject_id) continue;
      for (std::size_t i = 0; i < s.size(); ++i)
        if (!s.missing_mask[i] && s.times[i] >= iv.t_start && s.times[i] < iv.t_end) {
          sum[class_index(iv.label)] += s.samples[i];
          cnt[class_index(iv.label)] += 1;
        }
    }
  }
  ASSERT_GT(cnt[0], 0);
  ASSERT_GT(cnt[1], 0);
  EXPECT_GT(sum[1] / cnt[1], sum[0] / cnt[0]);
}

TEST(Data, LabelProportionsFollowClassMix) {
  SynthConfig cfg;
  cfg.n_subjects = 4;
  cfg.shifts_per_subject = 5;
  const auto ds = generate_synthetic(cfg);
  double dur[3] = {0, 0, 0}, total = 0;
  for (const auto& iv : ds.intervals) {
    dur[class_index(iv.label)] += iv.duration();
    total += iv.duration();
  }
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(dur[c] / total, cfg.class_mix[static_cast<std::size_t>(c)], 0.02) << c;
}

TEST(Data, IntervalsDoNotOverlap) {
  const auto ds = generate_synthetic(SynthConfig{});
  EXPECT_NO_THROW(validate_intervals(ds.intervals));
  auto bad = ds.intervals;
  bad.push_back(bad.front());
  EXPECT_THROW(validate_intervals(bad), FormatError);
}

TEST(Data, InvalidSynthConfigRejected) {
  SynthConfig cfg;
  cfg.class_mix = {0.5, 0.5, 0.5};
  EXPECT_THROW(cfg.validate(), ConfigError);
}
