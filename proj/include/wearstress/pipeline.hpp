/// @file pipeline.hpp
/// The command-line stages as library calls: configuration, provenance
/// records and the artifact each stage writes.

#pragma once

#include "wearstress/data.hpp"
#include "wearstress/features.hpp"
#include "wearstress/preprocess.hpp"
#include "wearstress/stack.hpp"

#include <filesystem>

namespace wearstress {

inline constexpr std::string_view kRunFormat = "wearstress-run-v1";
inline constexpr std::string_view kReportFormat = "wearstress-report-v1";

/// Missing input artifact or invalid invocation (exit status 1).
struct UsageError : ConfigError {
  using ConfigError::ConfigError;
};

enum class Protocol { Temporal, KFold };

inline std::string_view protocol_name(Protocol p) { return p == Protocol::Temporal ? "temporal" : "kfold"; }
inline Protocol parse_protocol(std::string_view s) {
  if (s == "temporal") return Protocol::Temporal;
  if (s == "kfold") return Protocol::KFold;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (expected temporal or kfold)");
}

/// Every knob of every stage. One seed feeds all stages; stage streams are
/// derived from it by tag.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  PreprocessParams preprocess;
  StackParams stack;
  double train_frac = 0.8;
  Protocol protocol = Protocol::Temporal;
  std::size_t folds = 10;
  std::size_t importance_repeats = 10;
  std::size_t rfe_keep = 0;  // 0 = no feature elimination in `importance`

  void validate() const {
    synth.validate();
    preprocess.validate();
    if (!(train_frac > 0.0 && train_frac <= 1.0)) throw ConfigError("train_frac must be in (0, 1]");
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (stack.oof_k < 2) throw ConfigError("oof_k must be at least 2");
    if (stack.smote_k < 1) throw ConfigError("smote_k must be at least 1");
    if (importance_repeats < 1) throw ConfigError("importance repeats must be at least 1");
    if (rfe_keep > kNumFeatures) throw ConfigError("rfe_keep exceeds the feature count");
  }

  /// Stage parameters with the global seed fanned out.
  SynthConfig synth_config() const {
    SynthConfig s = synth;
    s.seed = seed;
    return s;
  }
  StackParams stack_params() const {
    StackParams p = stack;
    p.seed = derive_seed(seed, "train");
    return p;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["manifest_version"] = kFeatureFormat;
    j["synth"] = {{"subjects", synth.n_subjects},
                  {"shifts", synth.shifts_per_subject},
                  {"shift_hours", synth.shift_hours},
                  {"class_mix", synth.class_mix},
                  {"effect_size", synth.effect_size}};
    j["preprocess"] = preprocess.to_json();
    auto st = wearstress::to_json(stack);
    st.erase("seed");
    j["stack"] = st;
    j["train_frac"] = train_frac;
    j["protocol"] = protocol_name(protocol);
    j["folds"] = folds;
    j["importance_repeats"] = importance_repeats;
    j["rfe_keep"] = rfe_keep;
    return j;
  }

  /// Accepts a RunConfig object or a run.json record (its "config" member).
  /// Unknown keys are rejected.
  template <class J>
  static RunConfig from_json(const J& in) {
    const J& j = in.contains("format") && in.contains("config") ? in.at("config") : in;
    detail::reject_unknown(j, {"seed", "manifest_version", "synth", "preprocess", "stack", "train_frac", "protocol", "folds",
                               "importance_repeats", "rfe_keep"},
                           "config");
    RunConfig c;
    detail::read_key(j, "seed", c.seed, "config");
    std::string version(kFeatureFormat);
    detail::read_key(j, "manifest_version", version, "config");
    if (version != kFeatureFormat)
      throw ConfigError("config: manifest_version '" + version + "' is not " + std::string(kFeatureFormat));
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      detail::reject_unknown(s, {"subjects", "shifts", "shift_hours", "class_mix", "effect_size"}, "config.synth");
      detail::read_key(s, "subjects", c.synth.n_subjects, "config.synth");
      detail::read_key(s, "shifts", c.synth.shifts_per_subject, "config.synth");
      detail::read_key(s, "shift_hours", c.synth.shift_hours, "config.synth");
      detail::read_key(s, "class_mix", c.synth.class_mix, "config.synth");
      detail::read_key(s, "effect_size", c.synth.effect_size, "config.synth");
    }
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      detail::reject_unknown(p, {"artifact_threshold_g", "median_window_s", "target_hz", "epoch_s", "overlap",
                                 "max_missing_frac", "kalman_q", "kalman_r", "artifact_mode", "replace_window",
                                 "max_gap_s", "max_knot_distance_s"},
                             "config.preprocess");
      auto& q = c.preprocess;
      detail::read_key(p, "artifact_threshold_g", q.artifact_threshold_g, "config.preprocess");
      detail::read_key(p, "median_window_s", q.median_window_s, "config.preprocess");
      detail::read_key(p, "target_hz", q.target_hz, "config.preprocess");
      detail::read_key(p, "epoch_s", q.epoch_s, "config.preprocess");
      detail::read_key(p, "overlap", q.overlap, "config.preprocess");
      detail::read_key(p, "max_missing_frac", q.max_missing_frac, "config.preprocess");
      detail::read_key(p, "kalman_q", q.kalman_q, "config.preprocess");
      detail::read_key(p, "kalman_r", q.kalman_r, "config.preprocess");
      std::string mode(artifact_mode_name(q.artifact_mode));
      detail::read_key(p, "artifact_mode", mode, "config.preprocess");
      q.artifact_mode = parse_artifact_mode(mode);
      detail::read_key(p, "replace_window", q.replace_window, "config.preprocess");
      detail::read_key(p, "max_gap_s", q.max_gap_s, "config.preprocess");
      detail::read_key(p, "max_knot_distance_s", q.max_knot_distance_s, "config.preprocess");
    }
    if (j.contains("stack")) c.stack = stack_params_from_json(j.at("stack"));
    detail::read_key(j, "train_frac", c.train_frac, "config");
    std::string proto(protocol_name(c.protocol));
    detail::read_key(j, "protocol", proto, "config");
    c.protocol = parse_protocol(proto);
    detail::read_key(j, "folds", c.folds, "config");
    detail::read_key(j, "importance_repeats", c.importance_repeats, "config");
    detail::read_key(j, "rfe_keep", c.rfe_keep, "config");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

inline std::string file_hash(const std::filesystem::path& p) { return hex64(fnv1a(binio::read_all(p))); }

/// run.json: command, effective configuration and content hashes of inputs
/// and outputs, keyed by file name so records do not depend on where a run
/// happened or how many threads it used.
class RunRecord {
 public:
  RunRecord(std::string command, const RunConfig& cfg) {
    j_["format"] = kRunFormat;
    j_["command"] = std::move(command);
    j_["config"] = cfg.to_json();
    j_["manifest_hash"] = hex64(manifest_hash());
    j_["inputs"] = nlohmann::ordered_json::object();
    j_["outputs"] = nlohmann::ordered_json::object();
    j_["summary"] = nlohmann::ordered_json::object();
  }

  void input(const std::filesystem::path& p) { j_["inputs"][p.filename().string()] = file_hash(p); }
  void input_dir(const std::filesystem::path& dir) { add_dir(j_["inputs"], dir); }
  void output_dir(const std::filesystem::path& dir) { add_dir(j_["outputs"], dir); }
  void output(const std::filesystem::path& p) { j_["outputs"][p.filename().string()] = file_hash(p); }
  nlohmann::ordered_json& summary() { return j_["summary"]; }

  void write(const std::filesystem::path& p) const { binio::write_all(p, j_.dump(2) + "\n"); }

 private:
  // Keys are paths relative to dir; an existing run.json is not an artifact.
  static void add_dir(nlohmann::ordered_json& into, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) into[std::filesystem::relative(f, dir).generic_string()] = file_hash(f);
  }

  nlohmann::ordered_json j_;
};

inline void require_input(const std::filesystem::path& p, std::string_view what) {
  if (!std::filesystem::exists(p)) throw UsageError("missing " + std::string(what) + ": " + p.string());
}

inline void ensure_parent(const std::filesystem::path& p) {
  const auto parent = p.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string());
}

inline std::filesystem::path sidecar_run(const std::filesystem::path& out) { return out.string() + ".run.json"; }

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void run_synth(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto ds = generate_synthetic(cfg.synth_config());
  save_streams(ds.streams, ds.intervals, out_dir);
  RunRecord rec("synth", cfg);
  rec.output_dir(out_dir);
  rec.summary()["streams"] = ds.streams.size();
  rec.summary()["intervals"] = ds.intervals.size();
  rec.write(out_dir / "run.json");
}

inline PreprocessReport run_preprocess(const RunConfig& cfg, const std::filesystem::path& in_dir,
                                       const std::filesystem::path& out_file) {
  cfg.validate();
  require_input(in_dir / "manifest.json", "dataset manifest");
  const auto ds = load_streams(in_dir);
  const auto res = preprocess_dataset(ds, cfg.preprocess);
  ensure_parent(out_file);
  save_epochs(res.epochs, cfg.preprocess, out_file);
  RunRecord rec("preprocess", cfg);
  rec.input_dir(in_dir);
  rec.output(out_file);
  rec.output(out_file.string() + ".json");
  rec.summary()["epochs"] = res.epochs.size();
  rec.summary()["rejected_runs"] = res.report.rejected_runs;
  rec.write(sidecar_run(out_file));
  return res.report;
}

inline FeaturizeResult run_featurize(const RunConfig& cfg, const std::filesystem::path& in_file,
                                     const std::filesystem::path& out_file) {
  cfg.validate();
  require_input(in_file, "epoch file");
  const auto epochs = load_epochs(in_file);
  auto res = featurize_all(epochs);
  ensure_parent(out_file);
  binio::write_all(out_file, format_features_csv(FeatureTable::from_vectors(res.rows)));
  const auto manifest_path = out_file.parent_path() / "manifest.json";
  binio::write_all(manifest_path, manifest_json().dump(2) + "\n");
  RunRecord rec("featurize", cfg);
  rec.input(in_file);
  rec.output(out_file);
  rec.output(manifest_path);
  rec.summary()["rows"] = res.rows.size();
  auto& rej = rec.summary()["rejected_epochs"] = nlohmann::ordered_json::array();
  for (const auto& [i, why] : res.rejected) rej.push_back({{"epoch", i}, {"reason", why}});
  rec.write(sidecar_run(out_file));
  return res;
}

inline FeatureTable load_feature_table(const std::filesystem::path& p) {
  require_input(p, "feature table");
  return parse_features_csv(binio::read_all(p), p.filename().string());
}

struct LoadedModel {
  StackModel model;
  double train_frac = 0.8;
};

inline LoadedModel load_stack_model(const std::filesystem::path& p) {
  require_input(p, "trained model");
  const auto bytes = binio::read_all(p);
  ModelHeader h;
  LoadedModel out;
  out.model = decode_model<StackModel>(bytes, &h);
  if (h.manifest_hash != hex64(manifest_hash()))
    throw FormatError(p.string() + ": model was trained on a different feature manifest");
  if (!h.config.contains("train_frac") || !h.config.at("train_frac").is_number())
    throw FormatError(p.string() + ": model header lacks its training fraction");
  out.train_frac = h.config.at("train_frac").get<double>();
  return out;
}

/// Fits the stack on the temporal training rows (all rows when train_frac = 1).
inline StackModel run_train(const RunConfig& cfg, const std::filesystem::path& features, const std::filesystem::path& out_model) {
  cfg.validate();
  const auto table = load_feature_table(features);
  const auto plan = temporal_split(table.subject_id, table.shift_id, cfg.train_frac);
  const auto train = table.select(plan.train);
  auto model = stack_fit(train.X, train.y, cfg.stack_params(), nullptr, hex64(manifest_hash()));
  ensure_parent(out_model);
  binio::write_all(out_model, encode_stack(model, cfg.train_frac));
  RunRecord rec("train", cfg);
  rec.input(features);
  rec.output(out_model);
  rec.summary()["train_rows"] = plan.train.size();
  auto& top = rec.summary()["top_features"] = nlohmann::ordered_json::array();
  for (auto t : model.top_features) top.push_back(kFeatureManifest[t].name);
  rec.write(sidecar_run(out_model));
  return model;
}

inline constexpr std::array<std::string_view, 4> kReportModels = {"forest", "boosted", "mlp", "stack"};

inline std::array<Matrix, 4> all_model_probabilities(const StackModel& m, const Matrix& X) {
  auto pred = stack_predict(m, X);
  return {pred.base_proba[0], pred.base_proba[1], pred.base_proba[2], pred.proba};
}

/// Writes report.json and confusion_<model>.csv into out_dir. The temporal
/// protocol scores the given model on the rows after its training shifts;
/// the k-fold protocol refits the model's configuration on each fold and
/// reports every fold, mean and SD, and the pooled confusion matrices.
inline nlohmann::ordered_json run_evaluate(const RunConfig& cfg, const std::filesystem::path& features,
                                           const std::filesystem::path& model_path, const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto loaded = load_stack_model(model_path);
  const auto table = load_feature_table(features);
  nlohmann::ordered_json report;
  report["format"] = kReportFormat;
  report["protocol"] = protocol_name(cfg.protocol);
  report["manifest_hash"] = hex64(manifest_hash());
  std::array<MetricsReport, 4> pooled;

  if (cfg.protocol == Protocol::Temporal) {
    const auto plan = temporal_split(table.subject_id, table.shift_id, loaded.train_frac);
    if (plan.test.empty()) throw InsufficientData("evaluate: the temporal split leaves no test rows");
    const auto test = table.select(plan.test);
    const auto probs = all_model_probabilities(loaded.model, test.X);
    report["rows"] = {{"train", plan.train.size()}, {"test", plan.test.size()}};
    for (std::size_t k = 0; k < 4; ++k) {
      pooled[k] = evaluate_probabilities(test.y, probs[k]);
      report["models"][std::string(kReportModels[k])] = to_json(pooled[k]);
    }
  } else {
    const auto folds = stratified_kfold(table.y, cfg.folds, derive_seed(cfg.seed, "evaluate-folds"));
    std::array<std::vector<int>, 4> all_pred;
    std::vector<int> all_true;
    std::array<Matrix, 4> all_prob;
    for (auto& m : all_prob) m.resize(0, kNumClasses);
    std::array<std::vector<double>, 4> f1s, aucs;
    report["folds"] = nlohmann::ordered_json::array();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto train = table.select(folds[f].train);
      const auto test = table.select(folds[f].test);
      auto params = loaded.model.params;
      params.seed = derive_seed(loaded.model.params.seed, "evaluate-fold", f);
      const auto model = stack_fit(train.X, train.y, params, nullptr, loaded.model.manifest_hash);
      const auto probs = all_model_probabilities(model, test.X);
      nlohmann::ordered_json fold;
      fold["fold"] = f + 1;
      fold["rows"] = {{"train", folds[f].train.size()}, {"test", folds[f].test.size()}};
      for (std::size_t k = 0; k < 4; ++k) {
        const auto r = evaluate_probabilities(test.y, probs[k]);
        fold["models"][std::string(kReportModels[k])] = to_json(r);
        f1s[k].push_back(r.macro_f1);
        aucs[k].push_back(r.auc.value_or(0.0));
        const auto old = all_prob[k].rows();
        all_prob[k].conservativeResize(old + probs[k].rows(), Eigen::NoChange);
        all_prob[k].bottomRows(probs[k].rows()) = probs[k];
      }
      all_true.insert(all_true.end(), test.y.begin(), test.y.end());
      report["folds"].push_back(fold);
    }
    auto mean_sd = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return nlohmann::ordered_json{{"mean", m}, {"sd", v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0}};
    };
    for (std::size_t k = 0; k < 4; ++k) {
      pooled[k] = evaluate_probabilities(all_true, all_prob[k]);
      auto j = to_json(pooled[k]);
      j["fold_macro_f1"] = mean_sd(f1s[k]);
      j["fold_auc_ovr_macro"] = mean_sd(aucs[k]);
      report["models"][std::string(kReportModels[k])] = j;
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string());
  binio::write_all(out_dir / "report.json", report.dump(2) + "\n");
  RunRecord rec("evaluate", cfg);
  rec.input(features);
  rec.input(model_path);
  rec.output(out_dir / "report.json");
  for (std::size_t k = 0; k < 4; ++k) {
    const auto p = out_dir / ("confusion_" + std::string(kReportModels[k]) + ".csv");
    binio::write_all(p, confusion_csv(pooled[k].cm));
    rec.output(p);
  }
  rec.write(out_dir / "run.json");
  return report;
}

/// Permutation importance of the stacked model on its temporal test rows
/// (all rows when the model used every shift), ranked like a feature
/// elimination table; with rfe_keep > 0 also writes rfe.csv next to it.
inline std::vector<double> run_importance(const RunConfig& cfg, const std::filesystem::path& features,
                                          const std::filesystem::path& model_path, const std::filesystem::path& out_csv) {
  cfg.validate();
  const auto loaded = load_stack_model(model_path);
  const auto table = load_feature_table(features);
  auto plan = temporal_split(table.subject_id, table.shift_id, loaded.train_frac);
  const auto rows = plan.test.empty() ? plan.train : plan.test;
  const auto eval = table.select(rows);
  const auto imp = permutation_importance([&](const Matrix& Z) { return predict_proba(loaded.model, Z); }, eval.X, eval.y,
                                          cfg.importance_repeats, derive_seed(cfg.seed, "importance"));
  const auto order = select_top_features(imp, imp.size());
  std::string csv = "rank,feature,importance\n";
  for (std::size_t r = 0; r < order.size(); ++r)
    csv += std::to_string(r + 1) + "," + std::string(kFeatureManifest[order[r]].name) + "," + format_double(imp[order[r]]) + "\n";
  ensure_parent(out_csv);
  binio::write_all(out_csv, csv);
  RunRecord rec("importance", cfg);
  rec.input(features);
  rec.input(model_path);
  rec.output(out_csv);
  rec.summary()["rows"] = rows.size();
  if (cfg.rfe_keep > 0) {
    const auto train = table.select(plan.train);
    RfeParams rp;
    rp.keep = cfg.rfe_keep;
    rp.seed = derive_seed(cfg.seed, "rfe");
    const auto res = rfe(loaded.model.params.learners.boost, loaded.model.standardizer.apply(train.X), train.y, rp);
    std::string r = "feature,ranking,selected\n";
    for (std::size_t j = 0; j < kNumFeatures; ++j)
      r += std::string(kFeatureManifest[j].name) + "," + std::to_string(res.ranking[j]) + "," +
           (res.ranking[j] == 1 ? "true" : "false") + "\n";
    const auto rfe_path = out_csv.parent_path() / "rfe.csv";
    binio::write_all(rfe_path, r);
    rec.output(rfe_path);
  }
  rec.write(sidecar_run(out_csv));
  return imp;
}

inline void run_predict(const RunConfig& cfg, const std::filesystem::path& features, const std::filesystem::path& model_path,
                        const std::filesystem::path& out_csv) {
  const auto loaded = load_stack_model(model_path);
  const auto table = load_feature_table(features);
  const auto pred = stack_predict(loaded.model, table.X);
  std::string csv = "subject_id,shift_id,t0,predicted,p_baseline,p_acute,p_chronic\n";
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    csv += table.subject_id[i] + "," + std::to_string(table.shift_id[i]) + "," + format_double(table.t0[i]) + "," +
           std::string(label_name(label_from_index(pred.labels[i]))) + "," + format_double(pred.proba(r, 0)) + "," +
           format_double(pred.proba(r, 1)) + "," + format_double(pred.proba(r, 2)) + "\n";
  }
  ensure_parent(out_csv);
  binio::write_all(out_csv, csv);
  RunRecord rec("predict", cfg);
  rec.input(features);
  rec.input(model_path);
  rec.output(out_csv);
  rec.write(sidecar_run(out_csv));
}

}  // namespace wearstress
