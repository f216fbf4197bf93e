// Command-line front end. Exit status: 0 ok, 1 usage or configuration,
// 2 data or format, 3 internal invariant violation.

#include "wearstress/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace wearstress;

namespace {

RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw UsageError("missing config file: " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(binio::read_all(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": not valid JSON");
  }
  return RunConfig::from_json(j);
}

template <class T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;
  bool set() const { return opt != nullptr && opt->count() > 0; }
  void apply(T& target) const {
    if (set()) target = value;
  }
};

template <class T>
Flag<T>& add(CLI::App* app, Flag<T>& f, const std::string& name, const std::string& help) {
  f.opt = app->add_option(name, f.value, help);
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Workplace stress classification from wearable signals"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  std::string config_path;
  Flag<std::uint64_t> seed;
  app.add_option("--threads", threads, "Worker threads (never changes any output byte)")->check(CLI::PositiveNumber);
  app.add_option("--config", config_path, "RunConfig JSON, or a run.json to replay");
  add(&app, seed, "--seed", "Global seed");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled dataset directory");
  std::string synth_out;
  Flag<int> subjects, shifts;
  Flag<double> hours, effect;
  Flag<std::vector<double>> mix;
  synth->add_option("--out", synth_out, "Output directory")->required();
  add(synth, subjects, "--subjects", "Number of subjects");
  add(synth, shifts, "--shifts", "Shifts per subject");
  add(synth, hours, "--hours", "Hours per shift");
  add(synth, effect, "--effect", "Stress effect size");
  add(synth, mix, "--mix", "Class proportions baseline,acute,chronic").opt->delimiter(',')->expected(3);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Clean, resample and segment a dataset into epochs");
  std::string pre_in, pre_out;
  Flag<std::string> artifact_mode;
  Flag<double> overlap;
  pre->add_option("--in", pre_in, "Dataset directory")->required();
  pre->add_option("--out", pre_out, "Epoch file")->required();
  add(pre, artifact_mode, "--artifact-mode", "median or mask");
  add(pre, overlap, "--overlap", "Epoch overlap fraction");

  // featurize
  auto* feat = app.add_subcommand("featurize", "Extract the 42-feature table from epochs");
  std::string feat_in, feat_out;
  feat->add_option("--in", feat_in, "Epoch file")->required();
  feat->add_option("--out", feat_out, "Feature CSV (manifest.json is written beside it)")->required();

  // train
  auto* train = app.add_subcommand("train", "Fit the stacked ensemble on the temporal training shifts");
  std::string train_features, train_out;
  Flag<std::string> preset, resampler;
  Flag<std::size_t> smote_k, oof_k, top_n, trees, rounds, mlp_epochs;
  Flag<double> train_frac;
  train->add_option("--features", train_features, "Feature CSV")->required();
  train->add_option("--out", train_out, "Model file")->required();
  add(train, preset, "--preset", "method or implementation");
  add(train, resampler, "--resampler", "none, smote or smote-tomek");
  add(train, smote_k, "--smote-k", "SMOTE neighbours");
  add(train, oof_k, "--oof-k", "Out-of-fold splits for the meta-learner");
  add(train, top_n, "--top-n", "Raw features passed to the meta-learner");
  add(train, trees, "--trees", "Random forest size");
  add(train, rounds, "--rounds", "Boosting rounds");
  add(train, mlp_epochs, "--mlp-epochs", "Network training epochs");
  add(train, train_frac, "--train-frac", "Fraction of each subject's shifts used for training");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score every model and write report.json and confusion matrices");
  std::string eval_features, eval_model, eval_out;
  Flag<std::string> protocol;
  Flag<std::size_t> folds;
  eval->add_option("--features", eval_features, "Feature CSV")->required();
  eval->add_option("--model", eval_model, "Model file from train")->required();
  eval->add_option("--out", eval_out, "Report directory")->required();
  add(eval, protocol, "--protocol", "temporal or kfold");
  add(eval, folds, "--folds", "Folds for the kfold protocol");

  // importance
  auto* imp = app.add_subcommand("importance", "Permutation importance of the stacked model");
  std::string imp_features, imp_model, imp_out;
  Flag<std::size_t> repeats, rfe_keep;
  imp->add_option("--features", imp_features, "Feature CSV")->required();
  imp->add_option("--model", imp_model, "Model file from train")->required();
  imp->add_option("--out", imp_out, "Importance CSV")->required();
  add(imp, repeats, "--repeats", "Shuffles per feature");
  add(imp, rfe_keep, "--rfe-keep", "Also run feature elimination down to this many features");

  // predict
  auto* pred = app.add_subcommand("predict", "Label every row of a feature table");
  std::string pred_features, pred_model, pred_out;
  pred->add_option("--features", pred_features, "Feature CSV")->required();
  pred->add_option("--model", pred_model, "Model file from train")->required();
  pred->add_option("--out", pred_out, "Prediction CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    set_threads(threads);
    RunConfig cfg = load_config(config_path);
    seed.apply(cfg.seed);
    subjects.apply(cfg.synth.n_subjects);
    shifts.apply(cfg.synth.shifts_per_subject);
    hours.apply(cfg.synth.shift_hours);
    effect.apply(cfg.synth.effect_size);
    if (mix.set()) std::copy(mix.value.begin(), mix.value.end(), cfg.synth.class_mix.begin());
    if (artifact_mode.set()) cfg.preprocess.artifact_mode = parse_artifact_mode(artifact_mode.value);
    overlap.apply(cfg.preprocess.overlap);
    // A preset replaces the whole learner block; finer flags then override it.
    if (preset.set()) cfg.stack.learners = learner_preset(preset.value);
    if (resampler.set()) cfg.stack.resampler = parse_resampler(resampler.value);
    smote_k.apply(cfg.stack.smote_k);
    oof_k.apply(cfg.stack.oof_k);
    top_n.apply(cfg.stack.top_n);
    trees.apply(cfg.stack.learners.forest.n_trees);
    rounds.apply(cfg.stack.learners.boost.n_rounds);
    mlp_epochs.apply(cfg.stack.learners.mlp.epochs);
    train_frac.apply(cfg.train_frac);
    if (protocol.set()) cfg.protocol = parse_protocol(protocol.value);
    folds.apply(cfg.folds);
    repeats.apply(cfg.importance_repeats);
    rfe_keep.apply(cfg.rfe_keep);
    cfg.validate();

    if (synth->parsed()) {
      run_synth(cfg, synth_out);
      std::cout << "synth: wrote " << synth_out << "\n";
    } else if (pre->parsed()) {
      const auto report = run_preprocess(cfg, pre_in, pre_out);
      std::cout << "preprocess: " << report.epochs << " epochs, " << report.rejected_runs.size() << " rejected runs\n";
    } else if (feat->parsed()) {
      const auto res = run_featurize(cfg, feat_in, feat_out);
      std::cout << "featurize: " << res.rows.size() << " rows, " << res.rejected.size() << " rejected epochs\n";
    } else if (train->parsed()) {
      const auto model = run_train(cfg, train_features, train_out);
      std::cout << "train: top features";
      for (auto t : model.top_features) std::cout << ' ' << kFeatureManifest[t].name;
      std::cout << "\n";
    } else if (eval->parsed()) {
      const auto report = run_evaluate(cfg, eval_features, eval_model, eval_out);
      for (const auto name : kReportModels) {
        const auto& m = report["models"][std::string(name)];
        std::cout << name << ": macro_f1 " << format_double(m["macro_f1"].get<double>()) << "\n";
      }
    } else if (imp->parsed()) {
      run_importance(cfg, imp_features, imp_model, imp_out);
      std::cout << "importance: wrote " << imp_out << "\n";
    } else if (pred->parsed()) {
      run_predict(cfg, pred_features, pred_model, pred_out);
      std::cout << "predict: wrote " << pred_out << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
