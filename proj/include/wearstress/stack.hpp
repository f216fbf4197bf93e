/// @file stack.hpp
/// Stacked generalisation: out-of-fold probabilities of the forest, boosted
/// and MLP learners plus a few top-ranked raw features feed a logistic
/// regression meta-learner.

#pragma once

#include "wearstress/balance.hpp"
#include "wearstress/eval.hpp"

namespace wearstress {

inline constexpr std::string_view kModelFormat = "wearstress-model-v1";

/// Column-wise z-scoring fitted on training rows; zero-variance columns
/// pass through centred.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& X) {
    Standardizer s;
    s.mean = X.colwise().mean().transpose();
    s.scale = ((X.rowwise() - s.mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
    return s;
  }

  Matrix apply(const Matrix& X) const {
    if (X.cols() != mean.size()) throw ConfigError("standardizer: expected " + std::to_string(mean.size()) + " columns");
    return (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  bool operator==(const Standardizer&) const = default;
};

struct StackParams {
  LearnerConfig learners = learner_preset("implementation");
  Resampler resampler = Resampler::SmoteTomek;
  std::size_t smote_k = 5;
  std::size_t oof_k = 5;
  std::size_t top_n = 5;
  std::size_t importance_repeats = 10;
  double importance_holdout = 0.2;
  std::uint64_t seed = 0;
};

struct BaseModels {
  ForestModel forest;
  BoostModel boost;
  MlpModel mlp;
};

struct StackModel {
  StackParams params;
  std::string manifest_hash;
  Standardizer standardizer;
  BaseModels base;
  LogRegModel meta;
  std::vector<std::size_t> top_features;
  std::vector<double> top_importance;  // boosted permutation importance of every feature

  std::size_t n_features() const { return static_cast<std::size_t>(standardizer.mean.size()); }
  std::size_t meta_width() const { return 3 * kNumClasses + top_features.size(); }
};

/// Fold bookkeeping kept for leakage audits.
struct StackFitInfo {
  std::vector<std::size_t> fold_of_row;
  std::vector<SplitPlan> folds;
  std::vector<LabeledMatrix> fold_training;  // resampled complement per fold; origins index the input rows
  LabeledMatrix final_training;
  Matrix meta_X;
};

namespace detail {

/// Re-expresses local row indices of a resampled subset in the caller's indexing.
inline void remap_origins(LabeledMatrix& m, std::span<const std::size_t> local_to_global) {
  for (auto& o : m.origin) o = static_cast<std::ptrdiff_t>(local_to_global[static_cast<std::size_t>(o)]);
  for (auto& o : m.partner)
    if (o >= 0) o = static_cast<std::ptrdiff_t>(local_to_global[static_cast<std::size_t>(o)]);
}

}  // namespace detail

/// Fits the three base learners; seeds derive from (seed, tag, index).
inline BaseModels fit_base_models(const Matrix& X, std::span<const int> y, const LearnerConfig& cfg, std::uint64_t seed,
                                  std::uint64_t index) {
  BaseModels b;
  auto fp = cfg.forest;
  fp.seed = derive_seed(seed, "stack-forest", index);
  auto bp = cfg.boost;
  bp.seed = derive_seed(seed, "stack-boost", index);
  auto mp = cfg.mlp;
  mp.seed = derive_seed(seed, "stack-mlp", index);
  b.forest = forest_fit(X, y, fp);
  b.boost = boost_fit(X, y, bp);
  b.mlp = mlp_fit(X, y, mp);
  return b;
}

inline std::array<Matrix, 3> base_probabilities(const BaseModels& b, const Matrix& Xs) {
  return {predict_proba(b.forest, Xs), predict_proba(b.boost, Xs), predict_proba(b.mlp, Xs)};
}

/// Meta-learner input, column order frozen as
/// [forest P(c0..c2), boosted P(c0..c2), mlp P(c0..c2), top features].
inline Matrix meta_matrix(const std::array<Matrix, 3>& probs, const Matrix& Xs, std::span<const std::size_t> top) {
  Matrix M(Xs.rows(), static_cast<Eigen::Index>(3 * kNumClasses + top.size()));
  for (std::size_t b = 0; b < 3; ++b) M.middleCols(static_cast<Eigen::Index>(b * kNumClasses), kNumClasses) = probs[b];
  for (std::size_t t = 0; t < top.size(); ++t)
    M.col(static_cast<Eigen::Index>(3 * kNumClasses + t)) = Xs.col(static_cast<Eigen::Index>(top[t]));
  return M;
}

/// Boosted-model permutation importance on a stratified inner holdout of the
/// (standardised) training rows; the resampler touches only the inner
/// training part.
inline std::vector<double> inner_boost_importance(const Matrix& Xs, std::span<const int> y, const StackParams& p) {
  const auto split = stratified_holdout(y, p.importance_holdout, derive_seed(p.seed, "stack-inner-split"));
  auto inner = resample(LabeledMatrix::from(gather_rows(Xs, split.train), gather<int>(y, split.train)), p.resampler,
                        p.smote_k, derive_seed(p.seed, "stack-inner-resample"));
  auto bp = p.learners.boost;
  bp.seed = derive_seed(p.seed, "stack-inner-boost");
  const auto model = boost_fit(inner.X, inner.y, bp);
  return permutation_importance([&](const Matrix& Z) { return predict_proba(model, Z); }, gather_rows(Xs, split.test),
                                gather<int>(y, split.test), p.importance_repeats, derive_seed(p.seed, "stack-inner-perm"));
}

inline StackModel stack_fit(const Matrix& X, std::span<const int> y, const StackParams& p, StackFitInfo* info = nullptr,
                            std::string manifest_hash = "") {
  check_training_input(X, y, "stack_fit");
  if (p.oof_k < 2) throw ConfigError("stack_fit: oof_k must be at least 2");
  if (y.size() < p.oof_k) throw InsufficientData("stack_fit: fewer rows than folds");
  const auto counts = class_counts(y);
  for (int c = 0; c < kNumClasses; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw StratificationError("stack_fit: class '" + std::string(label_name(label_from_index(c))) +
                                "' is absent from the training rows");

  StackModel m;
  m.params = p;
  m.manifest_hash = std::move(manifest_hash);
  m.standardizer = Standardizer::fit(X);
  const Matrix Xs = m.standardizer.apply(X);

  m.top_importance = inner_boost_importance(Xs, y, p);
  m.top_features = select_top_features(m.top_importance, p.top_n);

  const auto folds = stratified_kfold(y, p.oof_k, derive_seed(p.seed, "stack-folds"));
  std::vector<LabeledMatrix> fold_train(folds.size());
  std::array<Matrix, 3> oof;
  for (auto& o : oof) o = Matrix::Zero(X.rows(), kNumClasses);
  parallel_for(folds.size(), [&](std::size_t f) {
    const auto& plan = folds[f];
    auto train = resample(LabeledMatrix::from(gather_rows(Xs, plan.train), gather<int>(y, plan.train)), p.resampler,
                          p.smote_k, derive_seed(p.seed, "stack-resample", f));
    const auto models = fit_base_models(train.X, train.y, p.learners, p.seed, f);
    const auto probs = base_probabilities(models, gather_rows(Xs, plan.test));
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t r = 0; r < plan.test.size(); ++r)
        oof[b].row(static_cast<Eigen::Index>(plan.test[r])) = probs[b].row(static_cast<Eigen::Index>(r));
    detail::remap_origins(train, plan.train);
    fold_train[f] = std::move(train);
  });

  const Matrix meta_X = meta_matrix(oof, Xs, m.top_features);
  m.meta = logreg_fit(meta_X, y, p.learners.meta);

  auto full = resample(LabeledMatrix::from(Xs, std::vector<int>(y.begin(), y.end())), p.resampler, p.smote_k,
                       derive_seed(p.seed, "stack-resample", folds.size()));
  m.base = fit_base_models(full.X, full.y, p.learners, p.seed, folds.size());

  if (info != nullptr) {
    info->folds = folds;
    info->fold_of_row.assign(y.size(), 0);
    for (std::size_t f = 0; f < folds.size(); ++f)
      for (auto i : folds[f].test) info->fold_of_row[i] = f;
    info->fold_training = std::move(fold_train);
    info->final_training = std::move(full);
    info->meta_X = meta_X;
  }
  return m;
}

struct StackPrediction {
  std::vector<int> labels;
  Matrix proba;
  std::array<Matrix, 3> base_proba;  // forest, boosted, mlp
};

inline StackPrediction stack_predict(const StackModel& m, const Matrix& X) {
  check_predict_input(X, m.n_features(), "stack predict");
  const Matrix Xs = m.standardizer.apply(X);
  StackPrediction out;
  out.base_proba = base_probabilities(m.base, Xs);
  out.proba = predict_proba(m.meta, meta_matrix(out.base_proba, Xs, m.top_features));
  out.labels = argmax_rows(out.proba);
  return out;
}

inline Matrix predict_proba(const StackModel& m, const Matrix& X) { return stack_predict(m, X).proba; }

// ---------------------------------------------------------------------------
// Model container: u64 header length, JSON header, raw parameter blocks.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const StackParams& p) {
  nlohmann::ordered_json j;
  j["learners"] = to_json(p.learners);
  j["resampler"] = resampler_name(p.resampler);
  j["smote_k"] = p.smote_k;
  j["oof_k"] = p.oof_k;
  j["top_n"] = p.top_n;
  j["importance_repeats"] = p.importance_repeats;
  j["importance_holdout"] = p.importance_holdout;
  j["seed"] = p.seed;
  return j;
}

template <class J>
StackParams stack_params_from_json(const J& j) {
  detail::reject_unknown(j, {"learners", "resampler", "smote_k", "oof_k", "top_n", "importance_repeats",
                             "importance_holdout", "seed"},
                         "stack");
  StackParams p;
  if (j.contains("learners")) p.learners = learner_config_from_json(j.at("learners"));
  std::string r = std::string(resampler_name(p.resampler));
  detail::read_key(j, "resampler", r, "stack");
  p.resampler = parse_resampler(r);
  detail::read_key(j, "smote_k", p.smote_k, "stack");
  detail::read_key(j, "oof_k", p.oof_k, "stack");
  detail::read_key(j, "top_n", p.top_n, "stack");
  detail::read_key(j, "importance_repeats", p.importance_repeats, "stack");
  detail::read_key(j, "importance_holdout", p.importance_holdout, "stack");
  detail::read_key(j, "seed", p.seed, "stack");
  return p;
}

inline void write_standardizer(binio::Writer& w, const Standardizer& s) {
  w.put_doubles({s.mean.data(), static_cast<std::size_t>(s.mean.size())});
  w.put_doubles({s.scale.data(), static_cast<std::size_t>(s.scale.size())});
}

inline Standardizer read_standardizer(binio::Reader& r) {
  Standardizer s;
  const auto m = r.get_doubles();
  const auto sc = r.get_doubles();
  if (m.size() != sc.size()) throw FormatError("standardizer: length mismatch");
  s.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
  s.scale = Eigen::Map<const Vector>(sc.data(), static_cast<Eigen::Index>(sc.size()));
  return s;
}

template <class Model>
std::string_view model_kind();
template <>
inline std::string_view model_kind<ForestModel>() { return "forest"; }
template <>
inline std::string_view model_kind<BoostModel>() { return "boosted"; }
template <>
inline std::string_view model_kind<MlpModel>() { return "mlp"; }
template <>
inline std::string_view model_kind<LogRegModel>() { return "logreg"; }
template <>
inline std::string_view model_kind<StackModel>() { return "stack"; }

inline void write_model(binio::Writer& w, const StackModel& m) {
  write_standardizer(w, m.standardizer);
  write_model(w, m.base.forest);
  write_model(w, m.base.boost);
  write_model(w, m.base.mlp);
  write_model(w, m.meta);
  w.put<std::uint64_t>(m.top_features.size());
  for (auto t : m.top_features) w.put<std::uint64_t>(t);
  w.put_doubles(m.top_importance);
}

inline void read_model(binio::Reader& r, StackModel& m) {
  m.standardizer = read_standardizer(r);
  read_model(r, m.base.forest);
  read_model(r, m.base.boost);
  read_model(r, m.base.mlp);
  read_model(r, m.meta);
  const auto n = r.get<std::uint64_t>();
  if (n > m.n_features()) throw FormatError("stack: more top features than inputs");
  m.top_features.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto t = r.get<std::uint64_t>();
    if (t >= m.n_features()) throw FormatError("stack: top feature index out of range");
    m.top_features.push_back(static_cast<std::size_t>(t));
  }
  m.top_importance = r.get_doubles();
  if (m.meta.n_features() != m.meta_width()) throw FormatError("stack: meta-learner width mismatch");
}

struct ModelHeader {
  std::string kind;
  std::string preset;
  std::string manifest_hash;
  nlohmann::ordered_json config;
};

template <class Model>
std::string encode_model(const Model& m, const ModelHeader& h) {
  nlohmann::ordered_json j;
  j["format"] = kModelFormat;
  j["kind"] = model_kind<Model>();
  j["preset"] = h.preset;
  j["manifest_hash"] = h.manifest_hash;
  j["config"] = h.config;
  const std::string header = j.dump();
  binio::Writer w;
  w.put<std::uint64_t>(header.size());
  w.put_bytes(header);
  write_model(w, m);
  return w.take();
}

inline ModelHeader decode_model_header(std::string_view bytes, std::size_t* payload_offset = nullptr) {
  binio::Reader r(bytes, "model file");
  const auto len = r.get<std::uint64_t>();
  if (len > bytes.size()) throw FormatError("model file: truncated header");
  const auto text = r.get_bytes(static_cast<std::size_t>(len));
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("model file: header is not valid JSON");
  }
  if (!j.is_object() || j.value("format", "") != kModelFormat)
    throw FormatError("model file: expected format " + std::string(kModelFormat));
  ModelHeader h;
  h.kind = j.value("kind", "");
  h.preset = j.value("preset", "");
  h.manifest_hash = j.value("manifest_hash", "");
  h.config = j.value("config", nlohmann::ordered_json::object());
  if (payload_offset) *payload_offset = r.position();
  return h;
}

template <class Model>
Model decode_model(std::string_view bytes, ModelHeader* header_out = nullptr) {
  std::size_t offset = 0;
  auto h = decode_model_header(bytes, &offset);
  if (h.kind != model_kind<Model>())
    throw FormatError("model file: holds a '" + h.kind + "' model, expected '" + std::string(model_kind<Model>()) + "'");
  binio::Reader r(bytes.substr(offset), "model file");
  Model m;
  read_model(r, m);
  if (!r.done()) throw FormatError("model file: trailing bytes");
  if constexpr (std::is_same_v<Model, StackModel>) {
    m.manifest_hash = h.manifest_hash;
    if (!h.config.contains("stack")) throw FormatError("model file: header lacks the stack configuration");
    m.params = stack_params_from_json(h.config.at("stack"));
  }
  if (header_out) *header_out = std::move(h);
  return m;
}

/// The header config records the stack parameters and the temporal training
/// fraction the model was fitted with.
inline std::string encode_stack(const StackModel& m, double train_frac = 1.0) {
  nlohmann::ordered_json cfg;
  cfg["stack"] = to_json(m.params);
  cfg["train_frac"] = train_frac;
  return encode_model(m, {"stack", m.params.learners.preset, m.manifest_hash, cfg});
}

}  // namespace wearstress
