/// @file learners.hpp
/// The four learners, their two published hyperparameter presets and the
/// JSON form of a learner configuration.

#pragma once

#include "wearstress/learners/boost.hpp"
#include "wearstress/learners/forest.hpp"
#include "wearstress/learners/logreg.hpp"
#include "wearstress/learners/mlp.hpp"

#include <json.hpp>

namespace wearstress {

struct LearnerConfig {
  std::string preset = "implementation";
  ForestParams forest;
  BoostParams boost;
  MlpParams mlp;
  LogRegParams meta;
};

/// "method": the configuration described with the approach (200 trees at
/// depth 15; boosting at depth 8, gamma 0.5; 128-64-32 network).
/// "implementation": the tuned configuration (500 balanced trees with
/// min_samples_leaf 5; depth 7, gamma 1.2, acute weight 6.3; 256-128-64
/// network with batch norm and 0.3 dropout).
inline LearnerConfig learner_preset(std::string_view name) {
  LearnerConfig c;
  c.preset = std::string(name);
  if (name == "method") {
    c.forest = {200, 15, 1, false, 0, 0};
    c.boost.max_depth = 8;
    c.boost.gamma = 0.5;
    c.boost.class_weight = {1.0, 1.0, 1.0};
    c.mlp.hidden = {128, 64, 32};
    c.mlp.batch_norm = false;
    c.mlp.dropout = 0.0;
  } else if (name == "implementation") {
    c.forest = {500, 15, 5, true, 0, 0};
    c.boost.max_depth = 7;
    c.boost.gamma = 1.2;
    c.boost.class_weight = {1.0, 6.3, 1.0};
    c.mlp.hidden = {256, 128, 64};
    c.mlp.batch_norm = true;
    c.mlp.dropout = 0.3;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected method or implementation)");
  }
  return c;
}

inline nlohmann::ordered_json to_json(const LearnerConfig& c) {
  nlohmann::ordered_json j;
  j["preset"] = c.preset;
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"max_depth", c.forest.max_depth},
                 {"min_samples_leaf", c.forest.min_samples_leaf},
                 {"balanced", c.forest.balanced},
                 {"max_features", c.forest.max_features}};
  j["boost"] = {{"learning_rate", c.boost.learning_rate},
                {"max_depth", c.boost.max_depth},
                {"gamma", c.boost.gamma},
                {"lambda", c.boost.lambda},
                {"min_child_weight", c.boost.min_child_weight},
                {"n_rounds", c.boost.n_rounds},
                {"class_weight", c.boost.class_weight},
                {"early_stopping_rounds", c.boost.early_stopping_rounds},
                {"validation_fraction", c.boost.validation_fraction}};
  j["mlp"] = {{"hidden", c.mlp.hidden},
              {"dropout", c.mlp.dropout},
              {"batch_norm", c.mlp.batch_norm},
              {"learning_rate", c.mlp.learning_rate},
              {"epochs", c.mlp.epochs},
              {"batch_size", c.mlp.batch_size}};
  j["meta"] = {{"C", c.meta.C}, {"max_iter", c.meta.max_iter}, {"tol", c.meta.tol}};
  return j;
}

namespace detail {

/// Throws ConfigError naming the first key of obj not listed in known.
template <class J>
void reject_unknown(const J& obj, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
}

template <class T, class J>
void read_key(const J& obj, const char* key, T& out, std::string_view where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

}  // namespace detail

/// Starts from the named preset (default "implementation") and applies
/// overrides; unknown keys are rejected.
template <class J>
LearnerConfig learner_config_from_json(const J& j) {
  detail::reject_unknown(j, {"preset", "forest", "boost", "mlp", "meta"}, "learners");
  std::string preset = "implementation";
  detail::read_key(j, "preset", preset, "learners");
  LearnerConfig c = learner_preset(preset);
  if (j.contains("forest")) {
    const auto& f = j.at("forest");
    detail::reject_unknown(f, {"n_trees", "max_depth", "min_samples_leaf", "balanced", "max_features"}, "learners.forest");
    detail::read_key(f, "n_trees", c.forest.n_trees, "learners.forest");
    detail::read_key(f, "max_depth", c.forest.max_depth, "learners.forest");
    detail::read_key(f, "min_samples_leaf", c.forest.min_samples_leaf, "learners.forest");
    detail::read_key(f, "balanced", c.forest.balanced, "learners.forest");
    detail::read_key(f, "max_features", c.forest.max_features, "learners.forest");
  }
  if (j.contains("boost")) {
    const auto& b = j.at("boost");
    detail::reject_unknown(b, {"learning_rate", "max_depth", "gamma", "lambda", "min_child_weight", "n_rounds",
                               "class_weight", "early_stopping_rounds", "validation_fraction"},
                           "learners.boost");
    detail::read_key(b, "learning_rate", c.boost.learning_rate, "learners.boost");
    detail::read_key(b, "max_depth", c.boost.max_depth, "learners.boost");
    detail::read_key(b, "gamma", c.boost.gamma, "learners.boost");
    detail::read_key(b, "lambda", c.boost.lambda, "learners.boost");
    detail::read_key(b, "min_child_weight", c.boost.min_child_weight, "learners.boost");
    detail::read_key(b, "n_rounds", c.boost.n_rounds, "learners.boost");
    detail::read_key(b, "class_weight", c.boost.class_weight, "learners.boost");
    detail::read_key(b, "early_stopping_rounds", c.boost.early_stopping_rounds, "learners.boost");
    detail::read_key(b, "validation_fraction", c.boost.validation_fraction, "learners.boost");
  }
  if (j.contains("mlp")) {
    const auto& m = j.at("mlp");
    detail::reject_unknown(m, {"hidden", "dropout", "batch_norm", "learning_rate", "epochs", "batch_size"}, "learners.mlp");
    detail::read_key(m, "hidden", c.mlp.hidden, "learners.mlp");
    detail::read_key(m, "dropout", c.mlp.dropout, "learners.mlp");
    detail::read_key(m, "batch_norm", c.mlp.batch_norm, "learners.mlp");
    detail::read_key(m, "learning_rate", c.mlp.learning_rate, "learners.mlp");
    detail::read_key(m, "epochs", c.mlp.epochs, "learners.mlp");
    detail::read_key(m, "batch_size", c.mlp.batch_size, "learners.mlp");
  }
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    detail::reject_unknown(m, {"C", "max_iter", "tol"}, "learners.meta");
    detail::read_key(m, "C", c.meta.C, "learners.meta");
    detail::read_key(m, "max_iter", c.meta.max_iter, "learners.meta");
    detail::read_key(m, "tol", c.meta.tol, "learners.meta");
  }
  return c;
}

/// Most probable class per row; ties go to the lower class index.
inline std::vector<int> argmax_rows(const Matrix& P) {
  std::vector<int> out(static_cast<std::size_t>(P.rows()));
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < P.cols(); ++c)
      if (P(i, c) > P(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace wearstress
