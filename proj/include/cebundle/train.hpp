#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/io.hpp"
#include "cebundle/losses.hpp"
#include "cebundle/metrics.hpp"
#include "cebundle/scorer.hpp"

namespace cebundle {

struct TrainConfig {
  LossSpec loss;
  double learning_rate = 1e-2;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  Dims dims;

  void validate() const {
    loss.validate();
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  }
};

struct AdamState {
  ScorerParams m, v;
  std::size_t step = 0;

  static AdamState for_params(const ScorerParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// One bias-corrected Adam update that ascends the objective.
inline void adam_step(ScorerParams& params, const ScorerParams& grad, AdamState& st,
                      const TrainConfig& cfg) {
  if (!params.same_shape(grad) || !params.same_shape(st.m) || !params.same_shape(st.v))
    throw ArgumentError("adam: shape mismatch");
  const std::size_t n = params.num_params();
  for (std::size_t i = 0; i < n; ++i)
    if (std::isnan(grad.flat(i)))
      throw TrainingAborted("NaN gradient at parameter " + std::to_string(i) + " (step " +
                            std::to_string(st.step + 1) + ")");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  auto upd = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] += cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  };
  upd(params.embedding, grad.embedding, st.m.embedding, st.v.embedding);
  upd(params.position, grad.position, st.m.position, st.v.position);
  upd(params.w1, grad.w1, st.m.w1, st.v.w1);
  upd(params.b1, grad.b1, st.m.b1, st.v.b1);
  upd(params.w2, grad.w2, st.m.w2, st.v.w2);
  upd(params.b2, grad.b2, st.m.b2, st.v.b2);
  if (!params.all_finite()) throw TrainingAborted("non-finite parameter after adam step");
}

/// A training example: a bundle, or a plain instance that only takes the
/// MLE term.
struct TrainUnit {
  std::string id;
  EncodedBundle bundle;
  bool mle_only = false;
};

/// Bundles plus instances not already covered by a bundle question, sorted
/// by id.
inline std::vector<TrainUnit> make_train_units(const Dataset& d, const Vocab& vocab) {
  std::set<std::pair<Tokens, Tokens>> covered;
  std::vector<TrainUnit> units;
  for (const auto& b : d.bundles) {
    for (const auto& q : b.questions) covered.emplace(b.context, q);
    units.push_back({b.bundle_id, encode_bundle(vocab, b), false});
  }
  for (const auto& i : d.instances) {
    if (covered.count({i.context, i.question})) continue;
    EncodedBundle e;
    e.context = vocab.encode(i.context);
    e.questions = {vocab.encode(i.question)};
    e.answers = {vocab.encode(i.answer)};
    e.gold = {{0, 0}};
    units.push_back({i.id, std::move(e), true});
  }
  std::stable_sort(units.begin(), units.end(),
                   [](const TrainUnit& a, const TrainUnit& b) { return a.id < b.id; });
  return units;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double objective = 0.0;  // mean maximized log-likelihood over trained units
  std::size_t skipped = 0;
  std::size_t ul_clamped = 0;
  std::optional<MetricsReport> dev;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

inline json to_json(const TrainHistory& h) {
  json arr = json::array();
  for (const auto& e : h.epochs) {
    json j{{"epoch", e.epoch},
           {"objective", e.objective},
           {"skipped", e.skipped},
           {"ul_clamped", e.ul_clamped}};
    if (e.dev) j["dev"] = to_json(*e.dev);
    arr.push_back(j);
  }
  return json{{"epochs", arr}};
}

struct TrainResult {
  ScorerParams params;
  TrainHistory history;
};

/// Called after each epoch with the current parameters; returns dev metrics.
using EpochEvaluator = std::function<MetricsReport(const ScorerParams&)>;

inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const Vocab& vocab,
                         std::optional<ScorerParams> init = std::nullopt,
                         const EpochEvaluator& dev_eval = {}) {
  cfg.validate();
  if (cfg.loss.variant == LossVariant::ul) require_ln(cfg.loss.compat, "unlikelihood");
  const auto units = make_train_units(data, vocab);
  if (units.empty()) throw ArgumentError("training set is empty");

  TrainResult r;
  r.params = init ? std::move(*init) : init_params(cfg.seed, cfg.dims, vocab.size());
  if (r.params.vocab_size != vocab.size())
    throw ArgumentError("initial model vocabulary does not match the data");
  AdamState st = AdamState::for_params(r.params);

  LossSpec mle_spec = cfg.loss;
  mle_spec.variant = LossVariant::mle;
  mle_spec.alpha2 = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    double total = 0.0;
    std::size_t trained = 0;
    for (const auto& u : units) {
      LossResult lr;
      if (u.mle_only) {
        if (mle_spec.alpha1 == 0.0) continue;
        lr = interpolated_loss(mle_spec, r.params, u.bundle);
      } else {
        try {
          lr = interpolated_loss(cfg.loss, r.params, u.bundle);
        } catch (const UnsupportedError&) {
          ++rec.skipped;
          continue;
        }
      }
      if (!std::isfinite(lr.value))
        throw TrainingAborted("non-finite objective on unit " + u.id);
      total += lr.value;
      rec.ul_clamped += lr.ul_clamped;
      ++trained;
      adam_step(r.params, lr.grad, st, cfg);
    }
    if (trained == 0) throw TrainingAborted("every training unit was skipped");
    rec.objective = total / static_cast<double>(trained);
    if (dev_eval) rec.dev = dev_eval(r.params);
    r.history.epochs.push_back(rec);
  }
  return r;
}

}  // namespace cebundle
