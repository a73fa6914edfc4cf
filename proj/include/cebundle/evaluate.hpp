#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cebundle/bundling.hpp"
#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/inference.hpp"
#include "cebundle/io.hpp"
#include "cebundle/losses.hpp"
#include "cebundle/metrics.hpp"
#include "cebundle/scorer.hpp"

namespace cebundle {

enum class EvalMode { independent, joint };

inline std::string_view to_string(EvalMode m) {
  return m == EvalMode::joint ? "joint" : "independent";
}

inline EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "independent") return EvalMode::independent;
  if (s == "joint") return EvalMode::joint;
  throw ArgumentError("unknown eval mode: " + std::string(s));
}

struct EvalOptions {
  EvalMode mode = EvalMode::independent;
  CompatMode compat = CompatMode::ln;
  // Build a contrast bundle for each stand-alone question at test time.
  std::optional<ContrastTables> augment_at_test;
};

struct Prediction {
  std::string id;
  Tokens prediction;
  Tokens gold;
  EvalMode mode = EvalMode::independent;
  std::vector<std::vector<double>> scores;
  long bundle = -1;  // index into the dataset's bundles, -1 when stand-alone
};

inline json to_json(const Prediction& p) {
  json scores = json::array();
  for (const auto& row : p.scores) scores.push_back(row);
  return json{{"id", p.id},
              {"prediction", join(p.prediction)},
              {"mode", std::string(to_string(p.mode))},
              {"scores", scores}};
}

namespace detail {

inline Tokens decode_answer(const Vocab& v, const TokenIds& ids) { return v.decode(ids); }

// Test-time bundle for a stand-alone question: the question, its first
// generated contrast question, and the two choices as candidate answers.
inline std::optional<InstanceBundle> test_time_bundle(const QAInstance& inst,
                                                      const ContrastTables& tables) {
  auto choices = extract_choices(inst.question);
  if (!choices) return std::nullopt;
  QAInstance probe = inst;
  probe.answer = choices->first;
  const auto gens = gen_contrast_questions(probe, tables);
  if (gens.empty()) return std::nullopt;
  InstanceBundle b;
  b.bundle_id = "test-" + inst.id;
  b.context = inst.context;
  b.questions = {inst.question, gens.front().question};
  b.answers = {choices->first, choices->second};
  b.gold = {{0, 0}, {1, 1}};
  b.source = BundleSource::generated;
  return b;
}

}  // namespace detail

/// Predictions for every evaluable question: each gold question of each
/// bundle, then every instance whose question no bundle covers.
inline std::vector<Prediction> predict(const ScorerParams& p, const Vocab& vocab, const Dataset& d,
                                       const EvalOptions& opt) {
  if (opt.mode == EvalMode::joint && d.bundles.empty() && !opt.augment_at_test && !d.instances.empty())
    throw ConfigError("joint evaluation needs bundles or test-time augmentation");

  std::vector<Prediction> out;
  std::set<std::pair<Tokens, Tokens>> covered;
  for (std::size_t bi = 0; bi < d.bundles.size(); ++bi) {
    const auto& b = d.bundles[bi];
    for (const auto& q : b.questions) covered.emplace(b.context, q);
    const auto eb = encode_bundle(vocab, b);
    const auto m = score_matrix(p, opt.compat, eb);
    std::vector<long> choice(m.rows, -1);
    if (opt.mode == EvalMode::joint) {
      for (const auto& [i, j] : joint_assign(m).pairs) choice[i] = static_cast<long>(j);
    } else {
      for (std::size_t i = 0; i < m.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < m.cols; ++j)
          if (m(i, j) > m(i, best)) best = j;
        choice[i] = static_cast<long>(best);
      }
    }
    std::vector<GoldPair> gold = b.gold;
    std::sort(gold.begin(), gold.end());
    for (const auto& g : gold) {
      Prediction pr;
      pr.id = b.bundle_id + "-q" + std::to_string(g.question);
      if (choice[g.question] >= 0) pr.prediction = b.answers[static_cast<std::size_t>(choice[g.question])];
      pr.gold = b.answers[g.answer];
      pr.mode = opt.mode;
      pr.scores.emplace_back(m.values.begin() + static_cast<long>(g.question * m.cols),
                             m.values.begin() + static_cast<long>((g.question + 1) * m.cols));
      pr.bundle = static_cast<long>(bi);
      out.push_back(std::move(pr));
    }
  }

  for (const auto& inst : d.instances) {
    if (covered.count({inst.context, inst.question})) continue;
    Prediction pr;
    pr.id = inst.id;
    pr.gold = inst.answer;
    pr.mode = opt.mode;
    std::optional<InstanceBundle> tb;
    if (opt.mode == EvalMode::joint && opt.augment_at_test)
      tb = detail::test_time_bundle(inst, *opt.augment_at_test);
    if (tb) {
      const auto m = score_matrix(p, opt.compat, encode_bundle(vocab, *tb));
      for (const auto& [i, j] : joint_assign(m).pairs)
        if (i == 0) pr.prediction = tb->answers[j];
      pr.scores.push_back({m.values.begin(), m.values.begin() + static_cast<long>(m.cols)});
    } else {
      pr.prediction = detail::decode_answer(
          vocab, greedy_decode(p, vocab.encode(inst.context), vocab.encode(inst.question)));
    }
    out.push_back(std::move(pr));
  }
  return out;
}

/// EM and F1 averaged over predictions; consistency averaged over the
/// bundles that have at least one prediction.
inline MetricsReport score_predictions(const std::vector<Prediction>& preds) {
  MetricsReport r;
  r.n_instances = preds.size();
  if (preds.empty()) return r;
  std::map<long, std::vector<int>> per_bundle;
  double em = 0.0, f1 = 0.0;
  for (const auto& p : preds) {
    const int e = exact_match(p.prediction, p.gold);
    em += e;
    f1 += token_f1(p.prediction, p.gold);
    if (p.bundle >= 0) per_bundle[p.bundle].push_back(e);
  }
  r.em = em / static_cast<double>(preds.size());
  r.f1 = f1 / static_cast<double>(preds.size());
  r.n_bundles = per_bundle.size();
  if (!per_bundle.empty()) {
    double c = 0.0;
    for (const auto& [b, ems] : per_bundle) c += consistency(ems);
    r.consistency = c / static_cast<double>(per_bundle.size());
  }
  return r;
}

inline MetricsReport evaluate(const ScorerParams& p, const Vocab& vocab, const Dataset& d,
                              const EvalOptions& opt, std::vector<Prediction>* preds_out = nullptr) {
  auto preds = predict(p, vocab, d, opt);
  auto r = score_predictions(preds);
  if (preds_out) *preds_out = std::move(preds);
  return r;
}

// ---------------------------------------------------------------------------
// Posterior diagnostics

struct DiagnoseConfig {
  std::size_t sample_size = 200;  // instances drawn from the set
  std::size_t top = 10;
  double nucleus_p = 1.0;
  std::size_t nucleus_steps = 2;
  std::uint64_t seed = 0;
};

/// Entropy over the top-10 sampled answers and the log ratio of the two
/// most probable ones, on a seeded sample of instances.
inline Diagnostics diagnose(const ScorerParams& p, const Vocab& vocab,
                            std::vector<QAInstance> instances, const DiagnoseConfig& cfg) {
  std::sort(instances.begin(), instances.end(),
            [](const QAInstance& a, const QAInstance& b) { return a.id < b.id; });
  if (instances.size() > cfg.sample_size) {
    Rng rng(stream_seed(cfg.seed, "diagnose"));
    rng.shuffle(instances);
    instances.resize(cfg.sample_size);
    std::sort(instances.begin(), instances.end(),
              [](const QAInstance& a, const QAInstance& b) { return a.id < b.id; });
  }
  SamplingConfig sc{cfg.top, cfg.nucleus_p, cfg.nucleus_steps, cfg.seed};
  Diagnostics d;
  double hsum = 0.0, rsum = 0.0;
  for (const auto& inst : instances) {
    Rng rng(stream_seed(cfg.seed, inst.id));
    auto cands = sample_candidates(p, vocab, vocab.encode(inst.context), vocab.encode(inst.question),
                                   sc, rng, 4 * cfg.top);
    if (cands.empty()) continue;
    if (cands.size() > cfg.top) cands.resize(cfg.top);
    std::vector<double> probs;
    for (const auto& c : cands) probs.push_back(std::exp(c.log_score));
    const double h = entropy_top10(probs);
    d.ids.push_back(inst.id);
    d.entropy10.push_back(h);
    hsum += h;
    // With a single surviving answer the runner-up is unseen; p2 <= 1 - p1
    // gives a lower bound on the ratio.
    const double t =
        cands.size() >= 2
            ? top2_ratio_log(cands[0].log_score, cands[1].log_score)
            : std::max(0.0, cands[0].log_score -
                                std::log(std::max(-std::expm1(cands[0].log_score), kTop2UnseenFloor)));
    d.top2_ratio.push_back(t);
    rsum += t;
  }
  if (!d.entropy10.empty()) d.entropy10_mean = hsum / static_cast<double>(d.entropy10.size());
  if (!d.top2_ratio.empty()) d.top2_ratio_mean = rsum / static_cast<double>(d.top2_ratio.size());
  return d;
}

}  // namespace cebundle
