#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include "cebundle/evaluate.hpp"
#include "cebundle/synthetic.hpp"
#include "cebundle/train.hpp"
#include "support/oracles.hpp"

using namespace cebundle;

namespace {

GeneratorConfig small_gen(std::uint64_t seed, std::size_t n_train = 60, std::size_t n_dev = 20) {
  GeneratorConfig g;
  g.seed = seed;
  g.n_train_bundles = n_train;
  g.n_dev_bundles = n_dev;
  return g;
}

TrainConfig small_train(LossVariant v, std::size_t epochs = 3) {
  TrainConfig c;
  c.seed = 5;
  c.epochs = epochs;
  c.loss.variant = v;
  c.dims = Dims{8, 4, 12, 4};
  return c;
}

// Value stated for `entity` in a "<e> has <v> <attr> ." context.
long stated_value(const Tokens& ctx, const std::string& entity, const std::string& attr) {
  for (std::size_t i = 0; i + 4 < ctx.size() + 1; i += 5)
    if (ctx[i] == entity && ctx[i + 3] == attr) return std::stol(ctx[i + 2]);
  return std::numeric_limits<long>::min();
}

// A model over {g, c, o} that always answers "g" with probability 0.7 and
// "c" with 0.3, whatever the question.
struct FixedModel {
  Vocab vocab{Tokens{"g", "c", "o"}};
  ScorerParams params;
  FixedModel() {
    std::vector<double> p0(7, 0.0), p1(7, 0.0);
    p0[4] = 0.7;
    p0[5] = 0.3;
    p1[Vocab::kEos] = 1.0;
    params = oracle::two_step_params(7, p0, p1);
  }
};

}  // namespace

TEST(Generator, DeterministicJsonl) {
  const auto a = generate_synthetic(small_gen(1));
  const auto b = generate_synthetic(small_gen(1));
  EXPECT_EQ(to_jsonl(a.train.bundles), to_jsonl(b.train.bundles));
  EXPECT_EQ(to_jsonl(a.dev.instances), to_jsonl(b.dev.instances));
  EXPECT_NE(to_jsonl(a.train.bundles), to_jsonl(generate_synthetic(small_gen(2)).train.bundles));
  EXPECT_EQ(a.train.bundles.front().bundle_id, "syn-train-000001");
  EXPECT_EQ(a.dev.bundles.front().bundle_id, "syn-dev-000001");
}

TEST(Generator, BundlesAreValidAndAnswersFollowValues) {
  const auto d = generate_synthetic(small_gen(2, 300, 50));
  const auto vocab = synthetic_vocab(small_gen(2));
  for (const auto* split : {&d.train, &d.dev}) {
    for (const auto& b : split->bundles) {
      ASSERT_TRUE(is_valid_bundle(b)) << b.bundle_id;
      ASSERT_EQ(b.questions.size(), 2u);
      EXPECT_EQ(b.questions[0][3], "more");
      EXPECT_EQ(b.questions[1][3], "less");
      const auto& attr = b.questions[0][4];
      EXPECT_EQ(b.context[3], attr);
      EXPECT_EQ(b.context[8], attr);
      const long vm = stated_value(b.context, b.answers[0][0], attr);
      const long vl = stated_value(b.context, b.answers[1][0], attr);
      EXPECT_GT(vm, vl) << join(b.context);
      EXPECT_GE(vl, 1);
      EXPECT_LE(vm, 20);
      const auto n = b.context.size();
      EXPECT_TRUE(n == 10 || n == 15 || n == 20);
      for (const auto& t : b.context) EXPECT_TRUE(vocab.contains(t)) << t;
      for (const auto& q : b.questions)
        for (const auto& t : q) EXPECT_TRUE(vocab.contains(t)) << t;
    }
  }
  EXPECT_EQ(d.train.instances.size(), 600u);
  EXPECT_EQ(d.train.vocab, vocab);
}

TEST(Generator, SevenOverThreeExample) {
  // Any bundle whose two stated values are 7 and 3 answers "more" with the
  // entity holding 7.
  const auto d = generate_synthetic(small_gen(3, 2000, 0));
  std::size_t seen = 0;
  for (const auto& b : d.train.bundles) {
    const auto& attr = b.questions[0][4];
    const long v1 = std::stol(b.context[2]), v2 = std::stol(b.context[7]);
    if (!((v1 == 7 && v2 == 3) || (v1 == 3 && v2 == 7))) continue;
    ++seen;
    const auto& e7 = v1 == 7 ? b.context[0] : b.context[5];
    EXPECT_EQ(b.answers[0], Tokens{e7});
    EXPECT_EQ(stated_value(b.context, e7, attr), 7);
  }
  EXPECT_GT(seen, 0u);
}

TEST(Generator, ConfigValidation) {
  auto g = small_gen(1);
  g.entity_pool_size = 1;
  EXPECT_THROW(generate_synthetic(g), ConfigError);
  g = small_gen(1);
  g.value_max = g.value_min;
  EXPECT_THROW(generate_synthetic(g), ConfigError);
}

TEST(Adam, ZeroGradientFromFreshStateIsNoOp) {
  auto p = init_params(1, Dims{3, 2, 4, 3}, 7);
  const auto before = p;
  auto st = AdamState::for_params(p);
  TrainConfig c;
  adam_step(p, p.zeros_like(), st, c);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
  EXPECT_EQ(st.m, p.zeros_like());
}

TEST(Adam, ZeroGradientDecaysMoments) {
  auto p = init_params(2, Dims{3, 2, 4, 3}, 7);
  auto st = AdamState::for_params(p);
  TrainConfig c;
  auto g = p.zeros_like();
  for (std::size_t i = 0; i < g.num_params(); ++i) g.flat(i) = 0.01 * static_cast<double>(i % 7) - 0.03;
  adam_step(p, g, st, c);
  const auto m = st.m, v = st.v;
  adam_step(p, p.zeros_like(), st, c);
  for (std::size_t i = 0; i < g.num_params(); ++i) {
    EXPECT_EQ(st.m.flat(i), 0.9 * m.flat(i));
    EXPECT_EQ(st.v.flat(i), 0.999 * v.flat(i));
  }
}

TEST(Adam, FirstStepIsSignScaled) {
  auto p = ScorerParams::zeros(Dims{2, 2, 2, 2}, 5);
  auto st = AdamState::for_params(p);
  TrainConfig c;
  auto g = p.zeros_like();
  g.b2 = {2.0, -0.5, 1e-3, 0.0, -40.0};
  adam_step(p, g, st, c);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  for (std::size_t v = 0; v < 5; ++v) {
    const double expect = c.learning_rate * g.b2[v] / (std::abs(g.b2[v]) + c.epsilon);
    EXPECT_NEAR(p.b2[v], expect, 1e-15);
  }
  EXPECT_NEAR(p.b2[0], 0.01, 1e-8);
  EXPECT_NEAR(p.b2[1], -0.01, 1e-8);
}

TEST(Adam, NanGradientAborts) {
  auto p = ScorerParams::zeros(Dims{2, 2, 2, 2}, 5);
  auto st = AdamState::for_params(p);
  auto g = p.zeros_like();
  g.w1[0] = std::nan("");
  EXPECT_THROW(adam_step(p, g, st, TrainConfig{}), TrainingAborted);
  auto other = ScorerParams::zeros(Dims{2, 2, 2, 2}, 6);
  EXPECT_THROW(adam_step(p, other, st, TrainConfig{}), ArgumentError);
}

TEST(Train, ZeroAlpha2EqualsPureMle) {
  const auto d = generate_synthetic(small_gen(4));
  auto ce = small_train(LossVariant::ce_qc);
  ce.loss.alpha2 = 0.0;
  const auto a = train(ce, d.train, d.train.vocab);
  const auto b = train(small_train(LossVariant::mle), d.train, d.train.vocab);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
    EXPECT_EQ(a.history.epochs[e].objective, b.history.epochs[e].objective);
  EXPECT_EQ(to_json(a.history).dump(), to_json(b.history).dump());
}

TEST(Train, DeterministicPerSeed) {
  const auto d = generate_synthetic(small_gen(5));
  const auto cfg = small_train(LossVariant::ce_tw, 2);
  EXPECT_EQ(train(cfg, d.train, d.train.vocab).params, train(cfg, d.train, d.train.vocab).params);
  auto other = cfg;
  other.seed = 6;
  EXPECT_NE(train(cfg, d.train, d.train.vocab).params, train(other, d.train, d.train.vocab).params);
}

TEST(Train, JointLossSkipsOnlyIncompatibleBundles) {
  const auto d = generate_synthetic(small_gen(6));
  const auto ok = train(small_train(LossVariant::ce_jt, 1), d.train, d.train.vocab);
  EXPECT_EQ(ok.history.epochs[0].skipped, 0u);

  Dataset mixed = d.train;
  mixed.instances.clear();
  for (std::size_t i = 0; i < 5; ++i) mixed.bundles[i].gold.resize(1);
  const auto m = train(small_train(LossVariant::ce_jt, 1), mixed, mixed.vocab);
  EXPECT_EQ(m.history.epochs[0].skipped, 5u);

  Dataset bad = mixed;
  for (auto& b : bad.bundles) b.gold.resize(1);
  EXPECT_THROW(train(small_train(LossVariant::ce_jt, 1), bad, bad.vocab), TrainingAborted);
}

TEST(Train, EmptyDataAndBadConfig) {
  const auto d = generate_synthetic(small_gen(7));
  Dataset empty;
  empty.vocab = d.train.vocab;
  EXPECT_THROW(train(small_train(LossVariant::mle), empty, empty.vocab), ArgumentError);
  auto c = small_train(LossVariant::mle);
  c.learning_rate = 0.0;
  EXPECT_THROW(train(c, d.train, d.train.vocab), ConfigError);
  c = small_train(LossVariant::ul);
  c.loss.compat = CompatMode::un;
  EXPECT_THROW(train(c, d.train, d.train.vocab), UnsupportedError);
}

TEST(Train, ContinuesFromInitialModel) {
  const auto d = generate_synthetic(small_gen(8));
  const auto first = train(small_train(LossVariant::mle, 2), d.train, d.train.vocab);
  const auto cont = train(small_train(LossVariant::ce_qc, 1), d.train, d.train.vocab, first.params);
  const auto scratch = train(small_train(LossVariant::ce_qc, 1), d.train, d.train.vocab);
  EXPECT_NE(cont.params, scratch.params);
  EXPECT_GT(cont.history.epochs[0].objective, scratch.history.epochs[0].objective);
  auto wrong = init_params(1, Dims{8, 4, 12, 4}, 5);
  EXPECT_THROW(train(small_train(LossVariant::mle, 1), d.train, d.train.vocab, wrong), ArgumentError);
}

TEST(Train, FlattenedGeneratedBundlesAreTheAugmentationBaseline) {
  // Instances only, no bundles: every unit is MLE-only.
  const auto d = generate_synthetic(small_gen(9));
  Dataset flat;
  flat.instances = flatten_bundles(d.train.bundles);
  flat.vocab = d.train.vocab;
  const auto units = make_train_units(flat, flat.vocab);
  EXPECT_EQ(units.size(), flat.instances.size());
  for (const auto& u : units) EXPECT_TRUE(u.mle_only);
  // Bundled instances are not trained twice.
  Dataset both = d.train;
  EXPECT_EQ(make_train_units(both, both.vocab).size(), both.bundles.size());
}

TEST(Train, DevEvaluatorRunsEachEpoch) {
  const auto d = generate_synthetic(small_gen(10));
  std::size_t calls = 0;
  const auto r = train(small_train(LossVariant::mle, 3), d.train, d.train.vocab, std::nullopt,
                       [&](const ScorerParams& p) {
                         ++calls;
                         return evaluate(p, d.train.vocab, d.dev, {});
                       });
  EXPECT_EQ(calls, 3u);
  for (const auto& e : r.history.epochs) ASSERT_TRUE(e.dev);
  EXPECT_TRUE(to_json(r.history).at("epochs").at(0).contains("dev"));
}

TEST(Evaluate, PerfectPredictions) {
  std::vector<Prediction> preds;
  for (long b = 0; b < 3; ++b)
    for (int q = 0; q < 2; ++q) {
      Prediction p;
      p.id = std::to_string(b) + "-" + std::to_string(q);
      p.prediction = p.gold = {"x" + std::to_string(q)};
      p.bundle = b;
      preds.push_back(p);
    }
  const auto r = score_predictions(preds);
  EXPECT_EQ(r.em, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.consistency, 1.0);
  EXPECT_EQ(r.n_bundles, 3u);
  preds[1].prediction = {"wrong"};
  const auto r2 = score_predictions(preds);
  EXPECT_NEAR(r2.em, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(r2.consistency, 2.0 / 3.0, 1e-15);
  EXPECT_LE(r2.consistency, r2.em);
}

TEST(Evaluate, JointForcesDistinctAnswers) {
  const FixedModel m;
  Dataset d;
  InstanceBundle b;
  b.bundle_id = "b";
  b.context = {"o"};
  b.questions = {{"o"}, {"o", "o"}};
  b.answers = {{"c"}, {"g"}};
  b.gold = {{0, 0}, {1, 1}};
  d.bundles = {b};
  d.instances = flatten_bundles(d.bundles);

  std::vector<Prediction> ind, joint;
  const auto ri = evaluate(m.params, m.vocab, d, {EvalMode::independent, CompatMode::ln, std::nullopt}, &ind);
  const auto rj = evaluate(m.params, m.vocab, d, {EvalMode::joint, CompatMode::ln, std::nullopt}, &joint);
  ASSERT_EQ(ind.size(), 2u);
  ASSERT_EQ(joint.size(), 2u);
  EXPECT_EQ(ind[0].prediction, Tokens{"g"});
  EXPECT_EQ(ind[1].prediction, Tokens{"g"});
  EXPECT_NE(joint[0].prediction, joint[1].prediction);
  EXPECT_EQ(ri.em, 0.5);
  EXPECT_EQ(ri.consistency, 0.0);
  EXPECT_EQ(ind[0].id, "b-q0");
  EXPECT_EQ(ind[0].scores.size(), 1u);
  EXPECT_EQ(ind[0].scores[0].size(), 2u);
  EXPECT_EQ(to_json(joint[0]).at("mode"), "joint");
  (void)rj;
}

TEST(Evaluate, EmptyAndMisconfigured) {
  const FixedModel m;
  Dataset empty;
  const auto r = evaluate(m.params, m.vocab, empty, {});
  EXPECT_EQ(r.n_instances, 0u);
  EXPECT_EQ(r.em, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.consistency, 0.0);

  Dataset lone;
  lone.instances = {{"i", {"o"}, {"o"}, {"g"}}};
  EXPECT_THROW(evaluate(m.params, m.vocab, lone, {EvalMode::joint, CompatMode::ln, std::nullopt}), ConfigError);
  std::vector<Prediction> preds;
  const auto ri = evaluate(m.params, m.vocab, lone, {}, &preds);
  EXPECT_EQ(preds[0].prediction, Tokens{"g"});
  EXPECT_EQ(ri.em, 1.0);
  EXPECT_EQ(ri.n_bundles, 0u);
}

TEST(Evaluate, TestTimeBundleForStandAloneQuestion) {
  const FixedModel m;
  Dataset d;
  d.instances = {{"i", {"o"}, tokenize("which is more , g or c ?"), {"c"}}};
  EvalOptions opt;
  opt.mode = EvalMode::joint;
  opt.augment_at_test = default_contrast_tables();
  std::vector<Prediction> preds;
  evaluate(m.params, m.vocab, d, opt, &preds);
  ASSERT_EQ(preds.size(), 1u);
  // Both rows tie, so the lexicographic assignment gives the first row "g".
  EXPECT_EQ(preds[0].prediction, Tokens{"g"});
  ASSERT_EQ(preds[0].scores.size(), 1u);
  EXPECT_EQ(preds[0].scores[0].size(), 2u);
}

TEST(Diagnose, BoundedAndDeterministic) {
  const auto d = generate_synthetic(small_gen(11, 40, 30));
  const auto r = train(small_train(LossVariant::mle, 2), d.train, d.train.vocab);
  DiagnoseConfig cfg;
  cfg.sample_size = 20;
  cfg.seed = 3;
  const auto a = diagnose(r.params, d.train.vocab, d.dev.instances, cfg);
  const auto b = diagnose(r.params, d.train.vocab, d.dev.instances, cfg);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.entropy10, b.entropy10);
  EXPECT_LE(a.ids.size(), 20u);
  EXPECT_GT(a.ids.size(), 0u);
  for (double h : a.entropy10) {
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(10.0) + 1e-12);
  }
  for (double t : a.top2_ratio) EXPECT_GE(t, 0.0);
}

TEST(Diagnose, LoneAnswerUsesUnseenMassBound) {
  // Step 0 puts all mass on "g" and step 1 always ends: one answer survives
  // and the runner-up can hold at most the floored remaining mass.
  const Vocab v(Tokens{"g", "c", "o"});
  std::vector<double> p0(7, 0.0), p1(7, 0.0);
  p0[4] = 1.0;
  p1[Vocab::kEos] = 1.0;
  const auto p = oracle::two_step_params(7, p0, p1);
  const auto d = diagnose(p, v, {{"i", {"o"}, {"o"}, {"g"}}}, DiagnoseConfig{});
  ASSERT_EQ(d.top2_ratio.size(), 1u);
  EXPECT_NEAR(d.entropy10[0], 0.0, 1e-9);
  EXPECT_NEAR(d.top2_ratio[0], -std::log(kTop2UnseenFloor), 1e-9);

  // Two answers at 0.7 / 0.3: the plain log ratio.
  p0[4] = 0.7;
  p0[5] = 0.3;
  const auto q = oracle::two_step_params(7, p0, p1);
  const auto e = diagnose(q, v, {{"i", {"o"}, {"o"}, {"g"}}}, DiagnoseConfig{});
  ASSERT_EQ(e.top2_ratio.size(), 1u);
  EXPECT_NEAR(e.top2_ratio[0], std::log(0.7 / 0.3), 1e-9);
}

TEST(Train, ReferenceRunMostlyImprovesAndFitsTimeBudget) {
  GeneratorConfig g;
  g.seed = 1;
  const auto d = generate_synthetic(g);
  TrainConfig c;
  c.seed = 1;
  c.loss.variant = LossVariant::mle;
  const auto t0 = std::chrono::steady_clock::now();
  const auto h = train(c, d.train, d.train.vocab).history;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 600.0);
  ASSERT_EQ(h.epochs.size(), 20u);
  std::size_t up = 0;
  for (std::size_t i = 1; i < h.epochs.size(); ++i) up += h.epochs[i].objective >= h.epochs[i - 1].objective;
  EXPECT_GE(static_cast<double>(up) / 19.0, 0.9) << up << " of 19 transitions";
}
