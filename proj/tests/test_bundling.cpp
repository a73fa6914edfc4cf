#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "cebundle/bundling.hpp"
#include "cebundle/synthetic.hpp"
#include "cebundle/train.hpp"
#include "support/oracles.hpp"

using namespace cebundle;

namespace {

const char* kMore = "Is the Marsilea or the Brabejum the genus of more individual species of plants?";
const char* kLess = "Is the Marsilea or the Brabejum the genus of less individual species of plants?";

QAInstance inst(std::string id, const std::string& q, const std::string& a,
                const std::string& ctx = "shared context .") {
  return {std::move(id), tokenize(ctx), tokenize(q), tokenize(a)};
}

const ContrastTables& tables() {
  static const ContrastTables t = default_contrast_tables();
  return t;
}

// Small trained model shared by the sampler tests.
struct Trained {
  SyntheticData data;
  ScorerParams params;
};

const Trained& trained() {
  static const Trained t = [] {
    GeneratorConfig g;
    g.seed = 3;
    g.n_train_bundles = 400;
    g.n_dev_bundles = 50;
    Trained r;
    r.data = generate_synthetic(g);
    TrainConfig c;
    c.seed = 3;
    c.epochs = 8;
    c.loss.variant = LossVariant::mle;
    c.dims = Dims{16, 4, 32, 4};
    r.params = train(c, r.data.train, r.data.train.vocab).params;
    return r;
  }();
  return t;
}

}  // namespace

TEST(Jaccard, MoreLessQuestionPair) {
  // With the question mark as a token the sets share 11 of 13 types; without
  // punctuation it is 10 of 12.
  EXPECT_NEAR(jaccard(tokenize(kMore), tokenize(kLess)), 11.0 / 13.0, 1e-15);
  EXPECT_NEAR(jaccard(normalize_answer(kMore), normalize_answer(kLess)), 9.0 / 11.0, 1e-15);
  auto strip = [](Tokens t) {
    t.erase(std::remove_if(t.begin(), t.end(), [](const std::string& x) { return is_punct_token(x); }),
            t.end());
    return t;
  };
  EXPECT_NEAR(jaccard(strip(tokenize(kMore)), strip(tokenize(kLess))), 10.0 / 12.0, 1e-15);
  EXPECT_GE(jaccard(tokenize(kMore), tokenize(kLess)), 0.8);
}

TEST(Jaccard, BasicProperties) {
  const Tokens a = {"x", "y", "x"}, b = {"y", "z"};
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(jaccard({"p"}, {"q"}), 0.0);
  EXPECT_EQ(jaccard({}, {}), 1.0);
  EXPECT_EQ(jaccard(a, b), jaccard(b, a));
  EXPECT_NEAR(jaccard(a, b), 1.0 / 3.0, 1e-15);
}

TEST(Mining, Examples) {
  const auto found = mine_bundles({inst("1", kMore, "Marsilea"), inst("2", kLess, "Brabejum")});
  ASSERT_EQ(found.size(), 1u);
  EXPECT_EQ(found[0].questions.size(), 2u);
  EXPECT_EQ(found[0].source, BundleSource::mined);
  EXPECT_TRUE(is_valid_bundle(found[0]));

  // jaccard 2/4 = 0.5
  EXPECT_TRUE(mine_bundles({inst("1", "a b c", "x"), inst("2", "a b d", "y")}).empty());
  EXPECT_TRUE(mine_bundles({inst("1", kMore, "Marsilea"), inst("2", kLess, "the marsilea")}).empty());
}

TEST(Mining, OrderInvariantAndRespectsClusterLimit) {
  std::vector<QAInstance> in;
  for (int i = 0; i < 6; ++i)
    in.push_back(inst("q" + std::to_string(i),
                      "which person owns the most red shiny stones w" + std::to_string(i) + " ?",
                      "ans" + std::to_string(i)));
  in.push_back(inst("z", "where is the library ?", "downtown"));
  const auto a = mine_bundles(in);
  std::reverse(in.begin(), in.end());
  const auto b = mine_bundles(in);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].bundle_id, b[i].bundle_id);
    EXPECT_EQ(a[i].questions, b[i].questions);
  }
  for (const auto& bb : a) {
    EXPECT_LE(bb.questions.size(), 4u);
    EXPECT_TRUE(is_valid_bundle(bb));
  }
  EXPECT_THROW(mine_bundles(in, MiningConfig{0.0, 4}), ConfigError);
}

TEST(Mining, CorpusGroupsByContext) {
  const auto out = mine_corpus({inst("1", kMore, "Marsilea", "ctx one"),
                                inst("2", kLess, "Brabejum", "ctx two")});
  EXPECT_TRUE(out.empty());
}

TEST(ExtractChoices, Examples) {
  EXPECT_EQ(extract_choices(tokenize("which animal is faster , turtle or hare ?")),
            std::make_pair(Tokens{"turtle"}, Tokens{"hare"}));
  EXPECT_FALSE(extract_choices(tokenize("where was he born ?")));
  EXPECT_FALSE(extract_choices(tokenize("is it a or a ?")));
  EXPECT_EQ(extract_choices(tokenize(kMore)),
            std::make_pair(Tokens{"marsilea"}, Tokens{"brabejum"}));
  EXPECT_EQ(extract_choices(tokenize("are rock a's wavelengths shorter or longer than rock b's ?")),
            std::make_pair(Tokens{"shorter"}, Tokens{"longer"}));
  EXPECT_EQ(extract_choices(tokenize("who is older , the king or the queen ?")),
            std::make_pair(Tokens{"king"}, Tokens{"queen"}));
}

TEST(GenContrast, WorkedExamples) {
  auto g = gen_contrast_questions(inst("a", "which animal is faster , turtle or hare ?", "turtle"), tables());
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].question, tokenize("which animal is slower , turtle or hare ?"));
  EXPECT_EQ(g[0].answer, Tokens{"hare"});
  EXPECT_EQ(g[0].tag, HeuristicTag::superlative_swap);

  g = gen_contrast_questions(
      inst("b", "are rock a's wavelengths shorter or longer than rock b's ?", "shorter"), tables());
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].question, tokenize("are rock b's wavelengths shorter or longer than rock a's ?"));
  EXPECT_EQ(g[0].answer, Tokens{"longer"});
  EXPECT_EQ(g[0].tag, HeuristicTag::np_swap);

  g = gen_contrast_questions(inst("c", "which team played at home , x or y ?", "x"), tables());
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].question, tokenize("which team did not play at home , x or y ?"));
  EXPECT_EQ(g[0].answer, Tokens{"y"});
  EXPECT_EQ(g[0].tag, HeuristicTag::verb_negation);
}

TEST(GenContrast, MoreLessPair) {
  const auto g = gen_contrast_questions(inst("m", kMore, "Marsilea"), tables());
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].question, tokenize(kLess));
  EXPECT_EQ(g[0].answer, Tokens{"brabejum"});
}

TEST(GenContrast, PreconditionsAndInvariants) {
  EXPECT_TRUE(gen_contrast_questions(inst("a", "where was he born ?", "paris"), tables()).empty());
  EXPECT_TRUE(gen_contrast_questions(inst("a", "which is faster , x or y ?", "z"), tables()).empty());
  const std::vector<QAInstance> cases = {
      inst("1", "who was taller and older , ann or bob ?", "bob"),
      inst("2", "which city hosted more games , rome or oslo ?", "oslo"),
      inst("3", "who arrived earlier , the cat or the dog ?", "the dog"),
      inst("4", "is the bridge longer or shorter than the tunnel ?", "longer")};
  for (const auto& c : cases) {
    const auto ch = extract_choices(c.question);
    ASSERT_TRUE(ch) << join(c.question);
    const auto gens = gen_contrast_questions(c, tables());
    EXPECT_FALSE(gens.empty()) << join(c.question);
    std::set<Tokens> seen;
    for (const auto& g : gens) {
      EXPECT_NE(g.question, c.question);
      EXPECT_TRUE(seen.insert(g.question).second);
      EXPECT_TRUE(g.answer == ch->first || g.answer == ch->second);
      EXPECT_NE(normalize_tokens(g.answer), normalize_tokens(c.answer));
    }
    for (const auto& b : augment_instance(c, tables())) EXPECT_TRUE(is_valid_bundle(b));
  }
}

TEST(ContrastTables, PastTenseRules) {
  const auto& t = tables();
  EXPECT_EQ(t.past_to_base("played"), "play");
  EXPECT_EQ(t.past_to_base("carried"), "carry");
  EXPECT_EQ(t.past_to_base("stopped"), "stop");
  EXPECT_EQ(t.past_to_base("won"), "win");
  EXPECT_EQ(t.past_to_base("liked"), "like");
  EXPECT_FALSE(t.past_to_base("hundred"));
  EXPECT_FALSE(t.past_to_base("home"));
  EXPECT_EQ(t.antonym_of("slower"), "faster");
  EXPECT_EQ(t.antonym_of("shorter"), "taller");
}

TEST(ContrastTables, ResourceFileMatchesDefaults) {
  EXPECT_EQ(load_contrast_tables(default_contrast_tables_path()), default_contrast_tables());
  EXPECT_EQ(contrast_tables_from_json(to_json(tables())), tables());
}

TEST(TopK, GoldOnlyPosteriorYieldsNoBundle) {
  const Vocab v(Tokens{"g", "c", "o"});
  std::vector<double> p0(7, 0.0), p1(7, 0.0);
  p0[4] = 1.0;
  p1[Vocab::kEos] = 1.0;
  const auto p = oracle::two_step_params(7, p0, p1);
  const QAInstance q{"only", {"o"}, {"o"}, {"g"}};
  SamplingConfig cfg;
  cfg.k = 1;
  EXPECT_FALSE(topk_bundle(p, v, q, cfg));
  const auto r = topk_bundles(p, v, {q}, cfg);
  EXPECT_TRUE(r.bundles.empty());
  EXPECT_EQ(r.skipped_ids, std::vector<std::string>{"only"});
}

TEST(TopK, TwoCandidatePosterior) {
  // Step 0 puts 0.7 on g and 0.3 on c; step 1 always ends.
  const Vocab v(Tokens{"g", "c", "o"});
  std::vector<double> p0(7, 0.0), p1(7, 0.0);
  p0[4] = 0.7;
  p0[5] = 0.3;
  p1[Vocab::kEos] = 1.0;
  const auto p = oracle::two_step_params(7, p0, p1);
  SamplingConfig cfg;
  cfg.k = 1;
  cfg.nucleus_p = 1.0;
  cfg.nucleus_steps = 1;
  const auto b = topk_bundle(p, v, {"i", {"o"}, {"o"}, {"g"}}, cfg);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->answers, (std::vector<Tokens>{{"g"}, {"c"}}));
  EXPECT_EQ(b->gold, (std::vector<GoldPair>{{0, 0}}));
  EXPECT_TRUE(is_valid_bundle(*b));
}

TEST(TopK, TrainedModelNegativesAreCompetingEntities) {
  const auto& t = trained();
  const auto& vocab = t.data.train.vocab;
  SamplingConfig cfg;
  cfg.k = 1;
  cfg.seed = 9;
  const auto pool = entity_pool(GeneratorConfig{}.entity_pool_size);
  const std::set<std::string> entities(pool.begin(), pool.end());
  std::size_t total = 0, other_entity = 0, named = 0;
  for (const auto& i : t.data.dev.instances) {
    const auto b = topk_bundle(t.params, vocab, i, cfg);
    if (!b) continue;
    ++total;
    ASSERT_TRUE(is_valid_bundle(*b));
    ASSERT_EQ(b->answers.size(), 2u);
    EXPECT_NE(normalize_tokens(b->answers[1]), normalize_tokens(i.answer));
    // The other entity is the one of the two compared in the context that is
    // not the gold answer: the first token of the other sentence.
    const auto& ctx = i.context;
    const Tokens e1 = {ctx[0]};
    const auto dot = std::find(ctx.begin(), ctx.end(), ".");
    const Tokens e2 = {*(dot + 1)};
    const Tokens other = i.answer == e1 ? e2 : e1;
    if (b->answers[1] == other) ++other_entity;
    if (b->answers[1].size() == 1 && entities.count(b->answers[1][0])) ++named;
  }
  ASSERT_GT(total, 0u);
  // Every negative is a competing entity; the one in the context is favoured
  // far above the 1-in-11 chance rate.
  EXPECT_EQ(named, total);
  EXPECT_GE(static_cast<double>(other_entity) / static_cast<double>(total), 0.4)
      << other_entity << " of " << total;
}

TEST(TopK, DeterministicForSeed) {
  const auto& t = trained();
  SamplingConfig cfg;
  cfg.k = 3;
  cfg.seed = 4;
  const auto a = topk_bundles(t.params, t.data.train.vocab, t.data.dev.instances, cfg);
  const auto b = topk_bundles(t.params, t.data.train.vocab, t.data.dev.instances, cfg);
  ASSERT_EQ(a.bundles.size(), b.bundles.size());
  for (std::size_t i = 0; i < a.bundles.size(); ++i) {
    EXPECT_EQ(a.bundles[i].answers, b.bundles[i].answers);
    EXPECT_TRUE(is_valid_bundle(a.bundles[i]));
  }
  EXPECT_EQ(a.skipped_ids, b.skipped_ids);
}
