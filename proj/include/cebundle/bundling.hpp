#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/io.hpp"
#include "cebundle/rng.hpp"
#include "cebundle/scorer.hpp"

#ifndef CEBUNDLE_RESOURCE_DIR
#define CEBUNDLE_RESOURCE_DIR "resources"
#endif

namespace cebundle {

// ---------------------------------------------------------------------------
// Question mining

/// Set Jaccard index; 1 when both are empty.
inline double jaccard(const Tokens& a, const Tokens& b) {
  std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

struct MiningConfig {
  double jaccard_threshold = 0.8;
  std::size_t max_cluster_size = 4;

  void validate() const {
    if (!(jaccard_threshold > 0.0 && jaccard_threshold <= 1.0))
      throw ConfigError("jaccard threshold must be in (0, 1]");
    if (max_cluster_size < 2) throw ConfigError("max cluster size must be at least 2");
  }
};

/// Greedy single-link clustering of questions over one shared context.
/// Instances are visited in id order; each joins the first open cluster
/// holding a member within the threshold. Clusters with a repeated answer
/// (after normalization) and singletons are dropped.
inline std::vector<InstanceBundle> mine_bundles(std::vector<QAInstance> instances,
                                                const MiningConfig& cfg = {}) {
  cfg.validate();
  std::sort(instances.begin(), instances.end(),
            [](const QAInstance& x, const QAInstance& y) { return x.id < y.id; });

  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    bool placed = false;
    for (auto& c : clusters) {
      if (c.size() >= cfg.max_cluster_size) continue;
      for (std::size_t m : c) {
        if (jaccard(instances[m].question, instances[i].question) >= cfg.jaccard_threshold) {
          c.push_back(i);
          placed = true;
          break;
        }
      }
      if (placed) break;
    }
    if (!placed) clusters.push_back({i});
  }

  std::vector<InstanceBundle> out;
  for (const auto& c : clusters) {
    if (c.size() < 2) continue;
    InstanceBundle b;
    b.bundle_id = "mined-" + instances[c.front()].id;
    b.context = instances[c.front()].context;
    b.source = BundleSource::mined;
    for (std::size_t k = 0; k < c.size(); ++k) {
      b.questions.push_back(instances[c[k]].question);
      b.answers.push_back(instances[c[k]].answer);
      b.gold.push_back({k, k});
    }
    if (is_valid_bundle(b)) out.push_back(std::move(b));
  }
  return out;
}

/// Mines each group of instances sharing a context; output ordered by
/// bundle id.
inline std::vector<InstanceBundle> mine_corpus(const std::vector<QAInstance>& instances,
                                               const MiningConfig& cfg = {}) {
  std::map<Tokens, std::vector<QAInstance>> by_context;
  for (const auto& i : instances) by_context[i.context].push_back(i);
  std::vector<InstanceBundle> out;
  for (auto& [ctx, group] : by_context) {
    auto bs = mine_bundles(std::move(group), cfg);
    out.insert(out.end(), std::make_move_iterator(bs.begin()), std::make_move_iterator(bs.end()));
  }
  std::sort(out.begin(), out.end(), [](const InstanceBundle& x, const InstanceBundle& y) {
    return x.bundle_id < y.bundle_id;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive question generation

enum class HeuristicTag { superlative_swap, verb_negation, np_swap };

inline std::string_view to_string(HeuristicTag t) {
  switch (t) {
    case HeuristicTag::superlative_swap: return "superlative_swap";
    case HeuristicTag::verb_negation: return "verb_negation";
    case HeuristicTag::np_swap: return "np_swap";
  }
  return "superlative_swap";
}

/// Antonym pairs and verb inflection tables.
struct ContrastTables {
  std::vector<std::pair<std::string, std::string>> antonyms;
  std::map<std::string, std::string> irregular_past;  // past form -> base form
  std::set<std::string> not_verbs;                    // "-ed" words that are not past tenses

  // First listed pair wins when a word has several antonyms.
  std::optional<std::string> antonym_of(const std::string& w) const {
    for (const auto& [x, y] : antonyms) {
      if (w == x) return y;
      if (w == y) return x;
    }
    return std::nullopt;
  }

  /// Base form when `w` looks like a past-tense verb.
  std::optional<std::string> past_to_base(const std::string& w) const {
    if (auto it = irregular_past.find(w); it != irregular_past.end()) return it->second;
    if (not_verbs.count(w) || w.size() < 4 || w.compare(w.size() - 2, 2, "ed") != 0)
      return std::nullopt;
    if (w.size() > 4 && w.compare(w.size() - 3, 3, "ied") == 0)
      return w.substr(0, w.size() - 3) + "y";
    std::string stem = w.substr(0, w.size() - 2);
    const char last = stem.back();
    if (stem.size() >= 3 && last == stem[stem.size() - 2] &&
        std::string_view("bgmnprt").find(last) != std::string_view::npos)
      stem.pop_back();
    return stem;
  }

  bool operator==(const ContrastTables&) const = default;
};

inline ContrastTables default_contrast_tables() {
  ContrastTables t;
  t.antonyms = {{"faster", "slower"},  {"taller", "shorter"}, {"more", "less"},
                {"larger", "smaller"}, {"longer", "shorter"}, {"higher", "lower"},
                {"older", "younger"},  {"heavier", "lighter"}, {"earlier", "later"},
                {"bigger", "smaller"}};
  t.irregular_past = {
      {"ate", "eat"},       {"became", "become"}, {"began", "begin"},   {"bought", "buy"},
      {"broke", "break"},   {"brought", "bring"}, {"built", "build"},   {"came", "come"},
      {"caught", "catch"},  {"chose", "choose"},  {"did", "do"},        {"drew", "draw"},
      {"drove", "drive"},   {"fell", "fall"},     {"felt", "feel"},     {"flew", "fly"},
      {"fought", "fight"},  {"found", "find"},    {"gave", "give"},     {"got", "get"},
      {"grew", "grow"},     {"had", "have"},      {"heard", "hear"},    {"held", "hold"},
      {"kept", "keep"},     {"knew", "know"},     {"led", "lead"},      {"left", "leave"},
      {"lost", "lose"},     {"made", "make"},     {"met", "meet"},      {"paid", "pay"},
      {"ran", "run"},       {"rose", "rise"},     {"said", "say"},      {"sang", "sing"},
      {"sat", "sit"},       {"saw", "see"},       {"sent", "send"},     {"sold", "sell"},
      {"spent", "spend"},   {"spoke", "speak"},   {"stood", "stand"},   {"swam", "swim"},
      {"taught", "teach"},  {"thought", "think"}, {"threw", "throw"},   {"told", "tell"},
      {"took", "take"},     {"went", "go"},       {"won", "win"},       {"wrote", "write"},
      {"liked", "like"},    {"lived", "live"},    {"moved", "move"},    {"scored", "score"},
      {"used", "use"},      {"released", "release"}, {"produced", "produce"},
      {"directed", "direct"}, {"founded", "found"}};
  t.not_verbs = {"bed",   "bleed",  "breed",  "deed",    "feed",  "greed",  "hundred",
                 "kindred", "naked", "need",  "red",     "reed",  "sacred", "seed",
                 "shed",  "shred",  "sled",   "speed",   "weed",  "wicked", "rugged",
                 "ragged", "jagged", "crooked", "beloved"};
  return t;
}

inline json to_json(const ContrastTables& t) {
  json ant = json::array();
  for (const auto& [x, y] : t.antonyms) ant.push_back(json::array({x, y}));
  json irr = json::object();
  for (const auto& [k, v] : t.irregular_past) irr[k] = v;
  return json{{"antonyms", ant}, {"irregular_past", irr}, {"not_verbs", t.not_verbs}};
}

inline ContrastTables contrast_tables_from_json(const json& j) {
  ContrastTables t;
  for (const auto& p : j.at("antonyms")) {
    if (!p.is_array() || p.size() != 2) throw ArgumentError("antonym entries must be pairs");
    t.antonyms.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  }
  for (const auto& [k, v] : j.at("irregular_past").items()) t.irregular_past[k] = v.get<std::string>();
  for (const auto& w : j.value("not_verbs", json::array())) t.not_verbs.insert(w.get<std::string>());
  return t;
}

inline ContrastTables load_contrast_tables(const std::string& path) {
  try {
    return contrast_tables_from_json(json::parse(detail::read_file(path)));
  } catch (const json::exception& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

inline std::string default_contrast_tables_path() {
  return std::string(CEBUNDLE_RESOURCE_DIR) + "/contrast_tables.json";
}

/// The two answer choices of a question and where they sit.
struct ChoiceSpans {
  std::size_t a_begin = 0, a_end = 0, b_begin = 0, b_end = 0;
  bool than_form = false;

  bool covers(std::size_t i) const {
    return (i >= a_begin && i < a_end) || (i >= b_begin && i < b_end);
  }
};

namespace detail {

inline bool is_choice_stop(const std::string& t) { return t == "or" || t == "," || t == "?"; }

inline std::optional<ChoiceSpans> find_choices(const Tokens& q) {
  auto or_it = std::find(q.begin(), q.end(), "or");
  if (or_it == q.end()) return std::nullopt;
  const std::size_t o = static_cast<std::size_t>(or_it - q.begin());
  if (o == 0 || o + 1 >= q.size()) return std::nullopt;
  const std::size_t n = q.size();
  auto qmark = [&](std::size_t from) {
    std::size_t e = from;
    while (e < n && !is_choice_stop(q[e])) ++e;
    return e;
  };

  ChoiceSpans s;
  // "... C1 or C2 than NP ?"
  if (o + 2 < n && q[o + 2] == "than" && !is_choice_stop(q[o - 1]) && !is_choice_stop(q[o + 1])) {
    s = {o - 1, o, o + 1, o + 2, true};
    return s;
  }
  // "is the A or the B ..."
  if (q[o + 1] == "the") {
    std::size_t a0 = o;
    while (a0 > 0 && q[a0 - 1] != "the" && !is_choice_stop(q[a0 - 1])) --a0;
    if (a0 > 0 && q[a0 - 1] == "the" && a0 < o) {
      std::size_t b1 = o + 2;
      while (b1 < n && !is_choice_stop(q[b1]) && q[b1] != "the") ++b1;
      if (b1 > o + 2) {
        s = {a0, o, o + 2, b1, false};
        return s;
      }
    }
  }
  // "... , A or B ?"
  auto comma = std::find(std::make_reverse_iterator(or_it), q.rend(), ",");
  if (comma != q.rend()) {
    const std::size_t a0 = static_cast<std::size_t>(q.rend() - comma);
    const std::size_t b1 = qmark(o + 1);
    if (a0 < o && b1 > o + 1 && b1 < n && q[b1] == "?") {
      s = {a0, o, o + 1, b1, false};
      return s;
    }
  }
  // "... A or B ?" with A as long as B
  const std::size_t b1 = qmark(o + 1);
  if (b1 > o + 1 && b1 < n && q[b1] == "?") {
    const std::size_t len = b1 - (o + 1);
    if (len <= o) {
      const std::size_t a0 = o - len;
      bool clean = true;
      for (std::size_t i = a0; i < o; ++i) clean = clean && !is_choice_stop(q[i]);
      if (clean) {
        s = {a0, o, o + 1, b1, false};
        return s;
      }
    }
  }
  return std::nullopt;
}

inline Tokens slice(const Tokens& q, std::size_t b, std::size_t e) {
  return Tokens(q.begin() + static_cast<long>(b), q.begin() + static_cast<long>(e));
}

}  // namespace detail

inline std::optional<ChoiceSpans> locate_choices(const Tokens& question) {
  auto s = detail::find_choices(question);
  if (!s) return std::nullopt;
  if (detail::slice(question, s->a_begin, s->a_end) == detail::slice(question, s->b_begin, s->b_end))
    return std::nullopt;
  return s;
}

/// The two answer options named in a multiple-choice question.
inline std::optional<std::pair<Tokens, Tokens>> extract_choices(const Tokens& question) {
  auto s = locate_choices(question);
  if (!s) return std::nullopt;
  return std::make_pair(detail::slice(question, s->a_begin, s->a_end),
                        detail::slice(question, s->b_begin, s->b_end));
}

struct ContrastQuestion {
  Tokens question;
  Tokens answer;
  HeuristicTag tag;
};

/// Minimally edited questions whose answer is the other choice.
inline std::vector<ContrastQuestion> gen_contrast_questions(const QAInstance& inst,
                                                            const ContrastTables& tables) {
  const Tokens& q = inst.question;
  auto s = locate_choices(q);
  if (!s) return {};
  const Tokens ca = detail::slice(q, s->a_begin, s->a_end);
  const Tokens cb = detail::slice(q, s->b_begin, s->b_end);
  const Tokens gold = normalize_tokens(inst.answer);
  Tokens other;
  if (gold == normalize_tokens(ca)) other = cb;
  else if (gold == normalize_tokens(cb)) other = ca;
  else return {};

  std::vector<ContrastQuestion> out;
  auto emit = [&](Tokens nq, HeuristicTag tag) {
    if (nq == q) return;
    for (const auto& o : out)
      if (o.question == nq) return;
    out.push_back({std::move(nq), other, tag});
  };

  for (std::size_t i = 0; i < q.size(); ++i) {
    if (s->covers(i)) continue;
    if (auto ant = tables.antonym_of(q[i])) {
      Tokens nq = q;
      nq[i] = *ant;
      emit(std::move(nq), HeuristicTag::superlative_swap);
      break;
    }
  }

  for (std::size_t i = 1; i < q.size(); ++i) {
    if (s->covers(i)) continue;
    if (auto base = tables.past_to_base(q[i])) {
      Tokens nq = detail::slice(q, 0, i);
      nq.push_back("did");
      nq.push_back("not");
      nq.push_back(*base);
      nq.insert(nq.end(), q.begin() + static_cast<long>(i + 1), q.end());
      emit(std::move(nq), HeuristicTag::verb_negation);
      break;
    }
  }

  // "aux NP1 ... C1 or C2 than NP2 ?": exchange NP1 and NP2.
  if (s->than_form && q.back() == "?") {
    const std::size_t np2_begin = s->b_end + 1, np2_end = q.size() - 1;
    const std::size_t len = np2_end - np2_begin;
    if (len > 0 && 1 + len <= s->a_begin) {
      const Tokens np1 = detail::slice(q, 1, 1 + len), np2 = detail::slice(q, np2_begin, np2_end);
      if (np1 != np2) {
        Tokens nq = q;
        std::copy(np2.begin(), np2.end(), nq.begin() + 1);
        std::copy(np1.begin(), np1.end(), nq.begin() + static_cast<long>(np2_begin));
        emit(std::move(nq), HeuristicTag::np_swap);
      }
    }
  }
  return out;
}

/// One generated bundle per contrast question: the source pair and the
/// generated pair, with opposite answers.
inline std::vector<InstanceBundle> augment_instance(const QAInstance& inst,
                                                    const ContrastTables& tables) {
  std::vector<InstanceBundle> out;
  const auto gens = gen_contrast_questions(inst, tables);
  for (std::size_t k = 0; k < gens.size(); ++k) {
    InstanceBundle b;
    b.bundle_id = "gen-" + inst.id + "-" + std::to_string(k);
    b.context = inst.context;
    b.questions = {inst.question, gens[k].question};
    b.answers = {inst.answer, gens[k].answer};
    b.gold = {{0, 0}, {1, 1}};
    b.source = BundleSource::generated;
    if (is_valid_bundle(b)) out.push_back(std::move(b));
  }
  return out;
}

inline std::vector<InstanceBundle> augment_instances(const std::vector<QAInstance>& instances,
                                                     const ContrastTables& tables) {
  std::vector<InstanceBundle> out;
  for (const auto& i : instances) {
    auto bs = augment_instance(i, tables);
    out.insert(out.end(), std::make_move_iterator(bs.begin()), std::make_move_iterator(bs.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diverse top-k negative sampling

struct SamplingConfig {
  std::size_t k = 2;
  double nucleus_p = 0.9;
  std::size_t nucleus_steps = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw ConfigError("k must be at least 1");
    if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw ConfigError("nucleus_p must be in (0, 1]");
    if (nucleus_steps < 1) throw ConfigError("nucleus_steps must be at least 1");
  }
};

struct ScoredCandidate {
  TokenIds tokens;
  double log_score = 0.0;  // f_LN
};

/// Over-generates up to 4k answers for (context, question): the first
/// nucleus_steps tokens are drawn from the nucleus, never repeating an
/// already drawn prefix, and the rest are greedy. Malformed answers are
/// dropped, duplicates (after normalization) removed, and, when `gold` is
/// given, answers equal to it pruned. Sorted by f_LN, highest first.
inline std::vector<ScoredCandidate> sample_candidates(const ScorerParams& p, const Vocab& vocab,
                                                      const TokenIds& context,
                                                      const TokenIds& question,
                                                      const SamplingConfig& cfg, Rng& rng,
                                                      std::size_t attempts,
                                                      const Tokens* gold = nullptr) {
  cfg.validate();
  const auto enc = encode(p, context, question);
  const std::size_t L = p.dims.max_len;
  std::set<TokenIds> drawn_prefixes;
  std::set<Tokens> seen;
  std::vector<ScoredCandidate> out;
  std::vector<double> x, h, logits, lp;

  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    TokenIds seq;
    TokenId prev = Vocab::kBos;
    bool ended = false, failed = false;
    for (std::size_t t = 0; t < L; ++t) {
      detail::decoder_step(p, enc, prev, t, x, h, logits);
      detail::log_softmax(logits, lp);
      TokenId next;
      if (t < cfg.nucleus_steps) {
        std::vector<TokenId> order(lp.size());
        for (std::size_t v = 0; v < order.size(); ++v) order[v] = static_cast<TokenId>(v);
        std::stable_sort(order.begin(), order.end(),
                         [&](TokenId a, TokenId b) { return lp[a] > lp[b]; });
        std::vector<TokenId> nucleus;
        double mass = 0.0;
        for (TokenId v : order) {
          nucleus.push_back(v);
          mass += std::exp(lp[v]);
          if (mass >= cfg.nucleus_p) break;
        }
        const bool last_sampled = t + 1 == cfg.nucleus_steps;
        std::vector<TokenId> allowed;
        for (TokenId v : nucleus) {
          TokenIds pre = seq;
          pre.push_back(v);
          if ((last_sampled || v == Vocab::kEos) && drawn_prefixes.count(pre)) continue;
          allowed.push_back(v);
        }
        if (allowed.empty()) {
          failed = true;
          break;
        }
        double z = 0.0;
        for (TokenId v : allowed) z += std::exp(lp[v]);
        if (!(z > 0.0)) {
          failed = true;
          break;
        }
        double u = rng.uniform01() * z;
        next = allowed.back();
        for (TokenId v : allowed) {
          u -= std::exp(lp[v]);
          if (u < 0.0) {
            next = v;
            break;
          }
        }
        if (last_sampled || next == Vocab::kEos) {
          TokenIds pre = seq;
          pre.push_back(next);
          drawn_prefixes.insert(pre);
        }
      } else {
        next = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      }
      if (next == Vocab::kEos) {
        ended = true;
        break;
      }
      seq.push_back(next);
      prev = next;
    }
    if (failed || !ended || seq.empty()) continue;
    if (std::any_of(seq.begin(), seq.end(), [](TokenId id) { return Vocab::is_reserved(id); }))
      continue;
    Tokens norm = normalize_tokens(vocab.decode(seq));
    if (norm.empty()) continue;
    if (gold && norm == normalize_tokens(*gold)) continue;
    if (!seen.insert(norm).second) continue;
    out.push_back({seq, compat(p, CompatMode::ln, context, question, seq)});
  }
  std::stable_sort(out.begin(), out.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    return a.log_score > b.log_score;
  });
  return out;
}

/// One-question bundle: the gold answer plus the k most probable distinct
/// sampled negatives. Empty when no negative survives pruning.
inline std::optional<InstanceBundle> topk_bundle(const ScorerParams& p, const Vocab& vocab,
                                                 const QAInstance& inst,
                                                 const SamplingConfig& cfg) {
  cfg.validate();
  Rng rng(stream_seed(cfg.seed, inst.id));
  auto cands = sample_candidates(p, vocab, vocab.encode(inst.context), vocab.encode(inst.question),
                                 cfg, rng, 4 * cfg.k, &inst.answer);
  if (cands.empty()) return std::nullopt;
  if (cands.size() > cfg.k) cands.resize(cfg.k);
  InstanceBundle b;
  b.bundle_id = "topk-" + inst.id;
  b.context = inst.context;
  b.questions = {inst.question};
  b.answers = {inst.answer};
  for (const auto& c : cands) b.answers.push_back(vocab.decode(c.tokens));
  b.gold = {{0, 0}};
  b.source = BundleSource::topk;
  return b;
}

struct TopkResult {
  std::vector<InstanceBundle> bundles;
  std::vector<std::string> skipped_ids;
};

inline TopkResult topk_bundles(const ScorerParams& p, const Vocab& vocab,
                               const std::vector<QAInstance>& instances,
                               const SamplingConfig& cfg) {
  TopkResult r;
  for (const auto& i : instances) {
    if (auto b = topk_bundle(p, vocab, i, cfg)) r.bundles.push_back(std::move(*b));
    else r.skipped_ids.push_back(i.id);
  }
  return r;
}

}  // namespace cebundle
