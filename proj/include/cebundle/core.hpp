#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cebundle/errors.hpp"

namespace cebundle {

using Tokens = std::vector<std::string>;
using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

namespace detail {

inline bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case '?': case '!': case '"': case ';': case ':':
      return true;
    default:
      return false;
  }
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace detail

/// Lowercases, splits on whitespace and splits . , ? ! " ; : into their own
/// tokens. Apostrophes stay inside words ("a's").
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char c : text) {
    if (detail::is_space(c)) {
      flush();
    } else if (detail::is_split_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(detail::ascii_lower(c));
    }
  }
  flush();
  return out;
}

inline std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline bool is_punct_token(std::string_view tok) {
  return tok.size() == 1 && detail::is_split_punct(tok[0]);
}

inline bool is_article(std::string_view tok) {
  return tok == "a" || tok == "an" || tok == "the";
}

inline Tokens normalize_tokens(const Tokens& tokens) {
  Tokens out;
  for (const auto& t : tokens) {
    if (!is_article(t) && !is_punct_token(t)) out.push_back(t);
  }
  return out;
}

/// Answer normalization used by EM/F1 and bundle answer distinctness.
inline Tokens normalize_answer(std::string_view text) {
  return normalize_tokens(tokenize(text));
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumReserved = 4;

  Vocab() : Vocab(Tokens{}) {}

  /// Reserved tokens first, then `tokens` in order with duplicates dropped.
  explicit Vocab(const Tokens& tokens) {
    for (const char* r : {"<bos>", "<eos>", "<pad>", "<unk>"}) add(r);
    for (const auto& t : tokens) add(t);
  }

  /// Sorted, deduplicated vocabulary over every token of a corpus.
  static Vocab from_corpus(const std::vector<Tokens>& corpus) {
    std::set<std::string> uniq;
    for (const auto& seq : corpus) uniq.insert(seq.begin(), seq.end());
    return Vocab(Tokens(uniq.begin(), uniq.end()));
  }

  std::size_t size() const { return tokens_.size(); }
  const Tokens& tokens() const { return tokens_; }

  const std::string& token_at(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw RangeError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  TokenId index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const {
    return index_.count(std::string(token)) != 0;
  }

  TokenIds encode(const Tokens& tokens) const {
    TokenIds ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(index_of(t));
    return ids;
  }

  Tokens decode(const TokenIds& ids) const {
    Tokens out;
    out.reserve(ids.size());
    for (TokenId id : ids) out.push_back(token_at(id));
    return out;
  }

  static bool is_reserved(TokenId id) {
    return id >= 0 && static_cast<std::size_t>(id) < kNumReserved;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& t) {
    if (index_.count(t)) return;
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  Tokens tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// ---------------------------------------------------------------------------
// Instances and bundles

struct QAInstance {
  std::string id;
  Tokens context;
  Tokens question;
  Tokens answer;
};

enum class BundleSource { mined, generated, topk, synthetic };

inline std::string_view to_string(BundleSource s) {
  switch (s) {
    case BundleSource::mined: return "mined";
    case BundleSource::generated: return "generated";
    case BundleSource::topk: return "topk";
    case BundleSource::synthetic: return "synthetic";
  }
  return "synthetic";
}

inline BundleSource bundle_source_from_string(std::string_view s) {
  if (s == "mined") return BundleSource::mined;
  if (s == "generated") return BundleSource::generated;
  if (s == "topk") return BundleSource::topk;
  if (s == "synthetic") return BundleSource::synthetic;
  throw ArgumentError("unknown bundle source: " + std::string(s));
}

struct GoldPair {
  std::size_t question = 0;
  std::size_t answer = 0;
  bool operator==(const GoldPair&) const = default;
  auto operator<=>(const GoldPair&) const = default;
};

struct InstanceBundle {
  std::string bundle_id;
  Tokens context;
  std::vector<Tokens> questions;
  std::vector<Tokens> answers;
  std::vector<GoldPair> gold;
  BundleSource source = BundleSource::synthetic;

  // Index of the gold answer for question `q`, or -1.
  long gold_answer_of(std::size_t q) const {
    for (const auto& g : gold)
      if (g.question == q) return static_cast<long>(g.answer);
    return -1;
  }
};

struct Dataset {
  std::vector<QAInstance> instances;
  std::vector<InstanceBundle> bundles;
  Vocab vocab;
};

/// Every violated bundle invariant by name; empty means valid.
inline std::vector<std::string> validate_bundle(const InstanceBundle& b) {
  std::vector<std::string> v;
  if (b.gold.empty()) v.emplace_back("no gold pair");

  std::set<std::size_t> seen_q, seen_a;
  bool q_range = false, a_range = false, q_reuse = false, a_reuse = false;
  for (const auto& g : b.gold) {
    if (g.question >= b.questions.size()) q_range = true;
    if (g.answer >= b.answers.size()) a_range = true;
    if (!seen_q.insert(g.question).second) q_reuse = true;
    if (!seen_a.insert(g.answer).second) a_reuse = true;
  }
  if (q_range) v.emplace_back("question index out of range");
  if (a_range) v.emplace_back("answer index out of range");
  if (q_reuse) v.emplace_back("question index reused");
  if (a_reuse) v.emplace_back("answer index reused");

  if (b.questions.size() < 2 && b.answers.size() < 2)
    v.emplace_back("no contrastive element");

  if (std::any_of(b.questions.begin(), b.questions.end(),
                  [](const Tokens& q) { return q.empty(); }))
    v.emplace_back("empty question");
  std::vector<Tokens> norm;
  for (const auto& a : b.answers) norm.push_back(normalize_tokens(a));
  if (std::any_of(norm.begin(), norm.end(), [](const Tokens& a) { return a.empty(); }))
    v.emplace_back("empty answer");

  std::set<Tokens> uq(b.questions.begin(), b.questions.end());
  if (uq.size() != b.questions.size()) v.emplace_back("duplicate question");
  std::set<Tokens> ua(norm.begin(), norm.end());
  if (ua.size() != norm.size()) v.emplace_back("duplicate answer");
  return v;
}

inline bool is_valid_bundle(const InstanceBundle& b) { return validate_bundle(b).empty(); }

/// Flattens each gold pair of each bundle into an instance. Instance ids are
/// `<bundle_id>-q<i>`.
inline std::vector<QAInstance> flatten_bundles(const std::vector<InstanceBundle>& bundles) {
  std::vector<QAInstance> out;
  for (const auto& b : bundles) {
    for (const auto& g : b.gold) {
      out.push_back({b.bundle_id + "-q" + std::to_string(g.question), b.context,
                     b.questions[g.question], b.answers[g.answer]});
    }
  }
  return out;
}

/// Vocabulary over every token of instances and bundles.
inline Vocab build_vocab(const std::vector<QAInstance>& instances,
                         const std::vector<InstanceBundle>& bundles) {
  std::vector<Tokens> corpus;
  for (const auto& i : instances) {
    corpus.push_back(i.context);
    corpus.push_back(i.question);
    corpus.push_back(i.answer);
  }
  for (const auto& b : bundles) {
    corpus.push_back(b.context);
    for (const auto& q : b.questions) corpus.push_back(q);
    for (const auto& a : b.answers) corpus.push_back(a);
  }
  return Vocab::from_corpus(corpus);
}

}  // namespace cebundle
