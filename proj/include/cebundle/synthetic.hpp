#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/rng.hpp"

namespace cebundle {

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t n_train_bundles = 2000;
  std::size_t n_dev_bundles = 500;
  std::size_t entity_pool_size = 12;
  std::size_t attribute_pool_size = 8;
  long value_min = 1, value_max = 20;
  long distractors_min = 0, distractors_max = 2;

  void validate() const {
    if (entity_pool_size < 2 || attribute_pool_size < 2)
      throw ConfigError("entity and attribute pools need at least two members");
    if (value_max - value_min < 1) throw ConfigError("value range needs two distinct values");
    if (distractors_min < 0 || distractors_max < distractors_min)
      throw ConfigError("bad distractor range");
    if (distractors_max > 0 && attribute_pool_size < 2)
      throw ConfigError("distractors need a second attribute");
  }
};

inline std::vector<std::string> entity_pool(std::size_t n) {
  static const char* names[] = {"alice", "bob",   "carol", "dave", "erin",    "frank",
                                "grace", "heidi", "ivan",  "judy", "mallory", "oscar",
                                "peggy", "sybil", "trent", "victor", "walter", "yolanda"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i < std::size(names) ? names[i] : "person" + std::to_string(i + 1));
  return out;
}

inline std::vector<std::string> attribute_pool(std::size_t n) {
  static const char* attrs[] = {"stones", "apples", "coins",  "books",  "stamps", "cards",
                                "shells", "marbles", "pencils", "tickets", "badges", "keys"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i < std::size(attrs) ? attrs[i] : "items" + std::to_string(i + 1));
  return out;
}

/// Every token the template language can produce.
inline Vocab synthetic_vocab(const GeneratorConfig& cfg) {
  Tokens t = {"which", "person", "has", "more", "less", "?", "."};
  for (const auto& e : entity_pool(cfg.entity_pool_size)) t.push_back(e);
  for (const auto& a : attribute_pool(cfg.attribute_pool_size)) t.push_back(a);
  for (long v = cfg.value_min; v <= cfg.value_max; ++v) t.push_back(std::to_string(v));
  return Vocab::from_corpus({t});
}

struct SyntheticData {
  Dataset train, dev;
};

namespace detail {

// Per-attribute entity ranking; the higher-ranked entity always holds the
// larger count, so the answer is a function of who and what is mentioned.
inline std::vector<std::vector<std::size_t>> world_ranking(const GeneratorConfig& cfg) {
  Rng rng(stream_seed(cfg.seed, "world"));
  std::vector<std::vector<std::size_t>> rank(cfg.attribute_pool_size);
  for (auto& r : rank) {
    std::vector<std::size_t> order(cfg.entity_pool_size);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    r.assign(order.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos) r[order[pos]] = pos;
  }
  return rank;
}

inline std::vector<InstanceBundle> synthetic_split(const GeneratorConfig& cfg,
                                                   const std::string& split, std::size_t n) {
  const auto ents = entity_pool(cfg.entity_pool_size);
  const auto attrs = attribute_pool(cfg.attribute_pool_size);
  const auto rank = world_ranking(cfg);
  Rng rng(stream_seed(cfg.seed, split));
  auto value = [&] { return rng.between(cfg.value_min, cfg.value_max); };
  auto sentence = [](Tokens& out, const std::string& e, long v, const std::string& a) {
    out.insert(out.end(), {e, "has", std::to_string(v), a, "."});
  };

  std::vector<InstanceBundle> out;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = rng.below(attrs.size());
    const std::size_t e1 = rng.below(ents.size());
    std::size_t e2 = rng.below(ents.size() - 1);
    if (e2 >= e1) ++e2;
    long hi = value(), lo = value();
    while (lo == hi) lo = value();
    if (lo > hi) std::swap(lo, hi);
    // rank 0 is the top of the ordering
    const bool e1_more = rank[a][e1] < rank[a][e2];
    const long v1 = e1_more ? hi : lo, v2 = e1_more ? lo : hi;

    InstanceBundle b;
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", k + 1);
    b.bundle_id = "syn-" + split + "-" + id;
    sentence(b.context, ents[e1], v1, attrs[a]);
    sentence(b.context, ents[e2], v2, attrs[a]);
    const long nd = rng.between(cfg.distractors_min, cfg.distractors_max);
    for (long d = 0; d < nd; ++d) {
      std::size_t da = rng.below(attrs.size() - 1);
      if (da >= a) ++da;
      const std::size_t de = rng.below(ents.size());
      sentence(b.context, ents[de], value(), attrs[da]);
    }
    b.questions = {{"which", "person", "has", "more", attrs[a], "?"},
                   {"which", "person", "has", "less", attrs[a], "?"}};
    const std::string& more = e1_more ? ents[e1] : ents[e2];
    const std::string& less = e1_more ? ents[e2] : ents[e1];
    b.answers = {{more}, {less}};
    b.gold = {{0, 0}, {1, 1}};
    b.source = BundleSource::synthetic;
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace detail

/// Paired more/less comparison questions over two-entity contexts.
inline SyntheticData generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  SyntheticData d;
  const Vocab vocab = synthetic_vocab(cfg);
  d.train.bundles = detail::synthetic_split(cfg, "train", cfg.n_train_bundles);
  d.train.instances = flatten_bundles(d.train.bundles);
  d.train.vocab = vocab;
  d.dev.bundles = detail::synthetic_split(cfg, "dev", cfg.n_dev_bundles);
  d.dev.instances = flatten_bundles(d.dev.bundles);
  d.dev.vocab = vocab;
  return d;
}

}  // namespace cebundle
