#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/io.hpp"

namespace cebundle {

inline int exact_match(const Tokens& pred, const Tokens& gold) {
  return normalize_tokens(pred) == normalize_tokens(gold) ? 1 : 0;
}

inline int exact_match(std::string_view pred, std::string_view gold) {
  return exact_match(tokenize(pred), tokenize(gold));
}

/// F1 over normalized token multisets.
inline double token_f1(const Tokens& pred, const Tokens& gold) {
  const Tokens p = normalize_tokens(pred), g = normalize_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, long> counts;
  for (const auto& t : g) ++counts[t];
  long common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double prec = static_cast<double>(common) / static_cast<double>(p.size());
  const double rec = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * prec * rec / (prec + rec);
}

inline double token_f1(std::string_view pred, std::string_view gold) {
  return token_f1(tokenize(pred), tokenize(gold));
}

/// 1 iff every question of the bundle was answered exactly.
inline int consistency(const std::vector<int>& bundle_em) {
  if (bundle_em.empty()) throw ArgumentError("consistency of an empty bundle");
  for (int e : bundle_em)
    if (e != 1) return 0;
  return 1;
}

/// -sum p log p over at most ten raw candidate probabilities.
inline double entropy_top10(const std::vector<double>& probs) {
  if (probs.size() > 10) throw ArgumentError("entropy_top10 takes at most ten probabilities");
  double h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("probability outside [0, 1]");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

inline double top2_ratio(double p1, double p2) {
  if (!(p2 > 0.0)) throw ArgumentError("top2_ratio needs p2 > 0");
  if (p1 < p2) throw ArgumentError("top2_ratio needs p1 >= p2");
  return std::log(p1 / p2);
}

/// top2_ratio from log-probabilities; stays finite when p underflows.
inline double top2_ratio_log(double logp1, double logp2) {
  if (!std::isfinite(logp2)) throw ArgumentError("top2_ratio needs p2 > 0");
  if (logp1 < logp2) throw ArgumentError("top2_ratio needs p1 >= p2");
  return logp1 - logp2;
}

// Floor on 1 - p1 when bounding the ratio for a lone sampled answer.
inline constexpr double kTop2UnseenFloor = 1e-12;

struct MetricsReport {
  double em = 0.0, f1 = 0.0, consistency = 0.0;
  double entropy10_mean = 0.0, top2_ratio_mean = 0.0;
  std::size_t n_instances = 0, n_bundles = 0, n_diagnosed = 0;
};

inline json to_json(const MetricsReport& r) {
  return json{{"em", r.em},
              {"f1", r.f1},
              {"consistency", r.consistency},
              {"entropy10_mean", r.entropy10_mean},
              {"top2_ratio_mean", r.top2_ratio_mean},
              {"n", json{{"instances", r.n_instances},
                         {"bundles", r.n_bundles},
                         {"diagnosed", r.n_diagnosed}}}};
}

struct Diagnostics {
  std::vector<std::string> ids;
  std::vector<double> entropy10, top2_ratio;
  double entropy10_mean = 0.0, top2_ratio_mean = 0.0;
};

inline json to_json(const Diagnostics& d) {
  return json{{"entropy10_mean", d.entropy10_mean},
              {"top2_ratio_mean", d.top2_ratio_mean},
              {"n", d.ids.size()},
              {"ids", d.ids},
              {"entropy10", d.entropy10},
              {"top2_ratio", d.top2_ratio}};
}

}  // namespace cebundle
