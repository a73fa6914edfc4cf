#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cebundle/inference.hpp"
#include "cebundle/losses.hpp"
#include "cebundle/rng.hpp"
#include "cebundle/scorer.hpp"

// Randomized property suites, runnable from the CLI.

namespace cebundle {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest observed error (suite-specific)
  double seconds = 0.0;
  std::string detail;
};

namespace detail {

inline TokenIds random_tokens(Rng& rng, std::size_t vocab, std::size_t lo, std::size_t hi) {
  TokenIds t(static_cast<std::size_t>(rng.between(static_cast<long>(lo), static_cast<long>(hi))));
  for (auto& id : t)
    id = static_cast<TokenId>(Vocab::kNumReserved + rng.below(vocab - Vocab::kNumReserved));
  return t;
}

// Random bundle over content tokens: distinct questions and answers, gold on
// the diagonal.
inline EncodedBundle random_bundle(Rng& rng, std::size_t vocab, std::size_t rows,
                                   std::size_t cols, std::size_t n_gold, std::size_t max_answer) {
  EncodedBundle b;
  b.context = random_tokens(rng, vocab, 1, 4);
  auto distinct = [&](std::vector<TokenIds>& out, std::size_t n, std::size_t lo, std::size_t hi) {
    while (out.size() < n) {
      auto t = random_tokens(rng, vocab, lo, hi);
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
  };
  distinct(b.questions, rows, 1, 3);
  distinct(b.answers, cols, 1, max_answer);
  for (std::size_t k = 0; k < n_gold; ++k) b.gold.push_back({k, k});
  return b;
}

inline ScorerParams random_params(Rng& rng, const Dims& d, std::size_t vocab, double scale) {
  auto p = ScorerParams::zeros(d, vocab);
  p.for_each_tensor([&](std::string_view, std::vector<double>& t) {
    for (double& v : t) v = rng.uniform(-scale, scale);
  });
  return p;
}

inline LogScoreMatrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  LogScoreMatrix m(r, c);
  for (double& v : m.values) v = scale * rng.normal();
  for (std::size_t k = 0; k < std::min(r, c); ++k) m.gold.push_back({k, k});
  return m;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Analytic gradients of every loss variant and compat mode against central
/// differences.
inline SuiteResult verify_gradients(std::uint64_t seed, std::size_t trials = 50) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "gradients";
  const Dims dims{4, 2, 5, 4};
  const std::size_t V = 10;
  const double h = 1e-4;
  struct Case {
    LossVariant v;
    bool per_token;
  };
  const Case cases[] = {{LossVariant::mle, true},    {LossVariant::ul, true},
                        {LossVariant::ul, false},    {LossVariant::ce_ac, true},
                        {LossVariant::ce_qc, true},  {LossVariant::ce_tw, true},
                        {LossVariant::ce_ml, true},  {LossVariant::ce_jt, true},
                        {LossVariant::ce_fp, true}};
  Rng rng(stream_seed(seed, "verify-gradients"));
  for (const auto& c : cases) {
    for (CompatMode mode : {CompatMode::ln, CompatMode::un, CompatMode::gs}) {
      const bool ln_only = c.v == LossVariant::mle || c.v == LossVariant::ul;
      if (ln_only && mode != CompatMode::ln) continue;
      for (std::size_t t = 0; t < trials; ++t) {
        LossSpec spec;
        spec.variant = c.v;
        spec.compat = mode;
        spec.ul_per_token = c.per_token;
        spec.alpha1 = rng.uniform(0.2, 1.5);
        spec.alpha2 = rng.uniform(0.2, 1.5);
        spec.lambda1 = rng.uniform(0.1, 1.0);
        spec.lambda2 = rng.uniform(0.1, 1.0);
        const std::size_t rows = 2 + rng.below(2), cols = 2 + rng.below(2);
        auto b = detail::random_bundle(rng, V, rows, cols, 2, dims.max_len - 1);
        auto p = detail::random_params(rng, dims, V, 0.5);
        const auto an = interpolated_loss(spec, p, b);
        ++r.trials;
        bool ok = true;
        for (std::size_t i = 0; i < p.num_params(); ++i) {
          const double x = p.flat(i);
          p.flat(i) = x + h;
          const double fp = interpolated_value(spec, p, b);
          p.flat(i) = x - h;
          const double fm = interpolated_value(spec, p, b);
          p.flat(i) = x;
          const double num = (fp - fm) / (2 * h);
          const double a = an.grad.flat(i);
          const double err = std::abs(a - num);
          if (err < 1e-7) continue;
          const double rel = err / std::max(std::abs(a), std::abs(num));
          r.worst = std::max(r.worst, rel);
          if (rel >= 1e-4) ok = false;
        }
        if (!ok) {
          ++r.failures;
          if (r.detail.empty())
            r.detail = std::string(to_string(c.v)) + "/" + std::string(to_string(mode)) +
                       (c.per_token ? "" : " (sequence)");
        }
      }
    }
  }
  r.passed = r.failures == 0;
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// Multi-label CE total is strictly below the joint CE on 2x2 bundles.
inline SuiteResult verify_lemma(std::uint64_t seed, std::size_t trials = 1000) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "lemma";
  Rng rng(stream_seed(seed, "verify-lemma"));
  double tightest = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    auto m = detail::random_matrix(rng, 2, 2);
    const double ml = ce_bundle(m, LossVariant::ce_ml), jt = ce_joint(m);
    ++r.trials;
    tightest = std::min(tightest, jt - ml);
    if (!(ml < jt)) ++r.failures;
  }
  r.worst = tightest;
  r.passed = r.failures == 0;
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// Answer-conditional CE equals MLE minus the log-sum-exp regularizer.
inline SuiteResult verify_decomposition(std::uint64_t seed, std::size_t trials = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "decomposition";
  Rng rng(stream_seed(seed, "verify-decomposition"));
  const Dims dims{8, 4, 12, 5};
  const std::size_t V = 16;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t rows = 1 + rng.below(3), cols = 2 + rng.below(3);
    auto b = detail::random_bundle(rng, V, rows, cols, std::min(rows, cols), dims.max_len - 1);
    auto p = detail::random_params(rng, dims, V, 1.0);
    const auto m = score_matrix(p, CompatMode::ln, b);
    for (const auto& g : b.gold) {
      const double ce = ce_pairwise(m, LossVariant::ce_ac, g);
      const double mle =
          mle_loss(p, {b.context, b.questions[g.question], b.answers[g.answer]}, CompatMode::ln);
      std::vector<double> row;
      for (const auto& a : b.answers)
        row.push_back(compat(p, CompatMode::ln, b.context, b.questions[g.question], a));
      const double err = std::abs(ce - (mle - log_sum_exp(row)));
      r.worst = std::max(r.worst, err);
      if (err >= 1e-9) ++r.failures;
    }
    ++r.trials;
  }
  r.passed = r.failures == 0;
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// CE values and the joint assignment are unchanged by a constant shift.
inline SuiteResult verify_shift(std::uint64_t seed, std::size_t trials = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "shift";
  Rng rng(stream_seed(seed, "verify-shift"));
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t rows = 2 + rng.below(3), cols = 2 + rng.below(3);
    auto m = detail::random_matrix(rng, rows, cols);
    m.gold.resize(2);
    const auto base_assign = joint_assign(m).pairs;
    for (double c : {-50.0, 3.7, 1000.0}) {
      auto s = m;
      for (double& v : s.values) v += c;
      for (auto v : {LossVariant::ce_ac, LossVariant::ce_qc, LossVariant::ce_tw,
                     LossVariant::ce_ml, LossVariant::ce_fp}) {
        const double err = std::abs(ce_bundle(s, v) - ce_bundle(m, v));
        r.worst = std::max(r.worst, err);
        if (err >= 1e-9) ++r.failures;
      }
      const double err = std::abs(ce_joint(s) - ce_joint(m));
      r.worst = std::max(r.worst, err);
      if (err >= 1e-9) ++r.failures;
      if (joint_assign(s).pairs != base_assign) ++r.failures;
    }
    ++r.trials;
  }
  r.passed = r.failures == 0;
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// Hungarian totals equal exhaustive search.
inline SuiteResult verify_assignment(std::uint64_t seed, std::size_t trials = 500) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "assignment";
  Rng rng(stream_seed(seed, "verify-assignment"));
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 + rng.below(3);
    auto m = detail::random_matrix(rng, n, n);
    const auto a = joint_assign(m), b = assign_bruteforce(m);
    ++r.trials;
    r.worst = std::max(r.worst, std::abs(a.total_score - b.total_score));
    if (a.total_score != b.total_score || a.pairs != b.pairs) ++r.failures;
  }
  r.passed = r.failures == 0;
  r.seconds = detail::seconds_since(t0);
  return r;
}

inline std::string describe(const SuiteResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << " " << r.name << ": " << r.trials << " trials, "
     << r.failures << " failures, worst " << r.worst << ", " << r.seconds << " s";
  if (!r.detail.empty()) os << " (first failure: " << r.detail << ")";
  return os.str();
}

}  // namespace cebundle
