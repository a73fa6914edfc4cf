#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/scorer.hpp"

// Every objective here is a log-likelihood to be maximized.

namespace cebundle {

enum class LossVariant { mle, ul, ce_ac, ce_qc, ce_tw, ce_ml, ce_jt, ce_fp };

inline std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::mle: return "mle";
    case LossVariant::ul: return "ul";
    case LossVariant::ce_ac: return "ce-ac";
    case LossVariant::ce_qc: return "ce-qc";
    case LossVariant::ce_tw: return "ce-tw";
    case LossVariant::ce_ml: return "ce-ml";
    case LossVariant::ce_jt: return "ce-jt";
    case LossVariant::ce_fp: return "ce-fp";
  }
  return "mle";
}

inline LossVariant loss_variant_from_string(std::string_view s) {
  for (auto v : {LossVariant::mle, LossVariant::ul, LossVariant::ce_ac, LossVariant::ce_qc,
                 LossVariant::ce_tw, LossVariant::ce_ml, LossVariant::ce_jt, LossVariant::ce_fp})
    if (to_string(v) == s) return v;
  throw ArgumentError("unknown loss: " + std::string(s));
}

inline bool is_pairwise_ce(LossVariant v) {
  return v == LossVariant::ce_ac || v == LossVariant::ce_qc || v == LossVariant::ce_tw ||
         v == LossVariant::ce_ml || v == LossVariant::ce_fp;
}

struct LossSpec {
  LossVariant variant = LossVariant::ce_qc;
  double alpha1 = 1.0;  // weight of MLE
  double alpha2 = 1.0;  // weight of the selected variant
  double lambda1 = 0.5;  // two-way: answer conditional
  double lambda2 = 0.5;  // two-way: question conditional
  CompatMode compat = CompatMode::ln;
  bool ul_per_token = true;

  void validate() const {
    if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) throw ConfigError("alpha weights must be >= 0");
    if (!(alpha1 + alpha2 > 0.0)) throw ConfigError("alpha1 + alpha2 must be positive");
    if (variant == LossVariant::mle && !(alpha1 > 0.0))
      throw ConfigError("loss mle needs alpha1 > 0");
    if (variant == LossVariant::ce_tw) {
      if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambda weights must be >= 0");
      if (!(lambda1 + lambda2 > 0.0)) throw ConfigError("lambda1 + lambda2 must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Score matrices and the pairwise / joint contrastive objectives

/// f(q_i, a_j) for one bundle; rows are questions, columns answers.
struct LogScoreMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
  std::vector<GoldPair> gold;

  LogScoreMatrix() = default;
  LogScoreMatrix(std::size_t r, std::size_t c, std::vector<double> v = {},
                 std::vector<GoldPair> g = {})
      : rows(r), cols(c), values(std::move(v)), gold(std::move(g)) {
    if (values.empty()) values.assign(r * c, 0.0);
    if (values.size() != r * c) throw ArgumentError("score matrix size mismatch");
  }

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }

  long gold_answer_of(std::size_t row) const {
    for (const auto& g : gold)
      if (g.question == row) return static_cast<long>(g.answer);
    return -1;
  }

  bool has_gold(const GoldPair& gp) const {
    return std::find(gold.begin(), gold.end(), gp) != gold.end();
  }
};

/// log(sum(exp(values))) with a max shift.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("log_sum_exp of an empty list");
  if (values.size() == 1) return values[0];
  double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_sum_exp(std::initializer_list<double> values) {
  return log_sum_exp(std::span<const double>(values.begin(), values.size()));
}

/// Objective value and its partial derivatives w.r.t. each matrix entry.
struct MatrixObjective {
  double value = 0.0;
  std::vector<double> partials;
};

namespace detail {

// f(gold) - lse(f over `support`), accumulating weight * partials.
inline double log_softmax_over(const LogScoreMatrix& m, std::size_t gold_flat,
                               const std::vector<std::size_t>& support, double weight,
                               std::vector<double>& partials) {
  std::vector<double> vals;
  vals.reserve(support.size());
  for (auto k : support) vals.push_back(m.values[k]);
  const double lse = log_sum_exp(vals);
  for (auto k : support) partials[k] -= weight * std::exp(m.values[k] - lse);
  partials[gold_flat] += weight;
  return m.values[gold_flat] - lse;
}

}  // namespace detail

inline MatrixObjective ce_pairwise_objective(const LogScoreMatrix& m, LossVariant variant,
                                             const GoldPair& g, double lambda1 = 0.5,
                                             double lambda2 = 0.5) {
  if (!is_pairwise_ce(variant)) throw ArgumentError("not a pairwise CE variant");
  if (!m.has_gold(g)) throw ArgumentError("gold pair not in matrix gold set");
  MatrixObjective out{0.0, std::vector<double>(m.values.size(), 0.0)};
  const std::size_t gf = g.question * m.cols + g.answer;

  auto answer_cond = [&](double w) {
    std::vector<std::size_t> s;
    for (std::size_t j = 0; j < m.cols; ++j) s.push_back(g.question * m.cols + j);
    return detail::log_softmax_over(m, gf, s, w, out.partials);
  };
  auto question_cond = [&](double w) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < m.rows; ++i) s.push_back(i * m.cols + g.answer);
    return detail::log_softmax_over(m, gf, s, w, out.partials);
  };

  switch (variant) {
    case LossVariant::ce_ac:
      out.value = answer_cond(1.0);
      break;
    case LossVariant::ce_qc:
      out.value = question_cond(1.0);
      break;
    case LossVariant::ce_tw:
      out.value = lambda1 * answer_cond(lambda1) + lambda2 * question_cond(lambda2);
      break;
    case LossVariant::ce_ml: {
      std::vector<std::size_t> s(m.values.size());
      for (std::size_t k = 0; k < s.size(); ++k) s[k] = k;
      out.value = detail::log_softmax_over(m, gf, s, 1.0, out.partials);
      break;
    }
    case LossVariant::ce_fp: {
      // Gold pair plus every pair that is not a correct pairing.
      std::vector<std::size_t> s{gf};
      for (std::size_t i = 0; i < m.rows; ++i) {
        const long ans = m.gold_answer_of(i);
        for (std::size_t j = 0; j < m.cols; ++j)
          if (ans != static_cast<long>(j)) s.push_back(i * m.cols + j);
      }
      out.value = detail::log_softmax_over(m, gf, s, 1.0, out.partials);
      break;
    }
    default:
      break;
  }
  return out;
}

inline double ce_pairwise(const LogScoreMatrix& m, LossVariant variant, const GoldPair& g,
                          double lambda1 = 0.5, double lambda2 = 0.5) {
  return ce_pairwise_objective(m, variant, g, lambda1, lambda2).value;
}

/// Pairwise CE summed over every gold pair of the bundle.
inline MatrixObjective ce_bundle_objective(const LogScoreMatrix& m, LossVariant variant,
                                           double lambda1 = 0.5, double lambda2 = 0.5) {
  MatrixObjective out{0.0, std::vector<double>(m.values.size(), 0.0)};
  for (const auto& g : m.gold) {
    auto o = ce_pairwise_objective(m, variant, g, lambda1, lambda2);
    out.value += o.value;
    for (std::size_t k = 0; k < o.partials.size(); ++k) out.partials[k] += o.partials[k];
  }
  return out;
}

inline double ce_bundle(const LogScoreMatrix& m, LossVariant variant, double lambda1 = 0.5,
                        double lambda2 = 0.5) {
  return ce_bundle_objective(m, variant, lambda1, lambda2).value;
}

/// Power-set objective for a bundle with exactly two gold pairs: the gold
/// pair set against every unordered pair of cells of questions x answers.
inline MatrixObjective ce_joint_objective(const LogScoreMatrix& m) {
  if (m.gold.size() != 2)
    throw UnsupportedError("joint CE needs exactly two gold pairs, got " +
                           std::to_string(m.gold.size()));
  const std::size_t n = m.values.size();
  if (n < 2) throw UnsupportedError("joint CE needs at least two cells");

  std::vector<double> terms;
  terms.reserve(n * (n - 1) / 2);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = x + 1; y < n; ++y) terms.push_back(m.values[x] + m.values[y]);
  const double lse = log_sum_exp(terms);

  MatrixObjective out{0.0, std::vector<double>(n, 0.0)};
  std::size_t k = 0;
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = x + 1; y < n; ++y, ++k) {
      const double w = std::exp(terms[k] - lse);
      out.partials[x] -= w;
      out.partials[y] -= w;
    }
  double numer = 0.0;
  for (const auto& g : m.gold) {
    const std::size_t f = g.question * m.cols + g.answer;
    numer += m.values[f];
    out.partials[f] += 1.0;
  }
  out.value = numer - lse;
  return out;
}

inline double ce_joint(const LogScoreMatrix& m) { return ce_joint_objective(m).value; }

inline MatrixObjective contrastive_objective(const LogScoreMatrix& m, const LossSpec& spec) {
  if (spec.variant == LossVariant::ce_jt) return ce_joint_objective(m);
  return ce_bundle_objective(m, spec.variant, spec.lambda1, spec.lambda2);
}

// ---------------------------------------------------------------------------
// Token-id views of instances and bundles

struct EncodedInstance {
  TokenIds context, question, answer;
};

struct EncodedBundle {
  TokenIds context;
  std::vector<TokenIds> questions, answers;
  std::vector<GoldPair> gold;
};

inline EncodedInstance encode_instance(const Vocab& v, const QAInstance& i) {
  return {v.encode(i.context), v.encode(i.question), v.encode(i.answer)};
}

inline EncodedBundle encode_bundle(const Vocab& v, const InstanceBundle& b) {
  EncodedBundle e;
  e.context = v.encode(b.context);
  for (const auto& q : b.questions) e.questions.push_back(v.encode(q));
  for (const auto& a : b.answers) e.answers.push_back(v.encode(a));
  e.gold = b.gold;
  return e;
}

inline LogScoreMatrix score_matrix(const ScorerParams& p, CompatMode mode, const EncodedBundle& b) {
  LogScoreMatrix m(b.questions.size(), b.answers.size(), {}, b.gold);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      m(i, j) = compat(p, mode, b.context, b.questions[i], b.answers[j]);
  return m;
}

// ---------------------------------------------------------------------------
// MLE and unlikelihood

struct LossResult {
  double value = 0.0;
  ScorerParams grad;
  std::size_t ul_clamped = 0;  // negatives whose probability hit the clamp
};

inline void require_ln(CompatMode mode, std::string_view what) {
  if (mode != CompatMode::ln)
    throw UnsupportedError(std::string(what) + " is only defined for locally normalized scores");
}

/// sum_t log p(a_t | a_<t, q), the token-level likelihood of the gold answer.
inline double mle_loss(const ScorerParams& p, const EncodedInstance& inst, CompatMode mode) {
  require_ln(mode, "mle");
  return compat(p, CompatMode::ln, inst.context, inst.question, inst.answer);
}

inline LossResult mle_loss_grad(const ScorerParams& p, const EncodedInstance& inst,
                                CompatMode mode) {
  require_ln(mode, "mle");
  LossResult r{0.0, p.zeros_like(), 0};
  r.value = accumulate_compat_grad(p, CompatMode::ln, inst.context, inst.question, inst.answer,
                                   1.0, r.grad);
  return r;
}

inline constexpr double kUlClampFloor = 1e-12;

namespace detail {

// Returns log(1 - p) for log p = `logp`, clamped at log(1e-12). `coef`
// receives d log(1 - p) / d log p (zero when clamped).
inline double log1m_exp(double logp, double& coef, bool& clamped) {
  const double pr = std::exp(logp);
  if (pr >= 1.0 - kUlClampFloor) {
    clamped = true;
    coef = 0.0;
    return std::log(kUlClampFloor);
  }
  clamped = false;
  coef = -pr / (1.0 - pr);
  return std::log(-std::expm1(logp));
}

// Unlikelihood penalty for one negative answer; adds scale * gradient into
// `grad` when non-null.
inline double unlikelihood_term(const ScorerParams& p, const TokenIds& context,
                                const TokenIds& question, const TokenIds& negative, bool per_token,
                                double scale, ScorerParams* grad, std::size_t& clamped) {
  const auto tr = trace_answer(p, context, question, negative);
  double value = 0.0;
  bool hit = false;
  if (!per_token) {
    double coef = 0.0;
    value = log1m_exp(compat_from_trace(tr, CompatMode::ln), coef, hit);
    if (hit) ++clamped;
    if (grad && coef != 0.0)
      backprop_trace(p, tr, compat_logit_partials(tr, CompatMode::ln), scale * coef, *grad);
    return value;
  }
  std::vector<std::vector<double>> dlogits(tr.steps());
  for (std::size_t t = 0; t < tr.steps(); ++t) {
    const auto& lp = tr.log_probs[t];
    const TokenId c = tr.target[t];
    double coef = 0.0;
    value += log1m_exp(lp[c], coef, hit);
    if (hit) ++clamped;
    dlogits[t].assign(lp.size(), 0.0);
    if (coef == 0.0) continue;
    // d log p_c / d logits = onehot(c) - softmax
    for (std::size_t v = 0; v < lp.size(); ++v) dlogits[t][v] = -coef * std::exp(lp[v]);
    dlogits[t][c] += coef;
  }
  if (grad) backprop_trace(p, tr, dlogits, scale, *grad);
  return value;
}

inline double ul_impl(const ScorerParams& p, const EncodedInstance& inst,
                      const std::vector<TokenIds>& bundle_answers, bool per_token, double scale,
                      ScorerParams* grad, std::size_t& clamped) {
  double value = grad ? accumulate_compat_grad(p, CompatMode::ln, inst.context, inst.question,
                                               inst.answer, scale, *grad)
                      : compat(p, CompatMode::ln, inst.context, inst.question, inst.answer);
  const TokenIds gold = strip_padding(inst.answer);
  for (const auto& c : bundle_answers) {
    if (strip_padding(c) == gold) continue;
    value += unlikelihood_term(p, inst.context, inst.question, c, per_token, scale, grad, clamped);
  }
  return value;
}

}  // namespace detail

/// MLE of the gold answer plus sum over the other bundle answers of
/// log(1 - p(c | q)), either per decoding step (per_token) or per sequence.
inline double ul_loss(const ScorerParams& p, const EncodedInstance& inst,
                      const std::vector<TokenIds>& bundle_answers, CompatMode mode,
                      bool per_token = true) {
  require_ln(mode, "unlikelihood");
  std::size_t clamped = 0;
  return detail::ul_impl(p, inst, bundle_answers, per_token, 1.0, nullptr, clamped);
}

inline LossResult ul_loss_grad(const ScorerParams& p, const EncodedInstance& inst,
                               const std::vector<TokenIds>& bundle_answers, CompatMode mode,
                               bool per_token = true) {
  require_ln(mode, "unlikelihood");
  LossResult r{0.0, p.zeros_like(), 0};
  r.value = detail::ul_impl(p, inst, bundle_answers, per_token, 1.0, &r.grad, r.ul_clamped);
  return r;
}

// ---------------------------------------------------------------------------
// Interpolation

namespace detail {

inline double interpolate(const LossSpec& spec, const ScorerParams& p, const EncodedBundle& b,
                          ScorerParams* grad, std::size_t& clamped) {
  spec.validate();
  if (b.gold.empty()) throw ArgumentError("bundle has no gold pair");
  if (spec.variant == LossVariant::ul) require_ln(spec.compat, "unlikelihood");

  double value = 0.0;
  if (spec.alpha1 != 0.0) {
    for (const auto& g : b.gold) {
      const auto& q = b.questions[g.question];
      const auto& a = b.answers[g.answer];
      const double f =
          grad ? accumulate_compat_grad(p, CompatMode::ln, b.context, q, a, spec.alpha1, *grad)
               : compat(p, CompatMode::ln, b.context, q, a);
      value += spec.alpha1 * f;
    }
  }
  if (spec.alpha2 == 0.0 || spec.variant == LossVariant::mle) return value;

  if (spec.variant == LossVariant::ul) {
    for (const auto& g : b.gold) {
      EncodedInstance inst{b.context, b.questions[g.question], b.answers[g.answer]};
      value += spec.alpha2 * ul_impl(p, inst, b.answers, spec.ul_per_token, spec.alpha2, grad,
                                     clamped);
    }
    return value;
  }

  // Contrastive variants: score every (question, answer) cell once, then
  // chain the matrix partials back through the cached traces.
  LogScoreMatrix m(b.questions.size(), b.answers.size(), {}, b.gold);
  std::vector<DecodeTrace> traces;
  traces.reserve(m.values.size());
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) {
      traces.push_back(trace_answer(p, b.context, b.questions[i], b.answers[j]));
      m(i, j) = compat_from_trace(traces.back(), spec.compat);
    }
  const auto obj = contrastive_objective(m, spec);
  value += spec.alpha2 * obj.value;
  if (grad) {
    for (std::size_t k = 0; k < traces.size(); ++k) {
      if (obj.partials[k] == 0.0) continue;
      backprop_trace(p, traces[k], compat_logit_partials(traces[k], spec.compat),
                     spec.alpha2 * obj.partials[k], *grad);
    }
  }
  return value;
}

}  // namespace detail

/// alpha1 * sum over gold pairs of MLE + alpha2 * (selected variant).
inline double interpolated_value(const LossSpec& spec, const ScorerParams& p,
                                 const EncodedBundle& b) {
  std::size_t clamped = 0;
  return detail::interpolate(spec, p, b, nullptr, clamped);
}

inline LossResult interpolated_loss(const LossSpec& spec, const ScorerParams& p,
                                    const EncodedBundle& b) {
  LossResult r{0.0, p.zeros_like(), 0};
  r.value = detail::interpolate(spec, p, b, &r.grad, r.ul_clamped);
  return r;
}

}  // namespace cebundle
