#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/rng.hpp"

namespace cebundle {

/// How decoder scores become a log-compatibility f(q, a), with psi = exp(f).
enum class CompatMode {
  ln,  // sum of per-step log-softmax of the answer tokens (and EOS)
  un,  // sum of raw per-step logits of the answer tokens (and EOS)
  gs,  // raw EOS logit at the final step
};

inline std::string_view to_string(CompatMode m) {
  switch (m) {
    case CompatMode::ln: return "ln";
    case CompatMode::un: return "un";
    case CompatMode::gs: return "gs";
  }
  return "ln";
}

inline CompatMode compat_mode_from_string(std::string_view s) {
  if (s == "ln") return CompatMode::ln;
  if (s == "un") return CompatMode::un;
  if (s == "gs") return CompatMode::gs;
  throw ArgumentError("unknown compat mode: " + std::string(s));
}

struct Dims {
  std::size_t embed = 32;
  std::size_t position = 8;
  std::size_t hidden = 64;
  std::size_t max_len = 8;
  bool operator==(const Dims&) const = default;
};

inline void validate_dims(const Dims& d, std::size_t vocab_size) {
  if (d.embed == 0 || d.position == 0 || d.hidden == 0 || d.max_len == 0 || vocab_size == 0)
    throw ConfigError("scorer dimensions must be positive");
  if (d.max_len < 2) throw ConfigError("max_len must be at least 2");
}

/// All trainable parameters of the toy encoder-decoder. Also used as the
/// gradient container, since gradients share the parameter shape.
///
/// Layout (row-major):
///   embedding  vocab x embed
///   position   max_len x position
///   w1         hidden x (2*embed + position)
///   b1         hidden
///   w2         vocab x hidden
///   b2         vocab
struct ScorerParams {
  Dims dims;
  std::size_t vocab_size = 0;
  std::vector<double> embedding, position, w1, b1, w2, b2;

  std::size_t input_width() const { return 2 * dims.embed + dims.position; }

  static ScorerParams zeros(const Dims& d, std::size_t vocab) {
    validate_dims(d, vocab);
    ScorerParams p;
    p.dims = d;
    p.vocab_size = vocab;
    p.embedding.assign(vocab * d.embed, 0.0);
    p.position.assign(d.max_len * d.position, 0.0);
    p.w1.assign(d.hidden * p.input_width(), 0.0);
    p.b1.assign(d.hidden, 0.0);
    p.w2.assign(vocab * d.hidden, 0.0);
    p.b2.assign(vocab, 0.0);
    return p;
  }

  ScorerParams zeros_like() const { return zeros(dims, vocab_size); }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("embedding", embedding);
    fn("position", position);
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    fn("embedding", embedding);
    fn("position", position);
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view, const std::vector<double>& t) { n += t.size(); });
    return n;
  }

  // Flat view over all entries in tensor order; used by optimizers and checks.
  double& flat(std::size_t i) {
    for (auto* t : {&embedding, &position, &w1, &b1, &w2, &b2}) {
      if (i < t->size()) return (*t)[i];
      i -= t->size();
    }
    throw RangeError("flat parameter index out of range");
  }

  double flat(std::size_t i) const { return const_cast<ScorerParams*>(this)->flat(i); }

  void axpy(double a, const ScorerParams& x) {
    auto add = [a](std::vector<double>& y, const std::vector<double>& xs) {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * xs[i];
    };
    add(embedding, x.embedding);
    add(position, x.position);
    add(w1, x.w1);
    add(b1, x.b1);
    add(w2, x.w2);
    add(b2, x.b2);
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](std::string_view, const std::vector<double>& t) {
      for (double v : t)
        if (!std::isfinite(v)) ok = false;
    });
    return ok;
  }

  bool same_shape(const ScorerParams& o) const {
    return dims == o.dims && vocab_size == o.vocab_size;
  }

  bool operator==(const ScorerParams&) const = default;
};

/// Entries i.i.d. uniform in [-0.1, 0.1], drawn in tensor order from one
/// seeded stream.
inline ScorerParams init_params(std::uint64_t seed, const Dims& dims, std::size_t vocab_size) {
  auto p = ScorerParams::zeros(dims, vocab_size);
  Rng rng(seed);
  p.for_each_tensor([&](std::string_view, std::vector<double>& t) {
    for (double& v : t) v = rng.uniform(-0.1, 0.1);
  });
  return p;
}

namespace detail {

inline void check_token(const ScorerParams& p, TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= p.vocab_size)
    throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
}

inline TokenIds strip_padding(const TokenIds& answer) {
  TokenIds a = answer;
  while (!a.empty() && a.back() == Vocab::kPad) a.pop_back();
  return a;
}

inline void log_softmax(const std::vector<double>& logits, std::vector<double>& out) {
  double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  double lse = m + std::log(s);
  out.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

}  // namespace detail

/// Mean of the embeddings of context followed by question; zero if both are
/// empty.
inline std::vector<double> encode(const ScorerParams& p, const TokenIds& context,
                                  const TokenIds& question) {
  const std::size_t d = p.dims.embed;
  std::vector<double> enc(d, 0.0);
  const std::size_t n = context.size() + question.size();
  if (n == 0) return enc;
  auto add = [&](TokenId id) {
    detail::check_token(p, id);
    const double* row = &p.embedding[static_cast<std::size_t>(id) * d];
    for (std::size_t i = 0; i < d; ++i) enc[i] += row[i];
  };
  for (TokenId id : context) add(id);
  for (TokenId id : question) add(id);
  for (double& v : enc) v /= static_cast<double>(n);
  return enc;
}

namespace detail {

// One decoder step: fills x (input), h (hidden) and logits.
inline void decoder_step(const ScorerParams& p, const std::vector<double>& encoding,
                         TokenId prev, std::size_t t, std::vector<double>& x,
                         std::vector<double>& h, std::vector<double>& logits) {
  const std::size_t d = p.dims.embed, dp = p.dims.position, hid = p.dims.hidden;
  const std::size_t in = p.input_width();
  x.resize(in);
  std::copy(encoding.begin(), encoding.end(), x.begin());
  const double* e = &p.embedding[static_cast<std::size_t>(prev) * d];
  std::copy(e, e + d, x.begin() + static_cast<long>(d));
  const double* ps = &p.position[t * dp];
  std::copy(ps, ps + dp, x.begin() + static_cast<long>(2 * d));

  h.resize(hid);
  for (std::size_t k = 0; k < hid; ++k) {
    const double* row = &p.w1[k * in];
    double z = p.b1[k];
    for (std::size_t j = 0; j < in; ++j) z += row[j] * x[j];
    h[k] = std::tanh(z);
  }
  logits.resize(p.vocab_size);
  for (std::size_t v = 0; v < p.vocab_size; ++v) {
    const double* row = &p.w2[v * hid];
    double s = p.b2[v];
    for (std::size_t k = 0; k < hid; ++k) s += row[k] * h[k];
    logits[v] = s;
  }
}

}  // namespace detail

/// logits = W2 tanh(W1 [encoding; emb(prev); pos(t)] + b1) + b2
inline std::vector<double> decoder_logits(const ScorerParams& p, const std::vector<double>& encoding,
                                          TokenId prev, std::size_t t) {
  if (t >= p.dims.max_len)
    throw RangeError("decoder step " + std::to_string(t) + " >= max_len");
  if (encoding.size() != p.dims.embed) throw ArgumentError("encoding has wrong length");
  detail::check_token(p, prev);
  std::vector<double> x, h, logits;
  detail::decoder_step(p, encoding, prev, t, x, h, logits);
  return logits;
}

/// Cached forward pass of one answer (content tokens followed by EOS),
/// reused for every compat mode and for backpropagation.
struct DecodeTrace {
  TokenIds inputs;  // context followed by question
  std::vector<double> encoding;
  TokenIds prev, target;
  std::vector<std::vector<double>> x, hidden, logits, log_probs;

  std::size_t steps() const { return target.size(); }
};

inline DecodeTrace trace_answer(const ScorerParams& p, const TokenIds& context,
                                const TokenIds& question, const TokenIds& answer_in) {
  const TokenIds answer = detail::strip_padding(answer_in);
  if (answer.size() + 1 > p.dims.max_len)
    throw RangeError("answer of " + std::to_string(answer.size()) +
                     " tokens does not fit max_len " + std::to_string(p.dims.max_len));
  for (TokenId id : answer) detail::check_token(p, id);

  DecodeTrace tr;
  tr.inputs = context;
  tr.inputs.insert(tr.inputs.end(), question.begin(), question.end());
  tr.encoding = encode(p, context, question);
  const std::size_t steps = answer.size() + 1;
  tr.prev.resize(steps);
  tr.target.resize(steps);
  tr.x.resize(steps);
  tr.hidden.resize(steps);
  tr.logits.resize(steps);
  tr.log_probs.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    tr.prev[t] = t == 0 ? Vocab::kBos : answer[t - 1];
    tr.target[t] = t < answer.size() ? answer[t] : Vocab::kEos;
    detail::decoder_step(p, tr.encoding, tr.prev[t], t, tr.x[t], tr.hidden[t], tr.logits[t]);
    detail::log_softmax(tr.logits[t], tr.log_probs[t]);
  }
  return tr;
}

inline double compat_from_trace(const DecodeTrace& tr, CompatMode mode) {
  double f = 0.0;
  switch (mode) {
    case CompatMode::ln:
      for (std::size_t t = 0; t < tr.steps(); ++t) f += tr.log_probs[t][tr.target[t]];
      break;
    case CompatMode::un:
      for (std::size_t t = 0; t < tr.steps(); ++t) f += tr.logits[t][tr.target[t]];
      break;
    case CompatMode::gs:
      f = tr.logits.back()[Vocab::kEos];
      break;
  }
  return f;
}

/// Log-compatibility f(q, a). `answer` holds content tokens only; EOS is
/// appended internally and trailing PAD tokens are ignored.
inline double compat(const ScorerParams& p, CompatMode mode, const TokenIds& context,
                     const TokenIds& question, const TokenIds& answer) {
  return compat_from_trace(trace_answer(p, context, question, answer), mode);
}

/// d f / d logits_t for every step of the trace.
inline std::vector<std::vector<double>> compat_logit_partials(const DecodeTrace& tr,
                                                              CompatMode mode) {
  std::vector<std::vector<double>> d(tr.steps());
  for (std::size_t t = 0; t < tr.steps(); ++t) {
    d[t].assign(tr.logits[t].size(), 0.0);
    switch (mode) {
      case CompatMode::ln:
        for (std::size_t v = 0; v < d[t].size(); ++v) d[t][v] = -std::exp(tr.log_probs[t][v]);
        d[t][tr.target[t]] += 1.0;
        break;
      case CompatMode::un:
        d[t][tr.target[t]] = 1.0;
        break;
      case CompatMode::gs:
        if (t + 1 == tr.steps()) d[t][Vocab::kEos] = 1.0;
        break;
    }
  }
  return d;
}

/// Adds scale * d(objective)/d(params) into `grad`, where `dlogits[t]` is
/// d(objective)/d(logits_t) for the traced sequence.
inline void backprop_trace(const ScorerParams& p, const DecodeTrace& tr,
                           const std::vector<std::vector<double>>& dlogits, double scale,
                           ScorerParams& grad) {
  const std::size_t d = p.dims.embed, dp = p.dims.position, hid = p.dims.hidden;
  const std::size_t in = p.input_width();
  std::vector<double> dh(hid), dz(hid), dx(in), denc(d, 0.0);

  for (std::size_t t = 0; t < tr.steps(); ++t) {
    const auto& h = tr.hidden[t];
    const auto& x = tr.x[t];
    std::fill(dh.begin(), dh.end(), 0.0);
    bool any = false;
    for (std::size_t v = 0; v < p.vocab_size; ++v) {
      const double g = scale * dlogits[t][v];
      if (g == 0.0) continue;
      any = true;
      grad.b2[v] += g;
      double* gw = &grad.w2[v * hid];
      const double* w = &p.w2[v * hid];
      for (std::size_t k = 0; k < hid; ++k) {
        gw[k] += g * h[k];
        dh[k] += g * w[k];
      }
    }
    if (!any) continue;

    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t k = 0; k < hid; ++k) {
      dz[k] = dh[k] * (1.0 - h[k] * h[k]);
      if (dz[k] == 0.0) continue;
      grad.b1[k] += dz[k];
      double* gw = &grad.w1[k * in];
      const double* w = &p.w1[k * in];
      for (std::size_t j = 0; j < in; ++j) {
        gw[j] += dz[k] * x[j];
        dx[j] += dz[k] * w[j];
      }
    }
    for (std::size_t i = 0; i < d; ++i) denc[i] += dx[i];
    double* ge = &grad.embedding[static_cast<std::size_t>(tr.prev[t]) * d];
    for (std::size_t i = 0; i < d; ++i) ge[i] += dx[d + i];
    double* gp = &grad.position[t * dp];
    for (std::size_t i = 0; i < dp; ++i) gp[i] += dx[2 * d + i];
  }

  if (tr.inputs.empty()) return;
  const double inv = 1.0 / static_cast<double>(tr.inputs.size());
  for (TokenId id : tr.inputs) {
    double* ge = &grad.embedding[static_cast<std::size_t>(id) * d];
    for (std::size_t i = 0; i < d; ++i) ge[i] += denc[i] * inv;
  }
}

/// Adds scale * df/dparams into `grad` and returns f.
inline double accumulate_compat_grad(const ScorerParams& p, CompatMode mode,
                                     const TokenIds& context, const TokenIds& question,
                                     const TokenIds& answer, double scale, ScorerParams& grad) {
  auto tr = trace_answer(p, context, question, answer);
  backprop_trace(p, tr, compat_logit_partials(tr, mode), scale, grad);
  return compat_from_trace(tr, mode);
}

struct ScoreWithGrad {
  double value = 0.0;
  ScorerParams grad;
};

inline ScoreWithGrad compat_grad(const ScorerParams& p, CompatMode mode, const TokenIds& context,
                                 const TokenIds& question, const TokenIds& answer) {
  ScoreWithGrad out{0.0, p.zeros_like()};
  out.value = accumulate_compat_grad(p, mode, context, question, answer, 1.0, out.grad);
  return out;
}

}  // namespace cebundle
