#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/losses.hpp"
#include "cebundle/scorer.hpp"

namespace cebundle {

/// Argmax token per step from BOS until EOS or max_len; ties go to the
/// lowest index. EOS is not returned.
inline TokenIds greedy_decode(const ScorerParams& p, const TokenIds& context,
                              const TokenIds& question) {
  const auto enc = encode(p, context, question);
  TokenIds out;
  TokenId prev = Vocab::kBos;
  std::vector<double> x, h, logits;
  for (std::size_t t = 0; t < p.dims.max_len; ++t) {
    detail::decoder_step(p, enc, prev, t, x, h, logits);
    const auto next = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) -
                                           logits.begin());
    if (next == Vocab::kEos) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

struct RankResult {
  std::size_t best = 0;
  std::vector<double> scores;
};

inline RankResult rank_candidates(const ScorerParams& p, CompatMode mode, const TokenIds& context,
                                  const TokenIds& question, const std::vector<TokenIds>& candidates) {
  if (candidates.empty()) throw ArgumentError("rank_candidates needs at least one candidate");
  RankResult r;
  for (const auto& c : candidates) r.scores.push_back(compat(p, mode, context, question, c));
  for (std::size_t j = 1; j < r.scores.size(); ++j)
    if (r.scores[j] > r.scores[r.best]) r.best = j;
  return r;
}

// ---------------------------------------------------------------------------
// Joint inference as an assignment problem

/// Entries used for padding a rectangular matrix to square.
inline constexpr double kPadSentinel = -1e9;

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (question, answer), by question
  double total_score = 0.0;
};

namespace detail {

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// Sum of matrix entries at the assigned pairs, in row order.
inline double assignment_total(const LogScoreMatrix& m, const std::vector<std::size_t>& col_of) {
  double s = 0.0;
  for (std::size_t i = 0; i < col_of.size(); ++i)
    if (col_of[i] != kNone) s += m(i, col_of[i]);
  return s;
}

// Maximum-weight matching of size min(|rows|, |cols|) on the submatrix,
// via the O(n^2 m) Hungarian method with potentials. Returns the column
// chosen for each row (kNone for unmatched rows) and the real total.
inline std::pair<std::vector<std::size_t>, double> hungarian(const LogScoreMatrix& m,
                                                             const std::vector<std::size_t>& rows,
                                                             const std::vector<std::size_t>& cols) {
  std::vector<std::size_t> col_of(rows.size(), kNone);
  if (rows.empty() || cols.empty()) return {col_of, 0.0};
  const bool transposed = rows.size() > cols.size();
  const std::size_t n = transposed ? cols.size() : rows.size();
  const std::size_t k = transposed ? rows.size() : cols.size();
  auto cost = [&](std::size_t i, std::size_t j) {  // 1-based, minimized
    return transposed ? -m(rows[j - 1], cols[i - 1]) : -m(rows[i - 1], cols[j - 1]);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(k + 1, 0.0);
  std::vector<std::size_t> match(k + 1, 0), way(k + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(k + 1, inf);
    std::vector<char> used(k + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= k; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= k; ++j) {
    if (match[j] == 0) continue;
    const std::size_t r = transposed ? j - 1 : match[j] - 1;
    const std::size_t c = transposed ? match[j] - 1 : j - 1;
    col_of[r] = cols[c];
    total += m(rows[r], cols[c]);
  }
  return {col_of, total};
}

inline double tie_tolerance(const LogScoreMatrix& m) {
  double mx = 0.0;
  for (double v : m.values) mx = std::max(mx, std::abs(v));
  return 1e-9 * (1.0 + mx);
}

inline Assignment to_assignment(const LogScoreMatrix& m, const std::vector<std::size_t>& col_of) {
  Assignment a;
  for (std::size_t i = 0; i < col_of.size(); ++i)
    if (col_of[i] != kNone) a.pairs.emplace_back(i, col_of[i]);
  a.total_score = assignment_total(m, col_of);
  return a;
}

inline void check_matrix(const LogScoreMatrix& m) {
  if (m.rows == 0 || m.cols == 0) throw ArgumentError("assignment needs a non-empty matrix");
  if (m.values.size() != m.rows * m.cols) throw ArgumentError("score matrix size mismatch");
  for (double v : m.values)
    if (!std::isfinite(v)) throw ArgumentError("score matrix has a non-finite entry");
}

}  // namespace detail

/// Maximum-total one-to-one assignment of questions to answers. A
/// rectangular matrix behaves as if padded to square with kPadSentinel, so
/// exactly min(rows, cols) real pairs are chosen. Among assignments whose
/// total is within a relative 1e-9 of the optimum, the lexicographically
/// smallest pair list wins (an unmatched row sorts after every column).
inline Assignment joint_assign(const LogScoreMatrix& m) {
  detail::check_matrix(m);
  std::vector<std::size_t> all_rows(m.rows), all_cols(m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) all_rows[i] = i;
  for (std::size_t j = 0; j < m.cols; ++j) all_cols[j] = j;
  const double best = detail::hungarian(m, all_rows, all_cols).second;
  const double tol = detail::tie_tolerance(m);
  const std::size_t target = std::min(m.rows, m.cols);

  std::vector<std::size_t> col_of(m.rows, detail::kNone);
  std::vector<char> col_used(m.cols, 0);
  double fixed = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::vector<std::size_t> rest_rows;
    for (std::size_t r = i + 1; r < m.rows; ++r) rest_rows.push_back(r);
    bool done = false;
    for (std::size_t j = 0; j <= m.cols && !done; ++j) {
      const bool none = j == m.cols;
      if (!none && col_used[j]) continue;
      std::vector<std::size_t> rest_cols;
      for (std::size_t c = 0; c < m.cols; ++c)
        if (!col_used[c] && c != j) rest_cols.push_back(c);
      const std::size_t got = matched + (none ? 0 : 1);
      if (got + std::min(rest_rows.size(), rest_cols.size()) != target) continue;
      const double here = fixed + (none ? 0.0 : m(i, j)) +
                          detail::hungarian(m, rest_rows, rest_cols).second;
      if (here >= best - tol) {
        if (!none) {
          col_of[i] = j;
          col_used[j] = 1;
          fixed += m(i, j);
          ++matched;
        }
        done = true;
      }
    }
    if (!done) throw std::logic_error("assignment search lost the optimum");
  }
  return detail::to_assignment(m, col_of);
}

/// Exhaustive oracle for joint_assign, with the same tie-break.
inline Assignment assign_bruteforce(const LogScoreMatrix& m) {
  detail::check_matrix(m);
  if (std::min(m.rows, m.cols) > 6) throw SizeError("brute-force assignment limited to dim <= 6");
  const std::size_t target = std::min(m.rows, m.cols);
  std::vector<std::vector<std::size_t>> all;
  std::vector<std::size_t> cur(m.rows, detail::kNone);
  std::vector<char> used(m.cols, 0);

  // Enumerates complete matchings in lexicographic order.
  auto rec = [&](auto&& self, std::size_t i, std::size_t matched) -> void {
    if (i == m.rows) {
      if (matched == target) all.push_back(cur);
      return;
    }
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      cur[i] = j;
      self(self, i + 1, matched + 1);
      used[j] = 0;
    }
    cur[i] = detail::kNone;
    if (matched + (m.rows - i - 1) >= target) self(self, i + 1, matched);
  };
  rec(rec, 0, 0);

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : all) best = std::max(best, detail::assignment_total(m, c));
  const double tol = detail::tie_tolerance(m);
  for (const auto& c : all)
    if (detail::assignment_total(m, c) >= best - tol) return detail::to_assignment(m, c);
  return detail::to_assignment(m, all.front());
}

}  // namespace cebundle
