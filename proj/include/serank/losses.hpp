#pragma once

// Ranking losses over one query's scores. Each loss has a plain evaluator that
// returns the value and d(loss)/d(score), and a graph op that lifts it into an
// autodiff node over a batch of equal-length row segments.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "serank/autodiff.hpp"

namespace serank {

enum class LossKind { pairwise_logistic, pairwise_logistic_lambda, softmax_ce };
enum class Gain { identity, pow2minus1 };

struct LossSpec {
  LossKind kind = LossKind::softmax_ce;
  Gain gain = Gain::pow2minus1;
  /// Divide lambda weights by the ideal DCG of the query.
  bool lambda_normalize = true;
};

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::pairwise_logistic: return "pairwise_logistic";
    case LossKind::pairwise_logistic_lambda: return "pairwise_logistic_lambda";
    case LossKind::softmax_ce: return "softmax_ce";
  }
  return "?";
}
inline std::string to_string(Gain g) { return g == Gain::identity ? "identity" : "pow2minus1"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "pairwise_logistic") return LossKind::pairwise_logistic;
  if (s == "pairwise_logistic_lambda") return LossKind::pairwise_logistic_lambda;
  if (s == "softmax_ce") return LossKind::softmax_ce;
  throw ConfigError("unknown loss kind '" + s + "'");
}
inline Gain parse_gain(const std::string& s) {
  if (s == "identity") return Gain::identity;
  if (s == "pow2minus1") return Gain::pow2minus1;
  throw ConfigError("unknown gain '" + s + "'");
}

inline double gain_value(Gain g, int label) {
  return g == Gain::identity ? static_cast<double>(label) : std::exp2(static_cast<double>(label)) - 1.0;
}

/// log(1 + exp(z)) without overflow for large |z|.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct LossEval {
  double value = 0.0;
  std::vector<double> grad;  // d(value)/d(score_i)
  bool skipped = false;
};

namespace detail {

// Shared pair loop; weight(i, j) is constant w.r.t. the scores.
template <class Weight>
LossEval pairwise(std::span<const double> s, std::span<const int> y, Weight weight) {
  LossEval out;
  out.grad.assign(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] <= y[j]) continue;
      double w = weight(i, j);
      if (w == 0.0) continue;
      double z = -(s[i] - s[j]);
      out.value += w * softplus(z);
      // d softplus(z)/dz = sigmoid(z)
      double d = w * ad::detail::stable_sigmoid(z);
      out.grad[i] -= d;
      out.grad[j] += d;
    }
  }
  return out;
}

}  // namespace detail

/// Sum over pairs with label_i > label_j of log(1 + exp(-(s_i - s_j))).
inline LossEval eval_pairwise_logistic(std::span<const double> s, std::span<const int> y) {
  return detail::pairwise(s, y, [](std::size_t, std::size_t) { return 1.0; });
}

/// Score-descending rank positions (1-based); ties keep input order.
inline std::vector<std::size_t> rank_positions(std::span<const double> s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<std::size_t> pos(s.size());
  for (std::size_t p = 0; p < order.size(); ++p) pos[order[p]] = p + 1;
  return pos;
}

/// Ideal DCG over the whole list (no cutoff).
inline double ideal_dcg(std::span<const int> y, Gain gain) {
  std::vector<double> g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = gain_value(gain, y[i]);
  std::sort(g.begin(), g.end(), std::greater<>());
  double dcg = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) dcg += g[p] / std::log2(static_cast<double>(p) + 2.0);
  return dcg;
}

/// Pairwise logistic loss with each pair weighted by the |delta NDCG| of
/// swapping it under the current score order.
inline LossEval eval_pairwise_logistic_lambda(std::span<const double> s, std::span<const int> y, Gain gain,
                                              bool normalize = true) {
  double max_dcg = ideal_dcg(y, gain);
  if (max_dcg <= 0.0) return LossEval{0.0, std::vector<double>(s.size(), 0.0), false};
  std::vector<std::size_t> pos = rank_positions(s);
  double norm = normalize ? max_dcg : 1.0;
  return detail::pairwise(s, y, [&](std::size_t i, std::size_t j) {
    double dg = std::abs(gain_value(gain, y[i]) - gain_value(gain, y[j]));
    double dd = std::abs(1.0 / std::log2(1.0 + static_cast<double>(pos[i])) -
                         1.0 / std::log2(1.0 + static_cast<double>(pos[j])));
    return dg * dd / norm;
  });
}

/// -sum_i (g_i / sum g) * log softmax(s)_i. Skipped (value 0) when all gains are 0.
inline LossEval eval_softmax_ce(std::span<const double> s, std::span<const int> y, Gain gain) {
  LossEval out;
  out.grad.assign(s.size(), 0.0);
  double total_gain = 0.0;
  for (int label : y) total_gain += gain_value(gain, label);
  if (total_gain <= 0.0 || s.empty()) {
    out.skipped = true;
    return out;
  }
  double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  double log_z = mx + std::log(z);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double p = gain_value(gain, y[i]) / total_gain;
    out.value -= p * (s[i] - log_z);
    out.grad[i] = std::exp(s[i] - log_z) - p;
  }
  return out;
}

inline LossEval eval_loss(const LossSpec& spec, std::span<const double> s, std::span<const int> y) {
  switch (spec.kind) {
    case LossKind::pairwise_logistic: return eval_pairwise_logistic(s, y);
    case LossKind::pairwise_logistic_lambda: return eval_pairwise_logistic_lambda(s, y, spec.gain, spec.lambda_normalize);
    case LossKind::softmax_ce: return eval_softmax_ce(s, y, spec.gain);
  }
  return {};
}

struct LossStats {
  std::size_t queries = 0;
  std::size_t skipped = 0;
};

/// Mean per-query loss over a batch laid out as segments of `segment_rows`
/// consecutive rows of a single-column score tensor. Masked-out rows take no
/// part in any query's loss. Skipped queries contribute 0 to the mean.
inline ad::Var ranking_loss(ad::Var scores, std::span<const int> labels, const Mask& mask, std::size_t segment_rows,
                            const LossSpec& spec, LossStats* stats = nullptr) {
  const Tensor& sv = scores.value();
  std::size_t n = sv.size();
  if (labels.size() != n || mask.size() != n)
    throw DimensionError("ranking_loss: " + std::to_string(n) + " scores, " + std::to_string(labels.size()) +
                         " labels, " + std::to_string(mask.size()) + " mask entries");
  std::size_t seg = segment_rows == 0 ? n : segment_rows;
  if (seg == 0 || n % seg != 0) throw DimensionError("ranking_loss: scores do not split into equal segments");
  std::size_t nq = n / seg;

  std::vector<double> grad(n, 0.0);
  double total = 0.0;
  LossStats st{nq, 0};
  std::vector<double> qs;
  std::vector<int> qy;
  std::vector<std::size_t> rows;
  for (std::size_t q = 0; q < nq; ++q) {
    qs.clear();
    qy.clear();
    rows.clear();
    for (std::size_t r = q * seg; r < (q + 1) * seg; ++r) {
      if (!mask[r]) continue;
      qs.push_back(sv[r]);
      qy.push_back(labels[r]);
      rows.push_back(r);
    }
    if (rows.empty()) throw InvalidQueryError("ranking_loss: query " + std::to_string(q) + " has an empty mask");
    LossEval e = eval_loss(spec, qs, qy);
    if (e.skipped) ++st.skipped;
    total += e.value;
    for (std::size_t i = 0; i < rows.size(); ++i) grad[rows[i]] = e.grad[i] / static_cast<double>(nq);
  }
  if (stats) *stats = st;

  ad::Graph& g = *scores.graph();
  std::size_t sid = scores.id();
  return g.record(ad::Op::custom, {scores}, Tensor::scalar(total / static_cast<double>(nq)),
                  [sid, grad = std::move(grad)](ad::Graph& gr, std::size_t self) {
                    double go = gr.grad(self)[0];
                    Tensor& gs = gr.grad_of(sid);
                    for (std::size_t i = 0; i < grad.size(); ++i) gs[i] += go * grad[i];
                  });
}

/// Single-query convenience wrappers (scores is L x 1 or 1 x L).
inline ad::Var pairwise_logistic(ad::Var scores, std::span<const int> labels, const Mask& mask) {
  return ranking_loss(scores, labels, mask, 0, {LossKind::pairwise_logistic, Gain::pow2minus1, true});
}
inline ad::Var pairwise_logistic_lambda(ad::Var scores, std::span<const int> labels, const Mask& mask, Gain gain,
                                        bool normalize = true) {
  return ranking_loss(scores, labels, mask, 0, {LossKind::pairwise_logistic_lambda, gain, normalize});
}
inline ad::Var softmax_ce(ad::Var scores, std::span<const int> labels, const Mask& mask, Gain gain) {
  return ranking_loss(scores, labels, mask, 0, {LossKind::softmax_ce, gain, true});
}

}  // namespace serank
