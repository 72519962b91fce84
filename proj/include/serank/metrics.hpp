#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <thread>
#include <vector>

#include "serank/letor.hpp"
#include "serank/models.hpp"

namespace serank {

/// NDCG@k with gain 2^label - 1 and discount 1/log2(position + 1). Documents
/// are ordered by descending score with ties kept in input order. Returns
/// nullopt when the ideal DCG is 0 (no relevant documents).
inline std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const int> labels, std::size_t k) {
  if (scores.size() != labels.size()) throw DimensionError("ndcg_at_k: scores and labels differ in length");
  if (k == 0) throw ConfigError("ndcg_at_k: k must be at least 1");
  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<int> ideal(labels.begin(), labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  std::size_t depth = std::min(k, n);
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t p = 0; p < depth; ++p) {
    double discount = std::log2(static_cast<double>(p) + 2.0);
    dcg += (std::exp2(labels[order[p]]) - 1.0) / discount;
    idcg += (std::exp2(ideal[p]) - 1.0) / discount;
  }
  if (idcg <= 0.0) return std::nullopt;
  return dcg / idcg;
}

struct MetricReport {
  std::map<std::size_t, double> ndcg_at;
  std::size_t query_count = 0;
  std::size_t skipped = 0;  // queries without relevant documents
};

inline const std::vector<std::size_t>& default_cutoffs() {
  static const std::vector<std::size_t> ks{1, 5, 10};
  return ks;
}

/// Mean NDCG@k over a list of per-query (scores, labels), skipping queries
/// with no relevant documents.
inline MetricReport summarize_ndcg(std::span<const std::vector<double>> scores, std::span<const std::vector<int>> labels,
                                   const std::vector<std::size_t>& ks = default_cutoffs()) {
  MetricReport r;
  std::map<std::size_t, double> sums;
  for (std::size_t k : ks) sums[k] = 0.0;
  for (std::size_t q = 0; q < scores.size(); ++q) {
    if (!std::any_of(labels[q].begin(), labels[q].end(), [](int l) { return l > 0; })) {
      ++r.skipped;
      continue;
    }
    ++r.query_count;
    for (std::size_t k : ks) sums[k] += *ndcg_at_k(scores[q], labels[q], k);
  }
  for (std::size_t k : ks) r.ndcg_at[k] = r.query_count ? sums[k] / static_cast<double>(r.query_count) : 0.0;
  return r;
}

/// Scores every query of ds in inference mode on all of its documents.
/// Queries are split over `threads` workers; results are reduced in query order.
inline std::vector<std::vector<double>> score_dataset(const ScoringModel& m, const Dataset& ds, unsigned threads = 1) {
  if (ds.feature_count != m.spec.input_width)
    throw DimensionError("dataset has " + std::to_string(ds.feature_count) + " features, model expects " +
                         std::to_string(m.spec.input_width));
  std::vector<std::vector<double>> out(ds.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t q = begin; q < ds.size(); q += step) out[q] = score(m, ds.groups[q]);
  };
  threads = std::max(1u, threads);
  if (threads == 1 || ds.size() < 2) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

inline MetricReport evaluate(const ScoringModel& m, const Dataset& ds,
                             const std::vector<std::size_t>& ks = default_cutoffs(), unsigned threads = 1) {
  std::vector<std::vector<double>> scores = score_dataset(m, ds, threads);
  std::vector<std::vector<int>> labels;
  labels.reserve(ds.size());
  for (const auto& g : ds.groups) labels.push_back(g.labels);
  return summarize_ndcg(scores, labels, ks);
}

/// `k<TAB>ndcg_mean<TAB>query_count` rows.
inline void write_metric_tsv(std::ostream& out, const MetricReport& r) {
  for (const auto& [k, v] : r.ndcg_at) out << k << '\t' << format_double(v) << '\t' << r.query_count << '\n';
}

}  // namespace serank
