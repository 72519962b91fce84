#pragma once

// Stability under document removal and the squeeze/excitation ablation.

#include <cmath>
#include <map>
#include <ostream>
#include <vector>

#include "serank/letor.hpp"
#include "serank/metrics.hpp"
#include "serank/models.hpp"
#include "serank/trainer.hpp"

namespace serank {

struct StabilityReport {
  /// NDCG of the surviving documents ranked by scores computed with the full list.
  std::map<std::size_t, double> base_ndcg;
  /// NDCG of the surviving documents scored on their own.
  std::map<std::size_t, double> masked_ndcg;
  double mask_fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t query_count = 0;
  std::size_t skipped_empty = 0;        // every document would have been removed
  std::size_t skipped_no_relevant = 0;  // no relevant survivor
};

/// Removes round(mask_fraction * L) documents per query (seeded, uniform) and
/// compares NDCG of the survivors under the two scoring arms. Both arms use the
/// same survivor set.
inline StabilityReport stability_test(const ScoringModel& m, const Dataset& ds, double mask_fraction,
                                      std::uint64_t seed, const std::vector<std::size_t>& ks = default_cutoffs()) {
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) throw ConfigError("mask fraction must be in [0, 1)");
  StabilityReport rep;
  rep.mask_fraction = mask_fraction;
  rep.seed = seed;
  std::vector<std::vector<double>> base_scores, masked_scores;
  std::vector<std::vector<int>> labels;
  for (std::size_t q = 0; q < ds.size(); ++q) {
    const QueryGroup& g = ds.groups[q];
    std::size_t drop = static_cast<std::size_t>(std::lround(mask_fraction * static_cast<double>(g.size())));
    std::size_t keep = g.size() - std::min(drop, g.size());
    if (keep == 0) {
      ++rep.skipped_empty;
      continue;
    }
    Rng rng(derive_seed(seed, "stability", q));
    std::vector<std::size_t> survivors = rng.sample(g.size(), keep);

    QueryGroup sub;
    sub.qid = g.qid;
    sub.feature_count = g.feature_count;
    for (std::size_t d : survivors) {
      sub.features.insert(sub.features.end(), g.features.begin() + d * g.feature_count,
                          g.features.begin() + (d + 1) * g.feature_count);
      sub.labels.push_back(g.labels[d]);
    }
    if (!sub.has_relevant()) {
      ++rep.skipped_no_relevant;
      continue;
    }
    std::vector<double> full = score(m, g);
    std::vector<double> restricted;
    for (std::size_t d : survivors) restricted.push_back(full[d]);
    base_scores.push_back(std::move(restricted));
    masked_scores.push_back(score(m, sub));
    labels.push_back(sub.labels);
  }
  MetricReport base = summarize_ndcg(base_scores, labels, ks);
  MetricReport masked = summarize_ndcg(masked_scores, labels, ks);
  rep.base_ndcg = base.ndcg_at;
  rep.masked_ndcg = masked.ndcg_at;
  rep.query_count = base.query_count;
  return rep;
}

/// `arm<TAB>k<TAB>ndcg` rows for the base and masked arms.
inline void write_stability_tsv(std::ostream& out, const StabilityReport& r) {
  for (const auto& [k, v] : r.base_ndcg) out << "base\t" << k << '\t' << format_double(v) << '\n';
  for (const auto& [k, v] : r.masked_ndcg) out << "masked\t" << k << '\t' << format_double(v) << '\n';
}

struct AblationRow {
  Variant variant;
  MetricReport test;
  std::size_t best_step = 0;
  ScoringModel model;  // selected on validation NDCG
};

/// Trains SERank-b and its two ablations with identical seeds and settings and
/// reports test NDCG for each.
inline std::vector<AblationRow> ablation_suite(const Dataset& train_ds, const Dataset& valid_ds, const Dataset& test_ds,
                                               const ModelSpec& base_spec, const TrainConfig& cfg) {
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::serank_b, Variant::serank_no_squeeze, Variant::serank_no_excitation}) {
    ModelSpec spec = base_spec;
    spec.variant = v;
    TrainResult r = train(init_model(spec), train_ds, valid_ds, cfg);
    rows.push_back({v, evaluate(r.best, test_ds, default_cutoffs(), cfg.threads), r.best_step, r.best});
  }
  return rows;
}

/// `variant<TAB>k<TAB>ndcg` rows.
inline void write_ablation_tsv(std::ostream& out, const std::vector<AblationRow>& rows) {
  for (const auto& row : rows)
    for (const auto& [k, v] : row.test.ndcg_at) out << to_string(row.variant) << '\t' << k << '\t' << format_double(v) << '\n';
}

}  // namespace serank
