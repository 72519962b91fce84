#pragma once

// LETOR / MSLR text ingestion, feature standardization, per-query document
// capping, padded batch iteration and the seeded synthetic task generators.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "serank/autodiff.hpp"
#include "serank/kv.hpp"
#include "serank/random.hpp"
#include "serank/tensor.hpp"

namespace serank {

/// One query's documents: an L x C feature matrix (row-major) and L labels.
struct QueryGroup {
  std::string qid;
  std::size_t feature_count = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  double feature(std::size_t doc, std::size_t channel) const { return features[doc * feature_count + channel]; }
  Tensor matrix() const { return Tensor({size(), feature_count}, features); }
  bool has_relevant() const {
    return std::any_of(labels.begin(), labels.end(), [](int l) { return l > 0; });
  }

  friend bool operator==(const QueryGroup&, const QueryGroup&) = default;
};

/// Per-channel mean and (population) standard deviation.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::size_t size() const { return mean.size(); }
  bool empty() const { return mean.empty(); }
  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

struct Dataset {
  std::vector<QueryGroup> groups;
  std::size_t feature_count = 0;
  /// Training-split statistics the features were normalized with, if any.
  FeatureStats stats;

  std::size_t size() const { return groups.size(); }
  std::size_t document_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

struct ParseOptions {
  /// Drop queries whose labels are all 0.
  bool discard_no_relevant = false;
};

/// Parses `<label> qid:<qid> <idx>:<value> ... [# comment]` lines. Documents are
/// grouped by qid in order of first appearance; missing indices read as 0.
inline Dataset parse_letor(std::istream& in, std::size_t feature_count, const ParseOptions& opts = {}) {
  if (feature_count == 0) throw SchemaError("feature count must be positive");
  Dataset ds;
  ds.feature_count = feature_count;
  std::unordered_map<std::string, std::size_t> by_qid;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank or comment-only

    int label = 0;
    if (!detail::parse_int(tok, label) || label < 0) throw ParseError("bad relevance label '" + tok + "'", line_no);
    if (!(ls >> tok) || tok.rfind("qid:", 0) != 0 || tok.size() == 4)
      throw ParseError("expected qid:<id> after the label", line_no);
    std::string qid = tok.substr(4);

    std::vector<double> row(feature_count, 0.0);
    while (ls >> tok) {
      auto colon = tok.find(':');
      if (colon == std::string::npos) throw ParseError("expected <index>:<value>, got '" + tok + "'", line_no);
      std::size_t idx = 0;
      double value = 0.0;
      if (!detail::parse_int(std::string_view(tok).substr(0, colon), idx) || idx == 0)
        throw ParseError("bad feature index in '" + tok + "'", line_no);
      if (!detail::parse_double(std::string_view(tok).substr(colon + 1), value))
        throw ParseError("bad feature value in '" + tok + "'", line_no);
      if (idx > feature_count)
        throw SchemaError("line " + std::to_string(line_no) + ": feature index " + std::to_string(idx) +
                          " exceeds feature count " + std::to_string(feature_count));
      row[idx - 1] = value;
    }

    auto [it, inserted] = by_qid.try_emplace(qid, ds.groups.size());
    if (inserted) {
      QueryGroup g;
      g.qid = qid;
      g.feature_count = feature_count;
      ds.groups.push_back(std::move(g));
    }
    QueryGroup& g = ds.groups[it->second];
    g.features.insert(g.features.end(), row.begin(), row.end());
    g.labels.push_back(label);
  }
  if (opts.discard_no_relevant)
    std::erase_if(ds.groups, [](const QueryGroup& g) { return !g.has_relevant(); });
  return ds;
}

inline Dataset parse_letor_file(const std::filesystem::path& path, std::size_t feature_count,
                                const ParseOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  return parse_letor(in, feature_count, opts);
}

/// Writes every feature explicitly, shortest round-trip formatting.
inline void write_letor(std::ostream& out, const Dataset& ds) {
  for (const auto& g : ds.groups) {
    for (std::size_t d = 0; d < g.size(); ++d) {
      out << g.labels[d] << " qid:" << g.qid;
      for (std::size_t c = 0; c < g.feature_count; ++c) out << ' ' << (c + 1) << ':' << format_double(g.feature(d, c));
      out << '\n';
    }
  }
}

inline void write_letor_file(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  write_letor(out, ds);
}

// ---------------------------------------------------------------------------
// Normalization

inline FeatureStats compute_stats(const Dataset& ds) {
  std::size_t c = ds.feature_count;
  FeatureStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  std::size_t n = ds.document_count();
  if (n == 0) return st;
  for (const auto& g : ds.groups)
    for (std::size_t d = 0; d < g.size(); ++d)
      for (std::size_t j = 0; j < c; ++j) st.mean[j] += g.feature(d, j);
  for (double& m : st.mean) m /= static_cast<double>(n);
  for (const auto& g : ds.groups)
    for (std::size_t d = 0; d < g.size(); ++d)
      for (std::size_t j = 0; j < c; ++j) {
        double diff = g.feature(d, j) - st.mean[j];
        st.stddev[j] += diff * diff;
      }
  for (double& s : st.stddev) s = std::sqrt(s / static_cast<double>(n));
  return st;
}

/// (x - mean) / std per channel; channels with std < 1e-12 become 0.
inline Dataset normalize(const Dataset& ds, const FeatureStats& stats) {
  if (stats.mean.size() != ds.feature_count || stats.stddev.size() != ds.feature_count)
    throw SchemaError("stats have " + std::to_string(stats.mean.size()) + " channels, dataset has " +
                      std::to_string(ds.feature_count));
  Dataset out = ds;
  out.stats = stats;
  std::size_t c = ds.feature_count;
  for (auto& g : out.groups)
    for (std::size_t i = 0; i < g.features.size(); ++i) {
      std::size_t j = i % c;
      g.features[i] = stats.stddev[j] < 1e-12 ? 0.0 : (g.features[i] - stats.mean[j]) / stats.stddev[j];
    }
  return out;
}

/// One `<channel> <mean> <std>` line per channel (1-based channel index).
inline void write_stats(std::ostream& out, const FeatureStats& st) {
  out << "# channel mean std\n";
  for (std::size_t j = 0; j < st.size(); ++j)
    out << (j + 1) << ' ' << format_double(st.mean[j]) << ' ' << format_double(st.stddev[j]) << '\n';
}

inline FeatureStats read_stats(std::istream& in) {
  FeatureStats st;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string idx, mean, sd;
    if (!(ls >> idx)) continue;
    std::size_t channel = 0;
    double m = 0, s = 0;
    if (!(ls >> mean >> sd) || !detail::parse_int(idx, channel) || !detail::parse_double(mean, m) ||
        !detail::parse_double(sd, s))
      throw ParseError("expected '<channel> <mean> <std>'", line_no);
    if (channel != st.size() + 1) throw ParseError("channels must be listed in order", line_no);
    st.mean.push_back(m);
    st.stddev.push_back(s);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Capping and batching

/// Keeps a seeded uniform subset of max_docs documents (in original order)
/// when the query is longer than max_docs.
inline QueryGroup cap_documents(const QueryGroup& g, std::size_t max_docs, std::uint64_t seed) {
  if (max_docs == 0) throw ConfigError("max_docs must be at least 1");
  if (g.size() <= max_docs) return g;
  Rng rng(seed);
  std::vector<std::size_t> keep = rng.sample(g.size(), max_docs);
  QueryGroup out;
  out.qid = g.qid;
  out.feature_count = g.feature_count;
  for (std::size_t d : keep) {
    out.features.insert(out.features.end(), g.features.begin() + d * g.feature_count,
                        g.features.begin() + (d + 1) * g.feature_count);
    out.labels.push_back(g.labels[d]);
  }
  return out;
}

/// B queries padded to the longest one. Row b * max_docs + j holds document j
/// of query b; padded cells are 0 with mask false.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t max_docs = 0;
  std::size_t feature_count = 0;
  std::vector<double> features;
  std::vector<int> labels;
  Mask mask;
  std::vector<std::size_t> query_index;  // position of each query in the source dataset

  std::size_t rows() const { return batch_size * max_docs; }
  Tensor matrix() const { return Tensor({rows(), feature_count}, features); }
};

inline Batch make_batch(std::span<const QueryGroup* const> queries, std::size_t feature_count) {
  Batch b;
  b.batch_size = queries.size();
  b.feature_count = feature_count;
  for (const QueryGroup* q : queries) b.max_docs = std::max(b.max_docs, q->size());
  b.features.assign(b.rows() * feature_count, 0.0);
  b.labels.assign(b.rows(), 0);
  b.mask.assign(b.rows(), false);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const QueryGroup& q = *queries[i];
    if (q.feature_count != feature_count) throw DimensionError("query " + q.qid + " has a different feature count");
    std::size_t base = i * b.max_docs;
    std::copy(q.features.begin(), q.features.end(), b.features.begin() + base * feature_count);
    for (std::size_t d = 0; d < q.size(); ++d) {
      b.labels[base + d] = q.labels[d];
      b.mask[base + d] = true;
    }
  }
  return b;
}

/// Endless stream of batches. Each epoch visits every query once in an order
/// shuffled from (seed, epoch); the last batch of an epoch may be short. With
/// doc_cap > 0, longer queries are capped afresh every epoch.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::size_t doc_cap = 0)
      : ds_(&ds), batch_size_(batch_size), seed_(seed), doc_cap_(doc_cap) {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (ds.groups.empty()) throw ConfigError("cannot iterate an empty dataset");
    start_epoch();
  }

  Batch next() {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      start_epoch();
    }
    std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<QueryGroup> capped;
    std::vector<const QueryGroup*> ptrs;
    capped.reserve(end - cursor_);
    for (std::size_t i = cursor_; i < end; ++i) {
      const QueryGroup& g = ds_->groups[order_[i]];
      if (doc_cap_ > 0 && g.size() > doc_cap_) {
        capped.push_back(cap_documents(g, doc_cap_, derive_seed(seed_, "cap", epoch_ * order_.size() + order_[i])));
        ptrs.push_back(&capped.back());
      } else {
        ptrs.push_back(&g);
      }
    }
    Batch b = make_batch(ptrs, ds_->feature_count);
    b.query_index.assign(order_.begin() + static_cast<long>(cursor_), order_.begin() + static_cast<long>(end));
    cursor_ = end;
    last_epoch_ = epoch_;
    return b;
  }

  /// Epoch of the most recently returned batch.
  std::size_t epoch() const { return last_epoch_; }
  std::size_t batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

 private:
  void start_epoch() {
    order_.resize(ds_->groups.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, "epoch", epoch_));
    rng.shuffle(order_);
    cursor_ = 0;
  }

  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t doc_cap_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t last_epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticTask {
  /// Labels are a fixed graded function of each document's own features.
  rankable,
  /// Which feature drives relevance depends on a query-level context that is
  /// only reliably visible in the mean of channel 0 over the query's documents.
  context,
};

inline std::string to_string(SyntheticTask t) { return t == SyntheticTask::rankable ? "rankable" : "context"; }
inline SyntheticTask parse_synthetic_task(const std::string& s) {
  if (s == "rankable") return SyntheticTask::rankable;
  if (s == "context") return SyntheticTask::context;
  throw ConfigError("unknown synthetic task '" + s + "'");
}

struct SyntheticConfig {
  SyntheticTask task = SyntheticTask::rankable;
  std::size_t train_queries = 5000;
  std::size_t valid_queries = 500;
  std::size_t test_queries = 500;
  std::size_t docs_per_query = 16;
  std::size_t feature_count = 20;
  std::uint64_t seed = 1;
};

struct SyntheticSplits {
  Dataset train, valid, test;
};

namespace detail {

inline int grade(double z, std::span<const double> thresholds) {
  int label = 0;
  for (double t : thresholds)
    if (z > t) ++label;
  return label;
}

inline Dataset synthetic_split(const SyntheticConfig& cfg, std::size_t queries, std::string_view split,
                               std::size_t qid_offset) {
  std::size_t c = cfg.feature_count;
  std::size_t min_c = cfg.task == SyntheticTask::rankable ? 1 : 3;
  if (c < min_c) throw ConfigError("synthetic task needs at least " + std::to_string(min_c) + " features");
  if (cfg.docs_per_query == 0) throw ConfigError("synthetic docs_per_query must be positive");

  // The hidden scoring rule is shared by all splits.
  Rng wrng(derive_seed(cfg.seed, "synthetic-weights"));
  std::vector<double> w(c);
  for (double& v : w) v = wrng.uniform(-1.0, 1.0);
  double mean_t = 0.0, var_t = 0.0;
  for (double v : w) {
    mean_t += 0.5 * v;
    var_t += v * v / 12.0;
  }
  double sd_t = std::sqrt(var_t);
  static constexpr double rank_thresholds[] = {-0.4, 0.4, 1.0, 1.6};
  static constexpr double context_thresholds[] = {0.5, 0.7, 0.85, 0.95};

  Rng rng(derive_seed(cfg.seed, split));
  Dataset ds;
  ds.feature_count = c;
  for (std::size_t q = 0; q < queries; ++q) {
    QueryGroup g;
    g.qid = std::to_string(qid_offset + q);
    g.feature_count = c;
    bool ctx = rng.uniform() < 0.5;
    for (std::size_t d = 0; d < cfg.docs_per_query; ++d) {
      std::vector<double> x(c);
      for (double& v : x) v = rng.uniform();
      int label = 0;
      if (cfg.task == SyntheticTask::rankable) {
        double t = 0.0;
        for (std::size_t j = 0; j < c; ++j) t += w[j] * x[j];
        label = grade((t - mean_t) / sd_t, rank_thresholds);
      } else {
        x[0] += ctx ? 0.15 : -0.15;
        label = grade(ctx ? x[1] : x[2], context_thresholds);
      }
      g.features.insert(g.features.end(), x.begin(), x.end());
      g.labels.push_back(label);
    }
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

}  // namespace detail

inline SyntheticSplits generate_synthetic(const SyntheticConfig& cfg) {
  return {detail::synthetic_split(cfg, cfg.train_queries, "train", 1),
          detail::synthetic_split(cfg, cfg.valid_queries, "valid", 1 + cfg.train_queries),
          detail::synthetic_split(cfg, cfg.test_queries, "test", 1 + cfg.train_queries + cfg.valid_queries)};
}

}  // namespace serank
