#pragma once

// Static FLOPs accounting of one forward pass over a single query of L
// documents with C features.
//
// Convention: an FC layer in -> out over R rows costs 2*R*in*out plus R*out
// for the bias; elementwise ops (relu, sigmoid, rescale) cost one per value;
// pooling L rows of C channels costs L*C; batch norm costs 4 per value.

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "serank/models.hpp"

namespace serank {

struct FlopsReport {
  std::vector<std::pair<std::string, std::uint64_t>> per_layer;
  std::uint64_t total = 0;
  std::size_t docs = 0;
  std::size_t features = 0;
};

namespace detail {

class FlopsCounter {
 public:
  void add(std::string name, std::uint64_t flops) {
    report.per_layer.emplace_back(std::move(name), flops);
    report.total += flops;
  }
  void fc(const std::string& name, std::uint64_t rows, std::uint64_t in, std::uint64_t out, bool bias) {
    add(name + ".matmul", 2 * rows * in * out);
    if (bias) add(name + ".bias", rows * out);
  }
  FlopsReport report;
};

inline void count_block(FlopsCounter& fc, const ModelSpec& spec, const BlockPlan& b, std::uint64_t rows) {
  const std::string& n = b.name;
  std::uint64_t w = b.width, red = b.reduced;
  switch (spec.variant) {
    case Variant::serank:
      fc.add(n + ".squeeze", rows * w);
      fc.fc(n + ".fc1", 1, w, red, false);
      fc.add(n + ".relu", red);
      fc.fc(n + ".fc2", 1, red, w, false);
      fc.add(n + ".gate", w);
      fc.add(n + ".rescale", rows * w);
      break;
    case Variant::serank_b:
    case Variant::serank_no_excitation:
      fc.fc(n + ".fc1", rows, w, red, false);
      fc.add(n + ".relu", rows * red);
      fc.add(n + ".squeeze", rows * red);
      fc.fc(n + ".fc2", 1, red, w, false);
      fc.add(n + ".gate", w);
      // the concat ablation copies instead of multiplying; counted the same
      fc.add(n + (spec.variant == Variant::serank_b ? ".rescale" : ".concat"), rows * w);
      break;
    case Variant::serank_no_squeeze:
      fc.fc(n + ".fc1", rows, w, red, false);
      fc.add(n + ".relu", rows * red);
      fc.fc(n + ".fc2", rows, red, w, false);
      fc.add(n + ".gate", rows * w);
      fc.add(n + ".rescale", rows * w);
      break;
    default: break;
  }
}

}  // namespace detail

/// Per-layer and total FLOPs of one inference forward pass over L documents.
/// GSF(m) runs its network once per circular window, i.e. L times.
inline FlopsReport count_flops(const ModelSpec& spec_in, std::size_t docs, std::size_t features) {
  if (docs == 0 || features == 0) throw ConfigError("count_flops: L and C must be at least 1");
  ModelSpec spec = spec_in;
  spec.input_width = features;
  ModelPlan plan = plan_model(spec);
  detail::FlopsCounter fc;
  std::uint64_t rows = docs;
  if (plan.se_input) detail::count_block(fc, spec, *plan.se_input, rows);
  for (std::size_t i = 0; i < plan.hidden.size(); ++i) {
    const LayerPlan& l = plan.hidden[i];
    fc.fc(l.name, rows, l.in, l.out, true);
    if (spec.batch_norm) fc.add("bn" + std::to_string(i), 4 * rows * l.out);
    fc.add(l.name + ".relu", rows * l.out);
    if (l.se_after) detail::count_block(fc, spec, *l.se_after, rows);
  }
  fc.fc("out", rows, plan.output_in, plan.output_units, true);
  // averaging m window scores per document: m - 1 adds each
  if (spec.variant == Variant::gsf && spec.group_size > 1) fc.add("gsf.aggregate", rows * (spec.group_size - 1));
  fc.report.docs = docs;
  fc.report.features = features;
  return fc.report;
}

/// `layer<TAB>flops` lines followed by `TOTAL<TAB>flops`.
inline void write_flops_tsv(std::ostream& out, const FlopsReport& r) {
  for (const auto& [name, f] : r.per_layer) out << name << '\t' << f << '\n';
  out << "TOTAL\t" << r.total << '\n';
}

}  // namespace serank
