#pragma once

// Scoring models: univariate MLP, GSF(m), SERank (SE blocks), SERank-b
// (SE-b blocks) and the two ablations. Every model maps a masked L x C query
// matrix to L scores; batches are consecutive equal-length row segments.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "serank/autodiff.hpp"
#include "serank/kv.hpp"
#include "serank/letor.hpp"
#include "serank/random.hpp"
#include "serank/tensor.hpp"

namespace serank {

enum class Variant { univariate, gsf, serank, serank_b, serank_no_squeeze, serank_no_excitation };

/// Outer activation of the excitation; relu reproduces the literal double-ReLU form.
enum class ExciteActivation { sigmoid, relu };

enum class Mode { train, infer };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::univariate: return "univariate";
    case Variant::gsf: return "gsf";
    case Variant::serank: return "serank";
    case Variant::serank_b: return "serank_b";
    case Variant::serank_no_squeeze: return "serank_no_squeeze";
    case Variant::serank_no_excitation: return "serank_no_excitation";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::univariate, Variant::gsf, Variant::serank, Variant::serank_b, Variant::serank_no_squeeze,
                    Variant::serank_no_excitation})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown model variant '" + s + "'");
}

inline std::string to_string(ad::Reduce r) { return r == ad::Reduce::mean ? "mean" : "max"; }
inline ad::Reduce parse_pooling(const std::string& s) {
  if (s == "mean") return ad::Reduce::mean;
  if (s == "max") return ad::Reduce::max;
  throw ConfigError("unknown pooling '" + s + "'");
}
inline std::string to_string(ExciteActivation a) { return a == ExciteActivation::sigmoid ? "sigmoid" : "relu"; }
inline ExciteActivation parse_excite_activation(const std::string& s) {
  if (s == "sigmoid") return ExciteActivation::sigmoid;
  if (s == "relu") return ExciteActivation::relu;
  throw ConfigError("unknown excitation activation '" + s + "'");
}

inline bool has_se_blocks(Variant v) { return v != Variant::univariate && v != Variant::gsf; }

struct ModelSpec {
  Variant variant = Variant::serank_b;
  std::size_t input_width = 136;
  std::vector<std::size_t> hidden_widths{64, 32, 16};
  std::size_t group_size = 1;  // gsf only
  std::size_t shrinkage = 2;
  ad::Reduce pooling = ad::Reduce::mean;
  bool batch_norm = true;
  bool se_on_input = true;
  ExciteActivation excite_activation = ExciteActivation::sigmoid;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_width == 0) throw ConfigError("model.input_width must be positive");
    if (hidden_widths.empty()) throw ConfigError("model.hidden_widths must not be empty");
    for (std::size_t w : hidden_widths)
      if (w == 0) throw ConfigError("model.hidden_widths entries must be positive");
    if (variant == Variant::gsf && group_size == 0) throw ConfigError("model.group_size must be at least 1");
    if (!has_se_blocks(variant)) return;
    if (shrinkage == 0) throw ConfigError("model.shrinkage must be at least 1");
    auto check = [&](std::size_t width) {
      if (width / shrinkage == 0)
        throw ConfigError("model.shrinkage " + std::to_string(shrinkage) + " leaves no units for an SE block of width " +
                          std::to_string(width));
    };
    if (se_on_input) check(input_width);
    // no_excitation doubles the width each block, so the later blocks are wider
    std::size_t factor = variant == Variant::serank_no_excitation ? 2 : 1;
    for (std::size_t w : hidden_widths) check(w * factor);
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline KeyValues spec_to_kv(const ModelSpec& s) {
  std::string widths;
  for (std::size_t i = 0; i < s.hidden_widths.size(); ++i) widths += (i ? "," : "") + std::to_string(s.hidden_widths[i]);
  return {{"model.variant", to_string(s.variant)},
          {"model.input_width", std::to_string(s.input_width)},
          {"model.hidden_widths", widths},
          {"model.group_size", std::to_string(s.group_size)},
          {"model.shrinkage", std::to_string(s.shrinkage)},
          {"model.pooling", to_string(s.pooling)},
          {"model.batch_norm", s.batch_norm ? "true" : "false"},
          {"model.se_on_input", s.se_on_input ? "true" : "false"},
          {"model.excite_activation", to_string(s.excite_activation)},
          {"model.seed", std::to_string(s.seed)}};
}

inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of widths");
  return out;
}

/// Applies one model.* key; returns false when the key is not a model key.
inline bool apply_spec_kv(ModelSpec& s, const std::string& key, const std::string& v) {
  if (key == "model.variant") s.variant = parse_variant(v);
  else if (key == "model.input_width") s.input_width = parse_uint(key, v);
  else if (key == "model.hidden_widths") s.hidden_widths = parse_widths(key, v);
  else if (key == "model.group_size") s.group_size = parse_uint(key, v);
  else if (key == "model.shrinkage") s.shrinkage = parse_uint(key, v);
  else if (key == "model.pooling") s.pooling = parse_pooling(v);
  else if (key == "model.batch_norm") s.batch_norm = parse_bool(key, v);
  else if (key == "model.se_on_input") s.se_on_input = parse_bool(key, v);
  else if (key == "model.excite_activation") s.excite_activation = parse_excite_activation(v);
  else if (key == "model.seed") s.seed = parse_uint(key, v);
  else return false;
  return true;
}

// ---------------------------------------------------------------------------
// Layer plan: the single description of a model's structure, shared by
// initialization, the forward pass and FLOPs accounting.

struct BlockPlan {
  std::string name;  // parameter prefix, e.g. "se_in" or "se1"
  std::size_t width = 0;
  std::size_t reduced = 0;
  std::size_t out_width = 0;  // 2 * width for the concat ablation
};

struct LayerPlan {
  std::string name;  // "fc0", "fc1", ...
  std::size_t in = 0;
  std::size_t out = 0;
  std::optional<BlockPlan> se_after;
};

struct ModelPlan {
  std::size_t trunk_input = 0;  // C, or m * C for gsf
  std::optional<BlockPlan> se_input;
  std::vector<LayerPlan> hidden;
  std::size_t output_in = 0;
  std::size_t output_units = 1;  // m for gsf
};

inline ModelPlan plan_model(const ModelSpec& spec) {
  spec.validate();
  ModelPlan p;
  bool gsf = spec.variant == Variant::gsf;
  bool se = has_se_blocks(spec.variant);
  std::size_t expand = spec.variant == Variant::serank_no_excitation ? 2 : 1;
  auto block = [&](std::string name, std::size_t width) {
    return BlockPlan{std::move(name), width, width / spec.shrinkage, width * expand};
  };
  p.trunk_input = gsf ? spec.group_size * spec.input_width : spec.input_width;
  std::size_t width = p.trunk_input;
  if (se && spec.se_on_input) {
    p.se_input = block("se_in", width);
    width = p.se_input->out_width;
  }
  for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
    LayerPlan l{"fc" + std::to_string(i), width, spec.hidden_widths[i], std::nullopt};
    width = l.out;
    if (se) {
      l.se_after = block("se" + std::to_string(i), width);
      width = l.se_after->out_width;
    }
    p.hidden.push_back(std::move(l));
  }
  p.output_in = width;
  p.output_units = gsf ? spec.group_size : 1;
  return p;
}

// ---------------------------------------------------------------------------

struct ScoringModel {
  ModelSpec spec;
  std::map<std::string, Tensor> params;

  /// Batch-norm moving statistics are state, not trainable parameters.
  static bool is_trainable(const std::string& name) { return name.find(".moving_") == std::string::npos; }

  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("model has no parameter '" + name + "'");
    return it->second;
  }
  Tensor& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("model has no parameter '" + name + "'");
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params)
      if (is_trainable(name)) n += t.size();
    return n;
  }
};

inline constexpr double kBatchNormEpsilon = 1e-3;
inline constexpr double kBatchNormMomentum = 0.99;

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases,
/// unit batch-norm scale, zero shift, moving statistics (0, 1).
inline ScoringModel init_model(const ModelSpec& spec) {
  ModelPlan plan = plan_model(spec);
  ScoringModel m;
  m.spec = spec;
  Rng rng(spec.seed);
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(fan_in, fan_out);
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
  };
  auto add_block = [&](const BlockPlan& b) {
    m.params[b.name + ".w1"] = glorot(b.width, b.reduced);
    m.params[b.name + ".w2"] = glorot(b.reduced, b.width);
  };
  if (plan.se_input) add_block(*plan.se_input);
  for (std::size_t i = 0; i < plan.hidden.size(); ++i) {
    const LayerPlan& l = plan.hidden[i];
    m.params[l.name + ".weight"] = glorot(l.in, l.out);
    m.params[l.name + ".bias"] = Tensor::zeros(1, l.out);
    if (spec.batch_norm) {
      std::string bn = "bn" + std::to_string(i);
      m.params[bn + ".gamma"] = Tensor::filled(1, l.out, 1.0);
      m.params[bn + ".beta"] = Tensor::zeros(1, l.out);
      m.params[bn + ".moving_mean"] = Tensor::zeros(1, l.out);
      m.params[bn + ".moving_var"] = Tensor::filled(1, l.out, 1.0);
    }
    if (l.se_after) add_block(*l.se_after);
  }
  m.params["out.weight"] = glorot(plan.output_in, plan.output_units);
  m.params["out.bias"] = Tensor::zeros(1, plan.output_units);
  return m;
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation building blocks

/// Per-channel statistic U over the masked-in documents of each segment.
inline ad::Var squeeze(ad::Var x, const Mask& mask, ad::Reduce pooling, std::size_t segment_rows = 0) {
  return ad::reduce(pooling, x, mask, segment_rows);
}

/// s = act(relu(U . W1) . W2), one gate row per row of U.
inline ad::Var excite(ad::Var u, ad::Var w1, ad::Var w2, ExciteActivation act = ExciteActivation::sigmoid) {
  if (w2.cols() != u.cols())
    throw DimensionError("excite: W2 produces " + std::to_string(w2.cols()) + " gates for " + std::to_string(u.cols()) +
                         " channels");
  ad::Var z = ad::matmul(ad::relu(ad::matmul(u, w1)), w2);
  return act == ExciteActivation::sigmoid ? ad::sigmoid(z) : ad::relu(z);
}

/// X rescaled per channel by the excitation of its pooled statistics.
inline ad::Var se_block(ad::Var x, const Mask& mask, ad::Var w1, ad::Var w2, ad::Reduce pooling,
                        std::size_t segment_rows = 0, ExciteActivation act = ExciteActivation::sigmoid) {
  ad::Var s = excite(squeeze(x, mask, pooling, segment_rows), w1, w2, act);
  return ad::mul(x, s);
}

namespace detail {

// Pooled SE-b gates: per-document reduction, pooling, expansion.
inline ad::Var se_b_gates(ad::Var x, const Mask& mask, ad::Var w1, ad::Var w2, ad::Reduce pooling,
                          std::size_t segment_rows, ExciteActivation act) {
  if (w2.cols() != x.cols())
    throw DimensionError("se_b: W2 produces " + std::to_string(w2.cols()) + " gates for " + std::to_string(x.cols()) +
                         " channels");
  ad::Var h = ad::relu(ad::matmul(x, w1));
  ad::Var u = ad::reduce(pooling, h, mask, segment_rows);
  ad::Var z = ad::matmul(u, w2);
  return act == ExciteActivation::sigmoid ? ad::sigmoid(z) : ad::relu(z);
}

}  // namespace detail

/// SE-b: reduce each document with FC(C -> C/r) + relu, pool over documents,
/// expand with FC(C/r -> C) + sigmoid, rescale X.
inline ad::Var se_b_block(ad::Var x, const Mask& mask, ad::Var w1, ad::Var w2, ad::Reduce pooling,
                          std::size_t segment_rows = 0, ExciteActivation act = ExciteActivation::sigmoid) {
  return ad::mul(x, detail::se_b_gates(x, mask, w1, w2, pooling, segment_rows, act));
}

/// Ablation without squeeze: every document is gated by its own excitation.
inline ad::Var se_no_squeeze_block(ad::Var x, ad::Var w1, ad::Var w2, ExciteActivation act = ExciteActivation::sigmoid) {
  return ad::mul(x, excite(x, w1, w2, act));
}

/// Ablation without excitation: SE-b gates are concatenated to X instead of
/// multiplied, doubling the width.
inline ad::Var se_no_excitation_block(ad::Var x, const Mask& mask, ad::Var w1, ad::Var w2, ad::Reduce pooling,
                                      std::size_t segment_rows = 0,
                                      ExciteActivation act = ExciteActivation::sigmoid) {
  ad::Var s = detail::se_b_gates(x, mask, w1, w2, pooling, segment_rows, act);
  std::size_t seg = segment_rows == 0 ? x.rows() : segment_rows;
  return ad::concat_cols(x, ad::repeat_rows(s, seg));
}

// ---------------------------------------------------------------------------
// Forward pass

using ParamVars = std::map<std::string, ad::Var>;

/// Trainable parameters become gradient-tracked leaves; moving statistics are constants.
inline ParamVars bind_parameters(ad::Graph& g, const ScoringModel& m) {
  ParamVars vars;
  for (const auto& [name, t] : m.params)
    vars.emplace(name, ScoringModel::is_trainable(name) ? g.parameter(t) : g.constant(t));
  return vars;
}

/// Batch statistics observed by a train-mode batch-norm layer.
struct BatchNormObservation {
  std::string layer;  // "bn0", ...
  std::vector<double> mean;
  std::vector<double> var;
};

struct ForwardOutput {
  ad::Var scores;  // N x 1; rows with mask false carry no meaning
  std::vector<BatchNormObservation> batch_norm;
};

namespace detail {

inline const ad::Var& pv(const ParamVars& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("parameter '" + name + "' is not bound");
  return it->second;
}

inline ad::Var apply_block(const ModelSpec& spec, const BlockPlan& b, const ParamVars& p, ad::Var x, const Mask& mask,
                           std::size_t seg) {
  const ad::Var& w1 = pv(p, b.name + ".w1");
  const ad::Var& w2 = pv(p, b.name + ".w2");
  switch (spec.variant) {
    case Variant::serank: return se_block(x, mask, w1, w2, spec.pooling, seg, spec.excite_activation);
    case Variant::serank_b: return se_b_block(x, mask, w1, w2, spec.pooling, seg, spec.excite_activation);
    case Variant::serank_no_squeeze: return se_no_squeeze_block(x, w1, w2, spec.excite_activation);
    case Variant::serank_no_excitation:
      return se_no_excitation_block(x, mask, w1, w2, spec.pooling, seg, spec.excite_activation);
    default: throw std::logic_error("variant has no SE blocks");
  }
}

// (h - mean) / sqrt(var + eps) * gamma + beta over the masked-in rows.
inline ad::Var batch_norm(const std::string& bn, const ParamVars& p, ad::Var h, const Mask& mask, Mode mode,
                          std::vector<BatchNormObservation>& observed) {
  ad::Graph& g = *h.graph();
  ad::Var centered, inv_std;
  if (mode == Mode::train) {
    ad::Var mean = ad::reduce(ad::Reduce::mean, h, mask);
    centered = ad::sub(h, mean);
    ad::Var var = ad::reduce(ad::Reduce::mean, ad::mul(centered, centered), mask);
    inv_std = ad::rsqrt(ad::add_scalar(var, kBatchNormEpsilon));
    observed.push_back({bn, mean.value().data(), var.value().data()});
  } else {
    const Tensor& mm = pv(p, bn + ".moving_mean").value();
    const Tensor& mv = pv(p, bn + ".moving_var").value();
    Tensor inv(mv.shape());
    for (std::size_t j = 0; j < mv.size(); ++j) inv[j] = 1.0 / std::sqrt(mv[j] + kBatchNormEpsilon);
    centered = ad::sub(h, g.constant(mm));
    inv_std = g.constant(std::move(inv));
  }
  return ad::add(ad::mul(ad::mul(centered, inv_std), pv(p, bn + ".gamma")), pv(p, bn + ".beta"));
}

inline ad::Var trunk(const ScoringModel& m, const ModelPlan& plan, const ParamVars& p, ad::Var h, const Mask& mask,
                     std::size_t seg, Mode mode, std::vector<BatchNormObservation>& observed) {
  if (plan.se_input) h = apply_block(m.spec, *plan.se_input, p, h, mask, seg);
  for (std::size_t i = 0; i < plan.hidden.size(); ++i) {
    const LayerPlan& l = plan.hidden[i];
    h = ad::add(ad::matmul(h, pv(p, l.name + ".weight")), pv(p, l.name + ".bias"));
    if (m.spec.batch_norm) h = batch_norm("bn" + std::to_string(i), p, h, mask, mode, observed);
    h = ad::relu(h);
    if (l.se_after) h = apply_block(m.spec, *l.se_after, p, h, mask, seg);
  }
  return ad::add(ad::matmul(h, pv(p, "out.weight")), pv(p, "out.bias"));
}

// GSF(m): every query of n valid documents (in a shuffled order at train time,
// input order at inference) yields n circular windows of m consecutive
// documents; each window's concatenated features produce m scores and a
// document's score is the mean over the m windows that contain it.
inline ad::Var gsf_forward(const ScoringModel& m, const ModelPlan& plan, const ParamVars& p, ad::Var x, const Mask& mask,
                           std::size_t seg, Mode mode, std::uint64_t shuffle_seed,
                           std::vector<BatchNormObservation>& observed) {
  std::size_t gs = m.spec.group_size;
  std::size_t n_rows = x.rows();
  std::size_t c = x.cols();
  if (seg == 0) seg = n_rows;
  Rng rng(shuffle_seed);

  std::vector<long> member_rows;   // (group, offset) -> source row
  std::vector<long> score_source;  // (row, offset) -> flat index into group scores
  score_source.assign(n_rows * gs, -1);
  std::size_t groups = 0;
  for (std::size_t q = 0; q * seg < n_rows; ++q) {
    std::vector<std::size_t> order;
    for (std::size_t r = q * seg; r < (q + 1) * seg; ++r)
      if (mask[r]) order.push_back(r);
    if (order.empty()) throw InvalidQueryError("gsf: query " + std::to_string(q) + " has an empty mask");
    if (mode == Mode::train) rng.shuffle(order);
    std::size_t n = order.size();
    for (std::size_t w = 0; w < n; ++w)
      for (std::size_t t = 0; t < gs; ++t) member_rows.push_back(static_cast<long>(order[(w + t) % n]));
    for (std::size_t pos = 0; pos < n; ++pos)
      for (std::size_t t = 0; t < gs; ++t) {
        std::size_t window = groups + (pos + n * gs - t) % n;
        score_source[order[pos] * gs + t] = static_cast<long>(window * gs + t);
      }
    groups += n;
  }
  ad::Var grouped = ad::reshape(ad::gather_rows(x, std::move(member_rows)), groups, gs * c);
  Mask all(groups, true);
  ad::Var group_scores = trunk(m, plan, p, grouped, all, 0, mode, observed);  // groups x m
  ad::Var flat = ad::reshape(group_scores, groups * gs, 1);
  ad::Var per_doc = ad::reshape(ad::gather_rows(flat, std::move(score_source)), n_rows, gs);
  ad::Graph& g = *x.graph();
  return ad::matmul(per_doc, g.constant(Tensor::filled(gs, 1, 1.0 / static_cast<double>(gs))));
}

}  // namespace detail

/// Scores a batch laid out as segments of segment_rows rows (0 = one query).
/// x is N x C. shuffle_seed drives the GSF group order in train mode.
inline ForwardOutput forward(const ScoringModel& m, const ParamVars& p, ad::Var x, const Mask& mask,
                             std::size_t segment_rows, Mode mode, std::uint64_t shuffle_seed = 0) {
  if (x.cols() != m.spec.input_width)
    throw DimensionError("model expects " + std::to_string(m.spec.input_width) + " features, input has " +
                         std::to_string(x.cols()));
  if (mask.size() != x.rows()) throw DimensionError("mask length does not match the number of documents");
  ModelPlan plan = plan_model(m.spec);
  ForwardOutput out;
  if (m.spec.variant == Variant::gsf)
    out.scores = detail::gsf_forward(m, plan, p, x, mask, segment_rows, mode, shuffle_seed, out.batch_norm);
  else
    out.scores = detail::trunk(m, plan, p, x, mask, segment_rows, mode, out.batch_norm);
  return out;
}

/// Folds observed batch statistics into the moving averages.
inline void update_moving_stats(ScoringModel& m, const std::vector<BatchNormObservation>& observed,
                                double momentum = kBatchNormMomentum) {
  for (const auto& o : observed) {
    Tensor& mm = m.param(o.layer + ".moving_mean");
    Tensor& mv = m.param(o.layer + ".moving_var");
    for (std::size_t j = 0; j < mm.size(); ++j) {
      mm[j] = momentum * mm[j] + (1.0 - momentum) * o.mean[j];
      mv[j] = momentum * mv[j] + (1.0 - momentum) * o.var[j];
    }
  }
}

/// Scores one query. Masked-out documents get -infinity.
inline std::vector<double> score(const ScoringModel& m, const Tensor& x, const Mask& mask, Mode mode = Mode::infer,
                                 std::uint64_t shuffle_seed = 0) {
  ad::Graph g;
  ParamVars p;
  for (const auto& [name, t] : m.params) p.emplace(name, g.constant(t));
  ForwardOutput out = forward(m, p, g.constant(x), mask, 0, mode, shuffle_seed);
  std::vector<double> s = out.scores.value().data();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!mask[i]) s[i] = -std::numeric_limits<double>::infinity();
  return s;
}

inline std::vector<double> score(const ScoringModel& m, const QueryGroup& q) {
  return score(m, q.matrix(), Mask(q.size(), true));
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/model.cfg (key = value spec), <dir>/params/<name>.bin
// and, when normalization was used, <dir>/stats.txt.
//
// Parameter file layout, little-endian: 8-byte magic "SRKTNSR1", u64 rank,
// rank x u64 dims, then the float64 values in row-major order.

namespace detail {

inline constexpr char kTensorMagic[8] = {'S', 'R', 'K', 'T', 'N', 'S', 'R', '1'};

template <class T>
void write_le(std::ostream& out, T v) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), 8);
}

template <class T>
T read_le(std::istream& in) {
  std::uint64_t bits = 0;
  if (!in.read(reinterpret_cast<char*>(&bits), 8)) throw std::runtime_error("truncated tensor file");
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  T v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(detail::kTensorMagic, 8);
  detail::write_le<std::uint64_t>(out, t.rank());
  for (std::size_t d : t.shape()) detail::write_le<std::uint64_t>(out, d);
  for (double v : t.data()) detail::write_le<double>(out, v);
}

inline Tensor read_tensor(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kTensorMagic, 8) != 0)
    throw std::runtime_error("not a tensor file (bad magic)");
  auto rank = detail::read_le<std::uint64_t>(in);
  if (rank > 8) throw std::runtime_error("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = detail::read_le<std::uint64_t>(in);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = detail::read_le<double>(in);
  return Tensor(std::move(shape), std::move(data));
}

struct Checkpoint {
  ScoringModel model;
  FeatureStats stats;  // empty when the model consumes raw features
};

inline void save_checkpoint(const std::filesystem::path& dir, const ScoringModel& m, const FeatureStats& stats = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  {
    std::ofstream out(dir / "model.cfg");
    if (!out) throw std::runtime_error("cannot write checkpoint in '" + dir.string() + "'");
    write_kv(out, spec_to_kv(m.spec));
  }
  for (const auto& [name, t] : m.params) {
    std::ofstream out(dir / "params" / (name + ".bin"), std::ios::binary);
    write_tensor(out, t);
  }
  if (!stats.empty()) {
    std::ofstream out(dir / "stats.txt");
    write_stats(out, stats);
  } else {
    fs::remove(dir / "stats.txt");
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream spec_in(dir / "model.cfg");
  if (!spec_in) throw std::runtime_error("no checkpoint at '" + dir.string() + "'");
  ModelSpec spec;
  for (const auto& [k, v] : read_kv(spec_in))
    if (!apply_spec_kv(spec, k, v)) throw ConfigError("unknown key '" + k + "' in " + (dir / "model.cfg").string());
  Checkpoint ck;
  ck.model = init_model(spec);
  for (auto& [name, t] : ck.model.params) {
    std::ifstream in(dir / "params" / (name + ".bin"), std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
    Tensor loaded = read_tensor(in);
    if (loaded.shape() != t.shape())
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(loaded.shape()) + ", expected " +
                           shape_str(t.shape()));
    t = std::move(loaded);
  }
  if (fs::exists(dir / "stats.txt")) {
    std::ifstream in(dir / "stats.txt");
    ck.stats = read_stats(in);
  }
  return ck;
}

}  // namespace serank
