#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "serank/letor.hpp"
#include "serank/losses.hpp"
#include "serank/metrics.hpp"
#include "serank/models.hpp"
#include "serank/random.hpp"

namespace serank {

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t batch_size = 128;
  std::size_t max_steps = 30000;
  /// When > 0, train this many epochs and keep the last model instead of
  /// selecting on validation NDCG.
  std::size_t max_epochs = 0;
  std::size_t doc_cap = 200;
  std::size_t eval_every = 1000;
  std::uint64_t seed = 0;
  double adagrad_init_acc = 0.1;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  LossSpec loss;
  std::size_t select_k = 5;
  unsigned threads = 1;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
    if (max_steps == 0 && max_epochs == 0) throw ConfigError("train.max_steps must be at least 1");
    if (eval_every == 0) throw ConfigError("train.eval_every must be at least 1");
    if (adagrad_init_acc < 0.0) throw ConfigError("train.adagrad_init_acc must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("train.clip_norm must be >= 0");
  }
};

struct TrainingAbort : std::runtime_error {
  TrainingAbort(const std::string& what, std::size_t at_step) : std::runtime_error(what), step(at_step) {}
  std::size_t step;
};

using ParamMap = std::map<std::string, Tensor>;

/// Per-parameter squared-gradient accumulators.
struct AdagradState {
  explicit AdagradState(double initial = 0.1) : initial_accumulator(initial) {}
  double initial_accumulator;
  ParamMap acc;
};

/// acc += g^2; param -= lr * g / sqrt(acc). Accumulators start at the state's
/// initial value; there is no extra epsilon, so a zero accumulator with a zero
/// gradient leaves the parameter untouched.
inline void adagrad_step(ParamMap& params, const ParamMap& grads, AdagradState& state, double lr) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("adagrad: no parameter '" + name + "'");
    Tensor& p = it->second;
    if (p.shape() != g.shape())
      throw DimensionError("adagrad: gradient " + shape_str(g.shape()) + " for parameter '" + name + "' of shape " +
                           shape_str(p.shape()));
    auto [acc_it, fresh] = state.acc.try_emplace(name, Tensor(p.shape(), state.initial_accumulator));
    Tensor& acc = acc_it->second;
    if (acc.shape() != p.shape()) throw DimensionError("adagrad: accumulator shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc[i] += g[i] * g[i];
      if (g[i] != 0.0) p[i] -= lr * g[i] / std::sqrt(acc[i]);
    }
  }
}

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> valid_ndcg;

  friend bool operator==(const TrainLogEntry&, const TrainLogEntry&) = default;
};

struct TrainResult {
  ScoringModel best;
  ScoringModel last;
  std::vector<TrainLogEntry> log;
  std::size_t best_step = 0;
  double best_metric = -1.0;
};

/// `step<TAB>loss<TAB>valid_ndcg5`; the metric column only on evaluation steps.
inline void write_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log) {
  out << "step\tloss\tvalid_ndcg5\n";
  for (const auto& e : log) {
    out << e.step << '\t' << format_double(e.loss);
    if (e.valid_ndcg) out << '\t' << format_double(*e.valid_ndcg);
    out << '\n';
  }
}

/// Result of one forward/backward pass over a batch.
struct StepGradients {
  double loss = 0.0;
  ParamMap grads;
  std::vector<BatchNormObservation> batch_norm;
};

inline StepGradients compute_gradients(const ScoringModel& model, const Batch& batch, const LossSpec& loss,
                                       std::uint64_t shuffle_seed) {
  ad::Graph g;
  ParamVars p = bind_parameters(g, model);
  ad::Var x = g.constant(batch.matrix());
  ForwardOutput fwd = forward(model, p, x, batch.mask, batch.max_docs, Mode::train, shuffle_seed);
  ad::Var l = ranking_loss(fwd.scores, batch.labels, batch.mask, batch.max_docs, loss);
  StepGradients out;
  out.loss = l.value()[0];
  out.batch_norm = std::move(fwd.batch_norm);
  if (!std::isfinite(out.loss)) return out;
  g.backward(l);
  for (const auto& [name, v] : p)
    if (ScoringModel::is_trainable(name)) out.grads.emplace(name, v.grad());
  return out;
}

namespace detail {

inline std::string divergence_report(std::size_t step, double loss, const ScoringModel& m, const ParamMap& grads) {
  double max_param = 0.0, max_grad = 0.0;
  for (const auto& [n, t] : m.params) max_param = std::max(max_param, t.max_abs());
  for (const auto& [n, t] : grads) max_grad = std::max(max_grad, t.max_abs());
  std::ostringstream os;
  os << "non-finite loss " << loss << " at step " << step << " (max |param| = " << max_param
     << ", max |grad| = " << max_grad << ")";
  return os.str();
}

}  // namespace detail

/// Adagrad training with validation-driven model selection on NDCG@select_k.
/// Evaluates every eval_every steps and at the final step; the best model is
/// the one with the strictly highest validation metric seen so far.
inline TrainResult train(ScoringModel model, const Dataset& train_ds, const Dataset& valid_ds, const TrainConfig& cfg,
                         const std::function<void(const TrainLogEntry&)>& on_log = {}) {
  cfg.validate();
  if (train_ds.feature_count != model.spec.input_width)
    throw DimensionError("training data has " + std::to_string(train_ds.feature_count) + " features, model expects " +
                         std::to_string(model.spec.input_width));
  if (!valid_ds.groups.empty() && valid_ds.feature_count != model.spec.input_width)
    throw DimensionError("validation data width does not match the model");

  BatchIterator batches(train_ds, cfg.batch_size, derive_seed(cfg.seed, "batches"), cfg.doc_cap);
  bool epoch_mode = cfg.max_epochs > 0;
  std::size_t steps = epoch_mode ? cfg.max_epochs * batches.batches_per_epoch() : cfg.max_steps;
  bool select = !epoch_mode && !valid_ds.groups.empty();

  AdagradState state(cfg.adagrad_init_acc);
  TrainResult result;
  result.best = model;
  for (std::size_t step = 1; step <= steps; ++step) {
    Batch batch = batches.next();
    StepGradients sg = compute_gradients(model, batch, cfg.loss, derive_seed(cfg.seed, "gsf", step));
    if (!std::isfinite(sg.loss)) throw TrainingAbort(detail::divergence_report(step, sg.loss, model, sg.grads), step);

    if (cfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& [n, t] : sg.grads)
        for (double v : t.data()) sq += v * v;
      double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm)
        for (auto& [n, t] : sg.grads)
          for (double& v : t.data()) v *= cfg.clip_norm / norm;
    }
    adagrad_step(model.params, sg.grads, state, cfg.learning_rate);
    update_moving_stats(model, sg.batch_norm);
    for (const auto& [n, t] : model.params)
      if (!t.all_finite()) throw TrainingAbort(detail::divergence_report(step, sg.loss, model, sg.grads), step);

    TrainLogEntry entry{step, sg.loss, std::nullopt};
    if (!valid_ds.groups.empty() && (step % cfg.eval_every == 0 || step == steps)) {
      double metric = evaluate(model, valid_ds, {cfg.select_k}, cfg.threads).ndcg_at.at(cfg.select_k);
      entry.valid_ndcg = metric;
      if (select && metric > result.best_metric) {
        result.best_metric = metric;
        result.best_step = step;
        result.best = model;
      }
    }
    result.log.push_back(entry);
    if (on_log) on_log(entry);
  }
  result.last = model;
  if (!select) {
    result.best = model;
    result.best_step = steps;
    if (!result.log.empty() && result.log.back().valid_ndcg) result.best_metric = *result.log.back().valid_ndcg;
  }
  return result;
}

}  // namespace serank
