#pragma once

// Flat dotted-key run configuration (`key = value`, `#` comments). Every key
// has a documented default; unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "serank/kv.hpp"
#include "serank/letor.hpp"
#include "serank/losses.hpp"
#include "serank/models.hpp"
#include "serank/random.hpp"
#include "serank/trainer.hpp"

namespace serank {

struct DataConfig {
  std::string train;
  std::string valid;
  std::string test;
  std::size_t feature_count = 136;
  bool standardize = true;
  /// Drop queries without relevant documents from the train and valid splits.
  bool discard_no_relevant = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  unsigned threads = 1;
  DataConfig data;
  ModelSpec model;
  TrainConfig train;
  SyntheticConfig synthetic;
  double stability_fraction = 0.5;

  /// Model spec with input width and seed resolved.
  ModelSpec model_spec(std::size_t input_width) const {
    ModelSpec s = model;
    s.input_width = input_width;
    s.seed = derive_seed(seed, "model");
    return s;
  }
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = derive_seed(seed, "train");
    t.threads = threads;
    return t;
  }
  SyntheticConfig synthetic_config() const {
    SyntheticConfig s = synthetic;
    s.seed = derive_seed(seed, "synthetic");
    return s;
  }
};

struct ConfigKey {
  const char* key;
  const char* description;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "root seed; model, training and synthetic data derive sub-seeds from it"},
      {"output_dir", "directory for checkpoints, logs and reports"},
      {"threads", "worker threads for evaluation"},
      {"data.train", "training split (LETOR text)"},
      {"data.valid", "validation split (LETOR text)"},
      {"data.test", "test split (LETOR text, optional)"},
      {"data.feature_count", "number of feature channels C"},
      {"data.standardize", "standardize features with training-split statistics"},
      {"data.discard_no_relevant", "drop train/valid queries whose labels are all 0"},
      {"model.variant", "univariate | gsf | serank | serank_b | serank_no_squeeze | serank_no_excitation"},
      {"model.hidden_widths", "comma-separated hidden layer widths"},
      {"model.group_size", "GSF group size m"},
      {"model.shrinkage", "SE shrinkage ratio r"},
      {"model.pooling", "squeeze pooling: mean | max"},
      {"model.batch_norm", "batch normalization after each hidden FC layer"},
      {"model.se_on_input", "SE block on the raw input features"},
      {"model.excite_activation", "outer excitation activation: sigmoid | relu"},
      {"train.learning_rate", "Adagrad learning rate"},
      {"train.batch_size", "queries per batch"},
      {"train.max_steps", "training steps"},
      {"train.max_epochs", "if > 0, train this many epochs and keep the last model"},
      {"train.doc_cap", "max documents per training query (0 = no cap)"},
      {"train.eval_every", "validation cadence in steps"},
      {"train.adagrad_init_acc", "initial Adagrad accumulator"},
      {"train.clip_norm", "global gradient-norm clip (0 = off)"},
      {"loss.kind", "pairwise_logistic | pairwise_logistic_lambda | softmax_ce"},
      {"loss.gain", "label gain: identity | pow2minus1"},
      {"loss.lambda_normalize", "divide lambda weights by the ideal DCG"},
      {"synthetic.task", "rankable | context"},
      {"synthetic.train_queries", "generated training queries"},
      {"synthetic.valid_queries", "generated validation queries"},
      {"synthetic.test_queries", "generated test queries"},
      {"synthetic.docs_per_query", "documents per generated query"},
      {"synthetic.feature_count", "features per generated document"},
      {"stability.mask_fraction", "fraction of documents removed per query"},
  };
  return keys;
}

/// Current value of every key, in config_keys() order.
inline KeyValues config_values(const RunConfig& c) {
  KeyValues model_kv = spec_to_kv(c.model);
  auto model_value = [&](const std::string& k) {
    for (const auto& [mk, mv] : model_kv)
      if (mk == k) return mv;
    return std::string();
  };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  KeyValues kv;
  for (const ConfigKey& ck : config_keys()) {
    std::string k = ck.key, v;
    if (k == "seed") v = std::to_string(c.seed);
    else if (k == "output_dir") v = c.output_dir;
    else if (k == "threads") v = std::to_string(c.threads);
    else if (k == "data.train") v = c.data.train;
    else if (k == "data.valid") v = c.data.valid;
    else if (k == "data.test") v = c.data.test;
    else if (k == "data.feature_count") v = std::to_string(c.data.feature_count);
    else if (k == "data.standardize") v = b(c.data.standardize);
    else if (k == "data.discard_no_relevant") v = b(c.data.discard_no_relevant);
    else if (k.rfind("model.", 0) == 0) v = model_value(k);
    else if (k == "train.learning_rate") v = format_double(c.train.learning_rate);
    else if (k == "train.batch_size") v = std::to_string(c.train.batch_size);
    else if (k == "train.max_steps") v = std::to_string(c.train.max_steps);
    else if (k == "train.max_epochs") v = std::to_string(c.train.max_epochs);
    else if (k == "train.doc_cap") v = std::to_string(c.train.doc_cap);
    else if (k == "train.eval_every") v = std::to_string(c.train.eval_every);
    else if (k == "train.adagrad_init_acc") v = format_double(c.train.adagrad_init_acc);
    else if (k == "train.clip_norm") v = format_double(c.train.clip_norm);
    else if (k == "loss.kind") v = to_string(c.train.loss.kind);
    else if (k == "loss.gain") v = to_string(c.train.loss.gain);
    else if (k == "loss.lambda_normalize") v = b(c.train.loss.lambda_normalize);
    else if (k == "synthetic.task") v = to_string(c.synthetic.task);
    else if (k == "synthetic.train_queries") v = std::to_string(c.synthetic.train_queries);
    else if (k == "synthetic.valid_queries") v = std::to_string(c.synthetic.valid_queries);
    else if (k == "synthetic.test_queries") v = std::to_string(c.synthetic.test_queries);
    else if (k == "synthetic.docs_per_query") v = std::to_string(c.synthetic.docs_per_query);
    else if (k == "synthetic.feature_count") v = std::to_string(c.synthetic.feature_count);
    else if (k == "stability.mask_fraction") v = format_double(c.stability_fraction);
    kv.emplace_back(k, v);
  }
  return kv;
}

inline void apply_config_kv(RunConfig& c, const std::string& k, const std::string& v) {
  if (k == "seed") c.seed = parse_uint(k, v);
  else if (k == "output_dir") c.output_dir = v;
  else if (k == "threads") c.threads = static_cast<unsigned>(std::max<unsigned long long>(1, parse_uint(k, v)));
  else if (k == "data.train") c.data.train = v;
  else if (k == "data.valid") c.data.valid = v;
  else if (k == "data.test") c.data.test = v;
  else if (k == "data.feature_count") c.data.feature_count = parse_uint(k, v);
  else if (k == "data.standardize") c.data.standardize = parse_bool(k, v);
  else if (k == "data.discard_no_relevant") c.data.discard_no_relevant = parse_bool(k, v);
  else if (k == "model.input_width" || k == "model.seed")
    throw ConfigError("'" + k + "' is derived (from data.feature_count / seed) and cannot be set");
  else if (k.rfind("model.", 0) == 0) {
    if (!apply_spec_kv(c.model, k, v)) throw ConfigError("unknown config key '" + k + "'");
  } else if (k == "train.learning_rate") c.train.learning_rate = parse_real(k, v);
  else if (k == "train.batch_size") c.train.batch_size = parse_uint(k, v);
  else if (k == "train.max_steps") c.train.max_steps = parse_uint(k, v);
  else if (k == "train.max_epochs") c.train.max_epochs = parse_uint(k, v);
  else if (k == "train.doc_cap") c.train.doc_cap = parse_uint(k, v);
  else if (k == "train.eval_every") c.train.eval_every = parse_uint(k, v);
  else if (k == "train.adagrad_init_acc") c.train.adagrad_init_acc = parse_real(k, v);
  else if (k == "train.clip_norm") c.train.clip_norm = parse_real(k, v);
  else if (k == "loss.kind") c.train.loss.kind = parse_loss_kind(v);
  else if (k == "loss.gain") c.train.loss.gain = parse_gain(v);
  else if (k == "loss.lambda_normalize") c.train.loss.lambda_normalize = parse_bool(k, v);
  else if (k == "synthetic.task") c.synthetic.task = parse_synthetic_task(v);
  else if (k == "synthetic.train_queries") c.synthetic.train_queries = parse_uint(k, v);
  else if (k == "synthetic.valid_queries") c.synthetic.valid_queries = parse_uint(k, v);
  else if (k == "synthetic.test_queries") c.synthetic.test_queries = parse_uint(k, v);
  else if (k == "synthetic.docs_per_query") c.synthetic.docs_per_query = parse_uint(k, v);
  else if (k == "synthetic.feature_count") c.synthetic.feature_count = parse_uint(k, v);
  else if (k == "stability.mask_fraction") c.stability_fraction = parse_real(k, v);
  else throw ConfigError("unknown config key '" + k + "'");
}

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig c;
  KeyValues kv;
  try {
    kv = read_kv(in);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config ") + e.what());
  }
  for (const auto& [k, v] : kv) apply_config_kv(c, k, v);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_run_config(in);
}

/// Help text listing every key with its default.
inline std::string config_keys_help() {
  RunConfig defaults;
  KeyValues values = config_values(defaults);
  std::ostringstream os;
  os << "Config keys (key = value, '#' comments; defaults shown):\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::string lhs = "  " + values[i].first + " = " + (values[i].second.empty() ? "\"\"" : values[i].second);
    os << lhs;
    if (lhs.size() < 44) os << std::string(44 - lhs.size(), ' ');
    else os << "  ";
    os << config_keys()[i].description << '\n';
  }
  return os.str();
}

}  // namespace serank
