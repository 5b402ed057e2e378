#include "psyinn/config.hpp"

#include <algorithm>
#include <fstream>
#include <istream>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::cfg {

namespace {

// key -> default ("" = no default)
const std::vector<std::pair<std::string, std::string>>& table() {
  static const std::vector<std::pair<std::string, std::string>> t = {
      {"form", "HLR"},
      {"alpha", "0.1"},
      {"l1", "0.001"},
      {"epochs_per_phase", "5"},
      {"max_rounds", "20"},
      {"lr_nn", "0.004"},
      {"lr_sr", "0.01"},
      {"batch_size", "8"},
      {"sr_batch_rows", "16"},
      {"prune_tol", "0.001"},
      {"patience", "10"},
      {"strategy", "random"},
      {"capacity", "5"},
      {"seed", "0"},
      {"fd_eps", "0.001"},
      {"bias_column", "true"},
      {"alternate", "true"},
      {"train_nn", "true"},
      {"train_sr", "true"},
      {"epoch_budget", "200"},
      {"budget_mode", "total"},
      {"hidden", "64"},
      {"decoder_hidden", "64"},
      {"horizon", "1"},
      {"split", "0.8,0.1,0.1"},
      {"split_seed", "0"},
      {"baseline_lr", "0.5"},
      {"baseline_epochs", "2000"},
      {"learners", ""},
      {"items", "20"},
      {"steps_per_learner", ""},
      {"noise_sd", "0"},
      {"mean_gap_days", "1"},
      {"synth_seed", "0"},
      {"truth_weights", ""},
      {"truth_bias", ""},
  };
  return t;
}

const std::string* default_of(const std::string& key) {
  for (const auto& [k, v] : table()) {
    if (k == key) return &v;
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& kv : table()) out.push_back(kv.first);
    return out;
  }();
  return keys;
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig c;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
    try {
      c.set(std::string(text::trim(line.substr(0, eq))), std::string(text::trim(line.substr(eq + 1))));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse(in, path);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(std::string(text::trim(assignment.substr(0, eq))), std::string(text::trim(assignment.substr(eq + 1))));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!default_of(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  const std::string* d = default_of(key);
  if (!d) throw ConfigError("unknown config key '" + key + "'");
  if (d->empty()) throw ConfigError("missing required config key '" + key + "'");
  return *d;
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return text::to_double(get(key), key);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

long long RunConfig::get_int(const std::string& key) const {
  try {
    return text::to_int(get(key), key);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

void RunConfig::require(const std::vector<std::string>& keys) const {
  for (const auto& k : keys) {
    if (!has(k) && default_of(k) && default_of(k)->empty()) throw ConfigError("missing required config key '" + k + "'");
    get(k);
  }
}

namespace {

std::size_t nonneg(long long v, const std::string& key) {
  if (v < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

}  // namespace

train::TrainerConfig RunConfig::trainer() const {
  train::TrainerConfig t;
  try {
    t.form = eq::EquationForm::parse(get("form"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  t.alpha = get_double("alpha");
  t.l1 = get_double("l1");
  t.epochs_per_phase = static_cast<int>(get_int("epochs_per_phase"));
  t.max_rounds = static_cast<int>(get_int("max_rounds"));
  t.lr_nn = get_double("lr_nn");
  t.lr_sr = get_double("lr_sr");
  t.batch_size = nonneg(get_int("batch_size"), "batch_size");
  t.sr_batch_rows = nonneg(get_int("sr_batch_rows"), "sr_batch_rows");
  t.prune_tol = get_double("prune_tol");
  t.patience = static_cast<int>(get_int("patience"));
  t.strategy = bq::parse_strategy(get("strategy"));
  t.capacity = nonneg(get_int("capacity"), "capacity");
  t.seed = nonneg(get_int("seed"), "seed");
  t.fd_eps = get_double("fd_eps");
  t.bias_column = get_bool("bias_column");
  t.alternate = get_bool("alternate");
  t.train_nn = get_bool("train_nn");
  t.train_sr = get_bool("train_sr");
  t.epoch_budget = static_cast<int>(get_int("epoch_budget"));
  const std::string mode = get("budget_mode");
  if (mode == "total")
    t.budget_mode = train::BudgetMode::Total;
  else if (mode == "per_phase")
    t.budget_mode = train::BudgetMode::PerPhase;
  else
    throw ConfigError("budget_mode must be total or per_phase");
  t.predictor.hidden = nonneg(get_int("hidden"), "hidden");
  t.predictor.decoder_hidden = nonneg(get_int("decoder_hidden"), "decoder_hidden");
  if (t.predictor.hidden == 0 || t.predictor.decoder_hidden == 0) throw ConfigError("hidden sizes must be positive");
  if (get_int("horizon") != 1) throw ConfigError("only horizon=1 (next-step prediction) is supported");
  t.validate();
  return t;
}

eq::BaselineModel parse_generator(eq::EquationForm form, const std::string& weights, const std::string& bias) {
  const auto rows = text::split(weights, ';');
  if (rows.size() != form.z()) {
    throw ConfigError("truth_weights needs " + std::to_string(form.z()) + " ';'-separated rows for " +
                      std::string(form.name()));
  }
  eq::BaselineModel m = eq::BaselineModel::zeros(form, data::kFeatureCount);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto w = text::to_doubles(rows[j], ',', "truth_weights");
    if (w.size() != data::kFeatureCount) {
      throw ConfigError("truth_weights rows need " + std::to_string(data::kFeatureCount) + " values");
    }
    for (std::size_t i = 0; i < w.size(); ++i) m.weights(j, i) = w[i];
  }
  const auto b = text::to_doubles(bias, ',', "truth_bias");
  if (b.size() != form.z()) throw ConfigError("truth_bias needs " + std::to_string(form.z()) + " values");
  m.bias = b;
  return m;
}

data::SynthConfig RunConfig::synth() const {
  require({"learners", "steps_per_learner", "truth_weights", "truth_bias"});
  data::SynthConfig s;
  eq::EquationForm form;
  try {
    form = eq::EquationForm::parse(get("form"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  s.learners = nonneg(get_int("learners"), "learners");
  s.items = nonneg(get_int("items"), "items");
  s.steps_per_learner = nonneg(get_int("steps_per_learner"), "steps_per_learner");
  s.noise_sd = get_double("noise_sd");
  s.mean_gap_days = get_double("mean_gap_days");
  s.seed = nonneg(get_int("synth_seed"), "synth_seed");
  s.generator = parse_generator(form, get("truth_weights"), get("truth_bias"));
  return s;
}

eq::FitHyper RunConfig::baseline_hyper() const {
  eq::FitHyper h;
  h.lr = get_double("baseline_lr");
  h.epochs = static_cast<int>(get_int("baseline_epochs"));
  h.seed = nonneg(get_int("seed"), "seed");
  return h;
}

std::array<double, 3> RunConfig::split_ratios() const {
  const auto r = text::to_doubles(get("split"), ',', "split");
  if (r.size() != 3) throw ConfigError("split needs three ratios: train,validation,test");
  return {r[0], r[1], r[2]};
}

}  // namespace psyinn::cfg
