#include "psyinn/equations.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::eq {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

std::size_t EquationForm::z() const {
  switch (kind) {
    case FormKind::HLR: return 1;
    case FormKind::Wickelgren: return 3;
    case FormKind::ACTR: return 2;
  }
  return 0;
}

std::string_view EquationForm::name() const {
  switch (kind) {
    case FormKind::HLR: return "HLR";
    case FormKind::Wickelgren: return "WICKELGREN";
    case FormKind::ACTR: return "ACTR";
  }
  return "?";
}

EquationForm EquationForm::parse(std::string_view s) {
  std::string u;
  for (char c : text::trim(s)) {
    if (c != '-' && c != '_') u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (u == "HLR") return {FormKind::HLR};
  if (u == "WICKELGREN") return {FormKind::Wickelgren};
  if (u == "ACTR") return {FormKind::ACTR};
  throw ConfigError("unknown equation form '" + std::string(s) + "' (expected HLR, WICKELGREN or ACTR)");
}

double evaluate(const EquationForm& form, std::span<const double> d, double delta_days) {
  if (d.size() != form.z()) {
    throw ShapeError(std::string(form.name()) + " expects " + std::to_string(form.z()) + " descriptors, got " +
                     std::to_string(d.size()));
  }
  if (!(delta_days >= 0.0)) throw DomainError("elapsed time must be nonnegative");
  switch (form.kind) {
    case FormKind::HLR: {
      const double h = std::exp2(std::clamp(d[0], -kHalfLifeExponentBound, kHalfLifeExponentBound));
      return std::exp2(-delta_days / h);
    }
    case FormKind::Wickelgren: {
      const double lambda = sigmoid(d[0]);
      const double beta = softplus(d[1]);
      const double psi = softplus(d[2]);
      return lambda * std::pow(1.0 + beta * delta_days, -psi);
    }
    case FormKind::ACTR:
      return sigmoid(d[0] - softplus(d[1]) * std::log1p(delta_days));
  }
  return 0.0;
}

ad::Var evaluate(const EquationForm& form, const ad::Var& descriptors, const ad::Var& delta_days) {
  const std::size_t rows = descriptors.rows();
  if (descriptors.cols() != form.z()) {
    throw ShapeError(std::string(form.name()) + " expects " + std::to_string(form.z()) + " descriptor columns, got " +
                     std::to_string(descriptors.cols()));
  }
  if (delta_days.rows() != rows || delta_days.cols() != 1) throw ShapeError("evaluate: delta must be rows x 1");
  for (double v : delta_days.value().data()) {
    if (!(v >= 0.0)) throw DomainError("elapsed time must be nonnegative");
  }
  auto col = [&](std::size_t j) { return ad::slice(descriptors, 0, rows, j, j + 1); };
  constexpr double ln2 = std::numbers::ln2;

  switch (form.kind) {
    case FormKind::HLR: {
      auto h = ad::exp(ad::scale(ad::clamp(col(0), -kHalfLifeExponentBound, kHalfLifeExponentBound), ln2));
      return ad::exp(ad::scale(delta_days / h, -ln2));
    }
    case FormKind::Wickelgren: {
      auto lambda = ad::sigmoid(col(0));
      auto beta = ad::softplus(col(1));
      auto psi = ad::softplus(col(2));
      auto base = ad::add_scalar(beta * delta_days, 1.0);
      return lambda * ad::exp(ad::neg(psi * ad::log(base)));
    }
    case FormKind::ACTR: {
      auto decay = ad::softplus(col(1));
      return ad::sigmoid(col(0) - decay * ad::log(ad::add_scalar(delta_days, 1.0)));
    }
  }
  throw Error("evaluate: unknown form");
}

// ---- baseline models --------------------------------------------------------

BaselineModel BaselineModel::zeros(EquationForm form, std::size_t n_features) {
  BaselineModel m;
  m.form = form;
  m.weights = ad::Tensor(form.z(), n_features);
  m.bias.assign(form.z(), 0.0);
  return m;
}

std::vector<double> BaselineModel::descriptors(const data::FeatureVector& x) const {
  if (x.size() != weights.cols()) throw ShapeError("baseline: feature width mismatch");
  std::vector<double> d(bias);
  for (std::size_t j = 0; j < weights.rows(); ++j)
    for (std::size_t i = 0; i < weights.cols(); ++i) d[j] += weights(j, i) * x[i];
  return d;
}

double BaselineModel::predict(const data::Step& step) const {
  return evaluate(form, descriptors(step.x), step.delta_days);
}

std::vector<double> predict_baseline(const BaselineModel& model, const data::LearnerSequence& sequence) {
  std::vector<double> out;
  out.reserve(sequence.steps.size());
  for (const auto& st : sequence.steps) out.push_back(model.predict(st));
  return out;
}

BaselineModel fit_baseline(EquationForm form, std::span<const data::LearnerSequence> sequences,
                           const FitHyper& hyper, std::vector<double>* loss_trace) {
  const std::size_t rows = data::total_steps(sequences);
  if (rows == 0) throw Error("fit_baseline: no steps to fit");
  const std::size_t n = sequences.front().steps.front().x.size();
  const std::size_t z = form.z();

  ad::Tensor x(rows, n), delta(rows, 1), y(rows, 1);
  std::size_t r = 0;
  for (const auto& s : sequences) {
    for (const auto& st : s.steps) {
      if (st.x.size() != n) throw ShapeError("fit_baseline: inconsistent feature width");
      for (std::size_t i = 0; i < n; ++i) x(r, i) = st.x[i];
      delta(r, 0) = st.delta_days;
      y(r, 0) = st.y;
      ++r;
    }
  }

  // Weights are held transposed (n x z) so descriptors are x * w + b.
  std::mt19937_64 rng(hyper.seed);
  std::uniform_real_distribution<double> init(-0.01, 0.01);
  ad::Tensor w(n, z);
  for (std::size_t j = 0; j < z; ++j)
    for (std::size_t i = 0; i < n; ++i) w(i, j) = init(rng);
  ad::Tensor b(1, z);

  auto forward = [&](ad::Tape& tape, bool trainable) {
    auto wv = trainable ? tape.variable(w) : tape.constant(w);
    auto bv = trainable ? tape.variable(b) : tape.constant(b);
    auto d = ad::matmul(tape.constant(x), wv) + bv;
    auto p = evaluate(form, d, tape.constant(delta));
    auto diff = p - tape.constant(y);
    return std::tuple{ad::mean(diff * diff), wv, bv};
  };

  auto diverged = [&](int epoch) {
    return NumericError("fit_baseline: loss diverged at epoch " + std::to_string(epoch) +
                        "; reduce lr (lr=" + text::fmt(hyper.lr) + ")");
  };

  double loss = 0.0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    ad::Tape tape;
    try {
      auto [l, wv, bv] = forward(tape, true);
      loss = l.value().item();
      if (loss_trace) loss_trace->push_back(loss);
      auto g = tape.backward(l);
      const auto& gw = g[wv];
      const auto& gb = g[bv];
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= hyper.lr * gw[k];
      for (std::size_t k = 0; k < b.size(); ++k) b[k] -= hyper.lr * gb[k];
    } catch (const NumericError&) {
      throw diverged(epoch);
    }
    if (!std::all_of(w.data().begin(), w.data().end(), [](double v) { return std::isfinite(v); })) {
      throw diverged(epoch);
    }
  }
  {
    ad::Tape tape;
    try {
      loss = std::get<0>(forward(tape, false)).value().item();
    } catch (const NumericError&) {
      throw diverged(hyper.epochs);
    }
    if (loss_trace) loss_trace->push_back(loss);
  }

  BaselineModel m = BaselineModel::zeros(form, n);
  for (std::size_t j = 0; j < z; ++j) {
    for (std::size_t i = 0; i < n; ++i) m.weights(j, i) = w(i, j);
    m.bias[j] = b(0, j);
  }
  m.epochs = hyper.epochs;
  m.lr = hyper.lr;
  m.seed = hyper.seed;
  m.final_loss = loss;
  return m;
}

void save_baseline(const BaselineModel& m, std::ostream& out) {
  out << "format=psyinn-baseline v1\n";
  out << "kind=baseline\n";
  out << "form=" << m.form.name() << '\n';
  out << "z=" << m.form.z() << '\n';
  out << "n=" << m.weights.cols() << '\n';
  std::vector<std::string> rows;
  for (std::size_t j = 0; j < m.weights.rows(); ++j) {
    std::vector<std::string> cells;
    for (std::size_t i = 0; i < m.weights.cols(); ++i) cells.push_back(text::fmt(m.weights(j, i)));
    rows.push_back(text::join(cells, ","));
  }
  out << "weights=" << text::join(rows, ";") << '\n';
  std::vector<std::string> bias;
  for (double v : m.bias) bias.push_back(text::fmt(v));
  out << "bias=" << text::join(bias, ",") << '\n';
  out << "epochs=" << m.epochs << '\n';
  out << "lr=" << text::fmt(m.lr) << '\n';
  out << "seed=" << m.seed << '\n';
  out << "final_loss=" << text::fmt(m.final_loss) << '\n';
}

BaselineModel load_baseline(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw SchemaError("baseline file: expected key=value, got '" + std::string(t) + "'");
    kv[std::string(text::trim(t.substr(0, eq)))] = std::string(text::trim(t.substr(eq + 1)));
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw SchemaError("baseline file: missing key '" + k + "'");
    return it->second;
  };
  if (get("format") != "psyinn-baseline v1") throw SchemaError("baseline file: unsupported format");
  const auto form = EquationForm::parse(get("form"));
  const auto z = static_cast<std::size_t>(text::to_int(get("z"), "z"));
  const auto n = static_cast<std::size_t>(text::to_int(get("n"), "n"));
  if (z != form.z()) throw SchemaError("baseline file: z does not match form");
  BaselineModel m = BaselineModel::zeros(form, n);
  const auto rows = text::split(get("weights"), ';');
  if (rows.size() != z) throw SchemaError("baseline file: expected " + std::to_string(z) + " weight rows");
  for (std::size_t j = 0; j < z; ++j) {
    const auto vals = text::to_doubles(rows[j], ',', "weights");
    if (vals.size() != n) throw SchemaError("baseline file: weight row width mismatch");
    for (std::size_t i = 0; i < n; ++i) m.weights(j, i) = vals[i];
  }
  m.bias = text::to_doubles(get("bias"), ',', "bias");
  if (m.bias.size() != z) throw SchemaError("baseline file: bias length mismatch");
  if (kv.count("epochs")) m.epochs = static_cast<int>(text::to_int(kv["epochs"], "epochs"));
  if (kv.count("lr")) m.lr = text::to_double(kv["lr"], "lr");
  if (kv.count("seed")) m.seed = static_cast<std::uint64_t>(text::to_int(kv["seed"], "seed"));
  if (kv.count("final_loss")) m.final_loss = text::to_double(kv["final_loss"], "final_loss");
  return m;
}

}  // namespace psyinn::eq
