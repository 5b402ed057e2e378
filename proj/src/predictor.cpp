#include "psyinn/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::nn {

using ad::Tensor;
using ad::Var;

// ---- parameters -------------------------------------------------------------

PredictorParameters PredictorParameters::zeros(const PredictorConfig& c) {
  if (c.n_features == 0 || c.hidden == 0 || c.decoder_hidden == 0) {
    throw ConfigError("predictor dimensions must be positive");
  }
  PredictorParameters p;
  p.config = c;
  const std::size_t d = c.hidden, dh = c.decoder_hidden, n = c.n_features;
  p.enc_w = Tensor(c.encoder_input(), 4 * d);
  p.enc_u = Tensor(d, 4 * d);
  p.enc_b = Tensor(1, 4 * d);
  p.gate_w = Tensor(2, d);
  p.gate_b = Tensor(1, d);
  p.dec_w1 = Tensor(n + d, dh);
  p.dec_b1 = Tensor(1, dh);
  p.dec_w2 = Tensor(dh, 1);
  p.dec_b2 = Tensor(1, 1);
  return p;
}

PredictorParameters PredictorParameters::init(const PredictorConfig& c, std::uint64_t seed) {
  PredictorParameters p = zeros(c);
  std::mt19937_64 rng(seed);
  const std::size_t d = c.hidden, dh = c.decoder_hidden, n = c.n_features;
  const std::array<std::size_t, 9> fan_in = {c.encoder_input(), d, d, 2, 2, n + d, n + d, dh, dh};
  auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in[k]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : ts[k]->data()) v = u(rng);
  }
  return p;
}

std::vector<Tensor*> PredictorParameters::tensors() {
  return {&enc_w, &enc_u, &enc_b, &gate_w, &gate_b, &dec_w1, &dec_b1, &dec_w2, &dec_b2};
}

std::vector<const Tensor*> PredictorParameters::tensors() const {
  return {&enc_w, &enc_u, &enc_b, &gate_w, &gate_b, &dec_w1, &dec_b1, &dec_w2, &dec_b2};
}

const std::vector<std::string>& PredictorParameters::names() {
  static const std::vector<std::string> kNames = {"enc_w",  "enc_u",  "enc_b",  "gate_w", "gate_b",
                                                  "dec_w1", "dec_b1", "dec_w2", "dec_b2"};
  return kNames;
}

std::size_t PredictorParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

bool PredictorParameters::all_finite() const {
  const auto ts = tensors();
  return std::all_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->all_finite(); });
}

bool operator==(const PredictorParameters& a, const PredictorParameters& b) {
  if (!(a.config == b.config)) return false;
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (!ta[k]->same_shape(*tb[k]) || ta[k]->vec() != tb[k]->vec()) return false;
  }
  return true;
}

BoundParameters BoundParameters::bind(ad::Tape& tape, const PredictorParameters& p, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  BoundParameters b;
  b.enc_w = put(p.enc_w);
  b.enc_u = put(p.enc_u);
  b.enc_b = put(p.enc_b);
  b.gate_w = put(p.gate_w);
  b.gate_b = put(p.gate_b);
  b.dec_w1 = put(p.dec_w1);
  b.dec_b1 = put(p.dec_b1);
  b.dec_w2 = put(p.dec_w2);
  b.dec_b2 = put(p.dec_b2);
  b.config = p.config;
  return b;
}

std::vector<Var> BoundParameters::vars() const {
  return {enc_w, enc_u, enc_b, gate_w, gate_b, dec_w1, dec_b1, dec_w2, dec_b2};
}

// ---- forward ----------------------------------------------------------------

std::array<double, 2> SequenceInputs::gaps(const data::LearnerSequence& seq, std::size_t t) {
  const auto& st = seq.steps[t];
  const double seq_gap = t == 0 ? 0.0 : std::max(0.0, st.timestamp - seq.steps[t - 1].timestamp) / data::kSecondsPerDay;
  return {std::log1p(st.delta_days), std::log1p(seq_gap)};
}

SequenceInputs SequenceInputs::from(const data::LearnerSequence& seq) {
  const std::size_t m = seq.steps.size();
  if (m == 0) throw Error("empty learner sequence '" + seq.learner_id + "'");
  const std::size_t n = seq.steps.front().x.size();
  SequenceInputs in{Tensor(m, n), Tensor(m, n + 3), Tensor(m, 1), Tensor(m, 1)};
  for (std::size_t t = 0; t < m; ++t) {
    const auto& st = seq.steps[t];
    if (st.x.size() != n) throw ShapeError("inconsistent feature width in sequence '" + seq.learner_id + "'");
    const auto g = gaps(seq, t);
    for (std::size_t i = 0; i < n; ++i) {
      in.features(t, i) = st.x[i];
      in.encoder(t, i) = st.x[i];
    }
    in.encoder(t, n) = st.y;
    in.encoder(t, n + 1) = g[0];
    in.encoder(t, n + 2) = g[1];
    in.targets(t, 0) = st.y;
    in.delta(t, 0) = st.delta_days;
  }
  return in;
}

Var encode_states(const BoundParameters& p, const Tensor& encoder_inputs) {
  ad::Tape& tape = *p.enc_w.tape();
  const std::size_t m = encoder_inputs.rows();
  const std::size_t d = p.config.hidden;
  const std::size_t n_in = p.config.encoder_input();
  if (encoder_inputs.cols() != n_in) {
    throw ShapeError("encoder input width " + std::to_string(encoder_inputs.cols()) + " != " + std::to_string(n_in));
  }
  std::vector<Var> rows;
  rows.reserve(m);
  rows.push_back(tape.constant(Tensor(1, d)));
  if (m == 1) return rows.front();

  // Input projection for every step the recurrence consumes (0 .. m-2).
  Tensor prefix(m - 1, n_in);
  std::copy_n(encoder_inputs.data().begin(), (m - 1) * n_in, prefix.data().begin());
  Var projected = ad::matmul(tape.constant(prefix), p.enc_w) + p.enc_b;
  Tensor gap_values(m - 1, 2);
  for (std::size_t t = 0; t + 1 < m; ++t) {
    gap_values(t, 0) = encoder_inputs(t, n_in - 2);
    gap_values(t, 1) = encoder_inputs(t, n_in - 1);
  }
  Var forget_gate = ad::sigmoid(ad::matmul(tape.constant(gap_values), p.gate_w) + p.gate_b);

  Var h, c;
  for (std::size_t t = 0; t + 1 < m; ++t) {
    Var z = ad::slice(projected, t, t + 1, 0, 4 * d);
    if (t > 0) z = z + ad::matmul(h, p.enc_u);
    Var sig = ad::sigmoid(ad::slice(z, 0, 1, 0, 3 * d));
    Var in_gate = ad::slice(sig, 0, 1, 0, d);
    Var keep = ad::slice(sig, 0, 1, d, 2 * d);
    Var out_gate = ad::slice(sig, 0, 1, 2 * d, 3 * d);
    Var cand = ad::tanh(ad::slice(z, 0, 1, 3 * d, 4 * d));
    c = t == 0 ? in_gate * cand : keep * c + in_gate * cand;
    h = out_gate * ad::tanh(c) * ad::slice(forget_gate, t, t + 1, 0, d);
    rows.push_back(h);
  }
  return ad::concat(rows, 0);
}

DecoderPass decode(const BoundParameters& p, const Var& features, const Var& states) {
  if (features.cols() != p.config.n_features || states.cols() != p.config.hidden ||
      features.rows() != states.rows()) {
    throw ShapeError("decode: expected [m x " + std::to_string(p.config.n_features) + "] features and [m x " +
                     std::to_string(p.config.hidden) + "] states");
  }
  Var pre = ad::matmul(ad::concat({features, states}, 1), p.dec_w1) + p.dec_b1;
  Var out = ad::sigmoid(ad::matmul(ad::tanh(pre), p.dec_w2) + p.dec_b2);
  return {pre, out};
}

Var input_gradients_fd(const BoundParameters& p, const DecoderPass& pass, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite-difference step must be positive");
  const std::size_t n = p.config.n_features;
  const std::size_t dh = p.config.decoder_hidden;
  auto head = [&](const Var& pre) { return ad::sigmoid(ad::matmul(ad::tanh(pre), p.dec_w2) + p.dec_b2); };
  std::vector<Var> cols;
  cols.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var shift = ad::scale(ad::slice(p.dec_w1, i, i + 1, 0, dh), eps);
    Var up = head(pass.pre + shift);
    Var down = head(pass.pre - shift);
    cols.push_back(ad::scale(up - down, 1.0 / (2.0 * eps)));
  }
  return ad::concat(cols, 1);
}

SequenceForward forward(const BoundParameters& p, ad::Tape& tape, const SequenceInputs& in) {
  SequenceForward f;
  f.features = tape.constant(in.features);
  f.states = encode_states(p, in.encoder);
  f.decoder = decode(p, f.features, f.states);
  return f;
}

// ---- value-level API --------------------------------------------------------

MemoryState encode(const PredictorParameters& params, const data::LearnerSequence& seq, std::size_t prefix_len) {
  if (prefix_len > seq.steps.size()) throw Error("encode: prefix longer than sequence");
  if (prefix_len == 0) return MemoryState{std::vector<double>(params.config.hidden, 0.0)};
  // States row `prefix_len` needs steps 0 .. prefix_len-1 as history; build a
  // sequence of prefix_len + 1 rows whose last row is never consumed.
  data::LearnerSequence view{seq.learner_id, {seq.steps.begin(), seq.steps.begin() + prefix_len}};
  view.steps.push_back(view.steps.back());
  ad::Tape tape;
  auto bp = BoundParameters::bind(tape, params, false);
  Var states = encode_states(bp, SequenceInputs::from(view).encoder);
  const Tensor& s = states.value();
  MemoryState out;
  out.h.assign(s.data().end() - static_cast<std::ptrdiff_t>(params.config.hidden), s.data().end());
  return out;
}

double decode(const PredictorParameters& params, const data::FeatureVector& x, const MemoryState& state) {
  ad::Tape tape;
  auto bp = BoundParameters::bind(tape, params, false);
  auto pass = decode(bp, tape.constant(Tensor::row(x.values)), tape.constant(Tensor::row(state.h)));
  return pass.output.value().item();
}

std::vector<double> predict(const PredictorParameters& params, const data::LearnerSequence& seq) {
  ad::Tape tape;
  auto bp = BoundParameters::bind(tape, params, false);
  auto f = forward(bp, tape, SequenceInputs::from(seq));
  return f.decoder.output.value().vec();
}

double data_loss(const PredictorParameters& params, std::span<const data::LearnerSequence> batch) {
  if (batch.empty()) throw Error("data_loss: empty batch");
  double sse = 0.0;
  std::size_t n = 0;
  for (const auto& seq : batch) {
    const auto yhat = predict(params, seq);
    for (std::size_t t = 0; t < yhat.size(); ++t) {
      const double e = seq.steps[t].y - yhat[t];
      sse += e * e;
    }
    n += yhat.size();
  }
  return sse / static_cast<double>(n);
}

std::vector<double> input_gradients(const PredictorParameters& params, const data::FeatureVector& x,
                                    const MemoryState& state) {
  ad::Tape tape;
  auto bp = BoundParameters::bind(tape, params, false);
  Var xv = tape.variable(Tensor::row(x.values));
  auto pass = decode(bp, xv, tape.constant(Tensor::row(state.h)));
  return ad::input_gradient(ad::sum(pass.output), xv).vec();
}

std::vector<double> input_gradients_fd(const PredictorParameters& params, const data::FeatureVector& x,
                                       const MemoryState& state, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite-difference step must be positive");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    data::FeatureVector up = x, down = x;
    up.values[i] += eps;
    down.values[i] -= eps;
    g[i] = (decode(params, up, state) - decode(params, down, state)) / (2.0 * eps);
  }
  return g;
}

Tensor input_gradients_exact(const PredictorParameters& params, const SequenceInputs& in) {
  ad::Tape tape;
  auto bp = BoundParameters::bind(tape, params, false);
  Var states = encode_states(bp, in.encoder);
  Var xv = tape.variable(in.features);
  auto pass = decode(bp, xv, states);
  // Rows are independent, so the gradient of the sum holds each row's own
  // d y_hat / d x.
  return ad::input_gradient(ad::sum(pass.output), xv);
}

// ---- optimization ------------------------------------------------------------

Adam::Adam(double lr, const PredictorParameters& shape_like, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* t : shape_like.tensors()) {
    m_.emplace_back(t->rows(), t->cols());
    v_.emplace_back(t->rows(), t->cols());
  }
}

void Adam::step(PredictorParameters& params, const std::vector<Tensor>& grads) {
  auto ts = params.tensors();
  if (grads.size() != ts.size() || m_.size() != ts.size()) throw ShapeError("Adam: gradient list mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < ts.size(); ++k) {
    auto w = ts[k]->data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t learners, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(learners);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < learners; k += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(k),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(learners, k + batch_size)));
  }
  return out;
}

double train_epoch(PredictorParameters& params, Adam& opt, std::span<const data::LearnerSequence> train,
                   std::size_t batch_size, std::mt19937_64& rng) {
  double weighted = 0.0;
  std::size_t total = 0;
  for (const auto& batch : make_batches(train.size(), batch_size, rng)) {
    std::size_t steps = 0;
    for (std::size_t i : batch) steps += train[i].steps.size();
    const double inv = 1.0 / static_cast<double>(steps);
    std::vector<Tensor> grads;
    double batch_loss = 0.0;
    for (std::size_t i : batch) {
      ad::Tape tape;
      auto bp = BoundParameters::bind(tape, params, true);
      const auto in = SequenceInputs::from(train[i]);
      auto f = forward(bp, tape, in);
      Var err = f.decoder.output - tape.constant(in.targets);
      Var loss = ad::scale(ad::sum(err * err), inv);
      batch_loss += loss.value().item();
      auto g = tape.backward(loss);
      const auto vars = bp.vars();
      if (grads.empty()) {
        for (const auto& v : vars) grads.push_back(g[v]);
      } else {
        for (std::size_t k = 0; k < vars.size(); ++k) {
          auto dst = grads[k].data();
          auto src = g[vars[k]].data();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
    }
    opt.step(params, grads);
    weighted += batch_loss * static_cast<double>(steps);
    total += steps;
  }
  return total ? weighted / static_cast<double>(total) : 0.0;
}

// ---- checkpoints -------------------------------------------------------------

void save_checkpoint(const PredictorParameters& params, std::ostream& out) {
  out << "psyinn-checkpoint v1\n";
  out << "config n_features=" << params.config.n_features << " hidden=" << params.config.hidden
      << " decoder_hidden=" << params.config.decoder_hidden << '\n';
  const auto ts = params.tensors();
  const auto& names = PredictorParameters::names();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const Tensor& t = *ts[k];
    out << "tensor " << names[k] << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) out << (c ? " " : "") << text::fmt(t(r, c));
      out << '\n';
    }
  }
  out << "end\n";
}

PredictorParameters load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "psyinn-checkpoint v1") {
    throw SchemaError("not a psyinn checkpoint (expected 'psyinn-checkpoint v1')");
  }
  if (!std::getline(in, line)) throw SchemaError("checkpoint: missing config line");
  const auto parts = text::split(text::trim(line), ' ');
  if (parts.size() != 4 || parts[0] != "config") throw SchemaError("checkpoint: malformed config line");
  PredictorConfig cfg;
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto kv = text::split(parts[k], '=');
    if (kv.size() != 2) throw SchemaError("checkpoint: malformed config entry");
    const auto v = static_cast<std::size_t>(text::to_int(kv[1], kv[0]));
    if (kv[0] == "n_features") cfg.n_features = v;
    else if (kv[0] == "hidden") cfg.hidden = v;
    else if (kv[0] == "decoder_hidden") cfg.decoder_hidden = v;
    else throw SchemaError("checkpoint: unknown config key '" + kv[0] + "'");
  }
  PredictorParameters p = PredictorParameters::zeros(cfg);
  const auto ts = p.tensors();
  const auto& names = PredictorParameters::names();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    if (!std::getline(in, line)) throw SchemaError("checkpoint: truncated before tensor " + names[k]);
    const auto head = text::split(text::trim(line), ' ');
    if (head.size() != 4 || head[0] != "tensor" || head[1] != names[k]) {
      throw SchemaError("checkpoint: expected tensor " + names[k]);
    }
    const auto rows = static_cast<std::size_t>(text::to_int(head[2], "rows"));
    const auto cols = static_cast<std::size_t>(text::to_int(head[3], "cols"));
    if (rows != ts[k]->rows() || cols != ts[k]->cols()) {
      throw SchemaError("checkpoint: tensor " + names[k] + " has unexpected shape");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw SchemaError("checkpoint: truncated tensor " + names[k]);
      const auto vals = text::to_doubles(text::trim(line), ' ', names[k]);
      if (vals.size() != cols) throw SchemaError("checkpoint: row width mismatch in " + names[k]);
      for (std::size_t c = 0; c < cols; ++c) (*ts[k])(r, c) = vals[c];
    }
  }
  if (!std::getline(in, line) || text::trim(line) != "end") throw SchemaError("checkpoint: missing end marker");
  return p;
}

}  // namespace psyinn::nn
