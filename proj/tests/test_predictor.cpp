#include <doctest.h>

#include <sstream>

#include "psyinn/predictor.hpp"
#include "support.hpp"

using namespace psyinn;
using ad::Tensor;
using nn::PredictorConfig;
using nn::PredictorParameters;

namespace {

const PredictorConfig kSmall{data::kFeatureCount, 3, 4};

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Independent scalar reimplementation of the encoder and decoder.
struct Oracle {
  const PredictorParameters& p;

  std::vector<double> state(const data::LearnerSequence& seq, std::size_t prefix) const {
    const std::size_t d = p.config.hidden, n = p.config.n_features;
    std::vector<double> h(d, 0.0), c(d, 0.0);
    for (std::size_t t = 0; t < prefix; ++t) {
      const auto& st = seq.steps[t];
      const double seq_gap = t == 0 ? 0.0 : (st.timestamp - seq.steps[t - 1].timestamp) / data::kSecondsPerDay;
      std::vector<double> in(st.x.values);
      in.push_back(st.y);
      in.push_back(std::log1p(st.delta_days));
      in.push_back(std::log1p(seq_gap));
      std::vector<double> z(4 * d);
      for (std::size_t j = 0; j < 4 * d; ++j) {
        double s = p.enc_b(0, j);
        for (std::size_t i = 0; i < n + 3; ++i) s += in[i] * p.enc_w(i, j);
        for (std::size_t i = 0; i < d; ++i) s += h[i] * p.enc_u(i, j);
        z[j] = s;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double ig = sigm(z[j]), fg = sigm(z[d + j]), og = sigm(z[2 * d + j]), cand = std::tanh(z[3 * d + j]);
        c[j] = fg * c[j] + ig * cand;
        const double gate = sigm(in[n + 1] * p.gate_w(0, j) + in[n + 2] * p.gate_w(1, j) + p.gate_b(0, j));
        h[j] = og * std::tanh(c[j]) * gate;
      }
    }
    return h;
  }

  double decode(const std::vector<double>& x, const std::vector<double>& h) const {
    std::vector<double> in(x);
    in.insert(in.end(), h.begin(), h.end());
    double out = p.dec_b2(0, 0);
    for (std::size_t k = 0; k < p.config.decoder_hidden; ++k) {
      double s = p.dec_b1(0, k);
      for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * p.dec_w1(i, k);
      out += std::tanh(s) * p.dec_w2(k, 0);
    }
    return sigm(out);
  }
};

std::vector<double> random_x(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.5);
  std::vector<double> x(data::kFeatureCount);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("encode and decode trivial cases") {
  const auto params = PredictorParameters::init(kSmall, 1);
  const auto corpus = testsupport::hlr_corpus(1, 5, 0.0, 2);
  const auto empty = nn::encode(params, corpus.sequences[0], 0);
  CHECK(empty.h == std::vector<double>(3, 0.0));

  const auto zero = PredictorParameters::zeros(kSmall);
  CHECK(nn::encode(zero, corpus.sequences[0], 1).h == std::vector<double>(3, 0.0));
  CHECK(nn::decode(zero, corpus.sequences[0].steps[0].x, empty) == 0.5);
  for (double y : nn::predict(zero, corpus.sequences[0])) CHECK(y == 0.5);
  CHECK_THROWS(nn::encode(params, corpus.sequences[0], 6));
}

TEST_CASE("forward pass matches a hand-rolled oracle") {
  const auto corpus = testsupport::hlr_corpus(3, 7, 0.05, 6);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto params = PredictorParameters::init(kSmall, seed);
    const Oracle o{params};
    for (const auto& seq : corpus.sequences) {
      const auto y = nn::predict(params, seq);
      for (std::size_t t = 0; t < seq.steps.size(); ++t) {
        const auto h = o.state(seq, t);
        const auto s = nn::encode(params, seq, t);
        for (std::size_t j = 0; j < h.size(); ++j) {
          CHECK(std::abs(s.h[j] - h[j]) <= 1e-12);
          CHECK(std::abs(s.h[j]) <= 1.0);
        }
        CHECK(std::abs(y[t] - o.decode(seq.steps[t].x.values, h)) <= 1e-12);
        CHECK(y[t] > 0.0);
        CHECK(y[t] < 1.0);
      }
    }
  }
}

TEST_CASE("encode is causal") {
  const auto params = PredictorParameters::init(kSmall, 4);
  const auto corpus = testsupport::hlr_corpus(1, 8, 0.05, 6);
  auto altered = corpus.sequences[0];
  altered.steps[5].y = 1.0 - altered.steps[5].y;
  altered.steps[5].x.values[3] += 2.0;
  for (std::size_t t = 0; t <= 5; ++t) CHECK(nn::encode(params, altered, t).h == nn::encode(params, corpus.sequences[0], t).h);
  CHECK(nn::encode(params, altered, 6).h != nn::encode(params, corpus.sequences[0], 6).h);
}

TEST_CASE("data_loss examples") {
  const auto zero = PredictorParameters::zeros(kSmall);
  data::LearnerSequence seq{"u", {}};
  for (double y : {1.0, 0.0}) {
    data::Step st;
    st.x = data::make_features(1, 2, 1, 1, 1, 0.3);
    st.y = y;
    st.delta_days = 1;
    seq.steps.push_back(st);
  }
  const std::vector<data::LearnerSequence> one{seq};
  CHECK(nn::data_loss(zero, one) == 0.25);

  seq.steps[0].y = seq.steps[1].y = 0.5;
  const std::vector<data::LearnerSequence> exact{seq};
  CHECK(nn::data_loss(zero, exact) == 0.0);

  const auto corpus = testsupport::hlr_corpus(4, 9, 0.05, 7);
  const auto params = PredictorParameters::init(kSmall, 5);
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& q : corpus.sequences) {
    const auto y = nn::predict(params, q);
    for (std::size_t t = 0; t < y.size(); ++t, ++n) s += (q.steps[t].y - y[t]) * (q.steps[t].y - y[t]);
  }
  CHECK(nn::data_loss(params, corpus.sequences) == doctest::Approx(s / static_cast<double>(n)).epsilon(1e-12));
  CHECK(nn::data_loss(params, corpus.sequences) >= 0.0);
}

TEST_CASE("parameter gradients of the data loss match finite differences") {
  const auto corpus = testsupport::hlr_corpus(2, 4, 0.05, 8);
  const auto params = PredictorParameters::init(kSmall, 9);
  CHECK(params.parameter_count() <= 250);

  ad::Tape tape;
  auto bp = nn::BoundParameters::bind(tape, params, true);
  std::vector<ad::Var> losses;
  const std::size_t steps = data::total_steps(corpus.sequences);
  ad::Var total;
  for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
    const auto in = nn::SequenceInputs::from(corpus.sequences[s]);
    auto f = nn::forward(bp, tape, in);
    auto err = f.decoder.output - tape.constant(in.targets);
    auto l = ad::scale(ad::sum(err * err), 1.0 / static_cast<double>(steps));
    total = s == 0 ? l : total + l;
  }
  CHECK(total.value().item() == doctest::Approx(nn::data_loss(params, corpus.sequences)).epsilon(1e-12));
  auto g = tape.backward(total);
  const auto vars = bp.vars();
  for (std::size_t k = 0; k < vars.size(); ++k) {
    auto f = [&](const Tensor& v) {
      auto p = params;
      *p.tensors()[k] = v;
      return nn::data_loss(p, corpus.sequences);
    };
    const double err = testsupport::max_rel_err(g[vars[k]], testsupport::fd_gradient(f, *params.tensors()[k], 1e-6));
    INFO("tensor " << nn::PredictorParameters::names()[k]);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("input gradients") {
  std::mt19937_64 rng(10);
  auto lin = PredictorParameters::zeros(kSmall);
  CHECK(nn::input_gradients(lin, data::FeatureVector{random_x(rng)}, {std::vector<double>(3, 0.0)}) ==
        std::vector<double>(data::kFeatureCount, 0.0));

  // Linear decoder: one tanh unit with tiny weights, output weight 1, so the
  // map is ~ sigmoid(w . x) and the gradient at 0 is ~ 0.25 w.
  for (std::size_t i = 0; i < data::kFeatureCount; ++i) lin.dec_w1(i, 0) = 1e-4 * static_cast<double>(i + 1);
  lin.dec_w2(0, 0) = 1.0;
  const data::FeatureVector x0{std::vector<double>(data::kFeatureCount, 0.0)};
  const auto g0 = nn::input_gradients(lin, x0, {std::vector<double>(3, 0.0)});
  for (std::size_t i = 0; i < data::kFeatureCount; ++i)
    CHECK(testsupport::rel_err(g0[i], 0.25 * 1e-4 * static_cast<double>(i + 1), 1e-12) <= 1e-6);

  for (int trial = 0; trial < 20; ++trial) {
    const auto params = PredictorParameters::init(kSmall, 100 + static_cast<std::uint64_t>(trial));
    const Oracle o{params};
    const auto xv = random_x(rng);
    const nn::MemoryState st{{0.3, -0.2, 0.5}};
    const auto exact = nn::input_gradients(params, data::FeatureVector{xv}, st);
    const auto fd = nn::input_gradients_fd(params, data::FeatureVector{xv}, st, 1e-3);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      auto up = xv, down = xv;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double oracle = (o.decode(up, st.h) - o.decode(down, st.h)) / 2e-6;
      CHECK(testsupport::rel_err(exact[i], oracle, 1e-6) <= 1e-4);
      CHECK(testsupport::rel_err(fd[i], exact[i], 1e-6) <= 1e-3);
    }
  }
}

TEST_CASE("fd input gradients converge at second order") {
  const auto params = PredictorParameters::init(kSmall, 11);
  std::mt19937_64 rng(12);
  const auto xv = random_x(rng);
  const nn::MemoryState st{{0.1, 0.4, -0.3}};
  const auto exact = nn::input_gradients(params, data::FeatureVector{xv}, st);
  std::vector<double> errs;
  for (double eps : {1e-2, 5e-3, 2.5e-3}) {
    const auto fd = nn::input_gradients_fd(params, data::FeatureVector{xv}, st, eps);
    double e = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) e = std::max(e, std::abs(fd[i] - exact[i]));
    errs.push_back(e);
  }
  // Halving eps should cut the error by ~4.
  CHECK(errs[0] / errs[1] == doctest::Approx(4.0).epsilon(0.1));
  CHECK(errs[1] / errs[2] == doctest::Approx(4.0).epsilon(0.1));

  // Sequence-level fd rows on a tape agree with the exact per-row gradients.
  ad::Tape tape;
  const auto corpus = testsupport::hlr_corpus(1, 6, 0.0, 13);
  auto bp = nn::BoundParameters::bind(tape, params, true);
  const auto in = nn::SequenceInputs::from(corpus.sequences[0]);
  auto f = nn::forward(bp, tape, in);
  auto fdv = nn::input_gradients_fd(bp, f.decoder, 1e-3);
  const Tensor exact_rows = nn::input_gradients_exact(params, in);
  CHECK(fdv.value().same_shape(exact_rows));
  CHECK(testsupport::max_rel_err(fdv.value(), exact_rows, 1e-6) <= 1e-3);
  // The fd rows are differentiable w.r.t. the parameters.
  auto g = tape.backward(ad::sum(fdv));
  double mass = 0.0;
  for (double v : g[bp.dec_w1].data()) mass += std::abs(v);
  CHECK(mass > 0.0);
}

TEST_CASE("fd input gradients are exact for an affine decoder") {
  // The fd path relies on the first layer being affine in x: a shift of eps
  // in feature i moves the pre-activation by eps * W1[i, :].
  const auto params = PredictorParameters::init(kSmall, 14);
  ad::Tape tape;
  auto bp = nn::BoundParameters::bind(tape, params, false);
  const auto corpus = testsupport::hlr_corpus(1, 3, 0.0, 15);
  const auto in = nn::SequenceInputs::from(corpus.sequences[0]);
  auto f = nn::forward(bp, tape, in);
  Tensor shifted = in.features;
  for (std::size_t r = 0; r < shifted.rows(); ++r) shifted(r, 2) += 1e-3;
  auto moved = nn::decode(bp, tape.constant(shifted), f.states);
  for (std::size_t r = 0; r < shifted.rows(); ++r)
    for (std::size_t k = 0; k < params.config.decoder_hidden; ++k)
      CHECK(std::abs(moved.pre.value()(r, k) - f.decoder.pre.value()(r, k) - 1e-3 * params.dec_w1(2, k)) <= 1e-15);
}

TEST_CASE("Adam and training epochs") {
  const auto corpus = testsupport::hlr_corpus(6, 10, 0.05, 16);
  auto params = PredictorParameters::init(kSmall, 17);
  const auto before = params;
  nn::Adam still(0.0, params);
  std::mt19937_64 rng(1);
  nn::train_epoch(params, still, corpus.sequences, 2, rng);
  CHECK(params == before);
  CHECK(still.steps() == 3);

  nn::Adam opt(4e-3, params);
  const double l0 = nn::data_loss(params, corpus.sequences);
  for (int e = 0; e < 30; ++e) nn::train_epoch(params, opt, corpus.sequences, 2, rng);
  CHECK(nn::data_loss(params, corpus.sequences) < l0);

  std::mt19937_64 a(5), b(5);
  CHECK(nn::make_batches(10, 3, a) == nn::make_batches(10, 3, b));
  const auto batches = nn::make_batches(10, 3, a);
  CHECK(batches.size() == 4);
  CHECK(batches.back().size() == 1);
  CHECK_THROWS(nn::make_batches(10, 0, a));
}

TEST_CASE("checkpoint round trip") {
  const auto params = PredictorParameters::init(kSmall, 18);
  std::stringstream s;
  nn::save_checkpoint(params, s);
  const std::string text = s.str();
  const auto back = nn::load_checkpoint(s);
  CHECK(back == params);
  std::ostringstream again;
  nn::save_checkpoint(back, again);
  CHECK(again.str() == text);
  std::istringstream bad("psyinn-checkpoint v9\n");
  CHECK_THROWS(nn::load_checkpoint(bad));
}
