#include <doctest.h>

#include <numeric>
#include <sstream>

#include "psyinn/error.hpp"
#include "psyinn/sparsereg.hpp"
#include "support.hpp"

using namespace psyinn;
using ad::Tensor;
using eq::EquationForm;
using eq::FormKind;

namespace {

// Noise-free rows generated from a sparse HLR coefficient column.
struct SparseProblem {
  sr::AugmentedDescriptorMatrix desc;
  Tensor truth;
};

SparseProblem sparse_problem(std::uint64_t seed, std::size_t rows = 400) {
  std::mt19937_64 rng(seed);
  SparseProblem p;
  p.desc.n_features = 8;
  p.desc.bias_column = false;
  p.desc.values = testsupport::random_tensor(rows, 16, rng);
  p.truth = Tensor(16, 1);
  p.truth(2, 0) = 0.8;
  p.truth(9, 0) = -0.7;
  p.truth(13, 0) = 1.1;
  std::uniform_real_distribution<double> ud(0.2, 6.0);
  for (std::size_t r = 0; r < rows; ++r) {
    p.desc.delta_days.push_back(ud(rng));
    p.desc.index.push_back({r, 0});
  }
  // Targets from an independent evaluation of 2^(-delta / 2^(x . w)).
  for (std::size_t r = 0; r < rows; ++r) {
    double d = 0.0;
    for (std::size_t i = 0; i < 16; ++i) d += p.desc.values(r, i) * p.truth(i, 0);
    p.desc.y.push_back(std::exp2(-p.desc.delta_days[r] / std::exp2(d)));
  }
  return p;
}

}  // namespace

TEST_CASE("augment concatenates features and gradients") {
  const Tensor x(1, 2, std::vector<double>{0.2, 0.5});
  const Tensor g(1, 2, std::vector<double>{-0.1, 0.3});
  CHECK(sr::augment(x, g, false).vec() == std::vector<double>{0.2, 0.5, -0.1, 0.3});
  CHECK(sr::augment(x, g, true).vec() == std::vector<double>{0.2, 0.5, -0.1, 0.3, 1.0});
  CHECK_THROWS_AS(sr::augment(x, Tensor(1, 3), false), ShapeError);
  CHECK(sr::descriptor_width(8, false) == 16);
  CHECK(sr::descriptor_width(8, true) == 17);
  const auto names = sr::term_names({"a", "b"}, true);
  CHECK(names == std::vector<std::string>{"a", "b", "d/dx a", "d/dx b", "bias"});
}

TEST_CASE("build_descriptors") {
  const auto corpus = testsupport::hlr_corpus(3, 6, 0.05, 2);
  const nn::PredictorConfig cfg{data::kFeatureCount, 4, 5};
  auto zero_dec = nn::PredictorParameters::init(cfg, 3);
  zero_dec.dec_w1 = Tensor(zero_dec.dec_w1.rows(), zero_dec.dec_w1.cols());
  const auto z = sr::build_descriptors(zero_dec, corpus.sequences, sr::GradMode::Exact, {false, 1e-3});
  REQUIRE(z.rows() == 18);
  REQUIRE(z.values.cols() == 16);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto& st = corpus.sequences[z.index[r].sequence].steps[z.index[r].step];
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(z.values(r, i) == st.x[i]);
      CHECK(z.values(r, 8 + i) == 0.0);
    }
    CHECK(z.y[r] == st.y);
    CHECK(z.delta_days[r] == st.delta_days);
  }

  const auto params = nn::PredictorParameters::init(cfg, 4);
  const auto exact = sr::build_descriptors(params, corpus.sequences, sr::GradMode::Exact);
  const auto fd = sr::build_descriptors(params, corpus.sequences, sr::GradMode::FiniteDifference);
  CHECK(exact.values.cols() == 17);
  CHECK(testsupport::max_rel_err(exact.values, fd.values, 1e-6) <= 1e-3);
  for (std::size_t r = 0; r < exact.rows(); ++r) CHECK(exact.values(r, 16) == 1.0);
}

TEST_CASE("sr_predict examples") {
  const EquationForm hlr{FormKind::HLR};
  const Tensor x(2, 3, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const std::vector<double> one{1.0, 1.0}, zero{0.0, 0.0};
  for (double v : sr::sr_predict(hlr, x, Tensor(3, 1), one)) CHECK(v == 0.5);
  for (const auto& form : {hlr, EquationForm{FormKind::ACTR}, EquationForm{FormKind::Wickelgren}}) {
    const auto out = sr::sr_predict(form, x, Tensor(3, form.z()), zero);
    if (form.kind == FormKind::HLR) CHECK(out[0] == 1.0);
    for (double v : out) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  // Hand oracle, 2 rows, ACTR: D = X L, p = sigmoid(d1 - softplus(d2) ln(1 + delta)).
  const Tensor lambda(3, 2, std::vector<double>{0.5, -1.0, 0.25, 0.5, -0.75, 2.0});
  const std::vector<double> delta{1.0, 3.0};
  const auto got = sr::sr_predict(EquationForm{FormKind::ACTR}, x, lambda, delta);
  const double d1a = 0.1 * 0.5 + 0.2 * 0.25 + 0.3 * -0.75, d2a = 0.1 * -1.0 + 0.2 * 0.5 + 0.3 * 2.0;
  const double d1b = 0.4 * 0.5 + 0.5 * 0.25 + 0.6 * -0.75, d2b = 0.4 * -1.0 + 0.5 * 0.5 + 0.6 * 2.0;
  auto actr = [](double a, double b, double t) {
    return 1.0 / (1.0 + std::exp(-(a - std::log1p(std::exp(b)) * std::log(1.0 + t))));
  };
  CHECK(std::abs(got[0] - actr(d1a, d2a, 1.0)) <= 1e-12);
  CHECK(std::abs(got[1] - actr(d1b, d2b, 3.0)) <= 1e-12);

  CHECK_THROWS_AS(sr::sr_predict(hlr, x, Tensor(2, 1), one), ShapeError);
  CHECK_THROWS_AS(sr::sr_predict(hlr, x, Tensor(3, 2), one), ShapeError);
  CHECK_THROWS_AS(sr::sr_predict(hlr, x, Tensor(3, 1), std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("sr_loss examples") {
  const std::vector<double> y{0.2, 0.9, 0.4};
  CHECK(sr::sr_loss(y, y, Tensor(4, 1), 0.1) == 0.0);
  Tensor l(2, 2, std::vector<double>{0.5, -0.5, 1.0, 0.0});
  CHECK(sr::sr_loss(y, y, l, 0.1) == doctest::Approx(0.2).epsilon(1e-15));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(50), b(50);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  const Tensor r = testsupport::random_tensor(5, 3, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < 50; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  double n1 = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) n1 += std::abs(r[i]);
  CHECK(sr::sr_loss(a, b, r, 0.03) == doctest::Approx(s / 50.0 + 0.03 * n1).epsilon(1e-13));
  CHECK_THROWS_AS(sr::sr_loss(a, b, r, -1.0), DomainError);
  CHECK_THROWS_AS(sr::sr_loss(a, std::vector<double>{1.0}, r, 0.0), ShapeError);
}

TEST_CASE("soft-thresholding never increases the L1 norm") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> th(0.0, 0.5);
  for (int i = 0; i < 500; ++i) {
    Tensor t = testsupport::random_tensor(4, 3, rng);
    const double before = sr::l1_norm(t);
    const double tau = th(rng);
    const Tensor orig = t;
    sr::soft_threshold(t, tau);
    CHECK(sr::l1_norm(t) <= before);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double expect = std::abs(orig[k]) <= tau ? 0.0 : orig[k] - std::copysign(tau, orig[k]);
      CHECK(t[k] == expect);
    }
  }
}

TEST_CASE("optimize_lambda recovers a sparse support") {
  const auto p = sparse_problem(31);
  const EquationForm hlr{};
  const auto out =
      sr::optimize_lambda(hlr, p.desc, sr::SparseCoefficientMatrix::zeros(16, hlr), {0.5, 2000, 1e-3, 1e-3, 0});
  int zeros_ok = 0, zeros = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    const double t = p.truth(i, 0), v = out.lambda(i, 0);
    if (t != 0.0) {
      CHECK(v != 0.0);
      CHECK(std::signbit(v) == std::signbit(t));
    } else {
      ++zeros;
      zeros_ok += std::abs(v) < 1e-3;
    }
  }
  CHECK(zeros_ok >= 0.8 * zeros);
}

TEST_CASE("optimize_lambda contract") {
  const auto p = sparse_problem(32, 200);
  const EquationForm hlr{};
  auto init = sr::SparseCoefficientMatrix::zeros(16, hlr, 4);
  init.lambda(0, 0) = 0.3;
  init.lambda(5, 0) = 0.0005;
  const auto same = sr::optimize_lambda(hlr, p.desc, init, {0.5, 0, 1e-3, 0.0, 0});
  CHECK(same.lambda.vec() == init.lambda.vec());
  CHECK(same.created_at == 4);

  const auto big = sr::optimize_lambda(hlr, p.desc, sr::SparseCoefficientMatrix::zeros(16, hlr), {0.5, 50, 1e3, 1e-3, 0});
  for (double v : big.lambda.data()) CHECK(v == 0.0);

  std::vector<double> trace;
  const auto fit = sr::optimize_lambda(hlr, p.desc, sr::SparseCoefficientMatrix::zeros(16, hlr), {0.5, 300, 1e-3, 1e-3, 0},
                                       &trace);
  REQUIRE(trace.size() == 301);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-9);
  CHECK(trace.back() < trace.front());
  const auto again = sr::optimize_lambda(hlr, p.desc, sr::SparseCoefficientMatrix::zeros(16, hlr), {0.5, 300, 1e-3, 1e-3, 0});
  CHECK(again.lambda.vec() == fit.lambda.vec());

  sr::AugmentedDescriptorMatrix empty;
  empty.values = Tensor(0, 16);
  CHECK_THROWS(sr::optimize_lambda(hlr, empty, sr::SparseCoefficientMatrix::zeros(16, hlr), {}));
  CHECK_THROWS_AS(sr::optimize_lambda(hlr, p.desc, sr::SparseCoefficientMatrix::zeros(15, hlr), {}), ShapeError);

  auto bad = p.desc;
  bad.values(0, 0) = HUGE_VAL;
  CHECK_THROWS_AS(sr::optimize_lambda(EquationForm{FormKind::ACTR}, bad, sr::SparseCoefficientMatrix::zeros(16, EquationForm{FormKind::ACTR}), {0.5, 5, 1e-3, 1e-3, 0}),
                  NumericError);
}

TEST_CASE("row permutation leaves the optimized loss unchanged") {
  const auto p = sparse_problem(33, 150);
  const EquationForm wick{FormKind::Wickelgren};
  std::vector<std::size_t> order(p.desc.rows());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(34);
  std::shuffle(order.begin(), order.end(), rng);
  auto perm = p.desc;
  for (std::size_t r = 0; r < order.size(); ++r) {
    for (std::size_t c = 0; c < 16; ++c) perm.values(r, c) = p.desc.values(order[r], c);
    perm.y[r] = p.desc.y[order[r]];
    perm.delta_days[r] = p.desc.delta_days[order[r]];
  }
  const sr::LambdaHyper hyper{0.2, 200, 1e-3, 1e-3, 0};
  std::vector<double> ta, tb;
  sr::optimize_lambda(wick, p.desc, sr::SparseCoefficientMatrix::zeros(16, wick), hyper, &ta);
  sr::optimize_lambda(wick, perm, sr::SparseCoefficientMatrix::zeros(16, wick), hyper, &tb);
  CHECK(std::abs(ta.back() - tb.back()) <= 1e-8);
}

TEST_CASE("mini-batch rows and the epoch callback") {
  const auto p = sparse_problem(35, 100);
  const EquationForm hlr{};
  int calls = 0;
  std::vector<double> trace;
  sr::optimize_lambda(hlr, p.desc, sr::SparseCoefficientMatrix::zeros(16, hlr), {0.1, 12, 1e-3, 1e-3, 16}, &trace,
                      [&](int epoch, double loss, const Tensor&) {
                        ++calls;
                        CHECK(loss == trace[static_cast<std::size_t>(epoch)]);
                      });
  CHECK(calls == 12);
  CHECK(trace.back() < trace.front());
}

TEST_CASE("lambda csv round trip") {
  std::mt19937_64 rng(36);
  Tensor l = testsupport::random_tensor(5, 3, rng);
  l(1, 1) = 1.0 / 3.0;
  const std::vector<std::string> terms{"a", "b", "d/dx a", "d/dx b", "bias"};
  std::stringstream s;
  sr::write_lambda_csv(s, l, terms);
  CHECK(s.str().rfind("term,d1,d2,d3\n", 0) == 0);
  std::vector<std::string> back_terms;
  const auto back = sr::read_lambda_csv(s, &back_terms);
  CHECK(back.vec() == l.vec());
  CHECK(back_terms == terms);
  std::ostringstream o;
  CHECK_THROWS_AS(sr::write_lambda_csv(o, l, {"a"}), ShapeError);
}

TEST_CASE("predict_equation uses exact descriptors of the frozen predictor") {
  const auto corpus = testsupport::hlr_corpus(1, 6, 0.0, 37);
  sr::ExtractedEquation e;
  e.form = EquationForm{};
  e.predictor = nn::PredictorParameters::init({data::kFeatureCount, 3, 3}, 38);
  e.lambda = sr::SparseCoefficientMatrix::zeros(17, e.form);
  e.lambda.lambda(16, 0) = 1.0;  // bias only: half-life 2 days
  const auto p = sr::predict_equation(e, corpus.sequences[0]);
  for (std::size_t t = 0; t < p.size(); ++t)
    CHECK(std::abs(p[t] - std::exp2(-corpus.sequences[0].steps[t].delta_days / 2.0)) <= 1e-12);

  const auto desc = sr::build_descriptors(e.predictor, corpus.sequences, sr::GradMode::Exact);
  std::mt19937_64 rng(39);
  e.lambda.lambda = testsupport::random_tensor(17, 1, rng, -0.3, 0.3);
  const auto direct = sr::sr_predict(e.form, desc.values, e.lambda.lambda, desc.delta_days);
  const auto via = sr::predict_equation(e, corpus.sequences[0]);
  for (std::size_t t = 0; t < via.size(); ++t) CHECK(via[t] == direct[t]);
}
