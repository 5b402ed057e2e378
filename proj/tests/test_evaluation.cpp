#include <doctest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <numeric>
#include <sstream>

#include "psyinn/error.hpp"
#include "psyinn/evaluation.hpp"
#include "psyinn/svg.hpp"
#include "support.hpp"

using namespace psyinn;
using ad::Tensor;
namespace ev = psyinn::evaluation;

namespace {

data::LearnerSequence three_steps() {
  data::LearnerSequence seq{"u", {}};
  const double deltas[] = {1.0, 2.0, 4.0};
  const double ys[] = {1.0, 0.5, 0.2};
  for (int t = 0; t < 3; ++t) {
    data::Step st;
    st.x = data::make_features(deltas[t], 3, 2, 1, 1, 0.25);
    st.y = ys[t];
    st.delta_days = deltas[t];
    st.timestamp = 86400.0 * t;
    st.item_id = "w";
    seq.steps.push_back(st);
  }
  return seq;
}

void check_report(const ev::MetricReport& r, const std::vector<double>& yhat, const data::LearnerSequence& seq) {
  double m = 0.0, p = 0.0;
  for (std::size_t t = 0; t < yhat.size(); ++t) {
    const double y = seq.steps[t].y;
    m += std::abs(y - yhat[t]);
    p += std::abs(y - yhat[t]) / std::max(y, 0.01);
  }
  CHECK(std::abs(r.mae - m / 3.0) <= 1e-12);
  CHECK(std::abs(r.mape - 100.0 * p / 3.0) <= 1e-12);
  CHECK(r.n_steps == 3);
}

void check_xml(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  CHECK_NOTHROW(boost::property_tree::read_xml(in, tree));
  CHECK(tree.count("svg") == 1);
}

}  // namespace

TEST_CASE("metric examples") {
  const std::vector<double> y{1.0, 0.5}, yh{0.9, 0.6};
  CHECK(std::abs(ev::mae(y, yh) - 0.1) <= 1e-12);
  CHECK(std::abs(ev::mape(y, yh) - 15.0) <= 1e-12);
  CHECK(ev::mae(y, y) == 0.0);
  CHECK(ev::mape(y, y) == 0.0);
  const std::vector<double> z{0.0, 0.3}, zh{0.01, 0.3};
  CHECK(std::abs(ev::mape(z, zh) - 50.0) <= 1e-12);
  CHECK_THROWS_AS(ev::mae(y, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(ev::mae(std::vector<double>{}, std::vector<double>{}), ShapeError);
  CHECK_THROWS_AS(ev::mape(y, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("metric properties on random vectors") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    double m = 0.0, p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m += std::abs(a[i] - b[i]);
      p += std::abs(a[i] - b[i]) / std::max(a[i], 0.01);
    }
    CHECK(std::abs(ev::mae(a, b) - m / static_cast<double>(n)) <= 1e-12);
    CHECK(std::abs(ev::mape(a, b) - 100.0 * p / static_cast<double>(n)) <= 1e-10);
    CHECK(ev::mae(a, b) == ev::mae(b, a));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> pa(n), pb(n);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a[order[i]];
      pb[i] = b[order[i]];
    }
    CHECK(std::abs(ev::mae(pa, pb) - ev::mae(a, b)) <= 1e-12);
    CHECK(std::abs(ev::mape(pa, pb) - ev::mape(a, b)) <= 1e-10);
  }
}

TEST_CASE("evaluate_model on hand fixtures") {
  const auto seq = three_steps();
  const std::vector<data::LearnerSequence> seqs{seq};
  const nn::PredictorConfig cfg{data::kFeatureCount, 3, 3};

  const auto pred = nn::PredictorParameters::zeros(cfg);
  const auto rp = ev::evaluate_model(pred, seqs, "p");
  check_report(rp, {0.5, 0.5, 0.5}, seq);
  CHECK(std::abs(rp.mae - 0.8 / 3.0) <= 1e-12);
  CHECK(rp.kind == "predictor");
  CHECK(rp.tag == "p");

  auto base = eq::BaselineModel::zeros(eq::EquationForm{}, data::kFeatureCount);
  base.bias = {1.0};
  base.weights(0, 4) = 1.5;  // history accuracy 2/3 -> d = 2, h = 4
  const auto rb = ev::evaluate_model(base, seqs, "b");
  check_report(rb, {std::exp2(-1.0 / 4.0), std::exp2(-2.0 / 4.0), std::exp2(-4.0 / 4.0)}, seq);
  CHECK(rb.kind == "baseline");

  // Zero first decoder layer: gradient columns vanish, only x and bias rows act.
  sr::ExtractedEquation e{eq::EquationForm{eq::FormKind::ACTR}, sr::SparseCoefficientMatrix::zeros(17, eq::EquationForm{eq::FormKind::ACTR}), true, pred};
  e.lambda.lambda(16, 0) = 2.0;
  e.lambda.lambda(0, 1) = 0.5;  // decay grows with log1p(delta)
  std::vector<double> expect;
  for (const auto& st : seq.steps) {
    const double b = 0.5 * std::log1p(st.delta_days);
    expect.push_back(1.0 / (1.0 + std::exp(-(2.0 - std::log1p(std::exp(b)) * std::log(1.0 + st.delta_days)))));
  }
  const auto re = ev::evaluate_model(e, seqs, "e");
  check_report(re, expect, seq);
  CHECK(re.kind == "equation");

  auto ones = seq;
  for (auto& st : ones.steps) st.y = 1.0;
  const auto half = ev::evaluate_model(pred, std::vector<data::LearnerSequence>{ones}, "half");
  CHECK(std::abs(half.mae - 0.5) <= 1e-12);
  CHECK(std::abs(half.mape - 50.0) <= 1e-12);

  auto perfect = seq;
  for (auto& st : perfect.steps) st.y = 0.5;
  const auto zero = ev::evaluate_model(pred, std::vector<data::LearnerSequence>{perfect}, "z");
  CHECK(zero.mae == 0.0);
  CHECK(zero.mape == 0.0);

  const auto again = ev::evaluate_model(e, seqs, "e");
  CHECK(again.mae == re.mae);
  CHECK(again.mape == re.mape);
}

TEST_CASE("report output") {
  std::vector<ev::MetricReport> reports{{"a", "predictor", 0.125, 12.5, 10}, {"b", "baseline", 0.25, 30.0, 10}};
  std::ostringstream csv, table;
  ev::write_reports_csv(csv, reports);
  CHECK(csv.str() == "tag,kind,n_steps,mae,mape\na,predictor,10,0.125,12.5\nb,baseline,10,0.25,30\n");
  ev::print_reports(table, reports);
  CHECK(table.str().find("baseline") != std::string::npos);
}

TEST_CASE("K-study curves") {
  const auto corpus = testsupport::hlr_corpus(1, 30, 0.05, 2);
  const auto& seq = corpus.sequences[0];
  const std::string item = seq.steps.back().item_id;
  const auto params = nn::PredictorParameters::init({data::kFeatureCount, 4, 4}, 3);

  sr::ExtractedEquation e{eq::EquationForm{}, sr::SparseCoefficientMatrix::zeros(17, eq::EquationForm{}), true, params};
  std::mt19937_64 rng(4);
  e.lambda.lambda = testsupport::random_tensor(17, 1, rng, -0.5, 0.5);
  const auto curve = ev::kstudy_curve(e, seq, item, 30.0, 0.5);
  REQUIRE(curve.size() == 61);
  CHECK(curve.front().day == 0.0);
  CHECK(curve.front().recall == 1.0);
  CHECK(curve.back().day == 30.0);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].recall <= curve[i - 1].recall);

  const auto dec = ev::kstudy_curve(params, seq, item, 10.0, 1.0);
  REQUIRE(dec.size() == 11);
  for (const auto& pt : dec) {
    CHECK(std::isfinite(pt.recall));
    CHECK(pt.recall > 0.0);
    CHECK(pt.recall < 1.0);
  }
  // Decoder-mode points are the predictor's output at the swept feature.
  data::FeatureVector x;
  for (auto it = seq.steps.rbegin(); it != seq.steps.rend(); ++it) {
    if (it->item_id == item) {
      x = it->x;
      break;
    }
  }
  x.values[0] = std::log1p(3.0);
  CHECK(dec[3].recall == nn::decode(params, x, nn::encode(params, seq, seq.steps.size())));

  CHECK_THROWS_AS(ev::kstudy_curve(e, seq, item, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(ev::kstudy_curve(e, seq, item, 5.0, -1.0), DomainError);
  CHECK_THROWS(ev::kstudy_curve(e, seq, "no-such-item", 5.0, 1.0));

  std::ostringstream out;
  ev::write_kstudy_csv(out, curve);
  CHECK(out.str().rfind("day,recall\n0,1\n", 0) == 0);
}

TEST_CASE("weight heatmap export") {
  const std::vector<std::string> names = sr::term_names({"a", "b", "c"}, true);
  const auto zero = ev::weight_heatmap_export(Tensor(7, 2), names);
  for (double v : zero.values.data()) CHECK(v == 0.0);
  CHECK(zero.col_names == std::vector<std::string>{"d1", "d2"});
  CHECK(zero.row_names == names);

  Tensor one(7, 2);
  one(4, 1) = -0.75;
  const auto single = ev::weight_heatmap_export(one, names);
  std::ostringstream csv;
  ev::write_heatmap_csv(csv, single);
  CHECK(csv.str() == "term,d1,d2\na,0,0\nb,0,0\nc,0,0\nd/dx a,0,0\nd/dx b,0,-0.75\nd/dx c,0,0\nbias,0,0\n");
  CHECK(single.diff_mass == std::vector<double>{0.0, 0.75});

  std::mt19937_64 rng(5);
  const Tensor r = testsupport::random_tensor(7, 3, rng);
  const auto t = ev::weight_heatmap_export(r, names);
  for (std::size_t j = 0; j < 3; ++j) {
    double raw = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < 3; ++i) raw += std::abs(r(i, j));
    for (std::size_t i = 3; i < 6; ++i) diff += std::abs(r(i, j));
    CHECK(std::abs(t.raw_mass[j] - raw) <= 1e-12);
    CHECK(std::abs(t.diff_mass[j] - diff) <= 1e-12);
    CHECK(t.bias_mass[j] == std::abs(r(6, j)));
  }
  std::ostringstream mass;
  ev::write_mass_csv(mass, t);
  CHECK(mass.str().rfind("column,raw,diff,bias\n", 0) == 0);
  CHECK_THROWS(ev::weight_heatmap_export(r, {"a"}));
}

TEST_CASE("SVG output is well-formed XML") {
  std::vector<svg::Series> series{{"a<b>&\"c\"", {0, 1, 2}, {1.0, 0.5, 0.25}}, {"flat", {0, 2}, {0.3, 0.3}}};
  std::ostringstream line;
  svg::line_plot(line, "K-study & more", "day", "recall", series);
  check_xml(line.str());

  std::mt19937_64 rng(6);
  std::ostringstream heat;
  svg::heatmap(heat, "weights", {"x<1", "d/dx x"}, {"d1", "d2", "d3"}, testsupport::random_tensor(2, 3, rng));
  check_xml(heat.str());
  std::ostringstream blank;
  svg::heatmap(blank, "zeros", {"a"}, {"d1"}, Tensor(1, 1));
  check_xml(blank.str());
  CHECK(svg::escape("<&>\"'") == "&lt;&amp;&gt;&quot;&apos;");
}
