#include "psyinn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::evaluation {

using ad::Tensor;

namespace {

void check_lengths(std::span<const double> y, std::span<const double> y_hat, const char* what) {
  if (y.size() != y_hat.size()) throw ShapeError(std::string(what) + ": length mismatch");
  if (y.empty()) throw ShapeError(std::string(what) + ": empty input");
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_lengths(y, y_hat, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double mape(std::span<const double> y, std::span<const double> y_hat, double eps) {
  check_lengths(y, y_hat, "mape");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]) / std::max(y[i], eps);
  return 100.0 * s / static_cast<double>(y.size());
}

std::string kind_name(const Model& model) {
  switch (model.index()) {
    case 0: return "predictor";
    case 1: return "baseline";
    default: return "equation";
  }
}

std::vector<double> predict(const Model& model, const data::LearnerSequence& sequence) {
  if (const auto* p = std::get_if<nn::PredictorParameters>(&model)) return nn::predict(*p, sequence);
  if (const auto* b = std::get_if<eq::BaselineModel>(&model)) return eq::predict_baseline(*b, sequence);
  return sr::predict_equation(std::get<sr::ExtractedEquation>(model), sequence);
}

MetricReport evaluate_model(const Model& model, std::span<const data::LearnerSequence> sequences,
                            const std::string& tag) {
  std::vector<double> y, y_hat;
  for (const auto& seq : sequences) {
    const auto p = predict(model, seq);
    for (std::size_t t = 0; t < p.size(); ++t) {
      y.push_back(seq.steps[t].y);
      y_hat.push_back(p[t]);
    }
  }
  if (y.empty()) throw Error("evaluate_model: no steps to evaluate");
  return {tag, kind_name(model), mae(y, y_hat), mape(y, y_hat), y.size()};
}

void write_reports_csv(std::ostream& out, std::span<const MetricReport> reports) {
  out << "tag,kind,n_steps,mae,mape\n";
  for (const auto& r : reports) {
    out << r.tag << ',' << r.kind << ',' << r.n_steps << ',' << text::fmt(r.mae) << ',' << text::fmt(r.mape) << '\n';
  }
}

void print_reports(std::ostream& out, std::span<const MetricReport> reports) {
  std::size_t w = 5;
  for (const auto& r : reports) w = std::max(w, r.tag.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(w)) << "model" << "  " << std::setw(9) << "kind" << std::right
      << std::setw(8) << "steps" << std::setw(12) << "MAE" << std::setw(12) << "MAPE%" << '\n';
  for (const auto& r : reports) {
    out << std::left << std::setw(static_cast<int>(w)) << r.tag << "  " << std::setw(9) << r.kind << std::right
        << std::setw(8) << r.n_steps << std::fixed << std::setprecision(6) << std::setw(12) << r.mae
        << std::setprecision(3) << std::setw(12) << r.mape << '\n';
    out.flags(flags);
  }
  out.flags(flags);
}

namespace {

std::vector<double> day_grid(double horizon, double step) {
  if (!(horizon > 0.0)) throw DomainError("kstudy: horizon must be positive");
  if (!(step > 0.0)) throw DomainError("kstudy: step must be positive");
  std::vector<double> days;
  for (std::size_t k = 0;; ++k) {
    const double d = static_cast<double>(k) * step;
    if (d > horizon * (1.0 + 1e-12)) break;
    days.push_back(d);
  }
  return days;
}

const data::Step& latest_step(const data::LearnerSequence& history, const std::string& item) {
  for (auto it = history.steps.rbegin(); it != history.steps.rend(); ++it) {
    if (it->item_id == item) return *it;
  }
  throw Error("kstudy: item '" + item + "' not found in history of learner '" + history.learner_id + "'");
}

}  // namespace

std::vector<KStudyPoint> kstudy_curve(const nn::PredictorParameters& params, const data::LearnerSequence& history,
                                      const std::string& item, double horizon_days, double step_days) {
  const auto days = day_grid(horizon_days, step_days);
  data::FeatureVector x = latest_step(history, item).x;
  const auto state = nn::encode(params, history, history.steps.size());
  std::vector<KStudyPoint> out;
  for (double d : days) {
    x.values[0] = std::log1p(d);
    out.push_back({d, nn::decode(params, x, state)});
  }
  return out;
}

std::vector<KStudyPoint> kstudy_curve(const sr::ExtractedEquation& e, const data::LearnerSequence& history,
                                      const std::string& item, double horizon_days, double step_days) {
  const auto days = day_grid(horizon_days, step_days);
  data::FeatureVector x = latest_step(history, item).x;
  x.values[0] = 0.0;
  const auto state = nn::encode(e.predictor, history, history.steps.size());
  const auto grads = nn::input_gradients(e.predictor, x, state);
  const Tensor row = sr::augment(Tensor::row(x.values), Tensor::row(grads), e.bias_column);
  const Tensor lam = e.lambda.lambda;
  if (row.cols() != lam.rows()) throw ShapeError("kstudy: descriptor width does not match lambda");
  std::vector<double> d(e.form.z(), 0.0);
  for (std::size_t i = 0; i < row.cols(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += row(0, i) * lam(i, j);
  std::vector<KStudyPoint> out;
  for (double day : days) out.push_back({day, eq::evaluate(e.form, d, day)});
  return out;
}

void write_kstudy_csv(std::ostream& out, std::span<const KStudyPoint> curve) {
  out << "day,recall\n";
  for (const auto& p : curve) out << text::fmt(p.day) << ',' << text::fmt(p.recall) << '\n';
}

HeatmapTable weight_heatmap_export(const Tensor& lambda, const std::vector<std::string>& names) {
  if (names.size() != lambda.rows()) throw ShapeError("heatmap: one name per coefficient row required");
  HeatmapTable t;
  t.row_names = names;
  t.values = lambda;
  const std::size_t z = lambda.cols();
  for (std::size_t j = 0; j < z; ++j) t.col_names.push_back("d" + std::to_string(j + 1));
  t.raw_mass.assign(z, 0.0);
  t.diff_mass.assign(z, 0.0);
  t.bias_mass.assign(z, 0.0);
  for (std::size_t i = 0; i < lambda.rows(); ++i) {
    auto& mass = names[i] == "bias" ? t.bias_mass : names[i].rfind("d/dx ", 0) == 0 ? t.diff_mass : t.raw_mass;
    for (std::size_t j = 0; j < z; ++j) mass[j] += std::abs(lambda(i, j));
  }
  return t;
}

void write_heatmap_csv(std::ostream& out, const HeatmapTable& t) {
  sr::write_lambda_csv(out, t.values, t.row_names);
}

void write_mass_csv(std::ostream& out, const HeatmapTable& t) {
  out << "column,raw,diff,bias\n";
  for (std::size_t j = 0; j < t.col_names.size(); ++j) {
    out << t.col_names[j] << ',' << text::fmt(t.raw_mass[j]) << ',' << text::fmt(t.diff_mass[j]) << ','
        << text::fmt(t.bias_mass[j]) << '\n';
  }
}

}  // namespace psyinn::evaluation
