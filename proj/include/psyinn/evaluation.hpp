#pragma once

// Metrics, model comparison, K-study curves and descriptor-weight tables.

#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "psyinn/dataset.hpp"
#include "psyinn/equations.hpp"
#include "psyinn/predictor.hpp"
#include "psyinn/sparsereg.hpp"

namespace psyinn::evaluation {

double mae(std::span<const double> y, std::span<const double> y_hat);
// Percent: 100 * mean(|y - y_hat| / max(y, eps)).
double mape(std::span<const double> y, std::span<const double> y_hat, double eps = 0.01);

struct MetricReport {
  std::string tag;
  std::string kind;
  double mae = 0.0;
  double mape = 0.0;
  std::size_t n_steps = 0;
};

using Model = std::variant<nn::PredictorParameters, eq::BaselineModel, sr::ExtractedEquation>;

std::string kind_name(const Model& model);  // predictor, baseline or equation
std::vector<double> predict(const Model& model, const data::LearnerSequence& sequence);
MetricReport evaluate_model(const Model& model, std::span<const data::LearnerSequence> sequences,
                            const std::string& tag);

void write_reports_csv(std::ostream& out, std::span<const MetricReport> reports);
void print_reports(std::ostream& out, std::span<const MetricReport> reports);

struct KStudyPoint {
  double day = 0.0;
  double recall = 0.0;
};

// Recall over future days for `item`, after the learner's whole history.
// The item's latest feature vector is reused with the elapsed-time feature
// swept over 0, step, 2*step, ... <= horizon. Decoder mode decodes every
// point through the predictor.
std::vector<KStudyPoint> kstudy_curve(const nn::PredictorParameters& params, const data::LearnerSequence& history,
                                      const std::string& item, double horizon_days, double step_days);
// Equation mode: descriptors are computed once at elapsed time 0 and held
// fixed, so only the form's delta argument moves.
std::vector<KStudyPoint> kstudy_curve(const sr::ExtractedEquation& equation, const data::LearnerSequence& history,
                                      const std::string& item, double horizon_days, double step_days);

void write_kstudy_csv(std::ostream& out, std::span<const KStudyPoint> curve);

struct HeatmapTable {
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;  // d1..dz
  ad::Tensor values;
  // Per column sums of |weight| over raw-feature rows, gradient rows and the
  // bias row.
  std::vector<double> raw_mass, diff_mass, bias_mass;
};

HeatmapTable weight_heatmap_export(const ad::Tensor& lambda, const std::vector<std::string>& term_names);
void write_heatmap_csv(std::ostream& out, const HeatmapTable& table);
void write_mass_csv(std::ostream& out, const HeatmapTable& table);

}  // namespace psyinn::evaluation
