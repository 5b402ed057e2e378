#pragma once

// Closed-form memory equations and gradient-fit baselines built on them.
//
// Every form maps z raw descriptors d and an elapsed time (days) to a recall
// probability:
//
//   HLR         p = 2^(-delta / h),              h = 2^clamp(d1, -10, 10)
//   WICKELGREN  p = l * (1 + b * delta)^(-s),     l = sigmoid(d1), b = softplus(d2),
//                                                 s = softplus(d3)
//   ACTR        p = sigmoid(d1 - softplus(d2) * ln(1 + delta))
//
// The reparameterizations keep outputs in [0, 1] and every form nonincreasing
// in delta for any finite d. ACTR is the two-descriptor activation/decay
// summary; trace history enters through the feature counters instead of an
// explicit sum over past exposures.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psyinn/autodiff.hpp"
#include "psyinn/dataset.hpp"

namespace psyinn::eq {

enum class FormKind { HLR, Wickelgren, ACTR };

struct EquationForm {
  FormKind kind = FormKind::HLR;

  std::size_t z() const;
  std::string_view name() const;
  // Accepts HLR, WICKELGREN, ACTR (case-insensitive, ACT-R also accepted).
  static EquationForm parse(std::string_view s);

  friend bool operator==(const EquationForm&, const EquationForm&) = default;
};

inline constexpr double kHalfLifeExponentBound = 10.0;

double evaluate(const EquationForm& form, std::span<const double> d, double delta_days);

// Row-wise version on a tape: `descriptors` is rows x z, `delta_days` rows x 1
// (usually a constant). Returns rows x 1.
ad::Var evaluate(const EquationForm& form, const ad::Var& descriptors, const ad::Var& delta_days);

// Linear map from a feature vector to the form's descriptors:
// d = weights * x + bias, weights z x n, bias z.
struct BaselineModel {
  EquationForm form;
  ad::Tensor weights;
  std::vector<double> bias;

  // Fit metadata (informational).
  int epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;

  std::size_t n_features() const { return weights.cols(); }
  std::vector<double> descriptors(const data::FeatureVector& x) const;
  double predict(const data::Step& step) const;

  static BaselineModel zeros(EquationForm form, std::size_t n_features);
};

struct FitHyper {
  double lr = 0.5;
  int epochs = 2000;
  std::uint64_t seed = 0;
};

// Full-batch gradient descent on the mean squared error over every step.
// Weights start at uniform(-0.01, 0.01) drawn from the seed, bias at zero.
// `loss_trace`, when given, receives the loss before each epoch's update plus
// the final loss. A non-finite loss raises psyinn::NumericError naming lr.
BaselineModel fit_baseline(EquationForm form, std::span<const data::LearnerSequence> sequences,
                           const FitHyper& hyper, std::vector<double>* loss_trace = nullptr);

std::vector<double> predict_baseline(const BaselineModel& model, const data::LearnerSequence& sequence);

// Flat key=value text.
void save_baseline(const BaselineModel& model, std::ostream& out);
BaselineModel load_baseline(std::istream& in);

}  // namespace psyinn::eq
