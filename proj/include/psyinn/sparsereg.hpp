#pragma once

// Differential sparse regression: memory-equation descriptors as a sparse
// linear map from [x ; d y_hat / d x (; 1)] through a coefficient matrix.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "psyinn/autodiff.hpp"
#include "psyinn/dataset.hpp"
#include "psyinn/equations.hpp"
#include "psyinn/predictor.hpp"

namespace psyinn::sr {

enum class GradMode { Exact, FiniteDifference };

struct DescriptorOptions {
  // Appends a constant 1 column so descriptors can carry intercepts.
  bool bias_column = true;
  double fd_eps = 1e-3;
};

std::size_t descriptor_width(std::size_t n_features, bool bias_column);

// Column labels: feature names, "d/dx <name>" for each gradient column, then
// "bias" when enabled.
std::vector<std::string> term_names(const std::vector<std::string>& features, bool bias_column);

struct StepRef {
  std::size_t sequence = 0;
  std::size_t step = 0;
};

struct AugmentedDescriptorMatrix {
  ad::Tensor values;  // rows x (2n [+1])
  std::vector<StepRef> index;
  std::vector<double> y;
  std::vector<double> delta_days;
  std::size_t n_features = 0;
  bool bias_column = true;

  std::size_t rows() const { return values.rows(); }
};

// [x, grads (, 1)] row-wise.
ad::Tensor augment(const ad::Tensor& x, const ad::Tensor& grads, bool bias_column);
ad::Var augment(const ad::Var& x, const ad::Var& grads, bool bias_column);

AugmentedDescriptorMatrix build_descriptors(const nn::PredictorParameters& params,
                                            std::span<const data::LearnerSequence> batch, GradMode mode,
                                            const DescriptorOptions& options = {});

struct SparseCoefficientMatrix {
  ad::Tensor lambda;  // width x z
  int created_at = 0;

  static SparseCoefficientMatrix zeros(std::size_t width, const eq::EquationForm& form, int created_at = 0);
};

std::vector<double> sr_predict(const eq::EquationForm& form, const ad::Tensor& descriptors, const ad::Tensor& lambda,
                               std::span<const double> delta_days);
ad::Var sr_predict(const eq::EquationForm& form, const ad::Var& descriptors, const ad::Var& lambda,
                   const ad::Var& delta_days);

double l1_norm(const ad::Tensor& t);
// Mean squared error plus l1 * ||lambda||_1.
double sr_loss(std::span<const double> y, std::span<const double> y_tilde, const ad::Tensor& lambda, double l1);

// Proximal operator of threshold * ||.||_1.
void soft_threshold(ad::Tensor& t, double threshold);

struct LambdaHyper {
  double lr = 1e-2;
  int epochs = 100;
  double l1 = 1e-3;
  double prune_tol = 1e-3;
  // Rows per proximal step; 0 means one full-batch step per epoch. Rows are
  // visited in order, so results depend only on the inputs.
  std::size_t batch_rows = 0;
};

// Called after every epoch with the full objective at the new coefficients.
using LambdaEpochFn = std::function<void(int epoch, double loss, const ad::Tensor& lambda)>;

// Proximal gradient descent: gradient step on the squared error, then
// soft-thresholding by lr * l1. Entries below prune_tol are zeroed at the end.
// `loss_trace` receives the objective at the start and after each epoch.
SparseCoefficientMatrix optimize_lambda(const eq::EquationForm& form, const AugmentedDescriptorMatrix& descriptors,
                                        const SparseCoefficientMatrix& init, const LambdaHyper& hyper,
                                        std::vector<double>* loss_trace = nullptr,
                                        const LambdaEpochFn& on_epoch = {});

// Equation evaluated with descriptors from a (frozen) predictor.
struct ExtractedEquation {
  eq::EquationForm form;
  SparseCoefficientMatrix lambda;
  bool bias_column = true;
  nn::PredictorParameters predictor;
};

std::vector<double> predict_equation(const ExtractedEquation& equation, const data::LearnerSequence& sequence);

// Header "term,d1,..,dz" then one labeled row per descriptor column.
void write_lambda_csv(std::ostream& out, const ad::Tensor& lambda, const std::vector<std::string>& terms);
ad::Tensor read_lambda_csv(std::istream& in, std::vector<std::string>* terms = nullptr);

}  // namespace psyinn::sr
