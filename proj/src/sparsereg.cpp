#include "psyinn/sparsereg.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::sr {

using ad::Tensor;
using ad::Var;

std::size_t descriptor_width(std::size_t n_features, bool bias_column) {
  return 2 * n_features + (bias_column ? 1 : 0);
}

std::vector<std::string> term_names(const std::vector<std::string>& features, bool bias_column) {
  std::vector<std::string> out(features);
  for (const auto& f : features) out.push_back("d/dx " + f);
  if (bias_column) out.emplace_back("bias");
  return out;
}

Tensor augment(const Tensor& x, const Tensor& grads, bool bias_column) {
  if (!x.same_shape(grads)) throw ShapeError("augment: features " + x.shape_str() + " vs grads " + grads.shape_str());
  const std::size_t n = x.cols();
  Tensor out(x.rows(), descriptor_width(n, bias_column));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      out(r, i) = x(r, i);
      out(r, n + i) = grads(r, i);
    }
    if (bias_column) out(r, 2 * n) = 1.0;
  }
  return out;
}

Var augment(const Var& x, const Var& grads, bool bias_column) {
  std::vector<Var> parts{x, grads};
  if (bias_column) parts.push_back(x.tape()->constant(Tensor(x.rows(), 1, 1.0)));
  return ad::concat(parts, 1);
}

AugmentedDescriptorMatrix build_descriptors(const nn::PredictorParameters& params,
                                            std::span<const data::LearnerSequence> batch, GradMode mode,
                                            const DescriptorOptions& options) {
  AugmentedDescriptorMatrix out;
  out.n_features = params.config.n_features;
  out.bias_column = options.bias_column;
  const std::size_t width = descriptor_width(out.n_features, options.bias_column);
  const std::size_t rows = data::total_steps(batch);
  out.values = Tensor(rows, width);
  out.index.reserve(rows);
  out.y.reserve(rows);
  out.delta_days.reserve(rows);

  std::size_t r0 = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto in = nn::SequenceInputs::from(batch[s]);
    Tensor grads;
    if (mode == GradMode::Exact) {
      grads = nn::input_gradients_exact(params, in);
    } else {
      ad::Tape tape;
      auto bp = nn::BoundParameters::bind(tape, params, false);
      auto f = nn::forward(bp, tape, in);
      grads = nn::input_gradients_fd(bp, f.decoder, options.fd_eps).value();
    }
    const Tensor block = augment(in.features, grads, options.bias_column);
    std::copy(block.data().begin(), block.data().end(), out.values.data().begin() + static_cast<std::ptrdiff_t>(r0 * width));
    for (std::size_t t = 0; t < batch[s].steps.size(); ++t) {
      out.index.push_back({s, t});
      out.y.push_back(batch[s].steps[t].y);
      out.delta_days.push_back(batch[s].steps[t].delta_days);
    }
    r0 += batch[s].steps.size();
  }
  return out;
}

SparseCoefficientMatrix SparseCoefficientMatrix::zeros(std::size_t width, const eq::EquationForm& form,
                                                       int created_at) {
  return {Tensor(width, form.z()), created_at};
}

std::vector<double> sr_predict(const eq::EquationForm& form, const Tensor& descriptors, const Tensor& lambda,
                               std::span<const double> delta_days) {
  if (descriptors.cols() != lambda.rows() || lambda.cols() != form.z()) {
    throw ShapeError("sr_predict: descriptors " + descriptors.shape_str() + " incompatible with lambda " +
                     lambda.shape_str());
  }
  if (delta_days.size() != descriptors.rows()) throw ShapeError("sr_predict: one elapsed time per row required");
  std::vector<double> out(descriptors.rows());
  std::vector<double> d(form.z());
  for (std::size_t r = 0; r < descriptors.rows(); ++r) {
    std::fill(d.begin(), d.end(), 0.0);
    for (std::size_t i = 0; i < descriptors.cols(); ++i) {
      const double x = descriptors(r, i);
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += x * lambda(i, j);
    }
    out[r] = eq::evaluate(form, d, delta_days[r]);
  }
  return out;
}

Var sr_predict(const eq::EquationForm& form, const Var& descriptors, const Var& lambda, const Var& delta_days) {
  if (descriptors.cols() != lambda.rows() || lambda.cols() != form.z()) {
    throw ShapeError("sr_predict: descriptors " + descriptors.value().shape_str() + " incompatible with lambda " +
                     lambda.value().shape_str());
  }
  return eq::evaluate(form, ad::matmul(descriptors, lambda), delta_days);
}

double l1_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += std::abs(v);
  return s;
}

double sr_loss(std::span<const double> y, std::span<const double> y_tilde, const Tensor& lambda, double l1) {
  if (y.size() != y_tilde.size() || y.empty()) throw ShapeError("sr_loss: length mismatch");
  if (l1 < 0.0) throw DomainError("sr_loss: l1 weight must be nonnegative");
  double sse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - y_tilde[i];
    sse += e * e;
  }
  return sse / static_cast<double>(y.size()) + l1 * l1_norm(lambda);
}

void soft_threshold(Tensor& t, double threshold) {
  for (double& v : t.data()) {
    if (v > threshold)
      v -= threshold;
    else if (v < -threshold)
      v += threshold;
    else
      v = 0.0;
  }
}

namespace {

Tensor row_block(const Tensor& t, std::size_t r0, std::size_t r1) {
  Tensor out(r1 - r0, t.cols());
  std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(r0 * t.cols()),
            t.data().begin() + static_cast<std::ptrdiff_t>(r1 * t.cols()), out.data().begin());
  return out;
}

Tensor column_of(std::span<const double> v, std::size_t r0, std::size_t r1) {
  return Tensor(r1 - r0, 1, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(r0),
                                                v.begin() + static_cast<std::ptrdiff_t>(r1)));
}

}  // namespace

SparseCoefficientMatrix optimize_lambda(const eq::EquationForm& form, const AugmentedDescriptorMatrix& desc,
                                        const SparseCoefficientMatrix& init, const LambdaHyper& hyper,
                                        std::vector<double>* loss_trace, const LambdaEpochFn& on_epoch) {
  const std::size_t rows = desc.rows();
  if (rows == 0) throw Error("optimize_lambda: no rows");
  if (init.lambda.rows() != desc.values.cols() || init.lambda.cols() != form.z()) {
    throw ShapeError("optimize_lambda: initial lambda " + init.lambda.shape_str() + " does not fit descriptors " +
                     desc.values.shape_str());
  }
  if (hyper.l1 < 0.0 || hyper.lr < 0.0) throw DomainError("optimize_lambda: lr and l1 must be nonnegative");

  SparseCoefficientMatrix out = init;
  Tensor& lambda = out.lambda;

  auto objective = [&]() {
    const auto pred = sr_predict(form, desc.values, lambda, desc.delta_days);
    const double v = sr_loss(desc.y, pred, lambda, hyper.l1);
    if (!std::isfinite(v)) throw NumericError("optimize_lambda: loss is not finite");
    return v;
  };

  if (loss_trace) loss_trace->push_back(objective());
  const std::size_t batch = hyper.batch_rows == 0 ? rows : std::min(hyper.batch_rows, rows);
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    for (std::size_t r0 = 0; r0 < rows; r0 += batch) {
      const std::size_t r1 = std::min(rows, r0 + batch);
      ad::Tape tape;
      Var lv = tape.variable(lambda);
      Var pred = sr_predict(form, tape.constant(row_block(desc.values, r0, r1)), lv,
                            tape.constant(column_of(desc.delta_days, r0, r1)));
      Var err = pred - tape.constant(column_of(desc.y, r0, r1));
      Var mse = ad::mean(err * err);
      Tensor g;
      try {
        g = tape.backward(mse)[lv];
      } catch (const NumericError&) {
        throw NumericError("optimize_lambda: non-finite gradient at epoch " + std::to_string(epoch));
      }
      for (std::size_t k = 0; k < lambda.size(); ++k) lambda[k] -= hyper.lr * g[k];
      soft_threshold(lambda, hyper.lr * hyper.l1);
    }
    if (loss_trace || on_epoch) {
      const double loss = objective();
      if (loss_trace) loss_trace->push_back(loss);
      if (on_epoch) on_epoch(epoch, loss, lambda);
    }
  }
  for (double& v : lambda.data()) {
    if (std::abs(v) < hyper.prune_tol) v = 0.0;
  }
  return out;
}

std::vector<double> predict_equation(const ExtractedEquation& e, const data::LearnerSequence& sequence) {
  const auto in = nn::SequenceInputs::from(sequence);
  const Tensor grads = nn::input_gradients_exact(e.predictor, in);
  const Tensor desc = augment(in.features, grads, e.bias_column);
  return sr_predict(e.form, desc, e.lambda.lambda, in.delta.data());
}

void write_lambda_csv(std::ostream& out, const Tensor& lambda, const std::vector<std::string>& terms) {
  if (terms.size() != lambda.rows()) throw ShapeError("write_lambda_csv: one term name per row required");
  out << "term";
  for (std::size_t j = 0; j < lambda.cols(); ++j) out << ",d" << (j + 1);
  out << '\n';
  for (std::size_t i = 0; i < lambda.rows(); ++i) {
    out << terms[i];
    for (std::size_t j = 0; j < lambda.cols(); ++j) out << ',' << text::fmt(lambda(i, j));
    out << '\n';
  }
}

Tensor read_lambda_csv(std::istream& in, std::vector<std::string>* terms) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("lambda csv: empty input");
  const auto header = text::split(text::trim(line), ',');
  if (header.size() < 2 || header[0] != "term") throw SchemaError("lambda csv: header must start with 'term'");
  const std::size_t z = header.size() - 1;
  std::vector<double> values;
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(text::trim(line), ',');
    if (cells.size() != z + 1) throw SchemaError("lambda csv: wrong field count");
    names.push_back(cells[0]);
    for (std::size_t j = 1; j <= z; ++j) values.push_back(text::to_double(cells[j], "lambda"));
  }
  if (terms) *terms = names;
  return Tensor(names.size(), z, std::move(values));
}

}  // namespace psyinn::sr
