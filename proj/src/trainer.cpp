#include "psyinn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::train {

using ad::Tensor;
using ad::Var;

void TrainerConfig::validate() const {
  if (!(alpha >= 0.0) || !(l1 >= 0.0)) throw ConfigError("alpha and l1 must be nonnegative");
  if (epochs_per_phase < 1 || max_rounds < 1) throw ConfigError("epochs_per_phase and max_rounds must be at least 1");
  if (!(lr_nn >= 0.0) || !(lr_sr >= 0.0)) throw ConfigError("learning rates must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (capacity == 0) throw ConfigError("capacity must be at least 1");
  if (!(fd_eps > 0.0)) throw ConfigError("fd_eps must be positive");
  if (epoch_budget < 1) throw ConfigError("epoch_budget must be at least 1");
  if (!train_nn && !train_sr) throw ConfigError("at least one of train_nn and train_sr must be enabled");
}

std::string TrainerConfig::tag() const {
  std::string arm = !train_sr ? "nn" : !train_nn ? "sr" : alternate ? "alt" : "joint";
  return arm + "-" + bq::to_string(strategy);
}

namespace {

double sse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a[i] - b[i];
    s += e * e;
  }
  return s;
}

// Per-learner graph pieces shared by the NN phase and joint epochs.
struct LearnerGraph {
  Var data_sse;    // sum of squared data residuals
  Var descriptors; // fd-mode augmented descriptors (depend on theta)
  Var sr_out;      // equation output with Lambda constant
};

LearnerGraph build_graph(ad::Tape& tape, const nn::BoundParameters& bp, const nn::SequenceInputs& in,
                         const Tensor& lambda, const TrainerConfig& cfg, bool with_sr) {
  LearnerGraph g;
  nn::SequenceForward f;
  try {
    f = nn::forward(bp, tape, in);
    Var err = f.decoder.output - tape.constant(in.targets);
    g.data_sse = ad::sum(err * err);
  } catch (const NumericError& e) {
    throw NumericError(std::string("training diverged: data loss term is not finite (") + e.what() + ")");
  }
  if (with_sr) {
    try {
      Var grads = nn::input_gradients_fd(bp, f.decoder, cfg.fd_eps);
      g.descriptors = sr::augment(f.features, grads, cfg.bias_column);
      g.sr_out = sr::sr_predict(cfg.form, g.descriptors, tape.constant(lambda), tape.constant(in.delta));
    } catch (const NumericError& e) {
      throw NumericError(std::string("training diverged: sr loss term is not finite (") + e.what() + ")");
    }
  }
  return g;
}

void accumulate(std::vector<Tensor>& into, const ad::Gradients& g, const std::vector<Var>& vars) {
  if (into.empty()) {
    for (const auto& v : vars) into.push_back(g[v]);
    return;
  }
  for (std::size_t k = 0; k < vars.size(); ++k) {
    auto dst = into[k].data();
    auto src = g[vars[k]].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

void check_finite(double data_part, double sr_part) {
  if (!std::isfinite(data_part)) throw NumericError("training diverged: data loss term is not finite");
  if (!std::isfinite(sr_part)) throw NumericError("training diverged: sr loss term is not finite");
}

std::size_t batch_steps(std::span<const data::LearnerSequence> train, const std::vector<std::size_t>& batch) {
  std::size_t steps = 0;
  for (std::size_t i : batch) steps += train[i].steps.size();
  return steps;
}

}  // namespace

LossParts total_loss(const nn::PredictorParameters& params, const Tensor& lambda,
                     std::span<const data::LearnerSequence> batch, const TrainerConfig& cfg) {
  if (batch.empty()) throw Error("total_loss: empty batch");
  const bool with_sr = cfg.train_sr;
  double data_sse = 0.0, sr_sse = 0.0;
  std::size_t n = 0;
  for (const auto& seq : batch) {
    ad::Tape tape;
    auto bp = nn::BoundParameters::bind(tape, params, false);
    const auto in = nn::SequenceInputs::from(seq);
    auto g = build_graph(tape, bp, in, lambda, cfg, with_sr);
    data_sse += g.data_sse.value().item();
    if (with_sr) sr_sse += sse(g.sr_out.value(), in.targets);
    n += seq.steps.size();
  }
  LossParts out;
  out.data = data_sse / static_cast<double>(n);
  out.sr = with_sr ? sr_sse / static_cast<double>(n) + cfg.l1 * sr::l1_norm(lambda) : 0.0;
  out.total = out.data + cfg.alpha * out.sr;
  return out;
}

void train_nn_phase(nn::PredictorParameters& params, const Tensor& lambda_bar,
                    std::span<const data::LearnerSequence> train, const TrainerConfig& cfg, nn::Adam& opt,
                    std::mt19937_64& rng, int epochs, const EpochHook& after_epoch) {
  const bool with_sr = cfg.train_sr && cfg.alpha != 0.0;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (const auto& batch : nn::make_batches(train.size(), cfg.batch_size, rng)) {
      const double inv = 1.0 / static_cast<double>(batch_steps(train, batch));
      std::vector<Tensor> grads;
      for (std::size_t i : batch) {
        ad::Tape tape;
        auto bp = nn::BoundParameters::bind(tape, params, true);
        const auto in = nn::SequenceInputs::from(train[i]);
        auto g = build_graph(tape, bp, in, lambda_bar, cfg, with_sr);
        Var loss = ad::scale(g.data_sse, inv);
        if (with_sr) {
          Var err = g.sr_out - tape.constant(in.targets);
          Var sr_term = ad::scale(ad::sum(err * err), cfg.alpha * inv);
          check_finite(loss.value().item(), sr_term.value().item());
          loss = loss + sr_term;
        } else {
          check_finite(loss.value().item(), 0.0);
        }
        accumulate(grads, tape.backward(loss), bp.vars());
      }
      opt.step(params, grads);
      if (!params.all_finite()) throw NumericError("training diverged: predictor parameters are not finite");
    }
    if (after_epoch && after_epoch(epoch)) return;
  }
}

sr::SparseCoefficientMatrix train_sr_phase(const nn::PredictorParameters& params,
                                           const sr::SparseCoefficientMatrix& lambda_bar,
                                           std::span<const data::LearnerSequence> train, const TrainerConfig& cfg,
                                           int epochs, const sr::LambdaEpochFn& on_epoch) {
  const auto desc = sr::build_descriptors(params, train, sr::GradMode::Exact, {cfg.bias_column, cfg.fd_eps});
  sr::LambdaHyper hyper{cfg.lr_sr, epochs, cfg.l1, cfg.prune_tol, cfg.sr_batch_rows};
  return sr::optimize_lambda(cfg.form, desc, lambda_bar, hyper, nullptr, on_epoch);
}

void train_joint_epoch(nn::PredictorParameters& params, Tensor& lambda, std::span<const data::LearnerSequence> train,
                       const TrainerConfig& cfg, nn::Adam& opt, std::mt19937_64& rng) {
  const bool theta_sr = cfg.alpha != 0.0;
  for (const auto& batch : nn::make_batches(train.size(), cfg.batch_size, rng)) {
    const double inv = 1.0 / static_cast<double>(batch_steps(train, batch));
    std::vector<Tensor> grads;
    Tensor lambda_grad(lambda.rows(), lambda.cols());
    for (std::size_t i : batch) {
      ad::Tape tape;
      auto bp = nn::BoundParameters::bind(tape, params, true);
      const auto in = nn::SequenceInputs::from(train[i]);
      auto g = build_graph(tape, bp, in, lambda, cfg, true);
      Var target = tape.constant(in.targets);
      Var loss = ad::scale(g.data_sse, inv);
      // theta sees the equation through its descriptors only; Lambda sees
      // the descriptors as data.
      Var lv = tape.variable(lambda);
      Var lambda_term;
      try {
        Var fit = sr::sr_predict(cfg.form, ad::detach(g.descriptors), lv, tape.constant(in.delta)) - target;
        lambda_term = ad::scale(ad::sum(fit * fit), inv);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training diverged: sr loss term is not finite (") + e.what() + ")");
      }
      double sr_value = lambda_term.value().item();
      if (theta_sr) {
        Var err = g.sr_out - target;
        Var sr_term = ad::scale(ad::sum(err * err), cfg.alpha * inv);
        sr_value += sr_term.value().item();
        loss = loss + sr_term;
      }
      check_finite(loss.value().item(), sr_value);
      loss = loss + lambda_term;
      auto gr = tape.backward(loss);
      accumulate(grads, gr, bp.vars());
      const Tensor& gl = gr[lv];
      for (std::size_t k = 0; k < gl.size(); ++k) lambda_grad[k] += gl[k];
    }
    opt.step(params, grads);
    if (!params.all_finite()) throw NumericError("training diverged: predictor parameters are not finite");
    for (std::size_t k = 0; k < lambda.size(); ++k) lambda[k] -= cfg.lr_sr * lambda_grad[k];
    sr::soft_threshold(lambda, cfg.lr_sr * cfg.l1);
  }
}

bool EarlyStopper::update(double value) {
  if (!seen_ || value < best_) {
    best_ = value;
    seen_ = true;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

double predictor_mae(const nn::PredictorParameters& params, std::span<const data::LearnerSequence> seqs) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& seq : seqs) {
    const auto yhat = nn::predict(params, seq);
    for (std::size_t t = 0; t < yhat.size(); ++t) s += std::abs(seq.steps[t].y - yhat[t]);
    n += yhat.size();
  }
  if (n == 0) throw Error("predictor_mae: no steps");
  return s / static_cast<double>(n);
}

double equation_mae(const nn::PredictorParameters& params, const sr::SparseCoefficientMatrix& lambda,
                    std::span<const data::LearnerSequence> seqs, const TrainerConfig& cfg) {
  const sr::ExtractedEquation e{cfg.form, lambda, cfg.bias_column, params};
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& seq : seqs) {
    const auto yt = sr::predict_equation(e, seq);
    for (std::size_t t = 0; t < yt.size(); ++t) s += std::abs(seq.steps[t].y - yt[t]);
    n += yt.size();
  }
  if (n == 0) throw Error("equation_mae: no steps");
  return s / static_cast<double>(n);
}

namespace {

// Validation L_Data + L_SR of a candidate matrix, exact descriptors.
double validation_importance(const nn::PredictorParameters& params, const sr::SparseCoefficientMatrix& lambda,
                             std::span<const data::LearnerSequence> val, const TrainerConfig& cfg) {
  const auto desc = sr::build_descriptors(params, val, sr::GradMode::Exact, {cfg.bias_column, cfg.fd_eps});
  const auto yt = sr::sr_predict(cfg.form, desc.values, lambda.lambda, desc.delta_days);
  const double l_sr = sr::sr_loss(desc.y, yt, lambda.lambda, cfg.l1);
  return bq::importance(nn::data_loss(params, val), l_sr);
}

}  // namespace

TrainingTrace run(const data::DatasetSplit& split, const TrainerConfig& cfg, const RoundHook& after_round) {
  cfg.validate();
  if (split.train.empty() || split.validation.empty()) throw Error("train: train and validation splits must be nonempty");
  if (cfg.predictor.n_features != data::kFeatureCount) throw ConfigError("predictor n_features must match the corpus");

  TrainingTrace tr;
  tr.tag = cfg.tag();
  tr.theta = nn::PredictorParameters::init(cfg.predictor, cfg.seed);
  const std::size_t width = sr::descriptor_width(cfg.predictor.n_features, cfg.bias_column);
  tr.lambda_bar = sr::SparseCoefficientMatrix::zeros(width, cfg.form, 0);
  tr.lambda_last = tr.lambda_bar;

  nn::Adam opt(cfg.lr_nn, tr.theta);
  std::mt19937_64 batch_rng(cfg.seed + 1);
  bq::BufferQueue queue(cfg.capacity, cfg.strategy, cfg.seed + 2);
  EarlyStopper stopper(cfg.patience);

  const bool joint = cfg.train_nn && cfg.train_sr && !cfg.alternate;
  // A joint epoch steps both blocks, so it counts once per phase.
  int used_nn = 0, used_sr = 0;
  auto remaining = [&](bool nn_phase) {
    if (cfg.budget_mode == BudgetMode::PerPhase) return cfg.epoch_budget - (nn_phase ? used_nn : used_sr);
    return cfg.epoch_budget - used_nn - used_sr;
  };

  auto add_row = [&](int round, const std::string& phase, const LossParts& lp, double val) {
    tr.rows.push_back({round, phase, static_cast<int>(tr.rows.size()) + 1, lp.data, lp.sr, lp.total, val});
  };
  auto arm_mae = [&](const sr::SparseCoefficientMatrix& lambda) {
    return cfg.train_nn ? predictor_mae(tr.theta, split.validation) : equation_mae(tr.theta, lambda, split.validation, cfg);
  };

  bool stop = false;
  for (int round = 1; round <= cfg.max_rounds && !stop; ++round) {
    const int budget = joint ? std::min(remaining(true), remaining(false)) / (cfg.budget_mode == BudgetMode::Total ? 2 : 1)
                             : 0;
    if (joint) {
      const int epochs = std::min(cfg.epochs_per_phase, budget);
      if (epochs <= 0) break;
      Tensor lambda = tr.lambda_bar.lambda;
      for (int e = 0; e < epochs && !stop; ++e) {
        train_joint_epoch(tr.theta, lambda, split.train, cfg, opt, batch_rng);
        ++used_nn;
        ++used_sr;
        ++tr.nn_epochs;
        ++tr.sr_epochs;
        const double val = predictor_mae(tr.theta, split.validation);
        add_row(round, "joint", total_loss(tr.theta, lambda, split.train, cfg), val);
        stop = stopper.update(val);
      }
      for (double& v : lambda.data()) {
        if (std::abs(v) < cfg.prune_tol) v = 0.0;
      }
      tr.lambda_last = {lambda, round};
    } else {
      if (cfg.train_nn) {
        const int epochs = std::min(cfg.epochs_per_phase, remaining(true));
        if (epochs <= 0) break;
        train_nn_phase(tr.theta, tr.lambda_bar.lambda, split.train, cfg, opt, batch_rng, epochs, [&](int) {
          ++used_nn;
          ++tr.nn_epochs;
          const double val = predictor_mae(tr.theta, split.validation);
          add_row(round, "nn", total_loss(tr.theta, tr.lambda_bar.lambda, split.train, cfg), val);
          stop = stopper.update(val);
          return stop;
        });
      }
      if (cfg.train_sr) {
        const int epochs = std::min(cfg.epochs_per_phase, remaining(false));
        if (epochs <= 0) break;
        const LossParts data_only = {nn::data_loss(tr.theta, split.train), 0.0, 0.0};
        const double nn_val = cfg.train_nn ? predictor_mae(tr.theta, split.validation) : 0.0;
        tr.lambda_last = train_sr_phase(tr.theta, tr.lambda_bar, split.train, cfg, epochs,
                                        [&](int, double loss, const Tensor& lambda) {
                                          ++used_sr;
                                          ++tr.sr_epochs;
                                          LossParts lp{data_only.data, loss, data_only.data + cfg.alpha * loss};
                                          double val = nn_val;
                                          if (!cfg.train_nn) {
                                            val = equation_mae(tr.theta, {lambda, round}, split.validation, cfg);
                                            stop = stopper.update(val) || stop;
                                          }
                                          add_row(round, "sr", lp, val);
                                        });
        tr.lambda_last.created_at = round;
      }
    }

    if (cfg.train_sr) {
      queue.push(tr.lambda_last, validation_importance(tr.theta, tr.lambda_last, split.validation, cfg), round);
      tr.lambda_bar = queue.select(tr.lambda_last);
      tr.snapshots.push_back({round, queue.entries(), tr.lambda_bar.created_at});
    }
    tr.rounds = round;
    if (after_round) after_round(tr);
  }
  tr.stopped_early = stop;
  tr.final_train = total_loss(tr.theta, tr.lambda_bar.lambda, split.train, cfg);
  tr.final_val_mae = arm_mae(tr.lambda_last);
  return tr;
}

void write_trace(std::ostream& out, const TrainingTrace& trace) {
  out << "tag,round,phase,epoch,L_Data,L_SR,L_T,val_MAE\n";
  for (const auto& r : trace.rows) {
    out << trace.tag << ',' << r.round << ',' << r.phase << ',' << r.epoch << ',' << text::fmt(r.l_data) << ','
        << text::fmt(r.l_sr) << ',' << text::fmt(r.l_total) << ',' << text::fmt(r.val_mae) << '\n';
  }
}

void write_snapshots(std::ostream& out, const TrainingTrace& trace) {
  out << "tag,round,selected,entry_round,importance\n";
  for (const auto& s : trace.snapshots) {
    for (const auto& e : s.entries) {
      out << trace.tag << ',' << s.round << ',' << s.selected_created_at << ',' << e.round << ','
          << text::fmt(e.importance) << '\n';
    }
  }
}

}  // namespace psyinn::train
