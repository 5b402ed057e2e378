#pragma once

// Alternating optimization of the predictor (theta) and the coefficient
// matrix (Lambda). Each round: NN phase with Lambda-bar frozen, SR phase with
// theta frozen, importance on validation, queue push, selection.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psyinn/bufferqueue.hpp"
#include "psyinn/dataset.hpp"
#include "psyinn/equations.hpp"
#include "psyinn/predictor.hpp"
#include "psyinn/sparsereg.hpp"

namespace psyinn::train {

enum class BudgetMode { Total, PerPhase };

struct TrainerConfig {
  eq::EquationForm form{eq::FormKind::HLR};
  nn::PredictorConfig predictor;
  double alpha = 0.1;
  double l1 = 1e-3;
  int epochs_per_phase = 5;
  int max_rounds = 20;
  double lr_nn = 4e-3;
  double lr_sr = 1e-2;
  std::size_t batch_size = 8;
  // Rows per proximal step in the SR phase (0 = full batch).
  std::size_t sr_batch_rows = 16;
  double prune_tol = 1e-3;
  int patience = 10;
  bq::Strategy strategy = bq::Strategy::Random;
  std::size_t capacity = 5;
  // Predictor init uses `seed`, mini-batch order seed + 1, the queue seed + 2.
  std::uint64_t seed = 0;
  double fd_eps = 1e-3;
  bool bias_column = true;
  bool alternate = true;
  bool train_nn = true;
  bool train_sr = true;
  int epoch_budget = 200;
  BudgetMode budget_mode = BudgetMode::Total;

  void validate() const;
  // "alt", "joint", "nn" or "sr", then the strategy: e.g. "alt-random".
  std::string tag() const;
};

struct LossParts {
  double data = 0.0;
  double sr = 0.0;
  double total = 0.0;
};

// L_T = L_Data + alpha * L_SR with Lambda constant and fd-mode descriptors.
// L_SR includes l1 * ||Lambda||_1.
LossParts total_loss(const nn::PredictorParameters& params, const ad::Tensor& lambda,
                     std::span<const data::LearnerSequence> batch, const TrainerConfig& cfg);

// Return true to end the phase after this epoch.
using EpochHook = std::function<bool(int epoch)>;

// Adam on L_T over shuffled learner mini-batches. With alpha = 0 the update is
// identical to nn::train_epoch.
void train_nn_phase(nn::PredictorParameters& params, const ad::Tensor& lambda_bar,
                    std::span<const data::LearnerSequence> train, const TrainerConfig& cfg, nn::Adam& opt,
                    std::mt19937_64& rng, int epochs, const EpochHook& after_epoch = {});

// optimize_lambda from lambda_bar on exact descriptors of the frozen predictor.
sr::SparseCoefficientMatrix train_sr_phase(const nn::PredictorParameters& params,
                                           const sr::SparseCoefficientMatrix& lambda_bar,
                                           std::span<const data::LearnerSequence> train, const TrainerConfig& cfg,
                                           int epochs, const sr::LambdaEpochFn& on_epoch = {});

// Non-alternating epoch: every mini-batch takes an Adam step on theta for L_T
// and a proximal step on Lambda for L_SR, both from the same forward pass.
void train_joint_epoch(nn::PredictorParameters& params, ad::Tensor& lambda,
                       std::span<const data::LearnerSequence> train, const TrainerConfig& cfg, nn::Adam& opt,
                       std::mt19937_64& rng);

class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // Returns true once `patience` consecutive values fail to beat the best.
  bool update(double value);
  double best() const { return best_; }
  int stale() const { return stale_; }

 private:
  int patience_;
  double best_ = 0.0;
  bool seen_ = false;
  int stale_ = 0;
};

struct TraceRow {
  int round = 0;
  std::string phase;  // nn, sr or joint
  int epoch = 0;      // running index over all rows
  double l_data = 0.0, l_sr = 0.0, l_total = 0.0, val_mae = 0.0;
};

struct QueueSnapshot {
  int round = 0;
  std::vector<bq::QueueEntry> entries;
  int selected_created_at = 0;
};

struct TrainingTrace {
  std::string tag;
  std::vector<TraceRow> rows;
  std::vector<QueueSnapshot> snapshots;
  nn::PredictorParameters theta;
  sr::SparseCoefficientMatrix lambda_bar;   // last selection
  sr::SparseCoefficientMatrix lambda_last;  // last SR output, fit to the final theta
  int rounds = 0;
  int nn_epochs = 0;
  int sr_epochs = 0;
  bool stopped_early = false;
  LossParts final_train;     // total_loss(theta, lambda_bar, train)
  double final_val_mae = 0.0;  // of the arm's model: the equation for sr-only, else the predictor
};

using RoundHook = std::function<void(const TrainingTrace& so_far)>;

TrainingTrace run(const data::DatasetSplit& split, const TrainerConfig& cfg, const RoundHook& after_round = {});

// Validation MAE of the equation (Lambda on exact descriptors of params).
double equation_mae(const nn::PredictorParameters& params, const sr::SparseCoefficientMatrix& lambda,
                    std::span<const data::LearnerSequence> seqs, const TrainerConfig& cfg);
double predictor_mae(const nn::PredictorParameters& params, std::span<const data::LearnerSequence> seqs);

void write_trace(std::ostream& out, const TrainingTrace& trace);
void write_snapshots(std::ostream& out, const TrainingTrace& trace);

}  // namespace psyinn::train
