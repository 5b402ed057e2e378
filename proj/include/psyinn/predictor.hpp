#pragma once

// Recall-probability predictor: a gated recurrent encoder over a learner's
// past steps followed by a two-layer perceptron decoder.
//
// Encoder input at step t is [x_t ; y_t ; log1p(repeat_gap) ; log1p(seq_gap)]
// where repeat_gap is the step's delta_days and seq_gap the days since the
// learner's previous step. Each step runs an LSTM cell and then scales the
// cell output by a forgetting gate sigmoid(gaps * W_f + b_f). The state used
// to predict step m is the gated output after step m-1 (zero for m = 0).
//
// Decoder: y_hat = sigmoid(tanh([x_m ; h] * W1 + b1) * W2 + b2).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psyinn/autodiff.hpp"
#include "psyinn/dataset.hpp"

namespace psyinn::nn {

struct PredictorConfig {
  std::size_t n_features = data::kFeatureCount;
  std::size_t hidden = 64;
  std::size_t decoder_hidden = 64;

  std::size_t encoder_input() const { return n_features + 3; }
  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

struct PredictorParameters {
  PredictorConfig config;
  ad::Tensor enc_w;   // (n+3) x 4d, gate blocks [input, forget, output, candidate]
  ad::Tensor enc_u;   // d x 4d
  ad::Tensor enc_b;   // 1 x 4d
  ad::Tensor gate_w;  // 2 x d, time-gap forgetting gate
  ad::Tensor gate_b;  // 1 x d
  ad::Tensor dec_w1;  // (n+d) x dh
  ad::Tensor dec_b1;  // 1 x dh
  ad::Tensor dec_w2;  // dh x 1
  ad::Tensor dec_b2;  // 1 x 1

  static PredictorParameters zeros(const PredictorConfig& config);
  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases use their layer's fan_in.
  static PredictorParameters init(const PredictorConfig& config, std::uint64_t seed);

  std::vector<ad::Tensor*> tensors();
  std::vector<const ad::Tensor*> tensors() const;
  static const std::vector<std::string>& names();
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const PredictorParameters& a, const PredictorParameters& b);
};

// Parameters placed on a tape, either as differentiable leaves or constants.
struct BoundParameters {
  ad::Var enc_w, enc_u, enc_b, gate_w, gate_b, dec_w1, dec_b1, dec_w2, dec_b2;
  PredictorConfig config;

  static BoundParameters bind(ad::Tape& tape, const PredictorParameters& p, bool trainable);
  std::vector<ad::Var> vars() const;
};

struct MemoryState {
  std::vector<double> h;
};

// Per-sequence matrices used by the forward pass.
struct SequenceInputs {
  ad::Tensor features;  // m x n
  ad::Tensor encoder;   // m x (n+3)
  ad::Tensor targets;   // m x 1
  ad::Tensor delta;     // m x 1, days

  static SequenceInputs from(const data::LearnerSequence& seq);
  // Gap features [log1p(repeat_gap), log1p(seq_gap)] of step t.
  static std::array<double, 2> gaps(const data::LearnerSequence& seq, std::size_t t);
};

// Gated states for every step: row t holds the state used to predict step t.
ad::Var encode_states(const BoundParameters& p, const ad::Tensor& encoder_inputs);

struct DecoderPass {
  ad::Var pre;     // m x dh, first-layer pre-activation
  ad::Var output;  // m x 1
};

DecoderPass decode(const BoundParameters& p, const ad::Var& features, const ad::Var& states);

// Central differences of the decoder w.r.t. each input feature, built from
// two forward passes per feature so gradients w.r.t. parameters flow through
// them. Returns m x n. The first layer is affine in x, so the perturbed
// pre-activation is pre +/- eps * W1[i, :].
ad::Var input_gradients_fd(const BoundParameters& p, const DecoderPass& pass, double eps);

struct SequenceForward {
  ad::Var features;
  ad::Var states;
  DecoderPass decoder;
};

SequenceForward forward(const BoundParameters& p, ad::Tape& tape, const SequenceInputs& in);

// ---- value-level API --------------------------------------------------------

MemoryState encode(const PredictorParameters& params, const data::LearnerSequence& seq, std::size_t prefix_len);
double decode(const PredictorParameters& params, const data::FeatureVector& x, const MemoryState& state);
std::vector<double> predict(const PredictorParameters& params, const data::LearnerSequence& seq);

// Mean over all predicted steps of (y - y_hat)^2.
double data_loss(const PredictorParameters& params, std::span<const data::LearnerSequence> batch);

// Exact d y_hat / d x via reverse mode; the state is held constant.
std::vector<double> input_gradients(const PredictorParameters& params, const data::FeatureVector& x,
                                    const MemoryState& state);
std::vector<double> input_gradients_fd(const PredictorParameters& params, const data::FeatureVector& x,
                                       const MemoryState& state, double eps = 1e-3);

// Exact per-row input gradients for a whole sequence (m x n).
ad::Tensor input_gradients_exact(const PredictorParameters& params, const SequenceInputs& in);

// ---- optimization ------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  Adam(double lr, const PredictorParameters& shape_like, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(PredictorParameters& params, const std::vector<ad::Tensor>& grads);
  double lr() const { return lr_; }
  long long steps() const { return t_; }

 private:
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

// Mini-batch order for one epoch: learners shuffled with `rng`, chunked.
std::vector<std::vector<std::size_t>> make_batches(std::size_t learners, std::size_t batch_size,
                                                   std::mt19937_64& rng);

// One epoch of Adam on the data loss alone. Returns the step-weighted mean
// batch loss observed before each update.
double train_epoch(PredictorParameters& params, Adam& opt, std::span<const data::LearnerSequence> train,
                   std::size_t batch_size, std::mt19937_64& rng);

// ---- checkpoints -------------------------------------------------------------

// Text dump: "psyinn-checkpoint v1", a config line, then one
// "tensor <name> <rows> <cols>" block per tensor with row-major values.
void save_checkpoint(const PredictorParameters& params, std::ostream& out);
PredictorParameters load_checkpoint(std::istream& in);

}  // namespace psyinn::nn
