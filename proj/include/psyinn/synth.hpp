#pragma once

// Synthetic corpora with a known generating memory equation.
//
// Each learner draws items uniformly from a shared pool and reviews them at
// exponentially distributed gaps. Feature counters describe the item's past
// sessions: history_* accumulate all earlier sessions and session_* repeat the
// most recent one (0/0 on first exposure), so every feature is known before
// the outcome is drawn. Item difficulty is a latent uniform(0.1, 0.9) value per
// item rather than a corpus statistic, which keeps f_true a pure function of
// the emitted features.

#include <cstdint>

#include "psyinn/dataset.hpp"
#include "psyinn/equations.hpp"

namespace psyinn::data {

struct SynthConfig {
  std::size_t learners = 0;
  std::size_t items = 0;
  std::size_t steps_per_learner = 0;
  eq::BaselineModel generator;  // f_true(x, delta) = generator.predict
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  double mean_gap_days = 1.0;
};

struct SynthResult {
  std::vector<LearnerSequence> sequences;
  eq::BaselineModel truth;
  // Noise-free f_true per step, aligned with sequences.
  std::vector<std::vector<double>> clean;
};

// Outcomes are clamp(f_true(x) + N(0, noise_sd), 0, 1). Deterministic in seed.
SynthResult synthesize(const SynthConfig& config);

}  // namespace psyinn::data
