#include "psyinn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "psyinn/error.hpp"

namespace psyinn::data {

namespace {

struct ItemState {
  bool seen = false;
  double last_time = 0.0;
  std::int64_t history_seen = 0;
  std::int64_t history_correct = 0;
  std::int64_t last_session_seen = 0;
  std::int64_t last_session_correct = 0;
};

constexpr double kStartTime = 1.5e9;

}  // namespace

SynthResult synthesize(const SynthConfig& cfg) {
  if (cfg.learners == 0 || cfg.steps_per_learner == 0 || cfg.items == 0) {
    throw Error("synthesize: learners, items and steps_per_learner must be positive");
  }
  if (!(cfg.noise_sd >= 0.0)) throw Error("synthesize: noise_sd must be nonnegative");
  if (!(cfg.mean_gap_days > 0.0)) throw Error("synthesize: mean_gap_days must be positive");
  if (cfg.generator.n_features() != kFeatureCount) {
    throw ShapeError("synthesize: generator must act on " + std::to_string(kFeatureCount) + " features");
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> difficulty_dist(0.1, 0.9);
  std::vector<double> difficulty(cfg.items);
  for (auto& d : difficulty) d = difficulty_dist(rng);

  std::exponential_distribution<double> gap_dist(1.0 / cfg.mean_gap_days);
  std::uniform_int_distribution<std::size_t> item_dist(0, cfg.items - 1);
  std::uniform_int_distribution<std::int64_t> session_len(1, 4);
  std::normal_distribution<double> noise(0.0, 1.0);

  SynthResult out;
  out.truth = cfg.generator;
  for (std::size_t l = 0; l < cfg.learners; ++l) {
    LearnerSequence seq{"u" + std::to_string(l), {}};
    std::vector<double> clean;
    std::vector<ItemState> items(cfg.items);
    double t = kStartTime;
    for (std::size_t k = 0; k < cfg.steps_per_learner; ++k) {
      t += std::round(gap_dist(rng) * kSecondsPerDay);
      const std::size_t item = item_dist(rng);
      ItemState& st = items[item];
      const double delta_days = st.seen ? (t - st.last_time) / kSecondsPerDay : 0.0;

      Step step;
      step.x = make_features(delta_days, st.history_seen, st.history_correct, st.last_session_seen,
                             st.last_session_correct, difficulty[item]);
      step.timestamp = t;
      step.delta_days = delta_days;
      step.item_id = "i" + std::to_string(item);
      const double p = cfg.generator.predict(step);
      step.y = std::clamp(p + cfg.noise_sd * noise(rng), 0.0, 1.0);

      const std::int64_t n_s = session_len(rng);
      std::binomial_distribution<std::int64_t> correct(n_s, step.y);
      const std::int64_t c_s = correct(rng);
      st.seen = true;
      st.last_time = t;
      st.history_seen += n_s;
      st.history_correct += c_s;
      st.last_session_seen = n_s;
      st.last_session_correct = c_s;

      clean.push_back(p);
      seq.steps.push_back(std::move(step));
    }
    out.sequences.push_back(std::move(seq));
    out.clean.push_back(std::move(clean));
  }
  return out;
}

}  // namespace psyinn::data
