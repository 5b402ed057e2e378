#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "psyinn/autodiff.hpp"
#include "psyinn/dataset.hpp"
#include "psyinn/equations.hpp"
#include "psyinn/synth.hpp"

namespace testsupport {

using psyinn::ad::Tensor;

// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true value is
// ~0 from turning round-off into huge ratios.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences of a scalar function of one tensor.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5) {
  Tensor g(x.rows(), x.cols());
  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = xp[i];
    xp[i] = keep + eps;
    const double up = f(xp);
    xp[i] = keep - eps;
    const double down = f(xp);
    xp[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-4) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// HLR truth: log2 half-life = 1 + 0.8 log_history_correct - 0.6 log_history_wrong - 1.5 item_difficulty.
inline psyinn::eq::BaselineModel hlr_truth() {
  auto m = psyinn::eq::BaselineModel::zeros(psyinn::eq::EquationForm{psyinn::eq::FormKind::HLR},
                                            psyinn::data::kFeatureCount);
  m.bias = {1.0};
  m.weights(0, 2) = 0.8;
  m.weights(0, 3) = -0.6;
  m.weights(0, 7) = -1.5;
  return m;
}

inline psyinn::data::SynthResult hlr_corpus(std::size_t learners, std::size_t steps, double noise_sd,
                                            std::uint64_t seed, std::size_t items = 20) {
  psyinn::data::SynthConfig c;
  c.learners = learners;
  c.items = items;
  c.steps_per_learner = steps;
  c.generator = hlr_truth();
  c.noise_sd = noise_sd;
  c.seed = seed;
  return psyinn::data::synthesize(c);
}

}  // namespace testsupport
