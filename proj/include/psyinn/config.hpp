#pragma once

// Flat key=value run configuration. '#' starts a comment; blank lines are
// ignored. Unknown keys are rejected; command-line overrides win over file
// values.

#include <array>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "psyinn/equations.hpp"
#include "psyinn/synth.hpp"
#include "psyinn/trainer.hpp"

namespace psyinn::cfg {

class RunConfig {
 public:
  static const std::vector<std::string>& known_keys();

  static RunConfig parse(std::istream& in, const std::string& source = "config");
  static RunConfig load(const std::string& path);

  // Applies "key=value".
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  // File or override value, else the built-in default.
  std::string get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void require(const std::vector<std::string>& keys) const;

  train::TrainerConfig trainer() const;
  data::SynthConfig synth() const;
  eq::FitHyper baseline_hyper() const;
  std::array<double, 3> split_ratios() const;

 private:
  std::map<std::string, std::string> values_;
};

// Generator weights: descriptor rows separated by ';', features by ','.
eq::BaselineModel parse_generator(eq::EquationForm form, const std::string& weights, const std::string& bias);

}  // namespace psyinn::cfg
