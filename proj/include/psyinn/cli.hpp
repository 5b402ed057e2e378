#pragma once

// Command-line entry point: ingest, synth, train, eval, extract, plot.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "psyinn/equations.hpp"
#include "psyinn/predictor.hpp"
#include "psyinn/sparsereg.hpp"

namespace psyinn::cli {

// Returns the process exit code. Failures print one "error: ..." line to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// model.txt written by `train`; file entries are relative to its directory.
struct ModelManifest {
  eq::EquationForm form;
  bool bias_column = true;
  std::string tag;
  std::string predictor = "predictor.ckpt";
  std::string lambda = "lambda.csv";
  std::string baseline;  // empty when absent
};

void write_manifest(std::ostream& out, const ModelManifest& m);
ModelManifest read_manifest(std::istream& in);

struct LoadedModel {
  ModelManifest manifest;
  sr::ExtractedEquation equation;  // holds the predictor too
  std::vector<std::string> terms;
  std::optional<eq::BaselineModel> baseline;
};

LoadedModel load_model(const std::string& manifest_path);

// Text form of an equation with its nonzero terms ordered by |weight|, e.g.
//   form: HLR
//   p = 2^(-delta / h)
//   h = 2^(0.8*log_history_correct - 0.25*bias)
// Coefficients carry 17 significant digits so parse_equation recovers them.
std::string render_equation(const eq::EquationForm& form, const ad::Tensor& lambda,
                            const std::vector<std::string>& terms);

struct ParsedEquation {
  eq::EquationForm form;
  ad::Tensor lambda;
};

ParsedEquation parse_equation(const std::string& rendered, const std::vector<std::string>& terms);

}  // namespace psyinn::cli
