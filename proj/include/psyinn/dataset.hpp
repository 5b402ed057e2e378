#pragma once

// Interaction logs, learner sequences and learner-level splits.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace psyinn::data {

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr std::size_t kFeatureCount = 8;

// Names of the default descriptor set, in feature-vector order.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "log_delta_days",    "log_history_seen", "log_history_correct", "log_history_wrong",
    "history_accuracy",  "log_session_seen", "session_accuracy",    "item_difficulty",
};

std::vector<std::string> feature_names();

// One learner x item exposure.
struct InteractionRecord {
  std::string learner_id;
  std::string item_id;
  double timestamp = 0.0;  // seconds since epoch
  double delta_t = 0.0;    // seconds since previous exposure of the item, 0 if first
  double recall = 0.0;     // fraction recalled in the session, [0, 1]
  std::int64_t history_seen = 0;
  std::int64_t history_correct = 0;
  std::int64_t session_seen = 0;
  std::int64_t session_correct = 0;
};

// Throws psyinn::DomainError naming the violated invariant.
void validate(const InteractionRecord& r);

struct FeatureVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

// Builds the default 8-component descriptor vector. `difficulty` is the
// item's mean failure rate.
FeatureVector make_features(double delta_days, std::int64_t history_seen, std::int64_t history_correct,
                            std::int64_t session_seen, std::int64_t session_correct, double difficulty);

struct Step {
  FeatureVector x;
  double y = 0.0;
  double timestamp = 0.0;
  double delta_days = 0.0;  // elapsed time fed to memory equations
  std::string item_id;
};

struct LearnerSequence {
  std::string learner_id;
  std::vector<Step> steps;  // nondecreasing timestamps

  std::size_t size() const { return steps.size(); }
};

std::size_t total_steps(std::span<const LearnerSequence> seqs);

struct DatasetSplit {
  std::vector<LearnerSequence> train;
  std::vector<LearnerSequence> validation;
  std::vector<LearnerSequence> test;
};

// Maps record fields to header column names.
struct ColumnMap {
  std::string recall = "p_recall";
  std::string timestamp = "timestamp";
  std::string delta = "delta";
  std::string learner = "user_id";
  std::string item = "lexeme_id";
  std::string history_seen = "history_seen";
  std::string history_correct = "history_correct";
  std::string session_seen = "session_seen";
  std::string session_correct = "session_correct";

  // Applies "field=column,field=column" overrides; field names are the struct
  // member names. Unknown fields raise psyinn::SchemaError.
  static ColumnMap parse(std::string_view spec);
};

struct RowError {
  std::size_t line = 0;  // 1-based line number in the input
  std::string message;
};

struct ParseResult {
  std::vector<InteractionRecord> records;
  std::vector<RowError> rejected;
};

// Reads tab- or comma-separated text with a header row. The delimiter is the
// one found in the header (tab wins). Missing mapped columns raise
// psyinn::SchemaError; bad rows are skipped and reported.
ParseResult parse_log(std::istream& in, const ColumnMap& schema = {});

// Groups records into per-learner sequences (first-appearance order), sorted
// by timestamp. Item difficulty is computed over the whole input first.
std::vector<LearnerSequence> featurize(std::span<const InteractionRecord> records);

// Learner-level shuffle then partition. Counts are floor(ratio * learners)
// for validation and test, remainder to train; a split with a positive ratio
// always receives at least one learner.
DatasetSplit split(std::vector<LearnerSequence> sequences, std::array<double, 3> ratios, std::uint64_t seed);

// Self-describing featurized corpus (see README for the layout).
void write_corpus(std::ostream& out, std::span<const LearnerSequence> seqs,
                  const std::vector<std::string>& names = feature_names());
std::vector<LearnerSequence> read_corpus(std::istream& in, std::vector<std::string>* names = nullptr);

}  // namespace psyinn::data
