#pragma once

// Bounded store of coefficient matrices ranked by importance (a validation
// loss, lower is better). Supplies the constraint matrix for the next round.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "psyinn/sparsereg.hpp"

namespace psyinn::bq {

enum class Strategy { Best, Random, Direct };

std::string to_string(Strategy s);
// Accepts best / random / direct in any case.
Strategy parse_strategy(const std::string& s);

double importance(double l_data, double l_sr);

struct QueueEntry {
  sr::SparseCoefficientMatrix matrix;
  double importance = 0.0;
  int round = 0;
  std::uint64_t sequence = 0;  // push order, for tie-breaking
};

class BufferQueue {
 public:
  explicit BufferQueue(std::size_t capacity = 5, Strategy strategy = Strategy::Random, std::uint64_t seed = 0);

  // Appends, then evicts the highest importance entry when over capacity.
  // Among equal importances the oldest goes first.
  void push(const sr::SparseCoefficientMatrix& matrix, double importance, int round);
  void push(const sr::SparseCoefficientMatrix& matrix, double importance) { push(matrix, importance, matrix.created_at); }

  sr::SparseCoefficientMatrix select(const sr::SparseCoefficientMatrix& direct_candidate);
  // Index of the entry select() would return under BEST.
  std::size_t best_index() const;

  const std::vector<QueueEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  Strategy strategy() const { return strategy_; }

 private:
  std::size_t capacity_;
  Strategy strategy_;
  std::mt19937_64 rng_;
  std::uint64_t pushes_ = 0;
  std::vector<QueueEntry> entries_;
};

// One line per (snapshot, entry): label,round,importance,lambda values
// flattened row-major and joined with ';'.
void write_snapshot(std::ostream& out, const std::string& label, const BufferQueue& q, bool header);

}  // namespace psyinn::bq
