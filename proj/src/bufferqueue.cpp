#include "psyinn/bufferqueue.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::bq {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Best: return "best";
    case Strategy::Random: return "random";
    case Strategy::Direct: return "direct";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  std::string k;
  for (char c : s) k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (k == "best") return Strategy::Best;
  if (k == "random") return Strategy::Random;
  if (k == "direct") return Strategy::Direct;
  throw ConfigError("unknown strategy '" + s + "' (expected best, random or direct)");
}

double importance(double l_data, double l_sr) {
  if (!std::isfinite(l_data) || !std::isfinite(l_sr)) throw NumericError("importance: non-finite loss");
  return l_data + l_sr;
}

BufferQueue::BufferQueue(std::size_t capacity, Strategy strategy, std::uint64_t seed)
    : capacity_(capacity), strategy_(strategy), rng_(seed) {
  if (capacity == 0) throw ConfigError("buffer queue capacity must be at least 1");
}

void BufferQueue::push(const sr::SparseCoefficientMatrix& matrix, double imp, int round) {
  if (!std::isfinite(imp)) throw NumericError("buffer queue: non-finite importance");
  if (!matrix.lambda.all_finite()) throw NumericError("buffer queue: non-finite coefficient matrix");
  if (!entries_.empty() && !matrix.lambda.same_shape(entries_.front().matrix.lambda)) {
    throw ShapeError("buffer queue: matrix shape " + matrix.lambda.shape_str() + " differs from queued " +
                     entries_.front().matrix.lambda.shape_str());
  }
  entries_.push_back({matrix, imp, round, pushes_++});
  if (entries_.size() <= capacity_) return;
  // Entries stay in push order, so the first maximum is the oldest.
  auto worst = entries_.begin();
  for (auto it = entries_.begin(); it != entries_.end(); ++it) {
    if (it->importance > worst->importance) worst = it;
  }
  entries_.erase(worst);
}

std::size_t BufferQueue::best_index() const {
  if (entries_.empty()) throw Error("buffer queue is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].importance <= entries_[best].importance) best = i;
  }
  return best;
}

sr::SparseCoefficientMatrix BufferQueue::select(const sr::SparseCoefficientMatrix& direct_candidate) {
  switch (strategy_) {
    case Strategy::Direct: return direct_candidate;
    case Strategy::Best: return entries_[best_index()].matrix;
    case Strategy::Random: {
      if (entries_.empty()) throw Error("buffer queue is empty");
      std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
      return entries_[pick(rng_)].matrix;
    }
  }
  throw Error("buffer queue: bad strategy");
}

void write_snapshot(std::ostream& out, const std::string& label, const BufferQueue& q, bool header) {
  if (header) out << "label,round,importance,lambda\n";
  for (const auto& e : q.entries()) {
    std::vector<std::string> cells;
    for (double v : e.matrix.lambda.data()) cells.push_back(text::fmt(v));
    out << label << ',' << e.round << ',' << text::fmt(e.importance) << ',' << text::join(cells, ";") << '\n';
  }
}

}  // namespace psyinn::bq
