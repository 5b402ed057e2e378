#include "psyinn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "psyinn/error.hpp"
#include "psyinn/textio.hpp"

namespace psyinn::data {

std::vector<std::string> feature_names() {
  return {kFeatureNames.begin(), kFeatureNames.end()};
}

void validate(const InteractionRecord& r) {
  if (!(r.recall >= 0.0 && r.recall <= 1.0)) throw DomainError("recall outcome outside [0,1]");
  if (r.history_seen < 0 || r.history_correct < 0 || r.session_seen < 0 || r.session_correct < 0) {
    throw DomainError("negative counter");
  }
  if (r.history_correct > r.history_seen) throw DomainError("history_correct exceeds history_seen");
  if (r.session_correct > r.session_seen) throw DomainError("session_correct exceeds session_seen");
  if (!(r.delta_t >= 0.0)) throw DomainError("negative delta_t");
  if (!std::isfinite(r.timestamp) || !std::isfinite(r.delta_t)) throw DomainError("non-finite time field");
}

FeatureVector make_features(double delta_days, std::int64_t history_seen, std::int64_t history_correct,
                            std::int64_t session_seen, std::int64_t session_correct, double difficulty) {
  const auto hs = static_cast<double>(history_seen);
  const auto hc = static_cast<double>(history_correct);
  const auto ss = static_cast<double>(session_seen);
  const auto sc = static_cast<double>(session_correct);
  return FeatureVector{{
      std::log1p(delta_days),
      std::log1p(hs),
      std::log1p(hc),
      std::log1p(hs - hc),
      hc / std::max(hs, 1.0),
      std::log1p(ss),
      sc / std::max(ss, 1.0),
      difficulty,
  }};
}

std::size_t total_steps(std::span<const LearnerSequence> seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.steps.size();
  return n;
}

ColumnMap ColumnMap::parse(std::string_view spec) {
  ColumnMap m;
  if (text::trim(spec).empty()) return m;
  for (const auto& item : text::split(spec, ',')) {
    const auto kv = text::split(item, '=');
    if (kv.size() != 2) throw SchemaError("schema entry must be field=column: '" + item + "'");
    const std::string key(text::trim(kv[0]));
    const std::string col(text::trim(kv[1]));
    if (key == "recall") m.recall = col;
    else if (key == "timestamp") m.timestamp = col;
    else if (key == "delta") m.delta = col;
    else if (key == "learner") m.learner = col;
    else if (key == "item") m.item = col;
    else if (key == "history_seen") m.history_seen = col;
    else if (key == "history_correct") m.history_correct = col;
    else if (key == "session_seen") m.session_seen = col;
    else if (key == "session_correct") m.session_correct = col;
    else throw SchemaError("unknown schema field '" + key + "'");
  }
  return m;
}

ParseResult parse_log(std::istream& in, const ColumnMap& schema) {
  ParseResult result;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty input: missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
  const auto header = text::split(line, sep);

  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (text::trim(header[i]) == name) return i;
    }
    throw SchemaError("missing column '" + name + "'");
  };
  const std::size_t c_recall = column(schema.recall), c_ts = column(schema.timestamp),
                    c_delta = column(schema.delta), c_learner = column(schema.learner),
                    c_item = column(schema.item), c_hs = column(schema.history_seen),
                    c_hc = column(schema.history_correct), c_ss = column(schema.session_seen),
                    c_sc = column(schema.session_correct);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, sep);
    if (cells.size() != header.size()) {
      result.rejected.push_back({lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                             std::to_string(cells.size())});
      continue;
    }
    try {
      InteractionRecord r;
      r.learner_id = std::string(text::trim(cells[c_learner]));
      r.item_id = std::string(text::trim(cells[c_item]));
      r.recall = text::to_double(cells[c_recall], schema.recall);
      r.timestamp = text::to_double(cells[c_ts], schema.timestamp);
      r.delta_t = text::to_double(cells[c_delta], schema.delta);
      r.history_seen = text::to_int(cells[c_hs], schema.history_seen);
      r.history_correct = text::to_int(cells[c_hc], schema.history_correct);
      r.session_seen = text::to_int(cells[c_ss], schema.session_seen);
      r.session_correct = text::to_int(cells[c_sc], schema.session_correct);
      validate(r);
      result.records.push_back(std::move(r));
    } catch (const Error& e) {
      result.rejected.push_back({lineno, e.what()});
    }
  }
  return result;
}

std::vector<LearnerSequence> featurize(std::span<const InteractionRecord> records) {
  if (records.empty()) throw Error("featurize: no records");

  std::unordered_map<std::string, std::pair<double, std::size_t>> failures;
  for (const auto& r : records) {
    validate(r);
    auto& f = failures[r.item_id];
    f.first += 1.0 - r.recall;
    f.second += 1;
  }

  std::vector<LearnerSequence> out;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& r : records) {
    auto [it, inserted] = slot.try_emplace(r.learner_id, out.size());
    if (inserted) out.push_back(LearnerSequence{r.learner_id, {}});
    const auto& f = failures.at(r.item_id);
    const double difficulty = f.second > 0 ? f.first / static_cast<double>(f.second) : 0.5;
    const double delta_days = r.delta_t / kSecondsPerDay;
    Step step;
    step.x = make_features(delta_days, r.history_seen, r.history_correct, r.session_seen, r.session_correct,
                           difficulty);
    step.y = r.recall;
    step.timestamp = r.timestamp;
    step.delta_days = delta_days;
    step.item_id = r.item_id;
    out[it->second].steps.push_back(std::move(step));
  }
  for (auto& s : out) {
    std::stable_sort(s.steps.begin(), s.steps.end(),
                     [](const Step& a, const Step& b) { return a.timestamp < b.timestamp; });
  }
  return out;
}

DatasetSplit split(std::vector<LearnerSequence> sequences, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw Error("split: ratios must be nonnegative and sum to 1");
  }
  const std::size_t n = sequences.size();
  const std::size_t wanted = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(),
                                                                    [](double r) { return r > 0.0; }));
  if (n < wanted) {
    throw Error("split: " + std::to_string(n) + " learners cannot fill " + std::to_string(wanted) + " splits");
  }

  auto count = [n](double r) {
    auto c = static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
    if (r > 0.0 && c == 0) c = 1;
    return c;
  };
  const std::size_t n_val = count(ratios[1]);
  const std::size_t n_test = count(ratios[2]);
  if (n_val + n_test > n || (ratios[0] > 0.0 && n_val + n_test == n)) {
    throw Error("split: too few learners for the requested ratios");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit out;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_train ? out.train : (k < n_train + n_val ? out.validation : out.test);
    dst.push_back(std::move(sequences[order[k]]));
  }
  return out;
}

namespace {
constexpr std::string_view kCorpusMagic = "# psyinn-corpus v1";
}

void write_corpus(std::ostream& out, std::span<const LearnerSequence> seqs, const std::vector<std::string>& names) {
  out << kCorpusMagic << '\n';
  out << "# n=" << names.size() << '\n';
  out << "learner\titem\ttimestamp\tdelta_days";
  for (const auto& name : names) out << '\t' << name;
  out << "\ty\n";
  for (const auto& s : seqs) {
    for (const auto& st : s.steps) {
      if (st.x.size() != names.size()) throw ShapeError("write_corpus: feature width mismatch");
      out << s.learner_id << '\t' << st.item_id << '\t' << text::fmt(st.timestamp) << '\t'
          << text::fmt(st.delta_days);
      for (double v : st.x.values) out << '\t' << text::fmt(v);
      out << '\t' << text::fmt(st.y) << '\n';
    }
  }
}

std::vector<LearnerSequence> read_corpus(std::istream& in, std::vector<std::string>* names) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kCorpusMagic) {
    throw SchemaError("not a psyinn corpus (missing '" + std::string(kCorpusMagic) + "')");
  }
  if (!std::getline(in, line) || line.rfind("# n=", 0) != 0) throw SchemaError("corpus: missing '# n=' line");
  const auto n = static_cast<std::size_t>(text::to_int(line.substr(4), "corpus n"));
  if (!std::getline(in, line)) throw SchemaError("corpus: missing column header");
  const auto header = text::split(text::trim(line), '\t');
  if (header.size() != n + 5) throw SchemaError("corpus: header width does not match n");
  if (names) names->assign(header.begin() + 4, header.begin() + 4 + static_cast<std::ptrdiff_t>(n));

  std::vector<LearnerSequence> out;
  std::unordered_map<std::string, std::size_t> slot;
  std::size_t lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(text::trim(line), '\t');
    if (cells.size() != n + 5) throw SchemaError("corpus line " + std::to_string(lineno) + ": wrong field count");
    Step st;
    st.item_id = cells[1];
    st.timestamp = text::to_double(cells[2], "timestamp");
    st.delta_days = text::to_double(cells[3], "delta_days");
    st.x.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) st.x.values.push_back(text::to_double(cells[4 + i], header[4 + i]));
    st.y = text::to_double(cells[4 + n], "y");
    auto [it, inserted] = slot.try_emplace(cells[0], out.size());
    if (inserted) out.push_back(LearnerSequence{cells[0], {}});
    out[it->second].steps.push_back(std::move(st));
  }
  return out;
}

}  // namespace psyinn::data
