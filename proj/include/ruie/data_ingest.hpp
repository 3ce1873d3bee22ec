#pragma once

// Interaction-log ingestion: parsing, id densification, sliding-window
// sample construction and train/test splitting.

#include "ruie/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace ruie {

enum class Behavior : std::uint8_t { click, follow, like, share };

inline constexpr std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::click: return "click";
    case Behavior::follow: return "follow";
    case Behavior::like: return "like";
    case Behavior::share: return "share";
  }
  return "click";
}

inline std::optional<Behavior> parse_behavior(std::string_view s) {
  if (s == "click") return Behavior::click;
  if (s == "follow") return Behavior::follow;
  if (s == "like") return Behavior::like;
  if (s == "share") return Behavior::share;
  return std::nullopt;
}

/// Raw per-behavior reward. The trainer divides by kMaxReward.
inline constexpr double reward_of(Behavior b) {
  switch (b) {
    case Behavior::click: return 1.0;
    case Behavior::follow: return 3.0;
    case Behavior::like: return 3.0;
    case Behavior::share: return 2.0;
  }
  return 0.0;
}
inline constexpr double kMaxReward = 3.0;

struct InteractionRecord {
  Id user_id = 0;
  Id item_id = 0;
  Id scenario_id = 0;
  Behavior behavior = Behavior::click;
  std::int64_t timestamp = 0;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

/// Real items are 0..num_items-1; the padding token is num_items.
struct Catalog {
  Id num_items = 1;
  Id num_scenarios = 1;

  Id padding_item_id() const { return num_items; }
};

struct SequenceSample {
  Id user_id = 0;
  std::vector<Id> history_items;
  std::vector<Id> history_scenarios;
  Id target_item = 0;
  Id target_scenario = 0;
  double reward = 0.0;  // raw reward_of(behavior)
  std::vector<Id> next_history_items;
  std::vector<Id> next_history_scenarios;

  friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

// ---------------------------------------------------------------- parsing

struct Schema {
  std::string user_id = "user_id";
  std::string item_id = "item_id";
  std::string scenario_id = "scenario_id";
  std::string behavior = "behavior";
  std::string timestamp = "timestamp";
};

struct ParseOptions {
  char delimiter = ',';
  Schema schema;
  /// Fail when rejected rows exceed this fraction of data rows.
  double max_bad_fraction = 0.01;
};

struct ParseResult {
  std::vector<InteractionRecord> records;
  std::size_t rows_read = 0;
  std::size_t rejected = 0;
  std::vector<std::string> rejection_samples;  // first few reasons
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses a delimiter-separated log with a header row. Output is sorted by
/// (user_id, timestamp); the sort is stable so equal timestamps keep file order.
inline ParseResult parse_interactions(std::istream& in, const ParseOptions& opts = {}) {
  ParseResult result;
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError("input has no header row");
  }
  const auto header = detail::split(line, opts.delimiter);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError("missing required column '" + name + "'");
  };
  const std::size_t c_user = column(opts.schema.user_id);
  const std::size_t c_item = column(opts.schema.item_id);
  const std::size_t c_scen = column(opts.schema.scenario_id);
  const std::size_t c_beh = column(opts.schema.behavior);
  const std::size_t c_ts = column(opts.schema.timestamp);

  auto reject = [&](std::size_t line_no, const std::string& why) {
    ++result.rejected;
    if (result.rejection_samples.size() < 10)
      result.rejection_samples.push_back("line " + std::to_string(line_no) + ": " + why);
  };

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++result.rows_read;
    const auto fields = detail::split(line, opts.delimiter);
    if (fields.size() != header.size()) {
      reject(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()));
      continue;
    }
    const auto user = detail::parse_int(fields[c_user]);
    const auto item = detail::parse_int(fields[c_item]);
    const auto scen = detail::parse_int(fields[c_scen]);
    const auto ts = detail::parse_int(fields[c_ts]);
    const auto beh = parse_behavior(fields[c_beh]);
    if (!user || !item || !scen || *user < 0 || *item < 0 || *scen < 0) {
      reject(line_no, "bad id field");
      continue;
    }
    if (!ts) {
      reject(line_no, "unparseable timestamp '" + std::string(fields[c_ts]) + "'");
      continue;
    }
    if (!beh) {
      reject(line_no, "unknown behavior '" + std::string(fields[c_beh]) + "'");
      continue;
    }
    result.records.push_back({*user, *item, *scen, *beh, *ts});
  }
  if (result.rows_read > 0 &&
      static_cast<double>(result.rejected) >
          opts.max_bad_fraction * static_cast<double>(result.rows_read)) {
    std::string msg = std::to_string(result.rejected) + " of " +
                      std::to_string(result.rows_read) + " rows rejected";
    if (!result.rejection_samples.empty()) msg += " (" + result.rejection_samples.front() + ")";
    throw DataError(msg);
  }
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const InteractionRecord& a, const InteractionRecord& b) {
                     return a.user_id != b.user_id ? a.user_id < b.user_id
                                                   : a.timestamp < b.timestamp;
                   });
  return result;
}

inline ParseResult parse_interactions(const std::filesystem::path& path,
                                      const ParseOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_interactions(in, opts);
}

inline void write_records_csv(std::ostream& out, const std::vector<InteractionRecord>& records,
                              char delim = ',') {
  out << "user_id" << delim << "item_id" << delim << "scenario_id" << delim << "behavior"
      << delim << "timestamp\n";
  for (const auto& r : records) {
    out << r.user_id << delim << r.item_id << delim << r.scenario_id << delim
        << to_string(r.behavior) << delim << r.timestamp << '\n';
  }
}

// ------------------------------------------------------- record selection

/// Keeps records with begin <= timestamp < end.
inline std::vector<InteractionRecord> filter_time_range(
    const std::vector<InteractionRecord>& records, std::int64_t begin, std::int64_t end) {
  std::vector<InteractionRecord> out;
  for (const auto& r : records)
    if (r.timestamp >= begin && r.timestamp < end) out.push_back(r);
  return out;
}

/// Uniform subset of min(n, #users) distinct users, all their records kept
/// in input order.
inline std::vector<InteractionRecord> sample_users(const std::vector<InteractionRecord>& records,
                                                   std::size_t n, std::uint64_t seed) {
  if (n == 0) throw PreconditionError("sample_users: n must be >= 1");
  std::set<Id> distinct;
  for (const auto& r : records) distinct.insert(r.user_id);
  if (n >= distinct.size()) return records;
  std::vector<Id> users(distinct.begin(), distinct.end());
  std::mt19937_64 rng(seed);
  std::shuffle(users.begin(), users.end(), rng);
  const std::set<Id> keep(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<InteractionRecord> out;
  for (const auto& r : records)
    if (keep.count(r.user_id)) out.push_back(r);
  return out;
}

// ----------------------------------------------------------- id mapping

/// Dense 0-based ids for items and scenarios, assigned in ascending raw order.
class IdMapping {
 public:
  static IdMapping build(const std::vector<InteractionRecord>& records) {
    std::set<Id> items, scenarios;
    for (const auto& r : records) {
      items.insert(r.item_id);
      scenarios.insert(r.scenario_id);
    }
    IdMapping m;
    m.items_.assign(items.begin(), items.end());
    m.scenarios_.assign(scenarios.begin(), scenarios.end());
    m.reindex();
    return m;
  }

  Catalog catalog() const {
    return {static_cast<Id>(std::max<std::size_t>(items_.size(), 1)),
            static_cast<Id>(std::max<std::size_t>(scenarios_.size(), 1))};
  }

  std::vector<InteractionRecord> apply(const std::vector<InteractionRecord>& records) const {
    std::vector<InteractionRecord> out;
    out.reserve(records.size());
    for (auto r : records) {
      const auto it = item_index_.find(r.item_id);
      if (it == item_index_.end())
        throw DataError("item id " + std::to_string(r.item_id) + " not in id mapping");
      const auto st = scenario_index_.find(r.scenario_id);
      if (st == scenario_index_.end())
        throw DataError("scenario id " + std::to_string(r.scenario_id) +
                        " not in id mapping (model has " + std::to_string(scenarios_.size()) +
                        " scenarios)");
      r.item_id = it->second;
      r.scenario_id = st->second;
      out.push_back(r);
    }
    return out;
  }

  const std::vector<Id>& raw_items() const { return items_; }
  const std::vector<Id>& raw_scenarios() const { return scenarios_; }

  /// Writes `<dir>/item_ids.tsv` and `<dir>/scenario_ids.tsv` (raw<TAB>dense).
  void save(const std::filesystem::path& dir) const {
    write_table(dir / "item_ids.tsv", items_);
    write_table(dir / "scenario_ids.tsv", scenarios_);
  }

  static IdMapping load(const std::filesystem::path& dir) {
    IdMapping m;
    m.items_ = read_table(dir / "item_ids.tsv");
    m.scenarios_ = read_table(dir / "scenario_ids.tsv");
    m.reindex();
    return m;
  }

 private:
  void reindex() {
    item_index_.clear();
    scenario_index_.clear();
    for (std::size_t i = 0; i < items_.size(); ++i) item_index_[items_[i]] = static_cast<Id>(i);
    for (std::size_t i = 0; i < scenarios_.size(); ++i)
      scenario_index_[scenarios_[i]] = static_cast<Id>(i);
  }

  static void write_table(const std::filesystem::path& path, const std::vector<Id>& raw) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    for (std::size_t i = 0; i < raw.size(); ++i) out << raw[i] << '\t' << i << '\n';
  }

  static std::vector<Id> read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open id mapping '" + path.string() + "'");
    std::vector<Id> raw;
    Id r = 0, dense = 0;
    while (in >> r >> dense) {
      if (dense != static_cast<Id>(raw.size()))
        throw DataError("id mapping '" + path.string() + "' is not contiguous");
      raw.push_back(r);
    }
    return raw;
  }

  std::vector<Id> items_, scenarios_;
  std::unordered_map<Id, Id> item_index_, scenario_index_;
};

// ----------------------------------------------------- sample building

/// One sample per interaction. Histories are front-padded with the padding
/// token (scenario 0 at padded slots) and slide left as targets are consumed.
inline std::vector<SequenceSample> build_sequences(const std::vector<InteractionRecord>& records,
                                                   std::size_t H, const Catalog& catalog) {
  if (H == 0) throw PreconditionError("build_sequences: H must be >= 1");
  std::vector<SequenceSample> out;
  out.reserve(records.size());
  const Id pad = catalog.padding_item_id();
  std::vector<Id> items, scenarios;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool new_user = i == 0 || records[i - 1].user_id != r.user_id;
    if (i > 0) {
      const auto& p = records[i - 1];
      if (p.user_id > r.user_id || (p.user_id == r.user_id && p.timestamp > r.timestamp))
        throw PreconditionError("build_sequences: records not sorted by (user, timestamp)");
    }
    if (r.item_id >= catalog.num_items || r.scenario_id >= catalog.num_scenarios)
      throw DataError("record id outside catalog bounds");
    if (new_user) {
      items.assign(H, pad);
      scenarios.assign(H, 0);
    }
    SequenceSample s;
    s.user_id = r.user_id;
    s.history_items = items;
    s.history_scenarios = scenarios;
    s.target_item = r.item_id;
    s.target_scenario = r.scenario_id;
    s.reward = reward_of(r.behavior);
    items.erase(items.begin());
    items.push_back(r.item_id);
    scenarios.erase(scenarios.begin());
    scenarios.push_back(r.scenario_id);
    s.next_history_items = items;
    s.next_history_scenarios = scenarios;
    out.push_back(std::move(s));
  }
  return out;
}

struct Split {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> test;
};

/// Last sample of every user with >= 2 samples goes to test.
inline Split split_leave_one_out(const std::vector<SequenceSample>& samples) {
  Split split;
  std::size_t begin = 0;
  while (begin < samples.size()) {
    std::size_t end = begin + 1;
    while (end < samples.size() && samples[end].user_id == samples[begin].user_id) ++end;
    const std::size_t count = end - begin;
    const std::size_t train_end = count >= 2 ? end - 1 : end;
    for (std::size_t i = begin; i < train_end; ++i) split.train.push_back(samples[i]);
    if (count >= 2) split.test.push_back(samples[end - 1]);
    begin = end;
  }
  return split;
}

// ------------------------------------------------------ serialization

inline nlohmann::json to_json(const SequenceSample& s) {
  return {{"user_id", s.user_id},
          {"history_items", s.history_items},
          {"history_scenarios", s.history_scenarios},
          {"target_item", s.target_item},
          {"target_scenario", s.target_scenario},
          {"reward", s.reward},
          {"next_history_items", s.next_history_items},
          {"next_history_scenarios", s.next_history_scenarios}};
}

inline SequenceSample sample_from_json(const nlohmann::json& j) {
  SequenceSample s;
  j.at("user_id").get_to(s.user_id);
  j.at("history_items").get_to(s.history_items);
  j.at("history_scenarios").get_to(s.history_scenarios);
  j.at("target_item").get_to(s.target_item);
  j.at("target_scenario").get_to(s.target_scenario);
  j.at("reward").get_to(s.reward);
  j.at("next_history_items").get_to(s.next_history_items);
  j.at("next_history_scenarios").get_to(s.next_history_scenarios);
  return s;
}

inline void write_samples_jsonl(std::ostream& out, const std::vector<SequenceSample>& samples) {
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

inline std::vector<SequenceSample> read_samples_jsonl(std::istream& in) {
  std::vector<SequenceSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad sample line: ") + e.what());
    }
  }
  return out;
}

}  // namespace ruie
