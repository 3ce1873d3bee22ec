#pragma once

// Full-ranking evaluation: every real item is scored by Euclidean distance
// to the predicted intent embedding; NDCG@K is reported on a x100 scale.

#include "ruie/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace ruie {

/// 1-based rank of `target` among real items (rows 0..rows-2; the last row
/// is the padding token). Ties go to the smaller item id.
template <typename T>
std::size_t rank_target(const RowVec<T>& prediction, const Mat<T>& item_table, Id target) {
  const Id real_items = static_cast<Id>(item_table.rows()) - 1;
  if (target < 0 || target >= real_items)
    throw IndexError("rank_target: target " + std::to_string(target) + " is not a real item");
  if (prediction.size() != item_table.cols()) throw ShapeError("rank_target: dimension mismatch");
  const T target_dist = (item_table.row(target) - prediction).squaredNorm();
  std::size_t rank = 1;
  for (Id i = 0; i < real_items; ++i) {
    if (i == target) continue;
    const T dist = (item_table.row(i) - prediction).squaredNorm();
    if (dist < target_dist || (dist == target_dist && i < target)) ++rank;
  }
  return rank;
}

/// Single relevant item: 1/log2(rank+1) inside the cutoff, else 0.
inline double ndcg_at_k(std::size_t rank, std::size_t K) {
  if (rank < 1 || K < 1) throw PreconditionError("ndcg_at_k: rank and K must be >= 1");
  return rank <= K ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline const std::vector<int>& default_cutoffs() {
  static const std::vector<int> ks{5, 10, 15, 20};
  return ks;
}

struct MetricsReport {
  std::map<int, double> ndcg;  // percent scale
  std::size_t num_test_users = 0;
  std::string config_fingerprint;

  nlohmann::json to_json() const {
    nlohmann::json j;
    nlohmann::json n = nlohmann::json::object();
    for (const auto& [k, v] : ndcg) n["N@" + std::to_string(k)] = v;
    j["ndcg"] = n;
    j["num_test_users"] = num_test_users;
    j["config_fingerprint"] = config_fingerprint;
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    for (const auto& [key, val] : j.at("ndcg").items()) r.ndcg[std::stoi(key.substr(2))] = val.get<double>();
    r.num_test_users = j.at("num_test_users").get<std::size_t>();
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    return r;
  }
};

/// Aligned text table, one row per (label, report).
inline std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-28s", "Method");
  out += buf;
  std::vector<int> ks;
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().second.ndcg) ks.push_back(k);
  for (int k : ks) {
    std::snprintf(buf, sizeof buf, " %9s", ("N@" + std::to_string(k)).c_str());
    out += buf;
  }
  out += '\n';
  for (const auto& [label, report] : rows) {
    std::snprintf(buf, sizeof buf, "%-28s", label.c_str());
    out += buf;
    for (int k : ks) {
      std::snprintf(buf, sizeof buf, " %9.4f", report.ndcg.at(k));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

/// Ranks of each sample's target under the model (evaluation order).
template <typename T>
std::vector<std::size_t> rank_samples(const Model<T>& model, const std::vector<SequenceSample>& samples,
                                      int threads = 1) {
  constexpr std::size_t kChunk = 128;
  std::vector<const SequenceSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  std::vector<std::size_t> ranks(samples.size());
  const std::size_t chunks = (samples.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    const std::span<const SequenceSample* const> chunk(ptrs.data() + begin, end - begin);
    const Mat<T> pred = infer_intent(model, chunk);
    for (std::size_t i = begin; i < end; ++i)
      ranks[i] = rank_target<T>(pred.row(static_cast<Eigen::Index>(i - begin)),
                                model.embedding.item_table, samples[i].target_item);
  });
  return ranks;
}

template <typename T>
MetricsReport evaluate(const Model<T>& model, const std::vector<SequenceSample>& test,
                       const std::vector<int>& ks = default_cutoffs(), int threads = 1) {
  if (test.empty()) throw PreconditionError("evaluate: test set is empty");
  const auto ranks = rank_samples(model, test, threads);
  MetricsReport report;
  report.num_test_users = test.size();
  report.config_fingerprint = fingerprint(model.config);
  for (int k : ks) {
    double sum = 0.0;
    for (std::size_t r : ranks) sum += ndcg_at_k(r, static_cast<std::size_t>(k));
    report.ndcg[k] = 100.0 * sum / static_cast<double>(ranks.size());
  }
  return report;
}

}  // namespace ruie
