#pragma once

// Log file -> records -> dense ids -> windows -> leave-one-out split.

#include "ruie/config.hpp"
#include "ruie/data_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

namespace ruie {

struct Dataset {
  IdMapping mapping;
  Catalog catalog;
  std::vector<SequenceSample> train, test, validation;
  std::size_t num_records = 0;
  std::size_t rejected_rows = 0;
};

inline ParseResult load_records(const std::filesystem::path& path, const DataConfig& dc) {
  ParseOptions po;
  po.delimiter = dc.delimiter;
  po.schema = dc.schema;
  po.max_bad_fraction = dc.max_bad_fraction;
  return parse_interactions(path, po);
}

/// Day-range filter and user sampling ahead of id densification.
inline std::vector<InteractionRecord> select_records(const std::vector<InteractionRecord>& records,
                                                     const DataConfig& dc, std::uint64_t seed) {
  auto kept = filter_time_range(records, dc.time_begin, dc.time_end);
  if (dc.sample_users > 0) kept = sample_users(kept, dc.sample_users, seed);
  return kept;
}

/// Moves a fraction of users out of train; each held-out user's last
/// training window becomes a validation sample.
inline void hold_out_validation(Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0) return;
  std::vector<Id> users;
  for (const auto& s : ds.train)
    if (users.empty() || users.back() != s.user_id) users.push_back(s.user_id);
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(users.size())));
  std::mt19937_64 rng(mix_seed(seed, 104));
  std::shuffle(users.begin(), users.end(), rng);
  const std::set<Id> held(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(std::min(n, users.size())));
  std::vector<SequenceSample> train;
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    const auto& s = ds.train[i];
    if (!held.count(s.user_id)) {
      train.push_back(s);
      continue;
    }
    const bool last = i + 1 == ds.train.size() || ds.train[i + 1].user_id != s.user_id;
    if (last) ds.validation.push_back(s);
  }
  ds.train = std::move(train);
}

/// Builds a dataset with a fresh id mapping.
inline Dataset prepare_dataset(const std::vector<InteractionRecord>& records, const DataConfig& dc,
                               const TrainConfig& tc) {
  Dataset ds;
  const auto kept = select_records(records, dc, tc.seed);
  ds.mapping = IdMapping::build(kept);
  ds.catalog = ds.mapping.catalog();
  ds.num_records = kept.size();
  const auto samples = build_sequences(ds.mapping.apply(kept), static_cast<std::size_t>(tc.H), ds.catalog);
  auto split = split_leave_one_out(samples);
  ds.train = std::move(split.train);
  ds.test = std::move(split.test);
  hold_out_validation(ds, tc.validation_fraction, tc.seed);
  return ds;
}

/// Builds a dataset under an existing mapping (evaluation of a trained model).
inline Dataset prepare_dataset(const std::vector<InteractionRecord>& records, const DataConfig& dc,
                               const TrainConfig& tc, const IdMapping& mapping) {
  Dataset ds;
  const auto kept = select_records(records, dc, tc.seed);
  ds.mapping = mapping;
  ds.catalog = mapping.catalog();
  ds.num_records = kept.size();
  const auto samples = build_sequences(mapping.apply(kept), static_cast<std::size_t>(tc.H), ds.catalog);
  auto split = split_leave_one_out(samples);
  ds.train = std::move(split.train);
  ds.test = std::move(split.test);
  return ds;
}

}  // namespace ruie
