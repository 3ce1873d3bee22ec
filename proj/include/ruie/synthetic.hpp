#pragma once

// Multi-scenario interaction logs with correlated scenario/topic drift.
//
// Each user carries a latent (active scenario, active topic). Before every
// event the pair jumps with probability shift_probability; items come from
// the active topic's block, and 10% of events are logged under a different
// scenario than the active one (exposure noise).

#include "ruie/data_ingest.hpp"

#include <array>
#include <map>
#include <random>
#include <vector>

namespace ruie {

struct SynthConfig {
  std::size_t num_users = 500;
  std::size_t num_items = 2000;
  std::size_t num_scenarios = 2;
  std::size_t num_topics = 20;
  std::size_t events_per_user = 200;
  double shift_probability = 0.05;
  double scenario_affinity_concentration = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_items == 0 || num_scenarios == 0 || num_topics == 0)
      throw ConfigError("synth: num_items, num_scenarios and num_topics must be >= 1");
    if (num_items % num_topics != 0)
      throw ConfigError("synth: num_topics must divide num_items");
    if (!(shift_probability >= 0.0 && shift_probability <= 1.0))
      throw ConfigError("synth: shift_probability must lie in [0, 1]");
    if (!(scenario_affinity_concentration > 0.0))
      throw ConfigError("synth: scenario_affinity_concentration must be > 0");
  }
};

inline constexpr double kScenarioNoise = 0.10;
inline constexpr std::int64_t kSynthEpochStart = 1684713600;  // 2023-05-22T00:00:00Z

namespace detail {

/// Draws an index from `weights` excluding `skip` (pass weights.size() for none).
inline std::size_t draw_excluding(std::mt19937_64& rng, const std::vector<double>& weights,
                                  std::size_t skip) {
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (i != skip) total += weights[i];
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  std::size_t last = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (i == skip) continue;
    last = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last;
}

}  // namespace detail

/// Deterministic given config.seed; each user draws from its own stream.
inline std::vector<InteractionRecord> generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<InteractionRecord> out;
  out.reserve(cfg.num_users * cfg.events_per_user);
  const std::size_t block = cfg.num_items / cfg.num_topics;
  // click 70%, like 15%, share 10%, follow 5%
  static constexpr std::array<Behavior, 4> kBehaviors{Behavior::click, Behavior::like,
                                                      Behavior::share, Behavior::follow};
  const std::vector<double> behavior_weights{0.70, 0.15, 0.10, 0.05};
  const std::vector<double> uniform_topics(cfg.num_topics, 1.0);
  const std::vector<double> uniform_scenarios(cfg.num_scenarios, 1.0);

  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    std::mt19937_64 rng(mix_seed(cfg.seed, u));
    std::gamma_distribution<double> gamma(cfg.scenario_affinity_concentration, 1.0);
    std::vector<double> affinity(cfg.num_scenarios);
    for (auto& a : affinity) a = std::max(gamma(rng), 1e-12);

    std::size_t scenario = detail::draw_excluding(rng, affinity, cfg.num_scenarios);
    std::size_t topic = detail::draw_excluding(rng, uniform_topics, cfg.num_topics);
    std::int64_t ts = kSynthEpochStart + std::uniform_int_distribution<std::int64_t>(0, 3600)(rng);
    std::bernoulli_distribution shift(cfg.shift_probability);
    std::bernoulli_distribution noise(kScenarioNoise);
    std::uniform_int_distribution<std::size_t> item_in_block(0, block - 1);
    std::uniform_int_distribution<std::int64_t> gap(1, 600);

    for (std::size_t e = 0; e < cfg.events_per_user; ++e) {
      if (shift(rng)) {
        if (cfg.num_scenarios > 1) scenario = detail::draw_excluding(rng, affinity, scenario);
        if (cfg.num_topics > 1) topic = detail::draw_excluding(rng, uniform_topics, topic);
      }
      InteractionRecord r;
      r.user_id = static_cast<Id>(u);
      r.item_id = static_cast<Id>(topic * block + item_in_block(rng));
      r.scenario_id = static_cast<Id>(scenario);
      if (cfg.num_scenarios > 1 && noise(rng))
        r.scenario_id = static_cast<Id>(detail::draw_excluding(rng, uniform_scenarios, scenario));
      r.behavior = kBehaviors[detail::draw_excluding(rng, behavior_weights, kBehaviors.size())];
      ts += gap(rng);
      r.timestamp = ts;
      out.push_back(r);
    }
  }
  return out;
}

struct LogSummary {
  std::size_t num_records = 0;
  std::map<Id, std::size_t> per_scenario;
  std::map<Behavior, std::size_t> per_behavior;
  std::map<Id, std::size_t> per_user;
  std::map<Id, std::size_t> item_popularity;  // item id -> count
  /// popularity_histogram[c] = number of items seen exactly c times.
  std::map<std::size_t, std::size_t> popularity_histogram;
};

inline LogSummary describe(const std::vector<InteractionRecord>& records) {
  LogSummary s;
  s.num_records = records.size();
  for (const auto& r : records) {
    ++s.per_scenario[r.scenario_id];
    ++s.per_behavior[r.behavior];
    ++s.per_user[r.user_id];
    ++s.item_popularity[r.item_id];
  }
  for (const auto& [item, count] : s.item_popularity) ++s.popularity_histogram[count];
  return s;
}

}  // namespace ruie
