#pragma once

// The four ablation rows, trained and evaluated on shared data per seed.

#include "ruie/eval.hpp"
#include "ruie/pipeline.hpp"
#include "ruie/synthetic.hpp"
#include "ruie/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace ruie {

struct AblationVariant {
  std::string label;
  Ablations flags;
};

inline const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v{
      {"RUIE w/o MHA&Gate&SUIM", {true, true, true}},
      {"RUIE w/o MHA&Gate", {true, true, false}},
      {"RUIE w/o MHA", {true, false, false}},
      {"RUIE", {false, false, false}},
  };
  return v;
}

struct AblationRun {
  std::string label;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  std::vector<EpochLog> logs;
  double wall_seconds = 0.0;
};

struct AblationSummary {
  std::vector<AblationRun> runs;  // variant-major, then seed
  std::vector<std::uint64_t> seeds;

  double ndcg(const std::string& label, std::uint64_t seed, int k = 10) const {
    for (const auto& r : runs)
      if (r.label == label && r.seed == seed) return r.metrics.ndcg.at(k);
    throw PreconditionError("ablation: no run for " + label);
  }

  double mean_ndcg(const std::string& label, int k = 10) const {
    double s = 0.0;
    for (auto seed : seeds) s += ndcg(label, seed, k);
    return s / static_cast<double>(seeds.size());
  }

  /// Seed-averaged report per variant.
  std::vector<std::pair<std::string, MetricsReport>> mean_table() const {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& v : ablation_variants()) {
      MetricsReport m;
      std::size_t n = 0;
      for (const auto& r : runs) {
        if (r.label != v.label) continue;
        for (const auto& [k, val] : r.metrics.ndcg) m.ndcg[k] += val;
        m.num_test_users = r.metrics.num_test_users;
        ++n;
      }
      if (n == 0) continue;
      for (auto& [k, val] : m.ndcg) val /= static_cast<double>(n);
      rows.emplace_back(v.label, m);
    }
    return rows;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (const auto& r : runs) {
      nlohmann::json jr{{"label", r.label}, {"seed", r.seed}, {"metrics", r.metrics.to_json()},
                        {"wall_seconds", r.wall_seconds}};
      for (const auto& l : r.logs) jr["epochs"].push_back(l.to_json());
      j["runs"].push_back(jr);
    }
    for (const auto& [label, m] : mean_table()) j["mean"][label] = m.to_json();
    return j;
  }
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Concurrent training runs; each run is single-threaded inside.
  int threads = 1;
  std::function<void(const AblationRun&)> on_run;
};

/// Per seed: synthetic log with that seed, one shared split, then every
/// variant trained from the same initial seed.
inline AblationSummary run_ablation_suite(const SynthConfig& synth, const TrainConfig& base,
                                          const AblationOptions& opt = {}) {
  const auto& variants = ablation_variants();
  std::vector<Dataset> data(opt.seeds.size());
  for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
    SynthConfig sc = synth;
    sc.seed = opt.seeds[s];
    TrainConfig tc = base;
    tc.seed = opt.seeds[s];
    data[s] = prepare_dataset(generate(sc), DataConfig{}, tc);
  }
  AblationSummary summary;
  summary.seeds = opt.seeds;
  summary.runs.resize(variants.size() * opt.seeds.size());
  std::mutex report_mu;
  parallel_for(summary.runs.size(), opt.threads, [&](std::size_t i) {
    const auto& v = variants[i / opt.seeds.size()];
    const std::size_t s = i % opt.seeds.size();
    const auto start = std::chrono::steady_clock::now();
    TrainConfig tc = base;
    tc.seed = opt.seeds[s];
    tc.ablations = v.flags;
    TrainState st = TrainState::init(tc, data[s].catalog);
    AblationRun run;
    run.label = v.label;
    run.seed = opt.seeds[s];
    run.logs = train(st, data[s].train);
    run.metrics = evaluate(st.model, data[s].test);
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    summary.runs[i] = run;
    if (opt.on_run) {
      std::lock_guard lock(report_mu);
      opt.on_run(run);
    }
  });
  return summary;
}

/// Settings of the qualitative ablation check: 500 users, 2,000 items,
/// 2 scenarios, shift 0.05, 200 events per user, d = 16, 15 epochs.
inline SynthConfig ablation_synth_config() { return SynthConfig{}; }

inline TrainConfig ablation_train_config() {
  TrainConfig c;
  c.d = 16;
  c.epochs = 15;
  return c;
}

}  // namespace ruie
