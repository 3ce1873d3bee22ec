#pragma once

// Central finite-difference verification of the combined loss gradient.
//
// Stop-gradient quantities (bootstrap targets, gates) are frozen at their
// base values while perturbing, so the numerical derivative is taken of the
// same surrogate the analytic pass differentiates.

#include "ruie/synthetic.hpp"
#include "ruie/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ruie {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Elementwise error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-4;
  /// Fault injection: scale this group's analytic gradient before comparing.
  std::optional<std::string> corrupt_group;
  double corrupt_factor = 1.10;
  std::vector<Coin> coins{Coin::A, Coin::B};
};

struct GroupCheck {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;
  bool pass = true;
};

/// The gate must depend on the Q estimators while passing them no gradient.
struct GateStopCheck {
  double max_q_grad_via_gate = 0.0;  // must be exactly 0
  double gate_change = 0.0;          // gate movement under a Q-parameter perturbation
  bool gate_active = true;
  bool pass = true;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<GroupCheck> groups;
  GateStopCheck gate_stop;
  bool pass = true;

  std::string text() const {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-36s %6s %12s %12s  %s\n", "group", "size", "max_rel_err",
                  "max_abs_err", "status");
    out += buf;
    for (const auto& g : groups) {
      std::snprintf(buf, sizeof buf, "%-36s %6zu %12.3e %12.3e  %s\n", g.name.c_str(), g.size,
                    g.max_rel_error, g.max_abs_error, g.pass ? "ok" : "FAIL");
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "gate stop-gradient: q grad via gate = %.3e, gate change = %.3e  %s\n",
                  gate_stop.max_q_grad_via_gate, gate_stop.gate_change, gate_stop.pass ? "ok" : "FAIL");
    out += buf;
    std::snprintf(buf, sizeof buf, "tolerance %.1e: %s\n", tolerance, pass ? "PASS" : "FAIL");
    out += buf;
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tolerance"] = tolerance;
    j["pass"] = pass;
    for (const auto& g : groups)
      j["groups"].push_back({{"name", g.name},
                             {"size", g.size},
                             {"max_rel_error", g.max_rel_error},
                             {"max_abs_error", g.max_abs_error},
                             {"pass", g.pass}});
    j["gate_stop"] = {{"max_q_grad_via_gate", gate_stop.max_q_grad_via_gate},
                      {"gate_change", gate_stop.gate_change},
                      {"pass", gate_stop.pass}};
    return j;
  }
};

inline bool is_q_param(const std::string& name) { return name.rfind("q_", 0) == 0; }

inline GradCheckReport grad_check(const Model<double>& base, std::span<const SequenceSample* const> batch,
                                  std::span<const Id> negatives, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Model<double> model = base;
  auto params = model.params();
  std::vector<GroupCheck> groups(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    groups[i].name = params[i].first;
    groups[i].size = static_cast<std::size_t>(params[i].second->size());
  }

  for (Coin coin : opt.coins) {
    Model<double> analytic;
    const auto rep = combined_loss(model, batch, negatives, coin, &analytic);
    FrozenTerms frozen{rep.targets, rep.gates};
    LossOptions lo;
    lo.frozen = &frozen;
    auto agrads = analytic.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat<double>& p = *params[i].second;
      Mat<double> a = *agrads[i].second;
      if (opt.corrupt_group && *opt.corrupt_group == params[i].first) a *= opt.corrupt_factor;
      for (Eigen::Index e = 0; e < p.size(); ++e) {
        const double saved = p.data()[e];
        p.data()[e] = saved + opt.step;
        const double plus = combined_loss(model, batch, negatives, coin, nullptr, lo).total;
        p.data()[e] = saved - opt.step;
        const double minus = combined_loss(model, batch, negatives, coin, nullptr, lo).total;
        p.data()[e] = saved;
        const double numeric = (plus - minus) / (2.0 * opt.step);
        const double ana = a.data()[e];
        const double abs_err = std::abs(ana - numeric);
        const double denom = std::max({std::abs(ana), std::abs(numeric), opt.denominator_floor});
        auto& g = groups[i];
        g.max_abs_error = std::max(g.max_abs_error, abs_err);
        g.max_rel_error = std::max(g.max_rel_error, abs_err / denom);
        g.max_abs_grad = std::max(g.max_abs_grad, std::abs(ana));
      }
    }
  }
  for (auto& g : groups) {
    g.pass = g.max_rel_error < opt.tolerance;
    report.pass = report.pass && g.pass;
  }
  report.groups = std::move(groups);

  // Gate stop-gradient: gradient of the gated term alone must vanish on Q
  // parameters, while perturbing those parameters does move the gate.
  const auto& cfg = model.config;
  if (!cfg.ablations.no_suim) {
    Model<double> gated_only;
    LossOptions lo;
    lo.q_loss_gradient = false;
    const auto rep = combined_loss(model, batch, negatives, Coin::A, &gated_only, lo);
    for (auto& [name, g] : gated_only.params())
      if (is_q_param(name))
        report.gate_stop.max_q_grad_via_gate =
            std::max(report.gate_stop.max_q_grad_via_gate, g->cwiseAbs().maxCoeff());
    Model<double> shifted = model;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (auto& [name, p] : shifted.params())
      if (is_q_param(name))
        for (Eigen::Index e = 0; e < p->size(); ++e) p->data()[e] += noise(rng);
    const auto moved = combined_loss(shifted, batch, negatives, Coin::A, nullptr);
    for (std::size_t b = 0; b < rep.gates.size(); ++b)
      report.gate_stop.gate_change = std::max(report.gate_stop.gate_change, std::abs(moved.gates[b] - rep.gates[b]));
    report.gate_stop.gate_active = !cfg.ablations.no_gate;
    report.gate_stop.pass = report.gate_stop.max_q_grad_via_gate == 0.0 &&
                            (!report.gate_stop.gate_active || report.gate_stop.gate_change > 0.0);
    report.pass = report.pass && report.gate_stop.pass;
  }
  return report;
}

/// Tiny verification setting: d = 8, H = 5, 3 scenarios, 20 items.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.d = 8;
  c.H = 5;
  c.heads = 4;
  c.batch_size = 8;
  c.epochs = 1;
  c.seed = 11;
  return c;
}

struct GradCheckFixture {
  Model<double> model;
  std::vector<SequenceSample> samples;
  std::vector<const SequenceSample*> batch;
  std::vector<Id> negatives;
};

/// A small batch from a synthetic log, covering fully padded, partially
/// padded and full histories.
inline GradCheckFixture make_gradcheck_fixture(const TrainConfig& cfg) {
  SynthConfig sc;
  sc.num_users = 3;
  sc.num_items = 20;
  sc.num_scenarios = 3;
  sc.num_topics = 4;
  sc.events_per_user = 10;
  sc.shift_probability = 0.3;
  sc.seed = cfg.seed + 1;
  const auto records = generate(sc);
  const Catalog catalog{static_cast<Id>(sc.num_items), static_cast<Id>(sc.num_scenarios)};
  GradCheckFixture fx;
  fx.samples = build_sequences(records, static_cast<std::size_t>(cfg.H), catalog);
  fx.model = Model<double>::init(cfg, catalog);
  // Zero-initialised biases put every fully padded row exactly on a ReLU
  // kink; move them off it so central differences are well defined.
  std::mt19937_64 jitter(mix_seed(cfg.seed, 78));
  std::uniform_real_distribution<double> offset(0.05, 0.25);
  std::bernoulli_distribution sign(0.5);
  for (auto& [name, p] : fx.model.params())
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0)
      for (Eigen::Index e = 0; e < p->size(); ++e) p->data()[e] = sign(jitter) ? offset(jitter) : -offset(jitter);
  const std::size_t per_user = sc.events_per_user;
  for (std::size_t u = 0; u < sc.num_users; ++u)
    for (std::size_t pos : {std::size_t{0}, std::size_t{2}, std::size_t{7}})
      fx.batch.push_back(&fx.samples[u * per_user + pos]);
  std::mt19937_64 rng(mix_seed(cfg.seed, 77));
  for (const auto* s : fx.batch) {
    const auto n = sample_negatives(catalog, s->history_items, s->target_item,
                                    static_cast<std::size_t>(cfg.k_negatives), rng);
    fx.negatives.insert(fx.negatives.end(), n.begin(), n.end());
  }
  return fx;
}

}  // namespace ruie
