// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "helpers.hpp"
#include "ruie/ablation.hpp"
#include "ruie/checkpoint.hpp"
#include "ruie/gradcheck.hpp"
#include "ruie/manifest.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace ruie;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int shell(const std::string& cmd, std::string* output = nullptr) {
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return -1;
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  if (output) *output = out;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 1 ----------------------------------------------------------------------

Outcome tabular_oracle() {
  constexpr int S = 5, A = 3, N = 1000;
  const double lr = 0.1, gamma = 0.5;
  std::array<std::array<double, A>, S> oa{}, ob{};
  TabularQ qa(S, A), qb(S, A);
  std::mt19937_64 rng(20240501);
  std::uniform_int_distribution<int> state(0, S - 1), action(0, A - 1);
  std::uniform_real_distribution<double> reward(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < N; ++i) {
    const int s = state(rng), a = action(rng), s2 = state(rng);
    const double r = reward(rng);
    const bool upd_a = coin(rng);
    tabular_double_q_update(qa, qb, {s, a, r, s2}, lr, gamma, upd_a ? Coin::A : Coin::B);
    // Independent transcription: pick which table learns, choose the
    // next action greedily in it, evaluate that action in the other.
    auto& learn = upd_a ? oa[s] : ob[s];
    const auto& sel = upd_a ? oa[s2] : ob[s2];
    const auto& eval = upd_a ? ob[s2] : oa[s2];
    int best = 0;
    for (int k = 1; k < A; ++k)
      if (sel[k] > sel[best]) best = k;
    learn[a] = learn[a] + lr * (r + gamma * eval[best] - learn[a]);
  }
  int mismatches = 0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      mismatches += std::memcmp(&qa.q(s, a), &oa[s][a], sizeof(double)) != 0;
      mismatches += std::memcmp(&qb.q(s, a), &ob[s][a], sizeof(double)) != 0;
    }
  return {mismatches == 0, std::to_string(N) + " transitions, " + std::to_string(mismatches) + " bitwise mismatches"};
}

// 2 ----------------------------------------------------------------------

Outcome gradient_check_cli() {
  support::TempDir dir("accept_gc");
  std::string out;
  const int code = shell(std::string(RUIE_CLI) + " gradcheck --out " + dir.path().string(), &out);
  if (code != 0) return {false, "exit code " + std::to_string(code) + "\n" + out};
  const auto j = nlohmann::json::parse(read_file(dir / "gradcheck.json"));
  double worst = 0.0;
  std::string worst_group;
  for (const auto& g : j["groups"]) {
    const double e = g["max_rel_error"].get<double>();
    if (e >= worst) worst = e, worst_group = g["name"].get<std::string>();
  }
  const double via_gate = j["gate_stop"]["max_q_grad_via_gate"].get<double>();
  const double moved = j["gate_stop"]["gate_change"].get<double>();
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu groups, worst %.2e (%s), Q grad via gate %.1e, gate shift %.2e",
                j["groups"].size(), worst, worst_group.c_str(), via_gate, moved);
  return {worst < 1e-4 && via_gate == 0.0 && moved > 0.0 && j["pass"].get<bool>(), buf};
}

// 3 ----------------------------------------------------------------------

Outcome masking_suite() {
  int failures = 0;
  std::string notes;
  auto fail = [&](const std::string& what) {
    ++failures;
    notes += " [" + what + "]";
  };

  // Causality of both encoders.
  for (auto kind : {EncoderKind::nextitnet, EncoderKind::gru}) {
    EncoderOptions eo;
    eo.kind = kind;
    std::mt19937_64 rng(3);
    const auto enc = SequenceEncoder<double>::random(8, eo, rng);
    const Eigen::Index H = 20;
    const Mat<double> x = support::random_mat<double>(H, 8, 4);
    const ColArray<double> ones = ColArray<double>::Ones(H);
    const Mat<double> base = enc.forward(x, ones, H, nullptr);
    for (Eigen::Index t = 0; t < H; ++t) {
      Mat<double> y = x;
      y.row(t) += support::random_mat<double>(1, 8, 50 + static_cast<std::uint64_t>(t));
      const Mat<double> out = enc.forward(y, ones, H, nullptr);
      if (out.topRows(t) != base.topRows(t)) fail(std::string(to_string(kind)) + " causality t=" + std::to_string(t));
    }
  }

  // Attention weights on masked and future positions.
  std::mt19937_64 rng(5);
  const auto q = QEstimator<double>::random(8, 3, 4, 8, rng);
  std::mt19937_64 mask_rng(6);
  std::size_t weights_checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index H = 12;
    ColArray<double> mask(H);
    const int pad = std::uniform_int_distribution<int>(0, H - 1)(mask_rng);
    for (Eigen::Index t = 0; t < H; ++t) mask(t) = t < pad ? 0.0 : 1.0;
    const auto w = q.attention_weights(support::random_mat<double>(H, 8, 100 + trial),
                                       support::random_mat<double>(H, 8, 200 + trial), mask);
    for (const auto& head : w)
      for (Eigen::Index r = 0; r < H; ++r)
        for (Eigen::Index c = 0; c < H; ++c)
          if (c > r || mask(c) == 0.0) {
            ++weights_checked;
            if (head(r, c) != 0.0) fail("attention weight (" + std::to_string(r) + "," + std::to_string(c) + ")");
          }
  }

  // Padded-position invariance through the whole model.
  for (bool no_mha : {false, true}) {
    TrainConfig cfg = tiny_config();
    cfg.ablations.no_mha = no_mha;
    const auto sc = support::small_synth(7, 4, 6);
    auto samples = build_sequences(generate(sc), 5, support::catalog_of(sc));
    auto model = Model<double>::init(cfg, support::catalog_of(sc));
    const auto ptrs = support::pointers(samples);
    const Mat<double> intent = infer_intent(model, std::span<const SequenceSample* const>(ptrs));
    const Mat<double> qa = infer_q(model, model.twin.a, std::span<const SequenceSample* const>(ptrs), false);
    auto altered = samples;
    for (auto& s : altered)
      for (std::size_t t = 0; t < s.history_items.size(); ++t)
        if (s.history_items[t] == model.catalog.padding_item_id()) s.history_scenarios[t] = 2;
    model.embedding.item_table.row(model.catalog.padding_item_id()) = support::random_mat<double>(1, 8, 9, 5.0);
    const auto ptrs2 = support::pointers(altered);
    if (infer_intent(model, std::span<const SequenceSample* const>(ptrs2)) != intent) fail("intent padding invariance");
    if (infer_q(model, model.twin.a, std::span<const SequenceSample* const>(ptrs2), false) != qa)
      fail(std::string("q padding invariance") + (no_mha ? " (pooled)" : ""));
  }
  return {failures == 0, "40 causality probes, " + std::to_string(weights_checked) + " masked weights, " +
                             std::to_string(failures) + " violations" + notes};
}

// 4 ----------------------------------------------------------------------

Outcome ranking_oracle() {
  std::mt19937_64 rng(404);
  std::size_t checks = 0, mismatches = 0, ties = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(2, 100)(rng);
    const Eigen::Index d = std::uniform_int_distribution<Eigen::Index>(1, 3)(rng);
    Mat<double> table(n + 1, d);
    std::uniform_int_distribution<int> cell(-2, 2);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = cell(rng);
    RowVec<double> pred(d);
    for (Eigen::Index i = 0; i < d; ++i) pred(i) = cell(rng);
    std::vector<std::pair<double, Id>> order;
    for (Id i = 0; i < n; ++i) order.emplace_back((table.row(i) - pred).squaredNorm(), i);
    std::sort(order.begin(), order.end());
    for (std::size_t r = 1; r < order.size(); ++r) ties += order[r].first == order[r - 1].first;
    for (std::size_t r = 0; r < order.size(); ++r) {
      const std::size_t expect = r + 1;
      const std::size_t got = rank_target(pred, table, order[r].second);
      ++checks;
      mismatches += got != expect;
      for (std::size_t k : {5u, 10u, 15u, 20u}) {
        const double oracle = expect <= k ? 1.0 / (std::log(static_cast<double>(expect) + 1.0) / std::log(2.0)) : 0.0;
        mismatches += ndcg_at_k(got, k) != oracle && std::abs(ndcg_at_k(got, k) - oracle) > 1e-15;
      }
    }
  }
  return {mismatches == 0, "200 instances, " + std::to_string(checks) + " ranks, " + std::to_string(ties) +
                               " tied pairs, " + std::to_string(mismatches) + " mismatches"};
}

// 5 ----------------------------------------------------------------------

Outcome formula_fidelity() {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  check(std::abs(gate(0.5, 1e-6, 100.0) - 2.0) <= 1e-4, "gate(0.5)");
  auto v = [](std::initializer_list<double> x) {
    RowVec<double> r(static_cast<Eigen::Index>(x.size()));
    Eigen::Index i = 0;
    for (double e : x) r(i++) = e;
    return r;
  };
  const auto z = v({0, 0});
  check(triplet_loss<double>(z, z, {v({0, 2})}, 1.0) == 0.0, "triplet far negative");
  check(triplet_loss<double>(z, z, {z}, 1.0) == 1.0, "triplet coincident");
  check(triplet_loss<double>(z, v({3, 4}), {v({0, 1})}, 1.0) == 5.0, "triplet 3-4-5");
  check(reward_of(Behavior::click) == 1.0 && reward_of(Behavior::follow) == 3.0 &&
            reward_of(Behavior::like) == 3.0 && reward_of(Behavior::share) == 2.0,
        "rewards");
  const TrainConfig c = train_config_from_ini("");
  check(c.learning_rate == 0.01 && c.batch_size == 256 && c.epochs == 50 && c.gamma == 0.5 && c.heads == 4,
        "defaults");
  std::string d = "gate(0.5) = " + std::to_string(gate(0.5, 1e-6, 100.0)) + ", rewards {1,3,3,2}, lr 0.01, batch 256";
  for (const auto& b : bad) d += " [FAILED " + b + "]";
  return {bad.empty(), d};
}

// 6 ----------------------------------------------------------------------

Outcome ablation_ordering() {
  AblationOptions opt;
  opt.threads = thread_cap();
  opt.on_run = [](const AblationRun& r) {
    std::fprintf(stderr, "  %-24s seed %llu  N@10 %.4f  (%.0f s)\n", r.label.c_str(),
                 static_cast<unsigned long long>(r.seed), r.metrics.ndcg.at(10), r.wall_seconds);
  };
  const auto s = run_ablation_suite(ablation_synth_config(), ablation_train_config(), opt);
  std::fputs(metrics_table(s.mean_table()).c_str(), stderr);
  int outer = 0;
  for (auto seed : s.seeds) outer += s.ndcg("RUIE", seed) >= s.ndcg("RUIE w/o MHA&Gate", seed);
  const double full = s.mean_ndcg("RUIE"), none = s.mean_ndcg("RUIE w/o MHA&Gate&SUIM");
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "full >= w/o MHA&Gate in %d/5 seeds; mean N@10 full %.4f vs w/o MHA&Gate&SUIM %.4f (w/o MHA %.4f, "
                "w/o MHA&Gate %.4f); %d threads",
                outer, full, none, s.mean_ndcg("RUIE w/o MHA"), s.mean_ndcg("RUIE w/o MHA&Gate"), opt.threads);
  return {outer >= 4 && full > none, buf};
}

// 7 ----------------------------------------------------------------------

Outcome determinism_and_resume() {
  SynthConfig sc = support::small_synth(21, 80, 30);
  sc.num_items = 200;
  sc.num_topics = 10;
  TrainConfig cfg = tiny_config();
  cfg.d = 8;
  cfg.epochs = 6;
  cfg.batch_size = 64;
  const auto ds = prepare_dataset(generate(sc), DataConfig{}, cfg);

  auto run_full = [&] {
    TrainState st = TrainState::init(cfg, ds.catalog);
    auto logs = train(st, ds.train);
    return std::make_pair(logs, evaluate(st.model, ds.test).to_json().dump());
  };
  const auto [logs1, m1] = run_full();
  const auto [logs2, m2] = run_full();
  bool same_logs = logs1.size() == logs2.size();
  for (std::size_t e = 0; same_logs && e < logs1.size(); ++e)
    same_logs = logs1[e].q_loss == logs2[e].q_loss && logs1[e].triplet_loss == logs2[e].triplet_loss &&
                logs1[e].gated_loss == logs2[e].gated_loss && logs1[e].total == logs2[e].total;

  TrainState part = TrainState::init(cfg, ds.catalog);
  TrainOptions first;
  first.stop_after_epoch = 3;
  auto logs_r = train(part, ds.train, first);
  TrainState resumed = deserialize_checkpoint(serialize_checkpoint(part));
  auto rest = train(resumed, ds.train);
  logs_r.insert(logs_r.end(), rest.begin(), rest.end());
  const std::string m3 = evaluate(resumed.model, ds.test).to_json().dump();
  bool resume_logs = logs_r.size() == logs1.size();
  for (std::size_t e = 0; resume_logs && e < logs1.size(); ++e) resume_logs = logs_r[e].total == logs1[e].total;

  std::string d = std::string("logs ") + (same_logs ? "identical" : "DIFFER") + ", metrics " +
                  (m1 == m2 ? "identical" : "DIFFER") + ", resume at epoch 3 of 6: metrics " +
                  (m3 == m1 ? "bitwise equal" : "DIFFER") + ", losses " + (resume_logs ? "equal" : "DIFFER");
  return {same_logs && m1 == m2 && m3 == m1 && resume_logs, d};
}

// 8 ----------------------------------------------------------------------

Outcome end_to_end() {
  support::TempDir dir("accept_e2e");
  {
    std::ofstream cfg(dir / "smoke.ini");
    cfg << "[synth]\nnum_users = 500\nnum_items = 2000\nnum_scenarios = 2\nevents_per_user = 200\n"
           "shift_probability = 0.05\nseed = 8\n\n[model]\nd = 16\n\n[optim]\nepochs = 15\n\n[run]\nseed = 8\n";
  }
  const std::string cli = RUIE_CLI, cfg = (dir / "smoke.ini").string();
  std::string log;
  if (int c = shell(cli + " synth --config " + cfg + " --out " + (dir / "synth").string(), &log); c != 0)
    return {false, "synth exit " + std::to_string(c) + ": " + log};
  const std::string data = (dir / "synth" / "records.csv").string();
  if (int c = shell(cli + " train --config " + cfg + " --data " + data + " --out " + (dir / "model").string(), &log);
      c != 0)
    return {false, "train exit " + std::to_string(c) + ": " + log};
  if (int c = shell(cli + " eval --checkpoint " + (dir / "model" / "model.ckpt").string() + " --data " + data +
                        " --out " + (dir / "eval").string(),
                    &log);
      c != 0)
    return {false, "eval exit " + std::to_string(c) + ": " + log};

  bool finite = true;
  std::size_t epochs = 0;
  std::ifstream in(dir / "model" / "epochs.jsonl");
  for (std::string line; std::getline(in, line); ++epochs)
    for (const char* key : {"q_loss", "triplet_loss", "gated_loss", "total"})
      finite = finite && std::isfinite(nlohmann::json::parse(line)[key].get<double>());
  const double ndcg = nlohmann::json::parse(read_file(dir / "eval" / "metrics.json"))["ndcg"]["N@10"].get<double>();

  // Monte-Carlo baseline: uniform ranks over the catalog.
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> rank(1, 2000);
  double sum = 0.0;
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) sum += ndcg_at_k(rank(rng), 10);
  const double random = 100.0 * sum / draws;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu epochs, losses %s, N@10 %.4f vs random %.4f (ratio %.1f)", epochs,
                finite ? "finite" : "NON-FINITE", ndcg, random, ndcg / random);
  return {finite && epochs == 15 && ndcg > 2.0 * random, buf};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number, e.g. `acceptance 1 2 5`.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "tabular double-Q oracle", 1, tabular_oracle},
      {2, "gradient verification", 120, gradient_check_cli},
      {3, "masking and causality", 60, masking_suite},
      {4, "ranking oracle", 60, ranking_oracle},
      {5, "unit-formula fidelity", 1, formula_fidelity},
      {6, "ablation ordering", 1800, ablation_ordering},
      {7, "determinism and resume", 300, determinism_and_resume},
      {8, "end-to-end smoke", 900, end_to_end},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d %-26s %s  (%.1f s, budget %.0f s)  %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs,
                c.budget_seconds, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(ran) - failed, ran);
  return failed == 0 ? 0 : 1;
}
