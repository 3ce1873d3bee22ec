// ruie: synth | ingest | train | eval | ablate | gradcheck
//
// Exit codes: 0 success, 1 verification failure or numerical abort,
// 2 usage or configuration error, 3 data error.

#include "ruie/ablation.hpp"
#include "ruie/checkpoint.hpp"
#include "ruie/config.hpp"
#include "ruie/gradcheck.hpp"
#include "ruie/manifest.hpp"
#include "ruie/pipeline.hpp"
#include "ruie/synthetic.hpp"
#include "ruie/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ruie;

namespace {

constexpr int kOk = 0, kVerifyFailed = 1, kUsage = 2, kData = 3;

struct VerificationFailure : Error {
  using Error::Error;
};

struct Options {
  std::string config, data, out, checkpoint, resume, corrupt_group, encoder, ks, seeds;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, stop_after, threads;
  std::optional<double> tolerance;
  bool no_mha = false, no_gate = false, no_suim = false, strict_relu = false;
  std::vector<std::string> argv;
};

boost::property_tree::ptree load_ini(const std::string& path) {
  if (path.empty()) return {};
  return read_ini_file(path);
}

/// Flags win over the config file.
TrainConfig resolve_train(const boost::property_tree::ptree& pt, const Options& o, TrainConfig base = {}) {
  TrainConfig c = train_config_from(pt, base);
  if (o.seed) c.seed = *o.seed;
  if (o.epochs) c.epochs = *o.epochs;
  if (!o.encoder.empty()) c.encoder = parse_encoder_kind(o.encoder);
  if (o.strict_relu) c.strict_relu = true;
  if (o.no_mha) c.ablations.no_mha = true;
  if (o.no_gate) c.ablations.no_gate = true;
  if (o.no_suim) c.ablations.no_suim = true;
  c.validate();
  return c;
}

/// Config file with the train sections replaced by the resolved values.
boost::property_tree::ptree merged(boost::property_tree::ptree pt, const TrainConfig& c) {
  for (const auto& [key, section] : to_ptree(c)) pt.put_child(key, section);
  return pt;
}

std::vector<int> parse_list(const std::string& s, const std::vector<int>& fallback) {
  if (s.empty()) return fallback;
  auto v = detail::split_ints(s);
  if (v.empty()) throw ConfigError("empty list '" + s + "'");
  for (int x : v)
    if (x < 1) throw ConfigError("list entries must be >= 1: '" + s + "'");
  return v;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec || !fs::is_directory(o.out)) throw DataError("cannot create output directory '" + o.out + "'");
  return o.out;
}

RunManifest start_manifest(const std::string& cmd, const Options& o) {
  RunManifest m;
  m.command = cmd;
  m.argv = o.argv;
  m.started = utc_now();
  return m;
}

void finish(RunManifest& m, const fs::path& dir) {
  m.finished = utc_now();
  m.write(dir / "manifest.json");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
}

int threads_of(const Options& o) { return o.threads ? std::max(1, *o.threads) : thread_cap(); }

Dataset load_dataset(const Options& o, const boost::property_tree::ptree& pt, const TrainConfig& tc,
                     const IdMapping* mapping = nullptr) {
  if (o.data.empty()) throw ConfigError("--data is required");
  const DataConfig dc = data_config_from(pt);
  const auto parsed = load_records(o.data, dc);
  if (parsed.records.empty()) throw DataError("no usable records in '" + o.data + "'");
  Dataset ds = mapping ? prepare_dataset(parsed.records, dc, tc, *mapping) : prepare_dataset(parsed.records, dc, tc);
  ds.rejected_rows = parsed.rejected;
  if (parsed.rejected > 0)
    std::cerr << "ruie: skipped " << parsed.rejected << " malformed rows (first: "
              << parsed.rejection_samples.front() << ")\n";
  return ds;
}

// ------------------------------------------------------------- commands

int cmd_synth(const Options& o) {
  auto m = start_manifest("synth", o);
  const auto pt = load_ini(o.config);
  SynthConfig sc = synth_config_from(pt);
  if (o.seed) sc.seed = *o.seed;
  const auto dir = out_dir(o);
  const auto records = generate(sc);
  {
    std::ofstream out(dir / "records.csv", std::ios::binary);
    if (!out) throw DataError("cannot write '" + (dir / "records.csv").string() + "'");
    write_records_csv(out, records);
  }
  m.config_ini = to_ini(to_ptree(sc));
  m.config_fingerprint = hex64(fnv1a(m.config_ini));
  m.seed = sc.seed;
  if (!o.config.empty()) m.add_input("config", o.config);
  m.add_output("records", dir / "records.csv");
  m.extra["num_records"] = records.size();
  finish(m, dir);
  std::cout << "wrote " << records.size() << " records to " << (dir / "records.csv").string() << '\n';
  return kOk;
}

int cmd_ingest(const Options& o) {
  auto m = start_manifest("ingest", o);
  const auto pt = load_ini(o.config);
  const TrainConfig tc = resolve_train(pt, o);
  const auto dir = out_dir(o);
  const Dataset ds = load_dataset(o, pt, tc);
  ds.mapping.save(dir);
  auto dump = [&](const std::string& name, const std::vector<SequenceSample>& samples) {
    std::ofstream out(dir / name);
    write_samples_jsonl(out, samples);
    out.close();
    m.add_output(name, dir / name);
  };
  dump("train.jsonl", ds.train);
  dump("test.jsonl", ds.test);
  if (!ds.validation.empty()) dump("validation.jsonl", ds.validation);
  m.add_output("item_ids", dir / "item_ids.tsv");
  m.add_output("scenario_ids", dir / "scenario_ids.tsv");
  m.add_input("data", o.data);
  m.config_ini = to_ini(merged(pt, tc));
  m.config_fingerprint = fingerprint(tc);
  m.seed = tc.seed;
  m.extra = {{"num_records", ds.num_records},
             {"rejected_rows", ds.rejected_rows},
             {"num_items", ds.catalog.num_items},
             {"num_scenarios", ds.catalog.num_scenarios},
             {"train_samples", ds.train.size()},
             {"test_samples", ds.test.size()},
             {"validation_samples", ds.validation.size()}};
  finish(m, dir);
  std::cout << "items " << ds.catalog.num_items << ", scenarios " << ds.catalog.num_scenarios << ", train "
            << ds.train.size() << ", test " << ds.test.size() << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  auto m = start_manifest("train", o);
  const auto pt = load_ini(o.config);
  std::optional<TrainState> state;
  TrainConfig tc;
  if (!o.resume.empty()) {
    state = load_checkpoint(o.resume);
    tc = state->model.config;
    if (o.epochs) tc.epochs = *o.epochs;
    state->model.config = tc;
    m.add_input("resume", o.resume);
  } else {
    tc = resolve_train(pt, o);
  }
  const auto dir = out_dir(o);
  const Dataset ds = load_dataset(o, pt, tc);
  if (!state) state = TrainState::init(tc, ds.catalog);
  if (state->model.catalog.num_items != ds.catalog.num_items ||
      state->model.catalog.num_scenarios != ds.catalog.num_scenarios)
    throw ShapeError("checkpoint catalog does not match the data");
  ds.mapping.save(dir);
  write_text(dir / "config.ini", to_ini(merged(pt, tc)));

  std::ofstream epochs(dir / "epochs.jsonl", o.resume.empty() ? std::ios::trunc : std::ios::app);
  TrainOptions topt;
  topt.threads = threads_of(o);
  topt.stop_after_epoch = o.stop_after;
  if (!ds.validation.empty()) topt.validation = &ds.validation;
  topt.on_epoch = [&](const EpochLog& l) {
    epochs << l.to_json().dump() << '\n';
    epochs.flush();
    std::cerr << "epoch " << l.epoch << "/" << tc.epochs << "  total " << l.total << "  q " << l.q_loss
              << "  triplet " << l.triplet_loss << '\n';
  };
  try {
    train(*state, ds.train, topt);
  } catch (const NumericalError& e) {
    write_text(dir / "nan_batch.jsonl", e.batch_dump);
    throw;
  }
  epochs.close();
  save_checkpoint(*state, dir / "model.ckpt");

  m.config_ini = to_ini(merged(pt, tc));
  m.config_fingerprint = fingerprint(tc);
  m.seed = tc.seed;
  m.add_input("data", o.data);
  if (!o.config.empty()) m.add_input("config", o.config);
  for (const char* f : {"model.ckpt", "epochs.jsonl", "config.ini", "item_ids.tsv", "scenario_ids.tsv"})
    m.add_output(f, dir / f);
  m.extra = {{"ablations",
              {{"no_mha", tc.ablations.no_mha}, {"no_gate", tc.ablations.no_gate}, {"no_suim", tc.ablations.no_suim}}},
             {"epochs_completed", state->epoch},
             {"train_samples", ds.train.size()}};
  finish(m, dir);
  return kOk;
}

int cmd_eval(const Options& o) {
  auto m = start_manifest("eval", o);
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const TrainState st = load_checkpoint(o.checkpoint);
  const TrainConfig& tc = st.model.config;
  const fs::path ckpt_dir = fs::path(o.checkpoint).parent_path();
  boost::property_tree::ptree pt;
  if (!o.config.empty()) {
    pt = read_ini_file(o.config);
    const TrainConfig given = train_config_from(pt);
    if (given.d != tc.d || given.H != tc.H)
      throw ShapeError("config (d = " + std::to_string(given.d) + ", H = " + std::to_string(given.H) +
                       ") does not match checkpoint (d = " + std::to_string(tc.d) + ", H = " +
                       std::to_string(tc.H) + ")");
  } else if (fs::exists(ckpt_dir / "config.ini")) {
    pt = read_ini_file(ckpt_dir / "config.ini");
  }
  const IdMapping mapping = IdMapping::load(ckpt_dir);
  {
    // Scenario ids beyond the trained range are a dimension mismatch.
    const auto parsed = load_records(o.data, data_config_from(pt));
    std::set<Id> known(mapping.raw_scenarios().begin(), mapping.raw_scenarios().end()), unseen;
    for (const auto& r : parsed.records)
      if (!known.count(r.scenario_id)) unseen.insert(r.scenario_id);
    if (!unseen.empty())
      throw ShapeError("data has " + std::to_string(known.size() + unseen.size()) +
                       " scenarios but the checkpoint was trained with " + std::to_string(known.size()));
  }
  const Dataset ds = load_dataset(o, pt, tc, &mapping);
  if (ds.test.empty()) throw DataError("no test samples (every user needs >= 2 interactions)");
  const auto ks = parse_list(o.ks, default_cutoffs());
  const auto rep = evaluate(st.model, ds.test, ks, threads_of(o));
  const auto dir = out_dir(o);
  write_text(dir / "metrics.json", rep.to_json().dump(2) + "\n");
  const auto table = metrics_table({{"RUIE", rep}});
  write_text(dir / "metrics.txt", table);
  std::cout << table;
  m.config_ini = to_ini(to_ptree(tc));
  m.config_fingerprint = fingerprint(tc);
  m.seed = tc.seed;
  m.add_input("checkpoint", o.checkpoint);
  m.add_input("data", o.data);
  m.add_output("metrics.json", dir / "metrics.json");
  m.add_output("metrics.txt", dir / "metrics.txt");
  finish(m, dir);
  return kOk;
}

int cmd_ablate(const Options& o) {
  auto m = start_manifest("ablate", o);
  const auto pt = load_ini(o.config);
  const SynthConfig sc = synth_config_from(pt, ablation_synth_config());
  const TrainConfig tc = resolve_train(pt, o, ablation_train_config());
  AblationOptions ao;
  ao.seeds.clear();
  for (int s : parse_list(o.seeds, {1, 2, 3, 4, 5})) ao.seeds.push_back(static_cast<std::uint64_t>(s));
  ao.threads = threads_of(o);
  ao.on_run = [](const AblationRun& r) {
    std::cerr << r.label << " seed " << r.seed << ": N@10 = " << r.metrics.ndcg.at(10) << " (" << r.wall_seconds
              << " s)\n";
  };
  const auto dir = out_dir(o);
  const auto summary = run_ablation_suite(sc, tc, ao);
  write_text(dir / "ablation.json", summary.to_json().dump(2) + "\n");
  const auto table = metrics_table(summary.mean_table());
  write_text(dir / "ablation.txt", table);
  std::cout << table;
  m.config_ini = to_ini(merged(to_ptree(sc), tc));
  m.config_fingerprint = fingerprint(tc);
  m.seed = tc.seed;
  m.add_output("ablation.json", dir / "ablation.json");
  m.add_output("ablation.txt", dir / "ablation.txt");
  finish(m, dir);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const auto pt = load_ini(o.config);
  const TrainConfig tc = resolve_train(pt, o, tiny_config());
  GradCheckOptions go;
  if (o.tolerance) go.tolerance = *o.tolerance;
  if (!o.corrupt_group.empty()) go.corrupt_group = o.corrupt_group;
  const auto fx = make_gradcheck_fixture(tc);
  if (go.corrupt_group) {
    bool found = false;
    for (const auto& [name, p] : fx.model.params()) found = found || name == *go.corrupt_group;
    if (!found) throw ConfigError("unknown parameter group '" + *go.corrupt_group + "'");
  }
  const auto rep = grad_check(fx.model, fx.batch, fx.negatives, go);
  std::cout << rep.text();
  if (!o.out.empty()) {
    auto m = start_manifest("gradcheck", o);
    const auto dir = out_dir(o);
    write_text(dir / "gradcheck.json", rep.to_json().dump(2) + "\n");
    m.config_ini = to_ini(to_ptree(tc));
    m.config_fingerprint = fingerprint(tc);
    m.seed = tc.seed;
    m.add_output("gradcheck.json", dir / "gradcheck.json");
    finish(m, dir);
  }
  if (!rep.pass) {
    std::string failed;
    for (const auto& g : rep.groups)
      if (!g.pass) failed += (failed.empty() ? "" : ", ") + g.name;
    if (!rep.gate_stop.pass) failed += (failed.empty() ? "" : ", ") + std::string("gate stop-gradient");
    throw VerificationFailure("gradient check failed: " + failed);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  o.argv.assign(argv, argv + argc);
  CLI::App app{"Multi-scenario sequential recommender: data, training and evaluation"};
  app.require_subcommand(1);

  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "INI configuration file");
    s->add_option("--out", o.out, "Output directory");
    s->add_option("--seed", o.seed, "Random seed (overrides config)");
  };
  auto model_flags = [&](CLI::App* s) {
    s->add_option("--epochs", o.epochs, "Training epochs (overrides config)");
    s->add_flag("--no-mha", o.no_mha, "Replace attention with mean pooling");
    s->add_flag("--no-gate", o.no_gate, "Fix the gate at 1");
    s->add_flag("--no-suim", o.no_suim, "Drop the Q-learning module");
    s->add_option("--encoder", o.encoder, "Sequence encoder")->check(CLI::IsMember({"nextitnet", "gru"}));
    s->add_flag("--strict-relu", o.strict_relu, "ReLU after the last intent layer");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction log");
  common(synth);
  auto* ingest = app.add_subcommand("ingest", "Parse a log into train/test windows");
  common(ingest);
  ingest->add_option("--data", o.data, "Interaction log")->required();
  auto* trn = app.add_subcommand("train", "Train a model");
  common(trn);
  model_flags(trn);
  trn->add_option("--data", o.data, "Interaction log")->required();
  trn->add_option("--resume", o.resume, "Continue from a checkpoint");
  trn->add_option("--stop-after", o.stop_after, "Stop after this epoch");
  trn->add_option("--threads", o.threads, "Worker threads (default RUIE_THREADS)");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint by full ranking");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Interaction log")->required();
  ev->add_option("--config", o.config, "Configuration to check against the checkpoint");
  ev->add_option("--out", o.out, "Output directory")->required();
  ev->add_option("--k", o.ks, "NDCG cutoffs, e.g. 5,10,15,20");
  ev->add_option("--threads", o.threads, "Worker threads");
  auto* abl = app.add_subcommand("ablate", "Train and compare the four ablation variants");
  common(abl);
  abl->add_option("--epochs", o.epochs, "Training epochs");
  abl->add_option("--seeds", o.seeds, "Comma-separated seeds (default 1,2,3,4,5)");
  abl->add_option("--threads", o.threads, "Concurrent runs");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the combined loss");
  common(gc);
  model_flags(gc);
  gc->add_option("--tolerance", o.tolerance, "Maximum relative error");
  gc->add_option("--corrupt-group", o.corrupt_group, "Scale one group's analytic gradient (self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*ingest) return cmd_ingest(o);
    if (*trn) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*abl) return cmd_ablate(o);
    if (*gc) return cmd_gradcheck(o);
  } catch (const VerificationFailure& e) {
    std::cerr << "ruie: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const NumericalError& e) {
    std::cerr << "ruie: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const ConfigError& e) {
    std::cerr << "ruie: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "ruie: dimension mismatch: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "ruie: " << e.what() << '\n';
    return kData;
  } catch (const Error& e) {
    std::cerr << "ruie: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "ruie: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
