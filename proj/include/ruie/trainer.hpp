#pragma once

// Combined objective  q_loss + mean_b(gate_b * triplet_b)  and the training loop.
//
// Batches are split into fixed-size chunks whose gradients are computed
// independently and summed in chunk order, so results do not depend on the
// number of worker threads.

#include "ruie/eval.hpp"
#include "ruie/model.hpp"

#include <json.hpp>

#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <vector>

namespace ruie {

inline constexpr std::size_t kChunkSize = 32;

/// Detached quantities held fixed, e.g. while differentiating numerically.
struct FrozenTerms {
  std::vector<double> targets;
  std::vector<double> gates;
};

struct LossOptions {
  const FrozenTerms* frozen = nullptr;
  /// false: back-propagate only the gated triplet term.
  bool q_loss_gradient = true;
  int threads = 1;
};

struct LossReport {
  double total = 0.0;
  double q_loss = 0.0;
  double triplet_loss = 0.0;  // mean, ungated
  double gated_loss = 0.0;    // mean of gate * triplet
  std::vector<double> gate_probs;
  std::vector<double> gates;
  std::vector<double> targets;
};

namespace detail {

template <typename T>
struct ChunkResult {
  double q_sum = 0.0, triplet_sum = 0.0, gated_sum = 0.0;
  std::vector<double> gate_probs, gates, targets;
  std::optional<Model<T>> grads;
};

template <typename T>
ChunkResult<T> process_chunk(const Model<T>& model, std::span<const SequenceSample* const> chunk,
                             std::span<const Id> negatives, Coin coin, double batch_size,
                             const FrozenTerms* frozen, std::size_t offset, bool want_grads,
                             bool q_grad) {
  const auto& cfg = model.config;
  const Eigen::Index H = model.H();
  const Eigen::Index d = model.dim();
  const Id pad = model.catalog.padding_item_id();
  const auto k = static_cast<Eigen::Index>(cfg.k_negatives);
  const auto Bc = static_cast<Eigen::Index>(chunk.size());
  const bool suim = !cfg.ablations.no_suim;
  const bool attention = !cfg.ablations.no_mha;
  const auto& item_table = model.embedding.item_table;

  ChunkResult<T> res;
  const auto in = chunk_inputs<T>(chunk, H, pad, false);
  const Mat<T> e_item = gather_rows(item_table, std::span<const Id>(in.items));
  typename SequenceEncoder<T>::Cache enc_cache;
  const Mat<T> final = encode_chunk(model, in, e_item, want_grads ? &enc_cache : nullptr);

  typename IntentHead<T>::Cache head_cache;
  const Mat<T> anchors = model.intent.forward(final, &head_cache);
  std::vector<Id> targets(static_cast<std::size_t>(Bc));
  for (Eigen::Index b = 0; b < Bc; ++b) targets[static_cast<std::size_t>(b)] = chunk[static_cast<std::size_t>(b)]->target_item;
  const Mat<T> positives = gather_rows(item_table, std::span<const Id>(targets));
  const Mat<T> negative_rows = gather_rows(item_table, negatives);
  TripletCache<T> trip_cache;
  const ColArray<T> trip = triplet_forward(anchors, positives, negative_rows, k, T(cfg.margin), &trip_cache);

  std::vector<double> gates(static_cast<std::size_t>(Bc), 1.0);
  Mat<T> e_scen;
  Mat<T> dprobs;
  typename QEstimator<T>::Cache q_cache;
  const QEstimator<T>& chosen = coin == Coin::A ? model.twin.a : model.twin.b;
  const QEstimator<T>& other = coin == Coin::A ? model.twin.b : model.twin.a;
  if (suim) {
    e_scen = gather_rows(model.embedding.scenario_table, std::span<const Id>(in.scenarios));
    const Mat<T> p_chosen = chosen.forward(e_item, e_scen, final, in.mask, H, attention, &q_cache);
    const Mat<T> p_other = other.forward(e_item, e_scen, final, in.mask, H, attention, nullptr);
    std::vector<double> y(static_cast<std::size_t>(Bc));
    if (frozen) {
      for (Eigen::Index b = 0; b < Bc; ++b) y[static_cast<std::size_t>(b)] = frozen->targets[offset + static_cast<std::size_t>(b)];
    } else {
      const auto next = chunk_inputs<T>(chunk, H, pad, true);
      const Mat<T> n_item = gather_rows(item_table, std::span<const Id>(next.items));
      const Mat<T> n_scen = gather_rows(model.embedding.scenario_table, std::span<const Id>(next.scenarios));
      const Mat<T> n_final = encode_chunk(model, next, n_item, nullptr);
      const Mat<T> n_chosen = chosen.forward(n_item, n_scen, n_final, next.mask, H, attention, nullptr);
      const Mat<T> n_other = other.forward(n_item, n_scen, n_final, next.mask, H, attention, nullptr);
      for (Eigen::Index b = 0; b < Bc; ++b) {
        const double r_norm = chunk[static_cast<std::size_t>(b)]->reward / kMaxReward;
        y[static_cast<std::size_t>(b)] = bootstrap_target(r_norm, cfg.gamma, n_chosen.row(b), n_other.row(b)).value;
      }
    }
    dprobs = Mat<T>::Zero(Bc, p_chosen.cols());
    for (Eigen::Index b = 0; b < Bc; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      const Eigen::Index a = chunk[bi]->target_scenario;
      if (a < 0 || a >= p_chosen.cols()) throw DataError("target scenario outside the model's scenario range");
      const double q = static_cast<double>(p_chosen(b, a));
      const double diff = q - y[bi];
      res.q_sum += diff * diff;
      if (q_grad) dprobs(b, a) = static_cast<T>(2.0 * diff / batch_size);
      const double prob = 0.5 * (static_cast<double>(p_chosen(b, a)) + static_cast<double>(p_other(b, a)));
      res.gate_probs.push_back(prob);
      if (frozen)
        gates[bi] = frozen->gates[offset + bi];
      else
        gates[bi] = cfg.ablations.no_gate ? 1.0 : gate(prob, cfg.epsilon, cfg.gate_cap);
    }
    res.targets = std::move(y);
  }
  for (Eigen::Index b = 0; b < Bc; ++b) {
    const double t = static_cast<double>(trip(b));
    res.triplet_sum += t;
    res.gated_sum += gates[static_cast<std::size_t>(b)] * t;
  }
  res.gates = gates;
  if (!want_grads) return res;

  Model<T> g = model.zeros_like();
  ColArray<T> dtrip(Bc);
  for (Eigen::Index b = 0; b < Bc; ++b) dtrip(b) = static_cast<T>(gates[static_cast<std::size_t>(b)] / batch_size);
  const auto tg = triplet_backward(dtrip, trip_cache);
  scatter_add_rows(g.embedding.item_table, std::span<const Id>(targets), tg.positives);
  scatter_add_rows(g.embedding.item_table, negatives, tg.negatives);
  Mat<T> dfinal = model.intent.backward(tg.anchors, head_cache, g.intent);
  Mat<T> de_item = Mat<T>::Zero(Bc * H, d);
  if (suim && q_grad) {
    auto qg = chosen.backward(dprobs, in.mask, H, q_cache, coin == Coin::A ? g.twin.a : g.twin.b);
    dfinal += qg.seq_final;
    de_item += qg.item;
    scatter_add_rows(g.embedding.scenario_table, std::span<const Id>(in.scenarios), qg.scenario);
  }
  Mat<T> dper = Mat<T>::Zero(Bc * H, d);
  for (Eigen::Index b = 0; b < Bc; ++b) dper.row(final_row(in.mask, b, H)) += dfinal.row(b);
  de_item += model.encoder.backward(dper, in.mask, H, enc_cache, g.encoder);
  scatter_add_rows(g.embedding.item_table, std::span<const Id>(in.items), de_item);
  res.grads = std::move(g);
  return res;
}

}  // namespace detail

/// negatives holds k ids per sample, sample-major. When grads is non-null it
/// receives d(total)/d(params) (overwritten).
template <typename T>
LossReport combined_loss(const Model<T>& model, std::span<const SequenceSample* const> batch,
                         std::span<const Id> negatives, Coin coin, std::type_identity_t<Model<T>>* grads,
                         const LossOptions& opt = {}) {
  const auto& cfg = model.config;
  const auto k = static_cast<std::size_t>(cfg.k_negatives);
  if (batch.empty()) throw PreconditionError("combined_loss: empty batch");
  if (negatives.size() != batch.size() * k)
    throw ShapeError("combined_loss: expected " + std::to_string(batch.size() * k) + " negatives");
  const double B = static_cast<double>(batch.size());
  const std::size_t chunks = (batch.size() + kChunkSize - 1) / kChunkSize;
  std::vector<detail::ChunkResult<T>> parts(chunks);
  parallel_for(chunks, opt.threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunkSize;
    const std::size_t end = std::min(batch.size(), begin + kChunkSize);
    parts[c] = detail::process_chunk(model, batch.subspan(begin, end - begin),
                                     negatives.subspan(begin * k, (end - begin) * k), coin, B,
                                     opt.frozen, begin, grads != nullptr, opt.q_loss_gradient);
  });
  LossReport rep;
  double q_sum = 0.0, trip_sum = 0.0, gated_sum = 0.0;
  for (auto& p : parts) {
    q_sum += p.q_sum;
    trip_sum += p.triplet_sum;
    gated_sum += p.gated_sum;
    rep.gate_probs.insert(rep.gate_probs.end(), p.gate_probs.begin(), p.gate_probs.end());
    rep.gates.insert(rep.gates.end(), p.gates.begin(), p.gates.end());
    rep.targets.insert(rep.targets.end(), p.targets.begin(), p.targets.end());
  }
  if (grads) {
    *grads = std::move(*parts[0].grads);
    for (std::size_t c = 1; c < parts.size(); ++c) grads->add(*parts[c].grads);
  }
  rep.q_loss = cfg.ablations.no_suim ? 0.0 : q_sum / B;
  rep.triplet_loss = trip_sum / B;
  rep.gated_loss = gated_sum / B;
  rep.total = rep.q_loss + rep.gated_loss;
  return rep;
}

// ---------------------------------------------------------------- optimizer

/// Adam moments, one pair per parameter tensor in visit order.
template <typename T>
struct AdamState {
  std::vector<Mat<T>> m, v;
  std::int64_t step = 0;

  static AdamState init(const Model<T>& model) {
    AdamState s;
    for (const auto& [name, p] : model.params()) {
      s.m.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      s.v.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

template <typename T>
double global_norm(const Model<T>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads.params()) sq += g->template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

template <typename T>
void adam_update(Model<T>& model, const Model<T>& grads, AdamState<T>& st, const TrainConfig& cfg,
                 double grad_scale) {
  ++st.step;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(st.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(st.step)));
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.adam_eps);
  const T scale = static_cast<T>(grad_scale);
  auto params = model.params();
  auto gs = grads.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].second->array();
    const auto g = gs[i].second->array() * scale;
    auto m = st.m[i].array();
    auto v = st.v[i].array();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

// -------------------------------------------------------------- training

struct EpochLog {
  int epoch = 0;
  double q_loss = 0.0, triplet_loss = 0.0, gated_loss = 0.0, total = 0.0;
  double wall_seconds = 0.0;
  std::optional<double> val_ndcg10;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch},       {"q_loss", q_loss}, {"triplet_loss", triplet_loss},
                     {"gated_loss", gated_loss}, {"total", total},   {"wall_seconds", wall_seconds}};
    if (val_ndcg10) j["val_ndcg10"] = *val_ndcg10;
    return j;
  }
};

/// Everything a run needs to continue exactly where it stopped.
struct TrainState {
  Model<float> model;
  AdamState<float> adam;
  int epoch = 0;  // completed epochs
  std::mt19937_64 shuffle_rng, coin_rng, negative_rng;

  static TrainState init(const TrainConfig& cfg, const Catalog& catalog) {
    TrainState s;
    s.model = Model<float>::init(cfg, catalog);
    s.adam = AdamState<float>::init(s.model);
    s.shuffle_rng.seed(mix_seed(cfg.seed, 101));
    s.coin_rng.seed(mix_seed(cfg.seed, 102));
    s.negative_rng.seed(mix_seed(cfg.seed, 103));
    return s;
  }

  const TrainConfig& config() const { return model.config; }
};

struct TrainOptions {
  std::optional<int> stop_after_epoch;
  const std::vector<SequenceSample>* validation = nullptr;
  int threads = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

inline std::string dump_batch(std::span<const SequenceSample* const> batch, std::span<const Id> negatives,
                              Coin coin, std::size_t k) {
  std::ostringstream out;
  out << "{\"coin\":\"" << (coin == Coin::A ? "A" : "B") << "\"}\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto j = to_json(*batch[i]);
    j["negatives"] = std::vector<Id>(negatives.begin() + static_cast<std::ptrdiff_t>(i * k),
                                     negatives.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    out << j.dump() << '\n';
  }
  return out.str();
}

/// Runs epochs state.epoch+1 .. config.epochs (or stop_after_epoch).
inline std::vector<EpochLog> train(TrainState& state, const std::vector<SequenceSample>& data,
                                   const TrainOptions& opt = {}) {
  const TrainConfig& cfg = state.model.config;
  const int last_epoch = std::min(cfg.epochs, opt.stop_after_epoch.value_or(cfg.epochs));
  std::vector<EpochLog> logs;
  if (state.epoch >= last_epoch) return logs;
  if (data.empty()) throw PreconditionError("train: dataset is empty");
  const std::size_t k = static_cast<std::size_t>(cfg.k_negatives);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(data.size());
  std::vector<const SequenceSample*> batch;
  std::vector<Id> negatives;
  for (int epoch = state.epoch + 1; epoch <= last_epoch; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      batch.clear();
      negatives.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const auto* s = &data[order[i]];
        batch.push_back(s);
        const auto negs = sample_negatives(state.model.catalog, s->history_items, s->target_item, k,
                                           state.negative_rng);
        negatives.insert(negatives.end(), negs.begin(), negs.end());
      }
      const Coin coin = std::bernoulli_distribution(0.5)(state.coin_rng) ? Coin::A : Coin::B;
      Model<float> grads;
      LossOptions lo;
      lo.threads = opt.threads;
      const auto rep = combined_loss(state.model, std::span<const SequenceSample* const>(batch),
                                     std::span<const Id>(negatives), coin, &grads, lo);
      const double norm = global_norm(grads);
      if (!std::isfinite(rep.total) || !std::isfinite(norm)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(state.adam.step + 1),
                             dump_batch(batch, negatives, coin, k));
      }
      const double scale = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
      adam_update(state.model, grads, state.adam, cfg, scale);
      const double w = static_cast<double>(end - begin) / static_cast<double>(order.size());
      log.q_loss += w * rep.q_loss;
      log.triplet_loss += w * rep.triplet_loss;
      log.gated_loss += w * rep.gated_loss;
      log.total += w * rep.total;
    }
    state.epoch = epoch;
    if (opt.validation && !opt.validation->empty())
      log.val_ndcg10 = evaluate(state.model, *opt.validation, {10}, opt.threads).ndcg.at(10);
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (opt.on_epoch) opt.on_epoch(log);
    logs.push_back(log);
  }
  return logs;
}

}  // namespace ruie
