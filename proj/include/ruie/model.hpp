#pragma once

// All trainable state: embedding tables, one shared sequence encoder, the
// twin Q estimators and the intent head.

#include "ruie/config.hpp"
#include "ruie/embedding.hpp"
#include "ruie/intent_head.hpp"
#include "ruie/q_module.hpp"
#include "ruie/seq_encoder.hpp"

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ruie {

template <typename T>
struct Model {
  TrainConfig config;
  Catalog catalog;
  EmbeddingTables<T> embedding;
  SequenceEncoder<T> encoder;
  TwinQ<T> twin;
  IntentHead<T> intent;

  Eigen::Index H() const { return config.H; }
  Eigen::Index dim() const { return config.d; }

  /// Sub-seeds keep components (and the two Q estimators) independent.
  static Model init(const TrainConfig& cfg, const Catalog& catalog) {
    cfg.validate();
    Model m;
    m.config = cfg;
    m.catalog = catalog;
    const std::uint64_t s = cfg.seed;
    m.embedding = init_tables<T>(catalog.num_items, catalog.num_scenarios, cfg.d, mix_seed(s, 1));
    std::mt19937_64 enc_rng(mix_seed(s, 2));
    m.encoder = SequenceEncoder<T>::random(cfg.d, cfg.encoder_options(), enc_rng);
    std::mt19937_64 qa_rng(mix_seed(s, 3)), qb_rng(mix_seed(s, 4));
    m.twin.a = QEstimator<T>::random(cfg.d, catalog.num_scenarios, cfg.heads, cfg.hidden(), qa_rng);
    m.twin.b = QEstimator<T>::random(cfg.d, catalog.num_scenarios, cfg.heads, cfg.hidden(), qb_rng);
    std::mt19937_64 head_rng(mix_seed(s, 5));
    m.intent = IntentHead<T>::random(cfg.d, cfg.strict_relu, head_rng);
    return m;
  }

  template <typename F>
  void visit(F&& f) {
    embedding.visit("embedding", f);
    encoder.visit("encoder", f);
    twin.visit("q", f);
    intent.visit("intent", f);
  }

  std::vector<std::pair<std::string, Mat<T>*>> params() {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    visit([&](const std::string& name, Mat<T>& m) { out.emplace_back(name, &m); });
    return out;
  }

  std::vector<std::pair<std::string, const Mat<T>*>> params() const {
    std::vector<std::pair<std::string, const Mat<T>*>> out;
    for (auto& [name, m] : const_cast<Model&>(*this).params()) out.emplace_back(name, m);
    return out;
  }

  Model zeros_like() const {
    Model z = *this;
    z.visit([](const std::string&, Mat<T>& m) { m.setZero(); });
    return z;
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out = Model<U>::init(config, catalog);
    auto dst = out.params();
    auto src = params();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return out;
  }

  /// Adds other's tensors into this one (same structure).
  void add(const Model& other) {
    auto dst = params();
    auto src = other.params();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second += *src[i].second;
  }
};

/// Ids and masks of a chunk of samples in the (B*H) row layout.
template <typename T>
struct ChunkInputs {
  std::vector<Id> items, scenarios;
  ColArray<T> mask;
};

template <typename T>
ChunkInputs<T> chunk_inputs(std::span<const SequenceSample* const> samples, Eigen::Index H, Id padding,
                            bool next_state) {
  ChunkInputs<T> in;
  const auto B = static_cast<Eigen::Index>(samples.size());
  in.items.reserve(static_cast<std::size_t>(B * H));
  in.scenarios.reserve(static_cast<std::size_t>(B * H));
  in.mask.resize(B * H);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& s = *samples[static_cast<std::size_t>(b)];
    const auto& items = next_state ? s.next_history_items : s.history_items;
    const auto& scen = next_state ? s.next_history_scenarios : s.history_scenarios;
    if (static_cast<Eigen::Index>(items.size()) != H || static_cast<Eigen::Index>(scen.size()) != H)
      throw ShapeError("sample history length " + std::to_string(items.size()) +
                       " does not match H = " + std::to_string(H));
    for (Eigen::Index t = 0; t < H; ++t) {
      const Id item = items[static_cast<std::size_t>(t)];
      in.items.push_back(item);
      in.scenarios.push_back(scen[static_cast<std::size_t>(t)]);
      in.mask(b * H + t) = item == padding ? T(0) : T(1);
    }
  }
  return in;
}

/// Sequence summary rows (B x d) for a chunk; optionally keeps the encoder cache.
template <typename T>
Mat<T> encode_chunk(const Model<T>& model, const ChunkInputs<T>& in, const Mat<T>& item_rows,
                    typename SequenceEncoder<T>::Cache* cache) {
  const Eigen::Index H = model.H();
  const Mat<T> per_position = model.encoder.forward(item_rows, in.mask, H, cache);
  const Eigen::Index B = per_position.rows() / H;
  Mat<T> final(B, per_position.cols());
  for (Eigen::Index b = 0; b < B; ++b) final.row(b) = per_position.row(final_row(in.mask, b, H));
  return final;
}

/// Predicted target-item embeddings (B x d) for the samples' histories.
template <typename T>
Mat<T> infer_intent(const Model<T>& model, std::span<const SequenceSample* const> samples) {
  const auto in = chunk_inputs<T>(samples, model.H(), model.catalog.padding_item_id(), false);
  const Mat<T> rows = gather_rows(model.embedding.item_table, std::span<const Id>(in.items));
  return model.intent.forward(encode_chunk(model, in, rows, nullptr), nullptr);
}

/// Scenario distribution of one estimator for a chunk (no gradients).
template <typename T>
Mat<T> infer_q(const Model<T>& model, const QEstimator<T>& q,
               std::span<const SequenceSample* const> samples, bool next_state) {
  const auto in = chunk_inputs<T>(samples, model.H(), model.catalog.padding_item_id(), next_state);
  const Mat<T> items = gather_rows(model.embedding.item_table, std::span<const Id>(in.items));
  const Mat<T> scen = gather_rows(model.embedding.scenario_table, std::span<const Id>(in.scenarios));
  const Mat<T> final = encode_chunk(model, in, items, nullptr);
  return q.forward(items, scen, final, in.mask, model.H(), !model.config.ablations.no_mha, nullptr);
}

}  // namespace ruie
