#pragma once

// Intent representation learning: a three-layer head predicts the target
// item's embedding; a margin triplet loss pulls it toward the true target
// and away from sampled negatives.

#include "ruie/data_ingest.hpp"
#include "ruie/layers.hpp"

#include <random>
#include <span>
#include <unordered_set>
#include <vector>

namespace ruie {

/// d -> d -> d -> d with ReLU after the first two layers. strict_relu adds a
/// ReLU on the output layer as well.
template <typename T>
struct IntentHead {
  Linear<T> fc1, fc2, fc3;
  bool strict_relu = false;

  struct Cache {
    Mat<T> x, pre1, h1, pre2, h2, pre3;
  };

  template <typename Rng>
  static IntentHead random(Eigen::Index d, bool strict_relu, Rng& rng) {
    IntentHead h;
    h.fc1 = Linear<T>::random(d, d, rng);
    h.fc2 = Linear<T>::random(d, d, rng);
    h.fc3 = Linear<T>::random(d, d, rng);
    h.strict_relu = strict_relu;
    return h;
  }

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    if (x.cols() != fc1.in()) throw ShapeError("intent head: input width mismatch");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.x = x;
    c.pre1 = fc1.forward(x);
    c.h1 = relu(c.pre1);
    c.pre2 = fc2.forward(c.h1);
    c.h2 = relu(c.pre2);
    c.pre3 = fc3.forward(c.h2);
    return strict_relu ? relu(c.pre3) : c.pre3;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, IntentHead& grad) const {
    Mat<T> d3 = strict_relu ? relu_backward(c.pre3, dy) : dy;
    Mat<T> dh2 = fc3.backward(c.h2, d3, grad.fc3);
    Mat<T> dh1 = fc2.backward(c.h1, relu_backward(c.pre2, dh2), grad.fc2);
    return fc1.backward(c.x, relu_backward(c.pre1, dh1), grad.fc1);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
    fc3.visit(prefix + ".fc3", f);
  }
};

template <typename T>
RowVec<T> predict_intent(const RowVec<T>& seq_final, const IntentHead<T>& head) {
  return head.forward(Mat<T>(seq_final), nullptr).row(0);
}

/// k distinct real items outside history, target and padding, uniform.
inline std::vector<Id> sample_negatives(const Catalog& catalog, std::span<const Id> history,
                                        Id target, std::size_t k, std::mt19937_64& rng) {
  std::unordered_set<Id> excluded(history.begin(), history.end());
  excluded.insert(target);
  std::size_t excluded_real = 0;
  for (Id id : excluded)
    if (id >= 0 && id < catalog.num_items) ++excluded_real;
  const std::size_t available = static_cast<std::size_t>(catalog.num_items) - excluded_real;
  if (available < k)
    throw SamplingError("sample_negatives: only " + std::to_string(available) +
                        " candidate items for k = " + std::to_string(k));
  std::vector<Id> out;
  out.reserve(k);
  if (available < 4 * k) {
    // Dense case: partial Fisher-Yates over the explicit candidate list.
    std::vector<Id> pool;
    pool.reserve(available);
    for (Id id = 0; id < catalog.num_items; ++id)
      if (!excluded.count(id)) pool.push_back(id);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
    return out;
  }
  std::uniform_int_distribution<Id> draw(0, catalog.num_items - 1);
  while (out.size() < k) {
    const Id id = draw(rng);
    if (excluded.count(id)) continue;
    excluded.insert(id);
    out.push_back(id);
  }
  return out;
}

/// Forward intermediates. Distance gradients are taken as zero at the origin.
template <typename T>
struct TripletCache {
  Eigen::Index k = 0;
  Mat<T> diff_pos;   // B x d, a - p
  ColArray<T> dist_pos;
  Mat<T> diff_neg;   // (B*k) x d, a - n
  ColArray<T> dist_neg;
  ColArray<T> active;  // (B*k), 1 where the hinge argument is > 0
};

/// Per-sample mean over negatives of max(0, |a-p| - |a-n| + margin).
/// anchors, positives: B x d; negatives: (B*k) x d, sample b owns rows b*k..b*k+k-1.
template <typename T>
ColArray<T> triplet_forward(const Mat<T>& anchors, const Mat<T>& positives, const Mat<T>& negatives,
                            Eigen::Index k, T margin, TripletCache<T>* cache) {
  if (k < 1) throw PreconditionError("triplet loss: negative list is empty");
  const Eigen::Index B = anchors.rows();
  if (positives.rows() != B || negatives.rows() != B * k || positives.cols() != anchors.cols() ||
      negatives.cols() != anchors.cols())
    throw ShapeError("triplet loss: shape mismatch");
  TripletCache<T> local;
  TripletCache<T>& c = cache ? *cache : local;
  c.k = k;
  c.diff_pos = anchors - positives;
  c.dist_pos = c.diff_pos.rowwise().norm().array();
  c.diff_neg.resize(B * k, anchors.cols());
  for (Eigen::Index b = 0; b < B; ++b)
    c.diff_neg.middleRows(b * k, k) = (-negatives.middleRows(b * k, k)).rowwise() + anchors.row(b);
  c.dist_neg = c.diff_neg.rowwise().norm().array();
  c.active.resize(B * k);
  ColArray<T> loss = ColArray<T>::Zero(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const T arg = c.dist_pos(b) - c.dist_neg(b * k + j) + margin;
      c.active(b * k + j) = arg > T(0) ? T(1) : T(0);
      if (!(arg <= T(0))) loss(b) += arg;  // lets NaN through to the caller
    }
    loss(b) /= static_cast<T>(k);
  }
  return loss;
}

template <typename T>
struct TripletGrads {
  Mat<T> anchors, positives, negatives;
};

template <typename T>
TripletGrads<T> triplet_backward(const ColArray<T>& dloss, const TripletCache<T>& c) {
  const Eigen::Index B = c.diff_pos.rows();
  const Eigen::Index k = c.k;
  const Eigen::Index d = c.diff_pos.cols();
  TripletGrads<T> g{Mat<T>::Zero(B, d), Mat<T>::Zero(B, d), Mat<T>::Zero(B * k, d)};
  auto unit = [](const auto& diff, T norm) -> RowVec<T> {
    return norm > T(0) ? RowVec<T>(diff / norm) : RowVec<T>::Zero(diff.size());
  };
  for (Eigen::Index b = 0; b < B; ++b) {
    const T scale = dloss(b) / static_cast<T>(k);
    T active = T(0);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (c.active(b * k + j) == T(0)) continue;
      active += T(1);
      const RowVec<T> un = unit(c.diff_neg.row(b * k + j), c.dist_neg(b * k + j));
      g.anchors.row(b) -= scale * un;
      g.negatives.row(b * k + j) = scale * un;
    }
    if (active > T(0)) {
      const RowVec<T> up = unit(c.diff_pos.row(b), c.dist_pos(b));
      g.anchors.row(b) += scale * active * up;
      g.positives.row(b) = -scale * active * up;
    }
  }
  return g;
}

/// Single-triplet form: mean over negatives.
template <typename T>
T triplet_loss(const RowVec<T>& a, const RowVec<T>& p, const std::vector<RowVec<T>>& negatives,
               T margin) {
  if (negatives.empty()) throw PreconditionError("triplet loss: negative list is empty");
  Mat<T> n(static_cast<Eigen::Index>(negatives.size()), a.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    if (negatives[j].size() != a.size()) throw ShapeError("triplet loss: shape mismatch");
    n.row(static_cast<Eigen::Index>(j)) = negatives[j];
  }
  return triplet_forward<T>(Mat<T>(a), Mat<T>(p), n, n.rows(), margin, nullptr)(0);
}

}  // namespace ruie
