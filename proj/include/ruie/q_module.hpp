#pragma once

// Scenario-aware intent module.
//
// QEstimator maps a history (item ids, scenario ids) plus the sequence
// encoder's summary to a probability distribution over scenarios. Two
// independently initialised estimators form the Double Q-learning pair;
// TabularQ is the exact table form of the same update, used as a reference.

#include "ruie/embedding.hpp"
#include "ruie/layers.hpp"
#include "ruie/seq_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ruie {

/// Masked multi-head attention (query e_i, key/value e_i + e_s) read at the
/// last real position, concatenated with the sequence summary, then
/// fc1 -> ReLU -> fc2 -> softmax.
///
/// The per-head projections W_i^Q, W_i^K, W_i^V (d x d/h each) are stored
/// side by side as column blocks of one d x d matrix per role.
template <typename T>
struct QEstimator {
  Mat<T> w_query, w_key, w_value;  // d x d, head h = columns [h*dk, (h+1)*dk)
  Mat<T> w_out;                    // (h*dk) x d
  Linear<T> fc1;                   // 2d -> hidden
  Linear<T> fc2;                   // hidden -> num_scenarios
  int heads = 4;

  struct Cache {
    bool attention = true;
    Mat<T> fused, keys, values;
    std::vector<Eigen::Index> last;
    Mat<T> query_in, query;
    Mat<T> alpha;  // B x (heads*H)
    Mat<T> concat;
    ColArray<T> pooled_count;
    Mat<T> z, pre1, hidden, probs;
  };

  struct InputGrads {
    Mat<T> item;         // (B*H) x d
    Mat<T> scenario;     // (B*H) x d
    Mat<T> seq_final;    // B x d
  };

  Eigen::Index dim() const { return w_query.rows(); }
  Eigen::Index num_scenarios() const { return fc2.out(); }
  Eigen::Index head_dim() const { return dim() / heads; }

  template <typename Rng>
  static QEstimator random(Eigen::Index d, Eigen::Index num_scenarios, int heads,
                           Eigen::Index hidden, Rng& rng) {
    if (heads < 1 || d % heads != 0)
      throw ConfigError("q estimator: heads (" + std::to_string(heads) +
                        ") must divide the embedding dimension (" + std::to_string(d) + ")");
    auto square = [&](Eigen::Index n) { return Linear<T>::random(n, n, rng).weight; };
    QEstimator q;
    q.heads = heads;
    q.w_query = square(d);
    q.w_key = square(d);
    q.w_value = square(d);
    q.w_out = square(d);
    q.fc1 = Linear<T>::random(2 * d, hidden, rng);
    q.fc2 = Linear<T>::random(hidden, num_scenarios, rng);
    return q;
  }

  /// e_item, e_scenario: (B*H) x d raw lookups; seq_final: B x d.
  /// With attention == false the attention read-out is replaced by the mean
  /// of fused embeddings over real positions.
  Mat<T> forward(const Mat<T>& e_item, const Mat<T>& e_scenario, const Mat<T>& seq_final,
                 const ColArray<T>& mask, Eigen::Index H, bool attention, Cache* cache) const {
    const Eigen::Index d = dim();
    const Eigen::Index B = seq_final.rows();
    if (e_item.rows() != B * H || e_scenario.rows() != B * H || e_item.cols() != d ||
        seq_final.cols() != d)
      throw ShapeError("q estimator: input shapes inconsistent with d and H");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.attention = attention;
    c.fused = e_item + e_scenario;
    c.last.resize(static_cast<std::size_t>(B));
    for (Eigen::Index b = 0; b < B; ++b)
      c.last[static_cast<std::size_t>(b)] = last_real_position(mask, b, H);

    Mat<T> context(B, d);
    if (attention) {
      const Eigen::Index dk = head_dim();
      const T scale = T(1) / std::sqrt(static_cast<T>(dk));
      c.keys = c.fused * w_key;
      c.values = c.fused * w_value;
      c.query_in = Mat<T>::Zero(B, d);
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index last = c.last[static_cast<std::size_t>(b)];
        if (last >= 0) c.query_in.row(b) = e_item.row(b * H + last);
      }
      c.query = c.query_in * w_query;
      c.alpha = Mat<T>::Zero(B, heads * H);
      c.concat = Mat<T>::Zero(B, d);
      std::vector<T> scores(static_cast<std::size_t>(H));
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index last = c.last[static_cast<std::size_t>(b)];
        if (last < 0) continue;
        for (int h = 0; h < heads; ++h) {
          const auto q = c.query.row(b).segment(h * dk, dk);
          T mx = -std::numeric_limits<T>::infinity();
          for (Eigen::Index t = 0; t <= last; ++t) {
            if (mask(b * H + t) == T(0)) continue;
            const T s = q.dot(c.keys.row(b * H + t).segment(h * dk, dk)) * scale;
            scores[static_cast<std::size_t>(t)] = s;
            mx = std::max(mx, s);
          }
          T total = T(0);
          for (Eigen::Index t = 0; t <= last; ++t) {
            if (mask(b * H + t) == T(0)) continue;
            const T w = std::exp(scores[static_cast<std::size_t>(t)] - mx);
            c.alpha(b, h * H + t) = w;
            total += w;
          }
          for (Eigen::Index t = 0; t <= last; ++t) {
            const T w = c.alpha(b, h * H + t) / total;
            c.alpha(b, h * H + t) = w;
            if (w != T(0)) c.concat.row(b).segment(h * dk, dk) += w * c.values.row(b * H + t).segment(h * dk, dk);
          }
        }
      }
      context = c.concat * w_out;
    } else {
      context.setZero();
      c.pooled_count = ColArray<T>::Zero(B);
      for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index t = 0; t < H; ++t) {
          if (mask(b * H + t) == T(0)) continue;
          context.row(b) += c.fused.row(b * H + t);
          c.pooled_count(b) += T(1);
        }
        if (c.pooled_count(b) > T(0)) context.row(b) /= c.pooled_count(b);
      }
    }
    c.z.resize(B, 2 * d);
    c.z.leftCols(d) = context;
    c.z.rightCols(d) = seq_final;
    c.pre1 = fc1.forward(c.z);
    c.hidden = relu(c.pre1);
    c.probs = softmax_rows(fc2.forward(c.hidden));
    return c.probs;
  }

  InputGrads backward(const Mat<T>& dprobs, const ColArray<T>& mask, Eigen::Index H,
                      const Cache& c, QEstimator& grad) const {
    const Eigen::Index d = dim();
    const Eigen::Index B = dprobs.rows();
    Mat<T> dlogits = softmax_backward(c.probs, dprobs);
    Mat<T> dhidden = fc2.backward(c.hidden, dlogits, grad.fc2);
    Mat<T> dz = fc1.backward(c.z, relu_backward(c.pre1, dhidden), grad.fc1);
    InputGrads g;
    g.seq_final = dz.rightCols(d);
    const Mat<T> dcontext = dz.leftCols(d);
    g.item = Mat<T>::Zero(B * H, d);
    Mat<T> dfused = Mat<T>::Zero(B * H, d);
    if (c.attention) {
      const Eigen::Index dk = head_dim();
      const T scale = T(1) / std::sqrt(static_cast<T>(dk));
      grad.w_out.noalias() += c.concat.transpose() * dcontext;
      const Mat<T> dconcat = dcontext * w_out.transpose();
      Mat<T> dquery = Mat<T>::Zero(B, d);
      Mat<T> dkeys = Mat<T>::Zero(B * H, d);
      Mat<T> dvalues = Mat<T>::Zero(B * H, d);
      std::vector<T> dalpha(static_cast<std::size_t>(H));
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index last = c.last[static_cast<std::size_t>(b)];
        if (last < 0) continue;
        for (int h = 0; h < heads; ++h) {
          const auto dhead = dconcat.row(b).segment(h * dk, dk);
          T weighted = T(0);
          for (Eigen::Index t = 0; t <= last; ++t) {
            const T a = c.alpha(b, h * H + t);
            if (a == T(0)) continue;
            const T da = dhead.dot(c.values.row(b * H + t).segment(h * dk, dk));
            dalpha[static_cast<std::size_t>(t)] = da;
            weighted += a * da;
            dvalues.row(b * H + t).segment(h * dk, dk) += a * dhead;
          }
          const auto q = c.query.row(b).segment(h * dk, dk);
          for (Eigen::Index t = 0; t <= last; ++t) {
            const T a = c.alpha(b, h * H + t);
            if (a == T(0)) continue;
            const T ds = a * (dalpha[static_cast<std::size_t>(t)] - weighted) * scale;
            dquery.row(b).segment(h * dk, dk) += ds * c.keys.row(b * H + t).segment(h * dk, dk);
            dkeys.row(b * H + t).segment(h * dk, dk) += ds * q;
          }
        }
      }
      grad.w_query.noalias() += c.query_in.transpose() * dquery;
      const Mat<T> dquery_in = dquery * w_query.transpose();
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index last = c.last[static_cast<std::size_t>(b)];
        if (last >= 0) g.item.row(b * H + last) += dquery_in.row(b);
      }
      grad.w_key.noalias() += c.fused.transpose() * dkeys;
      grad.w_value.noalias() += c.fused.transpose() * dvalues;
      dfused.noalias() = dkeys * w_key.transpose();
      dfused.noalias() += dvalues * w_value.transpose();
    } else {
      for (Eigen::Index b = 0; b < B; ++b) {
        if (c.pooled_count(b) == T(0)) continue;
        for (Eigen::Index t = 0; t < H; ++t)
          if (mask(b * H + t) != T(0)) dfused.row(b * H + t) = dcontext.row(b) / c.pooled_count(b);
      }
    }
    g.item += dfused;
    g.scenario = std::move(dfused);
    return g;
  }

  /// Full causal attention weights of one sequence, one H x H matrix per
  /// head (row = query position). Masked or future key positions get 0.
  std::vector<Mat<T>> attention_weights(const Mat<T>& e_item, const Mat<T>& e_scenario,
                                        const ColArray<T>& mask) const {
    const Eigen::Index H = e_item.rows();
    const Eigen::Index dk = head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    const Mat<T> fused = e_item + e_scenario;
    const Mat<T> keys = fused * w_key;
    const Mat<T> query = e_item * w_query;
    std::vector<Mat<T>> out(static_cast<std::size_t>(heads), Mat<T>::Zero(H, H));
    for (int h = 0; h < heads; ++h) {
      auto& w = out[static_cast<std::size_t>(h)];
      for (Eigen::Index row = 0; row < H; ++row) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index t = 0; t <= row; ++t)
          if (mask(t) != T(0))
            mx = std::max(mx, query.row(row).segment(h * dk, dk).dot(keys.row(t).segment(h * dk, dk)) * scale);
        T total = T(0);
        for (Eigen::Index t = 0; t <= row; ++t) {
          if (mask(t) == T(0)) continue;
          w(row, t) = std::exp(query.row(row).segment(h * dk, dk).dot(keys.row(t).segment(h * dk, dk)) * scale - mx);
          total += w(row, t);
        }
        if (total > T(0)) w.row(row) /= total;
      }
    }
    return out;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".attn.w_query", w_query);
    f(prefix + ".attn.w_key", w_key);
    f(prefix + ".attn.w_value", w_value);
    f(prefix + ".attn.w_out", w_out);
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

/// The Double Q-learning pair.
template <typename T>
struct TwinQ {
  QEstimator<T> a;
  QEstimator<T> b;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    a.visit(prefix + "_a", f);
    b.visit(prefix + "_b", f);
  }
};

/// Which estimator a step updates.
enum class Coin : std::uint8_t { A, B };

// ------------------------------------------------------- targets and gate

/// Lowest index among maximal entries.
template <typename Row>
Eigen::Index argmax(const Row& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (row(i) > row(best)) best = i;
  return best;
}

struct BootstrapTarget {
  double value = 0.0;
  Eigen::Index best_action = 0;
};

/// clamp(r_norm + gamma * evaluator(s', argmax selector(s', .)), 0, 1).
template <typename RowSel, typename RowEval>
BootstrapTarget bootstrap_target(double reward_norm, double gamma, const RowSel& selector_next,
                                 const RowEval& evaluator_next) {
  BootstrapTarget t;
  t.best_action = argmax(selector_next);
  const double raw = reward_norm + gamma * static_cast<double>(evaluator_next(t.best_action));
  t.value = std::clamp(raw, 0.0, 1.0);
  return t;
}

/// min(1 / (1 - p + epsilon), cap). Callers treat the result as a constant.
inline double gate(double next_scenario_prob, double epsilon, double cap) {
  return std::min(1.0 / (1.0 - next_scenario_prob + epsilon), cap);
}

// ------------------------------------------------------------- tabular

struct TabularQ {
  Mat<double> q;  // num_states x num_actions

  TabularQ() = default;
  TabularQ(Eigen::Index states, Eigen::Index actions) : q(Mat<double>::Zero(states, actions)) {}
};

struct Transition {
  Eigen::Index s = 0;
  Eigen::Index a = 0;
  double r = 0.0;
  Eigen::Index s_next = 0;
};

/// One exact Double Q-learning update; `lr` plays the role of alpha(s, a).
inline void tabular_double_q_update(TabularQ& qa, TabularQ& qb, const Transition& t, double lr,
                                    double gamma, Coin coin) {
  TabularQ& upd = coin == Coin::A ? qa : qb;
  const TabularQ& other = coin == Coin::A ? qb : qa;
  const Eigen::Index best = argmax(upd.q.row(t.s_next));
  upd.q(t.s, t.a) = upd.q(t.s, t.a) + lr * (t.r + gamma * other.q(t.s_next, best) - upd.q(t.s, t.a));
}

}  // namespace ruie
