#pragma once

// Dense building blocks with explicit forward/backward passes. Every layer
// exposes visit(prefix, f) which calls f(name, Mat<T>&) for each trainable
// tensor; gradients live in a second instance of the same struct.

#include "ruie/core.hpp"

#include <cmath>
#include <random>
#include <string>

namespace ruie {

template <typename T>
using ColArray = Eigen::Array<T, Eigen::Dynamic, 1>;

/// y = x W + b, with W stored in x out.
template <typename T>
struct Linear {
  Mat<T> weight;
  Mat<T> bias;  // 1 x out

  static Linear zeros(Eigen::Index in, Eigen::Index out) {
    return {Mat<T>::Zero(in, out), Mat<T>::Zero(1, out)};
  }

  template <typename Rng>
  static Linear random(Eigen::Index in, Eigen::Index out, Rng& rng) {
    // Uniform(-1/sqrt(in), 1/sqrt(in)), zero bias.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Linear l = zeros(in, out);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i)
      l.weight.data()[i] = static_cast<T>(dist(rng));
    return l;
  }

  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  /// Accumulates dW, db into grad and returns dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Linear& grad) const {
    grad.weight.noalias() += x.transpose() * dy;
    grad.bias += dy.colwise().sum();
    return dy * weight.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  Mat<T> gain;  // 1 x d
  Mat<T> bias;  // 1 x d

  struct Cache {
    Mat<T> xhat;
    ColArray<T> inv_std;
  };

  static LayerNorm identity(Eigen::Index d) { return {Mat<T>::Ones(1, d), Mat<T>::Zero(1, d)}; }

  Mat<T> forward(const Mat<T>& x, T eps, Cache* cache) const {
    const auto d = static_cast<T>(x.cols());
    ColArray<T> mean = x.rowwise().sum().array() / d;
    Mat<T> centered = x;
    centered.array().colwise() -= mean;
    ColArray<T> var = centered.array().square().rowwise().sum() / d;
    ColArray<T> inv_std = (var + eps).rsqrt();
    centered.array().colwise() *= inv_std;
    Mat<T> y = centered;
    y.array().rowwise() *= gain.row(0).array();
    y.rowwise() += bias.row(0);
    if (cache) {
      cache->xhat = std::move(centered);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, LayerNorm& grad) const {
    grad.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    grad.bias += dy.colwise().sum();
    Mat<T> dxhat = dy;
    dxhat.array().rowwise() *= gain.row(0).array();
    const auto d = static_cast<T>(dy.cols());
    ColArray<T> mean_dxhat = dxhat.rowwise().sum().array() / d;
    ColArray<T> mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum() / d;
    Mat<T> dx = dxhat;
    dx.array().colwise() -= mean_dxhat;
    dx.array() -= c.xhat.array().colwise() * mean_dxhat_xhat;
    dx.array().colwise() *= c.inv_std;
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

/// Gradient of relu given its *input*; zero at the kink.
template <typename T>
Mat<T> relu_backward(const Mat<T>& pre, const Mat<T>& dy) {
  return (pre.array() > T(0)).select(dy, T(0));
}

/// Row-wise numerically stable softmax.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  Mat<T> out = logits;
  ColArray<T> mx = logits.rowwise().maxCoeff().array();
  out.array().colwise() -= mx;
  out = out.array().exp().matrix();
  ColArray<T> sum = out.rowwise().sum().array();
  out.array().colwise() /= sum;
  return out;
}

/// d logits from d probs for a row-wise softmax.
template <typename T>
Mat<T> softmax_backward(const Mat<T>& probs, const Mat<T>& dprobs) {
  ColArray<T> dot = (probs.array() * dprobs.array()).rowwise().sum();
  Mat<T> dl = dprobs;
  dl.array().colwise() -= dot;
  return (dl.array() * probs.array()).matrix();
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace ruie
