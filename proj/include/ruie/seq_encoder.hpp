#pragma once

// Sequence encoders over item-embedding histories.
//
// Batches are laid out row-major as (B*H) x d: row b*H + t holds position t
// of sequence b. A 0/1 mask of length B*H marks real (1) and padded (0)
// positions. Both encoders are causal: row t depends on rows <= t only.

#include "ruie/layers.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace ruie {

enum class EncoderKind { nextitnet, gru };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::gru ? "gru" : "nextitnet"; }

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "nextitnet") return EncoderKind::nextitnet;
  if (s == "gru") return EncoderKind::gru;
  throw ConfigError("unknown encoder '" + s + "' (expected nextitnet or gru)");
}

struct EncoderOptions {
  EncoderKind kind = EncoderKind::nextitnet;
  int kernel = 3;
  /// One entry per convolution; consecutive pairs form a residual block.
  std::vector<int> dilations{1, 2, 4, 8, 1, 2, 4, 8};
  bool layer_norm = true;
  double ln_eps = 1e-5;
};

// ------------------------------------------------------------ convolution

/// Gathers the causal dilated receptive field: column block j of row (b,t)
/// holds x[b, t - (kernel-1-j)*dilation], or zeros before the sequence start.
template <typename T>
Mat<T> causal_im2col(const Mat<T>& x, Eigen::Index H, int kernel, int dilation) {
  const Eigen::Index d = x.cols();
  const Eigen::Index B = x.rows() / H;
  Mat<T> z = Mat<T>::Zero(x.rows(), kernel * d);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index t = 0; t < H; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index shift = static_cast<Eigen::Index>(kernel - 1 - j) * dilation;
        if (t >= shift) z.block(b * H + t, j * d, 1, d) = x.row(b * H + t - shift);
      }
    }
  }
  return z;
}

template <typename T>
Mat<T> causal_col2im(const Mat<T>& dz, Eigen::Index H, int kernel, int dilation) {
  const Eigen::Index d = dz.cols() / kernel;
  const Eigen::Index B = dz.rows() / H;
  Mat<T> dx = Mat<T>::Zero(dz.rows(), d);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index t = 0; t < H; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index shift = static_cast<Eigen::Index>(kernel - 1 - j) * dilation;
        if (t >= shift) dx.row(b * H + t - shift) += dz.block(b * H + t, j * d, 1, d);
      }
    }
  }
  return dx;
}

template <typename T>
struct CausalConv {
  Linear<T> proj;  // (kernel*d) x d
  int kernel = 3;
  int dilation = 1;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    proj.visit(prefix, f);
  }
};

template <typename T>
struct ResidualBlock {
  CausalConv<T> conv1, conv2;
  LayerNorm<T> ln1, ln2;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    conv1.visit(prefix + ".conv1", f);
    ln1.visit(prefix + ".ln1", f);
    conv2.visit(prefix + ".conv2", f);
    ln2.visit(prefix + ".ln2", f);
  }
};

// --------------------------------------------------------------- NextItNet

/// Residual block: conv -> LN -> ReLU -> conv -> LN -> ReLU, plus identity.
/// Each convolution sees its input with padded rows zeroed.
template <typename T>
struct NextItNet {
  std::vector<ResidualBlock<T>> blocks;
  bool layer_norm = true;
  T ln_eps = T(1e-5);

  struct BlockCache {
    Mat<T> z1, pre1, z2, pre2;
    typename LayerNorm<T>::Cache ln1, ln2;
  };
  struct Cache {
    std::vector<BlockCache> blocks;
  };

  template <typename Rng>
  static NextItNet random(Eigen::Index d, const EncoderOptions& opt, Rng& rng) {
    if (opt.dilations.empty() || opt.dilations.size() % 2 != 0)
      throw ConfigError("nextitnet: dilation schedule must have an even, nonzero length");
    if (opt.kernel < 1) throw ConfigError("nextitnet: kernel width must be >= 1");
    NextItNet net;
    net.layer_norm = opt.layer_norm;
    net.ln_eps = static_cast<T>(opt.ln_eps);
    for (std::size_t i = 0; i < opt.dilations.size(); i += 2) {
      ResidualBlock<T> blk;
      blk.conv1 = {Linear<T>::random(opt.kernel * d, d, rng), opt.kernel, opt.dilations[i]};
      blk.conv2 = {Linear<T>::random(opt.kernel * d, d, rng), opt.kernel, opt.dilations[i + 1]};
      blk.ln1 = LayerNorm<T>::identity(d);
      blk.ln2 = LayerNorm<T>::identity(d);
      net.blocks.push_back(std::move(blk));
    }
    return net;
  }

  /// x: (B*H) x d raw embeddings. Returns per-position outputs.
  Mat<T> forward(const Mat<T>& x, const ColArray<T>& mask, Eigen::Index H, Cache* cache) const {
    Mat<T> h = x;
    h.array().colwise() *= mask;
    if (cache) cache->blocks.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& blk = blocks[i];
      BlockCache local;
      BlockCache& c = cache ? cache->blocks[i] : local;
      Mat<T> a = h;
      a.array().colwise() *= mask;
      c.z1 = causal_im2col(a, H, blk.conv1.kernel, blk.conv1.dilation);
      Mat<T> n1 = blk.conv1.proj.forward(c.z1);
      if (layer_norm) n1 = blk.ln1.forward(n1, ln_eps, &c.ln1);
      c.pre1 = std::move(n1);
      Mat<T> r1 = relu(c.pre1);
      r1.array().colwise() *= mask;
      c.z2 = causal_im2col(r1, H, blk.conv2.kernel, blk.conv2.dilation);
      Mat<T> n2 = blk.conv2.proj.forward(c.z2);
      if (layer_norm) n2 = blk.ln2.forward(n2, ln_eps, &c.ln2);
      c.pre2 = std::move(n2);
      h += relu(c.pre2);
    }
    return h;
  }

  /// Returns d(loss)/d(raw input x).
  Mat<T> backward(const Mat<T>& dout, const ColArray<T>& mask, Eigen::Index H, const Cache& cache,
                  NextItNet& grad) const {
    Mat<T> dh = dout;
    for (std::size_t ii = blocks.size(); ii-- > 0;) {
      const auto& blk = blocks[ii];
      auto& g = grad.blocks[ii];
      const auto& c = cache.blocks[ii];
      Mat<T> dn2 = relu_backward(c.pre2, dh);
      if (layer_norm) dn2 = blk.ln2.backward(dn2, c.ln2, g.ln2);
      Mat<T> dz2 = blk.conv2.proj.backward(c.z2, dn2, g.conv2.proj);
      Mat<T> dr1 = causal_col2im(dz2, H, blk.conv2.kernel, blk.conv2.dilation);
      dr1.array().colwise() *= mask;
      Mat<T> dn1 = relu_backward(c.pre1, dr1);
      if (layer_norm) dn1 = blk.ln1.backward(dn1, c.ln1, g.ln1);
      Mat<T> dz1 = blk.conv1.proj.backward(c.z1, dn1, g.conv1.proj);
      Mat<T> da = causal_col2im(dz1, H, blk.conv1.kernel, blk.conv1.dilation);
      da.array().colwise() *= mask;
      dh += da;
    }
    dh.array().colwise() *= mask;
    return dh;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit(prefix + ".block" + std::to_string(i), f);
  }
};

// --------------------------------------------------------------------- GRU

/// Gate order [update z, reset r, candidate n]:
///   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + bn + r * (h Un)),  h' = (1 - z) * n + z * h
/// Padded positions carry the previous state through unchanged; h0 = 0.
template <typename T>
struct Gru {
  Mat<T> w_input;   // d x 3d
  Mat<T> w_hidden;  // d x 3d
  Mat<T> bias;      // 1 x 3d

  struct Cache {
    Mat<T> x;
    std::vector<Mat<T>> h_prev, z, r, n, hn;
  };

  template <typename Rng>
  static Gru random(Eigen::Index d, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Gru g{Mat<T>(d, 3 * d), Mat<T>(d, 3 * d), Mat<T>::Zero(1, 3 * d)};
    for (Eigen::Index i = 0; i < g.w_input.size(); ++i) g.w_input.data()[i] = T(dist(rng));
    for (Eigen::Index i = 0; i < g.w_hidden.size(); ++i) g.w_hidden.data()[i] = T(dist(rng));
    return g;
  }

  Mat<T> forward(const Mat<T>& x, const ColArray<T>& mask, Eigen::Index H, Cache* cache) const {
    const Eigen::Index d = w_input.rows();
    const Eigen::Index B = x.rows() / H;
    Mat<T> gx = x * w_input;
    gx.rowwise() += bias.row(0);
    Mat<T> out(x.rows(), d);
    Mat<T> h = Mat<T>::Zero(B, d);
    if (cache) {
      cache->x = x;
      for (auto* v : {&cache->h_prev, &cache->z, &cache->r, &cache->n, &cache->hn})
        v->assign(static_cast<std::size_t>(H), Mat<T>());
    }
    Mat<T> gx_t(B, 3 * d);
    ColArray<T> m_t(B);
    for (Eigen::Index t = 0; t < H; ++t) {
      for (Eigen::Index b = 0; b < B; ++b) {
        gx_t.row(b) = gx.row(b * H + t);
        m_t(b) = mask(b * H + t);
      }
      Mat<T> gh = h * w_hidden;
      Mat<T> z = (gx_t.leftCols(d) + gh.leftCols(d)).unaryExpr([](T v) { return sigmoid(v); });
      Mat<T> r = (gx_t.middleCols(d, d) + gh.middleCols(d, d)).unaryExpr([](T v) {
        return sigmoid(v);
      });
      Mat<T> hn = gh.rightCols(d);
      Mat<T> n = (gx_t.rightCols(d).array() + r.array() * hn.array()).tanh().matrix();
      Mat<T> h_new = ((T(1) - z.array()) * n.array() + z.array() * h.array()).matrix();
      for (Eigen::Index b = 0; b < B; ++b)
        if (m_t(b) == T(0)) h_new.row(b) = h.row(b);
      if (cache) {
        const auto ti = static_cast<std::size_t>(t);
        cache->h_prev[ti] = h;
        cache->z[ti] = std::move(z);
        cache->r[ti] = std::move(r);
        cache->n[ti] = std::move(n);
        cache->hn[ti] = std::move(hn);
      }
      h = std::move(h_new);
      for (Eigen::Index b = 0; b < B; ++b) out.row(b * H + t) = h.row(b);
    }
    return out;
  }

  Mat<T> backward(const Mat<T>& dout, const ColArray<T>& mask, Eigen::Index H, const Cache& c,
                  Gru& grad) const {
    const Eigen::Index d = w_input.rows();
    const Eigen::Index B = dout.rows() / H;
    Mat<T> dgx = Mat<T>::Zero(dout.rows(), 3 * d);
    Mat<T> carry = Mat<T>::Zero(B, d);
    for (Eigen::Index t = H; t-- > 0;) {
      const auto ti = static_cast<std::size_t>(t);
      Mat<T> dh = carry;
      for (Eigen::Index b = 0; b < B; ++b) dh.row(b) += dout.row(b * H + t);
      const auto& z = c.z[ti];
      const auto& r = c.r[ti];
      const auto& n = c.n[ti];
      const auto& hp = c.h_prev[ti];
      Mat<T> dz_pre = (dh.array() * (hp.array() - n.array()) * z.array() * (T(1) - z.array())).matrix();
      Mat<T> dn_pre = (dh.array() * (T(1) - z.array()) * (T(1) - n.array().square())).matrix();
      Mat<T> dr_pre =
          (dn_pre.array() * c.hn[ti].array() * r.array() * (T(1) - r.array())).matrix();
      Mat<T> dgh(B, 3 * d);
      dgh.leftCols(d) = dz_pre;
      dgh.middleCols(d, d) = dr_pre;
      dgh.rightCols(d) = (dn_pre.array() * r.array()).matrix();
      for (Eigen::Index b = 0; b < B; ++b) {
        if (mask(b * H + t) == T(0)) dgh.row(b).setZero();
      }
      Mat<T> dprev = (dh.array() * z.array()).matrix() + dgh * w_hidden.transpose();
      grad.w_hidden.noalias() += hp.transpose() * dgh;
      for (Eigen::Index b = 0; b < B; ++b) {
        if (mask(b * H + t) == T(0)) {
          carry.row(b) = dh.row(b);
        } else {
          carry.row(b) = dprev.row(b);
          dgx.block(b * H + t, 0, 1, d) = dz_pre.row(b);
          dgx.block(b * H + t, d, 1, d) = dr_pre.row(b);
          dgx.block(b * H + t, 2 * d, 1, d) = dn_pre.row(b);
        }
      }
    }
    grad.w_input.noalias() += c.x.transpose() * dgx;
    grad.bias += dgx.colwise().sum();
    return dgx * w_input.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_input", w_input);
    f(prefix + ".w_hidden", w_hidden);
    f(prefix + ".bias", bias);
  }
};

// ----------------------------------------------------------------- facade

template <typename T>
struct SequenceEncoder {
  EncoderKind kind = EncoderKind::nextitnet;
  NextItNet<T> nextitnet;
  Gru<T> gru;

  struct Cache {
    typename NextItNet<T>::Cache nextitnet;
    typename Gru<T>::Cache gru;
  };

  template <typename Rng>
  static SequenceEncoder random(Eigen::Index d, const EncoderOptions& opt, Rng& rng) {
    SequenceEncoder e;
    e.kind = opt.kind;
    if (opt.kind == EncoderKind::nextitnet)
      e.nextitnet = NextItNet<T>::random(d, opt, rng);
    else
      e.gru = Gru<T>::random(d, rng);
    return e;
  }

  Mat<T> forward(const Mat<T>& x, const ColArray<T>& mask, Eigen::Index H, Cache* cache) const {
    if (x.rows() % H != 0 || mask.size() != x.rows())
      throw ShapeError("encoder: input rows must be a multiple of H and match the mask");
    return kind == EncoderKind::nextitnet
               ? nextitnet.forward(x, mask, H, cache ? &cache->nextitnet : nullptr)
               : gru.forward(x, mask, H, cache ? &cache->gru : nullptr);
  }

  Mat<T> backward(const Mat<T>& dout, const ColArray<T>& mask, Eigen::Index H, const Cache& cache,
                  SequenceEncoder& grad) const {
    return kind == EncoderKind::nextitnet
               ? nextitnet.backward(dout, mask, H, cache.nextitnet, grad.nextitnet)
               : gru.backward(dout, mask, H, cache.gru, grad.gru);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if (kind == EncoderKind::nextitnet)
      nextitnet.visit(prefix, f);
    else
      gru.visit(prefix + ".gru", f);
  }
};

/// Index of the last real position of sequence b, or -1 when fully padded.
template <typename T>
Eigen::Index last_real_position(const ColArray<T>& mask, Eigen::Index b, Eigen::Index H) {
  for (Eigen::Index t = H; t-- > 0;)
    if (mask(b * H + t) != T(0)) return t;
  return -1;
}

/// Row of the per-position output used as the sequence summary: the last
/// real position, or H-1 when the sequence is entirely padding.
template <typename T>
Eigen::Index final_row(const ColArray<T>& mask, Eigen::Index b, Eigen::Index H) {
  const Eigen::Index last = last_real_position(mask, b, H);
  return b * H + (last < 0 ? H - 1 : last);
}

template <typename T>
struct Encoded {
  Mat<T> per_position;  // H x d
  RowVec<T> final;
};

/// Single-sequence convenience wrapper. padding_mask[t] is true at padded slots.
template <typename T>
Encoded<T> encode(const Mat<T>& history_embeddings, const SequenceEncoder<T>& enc,
                  std::span<const bool> padding_mask) {
  const Eigen::Index H = history_embeddings.rows();
  if (H < 1 || static_cast<Eigen::Index>(padding_mask.size()) != H)
    throw ShapeError("encode: mask length must equal H >= 1");
  ColArray<T> mask(H);
  for (Eigen::Index t = 0; t < H; ++t) mask(t) = padding_mask[static_cast<std::size_t>(t)] ? T(0) : T(1);
  Encoded<T> out;
  out.per_position = enc.forward(history_embeddings, mask, H, nullptr);
  out.final = out.per_position.row(final_row(mask, 0, H));
  return out;
}

}  // namespace ruie
