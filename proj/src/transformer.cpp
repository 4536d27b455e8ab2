// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <sstream>

#include "promptmt/model.hpp"

namespace promptmt::model {

void ModelConfig::validate() const {
  if (encoder_layers < 1 || decoder_layers < 1) throw ModelError("need at least one layer per stack");
  if (model_dim < 1 || feedforward_dim < 1 || heads < 1) throw ModelError("dimensions must be positive");
  if (model_dim % heads != 0) throw ModelError("model_dim must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ModelError("dropout must be in [0,1)");
  if (vocab_size < 5) throw ModelError("vocabulary is too small");
  if (max_positions < 2) throw ModelError("max_positions must be at least 2");
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  os << "enc" << encoder_layers << "-dec" << decoder_layers << "-d" << model_dim << "-ff"
     << feedforward_dim << "-h" << heads << "-v" << vocab_size << "-p" << max_positions << "-drop"
     << dropout;
  return os.str();
}

ParameterLayout ParameterLayout::build(const ModelConfig& c) {
  c.validate();
  ParameterLayout l;
  std::size_t off = 0;
  auto slot = [&](Eigen::Index rows, Eigen::Index cols) {
    TensorSlot s{off, rows, cols};
    off += s.size();
    return s;
  };
  const Eigen::Index d = c.model_dim, f = c.feedforward_dim;
  auto norm = [&] { return LayerNormSlots{slot(1, d), slot(1, d)}; };
  auto linear = [&](Eigen::Index in, Eigen::Index out) { return LinearSlots{slot(in, out), slot(1, out)}; };
  auto attention = [&] { return AttentionSlots{linear(d, d), linear(d, d), linear(d, d), linear(d, d)}; };
  auto ff = [&] { return FeedForwardSlots{linear(d, f), linear(f, d)}; };

  l.embedding = slot(c.vocab_size, d);
  for (int i = 0; i < c.encoder_layers; ++i) {
    EncoderLayerSlots e;
    e.attn_norm = norm();
    e.attn = attention();
    e.ff_norm = norm();
    e.ff = ff();
    l.encoder.push_back(e);
  }
  l.encoder_norm = norm();
  for (int i = 0; i < c.decoder_layers; ++i) {
    DecoderLayerSlots e;
    e.self_norm = norm();
    e.self_attn = attention();
    e.cross_norm = norm();
    e.cross_attn = attention();
    e.ff_norm = norm();
    e.ff = ff();
    l.decoder.push_back(e);
  }
  l.decoder_norm = norm();
  l.total = off;
  return l;
}

namespace {

constexpr double kNormEpsilon = 1e-5;

template <typename S>
using MatMap = Eigen::Map<Matrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Matrix<S>>;
template <typename S>
using RowMap = Eigen::Map<RowVector<S>>;
template <typename S>
using ConstRowMap = Eigen::Map<const RowVector<S>>;

template <typename S>
ConstMatMap<S> cview(const Vector<S>& p, const TensorSlot& s) {
  return ConstMatMap<S>(p.data() + s.offset, s.rows, s.cols);
}
template <typename S>
MatMap<S> view(Vector<S>& p, const TensorSlot& s) {
  return MatMap<S>(p.data() + s.offset, s.rows, s.cols);
}
template <typename S>
ConstRowMap<S> crow(const Vector<S>& p, const TensorSlot& s) {
  return ConstRowMap<S>(p.data() + s.offset, s.cols);
}
template <typename S>
RowMap<S> row(Vector<S>& p, const TensorSlot& s) {
  return RowMap<S>(p.data() + s.offset, s.cols);
}

template <typename S>
struct NormCache {
  Matrix<S> xhat;
  Vector<S> rstd;
};

template <typename S>
Matrix<S> layer_norm(const Matrix<S>& x, const Vector<S>& p, const LayerNormSlots& s,
                     NormCache<S>* cache) {
  const auto n = x.rows();
  Matrix<S> xhat(n, x.cols());
  Vector<S> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    auto centered = (x.row(i).array() - mean).eval();
    const S var = centered.square().mean();
    const S r = S(1) / std::sqrt(var + S(kNormEpsilon));
    xhat.row(i) = centered * r;
    rstd(i) = r;
  }
  Matrix<S> y =
      (xhat.array().rowwise() * crow(p, s.gain).array()).rowwise() + crow(p, s.bias).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const NormCache<S>& c, const Vector<S>& p,
                              Vector<S>& g, const LayerNormSlots& s) {
  row(g, s.gain) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  row(g, s.bias) += dy.colwise().sum();
  Matrix<S> dxhat = dy.array().rowwise() * crow(p, s.gain).array();
  Matrix<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dxhat.row(i).mean();
    const S m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename S>
Matrix<S> linear(const Matrix<S>& x, const Vector<S>& p, const LinearSlots& s) {
  Matrix<S> y(x.rows(), s.weight.cols);
  y.noalias() = x * cview(p, s.weight);
  y.rowwise() += crow(p, s.bias);
  return y;
}

template <typename S>
Matrix<S> linear_backward(const Matrix<S>& x, const Matrix<S>& dy, const Vector<S>& p, Vector<S>& g,
                          const LinearSlots& s) {
  view(g, s.weight).noalias() += x.transpose() * dy;
  row(g, s.bias) += dy.colwise().sum();
  Matrix<S> dx(dy.rows(), x.cols());
  dx.noalias() = dy * cview(p, s.weight).transpose();
  return dx;
}

template <typename S>
void softmax_rows(Matrix<S>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const S mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

template <typename S>
struct AttentionCache {
  Matrix<S> q, k, v, context;
  std::vector<Matrix<S>> probs;  ///< [segment * heads + head]
};

template <typename S>
Matrix<S> attention(const Matrix<S>& q_in, const Matrix<S>& kv_in, const std::vector<Segment>& q_segs,
                    const std::vector<Segment>& kv_segs, bool causal, int heads, const Vector<S>& p,
                    const AttentionSlots& s, AttentionCache<S>* cache) {
  Matrix<S> q = linear(q_in, p, s.query);
  Matrix<S> k = linear(kv_in, p, s.key);
  Matrix<S> v = linear(kv_in, p, s.value);
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Matrix<S> context = Matrix<S>::Zero(q.rows(), d);
  std::vector<Matrix<S>> probs;
  if (cache) probs.reserve(q_segs.size() * heads);
  for (std::size_t seg = 0; seg < q_segs.size(); ++seg) {
    const auto& sq = q_segs[seg];
    const auto& sk = kv_segs[seg];
    for (int h = 0; h < heads; ++h) {
      Matrix<S> scores(sq.length, sk.length);
      scores.noalias() = q.block(sq.offset, h * dh, sq.length, dh) *
                         k.block(sk.offset, h * dh, sk.length, dh).transpose();
      scores *= scale;
      if (causal) {
        for (Eigen::Index r = 0; r < sq.length; ++r)
          for (Eigen::Index c = r + 1; c < sk.length; ++c)
            scores(r, c) = -std::numeric_limits<S>::infinity();
      }
      softmax_rows(scores);
      context.block(sq.offset, h * dh, sq.length, dh).noalias() =
          scores * v.block(sk.offset, h * dh, sk.length, dh);
      if (cache) probs.push_back(std::move(scores));
    }
  }
  Matrix<S> out = linear(context, p, s.output);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
    cache->probs = std::move(probs);
  }
  return out;
}

/// Returns (d q_in, d kv_in).
template <typename S>
std::pair<Matrix<S>, Matrix<S>> attention_backward(const Matrix<S>& dout, const Matrix<S>& q_in,
                                                   const Matrix<S>& kv_in, const AttentionCache<S>& c,
                                                   const std::vector<Segment>& q_segs,
                                                   const std::vector<Segment>& kv_segs, int heads,
                                                   const Vector<S>& p, Vector<S>& g,
                                                   const AttentionSlots& s) {
  Matrix<S> dcontext = linear_backward(c.context, dout, p, g, s.output);
  const Eigen::Index d = c.q.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Matrix<S> dq = Matrix<S>::Zero(c.q.rows(), d);
  Matrix<S> dk = Matrix<S>::Zero(c.k.rows(), d);
  Matrix<S> dv = Matrix<S>::Zero(c.v.rows(), d);
  for (std::size_t seg = 0; seg < q_segs.size(); ++seg) {
    const auto& sq = q_segs[seg];
    const auto& sk = kv_segs[seg];
    for (int h = 0; h < heads; ++h) {
      const auto& P = c.probs[seg * heads + h];
      auto dctx = dcontext.block(sq.offset, h * dh, sq.length, dh);
      Matrix<S> dP(sq.length, sk.length);
      dP.noalias() = dctx * c.v.block(sk.offset, h * dh, sk.length, dh).transpose();
      dv.block(sk.offset, h * dh, sk.length, dh).noalias() += P.transpose() * dctx;
      Vector<S> rowdot = (dP.array() * P.array()).rowwise().sum();
      Matrix<S> dS = P.array() * (dP.colwise() - rowdot).array();
      dS *= scale;
      dq.block(sq.offset, h * dh, sq.length, dh).noalias() +=
          dS * c.k.block(sk.offset, h * dh, sk.length, dh);
      dk.block(sk.offset, h * dh, sk.length, dh).noalias() +=
          dS.transpose() * c.q.block(sq.offset, h * dh, sq.length, dh);
    }
  }
  Matrix<S> dq_in = linear_backward(q_in, dq, p, g, s.query);
  Matrix<S> dkv_in = linear_backward(kv_in, dk, p, g, s.key);
  dkv_in += linear_backward(kv_in, dv, p, g, s.value);
  return {std::move(dq_in), std::move(dkv_in)};
}

template <typename S>
struct FeedForwardCache {
  Matrix<S> pre;
  Matrix<S> act;
};

template <typename S>
Matrix<S> feed_forward(const Matrix<S>& x, const Vector<S>& p, const FeedForwardSlots& s,
                       FeedForwardCache<S>* cache) {
  Matrix<S> pre = linear(x, p, s.in);
  Matrix<S> act = pre.cwiseMax(S(0));
  Matrix<S> out = linear(act, p, s.out);
  if (cache) {
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <typename S>
Matrix<S> feed_forward_backward(const Matrix<S>& dout, const Matrix<S>& x, const FeedForwardCache<S>& c,
                                const Vector<S>& p, Vector<S>& g, const FeedForwardSlots& s) {
  Matrix<S> dact = linear_backward(c.act, dout, p, g, s.out);
  Matrix<S> dpre = (c.pre.array() > S(0)).select(dact, S(0));
  return linear_backward(x, dpre, p, g, s.in);
}

/// Inverted dropout; an empty mask means the identity.
template <typename S>
void dropout(Matrix<S>& x, double rate, Rng* rng, Matrix<S>& mask) {
  if (!rng || rate <= 0.0) {
    mask.resize(0, 0);
    return;
  }
  const S keep = S(1) / S(1.0 - rate);
  mask.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng->uniform() < rate ? S(0) : keep;
  }
  x.array() *= mask.array();
}

template <typename S>
void dropout_backward(Matrix<S>& dx, const Matrix<S>& mask) {
  if (mask.size() != 0) dx.array() *= mask.array();
}

template <typename S>
Matrix<S> sinusoid_table(int positions, int dim) {
  Matrix<S> t(positions, dim);
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
      t(pos, i) = static_cast<S>(std::sin(pos * freq));
      if (i + 1 < dim) t(pos, i + 1) = static_cast<S>(std::cos(pos * freq));
    }
  }
  return t;
}

template <typename S>
struct EncoderLayerCache {
  Matrix<S> input;
  NormCache<S> attn_norm;
  Matrix<S> attn_in;
  AttentionCache<S> attn;
  Matrix<S> attn_drop;
  Matrix<S> mid;
  NormCache<S> ff_norm;
  Matrix<S> ff_in;
  FeedForwardCache<S> ff;
  Matrix<S> ff_drop;
};

template <typename S>
struct DecoderLayerCache {
  Matrix<S> input;
  NormCache<S> self_norm;
  Matrix<S> self_in;
  AttentionCache<S> self_attn;
  Matrix<S> self_drop;
  Matrix<S> after_self;
  NormCache<S> cross_norm;
  Matrix<S> cross_in;
  AttentionCache<S> cross_attn;
  Matrix<S> cross_drop;
  Matrix<S> after_cross;
  NormCache<S> ff_norm;
  Matrix<S> ff_in;
  FeedForwardCache<S> ff;
  Matrix<S> ff_drop;
};

}  // namespace

template <typename Scalar>
struct Transformer<Scalar>::Forward {
  std::vector<Segment> enc_segs, dec_segs;
  std::vector<int> enc_tokens, dec_inputs, dec_targets;
  Mat enc_embed_drop, dec_embed_drop;
  std::vector<EncoderLayerCache<Scalar>> enc;
  Mat enc_top;
  NormCache<Scalar> enc_norm;
  Mat memory;
  std::vector<DecoderLayerCache<Scalar>> dec;
  Mat dec_top;
  NormCache<Scalar> dec_norm;
  Mat hidden;  ///< final decoder states, one row per target position
};

template <typename Scalar>
Transformer<Scalar>::Transformer(const ModelConfig& config, std::uint64_t seed)
    : config_(config), layout_(ParameterLayout::build(config)) {
  params_ = Vec::Zero(static_cast<Eigen::Index>(layout_.total));
  positions_ = sinusoid_table<Scalar>(config_.max_positions, config_.model_dim);
  Rng rng(derive_seed(seed, 0x2545f491));
  auto fill_normal = [&](const TensorSlot& s, double stddev) {
    auto m = view(params_, s);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal() * stddev);
  };
  auto fill_ones = [&](const TensorSlot& s) { view(params_, s).setOnes(); };
  auto init_linear = [&](const LinearSlots& s) {
    fill_normal(s.weight, std::sqrt(2.0 / static_cast<double>(s.weight.rows + s.weight.cols)));
  };
  auto init_attention = [&](const AttentionSlots& a) {
    init_linear(a.query);
    init_linear(a.key);
    init_linear(a.value);
    init_linear(a.output);
  };
  fill_normal(layout_.embedding, 1.0 / std::sqrt(static_cast<double>(config_.model_dim)));
  for (const auto& e : layout_.encoder) {
    fill_ones(e.attn_norm.gain);
    init_attention(e.attn);
    fill_ones(e.ff_norm.gain);
    init_linear(e.ff.in);
    init_linear(e.ff.out);
  }
  fill_ones(layout_.encoder_norm.gain);
  for (const auto& e : layout_.decoder) {
    fill_ones(e.self_norm.gain);
    init_attention(e.self_attn);
    fill_ones(e.cross_norm.gain);
    init_attention(e.cross_attn);
    fill_ones(e.ff_norm.gain);
    init_linear(e.ff.in);
    init_linear(e.ff.out);
  }
  fill_ones(layout_.decoder_norm.gain);
}

template <typename Scalar>
Transformer<Scalar>::Transformer(const ModelConfig& config, Vec parameters)
    : config_(config), layout_(ParameterLayout::build(config)), params_(std::move(parameters)) {
  if (static_cast<std::size_t>(params_.size()) != layout_.total) {
    throw ModelError("parameter vector has " + std::to_string(params_.size()) + " entries, layout needs " +
                     std::to_string(layout_.total));
  }
  positions_ = sinusoid_table<Scalar>(config_.max_positions, config_.model_dim);
}

namespace {

template <typename S>
Matrix<S> embed(const std::vector<int>& tokens, const std::vector<Segment>& segs, const Vector<S>& p,
                const TensorSlot& table, const Matrix<S>& positions, int vocab, int max_positions) {
  const auto emb = cview(p, table);
  const S scale = std::sqrt(static_cast<S>(table.cols));
  Matrix<S> x(static_cast<Eigen::Index>(tokens.size()), table.cols);
  for (const auto& seg : segs) {
    if (seg.length > max_positions) {
      throw ModelError("sequence of " + std::to_string(seg.length) + " tokens exceeds max_positions " +
                       std::to_string(max_positions));
    }
    for (Eigen::Index t = 0; t < seg.length; ++t) {
      const int tok = tokens[seg.offset + t];
      if (tok < 0 || tok >= vocab) throw ModelError("token id " + std::to_string(tok) + " outside vocabulary");
      x.row(seg.offset + t) = emb.row(tok) * scale + positions.row(t);
    }
  }
  return x;
}

}  // namespace

template <typename Scalar>
typename Transformer<Scalar>::Output Transformer<Scalar>::forward_backward(
    const pipeline::Batch& batch, double smoothing, bool train, std::uint64_t dropout_seed,
    Vec* grad) const {
  Forward f;
  // Pack valid positions only; padded positions never enter the computation.
  Eigen::Index enc_off = 0, dec_off = 0;
  for (int r = 0; r < batch.rows(); ++r) {
    const int sl = batch.encoder_length(r);
    const int tl = batch.decoder_length(r);
    if (sl == 0 || tl == 0) throw ModelError("batch row " + std::to_string(r) + " is empty");
    f.enc_segs.push_back({enc_off, sl});
    f.dec_segs.push_back({dec_off, tl});
    enc_off += sl;
    dec_off += tl;
    for (int t = 0; t < batch.encoder_ids.cols(); ++t)
      if (batch.encoder_mask(r, t)) f.enc_tokens.push_back(batch.encoder_ids(r, t));
    int prev = pipeline::kPadId;
    for (int t = 0; t < batch.decoder_ids.cols(); ++t) {
      if (!batch.decoder_mask(r, t)) continue;
      f.dec_inputs.push_back(prev);
      f.dec_targets.push_back(batch.decoder_ids(r, t));
      prev = batch.decoder_ids(r, t);
    }
  }

  const double rate = config_.dropout;
  std::optional<Rng> rng_storage;
  if (train && rate > 0.0) rng_storage.emplace(dropout_seed);
  Rng* rng = rng_storage ? &*rng_storage : nullptr;
  const int heads = config_.heads;
  const auto& p = params_;

  // Encoder.
  Mat x = embed(f.enc_tokens, f.enc_segs, p, layout_.embedding, positions_, config_.vocab_size,
                config_.max_positions);
  dropout(x, rate, rng, f.enc_embed_drop);
  f.enc.resize(layout_.encoder.size());
  for (std::size_t l = 0; l < layout_.encoder.size(); ++l) {
    const auto& s = layout_.encoder[l];
    auto& c = f.enc[l];
    c.input = x;
    c.attn_in = layer_norm(x, p, s.attn_norm, &c.attn_norm);
    Mat a = attention(c.attn_in, c.attn_in, f.enc_segs, f.enc_segs, false, heads, p, s.attn, &c.attn);
    dropout(a, rate, rng, c.attn_drop);
    x += a;
    c.mid = x;
    c.ff_in = layer_norm(x, p, s.ff_norm, &c.ff_norm);
    Mat h = feed_forward(c.ff_in, p, s.ff, &c.ff);
    dropout(h, rate, rng, c.ff_drop);
    x += h;
  }
  f.enc_top = x;
  f.memory = layer_norm(x, p, layout_.encoder_norm, &f.enc_norm);

  // Decoder.
  Mat y = embed(f.dec_inputs, f.dec_segs, p, layout_.embedding, positions_, config_.vocab_size,
                config_.max_positions);
  dropout(y, rate, rng, f.dec_embed_drop);
  f.dec.resize(layout_.decoder.size());
  for (std::size_t l = 0; l < layout_.decoder.size(); ++l) {
    const auto& s = layout_.decoder[l];
    auto& c = f.dec[l];
    c.input = y;
    c.self_in = layer_norm(y, p, s.self_norm, &c.self_norm);
    Mat a = attention(c.self_in, c.self_in, f.dec_segs, f.dec_segs, true, heads, p, s.self_attn,
                      &c.self_attn);
    dropout(a, rate, rng, c.self_drop);
    y += a;
    c.after_self = y;
    c.cross_in = layer_norm(y, p, s.cross_norm, &c.cross_norm);
    Mat b = attention(c.cross_in, f.memory, f.dec_segs, f.enc_segs, false, heads, p, s.cross_attn,
                      &c.cross_attn);
    dropout(b, rate, rng, c.cross_drop);
    y += b;
    c.after_cross = y;
    c.ff_in = layer_norm(y, p, s.ff_norm, &c.ff_norm);
    Mat h = feed_forward(c.ff_in, p, s.ff, &c.ff);
    dropout(h, rate, rng, c.ff_drop);
    y += h;
  }
  f.dec_top = y;
  f.hidden = layer_norm(y, p, layout_.decoder_norm, &f.dec_norm);

  const auto emb = cview(p, layout_.embedding);
  Mat logits(f.hidden.rows(), emb.rows());
  logits.noalias() = f.hidden * emb.transpose();
  std::vector<int> mask(f.dec_targets.size(), 1);
  auto loss = label_smoothed_loss<Scalar>(logits, f.dec_targets, mask, static_cast<Scalar>(smoothing),
                                          grad != nullptr);
  Output out{static_cast<double>(loss.loss), loss.positions};
  if (!grad) return out;

  Vec& g = *grad;
  if (static_cast<std::size_t>(g.size()) != layout_.total) g = Vec::Zero(static_cast<Eigen::Index>(layout_.total));
  auto demb = view(g, layout_.embedding);
  demb.noalias() += loss.grad.transpose() * f.hidden;
  Mat dh(f.hidden.rows(), f.hidden.cols());
  dh.noalias() = loss.grad * emb;

  // Decoder backward.
  Mat dy = layer_norm_backward(dh, f.dec_norm, p, g, layout_.decoder_norm);
  Mat dmemory = Mat::Zero(f.memory.rows(), f.memory.cols());
  for (std::size_t li = layout_.decoder.size(); li-- > 0;) {
    const auto& s = layout_.decoder[li];
    const auto& c = f.dec[li];
    {
      Mat dff = dy;
      dropout_backward(dff, c.ff_drop);
      Mat dff_in = feed_forward_backward(dff, c.ff_in, c.ff, p, g, s.ff);
      dy += layer_norm_backward(dff_in, c.ff_norm, p, g, s.ff_norm);
    }
    {
      Mat dcross = dy;
      dropout_backward(dcross, c.cross_drop);
      auto [dq, dkv] = attention_backward(dcross, c.cross_in, f.memory, c.cross_attn, f.dec_segs,
                                          f.enc_segs, heads, p, g, s.cross_attn);
      dmemory += dkv;
      dy += layer_norm_backward(dq, c.cross_norm, p, g, s.cross_norm);
    }
    {
      Mat dself = dy;
      dropout_backward(dself, c.self_drop);
      auto [dq, dkv] = attention_backward(dself, c.self_in, c.self_in, c.self_attn, f.dec_segs,
                                          f.dec_segs, heads, p, g, s.self_attn);
      dq += dkv;
      dy += layer_norm_backward(dq, c.self_norm, p, g, s.self_norm);
    }
  }
  dropout_backward(dy, f.dec_embed_drop);
  const Scalar scale = std::sqrt(static_cast<Scalar>(config_.model_dim));
  for (std::size_t i = 0; i < f.dec_inputs.size(); ++i) {
    demb.row(f.dec_inputs[i]) += dy.row(static_cast<Eigen::Index>(i)) * scale;
  }

  // Encoder backward.
  Mat dx = layer_norm_backward(dmemory, f.enc_norm, p, g, layout_.encoder_norm);
  for (std::size_t li = layout_.encoder.size(); li-- > 0;) {
    const auto& s = layout_.encoder[li];
    const auto& c = f.enc[li];
    {
      Mat dff = dx;
      dropout_backward(dff, c.ff_drop);
      Mat dff_in = feed_forward_backward(dff, c.ff_in, c.ff, p, g, s.ff);
      dx += layer_norm_backward(dff_in, c.ff_norm, p, g, s.ff_norm);
    }
    {
      Mat da = dx;
      dropout_backward(da, c.attn_drop);
      auto [dq, dkv] = attention_backward(da, c.attn_in, c.attn_in, c.attn, f.enc_segs, f.enc_segs,
                                          heads, p, g, s.attn);
      dq += dkv;
      dx += layer_norm_backward(dq, c.attn_norm, p, g, s.attn_norm);
    }
  }
  dropout_backward(dx, f.enc_embed_drop);
  for (std::size_t i = 0; i < f.enc_tokens.size(); ++i) {
    demb.row(f.enc_tokens[i]) += dx.row(static_cast<Eigen::Index>(i)) * scale;
  }
  return out;
}

template <typename Scalar>
std::vector<typename Transformer<Scalar>::Mat> Transformer<Scalar>::logits(const pipeline::Batch& batch) const {
  std::vector<Mat> out;
  for (int r = 0; r < batch.rows(); ++r) {
    std::vector<int> src, tgt;
    for (int t = 0; t < batch.encoder_ids.cols(); ++t)
      if (batch.encoder_mask(r, t)) src.push_back(batch.encoder_ids(r, t));
    for (int t = 0; t < batch.decoder_ids.cols(); ++t)
      if (batch.decoder_mask(r, t)) tgt.push_back(batch.decoder_ids(r, t));
    const auto source = encode(src);
    auto cache = start_cache(1);
    Mat rows(static_cast<Eigen::Index>(tgt.size()), config_.vocab_size);
    int prev = pipeline::kPadId;
    for (std::size_t t = 0; t < tgt.size(); ++t) {
      const int tok[1] = {prev};
      rows.row(static_cast<Eigen::Index>(t)) = decode_step(source, cache, tok).row(0);
      prev = tgt[t];
    }
    out.push_back(std::move(rows));
  }
  return out;
}

template <typename Scalar>
EncodedSource<Scalar> Transformer<Scalar>::encode(std::span<const int> source) const {
  if (source.empty()) throw ModelError("cannot encode an empty source");
  const auto& p = params_;
  std::vector<int> toks(source.begin(), source.end());
  std::vector<Segment> segs{{0, static_cast<Eigen::Index>(toks.size())}};
  Mat x = embed(toks, segs, p, layout_.embedding, positions_, config_.vocab_size, config_.max_positions);
  for (const auto& s : layout_.encoder) {
    Mat h = layer_norm<Scalar>(x, p, s.attn_norm, nullptr);
    x += attention<Scalar>(h, h, segs, segs, false, config_.heads, p, s.attn, nullptr);
    h = layer_norm<Scalar>(x, p, s.ff_norm, nullptr);
    x += feed_forward<Scalar>(h, p, s.ff, nullptr);
  }
  EncodedSource<Scalar> out;
  out.memory = layer_norm<Scalar>(x, p, layout_.encoder_norm, nullptr);
  for (const auto& s : layout_.decoder) {
    out.cross_keys.push_back(linear(out.memory, p, s.cross_attn.key));
    out.cross_values.push_back(linear(out.memory, p, s.cross_attn.value));
  }
  return out;
}

template <typename Scalar>
DecoderCache<Scalar> Transformer<Scalar>::start_cache(int beams) const {
  DecoderCache<Scalar> c;
  const auto layers = layout_.decoder.size();
  c.keys.assign(layers, std::vector<Mat>(beams, Mat(0, config_.model_dim)));
  c.values.assign(layers, std::vector<Mat>(beams, Mat(0, config_.model_dim)));
  return c;
}

template <typename Scalar>
void Transformer<Scalar>::reorder(DecoderCache<Scalar>& cache, std::span<const int> parents) const {
  for (std::size_t l = 0; l < cache.keys.size(); ++l) {
    std::vector<Mat> keys, values;
    keys.reserve(parents.size());
    values.reserve(parents.size());
    for (int parent : parents) {
      keys.push_back(cache.keys[l].at(parent));
      values.push_back(cache.values[l].at(parent));
    }
    cache.keys[l] = std::move(keys);
    cache.values[l] = std::move(values);
  }
}

namespace {

/// Single-query attention of one row against cached keys/values.
template <typename S>
void attend_row(const Eigen::Ref<const RowVector<S>>& q, const Matrix<S>& keys, const Matrix<S>& values,
                int heads, Eigen::Ref<RowVector<S>> out) {
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  for (int h = 0; h < heads; ++h) {
    RowVector<S> scores = q.segment(h * dh, dh) * keys.middleCols(h * dh, dh).transpose();
    scores *= scale;
    const S mx = scores.maxCoeff();
    scores = (scores.array() - mx).exp();
    scores /= scores.sum();
    out.segment(h * dh, dh).noalias() = scores * values.middleCols(h * dh, dh);
  }
}

}  // namespace

template <typename Scalar>
typename Transformer<Scalar>::Mat Transformer<Scalar>::decode_step(const EncodedSource<Scalar>& source,
                                                                   DecoderCache<Scalar>& cache,
                                                                   std::span<const int> tokens) const {
  const auto beams = static_cast<Eigen::Index>(tokens.size());
  if (cache.keys.empty() || static_cast<Eigen::Index>(cache.keys[0].size()) != beams) {
    throw ModelError("decoder cache holds a different number of beams");
  }
  if (cache.steps >= config_.max_positions) throw ModelError("decode exceeded max_positions");
  const auto& p = params_;
  const auto emb = cview(p, layout_.embedding);
  const Scalar scale = std::sqrt(static_cast<Scalar>(config_.model_dim));
  Mat x(beams, config_.model_dim);
  for (Eigen::Index b = 0; b < beams; ++b) {
    x.row(b) = emb.row(tokens[b]) * scale + positions_.row(cache.steps);
  }
  Mat ctx(beams, config_.model_dim);
  for (std::size_t l = 0; l < layout_.decoder.size(); ++l) {
    const auto& s = layout_.decoder[l];
    Mat h = layer_norm<Scalar>(x, p, s.self_norm, nullptr);
    Mat q = linear(h, p, s.self_attn.query);
    Mat k = linear(h, p, s.self_attn.key);
    Mat v = linear(h, p, s.self_attn.value);
    for (Eigen::Index b = 0; b < beams; ++b) {
      auto& K = cache.keys[l][b];
      auto& V = cache.values[l][b];
      K.conservativeResize(K.rows() + 1, Eigen::NoChange);
      V.conservativeResize(V.rows() + 1, Eigen::NoChange);
      K.row(K.rows() - 1) = k.row(b);
      V.row(V.rows() - 1) = v.row(b);
      attend_row<Scalar>(q.row(b), K, V, config_.heads, ctx.row(b));
    }
    x += linear(ctx, p, s.self_attn.output);
    h = layer_norm<Scalar>(x, p, s.cross_norm, nullptr);
    q = linear(h, p, s.cross_attn.query);
    for (Eigen::Index b = 0; b < beams; ++b) {
      attend_row<Scalar>(q.row(b), source.cross_keys[l], source.cross_values[l], config_.heads, ctx.row(b));
    }
    x += linear(ctx, p, s.cross_attn.output);
    h = layer_norm<Scalar>(x, p, s.ff_norm, nullptr);
    x += feed_forward<Scalar>(h, p, s.ff, nullptr);
  }
  ++cache.steps;
  Mat hidden = layer_norm<Scalar>(x, p, layout_.decoder_norm, nullptr);
  Mat out(beams, emb.rows());
  out.noalias() = hidden * emb.transpose();
  for (Eigen::Index b = 0; b < beams; ++b) {
    const Scalar mx = out.row(b).maxCoeff();
    const Scalar lse = mx + std::log((out.row(b).array() - mx).exp().sum());
    out.row(b).array() -= lse;
  }
  return out;
}

template <typename Scalar>
LossResult<Scalar> label_smoothed_loss(const Matrix<Scalar>& logits, std::span<const int> targets,
                                       std::span<const int> mask, Scalar smoothing, bool want_grad) {
  const auto n = logits.rows();
  const auto v = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n || static_cast<Eigen::Index>(mask.size()) != n) {
    throw ModelError("loss: logits, targets and mask disagree on the number of positions");
  }
  if (!(smoothing >= Scalar(0) && smoothing < Scalar(1))) throw ModelError("loss: smoothing must be in [0,1)");
  std::size_t valid = 0;
  for (int m : mask) valid += m != 0;
  if (valid == 0) throw ModelError("loss: batch has no valid positions");

  LossResult<Scalar> r;
  r.positions = valid;
  if (want_grad) r.grad = Matrix<Scalar>::Zero(n, v);
  const Scalar uniform = smoothing / static_cast<Scalar>(v);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(valid);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const int y = targets[i];
    if (y < 0 || y >= v) throw ModelError("loss: target id out of range");
    const Scalar mx = logits.row(i).maxCoeff();
    const Scalar lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    // -sum_k q_k log p_k with q = (1-eps) onehot + eps/V
    const Scalar sum_logp = logits.row(i).sum() - static_cast<Scalar>(v) * lse;
    const Scalar logp_y = logits(i, y) - lse;
    total += static_cast<double>(-(Scalar(1) - smoothing) * logp_y - uniform * sum_logp);
    if (want_grad) {
      auto g = r.grad.row(i);
      g = (logits.row(i).array() - lse).exp();
      g.array() -= uniform;
      g(y) -= Scalar(1) - smoothing;
      g *= inv;
    }
  }
  r.loss = static_cast<Scalar>(total / static_cast<double>(valid));
  return r;
}

template LossResult<float> label_smoothed_loss<float>(const Matrix<float>&, std::span<const int>,
                                                      std::span<const int>, float, bool);
template LossResult<double> label_smoothed_loss<double>(const Matrix<double>&, std::span<const int>,
                                                        std::span<const int>, double, bool);

template class Transformer<float>;
template class Transformer<double>;

}  // namespace promptmt::model
