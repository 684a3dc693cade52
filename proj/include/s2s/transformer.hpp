// include/s2s/transformer.hpp

// Copyright 2026  The s2s authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Pre-layer-norm Transformer blocks with bucketed relative position bias.
// Dropout sits on the residual branches (sublayer outputs) only. Parameter
// initialization draws from the provided Rng in construction order, which is
// part of the determinism contract: same seed, same initial weights.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "s2s/adam.hpp"
#include "s2s/common.hpp"
#include "s2s/ops.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

// Additive mask value. Large enough to zero the softmax weight, small enough
// to keep every intermediate finite.
constexpr double kAttnMaskValue = -1e30;

struct TransformerConfig {
  int64_t num_layers = 2;
  int64_t model_dim = 64;
  int64_t num_heads = 4;
  int64_t ffn_dim = 256;
  double dropout = 0.1;
  int64_t rel_bias_buckets = 32;
  int64_t rel_bias_max_distance = 128;

  void validate() const {
    S2S_CHECK(num_layers >= 0, "num_layers");
    S2S_CHECK(model_dim > 0 && num_heads > 0 && ffn_dim > 0, "dims");
    S2S_CHECK(model_dim % num_heads == 0, "model_dim ", model_dim,
              " not divisible by num_heads ", num_heads);
    S2S_CHECK(dropout >= 0.0 && dropout < 1.0, "dropout ", dropout);
    S2S_CHECK(rel_bias_buckets >= 2 && rel_bias_buckets % 2 == 0,
              "rel_bias_buckets must be even, got ", rel_bias_buckets);
    S2S_CHECK(rel_bias_max_distance > rel_bias_buckets / 4,
              "rel_bias_max_distance too small");
  }
};

using ParamRegistry = std::vector<Tensor>;

inline Tensor make_param(const Shape& shape, const std::string& name,
                         ParamRegistry* reg, Rng& rng, double scale) {
  Tensor t = scale == 0.0 ? Tensor::zeros(shape, true)
                          : Tensor::randn(shape, rng, scale, true);
  t.set_name(name);
  if (reg) reg->push_back(t);
  return t;
}

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, const std::string& name, Rng& rng,
         ParamRegistry* reg, bool zero_init = false)
      : w(make_param({in, out}, name + ".w", reg, rng,
                     zero_init ? 0.0
                               : std::sqrt(2.0 / static_cast<double>(in + out)))),
        b(make_param({out}, name + ".b", reg, rng, 0.0)) {}

  // x [..., in] -> [..., out]
  Tensor forward(const Tensor& x) const {
    const int64_t in = w.dim(0), out = w.dim(1);
    Shape out_shape = x.shape();
    S2S_CHECK(out_shape.back() == in, "linear dim: ", shape_str(x.shape()),
              " into ", shape_str(w.shape()));
    out_shape.back() = out;
    Tensor flat = reshape(x, {x.numel() / in, in});
    return reshape(add_suffix(matmul(flat, w), b), out_shape);
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  LayerNorm(int64_t dim, const std::string& name, ParamRegistry* reg) {
    gamma = Tensor::full({dim}, 1.0, true);
    gamma.set_name(name + ".gamma");
    beta = Tensor::zeros({dim}, true);
    beta.set_name(name + ".beta");
    if (reg) {
      reg->push_back(gamma);
      reg->push_back(beta);
    }
  }

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// Bucket index for a signed relative offset rel = key_pos - query_pos.
// Half the buckets cover exact small offsets, the rest are log-spaced out to
// max_distance. Bidirectional mode splits the space between past and future;
// unidirectional mode spends all buckets on the past (future is masked).
inline int64_t relative_position_bucket(int64_t rel, bool bidirectional,
                                        int64_t num_buckets,
                                        int64_t max_distance) {
  int64_t bucket = 0;
  int64_t n;
  if (bidirectional) {
    num_buckets /= 2;
    if (rel > 0) bucket += num_buckets;
    n = rel < 0 ? -rel : rel;
  } else {
    n = rel < 0 ? -rel : 0;
  }
  const int64_t max_exact = num_buckets / 2;
  S2S_CHECK(max_exact >= 1 && max_distance > max_exact,
            "bucket config too small: buckets=", num_buckets,
            " max_distance=", max_distance);
  if (n < max_exact) return bucket + n;
  const double frac =
      std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
      std::log(static_cast<double>(max_distance) /
               static_cast<double>(max_exact));
  int64_t big = max_exact +
                static_cast<int64_t>(frac *
                                     static_cast<double>(num_buckets - max_exact));
  if (big > num_buckets - 1) big = num_buckets - 1;
  return bucket + big;
}

// One learned table per stack, shared by all layers of that stack.
struct RelativeBias {
  Tensor table;  // [buckets, heads]
  int64_t buckets = 0, heads = 0, max_distance = 0;
  bool bidirectional = true;

  RelativeBias() = default;
  RelativeBias(const TransformerConfig& cfg, bool bidir,
               const std::string& name, ParamRegistry* reg)
      : buckets(cfg.rel_bias_buckets), heads(cfg.num_heads),
        max_distance(cfg.rel_bias_max_distance), bidirectional(bidir) {
    table = Tensor::zeros({buckets, heads}, true);
    table.set_name(name + ".table");
    if (reg) reg->push_back(table);
  }

  // [heads, q_len, k_len]
  Tensor forward(int64_t q_len, int64_t k_len) const {
    S2S_CHECK(q_len > 0 && k_len > 0, "bias lengths");
    std::vector<int64_t> ids(static_cast<size_t>(q_len * k_len));
    for (int64_t q = 0; q < q_len; ++q)
      for (int64_t k = 0; k < k_len; ++k)
        ids[q * k_len + k] = relative_position_bucket(
            k - q, bidirectional, buckets, max_distance);
    Tensor gathered = embedding(table, ids, {q_len, k_len});  // [q,k,H]
    return permute(gathered, {2, 0, 1});
  }
};

// Constant additive mask [B, H, q_len, k_len]: 0 where attention is allowed,
// kAttnMaskValue where the key is padded or (causal) in the future.
inline Tensor attention_mask(const std::vector<uint8_t>& kv_pad, int64_t bsz,
                             int64_t heads, int64_t q_len, int64_t k_len,
                             bool causal) {
  S2S_CHECK(static_cast<int64_t>(kv_pad.size()) == bsz * k_len,
            "pad mask size ", kv_pad.size(), " vs ", bsz, "x", k_len);
  Tensor m = Tensor::zeros({bsz, heads, q_len, k_len});
  double* pm = m.data().data();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t q = 0; q < q_len; ++q)
        for (int64_t k = 0; k < k_len; ++k) {
          const bool blocked = kv_pad[b * k_len + k] || (causal && k > q);
          pm[((b * heads + h) * q_len + q) * k_len + k] =
              blocked ? kAttnMaskValue : 0.0;
        }
  return m;
}

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int64_t model_dim = 0, heads = 0, head_dim = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(const TransformerConfig& cfg, const std::string& name,
                     Rng& rng, ParamRegistry* reg)
      : wq(cfg.model_dim, cfg.model_dim, name + ".wq", rng, reg),
        wk(cfg.model_dim, cfg.model_dim, name + ".wk", rng, reg),
        wv(cfg.model_dim, cfg.model_dim, name + ".wv", rng, reg),
        wo(cfg.model_dim, cfg.model_dim, name + ".wo", rng, reg),
        model_dim(cfg.model_dim), heads(cfg.num_heads),
        head_dim(cfg.model_dim / cfg.num_heads) {}

  // [B,T,D] -> [B*H, T, dh]
  Tensor split_heads(const Tensor& x) const {
    const int64_t b = x.dim(0), t = x.dim(1);
    Tensor r = reshape(x, {b, t, heads, head_dim});
    return reshape(permute(r, {0, 2, 1, 3}), {b * heads, t, head_dim});
  }

  // q_in [B,Tq,D], kv_in [B,Tk,D]; bias [H,Tq,Tk] or undefined;
  // add_mask [B,H,Tq,Tk] constant or undefined.
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const Tensor& bias,
                 const Tensor& add_mask) const {
    const int64_t b = q_in.dim(0), tq = q_in.dim(1), tk = kv_in.dim(1);
    S2S_CHECK(q_in.dim(2) == model_dim && kv_in.dim(2) == model_dim,
              "attention dim mismatch");
    Tensor q = split_heads(wq.forward(q_in));
    Tensor k = split_heads(wk.forward(kv_in));
    Tensor v = split_heads(wv.forward(kv_in));
    Tensor scores = scale(bmm(q, permute(k, {0, 2, 1})),
                          1.0 / std::sqrt(static_cast<double>(head_dim)));
    Tensor s4 = reshape(scores, {b, heads, tq, tk});
    if (bias.defined()) s4 = add_suffix(s4, bias);
    if (add_mask.defined()) s4 = add(s4, add_mask);
    Tensor probs = softmax(s4, 3);
    Tensor ctx = bmm(reshape(probs, {b * heads, tq, tk}), v);
    Tensor merged = reshape(
        permute(reshape(ctx, {b, heads, tq, head_dim}), {0, 2, 1, 3}),
        {b, tq, model_dim});
    return wo.forward(merged);
  }
};

struct FeedForward {
  Linear w1, w2;

  FeedForward() = default;
  FeedForward(const TransformerConfig& cfg, const std::string& name, Rng& rng,
              ParamRegistry* reg)
      : w1(cfg.model_dim, cfg.ffn_dim, name + ".w1", rng, reg),
        w2(cfg.ffn_dim, cfg.model_dim, name + ".w2", rng, reg) {}

  Tensor forward(const Tensor& x) const {
    return w2.forward(gelu(w1.forward(x)));
  }
};

struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  EncoderLayer(const TransformerConfig& cfg, const std::string& name, Rng& rng,
               ParamRegistry* reg)
      : ln1(cfg.model_dim, name + ".ln1", reg),
        ln2(cfg.model_dim, name + ".ln2", reg),
        attn(cfg, name + ".attn", rng, reg),
        ffn(cfg, name + ".ffn", rng, reg) {}
};

// Encoder stack. With zero layers forward() is the identity on values
// (no final norm either), which pins down the residual wiring in tests.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const TransformerConfig& cfg, const std::string& name, Rng& rng,
          ParamRegistry* reg)
      : cfg_(cfg), bias_(cfg, /*bidir=*/true, name + ".rel_bias", reg) {
    cfg_.validate();
    for (int64_t i = 0; i < cfg.num_layers; ++i)
      layers_.emplace_back(cfg, name + ".layer" + std::to_string(i), rng, reg);
    if (cfg.num_layers > 0)
      final_ln_ = LayerNorm(cfg.model_dim, name + ".final_ln", reg);
  }

  // x [B,T,D]; pad flattened [B*T], nonzero marks padding.
  Tensor forward(const Tensor& x, const std::vector<uint8_t>& pad, Rng& drop,
                 bool training) const {
    const int64_t b = x.dim(0), t = x.dim(1);
    if (layers_.empty()) return x;
    Tensor bias = bias_.forward(t, t);
    Tensor mask = attention_mask(pad, b, cfg_.num_heads, t, t, false);
    Tensor h = x;
    for (const EncoderLayer& l : layers_) {
      Tensor a = l.ln1.forward(h);
      h = add(h, dropout(l.attn.forward(a, a, bias, mask), cfg_.dropout, drop,
                         training));
      h = add(h, dropout(l.ffn.forward(l.ln2.forward(h)), cfg_.dropout, drop,
                         training));
    }
    return final_ln_.forward(h);
  }

  const TransformerConfig& config() const { return cfg_; }

 private:
  TransformerConfig cfg_;
  RelativeBias bias_;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_ln_;
};

struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  DecoderLayer(const TransformerConfig& cfg, const std::string& name, Rng& rng,
               ParamRegistry* reg)
      : ln1(cfg.model_dim, name + ".ln1", reg),
        ln2(cfg.model_dim, name + ".ln2", reg),
        ln3(cfg.model_dim, name + ".ln3", reg),
        self_attn(cfg, name + ".self_attn", rng, reg),
        cross_attn(cfg, name + ".cross_attn", rng, reg),
        ffn(cfg, name + ".ffn", rng, reg) {}
};

// Decoder stack over already-embedded target inputs. Causal self-attention
// with relative bias; cross-attention has no positional bias and masks
// padded memory keys.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const TransformerConfig& cfg, const std::string& name, Rng& rng,
          ParamRegistry* reg)
      : cfg_(cfg), bias_(cfg, /*bidir=*/false, name + ".rel_bias", reg) {
    cfg_.validate();
    for (int64_t i = 0; i < cfg.num_layers; ++i)
      layers_.emplace_back(cfg, name + ".layer" + std::to_string(i), rng, reg);
    if (cfg.num_layers > 0)
      final_ln_ = LayerNorm(cfg.model_dim, name + ".final_ln", reg);
  }

  Tensor forward(const Tensor& y, const std::vector<uint8_t>& y_pad,
                 const Tensor& memory, const std::vector<uint8_t>& mem_pad,
                 Rng& drop, bool training) const {
    const int64_t b = y.dim(0), l = y.dim(1), t = memory.dim(1);
    if (layers_.empty()) return y;
    Tensor bias = bias_.forward(l, l);
    Tensor self_mask = attention_mask(y_pad, b, cfg_.num_heads, l, l, true);
    Tensor cross_mask =
        attention_mask(mem_pad, b, cfg_.num_heads, l, t, false);
    Tensor h = y;
    for (const DecoderLayer& lay : layers_) {
      Tensor a = lay.ln1.forward(h);
      h = add(h, dropout(lay.self_attn.forward(a, a, bias, self_mask),
                         cfg_.dropout, drop, training));
      h = add(h, dropout(lay.cross_attn.forward(lay.ln2.forward(h), memory,
                                                Tensor(), cross_mask),
                         cfg_.dropout, drop, training));
      h = add(h, dropout(lay.ffn.forward(lay.ln3.forward(h)), cfg_.dropout,
                         drop, training));
    }
    return final_ln_.forward(h);
  }

  const TransformerConfig& config() const { return cfg_; }

 private:
  TransformerConfig cfg_;
  RelativeBias bias_;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_ln_;
};

// Two stride-1 kernel-3 convolutions with GELU between, mapping raw feature
// frames to model_dim. Padded rows are zeroed first so nothing leaks through
// the kernel overlap into real frames.
class ConvPrenet {
 public:
  ConvPrenet() = default;
  ConvPrenet(int64_t feat_dim, int64_t model_dim, const std::string& name,
             Rng& rng, ParamRegistry* reg)
      : feat_dim_(feat_dim) {
    w1_ = make_param({3, feat_dim, model_dim}, name + ".w1", reg, rng,
                     std::sqrt(2.0 / static_cast<double>(3 * feat_dim + model_dim)));
    b1_ = make_param({model_dim}, name + ".b1", reg, rng, 0.0);
    w2_ = make_param({3, model_dim, model_dim}, name + ".w2", reg, rng,
                     std::sqrt(2.0 / static_cast<double>(3 * model_dim + model_dim)));
    b2_ = make_param({model_dim}, name + ".b2", reg, rng, 0.0);
  }

  // x [B,T,feat_dim], pad flattened [B*T]. Padded rows are zeroed before
  // each convolution, so a real frame's output never depends on pad values
  // or on how long the batch happens to be padded.
  Tensor forward(const Tensor& x, const std::vector<uint8_t>& pad) const {
    S2S_CHECK(x.rank() == 3 && x.dim(2) == feat_dim_, "prenet input ",
              shape_str(x.shape()), " wants feat dim ", feat_dim_);
    const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    S2S_CHECK(static_cast<int64_t>(pad.size()) == b * t, "pad size");
    const int64_t model_dim = w1_.dim(2);
    Tensor keep_in = Tensor::zeros({b, t, d});
    Tensor keep_mid = Tensor::zeros({b, t, model_dim});
    for (int64_t i = 0; i < b * t; ++i)
      if (!pad[i]) {
        for (int64_t j = 0; j < d; ++j) keep_in.data()[i * d + j] = 1.0;
        for (int64_t j = 0; j < model_dim; ++j)
          keep_mid.data()[i * model_dim + j] = 1.0;
      }
    Tensor zeroed = mul(x, keep_in);
    Tensor h = mul(gelu(conv1d_k3(zeroed, w1_, b1_)), keep_mid);
    return conv1d_k3(h, w2_, b2_);
  }

 private:
  int64_t feat_dim_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

}  // namespace s2s
