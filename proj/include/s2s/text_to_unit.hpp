// include/s2s/text_to_unit.hpp

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

// Character-level text to reduced-unit sequence-to-sequence model. One of
// these is trained per translation direction; apply() turns bilingual text
// into bilingual units.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2s/adam.hpp"
#include "s2s/common.hpp"
#include "s2s/ops.hpp"
#include "s2s/rng.hpp"
#include "s2s/seq2seq.hpp"
#include "s2s/transformer.hpp"
#include "s2s/units.hpp"

namespace s2s {

struct TextToUnitConfig {
  TransformerConfig enc;
  TransformerConfig dec;
  int64_t text_vocab = 28;    // graphemes + PAD (last id)
  int64_t k = 100;            // unit vocabulary; decoder adds the 4 specials
  int64_t max_positions = 128;  // absolute position table rows

  int64_t text_pad_id() const { return text_vocab - 1; }
  void validate() const {
    enc.validate();
    dec.validate();
    S2S_CHECK(enc.model_dim == dec.model_dim, "enc/dec dim mismatch");
    S2S_CHECK(text_vocab >= 2 && k >= 1, "vocab sizes");
    S2S_CHECK(max_positions >= 1, "max_positions");
  }
};

class TextToUnitModel {
 public:
  explicit TextToUnitModel(const TextToUnitConfig& cfg, uint64_t seed)
      : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t d = cfg_.enc.model_dim;
    const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d));
    text_emb_ = make_param({cfg_.text_vocab, d}, "t2u.text_emb", &params_, rng,
                           emb_scale);
    encoder_ = Encoder(cfg_.enc, "t2u.enc", rng, &params_);
    unit_emb_ = make_param({unit_vocab_size(cfg_.k), d}, "t2u.unit_emb",
                           &params_, rng, emb_scale);
    decoder_ = Decoder(cfg_.dec, "t2u.dec", rng, &params_);
    // absolute positions on both sides: cross-attention carries no relative
    // bias, so source order has to reach the decoder through the content
    pos_text_ = make_param({cfg_.max_positions, d}, "t2u.pos_text", &params_,
                           rng, emb_scale);
    pos_unit_ = make_param({cfg_.max_positions, d}, "t2u.pos_unit", &params_,
                           rng, emb_scale);
    // zero init: a fresh model scores every unit uniformly
    out_head_ = Linear(d, unit_vocab_size(cfg_.k), "t2u.out_head", rng,
                       &params_, /*zero_init=*/true);
  }

  ParamRegistry& params() { return params_; }
  const TextToUnitConfig& config() const { return cfg_; }

  // [B, L, unit_vocab] teacher-forced logits.
  Tensor forward_logits(const IdBatch& text, const IdBatch& dec_in, Rng& drop,
                        bool training) const {
    Tensor enc_in = add(embedding(text_emb_, text.ids, {text.b, text.l}),
                        positions(pos_text_, text.b, text.l));
    Tensor memory = encoder_.forward(enc_in, text.pad, drop, training);
    Tensor dec_emb = add(embedding(unit_emb_, dec_in.ids, {dec_in.b, dec_in.l}),
                         positions(pos_unit_, dec_in.b, dec_in.l));
    Tensor hidden =
        decoder_.forward(dec_emb, dec_in.pad, memory, text.pad, drop, training);
    return out_head_.forward(hidden);
  }

  Tensor loss(const std::vector<std::vector<int64_t>>& texts,
              const std::vector<std::vector<int64_t>>& units, Rng& drop,
              bool training) const {
    S2S_CHECK(texts.size() == units.size() && !texts.empty(), "pair batch");
    IdBatch text = batch_ids(texts, cfg_.text_pad_id());
    TeacherBatch teach = make_teacher_batch(units, unit_pad_id(cfg_.k),
                                            unit_bos_id(cfg_.k),
                                            unit_eos_id(cfg_.k));
    Tensor logits = forward_logits(text, teach.inputs, drop, training);
    const int64_t v = unit_vocab_size(cfg_.k);
    return cross_entropy(reshape(logits, {logits.numel() / v, v}),
                         teach.targets, kIgnoreTarget);
  }

  // Greedy decode, run-length reduced. Empty text decodes to the empty
  // sequence by definition.
  UnitSequence infer(const TextSequence& text, int64_t max_len = 64) const {
    UnitSequence empty;
    empty.reduced = true;
    if (text.tokens.empty()) return empty;
    NoGradGuard ng;
    Rng dummy(0);
    IdBatch tb = batch_ids({text.tokens}, cfg_.text_pad_id());
    Tensor enc_in = add(embedding(text_emb_, tb.ids, {1, tb.l}),
                        positions(pos_text_, 1, tb.l));
    Tensor memory = encoder_.forward(enc_in, tb.pad, dummy, false);
    const int64_t v = unit_vocab_size(cfg_.k);
    const int64_t bos = unit_bos_id(cfg_.k), eos = unit_eos_id(cfg_.k);
    const int64_t pad = unit_pad_id(cfg_.k), unk = unit_unk_id(cfg_.k);
    std::vector<int64_t> prefix{bos};
    UnitSequence out;
    out.truncated = true;
    for (int64_t step = 0; step < max_len; ++step) {
      const int64_t l = static_cast<int64_t>(prefix.size());
      std::vector<uint8_t> no_pad(l, 0);
      Tensor dec_emb = add(embedding(unit_emb_, prefix, {1, l}),
                           positions(pos_unit_, 1, l));
      Tensor hidden =
          decoder_.forward(dec_emb, no_pad, memory, tb.pad, dummy, false);
      Tensor logits = out_head_.forward(hidden);
      const double* row = logits.data().data() + (l - 1) * v;
      int64_t best = -1;
      for (int64_t j = 0; j < v; ++j) {
        if (j == pad || j == bos || j == unk) continue;
        if (best < 0 || row[j] > row[best]) best = j;
      }
      if (best == eos) {
        out.truncated = false;
        break;
      }
      out.units.push_back(best);
      prefix.push_back(best);
    }
    UnitSequence reducedv = reduce_units(out);
    return reducedv;
  }

 private:
  // rows [0, l) of the table, tiled over the batch
  Tensor positions(const Tensor& table, int64_t b, int64_t l) const {
    S2S_CHECK(l <= cfg_.max_positions, "sequence length ", l,
              " exceeds max_positions ", cfg_.max_positions);
    std::vector<int64_t> ids;
    ids.reserve(b * l);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < l; ++j) ids.push_back(j);
    return embedding(table, ids, {b, l});
  }

  TextToUnitConfig cfg_;
  ParamRegistry params_;
  Tensor text_emb_, unit_emb_, pos_text_, pos_unit_;
  Encoder encoder_;
  Decoder decoder_;
  Linear out_head_;
};

struct T2uTrainStats {
  std::vector<double> losses;  // one per step
  double final_loss = 0.0;
};

// Step-based teacher-forced training with Adam and linear warmup. Batch
// indices come from the seeded Rng, so a (pairs, config, seed) triple fixes
// the whole trajectory.
inline T2uTrainStats train_text_to_unit(
    TextToUnitModel& model, const std::vector<TextSequence>& texts,
    const std::vector<UnitSequence>& units, uint64_t seed, int64_t steps,
    int64_t batch_size, double lr = 5e-4) {
  S2S_CHECK(!texts.empty() && texts.size() == units.size(),
            "bad t2u training set");
  Rng rng(Rng::derive_seed(seed, 1));
  Rng drop(Rng::derive_seed(seed, 2));
  Adam opt(model.params(), lr);
  const int64_t n = static_cast<int64_t>(texts.size());
  const int64_t warmup = std::max<int64_t>(1, steps / 10);
  T2uTrainStats stats;
  for (int64_t step = 1; step <= steps; ++step) {
    std::vector<std::vector<int64_t>> bt, bu;
    for (int64_t i = 0; i < batch_size; ++i) {
      const int64_t idx = static_cast<int64_t>(rng.next_below(n));
      bt.push_back(texts[idx].tokens);
      bu.push_back(units[idx].units);
    }
    opt.set_lr(step <= warmup
                   ? lr * static_cast<double>(step) / static_cast<double>(warmup)
                   : lr);
    opt.zero_grad();
    Tensor loss = model.loss(bt, bu, drop, true);
    S2S_REQUIRE(is_finite(loss.item()), "t2u loss diverged at step ", step);
    loss.backward();
    opt.step();
    stats.losses.push_back(loss.item());
  }
  stats.final_loss = stats.losses.empty() ? 0.0 : stats.losses.back();
  return stats;
}

}  // namespace s2s
