// include/s2s/model.hpp

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

// Speech-to-unit translation model: conv prenet + speech encoder E_s + unit
// encoder E_u + unit decoder D_u. E_u and D_u are shared between the speech
// path (prenet -> E_s -> E_u -> D_u) and the unit path (unit embeddings ->
// E_u -> D_u); that shared middle is what lets bilingual unit pairs teach
// the translation direction to the speech side.
//
// Pre-training losses:
//   speech: span-mask the prenet output, encode, and predict the masked
//     frames' units from both the E_s output (mid) and the E_u output
//     (final), cosine-scored against the shared codeword table.
//   unit: teacher-forced cross-entropy from source units to target units
//     through E_u and D_u.
// Fine-tuning: teacher-forced cross-entropy from source speech to target
// units through the full path, no masking or mixing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/ops.hpp"
#include "s2s/rng.hpp"
#include "s2s/seq2seq.hpp"
#include "s2s/transformer.hpp"
#include "s2s/units.hpp"

namespace s2s {

struct Speech2SConfig {
  TransformerConfig enc_s;
  TransformerConfig enc_u;
  TransformerConfig dec_u;
  int64_t k = 100;
  int64_t feat_dim = 16;
  double mask_start_prob = 0.08;
  int64_t mask_span_len = 10;
  double mix_prob = 0.2;
  double pred_temperature = 0.1;

  void validate() const {
    enc_s.validate();
    enc_u.validate();
    dec_u.validate();
    S2S_CHECK(enc_s.model_dim == enc_u.model_dim &&
                  enc_u.model_dim == dec_u.model_dim,
              "stack dims must agree");
    S2S_CHECK(k >= 1 && feat_dim >= 1, "vocab/feature dims");
    S2S_CHECK(mask_start_prob >= 0.0 && mask_start_prob <= 1.0, "mask prob");
    S2S_CHECK(mask_span_len >= 1, "span length");
    S2S_CHECK(mix_prob >= 0.0 && mix_prob <= 1.0, "mix prob");
    S2S_CHECK(pred_temperature > 0.0, "temperature");
  }
};

struct LossReport {
  double l_speech = 0.0;
  double l_unit = 0.0;
  double l_total = 0.0;
  int64_t masked_frame_count = 0;
  int64_t unit_token_count = 0;
};

// A padded batch of feature matrices with frame-aligned unit labels
// (k-means cluster space). labels[i] = kIgnoreTarget at padded slots.
struct SpeechBatch {
  int64_t b = 0, t = 0;
  Tensor features;            // [B,T,feat_dim]
  std::vector<uint8_t> pad;   // B*T
  std::vector<int64_t> labels;  // B*T
  std::vector<int64_t> lengths;
};

inline SpeechBatch make_speech_batch(
    const std::vector<const FeatureMatrix*>& feats,
    const std::vector<const std::vector<int64_t>*>& frame_labels) {
  S2S_CHECK(!feats.empty(), "empty speech batch");
  S2S_CHECK(frame_labels.empty() || frame_labels.size() == feats.size(),
            "label list size");
  SpeechBatch out;
  out.b = static_cast<int64_t>(feats.size());
  const int64_t d = feats[0]->d;
  for (const FeatureMatrix* f : feats) {
    S2S_CHECK(f->d == d && f->t >= 1, "inconsistent feature batch");
    out.t = std::max(out.t, f->t);
  }
  out.features = Tensor::zeros({out.b, out.t, d});
  out.pad.assign(out.b * out.t, 1);
  out.labels.assign(out.b * out.t, kIgnoreTarget);
  for (int64_t i = 0; i < out.b; ++i) {
    const FeatureMatrix* f = feats[i];
    out.lengths.push_back(f->t);
    std::copy(f->data.begin(), f->data.end(),
              out.features.data().begin() + i * out.t * d);
    for (int64_t j = 0; j < f->t; ++j) out.pad[i * out.t + j] = 0;
    if (!frame_labels.empty()) {
      S2S_CHECK(static_cast<int64_t>(frame_labels[i]->size()) == f->t,
                "labels not frame-aligned");
      for (int64_t j = 0; j < f->t; ++j)
        out.labels[i * out.t + j] = (*frame_labels[i])[j];
    }
  }
  return out;
}

struct DecodeResult {
  UnitSequence units;  // reduced
  double score = 0.0;  // length-normalized log prob
  bool finished = false;
};

class Speech2SModel {
 public:
  // Draw order (prenet, mask_emb, enc_s, unit_emb, enc_u, dec_u, heads) is
  // fixed; it pins initial weights to (config, seed).
  Speech2SModel(const Speech2SConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t d = cfg_.enc_s.model_dim;
    const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d));
    prenet_ = ConvPrenet(cfg_.feat_dim, d, "prenet", rng, &params_);
    mask_emb_ = make_param({d}, "mask_emb", &params_, rng, emb_scale);
    enc_s_ = Encoder(cfg_.enc_s, "enc_s", rng, &params_);
    unit_emb_ = make_param({unit_vocab_size(cfg_.k), d}, "unit_emb", &params_,
                           rng, emb_scale);
    enc_u_ = Encoder(cfg_.enc_u, "enc_u", rng, &params_);
    dec_u_ = Decoder(cfg_.dec_u, "dec_u", rng, &params_);
    head_mid_ = Linear(d, d, "head_mid", rng, &params_);
    head_fin_ = Linear(d, d, "head_fin", rng, &params_);
    // zero init: a fresh decoder scores the whole unit vocab uniformly
    out_head_ = Linear(d, unit_vocab_size(cfg_.k), "out_head", rng, &params_,
                       /*zero_init=*/true);
  }

  const Speech2SConfig& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  // the named pieces, for composing paths by hand
  const Encoder& enc_s() const { return enc_s_; }
  const Encoder& enc_u() const { return enc_u_; }
  const Decoder& dec_u() const { return dec_u_; }
  const Tensor& unit_embedding() const { return unit_emb_; }
  const Tensor& mask_embedding() const { return mask_emb_; }
  const Linear& head_mid() const { return head_mid_; }
  const Linear& head_fin() const { return head_fin_; }

  // -- masking / mixing samplers (pure given the rng state) ----------------

  // Every real frame starts a span with prob mask_start_prob; spans run
  // mask_span_len frames, clipped at the sequence end, and overlap freely.
  std::vector<uint8_t> sample_span_mask(const SpeechBatch& batch,
                                        Rng& rng) const {
    std::vector<uint8_t> flags(batch.b * batch.t, 0);
    for (int64_t i = 0; i < batch.b; ++i) {
      const int64_t len = batch.lengths[i];
      for (int64_t j = 0; j < len; ++j)
        if (rng.next_bernoulli(cfg_.mask_start_prob)) {
          const int64_t end = std::min(len, j + cfg_.mask_span_len);
          for (int64_t m = j; m < end; ++m) flags[i * batch.t + m] = 1;
        }
    }
    return flags;
  }

  // Unmasked real frames flip to their unit embedding with prob mix_prob.
  // Masked frames are never mixed (that would leak the prediction target).
  std::vector<uint8_t> sample_mix_flags(const SpeechBatch& batch,
                                        const std::vector<uint8_t>& mask_flags,
                                        Rng& rng) const {
    std::vector<uint8_t> flags(batch.b * batch.t, 0);
    if (cfg_.mix_prob == 0.0) return flags;
    for (int64_t i = 0; i < batch.b; ++i)
      for (int64_t j = 0; j < batch.lengths[i]; ++j) {
        const int64_t at = i * batch.t + j;
        if (mask_flags[at]) continue;
        if (rng.next_bernoulli(cfg_.mix_prob)) flags[at] = 1;
      }
    return flags;
  }

  // -- forward pieces -------------------------------------------------------

  Tensor prenet_forward(const SpeechBatch& batch) const {
    return prenet_.forward(batch.features, batch.pad);
  }

  // Cosine-scored unit logits [N, K] for hidden rows [N, D] through one of
  // the prediction heads. Temperature-scaled; zero-norm rows score 0.
  Tensor predict_units(const Tensor& h_rows, bool final_head) const {
    const Linear& proj = final_head ? head_fin_ : head_mid_;
    Tensor p = l2_normalize_rows(proj.forward(h_rows));
    Tensor cw = l2_normalize_rows(slice(unit_emb_, 0, 0, cfg_.k));
    return scale(matmul(p, transpose2d(cw)), 1.0 / cfg_.pred_temperature);
  }

  // Masked speech objective. Returns the scalar loss node; fills report.
  Tensor loss_speech(const SpeechBatch& batch, Rng& rng, bool training,
                     LossReport* report) const {
    Tensor h_pre = prenet_forward(batch);
    const std::vector<uint8_t> mask_flags = sample_span_mask(batch, rng);
    Tensor h_masked = mask_replace(h_pre, mask_flags, mask_emb_);
    Tensor h_m = enc_s_.forward(h_masked, batch.pad, rng, training);

    const std::vector<uint8_t> mix_flags =
        sample_mix_flags(batch, mask_flags, rng);
    Tensor h_for_eu = h_m;
    if (std::find(mix_flags.begin(), mix_flags.end(), 1) != mix_flags.end()) {
      std::vector<int64_t> ids(batch.labels.size());
      for (size_t i = 0; i < ids.size(); ++i)
        ids[i] = mix_flags[i] ? batch.labels[i] : 0;
      Tensor repl = embedding(unit_emb_, ids, {batch.b, batch.t});
      h_for_eu = mix_rows(h_m, mix_flags, repl);
    }
    Tensor h_f = enc_u_.forward(h_for_eu, batch.pad, rng, training);

    std::vector<int64_t> targets(batch.labels.size(), kIgnoreTarget);
    int64_t masked = 0;
    for (size_t i = 0; i < targets.size(); ++i)
      if (mask_flags[i] && batch.labels[i] != kIgnoreTarget) {
        targets[i] = batch.labels[i];
        ++masked;
      }
    if (report) report->masked_frame_count = masked;
    const int64_t d = cfg_.enc_s.model_dim;
    Tensor rows_m = reshape(h_m, {batch.b * batch.t, d});
    Tensor rows_f = reshape(h_f, {batch.b * batch.t, d});
    Tensor l_mid = cross_entropy(predict_units(rows_m, false), targets,
                                 kIgnoreTarget);
    Tensor l_fin = cross_entropy(predict_units(rows_f, true), targets,
                                 kIgnoreTarget);
    Tensor total = add(l_mid, l_fin);
    if (report) report->l_speech = total.item();
    return total;
  }

  // Unit-to-unit objective: E_u on embedded source units, teacher-forced
  // D_u on the target, plain cross-entropy over units + EOS.
  Tensor loss_unit(const std::vector<std::vector<int64_t>>& src,
                   const std::vector<std::vector<int64_t>>& tgt, Rng& rng,
                   bool training, LossReport* report) const {
    S2S_CHECK(!src.empty() && src.size() == tgt.size(), "unit pair batch");
    for (const auto& s : src) S2S_CHECK(!s.empty(), "empty source units");
    IdBatch sb = batch_ids(src, unit_pad_id(cfg_.k));
    Tensor memory =
        enc_u_.forward(embedding(unit_emb_, sb.ids, {sb.b, sb.l}), sb.pad,
                       rng, training);
    Tensor loss = decode_ce(memory, sb.pad, tgt, rng, training, report);
    if (report) report->l_unit = loss.item();
    return loss;
  }

  Tensor pretrain_loss(const SpeechBatch* speech,
                       const std::vector<std::vector<int64_t>>* unit_src,
                       const std::vector<std::vector<int64_t>>* unit_tgt,
                       Rng& rng, bool training, LossReport* report) const {
    S2S_CHECK(speech != nullptr || unit_src != nullptr,
              "pretrain batch has neither branch");
    Tensor l_sp, l_un;
    if (speech) l_sp = loss_speech(*speech, rng, training, report);
    if (unit_src) {
      S2S_CHECK(unit_tgt && unit_src->size() == unit_tgt->size(),
                "unit branch needs matched src/tgt");
      l_un = loss_unit(*unit_src, *unit_tgt, rng, training, report);
    }
    Tensor total = l_sp.defined() && l_un.defined() ? add(l_sp, l_un)
                   : l_sp.defined()                 ? l_sp
                                                    : l_un;
    if (report) report->l_total = total.item();
    return total;
  }

  // Full-path supervised loss: speech in, target units out. No masking, no
  // mixing, dropout only when training.
  Tensor finetune_loss(const SpeechBatch& batch,
                       const std::vector<std::vector<int64_t>>& tgt, Rng& rng,
                       bool training, LossReport* report) const {
    S2S_CHECK(static_cast<int64_t>(tgt.size()) == batch.b, "target count");
    Tensor memory = encode_speech(batch, rng, training);
    Tensor loss = decode_ce(memory, batch.pad, tgt, rng, training, report);
    if (report) {
      report->l_unit = loss.item();
      report->l_total = loss.item();
    }
    return loss;
  }

  // prenet -> E_s -> E_u, the inference-time encoder composition.
  Tensor encode_speech(const SpeechBatch& batch, Rng& rng,
                       bool training) const {
    Tensor h = enc_s_.forward(prenet_forward(batch), batch.pad, rng, training);
    return enc_u_.forward(h, batch.pad, rng, training);
  }

  // Teacher-forced decoder logits [B, L, k+4] for a prepared batch. Also
  // the evaluation hook for next-unit accuracy.
  Tensor decoder_logits(const Tensor& memory,
                        const std::vector<uint8_t>& mem_pad,
                        const TeacherBatch& teach, Rng& rng,
                        bool training) const {
    Tensor dec_emb = embedding(unit_emb_, teach.inputs.ids,
                               {teach.inputs.b, teach.inputs.l});
    Tensor hidden = dec_u_.forward(dec_emb, teach.inputs.pad, memory, mem_pad,
                                   rng, training);
    return out_head_.forward(hidden);
  }

  // Log probs over the unit vocabulary for the next position after feeding
  // prefix_ids (BOS included by the caller) to the decoder.
  std::vector<double> last_logprobs(const Tensor& memory,
                                    const std::vector<uint8_t>& mem_pad,
                                    const std::vector<int64_t>& prefix) const {
    NoGradGuard ng;
    Rng dummy(0);
    const int64_t l = static_cast<int64_t>(prefix.size());
    std::vector<uint8_t> no_pad(l, 0);
    Tensor dec_emb = embedding(unit_emb_, prefix, {1, l});
    Tensor hidden =
        dec_u_.forward(dec_emb, no_pad, memory, mem_pad, dummy, false);
    Tensor logits = out_head_.forward(hidden);
    const int64_t v = unit_vocab_size(cfg_.k);
    std::vector<double> lp(v);
    log_softmax_row(logits.data().data() + (l - 1) * v, v, lp.data());
    return lp;
  }

  // Length-normalized beam search. PAD, BOS and UNK never appear in
  // hypotheses; EOS competes for beam slots like any unit, and an EOS
  // extension retires its hypothesis into the finished pool. Ties sort by
  // lowest token id, so beam 1 reproduces a greedy argmax rollout token for
  // token. A finished hypothesis always beats an unfinished one.
  DecodeResult decode_units(const FeatureMatrix& feat, int64_t beam_size,
                            int64_t max_len, double length_penalty) const {
    S2S_CHECK(beam_size >= 1 && max_len >= 1, "beam params");
    NoGradGuard ng;
    Rng dummy(0);
    SpeechBatch batch = make_speech_batch({&feat}, {});
    Tensor memory = encode_speech(batch, dummy, false);
    const int64_t k = cfg_.k;
    const int64_t bos = unit_bos_id(k), eos = unit_eos_id(k);

    struct Hyp {
      std::vector<int64_t> ids;  // BOS + units
      double logp = 0.0;
    };
    // normalized score; gen_len counts emitted tokens (units, + EOS when
    // finished)
    auto norm = [length_penalty](double logp, int64_t gen_len) {
      return logp / std::pow(static_cast<double>(gen_len), length_penalty);
    };
    std::vector<Hyp> live{{{bos}, 0.0}};
    bool have_finished = false;
    Hyp best_fin;
    double best_fin_score = 0.0;
    for (int64_t step = 0; step < max_len && !live.empty(); ++step) {
      struct Cand {
        double logp;
        int64_t parent, token;
      };
      std::vector<Cand> cands;
      for (size_t h = 0; h < live.size(); ++h) {
        const std::vector<double> lp =
            last_logprobs(memory, batch.pad, live[h].ids);
        for (int64_t j = 0; j < k; ++j)
          cands.push_back({live[h].logp + lp[j],
                           static_cast<int64_t>(h), j});
        cands.push_back({live[h].logp + lp[eos],
                         static_cast<int64_t>(h), eos});
      }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.logp != b.logp) return a.logp > b.logp;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      });
      if (static_cast<int64_t>(cands.size()) > beam_size)
        cands.resize(beam_size);
      std::vector<Hyp> next;
      for (const Cand& c : cands) {
        if (c.token == eos) {
          const int64_t gen_len =
              static_cast<int64_t>(live[c.parent].ids.size());  // units + EOS
          const double score = norm(c.logp, gen_len);
          if (!have_finished || score > best_fin_score) {
            have_finished = true;
            best_fin_score = score;
            best_fin = live[c.parent];
            best_fin.logp = c.logp;
          }
          continue;
        }
        Hyp h = live[c.parent];
        h.ids.push_back(c.token);
        h.logp = c.logp;
        next.push_back(std::move(h));
      }
      live.swap(next);
    }

    DecodeResult res;
    UnitSequence raw;
    if (have_finished) {
      raw.units.assign(best_fin.ids.begin() + 1, best_fin.ids.end());
      res.finished = true;
      res.score = best_fin_score;
    } else {
      // max_len exhausted with no EOS ranked: fall back to the best live
      S2S_CHECK(!live.empty(), "no hypotheses");
      int64_t best = 0;
      double best_score =
          norm(live[0].logp, static_cast<int64_t>(live[0].ids.size()) - 1);
      for (size_t h = 1; h < live.size(); ++h) {
        const double s =
            norm(live[h].logp, static_cast<int64_t>(live[h].ids.size()) - 1);
        if (s > best_score) {
          best_score = s;
          best = static_cast<int64_t>(h);
        }
      }
      raw.units.assign(live[best].ids.begin() + 1, live[best].ids.end());
      raw.truncated = true;
      res.finished = false;
      res.score = best_score;
    }
    res.units = reduce_units(raw);
    return res;
  }

 private:
  // Teacher-forced decode + cross-entropy against tgt + EOS, mean over the
  // real target tokens.
  Tensor decode_ce(const Tensor& memory, const std::vector<uint8_t>& mem_pad,
                   const std::vector<std::vector<int64_t>>& tgt, Rng& rng,
                   bool training, LossReport* report) const {
    TeacherBatch teach = make_teacher_batch(tgt, unit_pad_id(cfg_.k),
                                            unit_bos_id(cfg_.k),
                                            unit_eos_id(cfg_.k));
    Tensor logits = decoder_logits(memory, mem_pad, teach, rng, training);
    const int64_t v = unit_vocab_size(cfg_.k);
    if (report) report->unit_token_count = teach.token_count;
    return cross_entropy(reshape(logits, {logits.numel() / v, v}),
                         teach.targets, kIgnoreTarget);
  }

  Speech2SConfig cfg_;
  ParamRegistry params_;
  ConvPrenet prenet_;
  Tensor mask_emb_;
  Encoder enc_s_, enc_u_;
  Tensor unit_emb_;
  Decoder dec_u_;
  Linear head_mid_, head_fin_, out_head_;
};

}  // namespace s2s
