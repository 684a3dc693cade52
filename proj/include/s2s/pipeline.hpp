// include/s2s/pipeline.hpp

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

// Training orchestration. Steps are absolute: resuming from a checkpoint at
// step s and training to step n consumes the random stream exactly as an
// uninterrupted n-step run would, so the loss logs match bit for bit. One
// Rng drives everything inside the loop (batch sampling, masking, mixing,
// dropout); its four state words go into the checkpoint.
//
// Unit sequences here live in k-means cluster space. Natural records get
// their training targets by tokenizing the target-side speech; synthetic
// records (from augmentation) already store model units in units_tgt.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "s2s/bleu.hpp"
#include "s2s/io.hpp"
#include "s2s/kmeans.hpp"
#include "s2s/model.hpp"
#include "s2s/text_to_unit.hpp"
#include "s2s/toyworld.hpp"

namespace s2s {

struct TrainPlan {
  int64_t steps = 3000;
  int64_t batch_size = 16;       // speech branch / supervised batch
  int64_t unit_batch_size = 16;  // unit-pair branch
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  int64_t warmup_steps = -1;  // -1: 10% of steps
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0: never mid-run

  int64_t resolved_warmup() const {
    return warmup_steps < 0 ? steps / 10 : warmup_steps;
  }
  void validate() const {
    S2S_CHECK(steps >= 0, "steps must be >= 0");
    S2S_CHECK(batch_size >= 1 && unit_batch_size >= 1, "batch sizes");
    S2S_CHECK(lr >= 0.0, "lr");
    S2S_CHECK(resolved_warmup() <= std::max<int64_t>(steps, 1),
              "warmup_steps must not exceed steps");
  }
};

// Seed streams hanging off plan.seed. Model inits get their own seeds from
// the caller; these cover the in-loop randomness only. data_size_protocol
// reuses the finetune stream per cell so that fraction 1.0 reproduces a
// plain fine-tune run bit for bit.
inline Rng pretrain_stream(const TrainPlan& plan) {
  return Rng(Rng::derive_seed(plan.seed, 2));
}
inline Rng finetune_stream(const TrainPlan& plan) {
  return Rng(Rng::derive_seed(plan.seed, 3));
}

struct TrainLogRow {
  int64_t step = 0;
  double l_speech = 0.0;
  double l_unit = 0.0;
  double l_total = 0.0;
};

inline void save_loss_log(const std::string& path,
                          const std::vector<TrainLogRow>& rows) {
  atomic_write(path, [&](std::ostream& os) {
    os << "step,l_speech,l_unit,l_total\n";
    char buf[96];
    for (const TrainLogRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(r.step), r.l_speech, r.l_unit,
                    r.l_total);
      os << buf;
    }
  });
}

// ---------------------------------------------------------------------------
// training views over a corpus

struct SpeechExample {
  FeatureMatrix feat;
  std::vector<int64_t> labels;  // per-frame cluster ids
};

struct UnitPair {
  std::vector<int64_t> src, tgt;  // reduced, cluster space
};

struct TranslationExample {
  FeatureMatrix feat;           // source speech
  std::vector<int64_t> labels;  // per-frame cluster ids (source)
  std::vector<int64_t> target_units;  // reduced, cluster space
  bool synthetic = false;
};

// Unlabeled speech stream for pre-training: every feature matrix in the
// corpus, both languages, source side first within a record.
inline std::vector<SpeechExample> speech_examples(const ToyCorpus& corpus,
                                                  const KMeansModel& km) {
  std::vector<SpeechExample> out;
  for (const ToyRecord& r : corpus.records) {
    if (r.has_feat_src)
      out.push_back({r.feat_src, kmeans_assign(km, r.feat_src).units});
    if (r.has_feat_tgt)
      out.push_back({r.feat_tgt, kmeans_assign(km, r.feat_tgt).units});
  }
  return out;
}

inline std::vector<UnitPair> unit_pairs(const ToyCorpus& corpus,
                                        const KMeansModel& km) {
  std::vector<UnitPair> out;
  for (const ToyRecord& r : corpus.records) {
    if (!r.has_feat_src || !r.has_feat_tgt) continue;
    UnitPair p;
    p.src = reduce_units(kmeans_assign(km, r.feat_src)).units;
    p.tgt = reduce_units(kmeans_assign(km, r.feat_tgt)).units;
    if (p.src.empty() || p.tgt.empty()) continue;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<TranslationExample> translation_examples(
    const ToyCorpus& corpus, const KMeansModel& km) {
  std::vector<TranslationExample> out;
  for (const ToyRecord& r : corpus.records) {
    S2S_CHECK(r.has_feat_src, "translation record lacks source features");
    TranslationExample ex;
    ex.feat = r.feat_src;
    ex.labels = kmeans_assign(km, r.feat_src).units;
    ex.synthetic = r.synthetic_target;
    if (r.synthetic_target) {
      ex.target_units = r.units_tgt;  // already model units
    } else {
      S2S_CHECK(r.has_feat_tgt, "natural record lacks target features");
      ex.target_units = reduce_units(kmeans_assign(km, r.feat_tgt)).units;
    }
    if (ex.target_units.empty()) continue;
    out.push_back(std::move(ex));
  }
  return out;
}

struct T2uData {
  std::vector<std::vector<int64_t>> texts;
  std::vector<std::vector<int64_t>> units;
};

// (text, tokenized speech) pairs for text-to-unit training, one side.
inline T2uData t2u_training_data(const ToyCorpus& corpus,
                                 const KMeansModel& km, bool target_side) {
  T2uData out;
  for (const ToyRecord& r : corpus.records) {
    const bool have = target_side ? r.has_feat_tgt : r.has_feat_src;
    if (!have) continue;
    const FeatureMatrix& f = target_side ? r.feat_tgt : r.feat_src;
    std::vector<int64_t> u = reduce_units(kmeans_assign(km, f)).units;
    if (u.empty()) continue;
    out.texts.push_back(text_to_ids(target_side ? r.text_tgt : r.text_src));
    out.units.push_back(std::move(u));
  }
  return out;
}

// ---------------------------------------------------------------------------
// training loops

namespace detail {

inline double warmup_lr(const TrainPlan& plan, int64_t step) {
  const int64_t w = plan.resolved_warmup();
  if (w <= 0 || step >= w) return plan.lr;
  return plan.lr * static_cast<double>(step) / static_cast<double>(w);
}

inline std::vector<int64_t> draw_indices(Rng& rng, int64_t n, int64_t count) {
  std::vector<int64_t> idx(count);
  for (int64_t i = 0; i < count; ++i)
    idx[i] = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n)));
  return idx;
}

}  // namespace detail

using StepHook = std::function<void(int64_t step, Rng& rng)>;

// Train from absolute step start_step (exclusive) to plan.steps (inclusive).
// Fresh runs pass start_step=0; resumed runs pass the checkpointed step and
// the restored rng/optimizer. Appends one row per executed step to *log.
inline void run_pretrain(Speech2SModel& model, Adam& opt, Rng& rng,
                         const std::vector<SpeechExample>& speech,
                         const std::vector<UnitPair>& pairs,
                         const TrainPlan& plan, int64_t start_step,
                         std::vector<TrainLogRow>* log,
                         const StepHook& hook = nullptr) {
  plan.validate();
  S2S_CHECK(!speech.empty(), "pretrain needs speech examples");
  const int64_t ns = static_cast<int64_t>(speech.size());
  const int64_t np = static_cast<int64_t>(pairs.size());
  for (int64_t step = start_step + 1; step <= plan.steps; ++step) {
    opt.set_lr(detail::warmup_lr(plan, step));

    const auto sp_idx = detail::draw_indices(rng, ns, plan.batch_size);
    std::vector<const FeatureMatrix*> feats;
    std::vector<const std::vector<int64_t>*> labels;
    for (int64_t i : sp_idx) {
      feats.push_back(&speech[i].feat);
      labels.push_back(&speech[i].labels);
    }
    SpeechBatch batch = make_speech_batch(feats, labels);

    std::vector<std::vector<int64_t>> usrc, utgt;
    if (np > 0) {
      const auto up_idx = detail::draw_indices(rng, np, plan.unit_batch_size);
      for (int64_t i : up_idx) {
        usrc.push_back(pairs[i].src);
        utgt.push_back(pairs[i].tgt);
      }
    }

    LossReport report;
    Tensor loss = model.pretrain_loss(&batch, np > 0 ? &usrc : nullptr,
                                      np > 0 ? &utgt : nullptr, rng, true,
                                      &report);
    S2S_REQUIRE(is_finite(report.l_total),
                "pretrain loss diverged at step ", step);
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (log)
      log->push_back({step, report.l_speech, report.l_unit, report.l_total});
    if (hook) hook(step, rng);
  }
}

inline void run_finetune(Speech2SModel& model, Adam& opt, Rng& rng,
                         const std::vector<TranslationExample>& data,
                         const TrainPlan& plan, int64_t start_step,
                         std::vector<TrainLogRow>* log,
                         const StepHook& hook = nullptr) {
  plan.validate();
  S2S_CHECK(!data.empty(), "finetune needs translation examples");
  const int64_t n = static_cast<int64_t>(data.size());
  for (int64_t step = start_step + 1; step <= plan.steps; ++step) {
    opt.set_lr(detail::warmup_lr(plan, step));
    const auto idx = detail::draw_indices(rng, n, plan.batch_size);
    std::vector<const FeatureMatrix*> feats;
    std::vector<const std::vector<int64_t>*> labels;
    std::vector<std::vector<int64_t>> tgt;
    for (int64_t i : idx) {
      feats.push_back(&data[i].feat);
      labels.push_back(&data[i].labels);
      tgt.push_back(data[i].target_units);
    }
    SpeechBatch batch = make_speech_batch(feats, labels);
    LossReport report;
    Tensor loss = model.finetune_loss(batch, tgt, rng, true, &report);
    S2S_REQUIRE(is_finite(report.l_total),
                "finetune loss diverged at step ", step);
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (log)
      log->push_back({step, report.l_speech, report.l_unit, report.l_total});
    if (hook) hook(step, rng);
  }
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalOptions {
  int64_t beam_size = 4;
  int64_t max_len = 64;
  double length_penalty = 0.6;
};

struct EvalReport {
  double unit_bleu = 0.0;
  double exact_match_rate = 0.0;
  double teacher_forced_accuracy = 0.0;
  int64_t n_examples = 0;
};

// Inverse mapping for semantic exact match: model units -> generator units
// -> semantic ids, via the target-language parser.
struct SemanticEval {
  const ToyLanguage* tgt_lang = nullptr;
  std::vector<int64_t> cluster_to_unit;
};

inline std::string eval_report_lines(const EvalReport& r) {
  return str_cat("unit_bleu=", r.unit_bleu,
                 "\nexact_match_rate=", r.exact_match_rate,
                 "\nteacher_forced_accuracy=", r.teacher_forced_accuracy,
                 "\nn_examples=", r.n_examples, "\n");
}

inline EvalReport evaluate(const Speech2SModel& model,
                           const std::vector<TranslationExample>& data,
                           const EvalOptions& opts,
                           const SemanticEval* sem = nullptr,
                           const std::vector<std::vector<int64_t>>* semantic_refs =
                               nullptr) {
  S2S_CHECK(!data.empty(), "evaluate needs a nonempty corpus");
  S2S_CHECK(semantic_refs == nullptr || semantic_refs->size() == data.size(),
            "semantic reference count");
  NoGradGuard ng;
  EvalReport report;
  report.n_examples = static_cast<int64_t>(data.size());

  std::vector<std::vector<int64_t>> hyps, refs;
  int64_t exact = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    DecodeResult dec = model.decode_units(data[i].feat, opts.beam_size,
                                          opts.max_len, opts.length_penalty);
    refs.push_back(data[i].target_units);
    if (sem && semantic_refs) {
      std::vector<int64_t> mapped;
      mapped.reserve(dec.units.units.size());
      for (int64_t c : dec.units.units) {
        S2S_CHECK(c >= 0 &&
                      c < static_cast<int64_t>(sem->cluster_to_unit.size()),
                  "cluster id out of range");
        mapped.push_back(sem->cluster_to_unit[c]);
      }
      const auto parsed =
          units_to_semantic(*sem->tgt_lang, reduce_units(mapped).units);
      if (parsed && *parsed == (*semantic_refs)[i]) ++exact;
    }
    hyps.push_back(std::move(dec.units.units));
  }
  report.unit_bleu = corpus_bleu(hyps, refs);
  report.exact_match_rate =
      static_cast<double>(exact) / static_cast<double>(data.size());

  // Teacher-forced next-unit accuracy, batched; padding positions carry
  // ignored targets so batching does not change the count.
  Rng dummy(0);
  int64_t correct = 0, total = 0;
  const int64_t bsz = 16;
  for (size_t lo = 0; lo < data.size(); lo += bsz) {
    const size_t hi = std::min(data.size(), lo + bsz);
    std::vector<const FeatureMatrix*> feats;
    std::vector<std::vector<int64_t>> tgt;
    for (size_t i = lo; i < hi; ++i) {
      feats.push_back(&data[i].feat);
      tgt.push_back(data[i].target_units);
    }
    SpeechBatch batch = make_speech_batch(feats, {});
    Tensor memory = model.encode_speech(batch, dummy, false);
    TeacherBatch tb = make_teacher_batch(tgt, unit_pad_id(model.config().k),
                                         unit_bos_id(model.config().k),
                                         unit_eos_id(model.config().k));
    Tensor logits = model.decoder_logits(memory, batch.pad, tb, dummy, false);
    const int64_t vocab = logits.shape()[2];
    const int64_t l = tb.inputs.l;
    for (int64_t row = 0; row < tb.inputs.b * l; ++row) {
      const int64_t t = tb.targets[row];
      if (t == kIgnoreTarget) continue;
      const double* p = logits.data().data() + row * vocab;
      int64_t best = 0;
      for (int64_t c = 1; c < vocab; ++c)
        if (p[c] > p[best]) best = c;
      ++total;
      if (best == t) ++correct;
    }
  }
  report.teacher_forced_accuracy =
      total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// augmentation (synthetic targets from a text-to-unit model)

struct AugmentStats {
  int64_t added = 0;
  int64_t dropped_truncated = 0;
};

// Appends copies of st_text records with units_tgt replaced by t2u output.
// Originals are untouched; synthetic records carry the provenance flag and
// no target-side features.
inline ToyCorpus augment_finetune_set(const ToyCorpus& s2st,
                                      const ToyCorpus& st_text,
                                      const TextToUnitModel& t2u,
                                      AugmentStats* stats,
                                      int64_t max_len = 64) {
  ToyCorpus out = s2st;
  AugmentStats local;
  for (const ToyRecord& r : st_text.records) {
    S2S_CHECK(r.has_feat_src, "augmentation record lacks source features");
    TextSequence text{text_to_ids(r.text_tgt)};
    UnitSequence units = t2u.infer(text, max_len);
    if (units.truncated || units.units.empty()) {
      ++local.dropped_truncated;
      continue;
    }
    ToyRecord synth = r;
    synth.units_tgt = units.units;  // model units, not generator units
    synth.has_feat_tgt = false;
    synth.feat_tgt = FeatureMatrix{};
    synth.synthetic_target = true;
    out.records.push_back(std::move(synth));
    ++local.added;
  }
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// data-size study

// First k slots of a seeded permutation, reported in ascending order so a
// fraction of 1.0 is the identity and reproduces plain fine-tuning exactly.
inline std::vector<int64_t> subsample_indices(int64_t n, double fraction,
                                              uint64_t seed) {
  S2S_CHECK(n >= 1, "empty corpus");
  S2S_CHECK(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0,1]");
  const int64_t k = std::llround(static_cast<double>(n) * fraction);
  S2S_CHECK(k >= 1, "fraction ", fraction, " of ", n, " examples is empty");
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j =
        i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct DataSizeRow {
  double fraction = 0.0;
  std::string init_name;
  EvalReport report;
};

using ModelFactory =
    std::function<std::unique_ptr<Speech2SModel>(const std::string& init)>;

// For each fraction and each named init, fine-tune on the same deterministic
// subset and evaluate. The factory returns a fresh model per cell (loaded
// from a checkpoint or built from scratch).
inline std::vector<DataSizeRow> data_size_protocol(
    const ModelFactory& factory, const std::vector<std::string>& inits,
    const std::vector<TranslationExample>& train,
    const std::vector<TranslationExample>& eval_data,
    const std::vector<double>& fractions, const TrainPlan& plan,
    const EvalOptions& opts, const SemanticEval* sem = nullptr,
    const std::vector<std::vector<int64_t>>* semantic_refs = nullptr) {
  S2S_CHECK(!fractions.empty() && !inits.empty(), "empty study grid");
  std::vector<DataSizeRow> rows;
  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    const auto idx =
        subsample_indices(static_cast<int64_t>(train.size()), fractions[fi],
                          Rng::derive_seed(plan.seed, 1000 + fi));
    std::vector<TranslationExample> subset;
    subset.reserve(idx.size());
    for (int64_t i : idx) subset.push_back(train[i]);
    for (const std::string& init : inits) {
      std::unique_ptr<Speech2SModel> model = factory(init);
      S2S_CHECK(model != nullptr, "factory returned no model for ", init);
      Adam opt(model->params(), plan.lr, plan.beta1, plan.beta2,
               plan.adam_eps);
      Rng rng = finetune_stream(plan);
      run_finetune(*model, opt, rng, subset, plan, 0, nullptr);
      rows.push_back({fractions[fi], init,
                      evaluate(*model, eval_data, opts, sem, semantic_refs)});
    }
  }
  return rows;
}

}  // namespace s2s
