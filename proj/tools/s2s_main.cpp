// tools/s2s_main.cpp

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

// Command-line frontend over the s2s library. One command per invocation:
//
//   s2s gen-data        synthesize the toy corpora (train/dev/test + a
//                       shifted-domain pair for augmentation experiments)
//   s2s tokenize        kmeans-fit / assign / train-t2u / apply-t2u
//   s2s pretrain        masked-unit + unit-translation pretraining
//   s2s finetune        supervised speech-to-unit fine-tuning
//   s2s augment         enlarge a fine-tuning set with t2u synthetic targets
//   s2s eval            beam decode + BLEU / exact match / teacher forcing
//   s2s data-size-study fine-tune on nested fractions, compare inits
//
// Config comes from one JSON file (--config); flags override file values.
// Every run echoes its fully resolved config into the output directory.
// Artifacts are written via temp-file-then-rename and never overwritten
// unless --force is given.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s2s/checkpoint.hpp"
#include "s2s/io.hpp"
#include "s2s/pipeline.hpp"

namespace s2s {
namespace {

using nlohmann::json;

// Bad config contents are a usage problem (exit 2), not a runtime failure.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// configuration

struct WorldCfg {
  uint64_t seed = 101;
  int64_t semantic_vocab = 50;
  int64_t k = 100;
  int64_t feat_dim = 16;
};

struct CorpusCfg {
  int64_t train_n = 5000, dev_n = 200, test_n = 200;
  int64_t shift_text_n = 400, shift_test_n = 150;
  int64_t len_lo = 3, len_hi = 10;
  int64_t frames_lo = 2, frames_hi = 4;
  int64_t shift_len_lo = 8, shift_len_hi = 14;
  int64_t shift_frames_lo = 3, shift_frames_hi = 5;
  uint64_t seed_train = 201, seed_dev = 202, seed_test = 203;
  uint64_t seed_shift_text = 204, seed_shift_test = 205;
};

struct ModelCfg {
  int64_t enc_s_layers = 1, enc_u_layers = 1, dec_u_layers = 1;
  int64_t model_dim = 32, num_heads = 4, ffn_dim = 128;
  double dropout = 0.1;
  int64_t rel_bias_buckets = 32, rel_bias_max_distance = 128;
  double mask_start_prob = 0.08;
  int64_t mask_span_len = 10;
  double mix_prob = 0.2;
  double pred_temperature = 0.1;
};

struct T2uCfg {
  int64_t enc_layers = 1, dec_layers = 1;
  int64_t model_dim = 48, num_heads = 4, ffn_dim = 192;
  double dropout = 0.1;
  int64_t steps = 4000, batch_size = 16;
  double lr = 1e-3;
  int64_t max_len = 64;
};

struct TrainCfg {
  int64_t pretrain_steps = 3000, finetune_steps = 2000;
  int64_t batch_size = 16, unit_batch_size = 16;
  double lr = 5e-4, beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-8;
  int64_t warmup_steps = -1;
  int64_t checkpoint_every = 0;
};

struct TokenizeCfg {
  int64_t max_frames = 200000;
  int64_t iters = 100;
  uint64_t seed = 301;
};

struct EvalCfg {
  int64_t beam_size = 4;
  int64_t max_len = 64;
  double length_penalty = 0.6;
};

struct StudyCfg {
  std::vector<double> fractions = {0.05, 0.25, 1.0};
};

struct Cfg {
  WorldCfg world;
  CorpusCfg corpus;
  ModelCfg model;
  T2uCfg t2u;
  TrainCfg train;
  TokenizeCfg tokenize;
  EvalCfg eval;
  StudyCfg study;
};

void reject_unknown(const json& j, const std::string& section,
                    const std::vector<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError(str_cat("unknown config key '", section, key, "'"));
  }
}

template <typename T>
void pick(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

Cfg parse_cfg(const json& j) {
  Cfg c;
  reject_unknown(j, "", {"world", "corpus", "model", "t2u", "train",
                         "tokenize", "eval", "study"});
  if (j.contains("world")) {
    const json& w = j["world"];
    reject_unknown(w, "world.", {"seed", "semantic_vocab", "k", "feat_dim"});
    pick(w, "seed", &c.world.seed);
    pick(w, "semantic_vocab", &c.world.semantic_vocab);
    pick(w, "k", &c.world.k);
    pick(w, "feat_dim", &c.world.feat_dim);
  }
  if (j.contains("corpus")) {
    const json& p = j["corpus"];
    reject_unknown(p, "corpus.",
                   {"train_n", "dev_n", "test_n", "shift_text_n",
                    "shift_test_n", "len_lo", "len_hi", "frames_lo",
                    "frames_hi", "shift_len_lo", "shift_len_hi",
                    "shift_frames_lo", "shift_frames_hi", "seed_train",
                    "seed_dev", "seed_test", "seed_shift_text",
                    "seed_shift_test"});
    pick(p, "train_n", &c.corpus.train_n);
    pick(p, "dev_n", &c.corpus.dev_n);
    pick(p, "test_n", &c.corpus.test_n);
    pick(p, "shift_text_n", &c.corpus.shift_text_n);
    pick(p, "shift_test_n", &c.corpus.shift_test_n);
    pick(p, "len_lo", &c.corpus.len_lo);
    pick(p, "len_hi", &c.corpus.len_hi);
    pick(p, "frames_lo", &c.corpus.frames_lo);
    pick(p, "frames_hi", &c.corpus.frames_hi);
    pick(p, "shift_len_lo", &c.corpus.shift_len_lo);
    pick(p, "shift_len_hi", &c.corpus.shift_len_hi);
    pick(p, "shift_frames_lo", &c.corpus.shift_frames_lo);
    pick(p, "shift_frames_hi", &c.corpus.shift_frames_hi);
    pick(p, "seed_train", &c.corpus.seed_train);
    pick(p, "seed_dev", &c.corpus.seed_dev);
    pick(p, "seed_test", &c.corpus.seed_test);
    pick(p, "seed_shift_text", &c.corpus.seed_shift_text);
    pick(p, "seed_shift_test", &c.corpus.seed_shift_test);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, "model.",
                   {"enc_s_layers", "enc_u_layers", "dec_u_layers",
                    "model_dim", "num_heads", "ffn_dim", "dropout",
                    "rel_bias_buckets", "rel_bias_max_distance",
                    "mask_start_prob", "mask_span_len", "mix_prob",
                    "pred_temperature"});
    pick(m, "enc_s_layers", &c.model.enc_s_layers);
    pick(m, "enc_u_layers", &c.model.enc_u_layers);
    pick(m, "dec_u_layers", &c.model.dec_u_layers);
    pick(m, "model_dim", &c.model.model_dim);
    pick(m, "num_heads", &c.model.num_heads);
    pick(m, "ffn_dim", &c.model.ffn_dim);
    pick(m, "dropout", &c.model.dropout);
    pick(m, "rel_bias_buckets", &c.model.rel_bias_buckets);
    pick(m, "rel_bias_max_distance", &c.model.rel_bias_max_distance);
    pick(m, "mask_start_prob", &c.model.mask_start_prob);
    pick(m, "mask_span_len", &c.model.mask_span_len);
    pick(m, "mix_prob", &c.model.mix_prob);
    pick(m, "pred_temperature", &c.model.pred_temperature);
  }
  if (j.contains("t2u")) {
    const json& t = j["t2u"];
    reject_unknown(t, "t2u.",
                   {"enc_layers", "dec_layers", "model_dim", "num_heads",
                    "ffn_dim", "dropout", "steps", "batch_size", "lr",
                    "max_len"});
    pick(t, "enc_layers", &c.t2u.enc_layers);
    pick(t, "dec_layers", &c.t2u.dec_layers);
    pick(t, "model_dim", &c.t2u.model_dim);
    pick(t, "num_heads", &c.t2u.num_heads);
    pick(t, "ffn_dim", &c.t2u.ffn_dim);
    pick(t, "dropout", &c.t2u.dropout);
    pick(t, "steps", &c.t2u.steps);
    pick(t, "batch_size", &c.t2u.batch_size);
    pick(t, "lr", &c.t2u.lr);
    pick(t, "max_len", &c.t2u.max_len);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, "train.",
                   {"pretrain_steps", "finetune_steps", "batch_size",
                    "unit_batch_size", "lr", "beta1", "beta2", "adam_eps",
                    "warmup_steps", "checkpoint_every"});
    pick(t, "pretrain_steps", &c.train.pretrain_steps);
    pick(t, "finetune_steps", &c.train.finetune_steps);
    pick(t, "batch_size", &c.train.batch_size);
    pick(t, "unit_batch_size", &c.train.unit_batch_size);
    pick(t, "lr", &c.train.lr);
    pick(t, "beta1", &c.train.beta1);
    pick(t, "beta2", &c.train.beta2);
    pick(t, "adam_eps", &c.train.adam_eps);
    pick(t, "warmup_steps", &c.train.warmup_steps);
    pick(t, "checkpoint_every", &c.train.checkpoint_every);
  }
  if (j.contains("tokenize")) {
    const json& t = j["tokenize"];
    reject_unknown(t, "tokenize.", {"max_frames", "iters", "seed"});
    pick(t, "max_frames", &c.tokenize.max_frames);
    pick(t, "iters", &c.tokenize.iters);
    pick(t, "seed", &c.tokenize.seed);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown(e, "eval.", {"beam_size", "max_len", "length_penalty"});
    pick(e, "beam_size", &c.eval.beam_size);
    pick(e, "max_len", &c.eval.max_len);
    pick(e, "length_penalty", &c.eval.length_penalty);
  }
  if (j.contains("study")) {
    const json& s = j["study"];
    reject_unknown(s, "study.", {"fractions"});
    pick(s, "fractions", &c.study.fractions);
  }
  return c;
}

Cfg load_cfg(const std::string& path) {
  if (path.empty()) return Cfg{};
  std::ifstream is(path);
  if (!is.good()) throw UsageError(str_cat("cannot open config ", path));
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw UsageError(str_cat("config ", path, ": ", e.what()));
  }
  if (!j.is_object())
    throw UsageError(str_cat("config ", path, ": top level must be an object"));
  return parse_cfg(j);
}

json cfg_to_json(const Cfg& c) {
  json j;
  j["world"] = {{"seed", c.world.seed},
                {"semantic_vocab", c.world.semantic_vocab},
                {"k", c.world.k},
                {"feat_dim", c.world.feat_dim}};
  j["corpus"] = {{"train_n", c.corpus.train_n},
                 {"dev_n", c.corpus.dev_n},
                 {"test_n", c.corpus.test_n},
                 {"shift_text_n", c.corpus.shift_text_n},
                 {"shift_test_n", c.corpus.shift_test_n},
                 {"len_lo", c.corpus.len_lo},
                 {"len_hi", c.corpus.len_hi},
                 {"frames_lo", c.corpus.frames_lo},
                 {"frames_hi", c.corpus.frames_hi},
                 {"shift_len_lo", c.corpus.shift_len_lo},
                 {"shift_len_hi", c.corpus.shift_len_hi},
                 {"shift_frames_lo", c.corpus.shift_frames_lo},
                 {"shift_frames_hi", c.corpus.shift_frames_hi},
                 {"seed_train", c.corpus.seed_train},
                 {"seed_dev", c.corpus.seed_dev},
                 {"seed_test", c.corpus.seed_test},
                 {"seed_shift_text", c.corpus.seed_shift_text},
                 {"seed_shift_test", c.corpus.seed_shift_test}};
  j["model"] = {{"enc_s_layers", c.model.enc_s_layers},
                {"enc_u_layers", c.model.enc_u_layers},
                {"dec_u_layers", c.model.dec_u_layers},
                {"model_dim", c.model.model_dim},
                {"num_heads", c.model.num_heads},
                {"ffn_dim", c.model.ffn_dim},
                {"dropout", c.model.dropout},
                {"rel_bias_buckets", c.model.rel_bias_buckets},
                {"rel_bias_max_distance", c.model.rel_bias_max_distance},
                {"mask_start_prob", c.model.mask_start_prob},
                {"mask_span_len", c.model.mask_span_len},
                {"mix_prob", c.model.mix_prob},
                {"pred_temperature", c.model.pred_temperature}};
  j["t2u"] = {{"enc_layers", c.t2u.enc_layers},
              {"dec_layers", c.t2u.dec_layers},
              {"model_dim", c.t2u.model_dim},
              {"num_heads", c.t2u.num_heads},
              {"ffn_dim", c.t2u.ffn_dim},
              {"dropout", c.t2u.dropout},
              {"steps", c.t2u.steps},
              {"batch_size", c.t2u.batch_size},
              {"lr", c.t2u.lr},
              {"max_len", c.t2u.max_len}};
  j["train"] = {{"pretrain_steps", c.train.pretrain_steps},
                {"finetune_steps", c.train.finetune_steps},
                {"batch_size", c.train.batch_size},
                {"unit_batch_size", c.train.unit_batch_size},
                {"lr", c.train.lr},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"warmup_steps", c.train.warmup_steps},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["tokenize"] = {{"max_frames", c.tokenize.max_frames},
                   {"iters", c.tokenize.iters},
                   {"seed", c.tokenize.seed}};
  j["eval"] = {{"beam_size", c.eval.beam_size},
               {"max_len", c.eval.max_len},
               {"length_penalty", c.eval.length_penalty}};
  j["study"] = {{"fractions", c.study.fractions}};
  return j;
}

// ---------------------------------------------------------------------------
// config -> library structs

Speech2SConfig speech2s_cfg(const Cfg& c) {
  Speech2SConfig m;
  m.enc_s.num_layers = c.model.enc_s_layers;
  m.enc_s.model_dim = c.model.model_dim;
  m.enc_s.num_heads = c.model.num_heads;
  m.enc_s.ffn_dim = c.model.ffn_dim;
  m.enc_s.dropout = c.model.dropout;
  m.enc_s.rel_bias_buckets = c.model.rel_bias_buckets;
  m.enc_s.rel_bias_max_distance = c.model.rel_bias_max_distance;
  m.enc_u = m.enc_s;
  m.dec_u = m.enc_s;
  m.enc_u.num_layers = c.model.enc_u_layers;
  m.dec_u.num_layers = c.model.dec_u_layers;
  m.k = c.world.k;
  m.feat_dim = c.world.feat_dim;
  m.mask_start_prob = c.model.mask_start_prob;
  m.mask_span_len = c.model.mask_span_len;
  m.mix_prob = c.model.mix_prob;
  m.pred_temperature = c.model.pred_temperature;
  return m;
}

TextToUnitConfig t2u_model_cfg(const Cfg& c) {
  TextToUnitConfig t;
  t.enc.num_layers = c.t2u.enc_layers;
  t.enc.model_dim = c.t2u.model_dim;
  t.enc.num_heads = c.t2u.num_heads;
  t.enc.ffn_dim = c.t2u.ffn_dim;
  t.enc.dropout = c.t2u.dropout;
  t.dec = t.enc;
  t.dec.num_layers = c.t2u.dec_layers;
  t.k = c.world.k;
  return t;
}

TrainPlan plan_from(const Cfg& c, int64_t steps, uint64_t seed) {
  TrainPlan plan;
  plan.steps = steps;
  plan.batch_size = c.train.batch_size;
  plan.unit_batch_size = c.train.unit_batch_size;
  plan.lr = c.train.lr;
  plan.beta1 = c.train.beta1;
  plan.beta2 = c.train.beta2;
  plan.adam_eps = c.train.adam_eps;
  plan.warmup_steps = c.train.warmup_steps;
  plan.checkpoint_every = c.train.checkpoint_every;
  plan.seed = seed;
  return plan;
}

EvalOptions eval_opts(const Cfg& c) {
  EvalOptions o;
  o.beam_size = c.eval.beam_size;
  o.max_len = c.eval.max_len;
  o.length_penalty = c.eval.length_penalty;
  return o;
}

// Rebuild the generator world a corpus came from; the meta block pins it.
struct World {
  ToyLanguageSpec lang;
  RenderSpec render;
};

World world_from_meta(const CorpusMeta& meta) {
  World w;
  w.lang = gen_language_pair(meta.world_seed, meta.semantic_vocab, meta.k);
  w.render = gen_render_spec(meta.world_seed, meta.k, meta.d);
  return w;
}

// ---------------------------------------------------------------------------
// artifact plumbing

void refuse_overwrite(const std::string& path, bool force) {
  if (!force && std::filesystem::exists(path))
    throw RuntimeError(
        str_cat("refusing to overwrite ", path, " (use --force)"));
}

void refuse_corpus_overwrite(const std::string& path, bool force) {
  refuse_overwrite(path, force);
  refuse_overwrite(feature_sibling(path), force);
}

std::string out_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// Resolved-config echo: what this run actually used, flags folded in.
void echo_config(const std::string& dir, const Cfg& cfg,
                 const std::string& command, const json& extra, bool force) {
  const std::string path = out_path(dir, "config.json");
  refuse_overwrite(path, force);
  json j = cfg_to_json(cfg);
  j["command"] = command;
  j["run"] = extra;
  atomic_write(path, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeError(str_cat("cannot create ", dir, ": ", ec.message()));
}

void save_model_ckpt(const std::string& path, const ConfigMap& config,
                     const ParamRegistry& params, const Adam* opt,
                     const Rng* rng, uint64_t step, bool force) {
  refuse_overwrite(path, force);
  save_checkpoint(path, config, params, opt, rng, step);
}

struct CkptHook {
  std::string dir;
  ConfigMap config;
  Speech2SModel* model = nullptr;
  Adam* opt = nullptr;
  int64_t every = 0;
  bool force = false;

  StepHook fn() {
    if (every <= 0) return nullptr;
    return [this](int64_t step, Rng& rng) {
      if (step % every != 0) return;
      save_model_ckpt(out_path(dir, str_cat("model.step", step, ".ckpt")),
                      config, model->params(), opt, &rng,
                      static_cast<uint64_t>(step), force);
    };
  }
};

// k-means training frames: both feature sides, capped, deterministic order.
std::pair<std::vector<double>, int64_t> gather_frames(const ToyCorpus& corpus,
                                                      int64_t cap) {
  std::vector<double> frames;
  int64_t n = 0;
  for (const ToyRecord& r : corpus.records) {
    for (const FeatureMatrix* f : {&r.feat_src, &r.feat_tgt}) {
      if ((f == &r.feat_src && !r.has_feat_src) ||
          (f == &r.feat_tgt && !r.has_feat_tgt))
        continue;
      const int64_t take = std::min(f->t, cap - n);
      if (take <= 0) break;
      frames.insert(frames.end(), f->data.begin(),
                    f->data.begin() + take * f->d);
      n += take;
    }
    if (n >= cap) break;
  }
  return {std::move(frames), n};
}

int64_t count_or_default(CLI::App* cmd, const char* flag, int64_t flag_val,
                         int64_t cfg_val) {
  return cmd->count(flag) > 0 ? flag_val : cfg_val;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(const Cfg& cfg, const std::string& out, bool force) {
  prepare_out_dir(out);
  for (const char* name :
       {"train.tsv", "dev.tsv", "test.tsv", "shift-text.tsv",
        "shift-test.tsv"})
    refuse_corpus_overwrite(out_path(out, name), force);
  echo_config(out, cfg, "gen-data", {{"out", out}}, force);

  ToyLanguageSpec lang = gen_language_pair(cfg.world.seed,
                                           cfg.world.semantic_vocab,
                                           cfg.world.k);
  RenderSpec render =
      gen_render_spec(cfg.world.seed, cfg.world.k, cfg.world.feat_dim);

  CorpusMeta base;
  base.world_seed = cfg.world.seed;
  base.semantic_vocab = cfg.world.semantic_vocab;
  base.k = cfg.world.k;
  base.d = cfg.world.feat_dim;
  base.len_lo = cfg.corpus.len_lo;
  base.len_hi = cfg.corpus.len_hi;
  base.frames_lo = cfg.corpus.frames_lo;
  base.frames_hi = cfg.corpus.frames_hi;
  CorpusMeta shift = base;
  shift.len_lo = cfg.corpus.shift_len_lo;
  shift.len_hi = cfg.corpus.shift_len_hi;
  shift.frames_lo = cfg.corpus.shift_frames_lo;
  shift.frames_hi = cfg.corpus.shift_frames_hi;

  struct Split {
    const char* file;
    const char* name;
    CorpusMeta meta;
    uint64_t seed;
    int64_t n;
  };
  const Split splits[] = {
      {"train.tsv", "train", base, cfg.corpus.seed_train, cfg.corpus.train_n},
      {"dev.tsv", "dev", base, cfg.corpus.seed_dev, cfg.corpus.dev_n},
      {"test.tsv", "test", base, cfg.corpus.seed_test, cfg.corpus.test_n},
      {"shift-text.tsv", "shift-text", shift, cfg.corpus.seed_shift_text,
       cfg.corpus.shift_text_n},
      {"shift-test.tsv", "shift-test", shift, cfg.corpus.seed_shift_test,
       cfg.corpus.shift_test_n},
  };
  // one shared registry: no semantic sequence appears in two splits
  std::unordered_set<std::string> taken;
  for (const Split& s : splits) {
    CorpusMeta meta = s.meta;
    meta.split = s.name;
    meta.corpus_seed = s.seed;
    ToyCorpus corpus = gen_parallel_corpus(lang, render, meta, s.n, &taken);
    save_corpus(out_path(out, s.file), corpus);
    std::printf("wrote %s: %lld records\n", s.file,
                static_cast<long long>(corpus.records.size()));
  }
  return 0;
}

int cmd_kmeans_fit(const Cfg& cfg, const std::string& corpus_path,
                   const std::string& out, uint64_t seed, bool force) {
  prepare_out_dir(out);
  const std::string model_path = out_path(out, "kmeans.bin");
  refuse_overwrite(model_path, force);
  echo_config(out, cfg, "tokenize kmeans-fit",
              {{"corpus", corpus_path}, {"out", out}, {"seed", seed}}, force);

  ToyCorpus corpus = load_corpus(corpus_path);
  auto [frames, n] = gather_frames(corpus, cfg.tokenize.max_frames);
  KMeansFitInfo info;
  KMeansModel km = kmeans_fit(frames, n, corpus.meta.d, cfg.world.k, seed,
                              cfg.tokenize.iters, &info);
  save_kmeans(model_path, km);
  std::printf("fit k=%lld on %lld frames, %lld iterations, inertia %.6f\n",
              static_cast<long long>(km.k), static_cast<long long>(n),
              static_cast<long long>(info.iterations), info.inertia);
  return 0;
}

int cmd_assign(const Cfg& cfg, const std::string& corpus_path,
               const std::string& kmeans_path, const std::string& out,
               const std::string& side, bool frame_level, bool force) {
  prepare_out_dir(out);
  const std::string units_path = out_path(out, "units.tsv");
  refuse_overwrite(units_path, force);
  echo_config(out, cfg, "tokenize assign",
              {{"corpus", corpus_path},
               {"kmeans", kmeans_path},
               {"out", out},
               {"side", side},
               {"frame_level", frame_level}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  KMeansModel km = load_kmeans(kmeans_path);
  std::vector<std::vector<int64_t>> seqs;
  for (const ToyRecord& r : corpus.records) {
    const bool tgt = side == "tgt";
    const bool have = tgt ? r.has_feat_tgt : r.has_feat_src;
    if (!have)
      throw RuntimeError(str_cat("record ", seqs.size(), " has no ", side,
                                 " features"));
    UnitSequence u = kmeans_assign(km, tgt ? r.feat_tgt : r.feat_src);
    seqs.push_back(frame_level ? u.units : reduce_units(u).units);
  }
  save_unit_corpus(units_path, seqs);
  std::printf("wrote %s: %lld sequences (%s, %s)\n", units_path.c_str(),
              static_cast<long long>(seqs.size()), side.c_str(),
              frame_level ? "frame-level" : "reduced");
  return 0;
}

int cmd_train_t2u(const Cfg& cfg, const std::string& corpus_path,
                  const std::string& kmeans_path, const std::string& out,
                  const std::string& side, uint64_t seed, bool force) {
  prepare_out_dir(out);
  const std::string ckpt_path = out_path(out, "t2u.ckpt");
  const std::string log_path = out_path(out, "t2u_loss.csv");
  refuse_overwrite(ckpt_path, force);
  refuse_overwrite(log_path, force);
  echo_config(out, cfg, "tokenize train-t2u",
              {{"corpus", corpus_path},
               {"kmeans", kmeans_path},
               {"out", out},
               {"side", side},
               {"seed", seed}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  KMeansModel km = load_kmeans(kmeans_path);
  T2uData data = t2u_training_data(corpus, km, side == "tgt");
  std::vector<TextSequence> texts;
  std::vector<UnitSequence> units;
  for (size_t i = 0; i < data.texts.size(); ++i) {
    texts.push_back({data.texts[i]});
    units.push_back({data.units[i], true, false});
  }
  TextToUnitModel model(t2u_model_cfg(cfg), seed);
  T2uTrainStats stats = train_text_to_unit(model, texts, units, seed,
                                           cfg.t2u.steps, cfg.t2u.batch_size,
                                           cfg.t2u.lr);
  save_checkpoint(ckpt_path, t2u_config_map(t2u_model_cfg(cfg)),
                  model.params(), nullptr, nullptr,
                  static_cast<uint64_t>(cfg.t2u.steps));
  atomic_write(log_path, [&](std::ostream& os) {
    os << "step,loss\n";
    char buf[64];
    for (size_t i = 0; i < stats.losses.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%.17g\n",
                    static_cast<long long>(i + 1), stats.losses[i]);
      os << buf;
    }
  });
  std::printf("trained t2u on %lld pairs, %lld steps, final loss %.6f\n",
              static_cast<long long>(texts.size()),
              static_cast<long long>(cfg.t2u.steps), stats.final_loss);
  return 0;
}

TextToUnitModel load_t2u(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  TextToUnitModel model(t2u_config_from_map(ckpt.config), 0);
  restore_params(ckpt, &model.params());
  return model;
}

int cmd_apply_t2u(const Cfg& cfg, const std::string& corpus_path,
                  const std::string& t2u_path, const std::string& out,
                  const std::string& side, bool force) {
  prepare_out_dir(out);
  const std::string units_path = out_path(out, "units.tsv");
  refuse_overwrite(units_path, force);
  echo_config(out, cfg, "tokenize apply-t2u",
              {{"corpus", corpus_path},
               {"t2u", t2u_path},
               {"out", out},
               {"side", side}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  TextToUnitModel model = load_t2u(t2u_path);
  // one line per record so alignment survives; truncated rows left empty
  std::vector<std::vector<int64_t>> seqs;
  int64_t truncated = 0;
  for (const ToyRecord& r : corpus.records) {
    const std::string& text = side == "tgt" ? r.text_tgt : r.text_src;
    UnitSequence u = model.infer({text_to_ids(text)}, cfg.t2u.max_len);
    if (u.truncated) {
      ++truncated;
      seqs.emplace_back();
    } else {
      seqs.push_back(u.units);
    }
  }
  save_unit_corpus(units_path, seqs);
  std::printf("converted %lld records (%lld truncated -> empty lines)\n",
              static_cast<long long>(seqs.size()),
              static_cast<long long>(truncated));
  return 0;
}

int cmd_pretrain(const Cfg& cfg, const std::string& corpus_path,
                 const std::string& kmeans_path, const std::string& out,
                 uint64_t seed, int64_t steps, bool speech_only,
                 const std::string& resume, bool force) {
  prepare_out_dir(out);
  const std::string ckpt_path = out_path(out, "model.ckpt");
  const std::string log_path = out_path(out, "loss_log.csv");
  refuse_overwrite(ckpt_path, force);
  refuse_overwrite(log_path, force);
  echo_config(out, cfg, "pretrain",
              {{"corpus", corpus_path},
               {"kmeans", kmeans_path},
               {"out", out},
               {"seed", seed},
               {"steps", steps},
               {"speech_only", speech_only},
               {"resume", resume}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  KMeansModel km = load_kmeans(kmeans_path);
  auto speech = speech_examples(corpus, km);
  auto pairs = speech_only ? std::vector<UnitPair>{} : unit_pairs(corpus, km);

  TrainPlan plan = plan_from(cfg, steps, seed);
  Speech2SModel model(speech2s_cfg(cfg), Rng::derive_seed(seed, 1));
  Adam opt(model.params(), plan.lr, plan.beta1, plan.beta2, plan.adam_eps);
  Rng rng = pretrain_stream(plan);
  int64_t start_step = 0;
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    restore_params(ckpt, &model.params());
    restore_adam(ckpt, &opt);
    S2S_REQUIRE(ckpt.has_rng, "checkpoint ", resume, " has no rng block");
    rng.set_state(ckpt.rng_state);
    start_step = static_cast<int64_t>(ckpt.step);
    std::printf("resumed from %s at step %lld\n", resume.c_str(),
                static_cast<long long>(start_step));
  }

  const ConfigMap cmap = speech2s_config_map(speech2s_cfg(cfg));
  CkptHook hook{out, cmap, &model, &opt, plan.checkpoint_every, force};
  std::vector<TrainLogRow> log;
  run_pretrain(model, opt, rng, speech, pairs, plan, start_step, &log,
               hook.fn());
  save_model_ckpt(ckpt_path, cmap, model.params(), &opt, &rng,
                  static_cast<uint64_t>(plan.steps), true);
  save_loss_log(log_path, log);
  if (!log.empty())
    std::printf("pretrain done: %zu steps, final l_speech %.6f l_unit %.6f\n",
                log.size(), log.back().l_speech, log.back().l_unit);
  return 0;
}

int cmd_finetune(const Cfg& cfg, const std::string& corpus_path,
                 const std::string& kmeans_path, const std::string& out,
                 uint64_t seed, int64_t steps, const std::string& init,
                 const std::string& resume, bool force) {
  if (!init.empty() && !resume.empty())
    throw UsageError("--init and --resume are mutually exclusive");
  prepare_out_dir(out);
  const std::string ckpt_path = out_path(out, "model.ckpt");
  const std::string log_path = out_path(out, "loss_log.csv");
  refuse_overwrite(ckpt_path, force);
  refuse_overwrite(log_path, force);
  echo_config(out, cfg, "finetune",
              {{"corpus", corpus_path},
               {"kmeans", kmeans_path},
               {"out", out},
               {"seed", seed},
               {"steps", steps},
               {"init", init},
               {"resume", resume}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  KMeansModel km = load_kmeans(kmeans_path);
  auto data = translation_examples(corpus, km);

  TrainPlan plan = plan_from(cfg, steps, seed);
  Speech2SModel model(speech2s_cfg(cfg), Rng::derive_seed(seed, 1));
  Adam opt(model.params(), plan.lr, plan.beta1, plan.beta2, plan.adam_eps);
  Rng rng = finetune_stream(plan);
  int64_t start_step = 0;
  if (!init.empty()) {
    Checkpoint ckpt = load_checkpoint(init);
    restore_params(ckpt, &model.params());
    std::printf("initialized parameters from %s\n", init.c_str());
  } else if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    restore_params(ckpt, &model.params());
    restore_adam(ckpt, &opt);
    S2S_REQUIRE(ckpt.has_rng, "checkpoint ", resume, " has no rng block");
    rng.set_state(ckpt.rng_state);
    start_step = static_cast<int64_t>(ckpt.step);
    std::printf("resumed from %s at step %lld\n", resume.c_str(),
                static_cast<long long>(start_step));
  }

  const ConfigMap cmap = speech2s_config_map(speech2s_cfg(cfg));
  CkptHook hook{out, cmap, &model, &opt, plan.checkpoint_every, force};
  std::vector<TrainLogRow> log;
  run_finetune(model, opt, rng, data, plan, start_step, &log, hook.fn());
  save_model_ckpt(ckpt_path, cmap, model.params(), &opt, &rng,
                  static_cast<uint64_t>(plan.steps), true);
  save_loss_log(log_path, log);
  if (!log.empty())
    std::printf("finetune done: %zu steps, final loss %.6f\n", log.size(),
                log.back().l_total);
  return 0;
}

int cmd_augment(const Cfg& cfg, const std::string& s2st_path,
                const std::string& st_text_path, const std::string& t2u_path,
                const std::string& out, bool force) {
  prepare_out_dir(out);
  const std::string aug_path = out_path(out, "augmented.tsv");
  refuse_corpus_overwrite(aug_path, force);
  echo_config(out, cfg, "augment",
              {{"s2st", s2st_path},
               {"st_text", st_text_path},
               {"t2u", t2u_path},
               {"out", out}},
              force);

  ToyCorpus s2st = load_corpus(s2st_path);
  ToyCorpus st_text = load_corpus(st_text_path);
  TextToUnitModel t2u = load_t2u(t2u_path);
  AugmentStats stats;
  ToyCorpus augmented =
      augment_finetune_set(s2st, st_text, t2u, &stats, cfg.t2u.max_len);
  save_corpus(aug_path, augmented);
  std::printf("augmented: %lld kept + %lld synthetic, %lld dropped "
              "(truncated)\n",
              static_cast<long long>(s2st.records.size()),
              static_cast<long long>(stats.added),
              static_cast<long long>(stats.dropped_truncated));
  return 0;
}

int cmd_eval(const Cfg& cfg, const std::string& corpus_path,
             const std::string& kmeans_path, const std::string& model_path,
             const std::string& out, bool force) {
  prepare_out_dir(out);
  const std::string report_path = out_path(out, "eval.txt");
  refuse_overwrite(report_path, force);
  echo_config(out, cfg, "eval",
              {{"corpus", corpus_path},
               {"kmeans", kmeans_path},
               {"model", model_path},
               {"out", out}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  KMeansModel km = load_kmeans(kmeans_path);
  Checkpoint ckpt = load_checkpoint(model_path);
  Speech2SModel model(speech2s_config_from_map(ckpt.config), 0);
  restore_params(ckpt, &model.params());

  auto data = translation_examples(corpus, km);
  World w = world_from_meta(corpus.meta);
  SemanticEval sem{&w.lang.tgt, map_clusters_to_units(km, w.render)};
  std::vector<std::vector<int64_t>> refs;
  for (const ToyRecord& r : corpus.records) refs.push_back(r.semantic);

  EvalReport rep = evaluate(model, data, eval_opts(cfg), &sem, &refs);
  const std::string lines = eval_report_lines(rep);
  atomic_write(report_path, [&](std::ostream& os) { os << lines; });
  std::fputs(lines.c_str(), stdout);
  return 0;
}

int cmd_study(const Cfg& cfg, const std::string& corpus_path,
              const std::string& eval_path, const std::string& kmeans_path,
              const std::vector<std::string>& init_specs,
              const std::string& out, uint64_t seed, bool force) {
  std::vector<std::string> names;
  std::map<std::string, std::string> ckpts;  // name -> path; "" = scratch
  for (const std::string& spec : init_specs) {
    const size_t eq = spec.find('=');
    const std::string name = spec.substr(0, eq);
    if (name.empty()) throw UsageError(str_cat("bad --init '", spec, "'"));
    names.push_back(name);
    ckpts[name] = eq == std::string::npos ? "" : spec.substr(eq + 1);
  }
  prepare_out_dir(out);
  const std::string table_path = out_path(out, "study.csv");
  refuse_overwrite(table_path, force);
  echo_config(out, cfg, "data-size-study",
              {{"corpus", corpus_path},
               {"eval_corpus", eval_path},
               {"kmeans", kmeans_path},
               {"inits", init_specs},
               {"out", out},
               {"seed", seed}},
              force);

  ToyCorpus corpus = load_corpus(corpus_path);
  ToyCorpus eval_corpus = load_corpus(eval_path);
  KMeansModel km = load_kmeans(kmeans_path);
  auto train = translation_examples(corpus, km);
  auto eval_data = translation_examples(eval_corpus, km);
  World w = world_from_meta(eval_corpus.meta);
  SemanticEval sem{&w.lang.tgt, map_clusters_to_units(km, w.render)};
  std::vector<std::vector<int64_t>> refs;
  for (const ToyRecord& r : eval_corpus.records) refs.push_back(r.semantic);

  const Speech2SConfig mcfg = speech2s_cfg(cfg);
  ModelFactory factory = [&](const std::string& name) {
    auto model = std::make_unique<Speech2SModel>(mcfg,
                                                 Rng::derive_seed(seed, 1));
    const std::string& path = ckpts.at(name);
    if (!path.empty()) {
      Checkpoint ckpt = load_checkpoint(path);
      restore_params(ckpt, &model->params());
    }
    return model;
  };
  TrainPlan plan = plan_from(cfg, cfg.train.finetune_steps, seed);
  auto rows = data_size_protocol(factory, names, train, eval_data,
                                 cfg.study.fractions, plan, eval_opts(cfg),
                                 &sem, &refs);
  atomic_write(table_path, [&](std::ostream& os) {
    os << "fraction,init,unit_bleu,exact_match_rate,teacher_forced_accuracy,"
          "n_examples\n";
    char buf[192];
    for (const DataSizeRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.17g,%s,%.17g,%.17g,%.17g,%lld\n",
                    r.fraction, r.init_name.c_str(), r.report.unit_bleu,
                    r.report.exact_match_rate,
                    r.report.teacher_forced_accuracy,
                    static_cast<long long>(r.report.n_examples));
      os << buf;
    }
  });
  for (const DataSizeRow& r : rows)
    std::printf("fraction %.2f  init %-12s  bleu %6.2f  exact %.3f\n",
                r.fraction, r.init_name.c_str(), r.report.unit_bleu,
                r.report.exact_match_rate);
  return 0;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"s2s: desk-scale speech-to-speech translation experiments"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")
      ->configurable(false);

  // common per-command state
  std::string out, corpus, kmeans, model_path, t2u_path, resume, init;
  std::string eval_corpus, s2st, st_text, side = "tgt";
  std::vector<std::string> init_specs;
  uint64_t seed = 0;
  int64_t steps = 0;
  bool force = false, speech_only = false, frame_level = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->fallthrough();  // lets --config appear after the subcommand
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_flag("--force", force, "overwrite existing artifacts");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "synthesize the toy corpora");
  add_common(gen);

  CLI::App* tok = app.add_subcommand("tokenize", "discretization commands");
  tok->fallthrough();
  tok->require_subcommand(1);
  CLI::App* fit = tok->add_subcommand("kmeans-fit", "fit the unit tokenizer");
  add_common(fit);
  fit->add_option("--corpus", corpus, "feature corpus")->required();
  fit->add_option("--seed", seed, "k-means init seed");
  CLI::App* assign = tok->add_subcommand("assign", "tokenize a corpus");
  add_common(assign);
  assign->add_option("--corpus", corpus, "feature corpus")->required();
  assign->add_option("--kmeans", kmeans, "tokenizer model")->required();
  assign->add_option("--side", side, "src or tgt")
      ->check(CLI::IsMember({"src", "tgt"}));
  assign->add_flag("--frame-level", frame_level,
                   "emit per-frame units instead of reduced");
  CLI::App* tt2u = tok->add_subcommand("train-t2u", "train text-to-unit");
  add_common(tt2u);
  tt2u->add_option("--corpus", corpus, "training corpus")->required();
  tt2u->add_option("--kmeans", kmeans, "tokenizer model")->required();
  tt2u->add_option("--side", side, "src or tgt")
      ->check(CLI::IsMember({"src", "tgt"}));
  tt2u->add_option("--seed", seed, "training seed")->required();
  CLI::App* at2u = tok->add_subcommand("apply-t2u", "convert text to units");
  add_common(at2u);
  at2u->add_option("--corpus", corpus, "corpus with text fields")->required();
  at2u->add_option("--t2u", t2u_path, "t2u checkpoint")->required();
  at2u->add_option("--side", side, "src or tgt")
      ->check(CLI::IsMember({"src", "tgt"}));

  CLI::App* pre = app.add_subcommand("pretrain", "joint pretraining");
  add_common(pre);
  pre->add_option("--corpus", corpus, "training corpus")->required();
  pre->add_option("--kmeans", kmeans, "tokenizer model")->required();
  pre->add_option("--seed", seed, "training seed")->required();
  pre->add_option("--steps", steps, "total optimization steps");
  pre->add_flag("--speech-only", speech_only,
                "disable the unit-translation branch");
  pre->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* fin = app.add_subcommand("finetune", "supervised fine-tuning");
  add_common(fin);
  fin->add_option("--corpus", corpus, "s2st corpus")->required();
  fin->add_option("--kmeans", kmeans, "tokenizer model")->required();
  fin->add_option("--seed", seed, "training seed")->required();
  fin->add_option("--steps", steps, "total optimization steps");
  fin->add_option("--init", init, "checkpoint for parameter initialization");
  fin->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* aug = app.add_subcommand("augment",
                                     "append t2u synthetic-target records");
  add_common(aug);
  aug->add_option("--s2st", s2st, "fine-tuning corpus")->required();
  aug->add_option("--st-text", st_text, "source-speech + target-text corpus")
      ->required();
  aug->add_option("--t2u", t2u_path, "t2u checkpoint")->required();

  CLI::App* ev = app.add_subcommand("eval", "decode and score a model");
  add_common(ev);
  ev->add_option("--corpus", corpus, "eval corpus")->required();
  ev->add_option("--kmeans", kmeans, "tokenizer model")->required();
  ev->add_option("--model", model_path, "model checkpoint")->required();

  CLI::App* st = app.add_subcommand("data-size-study",
                                    "fine-tune on nested data fractions");
  add_common(st);
  st->add_option("--corpus", corpus, "s2st corpus")->required();
  st->add_option("--eval-corpus", eval_corpus, "held-out corpus")->required();
  st->add_option("--kmeans", kmeans, "tokenizer model")->required();
  st->add_option("--init", init_specs,
                 "name or name=checkpoint (repeatable)")
      ->required();
  st->add_option("--seed", seed, "training seed")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Cfg cfg = load_cfg(config_path);

  if (app.got_subcommand(gen)) return cmd_gen_data(cfg, out, force);
  if (app.got_subcommand(tok)) {
    if (tok->got_subcommand(fit)) {
      if (fit->count("--seed") == 0) seed = cfg.tokenize.seed;
      return cmd_kmeans_fit(cfg, corpus, out, seed, force);
    }
    if (tok->got_subcommand(assign))
      return cmd_assign(cfg, corpus, kmeans, out, side, frame_level, force);
    if (tok->got_subcommand(tt2u))
      return cmd_train_t2u(cfg, corpus, kmeans, out, side, seed, force);
    return cmd_apply_t2u(cfg, corpus, t2u_path, out, side, force);
  }
  if (app.got_subcommand(pre)) {
    const int64_t n = count_or_default(pre, "--steps", steps,
                                       cfg.train.pretrain_steps);
    return cmd_pretrain(cfg, corpus, kmeans, out, seed, n, speech_only,
                        resume, force);
  }
  if (app.got_subcommand(fin)) {
    const int64_t n = count_or_default(fin, "--steps", steps,
                                       cfg.train.finetune_steps);
    return cmd_finetune(cfg, corpus, kmeans, out, seed, n, init, resume,
                        force);
  }
  if (app.got_subcommand(aug))
    return cmd_augment(cfg, s2st, st_text, t2u_path, out, force);
  if (app.got_subcommand(ev))
    return cmd_eval(cfg, corpus, kmeans, model_path, out, force);
  return cmd_study(cfg, corpus, eval_corpus, kmeans, init_specs, out, seed,
                   force);
}

}  // namespace
}  // namespace s2s

int main(int argc, char** argv) {
  try {
    return s2s::run(argc, argv);
  } catch (const s2s::UsageError& e) {
    std::fprintf(stderr, "s2s: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "s2s: %s\n", e.what());
    return 1;
  }
}
