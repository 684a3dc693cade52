// include/s2s/checkpoint.hpp

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

// Checkpoint container: magic "S2S1", version u32, then four blocks.
//   config:    named f64 scalars (model hyperparameters, model_type tag)
//   tensors:   name-indexed table (name, dtype, shape, f64 payload)
//   optimizer: adam step count + first/second moments keyed by param name
//   rng:       four u64 words of training-stream state
// followed by the absolute training step (u64). Doubles round-trip through
// their bit pattern, so save/load/resume is exact, not approximately equal.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2s/adam.hpp"
#include "s2s/io.hpp"
#include "s2s/model.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"
#include "s2s/text_to_unit.hpp"
#include "s2s/transformer.hpp"

namespace s2s {

constexpr double kModelTypeSpeech2S = 1.0;
constexpr double kModelTypeTextToUnit = 2.0;

using ConfigMap = std::map<std::string, double>;

struct StoredTensor {
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  ConfigMap config;
  std::vector<std::pair<std::string, StoredTensor>> tensors;
  bool has_optimizer = false;
  uint64_t adam_steps = 0;
  std::map<std::string, std::vector<double>> moment1;
  std::map<std::string, std::vector<double>> moment2;
  bool has_rng = false;
  std::array<uint64_t, 4> rng_state = {0, 0, 0, 0};
  uint64_t step = 0;

  const StoredTensor* find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// config flattening

inline void config_put_stack(ConfigMap* m, const std::string& prefix,
                             const TransformerConfig& c) {
  (*m)[prefix + ".num_layers"] = static_cast<double>(c.num_layers);
  (*m)[prefix + ".model_dim"] = static_cast<double>(c.model_dim);
  (*m)[prefix + ".num_heads"] = static_cast<double>(c.num_heads);
  (*m)[prefix + ".ffn_dim"] = static_cast<double>(c.ffn_dim);
  (*m)[prefix + ".dropout"] = c.dropout;
  (*m)[prefix + ".rel_bias_buckets"] = static_cast<double>(c.rel_bias_buckets);
  (*m)[prefix + ".rel_bias_max_distance"] =
      static_cast<double>(c.rel_bias_max_distance);
}

inline double config_get(const ConfigMap& m, const std::string& key) {
  const auto it = m.find(key);
  S2S_REQUIRE(it != m.end(), "checkpoint config is missing field ", key);
  return it->second;
}

inline TransformerConfig config_get_stack(const ConfigMap& m,
                                          const std::string& prefix) {
  TransformerConfig c;
  c.num_layers = static_cast<int64_t>(config_get(m, prefix + ".num_layers"));
  c.model_dim = static_cast<int64_t>(config_get(m, prefix + ".model_dim"));
  c.num_heads = static_cast<int64_t>(config_get(m, prefix + ".num_heads"));
  c.ffn_dim = static_cast<int64_t>(config_get(m, prefix + ".ffn_dim"));
  c.dropout = config_get(m, prefix + ".dropout");
  c.rel_bias_buckets =
      static_cast<int64_t>(config_get(m, prefix + ".rel_bias_buckets"));
  c.rel_bias_max_distance =
      static_cast<int64_t>(config_get(m, prefix + ".rel_bias_max_distance"));
  return c;
}

inline ConfigMap speech2s_config_map(const Speech2SConfig& c) {
  ConfigMap m;
  m["model_type"] = kModelTypeSpeech2S;
  config_put_stack(&m, "enc_s", c.enc_s);
  config_put_stack(&m, "enc_u", c.enc_u);
  config_put_stack(&m, "dec_u", c.dec_u);
  m["k"] = static_cast<double>(c.k);
  m["feat_dim"] = static_cast<double>(c.feat_dim);
  m["mask_start_prob"] = c.mask_start_prob;
  m["mask_span_len"] = static_cast<double>(c.mask_span_len);
  m["mix_prob"] = c.mix_prob;
  m["pred_temperature"] = c.pred_temperature;
  return m;
}

inline Speech2SConfig speech2s_config_from_map(const ConfigMap& m) {
  S2S_REQUIRE(config_get(m, "model_type") == kModelTypeSpeech2S,
              "checkpoint is not a speech2s model");
  Speech2SConfig c;
  c.enc_s = config_get_stack(m, "enc_s");
  c.enc_u = config_get_stack(m, "enc_u");
  c.dec_u = config_get_stack(m, "dec_u");
  c.k = static_cast<int64_t>(config_get(m, "k"));
  c.feat_dim = static_cast<int64_t>(config_get(m, "feat_dim"));
  c.mask_start_prob = config_get(m, "mask_start_prob");
  c.mask_span_len = static_cast<int64_t>(config_get(m, "mask_span_len"));
  c.mix_prob = config_get(m, "mix_prob");
  c.pred_temperature = config_get(m, "pred_temperature");
  return c;
}

inline ConfigMap t2u_config_map(const TextToUnitConfig& c) {
  ConfigMap m;
  m["model_type"] = kModelTypeTextToUnit;
  config_put_stack(&m, "enc", c.enc);
  config_put_stack(&m, "dec", c.dec);
  m["text_vocab"] = static_cast<double>(c.text_vocab);
  m["k"] = static_cast<double>(c.k);
  return m;
}

inline TextToUnitConfig t2u_config_from_map(const ConfigMap& m) {
  S2S_REQUIRE(config_get(m, "model_type") == kModelTypeTextToUnit,
              "checkpoint is not a text-to-unit model");
  TextToUnitConfig c;
  c.enc = config_get_stack(m, "enc");
  c.dec = config_get_stack(m, "dec");
  c.text_vocab = static_cast<int64_t>(config_get(m, "text_vocab"));
  c.k = static_cast<int64_t>(config_get(m, "k"));
  return c;
}

// ---------------------------------------------------------------------------
// save / load

inline void save_checkpoint(const std::string& path, const ConfigMap& config,
                            const ParamRegistry& params, const Adam* opt,
                            const Rng* train_rng, uint64_t step) {
  atomic_write(path, [&](std::ostream& os) {
    os.write("S2S1", 4);
    put_u32(os, 1);

    put_u32(os, static_cast<uint32_t>(config.size()));
    for (const auto& [key, value] : config) {
      put_string(os, key);
      put_f64(os, value);
    }

    put_u32(os, static_cast<uint32_t>(params.size()));
    for (const Tensor& p : params) {
      S2S_CHECK(!p.name().empty(), "cannot checkpoint an unnamed tensor");
      put_string(os, p.name());
      put_u8(os, 0);  // dtype: f64
      put_u8(os, static_cast<uint8_t>(p.rank()));
      for (int64_t d : p.shape()) put_u32(os, static_cast<uint32_t>(d));
      for (double v : p.data()) put_f64(os, v);
    }

    put_u8(os, opt ? 1 : 0);
    if (opt) {
      put_u64(os, opt->step_count());
      const auto& ps = opt->params();
      put_u32(os, static_cast<uint32_t>(ps.size()));
      for (size_t i = 0; i < ps.size(); ++i) {
        put_string(os, ps[i].name());
        const auto& m = opt->moment1()[i];
        const auto& v = opt->moment2()[i];
        put_u64(os, m.size());
        for (double x : m) put_f64(os, x);
        for (double x : v) put_f64(os, x);
      }
    }

    put_u8(os, train_rng ? 1 : 0);
    if (train_rng) {
      for (uint64_t w : train_rng->state()) put_u64(os, w);
    }

    put_u64(os, step);
  });
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  S2S_REQUIRE(is.good(), "cannot open ", path);
  expect_magic(is, "S2S1", path);
  const uint32_t version = get_u32(is, "version");
  S2S_REQUIRE(version == 1, "unsupported checkpoint version ", version,
              " in ", path);
  Checkpoint ckpt;

  const uint32_t n_config = get_u32(is, "config count");
  for (uint32_t i = 0; i < n_config; ++i) {
    const std::string key = get_string(is, "config key");
    ckpt.config[key] = get_f64(is, "config value");
  }

  const uint32_t n_tensors = get_u32(is, "tensor count");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = get_string(is, "tensor name");
    const uint8_t dtype = get_u8(is, "tensor dtype");
    S2S_REQUIRE(dtype == 0, "tensor ", name, ": unsupported dtype ",
                static_cast<int>(dtype));
    const uint8_t rank = get_u8(is, "tensor rank");
    StoredTensor t;
    for (uint8_t r = 0; r < rank; ++r)
      t.shape.push_back(get_u32(is, "tensor dim"));
    t.data.resize(static_cast<size_t>(shape_numel(t.shape)));
    for (double& v : t.data) v = get_f64(is, "tensor payload");
    ckpt.tensors.emplace_back(name, std::move(t));
  }

  if (get_u8(is, "optimizer presence")) {
    ckpt.has_optimizer = true;
    ckpt.adam_steps = get_u64(is, "adam step count");
    const uint32_t n = get_u32(is, "optimizer param count");
    for (uint32_t i = 0; i < n; ++i) {
      const std::string name = get_string(is, "optimizer param name");
      const uint64_t numel = get_u64(is, "optimizer numel");
      std::vector<double> m(numel), v(numel);
      for (double& x : m) x = get_f64(is, "optimizer moment1");
      for (double& x : v) x = get_f64(is, "optimizer moment2");
      ckpt.moment1[name] = std::move(m);
      ckpt.moment2[name] = std::move(v);
    }
  }

  if (get_u8(is, "rng presence")) {
    ckpt.has_rng = true;
    for (uint64_t& w : ckpt.rng_state) w = get_u64(is, "rng state");
  }

  ckpt.step = get_u64(is, "step");
  return ckpt;
}

// Copy stored tensors into a live parameter registry, matching by name.
inline void restore_params(const Checkpoint& ckpt, ParamRegistry* params) {
  size_t used = 0;
  for (Tensor& p : *params) {
    const StoredTensor* t = ckpt.find_tensor(p.name());
    S2S_REQUIRE(t != nullptr, "checkpoint is missing tensor ", p.name());
    S2S_REQUIRE(t->shape == p.shape(), "tensor ", p.name(),
                ": checkpoint shape ", shape_str(t->shape),
                " != model shape ", shape_str(p.shape()));
    p.data() = t->data;
    ++used;
  }
  S2S_REQUIRE(used == ckpt.tensors.size(),
              "checkpoint has ", ckpt.tensors.size(),
              " tensors but the model consumed ", used);
}

inline void restore_adam(const Checkpoint& ckpt, Adam* opt) {
  S2S_REQUIRE(ckpt.has_optimizer, "checkpoint has no optimizer block");
  opt->set_step_count(ckpt.adam_steps);
  const auto& ps = opt->params();
  for (size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps[i].name();
    const auto m_it = ckpt.moment1.find(name);
    const auto v_it = ckpt.moment2.find(name);
    S2S_REQUIRE(m_it != ckpt.moment1.end() && v_it != ckpt.moment2.end(),
                "checkpoint optimizer block is missing ", name);
    S2S_REQUIRE(m_it->second.size() == opt->moment1()[i].size(),
                "optimizer moment size mismatch for ", name);
    opt->moment1()[i] = m_it->second;
    opt->moment2()[i] = v_it->second;
  }
}

}  // namespace s2s
