// include/s2s/toyworld.hpp

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

// Synthetic bilingual world with exact ground truth. Two languages share a
// semantic vocabulary; each language maps a semantic token to a short word
// (its text) and a short unit code (its "pronunciation"). Unit codes are
// built from three disjoint per-language role sets:
//   - length-2 codes: (a in A, b in B)
//   - length-3 codes: (a in A, b in B, c in C)
// so a code always starts in A and never ends in A. Consequences that the
// rest of the stack depends on: concatenating codes never puts two equal
// units next to each other (run-length reduction of a sentence equals the
// plain concatenation), and parsing is unambiguous (a new code starts
// exactly at each A unit). The two languages use disjoint unit ranges
// ([0,K/2) vs [K/2,K)) and disjoint letter ranges (a-m vs n-z).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/kmeans.hpp"
#include "s2s/rng.hpp"
#include "s2s/units.hpp"

namespace s2s {

// Text token ids: 'a'..'z' -> 0..25, ' ' -> 26, PAD -> 27.
constexpr int64_t kCharSpace = 26;
constexpr int64_t kTextVocab = 28;
constexpr int64_t kTextPad = 27;

inline std::vector<int64_t> text_to_ids(const std::string& s) {
  std::vector<int64_t> ids;
  ids.reserve(s.size());
  for (char c : s) {
    if (c == ' ') {
      ids.push_back(kCharSpace);
    } else {
      S2S_CHECK(c >= 'a' && c <= 'z', "unsupported character '", c, "'");
      ids.push_back(c - 'a');
    }
  }
  return ids;
}

inline std::string ids_to_text(const std::vector<int64_t>& ids) {
  std::string s;
  for (int64_t id : ids) {
    S2S_CHECK(id >= 0 && id < kTextVocab - 1, "bad char id ", id);
    s += id == kCharSpace ? ' ' : static_cast<char>('a' + id);
  }
  return s;
}

struct ToyLanguage {
  std::vector<int64_t> a_units, b_units, c_units;     // disjoint role sets
  std::vector<std::vector<int64_t>> code;             // semantic -> units
  std::vector<std::string> word;                      // semantic -> text
  std::unordered_map<int64_t, int64_t> start_code;    // a unit -> role A rank
  // exact code -> semantic id, key = serialized units
  std::unordered_map<std::string, int64_t> code_to_semantic;

  bool is_start_unit(int64_t u) const { return start_code.count(u) > 0; }
};

struct ToyLanguageSpec {
  int64_t semantic_vocab = 50;
  int64_t k = 100;
  uint64_t seed = 0;
  ToyLanguage src, tgt;
};

struct RenderSpec {
  int64_t k = 100;
  int64_t d = 16;
  double noise_sigma = 0.0;
  double min_separation = 0.0;
  std::vector<double> prototypes;  // k rows of d

  const double* prototype(int64_t u) const { return prototypes.data() + u * d; }
};

namespace detail {

inline std::string code_key(const std::vector<int64_t>& units) {
  return units_to_line(units);
}

// One language's tables. Units come from [unit_lo, unit_lo + pool);
// letters from [letter_lo, letter_lo + letters).
inline ToyLanguage gen_language(Rng& rng, int64_t semantic_vocab,
                                int64_t unit_lo, int64_t pool,
                                int64_t letter_lo, int64_t letters) {
  // role split: 40% starts, rest halved
  const int64_t na = std::max<int64_t>(2, pool * 2 / 5);
  const int64_t nb = std::max<int64_t>(2, (pool - na) / 2);
  const int64_t nc = pool - na - nb;
  S2S_CHECK(nc >= 2, "unit pool too small: ", pool);
  ToyLanguage lang;
  for (int64_t i = 0; i < na; ++i) lang.a_units.push_back(unit_lo + i);
  for (int64_t i = 0; i < nb; ++i) lang.b_units.push_back(unit_lo + na + i);
  for (int64_t i = 0; i < nc; ++i)
    lang.c_units.push_back(unit_lo + na + nb + i);
  for (size_t i = 0; i < lang.a_units.size(); ++i)
    lang.start_code[lang.a_units[i]] = static_cast<int64_t>(i);

  const int64_t n2 = na * nb, n3 = na * nb * nc;
  S2S_CHECK(n2 + n3 >= semantic_vocab, "not enough codes");
  std::unordered_set<std::string> used_codes;
  std::unordered_set<std::string> used_words;
  for (int64_t s = 0; s < semantic_vocab; ++s) {
    // biased toward short codes to keep sentences desk-sized
    std::vector<int64_t> units;
    for (int64_t attempt = 0;; ++attempt) {
      S2S_REQUIRE(attempt < 1000, "code sampling stuck at semantic ", s);
      const bool three = rng.next_double() < 0.4;
      units.clear();
      units.push_back(lang.a_units[rng.next_below(na)]);
      units.push_back(lang.b_units[rng.next_below(nb)]);
      if (three) units.push_back(lang.c_units[rng.next_below(nc)]);
      if (used_codes.insert(code_key(units)).second) break;
    }
    lang.code.push_back(units);
    lang.code_to_semantic[code_key(units)] = s;

    std::string w;
    for (int64_t attempt = 0;; ++attempt) {
      S2S_REQUIRE(attempt < 1000, "word sampling stuck at semantic ", s);
      const int64_t len = rng.next_in(2, 4);
      w.clear();
      for (int64_t i = 0; i < len; ++i)
        w += static_cast<char>('a' + letter_lo + rng.next_below(letters));
      if (used_words.insert(w).second) break;
    }
    lang.word.push_back(w);
  }
  return lang;
}

}  // namespace detail

// Both languages, deterministically from the seed. Injectivity of the two
// maps holds by construction (codes and words are drawn without repeats).
inline ToyLanguageSpec gen_language_pair(uint64_t seed,
                                         int64_t semantic_vocab = 50,
                                         int64_t k = 100) {
  S2S_CHECK(semantic_vocab >= 10, "semantic vocab too small");
  S2S_CHECK(k >= 20 && k % 2 == 0, "unit vocab too small or odd");
  ToyLanguageSpec spec;
  spec.semantic_vocab = semantic_vocab;
  spec.k = k;
  spec.seed = seed;
  Rng rng(Rng::derive_seed(seed, 11));
  spec.src = detail::gen_language(rng, semantic_vocab, 0, k / 2, 0, 13);
  spec.tgt = detail::gen_language(rng, semantic_vocab, k / 2, k - k / 2, 13,
                                  13);
  return spec;
}

// Unit prototypes for the renderer. noise_sigma is tied to the realized
// minimum pairwise separation, so rendered frames are clusterable by
// construction.
inline RenderSpec gen_render_spec(uint64_t seed, int64_t k = 100,
                                  int64_t d = 16) {
  RenderSpec spec;
  spec.k = k;
  spec.d = d;
  Rng rng(Rng::derive_seed(seed, 12));
  spec.prototypes.resize(static_cast<size_t>(k * d));
  for (double& v : spec.prototypes) v = rng.next_gaussian();
  double min_sq = -1.0;
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = i + 1; j < k; ++j) {
      const double dist = sq_dist(spec.prototype(i), spec.prototype(j), d);
      if (min_sq < 0.0 || dist < min_sq) min_sq = dist;
    }
  spec.min_separation = std::sqrt(min_sq);
  spec.noise_sigma = spec.min_separation / 8.0;
  return spec;
}

// Sentence surface forms.
inline std::vector<int64_t> semantic_to_units(const ToyLanguage& lang,
                                              const std::vector<int64_t>& sem) {
  std::vector<int64_t> units;
  for (int64_t s : sem) {
    S2S_CHECK(s >= 0 && s < static_cast<int64_t>(lang.code.size()),
              "semantic id ", s, " out of range");
    units.insert(units.end(), lang.code[s].begin(), lang.code[s].end());
  }
  return units;
}

inline std::string semantic_to_text(const ToyLanguage& lang,
                                    const std::vector<int64_t>& sem) {
  std::string out;
  for (size_t i = 0; i < sem.size(); ++i) {
    if (i) out += ' ';
    out += lang.word[sem[i]];
  }
  return out;
}

// Inverse of semantic_to_units. Returns nothing if the sequence is not a
// valid concatenation of codes (useful to score model output).
inline std::optional<std::vector<int64_t>> units_to_semantic(
    const ToyLanguage& lang, const std::vector<int64_t>& units) {
  std::vector<int64_t> sem;
  size_t i = 0;
  while (i < units.size()) {
    if (!lang.is_start_unit(units[i])) return std::nullopt;
    std::vector<int64_t> code{units[i]};
    ++i;
    if (i >= units.size()) return std::nullopt;
    code.push_back(units[i]);
    ++i;
    if (i < units.size() && !lang.is_start_unit(units[i])) {
      code.push_back(units[i]);
      ++i;
    }
    auto it = lang.code_to_semantic.find(detail::code_key(code));
    if (it == lang.code_to_semantic.end()) return std::nullopt;
    sem.push_back(it->second);
  }
  return sem;
}

// Expansion to frame-aligned units: each reduced unit repeats for a count
// drawn uniformly from [frames_lo, frames_hi].
inline std::vector<int64_t> expand_units(const std::vector<int64_t>& reduced,
                                         int64_t frames_lo, int64_t frames_hi,
                                         Rng& rng) {
  std::vector<int64_t> frames;
  for (int64_t u : reduced) {
    const int64_t n = rng.next_in(frames_lo, frames_hi);
    for (int64_t i = 0; i < n; ++i) frames.push_back(u);
  }
  return frames;
}

// frame t = prototype[unit_t] + N(0, sigma^2) per dimension, noise drawn
// frame-major.
inline FeatureMatrix render_speech(const std::vector<int64_t>& frame_units,
                                   const RenderSpec& spec, uint64_t seed) {
  FeatureMatrix f(static_cast<int64_t>(frame_units.size()), spec.d);
  Rng rng(seed);
  for (int64_t t = 0; t < f.t; ++t) {
    const int64_t u = frame_units[t];
    S2S_CHECK(u >= 0 && u < spec.k, "unit ", u, " out of render range");
    double* row = f.row(t);
    for (int64_t j = 0; j < spec.d; ++j)
      row[j] = spec.prototype(u)[j] + spec.noise_sigma * rng.next_gaussian();
  }
  return f;
}

struct ToyRecord {
  std::vector<int64_t> semantic;
  std::string text_src, text_tgt;
  std::vector<int64_t> units_src, units_tgt;  // ground-truth reduced units
  std::vector<int64_t> frame_units_src, frame_units_tgt;
  FeatureMatrix feat_src, feat_tgt;
  bool has_feat_src = false, has_feat_tgt = false;
  bool synthetic_target = false;
};

struct CorpusMeta {
  std::string split = "train";
  uint64_t world_seed = 0;   // fixes languages and renderer
  uint64_t corpus_seed = 0;  // fixes the sampled records
  int64_t semantic_vocab = 50;
  int64_t k = 100;
  int64_t d = 16;
  int64_t len_lo = 3, len_hi = 10;
  int64_t frames_lo = 2, frames_hi = 4;
};

struct ToyCorpus {
  CorpusMeta meta;
  std::vector<ToyRecord> records;
};

// Sample one corpus. `taken` is the cross-split registry of semantic
// sequences: records must be globally unique so held-out splits are honest.
inline ToyCorpus gen_parallel_corpus(
    const ToyLanguageSpec& lang_spec, const RenderSpec& render,
    const CorpusMeta& meta, int64_t n_examples,
    std::unordered_set<std::string>* taken = nullptr) {
  ToyCorpus corpus;
  corpus.meta = meta;
  std::unordered_set<std::string> local;
  std::unordered_set<std::string>* seen = taken ? taken : &local;
  for (int64_t idx = 0; idx < n_examples; ++idx) {
    ToyRecord rec;
    for (int64_t attempt = 0;; ++attempt) {
      S2S_REQUIRE(attempt < 200, "semantic dedup stuck at record ", idx,
                  " of split ", meta.split);
      Rng rng(Rng::derive_seed(Rng::derive_seed(meta.corpus_seed, idx),
                               attempt));
      const int64_t len = rng.next_in(meta.len_lo, meta.len_hi);
      std::vector<int64_t> sem;
      for (int64_t i = 0; i < len; ++i) {
        int64_t s;
        do {
          s = static_cast<int64_t>(rng.next_below(lang_spec.semantic_vocab));
        } while (!sem.empty() && s == sem.back());
        sem.push_back(s);
      }
      if (!seen->insert(units_to_line(sem)).second) continue;
      rec.semantic = sem;
      rec.text_src = semantic_to_text(lang_spec.src, sem);
      rec.text_tgt = semantic_to_text(lang_spec.tgt, sem);
      rec.units_src = semantic_to_units(lang_spec.src, sem);
      rec.units_tgt = semantic_to_units(lang_spec.tgt, sem);
      rec.frame_units_src =
          expand_units(rec.units_src, meta.frames_lo, meta.frames_hi, rng);
      rec.frame_units_tgt =
          expand_units(rec.units_tgt, meta.frames_lo, meta.frames_hi, rng);
      rec.feat_src = render_speech(rec.frame_units_src, render,
                                   rng.next_u64());
      rec.feat_tgt = render_speech(rec.frame_units_tgt, render,
                                   rng.next_u64());
      rec.has_feat_src = rec.has_feat_tgt = true;
      break;
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

// cluster id -> nearest prototype's true unit id (ties to the lowest unit).
inline std::vector<int64_t> map_clusters_to_units(const KMeansModel& km,
                                                  const RenderSpec& render) {
  S2S_CHECK(km.d == render.d, "dim mismatch");
  std::vector<int64_t> out(km.k);
  for (int64_t c = 0; c < km.k; ++c) {
    int64_t best = 0;
    double best_d = sq_dist(km.centroid(c), render.prototype(0), km.d);
    for (int64_t u = 1; u < render.k; ++u) {
      const double dist = sq_dist(km.centroid(c), render.prototype(u), km.d);
      if (dist < best_d) {
        best_d = dist;
        best = u;
      }
    }
    out[c] = best;
  }
  return out;
}

}  // namespace s2s
