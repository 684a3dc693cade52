// include/s2s/seq2seq.hpp

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

// Shared plumbing for the two encoder-decoder models: id batching with
// right-padding, teacher-forcing input/target construction, and the special
// token layout of the unit vocabulary.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "s2s/common.hpp"

namespace s2s {

// Unit vocabulary layout: real units occupy [0, K), then four specials.
inline int64_t unit_pad_id(int64_t k) { return k; }
inline int64_t unit_bos_id(int64_t k) { return k + 1; }
inline int64_t unit_eos_id(int64_t k) { return k + 2; }
inline int64_t unit_unk_id(int64_t k) { return k + 3; }
inline int64_t unit_vocab_size(int64_t k) { return k + 4; }

// Target positions to skip in every cross-entropy here.
constexpr int64_t kIgnoreTarget = -1;

struct IdBatch {
  int64_t b = 0;
  int64_t l = 0;                 // padded length
  std::vector<int64_t> ids;      // b*l, right-padded with pad_id
  std::vector<uint8_t> pad;      // b*l, nonzero at padded slots
  std::vector<int64_t> lengths;  // real lengths
};

inline IdBatch batch_ids(const std::vector<std::vector<int64_t>>& seqs,
                         int64_t pad_id, int64_t min_len = 1) {
  IdBatch out;
  out.b = static_cast<int64_t>(seqs.size());
  S2S_CHECK(out.b > 0, "empty batch");
  out.l = min_len;
  for (const auto& s : seqs)
    out.l = std::max(out.l, static_cast<int64_t>(s.size()));
  out.ids.assign(out.b * out.l, pad_id);
  out.pad.assign(out.b * out.l, 1);
  for (int64_t i = 0; i < out.b; ++i) {
    const auto& s = seqs[i];
    out.lengths.push_back(static_cast<int64_t>(s.size()));
    for (size_t j = 0; j < s.size(); ++j) {
      out.ids[i * out.l + j] = s[j];
      out.pad[i * out.l + j] = 0;
    }
  }
  return out;
}

struct TeacherBatch {
  IdBatch inputs;                // BOS-prefixed, PAD-padded
  std::vector<int64_t> targets;  // b*l, sequence + EOS, kIgnoreTarget at pads
  int64_t token_count = 0;       // real targets (len + 1 per sequence)
};

// Decoder input i is the token before position i; target i is the token at
// position i, with EOS as the final target.
inline TeacherBatch make_teacher_batch(
    const std::vector<std::vector<int64_t>>& tgt, int64_t pad_id,
    int64_t bos_id, int64_t eos_id) {
  std::vector<std::vector<int64_t>> shifted;
  shifted.reserve(tgt.size());
  for (const auto& s : tgt) {
    S2S_CHECK(!s.empty(), "empty target sequence");
    std::vector<int64_t> in;
    in.reserve(s.size() + 1);
    in.push_back(bos_id);
    in.insert(in.end(), s.begin(), s.end());
    shifted.push_back(std::move(in));
  }
  TeacherBatch out;
  out.inputs = batch_ids(shifted, pad_id);
  out.targets.assign(out.inputs.b * out.inputs.l, kIgnoreTarget);
  for (int64_t i = 0; i < out.inputs.b; ++i) {
    const auto& s = tgt[i];
    for (size_t j = 0; j < s.size(); ++j)
      out.targets[i * out.inputs.l + j] = s[j];
    out.targets[i * out.inputs.l + s.size()] = eos_id;
    out.token_count += static_cast<int64_t>(s.size()) + 1;
  }
  return out;
}

// log softmax of one row, written into lp.
inline void log_softmax_row(const double* x, int64_t n, double* lp) {
  double m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (int64_t i = 0; i < n; ++i) z += std::exp(x[i] - m);
  const double lse = m + std::log(z);
  for (int64_t i = 0; i < n; ++i) lp[i] = x[i] - lse;
}

}  // namespace s2s
