// include/s2s/bleu.hpp

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

// Corpus BLEU-4 over integer token sequences. Modified n-gram precisions,
// geometric mean, brevity penalty exp(1 - r/c) for c < r. Smoothing: an
// order with hypothesis n-grams but zero matches gets 1/(2*c_n); an order
// with no hypothesis n-grams at all (every hypothesis shorter than n)
// contributes precision 1, so identical corpora of short sentences still
// score exactly 100.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "s2s/common.hpp"

namespace s2s {

namespace detail {

using NgramCounts = std::map<std::vector<int64_t>, int64_t>;

inline NgramCounts count_ngrams(const std::vector<int64_t>& seq, int64_t n) {
  NgramCounts counts;
  const int64_t len = static_cast<int64_t>(seq.size());
  for (int64_t i = 0; i + n <= len; ++i)
    ++counts[std::vector<int64_t>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

}  // namespace detail

// hyps and refs are parallel lists of token sequences. Result in [0, 100].
inline double corpus_bleu(const std::vector<std::vector<int64_t>>& hyps,
                          const std::vector<std::vector<int64_t>>& refs) {
  S2S_CHECK(!hyps.empty(), "empty hypothesis list");
  S2S_CHECK(hyps.size() == refs.size(), "hypothesis/reference count mismatch");
  constexpr int64_t kMaxOrder = 4;
  int64_t matched[kMaxOrder] = {0, 0, 0, 0};
  int64_t total[kMaxOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<int64_t>(hyps[i].size());
    ref_len += static_cast<int64_t>(refs[i].size());
    for (int64_t n = 1; n <= kMaxOrder; ++n) {
      const auto hc = detail::count_ngrams(hyps[i], n);
      const auto rc = detail::count_ngrams(refs[i], n);
      for (const auto& [gram, count] : hc) {
        total[n - 1] += count;
        const auto it = rc.find(gram);
        if (it != rc.end())
          matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int64_t n = 0; n < kMaxOrder; ++n) {
    double p;
    if (total[n] == 0) {
      p = 1.0;
    } else if (matched[n] == 0) {
      p = 1.0 / (2.0 * static_cast<double>(total[n]));
    } else {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    }
    log_sum += std::log(p);
  }
  const double bp =
      hyp_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len))
          : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

}  // namespace s2s
