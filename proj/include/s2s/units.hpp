// include/s2s/units.hpp

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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2s/common.hpp"

namespace s2s {

// A frame matrix: T rows of D features, row-major.
struct FeatureMatrix {
  int64_t t = 0;
  int64_t d = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(int64_t t_, int64_t d_) : t(t_), d(d_) {
    data.assign(static_cast<size_t>(t * d), 0.0);
  }
  double* row(int64_t i) { return data.data() + i * d; }
  const double* row(int64_t i) const { return data.data() + i * d; }
};

struct UnitSequence {
  std::vector<int64_t> units;
  bool reduced = false;
  bool truncated = false;  // decode hit max_len without EOS

  int64_t size() const { return static_cast<int64_t>(units.size()); }
};

struct TextSequence {
  std::vector<int64_t> tokens;
};

// Collapse runs of identical adjacent units. Idempotent; calling it on an
// already-reduced sequence returns the same units.
inline UnitSequence reduce_units(const UnitSequence& seq) {
  UnitSequence out;
  out.reduced = true;
  out.truncated = seq.truncated;
  out.units.reserve(seq.units.size());
  for (int64_t u : seq.units)
    if (out.units.empty() || out.units.back() != u) out.units.push_back(u);
  return out;
}

inline UnitSequence reduce_units(const std::vector<int64_t>& units) {
  return reduce_units(UnitSequence{units, false, false});
}

inline std::string units_to_line(const std::vector<int64_t>& units) {
  std::string s;
  for (size_t i = 0; i < units.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(units[i]);
  }
  return s;
}

}  // namespace s2s
