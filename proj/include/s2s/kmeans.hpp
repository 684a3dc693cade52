// include/s2s/kmeans.hpp

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

// Lloyd's algorithm with kmeans++ seeding. Everything is index-ordered and
// seeded, so a fit is a pure function of (frames, K, seed, max_iters).

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/rng.hpp"
#include "s2s/units.hpp"

namespace s2s {

struct KMeansModel {
  int64_t k = 0;
  int64_t d = 0;
  std::vector<double> centroids;  // k rows of d

  const double* centroid(int64_t i) const { return centroids.data() + i * d; }
};

inline double sq_dist(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

// Nearest centroid, ties to the lowest index (strict improvement required).
inline int64_t kmeans_nearest(const KMeansModel& model, const double* frame) {
  int64_t best = 0;
  double best_d = sq_dist(frame, model.centroid(0), model.d);
  for (int64_t c = 1; c < model.k; ++c) {
    const double dist = sq_dist(frame, model.centroid(c), model.d);
    if (dist < best_d) {
      best_d = dist;
      best = c;
    }
  }
  return best;
}

// kmeans++ seeding: first centroid uniform, then squared-distance weighted.
// The cumulative walk goes in frame order, so the choice is reproducible.
inline std::vector<int64_t> kmeanspp_seed(const std::vector<double>& frames,
                                          int64_t n, int64_t d, int64_t k,
                                          Rng& rng) {
  std::vector<int64_t> chosen;
  chosen.push_back(static_cast<int64_t>(rng.next_below(n)));
  std::vector<double> best(n);
  for (int64_t i = 0; i < n; ++i)
    best[i] = sq_dist(frames.data() + i * d,
                      frames.data() + chosen[0] * d, d);
  while (static_cast<int64_t>(chosen.size()) < k) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) total += best[i];
    int64_t pick = -1;
    if (total > 0.0) {
      const double r = rng.next_double() * total;
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        acc += best[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
      if (pick < 0) pick = n - 1;  // r landed on the rounding edge
    } else {
      pick = static_cast<int64_t>(rng.next_below(n));
    }
    chosen.push_back(pick);
    const double* p = frames.data() + pick * d;
    for (int64_t i = 0; i < n; ++i) {
      const double dist = sq_dist(frames.data() + i * d, p, d);
      if (dist < best[i]) best[i] = dist;
    }
  }
  return chosen;
}

struct KMeansFitInfo {
  int64_t iterations = 0;
  double inertia = 0.0;
  std::vector<double> inertia_per_iter;
};

// frames: n rows of d. Assignment ties go to the lowest centroid index;
// an emptied cluster is re-seeded from the point farthest from its own
// centroid (ties again to the lowest frame index).
inline KMeansModel kmeans_fit(const std::vector<double>& frames, int64_t n,
                              int64_t d, int64_t k, uint64_t seed,
                              int64_t max_iters = 100,
                              KMeansFitInfo* info = nullptr) {
  S2S_CHECK(n >= k && k >= 1, "kmeans needs at least K frames: n=", n,
            " K=", k);
  S2S_CHECK(static_cast<int64_t>(frames.size()) == n * d, "frame buffer size");
  Rng rng(seed);
  KMeansModel model;
  model.k = k;
  model.d = d;
  model.centroids.assign(static_cast<size_t>(k * d), 0.0);
  const std::vector<int64_t> seeds = kmeanspp_seed(frames, n, d, k, rng);
  for (int64_t c = 0; c < k; ++c)
    for (int64_t j = 0; j < d; ++j)
      model.centroids[c * d + j] = frames[seeds[c] * d + j];

  std::vector<int64_t> assign(n, -1);
  double prev_inertia = -1.0;
  int64_t iter = 0;
  for (; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = kmeans_nearest(model, frames.data() + i * d);
      inertia += sq_dist(frames.data() + i * d, model.centroid(c), d);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    // Lloyd guarantee; the slack covers accumulated rounding only.
    S2S_CHECK(prev_inertia < 0.0 ||
                  inertia <= prev_inertia + 1e-9 * (1.0 + prev_inertia),
              "inertia increased: ", prev_inertia, " -> ", inertia);
    prev_inertia = inertia;
    if (info) info->inertia_per_iter.push_back(inertia);
    if (!changed && iter > 0) break;

    std::vector<double> sums(static_cast<size_t>(k * d), 0.0);
    std::vector<int64_t> counts(k, 0);
    // distance of each frame to its (pre-update) centroid, for reseeding
    std::vector<double> cur_dist(n);
    for (int64_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const double* f = frames.data() + i * d;
      double* s = sums.data() + assign[i] * d;
      for (int64_t j = 0; j < d; ++j) s[j] += f[j];
      cur_dist[i] = sq_dist(f, model.centroid(assign[i]), d);
    }
    for (int64_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (int64_t j = 0; j < d; ++j)
          model.centroids[c * d + j] =
              sums[c * d + j] / static_cast<double>(counts[c]);
    // Each emptied cluster takes the current farthest point; taking a point
    // zeroes its distance so two empty clusters cannot collide.
    for (int64_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int64_t far = 0;
      for (int64_t i = 1; i < n; ++i)
        if (cur_dist[i] > cur_dist[far]) far = i;
      for (int64_t j = 0; j < d; ++j)
        model.centroids[c * d + j] = frames[far * d + j];
      cur_dist[far] = -1.0;
    }
  }
  for (double v : model.centroids)
    S2S_REQUIRE(is_finite(v), "non-finite centroid after fit");
  for (int64_t a = 0; a < k; ++a)
    for (int64_t b = a + 1; b < k; ++b) {
      bool same = true;
      for (int64_t j = 0; j < d && same; ++j)
        if (model.centroids[a * d + j] != model.centroids[b * d + j])
          same = false;
      S2S_REQUIRE(!same, "identical centroids ", a, " and ", b, " after fit");
    }
  if (info) {
    info->iterations = iter;
    info->inertia = prev_inertia;
  }
  return model;
}

inline UnitSequence kmeans_assign(const KMeansModel& model,
                                  const FeatureMatrix& features) {
  S2S_CHECK(features.d == model.d, "feature dim ", features.d,
            " vs model dim ", model.d);
  UnitSequence seq;
  seq.reduced = false;
  seq.units.resize(features.t);
  for (int64_t i = 0; i < features.t; ++i)
    seq.units[i] = kmeans_nearest(model, features.row(i));
  return seq;
}

}  // namespace s2s
