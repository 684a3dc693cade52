// include/s2s/ops.hpp

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

// Forward kernels and their adjoints. Loop orders are part of the contract:
// every reduction runs in ascending index order so that repeated runs (and
// reruns on other machines) produce identical bits.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

inline std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> st(shape.size(), 1);
  for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * shape[i + 1];
  return st;
}

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  S2S_CHECK(a.shape() == b.shape(), "add shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  Tensor out = make_result(a.shape(), {a, b}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    o->backward_fn = [o, ai, bi]() {
      const size_t n = o->data.size();
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < n; ++i) bi->grad[i] += o->grad[i];
      }
    };
  });
  const size_t n = out.data().size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  S2S_CHECK(a.shape() == b.shape(), "sub shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  Tensor out = make_result(a.shape(), {a, b}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    o->backward_fn = [o, ai, bi]() {
      const size_t n = o->data.size();
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < n; ++i) bi->grad[i] -= o->grad[i];
      }
    };
  });
  const size_t n = out.data().size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  S2S_CHECK(a.shape() == b.shape(), "mul shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  Tensor out = make_result(a.shape(), {a, b}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    o->backward_fn = [o, ai, bi]() {
      const size_t n = o->data.size();
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < n; ++i) bi->grad[i] += o->grad[i] * ai->data[i];
      }
    };
  });
  const size_t n = out.data().size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = make_result(a.shape(), {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai, c]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const size_t n = o->data.size();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += c * o->grad[i];
    };
  });
  const size_t n = out.data().size();
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = c * pa[i];
  return out;
}

// b's shape must equal the trailing dims of a's shape; b is added to every
// leading slice. Covers bias-over-rows ([N,D]+[D]) and shared attention bias
// tables ([B,H,Tq,Tk]+[H,Tq,Tk]).
inline Tensor add_suffix(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  S2S_CHECK(bs.size() <= as.size(), "suffix rank too large");
  for (size_t i = 0; i < bs.size(); ++i)
    S2S_CHECK(bs[bs.size() - 1 - i] == as[as.size() - 1 - i],
              "suffix dim mismatch: ", shape_str(as), " vs ", shape_str(bs));
  const int64_t bn = shape_numel(bs);
  Tensor out = make_result(as, {a, b}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    o->backward_fn = [o, ai, bi, bn]() {
      const int64_t n = static_cast<int64_t>(o->data.size());
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bi->grad[i % bn] += o->grad[i];
      }
    };
  });
  const int64_t n = out.numel();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % bn];
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = make_result(a.shape(), {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const size_t n = o->data.size();
      for (size_t i = 0; i < n; ++i)
        if (ai->data[i] > 0.0) ai->grad[i] += o->grad[i];
    };
  });
  const size_t n = out.data().size();
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  return out;
}

// Exact erf form, not the tanh fit.
inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

inline Tensor gelu(const Tensor& a) {
  Tensor out = make_result(a.shape(), {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const size_t n = o->data.size();
      for (size_t i = 0; i < n; ++i) {
        const double x = ai->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
        const double pdf =
            std::exp(-0.5 * x * x) * 0.39894228040143267794;  // 1/sqrt(2 pi)
        ai->grad[i] += o->grad[i] * (cdf + x * pdf);
      }
    };
  });
  const size_t n = out.data().size();
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = gelu_scalar(pa[i]);
  return out;
}

// ---------------------------------------------------------------------------
// matrix products

// C[i,j] = sum_k A[i,k] B[k,j], accumulated in ascending k for every (i,j).
// The i-k-j order vectorizes over j without changing that per-entry order.
inline void matmul_kernel(const double* a, const double* b, double* c,
                          int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + m * n, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C = A^T B with A [k,m]: adjoint of matmul wrt B.
inline void matmul_at_b_kernel(const double* a, const double* b, double* c,
                               int64_t k, int64_t m, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C = A B^T with B [n,k]: adjoint of matmul wrt A.
inline void matmul_a_bt_kernel(const double* a, const double* b, double* c,
                               int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  S2S_CHECK(a.rank() == 2 && b.rank() == 2, "matmul wants rank-2 inputs, got ",
            shape_str(a.shape()), " x ", shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  S2S_CHECK(b.dim(0) == k, "matmul inner dim: ", shape_str(a.shape()), " x ",
            shape_str(b.shape()));
  Tensor out = make_result({m, n}, {a, b}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    o->backward_fn = [o, ai, bi, m, k, n]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        matmul_a_bt_kernel(o->grad.data(), bi->data.data(), ai->grad.data(), m,
                           n, k);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        matmul_at_b_kernel(ai->data.data(), o->grad.data(), bi->grad.data(), m,
                           k, n);
      }
    };
  });
  matmul_kernel(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  return out;
}

inline Tensor bmm(const Tensor& a, const Tensor& b) {
  S2S_CHECK(a.rank() == 3 && b.rank() == 3, "bmm wants rank-3 inputs, got ",
            shape_str(a.shape()), " x ", shape_str(b.shape()));
  const int64_t bsz = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  S2S_CHECK(b.dim(0) == bsz && b.dim(1) == k, "bmm mismatch: ",
            shape_str(a.shape()), " x ", shape_str(b.shape()));
  Tensor out = make_result({bsz, m, n}, {a, b}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    o->backward_fn = [o, ai, bi, bsz, m, k, n]() {
      for (int64_t q = 0; q < bsz; ++q) {
        const double* go = o->grad.data() + q * m * n;
        if (ai->requires_grad) {
          ai->ensure_grad();
          matmul_a_bt_kernel(go, bi->data.data() + q * k * n,
                             ai->grad.data() + q * m * k, m, n, k);
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          matmul_at_b_kernel(ai->data.data() + q * m * k, go,
                             bi->grad.data() + q * k * n, m, k, n);
        }
      }
    };
  });
  for (int64_t q = 0; q < bsz; ++q)
    matmul_kernel(a.data().data() + q * m * k, b.data().data() + q * k * n,
                  out.data().data() + q * m * n, m, k, n);
  return out;
}

// ---------------------------------------------------------------------------
// shape ops (all copying; there are no views)

inline Tensor reshape(const Tensor& a, const Shape& shape) {
  S2S_CHECK(shape_numel(shape) == a.numel(), "reshape ", shape_str(a.shape()),
            " -> ", shape_str(shape));
  Tensor out = make_result(shape, {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const size_t n = o->data.size();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
    };
  });
  out.data() = a.data();
  return out;
}

inline Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const size_t r = a.rank();
  S2S_CHECK(perm.size() == r, "permute rank");
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[perm[i]];
  const auto in_st = row_major_strides(a.shape());
  // out linear index -> in linear index, precomputed stride walk
  std::vector<int64_t> walk(r);
  for (size_t i = 0; i < r; ++i) walk[i] = in_st[perm[i]];
  const auto out_st = row_major_strides(out_shape);
  const int64_t n = a.numel();
  // captured by value: the mapping outlives this frame via backward_fn
  auto map_index = [out_st, walk, r](int64_t oi) {
    int64_t ii = 0, rem = oi;
    for (size_t d = 0; d < r; ++d) {
      ii += (rem / out_st[d]) * walk[d];
      rem %= out_st[d];
    }
    return ii;
  };
  Tensor out = make_result(out_shape, {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai, map_index, n]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      for (int64_t oi = 0; oi < n; ++oi) ai->grad[map_index(oi)] += o->grad[oi];
    };
  });
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (int64_t oi = 0; oi < n; ++oi) po[oi] = pa[map_index(oi)];
  return out;
}

inline Tensor transpose2d(const Tensor& a) { return permute(a, {1, 0}); }

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t end) {
  const size_t r = a.rank();
  S2S_CHECK(axis >= 0 && static_cast<size_t>(axis) < r, "slice axis");
  S2S_CHECK(0 <= start && start <= end && end <= a.shape()[axis],
            "slice range [", start, ",", end, ") on ", shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = end - start;
  const auto in_st = row_major_strides(a.shape());
  int64_t outer = 1, inner = in_st[axis];
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  const int64_t in_len = a.shape()[axis], out_len = end - start;
  Tensor out = make_result(out_shape, {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai, outer, inner, in_len, out_len, start]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      for (int64_t u = 0; u < outer; ++u)
        for (int64_t v = 0; v < out_len; ++v) {
          const double* g = o->grad.data() + (u * out_len + v) * inner;
          double* dst = ai->grad.data() + (u * in_len + start + v) * inner;
          for (int64_t w = 0; w < inner; ++w) dst[w] += g[w];
        }
    };
  });
  for (int64_t u = 0; u < outer; ++u)
    for (int64_t v = 0; v < out_len; ++v) {
      const double* src = a.data().data() + (u * in_len + start + v) * inner;
      double* dst = out.data().data() + (u * out_len + v) * inner;
      for (int64_t w = 0; w < inner; ++w) dst[w] = src[w];
    }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  S2S_CHECK(!parts.empty(), "concat of nothing");
  const size_t r = parts[0].rank();
  S2S_CHECK(axis >= 0 && static_cast<size_t>(axis) < r, "concat axis");
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    S2S_CHECK(p.rank() == r, "concat rank mismatch");
    for (size_t d = 0; d < r; ++d)
      if (static_cast<int>(d) != axis)
        S2S_CHECK(p.shape()[d] == out_shape[d], "concat dim ", d, " mismatch");
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (size_t i = axis + 1; i < r; ++i) inner *= out_shape[i];
  Tensor out = make_result(out_shape, parts, [&](TensorImpl* o) {
    std::vector<TensorImpl*> impls;
    std::vector<int64_t> lens;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      lens.push_back(p.shape()[axis]);
    }
    o->backward_fn = [o, impls, lens, outer, inner, total]() {
      int64_t off = 0;
      for (size_t pi = 0; pi < impls.size(); ++pi) {
        TensorImpl* src = impls[pi];
        const int64_t len = lens[pi];
        if (src->requires_grad) {
          src->ensure_grad();
          for (int64_t u = 0; u < outer; ++u)
            for (int64_t v = 0; v < len; ++v) {
              const double* g =
                  o->grad.data() + (u * total + off + v) * inner;
              double* dst = src->grad.data() + (u * len + v) * inner;
              for (int64_t w = 0; w < inner; ++w) dst[w] += g[w];
            }
        }
        off += len;
      }
    };
  });
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t len = p.shape()[axis];
    for (int64_t u = 0; u < outer; ++u)
      for (int64_t v = 0; v < len; ++v) {
        const double* src = p.data().data() + (u * len + v) * inner;
        double* dst = out.data().data() + (u * total + off + v) * inner;
        for (int64_t w = 0; w < inner; ++w) dst[w] = src[w];
      }
    off += len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum_all(const Tensor& a) {
  Tensor out = make_result({1}, {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const double g = o->grad[0];
      for (double& v : ai->grad) v += g;
    };
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s;
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  const int64_t n = a.numel();
  S2S_CHECK(n > 0, "mean of empty tensor");
  Tensor out = make_result({1}, {a}, [&](TensorImpl* o) {
    TensorImpl* ai = a.impl();
    o->backward_fn = [o, ai, n]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const double g = o->grad[0] / static_cast<double>(n);
      for (double& v : ai->grad) v += g;
    };
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// normalization and probabilities

// Normalizes the last dim. Backward is the usual fused form; gamma and beta
// grads are reduced over rows in row order.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  const size_t r = x.rank();
  S2S_CHECK(r >= 1, "layer_norm rank");
  const int64_t d = x.shape()[r - 1];
  S2S_CHECK(gamma.rank() == 1 && gamma.dim(0) == d, "gamma shape");
  S2S_CHECK(beta.rank() == 1 && beta.dim(0) == d, "beta shape");
  const int64_t rows = x.numel() / d;
  auto mean_v = std::make_shared<std::vector<double>>(rows);
  auto rstd_v = std::make_shared<std::vector<double>>(rows);
  Tensor out = make_result(x.shape(), {x, gamma, beta}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    TensorImpl* gi = gamma.impl();
    TensorImpl* bi = beta.impl();
    o->backward_fn = [o, xi, gi, bi, mean_v, rstd_v, rows, d]() {
      if (xi->requires_grad) xi->ensure_grad();
      if (gi->requires_grad) gi->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for (int64_t rI = 0; rI < rows; ++rI) {
        const double* xr = xi->data.data() + rI * d;
        const double* gr = o->grad.data() + rI * d;
        const double mu = (*mean_v)[rI], rs = (*rstd_v)[rI];
        // two row sums shared by the input adjoint
        double s1 = 0.0, s2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double xh = (xr[j] - mu) * rs;
          const double dy = gr[j] * gi->data[j];
          s1 += dy;
          s2 += dy * xh;
        }
        for (int64_t j = 0; j < d; ++j) {
          const double xh = (xr[j] - mu) * rs;
          if (xi->requires_grad) {
            const double dy = gr[j] * gi->data[j];
            xi->grad[rI * d + j] +=
                rs * (dy - (s1 + xh * s2) / static_cast<double>(d));
          }
          if (gi->requires_grad) gi->grad[j] += gr[j] * xh;
          if (bi->requires_grad) bi->grad[j] += gr[j];
        }
      }
    };
  });
  for (int64_t rI = 0; rI < rows; ++rI) {
    const double* xr = x.data().data() + rI * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*mean_v)[rI] = mu;
    (*rstd_v)[rI] = rs;
    double* orow = out.data().data() + rI * d;
    for (int64_t j = 0; j < d; ++j)
      orow[j] = (xr[j] - mu) * rs * gamma.data()[j] + beta.data()[j];
  }
  return out;
}

// Softmax along `axis` with max subtraction. -inf-free by construction: the
// additive masks used upstream are large finite negatives.
inline Tensor softmax(const Tensor& x, int axis) {
  const size_t r = x.rank();
  S2S_CHECK(axis >= 0 && static_cast<size_t>(axis) < r, "softmax axis");
  const int64_t len = x.shape()[axis];
  const auto st = row_major_strides(x.shape());
  const int64_t inner = st[axis];
  const int64_t outer = x.numel() / (len * inner);
  Tensor out = make_result(x.shape(), {x}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    o->backward_fn = [o, xi, outer, len, inner]() {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (int64_t u = 0; u < outer; ++u)
        for (int64_t w = 0; w < inner; ++w) {
          const int64_t base = u * len * inner + w;
          double dot = 0.0;
          for (int64_t v = 0; v < len; ++v) {
            const int64_t i = base + v * inner;
            dot += o->grad[i] * o->data[i];
          }
          for (int64_t v = 0; v < len; ++v) {
            const int64_t i = base + v * inner;
            xi->grad[i] += o->data[i] * (o->grad[i] - dot);
          }
        }
    };
  });
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t u = 0; u < outer; ++u)
    for (int64_t w = 0; w < inner; ++w) {
      const int64_t base = u * len * inner + w;
      double m = px[base];
      for (int64_t v = 1; v < len; ++v)
        m = std::max(m, px[base + v * inner]);
      double z = 0.0;
      for (int64_t v = 0; v < len; ++v) {
        const double e = std::exp(px[base + v * inner] - m);
        po[base + v * inner] = e;
        z += e;
      }
      const double rz = 1.0 / z;
      for (int64_t v = 0; v < len; ++v) po[base + v * inner] *= rz;
    }
  return out;
}

// Fused log-softmax + NLL, averaged over rows whose target != ignore_index.
// All rows ignored gives loss 0 with no gradient (e.g. a batch where the
// span sampler picked nothing).
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int64_t>& targets,
                            int64_t ignore_index = -1) {
  S2S_CHECK(logits.rank() == 2, "cross_entropy wants [N,C], got ",
            shape_str(logits.shape()));
  const int64_t n = logits.dim(0), c = logits.dim(1);
  S2S_CHECK(static_cast<int64_t>(targets.size()) == n, "target count");
  auto lse_v = std::make_shared<std::vector<double>>(n);
  int64_t counted = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_index) continue;
    S2S_CHECK(targets[i] >= 0 && targets[i] < c, "target ", targets[i],
              " out of range [0,", c, ")");
    ++counted;
  }
  Tensor out = make_result({1}, {logits}, [&](TensorImpl* o) {
    TensorImpl* li = logits.impl();
    auto tg = std::make_shared<std::vector<int64_t>>(targets);
    o->backward_fn = [o, li, tg, lse_v, n, c, counted, ignore_index]() {
      if (!li->requires_grad || counted == 0) return;
      li->ensure_grad();
      const double g = o->grad[0] / static_cast<double>(counted);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t t = (*tg)[i];
        if (t == ignore_index) continue;
        const double* row = li->data.data() + i * c;
        double* grow = li->grad.data() + i * c;
        const double lse = (*lse_v)[i];
        for (int64_t j = 0; j < c; ++j) {
          const double p = std::exp(row[j] - lse);
          grow[j] += g * (p - (j == t ? 1.0 : 0.0));
        }
      }
    };
  });
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    (*lse_v)[i] = lse;
    if (targets[i] != ignore_index) loss += lse - row[targets[i]];
  }
  out.data()[0] = counted ? loss / static_cast<double>(counted) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// lookups and row surgery

// ids index rows of table [V,D]; output shape is ids_shape + [D].
// Backward scatter-adds into the table in id order.
inline Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids,
                        const Shape& ids_shape) {
  S2S_CHECK(table.rank() == 2, "embedding table rank");
  S2S_CHECK(shape_numel(ids_shape) == static_cast<int64_t>(ids.size()),
            "ids_shape does not match id count");
  const int64_t v = table.dim(0), d = table.dim(1);
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  for (int64_t id : ids)
    S2S_CHECK(id >= 0 && id < v, "embedding id ", id, " out of [0,", v, ")");
  Tensor out = make_result(out_shape, {table}, [&](TensorImpl* o) {
    TensorImpl* ti = table.impl();
    auto idv = std::make_shared<std::vector<int64_t>>(ids);
    o->backward_fn = [o, ti, idv, d]() {
      if (!ti->requires_grad) return;
      ti->ensure_grad();
      for (size_t i = 0; i < idv->size(); ++i) {
        const double* g = o->grad.data() + i * d;
        double* dst = ti->grad.data() + (*idv)[i] * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    };
  });
  for (size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.data().data() + ids[i] * d;
    double* dst = out.data().data() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return out;
}

// Rows of x [.., D] where flags is set are replaced by the single vector
// emb [D] (the learned mask token). flags runs over x's leading dims.
inline Tensor mask_replace(const Tensor& x, const std::vector<uint8_t>& flags,
                           const Tensor& emb) {
  const size_t r = x.rank();
  S2S_CHECK(r >= 1, "mask_replace rank");
  const int64_t d = x.shape()[r - 1];
  S2S_CHECK(emb.rank() == 1 && emb.dim(0) == d, "mask embedding shape");
  const int64_t rows = x.numel() / d;
  S2S_CHECK(static_cast<int64_t>(flags.size()) == rows, "flag count ",
            flags.size(), " vs rows ", rows);
  Tensor out = make_result(x.shape(), {x, emb}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    TensorImpl* ei = emb.impl();
    auto fl = std::make_shared<std::vector<uint8_t>>(flags);
    o->backward_fn = [o, xi, ei, fl, rows, d]() {
      if (xi->requires_grad) xi->ensure_grad();
      if (ei->requires_grad) ei->ensure_grad();
      for (int64_t i = 0; i < rows; ++i) {
        const double* g = o->grad.data() + i * d;
        if ((*fl)[i]) {
          if (ei->requires_grad)
            for (int64_t j = 0; j < d; ++j) ei->grad[j] += g[j];
        } else {
          if (xi->requires_grad)
            for (int64_t j = 0; j < d; ++j) xi->grad[i * d + j] += g[j];
        }
      }
    };
  });
  for (int64_t i = 0; i < rows; ++i) {
    const double* src =
        flags[i] ? emb.data().data() : x.data().data() + i * d;
    double* dst = out.data().data() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return out;
}

// Rows where flags is set come from `repl`, the rest from x. Both [.., D]
// with identical shapes; gradient routes to whichever side supplied the row.
inline Tensor mix_rows(const Tensor& x, const std::vector<uint8_t>& flags,
                       const Tensor& repl) {
  S2S_CHECK(x.shape() == repl.shape(), "mix_rows shape mismatch");
  const size_t r = x.rank();
  const int64_t d = x.shape()[r - 1];
  const int64_t rows = x.numel() / d;
  S2S_CHECK(static_cast<int64_t>(flags.size()) == rows, "flag count");
  Tensor out = make_result(x.shape(), {x, repl}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    TensorImpl* ri = repl.impl();
    auto fl = std::make_shared<std::vector<uint8_t>>(flags);
    o->backward_fn = [o, xi, ri, fl, rows, d]() {
      if (xi->requires_grad) xi->ensure_grad();
      if (ri->requires_grad) ri->ensure_grad();
      for (int64_t i = 0; i < rows; ++i) {
        const double* g = o->grad.data() + i * d;
        TensorImpl* dst = (*fl)[i] ? ri : xi;
        if (dst->requires_grad)
          for (int64_t j = 0; j < d; ++j) dst->grad[i * d + j] += g[j];
      }
    };
  });
  for (int64_t i = 0; i < rows; ++i) {
    const double* src =
        (flags[i] ? repl.data() : x.data()).data() + i * d;
    double* dst = out.data().data() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return out;
}

// Unit-length rows (last dim). A row of exact zeros stays zero and passes no
// gradient, so never-used codewords cannot produce NaNs.
inline Tensor l2_normalize_rows(const Tensor& x) {
  const size_t r = x.rank();
  S2S_CHECK(r >= 1, "l2_normalize rank");
  const int64_t d = x.shape()[r - 1];
  const int64_t rows = x.numel() / d;
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor out = make_result(x.shape(), {x}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    o->backward_fn = [o, xi, norms, rows, d]() {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (int64_t i = 0; i < rows; ++i) {
        const double nrm = (*norms)[i];
        if (nrm == 0.0) continue;
        const double* g = o->grad.data() + i * d;
        const double* y = o->data.data() + i * d;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
        for (int64_t j = 0; j < d; ++j)
          xi->grad[i * d + j] += (g[j] - dot * y[j]) / nrm;
      }
    };
  });
  for (int64_t i = 0; i < rows; ++i) {
    const double* src = x.data().data() + i * d;
    double* dst = out.data().data() + i * d;
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += src[j] * src[j];
    const double nrm = std::sqrt(s);
    (*norms)[i] = nrm;
    if (nrm == 0.0) {
      for (int64_t j = 0; j < d; ++j) dst[j] = 0.0;
    } else {
      for (int64_t j = 0; j < d; ++j) dst[j] = src[j] / nrm;
    }
  }
  return out;
}

// Inverted dropout; identity when not training or p == 0. Consumes one
// uniform per element in row-major order when active.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  S2S_CHECK(p >= 0.0 && p < 1.0, "dropout p=", p);
  if (!training || p == 0.0) return x;
  const size_t n = x.data().size();
  auto keep = std::make_shared<std::vector<double>>(n);
  const double inv = 1.0 / (1.0 - p);
  for (size_t i = 0; i < n; ++i)
    (*keep)[i] = rng.next_double() < p ? 0.0 : inv;
  Tensor out = make_result(x.shape(), {x}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    o->backward_fn = [o, xi, keep]() {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += o->grad[i] * (*keep)[i];
    };
  });
  const double* px = x.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = px[i] * (*keep)[i];
  return out;
}

// Width-3, stride-1, zero-padded convolution over time.
// x [B,T,Din], w [3,Din,Dout], bias [Dout] -> [B,T,Dout].
inline Tensor conv1d_k3(const Tensor& x, const Tensor& w, const Tensor& bias) {
  S2S_CHECK(x.rank() == 3, "conv1d input rank");
  S2S_CHECK(w.rank() == 3 && w.dim(0) == 3, "conv1d weight shape ",
            shape_str(w.shape()));
  const int64_t b = x.dim(0), t = x.dim(1), din = x.dim(2), dout = w.dim(2);
  S2S_CHECK(w.dim(1) == din, "conv1d channel mismatch");
  S2S_CHECK(bias.rank() == 1 && bias.dim(0) == dout, "conv1d bias shape");
  Tensor out = make_result({b, t, dout}, {x, w, bias}, [&](TensorImpl* o) {
    TensorImpl* xi = x.impl();
    TensorImpl* wi = w.impl();
    TensorImpl* bi = bias.impl();
    o->backward_fn = [o, xi, wi, bi, b, t, din, dout]() {
      if (xi->requires_grad) xi->ensure_grad();
      if (wi->requires_grad) wi->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for (int64_t q = 0; q < b; ++q)
        for (int64_t i = 0; i < t; ++i) {
          const double* g = o->grad.data() + (q * t + i) * dout;
          if (bi->requires_grad)
            for (int64_t j = 0; j < dout; ++j) bi->grad[j] += g[j];
          for (int64_t dt = -1; dt <= 1; ++dt) {
            const int64_t src = i + dt;
            if (src < 0 || src >= t) continue;
            const double* xrow = xi->data.data() + (q * t + src) * din;
            const double* wmat = wi->data.data() + (dt + 1) * din * dout;
            for (int64_t ci = 0; ci < din; ++ci) {
              if (wi->requires_grad) {
                const double xv = xrow[ci];
                double* wrow = wi->grad.data() + (dt + 1) * din * dout +
                               ci * dout;
                for (int64_t j = 0; j < dout; ++j) wrow[j] += xv * g[j];
              }
              if (xi->requires_grad) {
                double s = 0.0;
                const double* wrow = wmat + ci * dout;
                for (int64_t j = 0; j < dout; ++j) s += wrow[j] * g[j];
                xi->grad[(q * t + src) * din + ci] += s;
              }
            }
          }
        }
    };
  });
  for (int64_t q = 0; q < b; ++q)
    for (int64_t i = 0; i < t; ++i) {
      double* orow = out.data().data() + (q * t + i) * dout;
      for (int64_t j = 0; j < dout; ++j) orow[j] = bias.data()[j];
      for (int64_t dt = -1; dt <= 1; ++dt) {
        const int64_t src = i + dt;
        if (src < 0 || src >= t) continue;
        const double* xrow = x.data().data() + (q * t + src) * din;
        const double* wmat = w.data().data() + (dt + 1) * din * dout;
        for (int64_t ci = 0; ci < din; ++ci) {
          const double xv = xrow[ci];
          const double* wrow = wmat + ci * dout;
          for (int64_t j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
        }
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// non-differentiable helpers

// Argmax over the last dim; ties go to the lowest index.
inline std::vector<int64_t> argmax_last(const Tensor& x) {
  const size_t r = x.rank();
  S2S_CHECK(r >= 1, "argmax rank");
  const int64_t d = x.shape()[r - 1];
  const int64_t rows = x.numel() / d;
  std::vector<int64_t> out(rows);
  for (int64_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * d;
    int64_t best = 0;
    for (int64_t j = 1; j < d; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace s2s
