// include/s2s/tensor.hpp

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
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/rng.hpp"

namespace s2s {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    S2S_CHECK(d >= 0, "negative dim");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized on first accumulation
  bool requires_grad = false;
  std::string name;  // set for parameters so checkpoints can index them
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;  // adds into parents' grad buffers

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Graph recording is on by default and suspended during evaluation.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool saved;
  NoGradGuard() : saved(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = saved; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() : impl_(nullptr) {}
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (double& v : t.data()) v = value;
    return t;
  }

  static Tensor from_vector(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false) {
    S2S_CHECK(static_cast<int64_t>(values.size()) == shape_numel(shape),
              "value count ", values.size(), " does not fill ",
              shape_str(shape));
    Tensor t = zeros(shape, requires_grad);
    t.impl_->data = std::move(values);
    return t;
  }

  // N(0, scale^2) entries, drawn in row-major order.
  static Tensor randn(const Shape& shape, Rng& rng, double scale,
                      bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (double& v : t.data()) v = scale * rng.next_gaussian();
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t i) const {
    S2S_CHECK(i < impl_->shape.size(), "dim index ", i, " out of range for ",
              shape_str(impl_->shape));
    return impl_->shape[i];
  }
  size_t rank() const { return impl_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
  }
  const std::string& name() const { return impl_->name; }
  Tensor& set_name(std::string name) {
    impl_->name = std::move(name);
    return *this;
  }

  double item() const {
    S2S_CHECK(numel() == 1, "item() on tensor of shape ",
              shape_str(impl_->shape));
    return impl_->data[0];
  }

  // Same values, no history. Used for targets built from model output.
  Tensor detach() const {
    Tensor t = zeros(impl_->shape);
    t.impl_->data = impl_->data;
    return t;
  }

  void zero_grad() {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }

  // Reverse-mode sweep from this node. Topological order comes from a
  // depth-first walk over the recorded parents, so for a fixed graph the
  // accumulation order (and hence the bits) never changes.
  void backward() {
    S2S_CHECK(numel() == 1, "backward() needs a scalar, got ",
              shape_str(impl_->shape));
    std::vector<TensorImpl*> order;
    topo_sort(order);
    impl_->ensure_grad();
    impl_->grad[0] = 1.0;
    // A node whose grad never got allocated received no gradient at all
    // (cross_entropy with every row ignored leaves its input untouched);
    // empty means zero, so there is nothing to push further down.
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn && !(*it)->grad.empty()) (*it)->backward_fn();
  }

 private:
  void topo_sort(std::vector<TensorImpl*>& order) const {
    std::unordered_set<TensorImpl*> seen;
    // Explicit stack; graphs can be a few thousand nodes deep per step.
    struct Frame {
      TensorImpl* node;
      size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        TensorImpl* p = f.node->parents[f.next_parent++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorImpl> impl_;
};

// Helper for op implementations: result node wired to its inputs. Recording
// is skipped when grads are globally off or no input wants them.
inline Tensor make_result(const Shape& shape,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorImpl*)> make_backward) {
  Tensor out = Tensor::zeros(shape);
  bool track = false;
  if (grad_mode())
    for (const Tensor& t : inputs)
      if (t.requires_grad()) track = true;
  if (track) {
    out.impl()->requires_grad = true;
    for (const Tensor& t : inputs) out.impl()->parents.push_back(t.impl_ptr());
    make_backward(out.impl());
  }
  return out;
}

}  // namespace s2s
