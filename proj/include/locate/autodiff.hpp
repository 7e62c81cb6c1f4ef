/* Copyright (c) 2026 The locate Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every op applied to its Vars in execution order. backward()
// walks the record once in reverse and returns the gradient of a scalar loss
// with respect to every Parameter the tape touched. Tapes are single-threaded;
// independent tapes may share one read-only ParameterStore.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "locate/tensor.hpp"

namespace locate {

/// Raised when a forward value or a gradient stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
};

/// Gradients indexed like the ParameterStore that produced them.
using Gradients = std::vector<Tensor>;

class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::vector<Parameter>& all() noexcept { return params_; }
  const std::vector<Parameter>& all() const noexcept { return params_; }

  std::size_t total_numel() const;
  void zero_grad();
  void accumulate(const Gradients& grads, double scale = 1.0);

 private:
  std::vector<Parameter> params_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(const ParameterStore* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is retained after backward (see grad()).
  Var input(Tensor value);
  /// Leaf bound to parameter `index`; repeated calls return the same node.
  Var param(std::size_t index);
  Var param(std::string_view name);

  /// Appends an op node. `value` is checked for finiteness.
  Var record(std::string_view op, Tensor value,
             std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer for node `id`, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& grad_of(std::size_t id) const { return grads_[id]; }

  /// Gradient of the last backward() loss w.r.t. `v` (zeros if unreached).
  Tensor grad(Var v) const;

  /// Runs reverse accumulation from a scalar `loss`. Valid once per tape.
  Gradients backward(Var loss);

  const ParameterStore* parameters() const noexcept { return params_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<std::size_t> param_index;
  };

  const ParameterStore* params_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> grad_ready_;
  std::vector<std::optional<std::size_t>> param_nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops broadcast numpy-style: shapes are right-aligned
// and each dimension pair must be equal or contain a 1.

Shape broadcast_shape(const Shape& a, const Shape& b);

enum class ElementwiseOp { kAdd, kSub, kMul, kDiv, kMin, kMax, kRelu, kSigmoid,
                           kScale, kAbs };
Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b = std::nullopt,
                double factor = 1.0);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);  // ties route the gradient to `a`
Var maximum(Var a, Var b);  // ties route the gradient to `a`
Var relu(Var a);
Var sigmoid(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var abs(Var a);
Var pow_scalar(Var a, double exponent);  // requires a >= 0
Var log_clamped(Var a, double floor);    // log(max(a, floor))

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var softmax(Var x, std::size_t axis);
Var layer_norm(Var x, std::size_t axis, Var gain, Var bias, double eps = 1e-5);

/// Samples columns of x[C x T] at fractional positions (any shape, Q values)
/// by linear interpolation. Indices outside [0, T-1] read as zero.
Var interp_sample(Var x, Var positions);

enum class ReduceOp { kSum, kMean, kMax };
/// Reduces over `axis` (dropping it) or over every element when absent.
Var reduce(ReduceOp op, Var x, std::optional<std::size_t> axis = std::nullopt);
Var reduce_sum(Var x, std::optional<std::size_t> axis = std::nullopt);
Var reduce_mean(Var x, std::optional<std::size_t> axis = std::nullopt);
Var reduce_max(Var x, std::optional<std::size_t> axis = std::nullopt);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var gather(Var x, std::size_t axis, std::vector<std::size_t> indices);

// ---------------------------------------------------------------------------
// Finite-difference validation.

struct GradCheckReport {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-6;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
};

/// Scalar-valued function of one tensor, built on the given tape.
using TapeFunction = std::function<Var(Tape&, Var)>;
/// Analytic gradient provider; defaults to Tape::backward when empty.
using GradientHook = std::function<Tensor(const Tensor&)>;

/// Central-difference comparison of d f / d x at x0. A coordinate fails when
/// |analytic - numeric| exceeds both abs_floor and rel_tol * max magnitude.
GradCheckReport grad_check(const TapeFunction& f, const Tensor& x0,
                           const GradCheckOptions& options = {},
                           const GradientHook& analytic = {});

/// Same comparison over every coordinate of every parameter in `store`.
GradCheckReport grad_check_parameters(
    ParameterStore& store, const std::function<Var(Tape&)>& loss,
    const GradCheckOptions& options = {});

}  // namespace locate
