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

#include "locate/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace locate {

// ---------------------------------------------------------------------------
// ParameterStore

std::size_t ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
  Tensor grad(value.shape(), 0.0);
  params_.push_back({std::move(name), std::move(value), std::move(grad)});
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw std::out_of_range("unknown parameter " + std::string(name));
  return *idx;
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParameterStore::accumulate(const Gradients& grads, double scale) {
  if (grads.size() != params_.size())
    throw std::invalid_argument("gradient count does not match parameters");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].grad.values();
    auto src = grads[i].values();
    if (src.size() != dst.size())
      throw std::invalid_argument("gradient shape mismatch for " +
                                  params_[i].name);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
  }
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  return record("constant", std::move(value), {}, nullptr);
}

Var Tape::input(Tensor value) {
  Var v = record("input", std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Tape::param(std::size_t index) {
  if (!params_) throw std::logic_error("tape has no parameter store");
  if (index >= params_->size())
    throw std::out_of_range("parameter index out of range");
  if (param_nodes_.size() < params_->size()) param_nodes_.resize(params_->size());
  if (param_nodes_[index]) return Var{this, *param_nodes_[index]};
  Var v = record("param:" + (*params_)[index].name, (*params_)[index].value, {},
                 nullptr);
  nodes_[v.id].requires_grad = true;
  nodes_[v.id].param_index = index;
  param_nodes_[index] = v.id;
  return v;
}

Var Tape::param(std::string_view name) {
  if (!params_) throw std::logic_error("tape has no parameter store");
  return param(params_->index_of(name));
}

Var Tape::record(std::string_view op, Tensor value,
                 std::vector<std::size_t> inputs, BackwardFn backward) {
  if (backward_done_)
    throw std::logic_error("cannot record on a tape after backward()");
  if (!value.all_finite())
    throw NumericError("non-finite value produced by op '" + std::string(op) +
                       "'");
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  if (!grad_ready_[id]) {
    grads_[id] = Tensor(nodes_[id].value.shape(), 0.0);
    grad_ready_[id] = true;
  }
  return grads_[id];
}

Tensor Tape::grad(Var v) const {
  if (v.id < grad_ready_.size() && grad_ready_[v.id]) return grads_[v.id];
  return Tensor(nodes_[v.id].value.shape(), 0.0);
}

Gradients Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("loss belongs to another tape");
  if (backward_done_)
    throw std::logic_error(
        "backward() already ran on this tape; re-run the forward pass first");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.numel() != 1)
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                shape_string(lv.shape()));
  backward_done_ = true;

  grads_.assign(nodes_.size(), Tensor());
  grad_ready_.assign(nodes_.size(), false);
  grad_buffer(loss.id).fill(1.0);
  std::vector<bool> reached(nodes_.size(), false);
  reached[loss.id] = true;

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!reached[id] || !node.requires_grad || !node.backward) continue;
    node.backward(*this, id);
    for (std::size_t in : node.inputs) {
      if (!nodes_[in].requires_grad) continue;
      reached[in] = true;
      if (!grad_buffer(in).all_finite())
        throw NumericError("non-finite gradient produced by backward of op '" +
                           node.op + "'");
    }
  }

  Gradients out;
  if (params_) {
    out.reserve(params_->size());
    for (std::size_t i = 0; i < params_->size(); ++i) {
      if (i < param_nodes_.size() && param_nodes_[i] && reached[*param_nodes_[i]])
        out.push_back(grad_buffer(*param_nodes_[i]));
      else
        out.emplace_back((*params_)[i].value.shape(), 0.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("incompatible shapes " + shape_string(a) +
                                  " and " + shape_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw std::invalid_argument("operands live on different tapes");
}

// Flat index into `in` for every element of `out` (empty when in == out).
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    const std::size_t oi = k + r - in.size();
    stride[oi] = in[k] == 1 ? 0 : s;
    s *= in[k];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

inline std::size_t at_index(const std::vector<std::size_t>& map, std::size_t i) {
  return map.empty() ? i : map[i];
}

template <class F, class DA, class DB>
Var binary(std::string_view name, Var a, Var b, F f, DA da, DB db) {
  require_same_tape(a, b);
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Shape out_shape = broadcast_shape(x.shape(), y.shape());
  auto ia = broadcast_index(x.shape(), out_shape);
  auto ib = broadcast_index(y.shape(), out_shape);
  Tensor out(out_shape, 0.0);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = f(x[at_index(ia, i)], y[at_index(ib, i)]);
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(
      name, std::move(out), {aid, bid},
      [aid, bid, ia = std::move(ia), ib = std::move(ib), da, db](
          Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value(aid);
        const Tensor& y = t.value(bid);
        const Tensor& o = t.value(self);
        if (t.requires_grad(aid)) {
          Tensor& ga = t.grad_buffer(aid);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            const std::size_t ai = at_index(ia, i);
            ga[ai] += g[i] * da(x[ai], y[at_index(ib, i)], o[i]);
          }
        }
        if (t.requires_grad(bid)) {
          Tensor& gb = t.grad_buffer(bid);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            const std::size_t bi = at_index(ib, i);
            gb[bi] += g[i] * db(x[at_index(ia, i)], y[bi], o[i]);
          }
        }
      });
}

template <class F, class DF>
Var unary(std::string_view name, Var a, F f, DF df) {
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(x[i]);
  const std::size_t aid = a.id;
  return tape.record(name, std::move(out), {aid},
                     [aid, df](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad_of(self);
                       const Tensor& x = t.value(aid);
                       const Tensor& o = t.value(self);
                       Tensor& ga = t.grad_buffer(aid);
                       for (std::size_t i = 0; i < g.numel(); ++i)
                         ga[i] += g[i] * df(x[i], o[i]);
                     });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Var minimum(Var a, Var b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return y < x ? y : x; },
      [](double x, double y, double) { return y < x ? 0.0 : 1.0; },
      [](double x, double y, double) { return y < x ? 1.0 : 0.0; });
}

Var maximum(Var a, Var b) {
  return binary(
      "maximum", a, b, [](double x, double y) { return y > x ? y : x; },
      [](double x, double y, double) { return y > x ? 0.0 : 1.0; },
      [](double x, double y, double) { return y > x ? 1.0 : 0.0; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, sigmoid_value,
               [](double, double y) { return y * (1.0 - y); });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var pow_scalar(Var a, double exponent) {
  return unary(
      "pow", a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) {
        return exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0);
      });
}

Var log_clamped(Var a, double floor) {
  return unary(
      "log", a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b, double factor) {
  auto need_b = [&]() -> Var {
    if (!b) throw std::invalid_argument("binary elementwise op needs two operands");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::kAdd: return add(a, need_b());
    case ElementwiseOp::kSub: return sub(a, need_b());
    case ElementwiseOp::kMul: return mul(a, need_b());
    case ElementwiseOp::kDiv: return div(a, need_b());
    case ElementwiseOp::kMin: return minimum(a, need_b());
    case ElementwiseOp::kMax: return maximum(a, need_b());
    case ElementwiseOp::kRelu: return relu(a);
    case ElementwiseOp::kSigmoid: return sigmoid(a);
    case ElementwiseOp::kScale: return scale(a, factor);
    case ElementwiseOp::kAbs: return abs(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Linear algebra and shape ops

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0))
    throw std::invalid_argument("matmul dimension mismatch " +
                                shape_string(x.shape()) + " * " +
                                shape_string(y.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out(Shape{m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = x[i * k + p];
      const double* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(
      "matmul", std::move(out), {aid, bid},
      [aid, bid, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value(aid);
        const Tensor& y = t.value(bid);
        if (t.requires_grad(aid)) {
          Tensor& ga = t.grad_buffer(aid);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = y.data() + p * n;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              ga[i * k + p] += s;
            }
          }
        }
        if (t.requires_grad(bid)) {
          Tensor& gb = t.grad_buffer(bid);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double av = x[i * k + p];
              double* gbrow = gb.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2)
    throw std::invalid_argument("transpose needs a matrix, got " +
                                shape_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(Shape{c, r}, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const std::size_t aid = a.id;
  return a.tape->record("transpose", std::move(out), {aid},
                        [aid, r, c](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_of(self);
                          Tensor& ga = t.grad_buffer(aid);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              ga[i * c + j] += g[j * r + i];
                        });
}

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("cannot reshape " + shape_string(x.shape()) +
                                " to " + shape_string(shape));
  const std::size_t aid = a.id;
  return a.tape->record("reshape", x.reshaped(std::move(shape)), {aid},
                        [aid](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_of(self);
                          Tensor& ga = t.grad_buffer(aid);
                          for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                        });
}

// ---------------------------------------------------------------------------
// Normalizations

Var softmax(Var x, std::size_t axis) {
  const Tensor& v = x.value();
  const AxisSplit s = split_at_axis(v.shape(), axis);
  Tensor out(v.shape(), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e)
        mx = std::max(mx, v[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double ev = std::exp(v[base + e * s.inner] - mx);
        out[base + e * s.inner] = ev;
        total += ev;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  const std::size_t xid = x.id;
  return x.tape->record(
      "softmax", std::move(out), {xid}, [xid, s](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& y = t.value(self);
        Tensor& gx = t.grad_buffer(xid);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double dot = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e)
              dot += g[base + e * s.inner] * y[base + e * s.inner];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t i = base + e * s.inner;
              gx[i] += y[i] * (g[i] - dot);
            }
          }
        }
      });
}

Var layer_norm(Var x, std::size_t axis, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Tensor& v = x.value();
  const AxisSplit s = split_at_axis(v.shape(), axis);
  if (gain.value().numel() != s.extent || bias.value().numel() != s.extent)
    throw std::invalid_argument(
        "layer_norm gain/bias " + shape_string(gain.value().shape()) + "/" +
        shape_string(bias.value().shape()) + " do not match axis of " +
        shape_string(v.shape()));
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(v.shape(), 0.0);
  Tensor xhat(v.shape(), 0.0);
  std::vector<double> rstd(s.outer * s.inner);
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mean = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) mean += v[base + e * s.inner];
      mean /= n;
      double var = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double d = v[base + e * s.inner] - mean;
        var += d * d;
      }
      var /= n;
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[o * s.inner + in] = r;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t i = base + e * s.inner;
        xhat[i] = (v[i] - mean) * r;
        out[i] = gv[e] * xhat[i] + bv[e];
      }
    }
  }
  const std::size_t xid = x.id, gid = gain.id, bid = bias.id;
  return x.tape->record(
      "layer_norm", std::move(out), {xid, gid, bid},
      [xid, gid, bid, s, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& gv = t.value(gid);
        const bool want_g = t.requires_grad(gid);
        const bool want_b = t.requires_grad(bid);
        const bool want_x = t.requires_grad(xid);
        Tensor* gg = want_g ? &t.grad_buffer(gid) : nullptr;
        Tensor* gb = want_b ? &t.grad_buffer(bid) : nullptr;
        Tensor* gx = want_x ? &t.grad_buffer(xid) : nullptr;
        const double n = static_cast<double>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t i = base + e * s.inner;
              if (gg) (*gg)[e] += g[i] * xhat[i];
              if (gb) (*gb)[e] += g[i];
              const double d = g[i] * gv[e];
              sum_d += d;
              sum_dx += d * xhat[i];
            }
            if (!gx) continue;
            const double r = rstd[o * s.inner + in];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t i = base + e * s.inner;
              const double d = g[i] * gv[e];
              (*gx)[i] += r * (d - sum_d / n - xhat[i] * sum_dx / n);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Temporal sampling

Var interp_sample(Var x, Var positions) {
  require_same_tape(x, positions);
  const Tensor& v = x.value();
  if (v.rank() != 2)
    throw std::invalid_argument("interp_sample needs x as [C x T], got " +
                                shape_string(v.shape()));
  const Tensor& pos = positions.value();
  const std::size_t c = v.dim(0), len = v.dim(1), q = pos.numel();
  Tensor out(Shape{c, q}, 0.0);
  // Per query: the two knot indices (or -1 when padded) and their weights.
  std::vector<long long> lo(q), hi(q);
  std::vector<double> wlo(q), whi(q);
  const auto valid = [len](long long i) {
    return i >= 0 && i < static_cast<long long>(len);
  };
  for (std::size_t j = 0; j < q; ++j) {
    const double p = pos[j];
    const double f = std::floor(p);
    const long long i0 = static_cast<long long>(f);
    lo[j] = i0;
    hi[j] = i0 + 1;
    whi[j] = p - f;
    wlo[j] = 1.0 - whi[j];
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      if (valid(i0)) acc += wlo[j] * v[ch * len + i0];
      if (valid(i0 + 1)) acc += whi[j] * v[ch * len + i0 + 1];
      out[ch * q + j] = acc;
    }
  }
  const std::size_t xid = x.id, pid = positions.id;
  return x.tape->record(
      "interp_sample", std::move(out), {xid, pid},
      [xid, pid, c, len, q, lo = std::move(lo), hi = std::move(hi),
       wlo = std::move(wlo), whi = std::move(whi), valid](Tape& t,
                                                          std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& v = t.value(xid);
        if (t.requires_grad(xid)) {
          Tensor& gx = t.grad_buffer(xid);
          for (std::size_t j = 0; j < q; ++j) {
            const bool vl = valid(lo[j]), vh = valid(hi[j]);
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double gv = g[ch * q + j];
              if (vl) gx[ch * len + lo[j]] += wlo[j] * gv;
              if (vh) gx[ch * len + hi[j]] += whi[j] * gv;
            }
          }
        }
        if (t.requires_grad(pid)) {
          Tensor& gp = t.grad_buffer(pid);
          for (std::size_t j = 0; j < q; ++j) {
            const bool vl = valid(lo[j]), vh = valid(hi[j]);
            double acc = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double a = vl ? v[ch * len + lo[j]] : 0.0;
              const double b = vh ? v[ch * len + hi[j]] : 0.0;
              acc += g[ch * q + j] * (b - a);
            }
            gp[j] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and structural ops

Var reduce(ReduceOp op, Var x, std::optional<std::size_t> axis) {
  const Tensor& v = x.value();
  Shape out_shape;
  AxisSplit s;
  if (axis) {
    s = split_at_axis(v.shape(), *axis);
    out_shape = v.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
  } else {
    s.outer = 1;
    s.extent = v.numel();
    s.inner = 1;
  }
  Tensor out(out_shape, 0.0);
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::kMax) argmax.resize(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double acc = op == ReduceOp::kMax ? v[base] : 0.0;
      std::size_t best = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double val = v[base + e * s.inner];
        if (op == ReduceOp::kMax) {
          if (val > acc) {
            acc = val;
            best = e;
          }
        } else {
          acc += val;
        }
      }
      if (op == ReduceOp::kMean) acc /= static_cast<double>(s.extent);
      if (op == ReduceOp::kMax) argmax[o * s.inner + in] = best;
      out[o * s.inner + in] = acc;
    }
  }
  const char* name = op == ReduceOp::kSum ? "sum" : op == ReduceOp::kMean ? "mean" : "max";
  const std::size_t xid = x.id;
  return x.tape->record(
      name, std::move(out), {xid},
      [xid, s, op, argmax = std::move(argmax)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        Tensor& gx = t.grad_buffer(xid);
        const double f = op == ReduceOp::kMean ? 1.0 / static_cast<double>(s.extent) : 1.0;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            const double gv = g[o * s.inner + in];
            if (op == ReduceOp::kMax) {
              gx[base + argmax[o * s.inner + in] * s.inner] += gv;
            } else {
              for (std::size_t e = 0; e < s.extent; ++e) gx[base + e * s.inner] += f * gv;
            }
          }
        }
      });
}

Var reduce_sum(Var x, std::optional<std::size_t> axis) {
  return reduce(ReduceOp::kSum, x, axis);
}
Var reduce_mean(Var x, std::optional<std::size_t> axis) {
  return reduce(ReduceOp::kMean, x, axis);
}
Var reduce_max(Var x, std::optional<std::size_t> axis) {
  return reduce(ReduceOp::kMax, x, axis);
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size())
    throw std::out_of_range("concat axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    const Shape& sh = p.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t d = 0; ok && d < sh.size(); ++d)
      ok = d == axis || sh[d] == first[d];
    if (!ok)
      throw std::invalid_argument("concat shape mismatch " + shape_string(first) +
                                  " vs " + shape_string(sh));
    out_shape[axis] += sh[axis];
  }
  const AxisSplit so = split_at_axis(out_shape, axis);
  Tensor out(out_shape, 0.0);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t ext = v.dim(axis);
    for (std::size_t o = 0; o < so.outer; ++o)
      for (std::size_t e = 0; e < ext; ++e)
        for (std::size_t in = 0; in < so.inner; ++in)
          out[(o * so.extent + off + e) * so.inner + in] =
              v[(o * ext + e) * so.inner + in];
    ids.push_back(p.id);
    offsets.push_back(off);
    off += ext;
  }
  std::vector<std::size_t> inputs = ids;
  return parts.front().tape->record(
      "concat", std::move(out), std::move(inputs),
      [ids, offsets, so, axis](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor& gp = t.grad_buffer(ids[k]);
          const std::size_t ext = t.value(ids[k]).dim(axis);
          for (std::size_t o = 0; o < so.outer; ++o)
            for (std::size_t e = 0; e < ext; ++e)
              for (std::size_t in = 0; in < so.inner; ++in)
                gp[(o * ext + e) * so.inner + in] +=
                    g[(o * so.extent + offsets[k] + e) * so.inner + in];
        }
      });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& v = x.value();
  const AxisSplit s = split_at_axis(v.shape(), axis);
  if (begin >= end || end > s.extent)
    throw std::out_of_range("slice [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") invalid for axis of " +
                            shape_string(v.shape()));
  Shape out_shape = v.shape();
  out_shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  Tensor out(out_shape, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < ext; ++e)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[(o * ext + e) * s.inner + in] =
            v[(o * s.extent + begin + e) * s.inner + in];
  const std::size_t xid = x.id;
  return x.tape->record("slice", std::move(out), {xid},
                        [xid, s, begin, ext](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_of(self);
                          Tensor& gx = t.grad_buffer(xid);
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t e = 0; e < ext; ++e)
                              for (std::size_t in = 0; in < s.inner; ++in)
                                gx[(o * s.extent + begin + e) * s.inner + in] +=
                                    g[(o * ext + e) * s.inner + in];
                        });
}

Var gather(Var x, std::size_t axis, std::vector<std::size_t> indices) {
  const Tensor& v = x.value();
  const AxisSplit s = split_at_axis(v.shape(), axis);
  if (indices.empty()) throw std::invalid_argument("gather with no indices");
  for (std::size_t i : indices)
    if (i >= s.extent)
      throw std::out_of_range("gather index " + std::to_string(i) +
                              " out of range for " + shape_string(v.shape()));
  Shape out_shape = v.shape();
  out_shape[axis] = indices.size();
  const std::size_t ext = indices.size();
  Tensor out(out_shape, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < ext; ++e)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[(o * ext + e) * s.inner + in] =
            v[(o * s.extent + indices[e]) * s.inner + in];
  const std::size_t xid = x.id;
  return x.tape->record(
      "gather", std::move(out), {xid},
      [xid, s, indices = std::move(indices)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        Tensor& gx = t.grad_buffer(xid);
        const std::size_t ext = indices.size();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < ext; ++e)
            for (std::size_t in = 0; in < s.inner; ++in)
              gx[(o * s.extent + indices[e]) * s.inner + in] +=
                  g[(o * ext + e) * s.inner + in];
      });
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

void compare(double analytic, double numeric, std::size_t index,
             const GradCheckOptions& opt, GradCheckReport& r) {
  const double diff = std::fabs(analytic - numeric);
  const double mag = std::max(std::fabs(analytic), std::fabs(numeric));
  const double rel = mag > 0 ? diff / mag : 0.0;
  ++r.checked;
  if (diff > r.max_abs_error) {
    r.max_abs_error = diff;
    if (r.max_rel_error == 0.0) r.worst_index = index;
  }
  if (diff > opt.abs_floor && rel > r.max_rel_error) {
    r.max_rel_error = rel;
    r.worst_index = index;
  }
  if (diff > opt.abs_floor && rel > opt.rel_tol) r.passed = false;
}

}  // namespace

GradCheckReport grad_check(const TapeFunction& f, const Tensor& x0,
                           const GradCheckOptions& options,
                           const GradientHook& analytic_hook) {
  Tensor analytic;
  if (analytic_hook) {
    analytic = analytic_hook(x0);
  } else {
    Tape tape;
    Var x = tape.input(x0);
    Var y = f(tape, x);
    tape.backward(y);
    analytic = tape.grad(x);
  }
  if (analytic.numel() != x0.numel())
    throw std::invalid_argument("analytic gradient has wrong size");
  auto eval = [&f](const Tensor& at) {
    Tape tape;
    return f(tape, tape.constant(at)).value().item();
  };
  GradCheckReport report;
  Tensor probe = x0;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    probe[i] = x0[i] + options.step;
    const double fp = eval(probe);
    probe[i] = x0[i] - options.step;
    const double fm = eval(probe);
    probe[i] = x0[i];
    compare(analytic[i], (fp - fm) / (2.0 * options.step), i, options, report);
  }
  return report;
}

GradCheckReport grad_check_parameters(ParameterStore& store,
                                      const std::function<Var(Tape&)>& loss,
                                      const GradCheckOptions& options) {
  Gradients grads;
  {
    Tape tape(&store);
    grads = tape.backward(loss(tape));
  }
  auto eval = [&]() {
    Tape tape(&store);
    return loss(tape).value().item();
  };
  GradCheckReport report;
  std::size_t flat = 0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& value = store[p].value;
    for (std::size_t i = 0; i < value.numel(); ++i, ++flat) {
      const double orig = value[i];
      value[i] = orig + options.step;
      const double fp = eval();
      value[i] = orig - options.step;
      const double fm = eval();
      value[i] = orig;
      compare(grads[p][i], (fp - fm) / (2.0 * options.step), flat, options,
              report);
    }
  }
  return report;
}

}  // namespace locate
