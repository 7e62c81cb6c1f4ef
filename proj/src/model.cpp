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

#include "locate/model.hpp"

#include <cmath>
#include <stdexcept>

#include "locate/random.hpp"

namespace locate {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(seq_len, "seq_len");
  positive(snippet_frames, "snippet_frames");
  positive(dim, "dim");
  positive(heads, "heads");
  positive(samples, "samples");
  positive(queries, "queries");
  positive(num_classes, "num_classes");
  if (dim % heads != 0)
    throw std::invalid_argument("dim " + std::to_string(dim) +
                                " is not divisible by heads " + std::to_string(heads));
}

Tensor sinusoidal_encoding(std::size_t dim, std::size_t length) {
  Tensor pe(Shape{dim, length}, 0.0);
  for (std::size_t c = 0; c < dim; ++c) {
    const double rate =
        std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(dim));
    for (std::size_t t = 0; t < length; ++t) {
      const double angle = static_cast<double>(t) * rate;
      pe.at(c, t) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace {

Tensor xavier(std::size_t out, std::size_t in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(Shape{out, in}, 0.0);
  for (double& v : w.values()) v = rng.uniform(-a, a);
  return w;
}

}  // namespace

LinearParams Model::make_linear(const std::string& name, std::size_t out, std::size_t in,
                                Rng& rng) {
  LinearParams p;
  p.w = params_.add(name + ".w", xavier(out, in, rng));
  p.b = params_.add(name + ".b", Tensor(Shape{out, 1}, 0.0));
  return p;
}

NormParams Model::make_norm(const std::string& name) {
  return {params_.add(name + ".gain", Tensor(Shape{config_.dim}, 1.0)),
          params_.add(name + ".bias", Tensor(Shape{config_.dim}, 0.0))};
}

DeformableAttentionParams Model::make_deformable(const std::string& prefix, Rng& rng) {
  const std::size_t c = config_.dim, h = config_.heads, k = config_.samples;
  DeformableAttentionParams p;
  p.value_w = params_.add(prefix + ".value.w", xavier(c, c, rng));
  // Zero offset/weight maps with biases spreading the K samples evenly around
  // the reference: {-(K-1)/2, ..., (K-1)/2} for every head.
  p.offset_w = params_.add(prefix + ".offset.w", Tensor(Shape{h * k, c}, 0.0));
  Tensor offset_b(Shape{h * k, 1}, 0.0);
  for (std::size_t hi = 0; hi < h; ++hi)
    for (std::size_t ki = 0; ki < k; ++ki)
      offset_b[hi * k + ki] = static_cast<double>(ki) - 0.5 * static_cast<double>(k - 1);
  p.offset_b = params_.add(prefix + ".offset.b", std::move(offset_b));
  p.weight_w = params_.add(prefix + ".weight.w", Tensor(Shape{h * k, c}, 0.0));
  p.weight_b = params_.add(prefix + ".weight.b", Tensor(Shape{h * k, 1}, 0.0));
  p.out_w = params_.add(prefix + ".out.w", xavier(c, c, rng));
  p.out_b = params_.add(prefix + ".out.b", Tensor(Shape{c, 1}, 0.0));
  return p;
}

Model::Model(ModelConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t c = config_.dim;
  pe_ = sinusoidal_encoding(c, config_.seq_len);
  input_ = make_linear("input", c, config_.input_width(), rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string pre = "enc" + std::to_string(l);
    EncoderLayerParams e;
    e.attn = make_deformable(pre + ".attn", rng);
    e.norm1 = make_norm(pre + ".norm1");
    e.ffn1 = make_linear(pre + ".ffn1", config_.ffn(), c, rng);
    e.ffn2 = make_linear(pre + ".ffn2", c, config_.ffn(), rng);
    e.norm2 = make_norm(pre + ".norm2");
    encoder_.push_back(e);
  }
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string pre = "dec" + std::to_string(l);
    DecoderLayerParams d;
    d.q = make_linear(pre + ".self.q", c, c, rng);
    d.k = make_linear(pre + ".self.k", c, c, rng);
    d.v = make_linear(pre + ".self.v", c, c, rng);
    d.out = make_linear(pre + ".self.out", c, c, rng);
    d.norm1 = make_norm(pre + ".norm1");
    d.cross = make_deformable(pre + ".cross", rng);
    d.norm2 = make_norm(pre + ".norm2");
    d.ffn1 = make_linear(pre + ".ffn1", config_.ffn(), c, rng);
    d.ffn2 = make_linear(pre + ".ffn2", c, config_.ffn(), rng);
    d.norm3 = make_norm(pre + ".norm3");
    decoder_.push_back(d);
  }
  Tensor embed(Shape{c, config_.queries}, 0.0);
  for (double& v : embed.values()) v = rng.normal();
  query_embed_ = params_.add("query.embed", std::move(embed));
  // Reference logits place query q at fraction (q + 0.5) / N_a of the sequence.
  Tensor ref(Shape{config_.queries}, 0.0);
  for (std::size_t q = 0; q < config_.queries; ++q) {
    const double u = (static_cast<double>(q) + 0.5) / static_cast<double>(config_.queries);
    ref[q] = std::log(u / (1.0 - u));
  }
  query_ref_ = params_.add("query.ref", std::move(ref));
  reg1_ = make_linear("head.reg1", c, c, rng);
  reg2_ = make_linear("head.reg2", c, c, rng);
  reg3_ = make_linear("head.reg3", 2, c, rng);
  cls_ = make_linear("head.cls", config_.num_classes + 1, c, rng);
}

Var Model::linear(Tape& tape, const LinearParams& p, Var x) const {
  return add(matmul(tape.param(p.w), x), tape.param(p.b));
}

Var Model::norm(Tape& tape, const NormParams& p, Var x) const {
  return layer_norm(x, 0, tape.param(p.gain), tape.param(p.bias));
}

void Model::set_input_normalization(InputNormalization norm) {
  if (!norm.shift.empty() && norm.shift.size() != config_.input_width())
    throw std::invalid_argument("input normalization has " + std::to_string(norm.shift.size()) +
                                " features, model input has " +
                                std::to_string(config_.input_width()));
  if (!std::isfinite(norm.scale) || norm.scale <= 0.0)
    throw std::invalid_argument("input normalization scale must be positive and finite");
  for (double v : norm.shift)
    if (!std::isfinite(v)) throw std::invalid_argument("input normalization shift is not finite");
  input_norm_ = std::move(norm);
}

InputNormalization fit_input_normalization(const std::vector<const SnippetTensor*>& snippets) {
  InputNormalization norm;
  if (snippets.empty()) return norm;
  const std::size_t d = snippets.front()->width();
  std::vector<double> sum(d, 0.0);
  std::size_t rows = 0;
  for (const SnippetTensor* s : snippets) {
    if (s->width() != d) throw std::invalid_argument("snippet widths differ");
    for (std::size_t t = 0; t < s->length; ++t)
      for (std::size_t i = 0; i < d; ++i) sum[i] += s->data[t * d + i];
    rows += s->length;
  }
  norm.shift.resize(d);
  for (std::size_t i = 0; i < d; ++i) norm.shift[i] = sum[i] / static_cast<double>(rows);
  // Second pass keeps the variance free of cancellation.
  double var = 0.0;
  for (const SnippetTensor* s : snippets)
    for (std::size_t t = 0; t < s->length; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        const double c = s->data[t * d + i] - norm.shift[i];
        var += c * c;
      }
  var /= static_cast<double>(rows * d);
  norm.scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  return norm;
}

Var Model::embed_input(Tape& tape, const SnippetTensor& snippets) const {
  if (snippets.length != config_.seq_len || snippets.width() != config_.input_width() ||
      snippets.data.size() != snippets.length * snippets.width())
    throw std::invalid_argument(
        "snippet tensor " + std::to_string(snippets.length) + "x" +
        std::to_string(snippets.width()) + " does not match model input " +
        std::to_string(config_.seq_len) + "x" + std::to_string(config_.input_width()));
  const std::size_t t_len = snippets.length, d = snippets.width();
  Tensor cols(Shape{d, t_len}, 0.0);
  const std::vector<double>& shift = input_norm_.shift;
  const double scale = input_norm_.scale;
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double v = snippets.data[t * d + i];
      cols[i * t_len + t] = shift.empty() ? v * scale : (v - shift[i]) * scale;
    }
  Var x = linear(tape, input_, tape.constant(std::move(cols)));
  return add(x, tape.constant(pe_));
}

std::vector<Var> Model::deformable_heads(Tape& tape, const DeformableAttentionParams& p,
                                         Var queries, Var reference, Var x) const {
  const std::size_t h = config_.heads, k = config_.samples, d = config_.head_dim();
  const std::size_t q = queries.shape().at(1);
  Var values = matmul(tape.param(p.value_w), x);
  Var offsets = add(matmul(tape.param(p.offset_w), queries), tape.param(p.offset_b));
  Var logits = add(matmul(tape.param(p.weight_w), queries), tape.param(p.weight_b));
  std::vector<Var> heads;
  heads.reserve(h);
  for (std::size_t hi = 0; hi < h; ++hi) {
    Var head_values = slice(values, 0, hi * d, (hi + 1) * d);
    Var weights = softmax(slice(logits, 0, hi * k, (hi + 1) * k), 0);
    Var acc;
    for (std::size_t ki = 0; ki < k; ++ki) {
      const std::size_t row = hi * k + ki;
      Var pos = add(reference, reshape(slice(offsets, 0, row, row + 1), Shape{q}));
      Var term = mul(interp_sample(head_values, pos), slice(weights, 0, ki, ki + 1));
      acc = ki == 0 ? term : add(acc, term);
    }
    heads.push_back(acc);
  }
  return heads;
}

Var Model::deformable_attention(Tape& tape, const DeformableAttentionParams& p, Var queries,
                                Var reference, Var x) const {
  Var merged = concat(deformable_heads(tape, p, queries, reference, x), 0);
  return add(matmul(tape.param(p.out_w), merged), tape.param(p.out_b));
}

Var Model::encoder_forward(Tape& tape, Var x) const {
  const std::size_t t_len = x.shape().at(1);
  Tensor ref(Shape{t_len}, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) ref[t] = static_cast<double>(t);
  Var reference = tape.constant(std::move(ref));
  for (const EncoderLayerParams& layer : encoder_) {
    x = norm(tape, layer.norm1, add(x, deformable_attention(tape, layer.attn, x, reference, x)));
    Var f = linear(tape, layer.ffn2, relu(linear(tape, layer.ffn1, x)));
    x = norm(tape, layer.norm2, add(x, f));
  }
  return x;
}

Var Model::reference_points(Tape& tape) const {
  return scale(sigmoid(tape.param(query_ref_)), static_cast<double>(config_.seq_len - 1));
}

Var Model::decoder_forward(Tape& tape, Var memory) const {
  Var y = tape.param(query_embed_);
  if (decoder_.empty()) return y;
  const std::size_t h = config_.heads, d = config_.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Var reference = reference_points(tape);
  for (const DecoderLayerParams& layer : decoder_) {
    Var qs = linear(tape, layer.q, y);
    Var ks = linear(tape, layer.k, y);
    Var vs = linear(tape, layer.v, y);
    std::vector<Var> heads;
    for (std::size_t hi = 0; hi < h; ++hi) {
      Var qh = slice(qs, 0, hi * d, (hi + 1) * d);
      Var kh = slice(ks, 0, hi * d, (hi + 1) * d);
      Var vh = slice(vs, 0, hi * d, (hi + 1) * d);
      // scores[i, j]: query i attending to query j.
      Var attn = softmax(scale(matmul(transpose(qh), kh), inv_sqrt_d), 1);
      heads.push_back(matmul(vh, transpose(attn)));
    }
    Var self_out = linear(tape, layer.out, concat(heads, 0));
    y = norm(tape, layer.norm1, add(y, self_out));
    y = norm(tape, layer.norm2,
             add(y, deformable_attention(tape, layer.cross, y, reference, memory)));
    Var f = linear(tape, layer.ffn2, relu(linear(tape, layer.ffn1, y)));
    y = norm(tape, layer.norm3, add(y, f));
  }
  return y;
}

HeadOutputs Model::predict_heads(Tape& tape, Var y) const {
  const std::size_t n = y.shape().at(1);
  HeadOutputs out;
  Var hidden = relu(linear(tape, reg1_, y));
  hidden = relu(linear(tape, reg2_, hidden));
  out.raw_spans = sigmoid(linear(tape, reg3_, hidden));
  Var a = reshape(slice(out.raw_spans, 0, 0, 1), Shape{n});
  Var b = reshape(slice(out.raw_spans, 0, 1, 2), Shape{n});
  out.starts = minimum(a, b);
  out.ends = maximum(a, b);
  out.logits = linear(tape, cls_, y);
  return out;
}

HeadOutputs Model::forward(Tape& tape, const SnippetTensor& snippets) const {
  Var x = embed_input(tape, snippets);
  Var memory = encoder_forward(tape, x);
  Var y = decoder_forward(tape, memory);
  return predict_heads(tape, y);
}

RawPredictionSet detach(const HeadOutputs& out) {
  const Tensor& logits = out.logits.value();
  const Tensor& starts = out.starts.value();
  const Tensor& ends = out.ends.value();
  const Tensor& raw = out.raw_spans.value();
  RawPredictionSet r;
  r.num_logits = logits.dim(0);
  r.num_queries = logits.dim(1);
  r.class_logits.resize(r.num_queries * r.num_logits);
  r.spans.resize(2 * r.num_queries);
  r.raw_spans.resize(2 * r.num_queries);
  for (std::size_t q = 0; q < r.num_queries; ++q) {
    for (std::size_t c = 0; c < r.num_logits; ++c)
      r.class_logits[q * r.num_logits + c] = logits[c * r.num_queries + q];
    r.spans[2 * q] = starts[q];
    r.spans[2 * q + 1] = ends[q];
    r.raw_spans[2 * q] = raw[q];
    r.raw_spans[2 * q + 1] = raw[r.num_queries + q];
  }
  return r;
}

RawPredictionSet Model::predict(const SnippetTensor& snippets) const {
  Tape tape(&params_);
  return detach(forward(tape, snippets));
}

}  // namespace locate
