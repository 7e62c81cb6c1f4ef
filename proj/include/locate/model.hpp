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

// Transformer encoder-decoder for temporal action localization.
//
// Features are kept channel-major: a sequence is a [C x T] tensor and the
// decoder state is [C x N_a]. Every linear map is W [out x in] applied on the
// left with a [out x 1] bias.

#include <cstdint>
#include <string>
#include <vector>

#include "locate/autodiff.hpp"
#include "locate/motion.hpp"

namespace locate {

class Rng;

struct ModelConfig {
  std::size_t seq_len = 100;         // T
  std::size_t snippet_frames = 8;    // N_f
  std::size_t dim = 256;             // C
  std::size_t encoder_layers = 4;    // L_e
  std::size_t decoder_layers = 4;    // L_d
  std::size_t heads = 4;             // H
  std::size_t samples = 4;           // K
  std::size_t queries = 30;          // N_a
  std::size_t num_classes = 20;      // C_cls, excluding no-action
  std::size_t ffn_width = 0;         // 0 selects 4 * dim
  std::uint64_t seed = 1;

  std::size_t input_width() const { return kNumJoints * 3 * snippet_frames; }
  std::size_t ffn() const { return ffn_width ? ffn_width : 4 * dim; }
  std::size_t head_dim() const { return dim / heads; }
  /// Throws std::invalid_argument on a non-positive field or dim % heads != 0.
  void validate() const;
};

/// Fixed affine map applied to snippet features before the input projection:
/// (x - shift) * scale. An empty shift is the identity.
struct InputNormalization {
  std::vector<double> shift;  // one entry per input feature
  double scale = 1.0;

  bool identity() const { return shift.empty() && scale == 1.0; }
  friend bool operator==(const InputNormalization&, const InputNormalization&) = default;
};

/// Per-feature mean and one pooled scale 1 / sqrt(mean per-feature variance)
/// over every snippet. The pooled scale keeps near-constant features (sensor
/// noise) small instead of inflating them to unit variance.
InputNormalization fit_input_normalization(const std::vector<const SnippetTensor*>& snippets);

/// Per-query network outputs, detached from any tape.
struct RawPredictionSet {
  std::size_t num_queries = 0;
  std::size_t num_logits = 0;           // C_cls + 1; last index is no-action
  std::vector<double> class_logits;     // N_a x (C_cls + 1), row-major
  std::vector<double> spans;            // N_a x 2 canonical (start, end) in (0,1)
  std::vector<double> raw_spans;        // N_a x 2 squashed, before min/max

  double logit(std::size_t q, std::size_t c) const { return class_logits[q * num_logits + c]; }
  double start(std::size_t q) const { return spans[2 * q]; }
  double end(std::size_t q) const { return spans[2 * q + 1]; }

  friend bool operator==(const RawPredictionSet&, const RawPredictionSet&) = default;
};

/// Network outputs still attached to a tape.
struct HeadOutputs {
  Var logits;     // [(C_cls + 1) x N_a]
  Var starts;     // [N_a]
  Var ends;       // [N_a]
  Var raw_spans;  // [2 x N_a] squashed, before canonicalization
};

/// Parameter indices of one deformable attention block.
struct DeformableAttentionParams {
  std::size_t value_w;   // W^V, [C x C], no bias (linear in sampled x)
  std::size_t offset_w;  // [H K x C]
  std::size_t offset_b;  // [H K x 1]
  std::size_t weight_w;  // [H K x C]
  std::size_t weight_b;  // [H K x 1]
  std::size_t out_w;     // [C x C]
  std::size_t out_b;     // [C x 1]
};

struct LinearParams {
  std::size_t w;
  std::size_t b;
};

struct NormParams {
  std::size_t gain;
  std::size_t bias;
};

struct EncoderLayerParams {
  DeformableAttentionParams attn;
  NormParams norm1;
  LinearParams ffn1, ffn2;
  NormParams norm2;
};

struct DecoderLayerParams {
  LinearParams q, k, v, out;  // dense self-attention among queries
  NormParams norm1;
  DeformableAttentionParams cross;
  NormParams norm2;
  LinearParams ffn1, ffn2;
  NormParams norm3;
};

/// Fixed sinusoidal encoding table [C x T].
Tensor sinusoidal_encoding(std::size_t dim, std::size_t length);

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }
  const Tensor& positional_encoding() const noexcept { return pe_; }
  const InputNormalization& input_normalization() const noexcept { return input_norm_; }
  /// Throws std::invalid_argument on a size mismatch or a non-finite value.
  void set_input_normalization(InputNormalization norm);

  const std::vector<EncoderLayerParams>& encoder_params() const { return encoder_; }
  const std::vector<DecoderLayerParams>& decoder_params() const { return decoder_; }

  /// Projected snippets plus positional encoding, [C x T].
  Var embed_input(Tape& tape, const SnippetTensor& snippets) const;

  /// Deformable attention for a block of queries. `queries` is [C x Q],
  /// `reference` holds Q temporal positions and `x` is [C x T]; returns
  /// [C x Q] after the output projection.
  Var deformable_attention(Tape& tape, const DeformableAttentionParams& p,
                           Var queries, Var reference, Var x) const;

  /// Per-head sampled values before the output projection, each [C/H x Q].
  std::vector<Var> deformable_heads(Tape& tape, const DeformableAttentionParams& p,
                                    Var queries, Var reference, Var x) const;

  Var encoder_forward(Tape& tape, Var x) const;
  Var decoder_forward(Tape& tape, Var memory) const;
  HeadOutputs predict_heads(Tape& tape, Var y) const;

  /// embed_input -> encoder -> decoder -> heads on `tape`.
  HeadOutputs forward(Tape& tape, const SnippetTensor& snippets) const;
  /// Tape-free convenience wrapper.
  RawPredictionSet predict(const SnippetTensor& snippets) const;

  /// Decoder reference positions in (0, T-1), one per query.
  Var reference_points(Tape& tape) const;

 private:
  DeformableAttentionParams make_deformable(const std::string& prefix, Rng& rng);
  LinearParams make_linear(const std::string& name, std::size_t out, std::size_t in, Rng& rng);
  NormParams make_norm(const std::string& name);
  Var linear(Tape& tape, const LinearParams& p, Var x) const;
  Var norm(Tape& tape, const NormParams& p, Var x) const;

  ModelConfig config_;
  ParameterStore params_;
  Tensor pe_;
  InputNormalization input_norm_;
  LinearParams input_;
  std::vector<EncoderLayerParams> encoder_;
  std::vector<DecoderLayerParams> decoder_;
  std::size_t query_embed_;
  std::size_t query_ref_;
  LinearParams reg1_, reg2_, reg3_;
  LinearParams cls_;
};

RawPredictionSet detach(const HeadOutputs& out);

}  // namespace locate
