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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "locate/autodiff.hpp"
#include "locate/evaluation.hpp"
#include "locate/matching.hpp"
#include "locate/model.hpp"
#include "locate/motion.hpp"

namespace locate {

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  double learning_rate = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  std::optional<double> grad_clip_norm = 0.1;
  std::uint64_t seed = 1;
  SpanLossWeights loss;
  double cb_beta = 0.99;
  double cb_gamma = 2.0;
  LrSchedule schedule = LrSchedule::kConstant;
  // Validation decoding.
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  std::size_t eval_every = 1;  // epochs between validation passes
  std::size_t threads = 1;     // >1 runs batch elements on parallel tapes
  bool standardize_inputs = true;  // fit the model's input normalization to the training set

  /// Throws std::invalid_argument.
  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// Scales `grads` in place so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(Gradients& grads, double max_norm);

/// One Adam update with bias correction, after optional global-norm
/// clipping. Throws NumericError on a non-finite gradient. Returns the
/// pre-clip gradient norm.
double adam_step(ParameterStore& params, Gradients grads, OptimizerState& state,
                 const TrainConfig& cfg, double lr);

/// Span counts per class over `train`, plus the no-action count
/// sum_i (N_a - n_i). Classes never seen get count 1 and a warning on `warn`.
ClassStats class_counts(const Dataset& train, std::size_t num_classes, std::size_t num_queries,
                        double beta, double gamma, std::ostream* warn = nullptr);

/// Normalized skeleton sequence cut into the model's T snippets.
SnippetTensor prepare_input(const MotionSequence& seq, const ModelConfig& cfg);

struct PreparedSequence {
  std::string id;
  SnippetTensor input;
  std::vector<LabeledSpan> spans;
  double duration = 0.0;
};

std::vector<PreparedSequence> prepare_dataset(const Dataset& dataset, const ModelConfig& cfg);

/// Decoded detections for every sequence (before NMS).
std::vector<Detection> predict_detections(const Model& model,
                                          const std::vector<PreparedSequence>& data,
                                          double score_threshold);

/// Decode, NMS and map_sweep in one call.
EvalReport evaluate_model(const Model& model, const std::vector<PreparedSequence>& data,
                          std::size_t num_classes, double score_threshold, double nms_iou,
                          const std::vector<double>& thresholds = default_thresholds());

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double l_total = 0.0;   // means over the epoch's sequences
  double l_cb = 0.0;
  double l_span = 0.0;
  double val_map50 = 0.0;  // NaN on epochs without a validation pass
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  TrainConfig train;
  std::uint64_t step = 0;
  std::uint64_t data_seed = 0;
  ClassStats stats;
  std::vector<std::string> class_names;
  InputNormalization input_norm;
  std::vector<Parameter> params;  // grads left empty
  std::optional<OptimizerState> optimizer;
};

Checkpoint make_checkpoint(const Model& model, const TrainConfig& train,
                           const OptimizerState* optimizer, const ClassStats& stats,
                           const std::vector<std::string>& class_names, std::uint64_t data_seed);

/// Rebuilds the network; throws DataError on missing or mis-shaped tensors.
Model model_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError on bad magic, unsupported version or inconsistent shapes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct FitResult {
  std::vector<EpochLog> log;
  Checkpoint best;
  double best_val_map50 = -1.0;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string divergence_message;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `model` in place. `val` may be empty, in which case the training
/// set is used for checkpoint selection. Divergence stops training and is
/// reported through FitResult; `best` then holds the last good parameters
/// if no validation pass has completed.
FitResult fit(const Dataset& train, const Dataset& val, Model& model, const TrainConfig& cfg,
              std::uint64_t data_seed = 0, const EpochCallback& on_epoch = {});

std::string log_to_csv(const std::vector<EpochLog>& log);

}  // namespace locate
