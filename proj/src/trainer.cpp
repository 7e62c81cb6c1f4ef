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

#include "locate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "locate/random.hpp"

namespace locate {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("Adam eps must be positive");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0))
    throw std::invalid_argument("gradient clip norm must be positive");
  if (!(cb_beta >= 0.0 && cb_beta < 1.0)) throw std::invalid_argument("cb beta must lie in [0, 1)");
  if (!(cb_gamma >= 0.0)) throw std::invalid_argument("cb gamma must be non-negative");
  if (!(loss.iou >= 0.0) || !(loss.l1 >= 0.0))
    throw std::invalid_argument("span loss weights must be non-negative");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
  if (threads < 1) throw std::invalid_argument("thread count must be at least 1");
}

double clip_gradients(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads)
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= s;
  }
  return norm;
}

double adam_step(ParameterStore& params, Gradients grads, OptimizerState& state,
                 const TrainConfig& cfg, double lr) {
  if (grads.size() != params.size())
    throw std::invalid_argument("gradient count does not match parameter count");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape() != params[p].value.shape())
      throw std::invalid_argument("gradient shape mismatch for " + params[p].name);
    if (!grads[p].all_finite()) throw NumericError("non-finite gradient for " + params[p].name);
  }
  if (state.m.empty()) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      state.m.emplace_back(params[p].value.shape(), 0.0);
      state.v.emplace_back(params[p].value.shape(), 0.0);
    }
  }
  const double norm = clip_gradients(
      grads, cfg.grad_clip_norm.value_or(std::numeric_limits<double>::infinity()));
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params[p].value;
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < value.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
  return norm;
}

ClassStats class_counts(const Dataset& train, std::size_t num_classes, std::size_t num_queries,
                        double beta, double gamma, std::ostream* warn) {
  if (train.sequences.empty()) throw std::invalid_argument("training set is empty");
  ClassStats stats;
  stats.beta = beta;
  stats.gamma = gamma;
  stats.counts.assign(num_classes + 1, 0);
  for (const MotionSequence& seq : train.sequences) {
    if (seq.spans.size() > num_queries)
      throw std::invalid_argument("sequence '" + seq.id + "' has " +
                                  std::to_string(seq.spans.size()) + " spans but only " +
                                  std::to_string(num_queries) +
                                  " action queries; raise the number of queries");
    for (const LabeledSpan& s : seq.spans) {
      if (s.class_id < 0 || static_cast<std::size_t>(s.class_id) >= num_classes)
        throw std::invalid_argument("class " + std::to_string(s.class_id) + " in '" + seq.id +
                                    "' is outside the model's " + std::to_string(num_classes) +
                                    " classes");
      ++stats.counts[static_cast<std::size_t>(s.class_id)];
    }
    stats.counts[num_classes] += static_cast<std::int64_t>(num_queries - seq.spans.size());
  }
  for (std::size_t c = 0; c <= num_classes; ++c) {
    if (stats.counts[c] > 0) continue;
    if (warn && c < num_classes)
      *warn << "warning: class " << c << " never occurs in the training set; using count 1\n";
    stats.counts[c] = 1;
  }
  return stats;
}

SnippetTensor prepare_input(const MotionSequence& seq, const ModelConfig& cfg) {
  MotionSequence normalized = seq;
  normalized.frames = normalize_skeleton(seq.frames);
  return snippetize(normalized, cfg.snippet_frames, cfg.seq_len);
}

std::vector<PreparedSequence> prepare_dataset(const Dataset& dataset, const ModelConfig& cfg) {
  std::vector<PreparedSequence> out;
  out.reserve(dataset.sequences.size());
  for (const MotionSequence& seq : dataset.sequences) {
    try {
      out.push_back({seq.id, prepare_input(seq, cfg), seq.spans, seq.duration()});
    } catch (const DataError& e) {
      throw DataError("sequence '" + seq.id + "': " + e.what());
    }
  }
  return out;
}

std::vector<Detection> predict_detections(const Model& model,
                                          const std::vector<PreparedSequence>& data,
                                          double score_threshold) {
  std::vector<Detection> dets;
  for (const PreparedSequence& s : data) {
    auto d = decode_predictions(model.predict(s.input), s.id, s.duration, score_threshold);
    dets.insert(dets.end(), d.begin(), d.end());
  }
  return dets;
}

EvalReport evaluate_model(const Model& model, const std::vector<PreparedSequence>& data,
                          std::size_t num_classes, double score_threshold, double nms_iou,
                          const std::vector<double>& thresholds) {
  std::vector<GroundTruthSpan> gts;
  for (const PreparedSequence& s : data)
    for (const LabeledSpan& span : s.spans) gts.push_back({s.id, span});
  const auto dets = temporal_nms(predict_detections(model, data, score_threshold), nms_iou);
  return map_sweep(dets, gts, num_classes, thresholds);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct SequenceResult {
  Gradients grads;
  LossBreakdown breakdown;
  std::string error;
};

SequenceResult run_sequence(const Model& model, const PreparedSequence& s,
                            const ClassStats& stats, const SpanLossWeights& weights) {
  SequenceResult r;
  try {
    Tape tape(&model.params());
    const HeadOutputs out = model.forward(tape, s.input);
    HungarianLoss loss = hungarian_loss(tape, out, s.spans, s.duration, stats, weights);
    r.breakdown = std::move(loss.breakdown);
    if (!std::isfinite(r.breakdown.l_total)) throw NumericError("loss is not finite");
    r.grads = tape.backward(loss.total);
  } catch (const NumericError& e) {
    r.error = "sequence '" + s.id + "': " + e.what();
  }
  return r;
}

std::vector<SequenceResult> run_batch(const Model& model, const std::vector<PreparedSequence>& data,
                                      const std::vector<std::size_t>& batch,
                                      const ClassStats& stats, const SpanLossWeights& weights,
                                      std::size_t threads) {
  std::vector<SequenceResult> results(batch.size());
  const std::size_t workers = std::min(threads, batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i)
      results[i] = run_sequence(model, data[batch[i]], stats, weights);
    return results;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < batch.size(); i += workers)
        results[i] = run_sequence(model, data[batch[i]], stats, weights);
    });
  }
  for (std::thread& t : pool) t.join();
  return results;
}

double scheduled_lr(const TrainConfig& cfg, std::size_t epoch_index) {
  if (cfg.schedule == LrSchedule::kConstant || cfg.epochs <= 1) return cfg.learning_rate;
  const double progress = static_cast<double>(epoch_index) / static_cast<double>(cfg.epochs);
  return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

FitResult fit(const Dataset& train, const Dataset& val, Model& model, const TrainConfig& cfg,
              std::uint64_t data_seed, const EpochCallback& on_epoch) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  const ClassStats stats =
      class_counts(train, mc.num_classes, mc.queries, cfg.cb_beta, cfg.cb_gamma);
  const auto train_data = prepare_dataset(train, mc);
  if (cfg.standardize_inputs) {
    std::vector<const SnippetTensor*> inputs;
    for (const PreparedSequence& s : train_data) inputs.push_back(&s.input);
    model.set_input_normalization(fit_input_normalization(inputs));
  }
  const auto val_data = val.sequences.empty() ? train_data : prepare_dataset(val, mc);
  const auto& class_names =
      train.class_names.empty() ? default_class_names(static_cast<int>(mc.num_classes))
                                : train.class_names;

  FitResult result;
  OptimizerState opt;
  result.best = make_checkpoint(model, cfg, nullptr, stats, class_names, data_seed);
  Checkpoint last_good = result.best;

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = scheduled_lr(cfg, epoch);
    EpochLog row;
    row.epoch = epoch + 1;
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::vector<std::size_t> batch(
            order.begin() + static_cast<std::ptrdiff_t>(b),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
        auto results = run_batch(model, train_data, batch, stats, cfg.loss, cfg.threads);
        // Ordered reduction keeps the sum independent of the thread count.
        model.params().zero_grad();
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (SequenceResult& r : results) {
          if (!r.error.empty()) throw NumericError(r.error);
          model.params().accumulate(r.grads, inv);
          row.l_total += r.breakdown.l_total;
          row.l_cb += r.breakdown.l_cb;
          row.l_span += r.breakdown.l_span;
        }
        Gradients grads;
        for (const Parameter& p : model.params().all()) grads.push_back(p.grad);
        adam_step(model.params(), std::move(grads), opt, cfg, lr);
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.divergence_message = "epoch " + std::to_string(epoch + 1) + ": " + e.what();
      break;
    }
    const double n = static_cast<double>(train_data.size());
    row.l_total /= n;
    row.l_cb /= n;
    row.l_span /= n;
    if (!std::isfinite(row.l_total)) {
      result.diverged = true;
      result.divergence_message = "epoch " + std::to_string(epoch + 1) + ": loss is not finite";
      break;
    }
    row.val_map50 = std::numeric_limits<double>::quiet_NaN();
    const bool evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
    if (evaluate) {
      EvalReport rep;
      try {
        rep = evaluate_model(model, val_data, mc.num_classes, cfg.score_threshold, cfg.nms_iou,
                             {0.5});
      } catch (const NumericError& e) {
        // Finite weights can still overflow in the forward pass.
        result.diverged = true;
        result.divergence_message =
            "epoch " + std::to_string(epoch + 1) + " validation: " + e.what();
        break;
      }
      row.val_map50 = rep.map_per_threshold[0];
    }
    last_good = make_checkpoint(model, cfg, &opt, stats, class_names, data_seed);
    if (evaluate) {
      if (row.val_map50 > result.best_val_map50) {
        result.best_val_map50 = row.val_map50;
        result.best_epoch = row.epoch;
        result.best = last_good;
      }
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  if (result.diverged && result.best_epoch == 0) result.best = last_good;
  return result;
}

std::string log_to_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,l_total,l_cb,l_span,val_map50\n";
  char buf[256];
  for (const EpochLog& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.l_total, r.l_cb,
                  r.l_span, r.val_map50);
    out << buf;
  }
  return out.str();
}

}  // namespace locate
