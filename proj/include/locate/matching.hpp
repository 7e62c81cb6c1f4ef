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

// Set-prediction objective: ground truth is padded with no-action entries to
// N_a rows, matched one-to-one with the N_a predictions by minimum total cost,
// and the matched pairs are scored with class-balanced focal loss plus an
// L1 + generalized-IoU span loss.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "locate/autodiff.hpp"
#include "locate/model.hpp"
#include "locate/motion.hpp"

namespace locate {

/// Closed interval [start, end] on the time axis (seconds or normalized).
struct Interval {
  double start = 0.0;
  double end = 0.0;
};

struct SpanLossWeights {
  double iou = 2.0;
  double l1 = 5.0;
};

/// (1 - beta) / (1 - beta^count); 1 when count == 1 or beta == 0.
double class_balanced_weight(double beta, double count);

struct ClassStats {
  std::vector<std::int64_t> counts;  // C_cls + 1 entries; last is no-action
  double beta = 0.99;
  double gamma = 2.0;

  std::size_t num_classes() const { return counts.empty() ? 0 : counts.size() - 1; }
  std::size_t no_action() const { return num_classes(); }
  double weight(std::size_t class_id) const;
};

/// Temporal IoU. Throws std::invalid_argument if either span has start >= end.
double span_iou(Interval a, Interval b);

/// IoU minus the fraction of the covering hull not in the union, in [-1, 1].
double generalized_iou(Interval a, Interval b);

struct SpanLoss {
  double l_iou = 0.0;   // 1 - gIoU
  double l_l1 = 0.0;    // |ds| + |de|
  double l_span = 0.0;  // weighted sum
};

/// Throws std::invalid_argument on degenerate spans.
SpanLoss span_loss(Interval pred, Interval gt, SpanLossWeights weights);

/// Class-balanced sigmoid focal loss of one query's logits against
/// `target` (C_cls selects no-action). Probabilities are clamped at 1e-12.
double cb_focal_loss(std::span<const double> logits, std::size_t target,
                     const ClassStats& stats);

struct GroundTruthEntry {
  std::size_t class_id = 0;       // == C_cls for the no-action sentinel
  std::optional<Interval> span;   // normalized to [0, 1]; empty for sentinels
};

/// Exactly `num_queries` entries: the real spans (normalized by `duration`)
/// first, then sentinels. Throws if there are more spans than queries.
std::vector<GroundTruthEntry> pad_ground_truth(const std::vector<LabeledSpan>& gts,
                                               double duration, std::size_t num_queries,
                                               std::size_t num_classes);

/// Cost of pairing prediction `query` with `gt`: focal + span loss for real
/// entries, 0 for sentinels.
double match_cost(const RawPredictionSet& preds, std::size_t query,
                  const GroundTruthEntry& gt, const ClassStats& stats,
                  SpanLossWeights weights);

/// Row-major cost matrix; rows are padded ground truth, columns predictions.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

CostMatrix build_cost_matrix(const RawPredictionSet& preds,
                             const std::vector<GroundTruthEntry>& padded,
                             const ClassStats& stats, SpanLossWeights weights);

/// assignment[row] = matched column.
using Assignment = std::vector<std::size_t>;

/// Exact minimum-cost perfect matching. Among optimal assignments the
/// lexicographically smallest is returned. Throws std::invalid_argument on a
/// non-square or non-finite matrix.
Assignment hungarian(const CostMatrix& cost);

/// Sum of cost[r, assignment[r]] in row order.
double assignment_cost(const CostMatrix& cost, const Assignment& assignment);

struct PairDetail {
  std::size_t gt_row = 0;
  std::size_t query = 0;
  std::size_t class_id = 0;
  bool real = false;
  double l_cb = 0.0;
  double l_l1 = 0.0;
  double l_iou = 0.0;
};

struct LossBreakdown {
  double l_cb = 0.0;
  double l_l1 = 0.0;
  double l_iou = 0.0;
  double l_span = 0.0;
  double l_total = 0.0;
  std::vector<PairDetail> pairs;
};

struct HungarianLoss {
  Var total;
  LossBreakdown breakdown;
  Assignment assignment;
};

/// Builds the matched-pair loss on `out.logits`' tape. The assignment is
/// computed from the current values (or taken from `fixed`) and treated as
/// a constant by backward.
HungarianLoss hungarian_loss(Tape& tape, const HeadOutputs& out,
                             const std::vector<LabeledSpan>& gts, double duration,
                             const ClassStats& stats, SpanLossWeights weights,
                             const Assignment* fixed = nullptr);

std::pair<LossBreakdown, Assignment> hungarian_loss(const RawPredictionSet& preds,
                                                    const std::vector<LabeledSpan>& gts,
                                                    double duration, const ClassStats& stats,
                                                    SpanLossWeights weights);

}  // namespace locate
