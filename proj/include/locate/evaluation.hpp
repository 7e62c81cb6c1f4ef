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
#include <iosfwd>
#include <string>
#include <vector>

#include "locate/model.hpp"
#include "locate/motion.hpp"

namespace locate {

struct Detection {
  std::string seq_id;
  int class_id = 0;
  double t_start = 0.0;  // seconds
  double t_end = 0.0;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruthSpan {
  std::string seq_id;
  LabeledSpan span;
};

/// tIoU of two intervals; 0 when either is empty or they are disjoint.
double temporal_iou(double s1, double e1, double s2, double e2);

/// 0.1, 0.2, ..., 0.9
std::vector<double> default_thresholds();

/// One detection per query whose best real class beats both the threshold
/// and the no-action score. Scores are per-class sigmoids.
std::vector<Detection> decode_predictions(const RawPredictionSet& raw, const std::string& seq_id,
                                          double duration, double score_threshold);

/// Greedy per-class suppression. Output is ordered by score desc, t_start
/// asc, then input order.
std::vector<Detection> temporal_nms(const std::vector<Detection>& dets, double iou_threshold);

enum class Interpolation { kRightMax, kRaw };

/// AP of single-class detections against that class's ground truth.
double average_precision(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthSpan>& gts, double tiou,
                         Interpolation interp = Interpolation::kRightMax);

/// Same, but `ranked` is taken in the given order instead of being sorted.
double average_precision_ranked(const std::vector<Detection>& ranked,
                                const std::vector<GroundTruthSpan>& gts, double tiou,
                                Interpolation interp = Interpolation::kRightMax);

struct ConfusionMatrix {
  std::size_t num_classes = 0;       // C_cls; index C_cls is "unmatched"
  std::vector<std::int64_t> counts;  // (C+1) x (C+1), row = GT class, col = predicted

  std::int64_t at(std::size_t gt, std::size_t pred) const {
    return counts[gt * (num_classes + 1) + pred];
  }
  std::int64_t total() const;
  /// Each predicted-class column divided by its sum (zero columns stay 0).
  std::vector<double> column_normalized() const;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::string> class_names;
  std::vector<std::vector<double>> ap;  // C_cls x |thresholds|
  std::vector<double> map_per_threshold;
  double avg_map = 0.0;
  std::vector<std::int64_t> gt_counts;
  ConfusionMatrix confusion;

  /// mAP at tIoU 0.5 if that threshold was evaluated, else NaN.
  double map_at(double threshold) const;
};

/// Class ids outside [0, num_classes) throw std::invalid_argument.
EvalReport map_sweep(const std::vector<Detection>& dets,
                     const std::vector<GroundTruthSpan>& gts, std::size_t num_classes,
                     const std::vector<double>& thresholds = default_thresholds(),
                     Interpolation interp = Interpolation::kRightMax);

/// Class-agnostic best-tIoU matching; a GT may absorb several detections.
ConfusionMatrix confusion_matrix(const std::vector<Detection>& dets,
                                 const std::vector<GroundTruthSpan>& gts,
                                 std::size_t num_classes, double tiou = 0.5);

struct AnnotatedSequence {
  std::string seq_id;
  std::vector<std::vector<LabeledSpan>> annotators;
};

/// Annotator 0 is ground truth, everyone else is a score-1 detection.
/// With `all_designations` the result is averaged over every choice of the
/// ground-truth annotator.
double human_agreement_map(const std::vector<AnnotatedSequence>& sequences,
                           std::size_t num_classes, double tiou = 0.5,
                           bool all_designations = false);

std::vector<GroundTruthSpan> ground_truth_of(const Dataset& dataset);

// Detection files: one JSON object per line, lines starting with '#' ignored.
void write_detections(std::ostream& out, const std::vector<Detection>& dets);
std::vector<Detection> read_detections(std::istream& in);
void save_detections(const std::vector<Detection>& dets, const std::filesystem::path& path);
std::vector<Detection> load_detections(const std::filesystem::path& path);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
std::string report_to_csv(const EvalReport& report);

std::string render_ap_svg(const EvalReport& report);
std::string render_confusion_svg(const ConfusionMatrix& cm,
                                 const std::vector<std::string>& class_names);

}  // namespace locate
