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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace locate {

// SMPL 22-joint body (hands excluded).
inline constexpr std::size_t kNumJoints = 22;
inline constexpr std::size_t kPelvis = 0;
inline constexpr std::size_t kLeftHip = 1;
inline constexpr std::size_t kRightHip = 2;
inline constexpr std::size_t kLeftShoulder = 16;
inline constexpr std::size_t kRightShoulder = 17;

using Vec3 = std::array<double, 3>;
using Pose = std::array<Vec3, kNumJoints>;

/// Malformed input data: bad files, broken invariants, impossible configs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledSpan {
  int class_id = 0;
  double t_start = 0.0;  // seconds
  double t_end = 0.0;

  friend bool operator==(const LabeledSpan&, const LabeledSpan&) = default;
};

struct MotionSequence {
  std::string id;
  double fps = 30.0;
  std::vector<Pose> frames;
  std::vector<LabeledSpan> spans;

  double duration() const { return static_cast<double>(frames.size()) / fps; }
  friend bool operator==(const MotionSequence&, const MotionSequence&) = default;
};

/// Throws DataError if any MotionSequence invariant is broken. `num_classes`
/// bounds class ids; `min_frames` is the smallest accepted frame count.
void validate_sequence(const MotionSequence& seq, int num_classes,
                       std::size_t min_frames = 1);

/// Model input: T rows of D = 66 * snippet_frames values.
struct SnippetTensor {
  std::size_t length = 0;          // T
  std::size_t snippet_frames = 0;  // N_f
  double source_duration = 0.0;    // seconds
  std::vector<std::size_t> starts; // first source frame of each snippet
  std::vector<double> data;        // row-major T x D

  std::size_t width() const { return kNumJoints * 3 * snippet_frames; }
  double at(std::size_t row, std::size_t col) const { return data[row * width() + col]; }
};

/// Rigidly maps every frame into the body-centred frame: pelvis at the
/// origin, left-to-right hip along +x, and the pelvis-to-shoulder-centre
/// direction (orthogonalized against the hips) along +y; z = x cross y.
std::vector<Pose> normalize_skeleton(const std::vector<Pose>& frames);

/// First frame of each of `length` snippets of `snippet_frames` frames over
/// `num_frames` source frames: round(i * (F - N_f) / (T - 1)).
std::vector<std::size_t> snippet_starts(std::size_t num_frames,
                                        std::size_t snippet_frames,
                                        std::size_t length);

/// Builds the T x (66 N_f) input from `seq.frames` as given (normalize first).
SnippetTensor snippetize(const MotionSequence& seq, std::size_t snippet_frames,
                         std::size_t length);

// ---------------------------------------------------------------------------
// Label mapping

struct NamedSpan {
  std::string label;
  double t_start = 0.0;
  double t_end = 0.0;
};

struct LabelMap {
  std::map<std::string, int> mapping;  // source label -> target class id
  std::vector<std::string> class_names;

  /// Throws DataError on out-of-range targets or duplicate class names.
  void validate() const;
};

struct MappedSpans {
  std::vector<LabeledSpan> spans;
  std::size_t dropped = 0;
};

MappedSpans map_labels(const std::vector<NamedSpan>& spans, const LabelMap& map);

LabelMap load_label_map(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  std::size_t num_sequences = 20;
  int num_classes = 5;
  std::pair<double, double> duration_range{8.0, 12.0};  // seconds
  std::pair<int, int> spans_per_sequence{1, 3};
  double fps = 30.0;
  double noise_std = 0.005;  // meters
  std::uint64_t seed = 1;
  bool random_root_pose = false;  // random yaw + translation per sequence

  /// Throws DataError when the ranges are empty or spans cannot fit.
  void validate() const;
};

/// Neutral standing pose already in the normalized body frame.
const Pose& neutral_pose();

/// Joint indices animated by the motif of `class_id`.
std::vector<std::size_t> motif_joints(int class_id);

/// Displacement of the class motif `tau` seconds after its span starts.
Pose motif_offset(int class_id, double tau);

std::vector<MotionSequence> generate_synthetic(const SyntheticConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset files

struct Dataset {
  double fps = 30.0;
  std::vector<std::string> class_names;
  std::vector<MotionSequence> sequences;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

std::vector<std::string> default_class_names(int num_classes);

std::string dataset_to_json(const Dataset& dataset);
/// Parses and validates a dataset; sequences with fewer than `min_frames`
/// frames are rejected. With `labels`, spans are read by string label and
/// mapped; the number of unmapped spans goes to `dropped`.
Dataset dataset_from_json(const std::string& text, std::size_t min_frames = 1,
                          const LabelMap* labels = nullptr, std::size_t* dropped = nullptr);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, std::size_t min_frames = 1,
                     const LabelMap* labels = nullptr, std::size_t* dropped = nullptr);

}  // namespace locate
