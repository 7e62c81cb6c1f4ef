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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "locate/motion.hpp"
#include "locate/random.hpp"

namespace locate {

namespace {

// Shortest slot (seconds) one span may occupy in a generated sequence.
constexpr double kMinSlotSeconds = 1.0;
constexpr double kOverlapProbability = 0.3;

// Joints a motif may animate: everything except the pelvis, hips and
// shoulders, which define the normalized body frame.
constexpr std::array<std::size_t, 17> kMovableJoints = {
    3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 18, 19, 20, 21};

}  // namespace

void SyntheticConfig::validate() const {
  if (num_sequences < 1) throw DataError("num_sequences must be >= 1");
  if (num_classes < 1) throw DataError("num_classes must be >= 1");
  if (!(duration_range.first > 0.0) || duration_range.first > duration_range.second)
    throw DataError("duration range must satisfy 0 < min <= max");
  if (spans_per_sequence.first < 1 ||
      spans_per_sequence.first > spans_per_sequence.second)
    throw DataError("spans-per-sequence range must satisfy 1 <= min <= max");
  if (!(fps > 0.0)) throw DataError("fps must be positive");
  if (!(noise_std >= 0.0)) throw DataError("noise_std must be >= 0");
  if (duration_range.first / spans_per_sequence.second < kMinSlotSeconds)
    throw DataError("duration too short for requested spans: " +
                    std::to_string(spans_per_sequence.second) + " spans need at least " +
                    std::to_string(kMinSlotSeconds * spans_per_sequence.second) +
                    " s but the minimum duration is " +
                    std::to_string(duration_range.first) + " s");
}

const Pose& neutral_pose() {
  // x: left-to-right, y: up, z: forward (meters, pelvis at origin).
  static const Pose pose = {{
      {0.0, 0.0, 0.0},        // pelvis
      {-0.09, -0.08, 0.0},    // left hip
      {0.09, -0.08, 0.0},     // right hip
      {0.0, 0.11, -0.01},     // spine1
      {-0.10, -0.46, 0.01},   // left knee
      {0.10, -0.46, 0.01},    // right knee
      {0.0, 0.24, -0.01},     // spine2
      {-0.10, -0.86, -0.02},  // left ankle
      {0.10, -0.86, -0.02},   // right ankle
      {0.0, 0.29, 0.0},       // spine3
      {-0.10, -0.91, 0.12},   // left foot
      {0.10, -0.91, 0.12},    // right foot
      {0.0, 0.50, 0.0},       // neck
      {-0.08, 0.42, 0.0},     // left collar
      {0.08, 0.42, 0.0},      // right collar
      {0.0, 0.62, 0.03},      // head
      {-0.18, 0.45, 0.0},     // left shoulder
      {0.18, 0.45, 0.0},      // right shoulder
      {-0.44, 0.45, 0.0},     // left elbow
      {0.44, 0.45, 0.0},      // right elbow
      {-0.69, 0.45, 0.0},     // left wrist
      {0.69, 0.45, 0.0},      // right wrist
  }};
  return pose;
}

std::vector<std::size_t> motif_joints(int class_id) {
  const std::size_t n = kMovableJoints.size();
  const std::size_t k = static_cast<std::size_t>(class_id);
  return {kMovableJoints[(3 * k) % n], kMovableJoints[(3 * k + 1) % n],
          kMovableJoints[(3 * k + 2) % n]};
}

Pose motif_offset(int class_id, double tau) {
  Pose offset{};
  const double freq = 0.5 + 0.3 * (class_id % 7);
  const double amp = 0.12 + 0.04 * ((class_id / 7) % 3);
  const auto joints = motif_joints(class_id);
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / 3.0;
    const std::size_t axis = (static_cast<std::size_t>(class_id) + i) % 3;
    offset[joints[i]][axis] =
        amp * (std::sin(2.0 * std::numbers::pi * freq * tau + phase) - std::sin(phase));
  }
  return offset;
}

std::vector<MotionSequence> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<MotionSequence> out;
  out.reserve(cfg.num_sequences);
  for (std::size_t s = 0; s < cfg.num_sequences; ++s) {
    MotionSequence seq;
    char id[32];
    std::snprintf(id, sizeof id, "seq_%05zu", s);
    seq.id = id;
    seq.fps = cfg.fps;
    const double wanted = rng.uniform(cfg.duration_range.first, cfg.duration_range.second);
    const auto num_frames =
        static_cast<std::size_t>(std::max(1.0, std::round(wanted * cfg.fps)));
    const double duration = static_cast<double>(num_frames) / cfg.fps;

    const int n = rng.integer(cfg.spans_per_sequence.first, cfg.spans_per_sequence.second);
    const double slot = duration / n;
    for (int k = 0; k < n; ++k) {
      const double len = slot * rng.uniform(0.5, 0.85);
      double start = k * slot + rng.uniform(0.0, slot - len);
      const double end = start + len;
      int cls = rng.integer(0, cfg.num_classes - 1);
      if (k > 0 && rng.uniform() < kOverlapProbability) {
        const LabeledSpan& prev = seq.spans.back();
        const double pulled = k * slot - rng.uniform(0.2, 0.5) * slot;
        start = std::max(pulled, prev.t_start + 0.1 * slot);
        if (start < prev.t_end) {
          if (cfg.num_classes == 1) {
            start = prev.t_end;
          } else if (cls == prev.class_id) {
            cls = (cls + 1 + rng.integer(0, cfg.num_classes - 2)) % cfg.num_classes;
          }
        }
      }
      seq.spans.push_back({cls, start, end});
    }

    double yaw = 0.0, tx = 0.0, tz = 0.0;
    if (cfg.random_root_pose) {
      yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
      tx = rng.uniform(-1.0, 1.0);
      tz = rng.uniform(-1.0, 1.0);
    }
    const double cy = std::cos(yaw), sy = std::sin(yaw);

    seq.frames.resize(num_frames);
    for (std::size_t f = 0; f < num_frames; ++f) {
      const double t = static_cast<double>(f) / cfg.fps;
      Pose pose = neutral_pose();
      for (const LabeledSpan& span : seq.spans) {
        if (t < span.t_start || t >= span.t_end) continue;
        const Pose d = motif_offset(span.class_id, t - span.t_start);
        for (std::size_t j = 0; j < kNumJoints; ++j)
          for (std::size_t c = 0; c < 3; ++c) pose[j][c] += d[j][c];
      }
      for (Vec3& joint : pose) {
        if (cfg.noise_std > 0.0)
          for (double& c : joint) c += cfg.noise_std * rng.normal();
        if (cfg.random_root_pose) {
          const double x = joint[0], z = joint[2];
          joint[0] = cy * x + sy * z + tx;
          joint[2] = -sy * x + cy * z + tz;
        }
      }
      seq.frames[f] = pose;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::string> default_class_names(int num_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "action_%02d", c);
    names.emplace_back(buf);
  }
  return names;
}

}  // namespace locate
