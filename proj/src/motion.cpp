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

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "locate/motion.hpp"

namespace locate {

namespace {

constexpr double kDegenerateLength = 1e-9;

Vec3 minus(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

void validate_sequence(const MotionSequence& seq, int num_classes,
                       std::size_t min_frames) {
  const std::string where = "sequence '" + seq.id + "': ";
  if (!(seq.fps > 0.0) || !std::isfinite(seq.fps))
    throw DataError(where + "fps must be positive");
  if (seq.frames.size() < min_frames)
    throw DataError(where + "has " + std::to_string(seq.frames.size()) +
                    " frames, fewer than the required " + std::to_string(min_frames));
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    for (const Vec3& j : seq.frames[f])
      for (double c : j)
        if (!std::isfinite(c))
          throw DataError(where + "non-finite coordinate in frame " + std::to_string(f));
  const double duration = seq.duration();
  for (std::size_t i = 0; i < seq.spans.size(); ++i) {
    const LabeledSpan& s = seq.spans[i];
    const std::string span = where + "span " + std::to_string(i) + " ";
    if (s.class_id < 0 || s.class_id >= num_classes)
      throw DataError(span + "has class " + std::to_string(s.class_id) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    if (!(s.t_start < s.t_end))
      throw DataError(span + "has end <= start (" + std::to_string(s.t_start) +
                      ", " + std::to_string(s.t_end) + ")");
    if (s.t_start < 0.0 || s.t_end > duration + 1e-9)
      throw DataError(span + "lies outside [0, " + std::to_string(duration) + "]");
  }
}

std::vector<Pose> normalize_skeleton(const std::vector<Pose>& frames) {
  std::vector<Pose> out(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Pose& p = frames[f];
    const Vec3 hip = minus(p[kRightHip], p[kLeftHip]);
    const double hip_len = norm(hip);
    if (!(hip_len > kDegenerateLength))
      throw DataError("degenerate skeleton at frame " + std::to_string(f) +
                      ": hip joints coincide");
    if (!(norm(minus(p[kRightShoulder], p[kLeftShoulder])) > kDegenerateLength))
      throw DataError("degenerate skeleton at frame " + std::to_string(f) +
                      ": shoulder joints coincide");
    const Vec3 x = scaled(hip, 1.0 / hip_len);
    const Vec3 centre = scaled(
        {p[kLeftShoulder][0] + p[kRightShoulder][0], p[kLeftShoulder][1] + p[kRightShoulder][1],
         p[kLeftShoulder][2] + p[kRightShoulder][2]},
        0.5);
    const Vec3 up = minus(centre, p[kPelvis]);
    const Vec3 resid = minus(up, scaled(x, dot(up, x)));
    const double resid_len = norm(resid);
    if (!(resid_len > kDegenerateLength))
      throw DataError("degenerate skeleton at frame " + std::to_string(f) +
                      ": shoulders are collinear with the hips");
    const Vec3 y = scaled(resid, 1.0 / resid_len);
    const Vec3 z = cross(x, y);
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const Vec3 d = minus(p[j], p[kPelvis]);
      out[f][j] = {dot(x, d), dot(y, d), dot(z, d)};
    }
  }
  return out;
}

std::vector<std::size_t> snippet_starts(std::size_t num_frames,
                                        std::size_t snippet_frames,
                                        std::size_t length) {
  if (length < 1) throw std::invalid_argument("sequence length T must be >= 1");
  if (snippet_frames < 1) throw std::invalid_argument("snippet frames must be >= 1");
  if (num_frames < snippet_frames)
    throw DataError("sequence has " + std::to_string(num_frames) +
                    " frames, fewer than one snippet of " +
                    std::to_string(snippet_frames));
  std::vector<std::size_t> starts(length, 0);
  if (length == 1) return starts;
  const std::size_t span = num_frames - snippet_frames;
  const std::size_t denom = length - 1;
  for (std::size_t i = 0; i < length; ++i)
    starts[i] = (2 * i * span + denom) / (2 * denom);  // round half up
  return starts;
}

SnippetTensor snippetize(const MotionSequence& seq, std::size_t snippet_frames,
                         std::size_t length) {
  SnippetTensor out;
  out.length = length;
  out.snippet_frames = snippet_frames;
  out.source_duration = seq.duration();
  out.starts = snippet_starts(seq.frames.size(), snippet_frames, length);
  out.data.reserve(length * out.width());
  for (std::size_t s : out.starts)
    for (std::size_t f = s; f < s + snippet_frames; ++f)
      for (const Vec3& joint : seq.frames[f])
        for (double c : joint) out.data.push_back(c);
  return out;
}

void LabelMap::validate() const {
  const int n = static_cast<int>(class_names.size());
  std::set<std::string> seen;
  for (const auto& name : class_names)
    if (!seen.insert(name).second) throw DataError("duplicate class name '" + name + "'");
  for (const auto& [label, target] : mapping)
    if (target < 0 || target >= n)
      throw DataError("label '" + label + "' maps to class " + std::to_string(target) +
                      " outside [0, " + std::to_string(n) + ")");
}

MappedSpans map_labels(const std::vector<NamedSpan>& spans, const LabelMap& map) {
  MappedSpans out;
  for (const NamedSpan& s : spans) {
    auto it = map.mapping.find(s.label);
    if (it == map.mapping.end()) {
      ++out.dropped;
      continue;
    }
    out.spans.push_back({it->second, s.t_start, s.t_end});
  }
  return out;
}

LabelMap load_label_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path.string());
  LabelMap map;
  try {
    const auto doc = nlohmann::json::parse(in);
    map.class_names = doc.at("class_names").get<std::vector<std::string>>();
    for (const auto& [label, target] : doc.at("mapping").items())
      map.mapping[label] = target.get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed label map " + path.string() + ": " + e.what());
  }
  map.validate();
  return map;
}

}  // namespace locate
