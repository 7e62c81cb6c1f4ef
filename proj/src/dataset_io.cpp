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

// Dataset JSON:
//   {"fps": r, "class_names": [...],
//    "sequences": [{"id": s, "frames": [[[x,y,z] x 22] x F],
//                   "spans": [{"class": i, "start": r, "end": r}]}]}
// With a label map, spans carry {"label": s} instead of "class", unmapped
// labels are dropped and "class_names" comes from the map.
// Joint order follows SMPL: pelvis 0, hips 1/2, shoulders 16/17.

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "locate/motion.hpp"

namespace locate {

using nlohmann::json;

std::string dataset_to_json(const Dataset& dataset) {
  json doc;
  doc["fps"] = dataset.fps;
  doc["class_names"] = dataset.class_names;
  json seqs = json::array();
  for (const MotionSequence& seq : dataset.sequences) {
    if (seq.fps != dataset.fps)
      throw DataError("sequence '" + seq.id + "' fps differs from the dataset fps");
    json frames = json::array();
    for (const Pose& pose : seq.frames) {
      json joints = json::array();
      for (const Vec3& j : pose) joints.push_back({j[0], j[1], j[2]});
      frames.push_back(std::move(joints));
    }
    json spans = json::array();
    for (const LabeledSpan& s : seq.spans)
      spans.push_back({{"class", s.class_id}, {"start", s.t_start}, {"end", s.t_end}});
    seqs.push_back({{"id", seq.id}, {"frames", std::move(frames)}, {"spans", std::move(spans)}});
  }
  doc["sequences"] = std::move(seqs);
  return doc.dump();
}

Dataset dataset_from_json(const std::string& text, std::size_t min_frames,
                          const LabelMap* labels, std::size_t* dropped) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed dataset JSON: ") + e.what());
  }
  Dataset ds;
  std::string context = "top level";
  try {
    ds.fps = doc.at("fps").get<double>();
    if (labels)
      ds.class_names = labels->class_names;
    else
      ds.class_names = doc.at("class_names").get<std::vector<std::string>>();
    if (dropped) *dropped = 0;
    const json& seqs = doc.at("sequences");
    if (!seqs.is_array()) throw DataError("'sequences' must be an array");
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const json& js = seqs[i];
      MotionSequence seq;
      context = "sequence " + std::to_string(i);
      seq.id = js.at("id").get<std::string>();
      context += " ('" + seq.id + "')";
      seq.fps = ds.fps;
      const json& frames = js.at("frames");
      seq.frames.resize(frames.size());
      for (std::size_t f = 0; f < frames.size(); ++f) {
        const json& joints = frames[f];
        if (!joints.is_array() || joints.size() != kNumJoints)
          throw DataError(context + ", frame " + std::to_string(f) + ": expected 22 joints, got " +
                          std::to_string(joints.is_array() ? joints.size() : 0));
        for (std::size_t j = 0; j < kNumJoints; ++j) {
          const json& xyz = joints[j];
          if (!xyz.is_array() || xyz.size() != 3)
            throw DataError(context + ", frame " + std::to_string(f) + ", joint " +
                            std::to_string(j) + ": expected 3 coordinates");
          for (std::size_t c = 0; c < 3; ++c) seq.frames[f][j][c] = xyz[c].get<double>();
        }
      }
      if (labels) {
        std::vector<NamedSpan> named;
        for (const json& jspan : js.at("spans"))
          named.push_back({jspan.at("label").get<std::string>(), jspan.at("start").get<double>(),
                           jspan.at("end").get<double>()});
        MappedSpans mapped = map_labels(named, *labels);
        seq.spans = std::move(mapped.spans);
        if (dropped) *dropped += mapped.dropped;
      } else {
        for (const json& jspan : js.at("spans"))
          seq.spans.push_back({jspan.at("class").get<int>(), jspan.at("start").get<double>(),
                               jspan.at("end").get<double>()});
      }
      validate_sequence(seq, ds.num_classes(), min_frames);
      ds.sequences.push_back(std::move(seq));
    }
  } catch (const json::exception& e) {
    throw DataError(context + ": " + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << dataset_to_json(dataset) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t min_frames,
                     const LabelMap* labels, std::size_t* dropped) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return dataset_from_json(buf.str(), min_frames, labels, dropped);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace locate
