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

#include "locate/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace locate {

using nlohmann::json;

double temporal_iou(double s1, double e1, double s2, double e2) {
  if (!(s1 < e1) || !(s2 < e2)) return 0.0;
  const double inter = std::min(e1, e2) - std::max(s1, s2);
  if (inter <= 0.0) return 0.0;
  return inter / ((e1 - s1) + (e2 - s2) - inter);
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
  return t;
}

namespace {

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Rank order shared by NMS and AP.
std::vector<std::size_t> rank_order(const std::vector<Detection>& dets, bool seq_id_tiebreak) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Detection& x = dets[a];
    const Detection& y = dets[b];
    if (x.score != y.score) return x.score > y.score;
    if (x.t_start != y.t_start) return x.t_start < y.t_start;
    if (seq_id_tiebreak && x.seq_id != y.seq_id) return x.seq_id < y.seq_id;
    return false;
  });
  return order;
}

}  // namespace

std::vector<Detection> decode_predictions(const RawPredictionSet& raw, const std::string& seq_id,
                                          double duration, double score_threshold) {
  std::vector<Detection> out;
  if (raw.num_logits < 2) return out;
  const std::size_t no_action = raw.num_logits - 1;
  for (std::size_t q = 0; q < raw.num_queries; ++q) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < no_action; ++c)
      if (raw.logit(q, c) > raw.logit(q, best)) best = c;
    const double score = sigmoid_of(raw.logit(q, best));
    if (score < score_threshold) continue;
    if (sigmoid_of(raw.logit(q, no_action)) > score) continue;
    const double s = raw.start(q) * duration;
    const double e = raw.end(q) * duration;
    if (!(s < e)) continue;
    out.push_back({seq_id, static_cast<int>(best), s, e, score});
  }
  return out;
}

std::vector<Detection> temporal_nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Detection> kept;
  for (std::size_t i : rank_order(dets, false)) {
    const Detection& d = dets[i];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id != d.class_id || k.seq_id != d.seq_id) continue;
      if (temporal_iou(k.t_start, k.t_end, d.t_start, d.t_end) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double average_precision_ranked(const std::vector<Detection>& ranked,
                                const std::vector<GroundTruthSpan>& gts, double tiou,
                                Interpolation interp) {
  if (gts.empty()) return 0.0;
  std::vector<bool> used(gts.size(), false);
  std::vector<double> precision;
  std::vector<bool> is_tp;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const Detection& d = ranked[r];
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].seq_id != d.seq_id) continue;
      const double iou =
          temporal_iou(d.t_start, d.t_end, gts[g].span.t_start, gts[g].span.t_end);
      if (iou >= tiou && iou > best_iou) {
        best = g;
        best_iou = iou;
      }
    }
    const bool hit = best < gts.size();
    if (hit) {
      used[best] = true;
      ++tp;
    }
    is_tp.push_back(hit);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
  }
  if (interp == Interpolation::kRightMax)
    for (std::size_t r = precision.size(); r-- > 1;)
      precision[r - 1] = std::max(precision[r - 1], precision[r]);
  double sum = 0.0;
  for (std::size_t r = 0; r < precision.size(); ++r)
    if (is_tp[r]) sum += precision[r];
  return sum / static_cast<double>(gts.size());
}

double average_precision(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthSpan>& gts, double tiou,
                         Interpolation interp) {
  std::vector<Detection> ranked;
  ranked.reserve(dets.size());
  for (std::size_t i : rank_order(dets, true)) ranked.push_back(dets[i]);
  return average_precision_ranked(ranked, gts, tiou, interp);
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::vector<double> ConfusionMatrix::column_normalized() const {
  const std::size_t n = num_classes + 1;
  std::vector<double> out(n * n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::int64_t sum = 0;
    for (std::size_t r = 0; r < n; ++r) sum += at(r, c);
    if (sum == 0) continue;
    for (std::size_t r = 0; r < n; ++r)
      out[r * n + c] = static_cast<double>(at(r, c)) / static_cast<double>(sum);
  }
  return out;
}

double EvalReport::map_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (std::fabs(thresholds[i] - threshold) < 1e-9) return map_per_threshold[i];
  return std::numeric_limits<double>::quiet_NaN();
}

namespace {

void check_class(int class_id, std::size_t num_classes, const char* what) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= num_classes)
    throw std::invalid_argument(std::string(what) + " class " + std::to_string(class_id) +
                                " outside [0, " + std::to_string(num_classes) + ")");
}

// Per-class AP table with a caller-supplied ranking of each class's detections.
template <typename RankFn>
EvalReport sweep(const std::vector<Detection>& dets, const std::vector<GroundTruthSpan>& gts,
                 std::size_t num_classes, const std::vector<double>& thresholds,
                 Interpolation interp, RankFn rank) {
  std::vector<std::vector<Detection>> by_class(num_classes);
  std::vector<std::vector<GroundTruthSpan>> gt_by_class(num_classes);
  for (const Detection& d : dets) {
    check_class(d.class_id, num_classes, "detection");
    by_class[d.class_id].push_back(d);
  }
  for (const GroundTruthSpan& g : gts) {
    check_class(g.span.class_id, num_classes, "ground-truth");
    gt_by_class[g.span.class_id].push_back(g);
  }
  EvalReport report;
  report.thresholds = thresholds;
  report.class_names = default_class_names(static_cast<int>(num_classes));
  report.ap.assign(num_classes, std::vector<double>(thresholds.size(), 0.0));
  report.gt_counts.assign(num_classes, 0);
  report.map_per_threshold.assign(thresholds.size(), 0.0);
  std::size_t included = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    report.gt_counts[c] = static_cast<std::int64_t>(gt_by_class[c].size());
    const std::vector<Detection> ranked = rank(by_class[c]);
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      report.ap[c][t] = average_precision_ranked(ranked, gt_by_class[c], thresholds[t], interp);
    if (gt_by_class[c].empty()) continue;
    ++included;
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      report.map_per_threshold[t] += report.ap[c][t];
  }
  if (included > 0)
    for (double& m : report.map_per_threshold) m /= static_cast<double>(included);
  if (!thresholds.empty())
    report.avg_map = std::accumulate(report.map_per_threshold.begin(),
                                     report.map_per_threshold.end(), 0.0) /
                     static_cast<double>(thresholds.size());
  report.confusion = confusion_matrix(dets, gts, num_classes, 0.5);
  return report;
}

}  // namespace

EvalReport map_sweep(const std::vector<Detection>& dets,
                     const std::vector<GroundTruthSpan>& gts, std::size_t num_classes,
                     const std::vector<double>& thresholds, Interpolation interp) {
  return sweep(dets, gts, num_classes, thresholds, interp, [](const std::vector<Detection>& d) {
    std::vector<Detection> ranked;
    ranked.reserve(d.size());
    for (std::size_t i : rank_order(d, true)) ranked.push_back(d[i]);
    return ranked;
  });
}

ConfusionMatrix confusion_matrix(const std::vector<Detection>& dets,
                                 const std::vector<GroundTruthSpan>& gts,
                                 std::size_t num_classes, double tiou) {
  const std::size_t n = num_classes + 1;
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  cm.counts.assign(n * n, 0);
  std::vector<bool> gt_hit(gts.size(), false);
  for (const Detection& d : dets) {
    check_class(d.class_id, num_classes, "detection");
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].seq_id != d.seq_id) continue;
      const double iou =
          temporal_iou(d.t_start, d.t_end, gts[g].span.t_start, gts[g].span.t_end);
      if (iou >= tiou && iou > best_iou) {
        best = g;
        best_iou = iou;
      }
    }
    const std::size_t row =
        best < gts.size() ? static_cast<std::size_t>(gts[best].span.class_id) : num_classes;
    if (best < gts.size()) gt_hit[best] = true;
    ++cm.counts[row * n + static_cast<std::size_t>(d.class_id)];
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    check_class(gts[g].span.class_id, num_classes, "ground-truth");
    if (!gt_hit[g]) ++cm.counts[static_cast<std::size_t>(gts[g].span.class_id) * n + num_classes];
  }
  return cm;
}

double human_agreement_map(const std::vector<AnnotatedSequence>& sequences,
                           std::size_t num_classes, double tiou, bool all_designations) {
  std::size_t annotators = std::numeric_limits<std::size_t>::max();
  for (const AnnotatedSequence& s : sequences) {
    if (s.annotators.size() < 2)
      throw std::invalid_argument("sequence '" + s.seq_id + "' has fewer than 2 annotation sets");
    annotators = std::min(annotators, s.annotators.size());
  }
  if (sequences.empty()) throw std::invalid_argument("no annotated sequences");

  auto score_for = [&](std::size_t gt_index) {
    std::vector<GroundTruthSpan> gts;
    // Detections carry their annotator index for tie ordering.
    std::vector<std::pair<std::size_t, Detection>> tagged;
    for (const AnnotatedSequence& s : sequences) {
      for (std::size_t a = 0; a < s.annotators.size(); ++a) {
        for (const LabeledSpan& span : s.annotators[a]) {
          if (a == gt_index)
            gts.push_back({s.seq_id, span});
          else
            tagged.push_back({a, {s.seq_id, span.class_id, span.t_start, span.t_end, 1.0}});
        }
      }
    }
    std::stable_sort(tagged.begin(), tagged.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first < y.first;
      return x.second.t_start < y.second.t_start;
    });
    std::vector<Detection> dets;
    for (auto& t : tagged) dets.push_back(std::move(t.second));
    const EvalReport r = sweep(dets, gts, num_classes, {tiou}, Interpolation::kRightMax,
                               [](const std::vector<Detection>& d) { return d; });
    return r.map_per_threshold[0];
  };

  if (!all_designations) return score_for(0);
  double sum = 0.0;
  for (std::size_t a = 0; a < annotators; ++a) sum += score_for(a);
  return sum / static_cast<double>(annotators);
}

std::vector<GroundTruthSpan> ground_truth_of(const Dataset& dataset) {
  std::vector<GroundTruthSpan> out;
  for (const MotionSequence& s : dataset.sequences)
    for (const LabeledSpan& span : s.spans) out.push_back({s.id, span});
  return out;
}

// ---------------------------------------------------------------------------
// Files

void write_detections(std::ostream& out, const std::vector<Detection>& dets) {
  out << "# locate detections: seq, class, start, end (seconds), score\n";
  for (const Detection& d : dets) {
    json j = {{"seq", d.seq_id}, {"class", d.class_id}, {"start", d.t_start},
              {"end", d.t_end}, {"score", d.score}};
    out << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections(std::istream& in) {
  std::vector<Detection> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      const json j = json::parse(line);
      Detection d{j.at("seq").get<std::string>(), j.at("class").get<int>(),
                  j.at("start").get<double>(), j.at("end").get<double>(),
                  j.at("score").get<double>()};
      if (!(d.t_start < d.t_end)) throw DataError("start must precede end");
      if (!std::isfinite(d.score)) throw DataError("score is not finite");
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw DataError("detections line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("detections line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_detections(const std::vector<Detection>& dets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_detections(out, dets);
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open detections " + path.string());
  try {
    return read_detections(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["thresholds"] = r.thresholds;
  j["class_names"] = r.class_names;
  j["ap"] = r.ap;
  j["gt_counts"] = r.gt_counts;
  j["map_per_threshold"] = r.map_per_threshold;
  const double m50 = r.map_at(0.5);
  j["map50"] = std::isnan(m50) ? json(nullptr) : json(m50);
  j["avg_map"] = r.avg_map;
  j["confusion"] = {{"num_classes", r.confusion.num_classes}, {"counts", r.confusion.counts}};
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.ap = j.at("ap").get<std::vector<std::vector<double>>>();
    r.gt_counts = j.at("gt_counts").get<std::vector<std::int64_t>>();
    r.map_per_threshold = j.at("map_per_threshold").get<std::vector<double>>();
    r.avg_map = j.at("avg_map").get<double>();
    r.confusion.num_classes = j.at("confusion").at("num_classes").get<std::size_t>();
    r.confusion.counts = j.at("confusion").at("counts").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  const std::size_t c = r.class_names.size();
  if (r.ap.size() != c || r.gt_counts.size() != c ||
      r.map_per_threshold.size() != r.thresholds.size() || r.confusion.num_classes != c ||
      r.confusion.counts.size() != (c + 1) * (c + 1))
    throw DataError("evaluation report has inconsistent sizes");
  for (const auto& row : r.ap)
    if (row.size() != r.thresholds.size())
      throw DataError("evaluation report has inconsistent sizes");
  return r;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "class,name,gt_count";
  for (double t : r.thresholds) out << ",tiou_" << fmt("%.2f", t);
  out << '\n';
  for (std::size_t c = 0; c < r.ap.size(); ++c) {
    out << c << ',' << r.class_names[c] << ',' << r.gt_counts[c];
    for (double v : r.ap[c]) out << ',' << fmt("%.6f", v);
    out << '\n';
  }
  out << "map,mAP,";
  for (double v : r.map_per_threshold) out << ',' << fmt("%.6f", v);
  out << "\navg_map,avg mAP," << fmt("%.6f", r.avg_map) << '\n';
  return out.str();
}

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string render_ap_svg(const EvalReport& r) {
  const double w = 640, h = 420, left = 60, right = 160, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double tmin = 0.0, tmax = 1.0;
  if (!r.thresholds.empty()) {
    tmin = *std::min_element(r.thresholds.begin(), r.thresholds.end());
    tmax = *std::max_element(r.thresholds.begin(), r.thresholds.end());
    if (tmax <= tmin) tmax = tmin + 1.0;
  }
  auto x_of = [&](double t) { return left + (t - tmin) / (tmax - tmin) * pw; };
  auto y_of = [&](double ap) { return top + (1.0 - ap) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<g class=\"axes\" stroke=\"black\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
    << top + ph << "\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\"/>\n</g>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s << "<text x=\"" << left - 8 << "\" y=\"" << fmt("%.1f", y_of(v) + 4)
      << "\" text-anchor=\"end\">" << fmt("%.1f", v) << "</text>\n";
  }
  for (double t : r.thresholds)
    s << "<text x=\"" << fmt("%.1f", x_of(t)) << "\" y=\"" << top + ph + 16
      << "\" text-anchor=\"middle\">" << fmt("%.1f", t) << "</text>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
    << "\" text-anchor=\"middle\">tIoU threshold</text>\n";
  s << "<text x=\"15\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 15 " << top + ph / 2
    << ")\" text-anchor=\"middle\">AP</text>\n";
  for (std::size_t c = 0; c < r.ap.size(); ++c) {
    const char* color = kPalette[c % (sizeof kPalette / sizeof *kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t t = 0; t < r.thresholds.size(); ++t)
      s << (t ? " " : "") << fmt("%.2f", x_of(r.thresholds[t])) << ','
        << fmt("%.2f", y_of(r.ap[c][t]));
    s << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(c);
    s << "<text x=\"" << left + pw + 12 << "\" y=\"" << ly + 4 << "\" fill=\"" << color << "\">"
      << escape_xml(r.class_names[c]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_confusion_svg(const ConfusionMatrix& cm,
                                 const std::vector<std::string>& class_names) {
  const std::size_t n = cm.num_classes + 1;
  const double cell = 28, left = 110, top = 110;
  const double size = cell * static_cast<double>(n);
  auto label = [&](std::size_t i) {
    if (i == cm.num_classes) return std::string("unmatched");
    return i < class_names.size() ? class_names[i] : std::to_string(i);
  };
  const std::vector<double> norm = cm.column_normalized();
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + size + 20
    << "\" height=\"" << top + size + 40 << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double v = norm[r * n + c];
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      s << "<rect x=\"" << left + cell * c << "\" y=\"" << top + cell * r << "\" width=\""
        << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade
        << ",255)\" stroke=\"#ccc\"><title>" << cm.at(r, c) << "</title></rect>\n";
      if (cm.at(r, c) > 0)
        s << "<text x=\"" << left + cell * c + cell / 2 << "\" y=\"" << top + cell * r + cell / 2 + 3
          << "\" text-anchor=\"middle\">" << cm.at(r, c) << "</text>\n";
    }
    s << "<text x=\"" << left - 4 << "\" y=\"" << top + cell * r + cell / 2 + 3
      << "\" text-anchor=\"end\">" << escape_xml(label(r)) << "</text>\n";
    const double x = left + cell * r + cell / 2;
    s << "<text x=\"" << x << "\" y=\"" << top - 4 << "\" transform=\"rotate(-60 " << x << ' '
      << top - 4 << ")\">" << escape_xml(label(r)) << "</text>\n";
  }
  s << "<text x=\"" << left + size / 2 << "\" y=\"" << top + size + 24
    << "\" text-anchor=\"middle\">predicted class (columns), ground truth (rows)</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace locate
