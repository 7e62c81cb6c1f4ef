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

// locate: generate -> preprocess -> train -> predict -> nms -> eval -> report.
// Exit codes: 0 ok, 2 usage/config/data errors, 3 training divergence.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "locate/evaluation.hpp"
#include "locate/trainer.hpp"

namespace {

using namespace locate;
using nlohmann::json;

constexpr int kUsageError = 2;
constexpr int kDiverged = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void print_config(const std::string& command, const json& cfg) {
  std::cout << "[" << command << "] resolved config: " << cfg.dump() << std::endl;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path))
    throw UsageError(std::string(what) + " file not found: " + path);
}

std::size_t env_threads() {
  const char* v = std::getenv("LOCATE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("LOCATE_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      if (!(v > 0.0 && v <= 1.0)) throw UsageError("threshold " + item + " outside (0, 1]");
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw UsageError("bad threshold '" + item + "' in --thresholds");
    }
  }
  if (out.empty()) throw UsageError("--thresholds is empty");
  return out;
}

json model_json(const ModelConfig& c) {
  return {{"seq_len", c.seq_len},   {"snippet_frames", c.snippet_frames},
          {"dim", c.dim},           {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers}, {"heads", c.heads},
          {"samples_k", c.samples}, {"queries", c.queries},
          {"num_classes", c.num_classes}, {"ffn_width", c.ffn()},
          {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOpts {
  SyntheticConfig cfg;
  std::string out;
};

int run_generate(const GenerateOpts& o) {
  print_config("generate", {{"classes", o.cfg.num_classes},
                            {"sequences", o.cfg.num_sequences},
                            {"duration_min", o.cfg.duration_range.first},
                            {"duration_max", o.cfg.duration_range.second},
                            {"spans_min", o.cfg.spans_per_sequence.first},
                            {"spans_max", o.cfg.spans_per_sequence.second},
                            {"fps", o.cfg.fps},
                            {"noise", o.cfg.noise_std},
                            {"random_root", o.cfg.random_root_pose},
                            {"seed", o.cfg.seed},
                            {"out", o.out}});
  try {
    o.cfg.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  Dataset ds;
  ds.fps = o.cfg.fps;
  ds.class_names = default_class_names(o.cfg.num_classes);
  ds.sequences = generate_synthetic(o.cfg);
  save_dataset(ds, o.out);
  std::vector<int> counts(static_cast<std::size_t>(o.cfg.num_classes), 0);
  for (const MotionSequence& s : ds.sequences)
    for (const LabeledSpan& span : s.spans) ++counts[static_cast<std::size_t>(span.class_id)];
  std::cout << "wrote " << ds.sequences.size() << " sequences to " << o.out << "\n";
  for (std::size_t c = 0; c < counts.size(); ++c)
    std::cout << "  " << ds.class_names[c] << ": " << counts[c] << " spans\n";
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessOpts {
  std::string dataset;
  std::string label_map;
  std::size_t snippet = 8;
  std::string out;
};

int run_preprocess(const PreprocessOpts& o) {
  print_config("preprocess", {{"dataset", o.dataset},
                              {"label_map", o.label_map},
                              {"snippet", o.snippet},
                              {"out", o.out}});
  require_file(o.dataset, "dataset");
  std::optional<LabelMap> map;
  if (!o.label_map.empty()) {
    require_file(o.label_map, "label map");
    map = load_label_map(o.label_map);
  }
  std::size_t dropped = 0;
  Dataset ds = load_dataset(o.dataset, o.snippet, map ? &*map : nullptr, &dropped);
  for (MotionSequence& s : ds.sequences) {
    try {
      s.frames = normalize_skeleton(s.frames);
    } catch (const DataError& e) {
      throw DataError("sequence '" + s.id + "': " + e.what());
    }
  }
  save_dataset(ds, o.out);
  std::cout << "normalized " << ds.sequences.size() << " sequences into " << o.out << "\n";
  if (map) std::cout << "dropped " << dropped << " spans with unmapped labels\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  ModelConfig model;
  TrainConfig train;
  std::size_t layers = 0;
  double grad_clip = 0.1;
  std::string schedule = "constant";
  std::string train_path, val_path, out;
};

int run_train(TrainOpts o) {
  if (o.layers) o.model.encoder_layers = o.model.decoder_layers = o.layers;
  if (o.grad_clip > 0.0)
    o.train.grad_clip_norm = o.grad_clip;
  else
    o.train.grad_clip_norm.reset();
  o.train.schedule = o.schedule == "cosine" ? LrSchedule::kCosine : LrSchedule::kConstant;
  o.train.threads = env_threads();
  o.model.seed = o.train.seed;

  require_file(o.train_path, "training");
  require_file(o.val_path, "validation");
  const Dataset train = load_dataset(o.train_path, o.model.snippet_frames);
  const Dataset val = load_dataset(o.val_path, o.model.snippet_frames);
  o.model.num_classes = static_cast<std::size_t>(train.num_classes());
  if (val.num_classes() != train.num_classes())
    throw UsageError("training and validation sets disagree on the class list");

  print_config("train",
               {{"train", o.train_path},
                {"val", o.val_path},
                {"out", o.out},
                {"model", model_json(o.model)},
                {"lr", o.train.learning_rate},
                {"schedule", o.schedule},
                {"epochs", o.train.epochs},
                {"batch", o.train.batch_size},
                {"grad_clip", o.train.grad_clip_norm ? json(*o.train.grad_clip_norm) : json(nullptr)},
                {"lambda_iou", o.train.loss.iou},
                {"lambda_l1", o.train.loss.l1},
                {"cb_beta", o.train.cb_beta},
                {"cb_gamma", o.train.cb_gamma},
                {"score_threshold", o.train.score_threshold},
                {"nms_iou", o.train.nms_iou},
                {"eval_every", o.train.eval_every},
                {"standardize_inputs", o.train.standardize_inputs},
                {"seed", o.train.seed},
                {"threads", o.train.threads}});
  try {
    o.model.validate();
    o.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const ClassStats stats = class_counts(train, o.model.num_classes, o.model.queries,
                                        o.train.cb_beta, o.train.cb_gamma, &std::cerr);
  std::cout << "class counts:";
  for (auto c : stats.counts) std::cout << ' ' << c;
  std::cout << " (last = no-action)\n";

  std::filesystem::create_directories(o.out);
  const auto out_dir = std::filesystem::path(o.out);
  Model model(o.model);
  std::cout << "parameters: " << model.params().total_numel() << std::endl;
  const auto start = std::chrono::steady_clock::now();
  FitResult result = fit(train, val, model, o.train, o.train.seed, [&](const EpochLog& row) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "epoch " << row.epoch << " l_total " << row.l_total << " l_cb " << row.l_cb
              << " l_span " << row.l_span << " val_map50 " << row.val_map50 << " (" << secs
              << "s)\n";
  });
  write_text(out_dir / "train_log.csv", log_to_csv(result.log));
  save_checkpoint(result.best, out_dir / "best.ckpt");
  if (result.diverged) {
    std::cerr << "training diverged: " << result.divergence_message
              << "\nkept the last good checkpoint in " << (out_dir / "best.ckpt").string() << "\n";
    return kDiverged;
  }
  std::cout << "best val mAP@0.5 " << result.best_val_map50 << " at epoch " << result.best_epoch
            << "\nwrote " << (out_dir / "best.ckpt").string() << " and "
            << (out_dir / "train_log.csv").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict / nms / eval / report

struct PredictOpts {
  std::string ckpt, dataset, out;
  double score_threshold = 0.05;
};

int run_predict(const PredictOpts& o) {
  print_config("predict", {{"ckpt", o.ckpt},
                           {"dataset", o.dataset},
                           {"score_threshold", o.score_threshold},
                           {"out", o.out}});
  require_file(o.ckpt, "checkpoint");
  require_file(o.dataset, "dataset");
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const Dataset ds = load_dataset(o.dataset, ckpt.model.snippet_frames);
  if (static_cast<std::size_t>(ds.num_classes()) != ckpt.model.num_classes)
    throw UsageError("dataset has " + std::to_string(ds.num_classes()) +
                     " classes but the checkpoint was trained on " +
                     std::to_string(ckpt.model.num_classes));
  const Model model = model_from_checkpoint(ckpt);
  const auto dets = predict_detections(model, prepare_dataset(ds, ckpt.model), o.score_threshold);
  save_detections(dets, o.out);
  std::cout << "wrote " << dets.size() << " detections to " << o.out << "\n";
  return 0;
}

struct NmsOpts {
  std::string detections, out;
  double iou = 0.5;
};

int run_nms(const NmsOpts& o) {
  print_config("nms", {{"detections", o.detections}, {"nms_iou", o.iou}, {"out", o.out}});
  require_file(o.detections, "detections");
  const auto dets = load_detections(o.detections);
  const auto kept = temporal_nms(dets, o.iou);
  save_detections(kept, o.out);
  std::cout << "kept " << kept.size() << " of " << dets.size() << " detections\n";
  return 0;
}

struct EvalOpts {
  std::string detections, dataset, out, csv;
  std::string thresholds = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  bool raw_ap = false;
};

int run_eval(const EvalOpts& o) {
  const std::vector<double> thresholds = parse_thresholds(o.thresholds);
  std::string csv = o.csv;
  if (csv.empty()) csv = std::filesystem::path(o.out).replace_extension(".csv").string();
  print_config("eval", {{"detections", o.detections},
                        {"dataset", o.dataset},
                        {"thresholds", thresholds},
                        {"interpolation", o.raw_ap ? "raw" : "right-max"},
                        {"out", o.out},
                        {"csv", csv}});
  require_file(o.detections, "detections");
  require_file(o.dataset, "dataset");
  const Dataset ds = load_dataset(o.dataset);
  const auto dets = load_detections(o.detections);
  EvalReport report;
  try {
    report = map_sweep(dets, ground_truth_of(ds), static_cast<std::size_t>(ds.num_classes()),
                       thresholds, o.raw_ap ? Interpolation::kRaw : Interpolation::kRightMax);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  report.class_names = ds.class_names;
  write_text(o.out, report_to_json(report));
  write_text(csv, report_to_csv(report));
  std::cout << "tIoU:";
  for (double t : report.thresholds) std::cout << ' ' << t;
  std::cout << "\nmAP: ";
  for (double m : report.map_per_threshold) std::cout << ' ' << m;
  std::cout << "\navg mAP " << report.avg_map << "\n";
  return 0;
}

struct ReportOpts {
  std::string report, out;
};

int run_report(const ReportOpts& o) {
  print_config("report", {{"report", o.report}, {"out", o.out}});
  require_file(o.report, "evaluation report");
  const EvalReport report = report_from_json(read_text(o.report));
  std::filesystem::create_directories(o.out);
  const auto dir = std::filesystem::path(o.out);
  write_text(dir / "ap_vs_tiou.svg", render_ap_svg(report));
  write_text(dir / "confusion.svg", render_confusion_svg(report.confusion, report.class_names));
  std::cout << "wrote " << (dir / "ap_vs_tiou.svg").string() << " and "
            << (dir / "confusion.svg").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal action localization on 3D skeleton sequences"};
  app.require_subcommand(1);
  std::function<int()> run;

  GenerateOpts gen;
  double dur_min = 8.0, dur_max = 12.0;
  int spans_min = 1, spans_max = 3;
  std::size_t sequences = 20;
  auto* g = app.add_subcommand("generate", "Write a synthetic labeled motion dataset");
  g->add_option("--classes", gen.cfg.num_classes, "Number of action classes")->capture_default_str();
  g->add_option("--sequences", sequences, "Number of sequences")->capture_default_str();
  g->add_option("--duration-min", dur_min, "Shortest sequence, seconds")->capture_default_str();
  g->add_option("--duration-max", dur_max, "Longest sequence, seconds")->capture_default_str();
  g->add_option("--spans-min", spans_min, "Fewest spans per sequence")->capture_default_str();
  g->add_option("--spans-max", spans_max, "Most spans per sequence")->capture_default_str();
  g->add_option("--fps", gen.cfg.fps, "Frame rate")->capture_default_str();
  g->add_option("--noise", gen.cfg.noise_std, "Joint noise std, meters")->capture_default_str();
  g->add_option("--seed", gen.cfg.seed, "Random seed")->capture_default_str();
  g->add_flag("--random-root", gen.cfg.random_root_pose, "Random yaw and translation per sequence");
  g->add_option("-o,--out", gen.out, "Output dataset JSON")->required();
  g->callback([&] {
    gen.cfg.num_sequences = sequences;
    gen.cfg.duration_range = {dur_min, dur_max};
    gen.cfg.spans_per_sequence = {spans_min, spans_max};
    run = [&] { return run_generate(gen); };
  });

  PreprocessOpts pre;
  auto* p = app.add_subcommand("preprocess", "Validate, label-map and normalize a dataset");
  p->add_option("--dataset", pre.dataset, "Input dataset JSON")->required();
  p->add_option("--label-map", pre.label_map, "Label map JSON; spans then carry string labels");
  p->add_option("--snippet", pre.snippet, "Minimum frames per sequence (N_f)")->capture_default_str();
  p->add_option("-o,--out", pre.out, "Output dataset JSON")->required();
  p->callback([&] { run = [&] { return run_preprocess(pre); }; });

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Train a model and keep the best checkpoint");
  t->add_option("--train", tr.train_path, "Training dataset JSON")->required();
  t->add_option("--val", tr.val_path, "Validation dataset JSON")->required();
  t->add_option("-o,--out", tr.out, "Output directory")->required();
  t->add_option("--lr", tr.train.learning_rate, "Adam learning rate")->capture_default_str();
  t->add_option("--lr-schedule", tr.schedule, "constant or cosine")
      ->check(CLI::IsMember({"constant", "cosine"}))
      ->capture_default_str();
  t->add_option("--epochs", tr.train.epochs, "Epoch count")->capture_default_str();
  t->add_option("--batch", tr.train.batch_size, "Sequences per step")->capture_default_str();
  t->add_option("--grad-clip", tr.grad_clip, "Global gradient-norm clip, 0 disables")
      ->capture_default_str();
  t->add_option("--layers", tr.layers, "Encoder and decoder layers");
  t->add_option("--layers-enc", tr.model.encoder_layers, "Encoder layers")->capture_default_str();
  t->add_option("--layers-dec", tr.model.decoder_layers, "Decoder layers")->capture_default_str();
  t->add_option("--heads", tr.model.heads, "Attention heads")->capture_default_str();
  t->add_option("--dim", tr.model.dim, "Model width C")->capture_default_str();
  t->add_option("--ffn", tr.model.ffn_width, "Feed-forward width, 0 for 4*dim")->capture_default_str();
  t->add_option("--seq-len", tr.model.seq_len, "Snippets per sequence T")->capture_default_str();
  t->add_option("--snippet", tr.model.snippet_frames, "Frames per snippet N_f")->capture_default_str();
  t->add_option("--queries", tr.model.queries, "Action queries N_a")->capture_default_str();
  t->add_option("--samples-k", tr.model.samples, "Sampling points per head K")->capture_default_str();
  t->add_option("--lambda-iou", tr.train.loss.iou, "gIoU loss weight")->capture_default_str();
  t->add_option("--lambda-l1", tr.train.loss.l1, "L1 loss weight")->capture_default_str();
  t->add_option("--cb-beta", tr.train.cb_beta, "Class-balance beta")->capture_default_str();
  t->add_option("--cb-gamma", tr.train.cb_gamma, "Focal gamma")->capture_default_str();
  t->add_option("--score-threshold", tr.train.score_threshold, "Validation decode threshold")
      ->capture_default_str();
  t->add_option("--nms-iou", tr.train.nms_iou, "Validation NMS tIoU")->capture_default_str();
  t->add_option("--eval-every", tr.train.eval_every, "Epochs between validation passes")
      ->capture_default_str();
  t->add_option("--seed", tr.train.seed, "Initialization and shuffle seed")->capture_default_str();
  t->add_flag("--raw-inputs{false}", tr.train.standardize_inputs,
              "Skip fitting the input normalization to the training set");
  t->callback([&] { run = [&] { return run_train(tr); }; });

  PredictOpts pr;
  auto* pd = app.add_subcommand("predict", "Write detections for a dataset");
  pd->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  pd->add_option("--dataset", pr.dataset, "Dataset JSON")->required();
  pd->add_option("--score-threshold", pr.score_threshold, "Minimum class score")
      ->capture_default_str();
  pd->add_option("-o,--out", pr.out, "Output detections JSONL")->required();
  pd->callback([&] { run = [&] { return run_predict(pr); }; });

  NmsOpts nm;
  auto* n = app.add_subcommand("nms", "Per-class temporal non-maximum suppression");
  n->add_option("--detections", nm.detections, "Input detections JSONL")->required();
  n->add_option("--nms-iou", nm.iou, "Suppression tIoU")->capture_default_str();
  n->add_option("-o,--out", nm.out, "Output detections JSONL")->required();
  n->callback([&] { run = [&] { return run_nms(nm); }; });

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "mAP at several tIoU thresholds");
  e->add_option("--detections", ev.detections, "Detections JSONL")->required();
  e->add_option("--dataset", ev.dataset, "Ground-truth dataset JSON")->required();
  e->add_option("--thresholds", ev.thresholds, "Comma-separated tIoU thresholds")
      ->capture_default_str();
  e->add_flag("--raw-ap", ev.raw_ap, "Non-interpolated AP");
  e->add_option("--csv", ev.csv, "CSV table path (default: next to --out)");
  e->add_option("-o,--out", ev.out, "Report JSON")->required();
  e->callback([&] { run = [&] { return run_eval(ev); }; });

  ReportOpts rp;
  auto* r = app.add_subcommand("report", "Render SVG plots from an evaluation report");
  r->add_option("--report", rp.report, "Report JSON from eval")->required();
  r->add_option("-o,--out", rp.out, "Output directory")->required();
  r->callback([&] { run = [&] { return run_report(rp); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsageError;
  }
  try {
    return run();
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsageError;
  }
}
