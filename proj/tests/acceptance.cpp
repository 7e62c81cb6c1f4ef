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


// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Criteria 6-8 drive the CLI binary.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "locate/autodiff.hpp"
#include "locate/evaluation.hpp"
#include "locate/matching.hpp"
#include "locate/model.hpp"
#include "locate/motion.hpp"
#include "locate/random.hpp"
#include "locate/trainer.hpp"

namespace fs = std::filesystem;
using namespace locate;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Settings of the tiny overfit run and the generalization run. Kept in sync
// with the invocations documented in README.md.
constexpr const char* kOverfitData = "--classes 5 --sequences 20 --seed 1";
constexpr const char* kOverfitModel =
    "--dim 64 --seq-len 50 --snippet 8 --layers 2 --heads 2 --samples-k 2 --queries 10 "
    "--lr 3e-4 --batch 4 --epochs 300 --seed 1";
constexpr std::size_t kOverfitEpochs = 300;
// Validation runs once, after the last epoch, so the reported number is not
// a checkpoint picked on the validation set.
constexpr const char* kGeneralizationModel =
    "--dim 64 --seq-len 16 --snippet 8 --layers 2 --heads 2 --samples-k 4 --queries 10 "
    "--lr 6e-4 --batch 4 --cb-beta 0.999 --cb-gamma 0 --lambda-l1 1 --lambda-iou 1 "
    "--epochs 100 --eval-every 100 --seed 1";

fs::path g_dir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string("LOCATE_THREADS=1 ") + LOCATE_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void require_cli(const std::string& args, const std::string& tag) {
  const fs::path log = g_dir / (tag + ".log");
  const int code = run_cli(args, log);
  if (code != 0)
    throw std::runtime_error("'" + args + "' exited " + std::to_string(code) + ":\n" + slurp(log));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

Var weighted(Tape& tape, Var v, Rng& rng) {
  return reduce_sum(mul(v, tape.constant(random_tensor(v.value().shape(), rng))));
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  const GradCheckOptions opts{1e-6, 1e-4, 1e-8};
  Rng rng(101);
  std::vector<std::string> failed;
  std::size_t checks = 0;
  double worst = 0.0, worst_abs = 0.0;  // relative error only counts above the floor
  auto check = [&](const std::string& name, const TapeFunction& f, const Tensor& x0) {
    const GradCheckReport r = grad_check(f, x0, opts);
    ++checks;
    worst = std::max(worst, r.max_rel_error);
    worst_abs = std::max(worst_abs, r.max_abs_error);
    if (!r.passed) failed.push_back(name);
  };

  const Tensor x0 = random_tensor({3, 4}, rng);
  const Tensor other = random_tensor({3, 4}, rng);
  const Tensor row = random_tensor({1, 4}, rng);
  auto unary = [&](const std::string& name, std::function<Var(Tape&, Var)> op) {
    check(name, [&, op](Tape& t, Var x) { Rng w(7); return weighted(t, op(t, x), w); }, x0);
  };
  auto binary = [&](const std::string& name, std::function<Var(Var, Var)> op) {
    check(name, [&, op](Tape& t, Var x) { Rng w(8); return weighted(t, op(x, t.constant(other)), w); }, x0);
    check(name + "/rhs", [&, op](Tape& t, Var x) { Rng w(9); return weighted(t, op(t.constant(other), x), w); }, x0);
    check(name + "/broadcast", [&, op](Tape& t, Var r) { Rng w(10); return weighted(t, op(t.constant(x0), r), w); }, row);
  };
  binary("add", [](Var a, Var b) { return add(a, b); });
  binary("sub", [](Var a, Var b) { return sub(a, b); });
  binary("mul", [](Var a, Var b) { return mul(a, b); });
  binary("div", [](Var a, Var b) { return div(a, add_scalar(abs(b), 0.5)); });
  binary("minimum", [](Var a, Var b) { return minimum(a, b); });
  binary("maximum", [](Var a, Var b) { return maximum(a, b); });
  unary("relu", [](Tape&, Var x) { return relu(x); });
  unary("sigmoid", [](Tape&, Var x) { return sigmoid(x); });
  unary("scale", [](Tape&, Var x) { return scale(x, -1.7); });
  unary("add_scalar", [](Tape&, Var x) { return add_scalar(x, 0.3); });
  unary("abs", [](Tape&, Var x) { return abs(x); });
  unary("pow_scalar", [](Tape&, Var x) { return pow_scalar(sigmoid(x), 2.0); });
  unary("log_clamped", [](Tape&, Var x) { return log_clamped(sigmoid(x), 1e-12); });
  unary("transpose", [](Tape&, Var x) { return transpose(x); });
  unary("reshape", [](Tape&, Var x) { return reshape(x, Shape{2, 6}); });
  unary("softmax/0", [](Tape&, Var x) { return softmax(x, 0); });
  unary("softmax/1", [](Tape&, Var x) { return softmax(x, 1); });
  unary("reduce_sum", [](Tape&, Var x) { return reduce_sum(x, 1); });
  unary("reduce_mean", [](Tape&, Var x) { return reduce_mean(x, 0); });
  unary("reduce_max", [](Tape&, Var x) { return reduce_max(x, 1); });
  unary("concat", [](Tape&, Var x) { return concat({x, scale(x, 2.0)}, 1); });
  unary("slice", [](Tape&, Var x) { return slice(x, 1, 1, 3); });
  unary("gather", [](Tape&, Var x) { return gather(x, 1, {3, 0, 3}); });
  const Tensor b = random_tensor({4, 5}, rng);
  unary("matmul/lhs", [&](Tape& t, Var x) { return matmul(x, t.constant(b)); });
  check("matmul/rhs", [&](Tape& t, Var y) { Rng w(11); return weighted(t, matmul(t.constant(x0), y), w); }, b);
  const Tensor gain = random_tensor({3, 1}, rng), bias = random_tensor({3, 1}, rng);
  unary("layer_norm", [&](Tape& t, Var x) { return layer_norm(x, 0, t.constant(gain), t.constant(bias)); });
  check("layer_norm/gain", [&](Tape& t, Var g) { Rng w(12); return weighted(t, layer_norm(t.constant(x0), 0, g, t.constant(bias)), w); }, gain);
  check("layer_norm/bias", [&](Tape& t, Var bb) { Rng w(13); return weighted(t, layer_norm(t.constant(x0), 0, t.constant(gain), bb), w); }, bias);
  Tensor pos(Shape{5});
  for (double& p : pos.values()) p = rng.uniform(-0.8, 4.8);  // includes the zero-padded edges
  for (double& p : pos.values())
    if (std::abs(p - std::round(p)) < 1e-3) p += 0.01;
  unary("interp_sample/x", [&](Tape& t, Var x) { return interp_sample(x, t.constant(pos)); });
  check("interp_sample/pos", [&](Tape& t, Var p) { Rng w(14); return weighted(t, interp_sample(t.constant(x0), p), w); }, pos);

  // Full set loss through the tiny model, assignment held at its initial value.
  ModelConfig c;
  c.dim = 8;
  c.seq_len = 6;
  c.snippet_frames = 2;
  c.heads = 2;
  c.samples = 2;
  c.queries = 3;
  c.encoder_layers = c.decoder_layers = 1;
  c.num_classes = 2;
  c.ffn_width = 16;
  c.seed = 5;
  Model model(c);
  for (Parameter& p : model.params().all())
    for (double& v : p.value.values()) v += 0.05 * rng.normal();
  SnippetTensor s;
  s.length = c.seq_len;
  s.snippet_frames = c.snippet_frames;
  s.source_duration = 6.0;
  s.data.resize(s.length * s.width());
  for (double& v : s.data) v = rng.normal();
  const std::vector<LabeledSpan> gts = {{0, 0.7, 2.9}, {1, 3.3, 5.1}};
  ClassStats stats;
  stats.counts = {4, 3, 11};
  Assignment fixed;
  {
    Tape tape(&model.params());
    fixed = hungarian_loss(tape, model.forward(tape, s), gts, 6.0, stats, {}).assignment;
  }
  const GradCheckReport lh = grad_check_parameters(
      model.params(),
      [&](Tape& tape) {
        return hungarian_loss(tape, model.forward(tape, s), gts, 6.0, stats, {}, &fixed).total;
      },
      opts);
  ++checks;
  worst = std::max(worst, lh.max_rel_error);
  worst_abs = std::max(worst_abs, lh.max_abs_error);
  if (!lh.passed) failed.push_back("hungarian_loss over all parameters");
  if (lh.checked != model.params().total_numel()) failed.push_back("parameter coverage");

  std::string detail = std::to_string(checks) + " checks, " + std::to_string(lh.checked) +
                       " parameters, worst abs err " + fmt("%.2e", worst_abs) +
                       ", worst rel err above floor " + fmt("%.2e", worst);
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------------------

Outcome matching_exactness() {
  Rng rng(202);
  std::size_t mismatches = 0, total = 0;
  for (std::size_t n = 2; n <= 7; ++n) {
    for (int trial = 0; trial < 1000; ++trial) {
      CostMatrix c{n, n, std::vector<double>(n * n)};
      for (double& v : c.values) v = trial % 4 == 0 ? rng.integer(0, 3) : rng.uniform(-5, 5);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double sum = 0.0;
        for (std::size_t r = 0; r < n; ++r) sum += c.at(r, perm[r]);
        best = std::min(best, sum);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const Assignment a = hungarian(c);
      std::vector<std::size_t> sorted = a;
      std::sort(sorted.begin(), sorted.end());
      const bool is_perm = sorted == std::vector<std::size_t>([&] {
        std::vector<std::size_t> id(n);
        std::iota(id.begin(), id.end(), 0);
        return id;
      }());
      ++total;
      if (!is_perm || assignment_cost(c, a) != best) ++mismatches;
    }
  }
  return {mismatches == 0,
          std::to_string(total) + " matrices, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------

// Precision/recall curve enumerated rank by rank; AP as the mean over each
// recall level k/G of the best precision reached at recall >= k/G.
double ap_reference(std::vector<Detection> dets, const std::vector<GroundTruthSpan>& gts,
                    double tiou) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t_start != b.t_start) return a.t_start < b.t_start;
    return a.seq_id < b.seq_id;
  });
  std::vector<bool> used(gts.size(), false);
  std::vector<std::pair<std::size_t, double>> curve;  // (true positives, precision)
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::size_t pick = gts.size();
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].seq_id != dets[i].seq_id) continue;
      const double lo = std::max(dets[i].t_start, gts[g].span.t_start);
      const double hi = std::min(dets[i].t_end, gts[g].span.t_end);
      const double inter = std::max(0.0, hi - lo);
      const double iou = inter / ((dets[i].t_end - dets[i].t_start) +
                                  (gts[g].span.t_end - gts[g].span.t_start) - inter);
      if (iou >= tiou && iou > best) {
        best = iou;
        pick = g;
      }
    }
    if (pick < gts.size()) {
      used[pick] = true;
      ++tp;
    }
    curve.push_back({tp, static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  double sum = 0.0;
  for (std::size_t k = 1; k <= gts.size(); ++k) {
    double p = 0.0;
    for (const auto& [hits, prec] : curve)
      if (hits >= k) p = std::max(p, prec);
    sum += p;
  }
  return sum / static_cast<double>(gts.size());
}

Outcome metric_oracle() {
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<GroundTruthSpan> gts;
    std::vector<Detection> dets;
    const int ng = rng.integer(0, 5), nd = rng.integer(0, 10);
    for (int i = 0; i < ng; ++i) {
      const double s = rng.uniform(0, 10);
      gts.push_back({"s", {0, s, s + rng.uniform(0.3, 3)}});
    }
    for (int i = 0; i < nd; ++i) {
      const double s = rng.uniform(0, 10);
      // Coarse scores produce ties.
      dets.push_back({"s", 0, s, s + rng.uniform(0.3, 3), rng.integer(1, 6) / 6.0});
    }
    const double tiou = rng.integer(1, 9) / 10.0;
    worst = std::max(worst, std::abs(average_precision(dets, gts, tiou) - ap_reference(dets, gts, tiou)));
  }
  bool ok = worst <= 1e-12;
  std::string detail = "500 instances, max |diff| " + fmt("%.1e", worst);

  // Permutation invariance of the sweep on a multi-class, multi-sequence set.
  std::vector<GroundTruthSpan> gts;
  std::vector<Detection> dets;
  for (int s = 0; s < 6; ++s)
    for (int i = 0; i < 4; ++i) {
      const std::string id = "seq" + std::to_string(s);
      const int cls = rng.integer(0, 2);
      const double t = rng.uniform(0, 20);
      gts.push_back({id, {cls, t, t + rng.uniform(1, 4)}});
      for (int k = 0; k < 2; ++k) {
        const double j = t + rng.uniform(-1, 1);
        dets.push_back({id, rng.integer(0, 2), j, j + rng.uniform(1, 4), rng.uniform()});
      }
    }
  const std::string reference = report_to_json(map_sweep(dets, gts, 3));
  int broken = 0;
  for (int trial = 0; trial < 100; ++trial) {
    rng.shuffle(dets);
    rng.shuffle(gts);
    if (report_to_json(map_sweep(dets, gts, 3)) != reference) ++broken;
  }
  ok = ok && broken == 0;
  detail += ", " + std::to_string(broken) + "/100 shuffles changed the report";
  return {ok, detail};
}

// ---------------------------------------------------------------------------

Outcome attention_degeneracy() {
  ModelConfig c;
  c.dim = 8;
  c.seq_len = 7;
  c.snippet_frames = 2;
  c.heads = 2;
  c.samples = 1;
  c.queries = 3;
  c.encoder_layers = c.decoder_layers = 1;
  c.num_classes = 2;
  c.ffn_width = 16;
  c.seed = 9;
  Model model(c);
  Rng rng(404);
  const DeformableAttentionParams& p = model.encoder_params()[0].attn;
  auto value = [&](std::size_t idx) -> Tensor& { return model.params()[idx].value; };
  for (std::size_t idx : {p.weight_w, p.weight_b, p.out_b, p.value_w})
    for (double& v : value(idx).values()) v = rng.normal();
  for (double& v : value(p.offset_w).values()) v = 0.0;
  for (double& v : value(p.offset_b).values()) v = 0.0;

  const std::size_t C = c.dim, T = c.seq_len;
  const Tensor x = random_tensor({C, T}, rng);
  const std::vector<double> refs = {0, 1, 2, 3, 4, 5, 6};
  const Tensor queries = random_tensor({C, refs.size()}, rng);
  Tensor ref_t(Shape{refs.size()});
  for (std::size_t q = 0; q < refs.size(); ++q) ref_t[q] = refs[q];
  Tape tape(&model.params());
  const Tensor out = model.deformable_attention(tape, p, tape.constant(queries),
                                                tape.constant(ref_t), tape.constant(x)).value();
  double worst = 0.0;
  const Tensor& wv = value(p.value_w);
  const Tensor& wo = value(p.out_w);
  const Tensor& bo = value(p.out_b);
  for (std::size_t q = 0; q < refs.size(); ++q) {
    const std::size_t t = static_cast<std::size_t>(refs[q]);
    std::vector<double> v(C, 0.0);
    for (std::size_t r = 0; r < C; ++r)
      for (std::size_t k = 0; k < C; ++k) v[r] += wv[r * C + k] * x[k * T + t];
    for (std::size_t r = 0; r < C; ++r) {
      double y = bo[r];
      for (std::size_t k = 0; k < C; ++k) y += wo[r * C + k] * v[k];
      worst = std::max(worst, std::abs(out[r * refs.size() + q] - y));
    }
  }
  return {worst <= 1e-12, "max |diff| " + fmt("%.1e", worst) + " over 7 integer references"};
}

// ---------------------------------------------------------------------------

Outcome loss_reductions() {
  bool ok = true;
  std::string detail;
  Rng rng(505);
  ClassStats plain;
  plain.counts = {3, 5, 9};
  plain.beta = 0.0;
  plain.gamma = 0.0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(3);
    for (double& v : z) v = 3.0 * rng.normal();
    const std::size_t target = rng.index(3);
    double bce = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double p = 1.0 / (1.0 + std::exp(j == target ? -z[j] : z[j]));
      bce -= std::log(p);
    }
    worst = std::max(worst, std::abs(cb_focal_loss(z, target, plain) - bce));
  }
  const std::vector<double> zeros(3, 0.0);
  const double at_zero = cb_focal_loss(zeros, 1, plain);
  ok = worst <= 1e-12 && std::abs(at_zero - 3.0 * std::log(2.0)) <= 1e-12;
  detail = "BCE max |diff| " + fmt("%.1e", worst) + ", zero logits " + fmt("%.15f", at_zero);
  for (const auto& [beta, count] : std::vector<std::pair<double, double>>{{0.99, 1}, {0.99, 100}, {0.5, 10}}) {
    const double direct = (1.0 - beta) / (1.0 - std::pow(beta, count));
    const double got = class_balanced_weight(beta, count);
    ok = ok && std::abs(got - direct) <= 1e-15 * std::max(1.0, direct);
    detail += ", w(" + fmt("%g", beta) + "," + fmt("%g", count) + ")=" + fmt("%.6g", got);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------

std::vector<double> log_column(const fs::path& csv, std::size_t column) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t i = 0; i <= column; ++i) std::getline(ss, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

Outcome end_to_end_overfit() {
  const fs::path data = g_dir / "overfit.json";
  require_cli(std::string("generate ") + kOverfitData + " -o " + data.string(), "overfit_gen");
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = g_dir / "overfit_seed1";
  require_cli("train --train " + data.string() + " --val " + data.string() + " -o " +
                  out.string() + " " + kOverfitModel,
              "overfit_train");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto maps = log_column(out / "train_log.csv", 4);
  double best = 0.0;
  for (double m : maps)
    if (std::isfinite(m)) best = std::max(best, m);
  const auto loss1 = log_column(out / "train_log.csv", 1);
  bool ok = maps.size() == kOverfitEpochs && best >= 0.9 && secs <= 600.0;
  std::string detail = "train mAP@0.5 " + fmt("%.3f", best) + " in " + fmt("%.0f", secs) + " s";

  // Loss trend for seeds 1-5 on the same set; validation only at the end.
  std::string trend = loss1.size() == kOverfitEpochs && loss1.back() < loss1.front() ? "1" : "";
  bool all_down = !trend.empty();
  for (int seed = 2; seed <= 5; ++seed) {
    std::string args = kOverfitModel;
    args.replace(args.find("--seed 1"), 8, "--seed " + std::to_string(seed));
    const fs::path o = g_dir / ("overfit_seed" + std::to_string(seed));
    require_cli("train --train " + data.string() + " --val " + data.string() + " -o " +
                    o.string() + " " + args + " --eval-every 300",
                "overfit_seed" + std::to_string(seed));
    const auto l = log_column(o / "train_log.csv", 1);
    const bool down = l.size() == kOverfitEpochs && l.back() < l.front();
    all_down = all_down && down;
    if (down) trend += (trend.empty() ? "" : ",") + std::to_string(seed);
  }
  ok = ok && all_down;
  detail += ", loss fell by epoch 300 for seeds {" + trend + "}";
  return {ok, detail};
}

// ---------------------------------------------------------------------------

Outcome generalization() {
  const fs::path train = g_dir / "gen_train.json", val = g_dir / "gen_val.json";
  require_cli("generate --classes 5 --sequences 200 --seed 1 -o " + train.string(), "gen_train");
  require_cli("generate --classes 5 --sequences 50 --seed 1001 -o " + val.string(), "gen_val");
  const fs::path out = g_dir / "gen_model";
  const auto start = std::chrono::steady_clock::now();
  require_cli("train --train " + train.string() + " --val " + val.string() + " -o " +
                  out.string() + " " + kGeneralizationModel,
              "gen_fit");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // Independent re-evaluation of the kept checkpoint through the CLI.
  const fs::path dets = g_dir / "gen_val.jsonl", kept = g_dir / "gen_val_nms.jsonl";
  const fs::path report = g_dir / "gen_report.json";
  require_cli("predict --ckpt " + (out / "best.ckpt").string() + " --dataset " + val.string() +
                  " -o " + dets.string(),
              "gen_predict");
  require_cli("nms --detections " + dets.string() + " -o " + kept.string(), "gen_nms");
  require_cli("eval --detections " + kept.string() + " --dataset " + val.string() +
                  " --thresholds 0.5 -o " + report.string(),
              "gen_eval");
  const double map50 = report_from_json(slurp(report)).map_at(0.5);
  return {map50 >= 0.5, "val mAP@0.5 " + fmt("%.3f", map50) + " (train " + fmt("%.0f", secs) + " s)"};
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  std::vector<std::string> files;
  for (int run = 0; run < 2; ++run) {
    const fs::path d = g_dir / ("det_run" + std::to_string(run));
    fs::create_directories(d);
    const std::string ds = (d / "data.json").string();
    require_cli("generate --classes 3 --sequences 6 --seed 21 -o " + ds, "det_gen");
    require_cli("train --train " + ds + " --val " + ds + " -o " + (d / "model").string() +
                    " --dim 16 --seq-len 8 --snippet 4 --layers 1 --heads 2 --samples-k 2 "
                    "--queries 6 --epochs 5 --batch 2 --lr 1e-3 --seed 4",
                "det_train");
    require_cli("predict --ckpt " + (d / "model" / "best.ckpt").string() + " --dataset " + ds +
                    " --score-threshold 0 -o " + (d / "dets.jsonl").string(),
                "det_predict");
    require_cli("eval --detections " + (d / "dets.jsonl").string() + " --dataset " + ds + " -o " +
                    (d / "report.json").string(),
                "det_eval");
  }
  std::vector<std::string> differ;
  for (const char* f : {"data.json", "model/train_log.csv", "model/best.ckpt", "dets.jsonl",
                        "report.json", "report.csv"}) {
    const std::string a = slurp(g_dir / "det_run0" / f), b = slurp(g_dir / "det_run1" / f);
    if (a.empty() || a != b) differ.push_back(f);
  }
  std::string detail = "6 artifacts compared";
  for (const auto& f : differ) detail += "; differs or empty: " + f;
  return {differ.empty(), detail};
}

// ---------------------------------------------------------------------------

Outcome human_map_utility() {
  // Unit spans shifted by d overlap with tIoU (1 - d) / (1 + d).
  const double d = 0.55 / 1.45;
  std::vector<AnnotatedSequence> seqs;
  for (int s = 0; s < 3; ++s) {
    std::vector<LabeledSpan> a, b;
    for (int k = 0; k < 3; ++k) {
      const double t = 3.0 * k + 0.25 * s;
      a.push_back({k, t, t + 1.0});
      b.push_back({k, t + d, t + 1.0 + d});
    }
    seqs.push_back({"seq" + std::to_string(s), {a, b}});
  }
  const double tiou = temporal_iou(0.0, 1.0, d, 1.0 + d);
  const double at50 = human_agreement_map(seqs, 3, 0.5);
  const double at40 = human_agreement_map(seqs, 3, 0.4);
  const double both50 = human_agreement_map(seqs, 3, 0.5, true);
  const double both40 = human_agreement_map(seqs, 3, 0.4, true);
  const bool ok = std::abs(tiou - 0.45) < 1e-12 && at50 == 0.0 && at40 == 1.0 && both50 == 0.0 &&
                  both40 == 1.0;
  return {ok, "pairwise tIoU " + fmt("%.12f", tiou) + ", mAP@0.5 " + fmt("%g", at50) +
                  ", mAP@0.4 " + fmt("%g", at40)};
}

// ---------------------------------------------------------------------------

Outcome nms_contract() {
  const std::vector<Detection> example = {{"s", 0, 0.0, 2.0, 0.9}, {"s", 0, 1.0, 3.0, 0.8},
                                          {"s", 0, 2.5, 4.0, 0.7}};
  const std::vector<Detection> expect = {example[0], example[2]};
  bool ok = temporal_nms(example, 0.3) == expect;
  std::string detail = ok ? "worked example reproduced" : "worked example differs";

  Rng rng(1010);
  int violations = 0, not_subset = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.integer(0, 25);
    for (int i = 0; i < n; ++i) {
      const double s = rng.uniform(0, 10);
      dets.push_back({"s" + std::to_string(rng.integer(0, 1)), rng.integer(0, 2), s,
                      s + rng.uniform(0.2, 3), rng.uniform()});
    }
    const double thr = rng.uniform(0.05, 1.0);
    const auto kept = temporal_nms(dets, thr);
    for (const Detection& k : kept)
      if (std::find(dets.begin(), dets.end(), k) == dets.end()) ++not_subset;
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        if (kept[i].class_id == kept[j].class_id && kept[i].seq_id == kept[j].seq_id &&
            temporal_iou(kept[i].t_start, kept[i].t_end, kept[j].t_start, kept[j].t_end) >= thr)
          ++violations;
  }
  ok = ok && violations == 0 && not_subset == 0;
  detail += ", 500 random sets: " + std::to_string(violations) + " kept pairs at or above threshold, " +
            std::to_string(not_subset) + " outputs not in input";
  return {ok, detail};
}

}  // namespace

// Optional arguments select criteria by number, e.g. `acceptance 1 3`.
int main(int argc, char** argv) {
  g_dir = fs::temp_directory_path() / ("locate_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(g_dir);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"matching exactness", matching_exactness},
      {"metric oracle", metric_oracle},
      {"single-sample attention degeneracy", attention_degeneracy},
      {"loss reductions", loss_reductions},
      {"end-to-end overfit", end_to_end_overfit},
      {"generalization smoke", generalization},
      {"pipeline determinism", determinism},
      {"human-mAP utility", human_map_utility},
      {"NMS contract", nms_contract},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int n = std::atoi(argv[a]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "unknown criterion '" << argv[a] << "'\n";
      return 2;
    }
    selected[static_cast<std::size_t>(n - 1)] = true;
  }
  int failures = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  fs::remove_all(g_dir);
  std::cout << (ran - failures) << "/" << ran << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
