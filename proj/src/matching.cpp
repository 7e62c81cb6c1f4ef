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

#include "locate/matching.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace locate {

namespace {

constexpr double kProbFloor = 1e-12;

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_valid(Interval s, const char* what) {
  if (!(s.start < s.end))
    throw std::invalid_argument(std::string("degenerate ") + what + " span [" +
                                std::to_string(s.start) + ", " + std::to_string(s.end) + "]");
}

// Same formula as span_loss without the validity checks; the ground truth is
// always valid here and predictions may collapse to a point.
SpanLoss span_loss_unchecked(Interval p, Interval g, SpanLossWeights w) {
  SpanLoss out;
  out.l_l1 = std::fabs(p.start - g.start) + std::fabs(p.end - g.end);
  out.l_iou = 1.0 - generalized_iou(p, g);
  out.l_span = w.iou * out.l_iou + w.l1 * out.l_l1;
  return out;
}

}  // namespace

double class_balanced_weight(double beta, double count) {
  if (count <= 1.0 || beta == 0.0) return 1.0;
  return (1.0 - beta) / (1.0 - std::pow(beta, count));
}

double ClassStats::weight(std::size_t class_id) const {
  if (class_id >= counts.size())
    throw std::out_of_range("no count for class " + std::to_string(class_id));
  return class_balanced_weight(beta, static_cast<double>(counts[class_id]));
}

double span_iou(Interval a, Interval b) {
  require_valid(a, "first");
  require_valid(b, "second");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return inter / uni;
}

double generalized_iou(Interval a, Interval b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  const double hull = std::max(a.end, b.end) - std::min(a.start, b.start);
  return inter / uni - (hull - uni) / hull;
}

SpanLoss span_loss(Interval pred, Interval gt, SpanLossWeights weights) {
  require_valid(pred, "predicted");
  require_valid(gt, "ground-truth");
  return span_loss_unchecked(pred, gt, weights);
}

double cb_focal_loss(std::span<const double> logits, std::size_t target,
                     const ClassStats& stats) {
  if (target >= logits.size())
    throw std::out_of_range("target class " + std::to_string(target) + " outside " +
                            std::to_string(logits.size()) + " logits");
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double z = j == target ? logits[j] : -logits[j];
    const double p = sigmoid_of(z);
    const double q = sigmoid_of(-z);
    sum += std::pow(q, stats.gamma) * std::log(std::max(p, kProbFloor));
  }
  return -stats.weight(target) * sum;
}

std::vector<GroundTruthEntry> pad_ground_truth(const std::vector<LabeledSpan>& gts,
                                               double duration, std::size_t num_queries,
                                               std::size_t num_classes) {
  if (gts.size() > num_queries)
    throw std::invalid_argument(std::to_string(gts.size()) +
                                " ground-truth spans exceed the " +
                                std::to_string(num_queries) +
                                " action queries; raise the number of queries");
  if (!(duration > 0.0)) throw std::invalid_argument("sequence duration must be positive");
  std::vector<GroundTruthEntry> out;
  out.reserve(num_queries);
  for (const LabeledSpan& s : gts) {
    if (s.class_id < 0 || static_cast<std::size_t>(s.class_id) >= num_classes)
      throw std::invalid_argument("ground-truth class " + std::to_string(s.class_id) +
                                  " out of range");
    Interval iv{std::clamp(s.t_start / duration, 0.0, 1.0),
                std::clamp(s.t_end / duration, 0.0, 1.0)};
    require_valid(iv, "ground-truth");
    out.push_back({static_cast<std::size_t>(s.class_id), iv});
  }
  while (out.size() < num_queries) out.push_back({num_classes, std::nullopt});
  return out;
}

double match_cost(const RawPredictionSet& preds, std::size_t query,
                  const GroundTruthEntry& gt, const ClassStats& stats,
                  SpanLossWeights weights) {
  if (!gt.span) return 0.0;
  std::span<const double> logits(preds.class_logits.data() + query * preds.num_logits,
                                 preds.num_logits);
  return cb_focal_loss(logits, gt.class_id, stats) +
         span_loss_unchecked({preds.start(query), preds.end(query)}, *gt.span, weights).l_span;
}

CostMatrix build_cost_matrix(const RawPredictionSet& preds,
                             const std::vector<GroundTruthEntry>& padded,
                             const ClassStats& stats, SpanLossWeights weights) {
  CostMatrix cost;
  cost.rows = padded.size();
  cost.cols = preds.num_queries;
  cost.values.assign(cost.rows * cost.cols, 0.0);
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (!padded[r].span) continue;
    for (std::size_t c = 0; c < cost.cols; ++c)
      cost.values[r * cost.cols + c] = match_cost(preds, c, padded[r], stats, weights);
  }
  return cost;
}

double assignment_cost(const CostMatrix& cost, const Assignment& assignment) {
  double total = 0.0;
  for (std::size_t r = 0; r < assignment.size(); ++r) total += cost.at(r, assignment[r]);
  return total;
}

// ---------------------------------------------------------------------------
// Hungarian algorithm

namespace {

struct DualSolution {
  Assignment row_to_col;
  std::vector<double> u, v;
};

// Shortest augmenting path with row/column potentials, O(n^3).
DualSolution solve_assignment(const CostMatrix& cost) {
  const std::size_t n = cost.rows;
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based internally; index 0 is the virtual source column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  DualSolution sol;
  sol.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) sol.row_to_col[owner[j] - 1] = j - 1;
  sol.u.assign(u.begin() + 1, u.end());
  sol.v.assign(v.begin() + 1, v.end());
  return sol;
}

// Rewrites an optimal matching into the lexicographically smallest optimal
// one. Any perfect matching on edges that are tight under an optimal dual is
// itself optimal, so rows are fixed in order to their smallest tight column
// that still admits a perfect matching on the remaining rows.
Assignment lexicographic_refine(const CostMatrix& cost, const DualSolution& sol) {
  const std::size_t n = cost.rows;
  double scale = 1.0;
  for (double c : cost.values) scale = std::max(scale, std::fabs(c));
  const double tol = 1e-12 * scale * static_cast<double>(n);
  auto tight = [&](std::size_t r, std::size_t c) {
    return std::fabs(cost.at(r, c) - sol.u[r] - sol.v[c]) <= tol;
  };
  Assignment row_to_col = sol.row_to_col;
  std::vector<std::size_t> col_to_row(n);
  for (std::size_t r = 0; r < n; ++r) col_to_row[row_to_col[r]] = r;

  std::vector<bool> visited(n);
  // Finds an alternating path from `row` to `target` through rows > fixed.
  std::function<bool(std::size_t, std::size_t, std::size_t, std::size_t)> augment =
      [&](std::size_t row, std::size_t target, std::size_t fixed, std::size_t banned) {
        for (std::size_t c = 0; c < n; ++c) {
          if (c == banned || visited[c] || !tight(row, c)) continue;
          if (c != target && col_to_row[c] <= fixed) continue;
          visited[c] = true;
          if (c == target || augment(col_to_row[c], target, fixed, banned)) {
            row_to_col[row] = c;
            col_to_row[c] = row;
            return true;
          }
        }
        return false;
      };

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t current = row_to_col[i];
    for (std::size_t j = 0; j < current; ++j) {
      if (col_to_row[j] < i || !tight(i, j)) continue;
      const std::size_t displaced = col_to_row[j];
      std::fill(visited.begin(), visited.end(), false);
      visited[j] = true;
      const Assignment save_r = row_to_col;
      const std::vector<std::size_t> save_c = col_to_row;
      if (augment(displaced, current, i, j)) {
        row_to_col[i] = j;
        col_to_row[j] = i;
        break;
      }
      row_to_col = save_r;
      col_to_row = save_c;
    }
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  if (cost.rows != cost.cols || cost.values.size() != cost.rows * cost.cols)
    throw std::invalid_argument("hungarian needs a square cost matrix, got " +
                                std::to_string(cost.rows) + "x" + std::to_string(cost.cols));
  for (double c : cost.values)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian cost matrix is not finite");
  if (cost.rows == 0) return {};
  const DualSolution sol = solve_assignment(cost);
  Assignment refined = lexicographic_refine(cost, sol);
  if (assignment_cost(cost, refined) > assignment_cost(cost, sol.row_to_col))
    return sol.row_to_col;
  return refined;
}

// ---------------------------------------------------------------------------
// Matched-pair loss

HungarianLoss hungarian_loss(Tape& tape, const HeadOutputs& out,
                             const std::vector<LabeledSpan>& gts, double duration,
                             const ClassStats& stats, SpanLossWeights weights,
                             const Assignment* fixed) {
  const RawPredictionSet preds = detach(out);
  const std::size_t nq = preds.num_queries, nl = preds.num_logits;
  if (stats.counts.size() != nl)
    throw std::invalid_argument("class statistics cover " +
                                std::to_string(stats.counts.size()) + " classes but the model has " +
                                std::to_string(nl) + " logits");
  const auto padded = pad_ground_truth(gts, duration, nq, nl - 1);

  HungarianLoss result;
  if (fixed) {
    if (fixed->size() != nq) throw std::invalid_argument("fixed assignment has wrong size");
    result.assignment = *fixed;
  } else {
    result.assignment = hungarian(build_cost_matrix(preds, padded, stats, weights));
  }
  const Assignment& sigma = result.assignment;

  // Classification over all N_a pairs.
  Tensor signs(Shape{nl, nq}, -1.0);
  Tensor class_weight(Shape{nq}, 0.0);
  for (std::size_t r = 0; r < nq; ++r) {
    const std::size_t q = sigma[r];
    signs[padded[r].class_id * nq + q] = 1.0;
    class_weight[q] = stats.weight(padded[r].class_id);
  }
  Var signed_logits = mul(out.logits, tape.constant(signs));
  Var prob = sigmoid(signed_logits);
  Var complement = sigmoid(scale(signed_logits, -1.0));
  Var focal = mul(pow_scalar(complement, stats.gamma), log_clamped(prob, kProbFloor));
  Var per_query = scale(mul(reduce_sum(focal, 0), tape.constant(class_weight)), -1.0);
  Var l_cb = reduce_sum(per_query);

  LossBreakdown& bd = result.breakdown;
  const Tensor& pq = per_query.value();
  for (std::size_t r = 0; r < nq; ++r) {
    PairDetail d;
    d.gt_row = r;
    d.query = sigma[r];
    d.class_id = padded[r].class_id;
    d.real = padded[r].span.has_value();
    d.l_cb = pq[sigma[r]];
    bd.pairs.push_back(d);
  }
  bd.l_cb = l_cb.value().item();

  Var total = l_cb;
  const std::size_t n_real = gts.size();
  if (n_real > 0) {
    std::vector<std::size_t> matched(n_real);
    Tensor gs(Shape{n_real}, 0.0), ge(Shape{n_real}, 0.0);
    for (std::size_t r = 0; r < n_real; ++r) {
      matched[r] = sigma[r];
      gs[r] = padded[r].span->start;
      ge[r] = padded[r].span->end;
    }
    Var ps = gather(out.starts, 0, matched);
    Var pe = gather(out.ends, 0, matched);
    Var gs_v = tape.constant(gs);
    Var ge_v = tape.constant(ge);
    Var l1_each = add(abs(sub(ps, gs_v)), abs(sub(pe, ge_v)));
    Var inter = relu(sub(minimum(pe, ge_v), maximum(ps, gs_v)));
    Var uni = sub(add(sub(pe, ps), sub(ge_v, gs_v)), inter);
    Var hull = sub(maximum(pe, ge_v), minimum(ps, gs_v));
    Var giou = sub(div(inter, uni), div(sub(hull, uni), hull));
    Var iou_each = scale(add_scalar(giou, -1.0), -1.0);
    Var l_l1 = reduce_sum(l1_each);
    Var l_iou = reduce_sum(iou_each);
    total = add(total, add(scale(l_iou, weights.iou), scale(l_l1, weights.l1)));
    bd.l_l1 = l_l1.value().item();
    bd.l_iou = l_iou.value().item();
    for (std::size_t r = 0; r < n_real; ++r) {
      bd.pairs[r].l_l1 = l1_each.value()[r];
      bd.pairs[r].l_iou = iou_each.value()[r];
    }
  }
  bd.l_span = weights.iou * bd.l_iou + weights.l1 * bd.l_l1;
  bd.l_total = total.value().item();
  result.total = total;
  return result;
}

std::pair<LossBreakdown, Assignment> hungarian_loss(const RawPredictionSet& preds,
                                                    const std::vector<LabeledSpan>& gts,
                                                    double duration, const ClassStats& stats,
                                                    SpanLossWeights weights) {
  const std::size_t nq = preds.num_queries, nl = preds.num_logits;
  Tensor logits(Shape{nl, nq}, 0.0), starts(Shape{nq}, 0.0), ends(Shape{nq}, 0.0),
      raw(Shape{2, nq}, 0.0);
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t c = 0; c < nl; ++c) logits[c * nq + q] = preds.logit(q, c);
    starts[q] = preds.start(q);
    ends[q] = preds.end(q);
    raw[q] = preds.raw_spans.empty() ? preds.start(q) : preds.raw_spans[2 * q];
    raw[nq + q] = preds.raw_spans.empty() ? preds.end(q) : preds.raw_spans[2 * q + 1];
  }
  Tape tape;
  HeadOutputs out{tape.constant(std::move(logits)), tape.constant(std::move(starts)),
                  tape.constant(std::move(ends)), tape.constant(std::move(raw))};
  HungarianLoss loss = hungarian_loss(tape, out, gts, duration, stats, weights);
  return {std::move(loss.breakdown), std::move(loss.assignment)};
}

}  // namespace locate
