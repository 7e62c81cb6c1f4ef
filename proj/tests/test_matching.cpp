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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "locate/matching.hpp"
#include "locate/random.hpp"

namespace locate {
namespace {

// Independent reference for the class-balanced focal loss.
double focal_reference(const std::vector<double>& z, std::size_t target, double beta,
                       double gamma, double count) {
  const double w = count <= 1.0 || beta == 0.0 ? 1.0 : (1 - beta) / (1 - std::pow(beta, count));
  double sum = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double zt = j == target ? z[j] : -z[j];
    const double p = std::max(1.0 / (1.0 + std::exp(-zt)), 1e-12);
    sum += std::pow(1.0 - p, gamma) * std::log(p);
  }
  return -w * sum;
}

ClassStats stats_of(std::vector<std::int64_t> counts, double beta = 0.99, double gamma = 2.0) {
  ClassStats s;
  s.counts = std::move(counts);
  s.beta = beta;
  s.gamma = gamma;
  return s;
}

RawPredictionSet make_preds(const std::vector<std::vector<double>>& logits,
                            const std::vector<Interval>& spans) {
  RawPredictionSet r;
  r.num_queries = logits.size();
  r.num_logits = logits.at(0).size();
  for (std::size_t q = 0; q < logits.size(); ++q) {
    r.class_logits.insert(r.class_logits.end(), logits[q].begin(), logits[q].end());
    r.spans.push_back(spans[q].start);
    r.spans.push_back(spans[q].end);
    r.raw_spans.push_back(spans[q].start);
    r.raw_spans.push_back(spans[q].end);
  }
  return r;
}

RawPredictionSet random_preds(Rng& rng, std::size_t nq, std::size_t nl) {
  std::vector<std::vector<double>> logits(nq, std::vector<double>(nl));
  std::vector<Interval> spans(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    for (double& v : logits[q]) v = 2.0 * rng.normal();
    const double a = rng.uniform(0.01, 0.99), b = rng.uniform(0.01, 0.99);
    spans[q] = {std::min(a, b), std::max(a, b) + 1e-3};
  }
  return make_preds(logits, spans);
}

CostMatrix matrix(std::size_t n, std::vector<double> values) {
  return {n, n, std::move(values)};
}

// Lexicographically smallest permutation achieving the minimum total cost.
std::pair<Assignment, double> brute_force(const CostMatrix& c) {
  Assignment perm(c.rows);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < c.rows; ++r) total += c.at(r, perm[r]);
    if (total < best_cost) {
      best_cost = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_cost};
}

TEST(SpanIou, Examples) {
  EXPECT_DOUBLE_EQ(span_iou({0.2, 0.7}, {0.2, 0.7}), 1.0);
  EXPECT_DOUBLE_EQ(span_iou({0.0, 0.3}, {0.5, 0.9}), 0.0);
  EXPECT_DOUBLE_EQ(span_iou({0.0, 2.0}, {1.0, 3.0}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(span_iou({1.0, 3.0}, {0.0, 2.0}), 1.0 / 3.0);
  EXPECT_THROW(span_iou({0.5, 0.5}, {0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(span_iou({0.0, 1.0}, {0.6, 0.2}), std::invalid_argument);
}

TEST(SpanLoss, PerfectAndDisjoint) {
  const SpanLoss same = span_loss({0.1, 0.4}, {0.1, 0.4}, {});
  EXPECT_EQ(same.l_l1, 0.0);
  EXPECT_EQ(same.l_iou, 0.0);
  EXPECT_EQ(same.l_span, 0.0);

  const SpanLoss far = span_loss({0.0, 0.1}, {0.9, 1.0}, {});
  EXPECT_NEAR(far.l_iou, 1.8, 1e-12);
  EXPECT_NEAR(far.l_l1, 1.8, 1e-12);
  EXPECT_NEAR(far.l_span, 2.0 * 1.8 + 5.0 * 1.8, 1e-12);
  EXPECT_THROW(span_loss({0.3, 0.3}, {0.0, 1.0}, {}), std::invalid_argument);
}

TEST(SpanLoss, IouTermIsScaleInvariant) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    double v[4];
    for (double& x : v) x = rng.uniform(0.0, 1.0);
    Interval a{std::min(v[0], v[1]), std::max(v[0], v[1])};
    Interval b{std::min(v[2], v[3]), std::max(v[2], v[3])};
    if (a.end - a.start < 1e-3 || b.end - b.start < 1e-3) continue;
    const double pivot = rng.uniform(0.0, 1.0), k = rng.uniform(0.1, 1.0);
    auto sc = [&](Interval s) { return Interval{pivot + k * (s.start - pivot), pivot + k * (s.end - pivot)}; };
    EXPECT_NEAR(span_loss(a, b, {}).l_iou, span_loss(sc(a), sc(b), {}).l_iou, 1e-9);
  }
}

TEST(SpanLoss, IouTermBounded) {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    double v[4];
    for (double& x : v) x = rng.uniform(0.0, 1.0);
    Interval a{std::min(v[0], v[1]), std::max(v[0], v[1]) + 1e-6};
    Interval b{std::min(v[2], v[3]), std::max(v[2], v[3]) + 1e-6};
    const double l = span_loss(a, b, {}).l_iou;
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    EXPECT_GT(l, 0.0) << "distinct spans must have positive loss";
    const double g = generalized_iou(a, b);
    EXPECT_GE(g, -1.0);
    EXPECT_LE(g, span_iou(a, b) + 1e-15);
  }
}

TEST(ClassBalance, WeightExamples) {
  EXPECT_NEAR(class_balanced_weight(0.99, 100), 0.01 / (1 - std::pow(0.99, 100)), 1e-15);
  // 0.99^100 = 0.366032..., so w = 0.01 / 0.633968... = 0.0157737.
  EXPECT_NEAR(class_balanced_weight(0.99, 100), 0.0157737, 5e-7);
  for (double beta : {0.0, 0.5, 0.9, 0.99, 0.9999}) EXPECT_DOUBLE_EQ(class_balanced_weight(beta, 1), 1.0);
  for (double beta : {0.3, 0.9, 0.99})
    // Past beta^n ~ 1e-15 the weight rounds to 1 - beta.
    for (int n = 1; std::pow(beta, n) > 1e-13; ++n)
      EXPECT_GT(class_balanced_weight(beta, n), class_balanced_weight(beta, n + 1)) << beta << " " << n;
  const ClassStats s = stats_of({100, 1, 7});
  EXPECT_DOUBLE_EQ(s.weight(0), class_balanced_weight(0.99, 100));
  EXPECT_THROW(s.weight(3), std::out_of_range);
}

TEST(FocalLoss, ReducesToCrossEntropy) {
  const ClassStats s = stats_of({5, 5, 5}, 0.0, 0.0);
  const std::vector<double> zero(3, 0.0);
  EXPECT_NEAR(cb_focal_loss(zero, 0, s), 3.0 * std::log(2.0), 1e-12);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> z(3);
    for (double& v : z) v = 3.0 * rng.normal();
    const std::size_t t = static_cast<std::size_t>(rng.integer(0, 2));
    double bce = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-z[j]));
      bce -= j == t ? std::log(p) : std::log(1.0 - p);
    }
    EXPECT_NEAR(cb_focal_loss(z, t, s), bce, 1e-12);
  }
}

TEST(FocalLoss, MatchesReferenceAndIsPositive) {
  const ClassStats s = stats_of({100, 3, 40, 900});
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> z(4);
    for (double& v : z) v = 4.0 * rng.normal();
    const std::size_t t = static_cast<std::size_t>(rng.integer(0, 3));
    const double got = cb_focal_loss(z, t, s);
    EXPECT_NEAR(got, focal_reference(z, t, 0.99, 2.0, static_cast<double>(s.counts[t])), 1e-12);
    EXPECT_GT(got, 0.0);
  }
  // Saturated wrong logits stay finite thanks to the clamp.
  const std::vector<double> wrong = {-1000.0, 1000.0, 1000.0, 1000.0};
  const double capped = cb_focal_loss(wrong, 0, s);
  EXPECT_TRUE(std::isfinite(capped));
  EXPECT_NEAR(capped, -4.0 * s.weight(0) * std::log(1e-12), 1e-9);
  EXPECT_THROW(cb_focal_loss(wrong, 4, s), std::out_of_range);
}

TEST(Padding, SentinelsFillToQueryCount) {
  const auto padded = pad_ground_truth({{1, 2.0, 4.0}, {0, 0.0, 10.0}}, 10.0, 5, 3);
  ASSERT_EQ(padded.size(), 5u);
  EXPECT_EQ(padded[0].class_id, 1u);
  EXPECT_DOUBLE_EQ(padded[0].span->start, 0.2);
  EXPECT_DOUBLE_EQ(padded[0].span->end, 0.4);
  EXPECT_DOUBLE_EQ(padded[1].span->end, 1.0);
  for (std::size_t i = 2; i < 5; ++i) {
    EXPECT_EQ(padded[i].class_id, 3u);
    EXPECT_FALSE(padded[i].span.has_value());
  }
}

TEST(Padding, TooManySpansAsksForMoreQueries) {
  try {
    pad_ground_truth({{0, 0, 1}, {0, 1, 2}, {0, 2, 3}}, 3.0, 2, 1);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("raise the number of queries"), std::string::npos);
  }
  EXPECT_THROW(pad_ground_truth({{5, 0, 1}}, 3.0, 2, 3), std::invalid_argument);
}

TEST(MatchCost, PerfectPredictionIsNearlyFree) {
  const ClassStats s = stats_of({10, 10, 10, 50});
  const RawPredictionSet p = make_preds({{-20, 20, -20, -20}}, {{0.25, 0.5}});
  const GroundTruthEntry gt{1, Interval{0.25, 0.5}};
  EXPECT_LT(match_cost(p, 0, gt, s, {}), 1e-6);
  EXPECT_EQ(match_cost(p, 0, GroundTruthEntry{3, std::nullopt}, s, {}), 0.0);
}

TEST(MatchCost, MonotoneInL1) {
  const ClassStats s = stats_of({10, 10, 50});
  const GroundTruthEntry gt{0, Interval{0.3, 0.6}};
  double prev = -1.0;
  for (double shift = 0.0; shift < 0.3; shift += 0.02) {
    const RawPredictionSet p = make_preds({{0.3, -0.2, 0.1}}, {{0.3 + shift, 0.6 + shift}});
    const double c = match_cost(p, 0, gt, s, {});
    EXPECT_GT(c, prev);
    prev = c;
  }
}

TEST(Hungarian, IdentityFavoring) {
  for (std::size_t n = 1; n <= 6; ++n) {
    CostMatrix c{n, n, std::vector<double>(n * n, 1.0)};
    for (std::size_t i = 0; i < n; ++i) c.values[i * n + i] = 0.0;
    Assignment id(n);
    std::iota(id.begin(), id.end(), 0);
    EXPECT_EQ(hungarian(c), id);
  }
}

TEST(Hungarian, ThreeByThree) {
  const CostMatrix c = matrix(3, {4, 1, 3, 2, 0, 5, 3, 2, 2});
  const Assignment a = hungarian(c);
  EXPECT_EQ(a, (Assignment{1, 0, 2}));
  EXPECT_EQ(assignment_cost(c, a), 5.0);
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
  Rng rng(5);
  for (std::size_t n = 2; n <= 7; ++n) {
    for (int trial = 0; trial < 1000; ++trial) {
      CostMatrix c{n, n, std::vector<double>(n * n)};
      // Alternate continuous costs with small integers so ties are common.
      const bool ties = trial % 2 == 1;
      for (double& v : c.values) v = ties ? rng.integer(0, 3) : rng.uniform(0.0, 10.0);
      const auto [best, best_cost] = brute_force(c);
      const Assignment got = hungarian(c);
      ASSERT_EQ(assignment_cost(c, got), best_cost) << "n=" << n << " trial " << trial;
      if (ties) {
        ASSERT_EQ(got, best) << "n=" << n << " trial " << trial;
      }
    }
  }
}

TEST(Hungarian, RejectsBadMatrices) {
  EXPECT_THROW(hungarian(CostMatrix{2, 3, std::vector<double>(6, 0.0)}), std::invalid_argument);
  EXPECT_THROW(hungarian(matrix(2, {0, 1, std::nan(""), 0})), std::invalid_argument);
  EXPECT_THROW(hungarian(matrix(2, {0, 1, INFINITY, 0})), std::invalid_argument);
  EXPECT_TRUE(hungarian(CostMatrix{}).empty());
}

TEST(HungarianLoss, NoGroundTruthTrainsEveryQueryTowardNoAction) {
  const ClassStats s = stats_of({4, 6, 30});
  Rng rng(6);
  const RawPredictionSet p = random_preds(rng, 5, 3);
  const auto [loss, assignment] = hungarian_loss(p, {}, 10.0, s, {});
  double expect = 0.0;
  for (std::size_t q = 0; q < 5; ++q)
    expect += focal_reference({p.logit(q, 0), p.logit(q, 1), p.logit(q, 2)}, 2, 0.99, 2.0, 30);
  EXPECT_NEAR(loss.l_cb, expect, 1e-12);
  EXPECT_NEAR(loss.l_total, expect, 1e-12);
  EXPECT_EQ(loss.l_span, 0.0);
  EXPECT_EQ(loss.pairs.size(), 5u);
}

TEST(HungarianLoss, NearPerfectQueryClaimsTheGroundTruth) {
  const ClassStats s = stats_of({3, 3, 10});
  const RawPredictionSet p =
      make_preds({{0.5, 0.2, -0.1}, {-9, 9, -9}}, {{0.05, 0.9}, {0.2, 0.41}});
  const std::vector<LabeledSpan> gts = {{1, 2.0, 4.0}};
  const auto [loss, a] = hungarian_loss(p, gts, 10.0, s, {});
  EXPECT_EQ(a[0], 1u);
  // Both permutations by hand.
  const auto padded = pad_ground_truth(gts, 10.0, 2, 2);
  const double keep = match_cost(p, 1, padded[0], s, {}) + match_cost(p, 0, padded[1], s, {});
  const double swap = match_cost(p, 0, padded[0], s, {}) + match_cost(p, 1, padded[1], s, {});
  EXPECT_LT(keep, swap);
}

TEST(HungarianLoss, BreakdownAddsUp) {
  const ClassStats s = stats_of({5, 8, 2, 40});
  Rng rng(7);
  const RawPredictionSet p = random_preds(rng, 6, 4);
  const std::vector<LabeledSpan> gts = {{0, 1.0, 3.0}, {2, 2.5, 6.0}, {1, 7.0, 9.5}};
  const auto [loss, a] = hungarian_loss(p, gts, 10.0, s, {});
  EXPECT_NEAR(loss.l_span, 2.0 * loss.l_iou + 5.0 * loss.l_l1, 1e-12);
  EXPECT_NEAR(loss.l_total, loss.l_cb + loss.l_span, 1e-12);
  double cb = 0.0;
  std::size_t real = 0;
  for (const PairDetail& d : loss.pairs) {
    cb += d.l_cb;
    real += d.real;
    EXPECT_EQ(a[d.gt_row], d.query);
  }
  EXPECT_EQ(real, 3u);
  EXPECT_NEAR(cb, loss.l_cb, 1e-12);
}

TEST(HungarianLoss, InvariantUnderPermutations) {
  const ClassStats s = stats_of({5, 8, 2, 40});
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nq = 6;
    const RawPredictionSet p = random_preds(rng, nq, 4);
    std::vector<LabeledSpan> gts;
    const int n = rng.integer(0, 4);
    for (int i = 0; i < n; ++i) {
      const double a = rng.uniform(0.0, 9.0);
      gts.push_back({rng.integer(0, 2), a, a + rng.uniform(0.2, 1.0)});
    }
    const double base = hungarian_loss(p, gts, 10.0, s, {}).first.l_total;

    std::vector<std::size_t> perm(nq);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = nq - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    RawPredictionSet q = p;
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t c = 0; c < 4; ++c) q.class_logits[i * 4 + c] = p.logit(perm[i], c);
      q.spans[2 * i] = p.start(perm[i]);
      q.spans[2 * i + 1] = p.end(perm[i]);
    }
    EXPECT_NEAR(hungarian_loss(q, gts, 10.0, s, {}).first.l_total, base, 1e-9);

    std::vector<LabeledSpan> shuffled = gts;
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_NEAR(hungarian_loss(p, shuffled, 10.0, s, {}).first.l_total, base, 1e-9);
  }
}

TEST(HungarianLoss, TapeAndDetachedAgree) {
  const ClassStats s = stats_of({5, 8, 40});
  Rng rng(9);
  const std::size_t nq = 4, nl = 3;
  Tensor x(Shape{nl + 2, nq});
  for (double& v : x.values()) v = rng.normal();
  Tape tape;
  Var in = tape.constant(x);
  HeadOutputs out;
  out.logits = slice(in, 0, 0, nl);
  out.raw_spans = sigmoid(slice(in, 0, nl, nl + 2));
  Var a = reshape(slice(out.raw_spans, 0, 0, 1), Shape{nq});
  Var b = reshape(slice(out.raw_spans, 0, 1, 2), Shape{nq});
  out.starts = minimum(a, b);
  out.ends = maximum(a, b);
  const std::vector<LabeledSpan> gts = {{0, 0.5, 2.0}, {1, 1.0, 3.5}};
  const HungarianLoss on_tape = hungarian_loss(tape, out, gts, 4.0, s, {});
  const auto [detached, assignment] = hungarian_loss(detach(out), gts, 4.0, s, {});
  EXPECT_EQ(on_tape.assignment, assignment);
  EXPECT_NEAR(on_tape.total.value()[0], detached.l_total, 1e-12);
  EXPECT_NEAR(on_tape.breakdown.l_cb, detached.l_cb, 1e-12);
  EXPECT_NEAR(on_tape.breakdown.l_iou, detached.l_iou, 1e-12);
}

TEST(HungarianLoss, GradientsMatchFiniteDifferencesAtFixedAssignment) {
  const ClassStats s = stats_of({5, 8, 2, 40});
  const std::vector<LabeledSpan> gts = {{0, 1.0, 3.0}, {2, 2.5, 6.0}, {1, 7.0, 9.5}};
  const std::size_t nq = 5, nl = 4;
  Rng rng(10);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x0(Shape{nl + 2, nq});
    for (double& v : x0.values()) v = 1.5 * rng.normal();
    auto heads = [&](Tape&, Var in) {
      HeadOutputs out;
      out.logits = slice(in, 0, 0, nl);
      out.raw_spans = sigmoid(slice(in, 0, nl, nl + 2));
      Var a = reshape(slice(out.raw_spans, 0, 0, 1), Shape{nq});
      Var b = reshape(slice(out.raw_spans, 0, 1, 2), Shape{nq});
      out.starts = minimum(a, b);
      out.ends = maximum(a, b);
      return out;
    };
    // Stay clear of branch switches: raw pairs well separated, spans not
    // sharing an endpoint with any ground truth.
    bool near_kink = false;
    for (std::size_t q = 0; q < nq; ++q) {
      const double a = 1 / (1 + std::exp(-x0[nl * nq + q])), b = 1 / (1 + std::exp(-x0[(nl + 1) * nq + q]));
      if (std::abs(a - b) < 1e-3) near_kink = true;
      for (const LabeledSpan& g : gts)
        for (double e : {g.t_start / 10.0, g.t_end / 10.0})
          if (std::abs(a - e) < 1e-3 || std::abs(b - e) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    Assignment fixed;
    {
      Tape tape;
      fixed = hungarian_loss(tape, heads(tape, tape.constant(x0)), gts, 10.0, s, {}).assignment;
    }
    const GradCheckReport r = grad_check(
        [&](Tape& tape, Var in) {
          return hungarian_loss(tape, heads(tape, in), gts, 10.0, s, {}, &fixed).total;
        },
        x0);
    EXPECT_TRUE(r.passed) << "trial " << trial << " max rel " << r.max_rel_error;
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

TEST(HungarianLoss, FixedAssignmentIsUsedVerbatim) {
  const ClassStats s = stats_of({3, 3, 10});
  const RawPredictionSet p =
      make_preds({{0.5, 0.2, -0.1}, {-9, 9, -9}}, {{0.05, 0.9}, {0.2, 0.41}});
  Tape tape;
  Tensor logits(Shape{3, 2});
  Tensor starts(Shape{2}), ends(Shape{2}), raw(Shape{2, 2});
  for (std::size_t q = 0; q < 2; ++q) {
    for (std::size_t c = 0; c < 3; ++c) logits[c * 2 + q] = p.logit(q, c);
    starts[q] = raw[q] = p.start(q);
    ends[q] = raw[2 + q] = p.end(q);
  }
  HeadOutputs out{tape.constant(logits), tape.constant(starts), tape.constant(ends),
                  tape.constant(raw)};
  const Assignment forced = {0, 1};
  const HungarianLoss l = hungarian_loss(tape, out, {{1, 2.0, 4.0}}, 10.0, s, {}, &forced);
  EXPECT_EQ(l.assignment, forced);
  const auto padded = pad_ground_truth({{1, 2.0, 4.0}}, 10.0, 2, 2);
  const double expect = match_cost(p, 0, padded[0], s, {}) + cb_focal_loss(
      std::span<const double>(p.class_logits.data() + 3, 3), 2, s);
  EXPECT_NEAR(l.breakdown.l_total, expect, 1e-12);
  const Assignment wrong_size = {0};
  EXPECT_THROW(hungarian_loss(tape, out, {{1, 2.0, 4.0}}, 10.0, s, {}, &wrong_size),
               std::invalid_argument);
}

}  // namespace
}  // namespace locate
