#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "wrtsam/grad_check.hpp"
#include "wrtsam/metrics.hpp"

using namespace wrtsam;
using namespace wrtsam::metrics;

namespace {

Tensor mask_from(int h, int w, std::initializer_list<std::pair<int, int>> on) {
  Tensor t(Shape{1, 1, h, w});
  for (auto [y, x] : on) t.at(0, 0, y, x) = 1.0;
  return t;
}

// Every distinct score used as a >= threshold, counted from scratch.
double exhaustive_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double pos = 0;
  for (auto v : l) pos += v;
  std::vector<std::pair<double, double>> pts;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (l[i] ? tp : fp) += 1;
    pts.emplace_back(tp / pos, tp / (tp + fp));
  }
  pts.insert(pts.begin(), {0.0, pts.front().second});
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2;
  return area;
}

}  // namespace

TEST_CASE("iou_loss examples") {
  const Tensor g = mask_from(4, 4, {{0, 0}, {0, 1}});
  CHECK(std::abs(iou_loss(g, g).loss) <= 1e-6);
  CHECK(std::abs(iou_loss(mask_from(4, 4, {{3, 3}}), g).loss - 1.0) <= 1e-6);
  const LossValue third = iou_loss(mask_from(4, 4, {{0, 1}, {1, 1}}), g);
  CHECK(third.intersec == 1.0);
  CHECK(third.union_ == 3.0);
  CHECK(std::abs(third.loss - 2.0 / 3.0) <= 1e-6);
  // Both empty: eps keeps it finite.
  CHECK(std::isfinite(iou_loss(Tensor(g.shape()), Tensor(g.shape())).loss));

  CHECK_THROWS_AS(iou_loss(Tensor(Shape{1, 1, 4, 3}), g), Error);
  CHECK_THROWS_AS(iou_loss(Tensor(g.shape(), 1.1), g), Error);
  CHECK_NOTHROW(iou_loss(Tensor(g.shape(), 1.0 + 1e-10), g));
  CHECK_THROWS_AS(iou_loss(g, Tensor(g.shape(), 0.5)), Error);
}

TEST_CASE("iou_loss stays in [0,1] and its gradient matches finite differences") {
  std::mt19937_64 rng(51);
  for (int t = 0; t < 10; ++t) {
    const Tensor p = wrtsam::test::uniform_tensor(rng, {1, 1, 5, 5}, 0.1, 0.9);
    Tensor gt(p.shape());
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
    const double l = iou_loss(p, gt).loss;
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
    const Tensor grad = iou_loss_grad(p, gt);
    for (std::size_t i = 0; i < p.size(); ++i) {
      Tensor a = p, b = p;
      a[i] += 1e-5;
      b[i] -= 1e-5;
      const double fd = (iou_loss(a, gt).loss - iou_loss(b, gt).loss) / 2e-5;
      CHECK(std::abs(fd - grad[i]) / std::max(1e-3, std::abs(fd) + std::abs(grad[i])) <= 1e-4);
    }
    Graph g;
    Var v = g.constant(p);
    CHECK(g.value(iou_loss(g, v, gt))[0] == doctest::Approx(l).epsilon(1e-15));
  }
}

TEST_CASE("confusion counts") {
  const Tensor g = mask_from(4, 4, {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {0, 3}});
  CHECK(confusion(g, g) == ConfusionCounts{5, 11, 0, 0});
  CHECK(confusion(Tensor(g.shape(), 1.0), Tensor(g.shape())) == ConfusionCounts{0, 0, 16, 0});
  CHECK_THROWS_AS(confusion(g, Tensor(Shape{1, 1, 4, 5})), Error);

  std::mt19937_64 rng(52);
  for (int t = 0; t < 20; ++t) {
    Tensor p(Shape{1, 1, 8, 8}), q(Shape{1, 1, 8, 8});
    ConfusionCounts want;
    for (std::size_t i = 0; i < 64; ++i) {
      p[i] = static_cast<double>(rng() % 2);
      q[i] = static_cast<double>(rng() % 2);
      if (p[i] == 1 && q[i] == 1) ++want.tp;
      if (p[i] == 0 && q[i] == 0) ++want.tn;
      if (p[i] == 1 && q[i] == 0) ++want.fp;
      if (p[i] == 0 && q[i] == 1) ++want.fn;
    }
    const ConfusionCounts got = confusion(p, q);
    CHECK(got == want);
    CHECK(got.total() == 64);
  }
}

TEST_CASE("precision, recall and IoU closed forms") {
  PrecisionRecall pr = precision_recall({3, 0, 1, 2});
  CHECK(pr.precision.value == 0.75);
  CHECK(pr.recall.value == 0.6);
  CHECK(pr.precision.defined);

  pr = precision_recall({0, 10, 0, 4});
  CHECK_FALSE(pr.precision.defined);
  CHECK(pr.precision.value == 0.0);
  CHECK(pr.recall.defined);

  pr = precision_recall({78, 0, 22, 0});
  CHECK(pr.precision.value == 0.78);
  CHECK(pr.recall.value == 1.0);

  CHECK(mask_iou({7, 9, 0, 0}).value == 1.0);
  CHECK(mask_iou({0, 9, 3, 4}).value == 0.0);
  CHECK(mask_iou({0, 9, 3, 4}).defined);
  CHECK(mask_iou({1, 9, 1, 1}).value == 1.0 / 3.0);
  CHECK_FALSE(mask_iou({0, 9, 0, 0}).defined);
}

TEST_CASE("mask IoU never exceeds min(P, R)") {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 500; ++t) {
    const ConfusionCounts c{rng() % 50, rng() % 50, rng() % 50, rng() % 50};
    const auto pr = precision_recall(c);
    const auto iou = mask_iou(c);
    if (pr.precision.defined && pr.recall.defined && iou.defined)
      CHECK(iou.value <= std::min(pr.precision.value, pr.recall.value) + 1e-15);
  }
}

TEST_CASE("pr_auc examples and errors") {
  const std::vector<double> s{0.9, 0.8, 0.3};
  const std::vector<std::uint8_t> l{1, 0, 1};
  const auto curve = pr_curve(s, l);
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].recall == 0.0);
  CHECK(curve[0].precision == 1.0);
  CHECK(curve[1].recall == 0.5);
  CHECK(curve[1].precision == 1.0);
  CHECK(curve[2].recall == 0.5);
  CHECK(curve[2].precision == 0.5);
  CHECK(curve[3].recall == 1.0);
  CHECK(curve[3].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(pr_auc(s, l) == doctest::Approx(0.5 + 0.5 * (0.5 + 2.0 / 3.0) / 2).epsilon(1e-15));

  CHECK(pr_auc(std::vector<double>{0.9, 0.7, 0.2, 0.1}, std::vector<std::uint8_t>{1, 1, 0, 0}) ==
        1.0);
  CHECK(pr_auc(std::vector<double>{0.2, 0.7, 0.2}, std::vector<std::uint8_t>{1, 1, 1}) == 1.0);
  CHECK_THROWS_AS(pr_auc(std::vector<double>{0.2, 0.7}, std::vector<std::uint8_t>{0, 0}), Error);
  CHECK_THROWS_AS(pr_auc(std::vector<double>{0.2}, std::vector<std::uint8_t>{1, 0}), Error);

  const std::string csv = pr_curve_csv(curve);
  CHECK(csv.rfind("recall,precision\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("pr_auc matches exhaustive thresholds and is rank invariant") {
  std::mt19937_64 rng(54);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n : {1, 2, 5, 17, 100, 1000}) {
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<double> s(static_cast<std::size_t>(n));
      std::vector<std::uint8_t> l(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        // Coarse values so ties occur.
        s[static_cast<std::size_t>(i)] = std::round(u(rng) * 40) / 40;
        l[static_cast<std::size_t>(i)] = u(rng) < 0.3;
      }
      l[0] = 1;
      const double auc = pr_auc(s, l);
      CHECK(std::abs(auc - exhaustive_auc(s, l)) <= 1e-9);
      CHECK(auc >= 0.0);
      CHECK(auc <= 1.0);

      std::vector<double> t(s.size());
      std::transform(s.begin(), s.end(), t.begin(),
                     [](double x) { return std::exp(3 * x) - 7; });
      CHECK(std::abs(pr_auc(t, l) - auc) <= 1e-12);
      std::transform(s.begin(), s.end(), t.begin(),
                     [](double x) { return 1 / (1 + std::exp(-(x - 0.3) * 11)); });
      CHECK(std::abs(pr_auc(t, l) - auc) <= 1e-12);
    }
  }
}

TEST_CASE("binarize uses >=") {
  CHECK(sum(binarize(Tensor(Shape{1, 1, 3, 3}, 0.5))) == 9.0);
  CHECK(sum(binarize(Tensor(Shape{1, 1, 3, 3}))) == 0.0);
  std::mt19937_64 rng(55);
  const Tensor p = wrtsam::test::uniform_tensor(rng, {1, 2, 5, 4}, 0.0, 1.0);
  const Tensor b = binarize(p, 0.37);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(b[i] == (p[i] >= 0.37 ? 1.0 : 0.0));
}

TEST_CASE("binary iou_loss equals one minus mask IoU") {
  std::mt19937_64 rng(56);
  for (int t = 0; t < 50; ++t) {
    const Tensor p = wrtsam::test::uniform_tensor(rng, {1, 1, 6, 6}, 0.0, 1.0);
    Tensor gt(p.shape());
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = (rng() % 4 == 0) ? 1.0 : 0.0;
    const Tensor b = binarize(p);
    const Ratio iou = mask_iou(confusion(b, gt));
    if (!iou.defined) continue;
    CHECK(std::abs(iou_loss(b, gt).loss - (1 - iou.value)) <= 1e-6);
  }
}

TEST_CASE("report values stay in range and serialise with flags") {
  const MetricsReport r = make_report({3, 10, 1, 2}, 0.5);
  CHECK(r.precision.value == 0.75);
  CHECK(r.recall.value == 0.6);
  CHECK(r.iou.value == 0.5);
  const nlohmann::json j = to_json(r);
  CHECK(j["micro"]["precision"]["value"] == 0.75);
  CHECK(j.contains("counts"));
  const MetricsReport empty = make_report({0, 16, 0, 0}, 0.5);
  CHECK_FALSE(empty.recall.defined);
  CHECK_FALSE(empty.iou.defined);
}
