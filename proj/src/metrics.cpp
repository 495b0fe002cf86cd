#include "wrtsam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace wrtsam::metrics {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* op) {
  if (!(pred.shape() == gt.shape()))
    throw Error(std::string(op) + ": shape mismatch " + pred.shape().str() +
                " vs " + gt.shape().str());
}

void check_probabilities(const Tensor& pred, const Tensor& gt) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < -1e-9 || pred[i] > 1.0 + 1e-9)
      throw Error("iou_loss: prediction " + std::to_string(pred[i]) +
                  " outside [0,1]");
    if (gt[i] != 0.0 && gt[i] != 1.0) throw Error("iou_loss: ground truth not binary");
  }
}

Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return Ratio{0.0, false};
  return Ratio{static_cast<double>(num) / static_cast<double>(den), true};
}

nlohmann::json ratio_json(const Ratio& r) {
  return nlohmann::json{{"value", r.value}, {"defined", r.defined}};
}

}  // namespace

LossValue iou_loss(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "iou_loss");
  check_probabilities(pred, gt);
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  const double uni = sp + sg - inter;
  return LossValue{1.0 - inter / (uni + kIouEps), inter, uni};
}

Tensor iou_loss_grad(const Tensor& pred, const Tensor& gt) {
  const LossValue lv = iou_loss(pred, gt);
  const double den = lv.union_ + kIouEps;
  Tensor grad(pred.shape());
  // dI/dp = g, dU/dp = 1 - g
  for (std::size_t i = 0; i < pred.size(); ++i)
    grad[i] = -(gt[i] * den - lv.intersec * (1.0 - gt[i])) / (den * den);
  return grad;
}

Var iou_loss(Graph& g, Var pred, const Tensor& gt) {
  const LossValue lv = iou_loss(g.value(pred), gt);
  const Var out_var{g.size()};
  return g.record("iou_loss", Tensor(Shape{1, 1, 1, 1}, lv.loss), {pred},
                  [=](Graph& gr) {
                    const double seed = gr.grad(out_var)[0];
                    const Tensor d = iou_loss_grad(gr.value(pred), gt);
                    Tensor& gp = gr.grad(pred);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += seed * d[i];
                  });
}

ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt_mask) {
  check_pair(pred_mask, gt_mask, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] >= 0.5, t = gt_mask[i] >= 0.5;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PrecisionRecall precision_recall(const ConfusionCounts& c) {
  return PrecisionRecall{ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn)};
}

Ratio mask_iou(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn); }

std::vector<PrPoint> pr_curve(std::span<const double> scores,
                              std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw Error("pr_curve: scores and labels differ in length");
  const std::uint64_t positives =
      std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; });
  if (positives == 0) throw Error("pr_auc: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<PrPoint> curve;
  curve.reserve(order.size() + 1);
  curve.push_back({});
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i)
      (labels[order[i]] != 0 ? tp : fp) += 1;
    curve.push_back({static_cast<double>(tp) / static_cast<double>(positives),
                     static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  curve.front().precision = curve[1].precision;
  return curve;
}

double trapezoid_area(const std::vector<PrPoint>& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].recall - curve[i - 1].recall) *
            (curve[i].precision + curve[i - 1].precision) * 0.5;
  return area;
}

double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return trapezoid_area(pr_curve(scores, labels));
}

Tensor binarize(const Tensor& prob, double threshold) {
  Tensor out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1.0 : 0.0;
  return out;
}

MetricsReport make_report(const ConfusionCounts& pooled, double threshold) {
  MetricsReport r;
  r.counts = pooled;
  r.threshold = threshold;
  const auto pr = precision_recall(pooled);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.iou = mask_iou(pooled);
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  return nlohmann::json{
      {"threshold", r.threshold},
      {"images", r.images},
      {"counts", {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}},
      {"micro", {{"precision", ratio_json(r.precision)},
                 {"recall", ratio_json(r.recall)},
                 {"iou", ratio_json(r.iou)},
                 {"auc", ratio_json(r.auc)}}},
      {"macro", {{"precision", ratio_json(r.macro_precision)},
                 {"recall", ratio_json(r.macro_recall)},
                 {"iou", ratio_json(r.macro_iou)}}}};
}

std::string pr_curve_csv(const std::vector<PrPoint>& curve) {
  std::string out = "recall,precision\n";
  char buf[64];
  for (const PrPoint& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.recall, p.precision);
    out += buf;
  }
  return out;
}

}  // namespace wrtsam::metrics
