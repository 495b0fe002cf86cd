#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wrtsam/graph.hpp"

namespace wrtsam::metrics {

inline constexpr double kIouEps = 1e-7;

struct LossValue {
  double loss = 0.0;
  double intersec = 0.0;
  double union_ = 0.0;
};

/// Soft IoU: I = sum p*g, U = sum p + sum g - I, loss = 1 - I / (U + eps).
/// pred must lie in [0,1] (1e-9 slack) and gt in {0,1}.
LossValue iou_loss(const Tensor& pred, const Tensor& gt);
/// d loss / d pred.
Tensor iou_loss_grad(const Tensor& pred, const Tensor& gt);
/// Graph op returning the scalar loss as a [1,1,1,1] tensor.
Var iou_loss(Graph& g, Var pred, const Tensor& gt);

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp; tn += o.tn; fp += o.fp; fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt_mask);

/// A fraction that may be undefined (zero denominator); reported as 0 then.
struct Ratio {
  double value = 0.0;
  bool defined = false;
};

struct PrecisionRecall {
  Ratio precision;
  Ratio recall;
};

PrecisionRecall precision_recall(const ConfusionCounts& c);
Ratio mask_iou(const ConfusionCounts& c);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// PR curve by sweeping every distinct score as a >= threshold (descending),
/// preceded by (0, precision of the first point).
std::vector<PrPoint> pr_curve(std::span<const double> scores,
                              std::span<const std::uint8_t> labels);
/// Trapezoidal area under pr_curve over recall. Needs at least one positive.
double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double trapezoid_area(const std::vector<PrPoint>& curve);

Tensor binarize(const Tensor& prob, double threshold = 0.5);

struct MetricsReport {
  ConfusionCounts counts;
  double threshold = 0.5;
  Ratio precision, recall, iou;
  Ratio auc;  // undefined when no positive pixel exists
  // Per-image means over the images where each value is defined.
  Ratio macro_precision, macro_recall, macro_iou;
  std::size_t images = 0;
};

MetricsReport make_report(const ConfusionCounts& pooled, double threshold);
nlohmann::json to_json(const MetricsReport& r);
/// "recall,precision" lines with a header.
std::string pr_curve_csv(const std::vector<PrPoint>& curve);

}  // namespace wrtsam::metrics
