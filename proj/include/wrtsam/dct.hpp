#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wrtsam/graph.hpp"

namespace wrtsam::dct {

/// Where the half-sample shift sits in the cosine argument.
///   spatial:   cos(pi (h + 1/2) u / H)   (DCT-II; (0,0) is the constant basis)
///   frequency: cos(pi h (u + 1/2) / H)
enum class HalfShift { spatial, frequency };

HalfShift parse_half_shift(const std::string& s);
std::string to_string(HalfShift s);

struct DctBasis {
  int height = 0;
  int width = 0;
  int u = 0;
  int v = 0;
  std::vector<double> values;  // row-major height x width

  double at(int h, int w) const {
    return values[static_cast<std::size_t>(h) * width + w];
  }
};

/// Unnormalised 2-D cosine basis for frequency (u, v) over an H x W patch.
DctBasis dct_basis(int height, int width, int u, int v,
                   HalfShift shift = HalfShift::spatial);

using FrequencyIndex = std::pair<int, int>;

/// Ordered frequency selection; entry i drives channel group i.
struct FrequencyIndexPlan {
  int grid = 8;
  std::vector<FrequencyIndex> entries;

  int groups() const { return static_cast<int>(entries.size()); }
  /// Channels per group for a C-channel input; throws unless C % groups == 0.
  int group_width(int channels) const;
  void validate() const;
};

enum class PlanMode { top, bottom };

/// The first (top) or last (bottom) k indices of the P x P grid in zig-zag
/// order: ascending u + v, ties broken by ascending u.
FrequencyIndexPlan frequency_plan(PlanMode mode, int k, int grid);

/// Parses "top1", "bot1", "topK:<k>", "botK:<k>".
FrequencyIndexPlan parse_plan(const std::string& mode, int grid);
std::string plan_label(const FrequencyIndexPlan& plan);

/// All P*P indices in zig-zag order.
std::vector<FrequencyIndex> zigzag_order(int grid);

/// sum_{h,w} part[c,h,w] * B[h,w] for each of the C' channels of a [1,C',H,W]
/// tensor.
std::vector<double> dct2_coefficient(const Tensor& part, int u, int v,
                                     HalfShift shift = HalfShift::spatial);

/// Splits X [1,C,H,W] into plan.groups() channel groups, reduces group i with
/// frequency entries[i] and concatenates: output length C.
std::vector<double> mscdct(const Tensor& x, const FrequencyIndexPlan& plan,
                           HalfShift shift = HalfShift::spatial);

/// Graph op for single-channel images [N,1,H,W]: for every non-overlapping
/// P x P patch (P = plan.grid) evaluates the plan's k coefficients, giving a
/// coefficient grid [N,k,H/P,W/P]. Linear in the image, no parameters.
Var patch_dct(Graph& g, Var image, const FrequencyIndexPlan& plan,
              HalfShift shift = HalfShift::spatial);

}  // namespace wrtsam::dct
