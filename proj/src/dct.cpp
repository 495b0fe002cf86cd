#include "wrtsam/dct.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wrtsam::dct {

HalfShift parse_half_shift(const std::string& s) {
  if (s == "spatial") return HalfShift::spatial;
  if (s == "frequency") return HalfShift::frequency;
  throw ConfigError("dct_half_shift must be 'spatial' or 'frequency', got '" +
                    s + "'");
}

std::string to_string(HalfShift s) {
  return s == HalfShift::spatial ? "spatial" : "frequency";
}

DctBasis dct_basis(int height, int width, int u, int v, HalfShift shift) {
  if (height < 1 || width < 1) throw Error("dct_basis: empty patch");
  if (u < 0 || u >= height || v < 0 || v >= width)
    throw Error("dct_basis: frequency (" + std::to_string(u) + "," +
                std::to_string(v) + ") outside " + std::to_string(height) +
                "x" + std::to_string(width));
  auto factor = [shift](int pos, int freq, int len) {
    const double arg = shift == HalfShift::spatial
                           ? std::numbers::pi * (pos + 0.5) * freq / len
                           : std::numbers::pi * pos * (freq + 0.5) / len;
    return std::cos(arg);
  };
  DctBasis b{height, width, u, v, {}};
  b.values.resize(static_cast<std::size_t>(height) * width);
  for (int h = 0; h < height; ++h)
    for (int w = 0; w < width; ++w)
      b.values[static_cast<std::size_t>(h) * width + w] =
          factor(h, u, height) * factor(w, v, width);
  return b;
}

int FrequencyIndexPlan::group_width(int channels) const {
  if (groups() == 0) throw Error("frequency plan is empty");
  if (channels % groups() != 0)
    throw Error("channel count " + std::to_string(channels) +
                " is not divisible by " + std::to_string(groups()) +
                " frequency groups");
  return channels / groups();
}

void FrequencyIndexPlan::validate() const {
  if (grid < 1) throw Error("frequency plan grid must be positive");
  if (entries.empty()) throw Error("frequency plan is empty");
  for (auto [u, v] : entries)
    if (u < 0 || u >= grid || v < 0 || v >= grid)
      throw Error("frequency index (" + std::to_string(u) + "," +
                  std::to_string(v) + ") outside the " + std::to_string(grid) +
                  "x" + std::to_string(grid) + " grid");
}

std::vector<FrequencyIndex> zigzag_order(int grid) {
  std::vector<FrequencyIndex> all;
  all.reserve(static_cast<std::size_t>(grid) * grid);
  for (int u = 0; u < grid; ++u)
    for (int v = 0; v < grid; ++v) all.emplace_back(u, v);
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    const int sa = a.first + a.second, sb = b.first + b.second;
    return sa != sb ? sa < sb : a.first < b.first;
  });
  return all;
}

FrequencyIndexPlan frequency_plan(PlanMode mode, int k, int grid) {
  if (grid < 1) throw Error("frequency_plan: grid must be positive");
  if (k < 1 || k > grid * grid)
    throw Error("frequency_plan: k=" + std::to_string(k) + " exceeds the " +
                std::to_string(grid * grid) + " available frequencies");
  const auto order = zigzag_order(grid);
  FrequencyIndexPlan plan{grid, {}};
  if (mode == PlanMode::top)
    plan.entries.assign(order.begin(), order.begin() + k);
  else
    plan.entries.assign(order.end() - k, order.end());
  return plan;
}

FrequencyIndexPlan parse_plan(const std::string& mode, int grid) {
  if (mode == "top1") return frequency_plan(PlanMode::top, 1, grid);
  if (mode == "bot1") return frequency_plan(PlanMode::bottom, 1, grid);
  auto with_k = [&](const std::string& prefix) -> int {
    const std::string rest = mode.substr(prefix.size());
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != rest.size())
      throw ConfigError("bad dct mode '" + mode + "'");
    return k;
  };
  if (mode.rfind("topK:", 0) == 0)
    return frequency_plan(PlanMode::top, with_k("topK:"), grid);
  if (mode.rfind("botK:", 0) == 0)
    return frequency_plan(PlanMode::bottom, with_k("botK:"), grid);
  throw ConfigError("dct mode must be top1, bot1, topK:<k> or botK:<k>, got '" +
                    mode + "'");
}

std::string plan_label(const FrequencyIndexPlan& plan) {
  std::string s;
  for (auto [u, v] : plan.entries) {
    if (!s.empty()) s += ' ';
    s += "(" + std::to_string(u) + "," + std::to_string(v) + ")";
  }
  return s;
}

std::vector<double> dct2_coefficient(const Tensor& part, int u, int v,
                                     HalfShift shift) {
  const Shape s = part.shape();
  if (s.n != 1) throw Error("dct2_coefficient: expects a single [1,C,H,W] part");
  const DctBasis b = dct_basis(s.h, s.w, u, v, shift);
  std::vector<double> out(static_cast<std::size_t>(s.c), 0.0);
  for (int c = 0; c < s.c; ++c) {
    const double* p = &part.at(0, c, 0, 0);
    double acc = 0.0;
    for (std::size_t i = 0; i < b.values.size(); ++i) acc += p[i] * b.values[i];
    out[static_cast<std::size_t>(c)] = acc;
  }
  return out;
}

std::vector<double> mscdct(const Tensor& x, const FrequencyIndexPlan& plan,
                           HalfShift shift) {
  const Shape s = x.shape();
  if (s.n != 1) throw Error("mscdct: expects a single [1,C,H,W] input");
  const int width = plan.group_width(s.c);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(s.c));
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int i = 0; i < plan.groups(); ++i) {
    const auto first = x.storage().begin() +
                       static_cast<std::ptrdiff_t>(plane * i * width);
    Tensor part(Shape{1, width, s.h, s.w},
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(
                                                       plane * width)));
    const auto [u, v] = plan.entries[static_cast<std::size_t>(i)];
    const auto freq = dct2_coefficient(part, u, v, shift);
    out.insert(out.end(), freq.begin(), freq.end());
  }
  return out;
}

Var patch_dct(Graph& g, Var image, const FrequencyIndexPlan& plan,
              HalfShift shift) {
  plan.validate();
  const Tensor& x = g.value(image);
  const Shape s = x.shape();
  const int p = plan.grid;
  if (s.c != 1)
    throw Error("patch_dct: expects a single-channel image, got " + s.str());
  if (s.h % p != 0 || s.w % p != 0)
    throw Error("patch_dct: image " + std::to_string(s.h) + "x" +
                std::to_string(s.w) + " not divisible by patch " +
                std::to_string(p));
  const int k = plan.groups();
  std::vector<DctBasis> bases;
  for (auto [u, v] : plan.entries) bases.push_back(dct_basis(p, p, u, v, shift));

  const int gh = s.h / p, gw = s.w / p;
  Tensor out(Shape{s.n, k, gh, gw});
  for (int n = 0; n < s.n; ++n)
    for (int i = 0; i < k; ++i)
      for (int ty = 0; ty < gh; ++ty)
        for (int tx = 0; tx < gw; ++tx) {
          double acc = 0.0;
          for (int h = 0; h < p; ++h)
            for (int w = 0; w < p; ++w)
              acc += x.at(n, 0, ty * p + h, tx * p + w) *
                     bases[static_cast<std::size_t>(i)].at(h, w);
          out.at(n, i, ty, tx) = acc;
        }

  const Var out_var{g.size()};
  return g.record("patch_dct", std::move(out), {image}, [=](Graph& gr) {
    const Tensor& go = gr.grad(out_var);
    Tensor& gx = gr.grad(image);
    for (int n = 0; n < s.n; ++n)
      for (int i = 0; i < k; ++i)
        for (int ty = 0; ty < gh; ++ty)
          for (int tx = 0; tx < gw; ++tx) {
            const double d = go.at(n, i, ty, tx);
            for (int h = 0; h < p; ++h)
              for (int w = 0; w < p; ++w)
                gx.at(n, 0, ty * p + h, tx * p + w) +=
                    d * bases[static_cast<std::size_t>(i)].at(h, w);
          }
  });
}

}  // namespace wrtsam::dct
