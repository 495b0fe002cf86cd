#include "wrtsam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "wrtsam/json_util.hpp"

namespace wrtsam::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;
constexpr int kMaxAttempts = 200;

const std::array<const char*, 4> kTypeNames{"pore", "crack", "slag", "lack_of_fusion"};
const std::array<const char*, 3> kScaleNames{"small", "medium", "large"};

DefectType parse_type(const std::string& s) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i)
    if (s == kTypeNames[i]) return static_cast<DefectType>(i);
  throw Error("unknown defect type '" + s + "'");
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), 0x57454c44u};
  return std::mt19937_64(seq);
}

std::string sample_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04llu", static_cast<unsigned long long>(index));
  return buf;
}

// Binary support on the image grid; `outside` marks shapes leaving the image.
struct Support {
  int h = 0, w = 0;
  std::vector<std::uint8_t> px;
  bool outside = false;

  Support(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, 0) {}
  void set(int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) {
      outside = true;
      return;
    }
    px[static_cast<std::size_t>(y) * w + x] = 1;
  }
  std::size_t area() const { return static_cast<std::size_t>(std::count(px.begin(), px.end(), 1)); }
};

struct SeamGeometry {
  bool horizontal = true;
  double center = 0.0;     // cross-seam coordinate of the centre line
  double half_width = 0.0;
  int along = 0;           // extent along the seam
  int across = 0;          // extent across the seam

  // (along, across) -> (y, x)
  std::pair<double, double> to_yx(double a, double c) const {
    return horizontal ? std::pair{c, a} : std::pair{a, c};
  }
  double seam_angle() const { return horizontal ? 0.0 : std::numbers::pi / 2; }
};

void fill_ellipse(Support& s, double cy, double cx, double a, double b, double theta) {
  const double r = std::max(a, b) + 1.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y)
    for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * ct + dy * st) / a;
      const double v = (-dx * st + dy * ct) / b;
      if (u * u + v * v <= 1.0) s.set(y, x);
    }
}

struct AreaRange {
  double lo, hi;
};

AreaRange target_range(const ScenarioSpec& spec, ScaleClass cls) {
  const double lo = spec.small_limit(), hi = spec.large_limit();
  switch (cls) {
    case ScaleClass::small: return {2.0, std::max(2.0, std::ceil(lo) - 1.0)};
    case ScaleClass::medium: return {std::ceil(lo), std::floor(hi)};
    case ScaleClass::large: return {std::floor(hi) + 1.0, std::floor(hi) * 3.0};
  }
  return {1.0, 1.0};
}

Support draw_shape(const ScenarioSpec& spec, const SeamGeometry& seam,
                   DefectType type, double area, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Support s(spec.height, spec.width);
  const double margin = 2.0;
  const double along = margin + unit(rng) * (seam.along - 2 * margin);
  const double across =
      seam.center + (unit(rng) * 2.0 - 1.0) * 0.7 * seam.half_width;
  const auto [cy, cx] = seam.to_yx(along, across);

  switch (type) {
    case DefectType::pore: {
      const double aspect = 1.0 + 0.5 * unit(rng);
      const double a = std::sqrt(area * aspect / std::numbers::pi);
      fill_ellipse(s, cy, cx, a, a / aspect, unit(rng) * std::numbers::pi);
      break;
    }
    case DefectType::slag: {
      const double aspect = 2.5 + 1.5 * unit(rng);
      const double a = std::sqrt(area * aspect / std::numbers::pi);
      const double theta = seam.seam_angle() + (unit(rng) - 0.5) * 0.6;
      fill_ellipse(s, cy, cx, a, std::max(0.6, a / aspect), theta);
      break;
    }
    case DefectType::crack: {
      const int width = area < 20 ? 1 : 1 + static_cast<int>(unit(rng) < 0.5);
      std::normal_distribution<double> turn(0.0, 0.35);
      double theta = unit(rng) * 2.0 * std::numbers::pi;
      double y = cy, x = cx;
      const int max_steps = static_cast<int>(area) * 4;
      for (int step = 0; step < max_steps && static_cast<double>(s.area()) < area; ++step) {
        for (int i = 0; i < width; ++i)
          for (int j = 0; j < width; ++j)
            s.set(static_cast<int>(std::lround(y)) + i, static_cast<int>(std::lround(x)) + j);
        theta += turn(rng);
        y += std::sin(theta);
        x += std::cos(theta);
        if (s.outside) break;
      }
      break;
    }
    case DefectType::lack_of_fusion: {
      const int thick = area < 12 ? 1 : 2;
      const int len = std::max(1, static_cast<int>(std::lround(area / thick)));
      const double edge = seam.center + (unit(rng) < 0.5 ? -1.0 : 1.0) * 0.85 * seam.half_width;
      const double start = margin + unit(rng) * std::max(1.0, seam.along - 2 * margin - len);
      for (int a = 0; a < len; ++a)
        for (int t = 0; t < thick; ++t) {
          const auto [py, px] = seam.to_yx(start + a, std::floor(edge) + t);
          s.set(static_cast<int>(py), static_cast<int>(px));
        }
      break;
    }
  }
  return s;
}

json ratio_array(const auto& arr) { return json(arr); }

}  // namespace

std::string to_string(DefectType t) { return kTypeNames[static_cast<std::size_t>(t)]; }
std::string to_string(ScaleClass s) { return kScaleNames[static_cast<std::size_t>(s)]; }

double ScenarioSpec::small_limit() const {
  const double f = std::min(height, width) / 640.0;
  return (32.0 * f) * (32.0 * f);
}

double ScenarioSpec::large_limit() const {
  const double f = std::min(height, width) / 640.0;
  return (96.0 * f) * (96.0 * f);
}

ScaleClass ScenarioSpec::classify(std::size_t area) const {
  const double a = static_cast<double>(area);
  if (a < small_limit()) return ScaleClass::small;
  if (a > large_limit()) return ScaleClass::large;
  return ScaleClass::medium;
}

void ScenarioSpec::validate() const {
  auto fail = [this](const std::string& m) {
    throw ConfigError("scenario '" + name + "': " + m);
  };
  if (height < 8 || width < 8) fail("image must be at least 8x8");
  if (seam_orientation != "horizontal" && seam_orientation != "vertical")
    fail("seam_orientation must be 'horizontal' or 'vertical'");
  if (seam_width <= 0.0 || seam_width > 1.0) fail("seam_width must be in (0,1]");
  auto check_probs = [&](const auto& probs, const char* what) {
    double total = 0.0;
    for (double p : probs) {
      if (p < 0.0) fail(std::string(what) + " must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(std::string(what) + " must sum to 1");
  };
  check_probs(defect_probs, "defect_probs");
  check_probs(scale_probs, "scale_probs");
  if (min_defects < 0 || max_defects < min_defects) fail("invalid defect count range");
  if (contrast_min < 0.0 || contrast_max < contrast_min || contrast_max > 1.0)
    fail("contrast range must satisfy 0 <= min <= max <= 1");
  if (background < 0.0 || background + seam_intensity > 1.0 || seam_intensity < 0.0)
    fail("background and seam intensity must stay within [0,1]");
  if (noise_sigma < 0.0) fail("noise_sigma must be non-negative");
}

json to_json(const ScenarioSpec& s) {
  return json{{"name", s.name},
              {"height", s.height},
              {"width", s.width},
              {"seam_orientation", s.seam_orientation},
              {"seam_width", s.seam_width},
              {"seam_intensity", s.seam_intensity},
              {"background", s.background},
              {"defect_probs", ratio_array(s.defect_probs)},
              {"min_defects", s.min_defects},
              {"max_defects", s.max_defects},
              {"scale_probs", ratio_array(s.scale_probs)},
              {"contrast_min", s.contrast_min},
              {"contrast_max", s.contrast_max},
              {"noise_sigma", s.noise_sigma},
              {"seed", s.seed}};
}

ScenarioSpec scenario_from_json(const json& j) {
  const std::string where = "scenario";
  require_known_keys(j,
                     {"name", "preset", "height", "width", "seam_orientation",
                      "seam_width", "seam_intensity", "background",
                      "defect_probs", "min_defects", "max_defects",
                      "scale_probs", "contrast_min", "contrast_max",
                      "noise_sigma", "seed"},
                     where);
  ScenarioSpec s;
  if (j.contains("preset")) s = preset(j.at("preset").get<std::string>());
  read_key(j, "name", s.name, where);
  read_key(j, "height", s.height, where);
  read_key(j, "width", s.width, where);
  read_key(j, "seam_orientation", s.seam_orientation, where);
  read_key(j, "seam_width", s.seam_width, where);
  read_key(j, "seam_intensity", s.seam_intensity, where);
  read_key(j, "background", s.background, where);
  read_key(j, "defect_probs", s.defect_probs, where);
  read_key(j, "min_defects", s.min_defects, where);
  read_key(j, "max_defects", s.max_defects, where);
  read_key(j, "scale_probs", s.scale_probs, where);
  read_key(j, "contrast_min", s.contrast_min, where);
  read_key(j, "contrast_max", s.contrast_max, where);
  read_key(j, "noise_sigma", s.noise_sigma, where);
  read_key(j, "seed", s.seed, where);
  s.validate();
  return s;
}

std::vector<std::string> preset_names() {
  return {"scenario-a", "scenario-b", "scenario-c", "scenario-wide"};
}

ScenarioSpec preset(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  if (name == "scenario-a") {
    // clean, high contrast: the pretraining distribution
    s.seed = 101;
  } else if (name == "scenario-b" || name == "scenario-wide") {
    // mixed scales and defect types, moderate contrast
    s.seam_width = 0.5;
    s.seam_intensity = 0.22;
    s.background = 0.32;
    s.defect_probs = {0.3, 0.25, 0.25, 0.2};
    s.min_defects = 1;
    s.max_defects = 4;
    s.scale_probs = {0.35, 0.4, 0.25};
    s.contrast_min = 0.15;
    s.contrast_max = 0.30;
    s.noise_sigma = 0.035;
    s.seed = 202;
    if (name == "scenario-wide") {
      s.width = 640;
      s.min_defects = 4;
      s.max_defects = 10;
      s.seed = 404;
    }
  } else if (name == "scenario-c") {
    // low contrast, brighter and narrower seam: the unseen distribution
    s.seam_width = 0.38;
    s.seam_intensity = 0.18;
    s.background = 0.45;
    s.defect_probs = {0.25, 0.35, 0.2, 0.2};
    s.min_defects = 1;
    s.max_defects = 4;
    s.scale_probs = {0.4, 0.4, 0.2};
    s.contrast_min = 0.08;
    s.contrast_max = 0.18;
    s.noise_sigma = 0.045;
    s.seed = 303;
  } else {
    std::string valid;
    for (const auto& p : preset_names()) valid += (valid.empty() ? "" : ", ") + p;
    throw ConfigError("unknown preset '" + name + "' (valid presets: " + valid + ")");
  }
  return s;
}

Tensor Sample::image_tensor() const {
  Tensor t(Shape{1, 1, image.height, image.width});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = image.pixels[i] / 255.0;
  return t;
}

Tensor Sample::mask_tensor() const {
  Tensor t(Shape{1, 1, mask.height, mask.width});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = mask.pixels[i] >= 128 ? 1.0 : 0.0;
  return t;
}

Sample generate_sample(const ScenarioSpec& spec, std::uint64_t index) {
  spec.validate();
  auto rng = sample_rng(spec.seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int H = spec.height, W = spec.width;

  SeamGeometry seam;
  seam.horizontal = spec.seam_orientation == "horizontal";
  seam.along = seam.horizontal ? W : H;
  seam.across = seam.horizontal ? H : W;
  seam.half_width = 0.5 * spec.seam_width * seam.across;
  seam.center = 0.5 * seam.across + (unit(rng) - 0.5) * 0.1 * seam.across;
  const double ripple_phase = unit(rng) * 2.0 * std::numbers::pi;
  const double ripple_freq = 2.0 + 2.0 * unit(rng);

  std::vector<double> bg(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double a = seam.horizontal ? x : y;
      const double c = seam.horizontal ? y : x;
      const double d = (c - seam.center) / seam.half_width;
      const double profile = std::exp(-d * d * d * d);
      const double ripple =
          0.03 * std::sin(2.0 * std::numbers::pi * ripple_freq * a / seam.along + ripple_phase);
      bg[static_cast<std::size_t>(y) * W + x] =
          spec.background + spec.seam_intensity * profile + ripple * profile;
    }

  std::uniform_int_distribution<int> count_dist(spec.min_defects, spec.max_defects);
  std::discrete_distribution<int> type_dist(spec.defect_probs.begin(), spec.defect_probs.end());
  std::discrete_distribution<int> scale_dist(spec.scale_probs.begin(), spec.scale_probs.end());
  std::uniform_real_distribution<double> contrast_dist(spec.contrast_min, spec.contrast_max);

  Sample out;
  out.name = sample_name(index);
  std::vector<double> darkening(bg.size(), 0.0);
  std::vector<std::uint8_t> mask(bg.size(), 0);

  const int count = count_dist(rng);
  for (int k = 0; k < count; ++k) {
    const auto type = static_cast<DefectType>(type_dist(rng));
    const auto cls = static_cast<ScaleClass>(scale_dist(rng));
    const double contrast = contrast_dist(rng);
    const AreaRange range = target_range(spec, cls);

    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const double area = range.lo + unit(rng) * (range.hi - range.lo);
      Support s = draw_shape(spec, seam, type, area, rng);
      const std::size_t got = s.area();
      if (s.outside || got == 0 || spec.classify(got) != cls) continue;

      Defect d{type, W, H, -1, -1, got, contrast};
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * W + x;
          if (!s.px[i]) continue;
          d.x0 = std::min(d.x0, x);
          d.y0 = std::min(d.y0, y);
          d.x1 = std::max(d.x1, x);
          d.y1 = std::max(d.y1, y);
          mask[i] = 255;
          darkening[i] = std::max(darkening[i], contrast);
        }
      out.defects.push_back(d);
      placed = true;
    }
    if (!placed)
      throw Error("scenario '" + spec.name + "': a " + to_string(cls) + " " +
                  to_string(type) + " defect cannot fit a " + std::to_string(H) +
                  "x" + std::to_string(W) + " image");
  }

  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  out.image = io::GrayImage{W, H, std::vector<std::uint8_t>(bg.size())};
  out.mask = io::GrayImage{W, H, std::move(mask)};
  for (std::size_t i = 0; i < bg.size(); ++i) {
    double v = bg[i] - darkening[i];
    if (spec.noise_sigma > 0) v += noise(rng);
    v = std::clamp(v, 0.0, 1.0);
    out.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

json defect_json(const Defect& d) {
  return json{{"type", to_string(d.type)},
              {"bbox", {d.x0, d.y0, d.x1, d.y1}},
              {"area", d.area},
              {"contrast", d.contrast}};
}

Manifest generate_dataset(const ScenarioSpec& spec, std::size_t count,
                          const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  if (count > 0) {
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
  }
  json samples = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const Sample s = generate_sample(spec, i);
    const std::string img = "images/" + s.name + ".pgm";
    const std::string msk = "masks/" + s.name + ".pgm";
    io::write_pgm(out_dir / img, s.image);
    io::write_pgm(out_dir / msk, s.mask);
    json defects = json::array();
    for (const Defect& d : s.defects) defects.push_back(defect_json(d));
    samples.push_back(json{{"name", s.name},
                           {"image", img},
                           {"mask", msk},
                           {"width", s.image.width},
                           {"height", s.image.height},
                           {"defects", defects}});
  }
  Manifest m;
  m.count = count;
  m.data = json{{"schema_version", kSchemaVersion},
                {"generator", "wrtsam-synth"},
                {"scenario", to_json(spec)},
                {"seed", spec.seed},
                {"count", count},
                {"samples", samples}};
  std::ofstream f(out_dir / "manifest.json", std::ios::trunc);
  if (!f) throw Error("cannot write manifest in " + out_dir.string());
  f << m.data.dump(2) << "\n";
  if (!f) throw Error("failed writing manifest in " + out_dir.string());
  return m;
}

namespace {

Sample load_pair(const fs::path& dir, const std::string& name,
                 const std::string& img, const std::string& msk) {
  if (!fs::exists(dir / img) || !fs::exists(dir / msk))
    throw Error("dataset pair '" + name + "' is missing " +
                (fs::exists(dir / img) ? (dir / msk).string() : (dir / img).string()));
  Sample s;
  s.name = name;
  s.image = io::read_pgm(dir / img);
  s.mask = io::read_pgm(dir / msk);
  if (s.image.width != s.mask.width || s.image.height != s.mask.height)
    throw Error("dataset pair '" + name + "': image and mask sizes differ");
  return s;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& dir) {
  std::vector<Sample> out;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    json m;
    try {
      std::ifstream f(manifest);
      m = json::parse(f);
      if (m.at("schema_version").get<int>() != kSchemaVersion)
        throw Error("unsupported manifest schema version in " + manifest.string());
      for (const json& e : m.at("samples")) {
        Sample s = load_pair(dir, e.at("name").get<std::string>(),
                             e.at("image").get<std::string>(),
                             e.at("mask").get<std::string>());
        for (const json& d : e.at("defects")) {
          const auto box = d.at("bbox").get<std::array<int, 4>>();
          s.defects.push_back(Defect{parse_type(d.at("type").get<std::string>()),
                                     box[0], box[1], box[2], box[3],
                                     d.at("area").get<std::size_t>(),
                                     d.at("contrast").get<double>()});
        }
        out.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw Error("malformed manifest " + manifest.string() + ": " + e.what());
    }
    return out;
  }

  if (!fs::is_directory(dir / "images") || !fs::is_directory(dir / "masks"))
    throw Error("no manifest.json or images/ + masks/ directories in " + dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir / "images"))
    if (e.is_regular_file() && e.path().extension() == ".pgm") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  for (const fs::path& p : images) {
    const std::string file = p.filename().string();
    out.push_back(load_pair(dir, p.stem().string(), "images/" + file, "masks/" + file));
  }
  return out;
}

}  // namespace wrtsam::synth
