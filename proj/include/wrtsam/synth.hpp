#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "wrtsam/image_io.hpp"
#include "wrtsam/tensor.hpp"

namespace wrtsam::synth {

enum class DefectType { pore, crack, slag, lack_of_fusion };
enum class ScaleClass { small, medium, large };

std::string to_string(DefectType t);
std::string to_string(ScaleClass s);

/// Surrogate weld-radiograph distribution.
struct ScenarioSpec {
  std::string name = "custom";
  int height = 64;
  int width = 64;

  std::string seam_orientation = "horizontal";  // or "vertical"
  double seam_width = 0.45;       // fraction of the cross-seam extent
  double seam_intensity = 0.25;   // brightness added at the seam centre
  double background = 0.35;

  // pore, crack, slag, lack_of_fusion
  std::array<double, 4> defect_probs{0.4, 0.2, 0.3, 0.1};
  int min_defects = 1;
  int max_defects = 3;
  // small, medium, large
  std::array<double, 3> scale_probs{0.3, 0.5, 0.2};

  double contrast_min = 0.25;
  double contrast_max = 0.40;
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
  /// Pixel-area bounds of a scale class, scaled by min(H,W)/640 from the
  /// 32^2 / 96^2 object-size convention: small < lo, medium [lo, hi],
  /// large > hi.
  double small_limit() const;
  double large_limit() const;
  ScaleClass classify(std::size_t area) const;
};

nlohmann::json to_json(const ScenarioSpec& s);
ScenarioSpec scenario_from_json(const nlohmann::json& j);

std::vector<std::string> preset_names();
/// "scenario-a" | "scenario-b" | "scenario-c" | "scenario-wide".
ScenarioSpec preset(const std::string& name);

struct Defect {
  DefectType type = DefectType::pore;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
  std::size_t area = 0;
  double contrast = 0.0;
};

struct Sample {
  std::string name;
  io::GrayImage image;
  io::GrayImage mask;  // 0 or 255
  std::vector<Defect> defects;

  /// Image as [1,1,H,W] in [0,1].
  Tensor image_tensor() const;
  /// Mask as [1,1,H,W] in {0,1}.
  Tensor mask_tensor() const;
};

/// Deterministic in (spec, index); streams are seeded per index.
Sample generate_sample(const ScenarioSpec& spec, std::uint64_t index);

struct Manifest {
  nlohmann::json data;
  std::size_t count = 0;
};

/// Writes images/NNNN.pgm, masks/NNNN.pgm and manifest.json under out_dir.
Manifest generate_dataset(const ScenarioSpec& spec, std::size_t count,
                          const std::filesystem::path& out_dir);

/// Loads a generated dataset, or a bare images/ + masks/ directory of
/// same-named PGM pairs (metadata then empty).
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

nlohmann::json defect_json(const Defect& d);

}  // namespace wrtsam::synth
