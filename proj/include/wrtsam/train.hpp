#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wrtsam/metrics.hpp"
#include "wrtsam/model.hpp"
#include "wrtsam/synth.hpp"

namespace wrtsam::train {

using nlohmann::json;

struct TrainConfig {
  double lr0 = 2e-4;
  double lr_min = 1e-7;
  int epochs = 20;
  int batch_size = 4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  model::Stage stage = model::Stage::pretrain;

  // Ablation switches applied to the model for the adapt stage.
  bool use_fpg = true;
  bool use_mspg = true;
  bool use_adapters = true;
  std::string dct_mode = "top1";

  double threshold = 0.5;

  void validate() const;
};

json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

// ---------------------------------------------------------------- optimizer

struct AdamWState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // (m, v)
  std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update with bias correction on every
/// trainable parameter in `params`. Increments `state.step` first, so the
/// first call uses t = 1. Throws on a non-finite gradient, naming the
/// parameter.
void adamw_step(std::span<Parameter* const> params, AdamWState& state, double lr,
                const TrainConfig& cfg);

/// lr_min + (lr0 - lr_min)(1 + cos(pi e / (E - 1))) / 2, exact at both ends.
double cosine_lr(int epoch, const TrainConfig& cfg);

// ------------------------------------------------------------ preprocessing

struct Tile {
  int offset = 0;
  int width = 0;       // tile width (the crop target)
  bool padded = false;
  Tensor image;        // [1,1,H,width]
};

/// Tile offsets covering [0, W_img): ceil(W_img / W_c) tiles of width W_c,
/// the last one right-aligned. An image narrower than W_c gives one tile at
/// offset 0 that is zero-padded on the right.
std::vector<int> crop_offsets(int image_width, int crop_width);
std::vector<Tile> width_crop(const Tensor& image, int crop_width);

/// Recombines per-tile [1,1,H,W_c] maps into [1,1,H,W_img]; overlapping
/// columns take the elementwise maximum.
Tensor stitch_tiles(const std::vector<Tensor>& tile_maps,
                    const std::vector<int>& offsets, int image_width);

/// Full-resolution logits for an image of any width (height must match the
/// model).
Tensor predict_image(const Tensor& image, model::ModelState& state,
                     const model::ModelConfig& cfg);

// ----------------------------------------------------------------- training

struct TrainingExample {
  Tensor image;
  Tensor mask;
};

/// Splits every sample into model-width tiles (masks cropped alike).
std::vector<TrainingExample> make_examples(const std::vector<synth::Sample>& data,
                                           const model::ModelConfig& cfg);

/// Called after every epoch with (epoch, mean loss, learning rate).
using EpochCallback = std::function<void(int, double, double)>;

/// Trains the trainable parameters of `state` on the IoU loss; returns the
/// mean loss of every epoch.
std::vector<double> fit(model::ModelState& state, const model::ModelConfig& cfg,
                        const std::vector<TrainingExample>& data,
                        const TrainConfig& tc, const EpochCallback& on_epoch = {});

struct PretrainResult {
  model::Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

/// Trains the whole backbone (prompt generators and adapters disabled) and
/// returns a checkpoint whose adaptation parameters are freshly initialised.
PretrainResult run_pretrain(const model::ModelConfig& cfg,
                            const std::vector<synth::Sample>& data,
                            const TrainConfig& tc, const EpochCallback& on_epoch = {});

struct EvalResult {
  metrics::MetricsReport report;
  std::vector<metrics::PrPoint> curve;
};

EvalResult evaluate(model::ModelState& state, const model::ModelConfig& cfg,
                    const std::vector<synth::Sample>& data, double threshold);

/// Scores supplied directly as per-pixel probabilities ([1,1,H,W] each).
EvalResult evaluate_predictions(const std::vector<Tensor>& probs,
                                const std::vector<Tensor>& masks, double threshold);

struct EvalSet {
  std::string name;
  std::vector<synth::Sample> samples;
};

struct ExperimentResult {
  std::vector<double> epoch_losses;
  std::map<std::string, metrics::MetricsReport> reports;
  json config;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;  // not serialised
  model::Checkpoint adapted;
};

/// Serialisation without wall-clock time, so reruns compare byte-for-byte.
json to_json(const ExperimentResult& r);

/// Model config of `base` with the ablation switches of `tc` applied.
model::ModelConfig adapt_model_config(const model::ModelConfig& base,
                                      const TrainConfig& tc);

ExperimentResult run_adapt(const model::Checkpoint& checkpoint,
                           const std::vector<synth::Sample>& adapt_data,
                           const std::vector<EvalSet>& eval_sets,
                           const TrainConfig& tc, const EpochCallback& on_epoch = {});

struct AblationRow {
  std::string name;
  bool use_adapters = true;
  bool use_fpg = false;
  bool use_mspg = false;
  std::string dct_mode = "top1";
};

/// adapter-only, +FPG(top1), +FPG(bot1), +MSPG, full.
std::vector<AblationRow> ablation_rows();

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  // results[row][seed index]
  std::vector<std::vector<ExperimentResult>> results;
};

AblationTable run_ablation_suite(const model::Checkpoint& checkpoint,
                                 const std::vector<synth::Sample>& adapt_data,
                                 const std::vector<EvalSet>& eval_sets,
                                 const TrainConfig& base,
                                 const std::vector<std::uint64_t>& seeds);

json to_json(const AblationTable& t);

/// Deterministic 8:2 split by index (first 80% train).
std::pair<std::vector<synth::Sample>, std::vector<synth::Sample>> split_train_eval(
    const std::vector<synth::Sample>& data, double train_fraction = 0.8);

}  // namespace wrtsam::train
