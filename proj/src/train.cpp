#include "wrtsam/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "wrtsam/json_util.hpp"

namespace wrtsam::train {

using model::ModelConfig;
using model::ModelState;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr0 > 0.0)) fail("lr0 must be positive");
  if (lr_min < 0.0 || lr_min > lr0) fail("lr_min must lie in [0, lr0]");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    fail("betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (threshold < 0.0 || threshold > 1.0) fail("threshold must lie in [0,1]");
}

json to_json(const TrainConfig& c) {
  return json{{"lr0", c.lr0},
              {"lr_min", c.lr_min},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"stage", c.stage == model::Stage::adapt ? "adapt" : "pretrain"},
              {"use_fpg", c.use_fpg},
              {"use_mspg", c.use_mspg},
              {"use_adapters", c.use_adapters},
              {"dct_mode", c.dct_mode},
              {"threshold", c.threshold}};
}

TrainConfig train_config_from_json(const json& j) {
  const std::string where = "train";
  require_known_keys(j,
                     {"lr0", "lr_min", "epochs", "batch_size", "weight_decay",
                      "beta1", "beta2", "adam_eps", "seed", "stage", "use_fpg",
                      "use_mspg", "use_adapters", "dct_mode", "threshold"},
                     where);
  TrainConfig c;
  read_key(j, "lr0", c.lr0, where);
  read_key(j, "lr_min", c.lr_min, where);
  read_key(j, "epochs", c.epochs, where);
  read_key(j, "batch_size", c.batch_size, where);
  read_key(j, "weight_decay", c.weight_decay, where);
  read_key(j, "beta1", c.beta1, where);
  read_key(j, "beta2", c.beta2, where);
  read_key(j, "adam_eps", c.adam_eps, where);
  read_key(j, "seed", c.seed, where);
  std::string stage = "pretrain";
  read_key(j, "stage", stage, where);
  if (stage != "pretrain" && stage != "adapt")
    throw ConfigError("train.stage must be 'pretrain' or 'adapt'");
  c.stage = stage == "adapt" ? model::Stage::adapt : model::Stage::pretrain;
  read_key(j, "use_fpg", c.use_fpg, where);
  read_key(j, "use_mspg", c.use_mspg, where);
  read_key(j, "use_adapters", c.use_adapters, where);
  read_key(j, "dct_mode", c.dct_mode, where);
  read_key(j, "threshold", c.threshold, where);
  c.validate();
  return c;
}

void adamw_step(std::span<Parameter* const> params, AdamWState& state, double lr,
                const TrainConfig& cfg) {
  for (const Parameter* p : params)
    if (p->trainable && !p->grad.all_finite())
      throw Error("non-finite gradient for parameter '" + p->id + "'");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto [it, fresh] = state.moments.try_emplace(p->id);
    if (fresh) it->second = {Tensor(p->value.shape()), Tensor(p->value.shape())};
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      double& w = p->value[i];
      w -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w);
    }
  }
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw Error("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                std::to_string(cfg.epochs) + ")");
  if (epoch == 0) return cfg.lr0;
  if (epoch == cfg.epochs - 1) return cfg.lr_min;
  const double phase = std::numbers::pi * epoch / (cfg.epochs - 1);
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(phase));
}

std::vector<int> crop_offsets(int image_width, int crop_width) {
  if (crop_width < 1) throw Error("width_crop: crop width must be positive");
  if (image_width <= crop_width) return {0};
  const int tiles = (image_width + crop_width - 1) / crop_width;
  std::vector<int> offsets;
  for (int i = 0; i + 1 < tiles; ++i) offsets.push_back(i * crop_width);
  offsets.push_back(image_width - crop_width);
  return offsets;
}

std::vector<Tile> width_crop(const Tensor& image, int crop_width) {
  const Shape s = image.shape();
  std::vector<Tile> tiles;
  for (int off : crop_offsets(s.w, crop_width)) {
    Tile t;
    t.offset = off;
    t.width = crop_width;
    t.padded = s.w < crop_width;
    t.image = Tensor(Shape{s.n, s.c, s.h, crop_width});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int x = 0; x < crop_width && off + x < s.w; ++x)
            t.image.at(n, c, y, x) = image.at(n, c, y, off + x);
    tiles.push_back(std::move(t));
  }
  return tiles;
}

Tensor stitch_tiles(const std::vector<Tensor>& tile_maps,
                    const std::vector<int>& offsets, int image_width) {
  if (tile_maps.empty() || tile_maps.size() != offsets.size())
    throw Error("stitch_tiles: tile/offset count mismatch");
  const Shape ts = tile_maps.front().shape();
  Tensor out(Shape{ts.n, ts.c, ts.h, image_width});
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(image_width), 0);
  for (std::size_t k = 0; k < tile_maps.size(); ++k) {
    const Tensor& t = tile_maps[k];
    for (int x = 0; x < t.shape().w && offsets[k] + x < image_width; ++x) {
      const int ox = offsets[k] + x;
      const bool first = !seen[static_cast<std::size_t>(ox)];
      for (int n = 0; n < ts.n; ++n)
        for (int c = 0; c < ts.c; ++c)
          for (int y = 0; y < ts.h; ++y) {
            const double v = t.at(n, c, y, x);
            double& o = out.at(n, c, y, ox);
            o = first ? v : std::max(o, v);
          }
      seen[static_cast<std::size_t>(ox)] = 1;
    }
  }
  return out;
}

Tensor predict_image(const Tensor& image, ModelState& state, const ModelConfig& cfg) {
  const Shape s = image.shape();
  if (s.h != cfg.image_h)
    throw Error("image height " + std::to_string(s.h) + " does not match model height " +
                std::to_string(cfg.image_h));
  if (s.w == cfg.image_w) return model::predict_logits(image, state, cfg);
  const auto tiles = width_crop(image, cfg.image_w);
  std::vector<Tensor> maps;
  std::vector<int> offsets;
  for (const Tile& t : tiles) {
    maps.push_back(model::predict_logits(t.image, state, cfg));
    offsets.push_back(t.offset);
  }
  return stitch_tiles(maps, offsets, s.w);
}

std::vector<TrainingExample> make_examples(const std::vector<synth::Sample>& data,
                                           const ModelConfig& cfg) {
  std::vector<TrainingExample> out;
  for (const synth::Sample& s : data) {
    if (s.image.height != cfg.image_h)
      throw Error("sample '" + s.name + "' height " + std::to_string(s.image.height) +
                  " does not match model height " + std::to_string(cfg.image_h));
    const auto images = width_crop(s.image_tensor(), cfg.image_w);
    const auto masks = width_crop(s.mask_tensor(), cfg.image_w);
    for (std::size_t i = 0; i < images.size(); ++i)
      out.push_back({images[i].image, masks[i].image});
  }
  return out;
}

std::vector<double> fit(ModelState& state, const ModelConfig& cfg,
                        const std::vector<TrainingExample>& data, const TrainConfig& tc,
                        const EpochCallback& on_epoch) {
  tc.validate();
  if (data.empty()) throw Error("training dataset is empty");
  std::vector<Parameter*> params;
  for (auto& [_, p] : state.params)
    if (p.trainable) params.push_back(&p);
  if (params.empty()) throw Error("nothing to train");

  AdamWState opt;
  std::vector<double> losses;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(tc.seed),
                      static_cast<std::uint32_t>(tc.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cosine_lr(epoch, tc);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size();
         start += static_cast<std::size_t>(tc.batch_size), ++batch) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      for (Parameter* p : params) p->zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const TrainingExample& ex = data[order[i]];
        Graph g;
        const Var logits = model::forward(g, g.constant(ex.image), state, cfg);
        const Var prob = ops::activation(g, logits, ops::Activation::sigmoid);
        const Var loss = metrics::iou_loss(g, prob, ex.mask);
        const double value = g.value(loss)[0];
        if (!std::isfinite(value))
          throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                      std::to_string(batch));
        epoch_loss += value;
        g.backward(loss);
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (Parameter* p : params)
        for (double& gv : p->grad.values()) gv *= scale;
      adamw_step(params, opt, lr, tc);
    }
    losses.push_back(epoch_loss / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(epoch, losses.back(), lr);
  }
  return losses;
}

PretrainResult run_pretrain(const ModelConfig& cfg, const std::vector<synth::Sample>& data,
                            const TrainConfig& tc, const EpochCallback& on_epoch) {
  if (data.empty()) throw Error("pretraining dataset is empty");
  ModelConfig backbone = cfg;
  backbone.use_fpg = backbone.use_mspg = backbone.use_adapters = false;
  ModelState state = model::init_model_state(backbone, tc.seed);
  model::set_stage(state, model::Stage::pretrain, backbone);

  PretrainResult out;
  out.epoch_losses = fit(state, backbone, make_examples(data, backbone), tc, on_epoch);
  model::reinit_adaptation(state, cfg, tc.seed);
  model::set_stage(state, model::Stage::pretrain, cfg);
  out.checkpoint = model::Checkpoint{cfg, std::move(state)};
  return out;
}

EvalResult evaluate_predictions(const std::vector<Tensor>& probs,
                                const std::vector<Tensor>& masks, double threshold) {
  if (probs.empty()) throw Error("evaluation dataset is empty");
  if (probs.size() != masks.size()) throw Error("prediction/mask count mismatch");
  metrics::ConfusionCounts pooled;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  double sum_p = 0, sum_r = 0, sum_i = 0;
  std::size_t n_p = 0, n_r = 0, n_i = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const metrics::ConfusionCounts c =
        metrics::confusion(metrics::binarize(probs[k], threshold), masks[k]);
    pooled += c;
    const auto pr = metrics::precision_recall(c);
    const auto iou = metrics::mask_iou(c);
    if (pr.precision.defined) { sum_p += pr.precision.value; ++n_p; }
    if (pr.recall.defined) { sum_r += pr.recall.value; ++n_r; }
    if (iou.defined) { sum_i += iou.value; ++n_i; }
    scores.insert(scores.end(), probs[k].values().begin(), probs[k].values().end());
    for (double m : masks[k].values()) labels.push_back(m >= 0.5 ? 1 : 0);
  }
  EvalResult r;
  r.report = metrics::make_report(pooled, threshold);
  r.report.images = probs.size();
  auto mean = [](double s, std::size_t n) {
    return n ? metrics::Ratio{s / static_cast<double>(n), true} : metrics::Ratio{};
  };
  r.report.macro_precision = mean(sum_p, n_p);
  r.report.macro_recall = mean(sum_r, n_r);
  r.report.macro_iou = mean(sum_i, n_i);
  if (pooled.tp + pooled.fn > 0) {
    r.curve = metrics::pr_curve(scores, labels);
    r.report.auc = metrics::Ratio{metrics::trapezoid_area(r.curve), true};
  }
  return r;
}

EvalResult evaluate(ModelState& state, const ModelConfig& cfg,
                    const std::vector<synth::Sample>& data, double threshold) {
  if (data.empty()) throw Error("evaluation dataset is empty");
  std::vector<Tensor> probs, masks;
  for (const synth::Sample& s : data) {
    Tensor logits = predict_image(s.image_tensor(), state, cfg);
    for (double& v : logits.values()) v = ops::sigmoid(v);
    probs.push_back(std::move(logits));
    masks.push_back(s.mask_tensor());
  }
  return evaluate_predictions(probs, masks, threshold);
}

json to_json(const ExperimentResult& r) {
  json reports = json::object();
  for (const auto& [name, rep] : r.reports) reports[name] = metrics::to_json(rep);
  return json{{"seed", r.seed},
              {"config", r.config},
              {"epoch_losses", r.epoch_losses},
              {"eval", reports}};
}

ModelConfig adapt_model_config(const ModelConfig& base, const TrainConfig& tc) {
  ModelConfig cfg = base;
  cfg.use_fpg = tc.use_fpg;
  cfg.use_mspg = tc.use_mspg;
  cfg.use_adapters = tc.use_adapters;
  cfg.dct_mode = tc.dct_mode;
  cfg.validate();
  return cfg;
}

ExperimentResult run_adapt(const model::Checkpoint& checkpoint,
                           const std::vector<synth::Sample>& adapt_data,
                           const std::vector<EvalSet>& eval_sets, const TrainConfig& tc,
                           const EpochCallback& on_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  tc.validate();
  const ModelConfig cfg = adapt_model_config(checkpoint.config, tc);

  // The backbone of the checkpoint must match what this config would build.
  const ModelState reference = model::init_model_state(cfg, 0);
  for (const auto& [id, p] : reference.params) {
    if (model::group_of(id) != model::ParamGroup::backbone) continue;
    auto it = checkpoint.state.params.find(id);
    if (it == checkpoint.state.params.end() || !(it->second.value.shape() == p.value.shape()))
      throw Error("checkpoint/config mismatch at parameter '" + id + "'");
  }

  ModelState state = checkpoint.state;
  state.stage = model::Stage::adapt;
  model::reinit_adaptation(state, cfg, tc.seed);
  model::set_stage(state, model::Stage::adapt, cfg);
  if (model::trainable_parameters(state).empty()) throw Error("nothing to train");

  const std::uint64_t before = model::backbone_hash(state);
  ExperimentResult r;
  r.seed = tc.seed;
  r.config = json{{"model", model::to_json(cfg)}, {"train", to_json(tc)}};
  r.epoch_losses = fit(state, cfg, make_examples(adapt_data, cfg), tc, on_epoch);
  if (model::backbone_hash(state) != before)
    throw Error("frozen parameters changed during adaptation");
  for (const EvalSet& es : eval_sets)
    r.reports[es.name] = evaluate(state, cfg, es.samples, tc.threshold).report;
  r.adapted = model::Checkpoint{cfg, std::move(state)};
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<AblationRow> ablation_rows() {
  return {
      {"adapter-only", true, false, false, "top1"},
      {"+FPG(top1)", true, true, false, "top1"},
      {"+FPG(bot1)", true, true, false, "bot1"},
      {"+MSPG", true, false, true, "top1"},
      {"full", true, true, true, "top1"},
  };
}

AblationTable run_ablation_suite(const model::Checkpoint& checkpoint,
                                 const std::vector<synth::Sample>& adapt_data,
                                 const std::vector<EvalSet>& eval_sets,
                                 const TrainConfig& base,
                                 const std::vector<std::uint64_t>& seeds) {
  AblationTable t;
  t.rows = ablation_rows();
  t.seeds = seeds;
  for (const AblationRow& row : t.rows) {
    std::vector<ExperimentResult> runs;
    for (std::uint64_t seed : seeds) {
      TrainConfig tc = base;
      tc.stage = model::Stage::adapt;
      tc.seed = seed;
      tc.use_adapters = row.use_adapters;
      tc.use_fpg = row.use_fpg;
      tc.use_mspg = row.use_mspg;
      tc.dct_mode = row.dct_mode;
      ExperimentResult r = run_adapt(checkpoint, adapt_data, eval_sets, tc);
      r.adapted = {};
      runs.push_back(std::move(r));
    }
    t.results.push_back(std::move(runs));
  }
  return t;
}

json to_json(const AblationTable& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const AblationRow& row = t.rows[i];
    json runs = json::array();
    for (const ExperimentResult& r : t.results[i]) {
      json cols = json::object();
      for (const auto& [name, rep] : r.reports)
        cols[name] = json{{"recall", rep.recall.value},
                          {"precision", rep.precision.value},
                          {"auc", rep.auc.value},
                          {"iou", rep.iou.value}};
      runs.push_back(json{{"seed", r.seed}, {"metrics", cols}, {"result", to_json(r)}});
    }
    rows.push_back(json{{"name", row.name},
                        {"use_adapters", row.use_adapters},
                        {"use_fpg", row.use_fpg},
                        {"use_mspg", row.use_mspg},
                        {"dct_mode", row.dct_mode},
                        {"runs", runs}});
  }
  return json{{"seeds", t.seeds}, {"rows", rows}};
}

std::pair<std::vector<synth::Sample>, std::vector<synth::Sample>> split_train_eval(
    const std::vector<synth::Sample>& data, double train_fraction) {
  const auto cut = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(data.size())));
  return {std::vector<synth::Sample>(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<synth::Sample>(data.begin() + static_cast<std::ptrdiff_t>(cut), data.end())};
}

}  // namespace wrtsam::train
