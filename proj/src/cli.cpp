#include "wrtsam/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "wrtsam/gradcheck_catalog.hpp"
#include "wrtsam/graph.hpp"
#include "wrtsam/json_util.hpp"
#include "wrtsam/train.hpp"

namespace wrtsam::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sections of the single config file.
struct FileConfig {
  json model = json::object();
  json train = json::object();
  json scenario = json::object();
};

FileConfig load_config(const std::string& path) {
  FileConfig c;
  if (path.empty()) return c;
  if (!fs::exists(path)) throw Error("missing input: " + path);
  std::ifstream f(path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
  require_known_keys(j, {"model", "train", "scenario"}, "config");
  if (j.contains("model")) c.model = j["model"];
  if (j.contains("train")) c.train = j["train"];
  if (j.contains("scenario")) c.scenario = j["scenario"];
  return c;
}

void require_exists(const std::string& path) {
  if (path.empty() || !fs::exists(path)) throw Error("missing input: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

bool parse_switch(const std::string& v, const char* flag) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw ConfigError(std::string(flag) + " expects on|off, got '" + v + "'");
}

std::string fmt(const metrics::Ratio& r) {
  if (!r.defined) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", r.value);
  return buf;
}

void print_report(std::ostream& out, const std::string& name,
                  const metrics::MetricsReport& r) {
  out << name << ": recall " << fmt(r.recall) << "  precision " << fmt(r.precision)
      << "  auc " << fmt(r.auc) << "  iou " << fmt(r.iou) << "  (" << r.images
      << " images)\n";
}

train::EpochCallback progress(std::ostream& out, bool quiet) {
  if (quiet) return {};
  return [&out](int epoch, double loss, double lr) {
    char line[96];
    std::snprintf(line, sizeof line, "  epoch %3d  loss %.6f  lr %.3e\n", epoch + 1, loss, lr);
    out << line << std::flush;
  };
}

// Options shared by the training-style subcommands.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<int> epochs;
  std::optional<int> width_crop;
  std::string fpg, mspg, adapters, dct_mode;
  bool quiet = false;
};

void add_train_overrides(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON config file (model/train/scenario sections)");
  sub->add_option("--seed", o.seed, "Seed override");
  sub->add_option("--threshold", o.threshold, "Binarisation threshold");
  sub->add_option("--epochs", o.epochs, "Epoch override");
  sub->add_option("--width-crop", o.width_crop, "Crop width (model input width)");
  sub->add_flag("--quiet", o.quiet, "No per-epoch progress");
}

void add_ablation_switches(CLI::App* sub, Overrides& o) {
  sub->add_option("--fpg", o.fpg, "on|off");
  sub->add_option("--mspg", o.mspg, "on|off");
  sub->add_option("--adapters", o.adapters, "on|off");
  sub->add_option("--dct-mode", o.dct_mode, "top1|bot1|topK:k|botK:k");
}

train::TrainConfig train_config(const FileConfig& fc, const Overrides& o,
                                model::Stage stage) {
  train::TrainConfig tc = train::train_config_from_json(fc.train);
  tc.stage = stage;
  if (o.seed) tc.seed = *o.seed;
  if (o.threshold) tc.threshold = *o.threshold;
  if (o.epochs) tc.epochs = *o.epochs;
  if (!o.fpg.empty()) tc.use_fpg = parse_switch(o.fpg, "--fpg");
  if (!o.mspg.empty()) tc.use_mspg = parse_switch(o.mspg, "--mspg");
  if (!o.adapters.empty()) tc.use_adapters = parse_switch(o.adapters, "--adapters");
  if (!o.dct_mode.empty()) tc.dct_mode = o.dct_mode;
  tc.validate();
  return tc;
}

void check_width(const model::ModelConfig& cfg, const Overrides& o) {
  if (o.width_crop && *o.width_crop != cfg.image_w)
    throw ConfigError("--width-crop " + std::to_string(*o.width_crop) +
                      " does not match the checkpoint input width " +
                      std::to_string(cfg.image_w));
}

std::vector<synth::Sample> load_data(const std::string& dir) {
  require_exists(dir);
  return synth::load_dataset(dir);
}

model::Checkpoint load_ck(const std::string& path) {
  require_exists(path);
  return model::load_checkpoint(path);
}

// ------------------------------------------------------------ subcommands

struct SynthArgs {
  std::string config, preset, out;
  std::size_t count = 16;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const FileConfig fc = load_config(a.config);
  synth::ScenarioSpec spec;
  if (!a.preset.empty()) {
    if (!fc.scenario.empty())
      throw ConfigError("give either --preset or a scenario section, not both");
    spec = synth::preset(a.preset);
  } else {
    spec = synth::scenario_from_json(fc.scenario);
  }
  if (a.seed) spec.seed = *a.seed;
  const synth::Manifest m = synth::generate_dataset(spec, a.count, a.out);
  std::size_t defects = 0;
  for (const auto& s : m.data["samples"]) defects += s["defects"].size();
  out << "scenario " << spec.name << " seed " << spec.seed << ": " << m.count
      << " samples, " << defects << " defects -> " << a.out << "\n";
  return kOk;
}

struct PretrainArgs {
  Overrides o;
  std::string data, out;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  const FileConfig fc = load_config(a.o.config);
  model::ModelConfig cfg = model::model_config_from_json(fc.model);
  if (a.o.width_crop) cfg.image_w = *a.o.width_crop;
  cfg.validate();
  const train::TrainConfig tc = train_config(fc, a.o, model::Stage::pretrain);
  const auto data = load_data(a.data);
  const auto t0 = std::chrono::steady_clock::now();
  const train::PretrainResult r = train::run_pretrain(cfg, data, tc, progress(out, a.o.quiet));
  fs::create_directories(a.out);
  model::save_checkpoint(fs::path(a.out) / "checkpoint.bin", r.checkpoint);
  const json report{{"model", model::to_json(cfg)},
                    {"train", train::to_json(tc)},
                    {"samples", data.size()},
                    {"epoch_losses", r.epoch_losses}};
  write_text(fs::path(a.out) / "pretrain.json", report.dump(2) + "\n");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "pretrained " << tc.epochs << " epochs on " << data.size()
      << " samples, final loss " << r.epoch_losses.back() << " (" << secs << " s)\n";
  return kOk;
}

struct AdaptArgs {
  Overrides o;
  std::string checkpoint, data, zero_shot, out;
};

std::vector<train::EvalSet> eval_sets(const std::vector<synth::Sample>& held_out,
                                      const std::string& zero_shot) {
  std::vector<train::EvalSet> sets;
  if (!held_out.empty()) sets.push_back({"in_distribution", held_out});
  if (!zero_shot.empty()) sets.push_back({"zero_shot", load_data(zero_shot)});
  return sets;
}

int cmd_adapt(const AdaptArgs& a, std::ostream& out) {
  const FileConfig fc = load_config(a.o.config);
  if (!fc.model.empty()) throw ConfigError("adapt takes the model config from the checkpoint");
  const model::Checkpoint ck = load_ck(a.checkpoint);
  check_width(ck.config, a.o);
  const train::TrainConfig tc = train_config(fc, a.o, model::Stage::adapt);
  const auto [train_set, held_out] = train::split_train_eval(load_data(a.data));
  if (train_set.empty()) throw Error("adaptation split is empty");
  const train::ExperimentResult r =
      train::run_adapt(ck, train_set, eval_sets(held_out, a.zero_shot), tc,
                        progress(out, a.o.quiet));
  fs::create_directories(a.out);
  model::save_checkpoint(fs::path(a.out) / "adapted.bin", r.adapted);
  write_text(fs::path(a.out) / "result.json", train::to_json(r).dump(2) + "\n");
  out << "adapted " << tc.epochs << " epochs on " << train_set.size()
      << " samples, final loss " << r.epoch_losses.back() << " (" << r.wall_clock_seconds
      << " s)\n";
  for (const auto& [name, rep] : r.reports) print_report(out, name, rep);
  return kOk;
}

struct EvalArgs {
  Overrides o;
  std::string checkpoint, data, predictions, out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto data = load_data(a.data);
  const double thr = a.o.threshold.value_or(0.5);
  train::EvalResult r;
  if (!a.predictions.empty()) {
    require_exists(a.predictions);
    std::vector<Tensor> probs, masks;
    for (const synth::Sample& s : data) {
      fs::path p = fs::path(a.predictions) / (s.name + ".pgm");
      if (!fs::exists(p)) p = fs::path(a.predictions) / "masks" / (s.name + ".pgm");
      if (!fs::exists(p)) throw Error("missing input: prediction for " + s.name);
      const io::GrayImage img = io::read_pgm(p);
      if (img.width != s.image.width || img.height != s.image.height)
        throw Error("prediction " + p.string() + " has the wrong size");
      Tensor t(Shape{1, 1, img.height, img.width});
      for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
      probs.push_back(std::move(t));
      masks.push_back(s.mask_tensor());
    }
    r = train::evaluate_predictions(probs, masks, thr);
  } else {
    model::Checkpoint ck = load_ck(a.checkpoint);
    check_width(ck.config, a.o);
    r = train::evaluate(ck.state, ck.config, data, thr);
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "metrics.json", metrics::to_json(r.report).dump(2) + "\n");
  write_text(fs::path(a.out) / "pr_curve.csv", metrics::pr_curve_csv(r.curve));
  print_report(out, "eval", r.report);
  return kOk;
}

struct AblateArgs {
  Overrides o;
  std::string checkpoint, data, zero_shot, out;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const FileConfig fc = load_config(a.o.config);
  if (!fc.model.empty()) throw ConfigError("ablate takes the model config from the checkpoint");
  const model::Checkpoint ck = load_ck(a.checkpoint);
  check_width(ck.config, a.o);
  const train::TrainConfig tc = train_config(fc, a.o, model::Stage::adapt);
  const auto [train_set, held_out] = train::split_train_eval(load_data(a.data));
  if (train_set.empty()) throw Error("adaptation split is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const train::AblationTable t = train::run_ablation_suite(
      ck, train_set, eval_sets(held_out, a.zero_shot), tc, a.seeds);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "ablation.json", train::to_json(t).dump(2) + "\n");
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (const auto& r : t.results[i])
      for (const auto& [name, rep] : r.reports)
        print_report(out, t.rows[i].name + " seed " + std::to_string(r.seed) + " " + name, rep);
  out << "ablation finished in "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
      << " s\n";
  return kOk;
}

struct PredictArgs {
  Overrides o;
  std::string checkpoint, input, out;
  bool save_prob = false;
};

io::GrayImage to_gray(const Tensor& t, bool binary, double thr) {
  io::GrayImage img;
  img.height = t.shape().h;
  img.width = t.shape().w;
  img.pixels.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    img.pixels[i] = binary ? (t[i] >= thr ? 255 : 0)
                           : static_cast<std::uint8_t>(std::lround(255.0 * t[i]));
  return img;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  require_exists(a.input);
  model::Checkpoint ck = load_ck(a.checkpoint);
  check_width(ck.config, a.o);
  const double thr = a.o.threshold.value_or(0.5);

  // (input file, path relative to the output root)
  std::vector<std::pair<fs::path, fs::path>> jobs;
  fs::path scan_root = a.input;
  if (fs::is_directory(a.input)) {
    if (fs::is_directory(fs::path(a.input) / "images")) scan_root = fs::path(a.input) / "images";
    for (const auto& e : fs::recursive_directory_iterator(scan_root))
      if (e.is_regular_file() && e.path().extension() == ".pgm")
        jobs.emplace_back(e.path(), fs::relative(e.path(), scan_root));
    std::sort(jobs.begin(), jobs.end());
  } else {
    jobs.emplace_back(a.input, fs::path(a.input).filename());
  }
  if (jobs.empty()) throw Error("no .pgm images under " + a.input);

  json per_image = json::object();
  for (const auto& [src, rel] : jobs) {
    const io::GrayImage img = io::read_pgm(src);
    Tensor x(Shape{1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) x[i] = img.pixels[i] / 255.0;
    Tensor prob = train::predict_image(x, ck.state, ck.config);
    for (double& v : prob.values()) v = ops::sigmoid(v);
    io::write_pgm((fs::create_directories((fs::path(a.out) / rel).parent_path()),
                   fs::path(a.out) / rel),
                  to_gray(prob, true, thr));
    if (a.save_prob) {
      fs::path p = fs::path(a.out) / rel;
      p.replace_filename(p.stem().string() + "_prob.pgm");
      io::write_pgm(p, to_gray(prob, false, thr));
    }
    // Ground truth next to an images/ directory.
    const fs::path gt = src.parent_path().parent_path() / "masks" / src.filename();
    if (src.parent_path().filename() == "images" && fs::exists(gt)) {
      const io::GrayImage m = io::read_pgm(gt);
      Tensor mt(Shape{1, 1, m.height, m.width});
      for (std::size_t i = 0; i < m.pixels.size(); ++i) mt[i] = m.pixels[i] >= 128 ? 1.0 : 0.0;
      const auto rep = train::evaluate_predictions({prob}, {mt}, thr).report;
      per_image[rel.generic_string()] = metrics::to_json(rep);
    }
  }
  if (!per_image.empty())
    write_text(fs::path(a.out) / "metrics.json", per_image.dump(2) + "\n");
  out << "wrote " << jobs.size() << " mask(s) to " << a.out << "\n";
  return kOk;
}

struct GradcheckArgs {
  double tolerance = 1e-4;
  std::string corrupt, out;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!a.corrupt.empty()) Graph::corrupt_backward(a.corrupt);
  std::vector<catalog::Row> rows;
  try {
    rows = catalog::run_gradcheck(a.tolerance);
  } catch (...) {
    Graph::clear_corruption();
    throw;
  }
  Graph::clear_corruption();
  bool all = true;
  json report = json::array();
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %-4s max_rel_error %.3e  (%zu elements)\n",
                  r.name.c_str(), r.pass ? "PASS" : "FAIL", r.result.max_rel_error,
                  r.result.checked);
    out << line;
    all = all && r.pass;
    report.push_back(json{{"name", r.name},
                          {"pass", r.pass},
                          {"max_rel_error", r.result.max_rel_error},
                          {"worst", r.result.worst},
                          {"checked", r.result.checked}});
  }
  if (!a.out.empty())
    write_text(fs::path(a.out) / "gradcheck.json",
               json{{"tolerance", a.tolerance}, {"rows", report}}.dump(2) + "\n");
  return all ? kOk : kRuntime;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weld radiograph segmentation with frozen-backbone prompt adaptation"};
  app.require_subcommand(1);

  SynthArgs synth_a;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic weld dataset");
  synth->add_option("--config", synth_a.config, "JSON config with a scenario section");
  synth->add_option("--preset", synth_a.preset, "scenario-a|scenario-b|scenario-c|scenario-wide");
  synth->add_option("--count", synth_a.count, "Number of samples");
  synth->add_option("--seed", synth_a.seed, "Seed override");
  synth->add_option("--out", synth_a.out, "Output directory")->required();

  PretrainArgs pre_a;
  auto* pre = app.add_subcommand("pretrain", "Train the foundation backbone");
  add_train_overrides(pre, pre_a.o);
  pre->add_option("--data", pre_a.data, "Dataset directory")->required();
  pre->add_option("--out", pre_a.out, "Output directory")->required();

  AdaptArgs ad_a;
  auto* ad = app.add_subcommand("adapt", "Adapt a frozen checkpoint (8:2 split of --data)");
  add_train_overrides(ad, ad_a.o);
  add_ablation_switches(ad, ad_a.o);
  ad->add_option("--checkpoint", ad_a.checkpoint, "Pretrained checkpoint")->required();
  ad->add_option("--data", ad_a.data, "Adaptation dataset directory")->required();
  ad->add_option("--zero-shot", ad_a.zero_shot, "Extra evaluation dataset");
  ad->add_option("--out", ad_a.out, "Output directory")->required();

  EvalArgs ev_a;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or stored predictions");
  ev->add_option("--checkpoint", ev_a.checkpoint, "Checkpoint");
  ev->add_option("--predictions", ev_a.predictions,
                 "Directory of probability maps named like the samples");
  ev->add_option("--data", ev_a.data, "Dataset directory")->required();
  ev->add_option("--threshold", ev_a.o.threshold, "Binarisation threshold");
  ev->add_option("--width-crop", ev_a.o.width_crop, "Crop width (must match checkpoint)");
  ev->add_option("--out", ev_a.out, "Output directory")->required();

  AblateArgs ab_a;
  auto* ab = app.add_subcommand("ablate", "Five-row ablation over seeds");
  add_train_overrides(ab, ab_a.o);
  ab->add_option("--checkpoint", ab_a.checkpoint, "Pretrained checkpoint")->required();
  ab->add_option("--data", ab_a.data, "Adaptation dataset directory")->required();
  ab->add_option("--zero-shot", ab_a.zero_shot, "Zero-shot evaluation dataset");
  ab->add_option("--seeds", ab_a.seeds, "Adaptation seeds")->delimiter(',');
  ab->add_option("--out", ab_a.out, "Output directory")->required();

  PredictArgs pr_a;
  auto* pr = app.add_subcommand("predict", "Write binary masks for images");
  pr->add_option("--checkpoint", pr_a.checkpoint, "Checkpoint")->required();
  pr->add_option("--input", pr_a.input, "Image file or directory")->required();
  pr->add_option("--out", pr_a.out, "Output directory")->required();
  pr->add_option("--threshold", pr_a.o.threshold, "Binarisation threshold");
  pr->add_option("--width-crop", pr_a.o.width_crop, "Crop width (must match checkpoint)");
  pr->add_flag("--save-prob", pr_a.save_prob, "Also write probability maps");

  GradcheckArgs gc_a;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  gc->add_option("--tolerance", gc_a.tolerance, "Maximum relative error");
  gc->add_option("--out", gc_a.out, "Optional output directory for gradcheck.json");
  gc->add_option("--corrupt", gc_a.corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_a, out);
    if (*pre) return cmd_pretrain(pre_a, out);
    if (*ad) return cmd_adapt(ad_a, out);
    if (*ev) {
      if (ev_a.checkpoint.empty() == ev_a.predictions.empty())
        throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
      return cmd_eval(ev_a, out);
    }
    if (*ab) return cmd_ablate(ab_a, out);
    if (*pr) return cmd_predict(pr_a, out);
    if (*gc) return cmd_gradcheck(gc_a, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace wrtsam::cli
