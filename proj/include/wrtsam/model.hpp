#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "wrtsam/prompt.hpp"

namespace wrtsam::model {

using json = nlohmann::json;

struct ModelConfig {
  int image_h = 64;
  int image_w = 64;
  int stem_stride = 4;
  int stem_channels = 16;
  int embed_dim = 64;
  int depth = 4;
  int heads = 2;
  int mlp_dim = 128;
  int adapter_dim = 16;
  int prompt_dim = 64;
  std::vector<int> decoder_channels{32, 16};

  int fpg_d_mid = 32;
  int fpg_conv_kernel = 1;
  std::string dct_mode = "top1";
  std::string dct_half_shift = "spatial";

  int mspg_dconv_kernel = 5;
  std::vector<int> mspg_branch_kernels{7, 11, 21};
  bool mspg_on_raw = false;

  bool use_fpg = true;
  bool use_mspg = true;
  bool use_adapters = true;
  /// Prompts condition the per-block adapters.
  bool adapter_injection = true;
  /// Prompts are added to the token features entering the decoder.
  bool dense_injection = true;
  /// false replaces every self-attention sub-layer by the identity.
  bool attention = true;

  int token_h() const { return image_h / stem_stride; }
  int token_w() const { return image_w / stem_stride; }
  int tokens() const { return token_h() * token_w(); }
  int mspg_channels() const { return mspg_on_raw ? 1 : stem_channels; }
  prompt::FpgConfig fpg_config() const;
  prompt::MspgConfig mspg_config() const;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

json to_json(const ModelConfig& cfg);
/// Strict: unknown keys are a ConfigError. Missing keys keep defaults.
ModelConfig model_config_from_json(const json& j);

enum class Stage { pretrain, adapt };

/// Named parameter store. Ids are stable strings such as "block0.wq";
/// adaptation parameters live under the "adapter.", "fpg." and "mspg."
/// prefixes, everything else is backbone.
struct ModelState {
  std::map<std::string, Parameter> params;
  Stage stage = Stage::pretrain;

  Parameter& at(const std::string& id);
  const Parameter& at(const std::string& id) const;
  std::size_t total_size() const;
};

enum class ParamGroup { backbone, adapter, fpg, mspg };
ParamGroup group_of(const std::string& id);

/// Fresh parameters for `cfg`. Each parameter draws from its own stream
/// seeded by (seed, id), so re-initialising a subset is order independent.
ModelState init_model_state(const ModelConfig& cfg, std::uint64_t seed);

/// Replaces every adaptation parameter with a fresh initialisation for `cfg`
/// (shapes may change, e.g. with a different frequency plan) and keeps the
/// backbone untouched.
void reinit_adaptation(ModelState& state, const ModelConfig& cfg,
                       std::uint64_t seed);

/// Sets trainable flags: pretrain -> everything; adapt -> adapters, FPG and
/// MSPG parameters for the enabled flags only.
void set_stage(ModelState& state, Stage stage, const ModelConfig& cfg);

std::vector<std::string> trainable_parameters(const ModelState& state);

/// Number of adaptation scalars implied by `cfg` (adapters + enabled
/// generators + their prompt projections).
std::size_t adaptation_parameter_count(const ModelConfig& cfg);

/// Shared down-projection of the adapter conditioning tokens: GELU(Down(p)).
Var adapter_hidden(Graph& g, Var prompt_tokens, Var down_w, Var down_b);
/// tokens + Up(hidden).
Var adapter_up(Graph& g, Var tokens, Var hidden, Var up_w, Var up_b);
/// tokens + Up(GELU(Down(prompt_tokens))).
Var adapter_apply(Graph& g, Var tokens, Var prompt_tokens, Var down_w,
                  Var down_b, Var up_w, Var up_b);

/// Strided patch-embedding convolution of a [N,1,H,W] image.
Var stem_embed(Graph& g, Var image, Var weights, Var bias, int stride);

/// Per-pixel logits [1,1,H,W] for a single image [1,1,H,W].
Var forward(Graph& g, Var image, ModelState& state, const ModelConfig& cfg);

/// Gradient-free logits for [N,1,H,W] images.
Tensor predict_logits(const Tensor& images, ModelState& state,
                      const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  ModelState state;
};

/// Binary archive: magic, version, config JSON, stage, then per parameter
/// (sorted by id) its id, shape, trainable flag and little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);

/// FNV-1a over the raw bytes of every backbone parameter.
std::uint64_t backbone_hash(const ModelState& state);

}  // namespace wrtsam::model
