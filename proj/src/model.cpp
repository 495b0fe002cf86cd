#include "wrtsam/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "wrtsam/json_util.hpp"

namespace wrtsam::model {

namespace {

constexpr char kMagic[8] = {'W', 'R', 'T', 'S', 'A', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::string block_id(int i, const char* leaf) {
  return "block" + std::to_string(i) + "." + leaf;
}

std::mt19937_64 param_rng(std::uint64_t seed, const std::string& id) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (char ch : id) words.push_back(static_cast<unsigned char>(ch));
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

enum class Init { zeros, ones, normal };

void add_param(ModelState& st, std::uint64_t seed, const std::string& id,
               Shape shape, Init init, double stddev = 0.0) {
  Tensor t(shape);
  if (init == Init::ones) t.fill(1.0);
  if (init == Init::normal) {
    auto rng = param_rng(seed, id);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.values()) v = dist(rng);
  }
  st.params[id] = Parameter(id, std::move(t));
}

// Weight whose fan-in is `fan_in`; scaled so activations keep unit variance.
void add_weight(ModelState& st, std::uint64_t seed, const std::string& id,
                Shape shape, int fan_in) {
  add_param(st, seed, id, shape, Init::normal, 1.0 / std::sqrt(fan_in));
}

void add_bias(ModelState& st, std::uint64_t seed, const std::string& id, int n) {
  add_param(st, seed, id, Shape{1, 1, 1, n}, Init::zeros);
}

void add_backbone(ModelState& st, const ModelConfig& cfg, std::uint64_t seed) {
  const int s = cfg.stem_stride, ce = cfg.stem_channels, d = cfg.embed_dim;
  add_weight(st, seed, "stem.w", Shape{ce, 1, s, s}, s * s);
  add_bias(st, seed, "stem.b", ce);
  add_weight(st, seed, "embed.w", Shape{1, 1, ce, d}, ce);
  add_bias(st, seed, "embed.b", d);
  add_param(st, seed, "pos", Shape{1, 1, cfg.tokens(), d}, Init::normal, 0.02);
  for (int i = 0; i < cfg.depth; ++i) {
    add_param(st, seed, block_id(i, "ln1.g"), Shape{1, 1, 1, d}, Init::ones);
    add_bias(st, seed, block_id(i, "ln1.b"), d);
    for (const char* w : {"wq", "wk", "wv", "wo"})
      add_weight(st, seed, block_id(i, w), Shape{1, 1, d, d}, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) add_bias(st, seed, block_id(i, b), d);
    add_param(st, seed, block_id(i, "ln2.g"), Shape{1, 1, 1, d}, Init::ones);
    add_bias(st, seed, block_id(i, "ln2.b"), d);
    add_weight(st, seed, block_id(i, "w1"), Shape{1, 1, d, cfg.mlp_dim}, d);
    add_bias(st, seed, block_id(i, "b1"), cfg.mlp_dim);
    add_weight(st, seed, block_id(i, "w2"), Shape{1, 1, cfg.mlp_dim, d}, cfg.mlp_dim);
    add_bias(st, seed, block_id(i, "b2"), d);
  }
  add_param(st, seed, "neck.ln.g", Shape{1, 1, 1, d}, Init::ones);
  add_bias(st, seed, "neck.ln.b", d);
  int cin = d;
  for (std::size_t k = 0; k < cfg.decoder_channels.size(); ++k) {
    const int cout = cfg.decoder_channels[k];
    const std::string id = "decoder.up" + std::to_string(k + 1);
    add_weight(st, seed, id + ".w", Shape{cin, cout, 2, 2}, cin);
    add_bias(st, seed, id + ".b", cout);
    cin = cout;
  }
  add_weight(st, seed, "decoder.dw.w", Shape{cin, 1, 3, 3}, 9);
  add_bias(st, seed, "decoder.dw.b", cin);
  add_weight(st, seed, "decoder.head.w", Shape{1, cin, 1, 1}, cin);
  add_bias(st, seed, "decoder.head.b", 1);
}

void add_adaptation(ModelState& st, const ModelConfig& cfg, std::uint64_t seed) {
  const int d = cfg.embed_dim, da = cfg.adapter_dim;
  add_weight(st, seed, "adapter.down.w", Shape{1, 1, d, da}, d);
  add_bias(st, seed, "adapter.down.b", da);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string id = "adapter.block" + std::to_string(i) + ".up";
    add_param(st, seed, id + ".w", Shape{1, 1, da, d}, Init::zeros);
    add_bias(st, seed, id + ".b", d);
  }

  const prompt::FpgConfig fpg = cfg.fpg_config();
  const int k = fpg.plan.groups();
  add_weight(st, seed, "fpg.fc.w", Shape{fpg.d_mid, k, 1, 1}, k);
  add_bias(st, seed, "fpg.fc.b", fpg.d_mid);
  add_param(st, seed, "fpg.embed.w",
            Shape{fpg.d_p, fpg.d_mid, fpg.conv_kernel, fpg.conv_kernel},
            Init::zeros);
  add_bias(st, seed, "fpg.embed.b", fpg.d_p);

  const int c = cfg.mspg_channels();
  const int dk = cfg.mspg_dconv_kernel;
  add_weight(st, seed, "mspg.dconv.w", Shape{c, 1, dk, dk}, dk * dk);
  add_bias(st, seed, "mspg.dconv.b", c);
  for (int kl : cfg.mspg_branch_kernels) {
    const std::string id = "mspg.branch" + std::to_string(kl);
    add_weight(st, seed, id + ".h.w", Shape{c, 1, 1, kl}, kl);
    add_bias(st, seed, id + ".h.b", c);
    add_weight(st, seed, id + ".v.w", Shape{c, 1, kl, 1}, kl);
    add_bias(st, seed, id + ".v.b", c);
  }
  add_weight(st, seed, "mspg.mix.w", Shape{c, c, 1, 1}, c);
  add_bias(st, seed, "mspg.mix.b", c);
  add_param(st, seed, "mspg.proj.w", Shape{cfg.prompt_dim, c, 1, 1}, Init::zeros);
  add_bias(st, seed, "mspg.proj.b", cfg.prompt_dim);
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    out.insert(out.end(), bytes.rbegin(), bytes.rend());
  } else {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
}

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  template <class T>
  T get() {
    std::array<std::uint8_t, sizeof(T)> b{};
    take(b.data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1)
      std::reverse(b.begin(), b.end());
    return std::bit_cast<T>(b);
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    take(reinterpret_cast<std::uint8_t*>(s.data()), n);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void take(std::uint8_t* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error("checkpoint truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

prompt::FpgConfig ModelConfig::fpg_config() const {
  prompt::FpgConfig f;
  f.plan = dct::parse_plan(dct_mode, stem_stride);
  f.d_mid = fpg_d_mid;
  f.d_p = prompt_dim;
  f.conv_kernel = fpg_conv_kernel;
  f.half_shift = dct::parse_half_shift(dct_half_shift);
  return f;
}

prompt::MspgConfig ModelConfig::mspg_config() const {
  return prompt::MspgConfig{mspg_dconv_kernel, mspg_branch_kernels, mspg_channels()};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (image_h < 1 || image_w < 1) fail("image size must be positive");
  if (stem_stride < 1 || image_h % stem_stride || image_w % stem_stride)
    fail("image size must be divisible by stem_stride");
  if (stem_stride != (1 << decoder_channels.size()))
    fail("stem_stride must equal 2^(number of decoder stages)");
  if (prompt_dim != embed_dim) fail("prompt_dim must equal embed_dim");
  if (heads < 1 || embed_dim % heads) fail("embed_dim must be divisible by heads");
  if (depth < 1 || mlp_dim < 1 || adapter_dim < 1 || fpg_d_mid < 1 ||
      stem_channels < 1)
    fail("layer widths must be positive");
  for (int c : decoder_channels)
    if (c < 1) fail("decoder channels must be positive");
  if (fpg_conv_kernel != 1 && fpg_conv_kernel != 3) fail("fpg_conv_kernel must be 1 or 3");
  if (mspg_dconv_kernel < 1 || mspg_dconv_kernel % 2 == 0)
    fail("mspg_dconv_kernel must be odd");
  for (int k : mspg_branch_kernels)
    if (k < 1 || k % 2 == 0) fail("mspg branch kernels must be odd");
  try {
    fpg_config();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    fail(e.what());
  }
}

json to_json(const ModelConfig& c) {
  return json{{"image_h", c.image_h},
              {"image_w", c.image_w},
              {"stem_stride", c.stem_stride},
              {"stem_channels", c.stem_channels},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"heads", c.heads},
              {"mlp_dim", c.mlp_dim},
              {"adapter_dim", c.adapter_dim},
              {"prompt_dim", c.prompt_dim},
              {"decoder_channels", c.decoder_channels},
              {"fpg_d_mid", c.fpg_d_mid},
              {"fpg_conv_kernel", c.fpg_conv_kernel},
              {"dct_mode", c.dct_mode},
              {"dct_half_shift", c.dct_half_shift},
              {"mspg_dconv_kernel", c.mspg_dconv_kernel},
              {"mspg_branch_kernels", c.mspg_branch_kernels},
              {"mspg_on_raw", c.mspg_on_raw},
              {"use_fpg", c.use_fpg},
              {"use_mspg", c.use_mspg},
              {"use_adapters", c.use_adapters},
              {"adapter_injection", c.adapter_injection},
              {"dense_injection", c.dense_injection},
              {"attention", c.attention}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string where = "model";
  require_known_keys(
      j,
      {"image_h", "image_w", "stem_stride", "stem_channels", "embed_dim",
       "depth", "heads", "mlp_dim", "adapter_dim", "prompt_dim",
       "decoder_channels", "fpg_d_mid", "fpg_conv_kernel", "dct_mode",
       "dct_half_shift", "mspg_dconv_kernel", "mspg_branch_kernels",
       "mspg_on_raw", "use_fpg", "use_mspg", "use_adapters",
       "adapter_injection", "dense_injection", "attention"},
      where);
  ModelConfig c;
  read_key(j, "image_h", c.image_h, where);
  read_key(j, "image_w", c.image_w, where);
  read_key(j, "stem_stride", c.stem_stride, where);
  read_key(j, "stem_channels", c.stem_channels, where);
  read_key(j, "embed_dim", c.embed_dim, where);
  read_key(j, "depth", c.depth, where);
  read_key(j, "heads", c.heads, where);
  read_key(j, "mlp_dim", c.mlp_dim, where);
  read_key(j, "adapter_dim", c.adapter_dim, where);
  read_key(j, "prompt_dim", c.prompt_dim, where);
  read_key(j, "decoder_channels", c.decoder_channels, where);
  read_key(j, "fpg_d_mid", c.fpg_d_mid, where);
  read_key(j, "fpg_conv_kernel", c.fpg_conv_kernel, where);
  read_key(j, "dct_mode", c.dct_mode, where);
  read_key(j, "dct_half_shift", c.dct_half_shift, where);
  read_key(j, "mspg_dconv_kernel", c.mspg_dconv_kernel, where);
  read_key(j, "mspg_branch_kernels", c.mspg_branch_kernels, where);
  read_key(j, "mspg_on_raw", c.mspg_on_raw, where);
  read_key(j, "use_fpg", c.use_fpg, where);
  read_key(j, "use_mspg", c.use_mspg, where);
  read_key(j, "use_adapters", c.use_adapters, where);
  read_key(j, "adapter_injection", c.adapter_injection, where);
  read_key(j, "dense_injection", c.dense_injection, where);
  read_key(j, "attention", c.attention, where);
  c.validate();
  return c;
}

Parameter& ModelState::at(const std::string& id) {
  auto it = params.find(id);
  if (it == params.end()) throw Error("unknown parameter '" + id + "'");
  return it->second;
}

const Parameter& ModelState::at(const std::string& id) const {
  auto it = params.find(id);
  if (it == params.end()) throw Error("unknown parameter '" + id + "'");
  return it->second;
}

std::size_t ModelState::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params) n += p.value.size();
  return n;
}

ParamGroup group_of(const std::string& id) {
  if (id.rfind("adapter.", 0) == 0) return ParamGroup::adapter;
  if (id.rfind("fpg.", 0) == 0) return ParamGroup::fpg;
  if (id.rfind("mspg.", 0) == 0) return ParamGroup::mspg;
  return ParamGroup::backbone;
}

ModelState init_model_state(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState st;
  add_backbone(st, cfg, seed);
  add_adaptation(st, cfg, seed);
  set_stage(st, Stage::pretrain, cfg);
  return st;
}

void reinit_adaptation(ModelState& state, const ModelConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  std::erase_if(state.params, [](const auto& kv) {
    return group_of(kv.first) != ParamGroup::backbone;
  });
  add_adaptation(state, cfg, seed);
  set_stage(state, state.stage, cfg);
}

void set_stage(ModelState& state, Stage stage, const ModelConfig& cfg) {
  state.stage = stage;
  for (auto& [id, p] : state.params) {
    if (stage == Stage::pretrain) {
      p.trainable = true;
      continue;
    }
    switch (group_of(id)) {
      case ParamGroup::backbone: p.trainable = false; break;
      case ParamGroup::adapter: p.trainable = cfg.use_adapters; break;
      case ParamGroup::fpg: p.trainable = cfg.use_fpg; break;
      case ParamGroup::mspg: p.trainable = cfg.use_mspg; break;
    }
  }
}

std::vector<std::string> trainable_parameters(const ModelState& state) {
  std::vector<std::string> ids;
  for (const auto& [id, p] : state.params)
    if (p.trainable) ids.push_back(id);
  return ids;
}

std::size_t adaptation_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim, da = cfg.adapter_dim, dp = cfg.prompt_dim;
  std::size_t n = 0;
  if (cfg.use_adapters) n += d * da + da + cfg.depth * (da * d + d);
  if (cfg.use_fpg) {
    const std::size_t k = cfg.fpg_config().plan.groups();
    const std::size_t dm = cfg.fpg_d_mid, kk = cfg.fpg_conv_kernel;
    n += dm * k + dm + dp * dm * kk * kk + dp;
  }
  if (cfg.use_mspg) {
    const std::size_t c = cfg.mspg_channels(), dk = cfg.mspg_dconv_kernel;
    n += c * dk * dk + c;
    for (int k : cfg.mspg_branch_kernels) n += 2 * (c * k + c);
    n += c * c + c + dp * c + dp;
  }
  return n;
}

Var adapter_hidden(Graph& g, Var prompt_tokens, Var down_w, Var down_b) {
  return ops::activation(g, ops::fully_connected(g, prompt_tokens, down_w, down_b),
                         ops::Activation::gelu);
}

Var adapter_up(Graph& g, Var tokens, Var hidden, Var up_w, Var up_b) {
  return ops::add(g, tokens, ops::fully_connected(g, hidden, up_w, up_b));
}

Var adapter_apply(Graph& g, Var tokens, Var prompt_tokens, Var down_w,
                  Var down_b, Var up_w, Var up_b) {
  if (!(g.value(tokens).shape().h == g.value(prompt_tokens).shape().h))
    throw Error("adapter_apply: token count mismatch");
  return adapter_up(g, tokens, adapter_hidden(g, prompt_tokens, down_w, down_b),
                    up_w, up_b);
}

Var stem_embed(Graph& g, Var image, Var weights, Var bias, int stride) {
  const Shape s = g.value(image).shape();
  if (stride < 1 || s.h % stride != 0 || s.w % stride != 0)
    throw Error("stem_embed: image " + std::to_string(s.h) + "x" +
                std::to_string(s.w) + " not divisible by stride " +
                std::to_string(stride));
  return ops::conv2d(g, image, weights, bias, ops::Conv2dOptions{stride, 0});
}

Var forward(Graph& g, Var image, ModelState& state, const ModelConfig& cfg) {
  const Shape s = g.value(image).shape();
  if (s.n != 1 || s.c != 1 || s.h != cfg.image_h || s.w != cfg.image_w)
    throw Error("forward: expected a [1,1," + std::to_string(cfg.image_h) + "," +
                std::to_string(cfg.image_w) + "] image, got " + s.str());
  auto P = [&](const std::string& id) { return g.parameter(state.at(id)); };
  const int th = cfg.token_h(), tw = cfg.token_w();

  const Var feat = stem_embed(g, image, P("stem.w"), P("stem.b"), cfg.stem_stride);
  const Var emb = ops::fully_connected(g, ops::grid_to_tokens(g, feat),
                                       P("embed.w"), P("embed.b"));
  Var x = ops::add(g, emb, P("pos"));

  std::optional<Var> prompt_grid;
  if (cfg.use_fpg) {
    const prompt::FpgParams fp{P("fpg.fc.w"), P("fpg.fc.b"), P("fpg.embed.w"),
                               P("fpg.embed.b")};
    prompt_grid = prompt::fpg_forward(g, image, cfg.fpg_config(), fp);
  }
  if (cfg.use_mspg) {
    prompt::MspgParams mp;
    mp.dconv_w = P("mspg.dconv.w");
    mp.dconv_b = P("mspg.dconv.b");
    for (int k : cfg.mspg_branch_kernels) {
      const std::string id = "mspg.branch" + std::to_string(k);
      mp.branches.push_back(
          {P(id + ".h.w"), P(id + ".h.b"), P(id + ".v.w"), P(id + ".v.b")});
    }
    mp.mix_w = P("mspg.mix.w");
    mp.mix_b = P("mspg.mix.b");
    const Var src = cfg.mspg_on_raw ? image : feat;
    const Var attended = prompt::mspg_forward(g, src, cfg.mspg_config(), mp);
    const Var p_ms = prompt::mspg_to_prompt(g, attended, P("mspg.proj.w"),
                                            P("mspg.proj.b"), th, tw);
    prompt_grid = prompt_grid ? prompt::sum_prompts(g, *prompt_grid, p_ms) : p_ms;
  }
  std::optional<Var> prompt_tokens;
  if (prompt_grid) prompt_tokens = ops::grid_to_tokens(g, *prompt_grid);

  std::optional<Var> hidden;
  if (cfg.use_adapters) {
    // Adapters read the patch embedding, shifted by the generated prompts.
    Var cond = emb;
    if (prompt_tokens && cfg.adapter_injection) cond = ops::add(g, emb, *prompt_tokens);
    hidden = adapter_hidden(g, cond, P("adapter.down.w"), P("adapter.down.b"));
  }

  for (int i = 0; i < cfg.depth; ++i) {
    try {
      ops::AttentionParams ap;
      ap.ln1_gamma = P(block_id(i, "ln1.g"));
      ap.ln1_beta = P(block_id(i, "ln1.b"));
      ap.wq = P(block_id(i, "wq"));
      ap.bq = P(block_id(i, "bq"));
      ap.wk = P(block_id(i, "wk"));
      ap.bk = P(block_id(i, "bk"));
      ap.wv = P(block_id(i, "wv"));
      ap.bv = P(block_id(i, "bv"));
      ap.wo = P(block_id(i, "wo"));
      ap.bo = P(block_id(i, "bo"));
      ap.ln2_gamma = P(block_id(i, "ln2.g"));
      ap.ln2_beta = P(block_id(i, "ln2.b"));
      ap.w1 = P(block_id(i, "w1"));
      ap.b1 = P(block_id(i, "b1"));
      ap.w2 = P(block_id(i, "w2"));
      ap.b2 = P(block_id(i, "b2"));
      x = ops::attention_block(g, x, ap, cfg.heads, cfg.attention);
      if (hidden) {
        const std::string up = "adapter.block" + std::to_string(i) + ".up";
        x = adapter_up(g, x, *hidden, P(up + ".w"), P(up + ".b"));
      }
    } catch (const Error& e) {
      throw Error("encoder block " + std::to_string(i) + ": " + e.what());
    }
  }

  x = ops::layer_norm(g, x, P("neck.ln.g"), P("neck.ln.b"));
  if (prompt_tokens && cfg.dense_injection) x = ops::add(g, x, *prompt_tokens);

  Var y = ops::tokens_to_grid(g, x, th, tw);
  for (std::size_t k = 0; k < cfg.decoder_channels.size(); ++k) {
    const std::string id = "decoder.up" + std::to_string(k + 1);
    y = ops::activation(g, ops::conv_transpose2d(g, y, P(id + ".w"), P(id + ".b")),
                        ops::Activation::gelu);
  }
  y = ops::activation(
      g, ops::conv2d_depthwise(g, y, P("decoder.dw.w"), P("decoder.dw.b")),
      ops::Activation::gelu);
  return ops::conv2d_pointwise(g, y, P("decoder.head.w"), P("decoder.head.b"));
}

Tensor predict_logits(const Tensor& images, ModelState& state,
                      const ModelConfig& cfg) {
  const Shape s = images.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const auto first = images.storage().begin() + static_cast<std::ptrdiff_t>(plane * n);
    Tensor one(Shape{1, s.c, s.h, s.w},
               std::vector<double>(first, first + static_cast<std::ptrdiff_t>(
                                                      plane * s.c)));
    Graph g(false);
    const Tensor& logits = g.value(forward(g, g.constant(std::move(one)), state, cfg));
    std::copy(logits.values().begin(), logits.values().end(),
              out.data() + plane * n);
  }
  return out;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put(out, kVersion);
  const std::string cfg = to_json(ck.config).dump();
  put(out, static_cast<std::uint64_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  put(out, static_cast<std::uint8_t>(ck.state.stage == Stage::adapt ? 1 : 0));
  put(out, static_cast<std::uint64_t>(ck.state.params.size()));
  for (const auto& [id, p] : ck.state.params) {
    put(out, static_cast<std::uint32_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
    const Shape s = p.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put(out, static_cast<std::int32_t>(d));
    put(out, static_cast<std::uint8_t>(p.trainable ? 1 : 0));
    for (double v : p.value.values()) put(out, v);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw Error(path.string() + " is not a checkpoint");
  if (r.get<std::uint32_t>() != kVersion)
    throw Error("unsupported checkpoint version in " + path.string());
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint64_t>();
  try {
    ck.config = model_config_from_json(json::parse(r.str(cfg_len)));
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint config: " + std::string(e.what()));
  }
  ck.state.stage = r.get<std::uint8_t>() == 1 ? Stage::adapt : Stage::pretrain;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string id = r.str(r.get<std::uint32_t>());
    Shape s;
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    const bool trainable = r.get<std::uint8_t>() == 1;
    std::vector<double> data(s.numel());
    for (double& v : data) v = r.get<double>();
    ck.state.params[id] = Parameter(id, Tensor(s, std::move(data)), trainable);
  }
  if (!r.done()) throw Error("trailing bytes in checkpoint " + path.string());
  return ck;
}

std::uint64_t backbone_hash(const ModelState& state) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [id, p] : state.params) {
    if (group_of(id) != ParamGroup::backbone) continue;
    mix(id.data(), id.size());
    mix(p.value.data(), p.value.size() * sizeof(double));
  }
  return h;
}

}  // namespace wrtsam::model
