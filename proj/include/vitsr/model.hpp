#pragma once

// The network: patch embedding with learned 2-D positional embeddings, a
// pre-norm transformer encoder, self-attention decoder blocks with a final
// LayerNorm, and a PixelShuffle upsampling head ending in a 3×3 conv to RGB.
// In residual mode the head output is added onto the (already upsampled)
// input image.
//
// Parameter names (dotted paths) are a public contract: checkpoints and
// external-weight loading match on them. The full list for a config comes
// from param_specs().

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitsr/errors.hpp"
#include "vitsr/image.hpp"
#include "vitsr/ops.hpp"
#include "vitsr/tensor.hpp"

namespace vitsr {

struct ModelConfig {
  int image_size = 256;
  int patch_size = 16;
  int embed_dim = 768;
  int encoder_depth = 12;
  int decoder_depth = 8;
  int num_heads_encoder = 12;
  int num_heads_decoder = 16;
  double mlp_ratio = 4.0;
  int upsample_stages = 4;
  std::vector<int> head_channels{384, 192, 96, 48};
  float leaky_slope = 0.2f;
  bool residual_mode = true;
};

inline int grid_side(const ModelConfig& cfg) { return cfg.image_size / cfg.patch_size; }
inline int token_count(const ModelConfig& cfg) { return grid_side(cfg) * grid_side(cfg); }
inline int mlp_hidden(const ModelConfig& cfg) {
  return static_cast<int>(cfg.embed_dim * cfg.mlp_ratio);
}

inline void validate(const ModelConfig& cfg) {
  if (cfg.image_size <= 0 || cfg.patch_size <= 0 || cfg.embed_dim <= 0)
    throw ConfigError("model dimensions must be positive");
  if (cfg.image_size % cfg.patch_size != 0)
    throw ConfigError("image_size " + std::to_string(cfg.image_size) +
                      " not divisible by patch_size " + std::to_string(cfg.patch_size));
  if ((1 << cfg.upsample_stages) != cfg.patch_size)
    throw ConfigError("upsample_stages " + std::to_string(cfg.upsample_stages) +
                      " must satisfy 2^stages == patch_size so the head restores full "
                      "resolution");
  if (cfg.embed_dim % cfg.num_heads_encoder != 0 || cfg.embed_dim % cfg.num_heads_decoder != 0)
    throw ConfigError("embed_dim must be divisible by both head counts");
  if (static_cast<int>(cfg.head_channels.size()) != cfg.upsample_stages)
    throw ConfigError("head_channels has " + std::to_string(cfg.head_channels.size()) +
                      " entries for " + std::to_string(cfg.upsample_stages) + " stages");
  for (int c : cfg.head_channels)
    if (c <= 0) throw ConfigError("head_channels entries must be positive");
  if (cfg.encoder_depth < 0 || cfg.decoder_depth < 0) throw ConfigError("negative depth");
  if (mlp_hidden(cfg) <= 0) throw ConfigError("mlp_ratio too small");
  if (!(cfg.leaky_slope > 0.0f && cfg.leaky_slope < 1.0f))
    throw ConfigError("leaky_slope must be in (0,1)");
}

// Names every architecture field on which the two configs disagree;
// empty means they describe the same network. residual_mode is a
// forward-pass switch, not an architecture property, so it never appears.
inline std::string arch_diff(const ModelConfig& a, const ModelConfig& b) {
  std::string diff;
  auto note = [&](bool differs, const char* field) {
    if (!differs) return;
    if (!diff.empty()) diff += ", ";
    diff += field;
  };
  note(a.image_size != b.image_size, "image_size");
  note(a.patch_size != b.patch_size, "patch_size");
  note(a.embed_dim != b.embed_dim, "embed_dim");
  note(a.encoder_depth != b.encoder_depth, "encoder_depth");
  note(a.decoder_depth != b.decoder_depth, "decoder_depth");
  note(a.num_heads_encoder != b.num_heads_encoder, "num_heads_encoder");
  note(a.num_heads_decoder != b.num_heads_decoder, "num_heads_decoder");
  note(a.mlp_ratio != b.mlp_ratio, "mlp_ratio");
  note(a.upsample_stages != b.upsample_stages, "upsample_stages");
  note(a.head_channels != b.head_channels, "head_channels");
  note(a.leaky_slope != b.leaky_slope, "leaky_slope");
  return diff;
}

inline bool same_arch(const ModelConfig& a, const ModelConfig& b) {
  return arch_diff(a, b).empty();
}

// ---------------------------------------------------------------------------
// Parameter registry

struct ParamSpec {
  std::string name;
  Shape shape;
};

// Single source of truth for parameter names, shapes, and ordering.
inline std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  validate(cfg);
  const int D = cfg.embed_dim;
  const int P = 3 * cfg.patch_size * cfg.patch_size;
  const int N = token_count(cfg);
  const int Hid = mlp_hidden(cfg);
  std::vector<ParamSpec> specs;
  specs.push_back({"patch_embed.weight", {D, P}});
  specs.push_back({"patch_embed.bias", {D}});
  specs.push_back({"pos_embed", {N, D}});
  auto blocks = [&](const std::string& prefix, int depth) {
    for (int i = 0; i < depth; ++i) {
      const std::string b = prefix + "." + std::to_string(i) + ".";
      specs.push_back({b + "norm1.weight", {D}});
      specs.push_back({b + "norm1.bias", {D}});
      specs.push_back({b + "attn.qkv.weight", {3 * D, D}});
      specs.push_back({b + "attn.qkv.bias", {3 * D}});
      specs.push_back({b + "attn.proj.weight", {D, D}});
      specs.push_back({b + "attn.proj.bias", {D}});
      specs.push_back({b + "norm2.weight", {D}});
      specs.push_back({b + "norm2.bias", {D}});
      specs.push_back({b + "mlp.fc1.weight", {Hid, D}});
      specs.push_back({b + "mlp.fc1.bias", {Hid}});
      specs.push_back({b + "mlp.fc2.weight", {D, Hid}});
      specs.push_back({b + "mlp.fc2.bias", {D}});
    }
  };
  blocks("encoder", cfg.encoder_depth);
  blocks("decoder", cfg.decoder_depth);
  specs.push_back({"norm.weight", {D}});
  specs.push_back({"norm.bias", {D}});
  int c_in = D;
  for (int s = 0; s < cfg.upsample_stages; ++s) {
    const int c_out = cfg.head_channels[static_cast<std::size_t>(s)];
    const std::string b = "head." + std::to_string(s) + ".conv.";
    specs.push_back({b + "weight", {4 * c_out, c_in, 3, 3}});
    specs.push_back({b + "bias", {4 * c_out}});
    c_in = c_out;
  }
  specs.push_back({"head.final.weight", {3, c_in, 3, 3}});
  specs.push_back({"head.final.bias", {3}});
  return specs;
}

inline std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : param_specs(cfg)) n += shape_numel(s.shape);
  return n;
}

template <typename T = float>
struct Model {
  ModelConfig cfg;
  std::vector<std::string> names;
  std::vector<Tensor<T>> params;
  std::unordered_map<std::string, std::size_t> index;

  Tensor<T>& param(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ContractError("unknown parameter " + name);
    return params[it->second];
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ContractError("unknown parameter " + name);
    return params[it->second];
  }
  void set_requires_grad(bool v) {
    for (auto& p : params) p.set_requires_grad(v);
  }
  void zero_grad() {
    for (auto& p : params) p.drop_grad();
  }
};

template <typename T = float>
Model<T> build_model(const ModelConfig& cfg) {
  Model<T> m;
  m.cfg = cfg;
  for (auto& s : param_specs(cfg)) {
    m.index.emplace(s.name, m.params.size());
    m.names.push_back(s.name);
    m.params.emplace_back(s.shape, T(0));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

// Standard normal via Box-Muller from raw 53-bit uniforms, resampled until
// within ±2 — the usual truncated-normal init, deterministic per seed.
template <typename T>
T trunc_normal(std::mt19937_64& rng, T std_dev) {
  for (;;) {
    const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    if (std::abs(z) <= 2.0) return static_cast<T>(z * static_cast<double>(std_dev));
  }
}

}  // namespace detail

// Truncated-normal(0.02) for projection/conv weights and the positional
// embedding; zeros for biases; ones/zeros for norm gains/shifts. The final
// head conv is randomized like every other conv: a freshly initialized model
// must behave like an untrained network, not like the identity map — the
// scratch-baseline comparison depends on it. (Tests that need the exact
// identity zero the final conv explicitly.)
template <typename T>
void init_params(Model<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const std::string& name = m.names[i];
    Tensor<T>& p = m.params[i];
    const bool is_norm = name.find("norm") != std::string::npos;
    const bool is_bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (is_norm) {
      const T fill = is_bias ? T(0) : T(1);
      for (std::size_t j = 0; j < p.numel(); ++j) p.data()[j] = fill;
    } else if (is_bias) {
      for (std::size_t j = 0; j < p.numel(); ++j) p.data()[j] = T(0);
    } else {
      for (std::size_t j = 0; j < p.numel(); ++j)
        p.data()[j] = detail::trunc_normal<T>(rng, T(0.02));
    }
  }
}

// ---------------------------------------------------------------------------
// Forward pieces

namespace detail {

template <typename T>
Tensor<T> transformer_block(Model<T>& m, const std::string& prefix, int heads,
                            const Tensor<T>& tokens) {
  const T eps = static_cast<T>(1e-6);
  Tensor<T> h = layer_norm(tokens, m.param(prefix + "norm1.weight"),
                           m.param(prefix + "norm1.bias"), eps);
  h = multi_head_attention(h, m.param(prefix + "attn.qkv.weight"),
                           m.param(prefix + "attn.qkv.bias"),
                           m.param(prefix + "attn.proj.weight"),
                           m.param(prefix + "attn.proj.bias"), heads);
  Tensor<T> a = add(tokens, h);
  Tensor<T> g = layer_norm(a, m.param(prefix + "norm2.weight"), m.param(prefix + "norm2.bias"),
                           eps);
  g = linear(g, m.param(prefix + "mlp.fc1.weight"), m.param(prefix + "mlp.fc1.bias"));
  g = gelu(g);
  g = linear(g, m.param(prefix + "mlp.fc2.weight"), m.param(prefix + "mlp.fc2.bias"));
  return add(a, g);
}

}  // namespace detail

// img [B,3,S,S] -> tokens [B,N,D]
template <typename T>
Tensor<T> patch_embed(Model<T>& m, const Tensor<T>& img) {
  if (img.ndim() != 4 || img.dim(1) != 3 || img.dim(2) != m.cfg.image_size ||
      img.dim(3) != m.cfg.image_size)
    throw DimensionError("patch_embed: expected [B,3," + std::to_string(m.cfg.image_size) + "," +
                         std::to_string(m.cfg.image_size) + "], got " + shape_str(img.shape()));
  Tensor<T> tok = image_to_patches(img, m.cfg.patch_size);
  tok = linear(tok, m.param("patch_embed.weight"), m.param("patch_embed.bias"));
  return add(tok, m.param("pos_embed"));
}

template <typename T>
Tensor<T> encoder_forward(Model<T>& m, Tensor<T> tokens) {
  for (int i = 0; i < m.cfg.encoder_depth; ++i)
    tokens = detail::transformer_block(m, "encoder." + std::to_string(i) + ".",
                                       m.cfg.num_heads_encoder, tokens);
  return tokens;
}

template <typename T>
Tensor<T> decoder_forward(Model<T>& m, Tensor<T> tokens) {
  for (int i = 0; i < m.cfg.decoder_depth; ++i)
    tokens = detail::transformer_block(m, "decoder." + std::to_string(i) + ".",
                                       m.cfg.num_heads_decoder, tokens);
  return layer_norm(tokens, m.param("norm.weight"), m.param("norm.bias"),
                    static_cast<T>(1e-6));
}

// tokens [B,N,D] -> image [B,3,S,S]
template <typename T>
Tensor<T> upsample_head(Model<T>& m, const Tensor<T>& tokens) {
  const int B = tokens.dim(0);
  const int g = grid_side(m.cfg);
  Tensor<T> y = reshape(permute(tokens, {0, 2, 1}), {B, m.cfg.embed_dim, g, g});
  for (int s = 0; s < m.cfg.upsample_stages; ++s) {
    const std::string b = "head." + std::to_string(s) + ".conv.";
    y = conv2d(y, m.param(b + "weight"), m.param(b + "bias"), 1);
    y = pixel_shuffle(y, 2);
    y = leaky_relu(y, static_cast<T>(m.cfg.leaky_slope));
  }
  return conv2d(y, m.param("head.final.weight"), m.param("head.final.bias"), 1);
}

// Accepts [3,S,S] or [B,3,S,S]; output matches the input rank.
template <typename T>
Tensor<T> model_forward(Model<T>& m, const Tensor<T>& input) {
  const bool batched = input.ndim() == 4;
  if (!batched && input.ndim() != 3)
    throw DimensionError("model_forward: expected [3,S,S] or [B,3,S,S]");
  Tensor<T> x = batched ? input : reshape(input, {1, input.dim(0), input.dim(1), input.dim(2)});
  Tensor<T> tok = patch_embed(m, x);
  tok = encoder_forward(m, tok);
  tok = decoder_forward(m, tok);
  Tensor<T> y = upsample_head(m, tok);
  if (m.cfg.residual_mode) y = add(y, x);
  return batched ? y : reshape(y, {3, input.dim(1), input.dim(2)});
}

// ---------------------------------------------------------------------------
// External weight loading

struct LoadReport {
  int matched = 0;       // copied verbatim (name and shape agree)
  int interpolated = 0;  // pos_embed resampled from a different grid
  std::vector<std::string> skipped;
};

// Copies every name-and-shape match from `weights` into the model. A
// pos_embed whose token count disagrees is bicubically resampled between the
// two square grids when the embedding width matches. Zero applied tensors is
// an error: the file does not belong to this architecture.
template <typename T>
LoadReport load_named_tensors(Model<T>& m,
                              const std::vector<std::pair<std::string, Tensor<float>>>& weights) {
  LoadReport report;
  for (const auto& [name, src] : weights) {
    auto it = m.index.find(name);
    if (it == m.index.end()) {
      report.skipped.push_back(name);
      continue;
    }
    Tensor<T>& dst = m.params[it->second];
    if (same_shape(dst.shape(), src.shape())) {
      for (std::size_t j = 0; j < src.numel(); ++j)
        dst.data()[j] = static_cast<T>(src.data()[j]);
      ++report.matched;
      continue;
    }
    if (name == "pos_embed" && src.ndim() == 2 && dst.ndim() == 2 &&
        src.dim(1) == dst.dim(1)) {
      const int D = src.dim(1);
      const int g_src = static_cast<int>(std::lround(std::sqrt(static_cast<double>(src.dim(0)))));
      const int g_dst = grid_side(m.cfg);
      if (g_src * g_src == src.dim(0) && g_dst * g_dst == dst.dim(0)) {
        // separable bicubic over the token grid, one pass per embedding
        // channel; values are unbounded so no clamping here
        auto tx = detail::resample_taps(g_src, g_dst);
        std::vector<double> mid(static_cast<std::size_t>(g_src) * g_dst);
        for (int d = 0; d < D; ++d) {
          for (int y = 0; y < g_src; ++y)
            for (int x = 0; x < g_dst; ++x) {
              const auto& t = tx[static_cast<std::size_t>(x)];
              double acc = 0;
              for (int k = 0; k < 4; ++k) {
                int sx = std::clamp(t.base - 1 + k, 0, g_src - 1);
                acc += t.w[static_cast<std::size_t>(k)] *
                       static_cast<double>(src.data()[(static_cast<std::size_t>(y) * g_src + sx) * D + d]);
              }
              mid[static_cast<std::size_t>(y) * g_dst + x] = acc;
            }
          for (int y = 0; y < g_dst; ++y)
            for (int x = 0; x < g_dst; ++x) {
              const auto& t = tx[static_cast<std::size_t>(y)];
              double acc = 0;
              for (int k = 0; k < 4; ++k) {
                int sy = std::clamp(t.base - 1 + k, 0, g_src - 1);
                acc += t.w[static_cast<std::size_t>(k)] * mid[static_cast<std::size_t>(sy) * g_dst + x];
              }
              dst.data()[(static_cast<std::size_t>(y) * g_dst + x) * D + d] =
                  static_cast<T>(acc);
            }
        }
        ++report.interpolated;
        continue;
      }
    }
    report.skipped.push_back(name);
  }
  if (report.matched + report.interpolated == 0)
    throw DataError("no tensors matched this model's architecture");
  return report;
}

}  // namespace vitsr
