#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "vitsr/losses.hpp"
#include "vitsr/model.hpp"

using vitsr::ModelConfig;
using vitsr::Shape;
using vitsr::Tensor;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.embed_dim = 32;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;
  cfg.num_heads_encoder = 2;
  cfg.num_heads_decoder = 2;
  cfg.mlp_ratio = 2.0;
  cfg.upsample_stages = 3;
  cfg.head_channels = {16, 8, 8};
  return cfg;
}

Tensor<float> random_input(const ModelConfig& cfg, int batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<float> v(static_cast<std::size_t>(batch) * 3 * cfg.image_size * cfg.image_size);
  for (auto& x : v) x = static_cast<float>((rng() >> 11) * 0x1.0p-53);
  return Tensor<float>({batch, 3, cfg.image_size, cfg.image_size}, std::move(v));
}

void zero_param(vitsr::Model<float>& m, const std::string& name) {
  auto& p = m.param(name);
  for (std::size_t i = 0; i < p.numel(); ++i) p.data()[i] = 0.0f;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent geometry") {
  ModelConfig cfg = micro_config();
  vitsr::validate(cfg);  // baseline is fine

  cfg.image_size = 33;
  CHECK_THROWS_AS(vitsr::validate(cfg), vitsr::ConfigError);
  cfg = micro_config();
  cfg.upsample_stages = 2;  // 2^2 != patch 8, and head_channels length disagrees
  CHECK_THROWS_AS(vitsr::validate(cfg), vitsr::ConfigError);
  cfg = micro_config();
  cfg.num_heads_encoder = 5;
  CHECK_THROWS_AS(vitsr::validate(cfg), vitsr::ConfigError);
  cfg = micro_config();
  cfg.head_channels = {16, 8};
  CHECK_THROWS_AS(vitsr::validate(cfg), vitsr::ConfigError);
  cfg = micro_config();
  cfg.encoder_depth = -1;
  CHECK_THROWS_AS(vitsr::validate(cfg), vitsr::ConfigError);
  cfg = micro_config();
  cfg.leaky_slope = 1.0f;
  CHECK_THROWS_AS(vitsr::validate(cfg), vitsr::ConfigError);
}

TEST_CASE("arch_diff names exactly the fields that disagree") {
  ModelConfig a = micro_config();
  ModelConfig b = a;
  CHECK(vitsr::arch_diff(a, b).empty());
  CHECK(vitsr::same_arch(a, b));

  b.decoder_depth = 4;
  CHECK(vitsr::arch_diff(a, b) == "decoder_depth");

  b.embed_dim = 64;
  const std::string d = vitsr::arch_diff(a, b);
  CHECK(d.find("embed_dim") != std::string::npos);
  CHECK(d.find("decoder_depth") != std::string::npos);
  CHECK(d.find("image_size") == std::string::npos);

  // the residual switch changes the forward pass, not the weights
  b = a;
  b.residual_mode = !a.residual_mode;
  CHECK(vitsr::arch_diff(a, b).empty());
}

TEST_CASE("the default architecture has a frozen parameter budget") {
  // Any change to the parameter registry shows up here first.
  CHECK(vitsr::param_count(ModelConfig{}) == 156650835u);
  CHECK(vitsr::param_specs(ModelConfig{}).size() == 255u);
  CHECK(vitsr::param_count(micro_config()) == 66619u);
}

TEST_CASE("every parameter is registered with a unique name") {
  auto specs = vitsr::param_specs(micro_config());
  std::set<std::string> names;
  for (const auto& s : specs) {
    CHECK(names.insert(s.name).second);
    CHECK(vitsr::shape_numel(s.shape) > 0);
  }
  auto m = vitsr::build_model<float>(micro_config());
  CHECK(m.params.size() == specs.size());
  CHECK(m.param("pos_embed").shape() == Shape{16, 32});
  CHECK_THROWS_AS(m.param("not_a_parameter"), vitsr::ContractError);
}

TEST_CASE("initialization is deterministic per seed") {
  auto a = vitsr::build_model<float>(micro_config());
  auto b = vitsr::build_model<float>(micro_config());
  auto c = vitsr::build_model<float>(micro_config());
  vitsr::init_params(a, 42);
  vitsr::init_params(b, 42);
  vitsr::init_params(c, 43);
  bool identical = true, distinct = false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    for (std::size_t j = 0; j < a.params[i].numel(); ++j) {
      identical = identical && a.params[i].data()[j] == b.params[i].data()[j];
      distinct = distinct || a.params[i].data()[j] != c.params[i].data()[j];
    }
  CHECK(identical);
  CHECK(distinct);
}

TEST_CASE("initialization fills weights, biases, and norms by role") {
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 7);
  // truncated normal: nonzero, bounded by 2 sigma
  const auto& w = m.param("patch_embed.weight");
  int nonzero = 0;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(std::abs(w.data()[i]) <= 0.04f);
    if (w.data()[i] != 0.0f) ++nonzero;
  }
  CHECK(nonzero > static_cast<int>(w.numel()) / 2);
  for (std::size_t i = 0; i < m.param("patch_embed.bias").numel(); ++i)
    CHECK(m.param("patch_embed.bias").data()[i] == 0.0f);
  for (std::size_t i = 0; i < m.param("norm.weight").numel(); ++i)
    CHECK(m.param("norm.weight").data()[i] == 1.0f);
  for (std::size_t i = 0; i < m.param("norm.bias").numel(); ++i)
    CHECK(m.param("norm.bias").data()[i] == 0.0f);
}

TEST_CASE("patch embedding produces one token per patch") {
  // 256px image, 16px patches -> 256 tokens of width 768
  ModelConfig cfg;
  cfg.encoder_depth = 0;
  cfg.decoder_depth = 0;
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 1);
  auto x = random_input(cfg, 2, 3);
  auto tok = vitsr::patch_embed(m, x);
  REQUIRE(tok.shape() == Shape{2, 256, 768});
  CHECK_THROWS_AS(vitsr::patch_embed(m, Tensor<float>({2, 3, 128, 128}, 0.0f)),
                  vitsr::DimensionError);
}

TEST_CASE("a zero image through a zero projection leaves the position code") {
  auto cfg = micro_config();
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 5);
  zero_param(m, "patch_embed.weight");
  zero_param(m, "patch_embed.bias");
  Tensor<float> x({1, 3, 32, 32}, 0.0f);
  auto tok = vitsr::patch_embed(m, x);
  const auto& pe = m.param("pos_embed");
  REQUIRE(tok.numel() == pe.numel());
  for (std::size_t i = 0; i < pe.numel(); ++i)
    CHECK(tok.data()[i] == pe.data()[i]);
}

TEST_CASE("a depth-zero encoder passes tokens through unchanged") {
  auto cfg = micro_config();
  cfg.encoder_depth = 0;
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 9);
  auto tok = vitsr::patch_embed(m, random_input(cfg, 1, 2));
  auto out = vitsr::encoder_forward(m, tok);
  REQUIRE(out.shape() == tok.shape());
  for (std::size_t i = 0; i < tok.numel(); ++i)
    CHECK(out.data()[i] == tok.data()[i]);
}

TEST_CASE("a depth-zero decoder is just the final normalization") {
  auto cfg = micro_config();
  cfg.decoder_depth = 0;
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 9);
  auto tok = vitsr::patch_embed(m, random_input(cfg, 1, 2));
  auto out = vitsr::decoder_forward(m, tok);
  auto want = vitsr::layer_norm(tok, m.param("norm.weight"), m.param("norm.bias"), 1e-6f);
  REQUIRE(out.shape() == want.shape());
  for (std::size_t i = 0; i < want.numel(); ++i)
    CHECK(out.data()[i] == want.data()[i]);
}

TEST_CASE("attention spreads a local perturbation to every token") {
  auto cfg = micro_config();
  cfg.encoder_depth = 1;
  cfg.decoder_depth = 0;
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 13);
  auto x = random_input(cfg, 1, 4);
  auto base = vitsr::encoder_forward(m, vitsr::patch_embed(m, x));

  // bump a single pixel (one patch) and compare token-by-token
  auto x2 = x;
  x2.data()[0] += 0.5f;
  auto moved = vitsr::encoder_forward(m, vitsr::patch_embed(m, x2));
  const int N = base.dim(1), D = base.dim(2);
  for (int n = 0; n < N; ++n) {
    double delta = 0;
    for (int d = 0; d < D; ++d)
      delta += std::abs(static_cast<double>(moved.data()[n * D + d]) -
                        static_cast<double>(base.data()[n * D + d]));
    CHECK(delta > 0.0);
  }
}

TEST_CASE("the upsample head restores the input resolution") {
  auto cfg = micro_config();
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 21);
  auto x = random_input(cfg, 2, 5);
  auto y = vitsr::model_forward(m, x);
  REQUIRE(y.shape() == Shape{2, 3, 32, 32});

  // unbatched input keeps its rank
  auto x3 = vitsr::reshape(x, {2 * 3, 32, 32});
  auto single = vitsr::slice_lastdim(vitsr::permute(x3, {1, 2, 0}), 0, 3);
  auto y3 = vitsr::model_forward(m, vitsr::permute(single, {2, 0, 1}));
  REQUIRE(y3.ndim() == 3);
  REQUIRE(y3.shape() == Shape{3, 32, 32});

  CHECK_THROWS_AS(vitsr::model_forward(m, Tensor<float>({2, 3}, 0.0f)),
                  vitsr::DimensionError);
}

TEST_CASE("a zeroed output head makes the residual model an identity") {
  auto cfg = micro_config();
  cfg.residual_mode = true;
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 33);
  zero_param(m, "head.final.weight");
  zero_param(m, "head.final.bias");
  auto x = random_input(cfg, 1, 6);
  auto y = vitsr::model_forward(m, x);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == x.data()[i]);  // x + 0 is exact in floating point
}

TEST_CASE("without the residual path a zeroed head produces a zero image") {
  auto cfg = micro_config();
  cfg.residual_mode = false;
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 33);
  zero_param(m, "head.final.weight");
  zero_param(m, "head.final.bias");
  auto y = vitsr::model_forward(m, random_input(cfg, 1, 6));
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("the training loss reaches every parameter") {
  auto cfg = micro_config();
  auto m = vitsr::build_model<float>(cfg);
  vitsr::init_params(m, 17);
  m.set_requires_grad(true);
  auto x = random_input(cfg, 2, 7);
  auto t = random_input(cfg, 2, 8);
  auto loss = vitsr::composite_loss(vitsr::model_forward(m, x), t, vitsr::LossConfig{});
  vitsr::backward(loss);

  std::size_t total = 0, nonzero = 0;
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    auto g = m.params[i].grad();
    REQUIRE(g.size() == m.params[i].numel());
    bool any = false;
    for (auto v : g) {
      ++total;
      if (v != 0.0f) {
        ++nonzero;
        any = true;
      }
    }
    INFO("parameter " << m.names[i] << " received no gradient");
    CHECK(any);
  }
  // ReLU-style kinks can zero isolated entries; the overwhelming majority
  // must still be live.
  CHECK(static_cast<double>(nonzero) >= 0.99 * static_cast<double>(total));
}

TEST_CASE("checkpoint weights apply by name and report what was skipped") {
  auto src = vitsr::build_model<float>(micro_config());
  vitsr::init_params(src, 3);
  std::vector<std::pair<std::string, Tensor<float>>> weights;
  for (std::size_t i = 0; i < src.params.size(); ++i)
    weights.emplace_back(src.names[i], src.params[i]);
  weights.emplace_back("stray.tensor", Tensor<float>({2}, 0.0f));

  auto dst = vitsr::build_model<float>(micro_config());
  auto report = vitsr::load_named_tensors(dst, weights);
  CHECK(report.matched == static_cast<int>(src.params.size()));
  CHECK(report.interpolated == 0);
  REQUIRE(report.skipped.size() == 1u);
  CHECK(report.skipped[0] == "stray.tensor");
  for (std::size_t i = 0; i < src.params.size(); ++i)
    for (std::size_t j = 0; j < src.params[i].numel(); ++j)
      CHECK(dst.params[i].data()[j] == src.params[i].data()[j]);
}

TEST_CASE("a position code from another grid is resampled, not dropped") {
  auto src_cfg = micro_config();          // 32px, patch 8 -> 4x4 tokens
  auto dst_cfg = micro_config();
  dst_cfg.image_size = 64;                // patch 8 -> 8x8 tokens
  auto src = vitsr::build_model<float>(src_cfg);
  vitsr::init_params(src, 11);
  auto dst = vitsr::build_model<float>(dst_cfg);

  std::vector<std::pair<std::string, Tensor<float>>> weights;
  weights.emplace_back("pos_embed", src.param("pos_embed"));
  auto report = vitsr::load_named_tensors(dst, weights);
  CHECK(report.matched == 0);
  CHECK(report.interpolated == 1);
  // resampling a 2x denser grid preserves overall scale
  const auto& pe = dst.param("pos_embed");
  double mn = 1e9, mx = -1e9;
  for (std::size_t i = 0; i < pe.numel(); ++i) {
    mn = std::min(mn, static_cast<double>(pe.data()[i]));
    mx = std::max(mx, static_cast<double>(pe.data()[i]));
  }
  CHECK(mx > mn);
  CHECK(mx <= 0.08);   // bicubic overshoot stays near the 2-sigma envelope
  CHECK(mn >= -0.08);
}

TEST_CASE("weights from an unrelated network are rejected") {
  auto dst = vitsr::build_model<float>(micro_config());
  std::vector<std::pair<std::string, Tensor<float>>> weights;
  weights.emplace_back("unknown.weight", Tensor<float>({4, 4}, 1.0f));
  CHECK_THROWS_AS(vitsr::load_named_tensors(dst, weights), vitsr::DataError);
}
