#pragma once

// Checkpoint container: a small binary format holding a JSON metadata block
// followed by named float32 tensors.
//
// Layout (all integers little-endian):
//   bytes 0..3   magic "VTSR"
//   u32          format version (currently 1)
//   u64          metadata length in bytes, then that many bytes of UTF-8 JSON
//   u32          tensor count
//   per tensor:  u16 name length, name bytes, u8 dtype (1 = float32),
//                u8 ndim, ndim x u64 dims, then the row-major payload as
//                little-endian float32.
//
// Metadata keys are serialized in sorted order, and floats round-trip through
// shortest-representation printing, so save -> load -> save is byte-identical.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vitsr/data.hpp"
#include "vitsr/errors.hpp"
#include "vitsr/model.hpp"
#include "vitsr/optim.hpp"
#include "vitsr/tensor.hpp"

namespace vitsr {

struct Checkpoint {
  nlohmann::json metadata;
  // Name -> float32 payload with dims; order is preserved on disk.
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  write_bytes(os, buf, sizeof(U));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(std::string("truncated checkpoint while reading ") + what);
}

template <typename U>
U read_le(std::istream& is, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  read_bytes(is, buf, sizeof(U), what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

// float32 <-> little-endian bytes via its bit pattern.
inline void f32_to_le(float f, unsigned char* out) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>(bits >> (8 * i));
}

inline float f32_from_le(const unsigned char* in) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("VTSR", 4);
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  const std::string meta = ck.metadata.dump();
  detail::write_le<std::uint64_t>(os, meta.size());
  detail::write_bytes(os, meta.data(), meta.size());
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.tensors.size()));
  std::vector<unsigned char> payload;
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ContractError("tensor name too long: " + name);
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    detail::write_le<std::uint8_t>(os, kDtypeFloat32);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape().size()));
    for (int d : t.shape()) detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    payload.resize(t.numel() * 4);
    for (std::size_t i = 0; i < t.numel(); ++i) detail::f32_to_le(t.data()[i], payload.data() + 4 * i);
    detail::write_bytes(os, payload.data(), payload.size());
  }
  os.flush();
  if (!os) throw DataError("write failed for checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "VTSR", 4) != 0) throw DataError("not a checkpoint file: " + path);
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = detail::read_le<std::uint64_t>(is, "metadata length");
  std::string meta(meta_len, '\0');
  detail::read_bytes(is, meta.data(), meta_len, "metadata");
  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint metadata: ") + e.what());
  }
  const auto count = detail::read_le<std::uint32_t>(is, "tensor count");
  ck.tensors.reserve(count);
  std::vector<unsigned char> payload;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_le<std::uint16_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    detail::read_bytes(is, name.data(), name_len, "tensor name");
    const auto dtype = detail::read_le<std::uint8_t>(is, "dtype");
    if (dtype != kDtypeFloat32)
      throw DataError("unsupported tensor dtype " + std::to_string(int(dtype)) + " for " + name);
    const auto ndim = detail::read_le<std::uint8_t>(is, "ndim");
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const std::uint64_t raw = detail::read_le<std::uint64_t>(is, "dim");
      if (raw == 0 || raw > std::numeric_limits<int>::max())
        throw DataError("bad dimension " + std::to_string(raw) + " in tensor " + name);
      d = static_cast<int>(raw);
      numel *= static_cast<std::size_t>(raw);
    }
    Tensor<float> t(shape, 0.0f);
    payload.resize(numel * 4);
    detail::read_bytes(is, payload.data(), payload.size(), name.c_str());
    for (std::size_t j = 0; j < numel; ++j) t.data()[j] = detail::f32_from_le(payload.data() + 4 * j);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Config <-> JSON

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return nlohmann::json{{"image_size", m.image_size},
                        {"patch_size", m.patch_size},
                        {"embed_dim", m.embed_dim},
                        {"encoder_depth", m.encoder_depth},
                        {"decoder_depth", m.decoder_depth},
                        {"num_heads_encoder", m.num_heads_encoder},
                        {"num_heads_decoder", m.num_heads_decoder},
                        {"mlp_ratio", m.mlp_ratio},
                        {"upsample_stages", m.upsample_stages},
                        {"head_channels", m.head_channels},
                        {"leaky_slope", m.leaky_slope},
                        {"residual_mode", m.residual_mode}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  try {
    m.image_size = j.at("image_size").get<int>();
    m.patch_size = j.at("patch_size").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();
    m.encoder_depth = j.at("encoder_depth").get<int>();
    m.decoder_depth = j.at("decoder_depth").get<int>();
    m.num_heads_encoder = j.at("num_heads_encoder").get<int>();
    m.num_heads_decoder = j.at("num_heads_decoder").get<int>();
    m.mlp_ratio = j.at("mlp_ratio").get<double>();
    m.upsample_stages = j.at("upsample_stages").get<int>();
    m.head_channels = j.at("head_channels").get<std::vector<int>>();
    m.leaky_slope = j.at("leaky_slope").get<float>();
    m.residual_mode = j.at("residual_mode").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model config in checkpoint: ") + e.what());
  }
  validate(m);
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return nlohmann::json{{"stage", stage_name(t.stage)},
                        {"lr_init", t.lr_init},
                        {"weight_decay", t.weight_decay},
                        {"beta1", t.beta1},
                        {"beta2", t.beta2},
                        {"eps", t.eps},
                        {"batch_size", t.batch_size},
                        {"max_epochs", t.max_epochs},
                        {"patience", t.patience},
                        {"sched_T0", t.sched_T0},
                        {"sched_Tmult", t.sched_Tmult},
                        {"lambda", t.lambda},
                        {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  try {
    t.stage = stage_from_name(j.at("stage").get<std::string>());
    t.lr_init = j.at("lr_init").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.eps = j.at("eps").get<double>();
    t.batch_size = j.at("batch_size").get<int>();
    t.max_epochs = j.at("max_epochs").get<int>();
    t.patience = j.at("patience").get<int>();
    t.sched_T0 = j.at("sched_T0").get<int>();
    t.sched_Tmult = j.at("sched_Tmult").get<int>();
    t.lambda = j.at("lambda").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad train config in checkpoint: ") + e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Model <-> Checkpoint

// Snapshot of model weights plus run bookkeeping. When an optimizer is given,
// its moment buffers ride along as adam_m.<name> / adam_v.<name> tensors so a
// run can be resumed with its full optimizer state.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const TrainConfig& train_cfg, int epoch,
                           double best_val_psnr, AdamW<T>* opt = nullptr) {
  Checkpoint ck;
  ck.metadata["format"] = "vitsr-checkpoint";
  ck.metadata["stage"] = stage_name(train_cfg.stage);
  ck.metadata["epoch"] = epoch;
  // JSON has no infinity; a run that never validated stores null instead.
  if (std::isfinite(best_val_psnr))
    ck.metadata["best_val_psnr"] = best_val_psnr;
  else
    ck.metadata["best_val_psnr"] = nullptr;
  ck.metadata["model"] = model_config_to_json(model.cfg);
  ck.metadata["train"] = train_config_to_json(train_cfg);
  ck.metadata["has_optimizer_state"] = (opt != nullptr);
  auto to_f32 = [](const Tensor<T>& src) {
    Tensor<float> dst(src.shape(), 0.0f);
    for (std::size_t i = 0; i < src.numel(); ++i) dst.data()[i] = static_cast<float>(src.data()[i]);
    return dst;
  };
  for (std::size_t i = 0; i < model.params.size(); ++i)
    ck.tensors.emplace_back(model.names[i], to_f32(model.params[i]));
  if (opt) {
    ck.metadata["optim_step"] = opt->step_count();
    auto moments_to_f32 = [&](const std::vector<T>& buf, const Shape& shape) {
      Tensor<float> dst(shape, 0.0f);
      for (std::size_t i = 0; i < buf.size(); ++i) dst.data()[i] = static_cast<float>(buf[i]);
      return dst;
    };
    for (std::size_t i = 0; i < model.params.size(); ++i)
      ck.tensors.emplace_back("adam_m." + model.names[i],
                              moments_to_f32(opt->first_moments()[i], model.params[i].shape()));
    for (std::size_t i = 0; i < model.params.size(); ++i)
      ck.tensors.emplace_back("adam_v." + model.names[i],
                              moments_to_f32(opt->second_moments()[i], model.params[i].shape()));
  }
  return ck;
}

inline double checkpoint_best_val_psnr(const Checkpoint& ck) {
  const auto it = ck.metadata.find("best_val_psnr");
  if (it == ck.metadata.end() || it->is_null()) return -std::numeric_limits<double>::infinity();
  return it->get<double>();
}

// Rebuilds the exact model a checkpoint was saved from: architecture from the
// metadata, weights copied verbatim.
template <typename T = float>
Model<T> model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.contains("model")) throw DataError("checkpoint has no model config");
  Model<T> model = build_model<T>(model_config_from_json(ck.metadata.at("model")));
  std::vector<std::pair<std::string, Tensor<float>>> weights;
  for (const auto& [name, t] : ck.tensors)
    if (name.rfind("adam_m.", 0) != 0 && name.rfind("adam_v.", 0) != 0) weights.emplace_back(name, t);
  const LoadReport report = load_named_tensors(model, weights);
  const std::size_t applied = static_cast<std::size_t>(report.matched + report.interpolated);
  if (applied != model.params.size())
    throw DataError("checkpoint is missing " + std::to_string(model.params.size() - applied) +
                    " tensors for its own architecture");
  return model;
}

}  // namespace vitsr
