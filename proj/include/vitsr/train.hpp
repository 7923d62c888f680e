#pragma once

// Training loop: one stage = seeded shuffled batches under the composite
// L1/SSIM loss, AdamW updates on a cosine warm-restart schedule, per-epoch
// validation on center crops, CSV logging, best/last checkpoints, and
// strict-improvement early stopping.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "vitsr/checkpoint.hpp"
#include "vitsr/data.hpp"
#include "vitsr/errors.hpp"
#include "vitsr/image.hpp"
#include "vitsr/losses.hpp"
#include "vitsr/model.hpp"
#include "vitsr/ops.hpp"
#include "vitsr/optim.hpp"

namespace vitsr {

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
  int n_images = 0;
};

struct RunOptions {
  std::string run_dir;
  bool write_samples = true;
  int sample_count = 4;
  // Injectable time source (seconds, monotonic). Tests substitute a fake
  // clock so the CSV log is byte-reproducible; the default reads the real
  // one.
  std::function<double()> clock;
  std::ostream* log = nullptr;  // optional progress lines
};

struct RunResult {
  int epochs_run = 0;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  bool stopped_early = false;
  std::string csv_path;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

namespace detail {

inline double wall_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <typename T>
Tensor<T> cast_tensor(const Tensor<float>& src) {
  if constexpr (std::is_same_v<T, float>) {
    return src;
  } else {
    Tensor<T> dst(src.shape(), T(0));
    for (std::size_t i = 0; i < src.numel(); ++i) dst.data()[i] = static_cast<T>(src.data()[i]);
    return dst;
  }
}

template <typename T>
Image forward_to_image(Model<T>& model, const Image& input) {
  NoGradGuard no_grad;
  Tensor<T> x = cast_tensor<T>(image_to_tensor(input));
  Tensor<T> y = model_forward(model, x);
  Tensor<float> yf(y.shape(), 0.0f);
  for (std::size_t i = 0; i < y.numel(); ++i) yf.data()[i] = static_cast<float>(y.data()[i]);
  return tensor_to_image(yf);  // clamps to [0,1]
}

}  // namespace detail

// Mean per-image PSNR/SSIM of the model over deterministic center crops.
// Outputs are clamped to [0,1] before scoring, like any image leaving the
// pipeline.
template <typename T>
EvalResult evaluate(Model<T>& model, const std::vector<ManifestEntry>& val_set,
                    const DatasetSpec& spec, Stage stage) {
  if (val_set.empty()) throw DataError("validation set is empty");
  if (spec.crop_size != model.cfg.image_size)
    throw ConfigError("crop_size " + std::to_string(spec.crop_size) +
                      " does not match model image_size " + std::to_string(model.cfg.image_size));
  EvalResult r;
  for (const auto& entry : val_set) {
    const TrainPair pair = validation_pair(entry, spec, stage);
    const Image out = detail::forward_to_image(model, pair.input);
    r.psnr += psnr(out, pair.target);
    r.ssim += ssim(out, pair.target);
    ++r.n_images;
  }
  r.psnr /= r.n_images;
  r.ssim /= r.n_images;
  return r;
}

// Runs one full training stage. Batch order and crops are a pure function of
// (cfg.seed, epoch); with an injected clock the CSV log is byte-identical
// across same-seed runs. The CSV gains one row per *completed* epoch,
// numbered from 1.
template <typename T>
RunResult run_stage(Model<T>& model, const std::vector<ManifestEntry>& train_set,
                    const std::vector<ManifestEntry>& val_set, const DatasetSpec& data_spec,
                    const TrainConfig& cfg, const RunOptions& opts) {
  validate(cfg);
  validate(data_spec);
  if (opts.run_dir.empty()) throw ConfigError("run_dir must be set");
  if (data_spec.crop_size != model.cfg.image_size)
    throw ConfigError("crop_size " + std::to_string(data_spec.crop_size) +
                      " does not match model image_size " + std::to_string(model.cfg.image_size));
  if (static_cast<int>(train_set.size()) < cfg.batch_size)
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds training set of " +
                      std::to_string(train_set.size()));
  if (val_set.empty()) throw DataError("validation set is empty");

  // The run seed governs shuffling and crop positions.
  DatasetSpec spec = data_spec;
  spec.seed = cfg.seed;

  namespace fs = std::filesystem;
  fs::create_directories(opts.run_dir);
  if (opts.write_samples) fs::create_directories(fs::path(opts.run_dir) / "samples");

  RunResult result;
  result.csv_path = (fs::path(opts.run_dir) / "train_log.csv").string();
  result.best_checkpoint = (fs::path(opts.run_dir) / "best.ckpt").string();
  result.last_checkpoint = (fs::path(opts.run_dir) / "last.ckpt").string();

  std::ofstream csv(result.csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw DataError("cannot write " + result.csv_path);
  csv << "epoch,train_loss,val_psnr,val_ssim,lr,seconds\n";
  csv.flush();

  const std::function<double()> clock = opts.clock ? opts.clock : detail::wall_seconds;
  const double t0 = clock();

  model.set_requires_grad(true);
  AdamW<T> opt(model.params);
  EarlyStopper stopper(cfg.patience);
  const LossConfig loss_cfg{cfg.lambda, 11, 1.5};

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cosine_warm_restart_lr(epoch - 1, cfg.lr_init, cfg.sched_T0, cfg.sched_Tmult);

    BatchIterator batches(train_set, spec, cfg.stage, cfg.batch_size, epoch);
    double loss_sum = 0.0;
    int batch_index = 0;
    Batch batch;
    while (batches.next(batch)) {
      model.zero_grad();
      Tensor<T> input = detail::cast_tensor<T>(batch.input);
      Tensor<T> target = detail::cast_tensor<T>(batch.target);
      Tensor<T> pred = model_forward(model, input);
      Tensor<T> loss = composite_loss(pred, target, loss_cfg);
      const double loss_val = static_cast<double>(loss.item());
      if (!std::isfinite(loss_val))
        throw NumericError("training loss is not finite at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + ", lr " + std::to_string(lr));
      backward(loss);
      opt.step(model.params, lr, cfg);
      loss_sum += loss_val;
      ++batch_index;
    }
    const double train_loss = loss_sum / batch_index;

    // Validation pass doubles as the sample writer: the first few center
    // crops are re-rendered and overwritten every epoch.
    EvalResult val;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      const TrainPair pair = validation_pair(val_set[i], spec, cfg.stage);
      const Image out = detail::forward_to_image(model, pair.input);
      val.psnr += psnr(out, pair.target);
      val.ssim += ssim(out, pair.target);
      ++val.n_images;
      if (opts.write_samples && static_cast<int>(i) < opts.sample_count) {
        const fs::path p = fs::path(opts.run_dir) / "samples" / ("sample_" + std::to_string(i) + ".png");
        save_png(p.string(), out);
      }
    }
    val.psnr /= val.n_images;
    val.ssim /= val.n_images;

    const double seconds = clock() - t0;
    char row[256];
    std::snprintf(row, sizeof(row), "%d,%.8f,%.6f,%.6f,%.10g,%.3f\n", epoch, train_loss, val.psnr,
                  val.ssim, lr, seconds);
    csv << row;
    csv.flush();

    result.epochs_run = epoch;
    const EarlyStopper::Decision d = stopper.update(val.psnr);
    if (d.improved) {
      result.best_val_psnr = val.psnr;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, make_checkpoint(model, cfg, epoch, stopper.best()));
    }
    if (opts.log) {
      (*opts.log) << "epoch " << epoch << "/" << cfg.max_epochs << "  train_loss=" << train_loss
                  << "  val_psnr=" << val.psnr << "  val_ssim=" << val.ssim << "  lr=" << lr
                  << (d.improved ? "  (best)" : "") << "\n";
      opts.log->flush();
    }
    if (d.stop) {
      result.stopped_early = true;
      if (opts.log) (*opts.log) << "early stop: no improvement for " << cfg.patience << " epochs\n";
      break;
    }
  }

  save_checkpoint(result.last_checkpoint,
                  make_checkpoint(model, cfg, result.epochs_run, stopper.best(), &opt));
  return result;
}

// Copies every compatible tensor from a checkpoint into `dst` (the warm-start
// path between stages). Architectures must agree aside from the residual
// switch; optimizer state never transfers. Returns how many tensors landed.
template <typename T>
std::size_t transfer_weights(Model<T>& dst, const Checkpoint& ck) {
  if (!ck.metadata.contains("model")) throw DataError("checkpoint has no model config");
  const ModelConfig src_cfg = model_config_from_json(ck.metadata.at("model"));
  const std::string diff = arch_diff(src_cfg, dst.cfg);
  if (!diff.empty())
    throw ConfigError("checkpoint architecture differs from the target model in: " + diff);
  std::vector<std::pair<std::string, Tensor<float>>> weights;
  for (const auto& [name, t] : ck.tensors)
    if (name.rfind("adam_m.", 0) != 0 && name.rfind("adam_v.", 0) != 0) weights.emplace_back(name, t);
  const LoadReport report = load_named_tensors(dst, weights);
  return static_cast<std::size_t>(report.matched + report.interpolated);
}

}  // namespace vitsr
