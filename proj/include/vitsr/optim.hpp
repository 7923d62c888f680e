#pragma once

// Optimization protocol: AdamW with decoupled weight decay, per-epoch cosine
// annealing with warm restarts, and strict-improvement early stopping on
// validation PSNR.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vitsr/data.hpp"
#include "vitsr/errors.hpp"
#include "vitsr/tensor.hpp"

namespace vitsr {

struct TrainConfig {
  Stage stage = Stage::super_resolution;
  double lr_init = 5e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 16;
  int max_epochs = 400;
  int patience = 40;
  int sched_T0 = 10;
  int sched_Tmult = 2;
  double lambda = 0.2;
  std::uint64_t seed = 0;
};

// Stage-specific defaults: pretraining runs shorter at a higher rate.
inline TrainConfig stage_defaults(Stage stage) {
  TrainConfig cfg;
  cfg.stage = stage;
  if (stage == Stage::colorization) {
    cfg.lr_init = 2e-4;
    cfg.max_epochs = 100;
    cfg.patience = 20;
  } else {
    cfg.lr_init = 5e-5;
    cfg.max_epochs = 400;
    cfg.patience = 40;
  }
  return cfg;
}

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.lr_init > 0)) throw ConfigError("lr_init must be positive");
  if (cfg.patience >= cfg.max_epochs)
    throw ConfigError("patience " + std::to_string(cfg.patience) + " must be < max_epochs " +
                      std::to_string(cfg.max_epochs));
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
  if (cfg.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (cfg.sched_T0 <= 0 || cfg.sched_Tmult < 1) throw ConfigError("bad scheduler periods");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1))
    throw ConfigError("betas must be in [0,1)");
  if (!(cfg.eps > 0)) throw ConfigError("eps must be positive");
  if (cfg.weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
}

// ---------------------------------------------------------------------------
// AdamW

// Decoupled decay applied to the weights before the moment update, then the
// bias-corrected Adam step. With weight_decay = 0 this is exactly Adam.
template <typename T>
class AdamW {
 public:
  explicit AdamW(const std::vector<Tensor<T>>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step(std::vector<Tensor<T>>& params, double lr, const TrainConfig& cfg) {
    if (params.size() != m_.size()) throw ContractError("optimizer/parameter count mismatch");
    ++t_;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.has_grad()) continue;
      const std::vector<T>& g = p.node()->grad;
      T* w = p.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double wj = static_cast<double>(w[j]) * (1.0 - lr * cfg.weight_decay);
        const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
        const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] = static_cast<T>(wj - lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
      }
    }
  }

  long step_count() const { return t_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_step_count(long t) { t_ = t; }

 private:
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Schedule

// Cosine annealing with warm restarts at per-epoch granularity: cycle i has
// length T0·Tmult^i; within a cycle lr = ½·lr_init·(1 + cos(π·t/T)), so each
// cycle starts back at lr_init and anneals toward 0.
inline double cosine_warm_restart_lr(int epoch, double lr_init, int T0, int Tmult) {
  if (epoch < 0) throw ContractError("scheduler epoch must be >= 0");
  if (T0 <= 0 || Tmult < 1) throw ConfigError("bad scheduler periods");
  long start = 0;
  long len = T0;
  while (epoch >= start + len) {
    start += len;
    len *= Tmult;
  }
  const double t = static_cast<double>(epoch - start) / static_cast<double>(len);
  return 0.5 * lr_init * (1.0 + std::cos(3.141592653589793238 * t));
}

// ---------------------------------------------------------------------------
// Early stopping

// Strict-improvement rule: an epoch improves only if its PSNR is strictly
// greater than the best seen; stop once `patience` consecutive epochs fail
// to improve.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    if (patience <= 0) throw ConfigError("patience must be positive");
  }

  struct Decision {
    bool improved = false;
    bool stop = false;
  };

  Decision update(double val_psnr) {
    Decision d;
    if (val_psnr > best_) {
      best_ = val_psnr;
      since_ = 0;
      d.improved = true;
    } else {
      ++since_;
      d.stop = since_ >= patience_;
    }
    return d;
  }

  double best() const { return best_; }

 private:
  int patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  int since_ = 0;
};

}  // namespace vitsr
