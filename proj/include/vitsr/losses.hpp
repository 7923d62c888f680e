#pragma once

// The training objective: a λ-weighted blend of mean absolute error and a
// differentiable SSIM term, L = (1−λ)·L1 + λ·(1−SSIM). The SSIM term uses
// the same 11×11 Gaussian window convention as the evaluation metric so the
// two paths agree numerically.

#include <string>
#include <vector>

#include "vitsr/image.hpp"
#include "vitsr/ops.hpp"
#include "vitsr/tensor.hpp"

namespace vitsr {

struct LossConfig {
  double lambda = 0.2;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
};

inline void validate(const LossConfig& cfg) {
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    throw ConfigError("loss lambda must be in [0,1], got " + std::to_string(cfg.lambda));
  if (cfg.ssim_window < 3 || cfg.ssim_window % 2 == 0)
    throw ConfigError("ssim window must be odd and >= 3");
  if (cfg.ssim_sigma <= 0.0) throw ConfigError("ssim sigma must be positive");
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!same_shape(pred.shape(), target.shape()))
    throw DimensionError("l1_loss: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  return mean(abs(sub(pred, target)));
}

// Differentiable mean SSIM over [...,H,W] tensors; every leading dim is
// treated as a plane. Returns the score (not 1−score).
template <typename T>
Tensor<T> ssim_loss_term(const Tensor<T>& pred, const Tensor<T>& target, int window = 11,
                         double sigma = 1.5) {
  if (!same_shape(pred.shape(), target.shape()))
    throw DimensionError("ssim_loss_term: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  if (pred.ndim() < 2) throw DimensionError("ssim_loss_term: need at least 2 dims");
  const int W = pred.dim(pred.ndim() - 1);
  const int H = pred.dim(pred.ndim() - 2);
  if (H < window || W < window)
    throw ContractError("ssim_loss_term: image smaller than the window");

  const auto taps_d = gaussian_taps(window / 2, sigma);
  std::vector<T> taps(taps_d.begin(), taps_d.end());
  const T c1 = static_cast<T>(0.01 * 0.01);
  const T c2 = static_cast<T>(0.03 * 0.03);

  Tensor<T> mx = gaussian_blur2d(pred, taps);
  Tensor<T> my = gaussian_blur2d(target, taps);
  Tensor<T> mxx = gaussian_blur2d(mul(pred, pred), taps);
  Tensor<T> myy = gaussian_blur2d(mul(target, target), taps);
  Tensor<T> mxy = gaussian_blur2d(mul(pred, target), taps);

  Tensor<T> mx2 = mul(mx, mx);
  Tensor<T> my2 = mul(my, my);
  Tensor<T> vx = sub(mxx, mx2);
  Tensor<T> vy = sub(myy, my2);
  Tensor<T> cxy = sub(mxy, mul(mx, my));

  Tensor<T> num = mul(affine(mul(mx, my), T(2), c1), affine(cxy, T(2), c2));
  Tensor<T> den = mul(affine(add(mx2, my2), T(1), c1), affine(add(vx, vy), T(1), c2));
  return mean(div(num, den));
}

// The λ-combination applied to already-computed scalar terms; kept separate
// so the arithmetic can be pinned independently of the tensor pipeline.
template <typename T>
Tensor<T> combine_loss(const Tensor<T>& l1, const Tensor<T>& ssim_score, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("loss lambda must be in [0,1], got " + std::to_string(lambda));
  const T lam = static_cast<T>(lambda);
  // (1−λ)·l1 + λ·(1−ssim); the λ=0 and λ=1 boundaries reduce exactly because
  // the vanished term is an exact float zero.
  return add(affine(l1, T(1) - lam, T(0)), affine(ssim_score, -lam, lam));
}

inline double combine_loss(double l1, double ssim_score, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("loss lambda must be in [0,1], got " + std::to_string(lambda));
  return (1.0 - lambda) * l1 + lambda * (1.0 - ssim_score);
}

template <typename T>
Tensor<T> composite_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg) {
  validate(cfg);
  return combine_loss(l1_loss(pred, target),
                      ssim_loss_term(pred, target, cfg.ssim_window, cfg.ssim_sigma), cfg.lambda);
}

}  // namespace vitsr
