#pragma once

// Planar float images in [0,1] plus the deterministic pixel pipeline:
// Catmull-Rom bicubic resampling, Rec.601 luma, and the PSNR/SSIM metrics.
// Metrics accumulate in double so they can serve as the reference the
// float-precision training loss is compared against.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "vitsr/errors.hpp"
#include "vitsr/ops.hpp"
#include "vitsr/tensor.hpp"

namespace vitsr {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;  // planar, channel-major: [c][y][x]

  float& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t numel() const { return pixels.size(); }
};

inline Image make_image(int width, int height, int channels, float fill = 0.0f) {
  if (width <= 0 || height <= 0 || channels <= 0)
    throw DimensionError("image dimensions must be positive");
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(width) * height * channels, fill);
  return img;
}

inline void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw DimensionError(std::string(what) + ": image sizes differ");
}

// ---------------------------------------------------------------------------
// Color

// Rec.601 luma. Output has one channel.
inline Image rgb_to_gray(const Image& img) {
  if (img.channels != 3) throw DimensionError("rgb_to_gray: expected 3 channels");
  Image out = make_image(img.width, img.height, 1);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    out.pixels[i] = 0.299f * img.pixels[i] + 0.587f * img.pixels[plane + i] +
                    0.114f * img.pixels[2 * plane + i];
  return out;
}

// Replicates a single channel into three (the colorization input).
inline Image gray_to_rgb(const Image& img) {
  if (img.channels != 1) throw DimensionError("gray_to_rgb: expected 1 channel");
  Image out = make_image(img.width, img.height, 3);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int c = 0; c < 3; ++c)
    std::copy_n(img.pixels.begin(), plane, out.pixels.begin() + static_cast<std::size_t>(c) * plane);
  return out;
}

// ---------------------------------------------------------------------------
// Bicubic resampling (Catmull-Rom, a = -0.5), half-pixel centers,
// clamp-to-edge. Exposed kernel weights so the tap values can be pinned in
// tests: for fractional offset f in [0,1) the four taps at offsets
// {-1, 0, +1, +2} from floor(src) get weights {W(1+f), W(f), W(1-f), W(2-f)}.

inline double bicubic_kernel(double t) {
  const double a = -0.5;
  const double x = std::abs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

inline std::array<double, 4> bicubic_weights(double frac) {
  return {bicubic_kernel(frac + 1.0), bicubic_kernel(frac), bicubic_kernel(1.0 - frac),
          bicubic_kernel(2.0 - frac)};
}

namespace detail {

struct ResampleTap {
  int base;                    // index of the w[1] tap in the source axis
  std::array<double, 4> w;
};

inline std::vector<ResampleTap> resample_taps(int src, int dst) {
  std::vector<ResampleTap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (int i = 0; i < dst; ++i) {
    const double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double fl = std::floor(s);
    taps[static_cast<std::size_t>(i)].base = static_cast<int>(fl);
    taps[static_cast<std::size_t>(i)].w = bicubic_weights(s - fl);
  }
  return taps;
}

}  // namespace detail

inline Image resize_bicubic(const Image& img, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) throw DimensionError("resize_bicubic: bad target size");
  auto tx = detail::resample_taps(img.width, out_w);
  auto ty = detail::resample_taps(img.height, out_h);
  Image out = make_image(out_w, out_h, img.channels);
  // horizontal pass into a double buffer, then vertical
  std::vector<double> mid(static_cast<std::size_t>(img.height) * out_w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < out_w; ++x) {
        const auto& t = tx[static_cast<std::size_t>(x)];
        double acc = 0;
        for (int m = 0; m < 4; ++m) {
          int sx = std::clamp(t.base - 1 + m, 0, img.width - 1);
          acc += t.w[static_cast<std::size_t>(m)] * static_cast<double>(img.at(c, y, sx));
        }
        mid[static_cast<std::size_t>(y) * out_w + x] = acc;
      }
    for (int y = 0; y < out_h; ++y) {
      const auto& t = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        double acc = 0;
        for (int m = 0; m < 4; ++m) {
          int sy = std::clamp(t.base - 1 + m, 0, img.height - 1);
          acc += t.w[static_cast<std::size_t>(m)] * mid[static_cast<std::size_t>(sy) * out_w + x];
        }
        // the kernel overshoots near edges; outputs stay in the image range
        out.at(c, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width || y0 + h > img.height)
    throw DimensionError("crop: window outside image");
  Image out = make_image(w, h, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

// ---------------------------------------------------------------------------
// Tensor bridging

inline Tensor<float> image_to_tensor(const Image& img) {
  return Tensor<float>({img.channels, img.height, img.width}, img.pixels);
}

// Clamps into [0,1]; model outputs are unconstrained.
inline Image tensor_to_image(const Tensor<float>& t) {
  if (t.ndim() != 3) throw DimensionError("tensor_to_image: expected [C,H,W]");
  Image img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i)
    img.pixels[i] = std::clamp(t.data()[i], 0.0f, 1.0f);
  return img;
}

// ---------------------------------------------------------------------------
// Metrics (double precision)

// Peak signal-to-noise ratio against a unit dynamic range; identical images
// return +infinity.
inline double psnr(const Image& a, const Image& b) {
  require_same_size(a, b, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

// Normalized Gaussian taps of length 2*radius+1.
inline std::vector<double> gaussian_taps(int radius, double sigma) {
  if (radius < 0 || sigma <= 0) throw ContractError("gaussian_taps: bad parameters");
  std::vector<double> t(static_cast<std::size_t>(2 * radius + 1));
  double s = 0;
  for (int i = -radius; i <= radius; ++i) {
    t[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    s += t[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : t) v /= s;
  return t;
}

// Structural similarity with the standard 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03 on a unit dynamic range. Windows are evaluated at
// every pixel with edge replication, and the map is averaged over all pixels
// and channels.
inline double ssim(const Image& a, const Image& b) {
  require_same_size(a, b, "ssim");
  if (a.width < 11 || a.height < 11)
    throw ContractError("ssim: image smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const auto taps = gaussian_taps(5, 1.5);
  const int H = a.height, W = a.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  std::vector<double> mx(plane), my(plane), mxx(plane), myy(plane), mxy(plane);
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    const float* pa = a.pixels.data() + static_cast<std::size_t>(c) * plane;
    const float* pb = b.pixels.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = pa[i];
      y[i] = pb[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    detail::blur2d_forward(x.data(), mx.data(), 1, H, W, taps);
    detail::blur2d_forward(y.data(), my.data(), 1, H, W, taps);
    detail::blur2d_forward(xx.data(), mxx.data(), 1, H, W, taps);
    detail::blur2d_forward(yy.data(), myy.data(), 1, H, W, taps);
    detail::blur2d_forward(xy.data(), mxy.data(), 1, H, W, taps);
    double acc = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cxy = mxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += acc / static_cast<double>(plane);
  }
  return total / a.channels;
}

}  // namespace vitsr
