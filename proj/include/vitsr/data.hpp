#pragma once

// Dataset plumbing: directory scanning with a plain-text manifest, training
// pair synthesis for both stages (grayscale→color and bicubic-degraded→HR),
// seeded batch iteration, and a synthetic texture generator so the whole
// pipeline runs without downloading anything.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "vitsr/errors.hpp"
#include "vitsr/image.hpp"
#include "vitsr/png_io.hpp"
#include "vitsr/tensor.hpp"

namespace vitsr {

enum class Stage { colorization, super_resolution };

inline std::string stage_name(Stage s) {
  return s == Stage::colorization ? "colorization" : "super_resolution";
}
inline Stage stage_from_name(const std::string& s) {
  if (s == "colorization") return Stage::colorization;
  if (s == "super_resolution") return Stage::super_resolution;
  throw ConfigError("unknown stage '" + s + "'");
}

struct DatasetSpec {
  std::string root;
  std::string split = "train";  // subdirectory under root
  int crop_size = 256;
  int scale = 4;
  std::uint64_t seed = 0;
};

inline void validate(const DatasetSpec& spec) {
  if (spec.crop_size <= 0 || spec.scale <= 0) throw ConfigError("crop_size/scale must be positive");
  if (spec.crop_size % spec.scale != 0)
    throw ConfigError("crop_size " + std::to_string(spec.crop_size) +
                      " not divisible by scale " + std::to_string(spec.scale));
}

struct ManifestEntry {
  std::string path;
  int width = 0;
  int height = 0;
};

// ---------------------------------------------------------------------------
// Scanning

// Lists the split's PNGs sorted by path, reading only each file's header for
// dimensions. Images smaller than the crop are rejected with a warning.
inline std::vector<ManifestEntry> scan_dataset(const DatasetSpec& spec,
                                               std::ostream* warnings = nullptr) {
  validate(spec);
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(spec.root) / spec.split;
  if (!fs::is_directory(dir)) throw DataError("dataset split directory not found: " + dir.string());
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".png") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<ManifestEntry> manifest;
  for (const auto& f : files) {
    PngDims d = png_dimensions(f);
    if (d.width < spec.crop_size || d.height < spec.crop_size) {
      if (warnings)
        *warnings << "warning: " << f << " is " << d.width << "x" << d.height
                  << ", smaller than crop " << spec.crop_size << "; skipped\n";
      continue;
    }
    manifest.push_back({f, d.width, d.height});
  }
  if (manifest.empty()) throw DataError("no usable images in " + dir.string());
  return manifest;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const auto& e : entries) out << e.path << '\t' << e.width << '\t' << e.height << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw DataError("malformed manifest line: " + line);
    ManifestEntry e;
    e.path = line.substr(0, t1);
    e.width = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
    e.height = std::stoi(line.substr(t2 + 1));
    entries.push_back(e);
  }
  if (entries.empty()) throw DataError("empty manifest " + path);
  return entries;
}

// ---------------------------------------------------------------------------
// Pair synthesis

struct TrainPair {
  Image input;
  Image target;
  Stage stage;
};

// Degrade-and-upsample: LR = bicubic(HR, S/scale); input = bicubic(LR, S).
inline TrainPair make_sr_pair(const Image& hr_crop, int scale) {
  if (hr_crop.width % scale != 0 || hr_crop.height % scale != 0)
    throw DimensionError("make_sr_pair: crop not divisible by scale");
  Image lr = resize_bicubic(hr_crop, hr_crop.width / scale, hr_crop.height / scale);
  TrainPair p;
  p.input = resize_bicubic(lr, hr_crop.width, hr_crop.height);
  p.target = hr_crop;
  p.stage = Stage::super_resolution;
  return p;
}

inline TrainPair make_colorization_pair(const Image& hr_crop) {
  TrainPair p;
  p.input = gray_to_rgb(rgb_to_gray(hr_crop));
  p.target = hr_crop;
  p.stage = Stage::colorization;
  return p;
}

inline TrainPair make_pair(const Image& hr_crop, Stage stage, int scale) {
  return stage == Stage::colorization ? make_colorization_pair(hr_crop)
                                      : make_sr_pair(hr_crop, scale);
}

// ---------------------------------------------------------------------------
// Seeded sampling

namespace detail {

inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  return std::mt19937_64(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch));
}

}  // namespace detail

inline Image random_crop(const Image& img, int size, std::mt19937_64& rng) {
  if (img.width < size || img.height < size)
    throw DimensionError("random_crop: image smaller than crop");
  const int y0 = static_cast<int>(detail::bounded(rng, static_cast<std::uint64_t>(img.height - size + 1)));
  const int x0 = static_cast<int>(detail::bounded(rng, static_cast<std::uint64_t>(img.width - size + 1)));
  return crop(img, x0, y0, size, size);
}

inline Image center_crop(const Image& img, int size) {
  if (img.width < size || img.height < size)
    throw DimensionError("center_crop: image smaller than crop");
  return crop(img, (img.width - size) / 2, (img.height - size) / 2, size, size);
}

struct Batch {
  Tensor<float> input;   // [B,3,S,S]
  Tensor<float> target;  // [B,3,S,S]
};

// One epoch of shuffled, seeded batches. Order and crops are a pure function
// of (spec.seed, epoch); the last partial batch is dropped.
class BatchIterator {
 public:
  BatchIterator(const std::vector<ManifestEntry>& manifest, const DatasetSpec& spec, Stage stage,
                int batch_size, int epoch)
      : manifest_(manifest), spec_(spec), stage_(stage), batch_size_(batch_size),
        rng_(detail::epoch_rng(spec.seed, epoch)) {
    if (batch_size_ <= 0) throw ConfigError("batch_size must be positive");
    order_.resize(manifest.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    for (std::size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[detail::bounded(rng_, i)]);
  }

  int batch_count() const {
    return static_cast<int>(manifest_.size()) / batch_size_;
  }

  // Returns false when the epoch is exhausted.
  bool next(Batch& out) {
    if (cursor_ + static_cast<std::size_t>(batch_size_) > order_.size()) return false;
    const int S = spec_.crop_size;
    std::vector<float> in(static_cast<std::size_t>(batch_size_) * 3 * S * S);
    std::vector<float> tg(in.size());
    const std::size_t img_elems = static_cast<std::size_t>(3) * S * S;
    for (int b = 0; b < batch_size_; ++b) {
      const auto& entry = manifest_[order_[cursor_++]];
      Image full = load_png(entry.path);
      Image cropped = random_crop(full, S, rng_);
      TrainPair p = make_pair(cropped, stage_, spec_.scale);
      std::copy(p.input.pixels.begin(), p.input.pixels.end(),
                in.begin() + static_cast<std::size_t>(b) * img_elems);
      std::copy(p.target.pixels.begin(), p.target.pixels.end(),
                tg.begin() + static_cast<std::size_t>(b) * img_elems);
    }
    const Shape shape{batch_size_, 3, S, S};
    out.input = Tensor<float>(shape, std::move(in));
    out.target = Tensor<float>(shape, std::move(tg));
    return true;
  }

 private:
  const std::vector<ManifestEntry>& manifest_;
  DatasetSpec spec_;
  Stage stage_;
  int batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Deterministic validation views: center crops, in manifest order.
inline TrainPair validation_pair(const ManifestEntry& entry, const DatasetSpec& spec,
                                 Stage stage) {
  Image full = load_png(entry.path);
  return make_pair(center_crop(full, spec.crop_size), stage, spec.scale);
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace detail {

inline double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Writes `count` PNGs layering a colored linear gradient, Gaussian blobs, and
// sinusoid gratings — low- and high-frequency energy with nontrivial chroma
// in every image. Deterministic per (seed, count, size).
inline std::vector<ManifestEntry> generate_synthetic(int count, int size, std::uint64_t seed,
                                                     const std::string& out_dir) {
  if (count <= 0 || size <= 0) throw ConfigError("synthetic count/size must be positive");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw DataError("cannot create directory " + out_dir);

  std::vector<ManifestEntry> manifest;
  for (int n = 0; n < count; ++n) {
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(n));
    Image img = make_image(size, size, 3);

    // colored gradient between two random RGB corners along a random direction
    double ga = detail::unit(rng) * 6.283185307179586;
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) c0[c] = detail::unit(rng);
    for (int c = 0; c < 3; ++c) c1[c] = detail::unit(rng);
    const double dx = std::cos(ga), dy = std::sin(ga);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double t =
            0.5 + 0.5 * ((x - size / 2.0) * dx + (y - size / 2.0) * dy) / (size * 0.7071);
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * std::clamp(t, 0.0, 1.0));
      }

    // Gaussian blobs
    const int blobs = 2 + static_cast<int>(detail::bounded(rng, 3));
    for (int k = 0; k < blobs; ++k) {
      const double bx = detail::unit(rng) * size;
      const double by = detail::unit(rng) * size;
      const double sigma = size * (0.05 + 0.15 * detail::unit(rng));
      double amp[3];
      for (int c = 0; c < 3; ++c) amp[c] = (detail::unit(rng) - 0.5) * 1.2;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double r2 = (x - bx) * (x - bx) + (y - by) * (y - by);
          const double g = std::exp(-0.5 * r2 / (sigma * sigma));
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) += static_cast<float>(amp[c] * g);
        }
    }

    // sinusoid gratings at random frequency and orientation
    const int waves = 1 + static_cast<int>(detail::bounded(rng, 3));
    for (int k = 0; k < waves; ++k) {
      const double freq = 2.0 + detail::unit(rng) * (size / 4.0 - 2.0);  // cycles per image
      const double ang = detail::unit(rng) * 3.141592653589793;
      const double phase = detail::unit(rng) * 6.283185307179586;
      const double wx = std::cos(ang) * freq * 6.283185307179586 / size;
      const double wy = std::sin(ang) * freq * 6.283185307179586 / size;
      double amp[3];
      for (int c = 0; c < 3; ++c) amp[c] = (detail::unit(rng) - 0.5) * 0.5;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double s = std::sin(wx * x + wy * y + phase);
          for (int c = 0; c < 3; ++c) img.at(c, y, x) += static_cast<float>(amp[c] * s);
        }
    }

    for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);

    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d.png", n);
    const std::string path = (fs::path(out_dir) / name).string();
    save_png(path, img);
    manifest.push_back({path, size, size});
  }
  return manifest;
}

}  // namespace vitsr
