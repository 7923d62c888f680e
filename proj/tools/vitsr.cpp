// vitsr — batch CLI for the library: synthetic data generation, two-stage
// training, tiled inference, evaluation, and gradient checking.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vitsr/vitsr.hpp"

namespace fs = std::filesystem;
using namespace vitsr;

namespace {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_set_flags(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

void echo_resolved(const RunConfig& rc) {
  std::cout << "resolved config:\n" << echo_config(rc);
  std::cout.flush();
}

// Shared driver for both training stages.
int run_training(Stage stage, const std::string& config_path, const KeyValues& overrides,
                 const std::string& init_ckpt) {
  RunConfig rc = resolve_config(stage, config_path, overrides);
  validate(rc.model);
  validate(rc.train);
  if (rc.data_root.empty()) throw ConfigError("data_root must be set (flag or config)");
  echo_resolved(rc);
  // the echoed config lands in the run directory before any work starts, so
  // the run is reproducible from its own artifacts
  fs::create_directories(rc.run_dir);
  {
    std::ofstream cf(fs::path(rc.run_dir) / "config.txt", std::ios::binary | std::ios::trunc);
    if (!cf) throw DataError("cannot write config echo under " + rc.run_dir);
    cf << echo_config(rc);
  }

  DatasetSpec train_spec = dataset_spec(rc, "train");
  DatasetSpec val_spec = dataset_spec(rc, "val");
  const auto train_set = scan_dataset(train_spec, &std::cerr);
  const auto val_set = scan_dataset(val_spec, &std::cerr);
  std::cout << "dataset: " << train_set.size() << " train, " << val_set.size() << " val\n";

  Model<float> model = build_model<float>(rc.model);
  init_params(model, rc.train.seed);
  if (!init_ckpt.empty()) {
    const Checkpoint ck = load_checkpoint(init_ckpt);
    if (stage == Stage::super_resolution &&
        stage_from_name(ck.metadata.at("stage").get<std::string>()) != Stage::colorization)
      throw ContractError("finetune warm start expects a colorization checkpoint");
    const std::size_t n = transfer_weights(model, ck);
    std::cout << "copied " << n << " tensors from " << init_ckpt << "\n";
  } else if (stage == Stage::super_resolution) {
    std::cout << "random initialization (ablation mode)\n";
  } else {
    std::cout << "random initialization\n";
  }

  RunOptions opts;
  opts.run_dir = rc.run_dir;
  opts.log = &std::cout;
  const RunResult rr = run_stage(model, train_set, val_set, train_spec, rc.train, opts);
  std::cout << "finished: " << rr.epochs_run << " epochs, best val PSNR " << rr.best_val_psnr
            << " dB at epoch " << rr.best_epoch << (rr.stopped_early ? " (early stop)" : "") << "\n"
            << "log: " << rr.csv_path << "\nbest: " << rr.best_checkpoint
            << "\nlast: " << rr.last_checkpoint << "\n";
  return 0;
}

// Mean-blended tiled forward pass over a full-resolution image. Tiles are the
// model's input size; every pixel's prediction is the average of all tiles
// covering it, accumulated in double so single-coverage pixels keep the exact
// tile value.
Image tiled_forward(Model<float>& model, const Image& input, int overlap) {
  const int S = model.cfg.image_size;
  if (input.width < S || input.height < S)
    throw DataError("image " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                    " is smaller than the model tile " + std::to_string(S));
  if (overlap < 0 || overlap >= S) throw ConfigError("overlap must be in [0, tile)");
  const int step = S - overlap;
  auto positions = [&](int extent) {
    std::vector<int> pos;
    for (int p = 0; p + S < extent; p += step) pos.push_back(p);
    pos.push_back(extent - S);  // flush tile at the far edge
    return pos;
  };
  std::vector<double> acc(input.pixels.size(), 0.0);
  std::vector<std::uint32_t> cover(static_cast<std::size_t>(input.width) * input.height, 0);
  for (int y0 : positions(input.height)) {
    for (int x0 : positions(input.width)) {
      const Image out = detail::forward_to_image(model, crop(input, x0, y0, S, S));
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x)
            acc[(static_cast<std::size_t>(c) * input.height + (y0 + y)) * input.width + (x0 + x)] +=
                out.at(c, y, x);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          ++cover[static_cast<std::size_t>(y0 + y) * input.width + (x0 + x)];
    }
  }
  Image result = make_image(input.width, input.height, 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < cover.size(); ++i)
      result.pixels[static_cast<std::size_t>(c) * cover.size() + i] =
          static_cast<float>(acc[static_cast<std::size_t>(c) * cover.size() + i] / cover[i]);
  return result;
}

// A directory input expands to every PNG inside it, sorted.
std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const auto& path : inputs) {
    if (fs::is_directory(path)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(path))
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      if (found.empty()) throw DataError("no PNG files in directory " + path);
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(path);
    }
  }
  return files;
}

int run_infer(const std::string& ckpt_path, const std::vector<std::string>& inputs,
              const std::string& out_dir, int scale, int overlap) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint<float>(ck);
  if (stage_from_name(ck.metadata.at("stage").get<std::string>()) != Stage::super_resolution)
    throw ContractError("infer requires a super_resolution checkpoint");
  // auto overlap: 32 for full-size models, half a tile for small ones
  if (overlap < 0) overlap = std::min(32, model.cfg.image_size / 2);
  fs::create_directories(out_dir);
  for (const auto& path : expand_inputs(inputs)) {
    const Image in = load_png(path);
    const std::string stem = fs::path(path).stem().string();
    const Image up = resize_bicubic(in, in.width * scale, in.height * scale);
    const Image sr = tiled_forward(model, up, overlap);
    const std::string sr_path = (fs::path(out_dir) / (stem + "_sr.png")).string();
    const std::string bc_path = (fs::path(out_dir) / (stem + "_bicubic.png")).string();
    save_png(sr_path, sr);
    save_png(bc_path, up);
    std::cout << path << " -> " << sr_path << " (baseline " << bc_path << ")\n";
  }
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_root, const std::string& split,
             int scale, const std::string& out_json) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint<float>(ck);
  DatasetSpec spec;
  spec.root = data_root;
  spec.split = split;
  spec.crop_size = model.cfg.image_size;
  spec.scale = scale;
  const auto entries = scan_dataset(spec, &std::cerr);
  double psnr_model = 0, ssim_model = 0, psnr_bc = 0, ssim_bc = 0;
  for (const auto& e : entries) {
    const TrainPair pair = validation_pair(e, spec, Stage::super_resolution);
    const Image out = vitsr::detail::forward_to_image(model, pair.input);
    psnr_model += psnr(out, pair.target);
    ssim_model += ssim(out, pair.target);
    psnr_bc += psnr(pair.input, pair.target);
    ssim_bc += ssim(pair.input, pair.target);
  }
  const double n = static_cast<double>(entries.size());
  nlohmann::json j{{"psnr_model", psnr_model / n},
                   {"ssim_model", ssim_model / n},
                   {"psnr_bicubic", psnr_bc / n},
                   {"ssim_bicubic", ssim_bc / n},
                   {"n_images", entries.size()}};
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out_json.empty()) {
    std::ofstream os(out_json, std::ios::binary);
    if (!os) throw DataError("cannot write " + out_json);
    os << text;
  }
  return 0;
}

int run_gradcheck(int instances, double h, std::uint64_t seed, bool e2e) {
  bool ok = true;
  std::printf("%-22s %10s %8s\n", "op", "max_rel", "checked");
  for (const auto& r : run_op_gradchecks(instances, h, seed)) {
    const bool pass = r.stats.max_rel <= 1e-3;
    ok = ok && pass;
    std::printf("%-22s %10.3e %8zu %s\n", r.op.c_str(), r.stats.max_rel, r.stats.checked,
                pass ? "ok" : "FAIL");
  }
  if (e2e) {
    // Whole-model check in double precision on a micro architecture: the
    // composite loss against a fixed target, ~100 sampled parameters.
    ModelConfig mc;
    mc.image_size = 32;
    mc.patch_size = 8;
    mc.embed_dim = 32;
    mc.encoder_depth = 2;
    mc.decoder_depth = 2;
    mc.num_heads_encoder = 2;
    mc.num_heads_decoder = 2;
    mc.mlp_ratio = 2.0;
    mc.upsample_stages = 3;
    mc.head_channels = {16, 8, 8};
    Model<double> m = build_model<double>(mc);
    init_params(m, seed);
    std::mt19937_64 rng(seed ^ 0xabcdef);
    Tensor<double> x = vitsr::detail::random_tensor<double>(rng, {1, 3, 32, 32}, 0.0, 1.0);
    Tensor<double> target = vitsr::detail::random_tensor<double>(rng, {1, 3, 32, 32}, 0.0, 1.0);
    auto loss_fn = [&] { return composite_loss(model_forward(m, x), target, LossConfig{}); };
    const CheckStats stats = check_gradients(loss_fn, m.params, 1e-5, std::size_t(3), &rng);
    const bool pass = stats.max_rel <= 1e-2;
    ok = ok && pass;
    std::printf("%-22s %10.3e %8zu %s\n", "model-end-to-end", stats.max_rel, stats.checked,
                pass ? "ok" : "FAIL");
  }
  if (!ok) throw NumericError("gradient check failed");
  std::printf("all gradient checks passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ViT-SR: transformer-based single-image super-resolution"};
  app.require_subcommand(1);

  // make-synthetic
  auto* mk = app.add_subcommand("make-synthetic", "Generate a synthetic train/val dataset");
  std::string mk_out = "data/synthetic";
  int mk_count = 32, mk_size = 256;
  std::uint64_t mk_seed = 0;
  mk->add_option("--out", mk_out, "Output dataset root");
  mk->add_option("--count", mk_count, "Number of training images");
  mk->add_option("--size", mk_size, "Image side length in pixels");
  mk->add_option("--seed", mk_seed, "Generator seed");

  // shared training options
  std::string config_path, data_root, run_dir, seed_str;
  std::vector<std::string> sets;
  auto add_train_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file of KEY=VALUE lines");
    cmd->add_option("--data", data_root, "Dataset root (expects train/ and val/)");
    cmd->add_option("--run-dir", run_dir, "Run output directory");
    cmd->add_option("--seed", seed_str, "Run seed (shuffling, crops, init)");
    cmd->add_option("--set", sets, "Extra KEY=VALUE config overrides");
  };
  auto* pre = app.add_subcommand("pretrain", "Stage 1: self-supervised colorization pretraining");
  add_train_opts(pre);
  auto* fin = app.add_subcommand("finetune", "Stage 2: super-resolution fine-tuning");
  add_train_opts(fin);
  std::string init_ckpt;
  fin->add_option("--init-from,--init", init_ckpt,
                  "Warm-start weights from a stage-1 checkpoint (omit for random-init ablation)");

  // infer
  auto* inf = app.add_subcommand("infer", "Upscale images with a trained model");
  std::string inf_ckpt, inf_out = "out";
  std::vector<std::string> inf_inputs;
  int inf_scale = 4, inf_overlap = -1;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint file")->required();
  inf->add_option("inputs,--input", inf_inputs, "Input PNGs or directories of PNGs")->required();
  inf->add_option("--out", inf_out, "Output directory");
  inf->add_option("--scale", inf_scale, "Upscale factor");
  inf->add_option("--overlap", inf_overlap, "Tile overlap in pixels (default: 32, clamped for small tiles)");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a model and the bicubic baseline on a dataset split");
  std::string ev_ckpt, ev_data, ev_split = "val", ev_out;
  int ev_scale = 4;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--dataset,--data", ev_data, "Dataset root")->required();
  ev->add_option("--split", ev_split, "Split directory name");
  ev->add_option("--scale", ev_scale, "Downscale factor for the synthetic degradation");
  ev->add_option("--out", ev_out, "Write the metrics JSON here as well");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of all gradients");
  int gc_instances = 5;
  double gc_h = 1e-5;
  std::uint64_t gc_seed = 1234;
  bool gc_e2e = false;
  gc->add_option("--instances", gc_instances, "Random instances per op");
  gc->add_option("--step", gc_h, "Central-difference step");
  gc->add_option("--seed", gc_seed, "Sampling seed");
  gc->add_flag("--e2e", gc_e2e, "Also run the whole-model check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    KeyValues overrides = parse_set_flags(sets);
    if (!data_root.empty()) overrides.emplace_back("data_root", data_root);
    if (!run_dir.empty()) overrides.emplace_back("run_dir", run_dir);
    if (!seed_str.empty()) overrides.emplace_back("seed", seed_str);

    if (mk->parsed()) {
      const int val_count = std::max(2, mk_count / 4);
      const auto train_manifest =
          generate_synthetic(mk_count, mk_size, mk_seed, (fs::path(mk_out) / "train").string());
      // different seed stream so val never duplicates train
      const auto val_manifest = generate_synthetic(
          val_count, mk_size, mk_seed + 0x5eedULL, (fs::path(mk_out) / "val").string());
      write_manifest((fs::path(mk_out) / "train_manifest.tsv").string(), train_manifest);
      write_manifest((fs::path(mk_out) / "val_manifest.tsv").string(), val_manifest);
      std::cout << "wrote " << train_manifest.size() << " train and " << val_manifest.size()
                << " val images under " << mk_out << "\n";
      return 0;
    }
    if (pre->parsed()) return run_training(Stage::colorization, config_path, overrides, "");
    if (fin->parsed()) return run_training(Stage::super_resolution, config_path, overrides, init_ckpt);
    if (inf->parsed()) return run_infer(inf_ckpt, inf_inputs, inf_out, inf_scale, inf_overlap);
    if (ev->parsed()) return run_eval(ev_ckpt, ev_data, ev_split, ev_scale, ev_out);
    if (gc->parsed()) return run_gradcheck(gc_instances, gc_h, gc_seed, gc_e2e);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
