#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vitsr/checkpoint.hpp"
#include "vitsr/train.hpp"

using vitsr::DatasetSpec;
using vitsr::RunOptions;
using vitsr::Stage;
using vitsr::TrainConfig;

namespace fs = std::filesystem;

namespace {

vitsr::ModelConfig micro_config() {
  vitsr::ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.embed_dim = 32;
  cfg.encoder_depth = 1;
  cfg.decoder_depth = 1;
  cfg.num_heads_encoder = 2;
  cfg.num_heads_decoder = 2;
  cfg.mlp_ratio = 2.0;
  cfg.upsample_stages = 3;
  cfg.head_channels = {16, 8, 8};
  return cfg;
}

struct Fixture {
  fs::path root;
  std::vector<vitsr::ManifestEntry> train;
  std::vector<vitsr::ManifestEntry> val;
  DatasetSpec spec;
};

// Six train and two validation images, 32 px, freshly generated.
Fixture make_fixture(const std::string& tag) {
  Fixture f;
  f.root = fs::temp_directory_path() / ("vitsr_test_train_" + tag);
  fs::remove_all(f.root);
  f.train = vitsr::generate_synthetic(6, 32, 11, (f.root / "train").string());
  f.val = vitsr::generate_synthetic(2, 32, 22, (f.root / "val").string());
  f.spec.root = f.root.string();
  f.spec.crop_size = 32;
  f.spec.scale = 4;
  return f;
}

TrainConfig quick_config(int epochs, std::uint64_t seed) {
  TrainConfig cfg = vitsr::stage_defaults(Stage::super_resolution);
  cfg.batch_size = 3;
  cfg.max_epochs = epochs;
  cfg.patience = epochs - 1;
  cfg.lr_init = 4e-4;
  cfg.seed = seed;
  return cfg;
}

std::vector<std::string> csv_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Strictly increasing fake time: 0.5 s per call, deterministic.
std::function<double()> fake_clock() {
  auto t = std::make_shared<double>(0.0);
  return [t]() { return (*t += 0.5); };
}

}  // namespace

TEST_CASE("a short run logs one row per epoch and writes both checkpoints") {
  auto f = make_fixture("one_epoch");
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 1);

  RunOptions opts;
  opts.run_dir = (f.root / "run").string();
  opts.clock = fake_clock();
  auto r = vitsr::run_stage(m, f.train, f.val, f.spec, quick_config(2, 7), opts);

  CHECK(r.epochs_run == 2);
  CHECK(r.best_epoch >= 1);
  CHECK(std::isfinite(r.best_val_psnr));

  auto lines = csv_lines(r.csv_path);
  REQUIRE(lines.size() == 3u);  // header + one row per completed epoch
  CHECK(lines[0] == "epoch,train_loss,val_psnr,val_ssim,lr,seconds");
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(lines[2].rfind("2,", 0) == 0);

  CHECK(fs::exists(r.best_checkpoint));
  CHECK(fs::exists(r.last_checkpoint));
  CHECK(fs::exists(fs::path(opts.run_dir) / "samples" / "sample_0.png"));

  // the rolling checkpoint carries optimizer state; the best one does not
  auto best = vitsr::load_checkpoint(r.best_checkpoint);
  auto last = vitsr::load_checkpoint(r.last_checkpoint);
  CHECK(best.metadata["has_optimizer_state"] == false);
  CHECK(last.metadata["has_optimizer_state"] == true);
  CHECK(last.tensors.size() == 3 * best.tensors.size());
  fs::remove_all(f.root);
}

TEST_CASE("the objective falls over a short training run") {
  auto f = make_fixture("descent");
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 2);

  RunOptions opts;
  opts.run_dir = (f.root / "run").string();
  opts.write_samples = false;
  opts.clock = fake_clock();
  auto r = vitsr::run_stage(m, f.train, f.val, f.spec, quick_config(10, 3), opts);
  REQUIRE(r.epochs_run >= 5);  // early stop may trim the tail, not the start

  auto lines = csv_lines(r.csv_path);
  auto loss_of = [](const std::string& line) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    return std::stod(line.substr(a + 1, b - a - 1));
  };
  const double first = loss_of(lines[1]);
  const double last = loss_of(lines.back());
  CHECK(last < first);
  fs::remove_all(f.root);
}

TEST_CASE("identical seeds replay to the byte") {
  auto f = make_fixture("replay");
  auto run_once = [&](const std::string& name) {
    auto m = vitsr::build_model<float>(micro_config());
    vitsr::init_params(m, 5);
    RunOptions opts;
    opts.run_dir = (f.root / name).string();
    opts.write_samples = false;
    opts.clock = fake_clock();
    return vitsr::run_stage(m, f.train, f.val, f.spec, quick_config(3, 17), opts);
  };
  auto r1 = run_once("a");
  auto r2 = run_once("b");
  CHECK(slurp(r1.csv_path) == slurp(r2.csv_path));
  CHECK(slurp(r1.best_checkpoint) == slurp(r2.best_checkpoint));
  CHECK(slurp(r1.last_checkpoint) == slurp(r2.last_checkpoint));

  // a different seed must actually change the trajectory
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 5);
  RunOptions opts;
  opts.run_dir = (f.root / "c").string();
  opts.write_samples = false;
  opts.clock = fake_clock();
  auto r3 = vitsr::run_stage(m, f.train, f.val, f.spec, quick_config(3, 18), opts);
  CHECK(slurp(r1.csv_path) != slurp(r3.csv_path));
  fs::remove_all(f.root);
}

TEST_CASE("a non-finite loss aborts with the failing coordinates") {
  auto f = make_fixture("nan");
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 1);
  // poison one weight so the first forward pass blows up
  m.param("patch_embed.weight").data()[0] = std::numeric_limits<float>::infinity();

  RunOptions opts;
  opts.run_dir = (f.root / "run").string();
  opts.clock = fake_clock();
  try {
    vitsr::run_stage(m, f.train, f.val, f.spec, quick_config(2, 9), opts);
    FAIL("expected NumericError");
  } catch (const vitsr::NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
  fs::remove_all(f.root);
}

TEST_CASE("run_stage rejects inconsistent setups") {
  auto f = make_fixture("validate");
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 1);
  RunOptions opts;
  opts.run_dir = (f.root / "run").string();

  auto cfg = quick_config(2, 1);
  cfg.batch_size = 100;  // more than six training images
  CHECK_THROWS_AS(vitsr::run_stage(m, f.train, f.val, f.spec, cfg, opts), vitsr::ConfigError);

  cfg = quick_config(2, 1);
  auto bad_spec = f.spec;
  bad_spec.crop_size = 16;  // disagrees with the 32 px model
  CHECK_THROWS_AS(vitsr::run_stage(m, f.train, f.val, bad_spec, cfg, opts), vitsr::ConfigError);

  CHECK_THROWS_AS(vitsr::run_stage(m, f.train, {}, f.spec, cfg, opts), vitsr::DataError);

  RunOptions no_dir;
  CHECK_THROWS_AS(vitsr::run_stage(m, f.train, f.val, f.spec, cfg, no_dir), vitsr::ConfigError);
  fs::remove_all(f.root);
}

TEST_CASE("evaluation averages the validation metrics") {
  auto f = make_fixture("eval");
  auto m = vitsr::build_model<float>(micro_config());
  vitsr::init_params(m, 4);
  auto r = vitsr::evaluate(m, f.val, f.spec, Stage::super_resolution);
  CHECK(r.n_images == 2);
  CHECK(std::isfinite(r.psnr));
  CHECK(r.ssim >= -1.0);
  CHECK(r.ssim <= 1.0);

  auto bad_spec = f.spec;
  bad_spec.crop_size = 16;
  CHECK_THROWS_AS(vitsr::evaluate(m, f.val, bad_spec, Stage::super_resolution),
                  vitsr::ConfigError);
  fs::remove_all(f.root);
}

TEST_CASE("weights carry over between stages by name") {
  auto f = make_fixture("transfer");
  auto src = vitsr::build_model<float>(micro_config());
  vitsr::init_params(src, 6);
  auto cfg = vitsr::stage_defaults(Stage::colorization);
  cfg.seed = 1;

  // the rolling checkpoint includes optimizer tensors, which must not count
  vitsr::AdamW<float> opt(src.params);
  auto ck = vitsr::make_checkpoint(src, cfg, 5, 20.0, &opt);

  auto dst = vitsr::build_model<float>(micro_config());
  vitsr::init_params(dst, 7);
  const std::size_t applied = vitsr::transfer_weights(dst, ck);
  CHECK(applied == dst.params.size());
  for (std::size_t i = 0; i < dst.params.size(); ++i)
    for (std::size_t j = 0; j < dst.params[i].numel(); ++j)
      CHECK(dst.params[i].data()[j] == src.params[i].data()[j]);
  fs::remove_all(f.root);
}

TEST_CASE("a transfer to a different architecture names the mismatch") {
  auto src = vitsr::build_model<float>(micro_config());
  vitsr::init_params(src, 8);
  auto ck = vitsr::make_checkpoint(src, vitsr::stage_defaults(Stage::colorization), 1, 10.0);

  auto wider = micro_config();
  wider.decoder_depth = 2;
  auto dst = vitsr::build_model<float>(wider);
  try {
    vitsr::transfer_weights(dst, ck);
    FAIL("expected ConfigError");
  } catch (const vitsr::ConfigError& e) {
    CHECK(std::string(e.what()).find("decoder_depth") != std::string::npos);
  }
}

TEST_CASE("the residual switch may differ across a transfer") {
  auto src = vitsr::build_model<float>(micro_config());
  vitsr::init_params(src, 9);
  auto ck = vitsr::make_checkpoint(src, vitsr::stage_defaults(Stage::colorization), 1, 10.0);

  auto flipped = micro_config();
  flipped.residual_mode = !flipped.residual_mode;
  auto dst = vitsr::build_model<float>(flipped);
  CHECK(vitsr::transfer_weights(dst, ck) == dst.params.size());
}
