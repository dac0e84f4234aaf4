#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "cellcount/checkpoint.hpp"
#include "cellcount/config.hpp"
#include "cellcount/dataset.hpp"
#include "cellcount/io.hpp"
#include "test_helpers.hpp"

using namespace cellcount;
namespace fs = std::filesystem;

TEST_CASE("16-bit PNG round trip is within one quantization step") {
  const auto dir = testing::temp_dir("png");
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Image img(24, 40);
    Rng rng(seed);
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
    io::write_png16(dir / "a.png", img);
    const Image back = io::read_png(dir / "a.png");
    REQUIRE(back.rows() == 24);
    REQUIRE(back.cols() == 40);
    for (std::size_t k = 0; k < img.size(); ++k)
      REQUIRE(std::abs(back.values()[k] - img.values()[k]) <= 0.5f / 65535.0f + 1e-7f);
  }
}

TEST_CASE("density map binary round trip is exact in float32") {
  const auto dir = testing::temp_dir("dmap");
  const auto map = build_density_map(20, 30, {{3, 4}, {29, 19}}, {});
  io::write_density_map(dir / "m.dmap", map);
  const auto back = io::read_density_map(dir / "m.dmap");
  REQUIRE(back.rows() == 20);
  REQUIRE(back.cols() == 30);
  for (std::size_t k = 0; k < map.size(); ++k)
    REQUIRE(back.values()[k] == static_cast<double>(static_cast<float>(map.values()[k])));

  std::ifstream raw(dir / "m.dmap", std::ios::binary);
  unsigned char head[12];
  raw.read(reinterpret_cast<char*>(head), 12);
  CHECK(std::string(reinterpret_cast<char*>(head), 4) == "DMAP");
  CHECK((head[4] == 20 && head[5] == 0 && head[8] == 30 && head[9] == 0));
  CHECK(fs::file_size(dir / "m.dmap") == 12 + 4 * 600);
}

TEST_CASE("bad density magic is a format error") {
  const auto dir = testing::temp_dir("dmap_bad");
  std::ofstream(dir / "x.dmap") << "NOPE";
  CHECK_THROWS_AS(io::read_density_map(dir / "x.dmap"), FormatError);
}

TEST_CASE("centroid CSV round trip and header") {
  const auto dir = testing::temp_dir("csv");
  const CentroidSet cs{{0, 0}, {5, 17}, {255, 3}};
  io::write_centroids_csv(dir / "c.csv", cs);
  CHECK(io::read_text(dir / "c.csv").rfind("x,y\n0,0\n5,17\n", 0) == 0);
  CHECK(io::read_centroids_csv(dir / "c.csv") == cs);
  std::ofstream(dir / "bad.csv") << "x,y\n1;2\n";
  CHECK_THROWS_AS(io::read_centroids_csv(dir / "bad.csv"), FormatError);
}

TEST_CASE("checkpoints round trip DRM, DAM and DCM parameters exactly") {
  const auto dir = testing::temp_dir("ckpt");
  const auto drm = make_drm<float>(3, testing::tiny_widths());
  save_checkpoint(dir / "drm.ckpt", to_checkpoint(drm, 3, 12));
  const auto ck = load_checkpoint(dir / "drm.ckpt");
  CHECK(drm_from_checkpoint<float>(ck) == drm);
  CHECK(ck.metadata.at("kind") == "drm");
  CHECK(ck.metadata.at("seed") == "3");
  CHECK(ck.metadata.at("epoch") == "12");
  CHECK_FALSE(ck.metadata.at("architecture_hash").empty());
  CHECK(ck.find("encoder.conv1.weight") != nullptr);
  CHECK(ck.find("decoder.conv8.bias") != nullptr);

  const auto dam = make_dam_from(drm.encoder);
  save_checkpoint(dir / "dam.ckpt", to_checkpoint(dam, 4, 0));
  CHECK(encoder_from_checkpoint<float>(load_checkpoint(dir / "dam.ckpt")) == dam.encoder);

  const auto dcm = make_dcm<float>(5, 4, {{8, 16}, 12, 0.25});
  save_checkpoint(dir / "dcm.ckpt", to_checkpoint(dcm, 5, 7));
  CHECK(dcm_from_checkpoint<float>(load_checkpoint(dir / "dcm.ckpt")) == dcm);
}

TEST_CASE("full-size DRM checkpoint round trip") {
  const auto dir = testing::temp_dir("ckpt_full");
  const auto drm = make_drm<float>(9);
  save_checkpoint(dir / "drm.ckpt", to_checkpoint(drm, 9, 0));
  CHECK(drm_from_checkpoint<float>(load_checkpoint(dir / "drm.ckpt")) == drm);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = testing::temp_dir("ckpt_bad");
  std::ofstream(dir / "x.ckpt") << "garbage";
  CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), FormatError);
  Checkpoint c = to_checkpoint(make_drm<float>(1, testing::tiny_widths()), 1, 0);
  c.tensors.pop_back();
  save_checkpoint(dir / "y.ckpt", c);
  CHECK_THROWS_AS(drm_from_checkpoint<float>(load_checkpoint(dir / "y.ckpt")), FormatError);
}

TEST_CASE("config parsing covers sections, ranges and seeds") {
  const auto cfg = parse_run_config(
      "seed = 7\n"
      "[synth]\nimage_height = 64\nimage_width = 64\ncell_count_range = 10, 25\n"
      "[shift]\nintensity_invert = true\n"
      "[train]\nlearning_rate = 0.01\nseed = 99\n"
      "[adapt]\ncrop_size = 64\n");
  CHECK(cfg.synth.image_height == 64);
  CHECK(cfg.synth.cell_count_range.low == 10);
  CHECK(cfg.synth.cell_count_range.high == 25);
  CHECK(cfg.shift.intensity_invert);
  CHECK(cfg.train.learning_rate == 0.01);
  CHECK(cfg.adapt.crop_size == 64);
  CHECK(cfg.synth.seed == 7);
  CHECK(cfg.shift.seed == 108);
  CHECK(cfg.train.seed == 99);
  CHECK(cfg.adapt.seed == 310);
  CHECK(cfg.adapt.optimizer == OptimizerKind::sgd);
  const auto rms = parse_run_config("[adapt]\noptimizer = rmsprop\nrmsprop_decay = 0.9\n");
  CHECK(rms.adapt.optimizer == OptimizerKind::rmsprop);
  CHECK(rms.adapt.rmsprop_decay == 0.9);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_run_config("[synth]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[train]\nepochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[synth]\ncell_count_range = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[adapt]\noptimizer = adam\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[adapt]\nrmsprop_decay = 1\n").validate(), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.ini"), ConfigError);
  RunConfig cfg;
  set_config_value(cfg, "kernel.sigma", "2.5");
  CHECK(cfg.kernel.sigma == 2.5);
  CHECK_THROWS_AS(set_config_value(cfg, "kernel.nope", "1"), ConfigError);
}

TEST_CASE("config key values round trip through the parser") {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.synth.cell_count_range = {4, 9};
  cfg.adapt.weight_clip = 0.05;
  cfg.resolve_seeds();
  std::string text;
  for (const auto& [k, v] : config_key_values(cfg)) {
    if (k.find("paths.") == 0 && v.empty()) continue;
    text += k + " = " + v + "\n";
  }
  // Flat "section.key" lines are accepted too.
  const auto back = parse_run_config(text);
  CHECK(config_key_values(back) == config_key_values(cfg));
}

TEST_CASE("manifest round trip") {
  const auto dir = testing::temp_dir("manifest");
  io::KeyValues kv{{"a", "1"}, {"synth.cell_count_range", "10, 25"}};
  io::write_manifest(dir / "m.txt", kv);
  CHECK(io::read_manifest(dir / "m.txt") == kv);
}

TEST_CASE("dataset directories round trip images, centroids and densities") {
  const auto dir = testing::temp_dir("dataset");
  const auto imgs = generate_annotated(testing::small_synth(4), 3);
  write_dataset(dir, imgs, KernelConfig{}, {{"seed", "4"}});
  const auto ds = load_dataset(dir);
  REQUIRE(ds.samples.size() == 3);
  CHECK(ds.manifest.at("count") == "3");
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(ds.samples[k].id == sample_id(k));
    CHECK(*ds.samples[k].centroids == imgs[k].centroids);
    CHECK(ds.samples[k].density->rows() == 32);
  }
  CHECK_THROWS_AS(load_dataset(dir / "missing"), UsageError);
}
