#include <catch2/catch_amalgamated.hpp>

#include "cellcount/synthgen.hpp"
#include "test_helpers.hpp"

using namespace cellcount;

TEST_CASE("default protocol produces 200 images of 256x256") {
  SynthConfig cfg;
  cfg.seed = 11;
  const auto images = generate_annotated(cfg, 200);
  REQUIRE(images.size() == 200);
  for (const auto& a : images) {
    REQUIRE(a.image.rows() == 256);
    REQUIRE(a.image.cols() == 256);
    REQUIRE(cfg.cell_count_range.contains(static_cast<int>(a.centroids.size())));
    REQUIRE(a.domain_tag == Domain::source);
  }
}

TEST_CASE("zero-cell config renders background and noise only") {
  SynthConfig cfg = testing::small_synth(3, 64);
  cfg.cell_count_range = {0, 0};
  const auto a = generate_annotated(cfg, 1).front();
  CHECK(a.centroids.empty());
  double mean = 0.0;
  for (float v : a.image.values()) mean += v;
  mean /= static_cast<double>(a.image.size());
  CHECK(mean == Catch::Approx(cfg.background_level).margin(0.01));
}

TEST_CASE("generation is deterministic for a fixed seed") {
  SynthConfig cfg = testing::small_synth(7, 64);
  const auto a = generate_annotated(cfg, 5);
  const auto b = generate_annotated(cfg, 5);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].image == b[k].image);
    CHECK(a[k].centroids == b[k].centroids);
  }
  cfg.seed = 8;
  const auto c = generate_annotated(cfg, 1);
  CHECK_FALSE(c[0].image == a[0].image);
}

TEST_CASE("image k uses the stream base_seed + k") {
  SynthConfig cfg = testing::small_synth(40, 64);
  const auto batch = generate_annotated(cfg, 3);
  cfg.seed = 42;
  const auto single = generate_annotated(cfg, 1);
  CHECK(single[0].image == batch[2].image);
}

TEST_CASE("synthetic images respect range, bounds and spacing invariants") {
  SynthConfig cfg = testing::small_synth(0, 64);
  cfg.cell_count_range = {10, 25};
  cfg.min_centroid_margin = 4.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed * 1000;
    const auto a = generate_annotated(cfg, 1).front();
    REQUIRE(cfg.cell_count_range.contains(static_cast<int>(a.centroids.size())));
    for (float v : a.image.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    for (std::size_t i = 0; i < a.centroids.size(); ++i) {
      const auto& p = a.centroids[i];
      REQUIRE((p.x >= 0 && p.x < 64 && p.y >= 0 && p.y < 64));
      for (std::size_t j = i + 1; j < a.centroids.size(); ++j) {
        const double dx = static_cast<double>(p.x - a.centroids[j].x);
        const double dy = static_cast<double>(p.y - a.centroids[j].y);
        REQUIRE(std::sqrt(dx * dx + dy * dy) >= cfg.min_centroid_margin);
      }
    }
  }
}

TEST_CASE("cells are brighter than the background") {
  SynthConfig cfg = testing::small_synth(5, 64);
  cfg.noise_std = 0.0;
  const auto a = generate_annotated(cfg, 1).front();
  for (const auto& c : a.centroids) {
    CHECK(a.image(static_cast<std::size_t>(c.y), static_cast<std::size_t>(c.x)) >
          cfg.background_level + 0.2);
  }
}

TEST_CASE("infeasible placement names the margin constraint") {
  SynthConfig cfg = testing::small_synth(1, 32);
  cfg.cell_count_range = {200, 200};
  cfg.min_centroid_margin = 10.0;
  REQUIRE_THROWS_AS(generate_annotated(cfg, 1), PlacementError);
  try {
    generate_annotated(cfg, 1);
  } catch (const PlacementError& e) {
    CHECK(std::string(e.what()).find("min_centroid_margin") != std::string::npos);
  }
}

TEST_CASE("invalid synth configs are rejected") {
  SynthConfig cfg;
  cfg.cell_count_range = {5, 1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.cell_eccentricity_range = {0.0, 1.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.peak_intensity_range = {0.0, 1.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.image_height = 16;
  cfg.image_width = 16;
  CHECK_THROWS_AS(cfg.validate_for(KernelConfig{}), ConfigError);
}

TEST_CASE("identity shift leaves the image bitwise unchanged") {
  const auto a = generate_annotated(testing::small_synth(9, 64), 1).front();
  const auto b = apply_shift(a, ShiftConfig::identity());
  CHECK(b.image == a.image);
  CHECK(b.centroids == a.centroids);
  CHECK(b.domain_tag == Domain::target);
}

TEST_CASE("shift intensity transforms are analytic") {
  AnnotatedImage flat{Image(8, 8, 0.3f), {{1, 1}}, Domain::source};
  ShiftConfig inv = ShiftConfig::identity();
  inv.intensity_invert = true;
  const auto inverted = apply_shift(flat, inv);
  for (float v : inverted.image.values()) CHECK(v == static_cast<float>(1.0 - 0.3f));

  AnnotatedImage half{Image(8, 8, 0.5f), {}, Domain::source};
  ShiftConfig gamma = ShiftConfig::identity();
  gamma.gamma = 2.0;
  const auto squared = apply_shift(half, gamma);
  for (float v : squared.image.values()) CHECK(v == 0.25f);

  ShiftConfig contrast = ShiftConfig::identity();
  contrast.contrast_scale = 0.5;
  const auto scaled = apply_shift(half, contrast);
  for (float v : scaled.image.values()) CHECK(v == 0.25f);
}

TEST_CASE("default shift preserves centroids and range, and darkens cells") {
  const auto src = generate_annotated(testing::small_synth(21, 64), 4);
  const auto tgt = apply_shift(src, ShiftConfig{});
  for (std::size_t k = 0; k < src.size(); ++k) {
    CHECK(tgt[k].centroids == src[k].centroids);
    double s = 0.0, t = 0.0;
    for (std::size_t p = 0; p < src[k].image.size(); ++p) {
      const float v = tgt[k].image.values()[p];
      REQUIRE((v >= 0.0f && v <= 1.0f));
      s += src[k].image.values()[p];
      t += v;
    }
    CHECK(t < s);
  }
}

TEST_CASE("invalid shift configs are rejected") {
  ShiftConfig s;
  s.gamma = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ShiftConfig{};
  s.contrast_scale = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
