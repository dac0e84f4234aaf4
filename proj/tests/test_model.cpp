#include <catch2/catch_amalgamated.hpp>

#include "cellcount/model.hpp"
#include "cellcount/synthgen.hpp"
#include "test_helpers.hpp"

using namespace cellcount;

namespace {

Image random_image(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Image img(rows, cols);
  Rng rng(seed);
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("256x256 input encodes to 32x32x512 and decodes to 256x256") {
  const auto drm = make_drm<float>(1);
  const auto feats = encode(drm.encoder, random_image(256, 256, 1));
  CHECK(feats.channels == 512);
  CHECK(feats.height == 32);
  CHECK(feats.width == 32);
  const auto map = decode(drm.decoder, feats);
  CHECK(map.channels == 1);
  CHECK(map.height == 256);
  CHECK(map.width == 256);
}

TEST_CASE("512x512 input encodes to 64x64x512") {
  const auto drm = make_drm<float>(2);
  const auto feats = encode(drm.encoder, random_image(512, 512, 2));
  CHECK(feats.channels == 512);
  CHECK(feats.height == 64);
  CHECK(feats.width == 64);
}

TEST_CASE("decode(encode(x)) has the input shape for several sizes") {
  const auto drm = make_drm<float>(3);
  for (std::size_t side : {64u, 128u, 256u}) {
    const auto out = drm_forward(drm, random_image(side, side / 2 + 8 * (side == 64), side));
    CHECK(out.rows() == side);
    CHECK(out.cols() == side / 2 + 8 * (side == 64));
  }
}

TEST_CASE("non-divisible input raises ShapeError naming the stride") {
  const auto drm = make_drm<float>(4, testing::tiny_widths());
  try {
    encode(drm.encoder, Image(30, 32));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("divisible by 8") != std::string::npos);
  }
}

TEST_CASE("zero image through zero-bias encoder gives zero features") {
  const auto drm = make_drm<float>(5);
  const auto feats = encode(drm.encoder, Image(64, 64, 0.0f));
  for (float v : feats.data) REQUIRE(v == 0.0f);
}

TEST_CASE("zero-parameter decoder maps any features to an all-zero map") {
  auto drm = make_drm<float>(6);
  testing::zero_params(drm.decoder);
  const auto out = drm_forward(drm, random_image(64, 64, 6));
  for (float v : out.values()) REQUIRE(v == 0.0f);
}

TEST_CASE("parameter audit follows the kernel plan") {
  const auto drm = make_drm<float>(7);
  using V = std::vector<std::size_t>;
  const std::vector<V> enc{{32, 1, 3, 3}, {}, {64, 32, 3, 3}, {}, {128, 64, 3, 3}, {},
                           {512, 128, 3, 3}};
  const std::vector<V> dec{{}, {128, 512, 3, 3}, {}, {64, 128, 3, 3}, {},
                           {32, 64, 3, 3}, {1, 32, 1, 1}};
  REQUIRE(drm.encoder.params.size() == enc.size());
  REQUIRE(drm.decoder.params.size() == dec.size());
  for (std::size_t l = 0; l < enc.size(); ++l) CHECK(drm.encoder.params[l].weight_shape == enc[l]);
  for (std::size_t l = 0; l < dec.size(); ++l) CHECK(drm.decoder.params[l].weight_shape == dec[l]);
  CHECK(drm.encoder.plan.back().activation == Activation::relu);
  CHECK(drm.decoder.plan.back().activation == Activation::linear);
  for (std::size_t l = 0; l + 1 < drm.decoder.plan.size(); ++l) {
    if (drm.decoder.plan[l].kind == LayerKind::conv) {
      CHECK(drm.decoder.plan[l].activation == Activation::relu);
    }
  }
  const std::size_t expected_encoder = 32 * 9 + 32 + 64 * 32 * 9 + 64 + 128 * 64 * 9 + 128 +
                                       512 * 128 * 9 + 512;
  CHECK(drm.encoder.parameter_count() == expected_encoder);
}

TEST_CASE("critic plan is conv128, conv256, GAP, FC256, dropout, scalar head") {
  const auto dcm = make_dcm<float>(1);
  const auto& p = dcm.critic.plan;
  REQUIRE(p.size() == 6);
  CHECK(dcm.critic.params[0].weight_shape == std::vector<std::size_t>{128, 512, 3, 3});
  CHECK(dcm.critic.params[1].weight_shape == std::vector<std::size_t>{256, 128, 3, 3});
  CHECK(p[2].kind == LayerKind::avgpool_global);
  CHECK(dcm.critic.params[3].weight_shape == std::vector<std::size_t>{256, 256});
  CHECK(p[4].kind == LayerKind::dropout);
  CHECK(p[4].rate == 0.5);
  CHECK(dcm.critic.params[5].weight_shape == std::vector<std::size_t>{1, 256});
  CHECK(p[5].activation == Activation::linear);
}

TEST_CASE("DAM initialized from an ECNN computes identical features") {
  const auto drm = make_drm<float>(8);
  const auto dam = make_dam_from(drm.encoder);
  CHECK(dam.encoder == drm.encoder);
  const auto img = random_image(64, 64, 8);
  CHECK(encode(dam.encoder, img) == encode(drm.encoder, img));
}

TEST_CASE("critic on zero features with zero biases is zero") {
  const auto dcm = make_dcm<float>(9);
  const auto out = critic_forward(dcm, FeatureMap<float>(512, 3, 4, 4, 0.0f), false);
  REQUIRE(out.size() == 3);
  for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("critic eval is deterministic and train-mode dropout is seeded") {
  const auto drm = make_drm<float>(10);
  const auto dcm = make_dcm<float>(10);
  std::vector<Image> imgs{random_image(64, 64, 1), random_image(64, 64, 2)};
  const auto feats = encode(drm.encoder, stack_images<float>(imgs));
  CHECK(critic_forward(dcm, feats, false) == critic_forward(dcm, feats, false));
  Rng a(5), b(5);
  const auto ta = critic_forward(dcm, feats, true, &a);
  const auto tb = critic_forward(dcm, feats, true, &b);
  CHECK(ta == tb);
  CHECK(ta != critic_forward(dcm, feats, false));
}

TEST_CASE("batched and single-image passes agree") {
  const auto drm = make_drm<float>(11);
  std::vector<Image> imgs{random_image(32, 32, 3), random_image(32, 32, 4)};
  const auto batched = drm_forward(drm, stack_images<float>(imgs));
  for (std::size_t b = 0; b < 2; ++b) {
    const auto single = drm_forward(drm, imgs[b]);
    const auto slice = unstack<float>(batched, b);
    for (std::size_t k = 0; k < single.size(); ++k) {
      REQUIRE(slice.values()[k] == Catch::Approx(single.values()[k]).margin(1e-5));
    }
  }
}

TEST_CASE("architecture description differs between widths") {
  CHECK(describe_architecture(make_drm<float>(1).encoder) ==
        describe_architecture(make_drm<float>(2).encoder));
  CHECK(describe_architecture(make_drm<float>(1).encoder) !=
        describe_architecture(make_drm<float>(1, testing::tiny_widths()).encoder));
}
