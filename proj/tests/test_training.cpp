#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cellcount/synthgen.hpp"
#include "cellcount/training.hpp"
#include "test_helpers.hpp"

using namespace cellcount;

namespace {

std::vector<TrainingSample> toy_set(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::vector<TrainingSample> out;
  for (const auto& a : generate_annotated(testing::small_synth(seed, side), n)) {
    out.push_back({a.image, build_density_map(side, side, a.centroids, {})});
  }
  return out;
}

}  // namespace

TEST_CASE("batch_mse of a single 1x1 map") {
  std::vector<Grid<float>> pred{Grid<float>(1, 1, 0.5f)};
  std::vector<DensityMap> target{DensityMap(1, 1, 2.0)};
  CHECK(batch_mse(pred, target) == 2.25);
}

TEST_CASE("batch_mse of two 2x2 maps matches a scalar loop") {
  std::vector<Grid<double>> pred{Grid<double>(2, 2), Grid<double>(2, 2)};
  std::vector<DensityMap> target{DensityMap(2, 2), DensityMap(2, 2)};
  const double p[2][4] = {{0.1, -0.3, 0.7, 2.0}, {1.0, 1.5, -2.0, 0.0}};
  const double t[2][4] = {{0.0, 0.2, 0.5, 1.0}, {0.25, 1.0, 0.0, 3.0}};
  double oracle = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 4; ++k) {
      pred[static_cast<std::size_t>(b)].values()[static_cast<std::size_t>(k)] = p[b][k];
      target[static_cast<std::size_t>(b)].values()[static_cast<std::size_t>(k)] = t[b][k];
      oracle += (t[b][k] - p[b][k]) * (t[b][k] - p[b][k]);
    }
  oracle /= 2.0;
  CHECK(batch_mse(pred, target) == Catch::Approx(oracle).epsilon(1e-15));
}

TEST_CASE("mse_loss is zero when targets equal the model's own predictions") {
  const auto drm = make_drm<float>(1, testing::tiny_widths());
  auto data = toy_set(3, 32, 1);
  for (auto& s : data) {
    const auto pred = drm_forward(drm, s.image);
    for (std::size_t k = 0; k < pred.size(); ++k) s.density.values()[k] = pred.values()[k];
  }
  CHECK(mse_loss(drm, data) == 0.0);
}

TEST_CASE("mse_loss on a zero-output model equals the mean squared target norm") {
  auto drm = make_drm<double>(2, testing::tiny_widths());
  testing::zero_params(drm.decoder);
  const auto data = toy_set(4, 32, 2);
  double oracle = 0.0;
  for (const auto& s : data)
    for (double v : s.density.values()) oracle += v * v;
  oracle /= 4.0;
  CHECK(mse_loss(drm, data) == Catch::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("momentum SGD with mu = 0 is plain gradient descent") {
  auto net = build_network<double>("n", 1, {LayerSpec::conv("a", 2, 3, Activation::relu)}, 3);
  auto grads = zeros_like(net.params);
  Rng rng(1);
  for (auto& p : grads)
    for (auto& w : p.weight) w = rng.uniform(-1.0, 1.0);
  const auto before = net;
  MomentumSgd<double> opt(0.1, 0.0);
  opt.step(net, grads);
  for (std::size_t k = 0; k < net.params[0].weight.size(); ++k) {
    CHECK(net.params[0].weight[k] ==
          Catch::Approx(before.params[0].weight[k] - 0.1 * grads[0].weight[k]).epsilon(1e-15));
  }
}

TEST_CASE("momentum accumulates velocity") {
  auto net = build_network<double>("n", 1, {LayerSpec::fully_connected("f", 1, Activation::linear)}, 1);
  net.params[0].weight = {0.0};
  auto grads = zeros_like(net.params);
  grads[0].weight = {1.0};
  MomentumSgd<double> opt(0.5, 0.9);
  opt.step(net, grads);  // v = -0.5
  opt.step(net, grads);  // v = -0.45 - 0.5
  CHECK(net.params[0].weight[0] == Catch::Approx(-0.5 - 0.95).epsilon(1e-15));
}

TEST_CASE("RMSProp steps by lr * g / sqrt(s) with a decaying square average") {
  auto net = build_network<double>("n", 1, {LayerSpec::fully_connected("f", 1, Activation::linear)}, 1);
  net.params[0].weight = {0.0};
  net.params[0].bias = {0.0};
  auto grads = zeros_like(net.params);
  grads[0].weight = {2.0};
  RmsProp<double> opt(0.1, 0.99, 1e-8);
  opt.step(net, grads);  // s = 0.04
  CHECK(net.params[0].weight[0] == Catch::Approx(-0.2 / (0.2 + 1e-8)).epsilon(1e-14));
  CHECK(net.params[0].bias[0] == 0.0);  // zero gradient, zero step
  opt.step(net, grads);  // s = 0.0796
  CHECK(net.params[0].weight[0] ==
        Catch::Approx(-0.2 / (0.2 + 1e-8) - 0.2 / (std::sqrt(0.0796) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("one full-batch epoch with mu = 0 equals a manual gradient step") {
  const auto init = make_drm<double>(4, testing::tiny_widths());
  const auto data = toy_set(4, 16 + 16, 4);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.0;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.validation_fraction = 0.0;
  cfg.micro_batch = 4;
  const auto trained = train_source_drm<double>(data, cfg, init);

  ParamSet<double> ge, gd;
  drm_loss_and_gradient(init, data, ge, gd);
  auto manual = init;
  for (std::size_t l = 0; l < ge.size(); ++l)
    for (std::size_t k = 0; k < ge[l].weight.size(); ++k)
      manual.encoder.params[l].weight[k] -= 0.05 * ge[l].weight[k];
  for (std::size_t l = 0; l < gd.size(); ++l)
    for (std::size_t k = 0; k < gd[l].weight.size(); ++k)
      manual.decoder.params[l].weight[k] -= 0.05 * gd[l].weight[k];
  for (std::size_t l = 0; l < gd.size(); ++l)
    for (std::size_t k = 0; k < gd[l].weight.size(); ++k)
      REQUIRE(trained.params.decoder.params[l].weight[k] ==
              Catch::Approx(manual.decoder.params[l].weight[k]).margin(1e-12));
  for (std::size_t l = 0; l < ge.size(); ++l)
    for (std::size_t k = 0; k < ge[l].weight.size(); ++k)
      REQUIRE(trained.params.encoder.params[l].weight[k] ==
              Catch::Approx(manual.encoder.params[l].weight[k]).margin(1e-12));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto init = make_drm<float>(5, testing::tiny_widths());
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  const auto r = train_source_drm<float>(toy_set(5, 32, 5), cfg, init);
  CHECK(r.params == init);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = toy_set(6, 32, 6);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 2;
  cfg.epochs = 3;
  cfg.seed = 17;
  cfg.target_scale = 10.0;
  const auto a = train_source_drm<float>(data, cfg, make_drm<float>(7, testing::tiny_widths()));
  const auto b = train_source_drm<float>(data, cfg, make_drm<float>(7, testing::tiny_widths()));
  CHECK(a.report == b.report);
  CHECK(a.params == b.params);
}

TEST_CASE("training loss drops by half within ten epochs on a toy set") {
  const auto data = toy_set(5, 32, 8);
  TrainConfig cfg;
  cfg.learning_rate = 3e-4;
  cfg.momentum = 0.9;
  cfg.batch_size = 5;
  cfg.epochs = 10;
  cfg.validation_fraction = 0.0;
  const auto r = train_source_drm<float>(data, cfg, make_drm<float>(8, {{8, 8, 8, 16}, {8, 8, 8, 1}}));
  const auto& loss = r.report.train_loss;
  INFO("first " << loss.front() << " last " << loss.back());
  CHECK(*std::min_element(loss.begin(), loss.end()) <= 0.5 * loss.front());
}

TEST_CASE("best validation MSE is the minimum over epochs") {
  const auto data = toy_set(10, 32, 9);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 4;
  cfg.epochs = 5;
  cfg.target_scale = 100.0;
  const auto r = train_source_drm<float>(data, cfg, make_drm<float>(9, testing::tiny_widths()));
  REQUIRE(r.report.val_mse.size() == 5);
  CHECK(r.report.validation_size == 2);
  CHECK(r.report.best_validation_mse == *std::min_element(r.report.val_mse.begin(), r.report.val_mse.end()));
  CHECK(r.report.best_validation_mse <= r.report.val_mse.back());
  CHECK(r.report.val_mse[r.report.best_epoch - 1] == r.report.best_validation_mse);
}

TEST_CASE("returned model has the best validation MSE in raw density units") {
  const auto data = toy_set(10, 32, 10);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 4;
  cfg.epochs = 4;
  cfg.target_scale = 100.0;
  const auto r = train_source_drm<float>(data, cfg, make_drm<float>(10, testing::tiny_widths()));
  const auto [train, val] = split_indices(data.size(), cfg.validation_fraction, cfg.seed);
  std::vector<TrainingSample> vs;
  for (auto i : val) vs.push_back(data[i]);
  CHECK(mse_loss(r.params, vs) == Catch::Approx(r.report.best_validation_mse).epsilon(1e-4));
}

TEST_CASE("split is a deterministic partition") {
  const auto [a, b] = split_indices(200, 0.2, 3);
  CHECK(a.size() == 160);
  CHECK(b.size() == 40);
  std::vector<std::size_t> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 200; ++i) CHECK(all[i] == i);
  CHECK(split_indices(200, 0.2, 3) == split_indices(200, 0.2, 3));
}

TEST_CASE("divergence names the epoch and learning rate") {
  TrainConfig cfg;
  cfg.learning_rate = 1e12;
  cfg.momentum = 0.0;
  cfg.batch_size = 2;
  cfg.epochs = 20;
  cfg.target_scale = 100.0;
  try {
    train_source_drm<float>(toy_set(4, 32, 11), cfg, make_drm<float>(11, testing::tiny_widths()));
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("batch larger than the training split is a config error") {
  TrainConfig cfg;
  cfg.batch_size = 100;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_source_drm<float>(toy_set(5, 32, 12), cfg,
                                          make_drm<float>(12, testing::tiny_widths())),
                  ConfigError);
}

TEST_CASE("mismatched image and map shapes are rejected") {
  auto data = toy_set(3, 32, 13);
  data[1].density = DensityMap(16, 16);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_source_drm<float>(data, cfg, make_drm<float>(13, testing::tiny_widths())),
                  DataError);
}

TEST_CASE("folding the output scale divides predictions") {
  auto drm = make_drm<double>(14, testing::tiny_widths());
  drm.decoder.params.back().bias = {0.3};
  const Image img = generate_annotated(testing::small_synth(14), 1).front().image;
  const auto before = drm_forward(drm, img);
  fold_output_scale(drm, 4.0);
  const auto after = drm_forward(drm, img);
  for (std::size_t k = 0; k < before.size(); ++k)
    REQUIRE(after.values()[k] == Catch::Approx(before.values()[k] / 4.0).margin(1e-12));
}
