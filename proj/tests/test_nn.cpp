#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "dentnet/checkpoint.hpp"
#include "dentnet/damage_cnn.hpp"
#include "dentnet/grad_check.hpp"
#include "dentnet/loss.hpp"
#include "dentnet/network.hpp"
#include "dentnet/optimizer.hpp"
#include "test_support.hpp"

using namespace dentnet;
using testsupport::TempDir;

namespace {

Tensor random_batch(Shape shape, Prng& rng, double lo = -0.5, double hi = 0.5) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// In-features for a dense layer following the given stack on this input.
std::size_t flat_after(const Network& net) { return shape_numel(net.output_shape()); }

}  // namespace

TEST_CASE("gradient check: dense relu softmax") {
  Network net({10}, 3);
  net.add(std::make_unique<DenseLayer>(10, 8));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<DenseLayer>(8, 3));
  net.add(std::make_unique<SoftmaxLayer>());
  Prng rng(1);
  net.init_params(rng);
  const Tensor batch = random_batch({5, 10}, rng);
  const double err = grad_check(net, batch, {0, 2, 1, 1, 0}, 1e-5);
  INFO("max relative error " << err);
  REQUIRE(err < 1e-4);
}

TEST_CASE("gradient check: conv stack") {
  Network net({6, 6, 2}, 4);
  net.add(std::make_unique<Conv2dLayer>(3, 2, 3));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<DenseLayer>(flat_after(net), 4));
  net.add(std::make_unique<SoftmaxLayer>());
  Prng rng(2);
  net.init_params(rng);
  const Tensor batch = random_batch({3, 6, 6, 2}, rng);
  const double err = grad_check(net, batch, {3, 0, 2}, 1e-5);
  INFO("max relative error " << err);
  REQUIRE(err < 1e-4);
}

TEST_CASE("gradient check: conv pool stack") {
  Network net({6, 6, 2}, 4);
  net.add(std::make_unique<Conv2dLayer>(3, 2, 3));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<MaxPoolLayer>(2, 2));
  net.add(std::make_unique<DenseLayer>(flat_after(net), 4));
  net.add(std::make_unique<SoftmaxLayer>());
  Prng rng(3);
  net.init_params(rng);
  const Tensor batch = random_batch({3, 6, 6, 2}, rng);
  const double err = grad_check(net, batch, {1, 2, 3}, 1e-5);
  INFO("max relative error " << err);
  REQUIRE(err < 1e-4);
}

TEST_CASE("gradient check: dropout layers with fixed masks") {
  Network net({6, 6, 2}, 3);
  net.add(std::make_unique<Conv2dLayer>(3, 2, 4));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<MaxPoolLayer>(2, 2));
  net.add(std::make_unique<DropoutLayer>(0.25));
  net.add(std::make_unique<DenseLayer>(flat_after(net), 16));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<DropoutLayer>(0.5));
  net.add(std::make_unique<DenseLayer>(16, 3));
  net.add(std::make_unique<SoftmaxLayer>());
  Prng rng(4);
  net.init_params(rng);
  const Tensor batch = random_batch({4, 6, 6, 2}, rng);
  const double err = grad_check(net, batch, {0, 1, 2, 0}, 1e-5);
  INFO("max relative error " << err);
  REQUIRE(err < 1e-4);
}

TEST_CASE("gradient check: two-block classifier on 16x16") {
  CnnConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.channels = 3;
  cfg.classes = 5;
  cfg.conv_blocks = 2;
  cfg.filters = 4;
  cfg.fc_units = 32;
  Network net = build_damage_cnn(cfg);
  Prng rng(5);
  net.init_params(rng);
  const Tensor batch = random_batch({2, 16, 16, 3}, rng, 0.0, 1.0);
  const double err = grad_check(net, batch, {4, 1}, 1e-5, 30);
  INFO("max relative error " << err);
  REQUIRE(err < 1e-4);
}

TEST_CASE("parameter budget of the full-size classifier") {
  CnnConfig cfg;  // defaults: 224x224x3, 8 classes
  Network net = build_damage_cnn(cfg);
  REQUIRE(net.param_count() == 423032);

  CnnConfig small = cfg;
  small.height = small.width = 32;
  REQUIRE(build_damage_cnn(small).param_count() == 29816);

  CnnConfig two = cfg;
  two.classes = 2;
  REQUIRE(build_damage_cnn(two).param_count() == 422258);
}

TEST_CASE("parameter count matches the closed form on random topologies") {
  Prng rng(77);
  for (int iter = 0; iter < 25; ++iter) {
    CnnConfig cfg;
    cfg.conv_blocks = 1 + rng.next_below(4);
    const std::size_t unit = std::size_t{1} << cfg.conv_blocks;
    cfg.height = unit * (1 + rng.next_below(4));
    cfg.width = unit * (1 + rng.next_below(4));
    cfg.channels = 1 + rng.next_below(3);
    cfg.classes = 2 + rng.next_below(7);
    cfg.filters = 1 + rng.next_below(12);
    cfg.kernel = 1 + 2 * rng.next_below(3);  // 1, 3 or 5
    cfg.fc_units = 1 + rng.next_below(100);
    cfg.validate();

    const std::size_t k2 = cfg.kernel * cfg.kernel;
    const std::size_t flat =
        (cfg.height >> cfg.conv_blocks) * (cfg.width >> cfg.conv_blocks) * cfg.filters;
    std::size_t want = k2 * cfg.channels * cfg.filters + cfg.filters;
    want += (cfg.conv_blocks - 1) * (k2 * cfg.filters * cfg.filters + cfg.filters);
    want += flat * cfg.fc_units + cfg.fc_units;
    want += cfg.fc_units * cfg.classes + cfg.classes;
    REQUIRE(build_damage_cnn(cfg).param_count() == want);
  }
}

TEST_CASE("classifier stack layout") {
  CnnConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.conv_blocks = 2;
  Network net = build_damage_cnn(cfg);
  std::vector<std::string> kinds;
  for (const auto& l : net.layers()) kinds.push_back(l->kind());
  const std::vector<std::string> want = {"conv", "relu",    "maxpool", "dropout", "conv",
                                         "relu", "maxpool", "dropout", "fc",      "relu",
                                         "dropout", "fc",   "softmax"};
  REQUIRE(kinds == want);

  CnnConfig lean = cfg;
  lean.conv_dropout = 0.0;
  lean.fc_dropout = 0.0;
  Network lean_net = build_damage_cnn(lean);
  std::vector<std::string> lean_kinds;
  for (const auto& l : lean_net.layers()) lean_kinds.push_back(l->kind());
  const std::vector<std::string> lean_want = {"conv", "relu", "maxpool", "conv", "relu",
                                              "maxpool", "fc", "relu",   "fc",   "softmax"};
  REQUIRE(lean_kinds == lean_want);

  CnnConfig bad = cfg;
  bad.height = 20;  // 20 -> 10 -> 5 pools fine, but a third block would not
  bad.conv_blocks = 3;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("softmax rows are stable probability vectors") {
  SoftmaxLayer sm;
  Tensor logits({2, 3}, {1000.0, 999.0, -1000.0, 0.0, 0.0, 0.0});
  const Tensor p = sm.forward(logits, Mode::Eval, nullptr);
  for (std::size_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      REQUIRE(std::isfinite(p(i, j)));
      REQUIRE(p(i, j) >= 0.0);
      sum += p(i, j);
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
  }
  REQUIRE(p(0, 0) > p(0, 1));
  REQUIRE(p(0, 2) < 1e-200);
  REQUIRE(p(1, 0) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("cross entropy examples") {
  Tensor p1({1, 2}, {0.5, 0.5});
  REQUIRE(cross_entropy(p1, {0}) == Catch::Approx(std::log(2.0)).margin(1e-12));

  Tensor p2({2, 2}, {0.5, 0.5, 0.25, 0.75});
  // Mean of ln 2 and ln 4.
  REQUIRE(cross_entropy(p2, {0, 0}) ==
          Catch::Approx((std::log(2.0) + std::log(4.0)) / 2.0).margin(1e-12));

  Tensor p3({1, 2}, {0.0, 1.0});
  REQUIRE(std::isfinite(cross_entropy(p3, {0})));  // clamped, not -inf
  REQUIRE_THROWS_AS(cross_entropy(p1, {0, 1}), std::invalid_argument);
  REQUIRE_THROWS_AS(cross_entropy(p1, {2}), std::invalid_argument);
}

TEST_CASE("mse examples") {
  Tensor a({2, 2}, {1, 2, 3, 5});
  REQUIRE(mse(a, a) == 0.0);
  Tensor b({2, 2}, {2, 2, 3, 1});
  REQUIRE(mse(a, b) == Catch::Approx((1.0 + 0.0 + 0.0 + 16.0) / 4.0));
  REQUIRE_THROWS_AS(mse(a, Tensor({3})), std::invalid_argument);
}

TEST_CASE("argmax rows breaks ties toward the lower index") {
  Tensor p({3, 3}, {0.2, 0.5, 0.3,
                    0.4, 0.4, 0.2,
                    0.1, 0.2, 0.7});
  REQUIRE(argmax_rows(p) == std::vector<int>{1, 0, 2});
}

TEST_CASE("sgd momentum follows the update rule exactly") {
  Tensor w({2}), g({2});
  w[0] = 1.0;
  w[1] = -2.0;
  g[0] = 0.5;
  g[1] = -1.0;
  std::vector<NamedParam> params = {{0, "fc", {"weights", &w, &g}}};
  SgdMomentum sgd(0.1, 0.9);
  sgd.step(params);
  // v1 = -lr*g; w = w + v1
  REQUIRE(w[0] == Catch::Approx(0.95).margin(1e-15));
  REQUIRE(w[1] == Catch::Approx(-1.9).margin(1e-15));
  sgd.step(params);
  // v2 = mu*v1 - lr*g
  REQUIRE(w[0] == Catch::Approx(0.95 - 0.045 - 0.05).margin(1e-15));
  REQUIRE(w[1] == Catch::Approx(-1.9 + 0.09 + 0.1).margin(1e-15));

  g[0] = std::nan("");
  REQUIRE_THROWS_AS(sgd.step(params), std::runtime_error);

  SgdMomentum plain(0.5, 0.0);
  Tensor w2({1}), g2({1});
  w2[0] = 2.0;
  g2[0] = 1.0;
  std::vector<NamedParam> p2 = {{0, "fc", {"weights", &w2, &g2}}};
  plain.step(p2);
  plain.step(p2);
  REQUIRE(w2[0] == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("init draws stay inside the fan bound and zero the biases") {
  Network net({8, 8, 3}, 2);
  net.add(std::make_unique<Conv2dLayer>(3, 3, 4));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<DenseLayer>(8 * 8 * 4, 2));
  net.add(std::make_unique<SoftmaxLayer>());
  Prng rng(9);
  net.init_params(rng);

  const double conv_bound = std::sqrt(6.0 / (9.0 * 3.0 + 9.0 * 4.0));
  const double fc_bound = std::sqrt(6.0 / (8 * 8 * 4 + 2));
  for (auto& p : net.params()) {
    const double bound = p.layer_kind == "conv" ? conv_bound : fc_bound;
    if (p.ref.name == "bias") {
      for (std::size_t i = 0; i < p.ref.value->size(); ++i) REQUIRE((*p.ref.value)[i] == 0.0);
    } else {
      bool nonzero = false;
      for (std::size_t i = 0; i < p.ref.value->size(); ++i) {
        REQUIRE(std::abs((*p.ref.value)[i]) <= bound);
        nonzero = nonzero || (*p.ref.value)[i] != 0.0;
      }
      REQUIRE(nonzero);
    }
  }

  // Same seed, same draws.
  Network again({8, 8, 3}, 2);
  again.add(std::make_unique<Conv2dLayer>(3, 3, 4));
  again.add(std::make_unique<ReluLayer>());
  again.add(std::make_unique<DenseLayer>(8 * 8 * 4, 2));
  again.add(std::make_unique<SoftmaxLayer>());
  Prng rng2(9);
  again.init_params(rng2);
  auto a = net.params(), b = again.params();
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE(a[i].ref.value->vec() == b[i].ref.value->vec());
}

TEST_CASE("network surfaces composition and usage errors") {
  Network net({4, 4, 1}, 2);
  REQUIRE_THROWS_WITH(net.add(std::make_unique<DenseLayer>(99, 2)),
                      Catch::Matchers::ContainsSubstring("layer 0 (fc)"));

  Network ok({4}, 2);
  ok.add(std::make_unique<DenseLayer>(4, 2));
  ok.add(std::make_unique<SoftmaxLayer>());
  REQUIRE_THROWS_AS(ok.forward(Tensor({1, 5}), Mode::Eval), std::invalid_argument);
  REQUIRE_THROWS_AS(ok.backward({0}), std::logic_error);  // no cached forward

  Prng rng(1);
  ok.init_params(rng);
  ok.forward(Tensor({2, 4}), Mode::Train);
  REQUIRE_THROWS_AS(ok.backward({0, 5}), std::invalid_argument);

  Network no_sm({4}, 2);
  no_sm.add(std::make_unique<DenseLayer>(4, 2));
  REQUIRE_THROWS_AS(no_sm.backward({0}), std::logic_error);

  // Dropout in train mode with a live rate requires a generator.
  Network drop({4}, 2);
  drop.add(std::make_unique<DropoutLayer>(0.5));
  drop.add(std::make_unique<DenseLayer>(4, 2));
  drop.add(std::make_unique<SoftmaxLayer>());
  Prng rng3(2);
  drop.init_params(rng3);
  REQUIRE_THROWS_AS(drop.forward(Tensor({1, 4}), Mode::Train, nullptr), std::runtime_error);
  REQUIRE_NOTHROW(drop.forward(Tensor({1, 4}), Mode::Eval, nullptr));
}

TEST_CASE("dropout keeps expectation and scales survivors") {
  DropoutLayer drop(0.25);
  Prng rng(123);
  Tensor x = Tensor::full({1, 1000}, 1.0);
  const Tensor y = drop.forward(x, Mode::Train, &rng);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0) {
      REQUIRE(y[i] == Catch::Approx(1.0 / 0.75));
      ++kept;
    }
  }
  REQUIRE(kept > 650);
  REQUIRE(kept < 850);
  const Tensor eval = drop.forward(x, Mode::Eval, nullptr);
  for (std::size_t i = 0; i < eval.size(); ++i) REQUIRE(eval[i] == 1.0);
}

TEST_CASE("checkpoint round trip preserves bits and behavior") {
  TempDir dir("ckpt");
  CnnConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.channels = 3;
  cfg.classes = 4;
  cfg.conv_blocks = 2;
  cfg.filters = 3;
  cfg.fc_units = 10;
  Network net = build_damage_cnn(cfg);
  Prng rng(21);
  net.init_params(rng);

  const std::string path = dir.file("net.dnet");
  save_network(net, path);
  Network back = load_network(path);

  auto a = net.params(), b = back.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE(a[i].ref.value->vec() == b[i].ref.value->vec());

  Prng data_rng(8);
  const Tensor batch = random_batch({3, 16, 16, 3}, data_rng, 0.0, 1.0);
  const Tensor p1 = net.forward(batch, Mode::Eval);
  const Tensor p2 = back.forward(batch, Mode::Eval);
  REQUIRE(p1.vec() == p2.vec());

  // Saving the loaded network reproduces the file byte for byte.
  const std::string path2 = dir.file("net2.dnet");
  save_network(back, path2);
  REQUIRE(testsupport::read_file(path) == testsupport::read_file(path2));
}

TEST_CASE("checkpoint rejects damaged files") {
  TempDir dir("ckpt-bad");
  CnnConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.channels = 1;
  cfg.classes = 2;
  cfg.conv_blocks = 1;
  cfg.filters = 2;
  cfg.fc_units = 4;
  cfg.conv_dropout = 0.0;
  cfg.fc_dropout = 0.0;
  Network net = build_damage_cnn(cfg);
  Prng rng(3);
  net.init_params(rng);
  const std::string path = dir.file("net.dnet");
  save_network(net, path);

  std::string bytes = testsupport::read_file(path);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::ofstream(dir.file("bad1.dnet"), std::ios::binary) << bad_magic;
  REQUIRE_THROWS_AS(load_network(dir.file("bad1.dnet")), std::runtime_error);

  std::ofstream(dir.file("bad2.dnet"), std::ios::binary)
      << bytes.substr(0, bytes.size() / 2);
  REQUIRE_THROWS_AS(load_network(dir.file("bad2.dnet")), std::runtime_error);

  REQUIRE_THROWS_AS(load_network(dir.file("missing.dnet")), std::runtime_error);

  // A stage checkpoint is not a network checkpoint and vice versa.
  Conv2dLayer conv(3, 1, 2);
  Prng crng(5);
  init_layer_params(conv, crng);
  save_stage(conv, 0, dir.file("stage.dnet"));
  REQUIRE_THROWS_AS(load_network(dir.file("stage.dnet")), std::runtime_error);
  REQUIRE_THROWS_AS(load_stage(path), std::runtime_error);
}

TEST_CASE("stage checkpoint round trip") {
  TempDir dir("stage");
  Conv2dLayer conv(5, 3, 16);
  Prng rng(17);
  init_layer_params(conv, rng);
  save_stage(conv, 2, dir.file("stage_2.dnet"));
  StageCheckpoint back = load_stage(dir.file("stage_2.dnet"));
  REQUIRE(back.stage_index == 2);
  auto a = conv.params(), b = back.conv->params();
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].value->vec() == b[i].value->vec());
}

TEST_CASE("training learns a separable two-class image task") {
  // Class 0: dark images, class 1: bright images.
  Prng rng(41);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    Tensor img({8, 8, 1});
    for (std::size_t j = 0; j < img.size(); ++j)
      img[j] = (label == 0 ? 0.2 : 0.8) + rng.uniform(-0.05, 0.05);
    images.push_back(img);
    labels.push_back(label);
  }

  CnnConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.channels = 1;
  cfg.classes = 2;
  cfg.conv_blocks = 1;
  cfg.filters = 2;
  cfg.kernel = 3;
  cfg.fc_units = 8;
  cfg.conv_dropout = 0.0;
  cfg.fc_dropout = 0.0;

  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.batch_size = 8;
  tc.epochs = 15;
  tc.seed = 7;

  Network net = build_damage_cnn(cfg);
  Prng init(derive_seed(tc.seed, "init"));
  net.init_params(init);
  const auto history = train_classifier(net, images, labels, tc);
  REQUIRE(history.size() == 15);
  REQUIRE(history.front().epoch == 1);
  for (const auto& e : history) REQUIRE(std::isfinite(e.train_loss));
  REQUIRE(evaluate_accuracy(net, images, labels) == 1.0);
  REQUIRE(history.back().train_loss < history.front().train_loss);

  // Identical seeds give identical parameter trajectories.
  Network net2 = build_damage_cnn(cfg);
  Prng init2(derive_seed(tc.seed, "init"));
  net2.init_params(init2);
  train_classifier(net2, images, labels, tc);
  auto a = net.params(), b = net2.params();
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE(a[i].ref.value->vec() == b[i].ref.value->vec());
}

TEST_CASE("training early stop and degenerate epochs") {
  Prng rng(43);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) {
    Tensor img({8, 8, 1});
    for (std::size_t j = 0; j < img.size(); ++j)
      img[j] = (i % 2 == 0 ? 0.1 : 0.9) + rng.uniform(-0.02, 0.02);
    images.push_back(img);
    labels.push_back(i % 2);
  }
  CnnConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.channels = 1;
  cfg.classes = 2;
  cfg.conv_blocks = 1;
  cfg.filters = 2;
  cfg.fc_units = 4;
  cfg.conv_dropout = 0.0;
  cfg.fc_dropout = 0.0;

  TrainConfig tc;
  tc.epochs = 0;
  Network net = build_damage_cnn(cfg);
  Prng init(1);
  net.init_params(init);
  REQUIRE(train_classifier(net, images, labels, tc).empty());

  // stop threshold 0 is satisfied by any evaluation, so exactly one epoch runs
  tc.epochs = 50;
  FitOptions opt;
  opt.eval_images = &images;
  opt.eval_labels = &labels;
  opt.stop_at_eval_accuracy = 0.0;
  const auto history = train_classifier(net, images, labels, tc, opt);
  REQUIRE(history.size() == 1);
  REQUIRE(history[0].eval_accuracy >= 0.0);

  REQUIRE_THROWS_AS(train_classifier(net, images, {0, 1}, tc), std::invalid_argument);
  REQUIRE_THROWS_AS(train_classifier(net, {}, {}, tc), std::invalid_argument);
}
