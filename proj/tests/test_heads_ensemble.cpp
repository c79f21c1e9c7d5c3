#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "dentnet/ensemble.hpp"
#include "dentnet/features.hpp"
#include "dentnet/linear_head.hpp"
#include "dentnet/prng.hpp"
#include "test_support.hpp"

using namespace dentnet;
using testsupport::TempDir;

namespace {

FeatureSet separable(std::size_t per_class, std::size_t dim, std::size_t classes,
                     std::uint64_t seed) {
  FeatureSet fs;
  fs.class_count = classes;
  fs.features = Tensor({per_class * classes, dim});
  fs.labels.resize(per_class * classes);
  Prng rng(seed);
  for (std::size_t i = 0; i < fs.count(); ++i) {
    const std::size_t c = i % classes;
    fs.labels[i] = static_cast<int>(c);
    for (std::size_t d = 0; d < dim; ++d) fs.features(i, d) = rng.gaussian() * 0.05;
    fs.features(i, c % dim) += 2.5;
  }
  fs.validate();
  return fs;
}

std::string le_f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  std::string out(8, '\0');
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] =
      static_cast<char>((bits >> (8 * i)) & 0xff);
  return out;
}

std::string le_u32(std::uint32_t v) {
  std::string out(4, '\0');
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] =
      static_cast<char>((v >> (8 * i)) & 0xff);
  return out;
}

}  // namespace

TEST_CASE("feature file bytes match the documented layout") {
  TempDir dir("feat");
  FeatureSet fs;
  fs.class_count = 3;
  fs.features = Tensor({2, 2}, {1.5, -2.0, 0.25, 1e-3});
  fs.labels = {2, 0};
  fs.extractor = "unit";
  const std::string path = dir.file("x.feat");
  write_feature_file(path, fs);

  std::string want = "FEAT";
  want += le_u32(1);  // version
  want += le_u32(2);  // rows
  want += le_u32(2);  // dim
  want += le_u32(3);  // classes
  for (double v : {1.5, -2.0, 0.25, 1e-3}) want += le_f64(v);
  want += std::string("\x02\x00", 2);
  want += std::string("\x00\x00", 2);
  REQUIRE(testsupport::read_file(path) == want);
}

TEST_CASE("feature files round trip through binary and csv") {
  TempDir dir("feat-rt");
  Prng rng(2);
  FeatureSet fs;
  fs.class_count = 4;
  fs.features = Tensor({6, 5});
  for (std::size_t i = 0; i < fs.features.size(); ++i) fs.features[i] = rng.gaussian();
  fs.labels = {0, 1, 2, 3, 1, 2};
  fs.extractor = "conv-pool-flat";

  write_feature_file(dir.file("a.feat"), fs);
  const FeatureSet bin = read_feature_file(dir.file("a.feat"));
  REQUIRE(bin.features.vec() == fs.features.vec());  // bit-exact
  REQUIRE(bin.labels == fs.labels);
  REQUIRE(bin.class_count == 4);
  REQUIRE(bin.extractor == "conv-pool-flat");  // via the sidecar

  write_feature_csv(dir.file("a.csv"), fs);
  const FeatureSet csv = read_feature_file(dir.file("a.csv"));
  REQUIRE(csv.labels == fs.labels);
  REQUIRE(csv.class_count == 4);
  for (std::size_t i = 0; i < fs.features.size(); ++i)
    REQUIRE(csv.features[i] == fs.features[i]);  // 17 digits round-trips doubles

  const std::string head = testsupport::read_file(dir.file("a.csv"));
  REQUIRE(head.rfind("label,f0,f1,f2,f3,f4\n", 0) == 0);
}

TEST_CASE("feature set validation rejects broken input") {
  FeatureSet fs;
  fs.class_count = 2;
  fs.features = Tensor({2, 2});
  fs.labels = {0, 1};
  REQUIRE_NOTHROW(fs.validate());

  FeatureSet empty = fs;
  empty.features = Tensor({1, 1});
  empty.labels = {};
  REQUIRE_THROWS_WITH(
      [&] {
        FeatureSet broken;
        broken.class_count = 2;
        broken.features = Tensor({1, 1});
        broken.labels = {0};
        broken.features[0] = std::nan("");
        broken.validate();
      }(),
      Catch::Matchers::ContainsSubstring("non-finite"));

  FeatureSet bad_label = fs;
  bad_label.labels = {0, 5};
  REQUIRE_THROWS_AS(bad_label.validate(), std::invalid_argument);

  FeatureSet mismatch = fs;
  mismatch.labels = {0};
  REQUIRE_THROWS_AS(mismatch.validate(), std::invalid_argument);

  TempDir dir("feat-bad");
  REQUIRE_THROWS_AS(read_feature_file(dir.file("missing.feat")), std::runtime_error);
  std::ofstream(dir.file("junk.feat"), std::ios::binary) << "JUNKJUNKJUNK";
  REQUIRE_THROWS_AS(read_feature_file(dir.file("junk.feat")), std::runtime_error);
}

TEST_CASE("both head kinds separate a separable problem") {
  const FeatureSet fs = separable(10, 8, 3, 5);
  HeadConfig cfg;
  cfg.epochs = 40;
  const LinearHead sm = train_softmax_head(fs, cfg);
  const LinearHead svm = train_svm_head(fs, cfg);
  REQUIRE(sm.kind == HeadKind::Softmax);
  REQUIRE(svm.kind == HeadKind::Svm);
  REQUIRE(head_accuracy(sm, fs) == 1.0);
  REQUIRE(head_accuracy(svm, fs) == 1.0);
}

TEST_CASE("conflicting duplicates cap the attainable accuracy") {
  FeatureSet fs;
  fs.class_count = 2;
  fs.features = Tensor({4, 2}, {1.0, 0.5, 1.0, 0.5, -1.0, 0.25, -1.0, 0.25});
  fs.labels = {0, 1, 0, 1};  // identical rows, contradictory labels
  HeadConfig cfg;
  const LinearHead head = train_softmax_head(fs, cfg);
  REQUIRE(head_accuracy(head, fs) <= 0.5);
}

TEST_CASE("l2 pulls the weights toward zero") {
  const FeatureSet fs = separable(10, 6, 2, 9);
  HeadConfig loose;
  loose.l2 = 0.0;
  loose.epochs = 30;
  HeadConfig tight = loose;
  tight.l2 = 0.5;
  const LinearHead a = train_softmax_head(fs, loose);
  const LinearHead b = train_softmax_head(fs, tight);
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.W.size(); ++i) na += a.W[i] * a.W[i];
  for (std::size_t i = 0; i < b.W.size(); ++i) nb += b.W[i] * b.W[i];
  REQUIRE(nb < na);
}

TEST_CASE("svm hand case: opposing points on one axis") {
  FeatureSet fs;
  fs.class_count = 2;
  fs.features = Tensor({2, 2}, {1.0, 0.0, -1.0, 0.0});
  fs.labels = {0, 1};
  HeadConfig cfg;
  cfg.epochs = 20;
  cfg.l2 = 0.0;
  const LinearHead head = train_svm_head(fs, cfg);
  // Class-0 score grows along +x, class-1 along -x.
  REQUIRE(head.W(0, 0) > 0.0);
  REQUIRE(head.W(0, 1) < 0.0);
  REQUIRE(head.predict_labels(fs.features) == std::vector<int>{0, 1});
}

TEST_CASE("training requires every class to appear") {
  FeatureSet fs;
  fs.class_count = 3;
  fs.features = Tensor({2, 2}, {1, 0, 0, 1});
  fs.labels = {0, 1};  // class 2 missing
  HeadConfig cfg;
  REQUIRE_THROWS_WITH(train_softmax_head(fs, cfg),
                      Catch::Matchers::ContainsSubstring("class 2 absent"));
  REQUIRE_THROWS_AS(train_svm_head(fs, cfg), std::invalid_argument);
}

TEST_CASE("head probabilities are rows of a stochastic matrix") {
  const FeatureSet fs = separable(4, 5, 3, 12);
  HeadConfig cfg;
  cfg.epochs = 5;
  for (const LinearHead& head : {train_softmax_head(fs, cfg), train_svm_head(fs, cfg)}) {
    const Tensor p = head.predict_probs(fs.features);
    REQUIRE(p.shape() == Shape{fs.count(), 3});
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < p.dim(1); ++k) {
        REQUIRE(p(i, k) > 0.0);
        sum += p(i, k);
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("head checkpoint round trip") {
  TempDir dir("head");
  const FeatureSet fs = separable(5, 4, 2, 3);
  HeadConfig cfg;
  cfg.epochs = 10;
  const LinearHead head = train_svm_head(fs, cfg);
  save_head(head, dir.file("h.head"));
  const LinearHead back = load_head(dir.file("h.head"));
  REQUIRE(back.kind == HeadKind::Svm);
  REQUIRE(back.W.vec() == head.W.vec());
  REQUIRE(back.b.vec() == head.b.vec());

  std::ofstream(dir.file("junk.head"), std::ios::binary) << "nonsense";
  REQUIRE_THROWS_AS(load_head(dir.file("junk.head")), std::runtime_error);
}

TEST_CASE("head training is deterministic per seed") {
  const FeatureSet fs = separable(8, 6, 4, 21);
  HeadConfig cfg;
  cfg.epochs = 12;
  const LinearHead a = train_softmax_head(fs, cfg);
  const LinearHead b = train_softmax_head(fs, cfg);
  REQUIRE(a.W.vec() == b.W.vec());
  REQUIRE(a.b.vec() == b.b.vec());
  HeadConfig other = cfg;
  other.seed = 2;
  const LinearHead c = train_softmax_head(fs, other);
  REQUIRE(a.W.vec() != c.W.vec());
}

TEST_CASE("ensemble weight validation") {
  REQUIRE_NOTHROW(check_ensemble_weights({0.5, 0.5}));
  REQUIRE_THROWS_AS(check_ensemble_weights({}), std::invalid_argument);
  REQUIRE_THROWS_AS(check_ensemble_weights({0.7, -0.3, 0.6}), std::invalid_argument);
  REQUIRE_THROWS_AS(check_ensemble_weights({0.5, 0.4}), std::invalid_argument);

  REQUIRE(uniform_weights(4) == std::vector<double>(4, 0.25));
  REQUIRE_THROWS_AS(uniform_weights(0), std::invalid_argument);
}

TEST_CASE("accuracy weights are proportional and scale-invariant") {
  const std::vector<double> w = accuracy_weights({2.0, 3.0, 5.0});
  REQUIRE(w[0] == Catch::Approx(0.2));
  REQUIRE(w[1] == Catch::Approx(0.3));
  REQUIRE(w[2] == Catch::Approx(0.5));

  // Scaling every accuracy by the same factor leaves the weights (and so
  // every ensemble argmax) unchanged.
  const std::vector<double> scaled = accuracy_weights({4.0, 6.0, 10.0});
  for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(scaled[i] == Catch::Approx(w[i]));

  // All-zero scores degrade to uniform.
  REQUIRE(accuracy_weights({0.0, 0.0}) == std::vector<double>(2, 0.5));
}

TEST_CASE("ensemble row algebra") {
  // Two members, uniform: averages componentwise.
  const std::vector<double> avg =
      ensemble_predict_row({{0.8, 0.2}, {0.6, 0.4}}, uniform_weights(2));
  REQUIRE(avg[0] == Catch::Approx(0.7).margin(1e-15));
  REQUIRE(avg[1] == Catch::Approx(0.3).margin(1e-15));

  // Weighted three-member case, worked by hand.
  const std::vector<double> mix = ensemble_predict_row(
      {{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}}, {0.5, 0.3, 0.2});
  REQUIRE(mix[0] == Catch::Approx(0.6).margin(1e-15));
  REQUIRE(mix[1] == Catch::Approx(0.4).margin(1e-15));

  // Identical members reproduce themselves under any weighting.
  const std::vector<double> same =
      ensemble_predict_row({{0.3, 0.7}, {0.3, 0.7}}, {0.9, 0.1});
  REQUIRE(same[0] == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(same[1] == Catch::Approx(0.7).margin(1e-15));

  // The output of a valid mix is itself a probability vector.
  double sum = 0.0;
  for (double v : mix) {
    REQUIRE(v >= 0.0);
    sum += v;
  }
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));

  REQUIRE_THROWS_AS(ensemble_predict_row({{0.9, 0.2}}, {1.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(ensemble_predict_row({{0.5, 0.5}, {1.0, 0.0, 0.0}}, {0.5, 0.5}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(ensemble_predict_row({{0.5, 0.5}}, {0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("ensemble batch form matches the row form") {
  Prng rng(30);
  std::vector<Tensor> members;
  for (int m = 0; m < 3; ++m) {
    Tensor p({5, 4});
    for (std::size_t i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        p(i, k) = rng.uniform(0.01, 1.0);
        sum += p(i, k);
      }
      for (std::size_t k = 0; k < 4; ++k) p(i, k) /= sum;
    }
    members.push_back(std::move(p));
  }
  const std::vector<double> weights = {0.2, 0.5, 0.3};
  const Tensor out = ensemble_predict(members, weights);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<std::vector<double>> rows;
    for (const auto& m : members) {
      std::vector<double> row(4);
      for (std::size_t k = 0; k < 4; ++k) row[k] = m(i, k);
      rows.push_back(std::move(row));
    }
    const std::vector<double> want = ensemble_predict_row(rows, weights);
    for (std::size_t k = 0; k < 4; ++k)
      REQUIRE(out(i, k) == Catch::Approx(want[k]).margin(1e-12));
  }
}

TEST_CASE("top-k selection orders by score then index") {
  // Six members scored by validation accuracy, best three expected in front.
  const std::vector<double> scores = {88.95, 86.78, 85.95, 76.95, 75.57, 68.26};
  REQUIRE(select_top_k(scores, 3) == std::vector<std::size_t>{0, 1, 2});
  REQUIRE(select_top_k(scores, 1) == std::vector<std::size_t>{0});
  REQUIRE(select_top_k(scores, 6) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  REQUIRE(select_top_k(scores, 0).empty());
  REQUIRE_THROWS_AS(select_top_k(scores, 7), std::invalid_argument);

  // Ties keep the earlier member.
  REQUIRE(select_top_k({0.9, 0.8, 0.9}, 2) == std::vector<std::size_t>{0, 2});
  REQUIRE(select_top_k({0.5, 0.5, 0.5}, 1) == std::vector<std::size_t>{0});

  const std::vector<double> shuffled = {76.95, 88.95, 68.26, 86.78, 85.95, 75.57};
  REQUIRE(select_top_k(shuffled, 3) == std::vector<std::size_t>{1, 3, 4});
}

TEST_CASE("top-k over trained heads uses validation accuracy") {
  const FeatureSet good = separable(10, 6, 3, 41);
  HeadConfig strong;
  strong.epochs = 40;
  HeadConfig weak;
  weak.epochs = 0;  // zero epochs leaves the zero-init head: chance accuracy
  std::vector<LinearHead> heads = {train_softmax_head(good, weak),
                                   train_softmax_head(good, strong)};
  const std::vector<const FeatureSet*> val = {&good, &good};
  REQUIRE(select_top_k(heads, val, 1) == std::vector<std::size_t>{1});
}
