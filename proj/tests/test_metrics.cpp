#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>

#include "dentnet/metrics.hpp"
#include "dentnet/prng.hpp"

using namespace dentnet;

TEST_CASE("confusion matrix counts and argument order") {
  // preds first, labels second; rows are the true class.
  const std::vector<int> preds = {0, 1, 1};
  const std::vector<int> labels = {0, 0, 1};
  const ConfusionMatrix cm = confusion(preds, labels, 2);
  REQUIRE(cm.at(0, 0) == 1);
  REQUIRE(cm.at(0, 1) == 1);
  REQUIRE(cm.at(1, 0) == 0);
  REQUIRE(cm.at(1, 1) == 1);
  REQUIRE(cm.total() == 3);

  REQUIRE_THROWS_AS(confusion({0}, {0, 1}, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(confusion({2}, {0}, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(confusion({0}, {-1}, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(confusion({0}, {2}, 2), std::invalid_argument);
}

TEST_CASE("worked two-class example") {
  // One true 0 predicted 0, one true 0 predicted 1, one true 1 predicted 1.
  const ConfusionMatrix cm = confusion({0, 1, 1}, {0, 0, 1}, 2);
  const MetricsReport r = metrics(cm);
  // acc = 2/3; prec = mean(1/1, 1/2); rec = mean(1/2, 1/1).
  REQUIRE(r.accuracy == Catch::Approx(100.0 * 2.0 / 3.0).epsilon(1e-12));
  REQUIRE(r.precision == Catch::Approx(75.0).epsilon(1e-12));
  REQUIRE(r.recall == Catch::Approx(75.0).epsilon(1e-12));
  REQUIRE(format_percent(r.accuracy) == "66.67");
  REQUIRE(format_percent(r.precision) == "75.00");
  REQUIRE(format_percent(r.recall) == "75.00");
}

TEST_CASE("degenerate predictor collapses precision, not accuracy") {
  // Balanced labels, every prediction class 0. Class 1 gets no predictions,
  // so its precision denominator is empty and defaults to 0.
  const ConfusionMatrix cm = confusion({0, 0, 0, 0}, {0, 0, 1, 1}, 2);
  const MetricsReport r = metrics(cm);
  REQUIRE(r.accuracy == Catch::Approx(50.0));
  REQUIRE(r.precision == Catch::Approx(25.0));  // mean(0.5, 0)
  REQUIRE(r.recall == Catch::Approx(50.0));     // mean(1.0, 0)

  MetricsOptions opt;
  opt.empty_denominator_value = 1.0;
  const MetricsReport generous = metrics(cm, opt);
  REQUIRE(generous.precision == Catch::Approx(75.0));  // mean(0.5, 1)
  REQUIRE(generous.recall == Catch::Approx(50.0));
}

TEST_CASE("perfect predictions score 100 everywhere") {
  const ConfusionMatrix cm = confusion({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  const MetricsReport r = metrics(cm);
  REQUIRE(r.accuracy == 100.0);
  REQUIRE(r.precision == 100.0);
  REQUIRE(r.recall == 100.0);
}

TEST_CASE("micro averaging folds everything into accuracy") {
  Prng rng(77);
  std::vector<int> preds(200), labels(200);
  for (std::size_t i = 0; i < 200; ++i) {
    preds[i] = static_cast<int>(rng.next_below(5));
    labels[i] = static_cast<int>(rng.next_below(5));
  }
  const ConfusionMatrix cm = confusion(preds, labels, 5);
  MetricsOptions opt;
  opt.averaging = Averaging::Micro;
  const MetricsReport r = metrics(cm, opt);
  REQUIRE(r.precision == r.accuracy);
  REQUIRE(r.recall == r.accuracy);
}

TEST_CASE("accuracy equals the class-prior weighted recall") {
  Prng rng(31);
  std::vector<int> preds(500), labels(500);
  for (std::size_t i = 0; i < 500; ++i) {
    labels[i] = static_cast<int>(rng.next_below(4));
    preds[i] = rng.bernoulli(0.7) ? labels[i] : static_cast<int>(rng.next_below(4));
  }
  const ConfusionMatrix cm = confusion(preds, labels, 4);
  double weighted = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < 4; ++p) row += cm.at(c, p);
    if (row == 0) continue;
    const double recall_c = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    weighted += (static_cast<double>(row) / static_cast<double>(cm.total())) * recall_c;
  }
  const MetricsReport r = metrics(cm);
  REQUIRE(r.accuracy == Catch::Approx(100.0 * weighted).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under a consistent relabeling") {
  Prng rng(55);
  std::vector<int> preds(300), labels(300);
  for (std::size_t i = 0; i < 300; ++i) {
    labels[i] = static_cast<int>(rng.next_below(3));
    preds[i] = rng.bernoulli(0.6) ? labels[i] : static_cast<int>(rng.next_below(3));
  }
  const std::vector<int> perm = {2, 0, 1};
  std::vector<int> preds2(300), labels2(300);
  for (std::size_t i = 0; i < 300; ++i) {
    preds2[i] = perm[static_cast<std::size_t>(preds[i])];
    labels2[i] = perm[static_cast<std::size_t>(labels[i])];
  }
  const MetricsReport a = metrics(confusion(preds, labels, 3));
  const MetricsReport b = metrics(confusion(preds2, labels2, 3));
  REQUIRE(a.accuracy == Catch::Approx(b.accuracy).epsilon(1e-12));
  REQUIRE(a.precision == Catch::Approx(b.precision).epsilon(1e-12));
  REQUIRE(a.recall == Catch::Approx(b.recall).epsilon(1e-12));
}

TEST_CASE("empty input is rejected") {
  REQUIRE_THROWS_AS(metrics(ConfusionMatrix(0)), std::invalid_argument);
  REQUIRE_THROWS_AS(metrics(ConfusionMatrix(3)), std::invalid_argument);  // all-zero counts
}

TEST_CASE("format_percent pins two decimals") {
  REQUIRE(format_percent(0.0) == "0.00");
  REQUIRE(format_percent(100.0) == "100.00");
  REQUIRE(format_percent(66.666666) == "66.67");
  REQUIRE(format_percent(88.954999) == "88.95");
}

TEST_CASE("report rendering matches the fixed layouts") {
  const ConfusionMatrix cm = confusion({0, 1, 1}, {0, 0, 1}, 2);
  const MetricsReport r = metrics(cm);
  REQUIRE(metrics_table(cm, r) ==
          "Acc\tPrec\tRecall\n"
          "66.67\t75.00\t75.00\n"
          "\nconfusion (rows true, cols predicted):\n"
          "1\t1\n"
          "0\t1\n");
  REQUIRE(metrics_json(cm, r) ==
          "{\"accuracy\":66.67,\"precision\":75.00,\"recall\":75.00,"
          "\"confusion\":[[1,1],[0,1]]}");
}
