#include <doctest.h>

#include <random>

#include "metric_oracles.hpp"
#include "support.hpp"

using namespace imdet;
using namespace imdet::testing;

TEST_CASE("nms agrees with the subset-enumeration oracle on every ordering") {
  const OracleSweep s = sweep_nms();
  CHECK(s.instances > 5000);
  CHECK(s.non_unique == 0);
  CHECK(s.mismatches == 0);
}

TEST_CASE("average precision agrees with the exact oracle on every ordering") {
  const OracleSweep s = sweep_ap();
  CHECK(s.instances > 50000);
  CHECK(s.mismatches == 0);
}

TEST_CASE("worked example: TP, FP, TP over two ground truths") {
  const std::vector<std::vector<BoxF>> gts = {{{0, 0, 10, 10}, {20, 20, 30, 30}}};
  const std::vector<ImageDetection> dets = {
      {0, {0, 0, 10, 10}, 0.9}, {0, {40, 40, 50, 50}, 0.8}, {0, {20, 20, 30, 30}, 0.7}};
  PrCurve curve;
  const auto ap = average_precision(dets, gts, 0.5, ApMode::all_points, &curve);
  REQUIRE(ap);
  CHECK(*ap == 5.0 / 6.0);
  CHECK(curve.precision == std::vector<double>{1.0, 0.5, 2.0 / 3.0});
  CHECK(curve.recall == std::vector<double>{0.5, 0.5, 1.0});
  CHECK(curve.true_positive == std::vector<bool>{true, false, true});
  const auto exact = brute_force_ap(dets, gts, 0.5, ApMode::all_points);
  CHECK(exact->num == 5);
  CHECK(exact->den == 6);
}

TEST_CASE("ap edge cases") {
  const std::vector<std::vector<BoxF>> gts = {{{0, 0, 10, 10}}, {{5, 5, 9, 9}}};
  CHECK(average_precision({}, gts) == 0.0);
  const std::vector<ImageDetection> perfect = {{0, {0, 0, 10, 10}, 0.3}, {1, {5, 5, 9, 9}, 0.2}};
  CHECK(average_precision(perfect, gts) == 1.0);
  CHECK(average_precision(perfect, gts, 0.5, ApMode::voc07) == doctest::Approx(1.0));
  CHECK_FALSE(average_precision(perfect, {{}, {}}).has_value());
  // duplicates of a matched box are false positives
  const std::vector<ImageDetection> dup = {{0, {0, 0, 10, 10}, 0.9}, {0, {0, 0, 10, 10}, 0.8}};
  CHECK(average_precision(dup, {{{0, 0, 10, 10}}}) == 1.0);
  PrCurve c;
  average_precision(dup, {{{0, 0, 10, 10}}}, 0.5, ApMode::all_points, &c);
  CHECK(c.true_positive == std::vector<bool>{true, false});
}

TEST_CASE("ap does not decrease when a false positive is removed") {
  std::mt19937_64 rng(19);
  for (int t = 0; t < 300; ++t) {
    std::vector<std::vector<BoxF>> gts(2);
    for (int j = 0; j < 3; ++j) gts[j % 2].push_back(random_box(40, 40, rng, 4));
    std::vector<ImageDetection> dets;
    for (int i = 0; i < 8; ++i) {
      const int img = static_cast<int>(rng() % 2);
      BoxF b = random_box(40, 40, rng, 4);
      if (rng() % 2 && !gts[img].empty()) b = gts[img][rng() % gts[img].size()];
      dets.push_back({img, b, std::uniform_real_distribution<double>(0, 1)(rng)});
    }
    PrCurve curve;
    const double base = *average_precision(dets, gts, 0.5, ApMode::all_points, &curve);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    // curve is in ranked order; find the detection behind the first FP
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
    for (std::size_t k = 0; k < order.size(); ++k)
      if (!curve.true_positive[k]) {
        auto fewer = dets;
        fewer.erase(fewer.begin() + static_cast<long>(order[k]));
        CHECK(*average_precision(fewer, gts) >= base - 1e-12);
        break;
      }
  }
}

TEST_CASE("nms properties on random detections") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 200; ++t) {
    std::vector<Detection> dets;
    for (int i = 0; i < 25; ++i)
      dets.push_back({random_box(50, 50, rng, 5), static_cast<int>(rng() % 3), std::uniform_real_distribution<double>(0, 1)(rng)});
    const double thr = 0.1 * static_cast<double>(rng() % 10);
    const auto kept = nms_per_class(dets, thr);
    for (std::size_t a = 0; a < kept.size(); ++a) {
      CHECK(std::find(dets.begin(), dets.end(), kept[a]) != dets.end());
      for (std::size_t b = a + 1; b < kept.size(); ++b)
        if (kept[a].class_id == kept[b].class_id) CHECK(iou(kept[a].box, kept[b].box) < thr);
    }
    CHECK(nms_per_class(kept, thr) == kept);
    std::vector<int> classes;
    for (const auto& d : kept) classes.push_back(d.class_id);
    CHECK(std::is_sorted(classes.begin(), classes.end()));
  }
}

TEST_CASE("nms threshold zero keeps one detection per class") {
  const std::vector<Detection> dets = {{{0, 0, 5, 5}, 0, 0.5}, {{10, 10, 15, 15}, 0, 0.9}, {{30, 30, 35, 35}, 1, 0.1}};
  const auto kept = nms_per_class(dets, 0.0);
  REQUIRE(kept.size() == 2u);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].class_id == 1);
}
