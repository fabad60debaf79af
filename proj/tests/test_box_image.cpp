#include <doctest.h>

#include <random>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"
#include "support.hpp"

using namespace imdet;
using imdet::testing::random_box;
using imdet::testing::random_image;

namespace {

// Pixel-counting IoU on an integer lattice.
double lattice_iou(const BoxF& a, const BoxF& b) {
  int inter = 0, uni = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const bool in_a = cx > a.x1 && cx < a.x2 && cy > a.y1 && cy < a.y2;
      const bool in_b = cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("iou matches pixel counting on integer boxes") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(0, 31);
  for (int t = 0; t < 2000; ++t) {
    int ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
    BoxF a{double(ax), double(ay), double(std::min(32, ax + 1 + u(rng) % 12)), double(std::min(32, ay + 1 + u(rng) % 12))};
    BoxF b{double(bx), double(by), double(std::min(32, bx + 1 + u(rng) % 12)), double(std::min(32, by + 1 + u(rng) % 12))};
    CHECK(iou(a, b) == doctest::Approx(lattice_iou(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("iou properties") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    const BoxF a = random_box(50, 40, rng), b = random_box(50, 40, rng);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
    CHECK(iou(a, a) == doctest::Approx(1.0));
  }
  CHECK(iou({0, 0, 10, 10}, {10, 0, 20, 10}) == 0.0);
  CHECK(iou({0, 0, 10, 10}, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
  CHECK(iou({0, 0, 0, 10}, {0, 0, 0, 10}) == 0.0);
}

TEST_CASE("clip and unite") {
  const BoxF c = clip({-3, 2, 80, 70}, 64, 64);
  CHECK(c == BoxF{0, 2, 64, 64});
  CHECK(c.within(64, 64));
  CHECK_FALSE(clip({70, 0, 90, 10}, 64, 64).valid());
  CHECK(unite({0, 5, 3, 8}, {2, 1, 9, 6}) == BoxF{0, 1, 9, 8});
}

TEST_CASE("image flip twice is identity and resize to same size is identity") {
  std::mt19937_64 rng(9);
  const Image img = random_image(13, 9, rng);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_horizontal(img).at(1, 4, 0) == img.at(1, 4, 12));
  const Image same = resize_bilinear(img, 13, 9);
  for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(same.data()[i] == doctest::Approx(img.data()[i]));
}

TEST_CASE("crop_and_warp of a constant region is constant") {
  Image img(32, 32, 0.2f);
  for (int c = 0; c < 3; ++c)
    for (int y = 8; y < 20; ++y)
      for (int x = 4; x < 30; ++x) img.at(c, y, x) = 0.7f;
  const Image crop = crop_and_warp(img, {4, 8, 30, 20}, 16);
  CHECK(crop.width() == 16);
  CHECK(crop.height() == 16);
  for (float v : crop.data()) CHECK(v == doctest::Approx(0.7f));
  // degenerate boxes still yield a crop
  CHECK(crop_and_warp(img, {31.5, 31.5, 31.6, 31.6}, 4).width() == 4);
}

TEST_CASE("png round trip is exact for quantized images") {
  std::mt19937_64 rng(1);
  Image img = random_image(17, 11, rng);
  img.quantize();
  const auto bytes = encode_png(img);
  CHECK(bytes.size() > 8);
  CHECK(decode_png(bytes) == img);
  CHECK_THROWS_AS(decode_png({1, 2, 3, 4}), Error);
}

TEST_CASE("base64 known vectors") {
  const auto enc = [](std::string s) { return base64_encode(std::vector<std::uint8_t>(s.begin(), s.end())); };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foobar") == "Zm9vYmFy");
  const auto dec = base64_decode("Zm9vYg==");
  CHECK(std::string(dec.begin(), dec.end()) == "foob");
  CHECK_THROWS_AS(base64_decode("Zm9"), Error);
  CHECK_THROWS_AS(base64_decode("Z=9v"), Error);
  CHECK_THROWS_AS(base64_decode("Zm9*"), Error);

  std::mt19937_64 rng(4);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> data(n);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(data)) == data);
  }
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("oracle reads are counted only for imaginary samples") {
  reset_oracle_box_reads();
  ImageSample s;
  s.gt_boxes = std::vector<LabeledBox>{{{0, 0, 4, 4}, 1}};
  s.provenance = Provenance::real;
  CHECK(training_boxes(s) != nullptr);
  CHECK(oracle_box_reads() == 0);
  s.provenance = Provenance::imaginary;
  CHECK(training_boxes(s) != nullptr);
  CHECK(oracle_box_reads() == 1);
  s.gt_boxes.reset();
  CHECK(training_boxes(s) == nullptr);
  CHECK(oracle_box_reads() == 1);
  reset_oracle_box_reads();
}
