#include <doctest.h>

#include <random>

#include "imdet/error.hpp"
#include "imdet/features.hpp"
#include "support.hpp"

using namespace imdet;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.channels = {4, 6};
  c.downsample = {true, false};
  c.pooled_w = 2;
  c.pooled_h = 3;
  c.d = 8;
  return c;
}

// Direct 3x3 same-padding convolution, rectifier and ceil-mode 2x2 max pool.
std::vector<std::vector<std::vector<double>>> naive_encode(const EncoderConfig& cfg, const EncoderParams& p,
                                                           const Image& img) {
  int h = img.height(), w = img.width();
  std::vector<std::vector<std::vector<double>>> x(3, std::vector<std::vector<double>>(h, std::vector<double>(w)));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) x[c][y][xx] = 2.0 * img.at(c, y, xx) - 1.0;
  for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
    const int out_c = cfg.channels[b], in_c = static_cast<int>(x.size());
    std::vector<std::vector<std::vector<double>>> y(out_c, std::vector<std::vector<double>>(h, std::vector<double>(w)));
    for (int o = 0; o < out_c; ++o)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          double s = p.convs[b].bias(o, 0);
          for (int c = 0; c < in_c; ++c)
            for (int ky = -1; ky <= 1; ++ky)
              for (int kx = -1; kx <= 1; ++kx) {
                const int sy = yy + ky, sx = xx + kx;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                s += p.convs[b].weight(o, c * 9 + (ky + 1) * 3 + (kx + 1)) * x[c][sy][sx];
              }
          y[o][yy][xx] = std::max(0.0, s);
        }
    if (cfg.downsample[b]) {
      const int oh = (h + 1) / 2, ow = (w + 1) / 2;
      std::vector<std::vector<std::vector<double>>> z(out_c, std::vector<std::vector<double>>(oh, std::vector<double>(ow)));
      for (int o = 0; o < out_c; ++o)
        for (int yy = 0; yy < oh; ++yy)
          for (int xx = 0; xx < ow; ++xx) {
            double m = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (2 * yy + dy < h && 2 * xx + dx < w) m = std::max(m, y[o][2 * yy + dy][2 * xx + dx]);
            z[o][yy][xx] = m;
          }
      y = std::move(z);
      h = oh;
      w = ow;
    }
    x = std::move(y);
  }
  return x;
}

// Cells whose unit interval overlaps [lo, hi) with positive length.
std::vector<int> overlapping_cells(double lo, double hi, int extent) {
  std::vector<int> cells;
  for (int i = 0; i < extent; ++i)
    if (std::min(hi, i + 1.0) - std::max(lo, double(i)) > 0) cells.push_back(i);
  return cells;
}

}  // namespace

TEST_CASE("encoder forward matches a direct convolution") {
  std::mt19937_64 rng(3);
  const EncoderConfig cfg = small_encoder();
  const EncoderParams params = init_encoder(cfg, rng);
  for (auto [w, h] : {std::pair{9, 7}, std::pair{12, 12}, std::pair{5, 4}}) {
    const Image img = imdet::testing::random_image(w, h, rng);
    const FeatureMap fm = encode(cfg, params, img);
    const auto ref = naive_encode(cfg, params, img);
    REQUIRE(fm.channels == 6);
    REQUIRE(fm.height == static_cast<int>(ref[0].size()));
    REQUIRE(fm.width == static_cast<int>(ref[0][0].size()));
    CHECK(fm.height == (h + 1) / 2);
    for (int c = 0; c < fm.channels; ++c)
      for (int y = 0; y < fm.height; ++y)
        for (int x = 0; x < fm.width; ++x) CHECK(fm.values(c, y * fm.width + x) == doctest::Approx(ref[c][y][x]).epsilon(1e-12));
    CHECK(fm.spatial_scale_x == doctest::Approx(double(fm.width) / w));
  }
}

TEST_CASE("encoder rejects images smaller than its stride") {
  std::mt19937_64 rng(1);
  const EncoderConfig cfg;  // stride 16
  const EncoderParams params = init_encoder(cfg, rng);
  CHECK(cfg.total_stride() == 16);
  CHECK_THROWS_AS(encode(cfg, params, Image(12, 40)), Error);
  CHECK(encode(cfg, params, Image(64, 64)).width == 4);
  CHECK(encode(cfg, params, Image(65, 64)).width == 5);
}

TEST_CASE("encoder config validation and json") {
  EncoderConfig c = small_encoder();
  nlohmann::json j = c;
  const EncoderConfig back = j.get<EncoderConfig>();
  CHECK(back.channels == c.channels);
  CHECK(back.downsample == c.downsample);
  CHECK(back.pooled_h == 3);
  CHECK(back.pooled_dim() == 6 * 2 * 3);
  c.downsample.pop_back();
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_encoder();
  c.d = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("roi cell range") {
  CHECK(roi_cell_range(0, 64, 0.25, 16) == std::pair{0, 16});
  CHECK(roi_cell_range(5, 11, 0.25, 16) == std::pair{1, 3});
  CHECK(roi_cell_range(4, 8, 0.25, 16) == std::pair{1, 2});
  CHECK(roi_cell_range(63.5, 64, 0.25, 16) == std::pair{15, 16});
  CHECK(roi_cell_range(2, 2.1, 0.25, 16) == std::pair{0, 1});
}

TEST_CASE("roi pooling matches brute force over overlapping cells") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  FeatureMap fm;
  fm.channels = 3;
  fm.height = 7;
  fm.width = 9;
  fm.spatial_scale_x = fm.spatial_scale_y = 0.25;
  fm.values.resize(3, 63);
  for (Eigen::Index i = 0; i < fm.values.size(); ++i) fm.values.data()[i] = g(rng);

  std::vector<BoxF> boxes = {{0, 0, 36, 28}, {4, 4, 8, 8}, {0, 0, 4, 4}};
  for (int i = 0; i < 60; ++i) boxes.push_back(imdet::testing::random_box(36, 28, rng, 0.5));
  for (auto [pw, ph] : {std::pair{2, 2}, std::pair{3, 2}, std::pair{1, 4}}) {
    const RoiPoolResult r = roi_pool(fm, boxes, pw, ph);
    REQUIRE(r.values.rows() == static_cast<Eigen::Index>(boxes.size()));
    REQUIRE(r.values.cols() == 3 * pw * ph);
    for (std::size_t p = 0; p < boxes.size(); ++p) {
      const auto xs = overlapping_cells(boxes[p].x1 * 0.25, boxes[p].x2 * 0.25, fm.width);
      const auto ys = overlapping_cells(boxes[p].y1 * 0.25, boxes[p].y2 * 0.25, fm.height);
      const int x0 = xs.front(), rw = static_cast<int>(xs.size());
      const int y0 = ys.front(), rh = static_cast<int>(ys.size());
      for (int by = 0; by < ph; ++by)
        for (int bx = 0; bx < pw; ++bx) {
          const auto bin_y = overlapping_cells(y0 + by * double(rh) / ph, y0 + (by + 1) * double(rh) / ph, fm.height);
          const auto bin_x = overlapping_cells(x0 + bx * double(rw) / pw, x0 + (bx + 1) * double(rw) / pw, fm.width);
          for (int c = 0; c < 3; ++c) {
            double m = -1e300;
            for (int y : bin_y)
              for (int x : bin_x) m = std::max(m, fm.values(c, y * fm.width + x));
            const Eigen::Index col = c * pw * ph + by * pw + bx;
            CHECK(r.values(static_cast<Eigen::Index>(p), col) == m);
            const int arg = r.argmax[p * static_cast<std::size_t>(r.values.cols()) + col];
            CHECK(fm.values(c, arg) == m);
          }
        }
    }
  }
}

TEST_CASE("roi pool backward routes gradient to the winners") {
  std::mt19937_64 rng(5);
  FeatureMap fm;
  fm.channels = 2;
  fm.height = fm.width = 4;
  fm.values = Mat::Random(2, 16);
  const std::vector<BoxF> boxes = {{0, 0, 4, 4}, {1, 1, 3, 4}};
  const RoiPoolResult r = roi_pool(fm, boxes, 2, 2);
  const Mat grad = Mat::Random(2, 8);
  Mat gf = Mat::Zero(2, 16);
  roi_pool_backward(r, grad, gf);
  CHECK(gf.sum() == doctest::Approx(grad.sum()));
  Mat expect = Mat::Zero(2, 16);
  for (Eigen::Index p = 0; p < 2; ++p)
    for (Eigen::Index col = 0; col < 8; ++col) expect(col / 4, r.argmax[p * 8 + col]) += grad(p, col);
  CHECK((gf - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("projection has the configured width") {
  std::mt19937_64 rng(2);
  EncoderConfig cfg = small_encoder();
  const EncoderParams params = init_encoder(cfg, rng);
  const Mat pooled = Mat::Random(5, cfg.pooled_dim());
  const Mat f = proposal_representation(cfg, params, pooled);
  CHECK(f.rows() == 5);
  CHECK(f.cols() == cfg.d);
  CHECK(f.minCoeff() >= 0.0);
  cfg.projection_activation = Activation::identity;
  CHECK(proposal_representation(cfg, params, pooled).minCoeff() < 0.0);
}
