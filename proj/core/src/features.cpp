#include "imdet/features.hpp"

#include <algorithm>
#include <cmath>

#include "imdet/error.hpp"

namespace imdet {

int EncoderConfig::total_stride() const {
  int s = 1;
  for (bool d : downsample)
    if (d) s *= 2;
  return s;
}

void EncoderConfig::validate() const {
  if (channels.empty()) fail(ErrorKind::config, "encoder needs at least one conv block");
  if (downsample.size() != channels.size()) fail(ErrorKind::config, "encoder downsample flags must match channels");
  for (int c : channels)
    if (c < 1) fail(ErrorKind::config, "encoder channel widths must be positive");
  if (pooled_w < 1 || pooled_h < 1) fail(ErrorKind::config, "RoI output size must be positive");
  if (d < 1) fail(ErrorKind::config, "representation size d must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"channels", c.channels},
       {"downsample", c.downsample},
       {"pooled", {c.pooled_w, c.pooled_h}},
       {"d", c.d},
       {"projection_activation", c.projection_activation == Activation::relu ? "relu" : "identity"}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c = EncoderConfig{};
  c.channels = j.value("channels", c.channels);
  c.downsample = j.value("downsample", std::vector<bool>(c.channels.size(), true));
  if (j.contains("pooled")) {
    const auto p = j["pooled"].get<std::vector<int>>();
    if (p.size() != 2) fail(ErrorKind::config, "pooled must be [w, h]");
    c.pooled_w = p[0];
    c.pooled_h = p[1];
  }
  c.d = j.value("d", c.d);
  const std::string act = j.value("projection_activation", std::string("relu"));
  if (act != "relu" && act != "identity") fail(ErrorKind::config, "unknown activation '" + act + "'");
  c.projection_activation = act == "relu" ? Activation::relu : Activation::identity;
  c.validate();
}

namespace {

void init_uniform(Mat& m, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

Dense make_dense(int out, int in, std::mt19937_64& rng) {
  Dense d{Mat(out, in), Mat::Zero(out, 1)};
  init_uniform(d.weight, in, rng);
  return d;
}

// [C, H*W] -> [C*9, H*W] for a 3x3 kernel with zero padding 1.
Mat im2col(const Mat& input, int h, int w) {
  const auto channels = input.rows();
  Mat cols = Mat::Zero(channels * 9, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double* src = input.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x_lo = std::max(0, 1 - kx), x_hi = std::min(w, w + 1 - kx);
          for (int x = x_lo; x < x_hi; ++x) dst[y * w + x] = src[sy * w + x + kx - 1];
        }
      }
  }
  return cols;
}

Mat col2im(const Mat& cols, Eigen::Index channels, int h, int w) {
  Mat out = Mat::Zero(channels, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < channels; ++c) {
    double* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x_lo = std::max(0, 1 - kx), x_hi = std::min(w, w + 1 - kx);
          for (int x = x_lo; x < x_hi; ++x) dst[sy * w + x + kx - 1] += src[y * w + x];
        }
      }
  }
  return out;
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  EncoderParams p;
  int in = Image::kChannels;
  for (int out : config.channels) {
    ConvLayer layer{Mat(out, in * 9), Mat::Zero(out, 1)};
    init_uniform(layer.weight, in * 9, rng);
    p.convs.push_back(std::move(layer));
    in = out;
  }
  p.fc1 = make_dense(config.d, config.pooled_dim(), rng);
  p.fc2 = make_dense(config.d, config.d, rng);
  return p;
}

FeatureMap encode(const EncoderConfig& config, const EncoderParams& params, const Image& image, EncoderTrace* trace) {
  if (image.width() < config.total_stride() || image.height() < config.total_stride())
    fail(ErrorKind::argument, "image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                  " is smaller than the encoder stride " + std::to_string(config.total_stride()));
  if (params.convs.size() != config.channels.size()) fail(ErrorKind::config, "encoder parameters do not match config");

  int h = image.height(), w = image.width();
  Mat x(Image::kChannels, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int i = 0; i < h * w; ++i) x(c, i) = 2.0 * image.data()[static_cast<std::size_t>(c) * h * w + i] - 1.0;

  if (trace) trace->blocks.assign(params.convs.size(), {});
  for (std::size_t b = 0; b < params.convs.size(); ++b) {
    const auto& layer = params.convs[b];
    Mat cols = im2col(x, h, w);
    Mat pre = layer.weight * cols;
    pre.colwise() += layer.bias.col(0);

    const int oh = config.downsample[b] ? (h + 1) / 2 : h;
    const int ow = config.downsample[b] ? (w + 1) / 2 : w;
    Mat out(pre.rows(), static_cast<Eigen::Index>(oh) * ow);
    std::vector<int> index;
    if (config.downsample[b]) {
      index.resize(static_cast<std::size_t>(out.size()));
      for (Eigen::Index c = 0; c < pre.rows(); ++c) {
        const double* src = pre.row(c).data();
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            int best = -1;
            double best_v = 0;
            for (int y = 2 * oy; y < std::min(2 * oy + 2, h); ++y)
              for (int xx = 2 * ox; xx < std::min(2 * ox + 2, w); ++xx) {
                const double v = std::max(0.0, src[y * w + xx]);
                if (best < 0 || v > best_v) best = y * w + xx, best_v = v;
              }
            out(c, oy * ow + ox) = best_v;
            index[static_cast<std::size_t>(c * oh * ow + oy * ow + ox)] = best;
          }
      }
    } else {
      out = pre.cwiseMax(0.0);
    }
    if (trace) {
      auto& tb = trace->blocks[b];
      tb.in_h = h, tb.in_w = w, tb.out_h = oh, tb.out_w = ow;
      tb.columns = std::move(cols);
      tb.pre = std::move(pre);
      tb.pool_index = std::move(index);
    }
    x = std::move(out);
    h = oh, w = ow;
  }

  FeatureMap fm;
  fm.channels = static_cast<int>(x.rows());
  fm.height = h;
  fm.width = w;
  fm.values = std::move(x);
  fm.spatial_scale_x = static_cast<double>(w) / image.width();
  fm.spatial_scale_y = static_cast<double>(h) / image.height();
  return fm;
}

void encode_backward(const EncoderConfig& config, const EncoderParams& params, const EncoderTrace& trace,
                     const Mat& grad_fmap, EncoderParams& grad) {
  Mat g = grad_fmap;
  for (std::size_t bi = params.convs.size(); bi-- > 0;) {
    const auto& tb = trace.blocks[bi];
    const auto channels = tb.pre.rows();
    Mat g_pre = Mat::Zero(channels, static_cast<Eigen::Index>(tb.in_h) * tb.in_w);
    if (config.downsample[bi]) {
      const int cells = tb.out_h * tb.out_w;
      for (Eigen::Index c = 0; c < channels; ++c)
        for (int i = 0; i < cells; ++i) {
          const int src = tb.pool_index[static_cast<std::size_t>(c * cells + i)];
          if (tb.pre(c, src) > 0) g_pre(c, src) += g(c, i);
        }
    } else {
      g_pre = g.cwiseProduct((tb.pre.array() > 0).cast<double>().matrix());
    }
    grad.convs[bi].weight.noalias() += g_pre * tb.columns.transpose();
    grad.convs[bi].bias.col(0) += g_pre.rowwise().sum();
    if (bi > 0) {
      Mat g_cols = params.convs[bi].weight.transpose() * g_pre;
      g = col2im(g_cols, g_cols.rows() / 9, tb.in_h, tb.in_w);
    }
  }
}

std::pair<int, int> roi_cell_range(double lo, double hi, double scale, int extent) {
  int start = static_cast<int>(std::floor(lo * scale));
  int end = static_cast<int>(std::ceil(hi * scale));
  start = std::clamp(start, 0, extent - 1);
  end = std::clamp(end, start + 1, extent);
  return {start, end};
}

RoiPoolResult roi_pool(const FeatureMap& fmap, std::span<const BoxF> boxes, int pooled_w, int pooled_h) {
  RoiPoolResult r;
  r.pooled_w = pooled_w;
  r.pooled_h = pooled_h;
  r.channels = fmap.channels;
  const int per_channel = pooled_w * pooled_h;
  const Eigen::Index cols = static_cast<Eigen::Index>(fmap.channels) * per_channel;
  r.values.resize(static_cast<Eigen::Index>(boxes.size()), cols);
  r.argmax.assign(boxes.size() * static_cast<std::size_t>(cols), 0);

  for (std::size_t p = 0; p < boxes.size(); ++p) {
    const auto [x0, x1] = roi_cell_range(boxes[p].x1, boxes[p].x2, fmap.spatial_scale_x, fmap.width);
    const auto [y0, y1] = roi_cell_range(boxes[p].y1, boxes[p].y2, fmap.spatial_scale_y, fmap.height);
    const int rw = x1 - x0, rh = y1 - y0;
    for (int by = 0; by < pooled_h; ++by) {
      const int ys = y0 + by * rh / pooled_h;
      const int ye = y0 + ((by + 1) * rh + pooled_h - 1) / pooled_h;
      for (int bx = 0; bx < pooled_w; ++bx) {
        const int xs = x0 + bx * rw / pooled_w;
        const int xe = x0 + ((bx + 1) * rw + pooled_w - 1) / pooled_w;
        for (int c = 0; c < fmap.channels; ++c) {
          const double* src = fmap.values.row(c).data();
          int best = ys * fmap.width + xs;
          double best_v = src[best];
          for (int y = ys; y < ye; ++y)
            for (int x = xs; x < xe; ++x)
              if (src[y * fmap.width + x] > best_v) best = y * fmap.width + x, best_v = src[best];
          const Eigen::Index col = static_cast<Eigen::Index>(c) * per_channel + by * pooled_w + bx;
          r.values(static_cast<Eigen::Index>(p), col) = best_v;
          r.argmax[p * static_cast<std::size_t>(cols) + static_cast<std::size_t>(col)] = best;
        }
      }
    }
  }
  return r;
}

void roi_pool_backward(const RoiPoolResult& pooled, const Mat& grad_pooled, Mat& grad_fmap) {
  const int per_channel = pooled.pooled_w * pooled.pooled_h;
  const auto cols = pooled.values.cols();
  for (Eigen::Index p = 0; p < pooled.values.rows(); ++p)
    for (Eigen::Index col = 0; col < cols; ++col) {
      const double g = grad_pooled(p, col);
      if (g == 0.0) continue;
      const auto c = col / per_channel;
      grad_fmap(c, pooled.argmax[static_cast<std::size_t>(p * cols + col)]) += g;
    }
}

namespace {

Mat activate(const Mat& x, Activation a) { return a == Activation::relu ? Mat(x.cwiseMax(0.0)) : x; }

Mat activation_grad(const Mat& g, const Mat& pre, Activation a) {
  if (a == Activation::identity) return g;
  return g.cwiseProduct((pre.array() > 0).cast<double>().matrix());
}

}  // namespace

Mat proposal_representation(const EncoderConfig& config, const EncoderParams& params, const Mat& pooled,
                            ProjectionTrace* trace) {
  if (pooled.cols() != params.fc1.weight.cols())
    fail(ErrorKind::config, "pooled feature size " + std::to_string(pooled.cols()) + " does not match projection input " +
                                std::to_string(params.fc1.weight.cols()));
  Mat pre1 = pooled * params.fc1.weight.transpose();
  pre1.rowwise() += params.fc1.bias.col(0).transpose();
  Mat act1 = activate(pre1, config.projection_activation);
  Mat pre2 = act1 * params.fc2.weight.transpose();
  pre2.rowwise() += params.fc2.bias.col(0).transpose();
  Mat out = activate(pre2, config.projection_activation);
  if (trace) {
    trace->input = pooled;
    trace->pre1 = std::move(pre1);
    trace->act1 = std::move(act1);
    trace->pre2 = std::move(pre2);
  }
  return out;
}

Mat proposal_representation_backward(const EncoderConfig& config, const EncoderParams& params,
                                     const ProjectionTrace& trace, const Mat& grad_features, EncoderParams& grad) {
  const Mat g2 = activation_grad(grad_features, trace.pre2, config.projection_activation);
  grad.fc2.weight.noalias() += g2.transpose() * trace.act1;
  grad.fc2.bias.col(0) += g2.colwise().sum().transpose();
  const Mat g1 = activation_grad(g2 * params.fc2.weight, trace.pre1, config.projection_activation);
  grad.fc1.weight.noalias() += g1.transpose() * trace.input;
  grad.fc1.bias.col(0) += g1.colwise().sum().transpose();
  return g1 * params.fc1.weight;
}

}  // namespace imdet
