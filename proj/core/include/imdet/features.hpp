#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/box.hpp"
#include "imdet/image.hpp"
#include "imdet/tensor.hpp"

namespace imdet {

enum class Activation { relu, identity };

struct EncoderConfig {
  /// Output channels of each 3x3 conv block.
  std::vector<int> channels{16, 32, 64, 64};
  /// Whether each block ends with a 2x2 max-pool (ceil mode).
  std::vector<bool> downsample{true, true, true, true};
  int pooled_w = 2;
  int pooled_h = 2;
  int d = 128;
  Activation projection_activation = Activation::relu;

  int total_stride() const;
  int pooled_dim() const { return channels.back() * pooled_w * pooled_h; }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

struct ConvLayer {
  Mat weight;  // [out, in * 9]
  Mat bias;    // [out, 1]
};

struct EncoderParams {
  std::vector<ConvLayer> convs;
  Dense fc1;  // pooled_dim -> d
  Dense fc2;  // d -> d

  template <class F>
  void visit(F&& fn) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      fn("encoder.conv" + std::to_string(i) + ".weight", convs[i].weight);
      fn("encoder.conv" + std::to_string(i) + ".bias", convs[i].bias);
    }
    fn(std::string("encoder.fc1.weight"), fc1.weight);
    fn(std::string("encoder.fc1.bias"), fc1.bias);
    fn(std::string("encoder.fc2.weight"), fc2.weight);
    fn(std::string("encoder.fc2.bias"), fc2.bias);
  }
};

/// Uniform fan-in initialisation (bound sqrt(6 / fan_in)), zero biases.
EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng);

struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Mat values;  // [channels, height * width]
  double spatial_scale_x = 1.0;
  double spatial_scale_y = 1.0;
};

/// Values needed to backpropagate through encode().
struct EncoderTrace {
  struct Block {
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    Mat columns;                  // im2col of the block input
    Mat pre;                      // conv output before the rectifier
    std::vector<int> pool_index;  // argmax (into in_h*in_w) per pooled cell
  };
  std::vector<Block> blocks;
};

/// Image -> feature map. Pixels are mapped from [0,1] to [-1,1] first.
/// Output spatial size is ceil(input / total_stride).
FeatureMap encode(const EncoderConfig& config, const EncoderParams& params, const Image& image,
                  EncoderTrace* trace = nullptr);

/// Accumulates parameter gradients given dLoss/dFeatureMap.
void encode_backward(const EncoderConfig& config, const EncoderParams& params, const EncoderTrace& trace,
                     const Mat& grad_fmap, EncoderParams& grad);

struct RoiPoolResult {
  int pooled_w = 0, pooled_h = 0, channels = 0;
  Mat values;                // [P, channels * pooled_h * pooled_w]
  std::vector<int> argmax;   // same layout, index into height*width
};

/// Feature-cell range [start, end) covered by a box edge pair after mapping
/// to feature coordinates; always at least one cell.
std::pair<int, int> roi_cell_range(double lo, double hi, double scale, int extent);

/// Max RoI pooling; bins use floor(start)/ceil(end) boundaries.
RoiPoolResult roi_pool(const FeatureMap& fmap, std::span<const BoxF> boxes, int pooled_w, int pooled_h);

/// Routes pooled gradients to the argmax cells, accumulating into grad_fmap.
void roi_pool_backward(const RoiPoolResult& pooled, const Mat& grad_pooled, Mat& grad_fmap);

struct ProjectionTrace {
  Mat input, pre1, act1, pre2;
};

/// Two fully connected layers with the configured nonlinearity: [P, pooled] -> [P, d].
Mat proposal_representation(const EncoderConfig& config, const EncoderParams& params, const Mat& pooled,
                            ProjectionTrace* trace = nullptr);

/// Returns dLoss/dpooled and accumulates fc gradients.
Mat proposal_representation_backward(const EncoderConfig& config, const EncoderParams& params,
                                     const ProjectionTrace& trace, const Mat& grad_features, EncoderParams& grad);

}  // namespace imdet
