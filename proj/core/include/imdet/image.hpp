#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imdet/box.hpp"

namespace imdet {

/// Three-channel image, planar (CHW) float storage with values in [0,1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  int plane_size() const { return width_ * height_; }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  /// True when every value lies in [0,1] and the canvas is at least 8x8.
  bool valid() const;

  /// Rounds every value to the nearest multiple of 1/255 so the image
  /// survives an 8-bit PNG round trip unchanged.
  void quantize();

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Horizontal mirror.
Image flip_horizontal(const Image& image);

/// Bilinear resize (pixel-center aligned).
Image resize_bilinear(const Image& image, int width, int height);

/// Crops [x1,x2)x[y1,y2) (rounded outward, clamped) and warps to size x size.
Image crop_and_warp(const Image& image, const BoxF& box, int size);

enum class Provenance { real, imaginary };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct ImageSample {
  Image pixels;
  Provenance provenance = Provenance::imaginary;
  std::optional<std::vector<int>> class_labels;
  /// Box annotations. On imaginary samples these come from the procedural
  /// renderer and are oracle-only: evaluation may use them, training may not.
  std::optional<std::vector<LabeledBox>> gt_boxes;
  std::optional<std::string> description;
  std::optional<std::int64_t> seed;
};

/// Box supervision for a training loss. Every call made on an imaginary
/// sample is counted as an oracle read; training code must only obtain box
/// targets through this accessor.
const std::vector<LabeledBox>* training_boxes(const ImageSample& sample);

std::uint64_t oracle_box_reads();
void reset_oracle_box_reads();

}  // namespace imdet
