#include "imdet/image.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "imdet/error.hpp"

namespace imdet {

namespace {
std::atomic<std::uint64_t> g_oracle_reads{0};
}  // namespace

Image::Image(int width, int height, float fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(kChannels) * width * height, fill) {
  if (width <= 0 || height <= 0) fail(ErrorKind::argument, "image dimensions must be positive");
}

bool Image::valid() const {
  if (width_ < 8 || height_ < 8) return false;
  return std::all_of(data_.begin(), data_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

void Image::quantize() {
  for (float& v : data_) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

Image flip_horizontal(const Image& image) {
  Image out(image.width(), image.height());
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x) out.at(c, y, x) = image.at(c, y, image.width() - 1 - x);
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  Image out(width, height);
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const double bot = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(std::clamp(top * (1 - wy) + bot * wy, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image crop_and_warp(const Image& image, const BoxF& box, int size) {
  const int x1 = std::clamp(static_cast<int>(std::floor(box.x1)), 0, image.width() - 1);
  const int y1 = std::clamp(static_cast<int>(std::floor(box.y1)), 0, image.height() - 1);
  const int x2 = std::clamp(static_cast<int>(std::ceil(box.x2)), x1 + 1, image.width());
  const int y2 = std::clamp(static_cast<int>(std::ceil(box.y2)), y1 + 1, image.height());
  Image crop(x2 - x1, y2 - y1);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = y1; y < y2; ++y)
      for (int x = x1; x < x2; ++x) crop.at(c, y - y1, x - x1) = image.at(c, y, x);
  return resize_bilinear(crop, size, size);
}

const char* to_string(Provenance p) { return p == Provenance::real ? "real" : "imaginary"; }

Provenance provenance_from_string(const std::string& s) {
  if (s == "real") return Provenance::real;
  if (s == "imaginary") return Provenance::imaginary;
  fail(ErrorKind::format, "unknown provenance '" + s + "'");
}

const std::vector<LabeledBox>* training_boxes(const ImageSample& sample) {
  if (!sample.gt_boxes) return nullptr;
  if (sample.provenance == Provenance::imaginary) g_oracle_reads.fetch_add(1, std::memory_order_relaxed);
  return &*sample.gt_boxes;
}

std::uint64_t oracle_box_reads() { return g_oracle_reads.load(std::memory_order_relaxed); }
void reset_oracle_box_reads() { g_oracle_reads.store(0, std::memory_order_relaxed); }

}  // namespace imdet
