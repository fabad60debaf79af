#pragma once

#include <cmath>
#include <vector>

namespace imdet {

/// Axis-aligned box in pixel coordinates. Edges are continuous: a box covering
/// pixel columns [a, b] inclusive has x1 = a, x2 = b + 1.
struct BoxF {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2;
  }
  bool within(double w, double h) const { return x1 >= 0 && y1 >= 0 && x2 <= w && y2 <= h; }

  friend bool operator==(const BoxF&, const BoxF&) = default;
};

struct LabeledBox {
  BoxF box;
  int class_id = 0;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

/// Intersection over union; 0 when either box is empty.
double iou(const BoxF& a, const BoxF& b);

/// Clamps a box to [0,w]x[0,h]. The result may be invalid (empty).
BoxF clip(const BoxF& box, double w, double h);

/// Smallest box covering both.
BoxF unite(const BoxF& a, const BoxF& b);

}  // namespace imdet
