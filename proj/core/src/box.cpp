#include "imdet/box.hpp"

#include <algorithm>

#include "imdet/error.hpp"

namespace imdet {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "configuration error";
    case ErrorKind::argument: return "argument error";
    case ErrorKind::transport: return "transport error";
    case ErrorKind::protocol: return "protocol error";
    case ErrorKind::format: return "format error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::invariant: return "invariant violation";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

double iou(const BoxF& a, const BoxF& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoxF clip(const BoxF& box, double w, double h) {
  return {std::clamp(box.x1, 0.0, w), std::clamp(box.y1, 0.0, h), std::clamp(box.x2, 0.0, w),
          std::clamp(box.y2, 0.0, h)};
}

BoxF unite(const BoxF& a, const BoxF& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

}  // namespace imdet
