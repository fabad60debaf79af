#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "imdet/box.hpp"
#include "imdet/image.hpp"

namespace imdet::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "imdet") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Image random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(w, h);
  for (float& v : img.data()) v = u(rng);
  return img;
}

inline BoxF random_box(double w, double h, std::mt19937_64& rng, double min_side = 1.0) {
  std::uniform_real_distribution<double> ux(0.0, w - min_side), uy(0.0, h - min_side);
  const double x1 = ux(rng), y1 = uy(rng);
  std::uniform_real_distribution<double> uw(min_side, w - x1), uh(min_side, h - y1);
  return {x1, y1, x1 + uw(rng), y1 + uh(rng)};
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace imdet::testing
