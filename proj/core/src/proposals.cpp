#include "imdet/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <tuple>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"

namespace imdet {

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(int n) : parent_(n), rank_(n, 0), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  int join(int a, int b) {
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    if (rank_[a] == rank_[b]) ++rank_[a];
    return a;
  }

  int size(int x) const { return size_[x]; }

 private:
  std::vector<int> parent_, rank_, size_;
};

std::vector<float> gaussian_smooth(const Image& image, double sigma) {
  const int w = image.width(), h = image.height();
  std::vector<float> out(image.data());
  if (sigma <= 0) return out;
  const int radius = static_cast<int>(std::ceil(4 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double total = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= total;

  std::vector<float> tmp(out.size());
  for (int c = 0; c < 3; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * w * h;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * image.data()[base + y * w + std::clamp(x + i, 0, w - 1)];
        tmp[base + y * w + x] = static_cast<float>(acc);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp[base + std::clamp(y + i, 0, h - 1) * w + x];
        out[base + y * w + x] = static_cast<float>(acc);
      }
  }
  return out;
}

struct Edge {
  double weight;
  int a, b;
};

}  // namespace

SegmentationMap felzenszwalb_segment(const Image& image, double k, int min_size, double sigma) {
  if (image.empty()) fail(ErrorKind::argument, "cannot segment an empty image");
  const int w = image.width(), h = image.height(), n = w * h;
  const std::vector<float> px = gaussian_smooth(image, sigma);
  auto dist = [&](int p, int q) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = 255.0 * (px[static_cast<std::size_t>(c) * n + p] - px[static_cast<std::size_t>(c) * n + q]);
      d2 += d * d;
    }
    return std::sqrt(d2);
  };

  std::vector<Edge> edges;
  edges.reserve(2 * static_cast<std::size_t>(n));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int p = y * w + x;
      if (x + 1 < w) edges.push_back({dist(p, p + 1), p, p + 1});
      if (y + 1 < h) edges.push_back({dist(p, p + w), p, p + w});
    }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.weight < r.weight; });

  DisjointSet sets(n);
  std::vector<double> threshold(n, k);
  for (const Edge& e : edges) {
    const int a = sets.find(e.a), b = sets.find(e.b);
    if (a == b) continue;
    if (e.weight <= threshold[a] && e.weight <= threshold[b]) {
      const int root = sets.join(a, b);
      threshold[root] = e.weight + k / sets.size(root);
    }
  }
  for (const Edge& e : edges) {
    const int a = sets.find(e.a), b = sets.find(e.b);
    if (a != b && (sets.size(a) < min_size || sets.size(b) < min_size)) sets.join(a, b);
  }

  SegmentationMap seg;
  seg.width = w;
  seg.height = h;
  seg.labels.resize(n);
  std::vector<int> relabel(n, -1);
  for (int p = 0; p < n; ++p) {
    const int root = sets.find(p);
    if (relabel[root] < 0) relabel[root] = seg.region_count++;
    seg.labels[p] = relabel[root];
  }
  return seg;
}

namespace {

void normalise(std::vector<double>& hist) {
  const double total = std::accumulate(hist.begin(), hist.end(), 0.0);
  if (total > 0) {
    for (double& v : hist) v /= total;
  } else {
    std::fill(hist.begin(), hist.end(), 1.0 / static_cast<double>(hist.size()));
  }
}

double intersection(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
  return std::clamp(s, 0.0, 1.0);
}

constexpr int kOrientations = 8;

}  // namespace

std::vector<RegionStats> compute_region_stats(const Image& image, const SegmentationMap& seg, int bins) {
  const int w = image.width(), h = image.height();
  std::vector<RegionStats> stats(static_cast<std::size_t>(seg.region_count));
  for (auto& s : stats) {
    s.color_hist.assign(static_cast<std::size_t>(bins) * 3, 0.0);
    s.texture_hist.assign(kOrientations * 3, 0.0);
    s.bbox = {static_cast<double>(w), static_cast<double>(h), 0, 0};
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto& s = stats[static_cast<std::size_t>(seg.at(y, x))];
      ++s.size;
      s.bbox = {std::min(s.bbox.x1, double(x)), std::min(s.bbox.y1, double(y)), std::max(s.bbox.x2, x + 1.0),
                std::max(s.bbox.y2, y + 1.0)};
      for (int c = 0; c < 3; ++c) {
        const float v = image.at(c, y, x);
        const int b = std::clamp(static_cast<int>(v * bins), 0, bins - 1);
        s.color_hist[static_cast<std::size_t>(c) * bins + b] += 1.0;
        const double gx = image.at(c, y, std::min(x + 1, w - 1)) - image.at(c, y, std::max(x - 1, 0));
        const double gy = image.at(c, std::min(y + 1, h - 1), x) - image.at(c, std::max(y - 1, 0), x);
        const double mag = std::hypot(gx, gy);
        if (mag > 0) {
          const double theta = std::atan2(gy, gx) + std::numbers::pi;  // [0, 2pi]
          const int o = std::clamp(static_cast<int>(theta / (2 * std::numbers::pi) * kOrientations), 0,
                                   kOrientations - 1);
          s.texture_hist[static_cast<std::size_t>(c) * kOrientations + o] += mag;
        }
      }
    }
  for (auto& s : stats) {
    normalise(s.color_hist);
    normalise(s.texture_hist);
  }
  return stats;
}

RegionStats merge_regions(const RegionStats& a, const RegionStats& b) {
  RegionStats m;
  m.size = a.size + b.size;
  m.bbox = unite(a.bbox, b.bbox);
  const double wa = static_cast<double>(a.size) / m.size, wb = static_cast<double>(b.size) / m.size;
  m.color_hist.resize(a.color_hist.size());
  for (std::size_t i = 0; i < m.color_hist.size(); ++i) m.color_hist[i] = wa * a.color_hist[i] + wb * b.color_hist[i];
  m.texture_hist.resize(a.texture_hist.size());
  for (std::size_t i = 0; i < m.texture_hist.size(); ++i)
    m.texture_hist[i] = wa * a.texture_hist[i] + wb * b.texture_hist[i];
  return m;
}

SimilarityTerms similarity_terms(const RegionStats& a, const RegionStats& b, double image_area) {
  if (a.size <= 0 || b.size <= 0 || image_area <= 0)
    fail(ErrorKind::invariant, "region similarity on a zero-area region");
  SimilarityTerms t;
  t.color = intersection(a.color_hist, b.color_hist);
  t.texture = intersection(a.texture_hist, b.texture_hist);
  t.size = std::clamp(1.0 - (a.size + b.size) / image_area, 0.0, 1.0);
  t.fill = std::clamp(1.0 - (unite(a.bbox, b.bbox).area() - a.size - b.size) / image_area, 0.0, 1.0);
  return t;
}

double region_similarity(const RegionStats& a, const RegionStats& b, double image_area, const SimilarityWeights& wt) {
  const auto t = similarity_terms(a, b, image_area);
  return wt.color * t.color + wt.texture * t.texture + wt.size * t.size + wt.fill * t.fill;
}

void SelectiveSearchParams::validate() const {
  const auto& w = weights;
  if (w.color < 0 || w.texture < 0 || w.size < 0 || w.fill < 0)
    fail(ErrorKind::config, "similarity weights must be non-negative");
  if (w.color + w.texture + w.size + w.fill <= 0) fail(ErrorKind::config, "similarity weights must not all be zero");
  if (histogram_bins < 2) fail(ErrorKind::config, "histogram_bins must be >= 2");
  if (max_proposals < 1) fail(ErrorKind::config, "max_proposals must be >= 1");
  if (felz_k <= 0 || felz_min_size < 1) fail(ErrorKind::config, "invalid segmentation parameters");
}

GroupingHierarchy selective_search_hierarchy(const Image& image, const SelectiveSearchParams& params) {
  params.validate();
  const SegmentationMap seg = felzenszwalb_segment(image, params.felz_k, params.felz_min_size, params.sigma);
  std::vector<RegionStats> regions = compute_region_stats(image, seg, params.histogram_bins);
  const double area = static_cast<double>(image.width()) * image.height();

  GroupingHierarchy out;
  out.initial_regions = seg.region_count;
  for (const auto& r : regions) out.region_boxes.push_back(r.bbox);

  std::vector<std::set<int>> neighbours(regions.size());
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x) {
      const int a = seg.at(y, x);
      if (x + 1 < seg.width && seg.at(y, x + 1) != a) {
        neighbours[a].insert(seg.at(y, x + 1));
        neighbours[seg.at(y, x + 1)].insert(a);
      }
      if (y + 1 < seg.height && seg.at(y + 1, x) != a) {
        neighbours[a].insert(seg.at(y + 1, x));
        neighbours[seg.at(y + 1, x)].insert(a);
      }
    }

  // Ordered by descending similarity, then (min_id, max_id) ascending.
  using Key = std::tuple<double, int, int>;
  std::set<Key> queue;
  std::map<std::pair<int, int>, double> score;
  auto add_pair = [&](int i, int j) {
    if (i > j) std::swap(i, j);
    if (score.count({i, j})) return;
    const double s = region_similarity(regions[i], regions[j], area, params.weights);
    score[{i, j}] = s;
    queue.insert({-s, i, j});
  };
  auto drop_pair = [&](int i, int j) {
    if (i > j) std::swap(i, j);
    auto it = score.find({i, j});
    if (it == score.end()) return;
    queue.erase({-it->second, i, j});
    score.erase(it);
  };
  for (int i = 0; i < static_cast<int>(neighbours.size()); ++i)
    for (int j : neighbours[i])
      if (i < j) add_pair(i, j);

  while (!queue.empty()) {
    const auto [neg, i, j] = *queue.begin();
    const int t = static_cast<int>(regions.size());
    regions.push_back(merge_regions(regions[i], regions[j]));
    std::set<int> merged_nb;
    for (int k : neighbours[i]) merged_nb.insert(k);
    for (int k : neighbours[j]) merged_nb.insert(k);
    merged_nb.erase(i);
    merged_nb.erase(j);
    for (int k : std::vector<int>(neighbours[i].begin(), neighbours[i].end())) {
      drop_pair(i, k);
      neighbours[k].erase(i);
    }
    for (int k : std::vector<int>(neighbours[j].begin(), neighbours[j].end())) {
      drop_pair(j, k);
      neighbours[k].erase(j);
    }
    neighbours[i].clear();
    neighbours[j].clear();
    neighbours.push_back(merged_nb);
    for (int k : merged_nb) {
      neighbours[k].insert(t);
      add_pair(k, t);
    }
    out.region_boxes.push_back(regions.back().bbox);
    out.merges.push_back({i, j, t, -neg});
  }
  return out;
}

std::vector<BoxF> dedupe_boxes(const std::vector<BoxF>& boxes) {
  std::vector<BoxF> out;
  std::set<std::tuple<double, double, double, double>> seen;
  for (const auto& b : boxes) {
    if (!b.valid()) continue;
    if (seen.insert({b.x1, b.y1, b.x2, b.y2}).second) out.push_back(b);
  }
  return out;
}

ProposalSet selective_search(const Image& image, const SelectiveSearchParams& params) {
  const auto hierarchy = selective_search_hierarchy(image, params);
  ProposalSet set;
  set.source = ProposalSource::selective_search;
  set.boxes = dedupe_boxes(hierarchy.region_boxes);
  if (set.boxes.size() > static_cast<std::size_t>(params.max_proposals))
    set.boxes.resize(static_cast<std::size_t>(params.max_proposals));
  return set;
}

void GridParams::validate() const {
  if (scales.empty() || aspect_ratios.empty()) fail(ErrorKind::config, "grid scales and aspect ratios must be non-empty");
  for (double s : scales)
    if (!(s > 0)) fail(ErrorKind::config, "grid scales must be positive");
  for (double r : aspect_ratios)
    if (!(r > 0)) fail(ErrorKind::config, "grid aspect ratios must be positive");
  if (!(stride > 0)) fail(ErrorKind::config, "grid stride must be positive");
  if (max_proposals < 1) fail(ErrorKind::config, "max_proposals must be >= 1");
}

ProposalSet grid_proposals(const Image& image, const GridParams& params) {
  params.validate();
  const double w = image.width(), h = image.height();
  std::vector<BoxF> boxes;
  for (double s : params.scales)
    for (double r : params.aspect_ratios) {
      const double bw = s / std::sqrt(r), bh = s * std::sqrt(r);
      for (int iy = 0; iy * params.stride <= h; ++iy)
        for (int ix = 0; ix * params.stride <= w; ++ix) {
          const double cx = ix * params.stride, cy = iy * params.stride;
          boxes.push_back(clip({cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2}, w, h));
        }
    }
  ProposalSet set;
  set.source = ProposalSource::grid;
  set.boxes = dedupe_boxes(boxes);
  if (set.boxes.size() > static_cast<std::size_t>(params.max_proposals))
    set.boxes.resize(static_cast<std::size_t>(params.max_proposals));
  return set;
}

const char* to_string(ProposalSource s) { return s == ProposalSource::grid ? "grid" : "selective_search"; }

ProposalSource proposal_source_from_string(const std::string& s) {
  if (s == "grid") return ProposalSource::grid;
  if (s == "selective_search") return ProposalSource::selective_search;
  fail(ErrorKind::config, "unknown proposal method '" + s + "'");
}

void to_json(nlohmann::json& j, const ProposalConfig& c) {
  const auto& ss = c.selective_search;
  j = {{"method", to_string(c.method)},
       {"selective_search",
        {{"felz_k", ss.felz_k},
         {"felz_min_size", ss.felz_min_size},
         {"sigma", ss.sigma},
         {"sim_weights", {ss.weights.color, ss.weights.texture, ss.weights.size, ss.weights.fill}},
         {"histogram_bins", ss.histogram_bins},
         {"max_proposals", ss.max_proposals}}},
       {"grid",
        {{"scales", c.grid.scales},
         {"aspect_ratios", c.grid.aspect_ratios},
         {"stride", c.grid.stride},
         {"max_proposals", c.grid.max_proposals}}}};
}

void from_json(const nlohmann::json& j, ProposalConfig& c) {
  c = ProposalConfig{};
  if (j.contains("method")) c.method = proposal_source_from_string(j["method"].get<std::string>());
  if (j.contains("selective_search")) {
    const auto& s = j["selective_search"];
    auto& ss = c.selective_search;
    ss.felz_k = s.value("felz_k", ss.felz_k);
    ss.felz_min_size = s.value("felz_min_size", ss.felz_min_size);
    ss.sigma = s.value("sigma", ss.sigma);
    ss.histogram_bins = s.value("histogram_bins", ss.histogram_bins);
    ss.max_proposals = s.value("max_proposals", ss.max_proposals);
    if (s.contains("sim_weights")) {
      const auto w = s["sim_weights"].get<std::vector<double>>();
      if (w.size() != 4) fail(ErrorKind::config, "sim_weights must have 4 entries");
      ss.weights = {w[0], w[1], w[2], w[3]};
    }
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    c.grid.scales = g.value("scales", c.grid.scales);
    c.grid.aspect_ratios = g.value("aspect_ratios", c.grid.aspect_ratios);
    c.grid.stride = g.value("stride", c.grid.stride);
    c.grid.max_proposals = g.value("max_proposals", c.grid.max_proposals);
  }
}

std::string ProposalConfig::cache_key() const {
  nlohmann::json j = *this;
  return fnv1a_hex(j.dump());
}

ProposalSet extract_proposals(const Image& image, const ProposalConfig& config) {
  return config.method == ProposalSource::grid ? grid_proposals(image, config.grid)
                                               : selective_search(image, config.selective_search);
}

void save_proposals(const std::filesystem::path& path, const ProposalSet& set, const std::string& key) {
  auto boxes = nlohmann::json::array();
  for (const auto& b : set.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  const nlohmann::json j = {{"boxes", std::move(boxes)}, {"source", to_string(set.source)}, {"params", key}};
  std::filesystem::create_directories(path.parent_path());
  write_text(path, j.dump() + "\n");
}

std::optional<ProposalSet> load_proposals(const std::filesystem::path& path, const std::string& key) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto bytes = read_file(path);
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (j.value("params", std::string()) != key) return std::nullopt;
    ProposalSet set;
    set.source = proposal_source_from_string(j.at("source").get<std::string>());
    for (const auto& b : j.at("boxes")) set.boxes.push_back({b[0].get<double>(), b[1].get<double>(),
                                                             b[2].get<double>(), b[3].get<double>()});
    return set;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

}  // namespace imdet
