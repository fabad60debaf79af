#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/box.hpp"
#include "imdet/image.hpp"

namespace imdet {

/// Label map from graph-based segmentation. Labels are numbered in raster
/// order of first appearance.
struct SegmentationMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;
  int region_count = 0;

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// Felzenszwalb-Huttenlocher segmentation on the 4-connected pixel grid with
/// Euclidean RGB edge weights on the 0..255 scale. `sigma` > 0 applies a
/// Gaussian pre-smoothing; 0 disables it. Ties are broken by edge index
/// (raster order, right edge before down edge).
SegmentationMap felzenszwalb_segment(const Image& image, double k, int min_size, double sigma = 0.8);

struct RegionStats {
  int size = 0;
  BoxF bbox;
  std::vector<double> color_hist;    // bins x 3, L1-normalised
  std::vector<double> texture_hist;  // 8 orientations x 3, L1-normalised
};

/// Per-region statistics of a segmentation (index = region label).
std::vector<RegionStats> compute_region_stats(const Image& image, const SegmentationMap& seg, int histogram_bins);

/// Size-weighted union of two regions.
RegionStats merge_regions(const RegionStats& a, const RegionStats& b);

struct SimilarityWeights {
  double color = 1, texture = 1, size = 1, fill = 1;
};

struct SimilarityTerms {
  double color = 0, texture = 0, size = 0, fill = 0;
};

SimilarityTerms similarity_terms(const RegionStats& a, const RegionStats& b, double image_area);
double region_similarity(const RegionStats& a, const RegionStats& b, double image_area,
                         const SimilarityWeights& weights);

struct SelectiveSearchParams {
  double felz_k = 100;
  int felz_min_size = 20;
  double sigma = 0.8;
  SimilarityWeights weights;
  int histogram_bins = 25;
  int max_proposals = 500;

  void validate() const;
};

enum class ProposalSource { selective_search, grid };

const char* to_string(ProposalSource s);
ProposalSource proposal_source_from_string(const std::string& s);

struct ProposalSet {
  std::vector<BoxF> boxes;
  ProposalSource source = ProposalSource::selective_search;
};

/// Full grouping record: regions in creation order (initial segments first,
/// then one region per merge) and the merged pairs.
struct GroupingHierarchy {
  int initial_regions = 0;
  std::vector<BoxF> region_boxes;
  struct Merge {
    int a, b, result;
    double similarity;
  };
  std::vector<Merge> merges;
};

GroupingHierarchy selective_search_hierarchy(const Image& image, const SelectiveSearchParams& params);

/// Bounding boxes of every region in the hierarchy, deduplicated and
/// truncated to max_proposals in creation order.
ProposalSet selective_search(const Image& image, const SelectiveSearchParams& params);

struct GridParams {
  std::vector<double> scales{16, 32, 48};
  std::vector<double> aspect_ratios{0.5, 1, 2};  // height / width
  double stride = 16;
  int max_proposals = 1000;

  void validate() const;
};

/// Sliding windows centred on multiples of the stride in [0,W]x[0,H],
/// clipped to the image and deduplicated.
ProposalSet grid_proposals(const Image& image, const GridParams& params);

/// Drops empty and duplicate boxes, keeps the first occurrence.
std::vector<BoxF> dedupe_boxes(const std::vector<BoxF>& boxes);

struct ProposalConfig {
  ProposalSource method = ProposalSource::selective_search;
  SelectiveSearchParams selective_search;
  GridParams grid;

  std::string cache_key() const;
};

void to_json(nlohmann::json& j, const ProposalConfig& c);
void from_json(const nlohmann::json& j, ProposalConfig& c);

ProposalSet extract_proposals(const Image& image, const ProposalConfig& config);

/// <dir>/proposals/<idx>.json = {"boxes": [[x1,y1,x2,y2]], "source": ..., "params": key}
void save_proposals(const std::filesystem::path& path, const ProposalSet& set, const std::string& key);
/// Returns nullopt if the file is missing or was computed with another key.
std::optional<ProposalSet> load_proposals(const std::filesystem::path& path, const std::string& key);

}  // namespace imdet
