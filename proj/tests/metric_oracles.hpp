#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "imdet/evaluation.hpp"

namespace imdet::testing {

/// Exact fraction with small integer parts.
struct Rational {
  std::int64_t num = 0, den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    const std::int64_t g = std::gcd(n, d);
    return {n / g, d / g};
  }
  friend Rational operator+(Rational a, Rational b) { return make(a.num * b.den + b.num * a.den, a.den * b.den); }
  friend Rational operator*(Rational a, Rational b) { return make(a.num * b.num, a.den * b.den); }
  friend bool operator<(Rational a, Rational b) { return a.num * b.den < b.num * a.den; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// The unique keep-set K with: i in K iff no higher-ranked member of K
/// overlaps i at IoU >= threshold. Found by enumerating every subset; also
/// reports how many subsets satisfied the condition.
inline std::vector<Detection> brute_force_nms(const std::vector<Detection>& dets, double threshold,
                                              int* solutions = nullptr) {
  const int n = static_cast<int>(dets.size());
  std::vector<int> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<int> pos(n);
  for (int r = 0; r < n; ++r) pos[rank[r]] = r;

  std::optional<unsigned> found;
  int count = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      bool dominated = false;
      for (int j = 0; j < n; ++j)
        if ((mask >> j & 1u) && pos[j] < pos[i] && iou(dets[i].box, dets[j].box) >= threshold) dominated = true;
      ok = ((mask >> i & 1u) != 0) == !dominated;
    }
    if (ok) {
      ++count;
      found = mask;
    }
  }
  if (solutions) *solutions = count;
  std::vector<Detection> out;
  if (!found) return out;
  for (int r = 0; r < n; ++r)
    if (*found >> rank[r] & 1u) out.push_back(dets[rank[r]]);
  return out;
}

/// Exact AP: detections ranked by score, each matched to the best unmatched
/// ground truth of its image; precision/recall at every cutoff; all-points
/// envelope area or the 11-point mean.
inline std::optional<Rational> brute_force_ap(const std::vector<ImageDetection>& dets,
                                              const std::vector<std::vector<BoxF>>& gts, double threshold,
                                              ApMode mode) {
  std::int64_t total = 0;
  for (const auto& g : gts) total += static_cast<std::int64_t>(g.size());
  if (total == 0) return std::nullopt;
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dets[a].score > dets[b].score; });

  std::vector<std::vector<bool>> used;
  for (const auto& g : gts) used.emplace_back(g.size(), false);
  std::vector<Rational> precision, recall;
  std::int64_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& d = dets[order[k]];
    int best = -1;
    double best_iou = threshold;
    for (std::size_t j = 0; j < gts[d.image].size(); ++j) {
      if (used[d.image][j]) continue;
      const double o = iou(d.box, gts[d.image][j]);
      if (o >= best_iou && (best < 0 || o > best_iou)) best = static_cast<int>(j), best_iou = o;
    }
    if (best >= 0) {
      used[d.image][best] = true;
      ++tp;
    }
    precision.push_back(Rational::make(tp, static_cast<std::int64_t>(k + 1)));
    recall.push_back(Rational::make(tp, total));
  }

  auto max_precision_from = [&](auto keep) {
    Rational m{0, 1};
    for (std::size_t j = 0; j < precision.size(); ++j)
      if (keep(j) && m < precision[j]) m = precision[j];
    return m;
  };
  Rational ap{0, 1};
  if (mode == ApMode::all_points) {
    Rational prev{0, 1};
    for (std::size_t k = 0; k < recall.size(); ++k) {
      const Rational step = recall[k] + Rational{-prev.num, prev.den};
      if (step.num != 0) ap = ap + step * max_precision_from([&](std::size_t j) { return j >= k; });
      prev = recall[k];
    }
  } else {
    for (int t = 0; t <= 10; ++t) {
      const Rational level = Rational::make(t, 10);
      ap = ap + Rational::make(1, 11) * max_precision_from([&](std::size_t j) { return !(recall[j] < level); });
    }
  }
  return ap;
}

/// Box pool with a spread of pairwise overlaps.
inline const std::vector<BoxF>& oracle_boxes() {
  static const std::vector<BoxF> boxes = {{0, 0, 10, 10},  {1, 1, 11, 11},   {5, 0, 15, 10},
                                          {0, 0, 10, 20},  {20, 20, 30, 30}, {2, 0, 12, 10}};
  return boxes;
}

inline const std::vector<BoxF>& oracle_gt_boxes() {
  static const std::vector<BoxF> boxes = {{0, 0, 10, 10}, {5, 0, 15, 10}, {20, 20, 30, 30}, {0, 0, 10, 20}};
  return boxes;
}

struct OracleSweep {
  long instances = 0;
  long mismatches = 0;
  long non_unique = 0;
};

/// Every prefix of the box pool, every score permutation, several thresholds.
inline OracleSweep sweep_nms() {
  OracleSweep s;
  const auto& pool = oracle_boxes();
  for (std::size_t n = 0; n <= pool.size(); ++n) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      std::vector<Detection> dets;
      for (std::size_t i = 0; i < n; ++i) dets.push_back({pool[i], 0, 0.1 * (perm[i] + 1)});
      for (double thr : {0.0, 0.3, 0.5, 0.6, 0.7, 1.0}) {
        int solutions = 0;
        const auto expect = brute_force_nms(dets, thr, &solutions);
        ++s.instances;
        s.non_unique += solutions != 1;
        s.mismatches += nms(dets, thr) != expect;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return s;
}

/// Every GT subset (one or two images), every detection prefix and score
/// permutation, both AP modes, against the rounded rational result.
inline OracleSweep sweep_ap(double tolerance = 0.0) {
  OracleSweep s;
  const auto& pool = oracle_boxes();
  const auto& gpool = oracle_gt_boxes();
  for (int images : {1, 2})
    for (unsigned gmask = 0; gmask < (1u << gpool.size()); ++gmask) {
      std::vector<std::vector<BoxF>> gts(images);
      for (std::size_t j = 0; j < gpool.size(); ++j)
        if (gmask >> j & 1u) gts[j % images].push_back(gpool[j]);
      for (std::size_t n = 0; n <= pool.size(); ++n) {
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        do {
          std::vector<ImageDetection> dets;
          for (std::size_t i = 0; i < n; ++i) dets.push_back({static_cast<int>(i % images), pool[i], 0.1 * (perm[i] + 1)});
          for (ApMode mode : {ApMode::all_points, ApMode::voc07}) {
            const auto expect = brute_force_ap(dets, gts, 0.5, mode);
            const auto got = average_precision(dets, gts, 0.5, mode);
            ++s.instances;
            if (expect.has_value() != got.has_value() || (expect && std::abs(expect->value() - *got) > tolerance))
              ++s.mismatches;
          }
        } while (std::next_permutation(perm.begin(), perm.end()));
      }
    }
  return s;
}

}  // namespace imdet::testing
