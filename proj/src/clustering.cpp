#include "sixmap/clustering.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include "sixmap/random.hpp"

namespace sixmap::roles {
namespace {

double dist2(Vec2 a, Vec2 b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

KMeansResult lloyd(std::span<const Vec2> pts, std::vector<Vec2> centers, int max_iter) {
  const std::size_t n = pts.size();
  const int k = static_cast<int>(centers.size());
  KMeansResult r;
  r.labels.assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = dist2(pts[i], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = dist2(pts[i], centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Vec2> sum(k);
    std::vector<int> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[r.labels[i]] = sum[r.labels[i]] + pts[i];
      ++cnt[r.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (cnt[c] > 0) centers[c] = (1.0 / cnt[c]) * sum[c];
    }
  }
  r.centers = std::move(centers);
  for (std::size_t i = 0; i < n; ++i) r.inertia += dist2(pts[i], r.centers[r.labels[i]]);
  return r;
}

std::vector<Vec2> kmeanspp(std::span<const Vec2> pts, int k, Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<Vec2> centers;
  centers.push_back(pts[uniform_index(rng, n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, dist2(pts[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(pts[uniform_index(rng, n)]);
      continue;
    }
    double r = uniform01(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r < 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(pts[pick]);
  }
  return centers;
}

}  // namespace

double silhouette(std::span<const Vec2> points, std::span<const int> labels) {
  require(points.size() == labels.size(), "silhouette: size mismatch");
  std::map<int, int> index;
  for (int l : labels) index.emplace(l, 0);
  require(index.size() >= 2, "silhouette: needs at least two clusters");
  int next = 0;
  for (auto& [l, i] : index) i = next++;
  const int k = next;
  const std::size_t n = points.size();
  std::vector<int> lab(n), size(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    lab[i] = index[labels[i]];
    ++size[lab[i]];
  }
  double total = 0.0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (size[lab[i]] == 1) continue;
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum[lab[j]] += std::sqrt(dist2(points[i], points[j]));
    }
    const double a = sum[lab[i]] / (size[lab[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != lab[i]) b = std::min(b, sum[c] / size[c]);
    }
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

KMeansResult kmeans(std::span<const Vec2> points, int k, std::uint64_t seed, int restarts,
                    int max_iter) {
  require(k >= 1 && static_cast<std::size_t>(k) <= points.size(),
          "kmeans: k must be in [1, n]");
  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    auto res = lloyd(points, kmeanspp(points, k, rng), max_iter);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

PlayerClustering cluster_player(std::span<const Vec2> role_means, const ClusterOptions& opt) {
  const std::size_t n = role_means.size();
  PlayerClustering out;
  out.labels.assign(n, 0);
  if (n < 3) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Vec2 pa = role_means[a], pb = role_means[b];
    return pa.x != pb.x ? pa.x < pb.x : pa.y < pb.y;
  });
  std::vector<Vec2> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = role_means[order[i]];

  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<int> best_labels;
  int best_k = 1;
  for (int k = opt.k_min; k <= opt.k_max && static_cast<std::size_t>(k) < n; ++k) {
    auto res = kmeans(sorted, k, derive_seed(opt.seed, "kmeans", static_cast<std::uint64_t>(k)),
                      opt.restarts);
    std::vector<int> counts(k, 0);
    for (int l : res.labels) ++counts[l];
    if (std::count(counts.begin(), counts.end(), 0) > 0) continue;
    const double s = silhouette(sorted, res.labels);
    if (s > best_score) {
      best_score = s;
      best_labels = std::move(res.labels);
      best_k = k;
    }
  }
  if (best_labels.empty()) return out;
  out.silhouette = best_score;
  if (best_score < opt.threshold) return out;

  std::map<int, int> relabel;
  for (int l : best_labels) relabel.emplace(l, static_cast<int>(relabel.size()));
  for (std::size_t i = 0; i < n; ++i) out.labels[order[i]] = relabel[best_labels[i]];
  out.k = best_k;
  return out;
}

}  // namespace sixmap::roles
