#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sixmap/common.hpp"

namespace sixmap::roles {

// Mean silhouette coefficient with Euclidean distances.  A point alone in its
// cluster scores 0, as does a point with a = b = 0.  Requires at least two
// non-empty clusters.
double silhouette(std::span<const Vec2> points, std::span<const int> labels);

struct KMeansResult {
  std::vector<int> labels;
  std::vector<Vec2> centers;
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeds; best of `restarts` by inertia.
KMeansResult kmeans(std::span<const Vec2> points, int k, std::uint64_t seed, int restarts = 10,
                    int max_iter = 100);

struct ClusterOptions {
  double threshold = 0.6;
  int k_min = 2;
  int k_max = 4;
  int restarts = 10;
  std::uint64_t seed = 0x5eedULL;
};

struct PlayerClustering {
  std::vector<int> labels;
  int k = 1;
  // Silhouette of the chosen k, or the best one seen when falling back to a
  // single cluster (0 when no k could be evaluated).
  double silhouette = 0.0;
};

// Chooses k in [k_min, k_max] (k < n) maximising the silhouette; a single
// cluster when every score is below the threshold or n < 3.  Labels are
// numbered by first appearance in (x, y)-sorted order, which makes the result
// independent of the input order.
PlayerClustering cluster_player(std::span<const Vec2> role_means, const ClusterOptions& opt = {});

}  // namespace sixmap::roles
