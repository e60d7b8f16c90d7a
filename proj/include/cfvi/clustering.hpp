#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"

namespace cfvi {

struct CorrelationGrouping {
  std::vector<FeatureSet> groups;           // ordered by smallest member
  std::vector<std::size_t> constant_columns;  // placed in singleton groups
};

/// Pearson correlations between columns. Constant columns get NaN
/// off-diagonal entries.
inline std::vector<std::vector<double>> correlation_matrix(const FeatureMatrix& X) {
  const std::size_t p = X.cols(), n = X.rows();
  std::vector<std::vector<double>> centered(p, std::vector<double>(n));
  std::vector<double> norm(p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = X.column(j);
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      centered[j][i] = col[i] - mean;
      ss += centered[j][i] * centered[j][i];
    }
    norm[j] = std::sqrt(ss);
  }
  std::vector<std::vector<double>> corr(p, std::vector<double>(p, 1.0));
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = a + 1; b < p; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += centered[a][i] * centered[b][i];
      const double r = (norm[a] > 0.0 && norm[b] > 0.0) ? dot / (norm[a] * norm[b]) : std::nan("");
      corr[a][b] = corr[b][a] = r;
    }
  }
  return corr;
}

/// Average-linkage agglomerative clustering of the columns on the distance
/// 1 - |corr|, cut at k clusters. Ties merge the pair whose smallest members
/// come first. Constant columns cannot be correlated and stay singletons.
inline CorrelationGrouping correlation_groups(const Dataset& d, std::size_t k) {
  const std::size_t p = d.p();
  if (k < 1 || k > p) throw Error(ErrorKind::InvalidArgument, "k must lie in [1, p]");
  const auto corr = correlation_matrix(d.features());

  CorrelationGrouping out;
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = d.features().column(j);
    const bool constant = std::all_of(col.begin(), col.end(), [&](double v) { return v == col[0]; });
    if (constant) {
      out.constant_columns.push_back(j);
    } else {
      clusters.push_back({j});
    }
  }

  const std::size_t m = clusters.size();
  std::vector<std::vector<double>> dist(m, std::vector<double>(m, 0.0));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      if (a != b) dist[a][b] = 1.0 - std::abs(corr[clusters[a][0]][clusters[b][0]]);
    }
  }

  const std::size_t target = std::max<std::size_t>(
      std::min<std::size_t>(1, m), k > out.constant_columns.size() ? k - out.constant_columns.size() : 0);
  std::vector<bool> alive(m, true);
  std::size_t remaining = m;
  while (remaining > target) {
    // Clusters keep their slot; slot order equals smallest-member order.
    std::size_t best_a = 0, best_b = 0;
    double best = HUGE_VAL;
    for (std::size_t a = 0; a < m; ++a) {
      if (!alive[a]) continue;
      for (std::size_t b = a + 1; b < m; ++b) {
        if (alive[b] && dist[a][b] < best) {
          best = dist[a][b];
          best_a = a;
          best_b = b;
        }
      }
    }
    const double size_a = static_cast<double>(clusters[best_a].size());
    const double size_b = static_cast<double>(clusters[best_b].size());
    for (std::size_t c = 0; c < m; ++c) {
      if (!alive[c] || c == best_a || c == best_b) continue;
      const double merged = (size_a * dist[best_a][c] + size_b * dist[best_b][c]) / (size_a + size_b);
      dist[best_a][c] = dist[c][best_a] = merged;
    }
    clusters[best_a].insert(clusters[best_a].end(), clusters[best_b].begin(), clusters[best_b].end());
    alive[best_b] = false;
    --remaining;
  }

  for (std::size_t a = 0; a < m; ++a) {
    if (alive[a]) out.groups.emplace_back(clusters[a]);
  }
  for (std::size_t j : out.constant_columns) out.groups.push_back(FeatureSet{j});
  std::sort(out.groups.begin(), out.groups.end(),
            [](const FeatureSet& a, const FeatureSet& b) { return a[0] < b[0]; });
  return out;
}

}  // namespace cfvi
