#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/forest_params.hpp"
#include "cfvi/parallel.hpp"
#include "cfvi/rng.hpp"

namespace cfvi {

struct TreeNode {
  std::uint32_t split_var = 0;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  // Estimation members of a leaf: leaf_samples[leaf_begin, leaf_end).
  std::uint32_t leaf_begin = 0;
  std::uint32_t leaf_end = 0;
  std::uint32_t split_count = 0;
  std::uint32_t estimation_count = 0;
  // Set on cap-enforcing median splits of oversized leaves.
  bool randomized = false;

  bool is_leaf() const noexcept { return left < 0; }
};

/// One honest tree. Splits were chosen on split_half only; leaves hold
/// members of estimation_half only.
struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<std::uint32_t> leaf_samples;
  std::vector<std::uint32_t> split_half;       // sorted
  std::vector<std::uint32_t> estimation_half;  // sorted
  std::vector<std::uint64_t> subsample_mask;   // bit i set iff i in the subsample
  // Leaves left above max_leaf_size because every candidate column was
  // constant on them (duplicated rows).
  std::uint32_t uncapped_leaves = 0;

  bool in_subsample(std::size_t i) const noexcept {
    return (subsample_mask[i >> 6] >> (i & 63)) & 1U;
  }

  std::size_t find_leaf(std::span<const double> x) const {
    std::size_t id = 0;
    while (!nodes[id].is_leaf()) {
      const auto& node = nodes[id];
      id = static_cast<std::size_t>(x[node.split_var] <= node.threshold ? node.left : node.right);
    }
    return id;
  }

  std::size_t find_leaf(const FeatureMatrix& X, std::size_t row) const {
    std::size_t id = 0;
    while (!nodes[id].is_leaf()) {
      const auto& node = nodes[id];
      id = static_cast<std::size_t>(X(row, node.split_var) <= node.threshold ? node.left : node.right);
    }
    return id;
  }

  std::span<const std::uint32_t> leaf_members(std::size_t node) const {
    return {leaf_samples.data() + nodes[node].leaf_begin, nodes[node].leaf_end - nodes[node].leaf_begin};
  }
};

// ---------------------------------------------------------------------------
// Splitting criteria. prepare() fills the per-row pseudo-response for the
// node's split-half rows and returns false when the node must stay a leaf.
// Every criterion maximizes sum over children of (sum rho)^2 / n_child.

/// Variance reduction for a real target.
struct RegressionCriterion {
  std::span<const double> target;

  bool prepare(std::span<const std::uint32_t> rows, std::span<double> rho) const {
    double mean = 0.0;
    for (auto r : rows) mean += target[r];
    mean /= static_cast<double>(rows.size());
    for (auto r : rows) rho[r] = target[r] - mean;
    return true;
  }
};

/// Treatment-effect heterogeneity on centered (W~, Y~): pseudo-outcomes are
/// the influence of each row on the node's slope of Y~ on W~.
struct CausalCriterion {
  std::span<const double> treatment;
  std::span<const double> outcome;
  static constexpr double kMinVariance = 1e-12;

  bool prepare(std::span<const std::uint32_t> rows, std::span<double> rho) const {
    const auto n = static_cast<double>(rows.size());
    double w_mean = 0.0, y_mean = 0.0;
    for (auto r : rows) {
      w_mean += treatment[r];
      y_mean += outcome[r];
    }
    w_mean /= n;
    y_mean /= n;
    double var = 0.0, cov = 0.0;
    for (auto r : rows) {
      const double dw = treatment[r] - w_mean;
      var += dw * dw;
      cov += dw * (outcome[r] - y_mean);
    }
    var /= n;
    cov /= n;
    if (var < kMinVariance) return false;
    const double tau = cov / var;
    for (auto r : rows) {
      const double dw = treatment[r] - w_mean;
      rho[r] = dw * (outcome[r] - y_mean - tau * dw) / var;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Growth

/// Rows of the training matrix ordered by each candidate column (ties by row
/// index). Computed once per forest.
struct PresortedColumns {
  std::vector<std::size_t> columns;                 // feature index per slot
  std::vector<std::vector<std::uint32_t>> order;    // sorted rows per slot

  PresortedColumns(const FeatureMatrix& X, const FeatureSet& features) {
    for (std::size_t j : features) {
      columns.push_back(j);
      std::vector<std::uint32_t> rows(X.rows());
      std::iota(rows.begin(), rows.end(), 0U);
      const auto col = X.column(j);
      std::stable_sort(rows.begin(), rows.end(), [&](auto a, auto b) { return col[a] < col[b]; });
      order.push_back(std::move(rows));
    }
  }
};

/// Scratch buffers reused across the trees one worker grows.
struct TreeWorkspace {
  std::vector<std::uint32_t> permutation;
  std::vector<std::uint8_t> membership;
  std::vector<std::uint8_t> goes_left;
  std::vector<double> rho;
  std::vector<std::uint32_t> split_lists;
  std::vector<std::uint32_t> est_lists;
  std::vector<std::uint32_t> scratch;
  std::vector<std::size_t> candidates;

  void reset(std::size_t n) {
    permutation.resize(n);
    membership.assign(n, 0);
    goes_left.resize(n);
    rho.resize(n);
  }
};

namespace detail {

inline std::size_t child_minimum(double fraction, std::size_t parent, std::size_t min_node_size) {
  const auto share = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(parent)));
  return std::max(min_node_size, share);
}

inline double split_point(double lo, double hi) {
  const double mid = lo + (hi - lo) * 0.5;
  return mid < hi ? mid : lo;
}

struct PendingNode {
  std::size_t id;
  std::size_t s_begin, s_end, e_begin, e_end;
  bool randomized_only;
};

struct SplitChoice {
  std::size_t slot = 0;
  double threshold = 0.0;
  std::size_t left_split = 0;
  std::size_t left_est = 0;
  double score = 0.0;
  bool found = false;
};

}  // namespace detail

/// Grows one tree.
///
/// With honesty the subsample is split into a split half and an estimation
/// half; without it both halves are the whole subsample. Every
/// split (chosen on the split half) leaves each child with at least
/// max(min_node_size, ceil(gamma * parent)) rows of both halves. Leaves that
/// still hold more than max_leaf_size estimation rows are cut at the median
/// of a random column until they fit.
template <typename Criterion>
Tree grow_honest_tree(const FeatureMatrix& X, const PresortedColumns& sorted, const ForestParams& params,
                      std::size_t mtry, const Criterion& criterion, Rng& rng, TreeWorkspace& ws) {
  const std::size_t n = X.rows();
  const std::size_t slots = sorted.columns.size();
  ws.reset(n);

  Tree tree;
  const auto s = std::clamp<std::size_t>(
      static_cast<std::size_t>(params.subsample_fraction * static_cast<double>(n)), 2, n);
  const auto s_split = params.honesty ? std::clamp<std::size_t>(
      static_cast<std::size_t>(params.honesty_fraction * static_cast<double>(s)), 1, s - 1) : s;

  std::iota(ws.permutation.begin(), ws.permutation.end(), 0U);
  for (std::size_t k = 0; k < s; ++k) {
    const std::size_t pick = k + rng.index(n - k);
    std::swap(ws.permutation[k], ws.permutation[pick]);
  }
  tree.subsample_mask.assign((n + 63) / 64, 0);
  for (std::size_t k = 0; k < s; ++k) {
    const auto r = ws.permutation[k];
    ws.membership[r] = params.honesty ? (k < s_split ? 1 : 2) : 3;
    tree.subsample_mask[r >> 6] |= std::uint64_t{1} << (r & 63);
    if (ws.membership[r] & 1) tree.split_half.push_back(r);
    if (ws.membership[r] & 2) tree.estimation_half.push_back(r);
  }
  std::sort(tree.split_half.begin(), tree.split_half.end());
  std::sort(tree.estimation_half.begin(), tree.estimation_half.end());

  const std::size_t ns_total = s_split;
  const std::size_t ne_total = params.honesty ? s - s_split : s;
  ws.split_lists.resize(slots * ns_total);
  ws.est_lists.resize(slots * ne_total);
  ws.scratch.resize(std::max(ns_total, ne_total));
  for (std::size_t k = 0; k < slots; ++k) {
    std::size_t si = k * ns_total, ei = k * ne_total;
    for (auto r : sorted.order[k]) {
      if (ws.membership[r] & 1) ws.split_lists[si++] = r;
      if (ws.membership[r] & 2) ws.est_lists[ei++] = r;
    }
  }
  for (auto r : tree.split_half) ws.membership[r] = 0;
  for (auto r : tree.estimation_half) ws.membership[r] = 0;

  auto split_rows = [&](std::size_t slot, std::size_t b, std::size_t e) {
    return std::span<const std::uint32_t>(ws.split_lists.data() + slot * ns_total + b, e - b);
  };
  auto est_rows = [&](std::size_t slot, std::size_t b, std::size_t e) {
    return std::span<const std::uint32_t>(ws.est_lists.data() + slot * ne_total + b, e - b);
  };

  // Stable partition of every slot's lists by ws.goes_left.
  auto partition = [&](std::uint32_t* base, std::size_t stride, std::size_t b, std::size_t e, std::size_t skip) {
    for (std::size_t k = 0; k < slots; ++k) {
      if (k == skip) continue;
      std::uint32_t* list = base + k * stride;
      std::size_t out = b, spill = 0;
      for (std::size_t i = b; i < e; ++i) {
        const auto r = list[i];
        if (ws.goes_left[r]) {
          list[out++] = r;
        } else {
          ws.scratch[spill++] = r;
        }
      }
      std::copy_n(ws.scratch.begin(), spill, list + out);
    }
  };

  auto best_split = [&](const detail::PendingNode& node) {
    detail::SplitChoice best;
    const std::size_t ns = node.s_end - node.s_begin;
    const std::size_t ne = node.e_end - node.e_begin;
    const std::size_t min_s = detail::child_minimum(params.min_child_fraction, ns, params.min_node_size);
    const std::size_t min_e = detail::child_minimum(params.min_child_fraction, ne, params.min_node_size);
    if (ns < 2 * min_s || ne < 2 * min_e) return best;
    const auto rows = split_rows(0, node.s_begin, node.s_end);
    if (!criterion.prepare(rows, ws.rho)) return best;

    double total = 0.0;
    for (auto r : rows) total += ws.rho[r];
    const double parent_score = total * total / static_cast<double>(ns);

    // mtry distinct slots, visited in increasing column order.
    ws.candidates.resize(slots);
    std::iota(ws.candidates.begin(), ws.candidates.end(), std::size_t{0});
    for (std::size_t k = 0; k < mtry; ++k) {
      std::swap(ws.candidates[k], ws.candidates[k + rng.index(slots - k)]);
    }
    std::sort(ws.candidates.begin(), ws.candidates.begin() + static_cast<std::ptrdiff_t>(mtry));

    for (std::size_t c = 0; c < mtry; ++c) {
      const std::size_t slot = ws.candidates[c];
      const double* col = X.column(sorted.columns[slot]).data();
      const auto srow = split_rows(slot, node.s_begin, node.s_end);
      const auto erow = est_rows(slot, node.e_begin, node.e_end);
      double left_sum = 0.0;
      std::size_t e_ptr = 0;
      for (std::size_t k = 0; k + 1 < ns; ++k) {
        left_sum += ws.rho[srow[k]];
        const std::size_t nl = k + 1;
        if (nl < min_s) continue;
        const std::size_t nr = ns - nl;
        if (nr < min_s) break;
        const double lo = col[srow[k]];
        const double hi = col[srow[k + 1]];
        if (!(lo < hi)) continue;
        const double t = detail::split_point(lo, hi);
        while (e_ptr < ne && col[erow[e_ptr]] <= t) ++e_ptr;
        if (e_ptr < min_e) continue;
        if (ne - e_ptr < min_e) break;
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(nl) +
                             right_sum * right_sum / static_cast<double>(nr);
        if (score > parent_score && (!best.found || score > best.score)) {
          best = {slot, t, nl, e_ptr, score, true};
        }
      }
    }
    return best;
  };

  auto median_split = [&](const detail::PendingNode& node) {
    detail::SplitChoice choice;
    const std::size_t ne = node.e_end - node.e_begin;
    const std::size_t min_e = detail::child_minimum(params.min_child_fraction, ne, params.min_node_size);
    ws.candidates.resize(slots);
    std::iota(ws.candidates.begin(), ws.candidates.end(), std::size_t{0});
    for (std::size_t k = 0; k + 1 < slots; ++k) {
      std::swap(ws.candidates[k], ws.candidates[k + rng.index(slots - k)]);
    }
    for (std::size_t slot : ws.candidates) {
      const double* col = X.column(sorted.columns[slot]).data();
      const auto erow = est_rows(slot, node.e_begin, node.e_end);
      std::size_t best_cut = 0, best_gap = ne;
      for (std::size_t cut = min_e; cut + min_e <= ne; ++cut) {
        if (!(col[erow[cut - 1]] < col[erow[cut]])) continue;
        const std::size_t gap = cut > ne / 2 ? cut - ne / 2 : ne / 2 - cut;
        if (gap < best_gap) {
          best_gap = gap;
          best_cut = cut;
        }
      }
      if (best_cut == 0) continue;
      const double t = detail::split_point(col[erow[best_cut - 1]], col[erow[best_cut]]);
      const auto srow = split_rows(slot, node.s_begin, node.s_end);
      const auto left_split = static_cast<std::size_t>(
          std::upper_bound(srow.begin(), srow.end(), t, [&](double v, std::uint32_t r) { return v < col[r]; }) -
          srow.begin());
      choice = {slot, t, left_split, best_cut, 0.0, true};
      return choice;
    }
    return choice;
  };

  std::vector<detail::PendingNode> stack;
  tree.nodes.emplace_back();
  stack.push_back({0, 0, ns_total, 0, ne_total, false});
  while (!stack.empty()) {
    const auto node = stack.back();
    stack.pop_back();
    const std::size_t ns = node.s_end - node.s_begin;
    const std::size_t ne = node.e_end - node.e_begin;
    tree.nodes[node.id].split_count = static_cast<std::uint32_t>(ns);
    tree.nodes[node.id].estimation_count = static_cast<std::uint32_t>(ne);

    detail::SplitChoice choice;
    bool randomized = node.randomized_only;
    if (!randomized) choice = best_split(node);
    if (!choice.found && ne > params.max_leaf_size) {
      choice = median_split(node);
      randomized = true;
    }

    if (!choice.found) {
      auto& leaf = tree.nodes[node.id];
      leaf.leaf_begin = static_cast<std::uint32_t>(tree.leaf_samples.size());
      const auto members = est_rows(0, node.e_begin, node.e_end);
      tree.leaf_samples.insert(tree.leaf_samples.end(), members.begin(), members.end());
      leaf.leaf_end = static_cast<std::uint32_t>(tree.leaf_samples.size());
      if (ne > params.max_leaf_size) ++tree.uncapped_leaves;
      continue;
    }

    const auto srow = split_rows(choice.slot, node.s_begin, node.s_end);
    const auto erow = est_rows(choice.slot, node.e_begin, node.e_end);
    for (std::size_t k = 0; k < srow.size(); ++k) ws.goes_left[srow[k]] = k < choice.left_split;
    for (std::size_t k = 0; k < erow.size(); ++k) ws.goes_left[erow[k]] = k < choice.left_est;
    partition(ws.split_lists.data(), ns_total, node.s_begin, node.s_end, choice.slot);
    partition(ws.est_lists.data(), ne_total, node.e_begin, node.e_end, choice.slot);

    const auto left_id = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& parent = tree.nodes[node.id];
    parent.split_var = static_cast<std::uint32_t>(sorted.columns[choice.slot]);
    parent.threshold = choice.threshold;
    parent.left = static_cast<std::int32_t>(left_id);
    parent.right = static_cast<std::int32_t>(left_id + 1);
    parent.randomized = randomized;

    const std::size_t s_mid = node.s_begin + choice.left_split;
    const std::size_t e_mid = node.e_begin + choice.left_est;
    stack.push_back({left_id + 1, s_mid, node.s_end, e_mid, node.e_end, randomized});
    stack.push_back({left_id, node.s_begin, s_mid, node.e_begin, e_mid, randomized});
  }
  return tree;
}

/// Grows params.num_trees trees. Tree t draws from the stream
/// derive_seed(params.seed, t), so the forest does not depend on the number
/// of workers.
template <typename Criterion>
std::vector<Tree> grow_forest(const FeatureMatrix& X, const FeatureSet& features, const ForestParams& params,
                              const Criterion& criterion) {
  const PresortedColumns sorted(X, features);
  const std::size_t mtry = params.mtry_for(features.size());
  std::vector<Tree> trees(params.num_trees);
  const std::size_t workers = std::min(resolve_threads(params.num_threads), params.num_trees);
  std::vector<TreeWorkspace> spaces(workers);
  parallel_for(params.num_trees, workers, [&](std::size_t begin, std::size_t end, std::size_t w) {
    for (std::size_t t = begin; t < end; ++t) {
      Rng rng(derive_seed(params.seed, t));
      trees[t] = grow_honest_tree(X, sorted, params, mtry, criterion, rng, spaces[w]);
    }
  });
  return trees;
}

// ---------------------------------------------------------------------------
// Leaf moments and forest-weighted averages

/// Per tree, per node: means of N row quantities over the leaf's estimation
/// members (zero for internal nodes).
template <std::size_t N>
using LeafTable = std::vector<std::vector<std::array<double, N>>>;

template <std::size_t N, typename RowFn>
LeafTable<N> make_leaf_table(const std::vector<Tree>& trees, RowFn&& row_values) {
  LeafTable<N> table(trees.size());
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const Tree& tree = trees[t];
    table[t].assign(tree.nodes.size(), std::array<double, N>{});
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      if (!tree.nodes[id].is_leaf()) continue;
      const auto members = tree.leaf_members(id);
      auto& sums = table[t][id];
      for (auto r : members) {
        const std::array<double, N> v = row_values(r);
        for (std::size_t k = 0; k < N; ++k) sums[k] += v[k];
      }
      for (std::size_t k = 0; k < N; ++k) sums[k] /= static_cast<double>(members.size());
    }
  }
  return table;
}

/// Sum over trees of leaf means; dividing by `trees` gives the
/// alpha-weighted average of each quantity.
template <std::size_t N>
struct WeightedMoments {
  std::array<double, N> sum{};
  std::size_t trees = 0;

  double mean(std::size_t k) const { return sum[k] / static_cast<double>(trees); }
  void add(const std::array<double, N>& v) {
    for (std::size_t k = 0; k < N; ++k) sum[k] += v[k];
    ++trees;
  }
};

template <std::size_t N>
WeightedMoments<N> accumulate(const std::vector<Tree>& trees, const LeafTable<N>& table,
                              std::span<const double> x) {
  WeightedMoments<N> m;
  for (std::size_t t = 0; t < trees.size(); ++t) m.add(table[t][trees[t].find_leaf(x)]);
  return m;
}

/// Out-of-bag moments for every training row: row i only collects trees whose
/// subsample excludes it. Trees are visited in index order for every row.
template <std::size_t N>
std::vector<WeightedMoments<N>> accumulate_oob(const std::vector<Tree>& trees, const LeafTable<N>& table,
                                               const FeatureMatrix& X, std::size_t threads) {
  std::vector<WeightedMoments<N>> out(X.rows());
  parallel_for(X.rows(), threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const Tree& tree = trees[t];
      for (std::size_t i = begin; i < end; ++i) {
        if (tree.in_subsample(i)) continue;
        out[i].add(table[t][tree.find_leaf(X, i)]);
      }
    }
  });
  return out;
}

/// Explicit kernel weights alpha_i(x) = (1/M) sum_t 1{i in leaf_t(x)} / |leaf_t(x)|,
/// as sorted (index, weight) pairs with non-zero weight.
inline std::vector<std::pair<std::uint32_t, double>> kernel_weights(const std::vector<Tree>& trees,
                                                                    std::size_t n, std::span<const double> x) {
  std::vector<double> dense(n, 0.0);
  for (const Tree& tree : trees) {
    const auto members = tree.leaf_members(tree.find_leaf(x));
    const double share = 1.0 / static_cast<double>(members.size());
    for (auto r : members) dense[r] += share;
  }
  std::vector<std::pair<std::uint32_t, double>> sparse;
  const double m = static_cast<double>(trees.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (dense[i] > 0.0) sparse.emplace_back(static_cast<std::uint32_t>(i), dense[i] / m);
  }
  return sparse;
}

}  // namespace cfvi
