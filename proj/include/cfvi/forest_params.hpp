#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "cfvi/error.hpp"

namespace cfvi {

/// Growth settings shared by regression and causal forests.
struct ForestParams {
  std::size_t num_trees = 2000;
  double subsample_fraction = 0.5;
  double honesty_fraction = 0.5;
  // Off: both halves are the whole subsample.
  bool honesty = true;
  std::size_t min_node_size = 5;
  // Minimum share of the parent's observations each child must receive.
  double min_child_fraction = 0.05;
  // Variables tried per split. Unset: min(ceil(sqrt(p)) + 3, p) for the p
  // features the forest may split on.
  std::optional<std::size_t> mtry;
  std::size_t max_leaf_size = 20;
  double truncation_bound = 1e6;
  std::uint64_t seed = 42;
  // 0 = hardware concurrency. Never affects results.
  std::size_t num_threads = 0;

  std::size_t mtry_for(std::size_t p) const {
    if (mtry) return std::min(*mtry, p);
    const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
    return std::min(root + 3, p);
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidParams, what); };
    if (num_trees < 1) fail("num_trees must be >= 1");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) fail("subsample_fraction must lie in (0, 1]");
    if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0)) fail("honesty_fraction must lie in (0, 1)");
    if (min_node_size < 1) fail("min_node_size must be >= 1");
    if (!(min_child_fraction > 0.0 && min_child_fraction <= 0.5)) fail("min_child_fraction must lie in (0, 0.5]");
    if (mtry && *mtry < 1) fail("mtry must be >= 1");
    // An oversized leaf holds at least max_leaf_size + 1 points and must split
    // into two children of min_node_size each.
    if (max_leaf_size + 1 < 2 * min_node_size) fail("max_leaf_size must be >= 2 * min_node_size - 1");
    if (!(truncation_bound > 0.0)) fail("truncation_bound must be positive");
  }

  void validate(std::size_t p) const {
    validate();
    if (mtry && *mtry > p) fail_mtry(p);
  }

 private:
  static void fail_mtry(std::size_t p) {
    throw Error(ErrorKind::InvalidParams, "mtry exceeds the number of features (" + std::to_string(p) + ")");
  }
};

}  // namespace cfvi
