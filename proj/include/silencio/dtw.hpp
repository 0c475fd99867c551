#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "silencio/tensor.hpp"

namespace silencio::align {

/// Monotone alignment between a vocalized sequence (index i, length T) and a
/// silent sequence (index j, length T').
struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double total_cost = 0.0;
  double normalized_cost = 0.0;  // total_cost / pairs.size()

  friend bool operator==(const AlignmentPath&, const AlignmentPath&) = default;
};

// Euclidean distance between every frame of `vocalized` and every frame of
// `silent`. Result is T x T'.
Tensor pairwise_distance(const Tensor& vocalized, const Tensor& silent);

// Minimum-cost path under steps (1,0), (0,1), (1,1). Backtracking prefers the
// diagonal predecessor, then (0,1), then (1,0) on ties.
AlignmentPath dtw(const Tensor& dist);

// True when `path` starts at (0,0), ends at (T-1,T'-1), uses only unit steps
// and therefore covers every index on both axes.
bool is_valid_path(const AlignmentPath& path, std::size_t t_vocalized, std::size_t t_silent);

// Builds the path of a surjective monotone warp w (silent index -> vocalized
// index) whose steps are 0 or 1: pairs (w(j), j). Costs are left at zero.
AlignmentPath path_from_warp(const std::vector<std::size_t>& warp);

// Warps `source` ((k*T) x d) onto the silent time base ((k*T') x d). Silent
// frame j takes the mean of the source frames aligned to it; for k > 1 the
// rule is applied to each of the k sub-frames separately.
Tensor warp_acoustic(const Tensor& source, const AlignmentPath& path, std::size_t rate_ratio);

}  // namespace silencio::align
