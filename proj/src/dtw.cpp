#include "silencio/dtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::align {

Tensor pairwise_distance(const Tensor& vocalized, const Tensor& silent) {
  if (vocalized.cols() != silent.cols()) {
    throw ContractError(fmt::format("pairwise_distance: feature widths differ ({} vs {})",
                                    vocalized.cols(), silent.cols()));
  }
  Tensor dist(vocalized.rows(), silent.rows());
  for (std::size_t i = 0; i < vocalized.rows(); ++i) {
    const auto a = vocalized.row(i);
    for (std::size_t j = 0; j < silent.rows(); ++j) {
      const auto b = silent.row(j);
      double s = 0.0;
      for (std::size_t d = 0; d < a.size(); ++d) {
        const double diff = a[d] - b[d];
        s += diff * diff;
      }
      dist(i, j) = std::sqrt(s);
    }
  }
  return dist;
}

AlignmentPath dtw(const Tensor& dist) {
  if (dist.empty()) throw ContractError("dtw: empty distance matrix");
  for (double v : dist.values()) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ContractError("dtw: distances must be finite and non-negative");
    }
  }
  const std::size_t rows = dist.rows(), cols = dist.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Tensor acc(rows, cols, kInf);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double best = (i == 0 && j == 0) ? 0.0 : kInf;
      if (i > 0 && j > 0) best = std::min(best, acc(i - 1, j - 1));
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = best + dist(i, j);
    }
  }

  AlignmentPath path;
  std::size_t i = rows - 1, j = cols - 1;
  path.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double diag = acc(i - 1, j - 1);
      const double left = acc(i, j - 1);  // reached by a (0,1) step
      const double up = acc(i - 1, j);    // reached by a (1,0) step
      if (diag <= left && diag <= up) {
        --i;
        --j;
      } else if (left <= up) {
        --j;
      } else {
        --i;
      }
    } else if (i > 0) {
      --i;
    } else {
      --j;
    }
    path.pairs.emplace_back(i, j);
  }
  std::reverse(path.pairs.begin(), path.pairs.end());
  path.total_cost = acc(rows - 1, cols - 1);
  path.normalized_cost = path.total_cost / static_cast<double>(path.pairs.size());
  return path;
}

bool is_valid_path(const AlignmentPath& path, std::size_t t_vocalized, std::size_t t_silent) {
  const auto& p = path.pairs;
  if (p.empty() || p.front() != std::pair<std::size_t, std::size_t>{0, 0}) return false;
  if (p.back() != std::pair<std::size_t, std::size_t>{t_vocalized - 1, t_silent - 1}) return false;
  for (std::size_t n = 1; n < p.size(); ++n) {
    const std::size_t di = p[n].first - p[n - 1].first;
    const std::size_t dj = p[n].second - p[n - 1].second;
    if (p[n].first < p[n - 1].first || p[n].second < p[n - 1].second) return false;
    if (di > 1 || dj > 1 || (di == 0 && dj == 0)) return false;
  }
  return true;
}

AlignmentPath path_from_warp(const std::vector<std::size_t>& warp) {
  if (warp.empty()) throw ContractError("path_from_warp: empty warp");
  AlignmentPath path;
  for (std::size_t j = 0; j < warp.size(); ++j) {
    if (j > 0 && (warp[j] < warp[j - 1] || warp[j] - warp[j - 1] > 1)) {
      throw ContractError(fmt::format("path_from_warp: step {} -> {} at silent frame {}",
                                      warp[j - 1], warp[j], j));
    }
    path.pairs.emplace_back(warp[j], j);
  }
  if (warp.front() != 0) throw ContractError("path_from_warp: warp must start at 0");
  return path;
}

Tensor warp_acoustic(const Tensor& source, const AlignmentPath& path, std::size_t rate_ratio) {
  if (rate_ratio == 0) throw ContractError("warp_acoustic: rate ratio must be positive");
  if (path.pairs.empty()) throw ContractError("warp_acoustic: empty path");
  const std::size_t t_vocalized = path.pairs.back().first + 1;
  const std::size_t t_silent = path.pairs.back().second + 1;
  if (!is_valid_path(path, t_vocalized, t_silent)) {
    throw ContractError("warp_acoustic: path is not a valid monotone alignment");
  }
  if (source.rows() != rate_ratio * t_vocalized) {
    throw ContractError(fmt::format(
        "warp_acoustic: source has {} rows but path covers {} frames at rate ratio {}",
        source.rows(), t_vocalized, rate_ratio));
  }
  const std::size_t width = source.cols();
  Tensor out(rate_ratio * t_silent, width);
  std::vector<std::size_t> counts(t_silent, 0);
  for (const auto& [i, j] : path.pairs) {
    ++counts[j];
    for (std::size_t s = 0; s < rate_ratio; ++s) {
      const auto src = source.row(i * rate_ratio + s);
      auto dst = out.row(j * rate_ratio + s);
      for (std::size_t d = 0; d < width; ++d) dst[d] += src[d];
    }
  }
  for (std::size_t j = 0; j < t_silent; ++j) {
    if (counts[j] == 1) continue;
    const double n = static_cast<double>(counts[j]);
    for (std::size_t s = 0; s < rate_ratio; ++s)
      for (double& v : out.row(j * rate_ratio + s)) v /= n;
  }
  return out;
}

}  // namespace silencio::align
