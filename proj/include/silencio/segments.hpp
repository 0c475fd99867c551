#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "silencio/tensorgrad.hpp"

namespace silencio::train {

/// Where the fixed-length discriminator segments come from in one sequence.
struct SegmentPlan {
  std::size_t source_length = 0;  // rows of the encoded sequence
  std::size_t padded_length = 0;  // >= seg_len; longer than source when cyclically repeated
  std::size_t seg_len = 0;
  std::vector<std::size_t> offsets;  // draw order
};

// Offsets uniform on [0, padded_length - seg_len]. A sequence shorter than
// seg_len is first repeated cyclically up to seg_len rows.
SegmentPlan plan_segments(std::size_t length, std::size_t n_segments, std::size_t seg_len,
                          std::mt19937_64& rng);

// Splices the planned segments of `encoded` along time: (n_segments*seg_len) x d_f.
tg::Node splice_segments(tg::Tape& tape, tg::Node encoded, const SegmentPlan& plan);

// Value-level convenience: plan + splice.
Tensor sample_segments(const Tensor& encoded, std::size_t n_segments, std::size_t seg_len,
                       std::mt19937_64& rng);

}  // namespace silencio::train
