#include "silencio/segments.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::train {

SegmentPlan plan_segments(std::size_t length, std::size_t n_segments, std::size_t seg_len,
                          std::mt19937_64& rng) {
  if (length == 0) throw ContractError("sample_segments: empty sequence");
  if (n_segments == 0 || seg_len == 0) {
    throw ContractError(fmt::format("sample_segments: need n_segments, seg_len >= 1 (got {}, {})",
                                    n_segments, seg_len));
  }
  SegmentPlan plan;
  plan.source_length = length;
  plan.padded_length = std::max(length, seg_len);
  plan.seg_len = seg_len;
  std::uniform_int_distribution<std::size_t> dist(0, plan.padded_length - seg_len);
  plan.offsets.reserve(n_segments);
  for (std::size_t n = 0; n < n_segments; ++n) plan.offsets.push_back(dist(rng));
  return plan;
}

tg::Node splice_segments(tg::Tape& tape, tg::Node encoded, const SegmentPlan& plan) {
  const std::size_t length = tape.value(encoded).rows();
  if (length != plan.source_length) {
    throw ContractError(fmt::format("splice_segments: plan for {} rows applied to {}",
                                    plan.source_length, length));
  }
  tg::Node source = encoded;
  if (plan.padded_length > length) {
    std::vector<tg::Node> parts;
    std::size_t have = 0;
    while (have < plan.padded_length) {
      const std::size_t take = std::min(length, plan.padded_length - have);
      parts.push_back(take == length ? encoded : tg::slice_time(tape, encoded, 0, take));
      have += take;
    }
    source = tg::concat_time(tape, std::move(parts));
  }
  std::vector<tg::Node> segments;
  segments.reserve(plan.offsets.size());
  for (std::size_t off : plan.offsets) {
    segments.push_back(off == 0 && plan.seg_len == plan.padded_length
                           ? source
                           : tg::slice_time(tape, source, off, plan.seg_len));
  }
  return segments.size() == 1 ? segments.front() : tg::concat_time(tape, std::move(segments));
}

Tensor sample_segments(const Tensor& encoded, std::size_t n_segments, std::size_t seg_len,
                       std::mt19937_64& rng) {
  if (encoded.empty()) throw ContractError("sample_segments: empty sequence");
  const SegmentPlan plan = plan_segments(encoded.rows(), n_segments, seg_len, rng);
  tg::Tape tape;
  return tape.value(splice_segments(tape, tape.constant(encoded), plan));
}

}  // namespace silencio::train
