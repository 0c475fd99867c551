#include "silencio/netblocks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::net {
namespace {

using tg::Node;
using tg::Tape;

struct SlotSpec {
  const char* name;
  std::size_t rows;
  std::size_t cols;
};

ParamGroup make_group(std::initializer_list<SlotSpec> specs) {
  ParamGroup g;
  for (const auto& s : specs) {
    g.names.emplace_back(s.name);
    g.tensors.emplace_back(s.rows, s.cols);
  }
  return g;
}

bool is_bias(const Tensor& t, const std::string& name) {
  return t.rows() == 1 && name.find("_b") != std::string::npos;
}

void glorot_fill(ParamGroup& group, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < group.size(); ++i) {
    Tensor& t = group[i];
    if (is_bias(t, group.names[i])) continue;
    const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& v : t.values()) v = dist(rng);
  }
}

// Output row t depends only on input rows t-kernel+1 .. t.
Node causal_conv(Tape& tape, Node x, Node weights, std::size_t kernel) {
  const std::size_t len = tape.value(x).rows();
  const Node pad = tape.constant(Tensor(kernel - 1, tape.value(x).cols()));
  const Node y = tg::conv1d(tape, tg::concat_time(tape, {pad, x}), weights, kernel);
  return tg::slice_time(tape, y, kernel / 2, len);
}

Node postnet_residual(Tape& tape, std::span<const Node> p, Node pre, std::size_t kernel) {
  const Node h = tg::tanh(
      tape, tg::add(tape, causal_conv(tape, pre, p[dec::kPostW1], kernel), p[dec::kPostB1]));
  return tg::add(tape, causal_conv(tape, h, p[dec::kPostW2], kernel), p[dec::kPostB2]);
}

Node conv_relu(Tape& tape, Node x, Node w, Node b, std::size_t kernel) {
  return tg::relu(tape, tg::add(tape, tg::conv1d(tape, x, w, kernel), b));
}

Node linear(Tape& tape, Node x, Node w, Node b) {
  return tg::add(tape, tg::matmul(tape, x, w), b);
}

// One recurrent step given the precomputed input projections of this frame.
Node gru_step(Tape& tape, std::span<const Node> p, Node xz, Node xr, Node xn, Node h) {
  const Node z = tg::sigmoid(tape, tg::add(tape, xz, tg::matmul(tape, h, p[dec::kUz])));
  const Node r = tg::sigmoid(tape, tg::add(tape, xr, tg::matmul(tape, h, p[dec::kUr])));
  const Node cand =
      tg::tanh(tape, tg::add(tape, xn, tg::matmul(tape, tg::mul(tape, r, h), p[dec::kUn])));
  // h' = (1 - z) * cand + z * h
  return tg::add(tape, cand, tg::mul(tape, z, tg::sub(tape, h, cand)));
}

Node expand_frames(Tape& tape, Node encoded, std::size_t ratio) {
  if (ratio == 1) return encoded;
  const std::size_t t_len = tape.value(encoded).rows();
  Tensor expansion(t_len * ratio, t_len);
  for (std::size_t n = 0; n < t_len * ratio; ++n) expansion(n, n / ratio) = 1.0;
  return tg::matmul(tape, tape.constant(std::move(expansion)), encoded);
}

void check_bound(std::span<const Node> params, std::size_t expected, const char* what) {
  if (params.size() != expected) {
    throw ContractError(fmt::format("{}: expected {} bound parameters, got {}", what, expected,
                                    params.size()));
  }
}

}  // namespace

void ModelDims::validate() const {
  const std::array<std::size_t, 10> all{tongue,        lip,           feature, acoustic,
                                        hidden,        enc_channels,  postnet_channels,
                                        disc_channels, kernel,        rate_ratio};
  if (std::any_of(all.begin(), all.end(), [](std::size_t v) { return v == 0; })) {
    throw ContractError("model dims must all be positive");
  }
  if (kernel % 2 == 0) throw ContractError(fmt::format("kernel must be odd, got {}", kernel));
}

std::size_t ParamGroup::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ContractError(fmt::format("no parameter named '{}'", name));
  return static_cast<std::size_t>(it - names.begin());
}

bool ParamGroup::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.all_finite(); });
}

bool ModelParams::all_finite() const {
  return encoder.all_finite() && decoder.all_finite() && discriminator.all_finite();
}

ParamGroup encoder_layout(const ModelDims& d) {
  const std::size_t c = d.enc_channels, k = d.kernel;
  return make_group({{"tongue_w1", k * d.tongue, c},
                     {"tongue_b1", 1, c},
                     {"tongue_w2", k * c, c},
                     {"tongue_b2", 1, c},
                     {"lip_w1", k * d.lip, c},
                     {"lip_b1", 1, c},
                     {"lip_w2", k * c, c},
                     {"lip_b2", 1, c},
                     {"fuse_w", 2 * c, d.feature},
                     {"fuse_b", 1, d.feature}});
}

ParamGroup decoder_layout(const ModelDims& d) {
  const std::size_t h = d.hidden, in = d.hidden + d.feature, k = d.kernel, pc = d.postnet_channels;
  return make_group({{"prenet_w", d.acoustic, h},
                     {"prenet_b", 1, h},
                     {"gate_wz", in, h},
                     {"gate_wr", in, h},
                     {"gate_wn", in, h},
                     {"gate_uz", h, h},
                     {"gate_ur", h, h},
                     {"gate_un", h, h},
                     {"gate_bz", 1, h},
                     {"gate_br", 1, h},
                     {"gate_bn", 1, h},
                     {"out_w", h, d.acoustic},
                     {"out_b", 1, d.acoustic},
                     {"post_w1", k * d.acoustic, pc},
                     {"post_b1", 1, pc},
                     {"post_w2", k * pc, d.acoustic},
                     {"post_b2", 1, d.acoustic}});
}

ParamGroup discriminator_layout(const ModelDims& d) {
  const std::size_t c = d.disc_channels, k = d.kernel;
  return make_group({{"conv_w1", k * d.feature, c},
                     {"conv_b1", 1, c},
                     {"conv_w2", k * c, c},
                     {"conv_b2", 1, c},
                     {"head_w", c, 2},
                     {"head_b", 1, 2}});
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  ModelParams p;
  p.dims = dims;
  p.encoder = encoder_layout(dims);
  p.decoder = decoder_layout(dims);
  p.discriminator = discriminator_layout(dims);
  std::mt19937_64 rng(seed);
  glorot_fill(p.encoder, rng);
  glorot_fill(p.decoder, rng);
  glorot_fill(p.discriminator, rng);
  return p;
}

std::vector<Node> bind(Tape& tape, const ParamGroup& group, bool requires_grad) {
  std::vector<Node> nodes;
  nodes.reserve(group.size());
  for (const Tensor& t : group.tensors) nodes.push_back(tape.leaf(t, requires_grad));
  return nodes;
}

Node encode(Tape& tape, std::span<const Node> p, Node tongue, Node lip, const ModelDims& dims) {
  check_bound(p, enc::kCount, "encode");
  const Tensor& tv = tape.value(tongue);
  const Tensor& lv = tape.value(lip);
  if (tv.rows() != lv.rows()) {
    throw ContractError(fmt::format("encode: tongue has {} frames but lip has {}", tv.rows(),
                                    lv.rows()));
  }
  if (tv.cols() != dims.tongue || lv.cols() != dims.lip) {
    throw ContractError(fmt::format("encode: stream widths {}/{} do not match dims {}/{}",
                                    tv.cols(), lv.cols(), dims.tongue, dims.lip));
  }
  const std::size_t k = dims.kernel;
  Node t = conv_relu(tape, tongue, p[enc::kTongueW1], p[enc::kTongueB1], k);
  t = conv_relu(tape, t, p[enc::kTongueW2], p[enc::kTongueB2], k);
  Node l = conv_relu(tape, lip, p[enc::kLipW1], p[enc::kLipB1], k);
  l = conv_relu(tape, l, p[enc::kLipW2], p[enc::kLipB2], k);
  return linear(tape, tg::concat_features(tape, {t, l}), p[enc::kFuseW], p[enc::kFuseB]);
}

DecodeNodes decode(Tape& tape, std::span<const Node> p, Node encoded,
                   std::optional<Node> teacher, const ModelDims& dims) {
  check_bound(p, dec::kCount, "decode");
  const Node frames = expand_frames(tape, encoded, dims.rate_ratio);
  const std::size_t steps = tape.value(frames).rows();
  const Node h0 = tape.constant(Tensor(1, dims.hidden));
  const Node first_prev = tape.constant(Tensor(1, dims.acoustic));

  if (teacher) {
    const Tensor& tv = tape.value(*teacher);
    if (tv.rows() != steps || tv.cols() != dims.acoustic) {
      throw ContractError(fmt::format("decode: teacher is {} but {}x{} expected",
                                      tv.shape_string(), steps, dims.acoustic));
    }
    // All inputs are known up front, so the pre-net and the input-side gate
    // projections run once over the whole sequence.
    const Node prev = steps == 1
                          ? first_prev
                          : tg::concat_time(tape, {first_prev, tg::slice_time(tape, *teacher, 0,
                                                                               steps - 1)});
    const Node pre_in = tg::tanh(tape, linear(tape, prev, p[dec::kPrenetW], p[dec::kPrenetB]));
    const Node x = tg::concat_features(tape, {pre_in, frames});
    const Node xz = linear(tape, x, p[dec::kWz], p[dec::kBz]);
    const Node xr = linear(tape, x, p[dec::kWr], p[dec::kBr]);
    const Node xn = linear(tape, x, p[dec::kWn], p[dec::kBn]);
    std::vector<Node> states;
    states.reserve(steps);
    Node h = h0;
    for (std::size_t n = 0; n < steps; ++n) {
      h = gru_step(tape, p, tg::slice_time(tape, xz, n, 1), tg::slice_time(tape, xr, n, 1),
                   tg::slice_time(tape, xn, n, 1), h);
      states.push_back(h);
    }
    const Node hs = steps == 1 ? states.front() : tg::concat_time(tape, std::move(states));
    const Node pre = linear(tape, hs, p[dec::kOutW], p[dec::kOutB]);
    return {pre, tg::add(tape, pre, postnet_residual(tape, p, pre, dims.kernel))};
  }

  // Free-running: post-output of step n-1 needs pre-outputs n-1-2(kernel-1) .. n-1.
  const std::size_t history = 2 * (dims.kernel - 1) + 1;
  std::vector<Node> pre_rows;
  pre_rows.reserve(steps);
  Node prev = first_prev;
  Node h = h0;
  for (std::size_t n = 0; n < steps; ++n) {
    if (n > 0) {
      const std::size_t begin = n > history ? n - history : 0;
      std::vector<Node> window(pre_rows.begin() + static_cast<std::ptrdiff_t>(begin),
                               pre_rows.end());
      const Node w = window.size() == 1 ? window.front() : tg::concat_time(tape, window);
      const Node post_w = tg::add(tape, w, postnet_residual(tape, p, w, dims.kernel));
      prev = tg::slice_time(tape, post_w, tape.value(post_w).rows() - 1, 1);
    }
    const Node pre_in = tg::tanh(tape, linear(tape, prev, p[dec::kPrenetW], p[dec::kPrenetB]));
    const Node x = tg::concat_features(tape, {pre_in, tg::slice_time(tape, frames, n, 1)});
    h = gru_step(tape, p, linear(tape, x, p[dec::kWz], p[dec::kBz]),
                 linear(tape, x, p[dec::kWr], p[dec::kBr]),
                 linear(tape, x, p[dec::kWn], p[dec::kBn]), h);
    pre_rows.push_back(linear(tape, h, p[dec::kOutW], p[dec::kOutB]));
  }
  const Node pre = steps == 1 ? pre_rows.front() : tg::concat_time(tape, pre_rows);
  return {pre, tg::add(tape, pre, postnet_residual(tape, p, pre, dims.kernel))};
}

DiscOutput discriminate(Tape& tape, std::span<const Node> p, Node spliced,
                        std::optional<double> lambda, const ModelDims& dims) {
  check_bound(p, disc::kCount, "discriminate");
  const Tensor& in = tape.value(spliced);
  if (in.empty()) throw ContractError("discriminate: empty input");
  if (in.cols() != dims.feature) {
    throw ContractError(fmt::format("discriminate: input width {} but d_f = {}", in.cols(),
                                    dims.feature));
  }
  const std::size_t k = dims.kernel;
  Node x = lambda ? tg::grl_mark(tape, spliced, *lambda) : spliced;
  x = conv_relu(tape, x, p[disc::kConvW1], p[disc::kConvB1], k);
  x = conv_relu(tape, x, p[disc::kConvW2], p[disc::kConvB2], k);
  x = tg::maxpool_time(tape, x, in.rows());
  const Node logits = linear(tape, x, p[disc::kHeadW], p[disc::kHeadB]);
  const Tensor probs = tg::softmax_rows(tape.value(logits));
  return {logits, {probs[0], probs[1]}};
}

EncodedSequence encode(const std::string& utterance_id, const Tensor& tongue, const Tensor& lip,
                       const ModelParams& params) {
  Tape tape;
  const auto p = bind(tape, params.encoder, false);
  const Node out = encode(tape, p, tape.constant(tongue), tape.constant(lip), params.dims);
  return {utterance_id, tape.value(out)};
}

Prediction decode(const EncodedSequence& encoded, const ModelParams& params,
                  const Tensor* teacher) {
  Tape tape;
  const auto p = bind(tape, params.decoder, false);
  std::optional<Node> t;
  if (teacher) t = tape.constant(*teacher);
  const DecodeNodes out = decode(tape, p, tape.constant(encoded.frames), t, params.dims);
  return {encoded.utterance_id, tape.value(out.pre), tape.value(out.post)};
}

std::array<double, 2> discriminate(const Tensor& spliced, const ModelParams& params) {
  Tape tape;
  const auto p = bind(tape, params.discriminator, false);
  return discriminate(tape, p, tape.constant(spliced), 0.0, params.dims).probs;
}

}  // namespace silencio::net
