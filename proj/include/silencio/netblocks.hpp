#pragma once

// Toy-scale articulatory-to-acoustic networks.
//
//   encoder       tongue stream -> conv1d+relu x2 --+
//                                                    +-> concat -> linear -> F (T x d_f)
//                 lip stream    -> conv1d+relu x2 --+
//
//   decoder       frame-synchronous autoregressive GRU: each encoder frame is
//                 repeated rate_ratio times; step n sees the previous acoustic
//                 frame through a tanh pre-net plus the current encoder frame,
//                 and a linear projection gives the pre-output. A causal
//                 two-layer conv post-net adds a residual to give the post-output.
//
//   discriminator grl -> conv1d+relu x2 -> global maxpool -> linear -> softmax

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "silencio/tensorgrad.hpp"

namespace silencio::net {

struct ModelDims {
  std::size_t tongue = 6;      // d_t
  std::size_t lip = 4;         // d_l
  std::size_t feature = 16;    // d_f
  std::size_t acoustic = 8;    // d_a
  std::size_t hidden = 16;     // decoder recurrent state and pre-net width
  std::size_t enc_channels = 16;
  std::size_t postnet_channels = 16;
  std::size_t disc_channels = 16;
  std::size_t kernel = 3;
  std::size_t rate_ratio = 1;  // acoustic frames per articulatory frame (k)

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Ordered, named parameter tensors of one network.
struct ParamGroup {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t size() const { return tensors.size(); }
  Tensor& operator[](std::size_t i) { return tensors[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors[i]; }
  std::size_t index_of(const std::string& name) const;
  bool all_finite() const;
  friend bool operator==(const ParamGroup&, const ParamGroup&) = default;
};

namespace enc {
enum Slot : std::size_t {
  kTongueW1, kTongueB1, kTongueW2, kTongueB2,
  kLipW1, kLipB1, kLipW2, kLipB2,
  kFuseW, kFuseB,
  kCount
};
}  // namespace enc

namespace dec {
enum Slot : std::size_t {
  kPrenetW, kPrenetB,
  kWz, kWr, kWn, kUz, kUr, kUn, kBz, kBr, kBn,
  kOutW, kOutB,
  kPostW1, kPostB1, kPostW2, kPostB2,
  kCount
};
}  // namespace dec

namespace disc {
enum Slot : std::size_t { kConvW1, kConvB1, kConvW2, kConvB2, kHeadW, kHeadB, kCount };
}  // namespace disc

struct ModelParams {
  ModelDims dims;
  ParamGroup encoder;
  ParamGroup decoder;
  ParamGroup discriminator;

  bool all_finite() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Glorot-uniform weights, zero biases. Deterministic per seed.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

// Expected layouts, used by init and checkpoint validation.
ParamGroup encoder_layout(const ModelDims& dims);
ParamGroup decoder_layout(const ModelDims& dims);
ParamGroup discriminator_layout(const ModelDims& dims);

// Leaves for every tensor of `group`, in slot order.
std::vector<tg::Node> bind(tg::Tape& tape, const ParamGroup& group, bool requires_grad);

/// Per-frame articulatory representation of one utterance.
struct EncodedSequence {
  std::string utterance_id;
  Tensor frames;  // T x d_f
};

struct Prediction {
  std::string utterance_id;
  Tensor pre;   // initial decoder output, (k*T) x d_a
  Tensor post;  // post-net refined, same shape
};

struct DecodeNodes {
  tg::Node pre;
  tg::Node post;
};

struct DiscOutput {
  tg::Node logits;              // 1 x 2
  std::array<double, 2> probs;  // index 0 vocalized, 1 silent
};

inline constexpr int kVocalizedLabel = 0;
inline constexpr int kSilentLabel = 1;

// Tape-level builders. `params` are nodes returned by bind() for the group.
tg::Node encode(tg::Tape& tape, std::span<const tg::Node> params, tg::Node tongue, tg::Node lip,
                const ModelDims& dims);

// With `teacher`, step n consumes teacher row n-1 (zeros at n = 0). Without
// it the decoder free-runs on its own previous post-output.
DecodeNodes decode(tg::Tape& tape, std::span<const tg::Node> params, tg::Node encoded,
                   std::optional<tg::Node> teacher, const ModelDims& dims);

// Without `lambda` no reversal mark is inserted, so the graph is the plain
// composite function (what finite-difference checks compare against).
DiscOutput discriminate(tg::Tape& tape, std::span<const tg::Node> params, tg::Node spliced,
                        std::optional<double> lambda, const ModelDims& dims);

// Value-level wrappers (build a private tape, no gradients).
EncodedSequence encode(const std::string& utterance_id, const Tensor& tongue, const Tensor& lip,
                       const ModelParams& params);
Prediction decode(const EncodedSequence& encoded, const ModelParams& params,
                  const Tensor* teacher = nullptr);
std::array<double, 2> discriminate(const Tensor& spliced, const ModelParams& params);

}  // namespace silencio::net
