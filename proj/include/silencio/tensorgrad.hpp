#pragma once

// Reverse-mode differentiation over a closed set of dense primitives.
//
// A Tape records primitive applications in execution order. Leaves are
// declared explicitly (parameters or constants); every other node is the
// output of one recorded op. backward() walks the tape in reverse and
// returns the gradient of a scalar node with respect to every leaf that
// requires a gradient.

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "silencio/tensor.hpp"

namespace silencio::tg {

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,  // same shape, or right operand is a 1xC row broadcast over rows
  kMul,  // elementwise (Hadamard) product, same shape
  kScale,
  kTanh,
  kRelu,
  kConcatFeatures,
  kConcatTime,
  kSliceTime,
  kConv1d,  // temporal, symmetric zero padding, stride 1
  kMaxPoolTime,
  kMean,
  kSoftmaxCrossEntropy,
  kSquaredErrorMean,
  kGrl,  // identity forward; gradient scaled by -lambda
};

std::string_view op_name(OpKind kind);

struct Node {
  std::uint32_t id = 0;
  friend auto operator<=>(const Node&, const Node&) = default;
};

struct OpAttrs {
  double scalar = 0.0;     // kScale factor, kGrl lambda
  std::size_t begin = 0;   // kSliceTime
  std::size_t length = 0;  // kSliceTime
  std::size_t kernel = 0;  // kConv1d (odd)
  std::size_t window = 0;  // kMaxPoolTime
  std::vector<int> labels; // kSoftmaxCrossEntropy, one class index per row
};

/// Gradient of a scalar with respect to each differentiable leaf.
class GradMap {
 public:
  const Tensor& at(Node leaf) const;
  bool contains(Node leaf) const { return grads_.count(leaf.id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<std::uint32_t, Tensor> grads_;
};

class Tape {
 public:
  Node leaf(Tensor value, bool requires_grad = true);
  Node constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends one primitive application. Throws DimensionError naming the op
  // and the offending extents when input shapes are invalid for `kind`.
  Node record(OpKind kind, std::vector<Node> inputs, OpAttrs attrs = {});

  const Tensor& value(Node n) const;
  bool requires_grad(Node n) const;
  OpKind kind(Node n) const;
  std::size_t size() const { return entries_.size(); }

  // `loss` must be 1x1 (ContractError otherwise).
  GradMap backward(Node loss) const;

  // Recomputes every non-leaf value from the stored leaves, in tape order.
  std::vector<Tensor> replay() const;

 private:
  struct Entry {
    OpKind kind = OpKind::kLeaf;
    std::vector<Node> inputs;
    OpAttrs attrs;
    Tensor value;
    bool requires_grad = false;
  };

  const Entry& entry(Node n) const;

  std::vector<Entry> entries_;
};

// Op builders. Each records one entry and returns its output node.
Node matmul(Tape& tape, Node a, Node b);
Node add(Tape& tape, Node a, Node b);
Node mul(Tape& tape, Node a, Node b);
Node scale(Tape& tape, Node a, double factor);
Node tanh(Tape& tape, Node a);
Node relu(Tape& tape, Node a);
Node concat_features(Tape& tape, std::vector<Node> parts);
Node concat_time(Tape& tape, std::vector<Node> parts);
Node slice_time(Tape& tape, Node a, std::size_t begin, std::size_t length);
// `weights` is (kernel * in_channels) x out_channels; row k*C_in + c holds tap k
// of input channel c.
Node conv1d(Tape& tape, Node x, Node weights, std::size_t kernel);
// Non-overlapping windows of `window` rows; the last window may be partial.
Node maxpool_time(Tape& tape, Node x, std::size_t window);
Node mean(Tape& tape, Node a);
Node softmax_cross_entropy(Tape& tape, Node logits, std::vector<int> labels);
Node squared_error_mean(Tape& tape, Node a, Node b);

// Gradient reversal: forward identity, backward multiplies by -lambda.
// lambda must be finite and >= 0 (ContractError otherwise).
Node grl_mark(Tape& tape, Node x, double lambda);

// Composites built from the primitives above.
Node sigmoid(Tape& tape, Node a);
Node sub(Tape& tape, Node a, Node b);

// Row-wise softmax of a value (no tape).
Tensor softmax_rows(const Tensor& logits);

}  // namespace silencio::tg
