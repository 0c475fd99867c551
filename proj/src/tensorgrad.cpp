#include "silencio/tensorgrad.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::tg {
namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw DimensionError(fmt::format("{}: {}", op_name(kind), detail));
}

void expect_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) shape_error(kind, fmt::format("expected {} inputs, got {}", want, got));
}

using Inputs = std::span<const Tensor* const>;

Tensor forward_matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    shape_error(OpKind::kMatMul, fmt::format("inner extents differ ({} vs {})",
                                             a.shape_string(), b.shape_string()));
  }
  Tensor out(a.rows(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * m;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      const double* brow = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += aik * brow[j];
    }
  }
  return out;
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1;
}

Tensor forward_conv1d(const Tensor& x, const Tensor& w, std::size_t kernel) {
  const std::size_t t_len = x.rows(), c_in = x.cols(), c_out = w.cols();
  if (kernel == 0 || kernel % 2 == 0) {
    shape_error(OpKind::kConv1d, fmt::format("kernel must be odd and positive, got {}", kernel));
  }
  if (w.rows() != kernel * c_in) {
    shape_error(OpKind::kConv1d,
                fmt::format("weights {} incompatible with kernel {} over {} input channels",
                            w.shape_string(), kernel, c_in));
  }
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Tensor out(t_len, c_out);
  for (std::size_t t = 0; t < t_len; ++t) {
    double* o = out.data() + t * c_out;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      const double* xrow = x.data() + static_cast<std::size_t>(src) * c_in;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double xv = xrow[c];
        const double* wrow = w.data() + (k * c_in + c) * c_out;
        for (std::size_t j = 0; j < c_out; ++j) o[j] += xv * wrow[j];
      }
    }
  }
  return out;
}

// Row index of the maximum (first on ties) of column c within a window.
std::size_t argmax_in_window(const Tensor& x, std::size_t begin, std::size_t end, std::size_t c) {
  std::size_t best = begin;
  for (std::size_t r = begin + 1; r < end; ++r)
    if (x(r, c) > x(best, c)) best = r;
  return best;
}

Tensor forward(OpKind kind, Inputs in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul:
      expect_arity(kind, in.size(), 2);
      return forward_matmul(*in[0], *in[1]);
    case OpKind::kAdd: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out = a;
      if (a.same_shape(b)) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else if (is_row_broadcast(a, b)) {
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) += b[c];
      } else {
        shape_error(kind, fmt::format("cannot add {} and {}", a.shape_string(), b.shape_string()));
      }
      return out;
    }
    case OpKind::kMul: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (!a.same_shape(b)) {
        shape_error(kind, fmt::format("shapes differ ({} vs {})", a.shape_string(),
                                      b.shape_string()));
      }
      Tensor out = a;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      return out;
    }
    case OpKind::kScale: {
      expect_arity(kind, in.size(), 1);
      Tensor out = *in[0];
      for (double& v : out.values()) v *= attrs.scalar;
      return out;
    }
    case OpKind::kTanh: {
      expect_arity(kind, in.size(), 1);
      Tensor out = *in[0];
      for (double& v : out.values()) v = std::tanh(v);
      return out;
    }
    case OpKind::kRelu: {
      expect_arity(kind, in.size(), 1);
      Tensor out = *in[0];
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case OpKind::kConcatFeatures: {
      if (in.empty()) shape_error(kind, "no inputs");
      const std::size_t rows = in[0]->rows();
      std::size_t cols = 0;
      for (const Tensor* t : in) {
        if (t->rows() != rows) {
          shape_error(kind, fmt::format("row counts differ ({} vs {})", rows, t->rows()));
        }
        cols += t->cols();
      }
      Tensor out(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double* o = out.data() + r * cols;
        for (const Tensor* t : in) {
          const auto src = t->row(r);
          o = std::copy(src.begin(), src.end(), o);
        }
      }
      return out;
    }
    case OpKind::kConcatTime: {
      if (in.empty()) shape_error(kind, "no inputs");
      const std::size_t cols = in[0]->cols();
      std::size_t rows = 0;
      for (const Tensor* t : in) {
        if (t->cols() != cols) {
          shape_error(kind, fmt::format("column counts differ ({} vs {})", cols, t->cols()));
        }
        rows += t->rows();
      }
      std::vector<double> values;
      values.reserve(rows * cols);
      for (const Tensor* t : in) values.insert(values.end(), t->values().begin(), t->values().end());
      return Tensor(rows, cols, std::move(values));
    }
    case OpKind::kSliceTime: {
      expect_arity(kind, in.size(), 1);
      const Tensor& a = *in[0];
      if (attrs.length == 0 || attrs.begin + attrs.length > a.rows()) {
        shape_error(kind, fmt::format("slice [{}, {}) out of range for {}", attrs.begin,
                                      attrs.begin + attrs.length, a.shape_string()));
      }
      return slice_rows(a, attrs.begin, attrs.length);
    }
    case OpKind::kConv1d:
      expect_arity(kind, in.size(), 2);
      return forward_conv1d(*in[0], *in[1], attrs.kernel);
    case OpKind::kMaxPoolTime: {
      expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      if (attrs.window == 0) shape_error(kind, "window must be positive");
      const std::size_t out_rows = (x.rows() + attrs.window - 1) / attrs.window;
      Tensor out(out_rows, x.cols());
      for (std::size_t o = 0; o < out_rows; ++o) {
        const std::size_t begin = o * attrs.window;
        const std::size_t end = std::min(x.rows(), begin + attrs.window);
        for (std::size_t c = 0; c < x.cols(); ++c) out(o, c) = x(argmax_in_window(x, begin, end, c), c);
      }
      return out;
    }
    case OpKind::kMean: {
      expect_arity(kind, in.size(), 1);
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      return Tensor::scalar(s / static_cast<double>(in[0]->size()));
    }
    case OpKind::kSoftmaxCrossEntropy: {
      expect_arity(kind, in.size(), 1);
      const Tensor& logits = *in[0];
      if (attrs.labels.size() != logits.rows()) {
        shape_error(kind, fmt::format("{} labels for {} logit rows", attrs.labels.size(),
                                      logits.rows()));
      }
      double s = 0.0;
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int label = attrs.labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
          shape_error(kind, fmt::format("label {} out of range for {} classes", label, logits.cols()));
        }
        // log-softmax computed from the max-shifted logits for stability
        double mx = logits(r, 0);
        for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c) - mx);
        s += -(logits(r, static_cast<std::size_t>(label)) - mx - std::log(z));
      }
      return Tensor::scalar(s / static_cast<double>(logits.rows()));
    }
    case OpKind::kSquaredErrorMean: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (!a.same_shape(b)) {
        shape_error(kind, fmt::format("shapes differ ({} vs {})", a.shape_string(),
                                      b.shape_string()));
      }
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
      }
      return Tensor::scalar(s / static_cast<double>(a.size()));
    }
    case OpKind::kGrl:
      expect_arity(kind, in.size(), 1);
      return *in[0];
  }
  shape_error(kind, "not a computable op");
}

Tensor& ensure(std::vector<Tensor>& adj, std::uint32_t id, const Tensor& like) {
  Tensor& g = adj[id];
  if (g.empty()) g = Tensor(like.rows(), like.cols());
  return g;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "mul-by-scalar";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kConcatFeatures: return "concat-features";
    case OpKind::kConcatTime: return "concat-time";
    case OpKind::kSliceTime: return "slice-time";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kMaxPoolTime: return "maxpool-time";
    case OpKind::kMean: return "mean";
    case OpKind::kSoftmaxCrossEntropy: return "softmax-cross-entropy";
    case OpKind::kSquaredErrorMean: return "squared-error-mean";
    case OpKind::kGrl: return "grl";
  }
  return "unknown";
}

const Tensor& GradMap::at(Node leaf) const {
  auto it = grads_.find(leaf.id);
  if (it == grads_.end()) {
    throw ContractError(fmt::format("no gradient recorded for node {}", leaf.id));
  }
  return it->second;
}

const Tape::Entry& Tape::entry(Node n) const {
  if (n.id >= entries_.size()) {
    throw ContractError(fmt::format("node {} not on tape of size {}", n.id, entries_.size()));
  }
  return entries_[n.id];
}

Node Tape::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw ContractError("leaf tensor must be non-empty");
  Entry e;
  e.kind = OpKind::kLeaf;
  e.value = std::move(value);
  e.requires_grad = requires_grad;
  entries_.push_back(std::move(e));
  return Node{static_cast<std::uint32_t>(entries_.size() - 1)};
}

Node Tape::record(OpKind kind, std::vector<Node> inputs, OpAttrs attrs) {
  if (kind == OpKind::kLeaf) throw ContractError("use Tape::leaf to declare leaves");
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  bool needs_grad = false;
  for (Node n : inputs) {
    const Entry& e = entry(n);
    in.push_back(&e.value);
    needs_grad = needs_grad || e.requires_grad;
  }
  Entry e;
  e.value = forward(kind, in, attrs);
  e.kind = kind;
  e.inputs = std::move(inputs);
  e.attrs = std::move(attrs);
  e.requires_grad = needs_grad;
  entries_.push_back(std::move(e));
  return Node{static_cast<std::uint32_t>(entries_.size() - 1)};
}

const Tensor& Tape::value(Node n) const { return entry(n).value; }
bool Tape::requires_grad(Node n) const { return entry(n).requires_grad; }
OpKind Tape::kind(Node n) const { return entry(n).kind; }

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(entries_.size());
  std::vector<const Tensor*> in;
  for (const Entry& e : entries_) {
    if (e.kind == OpKind::kLeaf) {
      values.push_back(e.value);
      continue;
    }
    in.clear();
    for (Node n : e.inputs) in.push_back(&values[n.id]);
    values.push_back(forward(e.kind, in, e.attrs));
  }
  return values;
}

GradMap Tape::backward(Node loss) const {
  const Entry& root = entry(loss);
  if (!root.value.is_scalar()) {
    throw ContractError(fmt::format("backward needs a scalar loss, node {} is {}", loss.id,
                                    root.value.shape_string()));
  }
  std::vector<Tensor> adj(entries_.size());
  adj[loss.id] = Tensor::scalar(1.0);

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    const Entry& e = entries_[idx];
    if (e.kind == OpKind::kLeaf || !e.requires_grad || adj[idx].empty()) continue;
    const Tensor& g = adj[idx];
    auto wants = [&](std::size_t i) { return entries_[e.inputs[i].id].requires_grad; };
    auto in_value = [&](std::size_t i) -> const Tensor& { return entries_[e.inputs[i].id].value; };
    auto grad_in = [&](std::size_t i) -> Tensor& {
      return ensure(adj, e.inputs[i].id, in_value(i));
    };

    switch (e.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatMul: {
        const Tensor& a = in_value(0);
        const Tensor& b = in_value(1);
        const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
        if (wants(0)) {
          Tensor& ga = grad_in(0);  // g * b^T
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double* grow = g.data() + i * m;
              const double* brow = b.data() + p * m;
              double s = 0.0;
              for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
              ga(i, p) += s;
            }
        }
        if (wants(1)) {
          Tensor& gb = grad_in(1);  // a^T * g
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a(i, p);
              const double* grow = g.data() + i * m;
              double* gbrow = gb.data() + p * m;
              for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
            }
        }
        break;
      }
      case OpKind::kAdd: {
        if (wants(0)) {
          Tensor& ga = grad_in(0);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(1)) {
          Tensor& gb = grad_in(1);
          if (gb.size() == g.size()) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
          } else {
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
          }
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = in_value(0);
        const Tensor& b = in_value(1);
        if (wants(0)) {
          Tensor& ga = grad_in(0);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        }
        if (wants(1)) {
          Tensor& gb = grad_in(1);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::kScale: {
        Tensor& ga = grad_in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * e.attrs.scalar;
        break;
      }
      case OpKind::kTanh: {
        Tensor& ga = grad_in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - e.value[i] * e.value[i]);
        break;
      }
      case OpKind::kRelu: {
        const Tensor& a = in_value(0);
        Tensor& ga = grad_in(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a[i] > 0.0) ga[i] += g[i];
        break;
      }
      case OpKind::kConcatFeatures: {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < e.inputs.size(); ++p) {
          const std::size_t w = in_value(p).cols();
          if (wants(p)) {
            Tensor& gp = grad_in(p);
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, offset + c);
          }
          offset += w;
        }
        break;
      }
      case OpKind::kConcatTime: {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < e.inputs.size(); ++p) {
          const std::size_t n = in_value(p).size();
          if (wants(p)) {
            Tensor& gp = grad_in(p);
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
          }
          offset += n;
        }
        break;
      }
      case OpKind::kSliceTime: {
        Tensor& ga = grad_in(0);
        const std::size_t base = e.attrs.begin * g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) ga[base + i] += g[i];
        break;
      }
      case OpKind::kConv1d: {
        const Tensor& x = in_value(0);
        const Tensor& w = in_value(1);
        const std::size_t t_len = x.rows(), c_in = x.cols(), c_out = w.cols();
        const std::size_t kernel = e.attrs.kernel;
        const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
        Tensor* gx = wants(0) ? &grad_in(0) : nullptr;
        Tensor* gw = wants(1) ? &grad_in(1) : nullptr;
        for (std::size_t t = 0; t < t_len; ++t) {
          const double* grow = g.data() + t * c_out;
          for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
            const auto s = static_cast<std::size_t>(src);
            for (std::size_t c = 0; c < c_in; ++c) {
              const std::size_t wr = k * c_in + c;
              const double* wrow = w.data() + wr * c_out;
              if (gx) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c_out; ++j) acc += grow[j] * wrow[j];
                (*gx)(s, c) += acc;
              }
              if (gw) {
                const double xv = x(s, c);
                double* gwrow = gw->data() + wr * c_out;
                for (std::size_t j = 0; j < c_out; ++j) gwrow[j] += xv * grow[j];
              }
            }
          }
        }
        break;
      }
      case OpKind::kMaxPoolTime: {
        const Tensor& x = in_value(0);
        Tensor& gx = grad_in(0);
        const std::size_t window = e.attrs.window;
        for (std::size_t o = 0; o < g.rows(); ++o) {
          const std::size_t begin = o * window;
          const std::size_t end = std::min(x.rows(), begin + window);
          for (std::size_t c = 0; c < x.cols(); ++c)
            gx(argmax_in_window(x, begin, end, c), c) += g(o, c);
        }
        break;
      }
      case OpKind::kMean: {
        Tensor& ga = grad_in(0);
        const double share = g[0] / static_cast<double>(ga.size());
        for (double& v : ga.values()) v += share;
        break;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        const Tensor& logits = in_value(0);
        Tensor& gl = grad_in(0);
        const Tensor probs = softmax_rows(logits);
        const double share = g[0] / static_cast<double>(logits.rows());
        for (std::size_t r = 0; r < logits.rows(); ++r)
          for (std::size_t c = 0; c < logits.cols(); ++c) {
            const double onehot = static_cast<int>(c) == e.attrs.labels[r] ? 1.0 : 0.0;
            gl(r, c) += share * (probs(r, c) - onehot);
          }
        break;
      }
      case OpKind::kSquaredErrorMean: {
        const Tensor& a = in_value(0);
        const Tensor& b = in_value(1);
        const double factor = 2.0 * g[0] / static_cast<double>(a.size());
        if (wants(0)) {
          Tensor& ga = grad_in(0);
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += factor * (a[i] - b[i]);
        }
        if (wants(1)) {
          Tensor& gb = grad_in(1);
          for (std::size_t i = 0; i < a.size(); ++i) gb[i] -= factor * (a[i] - b[i]);
        }
        break;
      }
      case OpKind::kGrl: {
        Tensor& ga = grad_in(0);
        const double factor = -e.attrs.scalar;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
        break;
      }
    }
  }

  GradMap out;
  for (std::size_t idx = 0; idx < entries_.size(); ++idx) {
    const Entry& e = entries_[idx];
    if (e.kind != OpKind::kLeaf || !e.requires_grad) continue;
    Tensor g = adj[idx].empty() ? Tensor(e.value.rows(), e.value.cols()) : std::move(adj[idx]);
    out.grads_.emplace(static_cast<std::uint32_t>(idx), std::move(g));
  }
  return out;
}

Node matmul(Tape& tape, Node a, Node b) { return tape.record(OpKind::kMatMul, {a, b}); }
Node add(Tape& tape, Node a, Node b) { return tape.record(OpKind::kAdd, {a, b}); }
Node mul(Tape& tape, Node a, Node b) { return tape.record(OpKind::kMul, {a, b}); }

Node scale(Tape& tape, Node a, double factor) {
  OpAttrs attrs;
  attrs.scalar = factor;
  return tape.record(OpKind::kScale, {a}, std::move(attrs));
}

Node tanh(Tape& tape, Node a) { return tape.record(OpKind::kTanh, {a}); }
Node relu(Tape& tape, Node a) { return tape.record(OpKind::kRelu, {a}); }

Node concat_features(Tape& tape, std::vector<Node> parts) {
  return tape.record(OpKind::kConcatFeatures, std::move(parts));
}

Node concat_time(Tape& tape, std::vector<Node> parts) {
  return tape.record(OpKind::kConcatTime, std::move(parts));
}

Node slice_time(Tape& tape, Node a, std::size_t begin, std::size_t length) {
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.length = length;
  return tape.record(OpKind::kSliceTime, {a}, std::move(attrs));
}

Node conv1d(Tape& tape, Node x, Node weights, std::size_t kernel) {
  OpAttrs attrs;
  attrs.kernel = kernel;
  return tape.record(OpKind::kConv1d, {x, weights}, std::move(attrs));
}

Node maxpool_time(Tape& tape, Node x, std::size_t window) {
  OpAttrs attrs;
  attrs.window = window;
  return tape.record(OpKind::kMaxPoolTime, {x}, std::move(attrs));
}

Node mean(Tape& tape, Node a) { return tape.record(OpKind::kMean, {a}); }

Node softmax_cross_entropy(Tape& tape, Node logits, std::vector<int> labels) {
  OpAttrs attrs;
  attrs.labels = std::move(labels);
  return tape.record(OpKind::kSoftmaxCrossEntropy, {logits}, std::move(attrs));
}

Node squared_error_mean(Tape& tape, Node a, Node b) {
  return tape.record(OpKind::kSquaredErrorMean, {a, b});
}

Node grl_mark(Tape& tape, Node x, double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw ContractError(fmt::format("grl_mark: lambda must be finite and >= 0, got {}", lambda));
  }
  OpAttrs attrs;
  attrs.scalar = lambda;
  return tape.record(OpKind::kGrl, {x}, std::move(attrs));
}

Node sigmoid(Tape& tape, Node a) {
  // sigmoid(x) = 0.5 * tanh(x / 2) + 0.5
  const std::size_t cols = tape.value(a).cols();
  const Node half = tape.constant(Tensor(1, cols, 0.5));
  const Node t = scale(tape, tanh(tape, scale(tape, a, 0.5)), 0.5);
  return add(tape, t, half);
}

Node sub(Tape& tape, Node a, Node b) { return add(tape, a, scale(tape, b, -1.0)); }

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) /= z;
  }
  return out;
}

}  // namespace silencio::tg
