#include "grad_cases.hpp"

#include <algorithm>
#include <cmath>

#include "silencio/segments.hpp"
#include "test_support.hpp"

namespace testing {

using silencio::Tensor;
using silencio::tg::Node;
using silencio::tg::Tape;
namespace tg = silencio::tg;
namespace net = silencio::net;

namespace {

// Values bounded away from zero so relu kinks stay outside the difference stencil.
Tensor away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t = random_tensor(rows, cols, rng);
  for (double& v : t.values()) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

// Fixed pseudo-random weights so reductions do not collapse to sums.
Node weighted_mean(Tape& tape, Node x) {
  const Tensor& v = tape.value(x);
  Tensor w(v.rows(), v.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.3 * static_cast<double>(i) + 0.4);
  return tg::mean(tape, tg::mul(tape, x, tape.constant(w)));
}

GradCase unary(std::string name, std::size_t rows, std::size_t cols,
               std::function<Node(Tape&, Node)> op, bool avoid_zero = false) {
  return {std::move(name),
          [=](std::mt19937_64& rng) {
            return std::vector<Tensor>{avoid_zero ? away_from_zero(rows, cols, rng)
                                                  : random_tensor(rows, cols, rng)};
          },
          [op](Tape& tape, std::span<const Node> x) { return weighted_mean(tape, op(tape, x[0])); }};
}

GradCase binary(std::string name, std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2,
                std::function<Node(Tape&, Node, Node)> op) {
  return {std::move(name),
          [=](std::mt19937_64& rng) {
            return std::vector<Tensor>{random_tensor(r1, c1, rng), random_tensor(r2, c2, rng)};
          },
          [op](Tape& tape, std::span<const Node> x) {
            return weighted_mean(tape, op(tape, x[0], x[1]));
          }};
}

std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

net::ModelDims tiny_dims() {
  net::ModelDims d;
  d.tongue = 3;
  d.lip = 2;
  d.feature = 4;
  d.acoustic = 3;
  d.hidden = 4;
  d.enc_channels = 4;
  d.postnet_channels = 4;
  d.disc_channels = 4;
  d.kernel = 3;
  d.rate_ratio = 1;
  return d;
}

std::vector<GradCase> primitive_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary("matmul", 3, 4, 4, 2, tg::matmul));
  cases.push_back(binary("add", 3, 4, 3, 4, tg::add));
  cases.push_back(binary("add-row-broadcast", 5, 3, 1, 3, tg::add));
  cases.push_back(binary("mul", 3, 4, 3, 4, tg::mul));
  cases.push_back(unary("mul-by-scalar", 3, 4, [](Tape& t, Node x) { return tg::scale(t, x, -1.7); }));
  cases.push_back(unary("tanh", 3, 4, tg::tanh));
  cases.push_back(unary("relu", 3, 4, tg::relu, true));
  cases.push_back(binary("concat-features", 4, 2, 4, 3,
                         [](Tape& t, Node a, Node b) { return tg::concat_features(t, {a, b}); }));
  cases.push_back(binary("concat-time", 2, 3, 4, 3,
                         [](Tape& t, Node a, Node b) { return tg::concat_time(t, {a, b}); }));
  cases.push_back(
      unary("slice-time", 6, 3, [](Tape& t, Node x) { return tg::slice_time(t, x, 2, 3); }));
  cases.push_back(binary("conv1d", 6, 2, 3 * 2, 3,
                         [](Tape& t, Node x, Node w) { return tg::conv1d(t, x, w, 3); }));
  cases.push_back(
      unary("maxpool-time", 7, 3, [](Tape& t, Node x) { return tg::maxpool_time(t, x, 3); }));
  cases.push_back({"mean",
                   [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(3, 4, rng)}; },
                   [](Tape& t, std::span<const Node> x) { return tg::mean(t, x[0]); }});
  cases.push_back({"softmax-cross-entropy",
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(4, 2, rng, -2.0, 2.0)};
                   },
                   [](Tape& t, std::span<const Node> x) {
                     return tg::softmax_cross_entropy(t, x[0], {0, 1, 1, 0});
                   }});
  cases.push_back({"squared-error-mean",
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(3, 4, rng), random_tensor(3, 4, rng)};
                   },
                   [](Tape& t, std::span<const Node> x) {
                     return tg::squared_error_mean(t, x[0], x[1]);
                   }});
  return cases;
}

std::vector<GradCase> end_to_end_cases() {
  std::vector<GradCase> cases;
  for (std::size_t ratio : {1u, 2u}) {
    net::ModelDims dims = tiny_dims();
    dims.rate_ratio = ratio;
    const std::size_t n_enc = net::enc::kCount;
    cases.push_back(
        {ratio == 1 ? "reconstruction" : "reconstruction-k2",
         [dims](std::mt19937_64& rng) {
           const std::size_t t = 5;
           const net::ModelParams p = net::init_params(dims, rng());
           std::vector<Tensor> pts{random_tensor(t, dims.tongue, rng),
                                   random_tensor(t, dims.lip, rng),
                                   random_tensor(t * dims.rate_ratio, dims.acoustic, rng)};
           // Non-zero biases so every parameter carries a generic gradient.
           auto enc = p.encoder.tensors;
           auto dec = p.decoder.tensors;
           for (auto* group : {&enc, &dec})
             for (Tensor& w : *group)
               if (w.rows() == 1)
                 for (double& v : w.values()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
           return concat(concat(pts, enc), dec);
         },
         [dims, n_enc](Tape& tape, std::span<const Node> x) {
           const auto enc = x.subspan(3, n_enc);
           const auto dec = x.subspan(3 + n_enc);
           const Node f = net::encode(tape, enc, x[0], x[1], dims);
           const net::DecodeNodes out = net::decode(tape, dec, f, x[2], dims);
           return tg::scale(tape,
                            tg::add(tape, tg::squared_error_mean(tape, out.pre, x[2]),
                                    tg::squared_error_mean(tape, out.post, x[2])),
                            0.5);
         }});
  }
  const net::ModelDims dims = tiny_dims();
  cases.push_back(
      {"discriminator",
       [dims](std::mt19937_64& rng) {
         const std::size_t t = 6;
         const net::ModelParams p = net::init_params(dims, rng());
         std::vector<Tensor> pts{random_tensor(t, dims.tongue, rng), random_tensor(t, dims.lip, rng)};
         auto enc = p.encoder.tensors;
         auto disc = p.discriminator.tensors;
         for (auto* group : {&enc, &disc})
           for (Tensor& w : *group)
             if (w.rows() == 1)
               for (double& v : w.values()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
         return concat(concat(pts, enc), disc);
       },
       [dims](Tape& tape, std::span<const Node> x) {
         const auto enc = x.subspan(2, net::enc::kCount);
         const auto disc = x.subspan(2 + net::enc::kCount);
         const Node f = net::encode(tape, enc, x[0], x[1], dims);
         std::mt19937_64 plan_rng(99);
         const auto plan = silencio::train::plan_segments(tape.value(f).rows(), 3, 4, plan_rng);
         const Node spliced = silencio::train::splice_segments(tape, f, plan);
         const net::DiscOutput out = net::discriminate(tape, disc, spliced, std::nullopt, dims);
         return tg::softmax_cross_entropy(tape, out.logits, {net::kSilentLabel});
       }});
  return cases;
}

double grl_fd_error(std::mt19937_64& rng, double lambda) {
  const Tensor x0 = random_tensor(4, 3, rng);
  auto loss = [](Tape& tape, Node x) { return weighted_mean(tape, tg::tanh(tape, x)); };

  Tape tape;
  const Node x = tape.leaf(x0);
  const Tensor analytic = tape.backward(loss(tape, tg::grl_mark(tape, x, lambda))).at(x);

  auto eval = [&](const Tensor& at) {
    Tape t;
    return t.value(loss(t, t.constant(at)))[0];
  };
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor plus = x0, minus = x0;
    plus[i] += eps;
    minus[i] -= eps;
    const double numeric = -lambda * (eval(plus) - eval(minus)) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace testing
