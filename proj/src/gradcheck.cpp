#include "silencio/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::tg {
namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& points) {
  Tape tape;
  std::vector<Node> leaves;
  leaves.reserve(points.size());
  for (const Tensor& p : points) leaves.push_back(tape.constant(p));
  const Tensor& out = tape.value(fn(tape, leaves));
  if (!out.is_scalar()) throw ContractError("grad_check: function must return a scalar");
  if (!std::isfinite(out[0])) throw NumericError("grad_check: non-finite function value");
  return out[0];
}

}  // namespace

double grad_check(const ScalarFn& fn, const std::vector<Tensor>& points, double eps) {
  if (!(eps > 0.0)) throw ContractError(fmt::format("grad_check: eps must be > 0, got {}", eps));

  Tape tape;
  std::vector<Node> leaves;
  leaves.reserve(points.size());
  for (const Tensor& p : points) leaves.push_back(tape.leaf(p));
  const Node loss = fn(tape, leaves);
  const GradMap grads = tape.backward(loss);

  double worst = 0.0;
  std::vector<Tensor> probe = points;
  for (std::size_t p = 0; p < points.size(); ++p) {
    const Tensor& analytic = grads.at(leaves[p]);
    for (std::size_t i = 0; i < points[p].size(); ++i) {
      const double orig = points[p][i];
      probe[p][i] = orig + eps;
      const double up = evaluate(fn, probe);
      probe[p][i] = orig - eps;
      const double down = evaluate(fn, probe);
      probe[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(analytic[i])) throw NumericError("grad_check: non-finite gradient");
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Node(Tape&, Node)>& fn, const Tensor& point, double eps) {
  return grad_check([&](Tape& tape, std::span<const Node> leaves) { return fn(tape, leaves[0]); },
                    std::vector<Tensor>{point}, eps);
}

}  // namespace silencio::tg
