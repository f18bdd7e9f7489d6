#include "ganforge/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ganforge/rng.hpp"

namespace ganforge {

namespace {

double evaluate(const GraphBuilder& builder, const Tensor& point) {
  Tape tape;
  const Var out = builder(tape, tape.constant(point));
  if (out.value().numel() != 1) throw DimensionError("grad_check builder must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

double grad_check(const GraphBuilder& builder, const Tensor& point, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ValidationError("grad_check step must be positive");
  point.require_finite("grad_check point");

  Tensor analytic;
  {
    Tape tape;
    const Var x = tape.leaf(point, true);
    const Var out = builder(tape, x);
    tape.backward(out);
    analytic = tape.grad(x);
  }
  analytic.require_finite("grad_check analytic gradient");

  std::vector<std::size_t> coords(point.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords > 0 && options.max_coords < coords.size()) {
    Rng rng(options.seed);
    rng.shuffle(coords);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  double worst = 0.0;
  Tensor probe = point;
  for (auto i : coords) {
    const double x0 = probe[i];
    probe[i] = x0 + options.step;
    const double fp = evaluate(builder, probe);
    probe[i] = x0 - options.step;
    const double fm = evaluate(builder, probe);
    probe[i] = x0;
    const double central = (fp - fm) / (2.0 * options.step);
    worst = std::max(worst, std::abs(analytic[i] - central) / std::max(1.0, std::abs(central)));
  }
  return worst;
}

}  // namespace ganforge
