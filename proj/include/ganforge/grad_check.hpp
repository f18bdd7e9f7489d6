#pragma once

#include <cstdint>
#include <functional>

#include "ganforge/tape.hpp"

namespace ganforge {

/// Builds a scalar from `point` on the given tape. Must be deterministic: it is
/// re-run for every perturbed coordinate.
using GraphBuilder = std::function<Var(Tape&, const Var& point)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Max over checked coordinates of |analytic - central| / max(1, |central|).
double grad_check(const GraphBuilder& builder, const Tensor& point, const GradCheckOptions& options = {});

}  // namespace ganforge
