#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "tape.hpp"

namespace lookwhen {

// Builds a scalar loss on the given tape from the given parameters. Must bind
// parameters through Tape::param so their gradients are collected.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise this many seeded random coordinates
  // per parameter tensor (all of them when the tensor is smaller).
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  // max |analytic - central| / max(1, |central|)
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// Compares backward() against central differences. Throws NumericError naming
// the first op with a non-finite output if the loss is not finite.
GradCheckResult grad_check(const LossFn& loss, const ParamStore& params,
                           const GradCheckOptions& opts = {});

// Evaluates the loss once, checking it is finite.
double eval_loss(const LossFn& loss, const ParamStore& params);

}  // namespace lookwhen
