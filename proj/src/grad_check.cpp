#include "grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "error.hpp"

namespace lookwhen {
namespace {

double finite_loss(Tape& tape, Var loss) {
  const double v = loss.value().item();
  if (!std::isfinite(v)) {
    const auto op = tape.first_nonfinite_op();
    throw NumericError("non-finite loss; first produced by op '" + op.value_or("?") + "'");
  }
  return v;
}

}  // namespace

double eval_loss(const LossFn& loss, const ParamStore& params) {
  Tape tape;
  Var l = loss(tape, params);
  return finite_loss(tape, l);
}

GradCheckResult grad_check(const LossFn& loss, const ParamStore& params,
                           const GradCheckOptions& opts) {
  ParamStore analytic;
  {
    Tape tape;
    Var l = loss(tape, params);
    finite_loss(tape, l);
    tape.backward(l);
    analytic = tape.param_grads();
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  ParamStore probe = params;
  for (auto& [path, value] : probe) {
    const auto git = analytic.find(path);
    const std::size_t n = value.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_param > 0 && n > opts.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double orig = value[i];
      value[i] = orig + opts.step;
      const double up = eval_loss(loss, probe);
      value[i] = orig - opts.step;
      const double down = eval_loss(loss, probe);
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double exact = git == analytic.end() ? 0.0 : git->second[i];
      const double rel = std::abs(exact - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = path;
          result.worst_index = i;
        }
      }
    }
  }
  return result;
}

}  // namespace lookwhen
