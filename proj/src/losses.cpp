#include "losses.hpp"

#include <cmath>
#include <limits>

#include "error.hpp"
#include "ops.hpp"

namespace lookwhen {

Var bce_map_loss(Var logits, const Tensor& target) {
  for (double y : target.data()) {
    if (!(y >= 0.0 && y <= 1.0)) throw InvalidArgument("bce_map_loss: target outside [0, 1]");
  }
  return bce_with_logits(logits, target);
}

double bce_map_loss(const Tensor& logits, const Tensor& target) {
  Tape tape;
  return bce_map_loss(tape.constant(logits), target).value().item();
}

double bce_entropy_floor(const Tensor& target) {
  double s = 0.0;
  for (double y : target.data()) {
    if (y > 0.0) s -= y * std::log(y);
    if (y < 1.0) s -= (1.0 - y) * std::log1p(-y);
  }
  return s / static_cast<double>(target.numel());
}

Var mse_loss(Var a, const Tensor& b) { return mse(a, a.tape->constant(b, "target")); }

double mse_loss(const Tensor& a, const Tensor& b) {
  Tape tape;
  return mse(tape.constant(a), tape.constant(b)).value().item();
}

std::vector<std::size_t> nn_assignment(std::span<const std::size_t> selected, std::size_t frames,
                                       std::size_t grid) {
  if (selected.empty()) throw InvalidArgument("nn_upsample: no selected positions (K = 0)");
  const std::size_t per = grid * grid, m = frames * per;
  struct Coord {
    long long t, y, x;
  };
  auto coord = [&](std::size_t f) {
    return Coord{static_cast<long long>(f / per), static_cast<long long>((f % per) / grid),
                 static_cast<long long>(f % grid)};
  };
  std::vector<Coord> sel;
  for (std::size_t s : selected) {
    if (s >= m) throw InvalidArgument("nn_upsample: index " + std::to_string(s) + " out of range");
    sel.push_back(coord(s));
  }
  std::vector<std::size_t> assign(m);
  for (std::size_t g = 0; g < m; ++g) {
    const Coord c = coord(g);
    long long best = std::numeric_limits<long long>::max();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < sel.size(); ++k) {
      const long long dt = c.t - sel[k].t, dy = c.y - sel[k].y, dx = c.x - sel[k].x;
      const long long d2 = dt * dt + dy * dy + dx * dx;
      if (d2 < best || (d2 == best && selected[k] < selected[best_k])) {
        best = d2;
        best_k = k;
      }
    }
    assign[g] = best_k;
  }
  return assign;
}

Var nn_upsample(Var sparse, std::span<const std::size_t> selected, std::size_t frames, std::size_t grid) {
  const Tensor& v = sparse.value();
  if (v.ndim() != 2 || v.dim(0) != selected.size()) {
    throw DimensionError("nn_upsample: predictions " + shape_str(v.shape()) + " for " +
                         std::to_string(selected.size()) + " selected positions");
  }
  const auto assign = nn_assignment(selected, frames, grid);
  return reshape(gather_rows(sparse, assign), {frames, grid, grid, v.dim(1)});
}

Tensor nn_upsample(const Tensor& sparse, std::span<const std::size_t> selected, std::size_t frames,
                   std::size_t grid) {
  Tape tape;
  return nn_upsample(tape.constant(sparse), selected, frames, grid).value();
}

LossBreakdown LossVars::values() const {
  LossBreakdown b;
  b.map = map ? map->value().item() : 0.0;
  b.video = video.value().item();
  b.frame = frame.value().item();
  b.patch = patch.value().item();
  b.total = total.value().item();
  return b;
}

LossVars total_loss(const ModelConfig& cfg, const SelectorOutput& sel, const ExtractorOutput& ext,
                    const ClipTargets& targets, const LossOptions& opts) {
  auto need = [](const std::optional<Tensor>& t, const char* name) -> const Tensor& {
    if (!t) throw InvalidArgument(std::string("total_loss: missing target '") + name + "'");
    return *t;
  };
  const Tensor& sel_t = need(targets.selector, "selector");
  const Tensor& iv2_t = need(targets.iv2_video, "iv2_video");
  const Tensor& dino_t = need(targets.dino_video, "dino_video");
  const Tensor& frame_t = need(targets.frame, "frame");
  const Tensor& patch_t = need(targets.patch, "patch");

  LossVars l;
  if (opts.include_map) l.map = bce_map_loss(sel.map_logits, sel_t);
  l.video = scale(add(mse_loss(ext.iv2_video, iv2_t), mse_loss(ext.dino_video, dino_t)), 0.5);
  l.frame = mse_loss(ext.frame, frame_t);
  l.patch = mse_loss(nn_upsample(ext.patch_sparse, ext.indices, cfg.frames, cfg.grid()), patch_t);
  Var sum = l.map ? add(*l.map, l.video) : l.video;
  l.total = add(add(sum, l.frame), l.patch);
  return l;
}

}  // namespace lookwhen
