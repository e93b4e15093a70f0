#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "model.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace lookwhen {

struct LossBreakdown {
  double map = 0.0;
  double video = 0.0;
  double frame = 0.0;
  double patch = 0.0;
  double total = 0.0;
};

// Distillation targets for one clip. Every field must be present for
// total_loss.
struct ClipTargets {
  std::optional<Tensor> selector;    // [T_E x N_E x N_E] soft ranks
  std::optional<Tensor> iv2_video;   // [D_vid]
  std::optional<Tensor> dino_video;  // [T_E * D_img]
  std::optional<Tensor> frame;       // [T_E x D_img]
  std::optional<Tensor> patch;       // [T_E x N_E x N_E x D_img]
};

// Mean stable BCE between map logits and soft targets.
Var bce_map_loss(Var logits, const Tensor& target);
double bce_map_loss(const Tensor& logits, const Tensor& target);

// Mean binary entropy of the targets: the minimum bce_map_loss can reach.
double bce_entropy_floor(const Tensor& target);

Var mse_loss(Var a, const Tensor& b);
double mse_loss(const Tensor& a, const Tensor& b);

// For each grid position, the index into `selected` of the nearest selected
// position by squared (x, y, t) Euclidean distance; ties to the smaller flat
// index.
std::vector<std::size_t> nn_assignment(std::span<const std::size_t> selected, std::size_t frames,
                                       std::size_t grid);

// [K x D] predictions at `selected` -> dense [T x N x N x D].
Var nn_upsample(Var sparse, std::span<const std::size_t> selected, std::size_t frames, std::size_t grid);
Tensor nn_upsample(const Tensor& sparse, std::span<const std::size_t> selected, std::size_t frames,
                   std::size_t grid);

struct LossVars {
  std::optional<Var> map;
  Var video;
  Var frame;
  Var patch;
  Var total;

  LossBreakdown values() const;
};

struct LossOptions {
  // The gradient-flow check drops the map term to isolate extractor losses.
  bool include_map = true;
};

// total = map + video + frame + patch, with
// video = (mse(iv2) + mse(dino video)) / 2 and the patch term on the
// nearest-neighbor upsampled full map.
LossVars total_loss(const ModelConfig& cfg, const SelectorOutput& sel, const ExtractorOutput& ext,
                    const ClipTargets& targets, const LossOptions& opts = {});

}  // namespace lookwhen
