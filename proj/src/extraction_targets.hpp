#pragma once

#include <optional>

#include "tensor.hpp"

namespace lookwhen {

inline constexpr double kNormEps = 1e-6;

// Frozen-teacher outputs for one clip.
struct TeacherBundle {
  Tensor patch_feats;   // [T_E x N_E x N_E x D_img]
  Tensor class_tokens;  // [T_E x D_img]
  Tensor iv2_video;     // [D_vid]
  std::optional<Tensor> attn;  // [T_E x N_E x N_E]
};

// Throws DimensionError unless the tensors agree on T_E, N_E and D_img.
void validate_bundle(const TeacherBundle& b);

// Each feature dimension standardized over the T axis:
// (x - mean) / (std + eps) with the population std.
Tensor time_normalize(const Tensor& x, double eps = kNormEps);

// As time_normalize, with statistics over all T*N*N positions per dimension.
Tensor spacetime_normalize(const Tensor& x, double eps = kNormEps);

// time_normalize(class_tokens) flattened frame-major into [T_E * D_img].
Tensor build_video_target_dino(const Tensor& class_tokens);
Tensor build_frame_targets(const Tensor& class_tokens);
Tensor build_patch_targets(const Tensor& patch_feats);

}  // namespace lookwhen
