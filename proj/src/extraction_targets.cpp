#include "extraction_targets.hpp"

#include <cmath>
#include <vector>

#include "error.hpp"

namespace lookwhen {
namespace {

// Per last-axis dimension, standardize over every leading position.
Tensor standardize_columns(const Tensor& x, double eps, const char* op) {
  if (x.ndim() < 2) {
    throw DimensionError(std::string(op) + ": expected [.. x D], got " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[r * d + j];
  for (double& m : mean) m /= static_cast<double>(rows);
  // A constant column's rounded mean can differ from the constant in the last
  // bit; pin it so the column maps to exact zeros.
  for (std::size_t j = 0; j < d; ++j) {
    bool constant = true;
    for (std::size_t r = 1; r < rows && constant; ++r) constant = x[r * d + j] == x[j];
    if (constant) mean[j] = x[j];
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[r * d + j] - mean[j];
      sd[j] += c * c;
    }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(rows));
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = (x[r * d + j] - mean[j]) / (sd[j] + eps);
  return y;
}

}  // namespace

void validate_bundle(const TeacherBundle& b) {
  const auto& p = b.patch_feats.shape();
  const auto& c = b.class_tokens.shape();
  if (p.size() != 4 || p[1] != p[2]) {
    throw DimensionError("patch_feats must be [T x N x N x D], got " + shape_str(p));
  }
  if (c.size() != 2 || c[0] != p[0] || c[1] != p[3]) {
    throw DimensionError("class_tokens " + shape_str(c) + " inconsistent with patch_feats " + shape_str(p));
  }
  if (b.iv2_video.ndim() != 1) {
    throw DimensionError("iv2_video must be 1-D, got " + shape_str(b.iv2_video.shape()));
  }
  if (b.attn && b.attn->shape() != Shape{p[0], p[1], p[2]}) {
    throw DimensionError("attn " + shape_str(b.attn->shape()) + " inconsistent with patch_feats " +
                         shape_str(p));
  }
}

Tensor time_normalize(const Tensor& x, double eps) {
  if (x.ndim() != 2) throw DimensionError("time_normalize: expected [T x D], got " + shape_str(x.shape()));
  return standardize_columns(x, eps, "time_normalize");
}

Tensor spacetime_normalize(const Tensor& x, double eps) {
  return standardize_columns(x, eps, "spacetime_normalize");
}

Tensor build_video_target_dino(const Tensor& class_tokens) {
  const Tensor n = time_normalize(class_tokens);
  return n.reshaped({n.numel()});
}

Tensor build_frame_targets(const Tensor& class_tokens) { return time_normalize(class_tokens); }

Tensor build_patch_targets(const Tensor& patch_feats) {
  if (patch_feats.ndim() != 4) {
    throw DimensionError("build_patch_targets: expected [T x N x N x D], got " + shape_str(patch_feats.shape()));
  }
  return spacetime_normalize(patch_feats);
}

}  // namespace lookwhen
