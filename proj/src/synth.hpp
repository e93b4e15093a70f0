#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "extraction_targets.hpp"
#include "tensor.hpp"

namespace lookwhen {

// Procedural clips standing in for real videos and teachers at desk scale.
// Each clip is a smooth, slowly drifting low-frequency color field with one
// high-contrast Gaussian blob moving in one of four directions. The teacher is
// a fixed random network (same weights for every clip) applied per patch, so
// its feature maps track the pixels.
struct SynthSpec {
  std::size_t frames = 4;   // T_E
  std::size_t grid = 4;     // N_E
  std::size_t patch = 8;    // P
  std::size_t d_img = 16;
  std::size_t d_vid = 24;

  std::size_t resolution() const { return grid * patch; }
};

enum class Motion : int { kRight = 0, kLeft = 1, kDown = 2, kUp = 3 };
inline constexpr int kMotionClasses = 4;

struct SynthClip {
  Tensor video;  // [T_E x R_E x R_E x 3], values in [0, 1]
  TeacherBundle teacher;
  int label = 0;  // Motion
  // Flat (t, y, x) patch index holding the blob center, one per frame.
  std::vector<std::size_t> blob_positions;
};

SynthClip synth_clip(const SynthSpec& spec, std::uint64_t seed, std::optional<Motion> motion = std::nullopt);

TeacherBundle synth_teacher(std::size_t frames, std::size_t grid, std::size_t d_img, std::size_t d_vid,
                            std::uint64_t seed);

// The frozen synthetic teacher applied to an arbitrary [T x R x R x 3] video.
TeacherBundle run_synth_teacher(const Tensor& video, std::size_t patch, std::size_t d_img,
                                std::size_t d_vid);

// Mirror along the width axis: video [T x R x R x C] or grids [T x N x N (x D)].
Tensor flip_horizontal(const Tensor& t);

}  // namespace lookwhen
