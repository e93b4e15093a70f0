#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace lookwhen {

struct ModelConfig {
  std::size_t frames = 4;       // T_E
  std::size_t resolution = 32;  // R_E
  std::size_t patch = 8;        // P
  std::size_t width = 32;       // D
  std::size_t depth_sel = 3;
  std::size_t depth_ext = 4;
  std::size_t heads = 4;
  std::size_t registers = 2;    // G
  std::size_t d_img = 16;
  std::size_t d_vid = 24;
  std::size_t mlp_ratio = 4;
  // Off only for equivariance tests.
  bool time_embed = true;

  std::size_t grid() const { return resolution / patch; }              // N_E
  std::size_t sel_frames() const { return frames / 2; }               // T_S
  std::size_t sel_grid() const { return resolution / 2 / patch; }      // N_S
  std::size_t tokens() const { return frames * grid() * grid(); }      // M
  std::size_t sel_tokens() const { return sel_frames() * sel_grid() * sel_grid(); }
  std::size_t patch_dim() const { return patch * patch * 3; }

  // Throws InvalidArgument if the derived sizes are not integral.
  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Seeded initialization of every selector, extractor and head parameter.
// Selector paths start with "sel.", extractor paths with "ext.", and the
// selector-map head lives under "sel.map_head.".
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Path prefixes of the selector trunk (everything in the selector except the
// map head).
bool is_selector_param(const std::string& path);
bool is_map_head_param(const std::string& path);

// Binds ParamStore entries onto a tape, as gradient-tracked params or, for
// frozen paths, as constants.
class ParamBinder {
 public:
  using FrozenPredicate = std::function<bool(const std::string&)>;

  ParamBinder(Tape& tape, const ParamStore& params, FrozenPredicate frozen = nullptr)
      : tape_(tape), params_(params), frozen_(std::move(frozen)) {}

  Var operator()(const std::string& path);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  const ParamStore& params_;
  FrozenPredicate frozen_;
};

// 2x average pooling over time, height and width: [T x R x R x 3] ->
// [T/2 x R/2 x R/2 x 3].
Tensor downscale_video(const Tensor& video);

// Non-overlapping P x P patches of every frame, flattened (y, x, channel) into
// rows ordered by flat index t*N*N + y*N + x.
Tensor patchify(const Tensor& video, std::size_t patch);

// e[t, 2i] = sin(pos_t / 10000^(2i/D)), e[t, 2i+1] = cos(same).
Tensor sincos_embed(std::span<const double> positions, std::size_t dim);
Tensor sincos_time_embed(std::size_t frames, std::size_t dim);

// Linear interpolation of T_S tokens onto T_E frames, sampled at
// u_t = (t + 0.5) / T_E * T_S - 0.5 clamped to [0, T_S - 1].
Tensor interpolation_matrix(std::size_t src_frames, std::size_t dst_frames);
Tensor interpolate_frame_tokens(const Tensor& tokens, std::size_t dst_frames);

// Keep K = max(1, round((1 - S) * M)) positions with the largest logits (ties
// to the smaller flat index), returned in ascending flat-index order.
std::size_t keep_count(std::size_t tokens, double sparsity);
std::vector<std::size_t> topk_select(const Tensor& map_logits, double sparsity);

struct SelectorOutput {
  Var latents;                   // [(T_S + G + T_S*N_S^2) x D]
  Var map_logits;                // [T_E x N_E x N_E]
  Var frame_tokens;              // [T_S x D]
  std::optional<Var> registers;  // [G x D], absent when G = 0
};

struct ExtractorOutput {
  Var latents;      // [(1 + T_E + G + K) x D]
  Var video_token;  // [1 x D]
  Var iv2_video;    // [D_vid]
  Var dino_video;   // [T_E * D_img]
  Var frame;        // [T_E x D_img]
  Var patch_sparse; // [K x D_img]
  std::vector<std::size_t> indices;
};

SelectorOutput selector_forward(const ModelConfig& cfg, ParamBinder& bind, const Tensor& video);

// `indices` are flat positions from topk_select; they are treated as
// constants, so no gradient reaches the selector map through them.
ExtractorOutput extractor_forward(const ModelConfig& cfg, ParamBinder& bind, const Tensor& video,
                                  const SelectorOutput& sel, std::vector<std::size_t> indices);

// Pre-norm ViT block under `prefix` (ln1, attn.qkv, attn.proj, ln2, mlp.fc1,
// mlp.fc2).
Var vit_block(ParamBinder& bind, const std::string& prefix, Var x, std::size_t heads);
// Two-layer GELU MLP under `prefix` (fc1, fc2).
Var mlp_head(ParamBinder& bind, const std::string& prefix, Var x);
Var linear(ParamBinder& bind, const std::string& prefix, Var x);

}  // namespace lookwhen
