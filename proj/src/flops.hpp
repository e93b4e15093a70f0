#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "model.hpp"

namespace lookwhen {

// How a multiply-accumulate is counted. Published per-view GFLOPs for video
// ViTs (e.g. 180 G for ViT-B on 16x224 clips) count one multiply-accumulate
// as one FLOP, so that is the default.
enum class FlopConvention {
  kMacs,
  kTwoPerMac,
};

// Dense [rows x in] * [in x out].
double linear_flops(std::size_t rows, std::size_t in, std::size_t out,
                    FlopConvention conv = FlopConvention::kMacs);

// Pre-norm ViT encoder on `tokens` tokens. Per layer, in multiply-accumulates:
// 4*N*D^2 (qkv + output projection), N^2*D (QK^T), N^2*D (attention * V) and
// 2*ratio*N*D^2 (MLP). Norms, softmax and activations are not counted. When
// patch_dim > 0 the patch embedding of all N tokens (N*patch_dim*D) is added.
double vit_flops(std::size_t tokens, std::size_t width, std::size_t depth, std::size_t mlp_ratio = 4,
                 std::size_t patch_dim = 0, FlopConvention conv = FlopConvention::kMacs);

struct CostReport {
  double selector_flops = 0.0;   // patch embedding, 3 blocks, map head
  double extractor_flops = 0.0;  // patch embedding of K patches, blocks
  double heads_flops = 0.0;      // video, frame and patch heads
  double total_flops = 0.0;
  std::size_t selector_tokens = 0;   // T_S + G + T_S*N_S^2
  std::size_t extractor_tokens = 0;  // 1 + T_E + G + K
  std::size_t kept_patches = 0;      // K
  double sparsity = 0.0;
  FlopConvention convention = FlopConvention::kMacs;
  ModelConfig config;
};

CostReport lookwhen_flops(const ModelConfig& cfg, double sparsity, FlopConvention conv = FlopConvention::kMacs);

// Dense ViT over every full-resolution patch token of the config, with
// depth_ext layers: the baseline the selector is compared against.
double dense_vit_flops(const ModelConfig& cfg, FlopConvention conv = FlopConvention::kMacs);

// "vitb-224-16": ViT-B width and depth at 16 frames of 224^2 with 16^2
// patches and 4 registers. "desk": the default small ModelConfig.
ModelConfig flops_preset(std::string_view name);

}  // namespace lookwhen
