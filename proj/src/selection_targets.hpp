#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "tensor.hpp"

namespace lookwhen {

enum class TargetMethod {
  kTop1,
  kTopK,
  kKCenterFeature,
  kKCenterPixel,
  kAttention,
  kDeltaAttention,
  kRandom,
};

struct TargetSpec {
  TargetMethod method = TargetMethod::kTop1;
  std::size_t k = 1;  // only for kTopK
};

// Parses "top1", "topk:<k>", "kcenter-feat", "kcenter-pix", "attn", "dattn",
// "random".
TargetSpec parse_target_spec(std::string_view text);
std::string to_string(const TargetSpec& spec);

// Raw per-position uniqueness scores over a T x N x N grid. Higher is more
// unique.
struct UniquenessMap {
  Tensor scores;
  TargetSpec method;
};

// Soft rank targets: the flattened map is a permutation of
// {0, 1/(M-1), ..., 1}.
struct SelectorTarget {
  Tensor map;
};

// Inputs below are feature grids of shape [T x N x N x D] (any leading shape
// works; the last axis is the feature axis). Cosine similarity between
// positions p and q is dot(z_p, z_q) / (norm(z_p) * norm(z_q)), with the dot
// product and squared norms summed in increasing feature index.

// U[p] = 1 - max_{q != p} cos(z_p, z_q) over all space-time positions.
UniquenessMap top1_distance(const Tensor& features);

// U[p] = mean of (1 - cos) over the k most similar other positions, summed in
// order of decreasing similarity. Requires 1 <= k <= M-1.
UniquenessMap topk_distance(const Tensor& features, std::size_t k);

enum class KCenterSpace { kFeature, kPixel };

// Farthest-point sampling order turned into scores: the i-th pick gets
// (M-1-i)/(M-1). The first pick is the point farthest from the mean vector.
// Distances are 1 - cos in feature space and Euclidean in pixel space. Ties
// go to the smallest flat index.
UniquenessMap kcenter_rank(const Tensor& features, KCenterSpace space);

// Teacher class-to-patch attention [T x N x N], non-negative; passed through.
UniquenessMap attention_target(const Tensor& attn);

// |attn[t] - attn[t-1]| for t >= 1; frame 0 repeats the first difference.
UniquenessMap delta_attn_target(const Tensor& attn);

// Ascending sort by (score, flat index); the i-th gets i/(M-1), or 1.0 when
// M = 1.
SelectorTarget rank_normalize(const Tensor& scores);
SelectorTarget rank_normalize(const UniquenessMap& u);

// Seeded uniform permutation of the evenly spaced rank values.
SelectorTarget random_target(const Shape& shape, std::uint64_t seed);

// Dispatch by spec. Feature methods and kRandom take a feature grid
// (the map shape drops the last axis); attention methods take an attention
// map directly.
SelectorTarget compute_target(const TargetSpec& spec, const Tensor& input, std::uint64_t seed = 0);

}  // namespace lookwhen
