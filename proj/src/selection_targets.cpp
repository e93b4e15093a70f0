#include "selection_targets.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "error.hpp"

namespace lookwhen {
namespace {

struct Points {
  std::size_t count = 0;
  std::size_t dim = 0;
  Shape grid;
  std::span<const double> data;

  std::span<const double> row(std::size_t p) const { return data.subspan(p * dim, dim); }
};

Points as_points(const Tensor& features, const char* op) {
  if (features.ndim() < 2) {
    throw DimensionError(std::string(op) + ": expected a feature grid [.. x D], got " +
                         shape_str(features.shape()));
  }
  Points pts;
  pts.dim = features.shape().back();
  pts.grid = Shape(features.shape().begin(), features.shape().end() - 1);
  pts.count = features.numel() / pts.dim;
  pts.data = features.data();
  return pts;
}

std::string position_str(const Shape& grid, std::size_t flat) {
  std::vector<std::size_t> idx(grid.size());
  for (std::size_t a = grid.size(); a-- > 0;) {
    idx[a] = flat % grid[a];
    flat /= grid[a];
  }
  std::string s = "(";
  for (std::size_t a = 0; a < idx.size(); ++a) {
    if (a) s += ", ";
    s += std::to_string(idx[a]);
  }
  return s + ")";
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += a[d] * b[d];
  return s;
}

std::vector<double> norms_checked(const Points& pts, const char* op) {
  std::vector<double> n(pts.count);
  for (std::size_t p = 0; p < pts.count; ++p) {
    n[p] = std::sqrt(dot(pts.row(p), pts.row(p)));
    if (!(n[p] > 0.0)) {
      throw InvalidArgument(std::string(op) + ": zero-norm feature vector at position " +
                            position_str(pts.grid, p) + "; cosine similarity is undefined");
    }
  }
  return n;
}

// Full M x M cosine similarity matrix (diagonal included).
std::vector<double> cosine_matrix(const Points& pts, const char* op) {
  const auto n = norms_checked(pts, op);
  const std::size_t m = pts.count;
  std::vector<double> c(m * m);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t q = p; q < m; ++q) {
      const double v = dot(pts.row(p), pts.row(q)) / (n[p] * n[q]);
      c[p * m + q] = v;
      c[q * m + p] = v;
    }
  }
  return c;
}

void require_nonnegative_finite(const Tensor& t, const char* op) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) throw InvalidArgument(std::string(op) + ": non-finite entry at " + std::to_string(i));
    if (t[i] < 0.0) {
      throw InvalidArgument(std::string(op) + ": negative attention at flat index " + std::to_string(i));
    }
  }
}

double even_rank(std::size_t i, std::size_t m) {
  return m == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(m - 1);
}

}  // namespace

TargetSpec parse_target_spec(std::string_view text) {
  if (text == "top1") return {TargetMethod::kTop1, 1};
  if (text == "kcenter-feat") return {TargetMethod::kKCenterFeature, 0};
  if (text == "kcenter-pix") return {TargetMethod::kKCenterPixel, 0};
  if (text == "attn") return {TargetMethod::kAttention, 0};
  if (text == "dattn") return {TargetMethod::kDeltaAttention, 0};
  if (text == "random") return {TargetMethod::kRandom, 0};
  if (text.starts_with("topk:")) {
    const auto digits = text.substr(5);
    std::size_t k = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || k == 0) {
      throw InvalidArgument("bad topk method '" + std::string(text) + "', expected topk:<positive int>");
    }
    return {TargetMethod::kTopK, k};
  }
  throw InvalidArgument("unknown target method '" + std::string(text) + "'");
}

std::string to_string(const TargetSpec& spec) {
  switch (spec.method) {
    case TargetMethod::kTop1: return "top1";
    case TargetMethod::kTopK: return "topk:" + std::to_string(spec.k);
    case TargetMethod::kKCenterFeature: return "kcenter-feat";
    case TargetMethod::kKCenterPixel: return "kcenter-pix";
    case TargetMethod::kAttention: return "attn";
    case TargetMethod::kDeltaAttention: return "dattn";
    case TargetMethod::kRandom: return "random";
  }
  return "?";
}

UniquenessMap top1_distance(const Tensor& features) {
  const Points pts = as_points(features, "top1_distance");
  const std::size_t m = pts.count;
  if (m < 2) throw InvalidArgument("top1_distance: needs at least 2 positions");
  const auto c = cosine_matrix(pts, "top1_distance");
  Tensor u(pts.grid);
  for (std::size_t p = 0; p < m; ++p) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < m; ++q) {
      if (q != p) best = std::max(best, c[p * m + q]);
    }
    u[p] = 1.0 - best;
  }
  return {std::move(u), {TargetMethod::kTop1, 1}};
}

UniquenessMap topk_distance(const Tensor& features, std::size_t k) {
  const Points pts = as_points(features, "topk_distance");
  const std::size_t m = pts.count;
  if (k < 1 || m < 2 || k > m - 1) {
    throw InvalidArgument("topk_distance: k=" + std::to_string(k) + " out of range [1, " +
                          std::to_string(m == 0 ? 0 : m - 1) + "]");
  }
  const auto c = cosine_matrix(pts, "topk_distance");
  Tensor u(pts.grid);
  std::vector<double> sims;
  sims.reserve(m - 1);
  for (std::size_t p = 0; p < m; ++p) {
    sims.clear();
    for (std::size_t q = 0; q < m; ++q) {
      if (q != p) sims.push_back(c[p * m + q]);
    }
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += 1.0 - sims[i];
    u[p] = s / static_cast<double>(k);
  }
  return {std::move(u), {TargetMethod::kTopK, k}};
}

UniquenessMap kcenter_rank(const Tensor& features, KCenterSpace space) {
  const Points pts = as_points(features, "kcenter_rank");
  const std::size_t m = pts.count;
  const std::size_t dim = pts.dim;
  const bool feature = space == KCenterSpace::kFeature;
  const TargetSpec tag{feature ? TargetMethod::kKCenterFeature : TargetMethod::kKCenterPixel, 0};
  std::vector<double> norms;
  if (feature) norms = norms_checked(pts, "kcenter_rank");

  auto distance_to = [&](std::size_t p, std::span<const double> v, double v_norm) {
    if (feature) {
      if (!(v_norm > 0.0)) return 1.0;
      return 1.0 - dot(pts.row(p), v) / (norms[p] * v_norm);
    }
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = pts.row(p)[d] - v[d];
      s += diff * diff;
    }
    return std::sqrt(s);
  };

  std::vector<double> mean(dim, 0.0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += pts.row(p)[d];
  for (double& v : mean) v /= static_cast<double>(m);
  const double mean_norm = std::sqrt(dot(mean, mean));

  std::size_t pick = 0;
  double best = -1.0;
  for (std::size_t p = 0; p < m; ++p) {
    const double d = distance_to(p, mean, mean_norm);
    if (d > best) {
      best = d;
      pick = p;
    }
  }

  Tensor u(pts.grid);
  std::vector<bool> taken(m, false);
  std::vector<double> min_dist(m, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i) {
    taken[pick] = true;
    u[pick] = even_rank(m - 1 - i, m);
    if (i + 1 == m) break;
    std::size_t next = m;
    double far = -1.0;
    for (std::size_t p = 0; p < m; ++p) {
      if (taken[p]) continue;
      min_dist[p] = std::min(min_dist[p], distance_to(p, pts.row(pick), feature ? norms[pick] : 0.0));
      if (min_dist[p] > far) {
        far = min_dist[p];
        next = p;
      }
    }
    pick = next;
  }
  return {std::move(u), tag};
}

UniquenessMap attention_target(const Tensor& attn) {
  require_nonnegative_finite(attn, "attention_target");
  return {attn, {TargetMethod::kAttention, 0}};
}

UniquenessMap delta_attn_target(const Tensor& attn) {
  if (attn.ndim() < 1 || attn.dim(0) < 2) {
    throw InvalidArgument("delta_attn_target: needs at least 2 frames, got " + shape_str(attn.shape()));
  }
  require_nonnegative_finite(attn, "delta_attn_target");
  const std::size_t frames = attn.dim(0);
  const std::size_t per = attn.numel() / frames;
  Tensor u(attn.shape());
  for (std::size_t t = 1; t < frames; ++t)
    for (std::size_t i = 0; i < per; ++i) u[t * per + i] = std::abs(attn[t * per + i] - attn[(t - 1) * per + i]);
  for (std::size_t i = 0; i < per; ++i) u[i] = u[per + i];
  return {std::move(u), {TargetMethod::kDeltaAttention, 0}};
}

SelectorTarget rank_normalize(const Tensor& scores) {
  const std::size_t m = scores.numel();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  Tensor map(scores.shape());
  for (std::size_t i = 0; i < m; ++i) map[order[i]] = even_rank(i, m);
  return {std::move(map)};
}

SelectorTarget rank_normalize(const UniquenessMap& u) { return rank_normalize(u.scores); }

SelectorTarget random_target(const Shape& shape, std::uint64_t seed) {
  const std::size_t m = shape_numel(shape);
  std::vector<double> values(m);
  for (std::size_t i = 0; i < m; ++i) values[i] = even_rank(i, m);
  std::mt19937_64 rng(seed);
  std::shuffle(values.begin(), values.end(), rng);
  return {Tensor(shape, std::move(values))};
}

SelectorTarget compute_target(const TargetSpec& spec, const Tensor& input, std::uint64_t seed) {
  switch (spec.method) {
    case TargetMethod::kTop1: return rank_normalize(top1_distance(input));
    case TargetMethod::kTopK: return rank_normalize(topk_distance(input, spec.k));
    case TargetMethod::kKCenterFeature: return rank_normalize(kcenter_rank(input, KCenterSpace::kFeature));
    case TargetMethod::kKCenterPixel: return rank_normalize(kcenter_rank(input, KCenterSpace::kPixel));
    case TargetMethod::kAttention: return rank_normalize(attention_target(input));
    case TargetMethod::kDeltaAttention: return rank_normalize(delta_attn_target(input));
    case TargetMethod::kRandom: {
      if (input.ndim() < 2) throw DimensionError("random target: expected a feature grid, got " + shape_str(input.shape()));
      return random_target(Shape(input.shape().begin(), input.shape().end() - 1), seed);
    }
  }
  throw InvalidArgument("unhandled target method");
}

}  // namespace lookwhen
