#include "synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "error.hpp"

namespace lookwhen {
namespace {

constexpr std::uint64_t kTeacherSeed = 0x7EAC4E2ULL;
constexpr std::size_t kMotionFeatures = 4;
constexpr double kMotionGain = 4.0;

struct TeacherWeights {
  Tensor patch_w;  // [d_img x patch_dim]
  Tensor patch_b;  // [d_img]
  Tensor cls_w;    // [d_img x 4*d_img]
  Tensor cls_b;
  Tensor vid_w;    // [d_vid x (d_img + 4)]
  Tensor vid_b;
};

Tensor gaussian(Shape shape, std::mt19937_64& rng, double sd) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t.data()) v = n(rng);
  return t;
}

TeacherWeights teacher_weights(std::size_t patch_dim, std::size_t d_img, std::size_t d_vid) {
  std::mt19937_64 rng(kTeacherSeed);
  TeacherWeights w;
  w.patch_w = gaussian({d_img, patch_dim}, rng, 4.0 / std::sqrt(static_cast<double>(patch_dim)));
  w.patch_b = gaussian({d_img}, rng, 0.1);
  w.cls_w = gaussian({d_img, 4 * d_img}, rng, 2.0 / std::sqrt(4.0 * static_cast<double>(d_img)));
  w.cls_b = gaussian({d_img}, rng, 0.1);
  // Class-token columns, then the four trajectory columns with a larger gain.
  w.vid_w = gaussian({d_vid, d_img + kMotionFeatures}, rng, 1.0 / std::sqrt(static_cast<double>(d_img)));
  for (std::size_t r = 0; r < d_vid; ++r)
    for (std::size_t c = d_img; c < d_img + kMotionFeatures; ++c) w.vid_w[r * (d_img + kMotionFeatures) + c] *= kMotionGain;
  w.vid_b = gaussian({d_vid}, rng, 0.1);
  return w;
}

// out = tanh(W x + b)
void dense_tanh(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> out) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b[r];
    for (std::size_t c = 0; c < cols; ++c) s += w[r * cols + c] * x[c];
    out[r] = std::tanh(s);
  }
}

}  // namespace

TeacherBundle run_synth_teacher(const Tensor& video, std::size_t patch, std::size_t d_img,
                                std::size_t d_vid) {
  const auto& s = video.shape();
  if (s.size() != 4 || s[1] != s[2] || s[3] != 3 || patch == 0 || s[1] % patch != 0) {
    throw DimensionError("synthetic teacher: video must be [T x R x R x 3] with R divisible by " +
                         std::to_string(patch) + ", got " + shape_str(s));
  }
  const std::size_t frames = s[0], res = s[1], grid = res / patch;
  const std::size_t patch_dim = patch * patch * 3;
  const TeacherWeights w = teacher_weights(patch_dim, d_img, d_vid);

  TeacherBundle b;
  b.patch_feats = Tensor({frames, grid, grid, d_img});
  std::vector<double> px(patch_dim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        std::size_t k = 0;
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              px[k++] = video.at({t, gy * patch + y, gx * patch + x, c}) - 0.5;
        const std::size_t off = ((t * grid + gy) * grid + gx) * d_img;
        dense_tanh(w.patch_w, w.patch_b, px, b.patch_feats.data().subspan(off, d_img));
      }

  // Class token: quadrant-pooled patch features keep the coarse layout.
  const std::size_t half = std::max<std::size_t>(1, (grid + 1) / 2);
  b.class_tokens = Tensor({frames, d_img});
  std::vector<double> pooled(4 * d_img);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(pooled.begin(), pooled.end(), 0.0);
    std::vector<double> counts(4, 0.0);
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const std::size_t q = (gy >= half ? 2 : 0) + (gx >= half ? 1 : 0);
        counts[q] += 1.0;
        const std::size_t off = ((t * grid + gy) * grid + gx) * d_img;
        for (std::size_t d = 0; d < d_img; ++d) pooled[q * d_img + d] += b.patch_feats[off + d];
      }
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t d = 0; d < d_img; ++d)
        if (counts[q] > 0) pooled[q * d_img + d] /= counts[q];
    dense_tanh(w.cls_w, w.cls_b, pooled, b.class_tokens.data().subspan(t * d_img, d_img));
  }

  // Video token from the mean class token plus the trajectory of the most
  // salient content: per frame, the centroid of patches weighted by their
  // squared feature distance from the frame mean, then the centroid's mean
  // position and least-squares velocity over time. Saliency ignores color,
  // so the motion part is the same for every blob hue.
  std::vector<double> summary(d_img + kMotionFeatures, 0.0);
  std::vector<double> cx(frames, 0.0), cy(frames, 0.0);
  const std::size_t n = grid * grid;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> mean(d_img, 0.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t d = 0; d < d_img; ++d) mean[d] += b.patch_feats[(t * n + p) * d_img + d] / static_cast<double>(n);
    double wsum = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double s2 = 0.0;
      for (std::size_t d = 0; d < d_img; ++d) {
        const double diff = b.patch_feats[(t * n + p) * d_img + d] - mean[d];
        s2 += diff * diff;
      }
      const double wgt = s2 * s2;
      // Grid coordinates mapped to [-1, 1].
      const double gx = grid > 1 ? 2.0 * static_cast<double>(p % grid) / static_cast<double>(grid - 1) - 1.0 : 0.0;
      const double gy = grid > 1 ? 2.0 * static_cast<double>(p / grid) / static_cast<double>(grid - 1) - 1.0 : 0.0;
      cx[t] += wgt * gx;
      cy[t] += wgt * gy;
      wsum += wgt;
    }
    if (wsum > 0) {
      cx[t] /= wsum;
      cy[t] /= wsum;
    }
    for (std::size_t d = 0; d < d_img; ++d) summary[d] += b.class_tokens[t * d_img + d] / static_cast<double>(frames);
  }
  const double t_mean = (static_cast<double>(frames) - 1.0) / 2.0;
  double t_var = 0.0, vx = 0.0, vy = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    const double dt = static_cast<double>(t) - t_mean;
    t_var += dt * dt;
    vx += dt * cx[t];
    vy += dt * cy[t];
    mx += cx[t] / static_cast<double>(frames);
    my += cy[t] / static_cast<double>(frames);
  }
  // Velocity in half-widths per clip, so it does not shrink with T.
  const double span = static_cast<double>(frames > 1 ? frames - 1 : 1);
  summary[d_img + 0] = t_var > 0 ? vx / t_var * span : 0.0;
  summary[d_img + 1] = t_var > 0 ? vy / t_var * span : 0.0;
  summary[d_img + 2] = mx;
  summary[d_img + 3] = my;
  b.iv2_video = Tensor({d_vid});
  dense_tanh(w.vid_w, w.vid_b, summary, b.iv2_video.data());

  // Class-to-patch attention, softmax over the patches of each frame.
  Tensor attn({frames, grid, grid});
  const double temp = 4.0 / std::sqrt(static_cast<double>(d_img));
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t n = grid * grid;
    std::vector<double> logits(n);
    double mx = -1e300;
    for (std::size_t p = 0; p < n; ++p) {
      double s = 0.0;
      for (std::size_t d = 0; d < d_img; ++d) s += b.class_tokens[t * d_img + d] * b.patch_feats[(t * n + p) * d_img + d];
      logits[p] = s * temp;
      mx = std::max(mx, logits[p]);
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t p = 0; p < n; ++p) attn[t * n + p] = logits[p] / z;
  }
  b.attn = std::move(attn);
  return b;
}

SynthClip synth_clip(const SynthSpec& spec, std::uint64_t seed, std::optional<Motion> motion) {
  if (spec.frames == 0 || spec.grid == 0 || spec.patch == 0 || spec.d_img == 0 || spec.d_vid == 0) {
    throw InvalidArgument("synth: all dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t res = spec.resolution();
  const double r = static_cast<double>(res);
  const double two_pi = 2.0 * std::numbers::pi;

  struct Wave {
    double kx, ky, phase, drift, amp;
  };
  std::array<std::array<Wave, 3>, 3> waves{};
  std::array<double, 3> base{};
  for (std::size_t c = 0; c < 3; ++c) {
    base[c] = 0.35 + 0.3 * u01(rng);
    for (auto& w : waves[c]) {
      w.kx = u01(rng) - 0.5;
      w.ky = u01(rng) - 0.5;
      w.phase = two_pi * u01(rng);
      w.drift = 0.3 * (u01(rng) - 0.5);
      w.amp = 0.05 + 0.07 * u01(rng);
    }
  }

  const Motion dir = motion ? *motion : static_cast<Motion>(static_cast<int>(u01(rng) * kMotionClasses) % kMotionClasses);
  std::array<double, 3> color{};
  for (std::size_t c = 0; c < 3; ++c) color[c] = base[c] > 0.5 ? 0.02 : 0.98;
  // Flip one channel so the blob hue is not just the background's complement.
  color[static_cast<std::size_t>(u01(rng) * 3.0) % 3] = u01(rng) < 0.5 ? 0.02 : 0.98;

  const double margin = 0.2 * r;
  const double travel = r - 2.0 * margin;
  const double sigma = 0.35 * static_cast<double>(spec.patch);
  const double across = margin + (r - 2.0 * margin) * u01(rng);
  const double jitter = (u01(rng) - 0.5) * 0.1 * r;
  const double step = spec.frames > 1 ? travel / static_cast<double>(spec.frames - 1) : 0.0;

  SynthClip clip;
  clip.label = static_cast<int>(dir);
  clip.video = Tensor({spec.frames, res, res, 3});
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double along = margin + jitter + step * static_cast<double>(t);
    double cx = 0, cy = 0;
    switch (dir) {
      case Motion::kRight: cx = along; cy = across; break;
      case Motion::kLeft: cx = r - along; cy = across; break;
      case Motion::kDown: cx = across; cy = along; break;
      case Motion::kUp: cx = across; cy = r - along; break;
    }
    const auto clampi = [&](double v) {
      return std::min(spec.grid - 1, static_cast<std::size_t>(std::max(0.0, v) / static_cast<double>(spec.patch)));
    };
    clip.blob_positions.push_back((t * spec.grid + clampi(cy)) * spec.grid + clampi(cx));
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) / r, fy = (static_cast<double>(y) + 0.5) / r;
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double alpha = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        for (std::size_t c = 0; c < 3; ++c) {
          double v = base[c];
          for (const auto& w : waves[c]) {
            v += w.amp * std::sin(two_pi * (w.kx * fx + w.ky * fy) + w.phase + w.drift * static_cast<double>(t));
          }
          v = (1.0 - alpha) * v + alpha * color[c];
          clip.video.at({t, y, x, c}) = std::clamp(v, 0.0, 1.0);
        }
      }
  }
  clip.teacher = run_synth_teacher(clip.video, spec.patch, spec.d_img, spec.d_vid);
  return clip;
}

TeacherBundle synth_teacher(std::size_t frames, std::size_t grid, std::size_t d_img, std::size_t d_vid,
                            std::uint64_t seed) {
  SynthSpec spec;
  spec.frames = frames;
  spec.grid = grid;
  spec.d_img = d_img;
  spec.d_vid = d_vid;
  return synth_clip(spec, seed).teacher;
}

Tensor flip_horizontal(const Tensor& t) {
  if (t.ndim() < 3) throw DimensionError("flip_horizontal: expected [T x H x W ...], got " + shape_str(t.shape()));
  const std::size_t frames = t.dim(0), h = t.dim(1), w = t.dim(2);
  const std::size_t inner = t.numel() / (frames * h * w);
  Tensor out(t.shape());
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t i = 0; i < inner; ++i)
          out[((f * h + y) * w + (w - 1 - x)) * inner + i] = t[((f * h + y) * w + x) * inner + i];
  return out;
}

}  // namespace lookwhen
