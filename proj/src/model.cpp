#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "error.hpp"
#include "ops.hpp"

namespace lookwhen {
namespace {

constexpr std::size_t kMapHeadOutputs = 8;  // one logit per cell of the 2x2x2 block

void add_linear(ParamStore& p, std::mt19937_64& rng, const std::string& prefix, std::size_t in,
                std::size_t out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({in, out});
  for (double& v : w.data()) v = u(rng);
  p.emplace(prefix + ".w", std::move(w));
  p.emplace(prefix + ".b", Tensor({out}));
}

void add_norm(ParamStore& p, const std::string& prefix, std::size_t d) {
  p.emplace(prefix + ".g", Tensor::filled({d}, 1.0));
  p.emplace(prefix + ".b", Tensor({d}));
}

void add_embedding(ParamStore& p, std::mt19937_64& rng, const std::string& path, Shape shape) {
  std::normal_distribution<double> n(0.0, 0.02);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  p.emplace(path, std::move(t));
}

void add_block(ParamStore& p, std::mt19937_64& rng, const std::string& prefix, std::size_t d,
               std::size_t ratio) {
  add_norm(p, prefix + ".ln1", d);
  add_linear(p, rng, prefix + ".attn.qkv", d, 3 * d);
  add_linear(p, rng, prefix + ".attn.proj", d, d);
  add_norm(p, prefix + ".ln2", d);
  add_linear(p, rng, prefix + ".mlp.fc1", d, ratio * d);
  add_linear(p, rng, prefix + ".mlp.fc2", ratio * d, d);
}

void add_mlp(ParamStore& p, std::mt19937_64& rng, const std::string& prefix, std::size_t in,
             std::size_t hidden, std::size_t out) {
  add_linear(p, rng, prefix + ".fc1", in, hidden);
  add_linear(p, rng, prefix + ".fc2", hidden, out);
}

// Per-row sincos rows for the given time positions.
Tensor time_rows(std::span<const double> positions, std::size_t dim) {
  return sincos_embed(positions, dim);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("model config: " + m); };
  if (frames == 0 || resolution == 0 || patch == 0 || width == 0 || heads == 0 || d_img == 0 ||
      d_vid == 0 || mlp_ratio == 0 || depth_ext == 0) {
    fail("all sizes must be positive");
  }
  if (frames % 2 != 0) fail("frames (T_E) must be even for the 2x time downscale");
  if (resolution % 2 != 0 || (resolution / 2) % patch != 0) {
    fail("resolution/2 must be divisible by the patch size");
  }
  if (width % heads != 0) fail("width must be divisible by heads");
  if (width % 2 != 0) fail("width must be even for sincos embeddings");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.frames == b.frames && a.resolution == b.resolution && a.patch == b.patch &&
         a.width == b.width && a.depth_sel == b.depth_sel && a.depth_ext == b.depth_ext &&
         a.heads == b.heads && a.registers == b.registers && a.d_img == b.d_img &&
         a.d_vid == b.d_vid && a.mlp_ratio == b.mlp_ratio && a.time_embed == b.time_embed;
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore p;
  const std::size_t d = cfg.width;

  add_linear(p, rng, "sel.patch_embed", cfg.patch_dim(), d);
  add_embedding(p, rng, "sel.pos_embed", {cfg.sel_grid() * cfg.sel_grid(), d});
  add_embedding(p, rng, "sel.frame_tokens", {cfg.sel_frames(), d});
  if (cfg.registers > 0) add_embedding(p, rng, "sel.registers", {cfg.registers, d});
  for (std::size_t i = 0; i < cfg.depth_sel; ++i) {
    add_block(p, rng, "sel.blocks." + std::to_string(i), d, cfg.mlp_ratio);
  }
  add_norm(p, "sel.norm", d);
  add_mlp(p, rng, "sel.map_head", d, d, kMapHeadOutputs);

  add_linear(p, rng, "ext.patch_embed", cfg.patch_dim(), d);
  add_embedding(p, rng, "ext.pos_embed", {cfg.grid() * cfg.grid(), d});
  add_embedding(p, rng, "ext.video_token", {1, d});
  for (std::size_t i = 0; i < cfg.depth_ext; ++i) {
    add_block(p, rng, "ext.blocks." + std::to_string(i), d, cfg.mlp_ratio);
  }
  add_norm(p, "ext.norm", d);
  add_mlp(p, rng, "ext.head_iv2", d, d, cfg.d_vid);
  add_mlp(p, rng, "ext.head_dino_video", d, d, cfg.frames * cfg.d_img);
  add_mlp(p, rng, "ext.head_frame", d, d, cfg.d_img);
  add_mlp(p, rng, "ext.head_patch", d, d, cfg.d_img);
  return p;
}

bool is_map_head_param(const std::string& path) { return path.starts_with("sel.map_head."); }
bool is_selector_param(const std::string& path) { return path.starts_with("sel."); }

Var ParamBinder::operator()(const std::string& path) {
  const auto it = params_.find(path);
  if (it == params_.end()) throw InvalidArgument("missing model parameter '" + path + "'");
  if (frozen_ && frozen_(path)) return tape_.constant(it->second, "frozen:" + path);
  return tape_.param(path, it->second);
}

Tensor downscale_video(const Tensor& video) {
  const auto& s = video.shape();
  if (s.size() != 4) throw DimensionError("downscale_video: expected [T x R x R x C], got " + shape_str(s));
  if (s[0] % 2 != 0 || s[1] % 2 != 0 || s[2] % 2 != 0) {
    throw InvalidArgument("downscale_video: T and R must be even, got " + shape_str(s));
  }
  const std::size_t t2 = s[0] / 2, h2 = s[1] / 2, w2 = s[2] / 2, c = s[3];
  Tensor out({t2, h2, w2, c});
  for (std::size_t t = 0; t < t2; ++t)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum = 0.0;
          for (std::size_t dt = 0; dt < 2; ++dt)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx)
                sum += video.at({2 * t + dt, 2 * y + dy, 2 * x + dx, ch});
          out.at({t, y, x, ch}) = sum / 8.0;
        }
  return out;
}

Tensor patchify(const Tensor& video, std::size_t patch) {
  const auto& s = video.shape();
  if (s.size() != 4 || s[1] != s[2] || patch == 0 || s[1] % patch != 0) {
    throw DimensionError("patchify: expected [T x R x R x C] with R divisible by " + std::to_string(patch) +
                         ", got " + shape_str(s));
  }
  const std::size_t frames = s[0], res = s[1], ch = s[3], grid = res / patch;
  Tensor out({frames * grid * grid, patch * patch * ch});
  std::size_t k = 0;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            for (std::size_t c = 0; c < ch; ++c) out[k++] = video.at({t, gy * patch + y, gx * patch + x, c});
  return out;
}

Tensor sincos_embed(std::span<const double> positions, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw InvalidArgument("sincos embedding needs an even positive width, got " + std::to_string(dim));
  }
  Tensor e({positions.size(), dim});
  for (std::size_t t = 0; t < positions.size(); ++t) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      const double a = positions[t] / freq;
      e[t * dim + 2 * i] = std::sin(a);
      e[t * dim + 2 * i + 1] = std::cos(a);
    }
  }
  return e;
}

Tensor sincos_time_embed(std::size_t frames, std::size_t dim) {
  std::vector<double> pos(frames);
  std::iota(pos.begin(), pos.end(), 0.0);
  return sincos_embed(pos, dim);
}

Tensor interpolation_matrix(std::size_t src_frames, std::size_t dst_frames) {
  if (src_frames == 0 || dst_frames == 0) throw InvalidArgument("interpolation needs at least one frame");
  Tensor w({dst_frames, src_frames});
  const double hi = static_cast<double>(src_frames - 1);
  for (std::size_t t = 0; t < dst_frames; ++t) {
    const double u = std::clamp((static_cast<double>(t) + 0.5) / static_cast<double>(dst_frames) *
                                        static_cast<double>(src_frames) - 0.5,
                                0.0, hi);
    const std::size_t lo = static_cast<std::size_t>(std::floor(u));
    const std::size_t up = std::min(lo + 1, src_frames - 1);
    const double frac = u - static_cast<double>(lo);
    w[t * src_frames + lo] += 1.0 - frac;
    w[t * src_frames + up] += frac;
  }
  return w;
}

Tensor interpolate_frame_tokens(const Tensor& tokens, std::size_t dst_frames) {
  if (tokens.ndim() != 2) throw DimensionError("interpolate_frame_tokens: expected [T_S x D], got " + shape_str(tokens.shape()));
  return matmul(interpolation_matrix(tokens.dim(0), dst_frames), tokens);
}

std::size_t keep_count(std::size_t tokens, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw InvalidArgument("sparsity must lie in [0, 1), got " + std::to_string(sparsity));
  }
  const auto k = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(tokens)));
  return std::clamp<std::size_t>(k, 1, tokens);
}

std::vector<std::size_t> topk_select(const Tensor& map_logits, double sparsity) {
  const std::size_t m = map_logits.numel();
  const std::size_t k = keep_count(m, sparsity);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map_logits[a] > map_logits[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

Var linear(ParamBinder& bind, const std::string& prefix, Var x) {
  return add_bias(matmul(x, bind(prefix + ".w")), bind(prefix + ".b"));
}

Var mlp_head(ParamBinder& bind, const std::string& prefix, Var x) {
  return linear(bind, prefix + ".fc2", gelu(linear(bind, prefix + ".fc1", x)));
}

Var vit_block(ParamBinder& bind, const std::string& prefix, Var x, std::size_t heads) {
  const std::size_t d = x.shape()[1];
  const std::size_t dh = d / heads;
  Var h = layer_norm(x, bind(prefix + ".ln1.g"), bind(prefix + ".ln1.b"));
  Var qkv = linear(bind, prefix + ".attn.qkv", h);
  std::vector<Var> outs;
  outs.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < heads; ++i) {
    Var q = slice_cols(qkv, i * dh, (i + 1) * dh);
    Var k = slice_cols(qkv, d + i * dh, d + (i + 1) * dh);
    Var v = slice_cols(qkv, 2 * d + i * dh, 2 * d + (i + 1) * dh);
    Var a = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    outs.push_back(matmul(a, v));
  }
  Var attn = heads == 1 ? outs.front() : concat_cols(outs);
  x = add(x, linear(bind, prefix + ".attn.proj", attn));
  Var m = layer_norm(x, bind(prefix + ".ln2.g"), bind(prefix + ".ln2.b"));
  m = linear(bind, prefix + ".mlp.fc2", gelu(linear(bind, prefix + ".mlp.fc1", m)));
  return add(x, m);
}

SelectorOutput selector_forward(const ModelConfig& cfg, ParamBinder& bind, const Tensor& video) {
  cfg.validate();
  const Shape expect{cfg.frames, cfg.resolution, cfg.resolution, 3};
  if (video.shape() != expect) {
    throw InvalidArgument("selector: video " + shape_str(video.shape()) + " does not match config " +
                          shape_str(expect));
  }
  Tape& tape = bind.tape();
  const std::size_t ts = cfg.sel_frames(), ns = cfg.sel_grid(), per = ns * ns, d = cfg.width;
  const std::size_t n_patch = ts * per;

  Var patches = tape.constant(patchify(downscale_video(video), cfg.patch), "patches");
  Var tokens = linear(bind, "sel.patch_embed", patches);
  std::vector<std::size_t> spatial(n_patch);
  for (std::size_t i = 0; i < n_patch; ++i) spatial[i] = i % per;
  tokens = add(tokens, gather_rows(bind("sel.pos_embed"), spatial));

  Var frames = bind("sel.frame_tokens");
  if (cfg.time_embed) {
    // Low-res frame t covers full-res frames 2t and 2t+1.
    std::vector<double> frame_pos(ts), token_pos(n_patch);
    for (std::size_t t = 0; t < ts; ++t) frame_pos[t] = 2.0 * static_cast<double>(t) + 0.5;
    for (std::size_t i = 0; i < n_patch; ++i) token_pos[i] = frame_pos[i / per];
    tokens = add(tokens, tape.constant(time_rows(token_pos, d), "time_embed"));
    frames = add(frames, tape.constant(time_rows(frame_pos, d), "time_embed"));
  }

  std::vector<Var> seq{frames};
  if (cfg.registers > 0) seq.push_back(bind("sel.registers"));
  seq.push_back(tokens);
  Var x = concat_rows(seq);
  for (std::size_t i = 0; i < cfg.depth_sel; ++i) {
    x = vit_block(bind, "sel.blocks." + std::to_string(i), x, cfg.heads);
  }
  x = layer_norm(x, bind("sel.norm.g"), bind("sel.norm.b"));

  SelectorOutput out;
  out.latents = x;
  out.frame_tokens = slice_rows(x, 0, ts);
  if (cfg.registers > 0) out.registers = slice_rows(x, ts, ts + cfg.registers);
  const std::size_t first_patch = ts + cfg.registers;
  Var block_logits = mlp_head(bind, "sel.map_head", slice_rows(x, first_patch, first_patch + n_patch));

  // Scatter each low-res token's 8 logits onto the 2x2x2 full-res block it covers.
  const std::size_t te = cfg.frames, ne = cfg.grid();
  std::vector<std::size_t> src(te * ne * ne);
  for (std::size_t t = 0; t < te; ++t)
    for (std::size_t y = 0; y < ne; ++y)
      for (std::size_t xx = 0; xx < ne; ++xx) {
        const std::size_t row = ((t / 2) * ns + y / 2) * ns + xx / 2;
        const std::size_t col = (t % 2) * 4 + (y % 2) * 2 + (xx % 2);
        src[(t * ne + y) * ne + xx] = row * kMapHeadOutputs + col;
      }
  out.map_logits = gather(block_logits, {te, ne, ne}, std::move(src));
  return out;
}

ExtractorOutput extractor_forward(const ModelConfig& cfg, ParamBinder& bind, const Tensor& video,
                                  const SelectorOutput& sel, std::vector<std::size_t> indices) {
  cfg.validate();
  Tape& tape = bind.tape();
  const std::size_t m = cfg.tokens(), per = cfg.grid() * cfg.grid(), d = cfg.width;
  if (indices.empty()) throw InvalidArgument("extractor: no selected patches");
  for (std::size_t i : indices) {
    if (i >= m) {
      throw InvalidArgument("extractor: patch index " + std::to_string(i) + " out of range for " +
                            std::to_string(m) + " tokens");
    }
  }
  const Tensor all_patches = patchify(video, cfg.patch);
  const std::size_t pd = cfg.patch_dim();
  Tensor picked({indices.size(), pd});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(all_patches.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * pd), pd,
                picked.data().begin() + static_cast<std::ptrdiff_t>(r * pd));

  Var tokens = linear(bind, "ext.patch_embed", tape.constant(std::move(picked), "patches"));
  std::vector<std::size_t> spatial(indices.size());
  std::vector<double> token_pos(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    spatial[r] = indices[r] % per;
    token_pos[r] = static_cast<double>(indices[r] / per);
  }
  tokens = add(tokens, gather_rows(bind("ext.pos_embed"), spatial));

  Var frames = matmul(tape.constant(interpolation_matrix(cfg.sel_frames(), cfg.frames), "interp"),
                      sel.frame_tokens);
  if (cfg.time_embed) {
    tokens = add(tokens, tape.constant(time_rows(token_pos, d), "time_embed"));
    frames = add(frames, tape.constant(sincos_time_embed(cfg.frames, d), "time_embed"));
  }

  std::vector<Var> seq{bind("ext.video_token"), frames};
  if (sel.registers) seq.push_back(*sel.registers);
  seq.push_back(tokens);
  Var x = concat_rows(seq);
  for (std::size_t i = 0; i < cfg.depth_ext; ++i) {
    x = vit_block(bind, "ext.blocks." + std::to_string(i), x, cfg.heads);
  }
  x = layer_norm(x, bind("ext.norm.g"), bind("ext.norm.b"));

  ExtractorOutput out;
  out.latents = x;
  out.video_token = slice_rows(x, 0, 1);
  out.iv2_video = reshape(mlp_head(bind, "ext.head_iv2", out.video_token), {cfg.d_vid});
  out.dino_video = reshape(mlp_head(bind, "ext.head_dino_video", out.video_token), {cfg.frames * cfg.d_img});
  out.frame = mlp_head(bind, "ext.head_frame", slice_rows(x, 1, 1 + cfg.frames));
  const std::size_t first_patch = 1 + cfg.frames + cfg.registers;
  out.patch_sparse = mlp_head(bind, "ext.head_patch", slice_rows(x, first_patch, first_patch + indices.size()));
  out.indices = std::move(indices);
  return out;
}

}  // namespace lookwhen
