#include "flops.hpp"

#include "error.hpp"

namespace lookwhen {
namespace {

double per_mac(FlopConvention conv) { return conv == FlopConvention::kTwoPerMac ? 2.0 : 1.0; }

double mlp_flops(std::size_t rows, std::size_t in, std::size_t hidden, std::size_t out, FlopConvention conv) {
  return linear_flops(rows, in, hidden, conv) + linear_flops(rows, hidden, out, conv);
}

}  // namespace

double linear_flops(std::size_t rows, std::size_t in, std::size_t out, FlopConvention conv) {
  return per_mac(conv) * static_cast<double>(rows) * static_cast<double>(in) * static_cast<double>(out);
}

double vit_flops(std::size_t tokens, std::size_t width, std::size_t depth, std::size_t mlp_ratio,
                 std::size_t patch_dim, FlopConvention conv) {
  if (tokens == 0 || width == 0 || mlp_ratio == 0) throw InvalidArgument("vit_flops: sizes must be positive");
  const double n = static_cast<double>(tokens);
  const double d = static_cast<double>(width);
  const double r = static_cast<double>(mlp_ratio);
  const double layer = (4.0 + 2.0 * r) * n * d * d + 2.0 * n * n * d;
  double total = per_mac(conv) * static_cast<double>(depth) * layer;
  if (patch_dim > 0) total += linear_flops(tokens, patch_dim, width, conv);
  return total;
}

CostReport lookwhen_flops(const ModelConfig& cfg, double sparsity, FlopConvention conv) {
  cfg.validate();
  CostReport r;
  r.config = cfg;
  r.sparsity = sparsity;
  r.convention = conv;
  const std::size_t d = cfg.width;
  const std::size_t sel_patches = cfg.sel_tokens();
  r.kept_patches = keep_count(cfg.tokens(), sparsity);
  r.selector_tokens = cfg.sel_frames() + cfg.registers + sel_patches;
  r.extractor_tokens = 1 + cfg.frames + cfg.registers + r.kept_patches;

  r.selector_flops = vit_flops(r.selector_tokens, d, cfg.depth_sel, cfg.mlp_ratio, 0, conv) +
                     linear_flops(sel_patches, cfg.patch_dim(), d, conv) +
                     mlp_flops(sel_patches, d, d, 8, conv);
  r.extractor_flops = vit_flops(r.extractor_tokens, d, cfg.depth_ext, cfg.mlp_ratio, 0, conv) +
                      linear_flops(r.kept_patches, cfg.patch_dim(), d, conv);
  r.heads_flops = mlp_flops(1, d, d, cfg.d_vid, conv) + mlp_flops(1, d, d, cfg.frames * cfg.d_img, conv) +
                  mlp_flops(cfg.frames, d, d, cfg.d_img, conv) + mlp_flops(r.kept_patches, d, d, cfg.d_img, conv);
  r.total_flops = r.selector_flops + r.extractor_flops + r.heads_flops;
  return r;
}

double dense_vit_flops(const ModelConfig& cfg, FlopConvention conv) {
  cfg.validate();
  return vit_flops(cfg.tokens(), cfg.width, cfg.depth_ext, cfg.mlp_ratio, cfg.patch_dim(), conv);
}

ModelConfig flops_preset(std::string_view name) {
  if (name == "desk") return ModelConfig{};
  if (name == "vitb-224-16") {
    ModelConfig c;
    c.frames = 16;
    c.resolution = 224;
    c.patch = 16;
    c.width = 768;
    c.depth_sel = 3;
    c.depth_ext = 12;
    c.heads = 12;
    c.registers = 4;
    c.d_img = 768;
    c.d_vid = 768;
    c.mlp_ratio = 4;
    return c;
  }
  throw InvalidArgument("unknown FLOPs preset '" + std::string(name) + "' (expected vitb-224-16 or desk)");
}

}  // namespace lookwhen
