#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "error.hpp"
#include "ops.hpp"
#include "synth.hpp"

namespace lookwhen {
namespace {

double cosine_schedule(std::size_t step, std::size_t total, std::size_t warmup, double lr_max, double lr_min) {
  if (step < warmup) return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t span = total > warmup + 1 ? total - warmup - 1 : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void accumulate(ParamStore& into, const ParamStore& grads) {
  for (const auto& [path, g] : grads) {
    auto [it, inserted] = into.try_emplace(path, g);
    if (inserted) continue;
    for (std::size_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
  }
}

void check_term(const char* name, Var v, Tape& tape, std::size_t step) {
  if (!std::isfinite(v.value().item())) {
    throw NumericError("step " + std::to_string(step) + ": loss term '" + name +
                       "' became non-finite (first non-finite op '" + tape.first_nonfinite_op().value_or("?") + "')");
  }
}

std::size_t class_count(std::span<const int> labels, std::size_t requested) {
  if (labels.empty()) throw InvalidArgument("no labels");
  int mx = 0;
  for (int l : labels) {
    if (l < 0) throw InvalidArgument("negative class label");
    mx = std::max(mx, l);
  }
  return requested > 0 ? requested : static_cast<std::size_t>(mx) + 1;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(sparsity_lo >= 0.0 && sparsity_lo <= sparsity_hi && sparsity_hi < 1.0)) {
    throw InvalidArgument("train config: need 0 <= sparsity_lo <= sparsity_hi < 1");
  }
  if (batch == 0) throw InvalidArgument("train config: batch must be positive");
  if (lr_max < 0.0 || lr_min < 0.0) throw InvalidArgument("train config: negative learning rate");
  if (warmup_frac < 0.0 || warmup_frac > 1.0) throw InvalidArgument("train config: warmup_frac outside [0, 1]");
  if (hflip_prob < 0.0 || hflip_prob > 1.0) throw InvalidArgument("train config: hflip_prob outside [0, 1]");
}

double sample_sparsity(const TrainConfig& cfg, std::mt19937_64& rng) {
  if (cfg.sparsity_lo == cfg.sparsity_hi) return cfg.sparsity_lo;
  std::uniform_real_distribution<double> u(cfg.sparsity_lo, cfg.sparsity_hi);
  return u(rng);
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_frac * static_cast<double>(cfg.steps)));
  return cosine_schedule(step, cfg.steps, warmup, cfg.lr_max, cfg.lr_min);
}

void AdamW::update(ParamStore& params, const ParamStore& grads, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& [path, g] : grads) {
    auto pit = params.find(path);
    if (pit == params.end()) throw InvalidArgument("optimizer: gradient for unknown parameter '" + path + "'");
    Tensor& p = pit->second;
    if (p.shape() != g.shape()) {
      throw DimensionError("optimizer: gradient shape " + shape_str(g.shape()) + " for '" + path + "' " +
                           shape_str(p.shape()));
    }
    Tensor& m = m_.try_emplace(path, Tensor(p.shape())).first->second;
    Tensor& v = v_.try_emplace(path, Tensor(p.shape())).first->second;
    const bool decay = path.ends_with(".w");
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      if (decay) p[i] -= lr * weight_decay_ * p[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Tensor target_input(const TargetSpec& target, const Tensor& video, const TeacherBundle& teacher) {
  switch (target.method) {
    case TargetMethod::kAttention:
    case TargetMethod::kDeltaAttention:
      if (!teacher.attn) throw InvalidArgument("target method '" + to_string(target) + "' needs teacher attention");
      return *teacher.attn;
    case TargetMethod::kKCenterPixel: {
      const auto& ps = teacher.patch_feats.shape();
      const std::size_t patch = video.dim(1) / ps[1];
      const Tensor pix = patchify(video, patch);
      return pix.reshaped({ps[0], ps[1], ps[2], pix.dim(1)});
    }
    default:
      return teacher.patch_feats;
  }
}

Sample make_sample(const Tensor& video, const TeacherBundle& teacher, const TargetSpec& target,
                   std::uint64_t seed) {
  validate_bundle(teacher);
  Sample s;
  s.video = video;
  s.targets.selector = compute_target(target, target_input(target, video, teacher), seed).map;
  s.targets.iv2_video = teacher.iv2_video;
  s.targets.dino_video = build_video_target_dino(teacher.class_tokens);
  s.targets.frame = build_frame_targets(teacher.class_tokens);
  s.targets.patch = build_patch_targets(teacher.patch_feats);
  return s;
}

Sample flip_sample(const Sample& s) {
  Sample f = s;
  f.video = flip_horizontal(s.video);
  if (s.targets.selector) f.targets.selector = flip_horizontal(*s.targets.selector);
  if (s.targets.patch) f.targets.patch = flip_horizontal(*s.targets.patch);
  return f;
}

ForwardPass forward(const ModelConfig& cfg, ParamBinder& bind, const Tensor& video, double sparsity) {
  SelectorOutput sel = selector_forward(cfg, bind, video);
  auto indices = topk_select(sel.map_logits.value(), sparsity);
  ExtractorOutput ext = extractor_forward(cfg, bind, video, sel, std::move(indices));
  return {std::move(sel), std::move(ext)};
}

Trainer::Trainer(ModelConfig model, TrainConfig train, ParamStore params)
    : model_(std::move(model)),
      train_(std::move(train)),
      params_(std::move(params)),
      opt_(train_.beta1, train_.beta2, train_.adam_eps, train_.weight_decay),
      rng_(train_.seed) {
  model_.validate();
  train_.validate();
}

LossBreakdown Trainer::step(std::span<const Sample> batch) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  const double sparsity = sample_sparsity(train_, rng_);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  ParamStore grads;
  LossBreakdown mean;
  for (const Sample& sample : batch) {
    const Sample* s = &sample;
    Sample flipped;
    if (train_.hflip_prob > 0.0 && u01(rng_) < train_.hflip_prob) {
      flipped = flip_sample(sample);
      s = &flipped;
    }
    Tape tape;
    ParamBinder bind(tape, params_);
    ForwardPass fp = forward(model_, bind, s->video, sparsity);
    LossVars l = total_loss(model_, fp.sel, fp.ext, s->targets);
    check_term("map", *l.map, tape, step_);
    check_term("video", l.video, tape, step_);
    check_term("frame", l.frame, tape, step_);
    check_term("patch", l.patch, tape, step_);
    tape.backward(scale(l.total, inv_b));
    accumulate(grads, tape.param_grads());

    const LossBreakdown b = l.values();
    mean.map += b.map * inv_b;
    mean.video += b.video * inv_b;
    mean.frame += b.frame * inv_b;
    mean.patch += b.patch * inv_b;
    mean.total += b.total * inv_b;
  }
  opt_.update(params_, grads, learning_rate(train_, step_));
  ++step_;
  return mean;
}

std::vector<LossBreakdown> train(Trainer& trainer, std::span<const Sample> data, const StepCallback& on_step) {
  if (data.empty()) throw InvalidArgument("train: no samples");
  const TrainConfig& cfg = trainer.train_config();
  std::mt19937_64 order_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<LossBreakdown> history;
  std::vector<Sample> batch;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    batch.clear();
    while (batch.size() < cfg.batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    history.push_back(trainer.step(batch));
    if (on_step) on_step(s, history.back());
  }
  return history;
}

Tensor extract_video_features(const ModelConfig& cfg, const ParamStore& params, std::span<const Tensor> videos,
                              double sparsity) {
  Tensor out({videos.size(), cfg.width});
  for (std::size_t i = 0; i < videos.size(); ++i) {
    Tape tape;
    ParamBinder bind(tape, params);
    ForwardPass fp = forward(cfg, bind, videos[i], sparsity);
    const Tensor& v = fp.ext.video_token.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * cfg.width));
  }
  return out;
}

Tensor head_logits(const LinearHead& head, const Tensor& features) {
  Tensor logits = matmul(features, head.w);
  const std::size_t c = head.b.numel();
  for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] += head.b[i % c];
  return logits;
}

double accuracy(const LinearHead& head, const Tensor& features, std::span<const int> labels) {
  const Tensor logits = head_logits(head, features);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw DimensionError("accuracy: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[i * c + j] > logits[i * c + best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, std::size_t epochs,
                         const ProbeOptions& opts) {
  return linear_probe(features, labels, features, labels, epochs, opts);
}

ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, const Tensor& eval_features,
                         std::span<const int> eval_labels, std::size_t epochs, const ProbeOptions& opts) {
  if (features.ndim() != 2 || features.dim(0) != labels.size()) {
    throw DimensionError("linear_probe: features " + shape_str(features.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  const std::size_t c = class_count(labels, opts.classes);
  std::vector<bool> seen(c, false);
  for (int l : labels) {
    if (static_cast<std::size_t>(l) >= c) throw InvalidArgument("linear_probe: label out of range");
    seen[static_cast<std::size_t>(l)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw InvalidArgument("linear_probe: needs at least two distinct classes");
  }
  if (n < c) throw InvalidArgument("linear_probe: fewer samples than classes");

  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[i * d + j] / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(features[i * d + j] - mean[j], 2) / static_cast<double>(n);
  for (double& s : sd) s = s > 0.0 ? std::sqrt(s) : 1.0;
  Tensor xs({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) xs[i * d + j] = (features[i * d + j] - mean[j]) / sd[j];

  Tensor w({d, c}), b({c});
  const std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t e = 0; e < epochs; ++e) {
    Tape tape;
    Var wv = tape.param("w", w);
    Var bv = tape.param("b", b);
    Var loss = softmax_cross_entropy(add_bias(matmul(tape.constant(xs), wv), bv), lab);
    tape.backward(loss);
    const Tensor& gw = *tape.grad(wv);
    const Tensor& gb = *tape.grad(bv);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] -= opts.lr * gw[i];
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] -= opts.lr * gb[i];
  }

  ProbeResult r;
  r.head.w = Tensor({d, c});
  r.head.b = b;
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < c; ++k) {
      r.head.w[j * c + k] = w[j * c + k] / sd[j];
      r.head.b[k] -= w[j * c + k] * mean[j] / sd[j];
    }
  r.train_accuracy = accuracy(r.head, features, labels);
  r.accuracy = accuracy(r.head, eval_features, eval_labels);
  return r;
}

FinetuneResult finetune_head(const ModelConfig& cfg, const ParamStore& params, const LinearHead& head,
                             std::span<const Tensor> train_videos, std::span<const int> train_labels,
                             std::span<const Tensor> eval_videos, std::span<const int> eval_labels,
                             const FinetuneConfig& ft) {
  if (train_videos.size() != train_labels.size() || eval_videos.size() != eval_labels.size()) {
    throw InvalidArgument("finetune: videos and labels differ in count");
  }
  if (train_videos.empty() || ft.batch == 0) throw InvalidArgument("finetune: empty training set or batch");
  ParamStore store = params;
  store.insert_or_assign("cls.w", head.w);
  store.insert_or_assign("cls.b", head.b);

  AdamW opt(0.9, 0.999, 1e-8, ft.weight_decay);
  std::mt19937_64 rng(ft.seed);
  const std::size_t per_epoch = (train_videos.size() + ft.batch - 1) / ft.batch;
  const std::size_t total = per_epoch * ft.epochs;
  const auto warmup = static_cast<std::size_t>(std::ceil(ft.warmup_frac * static_cast<double>(total)));
  std::vector<std::size_t> order(train_videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FinetuneResult r;
  std::size_t step = 0;
  for (std::size_t e = 0; e < ft.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += ft.batch) {
      const std::size_t end = std::min(order.size(), start + ft.batch);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      ParamStore grads;
      double loss_sum = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        ParamBinder bind(tape, store, is_selector_param);
        ForwardPass fp = forward(cfg, bind, train_videos[order[i]], ft.sparsity);
        Var logits = add_bias(matmul(fp.ext.video_token, bind("cls.w")), bind("cls.b"));
        const int label = train_labels[order[i]];
        Var ce = softmax_cross_entropy(logits, std::span<const int>(&label, 1));
        check_term("cross_entropy", ce, tape, step);
        loss_sum += ce.value().item() * inv_b;
        tape.backward(scale(ce, inv_b));
        accumulate(grads, tape.param_grads());
      }
      opt.update(store, grads, cosine_schedule(step, total, warmup, ft.lr, ft.lr_min));
      r.losses.push_back(loss_sum);
      ++step;
    }
  }

  r.head.w = store.at("cls.w");
  r.head.b = store.at("cls.b");
  store.erase("cls.w");
  store.erase("cls.b");
  r.params = std::move(store);
  if (!eval_videos.empty()) {
    r.accuracy = accuracy(r.head, extract_video_features(cfg, r.params, eval_videos, ft.sparsity), eval_labels);
  }
  return r;
}

}  // namespace lookwhen
