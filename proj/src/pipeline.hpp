#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "extraction_targets.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "selection_targets.hpp"
#include "tape.hpp"

namespace lookwhen {

struct TrainConfig {
  double lr_max = 1e-4;
  double lr_min = 0.0;
  std::size_t batch = 1;
  std::size_t steps = 100;
  double sparsity_lo = 0.70;
  double sparsity_hi = 0.95;
  std::uint64_t seed = 0;
  double warmup_frac = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  // Probability of mirroring a sample (video and spatial targets) each step.
  double hflip_prob = 0.0;
  TargetSpec target;

  void validate() const;
};

// One uniform draw from [sparsity_lo, sparsity_hi].
double sample_sparsity(const TrainConfig& cfg, std::mt19937_64& rng);

// Linear warmup over ceil(warmup_frac * steps) steps, then cosine decay to
// lr_min at the last step.
double learning_rate(const TrainConfig& cfg, std::size_t step);

// Adaptive moments with decoupled weight decay. Weight decay applies to
// matrices (paths ending in ".w") only.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  // Updates every parameter that has an entry in `grads`.
  void update(ParamStore& params, const ParamStore& grads, double lr);
  std::size_t steps() const { return steps_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t steps_ = 0;
  ParamStore m_, v_;
};

// One pre-training example: the video plus its precomputed teacher targets.
struct Sample {
  Tensor video;
  ClipTargets targets;
};

// The tensor a target method reads: teacher attention for attn/dattn, raw
// patch pixels for kcenter-pix, teacher patch features otherwise.
Tensor target_input(const TargetSpec& target, const Tensor& video, const TeacherBundle& teacher);

Sample make_sample(const Tensor& video, const TeacherBundle& teacher, const TargetSpec& target,
                   std::uint64_t seed = 0);

// Mirrors the video and the spatial targets (selector map, patch features).
Sample flip_sample(const Sample& s);

struct ForwardPass {
  SelectorOutput sel;
  ExtractorOutput ext;
};

// Selector, top-K at `sparsity`, extractor.
ForwardPass forward(const ModelConfig& cfg, ParamBinder& bind, const Tensor& video, double sparsity);

class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, ParamStore params);

  // One optimizer step on a batch: a single sparsity draw, the mean of the
  // per-sample total losses, backward with detached top-K indices, AdamW.
  // Throws NumericError naming the step and the first non-finite term.
  LossBreakdown step(std::span<const Sample> batch);

  const ParamStore& params() const { return params_; }
  std::size_t steps_done() const { return step_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }

 private:
  ModelConfig model_;
  TrainConfig train_;
  ParamStore params_;
  AdamW opt_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0;
};

using StepCallback = std::function<void(std::size_t step, const LossBreakdown&)>;

// Runs cfg.steps steps, drawing batches from a per-epoch seeded shuffle of
// `data`. Returns the per-step losses.
std::vector<LossBreakdown> train(Trainer& trainer, std::span<const Sample> data,
                                 const StepCallback& on_step = nullptr);

// Extractor video tokens (final-norm latent row 0) for each video: [n x D].
Tensor extract_video_features(const ModelConfig& cfg, const ParamStore& params,
                              std::span<const Tensor> videos, double sparsity);

// logits = x * w + b on raw features.
struct LinearHead {
  Tensor w;  // [D x C]
  Tensor b;  // [C]
};

Tensor head_logits(const LinearHead& head, const Tensor& features);
double accuracy(const LinearHead& head, const Tensor& features, std::span<const int> labels);

struct ProbeOptions {
  double lr = 0.5;
  std::size_t classes = 0;  // 0 = max label + 1
};

struct ProbeResult {
  double accuracy = 0.0;  // on the eval set when given, else the training set
  double train_accuracy = 0.0;
  LinearHead head;
};

// Multinomial logistic regression with full-batch gradient descent on
// standardized features; the returned head is folded back onto raw features.
ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, std::size_t epochs,
                         const ProbeOptions& opts = {});
ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, const Tensor& eval_features,
                         std::span<const int> eval_labels, std::size_t epochs, const ProbeOptions& opts = {});

struct FinetuneConfig {
  std::size_t epochs = 10;
  std::size_t batch = 8;
  double lr = 3e-4;
  double lr_min = 5e-6;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  double sparsity = 0.7;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  double accuracy = 0.0;       // on the eval clips
  std::vector<double> losses;  // per optimizer step
  ParamStore params;
  LinearHead head;
};

// Cross-entropy on the extractor video token through `head`, updating the
// extractor and the head. Selector parameters are bound as constants.
FinetuneResult finetune_head(const ModelConfig& cfg, const ParamStore& params, const LinearHead& head,
                             std::span<const Tensor> train_videos, std::span<const int> train_labels,
                             std::span<const Tensor> eval_videos, std::span<const int> eval_labels,
                             const FinetuneConfig& ft);

}  // namespace lookwhen
