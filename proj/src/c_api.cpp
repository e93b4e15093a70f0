#include "lookwhen/lookwhen.h"

#include <algorithm>
#include <cstring>
#include <new>
#include <string>

#include "error.hpp"
#include "flops.hpp"
#include "io.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "selection_targets.hpp"

struct lw_tensor {
  lookwhen::Tensor t;
};

struct lw_model {
  lookwhen::ModelConfig cfg;
  lookwhen::ParamStore params;
  std::size_t steps = 0;
};

namespace {

using namespace lookwhen;

thread_local std::string g_last_error;

lw_status fail(lw_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

template <typename F>
lw_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return LW_OK;
  } catch (const NumericError& e) {
    return fail(LW_ERR_NUMERIC, e.what());
  } catch (const DataError& e) {
    return fail(LW_ERR_DATA, e.what());
  } catch (const InvalidArgument& e) {
    return fail(LW_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(LW_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LW_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LW_ERR_INTERNAL, "unknown exception");
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) throw InvalidArgument(std::string(name) + " must not be null");
}

RunConfig run_config(const char* json) { return json ? parse_run_config(json) : RunConfig{}; }

struct StopTraining {};

void fill_report(const CostReport& r, double dense, lw_cost_report* out) {
  *out = lw_cost_report{};
  out->selector_flops = r.selector_flops;
  out->extractor_flops = r.extractor_flops;
  out->heads_flops = r.heads_flops;
  out->total_flops = r.total_flops;
  out->dense_flops = dense;
  out->selector_tokens = r.selector_tokens;
  out->extractor_tokens = r.extractor_tokens;
  out->kept_patches = r.kept_patches;
  out->total_patches = r.config.tokens();
  out->sparsity = r.sparsity;
  out->frames = r.config.frames;
  out->resolution = r.config.resolution;
  out->patch = r.config.patch;
  out->width = r.config.width;
  out->depth_sel = r.config.depth_sel;
  out->depth_ext = r.config.depth_ext;
  out->registers = r.config.registers;
}

FlopConvention convention(lw_flop_convention c) {
  if (c == LW_FLOPS_MAC) return FlopConvention::kMacs;
  if (c == LW_FLOPS_TWO_PER_MAC) return FlopConvention::kTwoPerMac;
  throw InvalidArgument("unknown FLOP convention");
}

void check_video(const ModelConfig& cfg, const Tensor& video) {
  const Shape want{cfg.frames, cfg.resolution, cfg.resolution, 3};
  if (video.shape() != want) {
    throw DimensionError("video has shape " + shape_str(video.shape()) + ", model expects " + shape_str(want));
  }
}

}  // namespace

extern "C" {

const char* lw_last_error(void) { return g_last_error.c_str(); }
const char* lw_version(void) { return "0.1.0"; }

lw_status lw_tensor_create(const size_t* shape, size_t ndim, const double* data, lw_tensor** out) {
  return guarded([&] {
    require(out, "out");
    if (ndim > 0) require(shape, "shape");
    Shape s(shape, shape + ndim);
    Tensor t(s);
    if (data) std::copy(data, data + t.numel(), t.data().begin());
    *out = new lw_tensor{std::move(t)};
  });
}

void lw_tensor_free(lw_tensor* t) { delete t; }
size_t lw_tensor_ndim(const lw_tensor* t) { return t ? t->t.ndim() : 0; }
size_t lw_tensor_dim(const lw_tensor* t, size_t axis) { return t && axis < t->t.ndim() ? t->t.shape()[axis] : 0; }
size_t lw_tensor_numel(const lw_tensor* t) { return t ? t->t.numel() : 0; }
const double* lw_tensor_data(const lw_tensor* t) { return t ? t->t.data().data() : nullptr; }

lw_status lw_tensor_read(const char* path, lw_tensor** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new lw_tensor{read_tensor(path)};
  });
}

lw_status lw_tensor_write(const lw_tensor* t, const char* path, lw_dtype dtype) {
  return guarded([&] {
    require(t, "tensor");
    require(path, "path");
    if (dtype != LW_FLOAT32 && dtype != LW_FLOAT64) throw InvalidArgument("unknown dtype");
    write_tensor(path, t->t, dtype == LW_FLOAT32 ? DType::kFloat32 : DType::kFloat64);
  });
}

lw_status lw_targets(const lw_tensor* input, const char* method, uint64_t seed, lw_tensor** out) {
  return guarded([&] {
    require(input, "input");
    require(method, "method");
    require(out, "out");
    *out = new lw_tensor{compute_target(parse_target_spec(method), input->t, seed).map};
  });
}

lw_status lw_targets_for_clip(const char* data_path, const char* clip_id, const char* method, uint64_t seed,
                              lw_tensor** out) {
  return guarded([&] {
    require(data_path, "data_path");
    require(method, "method");
    require(out, "out");
    const TargetSpec spec = parse_target_spec(method);
    const auto entries = read_manifest(data_path);
    auto it = entries.begin();
    if (clip_id) {
      it = std::find_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.clip_id == clip_id; });
      if (it == entries.end()) throw DataError(std::string("no clip '") + clip_id + "' in the manifest");
    }
    const Clip clip = load_clip(*it);
    *out = new lw_tensor{compute_target(spec, target_input(spec, clip.video, clip.teacher), seed).map};
  });
}

lw_status lw_model_create(const char* config_json, uint64_t seed, lw_model** out) {
  return guarded([&] {
    require(out, "out");
    const RunConfig rc = run_config(config_json);
    *out = new lw_model{rc.model, init_params(rc.model, seed), 0};
  });
}

lw_status lw_model_load(const char* path, lw_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    Checkpoint c = read_checkpoint(path);
    *out = new lw_model{c.model, std::move(c.params), c.step};
  });
}

lw_status lw_model_save(const lw_model* m, const char* path) {
  return guarded([&] {
    require(m, "model");
    require(path, "path");
    write_checkpoint(path, Checkpoint{m->cfg, m->steps, m->params});
  });
}

void lw_model_free(lw_model* m) { delete m; }

size_t lw_model_param_count(const lw_model* m) {
  if (!m) return 0;
  std::size_t n = 0;
  for (const auto& [_, t] : m->params) n += t.numel();
  return n;
}

size_t lw_model_steps(const lw_model* m) { return m ? m->steps : 0; }

lw_status lw_model_select(const lw_model* m, const lw_tensor* video, double sparsity, lw_tensor** map_logits,
                          size_t* indices, size_t capacity, size_t* count) {
  return guarded([&] {
    require(m, "model");
    require(video, "video");
    check_video(m->cfg, video->t);
    Tape tape;
    ParamBinder bind(tape, m->params);
    const SelectorOutput sel = selector_forward(m->cfg, bind, video->t);
    const Tensor& logits = sel.map_logits.value();
    const std::vector<std::size_t> keep = topk_select(logits, sparsity);
    if (indices) std::copy_n(keep.begin(), std::min(capacity, keep.size()), indices);
    if (count) *count = keep.size();
    if (map_logits) *map_logits = new lw_tensor{logits};
  });
}

lw_status lw_train(const char* config_json, const char* data_path, const lw_model* init, uint64_t seed,
                   lw_step_callback cb, void* user, lw_model** out, lw_loss* last) {
  return guarded([&] {
    require(data_path, "data_path");
    require(out, "out");
    RunConfig rc = run_config(config_json);
    if (seed != UINT64_MAX) rc.train.seed = seed;
    const std::vector<Clip> clips = load_dataset(data_path);

    ModelConfig cfg;
    ParamStore params;
    std::size_t prior_steps = 0;
    if (init) {
      cfg = init->cfg;
      if (fit_model_to_data(cfg, clips.front()) != cfg) {
        throw DataError("dataset shapes do not match the initial model");
      }
      params = init->params;
      prior_steps = init->steps;
    } else {
      cfg = fit_model_to_data(rc.model, clips.front(), rc.explicit_model_keys);
      params = init_params(cfg, rc.train.seed);
    }

    std::vector<Sample> samples;
    samples.reserve(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
      samples.push_back(make_sample(clips[i].video, clips[i].teacher, rc.train.target, rc.train.seed + i));
    }

    Trainer trainer(cfg, rc.train, std::move(params));
    LossBreakdown final_loss{};
    try {
      train(trainer, samples, [&](std::size_t step, const LossBreakdown& l) {
        final_loss = l;
        if (cb) {
          const lw_loss c{l.map, l.video, l.frame, l.patch, l.total};
          if (cb(user, step, &c) != 0) throw StopTraining{};
        }
      });
    } catch (const StopTraining&) {
    }
    if (last) *last = lw_loss{final_loss.map, final_loss.video, final_loss.frame, final_loss.patch, final_loss.total};
    *out = new lw_model{cfg, trainer.params(), prior_steps + trainer.steps_done()};
  });
}

lw_status lw_eval(const lw_model* m, const char* data_path, const char* config_json, lw_eval_mode mode,
                  uint64_t seed, lw_eval_result* out) {
  return guarded([&] {
    require(m, "model");
    require(data_path, "data_path");
    require(out, "out");
    if (mode != LW_EVAL_PROBE && mode != LW_EVAL_FINETUNE) throw InvalidArgument("unknown eval mode");
    RunConfig rc = run_config(config_json);
    if (seed != UINT64_MAX) rc.finetune.seed = seed;
    const std::vector<Clip> clips = load_dataset(data_path);
    check_video(m->cfg, clips.front().video);

    std::vector<Tensor> videos;
    std::vector<int> labels;
    for (const Clip& c : clips) {
      if (!c.label) throw DataError("clip '" + c.id + "' has no label");
      videos.push_back(c.video);
      labels.push_back(*c.label);
    }
    const auto n_train = static_cast<std::size_t>(rc.train_fraction * static_cast<double>(clips.size()));
    if (n_train == 0 || n_train == clips.size()) {
      throw InvalidArgument("eval needs clips on both sides of the train/eval split");
    }
    const std::span<const Tensor> tr_v(videos.data(), n_train), ev_v(videos.data() + n_train, videos.size() - n_train);
    const std::span<const int> tr_l(labels.data(), n_train), ev_l(labels.data() + n_train, labels.size() - n_train);

    const Tensor tr_f = extract_video_features(m->cfg, m->params, tr_v, rc.eval_sparsity);
    const Tensor ev_f = extract_video_features(m->cfg, m->params, ev_v, rc.eval_sparsity);
    const ProbeResult lp = linear_probe(tr_f, tr_l, ev_f, ev_l, rc.probe_epochs, rc.probe);

    *out = lw_eval_result{};
    out->probe_accuracy = lp.accuracy;
    out->probe_train_accuracy = lp.train_accuracy;
    out->train_clips = n_train;
    out->eval_clips = clips.size() - n_train;
    out->selector_unchanged = 1;
    if (mode == LW_EVAL_FINETUNE) {
      const FinetuneResult ft = finetune_head(m->cfg, m->params, lp.head, tr_v, tr_l, ev_v, ev_l, rc.finetune);
      out->finetune_accuracy = ft.accuracy;
      for (const auto& [path, t] : m->params) {
        if (path.rfind("sel.", 0) == 0 && !(ft.params.at(path) == t)) out->selector_unchanged = 0;
      }
    }
  });
}

lw_status lw_flops(const char* preset, double sparsity, lw_flop_convention conv, lw_cost_report* out) {
  return guarded([&] {
    require(preset, "preset");
    require(out, "out");
    const ModelConfig cfg = flops_preset(preset);
    const FlopConvention c = convention(conv);
    fill_report(lookwhen_flops(cfg, sparsity, c), dense_vit_flops(cfg, c), out);
  });
}

lw_status lw_model_flops(const lw_model* m, double sparsity, lw_flop_convention conv, lw_cost_report* out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    const FlopConvention c = convention(conv);
    fill_report(lookwhen_flops(m->cfg, sparsity, c), dense_vit_flops(m->cfg, c), out);
  });
}

lw_status lw_synth(const char* out_dir, size_t clips, uint64_t seed) {
  return guarded([&] {
    require(out_dir, "out_dir");
    write_synth_dataset(out_dir, clips, seed);
  });
}

lw_status lw_dump_map(const lw_tensor* map, int logits, const char* out_dir, size_t scale, size_t* frames_written) {
  return guarded([&] {
    require(map, "map");
    require(out_dir, "out_dir");
    const auto files = dump_map(map->t, out_dir, logits != 0, scale);
    if (frames_written) *frames_written = files.size();
  });
}

}  // extern "C"
