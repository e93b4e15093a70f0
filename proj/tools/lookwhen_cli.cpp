// Command-line front end over the lookwhen C API.
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lookwhen/lookwhen.h"

namespace {

using nlohmann::json;

constexpr std::uint64_t kSeedUnset = std::numeric_limits<std::uint64_t>::max();

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Failure {
  int code;
};

int exit_code(lw_status s) {
  switch (s) {
    case LW_OK: return kOk;
    case LW_ERR_INVALID_ARGUMENT: return kUsage;
    case LW_ERR_NUMERIC: return kNumeric;
    default: return kData;
  }
}

void check(lw_status s) {
  if (s == LW_OK) return;
  std::cerr << "lookwhen: " << lw_last_error() << "\n";
  throw Failure{exit_code(s)};
}

struct TensorDel {
  void operator()(lw_tensor* t) const { lw_tensor_free(t); }
};
struct ModelDel {
  void operator()(lw_model* m) const { lw_model_free(m); }
};
using TensorPtr = std::unique_ptr<lw_tensor, TensorDel>;
using ModelPtr = std::unique_ptr<lw_model, ModelDel>;

TensorPtr read_tensor(const std::string& path) {
  lw_tensor* t = nullptr;
  check(lw_tensor_read(path.c_str(), &t));
  return TensorPtr(t);
}

ModelPtr load_model(const std::string& path) {
  lw_model* m = nullptr;
  check(lw_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

std::string shape_of(const lw_tensor* t) {
  std::string s = "[";
  for (size_t i = 0; i < lw_tensor_ndim(t); ++i) s += (i ? "x" : "") + std::to_string(lw_tensor_dim(t, i));
  return s + "]";
}

std::optional<std::string> read_config(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) {
    std::cerr << "lookwhen: cannot open config " << path << "\n";
    throw Failure{kData};
  }
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

lw_dtype parse_dtype(const std::string& s) { return s == "f32" ? LW_FLOAT32 : LW_FLOAT64; }

json loss_json(const lw_loss& l) {
  return json{{"map", l.map}, {"video", l.video}, {"frame", l.frame}, {"patch", l.patch}, {"total", l.total}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lookwhen: selector-extractor token selection for video transformers"};
  app.require_subcommand(1);
  std::uint64_t seed = kSeedUnset;
  app.add_option("--seed", seed, "Random seed (overrides the config's seeds)");

  // targets
  auto* targets = app.add_subcommand("targets", "Compute a rank-normalized selection target map");
  std::string t_method = "top1", t_input, t_data, t_clip, t_out, t_dtype = "f64";
  targets->add_option("--method", t_method, "top1, topk:<k>, kcenter-feat, kcenter-pix, attn, dattn, random")
      ->capture_default_str();
  auto* t_in_opt = targets->add_option("--input,--in", t_input, "Input tensor file (features, attention or pixels)");
  auto* t_data_opt = targets->add_option("--data", t_data, "Dataset directory or manifest");
  t_in_opt->excludes(t_data_opt);
  targets->add_option("--clip", t_clip, "Clip id within --data (default: first clip)")->needs(t_data_opt);
  targets->add_option("--out", t_out, "Output tensor file")->required();
  targets->add_option("--dtype", t_dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();

  // select
  auto* select = app.add_subcommand("select", "Run the selector and report the kept patch indices");
  std::string s_model, s_video, s_map, s_indices;
  double s_sparsity = 0.9;
  select->add_option("--model", s_model, "Checkpoint")->required();
  select->add_option("--video", s_video, "Video tensor [T x R x R x 3]")->required();
  select->add_option("--sparsity", s_sparsity, "Fraction of patches dropped")->capture_default_str();
  select->add_option("--out-map", s_map, "Write the selector logits here");
  select->add_option("--out-indices", s_indices, "Write the kept flat indices here, one per line");

  // train
  auto* trainc = app.add_subcommand("train", "Pre-train selector and extractor by distillation");
  std::string tr_config, tr_data, tr_out, tr_init;
  std::size_t tr_log_every = 10;
  trainc->add_option("--config", tr_config, "Run config JSON");
  trainc->add_option("--data", tr_data, "Dataset directory or manifest")->required();
  trainc->add_option("--out", tr_out, "Output checkpoint")->required();
  trainc->add_option("--init", tr_init, "Continue from this checkpoint");
  trainc->add_option("--log-every", tr_log_every, "Print the loss every N steps (0: never)")->capture_default_str();

  // eval
  auto* evalc = app.add_subcommand("eval", "Linear probe or fine-tune on labelled clips");
  std::string e_model, e_data, e_config;
  bool e_probe = false, e_finetune = false;
  evalc->add_option("--model", e_model, "Checkpoint")->required();
  evalc->add_option("--data", e_data, "Labelled dataset directory or manifest")->required();
  evalc->add_option("--config", e_config, "Run config JSON (probe, finetune and eval sections)");
  auto* probe_flag = evalc->add_flag("--probe", e_probe, "Linear probe on frozen video tokens");
  auto* ft_flag = evalc->add_flag("--finetune", e_finetune, "Probe, then fine-tune the extractor from the probe head");
  probe_flag->excludes(ft_flag);

  // flops
  auto* flops = app.add_subcommand("flops", "Analytical FLOPs per forward pass");
  std::string f_preset = "vitb-224-16", f_model, f_conv = "mac";
  double f_sparsity = 0.9;
  bool f_json = false;
  auto* f_preset_opt = flops->add_option("--preset", f_preset, "vitb-224-16 or desk")->capture_default_str();
  flops->add_option("--model", f_model, "Use a checkpoint's config instead of a preset")->excludes(f_preset_opt);
  flops->add_option("--sparsity", f_sparsity, "Fraction of patches dropped")->capture_default_str();
  flops->add_option("--convention", f_conv, "mac: one FLOP per multiply-accumulate; 2mac: two")
      ->check(CLI::IsMember({"mac", "2mac"}))
      ->capture_default_str();
  flops->add_flag("--json", f_json, "Print the report as JSON");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic moving-blob dataset");
  std::size_t sy_clips = 8;
  std::string sy_out = "synth";
  synth->add_option("--clips", sy_clips, "Number of clips")->capture_default_str();
  synth->add_option("--out", sy_out, "Output directory")->capture_default_str();

  // dump-map
  auto* dump = app.add_subcommand("dump-map", "Write a selector map as one PGM image per frame");
  std::string d_map, d_model, d_video, d_out;
  bool d_logits = false;
  std::size_t d_scale = 8;
  auto* d_map_opt = dump->add_option("--map", d_map, "Map tensor [T x N x N]");
  auto* d_model_opt = dump->add_option("--model", d_model, "Checkpoint whose selector produces the map");
  dump->add_option("--video", d_video, "Video for --model")->needs(d_model_opt);
  d_map_opt->excludes(d_model_opt);
  dump->add_flag("--logits", d_logits, "Apply a sigmoid to --map values");
  dump->add_option("--out", d_out, "Output directory")->required();
  dump->add_option("--scale", d_scale, "Pixels per map cell")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*targets) {
      if (t_input.empty() == t_data.empty()) {
        std::cerr << "lookwhen targets: give exactly one of --input or --data\n";
        return kUsage;
      }
      const std::uint64_t s = seed == kSeedUnset ? 0 : seed;
      lw_tensor* raw = nullptr;
      if (!t_input.empty()) {
        TensorPtr in = read_tensor(t_input);
        check(lw_targets(in.get(), t_method.c_str(), s, &raw));
      } else {
        check(lw_targets_for_clip(t_data.c_str(), t_clip.empty() ? nullptr : t_clip.c_str(), t_method.c_str(), s,
                                  &raw));
      }
      TensorPtr out(raw);
      check(lw_tensor_write(out.get(), t_out.c_str(), parse_dtype(t_dtype)));
      std::cout << "wrote " << t_method << " target " << shape_of(out.get()) << " to " << t_out << "\n";
    } else if (*select) {
      ModelPtr m = load_model(s_model);
      TensorPtr video = read_tensor(s_video);
      std::size_t count = 0;
      check(lw_model_select(m.get(), video.get(), s_sparsity, nullptr, nullptr, 0, &count));
      std::vector<std::size_t> idx(count);
      lw_tensor* raw = nullptr;
      check(lw_model_select(m.get(), video.get(), s_sparsity, &raw, idx.data(), idx.size(), &count));
      TensorPtr map(raw);
      if (!s_map.empty()) check(lw_tensor_write(map.get(), s_map.c_str(), LW_FLOAT64));
      if (!s_indices.empty()) {
        std::ofstream f(s_indices);
        for (std::size_t i : idx) f << i << "\n";
        if (!f) {
          std::cerr << "lookwhen: cannot write " << s_indices << "\n";
          throw Failure{kData};
        }
      }
      std::cout << json{{"sparsity", s_sparsity}, {"kept", count}, {"total", lw_tensor_numel(map.get())},
                        {"indices", idx}}.dump()
                << "\n";
    } else if (*trainc) {
      const auto cfg = read_config(tr_config);
      ModelPtr init;
      if (!tr_init.empty()) init = load_model(tr_init);
      struct Ctx {
        std::size_t every;
      } ctx{tr_log_every};
      auto cb = [](void* user, size_t step, const lw_loss* l) -> int {
        const auto* c = static_cast<const Ctx*>(user);
        if (c->every && (step + 1) % c->every == 0) {
          std::cout << "step " << step + 1 << " " << loss_json(*l).dump() << "\n" << std::flush;
        }
        return 0;
      };
      lw_model* raw = nullptr;
      lw_loss last{};
      check(lw_train(cfg ? cfg->c_str() : nullptr, tr_data.c_str(), init.get(), seed, cb, &ctx, &raw, &last));
      ModelPtr trained(raw);
      check(lw_model_save(trained.get(), tr_out.c_str()));
      std::cout << "trained " << lw_model_steps(trained.get()) << " steps, final " << loss_json(last).dump()
                << ", saved " << tr_out << "\n";
    } else if (*evalc) {
      if (!e_probe && !e_finetune) {
        std::cerr << "lookwhen eval: give --probe or --finetune\n";
        return kUsage;
      }
      const auto cfg = read_config(e_config);
      ModelPtr m = load_model(e_model);
      lw_eval_result r{};
      check(lw_eval(m.get(), e_data.c_str(), cfg ? cfg->c_str() : nullptr, e_finetune ? LW_EVAL_FINETUNE : LW_EVAL_PROBE,
                    seed, &r));
      json j{{"probe_accuracy", r.probe_accuracy},
             {"probe_train_accuracy", r.probe_train_accuracy},
             {"train_clips", r.train_clips},
             {"eval_clips", r.eval_clips}};
      if (e_finetune) {
        j["finetune_accuracy"] = r.finetune_accuracy;
        j["selector_unchanged"] = r.selector_unchanged != 0;
      }
      std::cout << j.dump() << "\n";
    } else if (*flops) {
      lw_cost_report r{};
      const lw_flop_convention conv = f_conv == "2mac" ? LW_FLOPS_TWO_PER_MAC : LW_FLOPS_MAC;
      if (!f_model.empty()) {
        ModelPtr m = load_model(f_model);
        check(lw_model_flops(m.get(), f_sparsity, conv, &r));
      } else {
        check(lw_flops(f_preset.c_str(), f_sparsity, conv, &r));
      }
      if (f_json) {
        json j{{"selector_flops", r.selector_flops},
               {"extractor_flops", r.extractor_flops},
               {"heads_flops", r.heads_flops},
               {"total_flops", r.total_flops},
               {"dense_flops", r.dense_flops},
               {"selector_tokens", r.selector_tokens},
               {"extractor_tokens", r.extractor_tokens},
               {"kept_patches", r.kept_patches},
               {"total_patches", r.total_patches},
               {"sparsity", r.sparsity},
               {"convention", f_conv},
               {"config",
                {{"frames", r.frames}, {"resolution", r.resolution}, {"patch", r.patch}, {"width", r.width},
                 {"depth_sel", r.depth_sel}, {"depth_ext", r.depth_ext}, {"registers", r.registers}}}};
        if (f_model.empty()) j["preset"] = f_preset;
        std::cout << j.dump(2) << "\n";
      } else {
        auto g = [](double f) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%10.3f", f / 1e9);
          return std::string(buf);
        };
        std::cout << "sparsity " << r.sparsity << ": keep " << r.kept_patches << " of " << r.total_patches
                  << " patches\n"
                  << "component     tokens     GFLOPs\n"
                  << "selector    " << std::setw(8) << r.selector_tokens << " " << g(r.selector_flops) << "\n"
                  << "extractor   " << std::setw(8) << r.extractor_tokens << " " << g(r.extractor_flops) << "\n"
                  << "heads       " << std::setw(8) << "" << " " << g(r.heads_flops) << "\n"
                  << "total       " << std::setw(8) << "" << " " << g(r.total_flops) << "\n"
                  << "dense ViT   " << std::setw(8) << r.total_patches << " " << g(r.dense_flops) << "\n";
      }
    } else if (*synth) {
      check(lw_synth(sy_out.c_str(), sy_clips, seed == kSeedUnset ? 0 : seed));
      std::cout << "wrote " << sy_clips << " clips to " << sy_out << "\n";
    } else if (*dump) {
      TensorPtr map;
      bool logits = d_logits;
      if (!d_map.empty()) {
        map = read_tensor(d_map);
      } else if (!d_model.empty() && !d_video.empty()) {
        ModelPtr m = load_model(d_model);
        TensorPtr video = read_tensor(d_video);
        lw_tensor* raw = nullptr;
        check(lw_model_select(m.get(), video.get(), 0.0, &raw, nullptr, 0, nullptr));
        map.reset(raw);
        logits = true;
      } else {
        std::cerr << "lookwhen dump-map: give --map, or --model with --video\n";
        return kUsage;
      }
      std::size_t frames = 0;
      check(lw_dump_map(map.get(), logits ? 1 : 0, d_out.c_str(), d_scale, &frames));
      std::cout << "wrote " << frames << " PGM frames to " << d_out << "\n";
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kOk;
}
