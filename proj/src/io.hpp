#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "extraction_targets.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "synth.hpp"
#include "tensor.hpp"

namespace lookwhen {

// Tensor file layout, all integers little-endian:
//   "LWTN" | u16 version (1) | u8 dtype (0 = f32, 1 = f64) | u8 ndim |
//   ndim x u64 dims | row-major payload
// A zero-dim file holds one scalar.
enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

inline constexpr std::uint16_t kTensorFormatVersion = 1;

class FormatError : public DataError {
 public:
  enum class Kind { kIo, kTruncated, kBadMagic, kBadVersion, kBadDType, kBadShape, kTrailingBytes };

  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::kFloat64);
// Decodes one record from the front of `bytes`. When `consumed` is null the
// record must span all of `bytes`.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::kFloat64);
Tensor read_tensor(const std::filesystem::path& path);
// Reads and checks only the header.
Shape read_tensor_shape(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// JSON settings for a run. Every section and key is optional; unknown keys
// are rejected so typos surface.
//   {"model": {...ModelConfig}, "train": {...TrainConfig, "target": "top1"},
//    "finetune": {...}, "probe": {"epochs", "lr"}, "eval": {"sparsity", "train_fraction"}}
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  ProbeOptions probe;
  std::size_t probe_epochs = 300;
  double eval_sparsity = 0.7;
  double train_fraction = 0.75;
  // Model keys that were spelled out, as opposed to defaulted.
  std::set<std::string> explicit_model_keys;
};

RunConfig parse_run_config(std::string_view json);
RunConfig read_run_config(const std::filesystem::path& path);
std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view json);

// Checkpoint layout: "LWTA" | u16 version (1) | u64 header length | JSON
// header {"format", "model", "step", "tensors": [names]} | one f64 tensor
// record per name, in header order.
struct Checkpoint {
  ModelConfig model;
  std::size_t step = 0;
  ParamStore params;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// One manifest line. Paths are stored relative to the manifest's directory
// and resolved on read.
struct ManifestEntry {
  std::string clip_id;
  std::filesystem::path video;
  std::filesystem::path patch_feats;
  std::filesystem::path class_tokens;
  std::filesystem::path iv2_video;
  std::optional<std::filesystem::path> attn;
  std::size_t frames = 0;  // T_E
  std::size_t grid = 0;    // N_E
  std::size_t d_img = 0;
  std::size_t d_vid = 0;
  std::optional<int> label;
};

// Accepts a manifest file or a directory holding manifest.jsonl. Every
// referenced file must exist and its header must agree with the entry.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

struct Clip {
  std::string id;
  Tensor video;
  TeacherBundle teacher;
  std::optional<int> label;
};

Clip load_clip(const ManifestEntry& entry);
std::vector<Clip> load_dataset(const std::filesystem::path& path);

// Overwrites the data-dependent fields of `base` (frames, resolution, patch,
// d_img, d_vid) from a clip. Throws DataError if one of `explicit_keys`
// disagrees with the data.
ModelConfig fit_model_to_data(const ModelConfig& base, const Clip& clip,
                              const std::set<std::string>& explicit_keys = {});

// Writes `clips` synthetic clips (balanced motion labels, label = i mod 4)
// under dir/clip_NNNN/ plus dir/manifest.jsonl. Same seed, same bytes.
void write_synth_dataset(const std::filesystem::path& dir, std::size_t clips, std::uint64_t seed,
                         const SynthSpec& spec = {});
std::uint64_t synth_clip_seed(std::uint64_t seed, std::size_t index);

// Plain-text (P2) grayscale image of a 2-D tensor. Values are mapped linearly
// from [lo, hi] to [0, 255] and clamped; each cell becomes a scale x scale
// block.
std::string pgm_ascii(const Tensor& image, double lo, double hi, std::size_t scale = 1);

// One PGM per frame of a [T x N x N] map, named frame_000.pgm, ... . Logits
// pass through a sigmoid first. Returns the written paths.
std::vector<std::filesystem::path> dump_map(const Tensor& map, const std::filesystem::path& dir, bool logits,
                                            std::size_t scale = 1);

}  // namespace lookwhen
