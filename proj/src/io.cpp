#include "io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

namespace lookwhen {

namespace fs = std::filesystem;
using nlohmann::json;
using Kind = FormatError::Kind;

namespace {

constexpr std::uint8_t kTensorMagic[4] = {'L', 'W', 'T', 'N'};
constexpr std::uint8_t kArchiveMagic[4] = {'L', 'W', 'T', 'A'};
constexpr std::uint16_t kArchiveVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::size_t elem_size(DType d) { return d == DType::kFloat32 ? 4 : 8; }

struct Header {
  DType dtype;
  Shape shape;
  std::size_t numel;
  std::size_t header_bytes;
};

Header decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError(Kind::kTruncated, "tensor record truncated: header needs 8 bytes");
  if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw FormatError(Kind::kBadMagic, "not a tensor file: bad magic");
  }
  const auto version = static_cast<std::uint16_t>(get_le(bytes.data() + 4, 2));
  if (version != kTensorFormatVersion) {
    throw FormatError(Kind::kBadVersion, "unsupported tensor format version " + std::to_string(version));
  }
  const std::uint8_t dtype = bytes[6];
  if (dtype > 1) throw FormatError(Kind::kBadDType, "unknown dtype code " + std::to_string(dtype));
  const std::size_t ndim = bytes[7];
  Header h{static_cast<DType>(dtype), {}, 1, 8 + 8 * ndim};
  if (bytes.size() < h.header_bytes) {
    throw FormatError(Kind::kTruncated, "tensor record truncated inside the dims list");
  }
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = get_le(bytes.data() + 8 + 8 * i, 8);
    if (d == 0) throw FormatError(Kind::kBadShape, "dim " + std::to_string(i) + " is zero");
    if (d > std::numeric_limits<std::size_t>::max() / elem_size(h.dtype) / h.numel) {
      throw FormatError(Kind::kBadShape, "tensor shape overflows the addressable size");
    }
    h.numel *= static_cast<std::size_t>(d);
    h.shape.push_back(static_cast<std::size_t>(d));
  }
  return h;
}

[[noreturn]] void bad_config(const std::string& what) { throw InvalidArgument("config: " + what); }

template <typename T>
void read_key(const json& obj, const char* key, T& out, const std::string& section) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_unsigned()) bad_config(section + "." + key + " must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) bad_config(section + "." + key + " must be a boolean");
    } else {
      if (!it->is_number()) bad_config(section + "." + key + " must be a number");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    bad_config(section + "." + key + ": " + e.what());
  }
}

void reject_unknown(const json& obj, const std::string& section, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) bad_config("section '" + section + "' must be an object");
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; })) {
      bad_config("unknown key '" + section + "." + k + "'");
    }
  }
}

constexpr auto kModelKeys = {"frames", "resolution", "patch", "width", "depth_sel", "depth_ext", "heads",
                             "registers", "d_img", "d_vid", "mlp_ratio", "time_embed"};

ModelConfig model_from_json(const json& m, std::set<std::string>* explicit_keys) {
  reject_unknown(m, "model", kModelKeys);
  ModelConfig c;
  read_key(m, "frames", c.frames, "model");
  read_key(m, "resolution", c.resolution, "model");
  read_key(m, "patch", c.patch, "model");
  read_key(m, "width", c.width, "model");
  read_key(m, "depth_sel", c.depth_sel, "model");
  read_key(m, "depth_ext", c.depth_ext, "model");
  read_key(m, "heads", c.heads, "model");
  read_key(m, "registers", c.registers, "model");
  read_key(m, "d_img", c.d_img, "model");
  read_key(m, "d_vid", c.d_vid, "model");
  read_key(m, "mlp_ratio", c.mlp_ratio, "model");
  read_key(m, "time_embed", c.time_embed, "model");
  if (explicit_keys) {
    for (const auto& [k, _] : m.items()) explicit_keys->insert(k);
  }
  return c;
}

json model_to_json(const ModelConfig& c) {
  return json{{"frames", c.frames},       {"resolution", c.resolution}, {"patch", c.patch},
              {"width", c.width},         {"depth_sel", c.depth_sel},   {"depth_ext", c.depth_ext},
              {"heads", c.heads},         {"registers", c.registers},   {"d_img", c.d_img},
              {"d_vid", c.d_vid},         {"mlp_ratio", c.mlp_ratio},   {"time_embed", c.time_embed}};
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw InvalidArgument(what + " is not valid JSON: " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  if (t.ndim() > 255) throw DimensionError("tensor has more than 255 dims");
  std::vector<std::uint8_t> out(kTensorMagic, kTensorMagic + 4);
  out.reserve(8 + 8 * t.ndim() + elem_size(dtype) * t.numel());
  put_u16(out, kTensorFormatVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.data()) {
    if (dtype == DType::kFloat32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  const Header h = decode_header(bytes);
  const std::size_t es = elem_size(h.dtype);
  const std::size_t avail = bytes.size() - h.header_bytes;
  if (avail / es < h.numel) {
    throw FormatError(Kind::kTruncated, "tensor payload truncated: shape " + shape_str(h.shape) + " needs " +
                                            std::to_string(h.numel * es) + " bytes, " +
                                            std::to_string(avail) + " present");
  }
  const std::size_t total = h.header_bytes + h.numel * es;
  if (consumed) {
    *consumed = total;
  } else if (bytes.size() != total) {
    throw FormatError(Kind::kTrailingBytes,
                      std::to_string(bytes.size() - total) + " trailing bytes after the tensor payload");
  }
  std::vector<double> data(h.numel);
  const std::uint8_t* p = bytes.data() + h.header_bytes;
  for (std::size_t i = 0; i < h.numel; ++i, p += es) {
    if (h.dtype == DType::kFloat32) {
      data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4)));
    } else {
      data[i] = std::bit_cast<double>(get_le(p, 8));
    }
  }
  return Tensor(h.shape, std::move(data));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(Kind::kIo, "read failed: " + path.string());
  return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  // Write a sibling temp file, then rename over the target, so readers never
  // see a half-written file.
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(Kind::kIo, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(Kind::kIo, "write failed: " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw FormatError(Kind::kIo, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_tensor(const fs::path& path, const Tensor& t, DType dtype) { write_file(path, encode_tensor(t, dtype)); }

Tensor read_tensor(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

Shape read_tensor_shape(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> head(8 + 8 * 255);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  in.clear();
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  try {
    const Header h = decode_header(head);
    const std::size_t expect = h.header_bytes + h.numel * elem_size(h.dtype);
    if (file_size < expect) throw FormatError(Kind::kTruncated, "tensor payload truncated");
    if (file_size > expect) throw FormatError(Kind::kTrailingBytes, "trailing bytes after the tensor payload");
    return h.shape;
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

RunConfig parse_run_config(std::string_view text) {
  const json root = parse_json(text, "config");
  reject_unknown(root, "config", {"model", "train", "finetune", "probe", "eval"});
  RunConfig rc;
  if (root.contains("model")) rc.model = model_from_json(root["model"], &rc.explicit_model_keys);

  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown(t, "train", {"lr_max", "lr_min", "batch", "steps", "sparsity_lo", "sparsity_hi", "seed",
                                "warmup_frac", "beta1", "beta2", "adam_eps", "weight_decay", "hflip_prob", "target"});
    TrainConfig& c = rc.train;
    read_key(t, "lr_max", c.lr_max, "train");
    read_key(t, "lr_min", c.lr_min, "train");
    read_key(t, "batch", c.batch, "train");
    read_key(t, "steps", c.steps, "train");
    read_key(t, "sparsity_lo", c.sparsity_lo, "train");
    read_key(t, "sparsity_hi", c.sparsity_hi, "train");
    read_key(t, "seed", c.seed, "train");
    read_key(t, "warmup_frac", c.warmup_frac, "train");
    read_key(t, "beta1", c.beta1, "train");
    read_key(t, "beta2", c.beta2, "train");
    read_key(t, "adam_eps", c.adam_eps, "train");
    read_key(t, "weight_decay", c.weight_decay, "train");
    read_key(t, "hflip_prob", c.hflip_prob, "train");
    if (auto it = t.find("target"); it != t.end()) {
      if (!it->is_string()) bad_config("train.target must be a string");
      c.target = parse_target_spec(it->get<std::string>());
    }
  }
  if (root.contains("finetune")) {
    const json& f = root["finetune"];
    reject_unknown(f, "finetune", {"epochs", "batch", "lr", "lr_min", "warmup_frac", "weight_decay", "sparsity", "seed"});
    FinetuneConfig& c = rc.finetune;
    read_key(f, "epochs", c.epochs, "finetune");
    read_key(f, "batch", c.batch, "finetune");
    read_key(f, "lr", c.lr, "finetune");
    read_key(f, "lr_min", c.lr_min, "finetune");
    read_key(f, "warmup_frac", c.warmup_frac, "finetune");
    read_key(f, "weight_decay", c.weight_decay, "finetune");
    read_key(f, "sparsity", c.sparsity, "finetune");
    read_key(f, "seed", c.seed, "finetune");
  }
  if (root.contains("probe")) {
    const json& p = root["probe"];
    reject_unknown(p, "probe", {"epochs", "lr"});
    read_key(p, "epochs", rc.probe_epochs, "probe");
    read_key(p, "lr", rc.probe.lr, "probe");
  }
  if (root.contains("eval")) {
    const json& e = root["eval"];
    reject_unknown(e, "eval", {"sparsity", "train_fraction"});
    read_key(e, "sparsity", rc.eval_sparsity, "eval");
    read_key(e, "train_fraction", rc.train_fraction, "eval");
  }
  if (!(rc.train_fraction > 0.0 && rc.train_fraction < 1.0)) bad_config("eval.train_fraction must be in (0, 1)");
  if (!(rc.eval_sparsity >= 0.0 && rc.eval_sparsity < 1.0)) bad_config("eval.sparsity must be in [0, 1)");
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig read_run_config(const fs::path& path) { return parse_run_config(read_text(path)); }

std::string model_config_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig c = model_from_json(parse_json(text, "model config"), nullptr);
  c.validate();
  return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json names = json::array();
  for (const auto& [name, _] : ckpt.params) names.push_back(name);
  const json header{{"format", "lookwhen-checkpoint"},
                    {"model", model_to_json(ckpt.model)},
                    {"step", ckpt.step},
                    {"tensors", names}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kArchiveMagic, kArchiveMagic + 4);
  put_u16(out, kArchiveVersion);
  put_u64(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  for (const auto& [_, t] : ckpt.params) {
    const auto rec = encode_tensor(t, DType::kFloat64);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  write_file(path, out);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < 14) throw FormatError(Kind::kTruncated, where + "checkpoint truncated");
  if (std::memcmp(bytes.data(), kArchiveMagic, 4) != 0) throw FormatError(Kind::kBadMagic, where + "not a checkpoint");
  const auto version = static_cast<std::uint16_t>(get_le(bytes.data() + 4, 2));
  if (version != kArchiveVersion) {
    throw FormatError(Kind::kBadVersion, where + "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t hlen = get_le(bytes.data() + 6, 8);
  if (hlen > bytes.size() - 14) throw FormatError(Kind::kTruncated, where + "checkpoint header truncated");
  std::size_t pos = 14 + static_cast<std::size_t>(hlen);

  Checkpoint ckpt;
  std::vector<std::string> names;
  try {
    const json header = json::parse(bytes.begin() + 14, bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    if (header.value("format", "") != "lookwhen-checkpoint") throw DataError("missing checkpoint format tag");
    ckpt.model = model_from_json(header.at("model"), nullptr);
    ckpt.step = header.at("step").get<std::size_t>();
    names = header.at("tensors").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(where + "bad checkpoint header: " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(where + "bad checkpoint header: " + e.what());
  }
  ckpt.model.validate();

  for (const std::string& name : names) {
    std::size_t used = 0;
    try {
      ckpt.params[name] = decode_tensor(std::span(bytes).subspan(pos), &used);
    } catch (const FormatError& e) {
      throw FormatError(e.kind(), where + "tensor '" + name + "': " + e.what());
    }
    pos += used;
  }
  if (pos != bytes.size()) throw FormatError(Kind::kTrailingBytes, where + "trailing bytes after the last tensor");

  for (const auto& [name, t] : init_params(ckpt.model, 0)) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw DataError(where + "missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw DataError(where + "parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                      ", config expects " + shape_str(t.shape()));
    }
  }
  return ckpt;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.jsonl" : path;
  const fs::path base = file.parent_path();
  std::istringstream lines(read_text(file));
  std::vector<ManifestEntry> entries;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = file.string() + ":" + std::to_string(lineno) + ": ";
    ManifestEntry e;
    try {
      const json j = json::parse(line);
      e.clip_id = j.at("clip_id").get<std::string>();
      e.video = base / j.at("video").get<std::string>();
      e.patch_feats = base / j.at("patch_feats").get<std::string>();
      e.class_tokens = base / j.at("class_tokens").get<std::string>();
      e.iv2_video = base / j.at("iv2_video").get<std::string>();
      if (j.contains("attn") && !j["attn"].is_null()) e.attn = base / j["attn"].get<std::string>();
      e.frames = j.at("T_E").get<std::size_t>();
      e.grid = j.at("N_E").get<std::size_t>();
      e.d_img = j.at("D_img").get<std::size_t>();
      e.d_vid = j.at("D_vid").get<std::size_t>();
      if (j.contains("label") && !j["label"].is_null()) e.label = j["label"].get<int>();
    } catch (const json::exception& ex) {
      throw DataError(where + ex.what());
    }
    if (!ids.insert(e.clip_id).second) throw DataError(where + "duplicate clip_id '" + e.clip_id + "'");
    if (e.frames == 0 || e.grid == 0 || e.d_img == 0 || e.d_vid == 0) {
      throw DataError(where + "T_E, N_E, D_img and D_vid must be positive");
    }

    auto check = [&](const fs::path& p, const char* field, const Shape& expect) {
      if (!fs::exists(p)) throw DataError(where + field + " file not found: " + p.string());
      const Shape got = read_tensor_shape(p);
      if (got != expect) {
        throw DataError(where + field + " has shape " + shape_str(got) + ", manifest implies " + shape_str(expect));
      }
    };
    check(e.patch_feats, "patch_feats", {e.frames, e.grid, e.grid, e.d_img});
    check(e.class_tokens, "class_tokens", {e.frames, e.d_img});
    check(e.iv2_video, "iv2_video", {e.d_vid});
    if (e.attn) check(*e.attn, "attn", {e.frames, e.grid, e.grid});
    if (!fs::exists(e.video)) throw DataError(where + "video file not found: " + e.video.string());
    const Shape v = read_tensor_shape(e.video);
    if (v.size() != 4 || v[0] != e.frames || v[1] != v[2] || v[3] != 3 || v[1] % e.grid != 0) {
      throw DataError(where + "video has shape " + shape_str(v) + ", expected [" + std::to_string(e.frames) +
                      " x R x R x 3] with R a multiple of N_E");
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError(file.string() + ": manifest lists no clips");
  return entries;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
  const fs::path base = path.parent_path();
  std::string text;
  for (const ManifestEntry& e : entries) {
    auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
    nlohmann::ordered_json j;
    j["clip_id"] = e.clip_id;
    j["video"] = rel(e.video);
    j["patch_feats"] = rel(e.patch_feats);
    j["class_tokens"] = rel(e.class_tokens);
    j["iv2_video"] = rel(e.iv2_video);
    if (e.attn) j["attn"] = rel(*e.attn);
    j["T_E"] = e.frames;
    j["N_E"] = e.grid;
    j["D_img"] = e.d_img;
    j["D_vid"] = e.d_vid;
    if (e.label) j["label"] = *e.label;
    text += j.dump() + "\n";
  }
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Clip load_clip(const ManifestEntry& e) {
  Clip c;
  c.id = e.clip_id;
  c.video = read_tensor(e.video);
  c.teacher.patch_feats = read_tensor(e.patch_feats);
  c.teacher.class_tokens = read_tensor(e.class_tokens);
  c.teacher.iv2_video = read_tensor(e.iv2_video);
  if (e.attn) c.teacher.attn = read_tensor(*e.attn);
  c.label = e.label;
  try {
    validate_bundle(c.teacher);
  } catch (const Error& ex) {
    throw DataError("clip '" + e.clip_id + "': " + ex.what());
  }
  return c;
}

std::vector<Clip> load_dataset(const fs::path& path) {
  std::vector<Clip> clips;
  for (const ManifestEntry& e : read_manifest(path)) clips.push_back(load_clip(e));
  const Shape& v0 = clips.front().video.shape();
  for (const Clip& c : clips) {
    if (c.video.shape() != v0 || c.teacher.patch_feats.shape() != clips.front().teacher.patch_feats.shape() ||
        c.teacher.iv2_video.shape() != clips.front().teacher.iv2_video.shape()) {
      throw DataError("clip '" + c.id + "' does not match the shapes of clip '" + clips.front().id + "'");
    }
  }
  return clips;
}

ModelConfig fit_model_to_data(const ModelConfig& base, const Clip& clip, const std::set<std::string>& explicit_keys) {
  ModelConfig c = base;
  const auto& pf = clip.teacher.patch_feats.shape();
  const std::map<std::string, std::size_t> data{{"frames", clip.video.dim(0)},
                                                {"resolution", clip.video.dim(1)},
                                                {"patch", clip.video.dim(1) / pf[1]},
                                                {"d_img", pf[3]},
                                                {"d_vid", clip.teacher.iv2_video.dim(0)}};
  const std::map<std::string, std::size_t*> fields{{"frames", &c.frames},
                                                   {"resolution", &c.resolution},
                                                   {"patch", &c.patch},
                                                   {"d_img", &c.d_img},
                                                   {"d_vid", &c.d_vid}};
  for (const auto& [key, value] : data) {
    std::size_t* field = fields.at(key);
    if (explicit_keys.count(key) && *field != value) {
      throw DataError("config sets model." + key + " = " + std::to_string(*field) + " but the data has " +
                      std::to_string(value));
    }
    *field = value;
  }
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("data does not fit the model: ") + e.what());
  }
  return c;
}

std::uint64_t synth_clip_seed(std::uint64_t seed, std::size_t index) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(index));
}

void write_synth_dataset(const fs::path& dir, std::size_t clips, std::uint64_t seed, const SynthSpec& spec) {
  if (clips == 0) throw InvalidArgument("synth: need at least one clip");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(Kind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < clips; ++i) {
    const SynthClip clip =
        synth_clip(spec, synth_clip_seed(seed, i), static_cast<Motion>(static_cast<int>(i % kMotionClasses)));
    std::ostringstream id;
    id << "clip_" << std::setw(4) << std::setfill('0') << i;
    const fs::path cdir = dir / id.str();
    fs::create_directories(cdir, ec);
    if (ec) throw FormatError(Kind::kIo, "cannot create " + cdir.string() + ": " + ec.message());
    ManifestEntry e;
    e.clip_id = id.str();
    e.video = cdir / "video.lwt";
    e.patch_feats = cdir / "patch_feats.lwt";
    e.class_tokens = cdir / "class_tokens.lwt";
    e.iv2_video = cdir / "iv2_video.lwt";
    e.attn = cdir / "attn.lwt";
    e.frames = spec.frames;
    e.grid = spec.grid;
    e.d_img = spec.d_img;
    e.d_vid = spec.d_vid;
    e.label = clip.label;
    write_tensor(e.video, clip.video);
    write_tensor(e.patch_feats, clip.teacher.patch_feats);
    write_tensor(e.class_tokens, clip.teacher.class_tokens);
    write_tensor(e.iv2_video, clip.teacher.iv2_video);
    write_tensor(*e.attn, *clip.teacher.attn);
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.jsonl", entries);
}

std::string pgm_ascii(const Tensor& image, double lo, double hi, std::size_t scale) {
  if (image.ndim() != 2) throw DimensionError("pgm: expected a 2-D image, got " + shape_str(image.shape()));
  if (!(hi > lo)) throw InvalidArgument("pgm: need hi > lo");
  if (scale == 0) throw InvalidArgument("pgm: scale must be positive");
  if (!image.all_finite()) throw NumericError("pgm: image has non-finite values");
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::ostringstream os;
  os << "P2\n" << w * scale << ' ' << h * scale << "\n255\n";
  for (std::size_t y = 0; y < h * scale; ++y) {
    for (std::size_t x = 0; x < w * scale; ++x) {
      const double v = (image.at({y / scale, x / scale}) - lo) / (hi - lo);
      const long level = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
      os << (x ? " " : "") << level;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<fs::path> dump_map(const Tensor& map, const fs::path& dir, bool logits, std::size_t scale) {
  if (map.ndim() != 3 || map.dim(1) != map.dim(2)) {
    throw DimensionError("dump-map: expected a [T x N x N] map, got " + shape_str(map.shape()));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(Kind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const std::size_t n = map.dim(1);
  std::vector<fs::path> written;
  for (std::size_t t = 0; t < map.dim(0); ++t) {
    Tensor frame({n, n});
    for (std::size_t i = 0; i < n * n; ++i) {
      const double v = map[t * n * n + i];
      frame[i] = logits ? 1.0 / (1.0 + std::exp(-v)) : v;
    }
    std::ostringstream name;
    name << "frame_" << std::setw(3) << std::setfill('0') << t << ".pgm";
    const std::string text = pgm_ascii(frame, 0.0, 1.0, scale);
    written.push_back(dir / name.str());
    write_file(written.back(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return written;
}

}  // namespace lookwhen
