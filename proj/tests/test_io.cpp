#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "io.hpp"
#include "test_util.hpp"
#include "test_util_fs.hpp"

using namespace lookwhen;
using lwtest::TempDir;

namespace {

const std::filesystem::path kFixtures = LW_FIXTURE_DIR;

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

FormatError::Kind decode_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_tensor(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decode succeeded");
  return FormatError::Kind::kIo;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST_CASE("tensor round trips") {
  TempDir dir;
  const Tensor t({2, 3}, {1.0, -2.5, 0.1, 3e10, -0.0, 1.0 / 3.0});
  write_tensor(dir / "a.lwt", t);
  CHECK(bit_equal(read_tensor(dir / "a.lwt"), t));
  CHECK(read_tensor_shape(dir / "a.lwt") == Shape{2, 3});

  const Tensor scalar({}, {42.0});
  write_tensor(dir / "s.lwt", scalar);
  const Tensor back = read_tensor(dir / "s.lwt");
  CHECK(back.shape().empty());
  CHECK(back.item() == 42.0);

  write_tensor(dir / "f.lwt", t, DType::kFloat32);
  const Tensor f = read_tensor(dir / "f.lwt");
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(f[i] == static_cast<double>(static_cast<float>(t[i])));
  CHECK(std::filesystem::file_size(dir / "f.lwt") == 8 + 2 * 8 + 6 * 4);
}

TEST_CASE("tensor fuzz over 1000 seeds") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed);
    Shape shape(rng() % 5);
    for (auto& d : shape) d = 1 + rng() % 5;
    Tensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<double>(rng());
    for (double& v : t.data())
      if (std::isnan(v)) v = 0.5;
    const auto bytes = encode_tensor(t);
    CHECK(bytes.size() == 8 + 8 * shape.size() + 8 * t.numel());
    CHECK(bit_equal(decode_tensor(bytes), t));
    // f32 round trip of f32-representable values
    Tensor g(shape);
    for (double& v : g.data()) v = static_cast<float>(std::normal_distribution<double>(0, 100)(rng));
    CHECK(bit_equal(decode_tensor(encode_tensor(g, DType::kFloat32)), g));
  }
}

TEST_CASE("golden fixtures pin the byte layout") {
  const Tensor f64({2, 3}, {1.0, -2.5, 0.1, 3e10, -0.0, 1.0 / 3.0});
  const Tensor f32({3, 2}, {1.0, -2.5, 0.375, 1024.0, -0.0, 0.15625});
  const auto g64 = read_file(kFixtures / "golden_f64.lwt");
  const auto g32 = read_file(kFixtures / "golden_f32.lwt");
  const auto gs = read_file(kFixtures / "golden_scalar.lwt");
  CHECK(encode_tensor(f64) == g64);
  CHECK(encode_tensor(f32, DType::kFloat32) == g32);
  CHECK(encode_tensor(Tensor({}, {42.0})) == gs);
  CHECK(bit_equal(decode_tensor(g64), f64));
  CHECK(bit_equal(decode_tensor(g32), f32));
}

TEST_CASE("malformed tensor files raise typed errors") {
  const auto good = encode_tensor(Tensor({2, 2}, {1, 2, 3, 4}));
  using K = FormatError::Kind;

  for (std::size_t cut : {0u, 3u, 7u, 12u, 23u, 50u})
    CHECK(decode_error(std::span(good.data(), cut)) == K::kTruncated);
  auto bad = good;
  bad[0] = 'X';
  CHECK(decode_error(bad) == K::kBadMagic);
  bad = good;
  bad[4] = 2;
  CHECK(decode_error(bad) == K::kBadVersion);
  bad = good;
  bad[6] = 7;
  CHECK(decode_error(bad) == K::kBadDType);
  bad = good;
  bad[8] = 0;  // zero extent
  CHECK(decode_error(bad) == K::kBadShape);
  bad = good;
  for (int i = 8; i < 16; ++i) bad[i] = 0xff;  // 2^64 - 1 rows
  CHECK(decode_error(bad) == K::kBadShape);
  bad = good;
  bad.push_back(0);
  CHECK(decode_error(bad) == K::kTrailingBytes);
  std::size_t used = 0;
  CHECK(decode_tensor(bad, &used).numel() == 4);
  CHECK(used == good.size());

  TempDir dir;
  CHECK_THROWS_AS(read_tensor(dir / "missing.lwt"), FormatError);
  spit(dir / "short.lwt", std::string(reinterpret_cast<const char*>(good.data()), 20));
  CHECK_THROWS_AS(read_tensor(dir / "short.lwt"), FormatError);
  CHECK_THROWS_AS(read_tensor_shape(dir / "short.lwt"), FormatError);
  // every typed error is a data error
  CHECK_THROWS_AS(read_tensor(dir / "short.lwt"), DataError);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir;
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  Checkpoint ck{cfg, 17, init_params(cfg, 3)};
  ck.params.emplace("cls.w", Tensor({16, 4}));
  write_checkpoint(dir / "m.lwm", ck);
  const Checkpoint back = read_checkpoint(dir / "m.lwm");
  CHECK(back.model == cfg);
  CHECK(back.step == 17);
  REQUIRE(back.params.size() == ck.params.size());
  for (const auto& [path, t] : ck.params) CHECK(bit_equal(back.params.at(path), t));

  // a parameter the config does not know is accepted; a missing one is not
  Checkpoint missing = ck;
  missing.params.erase(missing.params.lower_bound("ext."));
  write_checkpoint(dir / "bad.lwm", missing);
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.lwm"), DataError);
  std::string bytes = slurp(dir / "m.lwm");
  spit(dir / "cut.lwm", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(read_checkpoint(dir / "cut.lwm"), DataError);
  bytes[0] = 'Q';
  spit(dir / "magic.lwm", bytes);
  CHECK_THROWS_AS(read_checkpoint(dir / "magic.lwm"), DataError);
}

TEST_CASE("run config parsing") {
  const RunConfig d = parse_run_config("{}");
  CHECK(d.model == ModelConfig{});
  CHECK(d.eval_sparsity == 0.7);
  const RunConfig r = parse_run_config(R"({"model": {"width": 48, "heads": 6},
      "train": {"steps": 12, "target": "topk:3", "lr_max": 0.002},
      "finetune": {"epochs": 2}, "probe": {"epochs": 50}, "eval": {"sparsity": 0.5}})");
  CHECK(r.model.width == 48);
  CHECK(r.explicit_model_keys == std::set<std::string>{"heads", "width"});
  CHECK(r.train.steps == 12);
  CHECK(r.train.target.method == TargetMethod::kTopK);
  CHECK(r.train.target.k == 3);
  CHECK(r.train.lr_max == 0.002);
  CHECK(r.finetune.epochs == 2);
  CHECK(r.probe_epochs == 50);
  CHECK(r.eval_sparsity == 0.5);
  CHECK(parse_model_config(model_config_json(r.model)) == r.model);

  for (const char* bad : {R"({"modle": {}})", R"({"train": {"stpes": 3}})", R"({"model": {"width": "wide"}})",
                          R"({"train": {"target": "nope"}})", "not json", R"({"model": {"width": -4}})"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_run_config(bad), InvalidArgument);
  }
}

TEST_CASE("synthetic dataset and manifest") {
  TempDir a, b;
  write_synth_dataset(a.path(), 3, 5);
  write_synth_dataset(b.path(), 3, 5);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CHECK(slurp(entry.path()) == slurp(b.path() / rel));
  }

  const auto entries = read_manifest(a.path());
  REQUIRE(entries.size() == 3);
  CHECK(entries[1].label == 1);
  CHECK(entries[0].frames == 4);
  CHECK(entries[0].grid == 4);
  CHECK(entries[0].attn.has_value());
  const auto clips = load_dataset(a.path() / "manifest.jsonl");
  CHECK(clips[2].video.shape() == Shape{4, 32, 32, 3});
  const SynthClip direct = synth_clip(SynthSpec{}, synth_clip_seed(5, 2), Motion::kDown);
  CHECK(max_abs_diff(clips[2].video, direct.video) == 0.0);
  CHECK(max_abs_diff(clips[2].teacher.patch_feats, direct.teacher.patch_feats) == 0.0);

  // manifest written back round-trips
  write_manifest(a / "copy.jsonl", entries);
  const auto again = read_manifest(a / "copy.jsonl");
  CHECK(again[2].patch_feats == entries[2].patch_feats);

  ModelConfig base;
  base.resolution = 64;
  CHECK(fit_model_to_data(base, clips[0]).resolution == 32);
  CHECK_THROWS_AS(fit_model_to_data(base, clips[0], {"resolution"}), DataError);
}

TEST_CASE("manifest errors") {
  TempDir dir;
  write_synth_dataset(dir.path(), 2, 1);
  const std::string text = slurp(dir / "manifest.jsonl");
  const std::string first = text.substr(0, text.find('\n') + 1);

  spit(dir / "dup.jsonl", first + first);
  CHECK_THROWS_WITH_AS(read_manifest(dir / "dup.jsonl"), doctest::Contains("duplicate"), DataError);

  std::string wrong = first;
  wrong.replace(wrong.find("\"D_img\":16"), 10, "\"D_img\":15");
  spit(dir / "shape.jsonl", wrong);
  CHECK_THROWS_WITH_AS(read_manifest(dir / "shape.jsonl"), doctest::Contains("patch_feats"), DataError);

  std::filesystem::remove(dir / "clip_0001" / "iv2_video.lwt");
  CHECK_THROWS_WITH_AS(read_manifest(dir.path()), doctest::Contains("not found"), DataError);

  spit(dir / "empty.jsonl", "\n");
  CHECK_THROWS_AS(read_manifest(dir / "empty.jsonl"), DataError);
  spit(dir / "junk.jsonl", "{\"clip_id\": 3}\n");
  CHECK_THROWS_AS(read_manifest(dir / "junk.jsonl"), DataError);
}

TEST_CASE("pgm output") {
  const Tensor img({2, 2}, {0.0, 1.0, 0.5, 2.0});
  CHECK(pgm_ascii(img, 0.0, 1.0) == "P2\n2 2\n255\n0 255\n128 255\n");
  const std::string big = pgm_ascii(img, 0.0, 1.0, 2);
  CHECK(big.starts_with("P2\n4 4\n255\n0 0 255 255\n0 0 255 255\n128 128"));

  TempDir dir;
  const auto files = dump_map(Tensor({3, 2, 2}), dir.path(), true);
  REQUIRE(files.size() == 3);
  CHECK(files[2].filename() == "frame_002.pgm");
  CHECK(slurp(files[0]) == "P2\n2 2\n255\n128 128\n128 128\n");
  CHECK_THROWS_AS(dump_map(Tensor({2, 2}), dir.path(), false), DimensionError);
}
