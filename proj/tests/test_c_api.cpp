#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lookwhen/lookwhen.h"
#include "test_util_fs.hpp"

using lwtest::TempDir;

namespace {

const char* kSmall = R"({"model": {"width": 16, "heads": 2, "depth_sel": 1, "depth_ext": 1},
                         "train": {"steps": 3, "batch": 2, "lr_max": 0.001},
                         "probe": {"epochs": 20}, "finetune": {"epochs": 1, "batch": 4}})";

std::vector<double> values(const lw_tensor* t) {
  return {lw_tensor_data(t), lw_tensor_data(t) + lw_tensor_numel(t)};
}

// Replaces one entry of a tensor file with NaN.
void poison(const std::string& path) {
  lw_tensor* t = nullptr;
  REQUIRE(lw_tensor_read(path.c_str(), &t) == LW_OK);
  std::vector<double> v = values(t);
  v[0] = NAN;
  std::vector<size_t> shape;
  for (size_t a = 0; a < lw_tensor_ndim(t); ++a) shape.push_back(lw_tensor_dim(t, a));
  lw_tensor* p = nullptr;
  REQUIRE(lw_tensor_create(shape.data(), shape.size(), v.data(), &p) == LW_OK);
  REQUIRE(lw_tensor_write(p, path.c_str(), LW_FLOAT64) == LW_OK);
  lw_tensor_free(t);
  lw_tensor_free(p);
}

}  // namespace

TEST_CASE("tensors through the C interface") {
  CHECK(std::string(lw_version()).size() > 0);
  const size_t shape[] = {2, 3};
  const double data[] = {1, 2, 3, 4, 5, 6};
  lw_tensor* t = nullptr;
  REQUIRE(lw_tensor_create(shape, 2, data, &t) == LW_OK);
  CHECK(lw_tensor_ndim(t) == 2);
  CHECK(lw_tensor_dim(t, 1) == 3);
  CHECK(lw_tensor_dim(t, 5) == 0);
  CHECK(lw_tensor_numel(t) == 6);
  CHECK(values(t) == std::vector<double>(data, data + 6));

  TempDir dir;
  const std::string path = (dir / "t.lwt").string();
  REQUIRE(lw_tensor_write(t, path.c_str(), LW_FLOAT64) == LW_OK);
  lw_tensor* back = nullptr;
  REQUIRE(lw_tensor_read(path.c_str(), &back) == LW_OK);
  CHECK(values(back) == values(t));
  lw_tensor_free(back);
  lw_tensor_free(t);
  lw_tensor_free(nullptr);

  lw_tensor* z = nullptr;
  REQUIRE(lw_tensor_create(nullptr, 0, nullptr, &z) == LW_OK);
  CHECK(lw_tensor_numel(z) == 1);
  lw_tensor_free(z);

  const size_t zero[] = {2, 0};
  CHECK(lw_tensor_create(zero, 2, nullptr, &t) == LW_ERR_INVALID_ARGUMENT);
  CHECK(std::string(lw_last_error()).find("zero") != std::string::npos);
  CHECK(lw_tensor_create(shape, 2, data, nullptr) == LW_ERR_INVALID_ARGUMENT);
  CHECK(lw_tensor_read((dir / "missing.lwt").string().c_str(), &t) == LW_ERR_DATA);
}

TEST_CASE("targets, models, training and evaluation") {
  TempDir dir;
  const std::string data = (dir / "data").string();
  REQUIRE(lw_synth(data.c_str(), 8, 7) == LW_OK);

  lw_tensor* target = nullptr;
  REQUIRE(lw_targets_for_clip(data.c_str(), "clip_0003", "top1", 0, &target) == LW_OK);
  std::vector<double> v = values(target);
  std::sort(v.begin(), v.end());
  for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == static_cast<double>(i) / static_cast<double>(v.size() - 1));
  lw_tensor_free(target);
  CHECK(lw_targets_for_clip(data.c_str(), "nope", "top1", 0, &target) == LW_ERR_DATA);
  CHECK(lw_targets_for_clip(data.c_str(), nullptr, "sideways", 0, &target) == LW_ERR_INVALID_ARGUMENT);

  lw_model* init = nullptr;
  REQUIRE(lw_model_create(kSmall, 1, &init) == LW_OK);
  CHECK(lw_model_param_count(init) > 0);
  CHECK(lw_model_create("{\"model\": {\"bogus\": 1}}", 1, &init) == LW_ERR_INVALID_ARGUMENT);

  struct Seen {
    size_t calls = 0;
    double last = 0;
  } seen;
  auto cb = [](void* user, size_t, const lw_loss* l) {
    auto* s = static_cast<Seen*>(user);
    ++s->calls;
    s->last = l->total;
    return 0;
  };
  lw_model* m = nullptr;
  lw_loss last{};
  REQUIRE(lw_train(kSmall, data.c_str(), nullptr, 5, cb, &seen, &m, &last) == LW_OK);
  CHECK(seen.calls == 3);
  CHECK(seen.last == last.total);
  CHECK(std::abs(last.total - (last.map + last.video + last.frame + last.patch)) < 1e-12);
  CHECK(lw_model_steps(m) == 3);

  // stopping early from the callback
  auto stop = [](void*, size_t step, const lw_loss*) { return step >= 1 ? 1 : 0; };
  lw_model* early = nullptr;
  REQUIRE(lw_train(kSmall, data.c_str(), nullptr, 5, stop, nullptr, &early, nullptr) == LW_OK);
  CHECK(lw_model_steps(early) == 2);
  lw_model_free(early);

  const std::string ck = (dir / "m.lwm").string();
  REQUIRE(lw_model_save(m, ck.c_str()) == LW_OK);
  lw_model* loaded = nullptr;
  REQUIRE(lw_model_load(ck.c_str(), &loaded) == LW_OK);
  CHECK(lw_model_steps(loaded) == 3);

  lw_tensor* video = nullptr;
  REQUIRE(lw_tensor_read((dir / "data/clip_0000/video.lwt").string().c_str(), &video) == LW_OK);
  size_t count = 0;
  REQUIRE(lw_model_select(loaded, video, 0.75, nullptr, nullptr, 0, &count) == LW_OK);
  CHECK(count == 16);
  std::vector<size_t> idx(count), idx2(count);
  lw_tensor* logits = nullptr;
  REQUIRE(lw_model_select(m, video, 0.75, &logits, idx.data(), idx.size(), &count) == LW_OK);
  REQUIRE(lw_model_select(loaded, video, 0.75, nullptr, idx2.data(), idx2.size(), &count) == LW_OK);
  CHECK(idx == idx2);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  // the kept indices are the largest logits
  const std::vector<double> lg = values(logits);
  double kept_min = INFINITY, dropped_max = -INFINITY;
  for (size_t i = 0; i < lg.size(); ++i) {
    if (std::binary_search(idx.begin(), idx.end(), i)) kept_min = std::min(kept_min, lg[i]);
    else dropped_max = std::max(dropped_max, lg[i]);
  }
  CHECK(kept_min >= dropped_max);
  CHECK(lw_model_select(m, video, 1.0, nullptr, nullptr, 0, &count) == LW_ERR_INVALID_ARGUMENT);

  size_t frames = 0;
  REQUIRE(lw_dump_map(logits, 1, (dir / "pgm").string().c_str(), 2, &frames) == LW_OK);
  CHECK(frames == 4);
  lw_tensor_free(logits);
  lw_tensor_free(video);

  lw_eval_result r{};
  REQUIRE(lw_eval(m, data.c_str(), kSmall, LW_EVAL_FINETUNE, 1, &r) == LW_OK);
  CHECK(r.train_clips == 6);
  CHECK(r.eval_clips == 2);
  CHECK(r.selector_unchanged == 1);
  CHECK((r.probe_accuracy >= 0.0 && r.probe_accuracy <= 1.0));

  lw_cost_report cost{};
  REQUIRE(lw_model_flops(m, 0.5, LW_FLOPS_MAC, &cost) == LW_OK);
  CHECK(cost.width == 16);
  CHECK(cost.kept_patches == 32);
  CHECK(cost.total_flops == cost.selector_flops + cost.extractor_flops + cost.heads_flops);
  REQUIRE(lw_flops("vitb-224-16", 0.9, LW_FLOPS_MAC, &cost) == LW_OK);
  CHECK(cost.total_patches == 3136);
  CHECK(lw_flops("vitl", 0.9, LW_FLOPS_MAC, &cost) == LW_ERR_INVALID_ARGUMENT);

  lw_model_free(loaded);
  lw_model_free(init);
  lw_model_free(m);
}

TEST_CASE("error codes from the C interface") {
  TempDir dir;
  const std::string data = (dir / "data").string();
  REQUIRE(lw_synth(data.c_str(), 4, 3) == LW_OK);
  lw_model* m = nullptr;
  CHECK(lw_train(kSmall, (dir / "nowhere").string().c_str(), nullptr, 0, nullptr, nullptr, &m, nullptr) ==
        LW_ERR_DATA);
  CHECK(lw_model_load((dir / "data/manifest.jsonl").string().c_str(), &m) == LW_ERR_DATA);

  poison((dir / "data/clip_0001/class_tokens.lwt").string());
  CHECK(lw_train(kSmall, data.c_str(), nullptr, 0, nullptr, nullptr, &m, nullptr) == LW_ERR_NUMERIC);
  CHECK(std::string(lw_last_error()).find("non-finite") != std::string::npos);
}
