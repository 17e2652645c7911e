#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "bright/error.hpp"
#include "bright/trainer.hpp"

using namespace bright;

namespace {

TrainConfig tiny(std::uint32_t steps, bool noise = false) {
  auto cfg = gradcheck_config(5);
  cfg.dataset_size = 8;
  cfg.batch_size = 4;
  cfg.steps = steps;
  cfg.noise = noise;
  return cfg;
}

Dataset tiny_data(const TrainConfig& cfg) {
  return synthetic_dataset(cfg.dataset_size, cfg.image_h, cfg.image_w, cfg.image_c, cfg.seed);
}

// Parameters only; the embedded config echo also records threads and steps.
bool same_params(const Autoencoder<float>& a, const Autoencoder<float>& b) {
  std::vector<std::vector<float>> ta, tb;
  a.for_each_tensor([&](ParamGroup, std::span<const float> t) { ta.emplace_back(t.begin(), t.end()); });
  b.for_each_tensor([&](ParamGroup, std::span<const float> t) { tb.emplace_back(t.begin(), t.end()); });
  return ta == tb;
}

bool same_error_kind(ErrorKind want, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == want;
  }
  return false;
}

}  // namespace

TEST_CASE("desk config closes the shape chain") {
  const auto cfg = desk_config(7);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.downsample_stages() == 2);
  CHECK(cfg.upsample_stages() == 1);
  const Autoencoder<float> model(cfg, cfg.seed);
  const auto data = synthetic_dataset(1, 32, 32, 3, 1);
  const auto keys = encode_image(model, data[0]);
  CHECK(keys.values.h == cfg.code_h);
  CHECK(keys.values.w == cfg.code_w);
  CHECK(keys.values.c == cfg.grid.n_groups * cfg.grid.key_len);
  const auto out = decode_keys(model, keys);
  CHECK(out.h == 32);
  CHECK(out.w == 32);
  CHECK(out.c == 3);
}

TEST_CASE("config validation rejects broken shape chains") {
  auto cfg = desk_config(1);
  cfg.code_h = 6;
  CHECK(same_error_kind(ErrorKind::config, [&] { cfg.validate(); }));
  cfg = desk_config(1);
  cfg.feature_w = 12;
  CHECK(same_error_kind(ErrorKind::config, [&] { cfg.validate(); }));
  cfg = desk_config(1);
  cfg.batch_size = 0;
  CHECK(same_error_kind(ErrorKind::config, [&] { cfg.validate(); }));
  cfg = desk_config(1);
  cfg.grid.r_max = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("config text round-trips") {
  auto cfg = desk_config(99);
  cfg.noise = false;
  cfg.grid.key_len = 2;
  cfg.lr_tables = 1.5e-3;
  const auto text = format_train_config(cfg);
  CHECK(parse_train_config(text) == cfg);
}

TEST_CASE("config parser rejects malformed input") {
  const std::string base = format_train_config(desk_config(3));
  CHECK(same_error_kind(ErrorKind::config, [&] { parse_train_config(base + "bogus_key = 1\n"); }));
  CHECK(same_error_kind(ErrorKind::config, [&] { parse_train_config("seed = x\n"); }));
  CHECK(same_error_kind(ErrorKind::config, [&] { parse_train_config("image_h = 32\n"); }));
  CHECK(same_error_kind(ErrorKind::config, [&] { parse_train_config("seed = 1\nsteps\n"); }));
  CHECK(same_error_kind(ErrorKind::config, [&] { parse_train_config("seed = 1\nnoise = maybe\n"); }));
  CHECK(same_error_kind(ErrorKind::config, [&] { load_train_config("/nonexistent/desk.cfg"); }));
}

TEST_CASE("config files shipped with the project parse") {
  for (const char* name : {"desk", "gradcheck", "lsun_church", "lsun_church_ckey2"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_train_config(std::string(BRIGHT_SOURCE_DIR) + "/configs/" + name + ".cfg"));
  }
}

TEST_CASE("zero learning rate leaves parameters and loss unchanged") {
  auto cfg = tiny(1);
  cfg.lr_tables = 0;
  cfg.lr_networks = 0;
  const auto data = tiny_data(cfg);
  const auto result = train(cfg, data);
  const Autoencoder<float> initial(cfg, cfg.seed);
  CHECK(result.checkpoint.model == initial);
  CHECK(result.checkpoint.step == 1);
  REQUIRE(result.curve.size() == 1);
  auto again = train(cfg, data);
  CHECK(again.curve[0].loss == result.curve[0].loss);
}

TEST_CASE("short training reduces the loss") {
  const auto cfg = tiny(300, true);
  const auto data = tiny_data(cfg);
  const auto init_loss = evaluation_loss(Autoencoder<float>(cfg, cfg.seed), data, 0, 1);
  const auto result = train(cfg, data);
  const auto final_loss = evaluation_loss(result.checkpoint.model, data, 0, 1);
  MESSAGE("initial " << init_loss << " final " << final_loss);
  CHECK(final_loss < 0.5 * init_loss);
}

TEST_CASE("training is deterministic and independent of the thread count") {
  auto cfg = tiny(20, true);
  const auto data = tiny_data(cfg);
  const auto a = train(cfg, data);
  cfg.threads = 3;
  const auto b = train(cfg, data);
  CHECK(same_params(a.checkpoint.model, b.checkpoint.model));
  CHECK(a.checkpoint.optimizer == b.checkpoint.optimizer);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].loss == b.curve[i].loss);
}

TEST_CASE("resuming from a checkpoint continues the same run") {
  auto cfg = tiny(10, true);
  const auto data = tiny_data(cfg);
  const auto full = train(cfg, data);
  cfg.steps = 4;
  auto part = train(cfg, data);
  train_steps(cfg, data, part.checkpoint, 6, &part.curve);
  CHECK(same_params(part.checkpoint.model, full.checkpoint.model));
  CHECK(part.checkpoint.optimizer == full.checkpoint.optimizer);
  CHECK(part.checkpoint.step == full.checkpoint.step);
  REQUIRE(part.curve.size() == 10);
  CHECK(part.curve.back().loss == full.curve.back().loss);
}

TEST_CASE("training rejects mismatched or out-of-range data") {
  const auto cfg = tiny(1);
  auto data = tiny_data(cfg);
  data[1] = Tensor3<float>(4, 8, 3);
  CHECK(same_error_kind(ErrorKind::data, [&] { train(cfg, data); }));
  data = tiny_data(cfg);
  data[0].data[5] = 1.5f;
  CHECK(same_error_kind(ErrorKind::data, [&] { train(cfg, data); }));
  CHECK(same_error_kind(ErrorKind::data, [&] { train(cfg, Dataset{}); }));
}

TEST_CASE("synthetic dataset is deterministic and in range") {
  const auto a = synthetic_dataset(6, 16, 12, 3, 42);
  const auto b = synthetic_dataset(6, 16, 12, 3, 42);
  const auto c = synthetic_dataset(6, 16, 12, 3, 43);
  REQUIRE(a.size() == 6);
  CHECK(a[0].h == 16);
  CHECK(a[0].w == 12);
  bool differs = false;
  for (std::size_t n = 0; n < a.size(); ++n) {
    CHECK(a[n].data == b[n].data);
    if (a[n].data != c[n].data) differs = true;
    for (float v : a[n].data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(differs);
}

TEST_CASE("psnr closed forms") {
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0));
  CHECK(psnr_from_mse(1.0) == doctest::Approx(0.0));
  CHECK(psnr_from_mse(0.0) == kPsnrCap);
  const std::vector<float> a = {0.2f, 0.4f, 0.6f};
  CHECK(psnr(a, a) == kPsnrCap);
  const std::vector<float> b = {0.3f, 0.3f, 0.7f};
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
}

TEST_CASE("mean image baseline") {
  Dataset data;
  data.emplace_back(2, 2, 1);
  data.emplace_back(2, 2, 1);
  for (auto& v : data[1].data) v = 1.0f;
  // The mean image is 0.5 everywhere, so the MSE is 0.25.
  CHECK(mean_image_psnr(data) == doctest::Approx(10.0 * std::log10(4.0)));
}

TEST_CASE("reconstruct is noise free and clamped") {
  const auto cfg = tiny(0);
  const auto data = tiny_data(cfg);
  const Autoencoder<float> model(cfg, cfg.seed);
  const auto r1 = reconstruct(model, data[0]);
  const auto r2 = reconstruct(model, data[0]);
  CHECK(r1.image.data == r2.image.data);
  for (float v : r1.image.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(r1.psnr == doctest::Approx(psnr(r1.image.data, data[0].data)));
  CHECK_THROWS_AS(reconstruct(model, Tensor3<float>(4, 4, 3)), Error);
}

TEST_CASE("evaluation loss at amplitude zero ignores the seed") {
  const auto cfg = tiny(0);
  const auto data = tiny_data(cfg);
  const Autoencoder<float> model(cfg, cfg.seed);
  CHECK(evaluation_loss(model, data, 0, 1) == evaluation_loss(model, data, 0, 2));
  CHECK(evaluation_loss(model, data, 0.05, 3) == evaluation_loss(model, data, 0.05, 3));
}

TEST_CASE("relative error floor") {
  CHECK(gradient_rel_error(1.0, 1.0) == 0.0);
  CHECK(gradient_rel_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(gradient_rel_error(0.0, 0.0) == 0.0);
  CHECK(gradient_rel_error(1e-9, 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("end-to-end gradient check passes in both precisions") {
  const auto cfg = gradcheck_config(11);
  const auto r64 = end_to_end_gradient_check(cfg, 60, 1e-5, 1e-5, Precision::f64);
  MESSAGE("64-bit max rel error " << r64.max_rel_error);
  CHECK(r64.passed);
  CHECK(r64.probes.size() == 60);
  CHECK(r64.failing.empty());
  const auto r32 = end_to_end_gradient_check(cfg, 60, 1e-5, 1e-3, Precision::f32);
  MESSAGE("32-bit max rel error " << r32.max_rel_error);
  CHECK(r32.passed);
  bool seen[4] = {};
  for (const auto& p : r64.probes) seen[int(p.group)] = true;
  for (bool s : seen) CHECK(s);
}

TEST_CASE("gradient check reports failures against an impossible tolerance") {
  const auto cfg = gradcheck_config(11);
  const auto r = end_to_end_gradient_check(cfg, 20, 1e-5, 0.0, Precision::f32);
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.failing.empty());
}
