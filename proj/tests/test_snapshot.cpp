#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <functional>
#include <random>

#include "bright/error.hpp"
#include "bright/snapshot.hpp"

using namespace bright;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind{};
}

Checkpoint trained_checkpoint() {
  auto cfg = gradcheck_config(3);
  cfg.dataset_size = 4;
  cfg.batch_size = 2;
  cfg.steps = 5;
  cfg.noise = true;
  const auto data =
      synthetic_dataset(cfg.dataset_size, cfg.image_h, cfg.image_w, cfg.image_c, cfg.seed);
  return train(cfg, data).checkpoint;
}

KeyCodeGrid<float> random_keys(std::uint32_t h, std::uint32_t w, std::uint32_t c) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  KeyCodeGrid<float> keys{Tensor3<float>(h, w, c)};
  for (auto& v : keys.values.data) v = u(rng);
  return keys;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("byte writer and reader agree on little-endian layout") {
  ByteWriter w;
  w.tag("ABCD");
  w.u32(0x01020304u);
  w.u64(0x1122334455667788ull);
  w.f32(1.5f);
  w.f64(-2.25);
  const auto& b = w.bytes();
  REQUIRE(b.size() == 4 + 4 + 8 + 4 + 8);
  CHECK(b[4] == 0x04);
  CHECK(b[7] == 0x01);
  CHECK(b[8] == 0x88);
  ByteReader r(b);
  CHECK(r.tag() == "ABCD");
  CHECK(r.u32() == 0x01020304u);
  CHECK(r.u64() == 0x1122334455667788ull);
  CHECK(r.f32() == 1.5f);
  CHECK(r.f64() == -2.25);
  CHECK(r.remaining() == 0);
  CHECK_THROWS_AS(r.u32(), Error);
}

TEST_CASE("snapshot round-trips groups and sections") {
  GridConfig cfg;
  cfg.n_groups = 2;
  cfg.max_entries = 256;
  cfg.r_max = 9;
  Snapshot snap;
  snap.grid = cfg;
  for (std::uint32_t s = 0; s < cfg.n_groups; ++s) snap.groups.emplace_back(cfg, 10 + s);
  snap.sections.push_back({"NOTE", Bytes{1, 2, 3}});
  snap.sections.push_back({"EMPT", Bytes{}});
  const auto bytes = encode_snapshot(snap);
  CHECK(std::memcmp(bytes.data(), "BRHT", 4) == 0);
  const auto back = decode_snapshot(bytes);
  CHECK(back.grid == snap.grid);
  CHECK(back.groups == snap.groups);
  CHECK(back.sections == snap.sections);
  CHECK(encode_snapshot(back) == bytes);
}

TEST_CASE("checkpoint survives save and load byte-exactly") {
  const auto ckpt = trained_checkpoint();
  const auto path = temp_path("bright_test_ckpt.brht");
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded == ckpt);
  CHECK(encode_checkpoint(loaded) == read_file(path));
  const auto data = synthetic_dataset(1, 8, 8, 3, 77);
  CHECK(reconstruct(loaded.model, data[0]).image.data ==
        reconstruct(ckpt.model, data[0]).image.data);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint decoding rejects corrupted input") {
  const auto bytes = encode_checkpoint(trained_checkpoint());

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of([&] { decode_checkpoint(bad_magic); }) == ErrorKind::format);

  auto bad_version = bytes;
  bad_version[4] = 99;
  CHECK(kind_of([&] { decode_checkpoint(bad_version); }) == ErrorKind::format);

  for (std::size_t cut : {std::size_t(3), std::size_t(20), bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    const Bytes truncated(bytes.begin(), bytes.begin() + std::ptrdiff_t(cut));
    CHECK(kind_of([&] { decode_checkpoint(truncated); }) == ErrorKind::format);
  }

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(kind_of([&] { decode_checkpoint(trailing); }) == ErrorKind::format);
}

TEST_CASE("a snapshot without checkpoint sections is not a checkpoint") {
  GridConfig cfg;
  Snapshot snap;
  snap.grid = cfg;
  for (std::uint32_t s = 0; s < cfg.n_groups; ++s) snap.groups.emplace_back(cfg, s);
  CHECK(kind_of([&] { decode_checkpoint(encode_snapshot(snap)); }) == ErrorKind::format);
}

TEST_CASE("key-code file layout and round-trip") {
  const auto keys = random_keys(8, 8, 2);
  const auto bytes = encode_keycodes(keys);
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 8 * 8 * 2 * 4);
  CHECK(std::memcmp(bytes.data(), "BKEY", 4) == 0);
  ByteReader r(bytes);
  r.tag();
  CHECK(r.u32() == kKeyCodeVersion);
  CHECK(r.u32() == 8);
  CHECK(r.u32() == 8);
  CHECK(r.u32() == 2);
  CHECK(r.f32() == keys.values.data[0]);

  const auto path = temp_path("bright_test_keys.bkey");
  save_keycodes(keys, path);
  const auto loaded = load_keycodes(path);
  CHECK(loaded.values.data == keys.values.data);
  CHECK(read_file(path) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("key-code decoding rejects corrupted input") {
  const auto bytes = encode_keycodes(random_keys(2, 3, 1));
  auto bad_magic = bytes;
  bad_magic[1] = 'Q';
  CHECK(kind_of([&] { decode_keycodes(bad_magic); }) == ErrorKind::format);
  auto bad_version = bytes;
  bad_version[4] = 7;
  CHECK(kind_of([&] { decode_keycodes(bad_version); }) == ErrorKind::format);
  const Bytes truncated(bytes.begin(), bytes.end() - 2);
  CHECK(kind_of([&] { decode_keycodes(truncated); }) == ErrorKind::format);

  ByteWriter w;
  w.tag("BKEY");
  w.u32(kKeyCodeVersion);
  w.u32(1);
  w.u32(1);
  w.u32(1);
  w.f32(1.5f);
  CHECK(kind_of([&] { decode_keycodes(w.bytes()); }) == ErrorKind::format);
}

TEST_CASE("file helpers report io errors") {
  CHECK(kind_of([] { read_file("/nonexistent/dir/file.bin"); }) == ErrorKind::io);
  CHECK(kind_of([] { write_file("/nonexistent/dir/file.bin", Bytes{1}); }) == ErrorKind::io);
  CHECK(kind_of([] { load_checkpoint("/nonexistent/dir/c.brht"); }) == ErrorKind::io);
}
