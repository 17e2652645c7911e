#pragma once

// Little-endian binary formats.
//
// Hash-group snapshot:
//   "BRHT" | u32 version | 9 x u32 GridConfig
//     (n_groups, n_resolutions, key_len, entry_dim, max_entries, r_min, r_max,
//      out_dim_per_group, mlp_hidden)
//   per group: per level: u32 resolution | u64 entry count | f32 entries
//                                                (entry count x entry_dim)
//              u32 MLP layer count | per layer: u32 out | u32 in |
//                                               f32 weights | f32 bias
//   u32 section count | per section: 4-byte tag | u64 length | payload
//
// Checkpoints are snapshots carrying the sections CONF (config text), ENCW
// and DECW (conv layers), OPTM (Adam states) and STEP.
//
// Key-code file:
//   "BKEY" | u32 version | u32 H_z | u32 W_z | u32 C_z | f32 payload (H,W,C order)

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bright/hashgrid.hpp"
#include "bright/keycodes.hpp"
#include "bright/trainer.hpp"

namespace bright {

inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::uint32_t kKeyCodeVersion = 1;

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void tag(std::string_view four);
  void raw(std::span<const std::uint8_t> bytes);
  void f32s(std::span<const float> v);

  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Reads from a byte span; any overrun throws Error(format).
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string tag();
  std::span<const std::uint8_t> raw(std::size_t n);
  std::vector<float> f32s(std::size_t n);

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> need(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct Section {
  std::string tag;  // exactly four characters
  Bytes payload;
  bool operator==(const Section&) const = default;
};

struct Snapshot {
  GridConfig grid;
  std::vector<HashGroup<float>> groups;
  std::vector<Section> sections;
};

Bytes encode_snapshot(const Snapshot& snap);
/// Rejects bad magic, unknown versions and truncated or inconsistent data.
Snapshot decode_snapshot(std::span<const std::uint8_t> bytes);

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Bytes encode_keycodes(const KeyCodeGrid<float>& keys);
KeyCodeGrid<float> decode_keycodes(std::span<const std::uint8_t> bytes);
void save_keycodes(const KeyCodeGrid<float>& keys, const std::string& path);
KeyCodeGrid<float> load_keycodes(const std::string& path);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace bright
