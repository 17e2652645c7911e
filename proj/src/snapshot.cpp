#include "bright/snapshot.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "bright/error.hpp"

namespace bright {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::tag(std::string_view four) {
  require(four.size() == 4, ErrorKind::argument, "section tag must have four characters");
  buf_.insert(buf_.end(), four.begin(), four.end());
}

void ByteWriter::raw(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::f32s(std::span<const float> v) {
  buf_.reserve(buf_.size() + v.size() * 4);
  for (float x : v) f32(x);
}

std::span<const std::uint8_t> ByteReader::need(std::size_t n) {
  require(n <= remaining(), ErrorKind::format,
          "truncated data: need " + std::to_string(n) + " bytes at offset " +
              std::to_string(pos_) + ", " + std::to_string(remaining()) + " left");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::u32() {
  auto b = need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::tag() {
  auto b = need(4);
  return std::string(b.begin(), b.end());
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) { return need(n); }

std::vector<float> ByteReader::f32s(std::size_t n) {
  require(n <= remaining() / 4, ErrorKind::format,
          "truncated data: " + std::to_string(n) + " floats requested");
  std::vector<float> out(n);
  for (auto& v : out) v = f32();
  return out;
}

namespace {

constexpr std::string_view kSnapshotMagic = "BRHT";
constexpr std::string_view kKeyMagic = "BKEY";

void write_grid(ByteWriter& w, const GridConfig& g) {
  for (auto v : {g.n_groups, g.n_resolutions, g.key_len, g.entry_dim, g.max_entries, g.r_min,
                 g.r_max, g.out_dim_per_group, g.mlp_hidden})
    w.u32(v);
}

GridConfig read_grid(ByteReader& r) {
  GridConfig g;
  for (auto* f : {&g.n_groups, &g.n_resolutions, &g.key_len, &g.entry_dim, &g.max_entries,
                  &g.r_min, &g.r_max, &g.out_dim_per_group, &g.mlp_hidden})
    *f = r.u32();
  try {
    g.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("snapshot: invalid grid config: ") + e.what());
  }
  return g;
}

void write_convs(ByteWriter& w, const std::vector<Conv2d<float>>& layers) {
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    w.u32(l.in_ch);
    w.u32(l.out_ch);
    w.u32(l.stride);
    w.f32s(l.weights);
    w.f32s(l.bias);
  }
}

std::vector<Conv2d<float>> read_convs(ByteReader& r) {
  const std::uint32_t n = r.u32();
  std::vector<Conv2d<float>> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t in = r.u32(), outc = r.u32(), stride = r.u32();
    require(stride == 1 || stride == 2, ErrorKind::format, "checkpoint: bad conv stride");
    Conv2d<float> c(in, outc, stride);
    c.weights = r.f32s(c.weights.size());
    c.bias = r.f32s(c.bias.size());
    out.push_back(std::move(c));
  }
  return out;
}

const Section& find_section(const Snapshot& s, std::string_view tag) {
  for (const auto& sec : s.sections)
    if (sec.tag == tag) return sec;
  fail(ErrorKind::format, "checkpoint: missing section " + std::string(tag));
}

void expect_consumed(const ByteReader& r, std::string_view what) {
  require(r.remaining() == 0, ErrorKind::format,
          std::string(what) + ": " + std::to_string(r.remaining()) + " trailing bytes");
}

}  // namespace

Bytes encode_snapshot(const Snapshot& snap) {
  ByteWriter w;
  w.tag(kSnapshotMagic);
  w.u32(kSnapshotVersion);
  write_grid(w, snap.grid);
  require(snap.groups.size() == snap.grid.n_groups, ErrorKind::argument,
          "snapshot: group count does not match config");
  for (const auto& g : snap.groups) {
    for (const auto& level : g.levels()) {
      w.u32(level.layout.resolution);
      w.u64(level.layout.table_size);
      w.f32s(level.entries);
    }
    w.u32(static_cast<std::uint32_t>(g.mlp().size()));
    for (const auto& layer : g.mlp()) {
      w.u32(layer.out_dim);
      w.u32(layer.in_dim);
      w.f32s(layer.weights);
      w.f32s(layer.bias);
    }
  }
  w.u32(static_cast<std::uint32_t>(snap.sections.size()));
  for (const auto& s : snap.sections) {
    w.tag(s.tag);
    w.u64(s.payload.size());
    w.raw(s.payload);
  }
  return w.take();
}

Snapshot decode_snapshot(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  require(bytes.size() >= 4 && r.tag() == kSnapshotMagic, ErrorKind::format,
          "snapshot: bad magic (expected BRHT)");
  const std::uint32_t version = r.u32();
  require(version == kSnapshotVersion, ErrorKind::format,
          "snapshot: unsupported version " + std::to_string(version));
  Snapshot snap;
  snap.grid = read_grid(r);
  const auto layouts = level_layouts(snap.grid);
  for (std::uint32_t s = 0; s < snap.grid.n_groups; ++s) {
    std::vector<HashGroup<float>::Level> levels;
    for (const auto& layout : layouts) {
      const std::uint32_t res = r.u32();
      const std::uint64_t count = r.u64();
      require(res == layout.resolution && count == layout.table_size, ErrorKind::format,
              "snapshot: level layout disagrees with the grid config");
      levels.push_back({layout, r.f32s(count * snap.grid.entry_dim)});
    }
    const std::uint32_t n_layers = r.u32();
    require(n_layers <= 2, ErrorKind::format, "snapshot: too many MLP layers");
    std::vector<DenseLayer<float>> mlp;
    for (std::uint32_t k = 0; k < n_layers; ++k) {
      const std::uint32_t out = r.u32(), in = r.u32();
      require(std::uint64_t(out) * in <= r.remaining() / 4, ErrorKind::format,
              "snapshot: truncated MLP weights");
      DenseLayer<float> layer(in, out);
      layer.weights = r.f32s(layer.weights.size());
      layer.bias = r.f32s(layer.bias.size());
      mlp.push_back(std::move(layer));
    }
    snap.groups.emplace_back(snap.grid, std::move(levels), std::move(mlp));
  }
  const std::uint32_t n_sections = r.u32();
  for (std::uint32_t k = 0; k < n_sections; ++k) {
    Section s;
    s.tag = r.tag();
    const std::uint64_t len = r.u64();
    require(len <= r.remaining(), ErrorKind::format, "snapshot: truncated section " + s.tag);
    auto payload = r.raw(len);
    s.payload.assign(payload.begin(), payload.end());
    snap.sections.push_back(std::move(s));
  }
  expect_consumed(r, "snapshot");
  return snap;
}

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  const auto& model = ckpt.model;
  Snapshot snap;
  snap.grid = model.config().grid;
  snap.groups = model.groups();

  const std::string conf = format_train_config(model.config());
  snap.sections.push_back({"CONF", Bytes(conf.begin(), conf.end())});
  {
    ByteWriter w;
    write_convs(w, model.encoder());
    snap.sections.push_back({"ENCW", w.take()});
  }
  {
    ByteWriter w;
    write_convs(w, model.decoder());
    snap.sections.push_back({"DECW", w.take()});
  }
  {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(ckpt.optimizer.states.size()));
    for (const auto& s : ckpt.optimizer.states) {
      w.u64(s.step);
      w.f64(s.hyper.lr);
      w.f64(s.hyper.beta1);
      w.f64(s.hyper.beta2);
      w.f64(s.hyper.eps);
      w.u64(s.m.size());
      w.f32s(s.m);
      w.f32s(s.v);
    }
    snap.sections.push_back({"OPTM", w.take()});
  }
  {
    ByteWriter w;
    w.u64(ckpt.step);
    snap.sections.push_back({"STEP", w.take()});
  }
  return encode_snapshot(snap);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Snapshot snap = decode_snapshot(bytes);
  const auto& conf = find_section(snap, "CONF").payload;
  TrainConfig cfg;
  try {
    cfg = parse_train_config(std::string(conf.begin(), conf.end()));
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("checkpoint: bad CONF section: ") + e.what());
  }
  require(cfg.grid == snap.grid, ErrorKind::format,
          "checkpoint: CONF grid disagrees with the snapshot header");

  ByteReader enc(find_section(snap, "ENCW").payload);
  auto encoder = read_convs(enc);
  expect_consumed(enc, "ENCW");
  ByteReader dec(find_section(snap, "DECW").payload);
  auto decoder = read_convs(dec);
  expect_consumed(dec, "DECW");

  Checkpoint ckpt;
  ckpt.model = Autoencoder<float>::from_parts(cfg, std::move(encoder), std::move(snap.groups),
                                              std::move(decoder));

  ByteReader opt(find_section(snap, "OPTM").payload);
  const std::uint32_t n = opt.u32();
  std::vector<std::size_t> sizes;
  ckpt.model.for_each_tensor([&](ParamGroup, std::span<const float> t) { sizes.push_back(t.size()); });
  require(n == sizes.size(), ErrorKind::format, "checkpoint: optimizer state count mismatch");
  for (std::uint32_t k = 0; k < n; ++k) {
    AdamState<float> s;
    s.step = opt.u64();
    s.hyper.lr = opt.f64();
    s.hyper.beta1 = opt.f64();
    s.hyper.beta2 = opt.f64();
    s.hyper.eps = opt.f64();
    const std::uint64_t len = opt.u64();
    require(len == sizes[k], ErrorKind::format, "checkpoint: optimizer state size mismatch");
    s.m = opt.f32s(len);
    s.v = opt.f32s(len);
    ckpt.optimizer.states.push_back(std::move(s));
  }
  expect_consumed(opt, "OPTM");
  ByteReader step(find_section(snap, "STEP").payload);
  ckpt.step = step.u64();
  expect_consumed(step, "STEP");
  return ckpt;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) fail(ErrorKind::io, "write to '" + path + "' failed");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

Bytes encode_keycodes(const KeyCodeGrid<float>& keys) {
  const auto& v = keys.values;
  ByteWriter w;
  w.tag(kKeyMagic);
  w.u32(kKeyCodeVersion);
  w.u32(v.h);
  w.u32(v.w);
  w.u32(v.c);
  w.f32s(v.data);
  return w.take();
}

KeyCodeGrid<float> decode_keycodes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  require(bytes.size() >= 4 && r.tag() == kKeyMagic, ErrorKind::format,
          "key-code file: bad magic (expected BKEY)");
  const std::uint32_t version = r.u32();
  require(version == kKeyCodeVersion, ErrorKind::format,
          "key-code file: unsupported version " + std::to_string(version));
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  const std::uint64_t n = std::uint64_t(h) * w * c;
  require(n * 4 == r.remaining(), ErrorKind::format,
          "key-code file: payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
              std::to_string(n * 4));
  KeyCodeGrid<float> keys{Tensor3<float>(h, w, c)};
  keys.values.data = r.f32s(n);
  for (float v : keys.values.data)
    require(v >= 0.0f && v <= 1.0f, ErrorKind::format, "key-code file: value outside [0,1]");
  return keys;
}

void save_keycodes(const KeyCodeGrid<float>& keys, const std::string& path) {
  write_file(path, encode_keycodes(keys));
}

KeyCodeGrid<float> load_keycodes(const std::string& path) {
  try {
    return decode_keycodes(read_file(path));
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

}  // namespace bright
