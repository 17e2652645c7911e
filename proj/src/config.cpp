#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "bright/error.hpp"
#include "bright/trainer.hpp"

namespace bright {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  fail(ErrorKind::config, "config key '" + key + "': '" + value + "' is not " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  // Accepts plain integers and powers of two written as 2^k.
  const auto caret = value.find('^');
  if (caret != std::string::npos) {
    if (value.substr(0, caret) != "2") bad_value(key, value, "an integer or 2^k");
    const std::uint64_t k = parse_u64(key, value.substr(caret + 1));
    if (k > 63) bad_value(key, value, "an integer or 2^k");
    return std::uint64_t(1) << k;
  }
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "an unsigned integer");
  return out;
}

std::uint32_t parse_u32(const std::string& key, const std::string& value) {
  const std::uint64_t v = parse_u64(key, value);
  if (v > 0xffffffffULL) bad_value(key, value, "a 32-bit unsigned integer");
  return static_cast<std::uint32_t>(v);
}

double parse_f64(const std::string& key, const std::string& value) {
  double out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

#define U32_FIELD(name, member)                                                              \
  Field {                                                                                    \
    name, [](TrainConfig& c, const std::string& k, const std::string& v) {                   \
      c.member = parse_u32(k, v);                                                            \
    },                                                                                       \
        [](const TrainConfig& c) { return std::to_string(c.member); }                        \
  }
#define F64_FIELD(name, member)                                                              \
  Field {                                                                                    \
    name, [](TrainConfig& c, const std::string& k, const std::string& v) {                   \
      c.member = parse_f64(k, v);                                                            \
    },                                                                                       \
        [](const TrainConfig& c) { return fmt_double(c.member); }                            \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      U32_FIELD("image_h", image_h),
      U32_FIELD("image_w", image_w),
      U32_FIELD("image_c", image_c),
      U32_FIELD("n_groups", grid.n_groups),
      U32_FIELD("n_resolutions", grid.n_resolutions),
      U32_FIELD("key_len", grid.key_len),
      U32_FIELD("entry_dim", grid.entry_dim),
      U32_FIELD("max_entries", grid.max_entries),
      U32_FIELD("r_min", grid.r_min),
      U32_FIELD("r_max", grid.r_max),
      U32_FIELD("out_dim_per_group", grid.out_dim_per_group),
      U32_FIELD("mlp_hidden", grid.mlp_hidden),
      U32_FIELD("code_h", code_h),
      U32_FIELD("code_w", code_w),
      U32_FIELD("feature_h", feature_h),
      U32_FIELD("feature_w", feature_w),
      U32_FIELD("encoder_channels", encoder_channels),
      U32_FIELD("decoder_channels", decoder_channels),
      Field{"activation",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              if (v == "relu")
                c.activation = Activation::relu;
              else if (v == "identity")
                c.activation = Activation::identity;
              else
                bad_value(k, v, "relu or identity");
            },
            [](const TrainConfig& c) {
              return std::string(c.activation == Activation::relu ? "relu" : "identity");
            }},
      U32_FIELD("steps", steps),
      U32_FIELD("batch_size", batch_size),
      U32_FIELD("dataset_size", dataset_size),
      Field{"seed",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              c.seed = parse_u64(k, v);
            },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      Field{"noise",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              c.noise = parse_bool(k, v);
            },
            [](const TrainConfig& c) { return std::string(c.noise ? "true" : "false"); }},
      F64_FIELD("lr_tables", lr_tables),
      F64_FIELD("lr_networks", lr_networks),
      F64_FIELD("beta1", beta1),
      F64_FIELD("beta2", beta2),
      F64_FIELD("eps_tables", eps_tables),
      F64_FIELD("eps_networks", eps_networks),
      F64_FIELD("l2_weight", l2_weight),
  };
  return table;
}

#undef U32_FIELD
#undef F64_FIELD

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (key == f.key) field = &f;
    if (!field)
      fail(ErrorKind::config, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      fail(ErrorKind::config, "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    field->set(cfg, key, value);
  }
  if (!seen.count("seed")) fail(ErrorKind::config, "config: 'seed' is required");
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::config, "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_train_config(ss.str());
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

std::string format_train_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace bright
