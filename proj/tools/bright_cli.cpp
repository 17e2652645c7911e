// bright: command-line front end over the C API.
//
// Exit codes: 0 success, 1 usage error, 2 config, 3 data, 4 non-finite loss,
// 5 file format, 6 shape mismatch, 7 I/O, 8 invalid argument, 9 internal,
// 10 gradient check failed.

#include <CLI11.hpp>
#include <json.hpp>

#include <bright/bright.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitGradcheckFailed = 10;

// Carries a C API status out of nested helpers.
struct Failure {
  int code;
  std::string message;
};

void check(bright_status st, const std::string& context) {
  if (st != BRIGHT_OK) throw Failure{static_cast<int>(st), context + ": " + bright_last_error()};
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Config = Handle<bright_config, bright_config_free>;
using Dataset = Handle<bright_dataset, bright_dataset_free>;
using Model = Handle<bright_model, bright_model_free>;
using Hits = Handle<bright_hits, bright_hits_free>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  bright_string_free(s);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{BRIGHT_ERR_IO, "cannot write '" + path.string() + "'"};
  out << text;
  if (!out) throw Failure{BRIGHT_ERR_IO, "write to '" + path.string() + "' failed"};
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{BRIGHT_ERR_IO, "cannot read '" + path + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

uint32_t resolve_threads(std::optional<uint32_t> flag) {
  if (flag) return std::max<uint32_t>(1, *flag);
  if (const char* env = std::getenv("BRIGHT_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<uint32_t>(v);
    throw Failure{BRIGHT_ERR_ARGUMENT, std::string("BRIGHT_THREADS='") + env + "' is not a thread count"};
  }
  return 1;
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<uint32_t> steps;
  std::optional<uint32_t> threads;
  bool synthetic = false;
  std::string data_dir;
  std::string out;
  std::string checkpoint;
  std::string image;
  std::string keys;
  std::string reference;
  std::string format = "png";
  std::string manifest;
  bool no_noise = false;
  uint32_t probes = 200;
  double h = 1e-5;
  std::optional<double> tol;
  int precision = 64;
  std::vector<double> amplitudes;
};

class Run {
 public:
  Run(std::string command, std::vector<std::string> args, const Common& opt)
      : command_(std::move(command)), args_(std::move(args)), opt_(opt),
        start_(std::chrono::steady_clock::now()) {
    if (!opt_.out.empty()) {
      std::error_code ec;
      fs::create_directories(opt_.out, ec);
      if (ec) throw Failure{BRIGHT_ERR_IO, "cannot create '" + opt_.out + "': " + ec.message()};
    }
  }

  bool has_out() const { return !opt_.out.empty(); }

  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return fs::path(opt_.out) / name;
  }
  void input(const std::string& path) { inputs_.push_back(path); }
  void set_config(const bright_config* cfg) {
    char* text = nullptr;
    check(bright_config_format(cfg, &text), "config");
    config_text_ = take_string(text);
    seed_ = bright_config_seed(cfg);
  }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write_manifest() {
    if (!has_out()) return;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json m;
    m["command"] = command_;
    m["args"] = args_;
    m["config"] = config_text_;
    if (seed_) m["seed"] = *seed_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["tool_version"] = bright_version();
    m["started_utc"] = stamp;
    m["wall_clock_seconds"] = secs;
    if (!extra_.empty()) m["results"] = extra_;
    write_text(fs::path(opt_.out) / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  const Common& opt_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_, outputs_;
  std::string config_text_;
  std::optional<uint64_t> seed_;
  json extra_ = json::object();
};

void load_config(const Common& opt, Config& cfg, Run& run) {
  if (opt.config.empty()) throw Failure{BRIGHT_ERR_CONFIG, "--config is required"};
  check(bright_config_load(opt.config.c_str(), cfg.out()), "config");
  run.input(opt.config);
  if (opt.seed) check(bright_config_set(cfg.get(), "seed", std::to_string(*opt.seed).c_str()), "--seed");
  if (opt.steps) check(bright_config_set(cfg.get(), "steps", std::to_string(*opt.steps).c_str()), "--steps");
  check(bright_config_set_threads(cfg.get(), resolve_threads(opt.threads)), "--threads");
}

void load_data(const Common& opt, const bright_config* cfg, Dataset& data, Run& run) {
  if (opt.synthetic == !opt.data_dir.empty())
    throw Failure{BRIGHT_ERR_DATA, "give exactly one of --synthetic or --data DIR"};
  if (opt.synthetic) {
    check(bright_dataset_synthetic(cfg, data.out()), "synthetic data");
  } else {
    check(bright_dataset_load_dir(opt.data_dir.c_str(), data.out()), "data");
    run.input(opt.data_dir);
  }
}

void load_model(const Common& opt, Model& model, Run& run) {
  if (opt.checkpoint.empty()) throw Failure{BRIGHT_ERR_ARGUMENT, "--checkpoint is required"};
  check(bright_model_load(opt.checkpoint.c_str(), model.out()), "checkpoint");
  run.input(opt.checkpoint);
}

void require_out(const Common& opt) {
  if (opt.out.empty()) throw Failure{BRIGHT_ERR_ARGUMENT, "--out DIR is required"};
}

// Model config with the command-line seed and thread overrides applied; the
// data generator and noise streams follow this seed.
void model_config(const Common& opt, const Model& model, Config& cfg, Run& run) {
  check(bright_model_config(model.get(), cfg.out()), "checkpoint config");
  if (opt.seed) check(bright_config_set(cfg.get(), "seed", std::to_string(*opt.seed).c_str()), "--seed");
  check(bright_config_set_threads(cfg.get(), resolve_threads(opt.threads)), "--threads");
  run.set_config(cfg.get());
}

int cmd_train(const Common& opt, Run& run) {
  require_out(opt);
  Config cfg;
  load_config(opt, cfg, run);
  run.set_config(cfg.get());
  Dataset data;
  load_data(opt, cfg.get(), data, run);

  struct Progress {
    std::string csv = "step,loss,psnr\n";
    double last_loss = 0;
  } progress;
  auto on_step = [](void* user, uint32_t step, double loss, double psnr) {
    auto* p = static_cast<Progress*>(user);
    p->csv += std::to_string(step) + "," + fmt(loss) + "," + fmt(psnr) + "\n";
    p->last_loss = loss;
    if ((step + 1) % 100 == 0) std::fprintf(stderr, "step %u  loss %.6f  psnr %.2f dB\n", step + 1, loss, psnr);
  };
  Model model;
  check(bright_train(cfg.get(), data.get(), on_step, &progress, model.out()), "train");
  check(bright_model_save(model.get(), run.output("checkpoint.brht").string().c_str()), "save");
  write_text(run.output("loss.csv"), progress.csv);
  run.note("final_loss", progress.last_loss);
  std::printf("trained %llu steps, final loss %s\n",
              static_cast<unsigned long long>(bright_model_step(model.get())), fmt(progress.last_loss).c_str());
  return 0;
}

int cmd_encode(const Common& opt, Run& run) {
  require_out(opt);
  Model model;
  load_model(opt, model, run);
  Config cfg;
  model_config(opt, model, cfg, run);
  if (opt.image.empty()) throw Failure{BRIGHT_ERR_ARGUMENT, "--image is required"};
  run.input(opt.image);
  const auto path = run.output("keys.bkey");
  check(bright_encode(model.get(), opt.image.c_str(), path.string().c_str()), "encode");
  uint32_t h = 0, w = 0, c = 0;
  check(bright_keycode_shape(path.string().c_str(), &h, &w, &c), "encode");
  std::printf("wrote %s (%ux%ux%u keys)\n", path.string().c_str(), h, w, c);
  return 0;
}

int cmd_decode(const Common& opt, Run& run) {
  require_out(opt);
  Model model;
  load_model(opt, model, run);
  Config cfg;
  model_config(opt, model, cfg, run);
  if (opt.keys.empty()) throw Failure{BRIGHT_ERR_ARGUMENT, "--keys is required"};
  run.input(opt.keys);
  const auto path = run.output("decoded." + opt.format);
  double p = 0;
  const char* ref = opt.reference.empty() ? nullptr : opt.reference.c_str();
  if (ref) run.input(opt.reference);
  check(bright_decode(model.get(), opt.keys.c_str(), path.string().c_str(), ref, &p), "decode");
  if (ref) {
    std::fprintf(stderr, "psnr %.4f dB\n", p);
    run.note("psnr", p);
  }
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

int cmd_reconstruct(const Common& opt, Run& run) {
  require_out(opt);
  Model model;
  load_model(opt, model, run);
  Config cfg;
  model_config(opt, model, cfg, run);
  if (opt.image.empty()) throw Failure{BRIGHT_ERR_ARGUMENT, "--image is required"};
  run.input(opt.image);
  const auto path = run.output("reconstruction." + opt.format);
  double p = 0;
  check(bright_reconstruct(model.get(), opt.image.c_str(), path.string().c_str(), &p), "reconstruct");
  std::fprintf(stderr, "psnr %.4f dB\n", p);
  run.note("psnr", p);
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

int cmd_stats(const Common& opt, Run& run) {
  require_out(opt);
  Model model;
  load_model(opt, model, run);
  Config cfg;
  model_config(opt, model, cfg, run);
  Dataset data;
  load_data(opt, cfg.get(), data, run);
  Hits hits;
  check(bright_stats(model.get(), data.get(), opt.no_noise ? 0 : 1, bright_config_seed(cfg.get()),
                     resolve_threads(opt.threads), hits.out()),
        "stats");
  uint32_t groups = 0, levels = 0;
  check(bright_hits_shape(hits.get(), &groups, &levels), "stats");
  char* s = nullptr;
  check(bright_hits_usage_csv(hits.get(), &s), "stats");
  write_text(run.output("usage.csv"), take_string(s));
  for (uint32_t g = 0; g < groups; ++g)
    for (uint32_t l = 0; l < levels; ++l) {
      check(bright_hits_histogram_csv(hits.get(), g, l, &s), "stats");
      write_text(run.output("hits_g" + std::to_string(g) + "_l" + std::to_string(l) + ".csv"), take_string(s));
    }
  check(bright_hits_summary(hits.get(), &s), "stats");
  const std::string summary = take_string(s);
  write_text(run.output("summary.txt"), summary);
  std::fputs(summary.c_str(), stdout);
  int has = 0;
  double frac = 0;
  check(bright_hits_min_direct_fraction(hits.get(), &has, &frac), "stats");
  if (has) run.note("min_direct_fraction", frac);
  return 0;
}

int cmd_params(const Common& opt, Run& run) {
  Config cfg;
  load_config(opt, cfg, run);
  run.set_config(cfg.get());
  bright_param_counts pc{};
  check(bright_param_count(cfg.get(), &pc), "params");
  char* s = nullptr;
  check(bright_params_csv(cfg.get(), &s), "params");
  const std::string levels = take_string(s);
  std::string table = "quantity,value\n";
  table += "table_params," + std::to_string(pc.table_params) + "\n";
  table += "mlp_params," + std::to_string(pc.mlp_params) + "\n";
  table += "total," + std::to_string(pc.total) + "\n";
  std::fputs(table.c_str(), stdout);
  std::printf("table_params %.2fM\n", double(pc.table_params) / 1e6);
  if (run.has_out()) {
    write_text(run.output("params.csv"), table);
    write_text(run.output("levels.csv"), levels);
  }
  run.note("table_params", pc.table_params);
  return 0;
}

int cmd_gradcheck(const Common& opt, Run& run) {
  Config cfg;
  if (opt.config.empty()) {
    check(bright_config_gradcheck(opt.seed.value_or(0), cfg.out()), "gradcheck config");
  } else {
    load_config(opt, cfg, run);
  }
  run.set_config(cfg.get());
  const double tol = opt.tol.value_or(opt.precision == 64 ? 1e-5 : 1e-3);
  bright_gradcheck_report rep{};
  check(bright_gradcheck(cfg.get(), opt.probes, opt.h, tol, opt.precision, &rep), "gradcheck");
  const std::string line = std::string(rep.passed ? "PASS" : "FAIL") + " precision=" +
                           std::to_string(opt.precision) + " probes=" + std::to_string(rep.probes) +
                           " failing=" + std::to_string(rep.failing) + " redrawn=" +
                           std::to_string(rep.redrawn) + " max_rel_error=" + fmt(rep.max_rel_error) +
                           " tol=" + fmt(tol) + "\n";
  std::fputs(line.c_str(), stdout);
  if (run.has_out()) {
    write_text(run.output("gradcheck.csv"),
               "precision,probes,failing,redrawn,max_rel_error,tol,passed\n" +
                   std::to_string(opt.precision) + "," + std::to_string(rep.probes) + "," +
                   std::to_string(rep.failing) + "," + std::to_string(rep.redrawn) + "," +
                   fmt(rep.max_rel_error) + "," + fmt(tol) + "," + (rep.passed ? "1" : "0") + "\n");
  }
  run.note("max_rel_error", rep.max_rel_error);
  run.note("passed", rep.passed != 0);
  return rep.passed ? 0 : kExitGradcheckFailed;
}

int cmd_sweep(const Common& opt, Run& run) {
  require_out(opt);
  Model model;
  load_model(opt, model, run);
  Config cfg;
  model_config(opt, model, cfg, run);
  Dataset data;
  load_data(opt, cfg.get(), data, run);
  std::vector<double> amps = opt.amplitudes;
  if (amps.empty()) {
    char* text = nullptr;
    check(bright_config_format(cfg.get(), &text), "config");
    const std::string conf = take_string(text);
    const auto at = conf.find("r_max = ");
    const double r_max = std::stod(conf.substr(at + 8));
    amps = {0.0, 1.0 / (8.0 * r_max), 1.0 / (4.0 * r_max), 1.0 / (2.0 * r_max), 1.0 / r_max};
  }
  char* s = nullptr;
  check(bright_sweep(model.get(), data.get(), amps.data(), amps.size(), bright_config_seed(cfg.get()), &s),
        "sweep");
  const std::string csv = take_string(s);
  write_text(run.output("sweep.csv"), csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int dispatch(const std::vector<std::string>& argv, bool allow_replay);

int cmd_replay(const Common& opt) {
  require_out(opt);
  if (opt.manifest.empty()) throw Failure{BRIGHT_ERR_ARGUMENT, "--manifest is required"};
  json m;
  try {
    m = json::parse(read_text(opt.manifest));
  } catch (const json::exception& e) {
    throw Failure{BRIGHT_ERR_FORMAT, opt.manifest + ": " + e.what()};
  }
  if (!m.contains("command") || !m.contains("args") || !m["args"].is_array())
    throw Failure{BRIGHT_ERR_FORMAT, opt.manifest + ": not a run manifest"};
  std::vector<std::string> argv = {m["command"].get<std::string>()};
  for (const auto& a : m["args"]) argv.push_back(a.get<std::string>());
  argv.push_back("--out");
  argv.push_back(opt.out);
  return dispatch(argv, false);
}

int dispatch(const std::vector<std::string>& argv, bool allow_replay) {
  CLI::App app{"bright: continuous key codes over multi-resolution hash tables"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bright_version()));
  Common opt;

  auto add_common = [&](CLI::App* sub, bool config, bool data, bool checkpoint) {
    if (config) {
      sub->add_option("--config", opt.config, "key=value config file");
      sub->add_option("--steps", opt.steps, "override the config's step count");
    }
    sub->add_option("--seed", opt.seed, "override the seed");
    sub->add_option("--threads", opt.threads, "worker threads (default: BRIGHT_THREADS or 1)");
    sub->add_option("--out", opt.out, "output directory");
    if (data) {
      sub->add_flag("--synthetic", opt.synthetic, "use the seeded synthetic dataset");
      sub->add_option("--data", opt.data_dir, "directory of .ppm/.png images");
    }
    if (checkpoint) sub->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required();
  };

  auto* train = app.add_subcommand("train", "train an autoencoder");
  add_common(train, true, true, false);
  auto* encode = app.add_subcommand("encode", "image -> key-code file");
  add_common(encode, false, false, true);
  encode->add_option("--image", opt.image, "input image")->required();
  auto* decode = app.add_subcommand("decode", "key-code file -> image");
  add_common(decode, false, false, true);
  decode->add_option("--keys", opt.keys, "key-code file")->required();
  decode->add_option("--reference", opt.reference, "image to report PSNR against");
  decode->add_option("--format", opt.format, "png or ppm")->check(CLI::IsMember({"png", "ppm"}));
  auto* recon = app.add_subcommand("reconstruct", "encode and decode an image");
  add_common(recon, false, false, true);
  recon->add_option("--image", opt.image, "input image")->required();
  recon->add_option("--format", opt.format, "png or ppm")->check(CLI::IsMember({"png", "ppm"}));
  auto* stats = app.add_subcommand("stats", "hash-entry hit statistics");
  add_common(stats, false, true, true);
  stats->add_flag("--no-noise", opt.no_noise, "collect without training-time key noise");
  auto* params = app.add_subcommand("params", "parameter counts for a config");
  add_common(params, true, false, false);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck, true, false, false);
  gradcheck->add_option("--probes", opt.probes, "number of scalar parameters probed");
  gradcheck->add_option("--step-size", opt.h, "central-difference step");
  gradcheck->add_option("--tol", opt.tol, "max relative error (default 1e-5 for 64-bit, 1e-3 for 32-bit)");
  gradcheck->add_option("--precision", opt.precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  auto* sweep = app.add_subcommand("sweep", "evaluation loss under key perturbation");
  add_common(sweep, false, true, true);
  sweep->add_option("--amplitudes", opt.amplitudes, "ascending perturbation amplitudes")->delimiter(',');
  CLI::App* replay = nullptr;
  if (allow_replay) {
    replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    replay->add_option("--manifest", opt.manifest, "manifest.json of an earlier run")->required();
    replay->add_option("--out", opt.out, "output directory for the re-run")->required();
  }

  std::vector<std::string> reversed(argv.rbegin(), argv.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForVersion&) {
    std::cout << bright_version() << "\n";
    return 0;
  } catch (const CLI::Success&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  // Arguments recorded in the manifest: everything except --out and its value.
  std::vector<std::string> recorded;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i] == "--out") {
      ++i;
      continue;
    }
    if (argv[i].rfind("--out=", 0) == 0) continue;
    recorded.push_back(argv[i]);
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "replay") return cmd_replay(opt);
  Run run(name, recorded, opt);
  int code = 0;
  if (name == "train") code = cmd_train(opt, run);
  else if (name == "encode") code = cmd_encode(opt, run);
  else if (name == "decode") code = cmd_decode(opt, run);
  else if (name == "reconstruct") code = cmd_reconstruct(opt, run);
  else if (name == "stats") code = cmd_stats(opt, run);
  else if (name == "params") code = cmd_params(opt, run);
  else if (name == "gradcheck") code = cmd_gradcheck(opt, run);
  else if (name == "sweep") code = cmd_sweep(opt, run);
  run.write_manifest();
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args, true);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return BRIGHT_ERR_INTERNAL;
  }
}
