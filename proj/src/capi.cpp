#include "bright/bright.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "bright/analysis.hpp"
#include "bright/error.hpp"
#include "bright/image.hpp"
#include "bright/snapshot.hpp"
#include "bright/trainer.hpp"

struct bright_config {
  bright::TrainConfig cfg;
};

struct bright_dataset {
  bright::Dataset images;
};

struct bright_model {
  bright::Checkpoint ckpt;
};

struct bright_hits {
  std::vector<bright::HitStats> groups;
};

namespace {

thread_local std::string g_last_error;

bright_status to_status(bright::ErrorKind kind) {
  switch (kind) {
    case bright::ErrorKind::config: return BRIGHT_ERR_CONFIG;
    case bright::ErrorKind::data: return BRIGHT_ERR_DATA;
    case bright::ErrorKind::non_finite: return BRIGHT_ERR_NON_FINITE;
    case bright::ErrorKind::format: return BRIGHT_ERR_FORMAT;
    case bright::ErrorKind::shape: return BRIGHT_ERR_SHAPE;
    case bright::ErrorKind::io: return BRIGHT_ERR_IO;
    case bright::ErrorKind::argument: return BRIGHT_ERR_ARGUMENT;
  }
  return BRIGHT_ERR_INTERNAL;
}

template <class Fn>
bright_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return BRIGHT_OK;
  } catch (const bright::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return BRIGHT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BRIGHT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return BRIGHT_ERR_INTERNAL;
  }
}

void check_arg(const void* p, const char* what) {
  bright::require(p != nullptr, bright::ErrorKind::argument, std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void check_image_shape(const bright::TrainConfig& cfg, const bright::Tensor3<float>& img,
                       const std::string& path) {
  bright::require(img.h == cfg.image_h && img.w == cfg.image_w && img.c == cfg.image_c,
                  bright::ErrorKind::shape,
                  path + " is " + std::to_string(img.h) + "x" + std::to_string(img.w) + "x" +
                      std::to_string(img.c) + ", model expects " + std::to_string(cfg.image_h) +
                      "x" + std::to_string(cfg.image_w) + "x" + std::to_string(cfg.image_c));
}

}  // namespace

extern "C" {

const char* bright_version(void) { return "0.1.0"; }

const char* bright_last_error(void) { return g_last_error.c_str(); }

void bright_string_free(char* s) { std::free(s); }

bright_status bright_config_load(const char* path, bright_config** out) {
  return guarded([&] {
    check_arg(path, "path");
    check_arg(out, "out");
    *out = new bright_config{bright::load_train_config(path)};
  });
}

bright_status bright_config_parse(const char* text, bright_config** out) {
  return guarded([&] {
    check_arg(text, "text");
    check_arg(out, "out");
    *out = new bright_config{bright::parse_train_config(text)};
  });
}

bright_status bright_config_desk(uint64_t seed, bright_config** out) {
  return guarded([&] {
    check_arg(out, "out");
    *out = new bright_config{bright::desk_config(seed)};
  });
}

bright_status bright_config_gradcheck(uint64_t seed, bright_config** out) {
  return guarded([&] {
    check_arg(out, "out");
    *out = new bright_config{bright::gradcheck_config(seed)};
  });
}

bright_status bright_config_set(bright_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(key, "key");
    check_arg(value, "value");
    // Re-parse the full text with the one key replaced so the same typed
    // parsing and validation apply.
    std::string text;
    const std::string k(key);
    bool replaced = false;
    std::string formatted = bright::format_train_config(cfg->cfg);
    std::size_t pos = 0;
    while (pos < formatted.size()) {
      const std::size_t end = formatted.find('\n', pos);
      const std::string line = formatted.substr(pos, end - pos);
      pos = end + 1;
      if (line.rfind(k + " = ", 0) == 0) {
        text += k + " = " + value + "\n";
        replaced = true;
      } else {
        text += line + "\n";
      }
    }
    bright::require(replaced, bright::ErrorKind::config, "unknown config key '" + k + "'");
    const std::uint32_t threads = cfg->cfg.threads;
    cfg->cfg = bright::parse_train_config(text);
    cfg->cfg.threads = threads;
  });
}

bright_status bright_config_set_threads(bright_config* cfg, uint32_t threads) {
  return guarded([&] {
    check_arg(cfg, "config");
    bright::require(threads >= 1, bright::ErrorKind::argument, "threads must be at least 1");
    cfg->cfg.threads = threads;
  });
}

bright_status bright_config_format(const bright_config* cfg, char** out) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(out, "out");
    *out = dup_string(bright::format_train_config(cfg->cfg));
  });
}

uint64_t bright_config_seed(const bright_config* cfg) { return cfg ? cfg->cfg.seed : 0; }

void bright_config_free(bright_config* cfg) { delete cfg; }

bright_status bright_dataset_synthetic(const bright_config* cfg, bright_dataset** out) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(out, "out");
    const auto& c = cfg->cfg;
    *out = new bright_dataset{
        bright::synthetic_dataset(c.dataset_size, c.image_h, c.image_w, c.image_c, c.seed)};
  });
}

bright_status bright_dataset_load_dir(const char* dir, bright_dataset** out) {
  return guarded([&] {
    check_arg(dir, "dir");
    check_arg(out, "out");
    *out = new bright_dataset{bright::load_image_dir(dir)};
  });
}

bright_status bright_dataset_load_image(const char* path, bright_dataset** out) {
  return guarded([&] {
    check_arg(path, "path");
    check_arg(out, "out");
    auto* d = new bright_dataset;
    try {
      d->images.push_back(bright::read_image(path));
    } catch (...) {
      delete d;
      throw;
    }
    *out = d;
  });
}

size_t bright_dataset_size(const bright_dataset* data) { return data ? data->images.size() : 0; }

bright_status bright_dataset_save_image(const bright_dataset* data, size_t index, const char* path) {
  return guarded([&] {
    check_arg(data, "dataset");
    check_arg(path, "path");
    bright::require(index < data->images.size(), bright::ErrorKind::argument,
                    "image index out of range");
    bright::write_image(path, data->images[index]);
  });
}

bright_status bright_dataset_mean_psnr(const bright_dataset* data, double* out) {
  return guarded([&] {
    check_arg(data, "dataset");
    check_arg(out, "out");
    *out = bright::mean_image_psnr(data->images);
  });
}

void bright_dataset_free(bright_dataset* data) { delete data; }

bright_status bright_train(const bright_config* cfg, const bright_dataset* data,
                           bright_step_fn on_step, void* user, bright_model** out) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(data, "dataset");
    check_arg(out, "out");
    bright::StepCallback cb;
    if (on_step)
      cb = [&](const bright::LossRecord& r) { on_step(user, r.step, r.loss, r.psnr); };
    auto result = bright::train(cfg->cfg, data->images, cb);
    *out = new bright_model{std::move(result.checkpoint)};
  });
}

bright_status bright_model_save(const bright_model* model, const char* path) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(path, "path");
    bright::save_checkpoint(model->ckpt, path);
  });
}

bright_status bright_model_load(const char* path, bright_model** out) {
  return guarded([&] {
    check_arg(path, "path");
    check_arg(out, "out");
    *out = new bright_model{bright::load_checkpoint(path)};
  });
}

bright_status bright_model_config(const bright_model* model, bright_config** out) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(out, "out");
    *out = new bright_config{model->ckpt.model.config()};
  });
}

uint64_t bright_model_step(const bright_model* model) { return model ? model->ckpt.step : 0; }

void bright_model_free(bright_model* model) { delete model; }

bright_status bright_encode(const bright_model* model, const char* image_path,
                            const char* keycode_path) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(image_path, "image path");
    check_arg(keycode_path, "key-code path");
    const auto& m = model->ckpt.model;
    const auto image = bright::read_image(image_path);
    check_image_shape(m.config(), image, image_path);
    bright::save_keycodes(bright::encode_image(m, image), keycode_path);
  });
}

bright_status bright_decode(const bright_model* model, const char* keycode_path,
                            const char* image_path, const char* reference_path, double* psnr) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(keycode_path, "key-code path");
    check_arg(image_path, "image path");
    const auto& m = model->ckpt.model;
    const auto& cfg = m.config();
    const auto keys = bright::load_keycodes(keycode_path);
    const auto& v = keys.values;
    bright::require(v.h == cfg.code_h && v.w == cfg.code_w && v.c == cfg.code_channels(),
                    bright::ErrorKind::shape,
                    std::string(keycode_path) + " holds " + std::to_string(v.h) + "x" +
                        std::to_string(v.w) + "x" + std::to_string(v.c) + " keys, model expects " +
                        std::to_string(cfg.code_h) + "x" + std::to_string(cfg.code_w) + "x" +
                        std::to_string(cfg.code_channels()));
    auto out = bright::decode_keys(m, keys);
    for (auto& x : out.data) x = std::clamp(x, 0.0f, 1.0f);
    if (reference_path) {
      check_arg(psnr, "psnr");
      const auto ref = bright::read_image(reference_path);
      check_image_shape(cfg, ref, reference_path);
      *psnr = bright::psnr(out.data, ref.data);
    }
    bright::write_image(image_path, out);
  });
}

bright_status bright_reconstruct(const bright_model* model, const char* image_path,
                                 const char* out_path, double* psnr) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(image_path, "image path");
    check_arg(out_path, "output path");
    const auto& m = model->ckpt.model;
    const auto image = bright::read_image(image_path);
    check_image_shape(m.config(), image, image_path);
    const auto r = bright::reconstruct(m, image);
    if (psnr) *psnr = r.psnr;
    bright::write_image(out_path, r.image);
  });
}

bright_status bright_keycode_shape(const char* keycode_path, uint32_t* h, uint32_t* w,
                                   uint32_t* c) {
  return guarded([&] {
    check_arg(keycode_path, "key-code path");
    const auto keys = bright::load_keycodes(keycode_path);
    if (h) *h = keys.values.h;
    if (w) *w = keys.values.w;
    if (c) *c = keys.values.c;
  });
}

bright_status bright_eval_loss(const bright_model* model, const bright_dataset* data,
                               double amplitude, uint64_t seed, double* out) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(data, "dataset");
    check_arg(out, "out");
    *out = bright::evaluation_loss(model->ckpt.model, data->images, amplitude, seed);
  });
}

bright_status bright_sweep(const bright_model* model, const bright_dataset* data,
                           const double* amplitudes, size_t n, uint64_t seed, char** csv) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(data, "dataset");
    check_arg(csv, "csv");
    if (n > 0) check_arg(amplitudes, "amplitudes");
    const auto rows = bright::precision_sweep(model->ckpt.model, data->images,
                                              std::span<const double>(amplitudes, n), seed);
    *csv = dup_string(bright::sweep_csv(rows));
  });
}

bright_status bright_stats(const bright_model* model, const bright_dataset* data, int noise,
                           uint64_t seed, uint32_t threads, bright_hits** out) {
  return guarded([&] {
    check_arg(model, "model");
    check_arg(data, "dataset");
    check_arg(out, "out");
    *out = new bright_hits{bright::collect_model_hits(model->ckpt.model, data->images, noise != 0,
                                                      seed, threads)};
  });
}

bright_status bright_hits_shape(const bright_hits* hits, uint32_t* groups, uint32_t* levels) {
  return guarded([&] {
    check_arg(hits, "hits");
    if (groups) *groups = static_cast<uint32_t>(hits->groups.size());
    if (levels)
      *levels = hits->groups.empty() ? 0 : static_cast<uint32_t>(hits->groups[0].counts.size());
  });
}

bright_status bright_hits_usage_csv(const bright_hits* hits, char** csv) {
  return guarded([&] {
    check_arg(hits, "hits");
    check_arg(csv, "csv");
    *csv = dup_string(bright::usage_csv(hits->groups));
  });
}

bright_status bright_hits_histogram_csv(const bright_hits* hits, uint32_t group, uint32_t level,
                                        char** csv) {
  return guarded([&] {
    check_arg(hits, "hits");
    check_arg(csv, "csv");
    bright::require(group < hits->groups.size(), bright::ErrorKind::argument,
                    "group index out of range");
    *csv = dup_string(bright::hit_histogram_csv(hits->groups[group], level));
  });
}

bright_status bright_hits_summary(const bright_hits* hits, char** text) {
  return guarded([&] {
    check_arg(hits, "hits");
    check_arg(text, "text");
    *text = dup_string(bright::usage_summary(hits->groups));
  });
}

bright_status bright_hits_min_direct_fraction(const bright_hits* hits, int* has_direct,
                                              double* fraction) {
  return guarded([&] {
    check_arg(hits, "hits");
    check_arg(has_direct, "has_direct");
    check_arg(fraction, "fraction");
    const auto f = bright::min_direct_fraction(hits->groups);
    *has_direct = f.has_value() ? 1 : 0;
    *fraction = f.value_or(0.0);
  });
}

void bright_hits_free(bright_hits* hits) { delete hits; }

bright_status bright_param_count(const bright_config* cfg, bright_param_counts* out) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(out, "out");
    const auto p = bright::param_count(cfg->cfg.grid);
    *out = {p.table_params, p.mlp_params, p.total};
  });
}

bright_status bright_params_csv(const bright_config* cfg, char** csv) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(csv, "csv");
    const auto& g = cfg->cfg.grid;
    std::string out = "level,resolution,mode,vertices,table_size,params_per_group,params_all_groups\n";
    const auto layouts = bright::level_layouts(g);
    for (std::size_t l = 0; l < layouts.size(); ++l) {
      const auto& L = layouts[l];
      const std::uint64_t per_group = std::uint64_t(L.table_size) * g.entry_dim;
      out += std::to_string(l) + "," + std::to_string(L.resolution) + "," +
             (L.mode == bright::IndexingMode::direct ? "direct" : "hashed") + "," +
             std::to_string(bright::lattice_vertices(L.resolution, L.dims)) + "," +
             std::to_string(L.table_size) + "," + std::to_string(per_group) + "," +
             std::to_string(per_group * g.n_groups) + "\n";
    }
    *csv = dup_string(out);
  });
}

bright_status bright_gradcheck(const bright_config* cfg, uint32_t probes, double h, double tol,
                               int precision_bits, bright_gradcheck_report* out) {
  return guarded([&] {
    check_arg(cfg, "config");
    check_arg(out, "out");
    bright::require(precision_bits == 32 || precision_bits == 64, bright::ErrorKind::argument,
                    "precision must be 32 or 64 bits");
    const auto report = bright::end_to_end_gradient_check(
        cfg->cfg, probes, h, tol,
        precision_bits == 64 ? bright::Precision::f64 : bright::Precision::f32);
    out->probes = static_cast<uint32_t>(report.probes.size());
    out->failing = static_cast<uint32_t>(report.failing.size());
    out->redrawn = report.redrawn;
    out->max_rel_error = report.max_rel_error;
    out->passed = report.passed ? 1 : 0;
  });
}

bright_status bright_f1(double precision, double recall, double* out) {
  return guarded([&] {
    check_arg(out, "out");
    *out = bright::f1(precision, recall);
  });
}

}  // extern "C"
