#include "bright/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "bright/error.hpp"
#include "util.hpp"

namespace bright {

namespace {

using detail::mix_seed;
using detail::parallel_for;
using detail::splitmix64;

// Stream tags keep derived generators from colliding.
constexpr std::uint64_t kGroupStream = 0x67726f7570ULL;
constexpr std::uint64_t kBatchStream = 0x6261746368ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

bool exact_pow2_ratio(std::uint32_t big, std::uint32_t small, std::uint32_t& stages) {
  if (small == 0 || big % small != 0) return false;
  const std::uint32_t ratio = big / small;
  if (!std::has_single_bit(ratio)) return false;
  stages = static_cast<std::uint32_t>(std::countr_zero(ratio));
  return true;
}

template <class Real>
void activate(Activation a, Tensor3<Real>& t) {
  if (a == Activation::relu) relu_inplace<Real>(t.data);
}

template <class Real>
void activate_backward(Activation a, const Tensor3<Real>& pre, Tensor3<Real>& grad) {
  if (a == Activation::relu) relu_backward<Real>(pre.data, grad.data);
}

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v;
  h *= 0x100000001b3ULL;
}

template <class Real>
void sign_bits(std::uint64_t& h, std::span<const Real> pre) {
  std::uint64_t word = 0;
  std::size_t n = 0;
  for (Real v : pre) {
    word = (word << 1) | (v > Real(0) ? 1u : 0u);
    if (++n == 64) {
      fnv_mix(h, word);
      word = 0;
      n = 0;
    }
  }
  fnv_mix(h, word ^ (std::uint64_t(n) << 58));
}


}  // namespace

// ---- TrainConfig ----------------------------------------------------------

std::uint32_t TrainConfig::downsample_stages() const {
  std::uint32_t n = 0;
  exact_pow2_ratio(image_h, code_h, n);
  return n;
}

std::uint32_t TrainConfig::upsample_stages() const {
  std::uint32_t n = 0;
  exact_pow2_ratio(image_h, feature_h, n);
  return n;
}

void TrainConfig::validate() const {
  grid.validate();
  auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::config, msg); };
  need(image_h >= 1 && image_w >= 1 && image_c >= 1, "image dimensions must be positive");
  need(code_h >= 1 && code_w >= 1, "code dimensions must be positive");
  std::uint32_t dh = 0, dw = 0, uh = 0, uw = 0;
  need(exact_pow2_ratio(image_h, code_h, dh) && exact_pow2_ratio(image_w, code_w, dw) && dh == dw,
       "image size must be the code size times the same power of two on both axes");
  need(exact_pow2_ratio(image_h, feature_h, uh) && exact_pow2_ratio(image_w, feature_w, uw) &&
           uh == uw,
       "image size must be the feature size times the same power of two on both axes");
  need(feature_h % code_h == 0 && feature_w % code_w == 0,
       "feature size must be a whole multiple of the code size");
  need(encoder_channels >= 1 && decoder_channels >= 1, "network widths must be positive");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(dataset_size >= 1, "dataset_size must be >= 1");
  need(threads >= 1, "threads must be >= 1");
  need(lr_tables >= 0 && lr_networks >= 0, "learning rates must be non-negative");
  need(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must be in [0, 1)");
  need(eps_tables > 0 && eps_networks > 0, "Adam epsilons must be positive");
  need(l2_weight > 0, "l2_weight must be positive");
}

TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  return cfg;
}

// ---- Autoencoder ----------------------------------------------------------

template <class Real>
Autoencoder<Real>::Autoencoder(const TrainConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::uint32_t n_down = cfg_.downsample_stages();
  const std::uint32_t hidden = std::max<std::uint32_t>(n_down, 1);
  for (std::uint32_t k = 0; k < hidden; ++k)
    encoder_.emplace_back(k == 0 ? cfg_.image_c : cfg_.encoder_channels, cfg_.encoder_channels,
                          k < n_down ? 2u : 1u);
  encoder_.emplace_back(cfg_.encoder_channels, cfg_.code_channels(), 1u);

  decoder_.emplace_back(cfg_.feature_channels(), cfg_.decoder_channels, 1u);
  for (std::uint32_t u = 0; u < cfg_.upsample_stages(); ++u)
    decoder_.emplace_back(cfg_.decoder_channels, cfg_.decoder_channels, 1u);
  decoder_.emplace_back(cfg_.decoder_channels, cfg_.image_c, 1u);

  for (auto& l : encoder_) l.init_he_uniform(rng);
  for (auto& l : decoder_) l.init_he_uniform(rng);
  for (std::uint32_t s = 0; s < cfg_.grid.n_groups; ++s)
    groups_.emplace_back(cfg_.grid, mix_seed(seed, kGroupStream, s));
}

template <class Real>
Autoencoder<Real> Autoencoder<Real>::zeros_like() const {
  Autoencoder out = *this;
  out.for_each_tensor([](ParamGroup, std::span<Real> t) { std::fill(t.begin(), t.end(), Real(0)); });
  return out;
}

template <class Real>
Autoencoder<Real> Autoencoder<Real>::from_parts(const TrainConfig& cfg,
                                                std::vector<Conv2d<Real>> encoder,
                                                std::vector<HashGroup<Real>> groups,
                                                std::vector<Conv2d<Real>> decoder) {
  cfg.validate();
  // Shapes are checked against a freshly built reference.
  Autoencoder ref;
  ref.cfg_ = cfg;
  {
    Autoencoder shape(cfg, 0);
    auto same_convs = [](const auto& a, const auto& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].in_ch != b[i].in_ch || a[i].out_ch != b[i].out_ch ||
            a[i].stride != b[i].stride || a[i].weights.size() != b[i].weights.size() ||
            a[i].bias.size() != b[i].bias.size())
          return false;
      return true;
    };
    require(same_convs(shape.encoder_, encoder), ErrorKind::format,
            "model: encoder layers do not match the config");
    require(same_convs(shape.decoder_, decoder), ErrorKind::format,
            "model: decoder layers do not match the config");
    require(groups.size() == cfg.grid.n_groups, ErrorKind::format,
            "model: group count does not match the config");
    for (const auto& g : groups)
      require(g.config() == cfg.grid, ErrorKind::format, "model: group config mismatch");
  }
  ref.encoder_ = std::move(encoder);
  ref.groups_ = std::move(groups);
  ref.decoder_ = std::move(decoder);
  return ref;
}

// ---- forward / backward ---------------------------------------------------

namespace {

template <class Real>
Tensor3<Real> run_encoder(const Autoencoder<Real>& model, const Tensor3<Real>& image,
                          SampleTrace<Real>* trace) {
  const auto& cfg = model.config();
  require(image.h == cfg.image_h && image.w == cfg.image_w && image.c == cfg.image_c,
          ErrorKind::shape, "image is " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                                "x" + std::to_string(image.c) + ", model expects " +
                                std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) +
                                "x" + std::to_string(cfg.image_c));
  const auto& enc = model.encoder();
  if (trace) {
    trace->enc_inputs.clear();
    trace->enc_pre.clear();
  }
  Tensor3<Real> x = image;
  for (std::size_t k = 0; k + 1 < enc.size(); ++k) {
    Tensor3<Real> pre = enc[k].forward(x);
    if (trace) {
      trace->enc_inputs.push_back(std::move(x));
      trace->enc_pre.push_back(pre);
    }
    activate(cfg.activation, pre);
    x = std::move(pre);
  }
  Tensor3<Real> raw = enc.back().forward(x);
  if (trace) trace->enc_inputs.push_back(std::move(x));
  return raw;
}

template <class Real>
Tensor3<Real> run_decoder(const Autoencoder<Real>& model, Tensor3<Real> x,
                          SampleTrace<Real>* trace) {
  const auto& cfg = model.config();
  const auto& dec = model.decoder();
  if (trace) {
    trace->dec_inputs.clear();
    trace->dec_pre.clear();
  }
  for (std::size_t k = 0; k + 1 < dec.size(); ++k) {
    if (k > 0) x = upsample2x(x);
    Tensor3<Real> pre = dec[k].forward(x);
    if (trace) {
      trace->dec_inputs.push_back(std::move(x));
      trace->dec_pre.push_back(pre);
    }
    activate(cfg.activation, pre);
    x = std::move(pre);
  }
  Tensor3<Real> out = dec.back().forward(x);
  if (trace) trace->dec_inputs.push_back(std::move(x));
  return out;
}

}  // namespace

template <class Real>
KeyCodeGrid<Real> encode_image(const Autoencoder<Real>& model, const Tensor3<Real>& image) {
  return normalize_keys(run_encoder<Real>(model, image, nullptr));
}

template <class Real>
Tensor3<Real> decode_keys(const Autoencoder<Real>& model, const KeyCodeGrid<Real>& keys,
                          const KeyPerturbation* perturb) {
  const auto& cfg = model.config();
  require(keys.values.h == cfg.code_h && keys.values.w == cfg.code_w &&
              keys.values.c == cfg.code_channels(),
          ErrorKind::shape, "key code is " + std::to_string(keys.values.h) + "x" +
                                std::to_string(keys.values.w) + "x" +
                                std::to_string(keys.values.c) + ", model expects " +
                                std::to_string(cfg.code_h) + "x" + std::to_string(cfg.code_w) +
                                "x" + std::to_string(cfg.code_channels()));
  auto tiled = tile_interleave(keys, cfg.feature_h, cfg.feature_w);
  auto block = assemble_feature_block<Real>(tiled, model.groups(), perturb);
  return run_decoder<Real>(model, std::move(block.values), nullptr);
}

template <class Real>
const Tensor3<Real>& forward_sample(const Autoencoder<Real>& model, const Tensor3<Real>& image,
                                    const KeyPerturbation* perturb, SampleTrace<Real>& trace) {
  const auto& cfg = model.config();
  trace.raw_keys = run_encoder(model, image, &trace);
  trace.keys = normalize_keys(trace.raw_keys);
  trace.tiled = tile_interleave(trace.keys, cfg.feature_h, cfg.feature_w);
  auto block = assemble_feature_block<Real>(trace.tiled, model.groups(), perturb, &trace.block_cache);
  trace.output = run_decoder(model, std::move(block.values), &trace);
  return trace.output;
}

template <class Real>
void backward_sample(const Autoencoder<Real>& model, const SampleTrace<Real>& trace,
                     const Tensor3<Real>& output_grad, Autoencoder<Real>& grads) {
  const auto& cfg = model.config();
  require(output_grad.same_shape(trace.output), ErrorKind::shape,
          "backward_sample: output gradient shape mismatch");
  const auto& dec = model.decoder();
  const std::size_t nd = dec.size();
  Tensor3<Real> g;
  dec[nd - 1].backward(trace.dec_inputs[nd - 1], output_grad, grads.decoder()[nd - 1], &g);
  for (std::size_t k = nd - 1; k-- > 0;) {
    // g is dL/d(activation of layer k), possibly seen through an upsample.
    if (k + 1 < nd - 1) g = upsample2x_backward(g);
    activate_backward(cfg.activation, trace.dec_pre[k], g);
    Tensor3<Real> gin;
    dec[k].backward(trace.dec_inputs[k], g, grads.decoder()[k], &gin);
    g = std::move(gin);
  }

  // Borrow the gradient model's table/MLP storage as GroupGrads.
  auto& gg_src = grads.groups();
  std::vector<GroupGrads<Real>> gg(gg_src.size());
  for (std::size_t s = 0; s < gg_src.size(); ++s) {
    for (auto& level : gg_src[s].levels()) gg[s].tables.push_back(std::move(level.entries));
    for (auto& layer : gg_src[s].mlp()) gg[s].mlp.push_back(std::move(layer));
  }
  Tensor3<Real> tiled_grad =
      feature_block_backward<Real>(trace.tiled, model.groups(), trace.block_cache, g, gg);
  for (std::size_t s = 0; s < gg_src.size(); ++s) {
    auto levels = gg_src[s].levels();
    for (std::size_t l = 0; l < levels.size(); ++l) levels[l].entries = std::move(gg[s].tables[l]);
    auto mlp = gg_src[s].mlp();
    for (std::size_t l = 0; l < mlp.size(); ++l) mlp[l] = std::move(gg[s].mlp[l]);
  }

  Tensor3<Real> key_grad = untile_gradient(tiled_grad, cfg.code_h, cfg.code_w);
  for (std::size_t i = 0; i < key_grad.data.size(); ++i) {
    const Real sgm = trace.keys.values.data[i];
    key_grad.data[i] *= sgm * (Real(1) - sgm);
  }

  const auto& enc = model.encoder();
  const std::size_t ne = enc.size();
  g = std::move(key_grad);
  for (std::size_t k = ne; k-- > 0;) {
    if (k + 1 < ne) activate_backward(cfg.activation, trace.enc_pre[k], g);
    Tensor3<Real> gin;
    enc[k].backward(trace.enc_inputs[k], g, grads.encoder()[k], k > 0 ? &gin : nullptr);
    g = std::move(gin);
  }
}

template <class Real>
std::uint64_t trace_signature(const SampleTrace<Real>& trace) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : trace.enc_pre) sign_bits<Real>(h, t.data);
  for (const auto& t : trace.dec_pre) sign_bits<Real>(h, t.data);
  for (const auto& fwd : trace.block_cache) {
    fnv_mix(h, fwd.query.clamped_mask);
    const auto& r = fwd.retrieval;
    for (std::size_t l = 0; r.corners_per_level && l < r.corners.size() / r.corners_per_level; ++l)
      for (std::uint32_t d = 0; d < fwd.query.dims; ++d)
        fnv_mix(h, r.corners[l * r.corners_per_level].lattice[d]);
    sign_bits<Real>(h, fwd.hidden_pre);
  }
  return h;
}

// ---- dataset ----------------------------------------------------------------

Dataset synthetic_dataset(std::uint32_t count, std::uint32_t h, std::uint32_t w, std::uint32_t c,
                          std::uint64_t seed) {
  require(count >= 1 && h >= 1 && w >= 1 && c >= 1, ErrorKind::data,
          "synthetic dataset: empty shape");
  Dataset out;
  out.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    std::mt19937_64 rng(mix_seed(seed, n));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto color = [&] {
      std::vector<double> col(c);
      for (auto& v : col) v = 0.1 + 0.8 * u(rng);
      return col;
    };
    const auto c0 = color(), c1 = color(), c2 = color(), c3 = color();
    const double angle = 2.0 * 3.14159265358979323846 * u(rng);
    const bool disc = u(rng) < 0.6;
    const double cx = 0.25 + 0.5 * u(rng), cy = 0.25 + 0.5 * u(rng);
    const double radius = 0.12 + 0.18 * u(rng);
    const bool checker = u(rng) < 0.35;
    const std::uint32_t cell = u(rng) < 0.5 ? 8 : 16;
    const std::uint32_t phase_x = static_cast<std::uint32_t>(u(rng) * cell);
    const std::uint32_t phase_y = static_cast<std::uint32_t>(u(rng) * cell);

    Tensor3<float> img(h, w, c);
    for (std::uint32_t y = 0; y < h; ++y)
      for (std::uint32_t x = 0; x < w; ++x) {
        const double fx = (x + 0.5) / w, fy = (y + 0.5) / h;
        double t = 0.5 + ((fx - 0.5) * std::cos(angle) + (fy - 0.5) * std::sin(angle)) / 1.4142;
        t = std::clamp(t, 0.0, 1.0);
        double disc_a = 0;
        if (disc) {
          const double dist = std::hypot(fx - cx, fy - cy);
          const double edge = 1.5 / double(std::min(h, w));
          disc_a = std::clamp((radius - dist) / edge + 0.5, 0.0, 1.0);
        }
        const bool odd = checker && (((x + phase_x) / cell + (y + phase_y) / cell) % 2 == 1);
        for (std::uint32_t ch = 0; ch < c; ++ch) {
          double v = c0[ch] * (1 - t) + c1[ch] * t;
          v = v * (1 - disc_a) + c2[ch] * disc_a;
          if (odd) v = 0.5 * v + 0.5 * c3[ch];
          img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    out.push_back(std::move(img));
  }
  return out;
}

// ---- training -----------------------------------------------------------------

Optimizer make_optimizer(const Autoencoder<float>& model) {
  const auto& cfg = model.config();
  Optimizer opt;
  model.for_each_tensor([&](ParamGroup g, std::span<const float> t) {
    AdamHyper hyper;
    hyper.beta1 = cfg.beta1;
    hyper.beta2 = cfg.beta2;
    if (g == ParamGroup::tables) {
      hyper.lr = cfg.lr_tables;
      hyper.eps = cfg.eps_tables;
    } else {
      hyper.lr = cfg.lr_networks;
      hyper.eps = cfg.eps_networks;
    }
    opt.states.emplace_back(t.size(), hyper);
  });
  return opt;
}

double psnr_from_mse(double mse) {
  if (!(mse > 0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::shape, "psnr: size mismatch");
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    sum += d * d;
  }
  return psnr_from_mse(sum / double(a.size()));
}

namespace {

void check_dataset(const TrainConfig& cfg, const Dataset& data) {
  require(!data.empty(), ErrorKind::data, "dataset is empty");
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& img = data[n];
    require(img.h == cfg.image_h && img.w == cfg.image_w && img.c == cfg.image_c, ErrorKind::data,
            "image " + std::to_string(n) + " is " + std::to_string(img.h) + "x" +
                std::to_string(img.w) + "x" + std::to_string(img.c) + ", config expects " +
                std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) + "x" +
                std::to_string(cfg.image_c));
    for (float v : img.data)
      if (!(v >= 0.0f && v <= 1.0f))
        fail(ErrorKind::data, "image " + std::to_string(n) + " has values outside [0,1]");
  }
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::uint32_t batch,
                                       std::size_t n) {
  std::vector<std::size_t> out(batch);
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm(n);
  for (std::uint32_t b = 0; b < batch; ++b) {
    const std::uint64_t pos = step * batch + b;
    const std::uint64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t(0));
      std::mt19937_64 rng(mix_seed(seed, kBatchStream, epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out[b] = perm[pos % n];
  }
  return out;
}

struct SlotResult {
  double loss = 0;
  double mse = 0;
};

}  // namespace

void train_steps(const TrainConfig& cfg, const Dataset& data, Checkpoint& ckpt,
                 std::uint32_t steps, std::vector<LossRecord>* curve,
                 const StepCallback& on_step) {
  cfg.validate();
  check_dataset(cfg, data);
  auto& model = ckpt.model;
  const std::uint32_t batch = cfg.batch_size;
  std::vector<Autoencoder<float>> slot_grads(batch, model.zeros_like());
  std::vector<SampleTrace<float>> traces(batch);
  std::vector<SlotResult> results(batch);
  Autoencoder<float> total = model.zeros_like();

  for (std::uint32_t it = 0; it < steps; ++it) {
    const std::uint64_t step = ckpt.step;
    const auto idx = batch_indices(cfg.seed, step, batch, data.size());
    parallel_for(batch, cfg.threads, [&](std::uint32_t b) {
      auto& g = slot_grads[b];
      g.for_each_tensor([](ParamGroup, std::span<float> t) { std::fill(t.begin(), t.end(), 0.0f); });
      const auto& image = data[idx[b]];
      std::mt19937_64 rng(mix_seed(cfg.seed, kNoiseStream, step * batch + b));
      KeyPerturbation noise = KeyPerturbation::training(rng, cfg.grid.r_max);
      const auto& out = forward_sample(model, image, cfg.noise ? &noise : nullptr, traces[b]);
      auto lg = l2_loss<float>(out.data, image.data, cfg.l2_weight);
      results[b] = {lg.loss, lg.loss / cfg.l2_weight};
      Tensor3<float> og(out.h, out.w, out.c);
      og.data = std::move(lg.grad);
      backward_sample(model, traces[b], og, g);
    });

    double loss = 0, mse = 0;
    for (const auto& r : results) {
      loss += r.loss;
      mse += r.mse;
    }
    loss /= batch;
    mse /= batch;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (batch images";
      for (auto i : idx) msg << ' ' << i;
      msg << ")";
      fail(ErrorKind::non_finite, msg.str());
    }

    // Sample-ordered reduction keeps the result independent of threading.
    std::vector<std::span<float>> dst;
    total.for_each_tensor([&](ParamGroup, std::span<float> t) {
      std::fill(t.begin(), t.end(), 0.0f);
      dst.push_back(t);
    });
    for (auto& g : slot_grads) {
      std::size_t k = 0;
      g.for_each_tensor([&](ParamGroup, std::span<float> t) {
        auto& d = dst[k++];
        for (std::size_t i = 0; i < t.size(); ++i) d[i] += t[i];
      });
    }
    const float inv = 1.0f / float(batch);
    for (auto& d : dst)
      for (auto& v : d) v *= inv;

    std::size_t k = 0;
    model.for_each_tensor([&](ParamGroup, std::span<float> p) {
      adam_step<float>(p, dst[k], ckpt.optimizer.states[k]);
      ++k;
    });

    LossRecord rec{static_cast<std::uint32_t>(step), loss, psnr_from_mse(mse)};
    if (curve) curve->push_back(rec);
    if (on_step) on_step(rec);
    ++ckpt.step;
  }
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const StepCallback& on_step) {
  cfg.validate();
  check_dataset(cfg, data);
  TrainResult result;
  result.checkpoint.model = Autoencoder<float>(cfg, cfg.seed);
  result.checkpoint.optimizer = make_optimizer(result.checkpoint.model);
  result.curve.reserve(cfg.steps);
  train_steps(cfg, data, result.checkpoint, cfg.steps, &result.curve, on_step);
  return result;
}

Reconstruction reconstruct(const Autoencoder<float>& model, const Tensor3<float>& image) {
  auto keys = encode_image(model, image);
  Reconstruction r;
  r.image = decode_keys(model, keys);
  for (auto& v : r.image.data) v = std::clamp(v, 0.0f, 1.0f);
  r.psnr = psnr(r.image.data, image.data);
  return r;
}

double evaluation_loss(const Autoencoder<float>& model, const Dataset& data, double amplitude,
                       std::uint64_t seed) {
  require(!data.empty(), ErrorKind::data, "evaluation_loss: empty dataset");
  require(amplitude >= 0, ErrorKind::argument, "evaluation_loss: negative amplitude");
  double sum = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    std::mt19937_64 rng(mix_seed(seed, kEvalStream, n));
    KeyPerturbation p = KeyPerturbation::uniform(rng, amplitude);
    auto keys = encode_image(model, data[n]);
    auto out = decode_keys(model, keys, amplitude > 0 ? &p : nullptr);
    sum += l2_loss<float>(out.data, data[n].data, 1.0).loss;
  }
  return sum / double(data.size());
}

double mean_image_psnr(const Dataset& data) {
  require(!data.empty(), ErrorKind::data, "mean_image_psnr: empty dataset");
  std::vector<double> mean(data.front().size(), 0.0);
  for (const auto& img : data)
    for (std::size_t i = 0; i < img.size(); ++i) mean[i] += img.data[i];
  for (auto& m : mean) m /= double(data.size());
  double sum = 0;
  for (const auto& img : data)
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double d = img.data[i] - mean[i];
      sum += d * d;
    }
  return psnr_from_mse(sum / (double(data.size()) * double(mean.size())));
}

// ---- gradient check -------------------------------------------------------------

TrainConfig gradcheck_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.image_h = cfg.image_w = 8;
  cfg.image_c = 3;
  cfg.grid.n_groups = 2;
  cfg.grid.n_resolutions = 2;
  cfg.grid.key_len = 1;
  cfg.grid.entry_dim = 2;
  cfg.grid.max_entries = 64;
  cfg.grid.r_min = 2;
  cfg.grid.r_max = 4;
  cfg.grid.out_dim_per_group = 4;
  cfg.grid.mlp_hidden = 8;
  cfg.code_h = cfg.code_w = 4;
  cfg.feature_h = cfg.feature_w = 8;
  cfg.encoder_channels = 4;
  cfg.decoder_channels = 4;
  cfg.dataset_size = 2;
  cfg.batch_size = 2;
  cfg.steps = 0;
  cfg.noise = false;
  cfg.seed = seed;
  return cfg;
}

double gradient_rel_error(double analytic, double numeric) {
  constexpr double kFloor = 1e-6;
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kFloor});
  return std::abs(analytic - numeric) / denom;
}

template <class Real>
LossScalar<Real> batch_loss(const Autoencoder<Real>& model, std::span<const Tensor3<Real>> images,
                                  double l2_weight, Autoencoder<Real>* grads,
                                  std::uint64_t* signature) {
  LossScalar<Real> total = 0;
  std::uint64_t sig = 0;
  SampleTrace<Real> trace;
  const Real inv = Real(1) / Real(images.size());
  for (const auto& img : images) {
    const auto& out = forward_sample(model, img, nullptr, trace);
    auto lg = l2_loss<Real>(out.data, img.data, l2_weight);
    total += lg.loss;
    sig = splitmix64(sig ^ trace_signature(trace));
    if (grads) {
      Tensor3<Real> og(out.h, out.w, out.c);
      og.data = std::move(lg.grad);
      for (auto& v : og.data) v *= inv;
      backward_sample(model, trace, og, *grads);
    }
  }
  if (signature) *signature = sig;
  return total / LossScalar<Real>(images.size());
}

namespace {

struct TensorRef {
  ParamGroup group;
  std::size_t tensor;
  std::size_t size;
};

}  // namespace

GradientCheckReport end_to_end_gradient_check(const TrainConfig& cfg, std::uint32_t n_probes,
                                              double h, double tol, Precision precision) {
  cfg.validate();
  require(h > 0, ErrorKind::argument, "gradient check: step must be positive");
  const Dataset data_f =
      synthetic_dataset(cfg.dataset_size, cfg.image_h, cfg.image_w, cfg.image_c, cfg.seed + 1);
  std::vector<Tensor3<double>> data_d;
  for (const auto& img : data_f) data_d.push_back(tensor_cast<double>(img));

  // Tables start near zero; spread them so key gradients are not negligible.
  Autoencoder<float> model_f(cfg, cfg.seed);
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, kProbeStream, 1));
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& g : model_f.groups())
      for (auto& level : g.levels())
        for (auto& e : level.entries) e = static_cast<float>(u(rng));
  }
  Autoencoder<double> model_d = model_f.cast<double>();
  // Difference quotients are taken in extended precision so their rounding
  // noise stays well below the tolerance even for tiny gradients.
  using Ref = long double;
  Autoencoder<Ref> model_r = model_f.cast<Ref>();
  std::vector<Tensor3<Ref>> data_r;
  for (const auto& img : data_f) data_r.push_back(tensor_cast<Ref>(img));

  std::vector<double> analytic_flat;
  std::vector<TensorRef> tensors;
  if (precision == Precision::f64) {
    auto grads = model_d.zeros_like();
    batch_loss<double>(model_d, data_d, cfg.l2_weight, &grads, nullptr);
    grads.for_each_tensor([&](ParamGroup g, std::span<const double> t) {
      tensors.push_back({g, tensors.size(), t.size()});
      analytic_flat.insert(analytic_flat.end(), t.begin(), t.end());
    });
  } else {
    auto grads = model_f.zeros_like();
    batch_loss<float>(model_f, data_f, cfg.l2_weight, &grads, nullptr);
    grads.for_each_tensor([&](ParamGroup g, std::span<const float> t) {
      tensors.push_back({g, tensors.size(), t.size()});
      analytic_flat.insert(analytic_flat.end(), t.begin(), t.end());
    });
  }
  std::vector<std::size_t> tensor_offset;
  {
    std::size_t off = 0;
    for (const auto& t : tensors) {
      tensor_offset.push_back(off);
      off += t.size;
    }
  }

  // Table entries eligible for probing: those touched by the forward pass.
  std::vector<std::set<std::uint32_t>> touched;  // per table tensor
  std::vector<std::size_t> table_tensors;
  for (const auto& t : tensors)
    if (t.group == ParamGroup::tables) table_tensors.push_back(t.tensor);
  touched.resize(table_tensors.size());
  {
    SampleTrace<double> trace;
    const std::size_t levels = cfg.grid.n_resolutions;
    for (const auto& img : data_d) {
      forward_sample(model_d, img, nullptr, trace);
      for (std::size_t c = 0; c < trace.block_cache.size(); ++c) {
        const std::size_t s = c % cfg.grid.n_groups;
        const auto& r = trace.block_cache[c].retrieval;
        for (std::size_t l = 0; l < levels; ++l)
          for (const auto& corner : r.level_corners(static_cast<std::uint32_t>(l)))
            for (std::uint32_t ch = 0; ch < cfg.grid.entry_dim; ++ch)
              touched[s * levels + l].insert(corner.index * cfg.grid.entry_dim + ch);
      }
    }
  }

  std::vector<std::span<Ref>> params;
  model_r.for_each_tensor([&](ParamGroup, std::span<Ref> t) { params.push_back(t); });
  std::uint64_t base_sig = 0;
  batch_loss<Ref>(model_r, data_r, cfg.l2_weight, nullptr, &base_sig);

  std::mt19937_64 rng(mix_seed(cfg.seed, kProbeStream, 2));
  const ParamGroup kinds[] = {ParamGroup::encoder, ParamGroup::tables, ParamGroup::mlp,
                              ParamGroup::decoder};
  GradientCheckReport report;
  const std::uint32_t max_attempts = 50 * std::max<std::uint32_t>(n_probes, 1);
  std::uint32_t attempts = 0;
  while (report.probes.size() < n_probes && attempts++ < max_attempts) {
    const ParamGroup kind = kinds[rng() % 4];
    std::size_t pool_size = 0;
    std::vector<std::size_t> candidates;
    for (const auto& t : tensors)
      if (t.group == kind) candidates.push_back(t.tensor);
    if (candidates.empty()) continue;
    std::size_t tensor = 0, index = 0;
    if (kind == ParamGroup::tables) {
      for (std::size_t k = 0; k < table_tensors.size(); ++k) pool_size += touched[k].size();
      if (pool_size == 0) continue;
      std::size_t pick = rng() % pool_size;
      for (std::size_t k = 0; k < table_tensors.size(); ++k) {
        if (pick < touched[k].size()) {
          tensor = table_tensors[k];
          index = *std::next(touched[k].begin(), std::ptrdiff_t(pick));
          break;
        }
        pick -= touched[k].size();
      }
    } else {
      for (auto t : candidates) pool_size += tensors[t].size;
      std::size_t pick = rng() % pool_size;
      for (auto t : candidates) {
        if (pick < tensors[t].size) {
          tensor = t;
          index = pick;
          break;
        }
        pick -= tensors[t].size;
      }
    }

    Ref& theta = params[tensor][index];
    const Ref saved = theta;
    std::uint64_t sig_p = 0, sig_m = 0;
    theta = saved + Ref(h);
    const Ref lp = batch_loss<Ref>(model_r, data_r, cfg.l2_weight, nullptr, &sig_p);
    theta = saved - Ref(h);
    const Ref lm = batch_loss<Ref>(model_r, data_r, cfg.l2_weight, nullptr, &sig_m);
    theta = saved;
    if (sig_p != base_sig || sig_m != base_sig) {
      ++report.redrawn;
      continue;
    }
    GradientProbe p;
    p.group = kind;
    p.tensor = tensor;
    p.index = index;
    p.analytic = analytic_flat[tensor_offset[tensor] + index];
    p.numeric = static_cast<double>((lp - lm) / (Ref(2) * Ref(h)));
    p.rel_error = gradient_rel_error(p.analytic, p.numeric);
    report.max_rel_error = std::max(report.max_rel_error, p.rel_error);
    if (p.rel_error > tol) report.failing.push_back(p);
    report.probes.push_back(p);
  }
  report.passed = report.probes.size() == n_probes && report.failing.empty();
  return report;
}

#define BRIGHT_INSTANTIATE(R)                                                                   \
  template class Autoencoder<R>;                                                                \
  template KeyCodeGrid<R> encode_image<R>(const Autoencoder<R>&, const Tensor3<R>&);            \
  template Tensor3<R> decode_keys<R>(const Autoencoder<R>&, const KeyCodeGrid<R>&,              \
                                     const KeyPerturbation*);                                   \
  template const Tensor3<R>& forward_sample<R>(const Autoencoder<R>&, const Tensor3<R>&,        \
                                               const KeyPerturbation*, SampleTrace<R>&);        \
  template void backward_sample<R>(const Autoencoder<R>&, const SampleTrace<R>&,                \
                                   const Tensor3<R>&, Autoencoder<R>&);                         \
  template std::uint64_t trace_signature<R>(const SampleTrace<R>&);                             \
  template LossScalar<R> batch_loss<R>(const Autoencoder<R>&, std::span<const Tensor3<R>>, double,     \
                                Autoencoder<R>*, std::uint64_t*);

BRIGHT_INSTANTIATE(float)
BRIGHT_INSTANTIATE(double)
BRIGHT_INSTANTIATE(long double)
#undef BRIGHT_INSTANTIATE

}  // namespace bright
