#pragma once

// Desk-scale autoencoder: conv encoder -> sigmoid keys -> tiled hash-grid
// retrieval -> conv decoder, trained end to end with an L2 objective.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bright/hashgrid.hpp"
#include "bright/keycodes.hpp"
#include "bright/tinynn.hpp"

namespace bright {

struct TrainConfig {
  std::uint32_t image_h = 32;
  std::uint32_t image_w = 32;
  std::uint32_t image_c = 3;
  GridConfig grid;
  std::uint32_t code_h = 8;
  std::uint32_t code_w = 8;
  std::uint32_t feature_h = 16;
  std::uint32_t feature_w = 16;
  std::uint32_t encoder_channels = 16;
  std::uint32_t decoder_channels = 16;
  Activation activation = Activation::relu;
  std::uint32_t steps = 2000;
  std::uint32_t batch_size = 8;
  std::uint32_t dataset_size = 64;
  std::uint64_t seed = 0;
  bool noise = true;
  double lr_tables = 2e-3;
  double lr_networks = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps_tables = kTableAdamEps;
  double eps_networks = kNetworkAdamEps;
  double l2_weight = 20.0;
  std::uint32_t threads = 1;

  /// Throws Error(config) when the encoder/decoder shape chain does not close.
  void validate() const;

  std::uint32_t code_channels() const { return grid.n_groups * grid.key_len; }
  std::uint32_t feature_channels() const { return grid.feature_dim(); }
  std::uint32_t downsample_stages() const;
  std::uint32_t upsample_stages() const;

  bool operator==(const TrainConfig&) const = default;
};

/// The default desk-scale configuration (32x32 RGB, 2 groups, 4 levels).
TrainConfig desk_config(std::uint64_t seed);

/// Flat key=value text. Unknown keys, malformed values and a missing seed
/// are rejected with Error(config).
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string format_train_config(const TrainConfig& cfg);

enum class ParamGroup : std::uint8_t { encoder, tables, mlp, decoder };

template <class Real>
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const TrainConfig& cfg, std::uint64_t seed);

  const TrainConfig& config() const { return cfg_; }

  std::vector<Conv2d<Real>>& encoder() { return encoder_; }
  const std::vector<Conv2d<Real>>& encoder() const { return encoder_; }
  std::vector<HashGroup<Real>>& groups() { return groups_; }
  const std::vector<HashGroup<Real>>& groups() const { return groups_; }
  std::vector<Conv2d<Real>>& decoder() { return decoder_; }
  const std::vector<Conv2d<Real>>& decoder() const { return decoder_; }

  /// Visits every parameter tensor in a fixed order.
  template <class Fn>
  void for_each_tensor(Fn&& fn);
  template <class Fn>
  void for_each_tensor(Fn&& fn) const;

  /// A zero-valued model with identical shapes, used to accumulate gradients.
  Autoencoder zeros_like() const;

  template <class To>
  Autoencoder<To> cast() const;

  static Autoencoder from_parts(const TrainConfig& cfg, std::vector<Conv2d<Real>> encoder,
                                std::vector<HashGroup<Real>> groups,
                                std::vector<Conv2d<Real>> decoder);

  bool operator==(const Autoencoder&) const = default;

 private:
  template <class>
  friend class Autoencoder;

  TrainConfig cfg_;
  std::vector<Conv2d<Real>> encoder_;
  std::vector<HashGroup<Real>> groups_;
  std::vector<Conv2d<Real>> decoder_;
};

/// Everything the backward pass needs from one sample's forward pass.
template <class Real>
struct SampleTrace {
  std::vector<Tensor3<Real>> enc_inputs;
  std::vector<Tensor3<Real>> enc_pre;
  Tensor3<Real> raw_keys;
  KeyCodeGrid<Real> keys;
  TiledKeyGrid<Real> tiled;
  BlockCache<Real> block_cache;
  std::vector<Tensor3<Real>> dec_inputs;
  std::vector<Tensor3<Real>> dec_pre;
  Tensor3<Real> output;
};

template <class Real>
KeyCodeGrid<Real> encode_image(const Autoencoder<Real>& model, const Tensor3<Real>& image);

template <class Real>
Tensor3<Real> decode_keys(const Autoencoder<Real>& model, const KeyCodeGrid<Real>& keys,
                          const KeyPerturbation* perturb = nullptr);

template <class Real>
const Tensor3<Real>& forward_sample(const Autoencoder<Real>& model, const Tensor3<Real>& image,
                                    const KeyPerturbation* perturb, SampleTrace<Real>& trace);

/// Accumulates dL/dtheta into `grads` (a zeros_like of the model).
template <class Real>
void backward_sample(const Autoencoder<Real>& model, const SampleTrace<Real>& trace,
                     const Tensor3<Real>& output_grad, Autoencoder<Real>& grads);

/// Mean weighted L2 loss over `images`. When `grads` is given, the gradient
/// of that mean is accumulated into it.
template <class Real>
LossScalar<Real> batch_loss(const Autoencoder<Real>& model, std::span<const Tensor3<Real>> images,
                  double l2_weight, Autoencoder<Real>* grads = nullptr,
                  std::uint64_t* signature = nullptr);

/// Hash of every non-differentiable branch taken by the trace: ReLU masks,
/// cell indices and clamp flags. Equal signatures mean the loss is smooth
/// along the segment between two parameter settings.
template <class Real>
std::uint64_t trace_signature(const SampleTrace<Real>& trace);

using Dataset = std::vector<Tensor3<float>>;

/// Seeded synthetic images: blended gradients, discs and checkerboards in [0,1].
Dataset synthetic_dataset(std::uint32_t count, std::uint32_t h, std::uint32_t w, std::uint32_t c,
                          std::uint64_t seed);

struct Optimizer {
  // One state per tensor, in for_each_tensor order.
  std::vector<AdamState<float>> states;
  bool operator==(const Optimizer&) const = default;
};

Optimizer make_optimizer(const Autoencoder<float>& model);

struct Checkpoint {
  Autoencoder<float> model;
  Optimizer optimizer;
  std::uint64_t step = 0;
  bool operator==(const Checkpoint&) const = default;
};

struct LossRecord {
  std::uint32_t step = 0;
  double loss = 0;
  double psnr = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> curve;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Full training run. Deterministic for a fixed config (including seed),
/// independent of `threads`. Throws Error(non_finite) on a NaN/inf loss.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const StepCallback& on_step = {});

/// Continues training an existing checkpoint for `steps` more steps.
void train_steps(const TrainConfig& cfg, const Dataset& data, Checkpoint& ckpt,
                 std::uint32_t steps, std::vector<LossRecord>* curve,
                 const StepCallback& on_step = {});

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1/mse) for images in [0,1]; kPsnrCap when mse == 0.
double psnr_from_mse(double mse);
double psnr(std::span<const float> a, std::span<const float> b);

struct Reconstruction {
  Tensor3<float> image;  // clamped to [0,1]
  double psnr = 0;
};

/// Noise-free forward pass.
Reconstruction reconstruct(const Autoencoder<float>& model, const Tensor3<float>& image);

/// Mean unweighted MSE over `data`, keys perturbed uniformly in
/// [-amplitude, amplitude] (no perturbation at amplitude 0).
double evaluation_loss(const Autoencoder<float>& model, const Dataset& data, double amplitude,
                       std::uint64_t seed);

/// PSNR of always predicting the per-pixel dataset mean.
double mean_image_psnr(const Dataset& data);

enum class Precision : std::uint8_t { f32, f64 };

struct GradientProbe {
  ParamGroup group = ParamGroup::encoder;
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradientCheckReport {
  std::vector<GradientProbe> probes;
  std::vector<GradientProbe> failing;
  double max_rel_error = 0;
  std::uint32_t redrawn = 0;  // probes that straddled a kink and were resampled
  bool passed = false;
};

/// Tiny configuration for gradient checks (8x8 images, 2 levels).
TrainConfig gradcheck_config(std::uint64_t seed);

/// Compares analytic dL/dtheta, computed in the requested precision, to
/// central differences at n_probes random scalar parameters spread over
/// encoder, tables, MLP and decoder. The difference quotients always run on
/// an exact long double copy of the model.
GradientCheckReport end_to_end_gradient_check(const TrainConfig& cfg, std::uint32_t n_probes,
                                              double h, double tol, Precision precision);

/// Relative error with an absolute floor on the denominator.
double gradient_rel_error(double analytic, double numeric);

// ---- template definitions ----

template <class Real>
template <class Fn>
void Autoencoder<Real>::for_each_tensor(Fn&& fn) {
  for (auto& l : encoder_)
    for (auto p : l.parameters()) fn(ParamGroup::encoder, p);
  for (auto& g : groups_) {
    for (auto& level : g.levels()) fn(ParamGroup::tables, std::span<Real>(level.entries));
    for (auto& l : g.mlp())
      for (auto p : l.parameters()) fn(ParamGroup::mlp, p);
  }
  for (auto& l : decoder_)
    for (auto p : l.parameters()) fn(ParamGroup::decoder, p);
}

template <class Real>
template <class Fn>
void Autoencoder<Real>::for_each_tensor(Fn&& fn) const {
  for (const auto& l : encoder_)
    for (auto p : l.parameters()) fn(ParamGroup::encoder, p);
  for (const auto& g : groups_) {
    for (const auto& level : g.levels())
      fn(ParamGroup::tables, std::span<const Real>(level.entries));
    for (const auto& l : g.mlp())
      for (auto p : l.parameters()) fn(ParamGroup::mlp, p);
  }
  for (const auto& l : decoder_)
    for (auto p : l.parameters()) fn(ParamGroup::decoder, p);
}

template <class Real>
template <class To>
Autoencoder<To> Autoencoder<Real>::cast() const {
  auto conv_cast = [](const std::vector<Conv2d<Real>>& in) {
    std::vector<Conv2d<To>> out;
    for (const auto& l : in) {
      Conv2d<To> c(l.in_ch, l.out_ch, l.stride);
      c.weights.assign(l.weights.begin(), l.weights.end());
      c.bias.assign(l.bias.begin(), l.bias.end());
      out.push_back(std::move(c));
    }
    return out;
  };
  std::vector<HashGroup<To>> groups;
  for (const auto& g : groups_) groups.push_back(g.template cast<To>());
  return Autoencoder<To>::from_parts(cfg_, conv_cast(encoder_), std::move(groups),
                                     conv_cast(decoder_));
}

}  // namespace bright
