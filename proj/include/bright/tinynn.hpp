#pragma once

// Small hand-differentiated kernels: dense layers, 3x3 convolutions,
// activations, L2 loss and Adam. Tensors are stored H x W x C, channel
// fastest.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

namespace bright {

template <class Real>
struct Tensor3 {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::uint32_t c = 0;
  std::vector<Real> data;

  Tensor3() = default;
  Tensor3(std::uint32_t h_, std::uint32_t w_, std::uint32_t c_, Real fill = Real(0))
      : h(h_), w(w_), c(c_), data(std::size_t(h_) * w_ * c_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t offset(std::uint32_t y, std::uint32_t x, std::uint32_t ch = 0) const {
    return (std::size_t(y) * w + x) * c + ch;
  }
  Real& at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) { return data[offset(y, x, ch)]; }
  const Real& at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
    return data[offset(y, x, ch)];
  }
  std::span<Real> cell(std::uint32_t y, std::uint32_t x) { return {data.data() + offset(y, x), c}; }
  std::span<const Real> cell(std::uint32_t y, std::uint32_t x) const {
    return {data.data() + offset(y, x), c};
  }
  bool same_shape(const Tensor3& o) const { return h == o.h && w == o.w && c == o.c; }
  bool operator==(const Tensor3&) const = default;
};

template <class To, class From>
Tensor3<To> tensor_cast(const Tensor3<From>& t) {
  Tensor3<To> out(t.h, t.w, t.c);
  for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

enum class Activation : std::uint8_t { relu, identity };

/// Affine map y = W x + b with W stored out x in, row-major.
/// The same type doubles as the gradient accumulator for a layer.
template <class Real>
struct DenseLayer {
  std::uint32_t in_dim = 0;
  std::uint32_t out_dim = 0;
  std::vector<Real> weights;
  std::vector<Real> bias;

  DenseLayer() = default;
  DenseLayer(std::uint32_t in, std::uint32_t out)
      : in_dim(in), out_dim(out), weights(std::size_t(in) * out, Real(0)), bias(out, Real(0)) {}

  /// Weights uniform in +-1/sqrt(in_dim), bias zero.
  void init_uniform(std::mt19937_64& rng);

  void forward(std::span<const Real> input, std::span<Real> output) const;

  /// Accumulates parameter gradients into `grads` and, when `input_grad` is
  /// non-empty, overwrites it with dL/dinput.
  void backward(std::span<const Real> input, std::span<const Real> upstream, DenseLayer& grads,
                std::span<Real> input_grad) const;

  DenseLayer zeros_like() const { return DenseLayer(in_dim, out_dim); }
  std::array<std::span<Real>, 2> parameters() { return {weights, bias}; }
  std::array<std::span<const Real>, 2> parameters() const { return {weights, bias}; }
  bool operator==(const DenseLayer&) const = default;
};

/// 3x3 convolution, zero padding 1, stride 1 or 2.
/// Weights laid out [out][ky][kx][in].
template <class Real>
struct Conv2d {
  std::uint32_t in_ch = 0;
  std::uint32_t out_ch = 0;
  std::uint32_t stride = 1;
  std::vector<Real> weights;
  std::vector<Real> bias;

  static constexpr std::uint32_t kernel = 3;

  Conv2d() = default;
  Conv2d(std::uint32_t in, std::uint32_t out, std::uint32_t stride_);

  /// Weights uniform in +-1/sqrt(fan_in), bias zero.
  void init_uniform(std::mt19937_64& rng);
  /// Weights uniform in +-sqrt(6/fan_in) (He), bias zero.
  void init_he_uniform(std::mt19937_64& rng);

  std::uint32_t out_size(std::uint32_t in_size) const { return (in_size - 1) / stride + 1; }

  Tensor3<Real> forward(const Tensor3<Real>& input) const;
  void backward(const Tensor3<Real>& input, const Tensor3<Real>& upstream, Conv2d& grads,
                Tensor3<Real>* input_grad) const;

  Conv2d zeros_like() const { return Conv2d(in_ch, out_ch, stride); }
  std::array<std::span<Real>, 2> parameters() { return {weights, bias}; }
  std::array<std::span<const Real>, 2> parameters() const { return {weights, bias}; }
  bool operator==(const Conv2d&) const = default;
};

template <class Real>
void relu_inplace(std::span<Real> x);
/// grad *= (pre > 0)
template <class Real>
void relu_backward(std::span<const Real> pre, std::span<Real> grad);

template <class Real>
Real sigmoid(Real x);

/// Nearest-neighbour 2x upsampling and its adjoint (sum over each 2x2 block).
template <class Real>
Tensor3<Real> upsample2x(const Tensor3<Real>& in);
template <class Real>
Tensor3<Real> upsample2x_backward(const Tensor3<Real>& grad);

/// Scalar type used to accumulate losses: at least double, wider for long double.
template <class Real>
using LossScalar = std::conditional_t<(sizeof(Real) > sizeof(double)), Real, double>;

template <class Real>
struct LossAndGrad {
  LossScalar<Real> loss = 0;
  std::vector<Real> grad;
};

/// weight * mean((pred - target)^2) and its gradient w.r.t. pred.
template <class Real>
LossAndGrad<Real> l2_loss(std::span<const Real> pred, std::span<const Real> target,
                          double weight = 20.0);

struct AdamHyper {
  double lr = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  bool operator==(const AdamHyper&) const = default;
};

inline constexpr double kTableAdamEps = 1e-15;
inline constexpr double kNetworkAdamEps = 1e-8;

template <class Real>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Real> m;
  std::vector<Real> v;

  AdamState() = default;
  AdamState(std::size_t n, AdamHyper h) : hyper(h), m(n, Real(0)), v(n, Real(0)) {}
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of `params` in place.
template <class Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState<Real>& state);

}  // namespace bright
