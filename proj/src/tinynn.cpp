#include "bright/tinynn.hpp"

#include <cmath>
#include <string>

#include "bright/error.hpp"

namespace bright {

namespace {

void check_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    fail(ErrorKind::shape, std::string(what) + ": expected length " + std::to_string(want) +
                               ", got " + std::to_string(got));
}

template <class Real>
void fill_uniform(std::vector<Real>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v) x = static_cast<Real>(dist(rng));
}

}  // namespace

template <class Real>
void DenseLayer<Real>::init_uniform(std::mt19937_64& rng) {
  fill_uniform(weights, 1.0 / std::sqrt(double(in_dim)), rng);
  std::fill(bias.begin(), bias.end(), Real(0));
}

template <class Real>
void DenseLayer<Real>::forward(std::span<const Real> input, std::span<Real> output) const {
  check_len(input.size(), in_dim, "dense forward input");
  check_len(output.size(), out_dim, "dense forward output");
  for (std::uint32_t o = 0; o < out_dim; ++o) {
    const Real* row = weights.data() + std::size_t(o) * in_dim;
    Real acc = bias[o];
    for (std::uint32_t i = 0; i < in_dim; ++i) acc += row[i] * input[i];
    output[o] = acc;
  }
}

template <class Real>
void DenseLayer<Real>::backward(std::span<const Real> input, std::span<const Real> upstream,
                                DenseLayer& grads, std::span<Real> input_grad) const {
  check_len(input.size(), in_dim, "dense backward input");
  check_len(upstream.size(), out_dim, "dense backward upstream");
  if (!input_grad.empty()) {
    check_len(input_grad.size(), in_dim, "dense backward input grad");
    std::fill(input_grad.begin(), input_grad.end(), Real(0));
  }
  for (std::uint32_t o = 0; o < out_dim; ++o) {
    const Real g = upstream[o];
    if (g == Real(0)) continue;
    grads.bias[o] += g;
    Real* grow = grads.weights.data() + std::size_t(o) * in_dim;
    for (std::uint32_t i = 0; i < in_dim; ++i) grow[i] += g * input[i];
    if (!input_grad.empty()) {
      const Real* row = weights.data() + std::size_t(o) * in_dim;
      for (std::uint32_t i = 0; i < in_dim; ++i) input_grad[i] += g * row[i];
    }
  }
}

template <class Real>
Conv2d<Real>::Conv2d(std::uint32_t in, std::uint32_t out, std::uint32_t stride_)
    : in_ch(in),
      out_ch(out),
      stride(stride_),
      weights(std::size_t(out) * kernel * kernel * in, Real(0)),
      bias(out, Real(0)) {
  if (stride != 1 && stride != 2) fail(ErrorKind::argument, "conv stride must be 1 or 2");
}

template <class Real>
void Conv2d<Real>::init_uniform(std::mt19937_64& rng) {
  fill_uniform(weights, 1.0 / std::sqrt(double(in_ch) * kernel * kernel), rng);
  std::fill(bias.begin(), bias.end(), Real(0));
}

template <class Real>
void Conv2d<Real>::init_he_uniform(std::mt19937_64& rng) {
  fill_uniform(weights, std::sqrt(6.0 / (double(in_ch) * kernel * kernel)), rng);
  std::fill(bias.begin(), bias.end(), Real(0));
}

template <class Real>
Tensor3<Real> Conv2d<Real>::forward(const Tensor3<Real>& input) const {
  check_len(input.c, in_ch, "conv forward channels");
  const std::uint32_t oh = out_size(input.h), ow = out_size(input.w);
  Tensor3<Real> out(oh, ow, out_ch);
  for (std::uint32_t oy = 0; oy < oh; ++oy) {
    for (std::uint32_t ox = 0; ox < ow; ++ox) {
      Real* dst = out.data.data() + out.offset(oy, ox);
      for (std::uint32_t oc = 0; oc < out_ch; ++oc) dst[oc] = bias[oc];
      for (std::uint32_t ky = 0; ky < kernel; ++ky) {
        const int iy = int(oy * stride + ky) - 1;
        if (iy < 0 || iy >= int(input.h)) continue;
        for (std::uint32_t kx = 0; kx < kernel; ++kx) {
          const int ix = int(ox * stride + kx) - 1;
          if (ix < 0 || ix >= int(input.w)) continue;
          const Real* src = input.data.data() + input.offset(iy, ix);
          for (std::uint32_t oc = 0; oc < out_ch; ++oc) {
            const Real* wk = weights.data() + ((std::size_t(oc) * kernel + ky) * kernel + kx) * in_ch;
            Real acc = 0;
            for (std::uint32_t ic = 0; ic < in_ch; ++ic) acc += wk[ic] * src[ic];
            dst[oc] += acc;
          }
        }
      }
    }
  }
  return out;
}

template <class Real>
void Conv2d<Real>::backward(const Tensor3<Real>& input, const Tensor3<Real>& upstream,
                            Conv2d& grads, Tensor3<Real>* input_grad) const {
  check_len(input.c, in_ch, "conv backward channels");
  if (upstream.h != out_size(input.h) || upstream.w != out_size(input.w) || upstream.c != out_ch)
    fail(ErrorKind::shape, "conv backward: upstream shape mismatch");
  if (input_grad) *input_grad = Tensor3<Real>(input.h, input.w, in_ch);
  for (std::uint32_t oy = 0; oy < upstream.h; ++oy) {
    for (std::uint32_t ox = 0; ox < upstream.w; ++ox) {
      const Real* g = upstream.data.data() + upstream.offset(oy, ox);
      for (std::uint32_t oc = 0; oc < out_ch; ++oc) grads.bias[oc] += g[oc];
      for (std::uint32_t ky = 0; ky < kernel; ++ky) {
        const int iy = int(oy * stride + ky) - 1;
        if (iy < 0 || iy >= int(input.h)) continue;
        for (std::uint32_t kx = 0; kx < kernel; ++kx) {
          const int ix = int(ox * stride + kx) - 1;
          if (ix < 0 || ix >= int(input.w)) continue;
          const Real* src = input.data.data() + input.offset(iy, ix);
          Real* dsrc = input_grad ? input_grad->data.data() + input_grad->offset(iy, ix) : nullptr;
          for (std::uint32_t oc = 0; oc < out_ch; ++oc) {
            const Real go = g[oc];
            if (go == Real(0)) continue;
            const std::size_t woff = ((std::size_t(oc) * kernel + ky) * kernel + kx) * in_ch;
            Real* gw = grads.weights.data() + woff;
            for (std::uint32_t ic = 0; ic < in_ch; ++ic) gw[ic] += go * src[ic];
            if (dsrc) {
              const Real* wk = weights.data() + woff;
              for (std::uint32_t ic = 0; ic < in_ch; ++ic) dsrc[ic] += go * wk[ic];
            }
          }
        }
      }
    }
  }
}

template <class Real>
void relu_inplace(std::span<Real> x) {
  for (auto& v : x) v = v > Real(0) ? v : Real(0);
}

template <class Real>
void relu_backward(std::span<const Real> pre, std::span<Real> grad) {
  check_len(grad.size(), pre.size(), "relu backward");
  for (std::size_t i = 0; i < pre.size(); ++i)
    if (!(pre[i] > Real(0))) grad[i] = Real(0);
}

template <class Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <class Real>
Tensor3<Real> upsample2x(const Tensor3<Real>& in) {
  Tensor3<Real> out(in.h * 2, in.w * 2, in.c);
  for (std::uint32_t y = 0; y < out.h; ++y)
    for (std::uint32_t x = 0; x < out.w; ++x) {
      auto src = in.cell(y / 2, x / 2);
      std::copy(src.begin(), src.end(), out.cell(y, x).begin());
    }
  return out;
}

template <class Real>
Tensor3<Real> upsample2x_backward(const Tensor3<Real>& grad) {
  if (grad.h % 2 || grad.w % 2) fail(ErrorKind::shape, "upsample backward: odd spatial size");
  Tensor3<Real> out(grad.h / 2, grad.w / 2, grad.c);
  for (std::uint32_t y = 0; y < grad.h; ++y)
    for (std::uint32_t x = 0; x < grad.w; ++x) {
      auto src = grad.cell(y, x);
      auto dst = out.cell(y / 2, x / 2);
      for (std::uint32_t ch = 0; ch < grad.c; ++ch) dst[ch] += src[ch];
    }
  return out;
}

template <class Real>
LossAndGrad<Real> l2_loss(std::span<const Real> pred, std::span<const Real> target,
                          double weight) {
  check_len(target.size(), pred.size(), "l2 loss target");
  if (pred.empty()) fail(ErrorKind::shape, "l2 loss: empty input");
  LossAndGrad<Real> out;
  out.grad.resize(pred.size());
  using Acc = LossScalar<Real>;
  const Acc n = Acc(pred.size());
  const Acc w = Acc(weight);
  Acc sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Acc d = Acc(pred[i]) - Acc(target[i]);
    sum += d * d;
    out.grad[i] = static_cast<Real>(Acc(2) * w * d / n);
  }
  out.loss = w * sum / n;
  return out;
}

template <class Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState<Real>& state) {
  check_len(grads.size(), params.size(), "adam grads");
  check_len(state.m.size(), params.size(), "adam first moment");
  check_len(state.v.size(), params.size(), "adam second moment");
  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = h.beta1 * double(state.m[i]) + (1.0 - h.beta1) * g;
    const double v = h.beta2 * double(state.v[i]) + (1.0 - h.beta2) * g * g;
    state.m[i] = static_cast<Real>(m);
    state.v[i] = static_cast<Real>(v);
    const double update = h.lr * (m / c1) / (std::sqrt(v / c2) + h.eps);
    params[i] = static_cast<Real>(double(params[i]) - update);
  }
}

#define BRIGHT_INSTANTIATE(R)                                                               \
  template struct DenseLayer<R>;                                                            \
  template struct Conv2d<R>;                                                                \
  template void relu_inplace<R>(std::span<R>);                                              \
  template void relu_backward<R>(std::span<const R>, std::span<R>);                         \
  template R sigmoid<R>(R);                                                                 \
  template Tensor3<R> upsample2x<R>(const Tensor3<R>&);                                     \
  template Tensor3<R> upsample2x_backward<R>(const Tensor3<R>&);                            \
  template LossAndGrad<R> l2_loss<R>(std::span<const R>, std::span<const R>, double);       \
  template void adam_step<R>(std::span<R>, std::span<const R>, AdamState<R>&);

BRIGHT_INSTANTIATE(float)
BRIGHT_INSTANTIATE(double)
BRIGHT_INSTANTIATE(long double)
#undef BRIGHT_INSTANTIATE

}  // namespace bright
