#include "bright/keycodes.hpp"

#include <cmath>
#include <string>

#include "bright/error.hpp"

namespace bright {

double KeyPerturbation::sample() const {
  if (!rng) fail(ErrorKind::argument, "key perturbation without a generator");
  if (kind == Kind::gaussian) {
    std::normal_distribution<double> n(0.0, 1.0);
    return scale * n(*rng);
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return scale * u(*rng);
}

template <class Real>
KeyCodeGrid<Real> normalize_keys(const Tensor3<Real>& raw) {
  KeyCodeGrid<Real> out{Tensor3<Real>(raw.h, raw.w, raw.c)};
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    if (!std::isfinite(double(raw.data[i])))
      fail(ErrorKind::non_finite,
           "normalize_keys: non-finite encoder output at flat index " + std::to_string(i));
    out.values.data[i] = sigmoid(raw.data[i]);
  }
  return out;
}

template <class Real>
TiledKeyGrid<Real> tile_interleave(const KeyCodeGrid<Real>& keys, std::uint32_t h_d,
                                   std::uint32_t w_d) {
  const auto& src = keys.values;
  require(src.h > 0 && src.w > 0 && h_d % src.h == 0 && w_d % src.w == 0 && h_d >= src.h &&
              w_d >= src.w,
          ErrorKind::shape,
          "tile_interleave: " + std::to_string(h_d) + "x" + std::to_string(w_d) +
              " is not a whole multiple of " + std::to_string(src.h) + "x" +
              std::to_string(src.w));
  const std::uint32_t fy = h_d / src.h, fx = w_d / src.w;
  TiledKeyGrid<Real> out{Tensor3<Real>(h_d, w_d, src.c)};
  for (std::uint32_t i = 0; i < h_d; ++i)
    for (std::uint32_t j = 0; j < w_d; ++j) {
      auto from = src.cell(i / fy, j / fx);
      std::copy(from.begin(), from.end(), out.values.cell(i, j).begin());
    }
  return out;
}

template <class Real>
Tensor3<Real> untile_gradient(const Tensor3<Real>& tiled_grad, std::uint32_t h_z,
                              std::uint32_t w_z) {
  require(h_z > 0 && w_z > 0 && tiled_grad.h % h_z == 0 && tiled_grad.w % w_z == 0,
          ErrorKind::shape, "untile_gradient: non-divisible shape");
  const std::uint32_t fy = tiled_grad.h / h_z, fx = tiled_grad.w / w_z;
  Tensor3<Real> out(h_z, w_z, tiled_grad.c);
  for (std::uint32_t i = 0; i < tiled_grad.h; ++i)
    for (std::uint32_t j = 0; j < tiled_grad.w; ++j) {
      auto g = tiled_grad.cell(i, j);
      auto dst = out.cell(i / fy, j / fx);
      for (std::uint32_t c = 0; c < tiled_grad.c; ++c) dst[c] += g[c];
    }
  return out;
}

template <class Real>
Query<Real> make_query(const TiledKeyGrid<Real>& tiled, std::uint32_t i, std::uint32_t j,
                       std::uint32_t s, std::uint32_t key_len, const KeyPerturbation* perturb) {
  const auto& t = tiled.values;
  require(key_len >= 1 && key_len <= kMaxKeyLen, ErrorKind::argument,
          "make_query: key_len out of range");
  if (i >= t.h || j >= t.w)
    fail(ErrorKind::argument, "make_query: cell (" + std::to_string(i) + ", " +
                                  std::to_string(j) + ") outside " + std::to_string(t.h) + "x" +
                                  std::to_string(t.w));
  if (std::size_t(s + 1) * key_len > t.c)
    fail(ErrorKind::argument, "make_query: slice " + std::to_string(s) + " outside " +
                                  std::to_string(t.c) + " channels");
  Query<Real> q;
  q.dims = key_len + 2;
  auto cell = t.cell(i, j);
  for (std::uint32_t d = 0; d < key_len; ++d) {
    double v = double(cell[std::size_t(s) * key_len + d]);
    if (perturb) v += perturb->sample();
    if (v < 0.0 || v > 1.0) {
      v = v < 0.0 ? 0.0 : 1.0;
      q.clamped_mask |= 1u << d;
    }
    q.coords[d] = static_cast<Real>(v);
  }
  q.coords[key_len] = static_cast<Real>((double(i) + 0.5) / double(t.h));
  q.coords[key_len + 1] = static_cast<Real>((double(j) + 0.5) / double(t.w));
  return q;
}

template <class Real>
FeatureBlock<Real> assemble_feature_block(const TiledKeyGrid<Real>& tiled,
                                          std::span<const HashGroup<Real>> groups,
                                          const KeyPerturbation* perturb,
                                          BlockCache<Real>* cache) {
  require(!groups.empty(), ErrorKind::argument, "assemble_feature_block: no groups");
  const GridConfig& cfg = groups.front().config();
  const auto& t = tiled.values;
  const std::uint32_t n_h = static_cast<std::uint32_t>(groups.size());
  require(n_h == cfg.n_groups, ErrorKind::shape, "assemble_feature_block: group count mismatch");
  require(t.c == n_h * cfg.key_len, ErrorKind::shape,
          "assemble_feature_block: key channels " + std::to_string(t.c) + " != N_h * key_len " +
              std::to_string(n_h * cfg.key_len));
  const std::uint32_t per = cfg.out_dim_per_group;
  FeatureBlock<Real> block{Tensor3<Real>(t.h, t.w, n_h * per)};
  GroupForward<Real> local;
  if (cache) cache->resize(std::size_t(t.h) * t.w * n_h);
  for (std::uint32_t i = 0; i < t.h; ++i)
    for (std::uint32_t j = 0; j < t.w; ++j)
      for (std::uint32_t s = 0; s < n_h; ++s) {
        GroupForward<Real>& fwd = cache ? (*cache)[(std::size_t(i) * t.w + j) * n_h + s] : local;
        groups[s].forward(make_query(tiled, i, j, s, cfg.key_len, perturb), fwd);
        std::copy(fwd.output.begin(), fwd.output.end(),
                  block.values.cell(i, j).begin() + std::ptrdiff_t(s) * per);
      }
  return block;
}

template <class Real>
Tensor3<Real> feature_block_backward(const TiledKeyGrid<Real>& tiled,
                                     std::span<const HashGroup<Real>> groups,
                                     const BlockCache<Real>& cache,
                                     const Tensor3<Real>& block_grad,
                                     std::span<GroupGrads<Real>> group_grads) {
  const auto& t = tiled.values;
  const std::uint32_t n_h = static_cast<std::uint32_t>(groups.size());
  const GridConfig& cfg = groups.front().config();
  const std::uint32_t per = cfg.out_dim_per_group;
  require(group_grads.size() == n_h, ErrorKind::shape, "feature_block_backward: grads count");
  require(cache.size() == std::size_t(t.h) * t.w * n_h, ErrorKind::shape,
          "feature_block_backward: cache size");
  require(block_grad.h == t.h && block_grad.w == t.w && block_grad.c == n_h * per,
          ErrorKind::shape, "feature_block_backward: gradient shape");
  Tensor3<Real> key_grad(t.h, t.w, t.c);
  for (std::uint32_t i = 0; i < t.h; ++i)
    for (std::uint32_t j = 0; j < t.w; ++j)
      for (std::uint32_t s = 0; s < n_h; ++s) {
        const auto& fwd = cache[(std::size_t(i) * t.w + j) * n_h + s];
        auto up = block_grad.cell(i, j).subspan(std::size_t(s) * per, per);
        auto kg = key_grad.cell(i, j).subspan(std::size_t(s) * cfg.key_len, cfg.key_len);
        groups[s].backward(fwd, up, group_grads[s], kg);
      }
  return key_grad;
}

#define BRIGHT_INSTANTIATE(R)                                                                  \
  template KeyCodeGrid<R> normalize_keys<R>(const Tensor3<R>&);                                \
  template TiledKeyGrid<R> tile_interleave<R>(const KeyCodeGrid<R>&, std::uint32_t,            \
                                              std::uint32_t);                                  \
  template Tensor3<R> untile_gradient<R>(const Tensor3<R>&, std::uint32_t, std::uint32_t);     \
  template Query<R> make_query<R>(const TiledKeyGrid<R>&, std::uint32_t, std::uint32_t,        \
                                  std::uint32_t, std::uint32_t, const KeyPerturbation*);       \
  template FeatureBlock<R> assemble_feature_block<R>(const TiledKeyGrid<R>&,                   \
                                                     std::span<const HashGroup<R>>,            \
                                                     const KeyPerturbation*, BlockCache<R>*);  \
  template Tensor3<R> feature_block_backward<R>(const TiledKeyGrid<R>&,                        \
                                                std::span<const HashGroup<R>>,                 \
                                                const BlockCache<R>&, const Tensor3<R>&,       \
                                                std::span<GroupGrads<R>>);

BRIGHT_INSTANTIATE(float)
BRIGHT_INSTANTIATE(double)
BRIGHT_INSTANTIATE(long double)
#undef BRIGHT_INSTANTIATE

}  // namespace bright
