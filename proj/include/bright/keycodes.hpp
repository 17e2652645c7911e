#pragma once

// Key-code pipeline: sigmoid normalisation, block tiling to the decoder's
// spatial size, per-group slicing with optional perturbation, and assembly
// of the feature block from every group's projected retrieval.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bright/hashgrid.hpp"
#include "bright/tinynn.hpp"

namespace bright {

template <class Real>
struct KeyCodeGrid {
  Tensor3<Real> values;  // H_z x W_z x C_z, all in [0,1]
};

template <class Real>
struct TiledKeyGrid {
  Tensor3<Real> values;  // H_d x W_d x C_z
};

template <class Real>
struct FeatureBlock {
  Tensor3<Real> values;  // H_d x W_d x C_d
};

/// Perturbation added to key components before clamping into [0,1].
struct KeyPerturbation {
  enum class Kind : std::uint8_t { gaussian, uniform };
  Kind kind = Kind::gaussian;
  double scale = 0;  // std-dev (gaussian) or half-width (uniform)
  std::mt19937_64* rng = nullptr;

  /// N(0, (1/(4 r_max))^2), the training-time noise.
  static KeyPerturbation training(std::mt19937_64& rng, std::uint32_t r_max) {
    return {Kind::gaussian, training_stddev(r_max), &rng};
  }
  static KeyPerturbation uniform(std::mt19937_64& rng, double amplitude) {
    return {Kind::uniform, amplitude, &rng};
  }
  static double training_stddev(std::uint32_t r_max) { return 1.0 / (4.0 * double(r_max)); }

  double sample() const;
};

template <class Real>
KeyCodeGrid<Real> normalize_keys(const Tensor3<Real>& raw);

template <class Real>
TiledKeyGrid<Real> tile_interleave(const KeyCodeGrid<Real>& keys, std::uint32_t h_d,
                                   std::uint32_t w_d);

/// Adjoint of tile_interleave: sums each block back onto its source cell.
template <class Real>
Tensor3<Real> untile_gradient(const Tensor3<Real>& tiled_grad, std::uint32_t h_z,
                              std::uint32_t w_z);

/// Query for cell (i, j), slice s: key channels [s*key_len, (s+1)*key_len),
/// optionally perturbed and clamped, followed by x = (i+0.5)/H_d and
/// y = (j+0.5)/W_d.
template <class Real>
Query<Real> make_query(const TiledKeyGrid<Real>& tiled, std::uint32_t i, std::uint32_t j,
                       std::uint32_t s, std::uint32_t key_len,
                       const KeyPerturbation* perturb = nullptr);

/// Caches from assemble_feature_block, indexed ((i * W_d) + j) * N_h + s.
template <class Real>
using BlockCache = std::vector<GroupForward<Real>>;

template <class Real>
FeatureBlock<Real> assemble_feature_block(const TiledKeyGrid<Real>& tiled,
                                          std::span<const HashGroup<Real>> groups,
                                          const KeyPerturbation* perturb = nullptr,
                                          BlockCache<Real>* cache = nullptr);

/// Backward through assemble_feature_block. Accumulates group gradients and
/// returns dL/d(tiled keys).
template <class Real>
Tensor3<Real> feature_block_backward(const TiledKeyGrid<Real>& tiled,
                                     std::span<const HashGroup<Real>> groups,
                                     const BlockCache<Real>& cache,
                                     const Tensor3<Real>& block_grad,
                                     std::span<GroupGrads<Real>> group_grads);

}  // namespace bright
