#pragma once

// Multi-resolution hash tables indexed by continuous keys.
//
// A group holds N_r levels. Level l covers [0,1]^D (D = key_len + 2) with a
// lattice of r_l cells per axis, i.e. (r_l+1)^D vertices. When that lattice
// fits in max_entries it is stored densely and indexed row-major; otherwise
// vertices are hashed into max_entries slots. A query touches the 2^D
// vertices of its enclosing cell, blends them multilinearly, and the level
// results are concatenated and projected by a small MLP.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "bright/tinynn.hpp"

namespace bright {

inline constexpr std::uint32_t kMaxKeyLen = 6;
inline constexpr std::uint32_t kMaxQueryDim = kMaxKeyLen + 2;

struct GridConfig {
  std::uint32_t n_groups = 2;
  std::uint32_t n_resolutions = 4;
  std::uint32_t key_len = 1;
  std::uint32_t entry_dim = 2;
  std::uint32_t max_entries = 1u << 12;
  std::uint32_t r_min = 4;
  std::uint32_t r_max = 16;
  std::uint32_t out_dim_per_group = 16;
  // Width of the MLP hidden layer; 0 makes the projection a single linear map.
  std::uint32_t mlp_hidden = 64;

  /// Throws Error(config) on any violated invariant.
  void validate() const;

  std::uint32_t query_dim() const { return key_len + 2; }
  std::uint32_t corner_count() const { return 1u << query_dim(); }
  std::uint32_t concat_dim() const { return n_resolutions * entry_dim; }
  std::uint32_t feature_dim() const { return n_groups * out_dim_per_group; }
  bool operator==(const GridConfig&) const = default;
};

/// Geometric schedule r_l = round(r_min * b^l), b = (r_max/r_min)^(1/(N_r-1)).
std::vector<std::uint32_t> resolution_schedule(std::uint32_t r_min, std::uint32_t r_max,
                                               std::uint32_t n_resolutions);

/// (resolution+1)^dims, saturating at UINT64_MAX.
std::uint64_t lattice_vertices(std::uint32_t resolution, std::uint32_t dims);

enum class IndexingMode : std::uint8_t { direct, hashed };

struct LevelLayout {
  std::uint32_t resolution = 0;
  std::uint32_t dims = 0;
  std::uint32_t table_size = 0;
  IndexingMode mode = IndexingMode::direct;
  bool operator==(const LevelLayout&) const = default;
};

LevelLayout make_level_layout(std::uint32_t resolution, std::uint32_t dims,
                              std::uint32_t max_entries);
std::vector<LevelLayout> level_layouts(const GridConfig& cfg);

/// Table slot of a lattice vertex. Direct levels use row-major order with the
/// first coordinate most significant; hashed levels XOR coordinate*prime
/// products and mask to the table size. Coordinates above the resolution
/// are rejected.
std::uint32_t hash_index(std::span<const std::uint32_t> corner, const LevelLayout& level);

template <class Real>
struct Query {
  std::array<Real, kMaxQueryDim> coords{};
  std::uint32_t dims = 0;
  // Bit d set when key component d was clamped into [0,1]; such components
  // carry no gradient.
  std::uint32_t clamped_mask = 0;

  std::span<const Real> values() const { return {coords.data(), dims}; }
};

/// Builds a query from raw components, clamping each into [0,1].
template <class Real>
Query<Real> make_clamped_query(std::span<const Real> components);

struct CornerRef {
  std::array<std::uint32_t, kMaxQueryDim> lattice{};
  std::uint32_t index = 0;
};

template <class Real>
struct CornerWeight {
  std::array<std::uint32_t, kMaxQueryDim> lattice{};
  Real weight = 0;
};

/// The 2^D corners of the cell containing `query` at `resolution`, with
/// multilinear weights. Scaled coordinates are clamped so q = 1 lands in the
/// last cell.
template <class Real>
std::vector<CornerWeight<Real>> corner_weights(const Query<Real>& query, std::uint32_t resolution);

template <class Real>
struct RetrievalResult {
  std::vector<Real> concat_features;
  std::uint32_t corners_per_level = 0;
  // Level-major: corners [l*M, (l+1)*M) belong to level l.
  std::vector<CornerRef> corners;
  std::vector<Real> weights;

  std::span<const CornerRef> level_corners(std::uint32_t l) const {
    return {corners.data() + std::size_t(l) * corners_per_level, corners_per_level};
  }
  std::span<const Real> level_weights(std::uint32_t l) const {
    return {weights.data() + std::size_t(l) * corners_per_level, corners_per_level};
  }
};

/// Forward cache for one query through one group.
template <class Real>
struct GroupForward {
  Query<Real> query;
  RetrievalResult<Real> retrieval;
  std::vector<Real> hidden_pre;
  std::vector<Real> hidden;
  std::vector<Real> output;
};

/// Dense gradient accumulator shaped like a group.
template <class Real>
struct GroupGrads {
  std::vector<std::vector<Real>> tables;
  std::vector<DenseLayer<Real>> mlp;

  void zero();
};

template <class Real>
struct GradientBundle {
  // Per level: entry index -> entry_dim gradient.
  std::vector<std::map<std::uint32_t, std::vector<Real>>> table_grads;
  std::vector<DenseLayer<Real>> mlp_grads;
  // Derivatives w.r.t. the key components only.
  std::vector<Real> key_grad;
};

template <class Real>
class HashGroup {
 public:
  struct Level {
    LevelLayout layout;
    std::vector<Real> entries;  // table_size x entry_dim
    bool operator==(const Level&) const = default;
  };

  /// Entries uniform in [-1e-4, 1e-4]; MLP weights uniform with fan-in scaling.
  HashGroup(const GridConfig& cfg, std::uint64_t seed);
  HashGroup(const GridConfig& cfg, std::vector<Level> levels, std::vector<DenseLayer<Real>> mlp);

  const GridConfig& config() const { return cfg_; }
  std::span<const Level> levels() const { return levels_; }
  std::span<Level> levels() { return levels_; }
  std::span<const DenseLayer<Real>> mlp() const { return mlp_; }
  std::span<DenseLayer<Real>> mlp() { return mlp_; }

  void retrieve(const Query<Real>& query, RetrievalResult<Real>& out) const;
  RetrievalResult<Real> retrieve(const Query<Real>& query) const;

  std::vector<Real> encode_feature(const Query<Real>& query) const;
  void forward(const Query<Real>& query, GroupForward<Real>& cache) const;

  /// Accumulates into `grads` and writes dL/dkey into `key_grad`
  /// (length key_len). Components flagged in the query's clamp mask get 0.
  void backward(const GroupForward<Real>& cache, std::span<const Real> upstream,
                GroupGrads<Real>& grads, std::span<Real> key_grad) const;

  /// Self-contained backward: recomputes the forward pass for `query`.
  GradientBundle<Real> backward(const Query<Real>& query, std::span<const Real> upstream) const;

  GroupGrads<Real> make_grads() const;

  template <class To>
  HashGroup<To> cast() const;

  bool operator==(const HashGroup&) const = default;

 private:
  GridConfig cfg_;
  std::vector<Level> levels_;
  std::vector<DenseLayer<Real>> mlp_;
};

struct ParamCount {
  std::uint64_t table_params = 0;
  std::uint64_t mlp_params = 0;
  std::uint64_t total = 0;
};

ParamCount param_count(const GridConfig& cfg);

template <class Real>
template <class To>
HashGroup<To> HashGroup<Real>::cast() const {
  std::vector<typename HashGroup<To>::Level> levels;
  for (const auto& l : levels_) {
    typename HashGroup<To>::Level out{l.layout, {}};
    out.entries.assign(l.entries.begin(), l.entries.end());
    levels.push_back(std::move(out));
  }
  std::vector<DenseLayer<To>> mlp;
  for (const auto& layer : mlp_) {
    DenseLayer<To> d(layer.in_dim, layer.out_dim);
    d.weights.assign(layer.weights.begin(), layer.weights.end());
    d.bias.assign(layer.bias.begin(), layer.bias.end());
    mlp.push_back(std::move(d));
  }
  return HashGroup<To>(cfg_, std::move(levels), std::move(mlp));
}

}  // namespace bright
