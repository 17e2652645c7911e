#include "bright/hashgrid.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "bright/error.hpp"

namespace bright {

namespace {

// Spatial-hash primes, one per query dimension; the first is 1 so the
// leading coordinate stays coherent.
constexpr std::array<std::uint32_t, kMaxQueryDim> kPrimes = {
    1u, 2654435761u, 805459861u, 3674653429u, 2097192037u, 1434869437u, 2165219737u, 3407256283u};

constexpr double kEntryInitBound = 1e-4;

bool is_pow2(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::string cfg_err(const char* field, const char* rule) {
  return std::string("grid config: ") + field + " " + rule;
}

// Cell origin and in-cell fraction of `query` at `resolution`.
template <class Real>
void locate(const Query<Real>& query, std::uint32_t resolution,
            std::array<std::uint32_t, kMaxQueryDim>& base, std::array<Real, kMaxQueryDim>& frac) {
  const Real r = static_cast<Real>(resolution);
  for (std::uint32_t d = 0; d < query.dims; ++d) {
    const Real p = query.coords[d] * r;
    Real fl = std::floor(p);
    if (fl < Real(0)) fl = Real(0);
    if (fl > r - Real(1)) fl = r - Real(1);
    base[d] = static_cast<std::uint32_t>(fl);
    frac[d] = p - fl;
  }
}

template <class Real>
Real corner_weight(std::uint32_t mask, std::uint32_t dims,
                   const std::array<Real, kMaxQueryDim>& frac) {
  Real w = Real(1);
  for (std::uint32_t d = 0; d < dims; ++d) w *= (mask >> d) & 1u ? frac[d] : Real(1) - frac[d];
  return w;
}

}  // namespace

void GridConfig::validate() const {
  require(n_groups >= 1, ErrorKind::config, cfg_err("n_groups", "must be >= 1"));
  require(n_resolutions >= 1, ErrorKind::config, cfg_err("n_resolutions", "must be >= 1"));
  require(key_len >= 1 && key_len <= kMaxKeyLen, ErrorKind::config,
          cfg_err("key_len", "must be in [1, 6]"));
  require(entry_dim >= 1, ErrorKind::config, cfg_err("entry_dim", "must be >= 1"));
  require(is_pow2(max_entries), ErrorKind::config,
          cfg_err("max_entries", "must be a power of two"));
  require(r_min >= 1, ErrorKind::config, cfg_err("r_min", "must be >= 1"));
  require(r_max >= r_min, ErrorKind::config, cfg_err("r_max", "must be >= r_min"));
  require(n_resolutions > 1 || r_min == r_max, ErrorKind::config,
          cfg_err("r_min", "must equal r_max when n_resolutions = 1"));
  require(out_dim_per_group >= 1, ErrorKind::config,
          cfg_err("out_dim_per_group", "must be >= 1"));
}

std::vector<std::uint32_t> resolution_schedule(std::uint32_t r_min, std::uint32_t r_max,
                                               std::uint32_t n_resolutions) {
  require(n_resolutions >= 1, ErrorKind::config, "resolution schedule: need at least one level");
  require(r_min >= 1 && r_max >= r_min, ErrorKind::config,
          "resolution schedule: need 1 <= r_min <= r_max");
  if (n_resolutions == 1) {
    require(r_min == r_max, ErrorKind::config,
            "resolution schedule: a single level needs r_min == r_max");
    return {r_min};
  }
  const double b = std::pow(double(r_max) / double(r_min), 1.0 / double(n_resolutions - 1));
  std::vector<std::uint32_t> out(n_resolutions);
  for (std::uint32_t l = 0; l < n_resolutions; ++l)
    out[l] = static_cast<std::uint32_t>(std::lround(double(r_min) * std::pow(b, double(l))));
  out.front() = r_min;
  out.back() = r_max;
  for (std::uint32_t l = 1; l < n_resolutions; ++l) out[l] = std::max(out[l], out[l - 1]);
  return out;
}

std::uint64_t lattice_vertices(std::uint32_t resolution, std::uint32_t dims) {
  const std::uint64_t side = std::uint64_t(resolution) + 1;
  std::uint64_t n = 1;
  for (std::uint32_t d = 0; d < dims; ++d) {
    if (n > std::numeric_limits<std::uint64_t>::max() / side)
      return std::numeric_limits<std::uint64_t>::max();
    n *= side;
  }
  return n;
}

LevelLayout make_level_layout(std::uint32_t resolution, std::uint32_t dims,
                              std::uint32_t max_entries) {
  const std::uint64_t verts = lattice_vertices(resolution, dims);
  LevelLayout out;
  out.resolution = resolution;
  out.dims = dims;
  if (verts <= max_entries) {
    out.mode = IndexingMode::direct;
    out.table_size = static_cast<std::uint32_t>(verts);
  } else {
    out.mode = IndexingMode::hashed;
    out.table_size = max_entries;
  }
  return out;
}

std::vector<LevelLayout> level_layouts(const GridConfig& cfg) {
  cfg.validate();
  std::vector<LevelLayout> out;
  for (auto r : resolution_schedule(cfg.r_min, cfg.r_max, cfg.n_resolutions))
    out.push_back(make_level_layout(r, cfg.query_dim(), cfg.max_entries));
  return out;
}

std::uint32_t hash_index(std::span<const std::uint32_t> corner, const LevelLayout& level) {
  if (corner.size() != level.dims)
    fail(ErrorKind::argument, "hash_index: corner has " + std::to_string(corner.size()) +
                                  " coordinates, level has " + std::to_string(level.dims));
  for (auto c : corner)
    if (c > level.resolution)
      fail(ErrorKind::argument, "hash_index: lattice coordinate " + std::to_string(c) +
                                    " exceeds resolution " + std::to_string(level.resolution));
  if (level.mode == IndexingMode::direct) {
    const std::uint32_t side = level.resolution + 1;
    std::uint32_t idx = 0;
    for (auto c : corner) idx = idx * side + c;
    return idx;
  }
  std::uint32_t h = 0;
  for (std::size_t d = 0; d < corner.size(); ++d) h ^= corner[d] * kPrimes[d];
  return h & (level.table_size - 1);
}

template <class Real>
Query<Real> make_clamped_query(std::span<const Real> components) {
  require(components.size() >= 3 && components.size() <= kMaxQueryDim, ErrorKind::argument,
          "query: dimension must be in [3, 8]");
  Query<Real> q;
  q.dims = static_cast<std::uint32_t>(components.size());
  for (std::uint32_t d = 0; d < q.dims; ++d) {
    Real v = components[d];
    require(std::isfinite(double(v)), ErrorKind::non_finite, "query: non-finite component");
    if (v < Real(0) || v > Real(1)) {
      v = v < Real(0) ? Real(0) : Real(1);
      q.clamped_mask |= 1u << d;
    }
    q.coords[d] = v;
  }
  return q;
}

template <class Real>
std::vector<CornerWeight<Real>> corner_weights(const Query<Real>& query,
                                               std::uint32_t resolution) {
  require(resolution >= 1, ErrorKind::argument, "corner_weights: resolution must be >= 1");
  std::array<std::uint32_t, kMaxQueryDim> base{};
  std::array<Real, kMaxQueryDim> frac{};
  locate(query, resolution, base, frac);
  const std::uint32_t m = 1u << query.dims;
  std::vector<CornerWeight<Real>> out(m);
  for (std::uint32_t k = 0; k < m; ++k) {
    for (std::uint32_t d = 0; d < query.dims; ++d) out[k].lattice[d] = base[d] + ((k >> d) & 1u);
    out[k].weight = corner_weight(k, query.dims, frac);
  }
  return out;
}

template <class Real>
void GroupGrads<Real>::zero() {
  for (auto& t : tables) std::fill(t.begin(), t.end(), Real(0));
  for (auto& l : mlp) {
    std::fill(l.weights.begin(), l.weights.end(), Real(0));
    std::fill(l.bias.begin(), l.bias.end(), Real(0));
  }
}

template <class Real>
HashGroup<Real>::HashGroup(const GridConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-kEntryInitBound, kEntryInitBound);
  for (const auto& layout : level_layouts(cfg_)) {
    Level level{layout, std::vector<Real>(std::size_t(layout.table_size) * cfg_.entry_dim)};
    for (auto& e : level.entries) e = static_cast<Real>(init(rng));
    levels_.push_back(std::move(level));
  }
  if (cfg_.mlp_hidden > 0) {
    mlp_.emplace_back(cfg_.concat_dim(), cfg_.mlp_hidden);
    mlp_.emplace_back(cfg_.mlp_hidden, cfg_.out_dim_per_group);
  } else {
    mlp_.emplace_back(cfg_.concat_dim(), cfg_.out_dim_per_group);
  }
  for (auto& layer : mlp_) layer.init_uniform(rng);
}

template <class Real>
HashGroup<Real>::HashGroup(const GridConfig& cfg, std::vector<Level> levels,
                           std::vector<DenseLayer<Real>> mlp)
    : cfg_(cfg), levels_(std::move(levels)), mlp_(std::move(mlp)) {
  const auto layouts = level_layouts(cfg_);
  require(levels_.size() == layouts.size(), ErrorKind::format, "hash group: level count mismatch");
  for (std::size_t l = 0; l < layouts.size(); ++l) {
    if (levels_[l].layout != layouts[l])
      fail(ErrorKind::format, "hash group: level " + std::to_string(l) + " layout mismatch");
    if (levels_[l].entries.size() != std::size_t(layouts[l].table_size) * cfg_.entry_dim)
      fail(ErrorKind::format, "hash group: level " + std::to_string(l) + " entry count mismatch");
  }
  const std::size_t want_layers = cfg_.mlp_hidden > 0 ? 2 : 1;
  require(mlp_.size() == want_layers, ErrorKind::format, "hash group: MLP layer count mismatch");
  const std::uint32_t mid = cfg_.mlp_hidden > 0 ? cfg_.mlp_hidden : cfg_.out_dim_per_group;
  require(mlp_.front().in_dim == cfg_.concat_dim() && mlp_.front().out_dim == mid &&
              mlp_.back().out_dim == cfg_.out_dim_per_group,
          ErrorKind::format, "hash group: MLP shape mismatch");
  for (const auto& layer : mlp_)
    require(layer.weights.size() == std::size_t(layer.in_dim) * layer.out_dim &&
                layer.bias.size() == layer.out_dim,
            ErrorKind::format, "hash group: MLP buffer size mismatch");
}

template <class Real>
void HashGroup<Real>::retrieve(const Query<Real>& query, RetrievalResult<Real>& out) const {
  if (query.dims != cfg_.query_dim())
    fail(ErrorKind::shape, "retrieve: query has " + std::to_string(query.dims) +
                               " components, expected " + std::to_string(cfg_.query_dim()));
  const std::uint32_t m = cfg_.corner_count();
  const std::uint32_t cv = cfg_.entry_dim;
  out.corners_per_level = m;
  out.concat_features.assign(cfg_.concat_dim(), Real(0));
  out.corners.resize(std::size_t(m) * levels_.size());
  out.weights.resize(std::size_t(m) * levels_.size());

  std::array<std::uint32_t, kMaxQueryDim> base{};
  std::array<Real, kMaxQueryDim> frac{};
  for (std::uint32_t l = 0; l < levels_.size(); ++l) {
    const Level& level = levels_[l];
    locate(query, level.layout.resolution, base, frac);
    Real* feat = out.concat_features.data() + std::size_t(l) * cv;
    for (std::uint32_t k = 0; k < m; ++k) {
      CornerRef& c = out.corners[std::size_t(l) * m + k];
      for (std::uint32_t d = 0; d < query.dims; ++d) c.lattice[d] = base[d] + ((k >> d) & 1u);
      c.index = hash_index({c.lattice.data(), query.dims}, level.layout);
      const Real w = corner_weight(k, query.dims, frac);
      out.weights[std::size_t(l) * m + k] = w;
      const Real* e = level.entries.data() + std::size_t(c.index) * cv;
      for (std::uint32_t ch = 0; ch < cv; ++ch) feat[ch] += w * e[ch];
    }
  }
}

template <class Real>
RetrievalResult<Real> HashGroup<Real>::retrieve(const Query<Real>& query) const {
  RetrievalResult<Real> out;
  retrieve(query, out);
  return out;
}

template <class Real>
void HashGroup<Real>::forward(const Query<Real>& query, GroupForward<Real>& cache) const {
  cache.query = query;
  retrieve(query, cache.retrieval);
  cache.output.resize(cfg_.out_dim_per_group);
  if (cfg_.mlp_hidden > 0) {
    cache.hidden_pre.resize(cfg_.mlp_hidden);
    mlp_[0].forward(cache.retrieval.concat_features, cache.hidden_pre);
    cache.hidden = cache.hidden_pre;
    relu_inplace<Real>(cache.hidden);
    mlp_[1].forward(cache.hidden, cache.output);
  } else {
    cache.hidden_pre.clear();
    cache.hidden.clear();
    mlp_[0].forward(cache.retrieval.concat_features, cache.output);
  }
}

template <class Real>
std::vector<Real> HashGroup<Real>::encode_feature(const Query<Real>& query) const {
  GroupForward<Real> cache;
  forward(query, cache);
  return cache.output;
}

template <class Real>
GroupGrads<Real> HashGroup<Real>::make_grads() const {
  GroupGrads<Real> g;
  for (const auto& l : levels_) g.tables.emplace_back(l.entries.size(), Real(0));
  for (const auto& layer : mlp_) g.mlp.push_back(layer.zeros_like());
  return g;
}

template <class Real>
void HashGroup<Real>::backward(const GroupForward<Real>& cache, std::span<const Real> upstream,
                               GroupGrads<Real>& grads, std::span<Real> key_grad) const {
  if (upstream.size() != cfg_.out_dim_per_group)
    fail(ErrorKind::shape, "backward: upstream gradient has length " +
                               std::to_string(upstream.size()) + ", expected " +
                               std::to_string(cfg_.out_dim_per_group));
  require(key_grad.size() == cfg_.key_len, ErrorKind::shape, "backward: key gradient length");
  const auto& ret = cache.retrieval;
  std::vector<Real> d_concat(cfg_.concat_dim());
  if (cfg_.mlp_hidden > 0) {
    std::vector<Real> d_hidden(cfg_.mlp_hidden);
    mlp_[1].backward(cache.hidden, upstream, grads.mlp[1], d_hidden);
    relu_backward<Real>(cache.hidden_pre, d_hidden);
    mlp_[0].backward(ret.concat_features, d_hidden, grads.mlp[0], d_concat);
  } else {
    mlp_[0].backward(ret.concat_features, upstream, grads.mlp[0], d_concat);
  }

  const std::uint32_t m = ret.corners_per_level;
  const std::uint32_t cv = cfg_.entry_dim;
  const std::uint32_t dims = cache.query.dims;
  std::fill(key_grad.begin(), key_grad.end(), Real(0));
  std::array<std::uint32_t, kMaxQueryDim> base{};
  std::array<Real, kMaxQueryDim> frac{};
  for (std::uint32_t l = 0; l < levels_.size(); ++l) {
    const Level& level = levels_[l];
    const Real* dl = d_concat.data() + std::size_t(l) * cv;
    auto corners = ret.level_corners(l);
    auto weights = ret.level_weights(l);
    std::vector<Real>& gt = grads.tables[l];
    for (std::uint32_t k = 0; k < m; ++k) {
      Real* g = gt.data() + std::size_t(corners[k].index) * cv;
      for (std::uint32_t ch = 0; ch < cv; ++ch) g[ch] += weights[k] * dl[ch];
    }

    locate(cache.query, level.layout.resolution, base, frac);
    const Real r = static_cast<Real>(level.layout.resolution);
    for (std::uint32_t d = 0; d < cfg_.key_len; ++d) {
      if ((cache.query.clamped_mask >> d) & 1u) continue;
      Real acc = 0;
      for (std::uint32_t k = 0; k < m; ++k) {
        Real partial = (k >> d) & 1u ? Real(1) : Real(-1);
        for (std::uint32_t e = 0; e < dims; ++e)
          if (e != d) partial *= (k >> e) & 1u ? frac[e] : Real(1) - frac[e];
        const Real* entry = level.entries.data() + std::size_t(corners[k].index) * cv;
        Real dot = 0;
        for (std::uint32_t ch = 0; ch < cv; ++ch) dot += entry[ch] * dl[ch];
        acc += partial * dot;
      }
      key_grad[d] += r * acc;
    }
  }
}

template <class Real>
GradientBundle<Real> HashGroup<Real>::backward(const Query<Real>& query,
                                               std::span<const Real> upstream) const {
  GroupForward<Real> cache;
  forward(query, cache);
  GroupGrads<Real> dense = make_grads();
  GradientBundle<Real> out;
  out.key_grad.resize(cfg_.key_len);
  backward(cache, upstream, dense, out.key_grad);
  out.table_grads.resize(levels_.size());
  for (std::uint32_t l = 0; l < levels_.size(); ++l) {
    for (const auto& c : cache.retrieval.level_corners(l)) {
      auto it = dense.tables[l].begin() + std::ptrdiff_t(c.index) * cfg_.entry_dim;
      out.table_grads[l][c.index] = std::vector<Real>(it, it + cfg_.entry_dim);
    }
  }
  out.mlp_grads = std::move(dense.mlp);
  return out;
}

ParamCount param_count(const GridConfig& cfg) {
  ParamCount pc;
  std::uint64_t per_group_tables = 0;
  for (const auto& l : level_layouts(cfg)) per_group_tables += std::uint64_t(l.table_size);
  pc.table_params = std::uint64_t(cfg.n_groups) * per_group_tables * cfg.entry_dim;
  std::uint64_t mlp = 0;
  if (cfg.mlp_hidden > 0) {
    mlp = (std::uint64_t(cfg.concat_dim()) + 1) * cfg.mlp_hidden +
          (std::uint64_t(cfg.mlp_hidden) + 1) * cfg.out_dim_per_group;
  } else {
    mlp = (std::uint64_t(cfg.concat_dim()) + 1) * cfg.out_dim_per_group;
  }
  pc.mlp_params = std::uint64_t(cfg.n_groups) * mlp;
  pc.total = pc.table_params + pc.mlp_params;
  return pc;
}

template Query<float> make_clamped_query<float>(std::span<const float>);
template Query<double> make_clamped_query<double>(std::span<const double>);
template std::vector<CornerWeight<float>> corner_weights<float>(const Query<float>&, std::uint32_t);
template std::vector<CornerWeight<double>> corner_weights<double>(const Query<double>&,
                                                                  std::uint32_t);
template struct GroupGrads<float>;
template struct GroupGrads<double>;
template class HashGroup<float>;
template class HashGroup<double>;
template Query<long double> make_clamped_query<long double>(std::span<const long double>);
template std::vector<CornerWeight<long double>> corner_weights<long double>(
    const Query<long double>&, std::uint32_t);
template struct GroupGrads<long double>;
template class HashGroup<long double>;

}  // namespace bright
