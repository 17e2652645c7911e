#include "bright/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "bright/error.hpp"
#include "util.hpp"

namespace bright {

namespace {

constexpr std::uint64_t kHitStream = 0x68697473ULL;
constexpr std::uint64_t kVqStream = 0x7671ULL;
constexpr std::uint64_t kClusterStream = 0x636c7573ULL;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

const char* mode_name(IndexingMode m) { return m == IndexingMode::direct ? "direct" : "hashed"; }

}  // namespace

HitStats make_hit_stats(const GridConfig& cfg) {
  cfg.validate();
  HitStats stats;
  stats.layouts = level_layouts(cfg);
  stats.corners_per_level = cfg.corner_count();
  for (const auto& l : stats.layouts) stats.counts.emplace_back(l.table_size, 0);
  return stats;
}

template <class Real>
void record_hits(const RetrievalResult<Real>& retrieval, HitStats& stats) {
  require(retrieval.corners_per_level == stats.corners_per_level &&
              retrieval.corners.size() == stats.counts.size() * stats.corners_per_level,
          ErrorKind::shape, "record_hits: retrieval does not match the stats layout");
  for (std::uint32_t l = 0; l < stats.counts.size(); ++l)
    for (const auto& c : retrieval.level_corners(l)) ++stats.counts[l][c.index];
  ++stats.queries;
}

template <class Real>
HitStats collect_hits(const HashGroup<Real>& group, std::span<const Query<Real>> queries) {
  HitStats stats = make_hit_stats(group.config());
  RetrievalResult<Real> r;
  for (const auto& q : queries) {
    group.retrieve(q, r);
    record_hits(r, stats);
  }
  return stats;
}

HitStats merge(const HitStats& a, const HitStats& b) {
  require(a.layouts == b.layouts && a.corners_per_level == b.corners_per_level, ErrorKind::shape,
          "merge: hit stats have different layouts");
  HitStats out = a;
  out.queries += b.queries;
  for (std::size_t l = 0; l < out.counts.size(); ++l)
    for (std::size_t i = 0; i < out.counts[l].size(); ++i) out.counts[l][i] += b.counts[l][i];
  return out;
}

std::vector<HitStats> collect_model_hits(const Autoencoder<float>& model, const Dataset& data,
                                         bool noise, std::uint64_t seed, std::uint32_t threads) {
  const auto& cfg = model.config();
  const std::uint32_t n_groups = cfg.grid.n_groups;
  const std::uint32_t n_images = static_cast<std::uint32_t>(data.size());
  const std::uint32_t shards = std::max<std::uint32_t>(1, std::min(threads, n_images));

  // Each shard owns a strided subset of images; shards are merged in order.
  std::vector<std::vector<HitStats>> partial(shards);
  for (auto& p : partial) p.assign(n_groups, make_hit_stats(cfg.grid));
  detail::parallel_for(shards, shards, [&](std::uint32_t t) {
    RetrievalResult<float> r;
    for (std::uint32_t n = t; n < n_images; n += shards) {
      const auto& image = data[n];
      require(image.h == cfg.image_h && image.w == cfg.image_w && image.c == cfg.image_c,
              ErrorKind::data, "collect_model_hits: image shape does not match the model");
      std::mt19937_64 rng(detail::mix_seed(seed, kHitStream, n));
      KeyPerturbation p = KeyPerturbation::training(rng, cfg.grid.r_max);
      const auto keys = encode_image(model, image);
      const auto tiled = tile_interleave(keys, cfg.feature_h, cfg.feature_w);
      for (std::uint32_t i = 0; i < cfg.feature_h; ++i)
        for (std::uint32_t j = 0; j < cfg.feature_w; ++j)
          for (std::uint32_t s = 0; s < n_groups; ++s) {
            const auto q = make_query(tiled, i, j, s, cfg.grid.key_len, noise ? &p : nullptr);
            model.groups()[s].retrieve(q, r);
            record_hits(r, partial[t][s]);
          }
    }
  });
  std::vector<HitStats> out = partial[0];
  for (std::uint32_t t = 1; t < shards; ++t)
    for (std::uint32_t s = 0; s < n_groups; ++s) out[s] = merge(out[s], partial[t][s]);
  return out;
}

std::vector<LevelUsage> usage_report(const HitStats& stats) {
  std::vector<LevelUsage> out;
  for (std::uint32_t l = 0; l < stats.counts.size(); ++l) {
    const auto& counts = stats.counts[l];
    LevelUsage u;
    u.level = l;
    u.resolution = stats.layouts[l].resolution;
    u.mode = stats.layouts[l].mode;
    u.entries = static_cast<std::uint32_t>(counts.size());
    if (!counts.empty()) {
      std::size_t nonzero = 0;
      double sum = 0;
      for (auto c : counts) {
        nonzero += c != 0;
        sum += double(c);
      }
      const double n = double(counts.size());
      u.hit_fraction = double(nonzero) / n;
      u.mean_hits = sum / n;
      double var = 0;
      for (auto c : counts) var += (double(c) - u.mean_hits) * (double(c) - u.mean_hits);
      u.std_hits = std::sqrt(var / n);
    }
    out.push_back(u);
  }
  return out;
}

std::optional<double> min_direct_fraction(std::span<const HitStats> groups) {
  std::optional<double> out;
  for (const auto& g : groups)
    for (const auto& u : usage_report(g))
      if (u.mode == IndexingMode::direct) out = std::min(out.value_or(1.0), u.hit_fraction);
  return out;
}

double VQCodebook::usage_fraction() const {
  if (k == 0) return 0;
  std::size_t used = 0;
  for (auto c : counts) used += c != 0;
  return double(used) / double(k);
}

std::uint32_t nearest_entry(const VQCodebook& book, std::span<const double> x) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t e = 0; e < book.k; ++e) {
    const auto c = book.entry(e);
    double d = 0;
    for (std::uint32_t i = 0; i < book.dim; ++i) d += (x[i] - c[i]) * (x[i] - c[i]);
    if (d < best_d) {
      best_d = d;
      best = e;
    }
  }
  return best;
}

VQCodebook vq_train(std::span<const double> features, std::uint32_t dim, std::uint32_t k,
                    std::uint32_t steps, std::uint64_t seed, const VQOptions& options) {
  require(dim >= 1, ErrorKind::argument, "vq_train: dim must be at least 1");
  require(k >= 1, ErrorKind::argument, "vq_train: K must be at least 1");
  require(!features.empty(), ErrorKind::data, "vq_train: empty feature set");
  require(features.size() % dim == 0, ErrorKind::shape,
          "vq_train: feature buffer is not a multiple of dim");
  require(options.decay >= 0 && options.decay < 1, ErrorKind::argument,
          "vq_train: decay must lie in [0,1)");
  for (double v : features) require(std::isfinite(v), ErrorKind::data, "vq_train: non-finite feature");
  const std::size_t n = features.size() / dim;
  auto feature = [&](std::size_t i) { return features.subspan(i * dim, dim); };

  VQCodebook book;
  book.k = k;
  book.dim = dim;
  if (!options.initial.empty()) {
    require(options.initial.size() == std::size_t(k) * dim, ErrorKind::shape,
            "vq_train: initial codebook must be K x dim");
    book.entries = options.initial;
  } else {
    std::mt19937_64 rng(detail::mix_seed(seed, kVqStream));
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), std::size_t(0));
    std::shuffle(pick.begin(), pick.end(), rng);
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    for (std::uint32_t e = 0; e < k; ++e) {
      const std::size_t src = e < n ? pick[e] : any(rng);
      const auto f = feature(src);
      book.entries.insert(book.entries.end(), f.begin(), f.end());
    }
  }

  const double g = options.decay;
  std::vector<double> ema_count(k, 1.0);
  std::vector<double> ema_sum = book.entries;
  std::vector<double> batch_sum(std::size_t(k) * dim);
  std::vector<std::uint64_t> batch_count(k);
  std::vector<std::uint32_t> assign(n);
  for (std::uint32_t step = 0; step < steps; ++step) {
    std::fill(batch_sum.begin(), batch_sum.end(), 0.0);
    std::fill(batch_count.begin(), batch_count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) assign[i] = nearest_entry(book, feature(i));
    for (std::size_t i = 0; i < n; ++i) {
      const auto f = feature(i);
      ++batch_count[assign[i]];
      for (std::uint32_t d = 0; d < dim; ++d) batch_sum[std::size_t(assign[i]) * dim + d] += f[d];
    }
    for (std::uint32_t e = 0; e < k; ++e) {
      if (batch_count[e] == 0) continue;
      ema_count[e] = g * ema_count[e] + (1 - g) * double(batch_count[e]);
      for (std::uint32_t d = 0; d < dim; ++d) {
        const std::size_t at = std::size_t(e) * dim + d;
        ema_sum[at] = g * ema_sum[at] + (1 - g) * batch_sum[at];
        book.entries[at] = ema_sum[at] / ema_count[e];
      }
    }
  }

  book.counts.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) ++book.counts[nearest_entry(book, feature(i))];
  return book;
}

std::vector<double> clustered_features(std::uint32_t clusters, std::uint32_t per_cluster,
                                       std::uint32_t dim, double spread, std::uint64_t seed) {
  require(clusters >= 1 && per_cluster >= 1 && dim >= 1, ErrorKind::argument,
          "clustered_features: counts must be positive");
  std::mt19937_64 rng(detail::mix_seed(seed, kClusterStream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, spread);
  std::vector<double> centres(std::size_t(clusters) * dim);
  for (auto& c : centres) c = unit(rng);
  std::vector<double> out;
  out.reserve(std::size_t(clusters) * per_cluster * dim);
  for (std::uint32_t c = 0; c < clusters; ++c)
    for (std::uint32_t p = 0; p < per_cluster; ++p)
      for (std::uint32_t d = 0; d < dim; ++d) out.push_back(centres[std::size_t(c) * dim + d] + jitter(rng));
  return out;
}

std::vector<SweepRow> precision_sweep(const Autoencoder<float>& model, const Dataset& data,
                                      std::span<const double> amplitudes, std::uint64_t seed) {
  for (std::size_t i = 0; i < amplitudes.size(); ++i) {
    require(std::isfinite(amplitudes[i]) && amplitudes[i] >= 0, ErrorKind::argument,
            "precision_sweep: amplitudes must be finite and non-negative");
    require(i == 0 || amplitudes[i] >= amplitudes[i - 1], ErrorKind::argument,
            "precision_sweep: amplitudes must be ascending");
  }
  const double base = evaluation_loss(model, data, 0.0, seed);
  std::vector<SweepRow> rows;
  for (double a : amplitudes) {
    const double loss = a == 0 ? base : evaluation_loss(model, data, a, seed);
    rows.push_back({a, loss, base > 0 ? loss / base : std::numeric_limits<double>::infinity()});
  }
  return rows;
}

double f1(double precision, double recall) {
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0 && v <= 1; };
  require(in_unit(precision) && in_unit(recall), ErrorKind::argument,
          "f1: precision and recall must lie in [0,1]");
  require(precision + recall > 0, ErrorKind::argument, "f1: precision and recall are both zero");
  return 2 * precision * recall / (precision + recall);
}

std::string hit_histogram_csv(const HitStats& stats, std::uint32_t level) {
  require(level < stats.counts.size(), ErrorKind::argument,
          "hit_histogram_csv: level " + std::to_string(level) + " out of range");
  std::string out = "entry,count\n";
  const auto& counts = stats.counts[level];
  for (std::size_t i = 0; i < counts.size(); ++i)
    out += std::to_string(i) + "," + std::to_string(counts[i]) + "\n";
  return out;
}

std::string usage_csv(std::span<const HitStats> groups) {
  std::string out = "group,level,resolution,mode,entries,queries,hit_fraction,mean_hits,std_hits\n";
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (const auto& u : usage_report(groups[g]))
      out += std::to_string(g) + "," + std::to_string(u.level) + "," +
             std::to_string(u.resolution) + "," + mode_name(u.mode) + "," +
             std::to_string(u.entries) + "," + std::to_string(groups[g].queries) + "," +
             fmt(u.hit_fraction) + "," + fmt(u.mean_hits) + "," + fmt(u.std_hits) + "\n";
  return out;
}

std::string usage_summary(std::span<const HitStats> groups) {
  std::ostringstream out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out << "group " << g << " (" << groups[g].queries << " queries)\n";
    for (const auto& u : usage_report(groups[g])) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "  level %u  r=%-4u %-6s entries=%-8u hit=%.4f mean=%.2f std=%.2f\n",
                    u.level, u.resolution, mode_name(u.mode), u.entries, u.hit_fraction,
                    u.mean_hits, u.std_hits);
      out << line;
    }
  }
  const auto direct = min_direct_fraction(groups);
  if (direct)
    out << "min direct-mode hit fraction: " << fmt(*direct) << "\n";
  else
    out << "no direct-mode levels\n";
  return out.str();
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "amplitude,loss,ratio\n";
  for (const auto& r : rows) out += fmt(r.amplitude) + "," + fmt(r.loss) + "," + fmt(r.ratio) + "\n";
  return out;
}

template void record_hits<float>(const RetrievalResult<float>&, HitStats&);
template void record_hits<double>(const RetrievalResult<double>&, HitStats&);
template HitStats collect_hits<float>(const HashGroup<float>&, std::span<const Query<float>>);
template HitStats collect_hits<double>(const HashGroup<double>&, std::span<const Query<double>>);

}  // namespace bright
