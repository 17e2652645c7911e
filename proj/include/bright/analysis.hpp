#pragma once

// Structural checks: per-entry hit statistics, a minimal EMA vector-quantizer
// baseline for usage comparisons, key-precision sweeps and the F1 helper.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bright/hashgrid.hpp"
#include "bright/trainer.hpp"

namespace bright {

/// Corner-touch counts for every entry of every level of one group.
struct HitStats {
  std::vector<LevelLayout> layouts;
  std::vector<std::vector<std::uint64_t>> counts;  // per level, table_size entries
  std::uint64_t queries = 0;
  std::uint32_t corners_per_level = 0;

  bool operator==(const HitStats&) const = default;
};

HitStats make_hit_stats(const GridConfig& cfg);

/// Counts the corners of one retrieval.
template <class Real>
void record_hits(const RetrievalResult<Real>& retrieval, HitStats& stats);

template <class Real>
HitStats collect_hits(const HashGroup<Real>& group, std::span<const Query<Real>> queries);

/// Sums two stats with identical layouts.
HitStats merge(const HitStats& a, const HitStats& b);

/// Hits gathered from one pass over `data`: every image is encoded, tiled and
/// queried against every group, as in a training epoch. With `noise` the
/// training perturbation is applied. Result is independent of `threads`.
std::vector<HitStats> collect_model_hits(const Autoencoder<float>& model, const Dataset& data,
                                         bool noise, std::uint64_t seed,
                                         std::uint32_t threads = 1);

struct LevelUsage {
  std::uint32_t level = 0;
  std::uint32_t resolution = 0;
  IndexingMode mode = IndexingMode::direct;
  std::uint32_t entries = 0;
  double hit_fraction = 0;
  double mean_hits = 0;
  double std_hits = 0;  // population standard deviation
};

std::vector<LevelUsage> usage_report(const HitStats& stats);

/// Smallest hit fraction over direct-mode levels; nullopt when none exist.
std::optional<double> min_direct_fraction(std::span<const HitStats> groups);

struct VQCodebook {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<double> entries;  // k x dim
  std::vector<std::uint64_t> counts;  // assignments in the final pass

  std::span<const double> entry(std::uint32_t i) const { return {entries.data() + std::size_t(i) * dim, dim}; }
  double usage_fraction() const;
};

struct VQOptions {
  double decay = 0.99;
  // When set (k x dim), replaces the random-subset initialisation.
  std::vector<double> initial;
};

/// Index of the nearest entry by squared distance; ties go to the lowest index.
std::uint32_t nearest_entry(const VQCodebook& book, std::span<const double> x);

/// EMA k-means on `features` (n x dim, row-major). Each step assigns every
/// feature to its nearest entry and moves each entry's running sum and count
/// toward its assigned features. Entries that are never assigned are left
/// untouched.
VQCodebook vq_train(std::span<const double> features, std::uint32_t dim, std::uint32_t k,
                    std::uint32_t steps, std::uint64_t seed, const VQOptions& options = {});

/// `per_cluster` points around each of `clusters` centres drawn in [0,1]^dim,
/// with isotropic Gaussian spread `spread`.
std::vector<double> clustered_features(std::uint32_t clusters, std::uint32_t per_cluster,
                                       std::uint32_t dim, double spread, std::uint64_t seed);

struct SweepRow {
  double amplitude = 0;
  double loss = 0;
  double ratio = 0;  // loss / loss at amplitude 0
};

/// Evaluation loss under uniform key perturbation of each amplitude. The
/// amplitudes must be ascending, non-negative and finite. The ratio column is
/// relative to a noise-free evaluation.
std::vector<SweepRow> precision_sweep(const Autoencoder<float>& model, const Dataset& data,
                                      std::span<const double> amplitudes, std::uint64_t seed);

/// 2PR/(P+R). Both arguments must lie in [0,1] and not both be zero.
double f1(double precision, double recall);

std::string hit_histogram_csv(const HitStats& stats, std::uint32_t level);
std::string usage_csv(std::span<const HitStats> groups);
std::string usage_summary(std::span<const HitStats> groups);
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace bright
