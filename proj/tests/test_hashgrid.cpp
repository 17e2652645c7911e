#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "bright/error.hpp"
#include "bright/hashgrid.hpp"

using namespace bright;

namespace {

GridConfig single_level(std::uint32_t r, std::uint32_t max_entries = 1u << 12, std::uint32_t cv = 2) {
  GridConfig g;
  g.n_groups = 1;
  g.n_resolutions = 1;
  g.key_len = 1;
  g.entry_dim = cv;
  g.max_entries = max_entries;
  g.r_min = g.r_max = r;
  g.out_dim_per_group = cv;
  g.mlp_hidden = 0;
  return g;
}

template <class Real>
void randomize_entries(HashGroup<Real>& g, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& level : g.levels())
    for (auto& e : level.entries) e = static_cast<Real>(u(rng));
}

template <class Real>
void identity_mlp(HashGroup<Real>& g) {
  auto& layer = g.mlp()[0];
  REQUIRE(layer.in_dim == layer.out_dim);
  std::fill(layer.weights.begin(), layer.weights.end(), Real(0));
  std::fill(layer.bias.begin(), layer.bias.end(), Real(0));
  for (std::uint32_t i = 0; i < layer.in_dim; ++i) layer.weights[i * layer.in_dim + i] = Real(1);
}

template <class Real>
Query<Real> query3(double a, double b, double c) {
  const Real v[3] = {Real(a), Real(b), Real(c)};
  return make_clamped_query<Real>(std::span<const Real>(v, 3));
}

// Stored vector at lattice vertex (a, b, c) of level 0.
std::vector<double> vertex(const HashGroup<double>& g, std::uint32_t a, std::uint32_t b, std::uint32_t c) {
  const auto& level = g.levels()[0];
  const std::uint32_t corner[3] = {a, b, c};
  const std::uint32_t idx = hash_index(corner, level.layout);
  const std::uint32_t cv = g.config().entry_dim;
  return {level.entries.begin() + idx * cv, level.entries.begin() + (idx + 1) * cv};
}

// Textbook trilinear interpolation written out corner by corner.
std::vector<double> trilinear_oracle(const HashGroup<double>& g, double x, double y, double z) {
  const double r = g.levels()[0].layout.resolution;
  auto cell = [&](double q, std::uint32_t& i0) {
    double p = q * r;
    double f = std::min(std::floor(p), r - 1);
    i0 = static_cast<std::uint32_t>(f);
    return p - f;
  };
  std::uint32_t i, j, k;
  const double tx = cell(x, i), ty = cell(y, j), tz = cell(z, k);
  const std::uint32_t cv = g.config().entry_dim;
  std::vector<double> out(cv, 0.0);
  auto add = [&](double w, std::uint32_t a, std::uint32_t b, std::uint32_t c) {
    const auto v = vertex(g, a, b, c);
    for (std::uint32_t ch = 0; ch < cv; ++ch) out[ch] += w * v[ch];
  };
  add((1 - tx) * (1 - ty) * (1 - tz), i, j, k);
  add(tx * (1 - ty) * (1 - tz), i + 1, j, k);
  add((1 - tx) * ty * (1 - tz), i, j + 1, k);
  add(tx * ty * (1 - tz), i + 1, j + 1, k);
  add((1 - tx) * (1 - ty) * tz, i, j, k + 1);
  add(tx * (1 - ty) * tz, i + 1, j, k + 1);
  add((1 - tx) * ty * tz, i, j + 1, k + 1);
  add(tx * ty * tz, i + 1, j + 1, k + 1);
  return out;
}

}  // namespace

TEST_CASE("geometric resolution schedule") {
  CHECK(resolution_schedule(4, 64, 16) ==
        std::vector<std::uint32_t>{4, 5, 6, 7, 8, 10, 12, 15, 18, 21, 25, 31, 37, 44, 53, 64});
  CHECK(resolution_schedule(4, 16, 4) == std::vector<std::uint32_t>{4, 6, 10, 16});
  CHECK(resolution_schedule(5, 5, 1) == std::vector<std::uint32_t>{5});
  CHECK_THROWS_AS(resolution_schedule(4, 8, 1), Error);
  CHECK_THROWS_AS(resolution_schedule(8, 4, 3), Error);
}

TEST_CASE("lattice vertex count and layout switch") {
  CHECK(lattice_vertices(64, 3) == 274625);
  CHECK(lattice_vertices(1, 3) == 8);
  CHECK(lattice_vertices(1000000, 8) == UINT64_MAX);
  const auto direct = make_level_layout(15, 3, 4096);
  CHECK(direct.mode == IndexingMode::direct);
  CHECK(direct.table_size == 4096);
  const auto hashed = make_level_layout(16, 3, 4096);
  CHECK(hashed.mode == IndexingMode::hashed);
  CHECK(hashed.table_size == 4096);
}

TEST_CASE("hash_index: row-major when direct, prime XOR when hashed") {
  const auto direct = make_level_layout(4, 3, 4096);
  const std::uint32_t c1[3] = {1, 2, 3};
  CHECK(hash_index(c1, direct) == 38);
  const std::uint32_t top[3] = {4, 4, 4};
  CHECK(hash_index(top, direct) == 124);
  const std::uint32_t over[3] = {5, 0, 0};
  CHECK_THROWS_AS(hash_index(over, direct), Error);
  const std::uint32_t two[2] = {0, 0};
  CHECK_THROWS_AS(hash_index(two, direct), Error);

  const auto hashed = make_level_layout(20, 3, 4096);
  const std::uint32_t ones[3] = {1, 1, 1};
  CHECK(hash_index(ones, hashed) == 3621);
  const auto big = make_level_layout(64, 3, 1u << 18);
  const std::uint32_t c2[3] = {3, 5, 7};
  CHECK(hash_index(c2, big) == 66917);
}

TEST_CASE("hash collisions over a 65^3 lattice are near the birthday estimate") {
  const auto layout = make_level_layout(64, 3, 1u << 18);
  REQUIRE(layout.mode == IndexingMode::hashed);
  std::vector<std::uint8_t> used(layout.table_size, 0);
  std::uint64_t n = 0, collisions = 0;
  for (std::uint32_t a = 0; a <= 64; ++a)
    for (std::uint32_t b = 0; b <= 64; ++b)
      for (std::uint32_t c = 0; c <= 64; ++c) {
        const std::uint32_t corner[3] = {a, b, c};
        auto& slot = used[hash_index(corner, layout)];
        collisions += slot;
        slot = 1;
        ++n;
      }
  const double t = layout.table_size;
  const double expected = double(n) - t * (1 - std::exp(-double(n) / t));
  MESSAGE("collisions " << collisions << ", birthday estimate " << expected);
  CHECK(double(collisions) <= 2 * expected);
  CHECK(double(collisions) >= 0.5 * expected);
}

TEST_CASE("make_clamped_query clamps and flags out-of-range components") {
  auto q = query3<double>(-0.5, 0.3, 1.5);
  CHECK(q.coords[0] == 0.0);
  CHECK(q.coords[1] == 0.3);
  CHECK(q.coords[2] == 1.0);
  CHECK(q.clamped_mask == 0b101);
  const double nan3[3] = {0.1, std::nan(""), 0.2};
  CHECK_THROWS_AS(make_clamped_query<double>(std::span<const double>(nan3, 3)), Error);
}

TEST_CASE("corner weights: partition of unity and non-negativity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    auto q = query3<float>(u(rng), u(rng), u(rng));
    for (std::uint32_t r : {1u, 3u, 16u, 64u}) {
      const auto cw = corner_weights(q, r);
      REQUIRE(cw.size() == 8);
      double sum = 0;
      for (const auto& c : cw) {
        CHECK(c.weight >= 0.0f);
        CHECK(c.weight <= 1.0f);
        sum += c.weight;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("q = 1 lands in the last cell") {
  auto q = query3<float>(1.0, 1.0, 1.0);
  const auto cw = corner_weights(q, 8);
  for (const auto& c : cw) {
    const bool top = c.lattice[0] == 8 && c.lattice[1] == 8 && c.lattice[2] == 8;
    CHECK(c.weight == (top ? 1.0f : 0.0f));
    CHECK(c.lattice[0] <= 8);
  }
}

TEST_CASE("retrieve matches a naive trilinear oracle") {
  for (auto [r, tmax] : {std::pair{3u, 4096u}, std::pair{20u, 1024u}}) {
    HashGroup<double> g(single_level(r, tmax), 1);
    randomize_entries(g, 7);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
      const double x = u(rng), y = u(rng), z = u(rng);
      const auto got = g.retrieve(query3<double>(x, y, z)).concat_features;
      const auto want = trilinear_oracle(g, x, y, z);
      for (std::size_t ch = 0; ch < want.size(); ++ch) worst = std::max(worst, std::abs(got[ch] - want[ch]));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("vertex exactness at direct-mode lattice vertices") {
  const std::uint32_t r = 5;
  HashGroup<double> g(single_level(r), 2);
  randomize_entries(g, 3);
  for (std::uint32_t a = 0; a <= r; ++a)
    for (std::uint32_t b = 0; b <= r; ++b)
      for (std::uint32_t c = 0; c <= r; ++c) {
        const auto got = g.retrieve(query3<double>(double(a) / r, double(b) / r, double(c) / r)).concat_features;
        const auto want = vertex(g, a, b, c);
        for (std::size_t ch = 0; ch < want.size(); ++ch) CHECK(std::abs(got[ch] - want[ch]) <= 1e-12);
      }
}

TEST_CASE("retrieval is linear in the entries") {
  GridConfig cfg = single_level(4, 64);
  cfg.n_resolutions = 3;
  cfg.r_max = 12;
  HashGroup<double> a(cfg, 1), b(cfg, 2), mix(cfg, 3);
  randomize_entries(a, 11);
  randomize_entries(b, 12);
  const double alpha = 0.7, beta = -1.3;
  for (std::size_t l = 0; l < mix.levels().size(); ++l)
    for (std::size_t i = 0; i < mix.levels()[l].entries.size(); ++i)
      mix.levels()[l].entries[i] = alpha * a.levels()[l].entries[i] + beta * b.levels()[l].entries[i];
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    const auto q = query3<double>(u(rng), u(rng), u(rng));
    const auto fa = a.retrieve(q).concat_features, fb = b.retrieve(q).concat_features;
    const auto fm = mix.retrieve(q).concat_features;
    for (std::size_t i = 0; i < fm.size(); ++i) CHECK(std::abs(fm[i] - (alpha * fa[i] + beta * fb[i])) <= 1e-6);
  }
}

TEST_CASE("interpolant is continuous across cell boundaries") {
  const std::uint32_t r = 6;
  HashGroup<double> g(single_level(r), 4);
  randomize_entries(g, 21, -1, 1);
  const double lipschitz_bound = 3.0 * r * 2.0;  // D axes x r x entry range
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::uint32_t axis = 0; axis < 3; ++axis)
    for (std::uint32_t k = 1; k < r; ++k) {
      double p[3] = {u(rng), u(rng), u(rng)};
      p[axis] = double(k) / r;
      double lo[3] = {p[0], p[1], p[2]}, hi[3] = {p[0], p[1], p[2]};
      lo[axis] -= 1e-6;
      hi[axis] += 1e-6;
      const auto fl = g.retrieve(query3<double>(lo[0], lo[1], lo[2])).concat_features;
      const auto fh = g.retrieve(query3<double>(hi[0], hi[1], hi[2])).concat_features;
      for (std::size_t ch = 0; ch < fl.size(); ++ch)
        CHECK(std::abs(fl[ch] - fh[ch]) <= lipschitz_bound * 2e-6);
    }
}

TEST_CASE("identity MLP passes concatenated features through") {
  HashGroup<float> g(single_level(4), 1);
  randomize_entries(g, 2);
  identity_mlp(g);
  const auto q = query3<float>(0.3, 0.6, 0.9);
  CHECK(g.encode_feature(q) == g.retrieve(q).concat_features);
}

TEST_CASE("linear MLP matches a matrix-product oracle") {
  GridConfig cfg = single_level(4);
  cfg.out_dim_per_group = 3;
  HashGroup<double> g(cfg, 5);
  randomize_entries(g, 6);
  const auto q = query3<double>(0.21, 0.77, 0.4);
  const auto feat = g.retrieve(q).concat_features;
  const auto& layer = g.mlp()[0];
  const auto out = g.encode_feature(q);
  for (std::uint32_t o = 0; o < 3; ++o) {
    double want = layer.bias[o];
    for (std::uint32_t i = 0; i < layer.in_dim; ++i) want += layer.weights[o * layer.in_dim + i] * feat[i];
    CHECK(out[o] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("default four-group layout has 64 inputs and 128 outputs per group") {
  GridConfig cfg;
  cfg.n_groups = 4;
  cfg.n_resolutions = 16;
  cfg.entry_dim = 4;
  cfg.max_entries = 1u << 18;
  cfg.r_min = 4;
  cfg.r_max = 64;
  cfg.out_dim_per_group = 128;
  CHECK(cfg.concat_dim() == 64);
  CHECK(cfg.feature_dim() == 512);
}

TEST_CASE("key gradient reproduces the two-dimensional cell rule") {
  // One level with r = 1: key = x, first spatial axis = y, second spatial
  // axis pinned to 0. Q3 = (0,0), Q4 = (1,0), Q1 = (0,1), Q2 = (1,1).
  HashGroup<double> g(single_level(1, 4096, 2), 1);
  identity_mlp(g);
  const std::vector<double> q1 = {0.3, -1.2}, q2 = {2.0, 0.5}, q3 = {-0.7, 0.1}, q4 = {1.1, 1.9};
  auto set = [&](std::uint32_t a, std::uint32_t b, const std::vector<double>& v) {
    auto& level = g.levels()[0];
    const std::uint32_t corner[3] = {a, b, 0};
    const auto idx = hash_index(corner, level.layout);
    level.entries[idx * 2] = v[0];
    level.entries[idx * 2 + 1] = v[1];
  };
  set(0, 0, q3);
  set(1, 0, q4);
  set(0, 1, q1);
  set(1, 1, q2);
  const std::vector<double> upstream = {0.8, -0.4};
  for (auto [x, y] : {std::pair{0.25, 0.6}, std::pair{0.7, 0.1}, std::pair{0.5, 0.5}}) {
    const auto bundle = g.backward(query3<double>(x, y, 0.0), upstream);
    double want = 0;
    for (int ch = 0; ch < 2; ++ch)
      want += ((1 - y) * (q4[ch] - q3[ch]) + y * (q2[ch] - q1[ch])) * upstream[ch];
    CHECK(bundle.key_grad[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("constant entries give zero key gradient") {
  GridConfig cfg = single_level(4);
  cfg.n_resolutions = 2;
  cfg.r_max = 9;
  cfg.mlp_hidden = 8;
  HashGroup<double> g(cfg, 3);
  for (auto& level : g.levels()) std::fill(level.entries.begin(), level.entries.end(), 0.37);
  const std::vector<double> up(cfg.out_dim_per_group, 1.0);
  const auto b = g.backward(query3<double>(0.31, 0.52, 0.83), up);
  CHECK(std::abs(b.key_grad[0]) <= 1e-12);
}

TEST_CASE("clamped key components receive no gradient") {
  HashGroup<double> g(single_level(4), 1);
  randomize_entries(g, 1);
  const std::vector<double> up = {1.0, 1.0};
  const auto b = g.backward(query3<double>(1.2, 0.4, 0.4), up);
  CHECK(b.key_grad[0] == 0.0);
}

TEST_CASE("backward matches central differences in 32-bit for queries away from boundaries") {
  GridConfig cfg;
  cfg.n_groups = 1;
  cfg.n_resolutions = 3;
  cfg.key_len = 1;
  cfg.entry_dim = 2;
  cfg.max_entries = 256;
  cfg.r_min = 3;
  cfg.r_max = 12;
  cfg.out_dim_per_group = 4;
  cfg.mlp_hidden = 0;
  const auto res = resolution_schedule(cfg.r_min, cfg.r_max, cfg.n_resolutions);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  auto far_from_boundaries = [&](double v) {
    for (auto r : res) {
      const double p = v * r;
      if (std::abs(p - std::round(p)) < 1e-3 * r) return false;
    }
    return true;
  };
  const double h = 1e-4;
  int fixtures = 0;
  double worst = 0;
  // The analytic backward runs in float; the difference quotients are taken
  // on a double copy at the same float-rounded point so they carry no float
  // rounding noise of their own.
  while (fixtures < 1000) {
    HashGroup<float> g(cfg, rng());
    randomize_entries(g, rng());
    double c[3];
    for (auto& v : c) {
      do v = u(rng); while (!far_from_boundaries(v));
      v = double(float(v));
    }
    std::vector<float> up(cfg.out_dim_per_group);
    for (auto& v : up) v = float(u(rng) * 2 - 1);
    const auto gd = g.cast<double>();
    auto objective = [&](const HashGroup<double>& grp, const double* qc) {
      const auto out = grp.encode_feature(query3<double>(qc[0], qc[1], qc[2]));
      double s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * double(up[i]);
      return s;
    };
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-2}); };
    const auto b = g.backward(query3<float>(c[0], c[1], c[2]), up);
    {
      double cp[3] = {c[0] + h, c[1], c[2]}, cm[3] = {c[0] - h, c[1], c[2]};
      worst = std::max(worst, rel(b.key_grad[0], (objective(gd, cp) - objective(gd, cm)) / (2.0 * h)));
    }
    {
      const std::size_t l = rng() % cfg.n_resolutions;
      auto it = b.table_grads[l].begin();
      std::advance(it, rng() % b.table_grads[l].size());
      const std::uint32_t ch = rng() % cfg.entry_dim;
      auto p = gd, m = gd;
      p.levels()[l].entries[it->first * cfg.entry_dim + ch] += h;
      m.levels()[l].entries[it->first * cfg.entry_dim + ch] -= h;
      worst = std::max(worst, rel(it->second[ch], (objective(p, c) - objective(m, c)) / (2.0 * h)));
    }
    {
      const std::size_t i = rng() % g.mlp()[0].weights.size();
      auto p = gd, m = gd;
      p.mlp()[0].weights[i] += h;
      m.mlp()[0].weights[i] -= h;
      worst = std::max(worst, rel(b.mlp_grads[0].weights[i], (objective(p, c) - objective(m, c)) / (2.0 * h)));
    }
    ++fixtures;
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst <= 1e-3);
}

TEST_CASE("backward matches central differences in 64-bit with a hidden layer") {
  GridConfig cfg;
  cfg.n_groups = 1;
  cfg.n_resolutions = 2;
  cfg.key_len = 2;
  cfg.entry_dim = 3;
  cfg.max_entries = 128;
  cfg.r_min = 2;
  cfg.r_max = 5;
  cfg.out_dim_per_group = 3;
  cfg.mlp_hidden = 6;
  HashGroup<double> g(cfg, 4);
  randomize_entries(g, 5);
  const double qc[4] = {0.31, 0.62, 0.47, 0.13};
  const auto q = make_clamped_query<double>(std::span<const double>(qc, 4));
  const std::vector<double> up = {0.5, -1.0, 0.25};
  auto objective = [&](const HashGroup<double>& grp, const double* c) {
    const auto out = grp.encode_feature(make_clamped_query<double>(std::span<const double>(c, 4)));
    return out[0] * up[0] + out[1] * up[1] + out[2] * up[2];
  };
  const auto b = g.backward(q, up);
  const double h = 1e-6;
  for (int d = 0; d < 2; ++d) {
    double cp[4] = {qc[0], qc[1], qc[2], qc[3]}, cm[4] = {qc[0], qc[1], qc[2], qc[3]};
    cp[d] += h;
    cm[d] -= h;
    CHECK(b.key_grad[d] == doctest::Approx((objective(g, cp) - objective(g, cm)) / (2 * h)).epsilon(1e-6));
  }
  for (std::size_t l = 0; l < 2; ++l)
    for (const auto& [idx, grad] : b.table_grads[l])
      for (std::uint32_t ch = 0; ch < cfg.entry_dim; ++ch) {
        auto p = g, m = g;
        p.levels()[l].entries[idx * cfg.entry_dim + ch] += h;
        m.levels()[l].entries[idx * cfg.entry_dim + ch] -= h;
        CHECK(grad[ch] == doctest::Approx((objective(p, qc) - objective(m, qc)) / (2 * h)).epsilon(1e-6));
      }
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < g.mlp()[k].weights.size(); i += 3) {
      auto p = g, m = g;
      p.mlp()[k].weights[i] += h;
      m.mlp()[k].weights[i] -= h;
      CHECK(b.mlp_grads[k].weights[i] == doctest::Approx((objective(p, qc) - objective(m, qc)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("backward rejects a mismatched upstream gradient") {
  HashGroup<float> g(single_level(4), 1);
  const std::vector<float> up = {1.0f, 2.0f, 3.0f};
  CHECK_THROWS_AS(g.backward(query3<float>(0.5, 0.5, 0.5), up), Error);
}

TEST_CASE("retrieval is deterministic for a fixed seed") {
  GridConfig cfg;
  HashGroup<float> a(cfg, 99), b(cfg, 99);
  CHECK(a == b);
  const auto q = query3<float>(0.123, 0.456, 0.789);
  CHECK(a.encode_feature(q) == b.encode_feature(q));
}

TEST_CASE("entries initialise within 1e-4") {
  HashGroup<float> g(GridConfig{}, 1);
  for (const auto& level : g.levels())
    for (float e : level.entries) CHECK(std::abs(e) <= 1e-4f);
}

TEST_CASE("param_count") {
  GridConfig lsun;
  lsun.n_groups = 4;
  lsun.n_resolutions = 16;
  lsun.key_len = 1;
  lsun.entry_dim = 4;
  lsun.max_entries = 1u << 18;
  lsun.r_min = 4;
  lsun.r_max = 64;
  lsun.out_dim_per_group = 128;
  const auto p1 = param_count(lsun);
  CHECK(p1.table_params == 10288080);
  CHECK(std::abs(double(p1.table_params) / 11.4e6 - 1) <= 0.2);
  lsun.key_len = 2;
  const auto p2 = param_count(lsun);
  CHECK(p2.table_params == 32978528);
  CHECK(std::abs(double(p2.table_params) / 30.5e6 - 1) <= 0.2);

  GridConfig tiny = single_level(1, 4096, 1);
  tiny.out_dim_per_group = 1;
  CHECK(param_count(tiny).table_params == 8);
  // Without a hidden layer the projection is N_h * (N_r * C_v + 1) * out.
  CHECK(param_count(tiny).mlp_params == 2);

  // Equals the sizes of the arrays a constructed group actually allocates.
  GridConfig desk;
  HashGroup<float> g(desk, 1);
  std::uint64_t tables = 0, mlp = 0;
  for (const auto& level : g.levels()) tables += level.entries.size();
  for (const auto& layer : g.mlp()) mlp += layer.weights.size() + layer.bias.size();
  CHECK(param_count(desk).table_params == tables * desk.n_groups);
  CHECK(param_count(desk).mlp_params == mlp * desk.n_groups);
}

TEST_CASE("grid config validation") {
  GridConfig g;
  g.max_entries = 1000;
  CHECK_THROWS_AS(g.validate(), Error);
  g = GridConfig{};
  g.key_len = 0;
  CHECK_THROWS_AS(g.validate(), Error);
  g = GridConfig{};
  g.r_max = 2;
  CHECK_THROWS_AS(g.validate(), Error);
  try {
    g.validate();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}
