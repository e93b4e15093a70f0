#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "error.hpp"
#include "oracles.hpp"
#include "selection_targets.hpp"
#include "test_util.hpp"

using namespace lookwhen;
using lwtest::normal_tensor;
using lwtest::random_tensor;

namespace {

std::vector<double> as_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// Random [T x N x N x D] grid without zero rows; with `coarse` the entries are
// small integers so duplicates and exact ties are common.
Tensor random_grid(std::mt19937_64& rng, bool coarse, std::size_t max_m = 64) {
  std::uniform_int_distribution<std::size_t> tdist(1, 4), ndist(1, 4), ddist(1, 6);
  std::size_t t, n;
  do {
    t = tdist(rng);
    n = ndist(rng);
  } while (t * n * n < 2 || t * n * n > max_m);
  const std::size_t d = ddist(rng);
  Tensor g({t, n, n, d});
  std::uniform_int_distribution<int> small(-2, 2);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t p = 0; p < t * n * n; ++p) {
    bool zero = true;
    while (zero) {
      for (std::size_t i = 0; i < d; ++i) {
        g[p * d + i] = coarse ? small(rng) : nd(rng);
        zero = zero && g[p * d + i] == 0.0;
      }
    }
  }
  return g;
}

}  // namespace

TEST_CASE("top1_distance hand examples") {
  const Tensor same({2, 1, 1, 2}, {0.6, 0.8, 0.6, 0.8});
  CHECK(as_vec(top1_distance(same).scores) == std::vector<double>{0.0, 0.0});
  const Tensor ortho({3, 1, 1, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(as_vec(top1_distance(ortho).scores) == std::vector<double>{1.0, 1.0, 1.0});
  CHECK_THROWS_AS(top1_distance(Tensor({1, 1, 1, 3}, {1, 2, 3})), InvalidArgument);
}

TEST_CASE("top1_distance names the zero-norm position") {
  Tensor g = Tensor::filled({2, 2, 2, 3}, 1.0);
  for (std::size_t i = 0; i < 3; ++i) g.at({1, 0, 1, i}) = 0.0;
  try {
    top1_distance(g);
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("(1, 0, 1)") != std::string::npos);
  }
}

TEST_CASE("top1_distance matches the pairwise oracle on 12 random vectors") {
  std::mt19937_64 rng(12);
  const Tensor f = normal_tensor({3, 2, 2, 4}, rng);
  CHECK(as_vec(top1_distance(f).scores) == oracle::top1(f));
}

TEST_CASE("topk_distance") {
  std::mt19937_64 rng(5);
  const Tensor f = normal_tensor({2, 3, 3, 5}, rng);
  CHECK(topk_distance(f, 1).scores == top1_distance(f).scores);
  // M-1 neighbours: mean of the whole distance row
  const auto all = as_vec(topk_distance(f, 17).scores);
  const auto want = oracle::topk(f, 17);
  CHECK(all == want);
  for (std::size_t p = 0; p < 18; ++p) {
    double s = 0.0;
    for (std::size_t q = 0; q < 18; ++q)
      if (q != p) s += 1.0 - oracle::cosine(f, p, q);
    CHECK(all[p] == doctest::Approx(s / 17).epsilon(1e-12));
  }
  CHECK_THROWS_AS(topk_distance(f, 0), InvalidArgument);
  CHECK_THROWS_AS(topk_distance(f, 18), InvalidArgument);
}

TEST_CASE("topk_distance with k=2 on three vectors with known cosines") {
  // Unit vectors with cos(a,b)=0.9, cos(a,c)=0.5, cos(b,c)=0.1, built by
  // Cholesky of the Gram matrix.
  const double l21 = 0.9, l22 = std::sqrt(1 - 0.81);
  const double l31 = 0.5, l32 = (0.1 - 0.5 * 0.9) / l22, l33 = std::sqrt(1 - l31 * l31 - l32 * l32);
  const Tensor f({3, 1, 1, 3}, {1, 0, 0, l21, l22, 0, l31, l32, l33});
  const auto u = as_vec(topk_distance(f, 2).scores);
  CHECK(u[0] == doctest::Approx(((1 - 0.9) + (1 - 0.5)) / 2).epsilon(1e-12));
  CHECK(u[1] == doctest::Approx(((1 - 0.9) + (1 - 0.1)) / 2).epsilon(1e-12));
  CHECK(u[2] == doctest::Approx(((1 - 0.5) + (1 - 0.1)) / 2).epsilon(1e-12));
}

TEST_CASE("kcenter_rank") {
  CHECK(as_vec(kcenter_rank(Tensor({1, 1, 1, 2}, {3, 4}), KCenterSpace::kFeature).scores) == std::vector<double>{1.0});
  // Points on a line at 0, 1, 2, 10: mean 3.25, so 10 is picked first, then 0,
  // then 2 (distance 2 to 0 beats 1's distance 1), then 1.
  const Tensor line({4, 1, 1, 1}, {0, 1, 2, 10});
  const auto u = as_vec(kcenter_rank(line, KCenterSpace::kPixel).scores);
  CHECK(u == std::vector<double>{2.0 / 3, 0.0, 1.0 / 3, 1.0});
  CHECK(oracle::fps_order(line, false) == std::vector<std::size_t>{3, 0, 2, 1});

  std::mt19937_64 rng(8);
  const Tensor f = normal_tensor({2, 2, 2, 6}, rng);
  CHECK(as_vec(kcenter_rank(f, KCenterSpace::kFeature).scores) == oracle::kcenter(f, true));
  Tensor z = f;
  for (std::size_t i = 0; i < 6; ++i) z[i] = 0.0;
  CHECK_THROWS_AS(kcenter_rank(z, KCenterSpace::kFeature), InvalidArgument);
  CHECK_NOTHROW(kcenter_rank(z, KCenterSpace::kPixel));
}

TEST_CASE("attention targets") {
  const Tensor uniform = Tensor::filled({2, 2, 2}, 0.125);
  CHECK(as_vec(rank_normalize(attention_target(uniform)).map) == oracle::even_spacing(8));
  Tensor hot({2, 2, 2});
  hot[5] = 1.0;
  CHECK(rank_normalize(attention_target(hot)).map[5] == 1.0);
  Tensor neg = uniform;
  neg[3] = -0.1;
  CHECK_THROWS_AS(attention_target(neg), InvalidArgument);

  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({4, 3, 3}, rng, 0, 1);
  CHECK(as_vec(rank_normalize(attention_target(a)).map) == oracle::ranks(as_vec(a)));

  const Tensor still = Tensor::filled({3, 2, 2}, 0.3);
  const Tensor still_d = delta_attn_target(still).scores;
  for (double v : still_d.data()) CHECK(v == 0.0);
  const Tensor c({2, 2}, {0.5, 0.25, 1.0, 0.0});
  Tensor ramp({4, 2, 2});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < 4; ++i) ramp[t * 4 + i] = static_cast<double>(t) * c[i];
  const Tensor d = delta_attn_target(ramp).scores;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < 4; ++i) CHECK(d[t * 4 + i] == doctest::Approx(std::abs(c[i])).epsilon(1e-15));
  const Tensor r = random_tensor({4, 3, 3}, rng, 0, 1);
  CHECK(as_vec(delta_attn_target(r).scores) == oracle::delta_attn(r));
  CHECK_THROWS_AS(delta_attn_target(Tensor({1, 2, 2})), InvalidArgument);
}

TEST_CASE("rank_normalize") {
  // Ascending order is 0.1, 0.3, 0.5, 0.9.
  const Tensor s({4}, {0.5, 0.1, 0.9, 0.3});
  CHECK(as_vec(rank_normalize(s).map) == std::vector<double>{2.0 / 3, 0.0, 1.0, 1.0 / 3});
  CHECK(as_vec(rank_normalize(Tensor::filled({5}, 2.0)).map) == oracle::even_spacing(5));
  CHECK(as_vec(rank_normalize(Tensor({1}, {7.0})).map) == std::vector<double>{1.0});
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({3, 4, 4}, rng);
  const Tensor once = rank_normalize(x).map;
  CHECK(rank_normalize(once).map == once);
  CHECK(once.shape() == x.shape());
}

TEST_CASE("random_target") {
  const Tensor a = random_target({2, 3, 3}, 11).map;
  CHECK(a == random_target({2, 3, 3}, 11).map);
  CHECK(sorted(as_vec(a)) == oracle::even_spacing(18));
  std::set<std::vector<double>> seen;
  for (std::uint64_t s = 0; s < 10; ++s) seen.insert(as_vec(random_target({2, 3, 3}, s).map));
  CHECK(seen.size() == 10);
}

TEST_CASE("target specs parse and print") {
  for (const char* m : {"top1", "topk:3", "kcenter-feat", "kcenter-pix", "attn", "dattn", "random"}) {
    CHECK(to_string(parse_target_spec(m)) == m);
  }
  for (const char* bad : {"", "top2", "topk:", "topk:0", "topk:x", "topk:3x", "kcenter"}) {
    CHECK_THROWS_AS(parse_target_spec(bad), InvalidArgument);
  }
}

TEST_CASE("oracle equivalence on random grids with ties") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const Tensor f = random_grid(rng, trial % 2 == 0);
    const std::size_t m = f.numel() / f.shape().back();
    CAPTURE(trial);
    CHECK(as_vec(top1_distance(f).scores) == oracle::top1(f));
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, m - 1}) {
      if (k >= 1 && k <= m - 1) CHECK(as_vec(topk_distance(f, k).scores) == oracle::topk(f, k));
    }
    CHECK(as_vec(kcenter_rank(f, KCenterSpace::kFeature).scores) == oracle::kcenter(f, true));
    CHECK(as_vec(kcenter_rank(f, KCenterSpace::kPixel).scores) == oracle::kcenter(f, false));
  }
}

TEST_CASE("top1 invariances") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = normal_tensor({2, 3, 3, 4}, rng);
    const std::size_t m = 18, d = 4;
    // positive per-token rescaling
    Tensor scaled = f;
    std::uniform_real_distribution<double> sc(0.1, 10.0);
    for (std::size_t p = 0; p < m; ++p) {
      const double c = sc(rng);
      for (std::size_t i = 0; i < d; ++i) scaled[p * d + i] *= c;
    }
    CHECK(max_abs_diff(top1_distance(scaled).scores, top1_distance(f).scores) < 1e-12);

    // token permutation
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor pf(f.shape());
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t i = 0; i < d; ++i) pf[p * d + i] = f[perm[p] * d + i];
    const Tensor u = top1_distance(f).scores, pu = top1_distance(pf).scores;
    const Tensor k = topk_distance(f, 3).scores, pk = topk_distance(pf, 3).scores;
    const Tensor c = kcenter_rank(f, KCenterSpace::kFeature).scores, pc = kcenter_rank(pf, KCenterSpace::kFeature).scores;
    for (std::size_t p = 0; p < m; ++p) {
      CHECK(pu[p] == doctest::Approx(u[perm[p]]).epsilon(1e-12));
      CHECK(pk[p] == doctest::Approx(k[perm[p]]).epsilon(1e-12));
      CHECK(pc[p] == c[perm[p]]);
    }
    for (double v : u.data()) CHECK((v >= 0.0 && v <= 2.0));
  }
}

TEST_CASE("compute_target dispatch") {
  std::mt19937_64 rng(6);
  const Tensor f = normal_tensor({2, 2, 2, 3}, rng);
  CHECK(compute_target(parse_target_spec("top1"), f).map == rank_normalize(top1_distance(f)).map);
  CHECK(compute_target(parse_target_spec("random"), f, 3).map.shape() == Shape{2, 2, 2});
  const Tensor a = random_tensor({2, 2, 2}, rng, 0, 1);
  CHECK(compute_target(parse_target_spec("attn"), a).map == rank_normalize(a).map);
}
