#include <doctest.h>

#include <cmath>

#include "msopt/cuts.hpp"
#include "msopt/rng.hpp"

using namespace msopt;

namespace {

CutSet random_cutset(Rng& rng, int dim, int count) {
  CutSet cs(2, trivial_cut_nonnegative(dim));
  for (int k = 1; k < count; ++k) {
    Cut c;
    c.beta.resize(dim);
    for (auto& b : c.beta) b = rng.uniform(-3.0, 3.0);
    c.alpha = rng.uniform(-5.0, 5.0);
    cs.add(c);
  }
  return cs;
}

}  // namespace

TEST_CASE("trivial cut evaluates to zero everywhere") {
  CutSet cs(2, trivial_cut_nonnegative(1));
  const Vec x{7.0};
  CHECK(cs.evaluate(x) == doctest::Approx(0.0));
}

TEST_CASE("two-piece max with crossover at x = 1") {
  CutSet cs(2, Cut{{1.0}, 0.0, CutOrigin::Sddp});
  cs.add(Cut{{-1.0}, 2.0, CutOrigin::Sddp});
  CHECK(cs.evaluate(Vec{0.5}) == doctest::Approx(1.5));
  CHECK(cs.evaluate(Vec{2.0}) == doctest::Approx(2.0));
  CHECK(cs.argmax(Vec{0.5}) == 1);
  // Tie at the crossover resolves to the lowest index.
  CHECK(cs.argmax(Vec{1.0}) == 0);
}

TEST_CASE("evaluate equals a brute-force max over random cuts") {
  Rng rng(5150);
  CutSet cs = random_cutset(rng, 3, 20);
  for (int trial = 0; trial < 50; ++trial) {
    Vec x(3);
    for (auto& v : x) v = rng.uniform(-10.0, 10.0);
    double expected = -1e300;
    for (const Cut& c : cs.cuts()) {
      double v = c.alpha;
      for (int d = 0; d < 3; ++d) v += c.beta[d] * x[d];
      expected = std::max(expected, v);
    }
    CHECK(cs.evaluate(x) == doctest::Approx(expected));
  }
}

TEST_CASE("add_cut is pointwise monotone and duplicates are idempotent") {
  Rng rng(99);
  CutSet cs(2, trivial_cut_nonnegative(2));
  CutSet dup = cs;
  dup.add(trivial_cut_nonnegative(2));
  for (int trial = 0; trial < 20; ++trial) {
    Vec x{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    CHECK(dup.evaluate(x) == doctest::Approx(cs.evaluate(x)));
  }

  CutSet grown = random_cutset(rng, 2, 10);
  for (int round = 0; round < 5; ++round) {
    CutSet before = grown;
    Cut c;
    c.beta = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
    c.alpha = rng.uniform(-5, 5);
    grown.add(c);
    for (int trial = 0; trial < 30; ++trial) {
      Vec x{rng.uniform(-8, 8), rng.uniform(-8, 8)};
      CHECK(grown.evaluate(x) >= before.evaluate(x) - 1e-12);
    }
  }

  CutSet dominated(2, trivial_cut_nonnegative(1));
  dominated.add(Cut{{0.0}, 5.0, CutOrigin::Sddp});
  CHECK(dominated.evaluate(Vec{123.0}) == doctest::Approx(5.0));
}

TEST_CASE("add_cut rejects non-finite coefficients") {
  CutSet cs(2, trivial_cut_nonnegative(1));
  CHECK_THROWS_AS(cs.add(Cut{{std::nan("")}, 0.0, CutOrigin::Sddp}),
                  std::invalid_argument);
  CHECK_THROWS_AS(cs.add(Cut{{0.0}, INFINITY, CutOrigin::Sddp}),
                  std::invalid_argument);
}

TEST_CASE("level-1 selection: single cut survives, dominated cut dropped") {
  CutSet single(2, trivial_cut_nonnegative(1));
  const CutSet kept = single.level1_select({Vec{0.0}, Vec{3.0}});
  CHECK(kept.size() == 1);

  CutSet cs(2, Cut{{1.0}, 0.0, CutOrigin::Sddp});
  cs.add(Cut{{1.0}, -5.0, CutOrigin::Sddp});  // parallel, strictly below
  const CutSet sel = cs.level1_select({Vec{0.0}, Vec{1.0}});
  CHECK(sel.size() == 1);
  CHECK(sel.cuts()[0].alpha == doctest::Approx(0.0));
}

TEST_CASE("level-1 selection preserves evaluation at every trial point") {
  Rng rng(2024);
  CutSet cs = random_cutset(rng, 2, 30);
  std::vector<Vec> trials;
  for (int i = 0; i < 10; ++i)
    trials.push_back(Vec{rng.uniform(-6, 6), rng.uniform(-6, 6)});
  const CutSet sel = cs.level1_select(trials);
  CHECK(sel.size() <= cs.size());
  for (const auto& x : trials) {
    CHECK(sel.evaluate(x) == cs.evaluate(x));  // exact equality required
    // The attaining cut is the same one.
    const Cut& a = cs.cuts()[cs.argmax(x)];
    const Cut& b = sel.cuts()[sel.argmax(x)];
    CHECK(a.alpha == b.alpha);
    CHECK(a.beta == b.beta);
  }
}

TEST_CASE("evaluate is midpoint-convex at random points") {
  Rng rng(808);
  CutSet cs = random_cutset(rng, 2, 15);
  for (int trial = 0; trial < 40; ++trial) {
    Vec x1{rng.uniform(-9, 9), rng.uniform(-9, 9)};
    Vec x2{rng.uniform(-9, 9), rng.uniform(-9, 9)};
    Vec mid{0.5 * (x1[0] + x2[0]), 0.5 * (x1[1] + x2[1])};
    CHECK(cs.evaluate(mid) <=
          0.5 * (cs.evaluate(x1) + cs.evaluate(x2)) + 1e-12);
  }
}

TEST_CASE("activation counts are tracked with lowest-index tie break") {
  CutSet cs(2, trivial_cut_nonnegative(1));
  cs.add(Cut{{0.0}, 0.0, CutOrigin::Sddp});  // exact duplicate of trivial
  cs.evaluate_tracked(Vec{1.0});
  cs.evaluate_tracked(Vec{-1.0});
  CHECK(cs.activation_counts()[0] == 2);  // ties go to index 0
  CHECK(cs.activation_counts()[1] == 0);
}
