#include <doctest.h>

#include <cstdio>
#include <set>

#include "msopt/dataset.hpp"
#include "msopt/problems.hpp"
#include "msopt/solver.hpp"

using namespace msopt;

namespace {

GenerateOptions small_opts(int instances, std::uint64_t seed, int workers = 1) {
  GenerateOptions opts;
  opts.instances = instances;
  opts.branches = 2;
  opts.seed = seed;
  opts.workers = workers;
  opts.sddp.threshold = 0.02;
  opts.sddp.max_iters = 40;
  return opts;
}

}  // namespace

TEST_CASE("one example per stage with the start/middle/end token pattern") {
  const Dataset ds = generate_dataset(FamilyId::EP, 3, small_opts(1, 5));
  REQUIRE(ds.examples.size() == 2);  // t = 1, 2 for T = 3
  CHECK(ds.examples[0].t_rel == doctest::Approx(0.5));
  CHECK(ds.examples[1].t_rel == doctest::Approx(1.0));
  for (const auto& ex : ds.examples) {
    REQUIRE(ex.sequence.size() >= 2);
    CHECK(ex.sequence.front().token == SeqToken::Start);
    CHECK(ex.sequence.back().token == SeqToken::End);
    for (std::size_t k = 1; k + 1 < ex.sequence.size(); ++k)
      CHECK(ex.sequence[k].token == SeqToken::Middle);
    // The start element is the trivial cut.
    CHECK(ex.sequence.front().alpha == 0.0);
    for (double b : ex.sequence.front().beta) CHECK(b == 0.0);
  }
}

TEST_CASE("outlier threshold uses the frozen nearest-rank convention") {
  std::vector<std::size_t> lengths;
  for (std::size_t l = 1; l <= 100; ++l) lengths.push_back(l);
  CHECK(outlier_length_threshold(lengths, 0.025) == 97);

  std::vector<std::size_t> equal(50, 7);
  CHECK(outlier_length_threshold(equal, 0.025) == 7);
}

TEST_CASE("filter_outliers drops strictly longer sequences and records the threshold") {
  Dataset ds;
  ds.meta.family = FamilyId::EP;
  ds.meta.T = 3;
  for (std::size_t len = 1; len <= 100; ++len) {
    CutSequenceExample ex;
    ex.family = FamilyId::EP;
    ex.lambda = DistributionParams{{{"mu_I", 20.0}, {"sigma_I", 5.0}}};
    ex.t_rel = 0.5;
    ex.stage = 1;
    for (std::size_t k = 0; k < len; ++k)
      ex.sequence.push_back(SequenceElement{
          Vec{0.0}, 0.0,
          k == 0 ? SeqToken::Start
                 : (k + 1 == len ? SeqToken::End : SeqToken::Middle)});
    ds.examples.push_back(std::move(ex));
  }
  const Dataset filtered = filter_outliers(ds, 0.025);
  REQUIRE(filtered.meta.outlier_threshold.has_value());
  CHECK(*filtered.meta.outlier_threshold == 97);
  CHECK(filtered.examples.size() == 97);

  // Equal lengths: nothing removed.
  Dataset uniform;
  uniform.meta = ds.meta;
  for (int i = 0; i < 40; ++i) uniform.examples.push_back(ds.examples[6]);
  const Dataset same = filter_outliers(uniform, 0.025);
  CHECK(same.examples.size() == uniform.examples.size());
}

TEST_CASE("split_folds partitions deterministically") {
  Dataset ds = generate_dataset(FamilyId::EP, 3, small_opts(6, 7));
  REQUIRE(ds.examples.size() == 12);
  const auto folds = split_folds(ds, 6, 99);
  REQUIRE(folds.size() == 6);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    CHECK(f.val.size() == 2);
    CHECK(f.train.size() == 10);
    for (auto i : f.val) {
      CHECK_FALSE(seen.count(i));
      seen.insert(i);
    }
    std::set<std::size_t> train_set(f.train.begin(), f.train.end());
    for (auto i : f.val) CHECK_FALSE(train_set.count(i));
  }
  CHECK(seen.size() == 12);

  const auto again = split_folds(ds, 6, 99);
  for (int f = 0; f < 6; ++f) CHECK(again[f].val == folds[f].val);
  const auto different = split_folds(ds, 6, 100);
  bool any_diff = false;
  for (int f = 0; f < 6; ++f) any_diff = any_diff || different[f].val != folds[f].val;
  CHECK(any_diff);
}

TEST_CASE("jsonl round-trip is bit-identical") {
  const Dataset ds = generate_dataset(FamilyId::PP, 3, small_opts(2, 11));
  REQUIRE_FALSE(ds.examples.empty());
  const std::string text = dataset_to_jsonl(ds);
  const Dataset back = dataset_from_jsonl(text);
  REQUIRE(back.examples.size() == ds.examples.size());
  CHECK(back.meta.T == ds.meta.T);
  CHECK(back.meta.seed == ds.meta.seed);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& a = ds.examples[i];
    const auto& b = back.examples[i];
    CHECK(a.t_rel == b.t_rel);
    CHECK(a.source_seed == b.source_seed);
    REQUIRE(a.sequence.size() == b.sequence.size());
    for (std::size_t k = 0; k < a.sequence.size(); ++k) {
      CHECK(a.sequence[k].beta == b.sequence[k].beta);  // exact doubles
      CHECK(a.sequence[k].alpha == b.sequence[k].alpha);
      CHECK(a.sequence[k].token == b.sequence[k].token);
    }
  }

  // Second serialization is byte-identical.
  CHECK(dataset_to_jsonl(back) == text);
}

TEST_CASE("generation is byte-identical regardless of worker count") {
  const Dataset one = generate_dataset(FamilyId::EP, 3, small_opts(4, 13, 1));
  const Dataset three = generate_dataset(FamilyId::EP, 3, small_opts(4, 13, 3));
  CHECK(dataset_to_jsonl(one) == dataset_to_jsonl(three));
}

TEST_CASE("replayed sequences are valid lower approximations at their stage") {
  const std::uint64_t seed = 23;
  const Dataset ds = generate_dataset(FamilyId::EP, 3, small_opts(1, seed));
  REQUIRE(ds.examples.size() == 2);

  // Rebuild the instance and lattice exactly as generation did.
  const std::uint64_t inst_seed = Rng(seed).derive(0).seed();
  Rng rng(inst_seed);
  const ProblemInstance inst = sample_instance(FamilyId::EP, 3, rng);
  const ScenarioLattice lattice = build_lattice(inst, 2, rng.derive(1).seed());

  // Validity must hold with the recorded *final* approximations downstream,
  // so replay the T-stage example first and use it for the t=1 example.
  const CutSet q3 = sequence_to_cutset(ds.examples[1], 3);
  const CutSet q2 = sequence_to_cutset(ds.examples[0], 2);
  Rng probe_rng(501);
  for (int probe = 0; probe < 10; ++probe) {
    const Vec x_hat{probe_rng.uniform(0.0, 60.0)};

    double expected3 = 0.0;
    for (std::size_t b = 0; b < lattice.realizations[1].size(); ++b) {
      const SolveResult res = solve_stage(build_stage_subproblem(
          inst, 3, x_hat, lattice.realizations[1][b], nullptr));
      REQUIRE(res.optimal());
      expected3 += lattice.probs[1][b] * res.objective;
    }
    CHECK(q3.evaluate(x_hat) <= expected3 + 1e-5 * (1.0 + std::fabs(expected3)));

    double expected2 = 0.0;
    for (std::size_t b = 0; b < lattice.realizations[0].size(); ++b) {
      const SolveResult res = solve_stage(build_stage_subproblem(
          inst, 2, x_hat, lattice.realizations[0][b], &q3));
      REQUIRE(res.optimal());
      expected2 += lattice.probs[0][b] * res.objective;
    }
    CHECK(q2.evaluate(x_hat) <= expected2 + 1e-5 * (1.0 + std::fabs(expected2)));
  }
}

TEST_CASE("file save/load round trip") {
  const Dataset ds = generate_dataset(FamilyId::EP, 3, small_opts(1, 3));
  const std::string path = "/tmp/msopt_test_dataset.msds.jsonl";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  CHECK(dataset_to_jsonl(back) == dataset_to_jsonl(ds));
  std::remove(path.c_str());
}
