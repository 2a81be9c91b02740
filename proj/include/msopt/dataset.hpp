#pragma once

#include <optional>
#include <string>

#include "msopt/model.hpp"
#include "msopt/sddp.hpp"

namespace msopt {

enum class SeqToken { Pad = 0, Start = 1, Middle = 2, End = 3 };

const char* token_name(SeqToken t);

struct SequenceElement {
  Vec beta;
  double alpha = 0.0;
  SeqToken token = SeqToken::Middle;
};

// One training record: conditioning (lambda, relative stage position) plus
// the ordered cut sequence recorded from an SDDP run.
struct CutSequenceExample {
  FamilyId family = FamilyId::EP;
  DistributionParams lambda;
  double t_rel = 0.0;  // t / (T-1), in (0, 1]
  int stage = 0;       // the t this sequence conditions on (cuts approximate Q_{t+1})
  std::vector<SequenceElement> sequence;
  std::uint64_t source_seed = 0;

  Vec conditioning() const;  // lambda values followed by t_rel
};

struct DatasetMeta {
  int version = 1;
  FamilyId family = FamilyId::EP;
  int T = 0;
  int instances = 0;
  int skipped_instances = 0;
  double sddp_threshold = 0.0;
  int branches = 0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> outlier_threshold;  // set by filter_outliers
};

struct Dataset {
  DatasetMeta meta;
  std::vector<CutSequenceExample> examples;
};

struct GenerateOptions {
  int instances = 1;
  SddpConfig sddp;
  int branches = 2;  // per-instance fixed lattice width
  std::uint64_t seed = 0;
  int workers = 1;
};

// Runs SDDP per sampled instance and emits one example per stage t=1..T-1.
// Instances whose run fails are counted and logged to the returned meta,
// never silently dropped. Output order is by (instance index, stage), so
// results are byte-identical for any worker count.
Dataset generate_dataset(FamilyId family, int T, const GenerateOptions& opts,
                         std::vector<std::string>* skip_log = nullptr);

// Drops examples whose sequence length exceeds the empirical (1-alpha)
// percentile (rank floor((1-alpha) n), matching the frozen examples).
Dataset filter_outliers(const Dataset& ds, double alpha = 0.025);

std::size_t outlier_length_threshold(std::vector<std::size_t> lengths, double alpha);

// Deterministic shuffled partition into k folds; pair i validates on fold i.
struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
std::vector<FoldSplit> split_folds(const Dataset& ds, int k, std::uint64_t seed);

// JSONL: header line with meta, one example per line. Doubles round-trip
// bit-identically. Conventional suffix: .msds.jsonl
std::string dataset_to_jsonl(const Dataset& ds);
Dataset dataset_from_jsonl(const std::string& text);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Rebuilds a CutSet from a recorded sequence (used by validity probes and
// policy evaluation with replayed data).
CutSet sequence_to_cutset(const CutSequenceExample& ex, int approximated_stage);

}  // namespace msopt
