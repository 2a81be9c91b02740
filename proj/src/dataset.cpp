#include "msopt/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "msopt/problems.hpp"

namespace msopt {

const char* token_name(SeqToken t) {
  switch (t) {
    case SeqToken::Pad: return "pad";
    case SeqToken::Start: return "start";
    case SeqToken::Middle: return "middle";
    case SeqToken::End: return "end";
  }
  return "?";
}

Vec CutSequenceExample::conditioning() const {
  Vec v = lambda.values();
  v.push_back(t_rel);
  return v;
}

namespace {

std::vector<SequenceElement> tokenized_sequence(const std::vector<Cut>& cuts) {
  std::vector<SequenceElement> seq;
  seq.reserve(cuts.size());
  for (std::size_t k = 0; k < cuts.size(); ++k) {
    SeqToken tok = SeqToken::Middle;
    if (k == 0) tok = SeqToken::Start;
    else if (k + 1 == cuts.size()) tok = SeqToken::End;
    seq.push_back(SequenceElement{cuts[k].beta, cuts[k].alpha, tok});
  }
  return seq;
}

struct InstanceOutput {
  std::vector<CutSequenceExample> examples;
  std::string skip_reason;  // nonempty when the SDDP run failed
};

InstanceOutput generate_for_instance(FamilyId family, int T,
                                     const GenerateOptions& opts, int index) {
  InstanceOutput out;
  const std::uint64_t inst_seed = Rng(opts.seed).derive(index).seed();
  Rng rng(inst_seed);
  const ProblemInstance inst = sample_instance(family, T, rng);

  const ScenarioLattice lattice =
      build_lattice(inst, opts.branches, rng.derive(1).seed());
  SddpConfig cfg = opts.sddp;
  cfg.lattice = &lattice;
  cfg.record_cuts = true;
  cfg.seed = rng.derive(2).seed();

  SddpRun run;
  try {
    run = run_sddp(inst, cfg);
  } catch (const SddpError& e) {
    out.skip_reason = e.what();
    return out;
  }
  if (!run.state.converged) {
    out.skip_reason = "no convergence within " + std::to_string(cfg.max_iters) +
                      " iterations";
    return out;
  }

  for (int t = 1; t <= T - 1; ++t) {
    CutSequenceExample ex;
    ex.family = family;
    ex.lambda = inst.lambda;
    ex.stage = t;
    ex.t_rel = static_cast<double>(t) / (T - 1);
    ex.sequence = tokenized_sequence(run.recorded_sequences[t - 1]);
    ex.source_seed = inst_seed;
    out.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

Dataset generate_dataset(FamilyId family, int T, const GenerateOptions& opts,
                         std::vector<std::string>* skip_log) {
  if (opts.instances < 1) throw std::invalid_argument("instances must be >= 1");
  std::vector<InstanceOutput> results(opts.instances);

  const int workers = std::max(1, opts.workers);
  if (workers == 1) {
    for (int i = 0; i < opts.instances; ++i)
      results[i] = generate_for_instance(family, T, opts, i);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int i = next.fetch_add(1); i < opts.instances; i = next.fetch_add(1))
        results[i] = generate_for_instance(family, T, opts, i);
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  Dataset ds;
  ds.meta.family = family;
  ds.meta.T = T;
  ds.meta.instances = opts.instances;
  ds.meta.sddp_threshold = opts.sddp.threshold;
  ds.meta.branches = opts.branches;
  ds.meta.seed = opts.seed;
  for (int i = 0; i < opts.instances; ++i) {
    if (!results[i].skip_reason.empty()) {
      ++ds.meta.skipped_instances;
      if (skip_log)
        skip_log->push_back("instance " + std::to_string(i) + ": " +
                            results[i].skip_reason);
      continue;
    }
    for (auto& ex : results[i].examples) ds.examples.push_back(std::move(ex));
  }
  return ds;
}

std::size_t outlier_length_threshold(std::vector<std::size_t> lengths, double alpha) {
  if (lengths.empty()) throw std::invalid_argument("no lengths");
  std::sort(lengths.begin(), lengths.end());
  const auto n = static_cast<double>(lengths.size());
  std::size_t rank = static_cast<std::size_t>(std::floor((1.0 - alpha) * n));
  rank = std::clamp<std::size_t>(rank, 1, lengths.size());
  return lengths[rank - 1];
}

Dataset filter_outliers(const Dataset& ds, double alpha) {
  if (ds.examples.empty()) throw std::invalid_argument("filter_outliers: empty dataset");
  std::vector<std::size_t> lengths;
  lengths.reserve(ds.examples.size());
  for (const auto& ex : ds.examples) lengths.push_back(ex.sequence.size());
  const std::size_t threshold = outlier_length_threshold(std::move(lengths), alpha);

  Dataset out;
  out.meta = ds.meta;
  out.meta.outlier_threshold = threshold;
  for (const auto& ex : ds.examples)
    if (ex.sequence.size() <= threshold) out.examples.push_back(ex);
  return out;
}

std::vector<FoldSplit> split_folds(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("split_folds: k must be >= 2");
  if (ds.examples.size() < static_cast<std::size_t>(k))
    throw std::invalid_argument("split_folds: dataset smaller than fold count");

  std::vector<std::size_t> order(ds.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.index(i)]);

  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < order.size(); ++i)
    folds[i % k].push_back(order[i]);

  std::vector<FoldSplit> out(k);
  for (int f = 0; f < k; ++f) {
    out[f].val = folds[f];
    for (int g = 0; g < k; ++g)
      if (g != f)
        out[f].train.insert(out[f].train.end(), folds[g].begin(), folds[g].end());
  }
  return out;
}

namespace {

nlohmann::json meta_to_json(const DatasetMeta& m) {
  nlohmann::json j{{"version", m.version},
                   {"family", family_name(m.family)},
                   {"stages", m.T},
                   {"instances", m.instances},
                   {"skipped_instances", m.skipped_instances},
                   {"sddp_threshold", m.sddp_threshold},
                   {"branches", m.branches},
                   {"seed", m.seed}};
  if (m.outlier_threshold) j["outlier_threshold"] = *m.outlier_threshold;
  return j;
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta m;
  m.version = j.at("version").get<int>();
  m.family = family_from_name(j.at("family").get<std::string>());
  m.T = j.at("stages").get<int>();
  m.instances = j.at("instances").get<int>();
  m.skipped_instances = j.at("skipped_instances").get<int>();
  m.sddp_threshold = j.at("sddp_threshold").get<double>();
  m.branches = j.at("branches").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("outlier_threshold"))
    m.outlier_threshold = j.at("outlier_threshold").get<std::size_t>();
  return m;
}

}  // namespace

std::string dataset_to_jsonl(const Dataset& ds) {
  std::ostringstream os;
  os << meta_to_json(ds.meta).dump() << '\n';
  for (const auto& ex : ds.examples) {
    nlohmann::json j;
    j["family"] = family_name(ex.family);
    nlohmann::json lambda = nlohmann::json::array();
    for (const auto& [k, v] : ex.lambda.entries) lambda.push_back({{"name", k}, {"value", v}});
    j["lambda"] = std::move(lambda);
    j["t_rel"] = ex.t_rel;
    j["stage"] = ex.stage;
    j["source_seed"] = ex.source_seed;
    nlohmann::json seq = nlohmann::json::array();
    for (const auto& el : ex.sequence)
      seq.push_back({{"beta", el.beta}, {"alpha", el.alpha}, {"token", token_name(el.token)}});
    j["sequence"] = std::move(seq);
    os << j.dump() << '\n';
  }
  return os.str();
}

Dataset dataset_from_jsonl(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset stream is empty");
  Dataset ds;
  ds.meta = meta_from_json(nlohmann::json::parse(line));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CutSequenceExample ex;
    ex.family = family_from_name(j.at("family").get<std::string>());
    for (const auto& e : j.at("lambda"))
      ex.lambda.entries.emplace_back(e.at("name").get<std::string>(),
                                     e.at("value").get<double>());
    ex.t_rel = j.at("t_rel").get<double>();
    ex.stage = j.at("stage").get<int>();
    ex.source_seed = j.at("source_seed").get<std::uint64_t>();
    for (const auto& e : j.at("sequence")) {
      SequenceElement el;
      el.beta = e.at("beta").get<Vec>();
      el.alpha = e.at("alpha").get<double>();
      const std::string tok = e.at("token").get<std::string>();
      if (tok == "pad") el.token = SeqToken::Pad;
      else if (tok == "start") el.token = SeqToken::Start;
      else if (tok == "middle") el.token = SeqToken::Middle;
      else if (tok == "end") el.token = SeqToken::End;
      else throw std::runtime_error("unknown token: " + tok);
      ex.sequence.push_back(std::move(el));
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os << dataset_to_jsonl(ds);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return dataset_from_jsonl(buf.str());
}

CutSet sequence_to_cutset(const CutSequenceExample& ex, int approximated_stage) {
  if (ex.sequence.empty()) throw std::invalid_argument("empty sequence");
  CutSet cs(approximated_stage,
            Cut{ex.sequence.front().beta, ex.sequence.front().alpha, CutOrigin::Trivial});
  for (std::size_t k = 1; k < ex.sequence.size(); ++k) {
    if (ex.sequence[k].token == SeqToken::Pad) continue;
    cs.add(Cut{ex.sequence[k].beta, ex.sequence[k].alpha, CutOrigin::Sddp});
  }
  return cs;
}

}  // namespace msopt
