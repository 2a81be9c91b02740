// Command-line surface: dataset generation, model training, single-instance
// solves, batch evaluation, and value-function comparison export.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "msopt/dataset.hpp"
#include "msopt/eval.hpp"
#include "msopt/problems.hpp"
#include "msopt/sddp.hpp"
#include "msopt/solver.hpp"
#include "msopt/transformer.hpp"
#include "msopt/tree.hpp"

namespace {

using namespace msopt;

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

nlohmann::json lambda_json(const DistributionParams& lambda) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : lambda.entries) j[k] = v;
  return j;
}

// Generated cut sets for stages 2..T from a checkpoint.
struct NeuralCuts {
  std::vector<CutSet> cutsets;
  bool malformed = false;
  int total_generated = 0;
};

NeuralCuts generate_policy_cuts(const ModelCheckpoint& ckpt,
                                const ProblemInstance& inst) {
  NeuralCuts out;
  for (int t = 1; t <= inst.T - 1; ++t) {
    Vec cond = inst.lambda.values();
    cond.push_back(static_cast<double>(t) / (inst.T - 1));
    GenerationResult gen = generate_cuts(ckpt, cond, inst.trivial_cut(),
                                         ckpt.config.max_seq_len, t + 1);
    out.malformed = out.malformed || gen.malformed;
    out.total_generated += gen.generated;
    out.cutsets.push_back(std::move(gen.cutset));
  }
  return out;
}

int cmd_gen_data(const std::string& family_name_in, int stages, int instances,
                 std::uint64_t seed, const std::string& out_path,
                 double sddp_threshold, int branches, int workers,
                 int max_iters, double outlier_alpha) {
  GenerateOptions opts;
  opts.instances = instances;
  opts.branches = branches;
  opts.seed = seed;
  opts.workers = workers;
  opts.sddp.threshold = sddp_threshold;
  opts.sddp.threshold_relative = true;
  opts.sddp.max_iters = max_iters;

  std::vector<std::string> skip_log;
  Dataset raw = generate_dataset(family_from_name(family_name_in), stages, opts,
                                 &skip_log);
  for (const auto& line : skip_log) std::fprintf(stderr, "skipped %s\n", line.c_str());
  const Dataset filtered = filter_outliers(raw, outlier_alpha);
  save_dataset(filtered, out_path);
  std::fprintf(stderr,
               "wrote %zu examples (%zu before outlier filter, threshold %zu, "
               "%d instances skipped) to %s\n",
               filtered.examples.size(), raw.examples.size(),
               *filtered.meta.outlier_threshold, raw.meta.skipped_instances,
               out_path.c_str());
  return 0;
}

int cmd_train(const std::string& data_path, int folds, int fold_index, int epochs,
              int batch, double lr, std::uint64_t seed,
              const std::string& out_checkpoint, bool verbose) {
  const Dataset ds = load_dataset(data_path);
  const auto splits = split_folds(ds, folds, seed);
  const FoldSplit& split = splits.at(fold_index);

  Dataset train_set, val_set;
  train_set.meta = ds.meta;
  val_set.meta = ds.meta;
  for (std::size_t i : split.train) train_set.examples.push_back(ds.examples[i]);
  for (std::size_t i : split.val) val_set.examples.push_back(ds.examples[i]);

  ModelConfig cfg;
  if (ds.meta.outlier_threshold)
    cfg.max_seq_len =
        std::max(cfg.max_seq_len, static_cast<int>(*ds.meta.outlier_threshold) + 8);

  TrainOptions topts;
  topts.epochs = epochs;
  topts.batch_size = batch;
  topts.lr = lr;
  topts.seed = seed;
  topts.verbose = verbose;

  const TrainResult result = train_model(train_set, val_set, cfg, topts);
  save_checkpoint(result.checkpoint, out_checkpoint);
  std::fprintf(stderr, "best validation loss %.6f after %d epochs -> %s\n",
               result.checkpoint.meta.best_val_loss, epochs, out_checkpoint.c_str());
  return 0;
}

int cmd_solve(const std::string& family_name_in, int stages, std::uint64_t seed,
              const std::string& method, const std::string& checkpoint_path,
              int branches, const std::string& report_path, double threshold,
              int max_iters, const std::string& log_csv) {
  const FamilyId family = family_from_name(family_name_in);
  Rng rng(seed);
  const ProblemInstance inst = sample_instance(family, stages, rng);
  const ScenarioLattice lattice = build_lattice(inst, branches, rng.derive(1).seed());
  const ScenarioTree tree = tree_from_lattice(lattice);

  nlohmann::json report;
  report["family"] = family_name(family);
  report["stages"] = stages;
  report["seed"] = seed;
  report["method"] = method;
  report["branches"] = branches;
  report["lambda"] = lambda_json(inst.lambda);

  if (method == "detequiv") {
    const DetEquivResult det = solve_detequiv(inst, tree);
    if (!det.solve.optimal())
      throw std::runtime_error(std::string("deterministic equivalent solve: ") +
                               status_name(det.solve.status));
    report["objective"] = det.objective;
    report["first_stage"] = det.first_stage;
  } else if (method == "sddp" || method == "sddp-l1") {
    SddpConfig cfg;
    cfg.threshold = threshold;
    cfg.max_iters = max_iters;
    cfg.seed = rng.derive(2).seed();
    cfg.lattice = &lattice;
    cfg.level1 = method == "sddp-l1";
    const SddpRun run = run_sddp(inst, cfg);
    const PolicyEvalResult policy =
        evaluate_policy(inst, run.state.cutsets, tree);
    report["objective"] = policy.objective;
    report["feasible"] = policy.feasible;
    report["lower_bound"] = run.state.lower_bound;
    report["upper_bound"] = run.state.upper_stats.upper_bound;
    report["iterations"] = run.state.iteration;
    report["converged"] = run.state.converged;
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& cs : run.state.cutsets) counts.push_back(cs.size());
    report["cuts_per_stage"] = counts;
    if (!run.state.unselected_counts.empty())
      report["cuts_before_selection"] = run.state.unselected_counts;
    if (!log_csv.empty()) write_file_atomic(log_csv, convergence_csv(run.state));
  } else if (method == "neural") {
    if (checkpoint_path.empty())
      throw std::runtime_error("--checkpoint required for method neural");
    const ModelCheckpoint ckpt = load_checkpoint(checkpoint_path);
    const NeuralCuts cuts = generate_policy_cuts(ckpt, inst);
    const PolicyEvalResult policy = evaluate_policy(inst, cuts.cutsets, tree);
    report["objective"] = policy.objective;
    report["feasible"] = policy.feasible && !cuts.malformed;
    report["malformed_generation"] = cuts.malformed;
    report["generated_cuts"] = cuts.total_generated;
  } else {
    throw std::runtime_error("unknown method: " + method);
  }

  const std::string text = report.dump(2) + "\n";
  if (report_path.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_file_atomic(report_path, text);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& family_name_in,
             int stages, int test_instances, std::uint64_t seed,
             const std::string& report_base, int branches) {
  const FamilyId family = family_from_name(family_name_in);
  const ModelCheckpoint ckpt = load_checkpoint(checkpoint_path);

  EvalReport report;
  for (int i = 0; i < test_instances; ++i) {
    const std::uint64_t inst_seed = Rng(seed).derive(i).seed();
    Rng rng(inst_seed);
    const ProblemInstance inst = sample_instance(family, stages, rng);
    const ScenarioLattice lattice =
        build_lattice(inst, branches, rng.derive(1).seed());
    const ScenarioTree tree = tree_from_lattice(lattice);

    EvalRecord rec;
    rec.instance_seed = inst_seed;

    auto t0 = std::chrono::steady_clock::now();
    const NeuralCuts cuts = generate_policy_cuts(ckpt, inst);
    const PolicyEvalResult policy = evaluate_policy(inst, cuts.cutsets, tree);
    rec.candidate_seconds = elapsed_since(t0);

    t0 = std::chrono::steady_clock::now();
    const DetEquivResult det = solve_detequiv(inst, tree);
    rec.reference_seconds = elapsed_since(t0);

    rec.feasible = policy.feasible && !cuts.malformed && det.solve.optimal();
    rec.candidate_objective = policy.objective;
    rec.reference_objective = det.objective;
    rec.error_ratio =
        rec.feasible ? error_ratio(policy.objective, det.objective) : 0.0;
    report.records.push_back(rec);
  }

  write_file_atomic(report_base + ".csv", report.to_csv());
  write_file_atomic(report_base + ".json",
                    report.summary_json("neural", family_name(family), stages));
  std::fprintf(stderr, "mean error ratio %.4f%%, infeasibility %.3f -> %s.{csv,json}\n",
               100.0 * report.mean_error_ratio(), report.infeasibility(),
               report_base.c_str());
  return 0;
}

int cmd_compare_vf(const std::string& instance_path, const std::string& checkpoint_path,
                   const std::string& grid_spec, int dim, double fixed_value,
                   int samples, std::uint64_t seed, const std::string& out_csv,
                   double sddp_threshold, int sddp_iters) {
  const ProblemInstance inst = instance_from_json(read_file(instance_path));

  double lo = 0.0, hi = 1.0;
  int count = 2;
  if (std::sscanf(grid_spec.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 || count < 1)
    throw std::runtime_error("grid must be lo:hi:count");

  std::vector<Vec> probes;
  for (int i = 0; i < count; ++i) {
    Vec p(inst.state_dim, fixed_value);
    p[dim] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
    probes.push_back(std::move(p));
  }

  // Reference cuts from a fresh-sampling SDDP run on this instance.
  SddpConfig cfg;
  cfg.threshold = sddp_threshold;
  cfg.max_iters = sddp_iters;
  cfg.seed = Rng(seed).derive(7).seed();
  const SddpRun run = run_sddp(inst, cfg);

  std::vector<std::pair<std::string, const CutSet*>> methods;
  methods.emplace_back("sddp", &run.state.q(inst.T));

  std::optional<GenerationResult> gen;
  if (!checkpoint_path.empty()) {
    const ModelCheckpoint ckpt = load_checkpoint(checkpoint_path);
    Vec cond = inst.lambda.values();
    cond.push_back(1.0);  // stage T-1 conditioning targets Q_T
    gen = generate_cuts(ckpt, cond, inst.trivial_cut(), ckpt.config.max_seq_len,
                        inst.T);
    methods.emplace_back("neural", &gen->cutset);
  }

  Rng rng(Rng(seed).derive(9).seed());
  const VfComparison cmp =
      export_value_function_comparison(inst, probes, methods, samples, rng);
  write_file_atomic(out_csv, cmp.to_csv(inst));
  std::fprintf(stderr, "wrote %zu probe rows to %s\n", cmp.rows.size(),
               out_csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multistage stochastic programming workbench"};
  app.require_subcommand(1);

  // gen-data
  std::string family = "EP", out_path = "dataset.msds.jsonl";
  int stages = 4, instances = 10, branches = 2, workers = 1, max_iters = 100;
  std::uint64_t seed = 0;
  double sddp_threshold = 0.005, outlier_alpha = 0.025;
  auto* gen = app.add_subcommand("gen-data", "generate a cut-sequence dataset");
  gen->add_option("--family", family, "EP, FP or PP");
  gen->add_option("--stages", stages, "stage count T");
  gen->add_option("--instances", instances, "instances to sample");
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--out", out_path, "output .msds.jsonl path");
  gen->add_option("--sddp-threshold", sddp_threshold, "relative gap threshold");
  gen->add_option("--branches", branches, "lattice branches per stage");
  gen->add_option("--workers", workers, "worker threads");
  gen->add_option("--max-iters", max_iters, "SDDP iteration cap");
  gen->add_option("--outlier-alpha", outlier_alpha, "outlier percentile alpha");

  // train
  std::string data_path, out_checkpoint = "model.msck";
  int folds = 6, fold_index = 0, epochs = 50, batch = 16;
  double lr = 1e-3;
  bool verbose = false;
  auto* tr = app.add_subcommand("train", "train the cut generator");
  tr->add_option("--data", data_path, "dataset path")->required();
  tr->add_option("--folds", folds, "fold count");
  tr->add_option("--fold-index", fold_index, "which fold pair to train");
  tr->add_option("--epochs", epochs, "epochs");
  tr->add_option("--batch", batch, "batch size");
  tr->add_option("--lr", lr, "learning rate");
  tr->add_option("--seed", seed, "seed");
  tr->add_option("--out-checkpoint", out_checkpoint, "checkpoint output path");
  tr->add_flag("--verbose", verbose, "per-epoch loss to stderr");

  // solve
  std::string method = "sddp", checkpoint_path, report_path, log_csv;
  double threshold = 0.01;
  auto* so = app.add_subcommand("solve", "solve one sampled instance");
  so->add_option("--family", family, "EP, FP or PP");
  so->add_option("--stages", stages, "stage count T");
  so->add_option("--seed", seed, "instance seed");
  so->add_option("--method", method, "sddp, sddp-l1, detequiv or neural");
  so->add_option("--checkpoint", checkpoint_path, "checkpoint for method neural");
  so->add_option("--branches", branches, "lattice branches per stage");
  so->add_option("--report", report_path, "report JSON path (stdout if empty)");
  so->add_option("--threshold", threshold, "SDDP relative gap threshold");
  so->add_option("--max-iters", max_iters, "SDDP iteration cap");
  so->add_option("--log-csv", log_csv, "write SDDP convergence CSV here");

  // eval
  int test_instances = 50;
  std::string report_base = "eval_report";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out instances");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  ev->add_option("--family", family, "EP, FP or PP");
  ev->add_option("--stages", stages, "stage count T");
  ev->add_option("--test-instances", test_instances, "held-out instance count");
  ev->add_option("--seed", seed, "seed");
  ev->add_option("--report", report_base, "report base path (.csv/.json)");
  ev->add_option("--branches", branches, "lattice branches per stage");

  // compare-vf
  std::string instance_path, grid_spec = "0:80:33", out_csv = "vf.csv";
  int dim = 0, samples = 100, sddp_iters = 60;
  double fixed_value = 0.0;
  auto* cv = app.add_subcommand("compare-vf", "export value-function comparison");
  cv->add_option("--instance", instance_path, "instance JSON path")->required();
  cv->add_option("--checkpoint", checkpoint_path, "checkpoint (optional)");
  cv->add_option("--grid", grid_spec, "probe grid lo:hi:count");
  cv->add_option("--dim", dim, "state dimension to sweep");
  cv->add_option("--fixed", fixed_value, "value for the other state dimensions");
  cv->add_option("--samples", samples, "stage-T realizations per probe");
  cv->add_option("--seed", seed, "seed");
  cv->add_option("--out-csv", out_csv, "output CSV path");
  cv->add_option("--sddp-threshold", sddp_threshold, "SDDP threshold");
  cv->add_option("--sddp-iters", sddp_iters, "SDDP iteration cap");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(family, stages, instances, seed, out_path,
                          sddp_threshold, branches, workers, max_iters,
                          outlier_alpha);
    if (tr->parsed())
      return cmd_train(data_path, folds, fold_index, epochs, batch, lr, seed,
                       out_checkpoint, verbose);
    if (so->parsed())
      return cmd_solve(family, stages, seed, method, checkpoint_path, branches,
                       report_path, threshold, max_iters, log_csv);
    if (ev->parsed())
      return cmd_eval(checkpoint_path, family, stages, test_instances, seed,
                      report_base, branches);
    if (cv->parsed())
      return cmd_compare_vf(instance_path, checkpoint_path, grid_spec, dim,
                            fixed_value, samples, seed, out_csv, sddp_threshold,
                            sddp_iters);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
