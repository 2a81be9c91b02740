#include "msopt/tree.hpp"

#include <json.hpp>
#include <stdexcept>

namespace msopt {

double ScenarioTree::path_prob(int i) const {
  double p = 1.0;
  for (int k = i; k >= 0; k = nodes[k].parent) p *= nodes[k].prob;
  return p;
}

ScenarioLattice build_lattice(const ProblemInstance& inst, int branches_per_stage,
                              std::uint64_t seed) {
  if (branches_per_stage < 1)
    throw std::invalid_argument("branches_per_stage must be >= 1");
  ScenarioLattice lat;
  Rng rng(seed);
  for (int t = 2; t <= inst.T; ++t) {
    Rng stage_rng = rng.derive(static_cast<std::uint64_t>(t));
    std::vector<Vec> xs;
    for (int b = 0; b < branches_per_stage; ++b)
      xs.push_back(inst.xi_sampler(inst, t, stage_rng));
    lat.realizations.push_back(std::move(xs));
    lat.probs.emplace_back(branches_per_stage, 1.0 / branches_per_stage);
  }
  return lat;
}

ScenarioTree tree_from_lattice(const ScenarioLattice& lattice) {
  ScenarioTree tree;
  tree.T = lattice.stages();
  tree.branching = tree.T >= 2 ? lattice.branches(2) : 1;
  tree.nodes.push_back(TreeNode{1, -1, {}, 1.0});
  int level_begin = 0;
  int level_end = 1;
  for (int t = 2; t <= tree.T; ++t) {
    const auto& xs = lattice.realizations[t - 2];
    const auto& ps = lattice.probs[t - 2];
    const int next_begin = static_cast<int>(tree.nodes.size());
    for (int parent = level_begin; parent < level_end; ++parent) {
      for (std::size_t b = 0; b < xs.size(); ++b)
        tree.nodes.push_back(TreeNode{t, parent, xs[b], ps[b]});
    }
    level_begin = next_begin;
    level_end = static_cast<int>(tree.nodes.size());
  }
  return tree;
}

ScenarioTree build_tree(const ProblemInstance& inst, int branches_per_stage,
                        std::uint64_t seed) {
  return tree_from_lattice(build_lattice(inst, branches_per_stage, seed));
}

std::string tree_to_json(const ScenarioTree& tree) {
  nlohmann::json j;
  j["version"] = 1;
  j["stages"] = tree.T;
  j["branching"] = tree.branching;
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({{"stage", n.stage},
                     {"parent", n.parent},
                     {"xi", n.xi},
                     {"prob", n.prob}});
  }
  j["nodes"] = std::move(nodes);
  return j.dump();
}

ScenarioTree tree_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ScenarioTree tree;
  tree.T = j.at("stages").get<int>();
  tree.branching = j.at("branching").get<int>();
  for (const auto& n : j.at("nodes")) {
    TreeNode node;
    node.stage = n.at("stage").get<int>();
    node.parent = n.at("parent").get<int>();
    node.xi = n.at("xi").get<Vec>();
    node.prob = n.at("prob").get<double>();
    tree.nodes.push_back(std::move(node));
  }
  return tree;
}

DetEquivResult solve_detequiv(const ProblemInstance& inst, const ScenarioTree& tree,
                              const SolverOptions& opts) {
  const int num_nodes = static_cast<int>(tree.nodes.size());

  // Post-order over the tree keeps deeper nodes first, which is the
  // fill-friendly elimination order for the sparse LDL^T.
  std::vector<std::vector<int>> children(num_nodes);
  for (int i = 1; i < num_nodes; ++i) children[tree.nodes[i].parent].push_back(i);
  std::vector<int> order;
  order.reserve(num_nodes);
  {
    std::vector<std::pair<int, bool>> stack{{0, false}};
    while (!stack.empty()) {
      auto [node, expanded] = stack.back();
      stack.pop_back();
      if (expanded) {
        order.push_back(node);
      } else {
        stack.emplace_back(node, true);
        for (auto it = children[node].rbegin(); it != children[node].rend(); ++it)
          stack.emplace_back(*it, false);
      }
    }
  }

  // Guardrail first: one probe build per stage gives the variable count.
  {
    std::vector<int> stage_vars(inst.T + 1, -1);
    std::size_t total = 0;
    for (const auto& n : tree.nodes) {
      if (stage_vars[n.stage] < 0)
        stage_vars[n.stage] =
            inst.stage_builder(inst, n.stage, {}, n.xi).num_vars;
      total += stage_vars[n.stage];
    }
    if (total > kDetEquivVariableGuardrail)
      throw std::runtime_error(
          "deterministic equivalent exceeds the " +
          std::to_string(kDetEquivVariableGuardrail) + "-variable guardrail (" +
          std::to_string(total) + " variables); reduce stages or branching");
  }

  // Build each node's stage subproblem once, then splice into one program.
  std::vector<StageSubproblem> sps(num_nodes);
  std::vector<int> var_offset(num_nodes, 0);
  std::size_t total_vars = 0;
  for (int idx : order) {
    const TreeNode& n = tree.nodes[idx];
    sps[idx] = inst.stage_builder(inst, n.stage, {}, n.xi);
    var_offset[idx] = static_cast<int>(total_vars);
    total_vars += sps[idx].num_vars;
  }

  ConvexProgram prog;
  prog.num_vars = static_cast<int>(total_vars);
  prog.cost.assign(total_vars, 0.0);
  prog.nonneg.assign(total_vars, false);

  std::vector<double> weight(num_nodes, 0.0);
  for (int i = 0; i < num_nodes; ++i) weight[i] = tree.path_prob(i);

  for (int idx : order) {
    const StageSubproblem& sp = sps[idx];
    const int off = var_offset[idx];
    const int parent = tree.nodes[idx].parent;
    for (int i = 0; i < sp.num_vars; ++i) {
      prog.cost[off + i] = weight[idx] * sp.linear_cost[i];
      prog.nonneg[off + i] = sp.nonneg[i];
    }
    for (const auto& t : sp.convex_terms) {
      ConvexTerm copy = t;
      copy.var = off + t.var;
      copy.weight = t.weight * weight[idx];
      prog.terms.push_back(copy);
    }
    auto splice = [&](const StageRow& row) {
      SparseRow out;
      for (std::size_t k = 0; k < row.coeffs.idx.size(); ++k)
        out.push(off + row.coeffs.idx[k], row.coeffs.val[k]);
      // coeffs.x_node + coupling.x_state(parent) = rhs_base
      for (std::size_t d = 0; d < row.coupling.size(); ++d) {
        if (row.coupling[d] == 0.0) continue;
        const int local = sps[parent].state_extract[d];
        if (local < 0) continue;
        out.push(var_offset[parent] + local, row.coupling[d]);
      }
      out.rhs = row.coeffs.rhs;
      return out;
    };
    for (const auto& row : sp.eq_rows) prog.eq.push_back(splice(row));
    for (const auto& row : sp.ineq_rows) {
      SparseRow out = splice(row);
      if (row.sense == RowSense::Le) {
        for (auto& v : out.val) v = -v;
        out.rhs = -out.rhs;
      }
      prog.ge.push_back(out);
    }
  }

  SolverOptions local = opts;
  local.use_sparse = true;
  DetEquivResult result;
  result.solve = solve(prog, local);
  result.objective = result.solve.objective;
  if (result.solve.optimal()) {
    const StageSubproblem& root_sp = sps[0];
    result.first_stage.assign(
        result.solve.x.begin() + var_offset[0],
        result.solve.x.begin() + var_offset[0] + root_sp.num_vars);
  }
  return result;
}

}  // namespace msopt
