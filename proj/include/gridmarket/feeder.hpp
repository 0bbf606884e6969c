#pragma once

#include <string>
#include <vector>

#include "gridmarket/types.hpp"

namespace gridmarket {

// A distribution line between two nodes, per-unit impedances.
struct Line {
  int from = 0;
  int to = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
};

struct TopologyError : std::runtime_error {
  enum class Kind { CycleDetected, DisconnectedNode, DuplicateEdge, BadNodeId, BadImpedance };
  TopologyError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

// Validated radial topology rooted at the feeder (node 0). Nodes 1..N carry
// prosumers; node 0 is the reference bus.
struct Topology {
  int node_count = 0;  // N, excluding node 0
  std::vector<Line> lines;
  std::vector<int> parent;       // size N+1, parent[0] = -1
  std::vector<int> parent_line;  // index into lines, parent_line[0] = -1
  std::vector<int> depth;        // edges from root
  std::vector<int> bfs_order;    // root first

  // Line indices on the unique path from node 0 to node i.
  std::vector<int> root_path(int node) const;
};

// Checks that `lines` forms a tree over nodes {0..node_count} rooted at 0.
// Throws TopologyError (CycleDetected / DisconnectedNode / DuplicateEdge /
// BadNodeId) otherwise.
Topology validate_radial(const std::vector<Line>& lines, int node_count);

// Radial feeder with voltage-sensitivity matrices. Immutable after build();
// shared read access from concurrent workers is safe.
struct FeederModel {
  Topology topo;
  double v0_sq = 1.0;  // squared feeder voltage, (p.u.)^2
  Vec v_lower_sq;      // per node 1..N, (p.u.)^2
  Vec v_upper_sq;
  Mat R;  // N x N, dv_i/dp_k under no load
  Mat X;  // N x N, dv_i/dq_k

  int node_count() const { return topo.node_count; }

  // v_lower/v_upper given squared; must bracket v0_sq strictly at every node.
  static FeederModel build(Topology topo, double v0_sq, Vec v_lower_sq, Vec v_upper_sq);
};

// R_ik = 2 * sum of r over the shared root-path edges of nodes i and k,
// X analogous with reactances. 1-based nodes map to 0-based rows/cols.
std::pair<Mat, Mat> build_sensitivities(const Topology& topo);

// Squared voltages v_i = v0 + sum_k (R_ik p_k + X_ik q_k); p, q in p.u.
Vec voltages_from_injections(const FeederModel& model, const Vec& p, const Vec& q);

struct LineFlow {
  int line = 0;       // index into topo.lines
  double active = 0;  // P_ij, flow from parent into the line's child side
  double reactive = 0;
};

struct BalanceViolated : std::runtime_error {
  explicit BalanceViolated(const std::string& what) : std::runtime_error(what) {}
};

// Recursive branch flows for diagnostics; requires sum(p) ~ 0 (islanded
// operation) and throws BalanceViolated otherwise.
std::vector<LineFlow> line_flows(const FeederModel& model, const Vec& p, const Vec& q,
                                 double balance_tol = 1e-9);

// Separable per-node constraint stack: component m of g(node k, injection p)
// is coeff(m, k-1) * p, and the joint requirement sum_nodes g <= bound is
// equivalent to the voltage band.
struct AffineConstraintMap {
  int components = 0;  // M = 2 * node_count (upper rows first, then lower)
  Mat coeff;           // M x N, column k-1 is the stack for node k
  Vec bound;           // M

  Vec node_column(int node) const { return coeff.col(node - 1); }
  std::string component_name(int m) const;
};

AffineConstraintMap voltage_constraint_map(const FeederModel& model);

}  // namespace gridmarket
