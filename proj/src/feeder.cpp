#include "gridmarket/feeder.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <utility>

namespace gridmarket {

std::vector<int> Topology::root_path(int node) const {
  std::vector<int> path;
  for (int v = node; v != 0; v = parent[static_cast<size_t>(v)])
    path.push_back(parent_line[static_cast<size_t>(v)]);
  std::reverse(path.begin(), path.end());
  return path;
}

Topology validate_radial(const std::vector<Line>& lines, int node_count) {
  if (node_count < 1)
    throw TopologyError(TopologyError::Kind::BadNodeId, "feeder needs at least one prosumer node");

  std::set<std::pair<int, int>> seen;
  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<size_t>(node_count) + 1);
  for (size_t e = 0; e < lines.size(); ++e) {
    const Line& ln = lines[e];
    if (ln.from < 0 || ln.from > node_count || ln.to < 0 || ln.to > node_count)
      throw TopologyError(TopologyError::Kind::BadNodeId,
                          "line (" + std::to_string(ln.from) + "," + std::to_string(ln.to) +
                              ") references a node outside 0.." + std::to_string(node_count));
    if (ln.from == ln.to)
      throw TopologyError(TopologyError::Kind::CycleDetected,
                          "self-loop at node " + std::to_string(ln.from));
    if (ln.r_pu < 0 || ln.x_pu < 0)
      throw TopologyError(TopologyError::Kind::BadImpedance,
                          "negative impedance on line (" + std::to_string(ln.from) + "," +
                              std::to_string(ln.to) + ")");
    auto key = std::minmax(ln.from, ln.to);
    if (!seen.insert(key).second)
      throw TopologyError(TopologyError::Kind::DuplicateEdge,
                          "duplicate line between nodes " + std::to_string(key.first) + " and " +
                              std::to_string(key.second));
    adj[static_cast<size_t>(ln.from)].push_back({ln.to, static_cast<int>(e)});
    adj[static_cast<size_t>(ln.to)].push_back({ln.from, static_cast<int>(e)});
  }

  if (static_cast<int>(lines.size()) > node_count)
    throw TopologyError(TopologyError::Kind::CycleDetected,
                        std::to_string(lines.size()) + " lines over " +
                            std::to_string(node_count + 1) + " nodes close a loop");

  Topology topo;
  topo.node_count = node_count;
  topo.lines = lines;
  topo.parent.assign(static_cast<size_t>(node_count) + 1, -2);
  topo.parent_line.assign(static_cast<size_t>(node_count) + 1, -1);
  topo.depth.assign(static_cast<size_t>(node_count) + 1, 0);

  std::deque<int> queue{0};
  topo.parent[0] = -1;
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    topo.bfs_order.push_back(v);
    for (auto [w, e] : adj[static_cast<size_t>(v)]) {
      if (topo.parent[static_cast<size_t>(w)] != -2) continue;
      topo.parent[static_cast<size_t>(w)] = v;
      topo.parent_line[static_cast<size_t>(w)] = e;
      topo.depth[static_cast<size_t>(w)] = topo.depth[static_cast<size_t>(v)] + 1;
      queue.push_back(w);
    }
  }
  for (int v = 1; v <= node_count; ++v)
    if (topo.parent[static_cast<size_t>(v)] == -2)
      throw TopologyError(TopologyError::Kind::DisconnectedNode,
                          "node " + std::to_string(v) + " is not reachable from the feeder");
  // Connected with <= node_count edges and all nodes reached means exactly
  // node_count edges, i.e. a tree; a shortfall would have tripped above.
  return topo;
}

std::pair<Mat, Mat> build_sensitivities(const Topology& topo) {
  const int n = topo.node_count;
  // Shared root path of i and k is the root path of their LCA, so
  // R_ik = 2 * (resistance from node 0 down to lca(i,k)).
  Vec r_to_root = Vec::Zero(n + 1);
  Vec x_to_root = Vec::Zero(n + 1);
  for (int v : topo.bfs_order) {
    if (v == 0) continue;
    const Line& ln = topo.lines[static_cast<size_t>(topo.parent_line[static_cast<size_t>(v)])];
    int pa = topo.parent[static_cast<size_t>(v)];
    r_to_root[v] = r_to_root[pa] + ln.r_pu;
    x_to_root[v] = x_to_root[pa] + ln.x_pu;
  }

  auto lca = [&](int a, int b) {
    while (a != b) {
      if (topo.depth[static_cast<size_t>(a)] >= topo.depth[static_cast<size_t>(b)])
        a = topo.parent[static_cast<size_t>(a)];
      else
        b = topo.parent[static_cast<size_t>(b)];
    }
    return a;
  };

  Mat R = Mat::Zero(n, n);
  Mat X = Mat::Zero(n, n);
  for (int i = 1; i <= n; ++i) {
    for (int k = i; k <= n; ++k) {
      int join = lca(i, k);
      R(i - 1, k - 1) = R(k - 1, i - 1) = 2.0 * r_to_root[join];
      X(i - 1, k - 1) = X(k - 1, i - 1) = 2.0 * x_to_root[join];
    }
  }
  return {R, X};
}

FeederModel FeederModel::build(Topology topo, double v0_sq, Vec v_lower_sq, Vec v_upper_sq) {
  FeederModel model;
  model.topo = std::move(topo);
  model.v0_sq = v0_sq;
  const int n = model.topo.node_count;
  if (v_lower_sq.size() != n || v_upper_sq.size() != n)
    throw ValidationError("voltage bound vectors must have one entry per prosumer node");
  for (int i = 0; i < n; ++i)
    if (!(v_lower_sq[i] < v0_sq && v0_sq < v_upper_sq[i]))
      throw ValidationError("voltage bounds at node " + std::to_string(i + 1) +
                            " must strictly bracket the feeder voltage");
  model.v_lower_sq = std::move(v_lower_sq);
  model.v_upper_sq = std::move(v_upper_sq);
  std::tie(model.R, model.X) = build_sensitivities(model.topo);
  return model;
}

Vec voltages_from_injections(const FeederModel& model, const Vec& p, const Vec& q) {
  const int n = model.node_count();
  if (p.size() != n || q.size() != n)
    throw ValidationError("injection vectors must have one entry per prosumer node");
  return Vec::Constant(n, model.v0_sq) + model.R * p + model.X * q;
}

std::vector<LineFlow> line_flows(const FeederModel& model, const Vec& p, const Vec& q,
                                 double balance_tol) {
  const int n = model.node_count();
  if (p.size() != n || q.size() != n)
    throw ValidationError("injection vectors must have one entry per prosumer node");
  if (std::abs(p.sum()) > balance_tol || std::abs(q.sum()) > balance_tol)
    throw BalanceViolated("injections must sum to zero in islanded operation (|sum p| = " +
                          std::to_string(std::abs(p.sum())) + ")");

  // P_parent(j),j = -(net injection of the subtree rooted at j); accumulate
  // leaf to root by scanning BFS order backwards.
  Vec sub_p = Vec::Zero(n + 1);
  Vec sub_q = Vec::Zero(n + 1);
  for (int v = 1; v <= n; ++v) {
    sub_p[v] = p[v - 1];
    sub_q[v] = q[v - 1];
  }
  std::vector<LineFlow> flows(model.topo.lines.size());
  for (auto it = model.topo.bfs_order.rbegin(); it != model.topo.bfs_order.rend(); ++it) {
    int v = *it;
    if (v == 0) continue;
    int e = model.topo.parent_line[static_cast<size_t>(v)];
    flows[static_cast<size_t>(e)] = {e, -sub_p[v], -sub_q[v]};
    int pa = model.topo.parent[static_cast<size_t>(v)];
    sub_p[pa] += sub_p[v];
    sub_q[pa] += sub_q[v];
  }
  return flows;
}

std::string AffineConstraintMap::component_name(int m) const {
  const int n = components / 2;
  if (m < n) return "v_upper_node_" + std::to_string(m + 1);
  return "v_lower_node_" + std::to_string(m - n + 1);
}

AffineConstraintMap voltage_constraint_map(const FeederModel& model) {
  const int n = model.node_count();
  AffineConstraintMap map;
  map.components = 2 * n;
  map.coeff = Mat::Zero(2 * n, n);
  map.coeff.topRows(n) = model.R;      // row k: sum_i R_ki p_i <= v_upper_k - v0
  map.coeff.bottomRows(n) = -model.R;  // row k: -sum_i R_ki p_i <= v0 - v_lower_k
  map.bound = Vec::Zero(2 * n);
  map.bound.head(n) = model.v_upper_sq.array() - model.v0_sq;
  map.bound.tail(n) = model.v0_sq - model.v_lower_sq.array();
  return map;
}

}  // namespace gridmarket
