#pragma once

#include <random>
#include <vector>

#include "gridmarket/envelope.hpp"
#include "gridmarket/feeder.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/prosumer.hpp"

namespace gridmarket::testing {

inline FeederModel chain_feeder(int nodes, double r = 0.1, double x = 0.05,
                                double v_lo = 0.95, double v_hi = 1.05) {
  std::vector<Line> lines;
  for (int v = 1; v <= nodes; ++v) lines.push_back({v - 1, v, r, x});
  Topology topo = validate_radial(lines, nodes);
  return FeederModel::build(std::move(topo), 1.0, Vec::Constant(nodes, v_lo * v_lo),
                            Vec::Constant(nodes, v_hi * v_hi));
}

inline FeederModel star_feeder(int nodes, double r = 0.1, double x = 0.05) {
  std::vector<Line> lines;
  for (int v = 1; v <= nodes; ++v) lines.push_back({0, v, r, x});
  Topology topo = validate_radial(lines, nodes);
  return FeederModel::build(std::move(topo), 1.0, Vec::Constant(nodes, 0.95 * 0.95),
                            Vec::Constant(nodes, 1.05 * 1.05));
}

// Battery-only prosumer, single storage unit, horizon T. Quantities are
// already in solver units (per-unit power, hours).
inline ProsumerParams battery_prosumer(const std::string& id, int node, int T,
                                       double capacity = 0.4, double rate = 0.066,
                                       double supply = 0.0) {
  ProsumerParams pr;
  pr.id = id;
  pr.node = node;
  pr.A = Mat::Identity(1, 1);
  pr.B = Mat::Identity(1, 1) * 0.9 * 0.5;
  pr.x0 = Vec::Constant(1, 0.4 * capacity);
  pr.x_lower = Vec::Constant(1, 0.2 * capacity);
  pr.x_upper = Vec::Constant(1, 0.85 * capacity);
  pr.u_lower = Vec::Constant(1, -rate);
  pr.u_upper = Vec::Constant(1, rate);
  pr.net_supply = Vec::Constant(T, supply);
  pr.energy_map.coeff = Vec::Ones(1);
  pr.utility.control_weight = Vec::Constant(1, 40.0);
  pr.utility.state_weight = Mat::Constant(T, 1, 10.0);
  pr.utility.terminal_weight = Vec::Constant(1, 100.0);
  pr.utility.target = pr.x_upper;
  pr.available.setConstant(T, 1, true);
  return pr;
}

inline ProsumerFleet two_prosumer_fleet(int T, double supply1, double supply2) {
  ProsumerFleet fleet;
  fleet.horizon = T;
  fleet.delta_hours = 0.5;
  fleet.prosumers.push_back(battery_prosumer("a", 1, T, 0.4, 0.066, supply1));
  fleet.prosumers.push_back(battery_prosumer("b", 2, T, 0.5, 0.066, supply2));
  return fleet;
}

inline EnvelopeAllocation default_allocation(const FeederModel& feeder,
                                             const ProsumerFleet& fleet,
                                             double epsilon = 1e-4) {
  AffineConstraintMap map = voltage_constraint_map(feeder);
  std::vector<int> nodes;
  for (const auto& pr : fleet.prosumers) nodes.push_back(pr.node);
  EnvelopeOptions opts;
  opts.epsilon = epsilon;
  return allocate(map, nodes, fleet.horizon, opts);
}

}  // namespace gridmarket::testing
