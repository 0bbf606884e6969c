#include "gridmarket/market.hpp"

#include <cmath>

namespace gridmarket {

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::Locational: return "locational";
    case Mechanism::UniformDoe: return "uniform-doe";
    case Mechanism::UniformLimit: return "uniform-limit";
  }
  return "?";
}

Mechanism mechanism_from_string(const std::string& s) {
  if (s == "locational") return Mechanism::Locational;
  if (s == "uniform-doe") return Mechanism::UniformDoe;
  if (s == "uniform-limit") return Mechanism::UniformLimit;
  throw ValidationError("unknown mechanism '" + s + "'");
}

namespace {

// Index bookkeeping for one prosumer's block of decision variables.
struct BlockIndex {
  Index u0 = 0;  // m*T controls, t-major
  Index x0 = 0;  // n*T states x(1..T), t-major
  Index p0 = 0;  // T trades
  Index l0 = -1; // M*T traded limits, t-major (limit trading only)
  int m = 0, n = 0;
};

struct FleetLayout {
  std::vector<BlockIndex> block;
  int T = 0;
  int M = 0;  // constraint components when DOE/limit rows present
};

Index uvar(const BlockIndex& b, int t, int d) { return b.u0 + static_cast<Index>(t) * b.m + d; }
Index xvar(const BlockIndex& b, int t, int d) {  // t in 1..T
  return b.x0 + static_cast<Index>(t - 1) * b.n + d;
}
Index pvar(const BlockIndex& b, int t) { return b.p0 + t; }
Index lvar(const BlockIndex& b, int M, int t, int comp) {
  return b.l0 + static_cast<Index>(t) * M + comp;
}

// Adds one prosumer's variables, objective terms, dynamics, masks, boxes and
// trade caps. Used by all three clearing programs and by best responses.
BlockIndex add_prosumer_block(ProgramBuilder& pb, const ProsumerParams& pr, int T,
                              bool with_limits, int M) {
  BlockIndex b;
  b.m = pr.input_dim();
  b.n = pr.state_dim();
  b.u0 = pb.add_variables("", static_cast<Index>(b.m) * T);
  b.x0 = pb.add_variables("", static_cast<Index>(b.n) * T);
  b.p0 = pb.add_variables("", T);
  if (with_limits) b.l0 = pb.add_variables("", static_cast<Index>(M) * T);

  const auto& ut = pr.utility;
  // Negated utility; the t = 0 state term depends only on x0 and lands in
  // the constant.
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < b.m; ++d) pb.add_square(uvar(b, t, d), ut.control_weight[d]);
  for (int d = 0; d < b.n; ++d) {
    double w0 = ut.state_weight(0, d);
    double dx0 = pr.x0[d] - ut.target[d];
    pb.add_constant(w0 * dx0 * dx0);
  }
  for (int t = 1; t < T; ++t)
    for (int d = 0; d < b.n; ++d) {
      double w = ut.state_weight(t, d);
      if (w == 0.0) continue;
      pb.add_square(xvar(b, t, d), w);
      pb.add_linear(xvar(b, t, d), -2.0 * w * ut.target[d]);
      pb.add_constant(w * ut.target[d] * ut.target[d]);
    }
  for (int d = 0; d < b.n; ++d) {
    double w = ut.terminal_weight[d];
    if (w == 0.0) continue;
    pb.add_square(xvar(b, T, d), w);
    pb.add_linear(xvar(b, T, d), -2.0 * w * ut.target[d]);
    pb.add_constant(w * ut.target[d] * ut.target[d]);
  }

  // Dynamics x(t+1) = A x(t) + B u(t); x(0) is data.
  Vec ax0 = pr.A * pr.x0;
  for (int d = 0; d < b.n; ++d) {
    Index row = pb.new_eq_row(ax0[d]);
    pb.eq_coeff(row, xvar(b, 1, d), 1.0);
    for (int j = 0; j < b.m; ++j) pb.eq_coeff(row, uvar(b, 0, j), -pr.B(d, j));
  }
  for (int t = 1; t < T; ++t)
    for (int d = 0; d < b.n; ++d) {
      Index row = pb.new_eq_row(0.0);
      pb.eq_coeff(row, xvar(b, t + 1, d), 1.0);
      for (int k = 0; k < b.n; ++k) pb.eq_coeff(row, xvar(b, t, k), -pr.A(d, k));
      for (int j = 0; j < b.m; ++j) pb.eq_coeff(row, uvar(b, t, j), -pr.B(d, j));
    }

  // Availability masks pin controls to zero; masked entries get no box rows
  // so the inequality system keeps a strict interior.
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < b.m; ++d) {
      if (!pr.available(t, d)) {
        Index row = pb.new_eq_row(0.0);
        pb.eq_coeff(row, uvar(b, t, d), 1.0);
      } else {
        Index hi = pb.new_le_row(pr.u_upper[d]);
        pb.le_coeff(hi, uvar(b, t, d), 1.0);
        Index lo = pb.new_le_row(-pr.u_lower[d]);
        pb.le_coeff(lo, uvar(b, t, d), -1.0);
      }
    }

  for (int t = 1; t <= T; ++t)
    for (int d = 0; d < b.n; ++d) {
      Index hi = pb.new_le_row(pr.x_upper[d]);
      pb.le_coeff(hi, xvar(b, t, d), 1.0);
      Index lo = pb.new_le_row(-pr.x_lower[d]);
      pb.le_coeff(lo, xvar(b, t, d), -1.0);
    }

  // Trade cap p(t) <= a(t) - h(u(t)).
  for (int t = 0; t < T; ++t) {
    Index row = pb.new_le_row(pr.net_supply[t] - pr.energy_map.offset);
    pb.le_coeff(row, pvar(b, t), 1.0);
    for (int j = 0; j < b.m; ++j) pb.le_coeff(row, uvar(b, t, j), pr.energy_map.coeff[j]);
  }
  return b;
}

struct BuiltMarket {
  ConvexProgram prog;
  FleetLayout layout;
  Index doe_rows_first = -1;  // first "doe_cap" row (uniform mechanisms)
};

BuiltMarket build_market(const FeederModel& feeder, const ProsumerFleet& fleet,
                         Mechanism mechanism, const EnvelopeAllocation* alloc) {
  const int N = fleet.size();
  const int T = fleet.horizon;
  const int Nn = feeder.node_count();
  AffineConstraintMap map = voltage_constraint_map(feeder);
  const int M = map.components;

  BuiltMarket built;
  built.layout.T = T;
  built.layout.M = M;
  ProgramBuilder pb;
  const bool with_limits = mechanism == Mechanism::UniformLimit;
  for (int i = 0; i < N; ++i)
    built.layout.block.push_back(
        add_prosumer_block(pb, fleet.prosumers[static_cast<size_t>(i)], T, with_limits, M));

  // Power balance, one row per step.
  Index bal0 = -1;
  for (int t = 0; t < T; ++t) {
    Index row = pb.new_eq_row(0.0);
    if (t == 0) bal0 = row;
    for (int i = 0; i < N; ++i) pb.eq_coeff(row, pvar(built.layout.block[static_cast<size_t>(i)], t), 1.0);
  }
  pb.tag_eq_rows("balance_p", bal0, T);

  if (mechanism == Mechanism::Locational) {
    // Global voltage band rows: upper then lower, per step.
    Index up0 = -1, lo0 = -1;
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < Nn; ++k) {
        Index row = pb.new_le_row(feeder.v_upper_sq[k] - feeder.v0_sq);
        if (t == 0 && k == 0) up0 = row;
        for (int i = 0; i < N; ++i) {
          int node = fleet.prosumers[static_cast<size_t>(i)].node;
          pb.le_coeff(row, pvar(built.layout.block[static_cast<size_t>(i)], t),
                      feeder.R(k, node - 1));
        }
      }
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < Nn; ++k) {
        Index row = pb.new_le_row(feeder.v0_sq - feeder.v_lower_sq[k]);
        if (t == 0 && k == 0) lo0 = row;
        for (int i = 0; i < N; ++i) {
          int node = fleet.prosumers[static_cast<size_t>(i)].node;
          pb.le_coeff(row, pvar(built.layout.block[static_cast<size_t>(i)], t),
                      -feeder.R(k, node - 1));
        }
      }
    pb.tag_le_rows("volt_upper", up0, static_cast<Index>(T) * Nn);
    pb.tag_le_rows("volt_lower", lo0, static_cast<Index>(T) * Nn);
  } else {
    // Per-prosumer DOE rows g(p_i) <= w_i (plus the traded limit when active).
    Index doe0 = -1;
    for (int i = 0; i < N; ++i) {
      const auto& b = built.layout.block[static_cast<size_t>(i)];
      Vec coeff = map.node_column(fleet.prosumers[static_cast<size_t>(i)].node);
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m) {
          Index row = pb.new_le_row(alloc->at(t)(m, i));
          if (doe0 < 0) doe0 = row;
          pb.le_coeff(row, pvar(b, t), coeff[m]);
          if (with_limits) pb.le_coeff(row, lvar(b, M, t, m), 1.0);
        }
    }
    pb.tag_le_rows("doe_cap", doe0, static_cast<Index>(N) * T * M);
    built.doe_rows_first = doe0;

    if (with_limits) {
      Index lbal0 = -1;
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m) {
          Index row = pb.new_eq_row(0.0);
          if (lbal0 < 0) lbal0 = row;
          for (int i = 0; i < N; ++i)
            pb.eq_coeff(row, lvar(built.layout.block[static_cast<size_t>(i)], M, t, m), 1.0);
        }
      pb.tag_eq_rows("balance_l", lbal0, static_cast<Index>(T) * M);
    }
  }

  built.prog = pb.build();
  return built;
}

void extract_primal(const BuiltMarket& built, const ProsumerFleet& fleet, const Solution& sol,
                    ClearingResult& out) {
  const int N = fleet.size(), T = built.layout.T, M = built.layout.M;
  out.P = Mat::Zero(N, T);
  out.U.clear();
  out.X.clear();
  out.L.clear();
  for (int i = 0; i < N; ++i) {
    const auto& b = built.layout.block[static_cast<size_t>(i)];
    Mat U(b.m, T), Xs(b.n, T + 1);
    for (int t = 0; t < T; ++t) {
      out.P(i, t) = sol.x[pvar(b, t)];
      for (int d = 0; d < b.m; ++d) U(d, t) = sol.x[uvar(b, t, d)];
      for (int d = 0; d < b.n; ++d) Xs(d, t + 1) = sol.x[xvar(b, t + 1, d)];
    }
    Xs.col(0) = fleet.prosumers[static_cast<size_t>(i)].x0;
    out.U.push_back(std::move(U));
    out.X.push_back(std::move(Xs));
    if (b.l0 >= 0) {
      Mat L(M, T);
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m) L(m, t) = sol.x[lvar(b, M, t, m)];
      out.L.push_back(std::move(L));
    }
  }
}

ClearingResult run_clearing(const FeederModel& feeder, const ProsumerFleet& fleet,
                            Mechanism mechanism, const EnvelopeAllocation* alloc,
                            const MarketOptions& opts) {
  fleet.validate(feeder.node_count());
  if (mechanism != Mechanism::Locational) {
    if (!alloc) throw ValidationError("uniform mechanisms need an envelope allocation");
    if (alloc->horizon != fleet.horizon || alloc->prosumer_count != fleet.size())
      throw ValidationError("allocation shape does not match the fleet");
  }

  BuiltMarket built = build_market(feeder, fleet, mechanism, alloc);
  Solution sol = solve(built.prog, opts.solver);

  ClearingResult out;
  out.mechanism = mechanism;
  out.status = sol.status;
  out.message = sol.message;
  out.residuals = sol.residuals;

  if (sol.status == SolveStatus::Infeasible) {
    const int T = built.layout.T, M = built.layout.M;
    for (auto& [row, violation] : sol.infeasible_rows) {
      if (built.doe_rows_first >= 0 && row >= built.doe_rows_first) {
        Index local = row - built.doe_rows_first;
        int i = static_cast<int>(local / (static_cast<Index>(T) * M));
        int rem = static_cast<int>(local % (static_cast<Index>(T) * M));
        out.shortfalls.push_back({i, rem / M, rem % M, violation});
      }
    }
    if (!out.shortfalls.empty()) {
      out.message = "envelope shares leave no feasible trade; tightest shortfalls:";
      for (size_t k = 0; k < std::min<size_t>(out.shortfalls.size(), 6); ++k) {
        const auto& s = out.shortfalls[k];
        out.message += " (prosumer " + fleet.prosumers[static_cast<size_t>(s.prosumer)].id +
                       ", t=" + std::to_string(s.t) + ", component " + std::to_string(s.component) +
                       ", short by " + std::to_string(s.violation) + ")";
      }
    }
    return out;
  }
  if (sol.status != SolveStatus::Optimal) return out;

  extract_primal(built, fleet, sol, out);

  const int N = fleet.size(), T = built.layout.T, Nn = feeder.node_count();
  out.welfare = 0.0;
  for (int i = 0; i < N; ++i)
    out.welfare += utility_of(fleet.prosumers[static_cast<size_t>(i)], out.U[static_cast<size_t>(i)]);

  // Price extraction; equality duals negate into prices.
  out.prices.alpha = -sol.eq_duals(built.prog, "balance_p");
  if (mechanism != Mechanism::Locational) {
    Vec pi = sol.le_duals(built.prog, "doe_cap");
    const int M = built.layout.M;
    for (int i = 0; i < N; ++i) {
      Mat d(M, T);
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m)
          d(m, t) = pi[static_cast<Index>(i) * T * M + static_cast<Index>(t) * M + m];
      out.doe_duals.push_back(std::move(d));
    }
  }
  if (mechanism == Mechanism::UniformLimit) {
    // Stationarity in the traded limits makes every prosumer's cap dual equal
    // the limit price, so averaging the cap duals recovers beta with its sign
    // constraint intact (the raw equality dual carries more interior-point
    // noise around zero).
    const int M = built.layout.M;
    out.prices.beta = Mat::Zero(M, T);
    for (int i = 0; i < N; ++i) out.prices.beta += out.doe_duals[static_cast<size_t>(i)];
    out.prices.beta /= static_cast<double>(N);
  }
  if (mechanism == Mechanism::Locational) {
    Vec up = sol.le_duals(built.prog, "volt_upper");
    Vec lo = sol.le_duals(built.prog, "volt_lower");
    out.prices.xi_upper = Eigen::Map<Mat>(up.data(), Nn, T);
    out.prices.xi_lower = Eigen::Map<Mat>(lo.data(), Nn, T);
    out.prices.locational = Mat::Zero(N, T);
    for (int i = 0; i < N; ++i) {
      int node = fleet.prosumers[static_cast<size_t>(i)].node;
      for (int t = 0; t < T; ++t) {
        double adj = 0.0;
        for (int k = 0; k < Nn; ++k)
          adj += (out.prices.xi_lower(k, t) - out.prices.xi_upper(k, t)) * feeder.R(k, node - 1);
        out.prices.locational(i, t) = out.prices.alpha[t] + adj;
      }
    }
  }

  if (opts.settle) settle(out, fleet);
  return out;
}

}  // namespace

ClearingResult clear_locational(const FeederModel& feeder, const ProsumerFleet& fleet,
                                const MarketOptions& opts) {
  return run_clearing(feeder, fleet, Mechanism::Locational, nullptr, opts);
}

ClearingResult clear_uniform_doe(const FeederModel& feeder, const ProsumerFleet& fleet,
                                 const EnvelopeAllocation& alloc, const MarketOptions& opts) {
  return run_clearing(feeder, fleet, Mechanism::UniformDoe, &alloc, opts);
}

ClearingResult clear_uniform_limit(const FeederModel& feeder, const ProsumerFleet& fleet,
                                   const EnvelopeAllocation& alloc, const MarketOptions& opts) {
  return run_clearing(feeder, fleet, Mechanism::UniformLimit, &alloc, opts);
}

void settle(ClearingResult& result, const ProsumerFleet& fleet) {
  const int N = fleet.size(), T = fleet.horizon;
  result.incomes.assign(static_cast<size_t>(N), {});
  result.budget_per_step = Vec::Zero(T);
  for (int i = 0; i < N; ++i) {
    auto& inc = result.incomes[static_cast<size_t>(i)];
    for (int t = 0; t < T; ++t) {
      double lambda = result.mechanism == Mechanism::Locational ? result.prices.locational(i, t)
                                                                : result.prices.alpha[t];
      double term = lambda * result.P(i, t);
      inc.energy += term;
      result.budget_per_step[t] -= term;
      if (result.mechanism == Mechanism::UniformLimit) {
        double lterm = result.prices.beta.col(t).dot(result.L[static_cast<size_t>(i)].col(t));
        inc.limit += lterm;
        result.budget_per_step[t] -= lterm;
      }
    }
  }
  result.budget_total = result.budget_per_step.sum();
}

BestResponse best_response(const ProsumerParams& params, int horizon,
                           const AffineConstraintMap& map, const Vec& lambda_i, const Mat* w_share,
                           const Mat* beta, const SolverOptions& opts) {
  const int T = horizon;
  const int M = map.components;
  ProgramBuilder pb;
  BlockIndex b = add_prosumer_block(pb, params, T, beta != nullptr, M);

  for (int t = 0; t < T; ++t) pb.add_linear(pvar(b, t), -lambda_i[t]);
  if (beta)
    for (int t = 0; t < T; ++t)
      for (int m = 0; m < M; ++m) pb.add_linear(lvar(b, M, t, m), -(*beta)(m, t));

  if (w_share) {
    Vec coeff = map.node_column(params.node);
    for (int t = 0; t < T; ++t)
      for (int m = 0; m < M; ++m) {
        Index row = pb.new_le_row((*w_share)(m, t));
        pb.le_coeff(row, pvar(b, t), coeff[m]);
        if (beta) pb.le_coeff(row, lvar(b, M, t, m), 1.0);
      }
  }

  // Floors bound the flat rays that appear when a price is exactly zero;
  // they are far below any schedule a prosumer could settle and do not move
  // the optimal value.
  double p_floor = 1e3 * (1.0 + params.net_supply.cwiseAbs().maxCoeff() +
                          params.u_upper.cwiseAbs().sum() + params.u_lower.cwiseAbs().sum());
  for (int t = 0; t < T; ++t) {
    Index row = pb.new_le_row(p_floor);
    pb.le_coeff(row, pvar(b, t), -1.0);
  }
  if (beta) {
    double l_floor = 1e3 * (1.0 + map.bound.cwiseAbs().maxCoeff());
    for (int t = 0; t < T; ++t)
      for (int m = 0; m < M; ++m) {
        Index row = pb.new_le_row(l_floor);
        pb.le_coeff(row, lvar(b, M, t, m), -1.0);
      }
  }

  ConvexProgram prog = pb.build();
  Solution sol = solve(prog, opts);
  BestResponse br;
  br.status = sol.status;
  br.message = sol.message;
  if (sol.status != SolveStatus::Optimal) return br;

  br.U = Mat(b.m, T);
  br.p = Vec(T);
  for (int t = 0; t < T; ++t) {
    br.p[t] = sol.x[pvar(b, t)];
    for (int d = 0; d < b.m; ++d) br.U(d, t) = sol.x[uvar(b, t, d)];
  }
  if (beta) {
    br.l = Mat(M, T);
    for (int t = 0; t < T; ++t)
      for (int m = 0; m < M; ++m) br.l(m, t) = sol.x[lvar(b, M, t, m)];
  }
  br.payoff = payoff(params, br.U, br.p, lambda_i, beta, beta ? &br.l : nullptr);
  return br;
}

std::vector<Mat> construct_limit_trades(const AffineConstraintMap& map,
                                        const ProsumerFleet& fleet, const Mat& P,
                                        const EnvelopeAllocation& alloc) {
  const int N = fleet.size(), T = fleet.horizon, M = map.components;
  std::vector<Mat> trades(static_cast<size_t>(N), Mat::Zero(M, T));
  for (int t = 0; t < T; ++t) {
    Vec sum_g = Vec::Zero(M);
    Vec sum_w = alloc.at(t).rowwise().sum();
    std::vector<Vec> g(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
      g[static_cast<size_t>(i)] =
          map.node_column(fleet.prosumers[static_cast<size_t>(i)].node) * P(i, t);
      sum_g += g[static_cast<size_t>(i)];
    }
    Vec common = (sum_g - sum_w) / static_cast<double>(N);
    for (int i = 0; i < N; ++i)
      trades[static_cast<size_t>(i)].col(t) = alloc.at(t).col(i) - g[static_cast<size_t>(i)] + common;
  }
  return trades;
}

}  // namespace gridmarket
