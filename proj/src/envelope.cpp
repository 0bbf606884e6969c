#include "gridmarket/envelope.hpp"

#include <cmath>

#include "gridmarket/threads.hpp"

namespace gridmarket {

namespace {

struct StepSolve {
  Mat w;  // M x N
  double capacity = 0.0;
  Vec witness;
};

StepSolve solve_step(const AffineConstraintMap& map, const std::vector<int>& nodes,
                     const EnvelopeOptions& opts, const Vec& bound) {
  const int N = static_cast<int>(nodes.size());
  const Index M = bound.size();

  ProgramBuilder pb;
  Index w0 = pb.add_variables("w", static_cast<Index>(N) * M);  // prosumer-major
  Index p0 = pb.add_variables("p", N);
  Index pp0 = pb.add_variables("p_plus", N);
  Index pm0 = pb.add_variables("p_minus", N);

  // Capacity objective via the positive-part split p = p+ - p-, with a
  // vanishing penalty that keeps the split from inflating both sides.
  for (int i = 0; i < N; ++i) {
    pb.add_linear(pp0 + i, -1.0);
    pb.add_linear(pm0 + i, opts.consumption_penalty);
  }

  Vec share = bound / static_cast<double>(N);
  if (opts.objective_mode == "sqnorm") {
    for (int i = 0; i < N; ++i)
      for (Index m = 0; m < M; ++m) {
        pb.add_square(w0 + i * M + m, opts.epsilon);
        pb.add_linear(w0 + i * M + m, -2.0 * opts.epsilon * share[m]);
        pb.add_constant(opts.epsilon * share[m] * share[m]);
      }
  } else if (opts.objective_mode == "norm") {
    Index term = pb.add_norm_term(opts.epsilon);
    for (int i = 0; i < N; ++i)
      for (Index m = 0; m < M; ++m) {
        pb.norm_entry(term, i * M + m, w0 + i * M + m, 1.0);
        pb.norm_offset(term, i * M + m, -share[m]);
      }
  } else {
    throw ValidationError("unknown envelope objective mode '" + opts.objective_mode + "'");
  }

  Index split0 = -1;
  for (int i = 0; i < N; ++i) {
    Index row = pb.new_eq_row(0.0);
    if (i == 0) split0 = row;
    pb.eq_coeff(row, p0 + i, 1.0);
    pb.eq_coeff(row, pp0 + i, -1.0);
    pb.eq_coeff(row, pm0 + i, 1.0);
  }
  pb.tag_eq_rows("split", split0, N);

  Index sum0 = -1;
  for (Index m = 0; m < M; ++m) {
    Index row = pb.new_eq_row(bound[m]);
    if (m == 0) sum0 = row;
    for (int i = 0; i < N; ++i) pb.eq_coeff(row, w0 + i * M + m, 1.0);
  }
  pb.tag_eq_rows("share_sum", sum0, M);

  for (int i = 0; i < N; ++i) {
    Vec coeff = map.node_column(nodes[static_cast<size_t>(i)]);
    for (Index m = 0; m < M; ++m) {
      Index row = pb.new_le_row(0.0);
      pb.le_coeff(row, p0 + i, coeff[m]);
      pb.le_coeff(row, w0 + i * M + m, -1.0);
    }
  }
  // Generous caps keep the program bounded even when a node has a
  // zero-resistance path and no voltage row can limit it.
  const double kSplitCap = 1e5;
  for (int i = 0; i < N; ++i) {
    Index rp = pb.new_le_row(0.0);
    pb.le_coeff(rp, pp0 + i, -1.0);
    Index rm = pb.new_le_row(0.0);
    pb.le_coeff(rm, pm0 + i, -1.0);
    Index cp = pb.new_le_row(kSplitCap);
    pb.le_coeff(cp, pp0 + i, 1.0);
    Index cm = pb.new_le_row(kSplitCap);
    pb.le_coeff(cm, pm0 + i, 1.0);
  }

  ConvexProgram prog = pb.build();
  Solution sol = solve(prog, opts.solver);
  if (sol.status == SolveStatus::Infeasible)
    throw EnvelopeError(EnvelopeError::Kind::InfeasibleAllocation,
                        "allocation program infeasible: " + sol.message);
  if (sol.status != SolveStatus::Optimal)
    throw EnvelopeError(EnvelopeError::Kind::SolverFailure,
                        "allocation solve failed (" + to_string(sol.status) + "): " + sol.message);

  StepSolve out;
  out.w = Mat(M, N);
  for (int i = 0; i < N; ++i)
    for (Index m = 0; m < M; ++m) out.w(m, i) = sol.x[w0 + i * M + m];
  // Re-balance the share sum exactly; the shift is within solver tolerance.
  Vec gap = bound - out.w.rowwise().sum();
  out.w.colwise() += Vec(gap / static_cast<double>(N));
  out.capacity = sol.x.segment(pp0, N).sum();
  out.witness = sol.x.segment(p0, N);
  return out;
}

}  // namespace

EnvelopeAllocation allocate(const AffineConstraintMap& map, const std::vector<int>& prosumer_nodes,
                            int horizon, const EnvelopeOptions& opts) {
  if (horizon < 1) throw ValidationError("allocation horizon must be >= 1");
  if (prosumer_nodes.empty()) throw ValidationError("no prosumers to allocate to");
  if (opts.epsilon <= 0) throw ValidationError("envelope epsilon must be positive");

  const int N = static_cast<int>(prosumer_nodes.size());
  EnvelopeAllocation alloc;
  alloc.horizon = horizon;
  alloc.components = map.components;
  alloc.prosumer_count = N;
  alloc.epsilon = opts.epsilon;
  alloc.objective_mode = opts.objective_mode;
  alloc.equality_share = map.bound / static_cast<double>(N);
  alloc.w.resize(static_cast<size_t>(horizon));
  alloc.witness.resize(static_cast<size_t>(horizon));
  alloc.objective_value = Vec::Zero(horizon);

  // The voltage bound is time-invariant, so the per-step programs coincide;
  // one solve covers all steps unless a caller disables the reuse.
  if (opts.reuse_identical) {
    StepSolve s = solve_step(map, prosumer_nodes, opts, map.bound);
    for (int t = 0; t < horizon; ++t) {
      alloc.w[static_cast<size_t>(t)] = s.w;
      alloc.witness[static_cast<size_t>(t)] = s.witness;
      alloc.objective_value[t] = s.capacity;
    }
    return alloc;
  }

  parallel_for(horizon, [&](int t) {
    StepSolve s = solve_step(map, prosumer_nodes, opts, map.bound);
    alloc.w[static_cast<size_t>(t)] = s.w;
    alloc.witness[static_cast<size_t>(t)] = s.witness;
    alloc.objective_value[t] = s.capacity;
  });
  return alloc;
}

EnvelopeAllocation equal_split(const AffineConstraintMap& map, int prosumer_count, int horizon) {
  EnvelopeAllocation alloc;
  alloc.horizon = horizon;
  alloc.components = map.components;
  alloc.prosumer_count = prosumer_count;
  alloc.epsilon = 0.0;
  alloc.objective_mode = "equal";
  alloc.equality_share = map.bound / static_cast<double>(prosumer_count);
  Mat w = alloc.equality_share.replicate(1, prosumer_count);
  alloc.w.assign(static_cast<size_t>(horizon), w);
  alloc.witness.assign(static_cast<size_t>(horizon), Vec::Zero(prosumer_count));
  alloc.objective_value = Vec::Zero(horizon);
  return alloc;
}

Vec envelope_check(const AffineConstraintMap& map, int node, const Vec& w_share, double injection) {
  return map.node_column(node) * injection - w_share;
}

}  // namespace gridmarket
