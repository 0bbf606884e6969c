#pragma once

#include <string>
#include <vector>

#include "gridmarket/feeder.hpp"
#include "gridmarket/solver.hpp"
#include "gridmarket/types.hpp"

namespace gridmarket {

struct EnvelopeError : std::runtime_error {
  enum class Kind { SolverFailure, InfeasibleAllocation };
  EnvelopeError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

// Per-prosumer shares of the grid constraint bound: column i of w[t] is
// prosumer i's limit vector, and the columns of every w[t] sum to the bound.
struct EnvelopeAllocation {
  int horizon = 0;
  int components = 0;     // M
  int prosumer_count = 0; // N
  double epsilon = 1e-4;
  std::string objective_mode;  // "sqnorm" or "norm"
  std::vector<Mat> w;          // per t: M x N
  Vec equality_share;          // bound / N
  Vec objective_value;         // per t: achieved export capacity
  std::vector<Vec> witness;    // per t: injections showing each share is usable

  const Mat& at(int t) const { return w[static_cast<size_t>(t)]; }
};

struct EnvelopeOptions {
  double epsilon = 1e-4;            // fairness regularizer weight
  std::string objective_mode = "sqnorm";
  double consumption_penalty = 1e-6;  // vanishing penalty on the negative part split
  bool reuse_identical = true;        // identical per-step programs solved once
  SolverOptions solver;
};

// Splits the constraint bound across prosumers by maximizing total export
// capacity with a close-to-equal tie-breaker, one program per timestep
// (solved concurrently; identical steps may share one solve).
EnvelopeAllocation allocate(const AffineConstraintMap& map, const std::vector<int>& prosumer_nodes,
                            int horizon, const EnvelopeOptions& opts = {});

// The trivial decomposition w_i = bound / N for every prosumer and step.
EnvelopeAllocation equal_split(const AffineConstraintMap& map, int prosumer_count, int horizon);

// Componentwise g(p) - w for a prosumer at `node`; ok iff <= 0 (binding
// components are allowed).
Vec envelope_check(const AffineConstraintMap& map, int node, const Vec& w_share, double injection);

}  // namespace gridmarket
