#pragma once

#include <string>
#include <vector>

#include "gridmarket/envelope.hpp"
#include "gridmarket/feeder.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/prosumer.hpp"
#include "gridmarket/types.hpp"

namespace gridmarket {

struct CheckRecord {
  std::string name;
  std::string detail;
  double residual = 0.0;   // dimensionless (relative where the quantity has scale)
  double tolerance = 0.0;
  bool pass = false;
};

struct VerificationReport {
  std::vector<CheckRecord> checks;
  std::string fingerprint;

  void add(const std::string& name, const std::string& detail, double residual, double tolerance);
  bool all_pass() const;
  int failures() const;
  void sort();  // deterministic order by (name, detail)
  std::string table() const;
  std::string json_lines() const;
};

struct VerifyTolerances {
  double relative = 1e-5;  // equilibrium and equivalence comparisons
  double price = 1e-4;     // cross-solve dual comparisons
  double balance = 1e-6;   // traded-quantity sums and budget zeroes
  SolverOptions solver;    // for best responses and re-solves
};

// FNV-1a over the numeric content of the instance; identifies a scenario in
// reports.
std::string scenario_fingerprint(const FeederModel& feeder, const ProsumerFleet& fleet);

// Equilibrium certificate: best-response gaps, balances, band/envelope
// containment, the locational price identity, and complementary slackness.
void certify_equilibrium(VerificationReport& report, const ClearingResult& result,
                         const FeederModel& feeder, const ProsumerFleet& fleet,
                         const EnvelopeAllocation* alloc, const VerifyTolerances& tol = {});

// Locational and limit-trading clearings of the same scenario reach the same
// welfare, and the constructive trade schedule derived from the locational
// injections is feasible and balanced.
void check_welfare_equivalence(VerificationReport& report, const ClearingResult& locational,
                               const ClearingResult& limit, const EnvelopeAllocation& alloc,
                               const FeederModel& feeder, const ProsumerFleet& fleet,
                               const VerifyTolerances& tol = {});

// The limit-trading uniform energy price matches the balance component of the
// locational prices step by step. `price_unit` converts internal prices to
// the reported unit (cents/kWh): s_base_kva * delta_hours.
void check_uniform_price_identity(VerificationReport& report, const ClearingResult& locational,
                                  const ClearingResult& limit, const VerifyTolerances& tol = {},
                                  double price_unit = 1.0);

// Budget: locational weakly balanced (with the shadow-price identity for the
// surplus), uniform mechanisms strongly balanced per step.
void check_budget(VerificationReport& report, const ClearingResult& result,
                  const FeederModel& feeder, const VerifyTolerances& tol = {});

// Redistribution: with equal envelope shares, every prosumer's limit-trading
// income exceeds their locational income by exactly surplus / N.
void check_redistribution(VerificationReport& report, const ClearingResult& locational,
                          const FeederModel& feeder, const ProsumerFleet& fleet,
                          const VerifyTolerances& tol = {});

// Exhaustive grid search over controls and trades for desk-size instances.
// Wholly independent of the interior-point path: feasibility is checked by
// direct evaluation and the optimum by enumeration.
struct OracleOptions {
  int control_points = 15;
  int trade_points = 31;
  double requested_gap = 1e-2;  // warn when the attainable gap is larger
};

struct OracleResult {
  bool feasible_found = false;
  double welfare = 0.0;
  double gap = 0.0;  // grid resolution bound on the optimality shortfall
  bool grid_too_coarse = false;
};

OracleResult brute_force_oracle(const FeederModel& feeder, const ProsumerFleet& fleet,
                                Mechanism mechanism, const EnvelopeAllocation* alloc,
                                const OracleOptions& opts = {});

}  // namespace gridmarket
