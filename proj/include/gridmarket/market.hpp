#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridmarket/envelope.hpp"
#include "gridmarket/feeder.hpp"
#include "gridmarket/prosumer.hpp"
#include "gridmarket/solver.hpp"
#include "gridmarket/types.hpp"

namespace gridmarket {

enum class Mechanism { Locational, UniformDoe, UniformLimit };

std::string to_string(Mechanism m);
Mechanism mechanism_from_string(const std::string& s);

// Dual-derived prices. Sign convention: every welfare program is solved as a
// minimization of negated welfare with balance rows written sum_i p_i(t) = 0,
// so the energy price is the negated equality dual: lambda(t) = -y_balance(t)
// and beta(t) = -y_limit_balance(:,t). Voltage shadow prices are the
// (nonnegative) inequality duals of the upper/lower band rows.
struct PriceSet {
  Vec alpha;       // T; uniform energy price, also the balance component of locational prices
  Mat beta;        // M x T; limit prices (uniform limit trading only)
  Mat locational;  // N x T; lambda_i(t) = alpha(t) + sum_k (xi_lo - xi_up)_k R(k, node_i)
  Mat xi_lower;    // node_count x T
  Mat xi_upper;    // node_count x T
};

struct ProsumerIncome {
  double energy = 0.0;  // sum_t lambda * p
  double limit = 0.0;   // sum_t beta . l (ancillary limit market)
  double total() const { return energy + limit; }
};

struct ClearingResult {
  Mechanism mechanism = Mechanism::Locational;
  SolveStatus status = SolveStatus::NumericalTrouble;
  std::string message;

  Mat P;                   // N x T injections (p.u.)
  std::vector<Mat> U;      // per prosumer: m x T
  std::vector<Mat> X;      // per prosumer: n x (T+1), column 0 = x0
  std::vector<Mat> L;      // per prosumer: M x T (limit trading only)
  std::vector<Mat> doe_duals;  // per prosumer: M x T (uniform mechanisms)
  double welfare = 0.0;    // currency units
  PriceSet prices;
  KktResiduals residuals;

  std::vector<ProsumerIncome> incomes;
  Vec budget_per_step;     // -sum_i income terms, per t
  double budget_total = 0.0;

  // When infeasible: offending envelope rows as (prosumer, t, component).
  struct EnvelopeShortfall {
    int prosumer, t, component;
    double violation;
  };
  std::vector<EnvelopeShortfall> shortfalls;
};

struct MarketOptions {
  SolverOptions solver;
  bool settle = true;  // fill incomes/budget on Optimal results
};

ClearingResult clear_locational(const FeederModel& feeder, const ProsumerFleet& fleet,
                                const MarketOptions& opts = {});
ClearingResult clear_uniform_doe(const FeederModel& feeder, const ProsumerFleet& fleet,
                                 const EnvelopeAllocation& alloc, const MarketOptions& opts = {});
ClearingResult clear_uniform_limit(const FeederModel& feeder, const ProsumerFleet& fleet,
                                   const EnvelopeAllocation& alloc, const MarketOptions& opts = {});

// Per-prosumer payoff maximization at fixed prices, used for equilibrium
// certification. `lambda_i` is the price stream this prosumer sees. The DOE
// share (uniform mechanisms) and beta (limit trading) select the mechanism's
// constraint/payoff shape.
struct BestResponse {
  SolveStatus status = SolveStatus::NumericalTrouble;
  Mat U;
  Vec p;
  Mat l;  // M x T when limit trading
  double payoff = 0.0;
  std::string message;
};

BestResponse best_response(const ProsumerParams& params, int horizon,
                           const AffineConstraintMap& map, const Vec& lambda_i,
                           const Mat* w_share,  // M x T, uniform mechanisms
                           const Mat* beta,     // M x T, limit trading
                           const SolverOptions& opts = {});

// Fills incomes and budget fields from the stored primal/prices.
void settle(ClearingResult& result, const ProsumerFleet& fleet);

// The constructive limit-trade schedule: feasible for the limit-trading
// program whenever P satisfies the global band, and balances exactly.
std::vector<Mat> construct_limit_trades(const AffineConstraintMap& map,
                                        const ProsumerFleet& fleet, const Mat& P,
                                        const EnvelopeAllocation& alloc);

}  // namespace gridmarket
