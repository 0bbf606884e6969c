#include <doctest.h>

#include "gridmarket/market.hpp"
#include "helpers.hpp"

using namespace gridmarket;
using namespace gridmarket::testing;

namespace {

// Far-node exporter, near-node consumer on a stiff chain: the node-2 upper
// voltage bound binds well before the consumer's demand is met from exports.
struct BindingScenario {
  FeederModel feeder = chain_feeder(2, 2.0, 1.0);
  ProsumerFleet fleet = two_prosumer_fleet(6, -0.05, 0.05);
};

struct NonbindingScenario {
  FeederModel feeder = chain_feeder(2, 0.1, 0.05);
  ProsumerFleet fleet = two_prosumer_fleet(6, -0.02, 0.02);
};

// Envelope shares that cannot host the forced trade (the consumer at node 1
// has no flexibility), while pooled shares can: the all-or-nothing case that
// separates the two uniform mechanisms.
struct ShortfallScenario {
  FeederModel feeder = chain_feeder(2, 2.0, 1.0);
  ProsumerFleet fleet;
  ShortfallScenario() {
    const int T = 4;
    fleet.horizon = T;
    fleet.delta_hours = 0.5;
    ProsumerParams consumer = battery_prosumer("load", 1, T, 0.4, 0.066, -0.02);
    consumer.available.setConstant(T, 1, false);  // uncontrollable load only
    fleet.prosumers.push_back(consumer);
    fleet.prosumers.push_back(battery_prosumer("batt", 2, T, 0.4, 0.066, 0.0));
  }
};

}  // namespace

TEST_CASE("slack voltage band gives one uniform locational price") {
  NonbindingScenario s;
  ClearingResult res = clear_locational(s.feeder, s.fleet);
  REQUIRE(res.status == SolveStatus::Optimal);
  CHECK(res.prices.xi_upper.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(res.prices.xi_lower.cwiseAbs().maxCoeff() <= 1e-6);
  for (int t = 0; t < s.fleet.horizon; ++t)
    CHECK(std::abs(res.prices.locational(0, t) - res.prices.locational(1, t)) <= 1e-5);
}

TEST_CASE("binding band separates locational prices") {
  BindingScenario s;
  ClearingResult res = clear_locational(s.feeder, s.fleet);
  REQUIRE(res.status == SolveStatus::Optimal);
  CHECK(res.prices.xi_upper.row(1).maxCoeff() > 1e-4);  // node 2 upper bound priced
  double max_sep = 0.0;
  for (int t = 0; t < s.fleet.horizon; ++t)
    max_sep = std::max(max_sep,
                       std::abs(res.prices.locational(0, t) - res.prices.locational(1, t)));
  CHECK(max_sep > 1e-4);

  SUBCASE("budget surplus matches the shadow value of the band") {
    for (int t = 0; t < s.fleet.horizon; ++t) {
      double rhs = 0.0;
      for (int k = 0; k < 2; ++k)
        rhs += res.prices.xi_lower(k, t) * (s.feeder.v0_sq - s.feeder.v_lower_sq[k]) +
               res.prices.xi_upper(k, t) * (s.feeder.v_upper_sq[k] - s.feeder.v0_sq);
      CHECK(res.budget_per_step[t] ==
            doctest::Approx(rhs).epsilon(1e-5).scale(1 + std::abs(rhs)));
    }
    CHECK(res.budget_total >= -1e-6);
  }
}

TEST_CASE("uniform mechanisms reproduce the slack-band welfare") {
  NonbindingScenario s;
  ClearingResult loc = clear_locational(s.feeder, s.fleet);
  EnvelopeAllocation alloc = default_allocation(s.feeder, s.fleet);
  ClearingResult doe = clear_uniform_doe(s.feeder, s.fleet, alloc);
  ClearingResult lim = clear_uniform_limit(s.feeder, s.fleet, alloc);
  REQUIRE(loc.status == SolveStatus::Optimal);
  REQUIRE(doe.status == SolveStatus::Optimal);
  REQUIRE(lim.status == SolveStatus::Optimal);

  double scale = 1 + std::abs(loc.welfare);
  CHECK(std::abs(doe.welfare - loc.welfare) <= 1e-5 * scale);
  CHECK(std::abs(lim.welfare - loc.welfare) <= 1e-5 * scale);
  CHECK((doe.P - loc.P).cwiseAbs().maxCoeff() <= 1e-4);

  SUBCASE("limit prices stay near zero when headroom is ample") {
    CHECK(lim.prices.beta.cwiseAbs().maxCoeff() <= 1e-4);
  }
}

TEST_CASE("limit trading matches locational welfare and price under binding") {
  BindingScenario s;
  ClearingResult loc = clear_locational(s.feeder, s.fleet);
  EnvelopeAllocation alloc = default_allocation(s.feeder, s.fleet);
  ClearingResult lim = clear_uniform_limit(s.feeder, s.fleet, alloc);
  REQUIRE(loc.status == SolveStatus::Optimal);
  REQUIRE(lim.status == SolveStatus::Optimal);

  CHECK(std::abs(lim.welfare - loc.welfare) <= 1e-5 * (1 + std::abs(loc.welfare)));
  CHECK((lim.prices.alpha - loc.prices.alpha).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(lim.prices.beta.minCoeff() >= -1e-9);

  SUBCASE("uniform budgets are strongly balanced") {
    double scale = 1.0;
    for (const auto& inc : lim.incomes) scale += std::abs(inc.energy) + std::abs(inc.limit);
    CHECK(lim.budget_per_step.cwiseAbs().maxCoeff() <= 1e-6 * scale);
  }
  SUBCASE("balances hold to solver tolerance") {
    for (int t = 0; t < s.fleet.horizon; ++t)
      CHECK(std::abs(lim.P.col(t).sum()) <= 1e-6);
    Mat lsum = lim.L[0] + lim.L[1];
    CHECK(lsum.cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("single prosumer cannot trade") {
  FeederModel feeder = chain_feeder(1);
  ProsumerFleet fleet;
  fleet.horizon = 4;
  fleet.delta_hours = 0.5;
  fleet.prosumers.push_back(battery_prosumer("solo", 1, 4, 0.4, 0.066, 0.03));
  EnvelopeAllocation alloc = default_allocation(feeder, fleet);
  ClearingResult res = clear_uniform_doe(feeder, fleet, alloc);
  REQUIRE(res.status == SolveStatus::Optimal);
  CHECK(res.P.cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("envelope shortfall separates the uniform mechanisms") {
  ShortfallScenario s;
  EnvelopeAllocation alloc = default_allocation(s.feeder, s.fleet);
  ClearingResult doe = clear_uniform_doe(s.feeder, s.fleet, alloc);
  CHECK(doe.status == SolveStatus::Infeasible);
  CHECK(!doe.shortfalls.empty());
  CHECK(doe.message.find("envelope") != std::string::npos);

  ClearingResult lim = clear_uniform_limit(s.feeder, s.fleet, alloc);
  CHECK(lim.status == SolveStatus::Optimal);

  ClearingResult loc = clear_locational(s.feeder, s.fleet);
  CHECK(loc.status == SolveStatus::Optimal);
}

TEST_CASE("best response saturates the trade cap under a high price") {
  const int T = 4;
  ProsumerParams pr = battery_prosumer("r", 1, T, 0.4, 0.066, 0.02);
  FeederModel feeder = chain_feeder(1, 0.01, 0.005);  // wide envelope
  AffineConstraintMap map = voltage_constraint_map(feeder);
  Mat w = map.bound.replicate(1, T);
  Vec lambda = Vec::Constant(T, 500.0);
  BestResponse br = best_response(pr, T, map, lambda, &w, nullptr);
  REQUIRE(br.status == SolveStatus::Optimal);
  for (int t = 0; t < T; ++t) {
    double cap = pr.net_supply[t] - pr.energy_map(br.U.col(t));
    CHECK(br.p[t] == doctest::Approx(cap).epsilon(1e-6));
  }
}

TEST_CASE("constructed limit trades are balanced and feasible") {
  BindingScenario s;
  ClearingResult loc = clear_locational(s.feeder, s.fleet);
  REQUIRE(loc.status == SolveStatus::Optimal);
  EnvelopeAllocation alloc = default_allocation(s.feeder, s.fleet);
  AffineConstraintMap map = voltage_constraint_map(s.feeder);
  auto trades = construct_limit_trades(map, s.fleet, loc.P, alloc);
  Mat sum = trades[0] + trades[1];
  CHECK(sum.cwiseAbs().maxCoeff() <= 1e-12);
  for (int i = 0; i < 2; ++i) {
    Vec c = map.node_column(s.fleet.prosumers[static_cast<size_t>(i)].node);
    for (int t = 0; t < s.fleet.horizon; ++t) {
      Vec slack = alloc.at(t).col(i) - c * loc.P(i, t) - trades[static_cast<size_t>(i)].col(t);
      CHECK(slack.minCoeff() >= -1e-8);
    }
  }
}

TEST_CASE("income attribution splits energy and limit terms") {
  BindingScenario s;
  EnvelopeAllocation alloc = default_allocation(s.feeder, s.fleet);
  ClearingResult lim = clear_uniform_limit(s.feeder, s.fleet, alloc);
  REQUIRE(lim.status == SolveStatus::Optimal);
  for (int i = 0; i < 2; ++i) {
    double energy = 0.0, limit = 0.0;
    for (int t = 0; t < s.fleet.horizon; ++t) {
      energy += lim.prices.alpha[t] * lim.P(i, t);
      limit += lim.prices.beta.col(t).dot(lim.L[static_cast<size_t>(i)].col(t));
    }
    CHECK(lim.incomes[static_cast<size_t>(i)].energy == doctest::Approx(energy));
    CHECK(lim.incomes[static_cast<size_t>(i)].limit == doctest::Approx(limit));
  }
}
