#include <doctest.h>

#include "gridmarket/verify.hpp"
#include "helpers.hpp"

using namespace gridmarket;
using namespace gridmarket::testing;

namespace {

struct Desk {
  FeederModel feeder = chain_feeder(2, 2.0, 1.0);
  ProsumerFleet fleet = two_prosumer_fleet(6, -0.05, 0.05);
  EnvelopeAllocation alloc;
  ClearingResult loc, lim;
  Desk() {
    alloc = default_allocation(feeder, fleet);
    loc = clear_locational(feeder, fleet);
    lim = clear_uniform_limit(feeder, fleet, alloc);
  }
};

const CheckRecord& find_check(const VerificationReport& r, const std::string& prefix) {
  for (const auto& c : r.checks)
    if (c.name.rfind(prefix, 0) == 0) return c;
  static CheckRecord missing{"missing", "", 1.0, 0.0, false};
  REQUIRE_MESSAGE(false, "check not found: " << prefix);
  return missing;
}

}  // namespace

TEST_CASE("full certificate passes on a binding desk scenario") {
  Desk d;
  REQUIRE(d.loc.status == SolveStatus::Optimal);
  REQUIRE(d.lim.status == SolveStatus::Optimal);

  VerificationReport report;
  report.fingerprint = scenario_fingerprint(d.feeder, d.fleet);
  certify_equilibrium(report, d.loc, d.feeder, d.fleet, nullptr);
  certify_equilibrium(report, d.lim, d.feeder, d.fleet, &d.alloc);
  check_welfare_equivalence(report, d.loc, d.lim, d.alloc, d.feeder, d.fleet);
  check_uniform_price_identity(report, d.loc, d.lim);
  check_budget(report, d.loc, d.feeder);
  check_budget(report, d.lim, d.feeder);
  check_redistribution(report, d.loc, d.feeder, d.fleet);
  report.sort();
  INFO(report.table());
  CHECK(report.all_pass());
  CHECK(!report.json_lines().empty());
}

TEST_CASE("fault injection: perturbed injections break the balance check") {
  Desk d;
  ClearingResult broken = d.loc;
  broken.P(0, 0) += 0.1;
  VerificationReport report;
  certify_equilibrium(report, broken, d.feeder, d.fleet, nullptr);
  const auto& bal = find_check(report, "power_balance");
  CHECK(!bal.pass);
  CHECK(bal.residual == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("fault injection: perturbed prices break the best-response check") {
  Desk d;
  ClearingResult broken = d.loc;
  broken.prices.locational.row(0).array() += 1.0;
  broken.prices.alpha.array() += 1.0;  // keep the identity check aligned on purpose? no:
  broken.prices.alpha.array() -= 1.0;
  VerificationReport report;
  certify_equilibrium(report, broken, d.feeder, d.fleet, nullptr);
  CHECK(!find_check(report, "best_response_gap").pass);
}

TEST_CASE("fault injection: each check trips at ten times its tolerance") {
  Desk d;
  VerifyTolerances tol;

  SUBCASE("balance") {
    ClearingResult broken = d.loc;
    broken.P(1, 2) += 10 * tol.balance;
    VerificationReport report;
    certify_equilibrium(report, broken, d.feeder, d.fleet, nullptr);
    CHECK(!find_check(report, "power_balance").pass);
  }
  SUBCASE("complementary slackness") {
    ClearingResult broken = d.loc;
    double pscale = 1.0;
    for (const auto& inc : broken.incomes) pscale += std::abs(inc.energy);
    // Inflate a shadow price on a slack row: node 1 never binds here.
    broken.prices.xi_upper(0, 0) +=
        10 * tol.relative * pscale / (d.feeder.v_upper_sq[0] - 1.0);
    VerificationReport report;
    certify_equilibrium(report, broken, d.feeder, d.fleet, nullptr);
    bool comp_failed = !find_check(report, "complementary_slackness").pass;
    bool identity_failed = !find_check(report, "price_identity").pass;
    CHECK((comp_failed || identity_failed));
  }
  SUBCASE("welfare equivalence") {
    ClearingResult broken = d.lim;
    broken.welfare += 10 * tol.relative * (1 + std::abs(d.loc.welfare));
    VerificationReport report;
    check_welfare_equivalence(report, d.loc, broken, d.alloc, d.feeder, d.fleet);
    CHECK(!find_check(report, "welfare_equivalence").pass);
  }
  SUBCASE("price identity") {
    ClearingResult broken = d.lim;
    broken.prices.alpha[0] += 10 * tol.price;
    VerificationReport report;
    check_uniform_price_identity(report, d.loc, broken);
    CHECK(!find_check(report, "uniform_price_identity").pass);
  }
  SUBCASE("strong budget") {
    ClearingResult broken = d.lim;
    double scale = 1.0;
    for (const auto& inc : broken.incomes) scale += std::abs(inc.energy) + std::abs(inc.limit);
    broken.budget_per_step[0] += 10 * tol.balance * scale;
    VerificationReport report;
    check_budget(report, broken, d.feeder);
    CHECK(!find_check(report, "budget_strong").pass);
  }
}

TEST_CASE("redistribution splits the surplus equally on a toy pair") {
  Desk d;
  REQUIRE(d.loc.budget_total > 1e-6);  // the band binds, so a surplus exists
  VerificationReport report;
  check_redistribution(report, d.loc, d.feeder, d.fleet);
  INFO(report.table());
  CHECK(report.all_pass());

  // Hand check: re-run the equal-share limit market and compare income shifts.
  AffineConstraintMap map = voltage_constraint_map(d.feeder);
  EnvelopeAllocation equal = equal_split(map, 2, d.fleet.horizon);
  ClearingResult lim = clear_uniform_limit(d.feeder, d.fleet, equal);
  REQUIRE(lim.status == SolveStatus::Optimal);
  double d0 = lim.incomes[0].total() - d.loc.incomes[0].total();
  double d1 = lim.incomes[1].total() - d.loc.incomes[1].total();
  CHECK(d0 == doctest::Approx(d1).epsilon(1e-4));
  CHECK(d0 == doctest::Approx(d.loc.budget_total / 2).epsilon(1e-4));
}

TEST_CASE("oracle agrees with the solver on tiny instances") {
  FeederModel feeder = chain_feeder(2, 2.0, 1.0);
  ProsumerFleet fleet = two_prosumer_fleet(1, -0.05, 0.05);
  ClearingResult loc = clear_locational(feeder, fleet);
  REQUIRE(loc.status == SolveStatus::Optimal);
  OracleOptions opts;
  opts.control_points = 41;
  opts.trade_points = 101;
  OracleResult oracle = brute_force_oracle(feeder, fleet, Mechanism::Locational, nullptr, opts);
  REQUIRE(oracle.feasible_found);
  CHECK(loc.welfare >= oracle.welfare - 1e-6);
  CHECK(loc.welfare <= oracle.welfare + oracle.gap + 1e-6);
}

TEST_CASE("symmetric pair trades antisymmetrically") {
  FeederModel feeder = star_feeder(2);
  ProsumerFleet fleet;
  fleet.horizon = 2;
  fleet.delta_hours = 0.5;
  fleet.prosumers.push_back(battery_prosumer("a", 1, 2, 0.4, 0.066, 0.03));
  fleet.prosumers.push_back(battery_prosumer("b", 2, 2, 0.4, 0.066, 0.03));
  ClearingResult loc = clear_locational(feeder, fleet);
  REQUIRE(loc.status == SolveStatus::Optimal);
  for (int t = 0; t < 2; ++t) CHECK(loc.P(0, t) == doctest::Approx(-loc.P(1, t)).epsilon(1e-8));
}

TEST_CASE("oracle confirms the envelope-shortfall infeasibility") {
  FeederModel feeder = chain_feeder(2, 2.0, 1.0);
  const int T = 1;
  ProsumerFleet fleet;
  fleet.horizon = T;
  fleet.delta_hours = 0.5;
  ProsumerParams consumer = battery_prosumer("load", 1, T, 0.4, 0.066, -0.02);
  consumer.available.setConstant(T, 1, false);
  fleet.prosumers.push_back(consumer);
  fleet.prosumers.push_back(battery_prosumer("batt", 2, T, 0.4, 0.066, 0.0));
  EnvelopeAllocation alloc = default_allocation(feeder, fleet);

  OracleOptions opts;
  opts.control_points = 21;
  opts.trade_points = 81;
  OracleResult doe = brute_force_oracle(feeder, fleet, Mechanism::UniformDoe, &alloc, opts);
  CHECK(!doe.feasible_found);
  OracleResult lim = brute_force_oracle(feeder, fleet, Mechanism::UniformLimit, &alloc, opts);
  CHECK(lim.feasible_found);
}

TEST_CASE("fingerprints identify scenarios") {
  Desk d;
  std::string a = scenario_fingerprint(d.feeder, d.fleet);
  ProsumerFleet other = d.fleet;
  other.prosumers[0].net_supply[0] += 1e-9;
  std::string b = scenario_fingerprint(d.feeder, other);
  CHECK(a != b);
  CHECK(a.size() == 16);
}
