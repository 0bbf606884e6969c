#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "gridmarket/csv.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/results_io.hpp"
#include "gridmarket/scenario.hpp"

using namespace gridmarket;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("gridmarket_test_" + std::to_string(std::chrono::steady_clock::now()
                                                    .time_since_epoch()
                                                    .count()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

}  // namespace

TEST_CASE("generation is deterministic by seed") {
  SyntheticSpec spec;
  spec.seed = 42;
  spec.prosumers = 5;
  spec.steps = 8;
  GeneratedScenario a = generate_synthetic(spec);
  GeneratedScenario b = generate_synthetic(spec);
  CHECK(a.fleet_json == b.fleet_json);
  CHECK(a.profiles_csv == b.profiles_csv);
  CHECK(a.topology_csv == b.topology_csv);
  CHECK(a.scenario_text == b.scenario_text);
  spec.seed = 43;
  GeneratedScenario c = generate_synthetic(spec);
  CHECK(a.profiles_csv != c.profiles_csv);
}

TEST_CASE("generated scenarios load with documented defaults") {
  TempDir dir;
  SyntheticSpec spec;
  spec.seed = 7;
  spec.prosumers = 3;
  spec.feeder_nodes = 3;
  spec.steps = 6;
  generate_synthetic(spec).save(dir.path);

  Scenario s = load_scenario(dir.path / "scenario.toml");
  CHECK(s.v_lower_pu == doctest::Approx(0.95));
  CHECK(s.v_upper_pu == doctest::Approx(1.05));
  CHECK(s.envelope_epsilon == doctest::Approx(1e-4));
  CHECK(s.steps == 6);

  FeederModel feeder = s.build_feeder();
  ProsumerFleet fleet = s.build_fleet(feeder);
  CHECK(fleet.size() == 3);
  CHECK(fleet.horizon == 6);
  // kW -> p.u. happened at load
  for (const auto& pr : fleet.prosumers) CHECK(pr.u_upper[0] == doctest::Approx(6.6 / s.s_base_kva));
}

TEST_CASE("scenario save/load round-trips byte-identically") {
  TempDir dir;
  SyntheticSpec spec;
  spec.seed = 11;
  spec.prosumers = 2;
  spec.steps = 4;
  generate_synthetic(spec).save(dir.path);

  Scenario s1 = load_scenario(dir.path / "scenario.toml");
  save_scenario(s1, dir.path / "scenario2.toml");
  Scenario s2 = load_scenario(dir.path / "scenario2.toml");
  save_scenario(s2, dir.path / "scenario3.toml");
  CHECK(slurp(dir.path / "scenario2.toml") == slurp(dir.path / "scenario3.toml"));
}

TEST_CASE("scenario validation failures name the field") {
  TempDir dir;
  SyntheticSpec spec;
  spec.seed = 3;
  spec.prosumers = 2;
  spec.steps = 4;
  generate_synthetic(spec).save(dir.path);

  SUBCASE("missing topology") {
    fs::remove(dir.path / "topology.csv");
    CHECK_THROWS_WITH_AS(load_scenario(dir.path / "scenario.toml"),
                         doctest::Contains("feeder.topology"), ValidationError);
  }
  SUBCASE("zero-length horizon") {
    std::ofstream out(dir.path / "scenario.toml", std::ios::app);
    out << "\n[horizon]\nsteps = 0\n";
    out.close();
    CHECK_THROWS_AS(load_scenario(dir.path / "scenario.toml"), ValidationError);
  }
  SUBCASE("config parse errors carry line numbers") {
    std::ofstream out(dir.path / "scenario.toml", std::ios::app);
    out << "\nnot a key value pair\n";
    out.close();
    CHECK_THROWS_AS(load_scenario(dir.path / "scenario.toml"), ParseError);
  }
}

TEST_CASE("paper-scale generation is fast and loads") {
  SyntheticSpec spec;
  spec.seed = 1;
  spec.prosumers = 300;
  spec.feeder_nodes = 12;
  spec.steps = 48;
  spec.aggregator_size = 12;
  auto start = std::chrono::steady_clock::now();
  GeneratedScenario gen = generate_synthetic(spec);
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(elapsed < 1.0);
  TempDir dir;
  gen.save(dir.path);
  Scenario s = load_scenario(dir.path / "scenario.toml");
  FeederModel feeder = s.build_feeder();
  ProsumerFleet fleet = s.build_fleet(feeder);
  CHECK(fleet.size() == 300);
  CHECK(feeder.node_count() == 12);
}

TEST_CASE("result bundles round-trip with documented schemas") {
  TempDir dir;
  SyntheticSpec spec;
  spec.seed = 19;
  spec.prosumers = 3;
  spec.feeder_nodes = 3;
  spec.steps = 4;
  spec.voltage_stress = 0.5;
  generate_synthetic(spec).save(dir.path);
  Scenario s = load_scenario(dir.path / "scenario.toml");
  FeederModel feeder = s.build_feeder();
  ProsumerFleet fleet = s.build_fleet(feeder);

  ClearingResult loc = clear_locational(feeder, fleet);
  REQUIRE(loc.status == SolveStatus::Optimal);
  write_bundle(dir.path / "out", s, feeder, fleet, loc, nullptr);

  const int N = fleet.size(), T = fleet.horizon, Nn = feeder.node_count();
  CHECK(read_csv(dir.path / "out" / "injections.csv").rows.size() ==
        static_cast<size_t>(N * T));
  CHECK(read_csv(dir.path / "out" / "prices_energy.csv").rows.size() == static_cast<size_t>(T));
  CHECK(read_csv(dir.path / "out" / "prices_locational.csv").rows.size() ==
        static_cast<size_t>(Nn * T));
  CHECK(read_csv(dir.path / "out" / "voltages.csv").rows.size() == static_cast<size_t>(Nn * T));
  CHECK(read_csv(dir.path / "out" / "incomes.csv").rows.size() == static_cast<size_t>(N));

  ClearingResult back = read_bundle(dir.path / "out", s, feeder, fleet);
  CHECK(back.mechanism == Mechanism::Locational);
  CHECK((back.P - loc.P).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((back.prices.alpha - loc.prices.alpha).cwiseAbs().maxCoeff() <=
        1e-9 * (1 + loc.prices.alpha.cwiseAbs().maxCoeff()));
  CHECK(back.incomes[0].total() ==
        doctest::Approx(loc.incomes[0].total()).epsilon(1e-6));
}

TEST_CASE("envelope csv round-trips") {
  TempDir dir;
  SyntheticSpec spec;
  spec.seed = 23;
  spec.prosumers = 2;
  spec.feeder_nodes = 2;
  spec.steps = 3;
  generate_synthetic(spec).save(dir.path);
  Scenario s = load_scenario(dir.path / "scenario.toml");
  FeederModel feeder = s.build_feeder();
  ProsumerFleet fleet = s.build_fleet(feeder);
  AffineConstraintMap map = voltage_constraint_map(feeder);
  std::vector<int> nodes;
  for (const auto& pr : fleet.prosumers) nodes.push_back(pr.node);
  EnvelopeAllocation alloc = allocate(map, nodes, fleet.horizon, s.envelope_options());

  write_envelopes_csv(dir.path / "envelopes.csv", s, fleet, alloc);
  EnvelopeAllocation back = read_envelopes_csv(dir.path / "envelopes.csv", feeder, fleet);
  for (int t = 0; t < fleet.horizon; ++t)
    CHECK((back.at(t) - alloc.at(t)).cwiseAbs().maxCoeff() <= 1e-12);
}
