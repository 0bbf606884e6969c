#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridmarket/envelope.hpp"
#include "gridmarket/feeder.hpp"
#include "gridmarket/prosumer.hpp"
#include "gridmarket/types.hpp"

namespace gridmarket {

// A scenario bundles the feeder, the fleet, horizon and tolerances. All file
// references are relative to the scenario file's directory. Power enters in
// kW and is converted to per-unit exactly once, at load; currency is cents.
struct Scenario {
  std::filesystem::path base_dir;

  // [feeder]
  std::string topology_file = "topology.csv";
  std::string bounds_file;          // optional per-node bounds CSV
  double v0_pu = 1.0;
  double v_lower_pu = 0.95;
  double v_upper_pu = 1.05;
  double s_base_kva = 100.0;

  // [fleet]
  std::string fleet_file = "fleet.json";
  std::string profiles_file = "profiles.csv";

  // [horizon]
  int steps = 48;
  double delta_hours = 0.5;

  // [envelope]
  double envelope_epsilon = 1e-4;
  std::string envelope_mode = "sqnorm";
  double consumption_penalty = 1e-6;

  // [tolerances]
  double tol_solve = 1e-8;
  double tol_accept = 1e-6;
  double tol_compare = 1e-5;
  double tol_price = 1e-4;

  // [synthetic] provenance of generated scenarios (informational)
  long seed = -1;

  FeederModel build_feeder() const;
  ProsumerFleet build_fleet(const FeederModel& feeder) const;
  EnvelopeOptions envelope_options() const;
  SolverOptions solver_options() const;

  // kW <-> p.u. and price conversions (S_base in kVA, energy per step).
  double kw_to_pu(double kw) const { return kw / s_base_kva; }
  double pu_to_kw(double pu) const { return pu * s_base_kva; }
  double price_to_cents_per_kwh(double internal) const {
    return internal / (s_base_kva * delta_hours);
  }
  double price_from_cents_per_kwh(double per_kwh) const {
    return per_kwh * s_base_kva * delta_hours;
  }
};

Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);

// Deterministic synthetic scenario: solar-hump net supplies, EV plus home
// battery per prosumer, seeded draws. Line impedances are calibrated so the
// unconstrained midday exports would stress the voltage band by the given
// factor (1 = right at the band).
struct SyntheticSpec {
  uint64_t seed = 1;
  int prosumers = 4;
  int feeder_nodes = 3;  // prosumer nodes, <= 12; 12 selects the 13-node layout
  int steps = 48;
  double delta_hours = 0.5;
  int aggregator_size = 1;   // prosumers represented by one decision maker
  double pv_scale = 1.0;     // amplitude multiplier on generation
  double load_scale = 1.0;
  double voltage_stress = 0.9;
  double reactance_ratio = 0.5;  // x = ratio * r per line
};

struct GeneratedScenario {
  Scenario scenario;
  std::string scenario_text;
  std::string topology_csv;
  std::string fleet_json;
  std::string profiles_csv;

  // Writes scenario.toml, topology.csv, fleet.json, profiles.csv.
  void save(const std::filesystem::path& dir) const;
};

GeneratedScenario generate_synthetic(const SyntheticSpec& spec);

}  // namespace gridmarket
