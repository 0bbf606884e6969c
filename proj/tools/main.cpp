#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridmarket/envelope.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/results_io.hpp"
#include "gridmarket/scenario.hpp"
#include "gridmarket/verify.hpp"

namespace fs = std::filesystem;
using namespace gridmarket;

namespace {

struct CliError : std::runtime_error {
  CliError(int code_, const std::string& what) : std::runtime_error(what), code(code_) {}
  int code;
};

void emit_error(bool as_json, const std::string& kind, const std::string& message) {
  if (as_json) {
    nlohmann::json j{{"error", kind}, {"message", message}};
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "error (" << kind << "): " << message << "\n";
  }
}

struct LoadedScenario {
  Scenario scenario;
  FeederModel feeder;
  ProsumerFleet fleet;
};

LoadedScenario load_all(const std::string& path) {
  Scenario s = load_scenario(path);
  FeederModel feeder = s.build_feeder();
  ProsumerFleet fleet = s.build_fleet(feeder);
  return {std::move(s), std::move(feeder), std::move(fleet)};
}

EnvelopeAllocation allocation_for(const LoadedScenario& ls, const fs::path& out_dir) {
  // Reuse envelopes emitted by `doe` when present so a doe -> clear pipeline
  // sees one consistent decomposition.
  fs::path saved = out_dir / "envelopes.csv";
  if (fs::exists(saved)) return read_envelopes_csv(saved, ls.feeder, ls.fleet);
  AffineConstraintMap map = voltage_constraint_map(ls.feeder);
  std::vector<int> nodes;
  for (const auto& pr : ls.fleet.prosumers) nodes.push_back(pr.node);
  return allocate(map, nodes, ls.fleet.horizon, ls.scenario.envelope_options());
}

int cmd_gen(const std::string& out_dir, const SyntheticSpec& spec) {
  GeneratedScenario gen = generate_synthetic(spec);
  gen.save(out_dir);
  std::cout << "wrote scenario to " << out_dir << " (N=" << spec.prosumers
            << ", T=" << spec.steps << ", seed=" << spec.seed << ")\n";
  return 0;
}

int cmd_doe(const std::string& scenario_path, const std::string& out_dir) {
  LoadedScenario ls = load_all(scenario_path);
  AffineConstraintMap map = voltage_constraint_map(ls.feeder);
  std::vector<int> nodes;
  for (const auto& pr : ls.fleet.prosumers) nodes.push_back(pr.node);
  EnvelopeAllocation alloc = allocate(map, nodes, ls.fleet.horizon,
                                      ls.scenario.envelope_options());
  fs::create_directories(out_dir);
  write_envelopes_csv(fs::path(out_dir) / "envelopes.csv", ls.scenario, ls.fleet, alloc);
  std::cout << "computed envelopes for " << alloc.prosumer_count << " prosumers x "
            << alloc.horizon << " steps (capacity " << alloc.objective_value[0] << " p.u.)\n";
  return 0;
}

int cmd_clear(const std::string& scenario_path, const std::string& mechanism_name,
              const std::string& out_dir, bool as_json) {
  LoadedScenario ls = load_all(scenario_path);
  Mechanism mech = mechanism_from_string(mechanism_name);
  MarketOptions opts;
  opts.solver = ls.scenario.solver_options();

  ClearingResult result;
  EnvelopeAllocation alloc;
  bool have_alloc = false;
  if (mech == Mechanism::Locational) {
    result = clear_locational(ls.feeder, ls.fleet, opts);
  } else {
    alloc = allocation_for(ls, out_dir);
    have_alloc = true;
    result = mech == Mechanism::UniformDoe ? clear_uniform_doe(ls.feeder, ls.fleet, alloc, opts)
                                           : clear_uniform_limit(ls.feeder, ls.fleet, alloc, opts);
  }

  if (result.status == SolveStatus::Infeasible) {
    std::string message = result.message;
    if (mech == Mechanism::UniformDoe)
      message +=
          " — the fixed envelope shares cannot host any balanced trade; "
          "limit trading restores feasibility by letting unused headroom move";
    emit_error(as_json, "infeasible", message);
    return 1;
  }
  if (result.status != SolveStatus::Optimal) {
    emit_error(as_json, "solver", to_string(result.status) + ": " + result.message);
    return 1;
  }

  fs::create_directories(out_dir);
  write_bundle(out_dir, ls.scenario, ls.feeder, ls.fleet, result,
               have_alloc ? &alloc : nullptr);
  std::cout << to_string(mech) << " cleared: welfare " << result.welfare
            << " cents, budget total " << result.budget_total << " cents, bundle in " << out_dir
            << "\n";
  return 0;
}

int cmd_verify(const std::string& scenario_path, const std::vector<std::string>& bundle_dirs,
               bool as_json) {
  LoadedScenario ls = load_all(scenario_path);
  VerifyTolerances tol;
  tol.relative = ls.scenario.tol_compare;
  tol.price = ls.scenario.tol_price;
  tol.solver = ls.scenario.solver_options();

  VerificationReport report;
  report.fingerprint = scenario_fingerprint(ls.feeder, ls.fleet);

  std::optional<ClearingResult> locational, limit;
  std::optional<EnvelopeAllocation> alloc;
  for (const auto& dir : bundle_dirs) {
    ClearingResult result = read_bundle(dir, ls.scenario, ls.feeder, ls.fleet);
    fs::path env = fs::path(dir) / "envelopes.csv";
    if (fs::exists(env)) alloc = read_envelopes_csv(env, ls.feeder, ls.fleet);
    const EnvelopeAllocation* ap =
        result.mechanism == Mechanism::Locational ? nullptr : &alloc.value();
    certify_equilibrium(report, result, ls.feeder, ls.fleet, ap, tol);
    check_budget(report, result, ls.feeder, tol);
    if (result.mechanism == Mechanism::Locational) locational = std::move(result);
    if (result.mechanism == Mechanism::UniformLimit) limit = std::move(result);
  }
  if (locational && limit && alloc) {
    check_welfare_equivalence(report, *locational, *limit, *alloc, ls.feeder, ls.fleet, tol);
    check_uniform_price_identity(report, *locational, *limit, tol,
                                 ls.scenario.s_base_kva * ls.scenario.delta_hours);
  }
  if (locational) check_redistribution(report, *locational, ls.feeder, ls.fleet, tol);

  report.sort();
  if (as_json)
    std::cout << report.json_lines();
  else
    std::cout << "scenario " << report.fingerprint << "\n" << report.table();
  return report.all_pass() ? 0 : 1;
}

int cmd_report(const std::string& scenario_path, const std::vector<std::string>& bundle_dirs,
               const std::string& out_dir) {
  LoadedScenario ls = load_all(scenario_path);
  std::vector<std::pair<std::string, ClearingResult>> results;
  for (const auto& dir : bundle_dirs) {
    ClearingResult r = read_bundle(dir, ls.scenario, ls.feeder, ls.fleet);
    results.emplace_back(to_string(r.mechanism), std::move(r));
  }
  write_plot_data(out_dir, ls.scenario, ls.feeder, ls.fleet, results);
  std::cout << "plot data written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer energy market clearing on radial feeders"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable errors and reports");

  auto* gen = app.add_subcommand("gen", "generate a synthetic scenario");
  SyntheticSpec spec;
  std::string gen_out = "out";
  long seed_flag = 1;
  gen->add_option("-o,--out", gen_out, "output directory")->required();
  gen->add_option("--seed", seed_flag, "random seed");
  gen->add_option("-n,--prosumers", spec.prosumers, "number of prosumers");
  gen->add_option("-t,--steps", spec.steps, "horizon steps");
  gen->add_option("--delta-hours", spec.delta_hours, "step length in hours");
  gen->add_option("--nodes", spec.feeder_nodes, "prosumer nodes on the feeder (max 12)");
  gen->add_option("--aggregator-size", spec.aggregator_size, "prosumers per decision maker");
  gen->add_option("--pv-scale", spec.pv_scale, "solar amplitude multiplier");
  gen->add_option("--load-scale", spec.load_scale, "load amplitude multiplier");
  gen->add_option("--stress", spec.voltage_stress, "midday voltage stress factor");

  auto* doe = app.add_subcommand("doe", "compute and emit operating envelopes");
  std::string doe_scn, doe_out = "out";
  doe->add_option("-s,--scenario", doe_scn, "scenario file")->required();
  doe->add_option("-o,--out", doe_out, "output directory")->required();

  auto* clear = app.add_subcommand("clear", "clear the market under one mechanism");
  std::string clear_scn, clear_mech, clear_out = "out";
  clear->add_option("-s,--scenario", clear_scn, "scenario file")->required();
  clear->add_option("-m,--mechanism", clear_mech, "locational | uniform-doe | uniform-limit")
      ->required();
  clear->add_option("-o,--out", clear_out, "output directory")->required();

  auto* verify = app.add_subcommand("verify", "run the property suite on saved results");
  std::string verify_scn;
  std::vector<std::string> verify_dirs;
  verify->add_option("-s,--scenario", verify_scn, "scenario file")->required();
  verify->add_option("dirs", verify_dirs, "result bundle directories")->required();

  auto* report = app.add_subcommand("report", "emit plot-ready long-format CSVs");
  std::string report_scn, report_out = "report";
  std::vector<std::string> report_dirs;
  report->add_option("-s,--scenario", report_scn, "scenario file")->required();
  report->add_option("dirs", report_dirs, "result bundle directories")->required();
  report->add_option("-o,--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      spec.seed = static_cast<uint64_t>(seed_flag);
      return cmd_gen(gen_out, spec);
    }
    if (doe->parsed()) return cmd_doe(doe_scn, doe_out);
    if (clear->parsed()) return cmd_clear(clear_scn, clear_mech, clear_out, as_json);
    if (verify->parsed()) return cmd_verify(verify_scn, verify_dirs, as_json);
    if (report->parsed()) return cmd_report(report_scn, report_dirs, report_out);
  } catch (const ParseError& e) {
    emit_error(as_json, "parse", e.what());
    return 2;
  } catch (const ValidationError& e) {
    emit_error(as_json, "validation", e.what());
    return 2;
  } catch (const TopologyError& e) {
    emit_error(as_json, "topology", e.what());
    return 2;
  } catch (const EnvelopeError& e) {
    emit_error(as_json, "envelope", e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error(as_json, "internal", e.what());
    return 1;
  }
  return 2;
}
