#include "gridmarket/results_io.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gridmarket/csv.hpp"
#include "gridmarket/verify.hpp"

namespace gridmarket {

using nlohmann::json;

namespace {

std::string sbase_comment(const Scenario& s) {
  return "s_base_kva=" + format_double(s.s_base_kva) + " delta_hours=" +
         format_double(s.delta_hours);
}

Mat node_prices(const FeederModel& feeder, const ClearingResult& result) {
  // Locational price at a node: alpha plus the R-weighted shadow adjustment.
  const int Nn = feeder.node_count();
  const int T = static_cast<int>(result.prices.alpha.size());
  Mat out(Nn, T);
  for (int k = 0; k < Nn; ++k)
    for (int t = 0; t < T; ++t) {
      double adj = 0.0;
      for (int j = 0; j < Nn; ++j)
        adj += (result.prices.xi_lower(j, t) - result.prices.xi_upper(j, t)) * feeder.R(j, k);
      out(k, t) = result.prices.alpha[t] + adj;
    }
  return out;
}

Mat node_injections(const FeederModel& feeder, const ProsumerFleet& fleet, const Mat& P) {
  Mat node_p = Mat::Zero(feeder.node_count(), P.cols());
  for (int i = 0; i < fleet.size(); ++i)
    node_p.row(fleet.prosumers[static_cast<size_t>(i)].node - 1) += P.row(i);
  return node_p;
}

}  // namespace

void write_envelopes_csv(const std::filesystem::path& path, const Scenario& scenario,
                         const ProsumerFleet& fleet, const EnvelopeAllocation& alloc) {
  CsvWriter w;
  w.comment(sbase_comment(scenario));
  w.comment("w_value in (p.u.)^2 headroom; component_index matches the voltage stack");
  w.set_header({"t", "prosumer_id", "component_index", "w_value"});
  for (int t = 0; t < alloc.horizon; ++t)
    for (int i = 0; i < alloc.prosumer_count; ++i)
      for (int m = 0; m < alloc.components; ++m)
        w.add_row({std::to_string(t), fleet.prosumers[static_cast<size_t>(i)].id,
                   std::to_string(m), format_double(alloc.at(t)(m, i))});
  write_file_atomic(path, w.str());
}

EnvelopeAllocation read_envelopes_csv(const std::filesystem::path& path,
                                      const FeederModel& feeder, const ProsumerFleet& fleet) {
  AffineConstraintMap map = voltage_constraint_map(feeder);
  CsvTable table = read_csv(path);
  int ct = table.column("t"), ci = table.column("prosumer_id"),
      cm = table.column("component_index"), cw = table.column("w_value");
  if (ct < 0 || ci < 0 || cm < 0 || cw < 0)
    throw ValidationError("envelopes CSV needs columns t,prosumer_id,component_index,w_value");
  EnvelopeAllocation alloc;
  alloc.horizon = fleet.horizon;
  alloc.components = map.components;
  alloc.prosumer_count = fleet.size();
  alloc.objective_mode = "loaded";
  alloc.equality_share = map.bound / static_cast<double>(fleet.size());
  alloc.w.assign(static_cast<size_t>(fleet.horizon),
                 Mat::Zero(map.components, fleet.size()));
  alloc.witness.assign(static_cast<size_t>(fleet.horizon), Vec::Zero(fleet.size()));
  alloc.objective_value = Vec::Zero(fleet.horizon);
  std::map<std::string, int> by_id;
  for (int i = 0; i < fleet.size(); ++i) by_id[fleet.prosumers[static_cast<size_t>(i)].id] = i;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    int t = static_cast<int>(table.integer(r, ct));
    int m = static_cast<int>(table.integer(r, cm));
    auto it = by_id.find(table.rows[r][static_cast<size_t>(ci)]);
    if (it == by_id.end() || t < 0 || t >= fleet.horizon || m < 0 || m >= map.components)
      throw ValidationError("envelopes CSV row " + std::to_string(r) + " out of range");
    alloc.w[static_cast<size_t>(t)](m, it->second) = table.number(r, cw);
  }
  return alloc;
}

void write_bundle(const std::filesystem::path& dir, const Scenario& scenario,
                  const FeederModel& feeder, const ProsumerFleet& fleet,
                  const ClearingResult& result, const EnvelopeAllocation* alloc) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int N = fleet.size(), T = fleet.horizon, Nn = feeder.node_count();

  {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.comment("lambda in cents/kWh");
    w.set_header({"t", "lambda"});
    for (int t = 0; t < T; ++t)
      w.add_row({std::to_string(t),
                 format_double(scenario.price_to_cents_per_kwh(result.prices.alpha[t]))});
    write_file_atomic(dir / "prices_energy.csv", w.str());
  }

  if (result.mechanism == Mechanism::UniformLimit) {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.comment("beta in cents per (p.u.)^2 of limit per step");
    w.set_header({"t", "component", "beta"});
    for (int t = 0; t < T; ++t)
      for (int m = 0; m < result.prices.beta.rows(); ++m)
        w.add_row({std::to_string(t), std::to_string(m),
                   format_double(result.prices.beta(m, t))});
    write_file_atomic(dir / "prices_limits.csv", w.str());
  }

  if (result.mechanism == Mechanism::Locational) {
    Mat np = node_prices(feeder, result);
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.comment("lambda_i in cents/kWh");
    w.set_header({"t", "node", "lambda_i"});
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < Nn; ++k)
        w.add_row({std::to_string(t), std::to_string(k + 1),
                   format_double(scenario.price_to_cents_per_kwh(np(k, t)))});
    write_file_atomic(dir / "prices_locational.csv", w.str());

    CsvWriter sw;
    sw.comment(sbase_comment(scenario));
    sw.comment("voltage shadow prices, cents per (p.u.)^2 per step");
    sw.set_header({"t", "node", "xi_lower", "xi_upper"});
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < Nn; ++k)
        sw.add_row({std::to_string(t), std::to_string(k + 1),
                    format_double(result.prices.xi_lower(k, t)),
                    format_double(result.prices.xi_upper(k, t))});
    write_file_atomic(dir / "shadow_prices.csv", sw.str());
  } else {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"t", "prosumer", "component", "value"});
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i)
        for (int m = 0; m < result.doe_duals[static_cast<size_t>(i)].rows(); ++m)
          w.add_row({std::to_string(t), fleet.prosumers[static_cast<size_t>(i)].id,
                     std::to_string(m),
                     format_double(result.doe_duals[static_cast<size_t>(i)](m, t))});
    write_file_atomic(dir / "doe_duals.csv", w.str());
  }

  {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"t", "prosumer", "p_kw"});
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i)
        w.add_row({std::to_string(t), fleet.prosumers[static_cast<size_t>(i)].id,
                   format_double(scenario.pu_to_kw(result.P(i, t)))});
    write_file_atomic(dir / "injections.csv", w.str());
  }

  {
    Mat node_p = node_injections(feeder, fleet, result.P);
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"t", "node", "v_pu"});
    for (int t = 0; t < T; ++t) {
      Vec v = voltages_from_injections(feeder, node_p.col(t), Vec::Zero(Nn));
      for (int k = 0; k < Nn; ++k)
        w.add_row({std::to_string(t), std::to_string(k + 1),
                   format_double(std::sqrt(std::max(0.0, v[k])))});
    }
    write_file_atomic(dir / "voltages.csv", w.str());
  }

  {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"prosumer", "energy_cents", "limit_cents", "total_cents"});
    for (int i = 0; i < N; ++i) {
      const auto& inc = result.incomes[static_cast<size_t>(i)];
      w.add_row({fleet.prosumers[static_cast<size_t>(i)].id, format_double(inc.energy),
                 format_double(inc.limit), format_double(inc.total())});
    }
    write_file_atomic(dir / "incomes.csv", w.str());
  }

  {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"t", "budget_cents"});
    for (int t = 0; t < T; ++t)
      w.add_row({std::to_string(t), format_double(result.budget_per_step[t])});
    write_file_atomic(dir / "budget.csv", w.str());
  }

  {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"t", "prosumer", "dim", "u_kw"});
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i)
        for (int d = 0; d < result.U[static_cast<size_t>(i)].rows(); ++d)
          w.add_row({std::to_string(t), fleet.prosumers[static_cast<size_t>(i)].id,
                     std::to_string(d),
                     format_double(scenario.pu_to_kw(result.U[static_cast<size_t>(i)](d, t)))});
    write_file_atomic(dir / "controls.csv", w.str());
  }

  {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.set_header({"t", "prosumer", "dim", "x_kwh"});
    for (int t = 0; t <= T; ++t)
      for (int i = 0; i < N; ++i)
        for (int d = 0; d < result.X[static_cast<size_t>(i)].rows(); ++d)
          w.add_row({std::to_string(t), fleet.prosumers[static_cast<size_t>(i)].id,
                     std::to_string(d),
                     format_double(scenario.pu_to_kw(result.X[static_cast<size_t>(i)](d, t)))});
    write_file_atomic(dir / "soc.csv", w.str());
  }

  if (result.mechanism == Mechanism::UniformLimit) {
    CsvWriter w;
    w.comment(sbase_comment(scenario));
    w.comment("l_value in (p.u.)^2 headroom traded");
    w.set_header({"t", "prosumer", "component", "l_value"});
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i)
        for (int m = 0; m < result.L[static_cast<size_t>(i)].rows(); ++m)
          w.add_row({std::to_string(t), fleet.prosumers[static_cast<size_t>(i)].id,
                     std::to_string(m),
                     format_double(result.L[static_cast<size_t>(i)](m, t))});
    write_file_atomic(dir / "limits_traded.csv", w.str());
  }

  if (alloc) write_envelopes_csv(dir / "envelopes.csv", scenario, fleet, *alloc);

  {
    json meta;
    meta["mechanism"] = to_string(result.mechanism);
    meta["status"] = to_string(result.status);
    meta["message"] = result.message;
    meta["welfare_cents"] = result.welfare;
    meta["budget_total_cents"] = result.budget_total;
    meta["s_base_kva"] = scenario.s_base_kva;
    meta["delta_hours"] = scenario.delta_hours;
    meta["steps"] = T;
    meta["prosumers"] = N;
    meta["fingerprint"] = scenario_fingerprint(feeder, fleet);
    meta["residuals"] = {{"stationarity", result.residuals.stationarity},
                         {"primal", result.residuals.primal},
                         {"dual", result.residuals.dual},
                         {"comp_slack", result.residuals.comp_slack}};
    write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
  }
}

ClearingResult read_bundle(const std::filesystem::path& dir, const Scenario& scenario,
                           const FeederModel& feeder, const ProsumerFleet& fleet) {
  const int N = fleet.size(), T = fleet.horizon, Nn = feeder.node_count();
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw ValidationError("missing meta.json in " + dir.string());
  json meta = json::parse(mf);

  ClearingResult result;
  result.mechanism = mechanism_from_string(meta.at("mechanism").get<std::string>());
  std::string status = meta.at("status").get<std::string>();
  result.status = status == "Optimal"      ? SolveStatus::Optimal
                  : status == "Infeasible" ? SolveStatus::Infeasible
                  : status == "Unbounded"  ? SolveStatus::Unbounded
                                           : SolveStatus::NumericalTrouble;
  result.message = meta.value("message", "");
  result.welfare = meta.at("welfare_cents").get<double>();
  if (result.status != SolveStatus::Optimal) return result;

  std::map<std::string, int> by_id;
  for (int i = 0; i < N; ++i) by_id[fleet.prosumers[static_cast<size_t>(i)].id] = i;
  auto pid = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("bundle references unknown prosumer " + id);
    return it->second;
  };

  {
    CsvTable t = read_csv(dir / "injections.csv");
    int ct = t.column("t"), ci = t.column("prosumer"), cp = t.column("p_kw");
    result.P = Mat::Zero(N, T);
    for (size_t r = 0; r < t.rows.size(); ++r)
      result.P(pid(t.rows[r][static_cast<size_t>(ci)]), t.integer(r, ct)) =
          scenario.kw_to_pu(t.number(r, cp));
  }
  {
    CsvTable t = read_csv(dir / "controls.csv");
    int ct = t.column("t"), ci = t.column("prosumer"), cd = t.column("dim"), cu = t.column("u_kw");
    for (int i = 0; i < N; ++i)
      result.U.push_back(Mat::Zero(fleet.prosumers[static_cast<size_t>(i)].input_dim(), T));
    for (size_t r = 0; r < t.rows.size(); ++r)
      result.U[static_cast<size_t>(pid(t.rows[r][static_cast<size_t>(ci)]))](
          t.integer(r, cd), t.integer(r, ct)) = scenario.kw_to_pu(t.number(r, cu));
  }
  for (int i = 0; i < N; ++i)
    result.X.push_back(expand_trajectory(fleet.prosumers[static_cast<size_t>(i)],
                                         result.U[static_cast<size_t>(i)]));

  {
    CsvTable t = read_csv(dir / "prices_energy.csv");
    int ct = t.column("t"), cl = t.column("lambda");
    result.prices.alpha = Vec::Zero(T);
    for (size_t r = 0; r < t.rows.size(); ++r)
      result.prices.alpha[t.integer(r, ct)] =
          scenario.price_from_cents_per_kwh(t.number(r, cl));
  }

  if (result.mechanism == Mechanism::Locational) {
    CsvTable t = read_csv(dir / "shadow_prices.csv");
    int ct = t.column("t"), ck = t.column("node"), cl = t.column("xi_lower"),
        cu = t.column("xi_upper");
    result.prices.xi_lower = Mat::Zero(Nn, T);
    result.prices.xi_upper = Mat::Zero(Nn, T);
    for (size_t r = 0; r < t.rows.size(); ++r) {
      result.prices.xi_lower(t.integer(r, ck) - 1, t.integer(r, ct)) = t.number(r, cl);
      result.prices.xi_upper(t.integer(r, ck) - 1, t.integer(r, ct)) = t.number(r, cu);
    }
    result.prices.locational = Mat::Zero(N, T);
    for (int i = 0; i < N; ++i) {
      int node = fleet.prosumers[static_cast<size_t>(i)].node;
      for (int tt = 0; tt < T; ++tt) {
        double adj = 0.0;
        for (int k = 0; k < Nn; ++k)
          adj += (result.prices.xi_lower(k, tt) - result.prices.xi_upper(k, tt)) *
                 feeder.R(k, node - 1);
        result.prices.locational(i, tt) = result.prices.alpha[tt] + adj;
      }
    }
  } else {
    const int M = 2 * Nn;
    CsvTable t = read_csv(dir / "doe_duals.csv");
    int ct = t.column("t"), ci = t.column("prosumer"), cm = t.column("component"),
        cv = t.column("value");
    for (int i = 0; i < N; ++i) result.doe_duals.push_back(Mat::Zero(M, T));
    for (size_t r = 0; r < t.rows.size(); ++r)
      result.doe_duals[static_cast<size_t>(pid(t.rows[r][static_cast<size_t>(ci)]))](
          t.integer(r, cm), t.integer(r, ct)) = t.number(r, cv);
  }

  if (result.mechanism == Mechanism::UniformLimit) {
    const int M = 2 * Nn;
    {
      CsvTable t = read_csv(dir / "prices_limits.csv");
      int ct = t.column("t"), cm = t.column("component"), cb = t.column("beta");
      result.prices.beta = Mat::Zero(M, T);
      for (size_t r = 0; r < t.rows.size(); ++r)
        result.prices.beta(t.integer(r, cm), t.integer(r, ct)) = t.number(r, cb);
    }
    {
      CsvTable t = read_csv(dir / "limits_traded.csv");
      int ct = t.column("t"), ci = t.column("prosumer"), cm = t.column("component"),
          cl = t.column("l_value");
      for (int i = 0; i < N; ++i) result.L.push_back(Mat::Zero(M, T));
      for (size_t r = 0; r < t.rows.size(); ++r)
        result.L[static_cast<size_t>(pid(t.rows[r][static_cast<size_t>(ci)]))](
            t.integer(r, cm), t.integer(r, ct)) = t.number(r, cl);
    }
  }

  settle(result, fleet);
  return result;
}

void write_plot_data(const std::filesystem::path& out_dir, const Scenario& scenario,
                     const FeederModel& feeder, const ProsumerFleet& fleet,
                     const std::vector<std::pair<std::string, ClearingResult>>& results) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const int T = fleet.horizon, Nn = feeder.node_count();

  CsvWriter prices;
  prices.comment(sbase_comment(scenario));
  prices.comment("long format; series is 'uniform' or 'node_<k>'");
  prices.set_header({"figure", "t", "series", "cents_per_kwh"});
  CsvWriter volts;
  volts.comment(sbase_comment(scenario));
  volts.set_header({"figure", "t", "node", "v_pu"});
  CsvWriter incomes;
  incomes.comment(sbase_comment(scenario));
  incomes.set_header({"figure", "prosumer", "mechanism", "income_cents"});
  CsvWriter limits;
  limits.comment(sbase_comment(scenario));
  limits.set_header({"figure", "t", "component", "cents_per_pu2"});

  for (const auto& [label, result] : results) {
    if (result.status != SolveStatus::Optimal) continue;
    if (result.mechanism == Mechanism::Locational) {
      Mat np = node_prices(feeder, result);
      for (int t = 0; t < T; ++t)
        for (int k = 0; k < Nn; ++k)
          prices.add_row({"locational_prices", std::to_string(t), "node_" + std::to_string(k + 1),
                          format_double(scenario.price_to_cents_per_kwh(np(k, t)))});
    } else {
      for (int t = 0; t < T; ++t)
        prices.add_row({"uniform_price_" + label, std::to_string(t), "uniform",
                        format_double(scenario.price_to_cents_per_kwh(result.prices.alpha[t]))});
    }
    if (result.mechanism == Mechanism::UniformLimit)
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < result.prices.beta.rows(); ++m)
          limits.add_row({"limit_prices", std::to_string(t), std::to_string(m),
                          format_double(result.prices.beta(m, t))});

    Mat node_p = node_injections(feeder, fleet, result.P);
    for (int t = 0; t < T; ++t) {
      Vec v = voltages_from_injections(feeder, node_p.col(t), Vec::Zero(Nn));
      for (int k = 0; k < Nn; ++k)
        volts.add_row({"voltages_" + label, std::to_string(t), std::to_string(k + 1),
                       format_double(std::sqrt(std::max(0.0, v[k])))});
    }
    for (int i = 0; i < fleet.size(); ++i)
      incomes.add_row({"incomes", fleet.prosumers[static_cast<size_t>(i)].id, label,
                       format_double(result.incomes[static_cast<size_t>(i)].total())});
  }

  write_file_atomic(out_dir / "plot_prices.csv", prices.str());
  write_file_atomic(out_dir / "plot_voltages.csv", volts.str());
  write_file_atomic(out_dir / "plot_incomes.csv", incomes.str());
  write_file_atomic(out_dir / "plot_limit_prices.csv", limits.str());
}

}  // namespace gridmarket
