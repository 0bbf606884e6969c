#include "gridmarket/scenario.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "gridmarket/config.hpp"
#include "gridmarket/csv.hpp"

namespace gridmarket {

using nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& name) {
  std::filesystem::path p(name);
  return p.is_absolute() ? p : base / p;
}

void require_file(const std::filesystem::path& base, const std::string& field,
                  const std::string& name) {
  if (name.empty()) throw ValidationError("scenario field '" + field + "' is empty");
  if (!std::filesystem::exists(resolve(base, name)))
    throw ValidationError("scenario field '" + field + "' references missing file: " +
                          resolve(base, name).string());
}

}  // namespace

Scenario load_scenario(const std::filesystem::path& path) {
  Config cfg = Config::parse_file(path);
  Scenario s;
  s.base_dir = path.parent_path();

  s.topology_file = cfg.get_string("feeder", "topology", s.topology_file);
  s.bounds_file = cfg.get_string("feeder", "bounds", "");
  s.v0_pu = cfg.get_number("feeder", "v0_pu", s.v0_pu);
  s.v_lower_pu = cfg.get_number("feeder", "v_lower_pu", s.v_lower_pu);
  s.v_upper_pu = cfg.get_number("feeder", "v_upper_pu", s.v_upper_pu);
  s.s_base_kva = cfg.get_number("feeder", "s_base_kva", s.s_base_kva);

  s.fleet_file = cfg.get_string("fleet", "params", s.fleet_file);
  s.profiles_file = cfg.get_string("fleet", "profiles", s.profiles_file);

  s.steps = static_cast<int>(cfg.get_integer("horizon", "steps", s.steps));
  s.delta_hours = cfg.get_number("horizon", "delta_hours", s.delta_hours);

  s.envelope_epsilon = cfg.get_number("envelope", "epsilon", s.envelope_epsilon);
  s.envelope_mode = cfg.get_string("envelope", "objective_mode", s.envelope_mode);
  s.consumption_penalty = cfg.get_number("envelope", "consumption_penalty", s.consumption_penalty);

  s.tol_solve = cfg.get_number("tolerances", "solve", s.tol_solve);
  s.tol_accept = cfg.get_number("tolerances", "accept", s.tol_accept);
  s.tol_compare = cfg.get_number("tolerances", "compare", s.tol_compare);
  s.tol_price = cfg.get_number("tolerances", "price", s.tol_price);

  s.seed = cfg.get_integer("synthetic", "seed", s.seed);

  if (s.steps < 1) throw ValidationError("horizon.steps must be >= 1");
  if (s.delta_hours <= 0) throw ValidationError("horizon.delta_hours must be positive");
  if (s.s_base_kva <= 0) throw ValidationError("feeder.s_base_kva must be positive");
  if (!(s.v_lower_pu < s.v0_pu && s.v0_pu < s.v_upper_pu))
    throw ValidationError("feeder voltage bounds must strictly bracket v0_pu");
  if (s.envelope_mode != "sqnorm" && s.envelope_mode != "norm")
    throw ValidationError("envelope.objective_mode must be 'sqnorm' or 'norm'");
  require_file(s.base_dir, "feeder.topology", s.topology_file);
  require_file(s.base_dir, "fleet.params", s.fleet_file);
  require_file(s.base_dir, "fleet.profiles", s.profiles_file);
  if (!s.bounds_file.empty()) require_file(s.base_dir, "feeder.bounds", s.bounds_file);
  return s;
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  Config cfg;
  cfg.set_string("feeder", "topology", s.topology_file);
  if (!s.bounds_file.empty()) cfg.set_string("feeder", "bounds", s.bounds_file);
  cfg.set_number("feeder", "v0_pu", s.v0_pu);
  cfg.set_number("feeder", "v_lower_pu", s.v_lower_pu);
  cfg.set_number("feeder", "v_upper_pu", s.v_upper_pu);
  cfg.set_number("feeder", "s_base_kva", s.s_base_kva);
  cfg.set_string("fleet", "params", s.fleet_file);
  cfg.set_string("fleet", "profiles", s.profiles_file);
  cfg.set_integer("horizon", "steps", s.steps);
  cfg.set_number("horizon", "delta_hours", s.delta_hours);
  cfg.set_number("envelope", "epsilon", s.envelope_epsilon);
  cfg.set_string("envelope", "objective_mode", s.envelope_mode);
  cfg.set_number("envelope", "consumption_penalty", s.consumption_penalty);
  cfg.set_number("tolerances", "solve", s.tol_solve);
  cfg.set_number("tolerances", "accept", s.tol_accept);
  cfg.set_number("tolerances", "compare", s.tol_compare);
  cfg.set_number("tolerances", "price", s.tol_price);
  if (s.seed >= 0) cfg.set_integer("synthetic", "seed", s.seed);
  write_file_atomic(path, cfg.emit());
}

FeederModel Scenario::build_feeder() const {
  CsvTable table = read_csv(resolve(base_dir, topology_file));
  int cf = table.column("from"), ct = table.column("to"), cr = table.column("r_pu"),
      cx = table.column("x_pu");
  if (cf < 0 || ct < 0 || cr < 0 || cx < 0)
    throw ValidationError("topology CSV needs columns from,to,r_pu,x_pu");
  std::vector<Line> lines;
  int node_count = 0;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    Line ln;
    ln.from = static_cast<int>(table.integer(r, cf));
    ln.to = static_cast<int>(table.integer(r, ct));
    ln.r_pu = table.number(r, cr);
    ln.x_pu = table.number(r, cx);
    node_count = std::max({node_count, ln.from, ln.to});
    lines.push_back(ln);
  }
  Topology topo = validate_radial(lines, node_count);

  double v0_sq = v0_pu * v0_pu;
  Vec lo = Vec::Constant(node_count, v_lower_pu * v_lower_pu);
  Vec hi = Vec::Constant(node_count, v_upper_pu * v_upper_pu);
  if (!bounds_file.empty()) {
    CsvTable bt = read_csv(resolve(base_dir, bounds_file));
    int cn = bt.column("node"), cl = bt.column("v_lower_pu"), cu = bt.column("v_upper_pu");
    if (cn < 0 || cl < 0 || cu < 0)
      throw ValidationError("bounds CSV needs columns node,v_lower_pu,v_upper_pu");
    for (size_t r = 0; r < bt.rows.size(); ++r) {
      int node = static_cast<int>(bt.integer(r, cn));
      if (node < 1 || node > node_count)
        throw ValidationError("bounds CSV references node " + std::to_string(node));
      double l = bt.number(r, cl), u = bt.number(r, cu);
      lo[node - 1] = l * l;
      hi[node - 1] = u * u;
    }
  }
  return FeederModel::build(std::move(topo), v0_sq, std::move(lo), std::move(hi));
}

namespace {

Vec json_vec(const json& j, const std::string& key, int expect) {
  if (!j.contains(key))
    throw ValidationError("fleet JSON prosumer missing field '" + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array() || static_cast<int>(arr.size()) != expect)
    throw ValidationError("fleet JSON field '" + key + "' must be an array of length " +
                          std::to_string(expect));
  Vec v(expect);
  for (int i = 0; i < expect; ++i) v[i] = arr.at(static_cast<size_t>(i)).get<double>();
  return v;
}

}  // namespace

ProsumerFleet Scenario::build_fleet(const FeederModel& feeder) const {
  std::ifstream in(resolve(base_dir, fleet_file));
  if (!in) throw ValidationError("cannot open fleet file");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("fleet JSON parse error: " + std::string(e.what()));
  }

  ProsumerFleet fleet;
  fleet.horizon = steps;
  fleet.delta_hours = delta_hours;
  const double S = s_base_kva;
  const int T = steps;

  if (!root.contains("prosumers") || !root["prosumers"].is_array())
    throw ValidationError("fleet JSON needs a 'prosumers' array");
  for (const auto& j : root["prosumers"]) {
    ProsumerParams pr;
    pr.id = j.value("id", "prosumer_" + std::to_string(fleet.prosumers.size() + 1));
    pr.node = j.value("node", 1);
    const int n = j.contains("x0_kwh") ? static_cast<int>(j.at("x0_kwh").size()) : 2;
    const int m = n;  // one charger per storage unit

    double eta = j.value("charge_efficiency", 0.9);
    pr.A = Mat::Identity(n, n);
    if (j.contains("A")) {
      const auto& a = j.at("A");
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) pr.A(r, c) = a.at(r).at(c).get<double>();
    }
    pr.B = eta * delta_hours * Mat::Identity(n, m);
    if (j.contains("B")) {
      const auto& bmat = j.at("B");
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c) pr.B(r, c) = bmat.at(r).at(c).get<double>();
    }

    pr.x0 = json_vec(j, "x0_kwh", n) / S;
    pr.x_lower = json_vec(j, "x_min_kwh", n) / S;
    pr.x_upper = json_vec(j, "x_max_kwh", n) / S;
    pr.u_lower = json_vec(j, "u_min_kw", m) / S;
    pr.u_upper = json_vec(j, "u_max_kw", m) / S;

    pr.energy_map.coeff = j.contains("h_coeff") ? json_vec(j, "h_coeff", m) : Vec::Ones(m);
    pr.energy_map.offset = j.value("h_offset_kw", 0.0) / S;

    // Currency coefficients arrive per kW^2 / kWh^2; converting the variables
    // to per-unit multiplies the weights by S^2 so payoffs stay in cents.
    pr.utility.control_weight = json_vec(j, "control_weight", m) * S * S;
    pr.utility.terminal_weight = json_vec(j, "terminal_weight", n) * S * S;
    if (j.contains("state_weight_by_step")) {
      const auto& sw = j.at("state_weight_by_step");
      if (static_cast<int>(sw.size()) != T)
        throw ValidationError("state_weight_by_step must have horizon rows");
      pr.utility.state_weight = Mat(T, n);
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < n; ++d)
          pr.utility.state_weight(t, d) = sw.at(t).at(d).get<double>() * S * S;
    } else {
      Vec w = json_vec(j, "state_weight", n) * S * S;
      pr.utility.state_weight = w.transpose().replicate(T, 1);
    }
    // Default target is 0.85 C, which is exactly the state upper bound.
    pr.utility.target =
        j.contains("target_kwh") ? Vec(json_vec(j, "target_kwh", n) / S) : pr.x_upper;

    pr.available.setConstant(T, m, true);
    if (j.contains("windows")) {
      const auto& wins = j.at("windows");
      if (static_cast<int>(wins.size()) != m)
        throw ValidationError("windows must list one window set per control dimension");
      for (int d = 0; d < m; ++d) {
        if (wins.at(d).empty()) continue;  // empty list keeps full availability
        for (int t = 0; t < T; ++t) pr.available(t, d) = false;
        for (const auto& w : wins.at(d)) {
          int a = w.at(0).get<int>(), b = w.at(1).get<int>();
          for (int t = std::max(0, a); t < std::min(T, b); ++t) pr.available(t, d) = true;
        }
      }
    }
    pr.net_supply = Vec::Zero(T);  // filled from profiles below
    fleet.prosumers.push_back(std::move(pr));
  }

  CsvTable prof = read_csv(resolve(base_dir, profiles_file));
  int ci = prof.column("prosumer_id"), ct = prof.column("t"), cs = prof.column("net_supply_kw");
  if (ci < 0 || ct < 0 || cs < 0)
    throw ValidationError("profiles CSV needs columns prosumer_id,t,net_supply_kw");
  std::map<std::string, int> by_id;
  for (int i = 0; i < fleet.size(); ++i) by_id[fleet.prosumers[static_cast<size_t>(i)].id] = i;
  std::vector<std::vector<bool>> seen(static_cast<size_t>(fleet.size()),
                                      std::vector<bool>(static_cast<size_t>(T), false));
  for (size_t r = 0; r < prof.rows.size(); ++r) {
    const std::string& id = prof.rows[r][static_cast<size_t>(ci)];
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("profiles CSV references unknown prosumer " + id);
    int t = static_cast<int>(prof.integer(r, ct));
    if (t < 0 || t >= T)
      throw ValidationError("profiles CSV step " + std::to_string(t) + " outside horizon");
    fleet.prosumers[static_cast<size_t>(it->second)].net_supply[t] = prof.number(r, cs) / S;
    seen[static_cast<size_t>(it->second)][static_cast<size_t>(t)] = true;
  }
  for (int i = 0; i < fleet.size(); ++i)
    for (int t = 0; t < T; ++t)
      if (!seen[static_cast<size_t>(i)][static_cast<size_t>(t)])
        throw ValidationError("profiles CSV missing step " + std::to_string(t) + " for prosumer " +
                              fleet.prosumers[static_cast<size_t>(i)].id);

  fleet.validate(feeder.node_count());
  return fleet;
}

EnvelopeOptions Scenario::envelope_options() const {
  EnvelopeOptions opts;
  opts.epsilon = envelope_epsilon;
  opts.objective_mode = envelope_mode;
  opts.consumption_penalty = consumption_penalty;
  opts.solver = solver_options();
  return opts;
}

SolverOptions Scenario::solver_options() const {
  SolverOptions opts;
  opts.tol_solve = tol_solve;
  opts.tol_accept = tol_accept;
  return opts;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}
  double uniform() {  // [0, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(next() % static_cast<uint64_t>(hi - lo + 1));
  }

 private:
  uint64_t next() {  // splitmix64: deterministic across platforms
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  uint64_t state_;
};

std::vector<std::pair<int, int>> feeder_13_edges() {
  // Radial 13-node layout (single-phase, feeder = 0).
  return {{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {1, 6},
          {6, 7}, {6, 8}, {8, 9}, {8, 10}, {6, 11}, {11, 12}};
}

}  // namespace

GeneratedScenario generate_synthetic(const SyntheticSpec& spec) {
  if (spec.prosumers < 1) throw ValidationError("need at least one prosumer");
  if (spec.feeder_nodes < 1 || spec.feeder_nodes > 12)
    throw ValidationError("feeder_nodes must be in 1..12");
  if (spec.steps < 1) throw ValidationError("steps must be >= 1");

  Rng rng(spec.seed);
  const int N = spec.prosumers, T = spec.steps, nodes = spec.feeder_nodes;
  const double agg = spec.aggregator_size;

  // Topology: the 13-node layout at full size, random radial tree otherwise.
  std::vector<std::pair<int, int>> edges;
  if (nodes == 12) {
    edges = feeder_13_edges();
  } else {
    for (int v = 1; v <= nodes; ++v) edges.push_back({rng.uniform_int(0, v - 1), v});
  }
  std::vector<Line> lines;
  for (auto [a, b] : edges) {
    double r = rng.uniform(0.4, 1.0);
    lines.push_back({a, b, r, r * spec.reactance_ratio});
  }

  // Prosumer placement and shapes.
  std::vector<int> node_of(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) node_of[static_cast<size_t>(i)] = rng.uniform_int(1, nodes);

  struct Draw {
    double pv_amp, load_base, cap_ev, cap_home, x0f_ev, x0f_home;
    double th1, th2, th3, th4;
    int dep, arr;
    std::vector<double> jitter;
  };
  std::vector<Draw> draws;
  for (int i = 0; i < N; ++i) {
    Draw d;
    d.pv_amp = rng.uniform(2.0, 6.0) * spec.pv_scale * agg;
    d.load_base = rng.uniform(0.5, 1.5) * spec.load_scale * agg;
    d.cap_ev = rng.uniform(0.0, 75.0) * agg;
    d.cap_home = rng.uniform(0.0, 75.0) * agg;
    d.x0f_ev = rng.uniform(0.2, 0.5);
    d.x0f_home = rng.uniform(0.2, 0.5);
    d.th1 = rng.uniform(2e-3, 6e-3);
    d.th2 = rng.uniform(5e-4, 2e-3);
    d.th3 = rng.uniform(5e-4, 2e-3);
    d.th4 = rng.uniform(5e-3, 2e-2);
    // EV present overnight: [0, dep) in the morning and [arr, T) after work.
    int morning = static_cast<int>(std::round(7.0 / spec.delta_hours));
    int evening = static_cast<int>(std::round(17.0 / spec.delta_hours));
    d.dep = std::min(T, std::max(1, morning + rng.uniform_int(-4, 4)));
    d.arr = std::min(T, std::max(d.dep, evening + rng.uniform_int(-4, 4)));
    for (int t = 0; t < T; ++t) d.jitter.push_back(rng.uniform(-0.05, 0.05));
    draws.push_back(std::move(d));
  }

  auto net_supply_kw = [&](const Draw& d, int t) {
    double tau = (t + 0.5) * spec.delta_hours;  // hours since midnight
    double solar = std::max(0.0, std::sin(M_PI * (tau - 6.0) / 12.0));
    double evening = std::exp(-std::pow(tau - 19.5, 2) / 6.0);
    double load = d.load_base * (0.6 + 0.9 * evening);
    return d.pv_amp * solar - load + d.jitter[static_cast<size_t>(t)] * agg;
  };

  // Calibrate impedances: scale r so the unconstrained midday export peak
  // would move the worst node voltage by stress * headroom.
  double s_base = 100.0 * std::max(1.0, N * agg / 30.0);
  {
    Topology topo = validate_radial(lines, nodes);
    auto [R, X] = build_sensitivities(topo);
    (void)X;
    Vec peak = Vec::Zero(nodes);
    for (int i = 0; i < N; ++i) {
      double m = 0.0;
      for (int t = 0; t < T; ++t)
        m = std::max(m, net_supply_kw(draws[static_cast<size_t>(i)], t));
      peak[node_of[static_cast<size_t>(i)] - 1] += m / s_base;
    }
    double dv = (R * peak).cwiseAbs().maxCoeff();
    Scenario defaults;
    double headroom = defaults.v_upper_pu * defaults.v_upper_pu - defaults.v0_pu * defaults.v0_pu;
    if (dv > 1e-12) {
      double factor = spec.voltage_stress * headroom / dv;
      for (auto& ln : lines) {
        ln.r_pu *= factor;
        ln.x_pu *= factor;
      }
    }
  }

  // Emit files.
  GeneratedScenario out;
  out.scenario.seed = static_cast<long>(spec.seed);
  out.scenario.steps = T;
  out.scenario.delta_hours = spec.delta_hours;
  out.scenario.s_base_kva = s_base;

  {
    CsvWriter w;
    w.set_header({"from", "to", "r_pu", "x_pu"});
    for (const auto& ln : lines)
      w.add_row({std::to_string(ln.from), std::to_string(ln.to), format_double(ln.r_pu),
                 format_double(ln.x_pu)});
    out.topology_csv = w.str();
  }

  {
    json prosumers = json::array();
    for (int i = 0; i < N; ++i) {
      const Draw& d = draws[static_cast<size_t>(i)];
      json j;
      std::ostringstream id;
      id << "agg_" << std::setw(3) << std::setfill('0') << i + 1;
      j["id"] = id.str();
      j["node"] = node_of[static_cast<size_t>(i)];
      j["charge_efficiency"] = 0.9;
      j["x0_kwh"] = {d.x0f_ev * d.cap_ev, d.x0f_home * d.cap_home};
      j["x_min_kwh"] = {0.2 * d.cap_ev, 0.2 * d.cap_home};
      j["x_max_kwh"] = {0.85 * d.cap_ev, 0.85 * d.cap_home};
      j["u_min_kw"] = {-6.6 * agg, -6.6 * agg};
      j["u_max_kw"] = {6.6 * agg, 6.6 * agg};
      j["control_weight"] = {d.th1, d.th1};
      j["state_weight"] = {d.th2, d.th3};
      j["terminal_weight"] = {d.th4, d.th4};
      j["windows"] = json::array({json::array({json::array({0, d.dep}),
                                               json::array({d.arr, T})}),
                                  json::array()});
      prosumers.push_back(std::move(j));
    }
    json root;
    root["prosumers"] = std::move(prosumers);
    out.fleet_json = root.dump(2) + "\n";
  }

  {
    CsvWriter w;
    w.comment("s_base_kva=" + format_double(s_base));
    w.set_header({"prosumer_id", "t", "net_supply_kw"});
    for (int i = 0; i < N; ++i) {
      std::ostringstream id;
      id << "agg_" << std::setw(3) << std::setfill('0') << i + 1;
      for (int t = 0; t < T; ++t)
        w.add_row({id.str(), std::to_string(t),
                   format_double(net_supply_kw(draws[static_cast<size_t>(i)], t))});
    }
    out.profiles_csv = w.str();
  }

  {
    std::ostringstream tmp;
    Scenario s = out.scenario;
    s.topology_file = "topology.csv";
    s.fleet_file = "fleet.json";
    s.profiles_file = "profiles.csv";
    out.scenario = s;
    // Scenario text via the canonical emitter, through a temp config.
    Config cfg;
    cfg.set_string("feeder", "topology", s.topology_file);
    cfg.set_number("feeder", "v0_pu", s.v0_pu);
    cfg.set_number("feeder", "v_lower_pu", s.v_lower_pu);
    cfg.set_number("feeder", "v_upper_pu", s.v_upper_pu);
    cfg.set_number("feeder", "s_base_kva", s.s_base_kva);
    cfg.set_string("fleet", "params", s.fleet_file);
    cfg.set_string("fleet", "profiles", s.profiles_file);
    cfg.set_integer("horizon", "steps", s.steps);
    cfg.set_number("horizon", "delta_hours", s.delta_hours);
    cfg.set_number("envelope", "epsilon", s.envelope_epsilon);
    cfg.set_string("envelope", "objective_mode", s.envelope_mode);
    cfg.set_number("envelope", "consumption_penalty", s.consumption_penalty);
    cfg.set_number("tolerances", "solve", s.tol_solve);
    cfg.set_number("tolerances", "accept", s.tol_accept);
    cfg.set_number("tolerances", "compare", s.tol_compare);
    cfg.set_number("tolerances", "price", s.tol_price);
    cfg.set_integer("synthetic", "seed", s.seed);
    out.scenario_text = cfg.emit();
  }
  return out;
}

void GeneratedScenario::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "scenario.toml", scenario_text);
  write_file_atomic(dir / "topology.csv", topology_csv);
  write_file_atomic(dir / "fleet.json", fleet_json);
  write_file_atomic(dir / "profiles.csv", profiles_csv);
}

}  // namespace gridmarket
