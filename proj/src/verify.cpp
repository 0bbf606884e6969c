#include "gridmarket/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "gridmarket/threads.hpp"

namespace gridmarket {

void VerificationReport::add(const std::string& name, const std::string& detail, double residual,
                             double tolerance) {
  checks.push_back({name, detail, residual, tolerance, residual <= tolerance});
}

bool VerificationReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.pass; });
}

int VerificationReport::failures() const {
  return static_cast<int>(
      std::count_if(checks.begin(), checks.end(), [](const CheckRecord& c) { return !c.pass; }));
}

void VerificationReport::sort() {
  std::stable_sort(checks.begin(), checks.end(), [](const CheckRecord& a, const CheckRecord& b) {
    return a.name != b.name ? a.name < b.name : a.detail < b.detail;
  });
}

std::string VerificationReport::table() const {
  std::ostringstream oss;
  oss << std::left << std::setw(36) << "check" << std::setw(44) << "detail" << std::setw(14)
      << "residual" << std::setw(14) << "tolerance" << "result\n";
  for (const auto& c : checks) {
    oss << std::left << std::setw(36) << c.name << std::setw(44) << c.detail.substr(0, 42)
        << std::setw(14) << std::scientific << std::setprecision(3) << c.residual << std::setw(14)
        << c.tolerance << (c.pass ? "pass" : "FAIL") << "\n";
  }
  return oss.str();
}

std::string VerificationReport::json_lines() const {
  std::ostringstream oss;
  for (const auto& c : checks) {
    oss << "{\"check\":\"" << c.name << "\",\"detail\":\"" << c.detail << "\",\"residual\":"
        << std::setprecision(17) << c.residual << ",\"tolerance\":" << c.tolerance
        << ",\"pass\":" << (c.pass ? "true" : "false") << "}\n";
  }
  return oss.str();
}

namespace {

struct Fnv {
  uint64_t state = 1469598103934665603ull;
  void feed_bytes(const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      state ^= p[i];
      state *= 1099511628211ull;
    }
  }
  void feed(double v) { feed_bytes(&v, sizeof(v)); }
  void feed(int v) { feed_bytes(&v, sizeof(v)); }
  void feed(const Vec& v) { feed_bytes(v.data(), sizeof(double) * static_cast<size_t>(v.size())); }
  void feed(const Mat& m) { feed_bytes(m.data(), sizeof(double) * static_cast<size_t>(m.size())); }
};

}  // namespace

std::string scenario_fingerprint(const FeederModel& feeder, const ProsumerFleet& fleet) {
  Fnv h;
  h.feed(feeder.node_count());
  for (const auto& ln : feeder.topo.lines) {
    h.feed(ln.from);
    h.feed(ln.to);
    h.feed(ln.r_pu);
    h.feed(ln.x_pu);
  }
  h.feed(feeder.v0_sq);
  h.feed(feeder.v_lower_sq);
  h.feed(feeder.v_upper_sq);
  h.feed(fleet.horizon);
  h.feed(fleet.delta_hours);
  for (const auto& pr : fleet.prosumers) {
    h.feed(pr.node);
    h.feed(pr.A);
    h.feed(pr.B);
    h.feed(pr.x0);
    h.feed(pr.x_lower);
    h.feed(pr.x_upper);
    h.feed(pr.u_lower);
    h.feed(pr.u_upper);
    h.feed(pr.net_supply);
    h.feed(pr.energy_map.coeff);
    h.feed(pr.energy_map.offset);
    h.feed(pr.utility.control_weight);
    h.feed(pr.utility.state_weight);
    h.feed(pr.utility.terminal_weight);
    h.feed(pr.utility.target);
  }
  std::ostringstream oss;
  oss << std::hex << std::setw(16) << std::setfill('0') << h.state;
  return oss.str();
}

namespace {

Mat node_injections(const FeederModel& feeder, const ProsumerFleet& fleet, const Mat& P) {
  Mat node_p = Mat::Zero(feeder.node_count(), P.cols());
  for (int i = 0; i < fleet.size(); ++i)
    node_p.row(fleet.prosumers[static_cast<size_t>(i)].node - 1) += P.row(i);
  return node_p;
}

// 1 + the largest per-step sum of absolute payments; scales products of
// prices and quantities into dimensionless residuals.
double payment_scale(const ClearingResult& result, const ProsumerFleet& fleet) {
  double scale = 0.0;
  for (int t = 0; t < fleet.horizon; ++t) {
    double s = 0.0;
    for (int i = 0; i < fleet.size(); ++i) {
      double lambda = result.mechanism == Mechanism::Locational ? result.prices.locational(i, t)
                                                                : result.prices.alpha[t];
      s += std::abs(lambda * result.P(i, t));
      if (result.mechanism == Mechanism::UniformLimit)
        s += result.prices.beta.col(t)
                 .cwiseProduct(result.L[static_cast<size_t>(i)].col(t))
                 .cwiseAbs()
                 .sum();
    }
    scale = std::max(scale, s);
  }
  return 1.0 + scale;
}

}  // namespace

void certify_equilibrium(VerificationReport& report, const ClearingResult& result,
                         const FeederModel& feeder, const ProsumerFleet& fleet,
                         const EnvelopeAllocation* alloc, const VerifyTolerances& tol) {
  const int N = fleet.size(), T = fleet.horizon;
  const std::string tag = to_string(result.mechanism);
  if (result.status != SolveStatus::Optimal) {
    report.add("equilibrium/" + tag, "clearing not optimal: " + result.message, 1.0, 0.0);
    return;
  }
  AffineConstraintMap map = voltage_constraint_map(feeder);

  // (i) Best responses at the cleared prices recover each prosumer's slice.
  std::vector<double> gaps(static_cast<size_t>(N), 0.0);
  std::vector<std::string> failures(static_cast<size_t>(N));
  parallel_for(N, [&](int i) {
    const auto& pr = fleet.prosumers[static_cast<size_t>(i)];
    Vec lambda_i = result.mechanism == Mechanism::Locational
                       ? Vec(result.prices.locational.row(i).transpose())
                       : result.prices.alpha;
    Mat w_i;
    const Mat* w_ptr = nullptr;
    if (result.mechanism != Mechanism::Locational) {
      w_i = Mat(alloc->components, T);
      for (int t = 0; t < T; ++t) w_i.col(t) = alloc->at(t).col(i);
      w_ptr = &w_i;
    }
    const Mat* beta_ptr =
        result.mechanism == Mechanism::UniformLimit ? &result.prices.beta : nullptr;
    BestResponse br = best_response(pr, T, map, lambda_i, w_ptr, beta_ptr, tol.solver);
    if (br.status != SolveStatus::Optimal) {
      failures[static_cast<size_t>(i)] = "best response " + to_string(br.status);
      gaps[static_cast<size_t>(i)] = 1.0;
      return;
    }
    const Mat* l_ptr = beta_ptr ? &result.L[static_cast<size_t>(i)] : nullptr;
    double slice = payoff(pr, result.U[static_cast<size_t>(i)], Vec(result.P.row(i).transpose()),
                          lambda_i, beta_ptr, l_ptr);
    gaps[static_cast<size_t>(i)] =
        std::max(0.0, (br.payoff - slice) / (1.0 + std::abs(br.payoff)));
  });
  double worst_gap = 0.0;
  std::string note;
  for (int i = 0; i < N; ++i) {
    worst_gap = std::max(worst_gap, gaps[static_cast<size_t>(i)]);
    if (!failures[static_cast<size_t>(i)].empty()) note = failures[static_cast<size_t>(i)];
  }
  report.add("best_response_gap/" + tag, note.empty() ? "max relative payoff gap" : note,
             worst_gap, tol.relative);

  // (ii) Balances.
  double pbal = 0.0;
  for (int t = 0; t < T; ++t) pbal = std::max(pbal, std::abs(result.P.col(t).sum()));
  report.add("power_balance/" + tag, "max_t |sum_i p_i(t)|", pbal, tol.balance);
  if (result.mechanism == Mechanism::UniformLimit) {
    Mat lsum = Mat::Zero(result.L[0].rows(), T);
    for (const auto& L : result.L) lsum += L;
    report.add("limit_balance/" + tag, "max |sum_i l_i(t)|", lsum.cwiseAbs().maxCoeff(),
               tol.balance);
  }

  // (iii) Voltage band or envelope containment.
  Mat node_p = node_injections(feeder, fleet, result.P);
  double vviol = 0.0;
  Mat v_sq(feeder.node_count(), T);
  for (int t = 0; t < T; ++t) {
    v_sq.col(t) =
        voltages_from_injections(feeder, node_p.col(t), Vec::Zero(feeder.node_count()));
    for (int k = 0; k < feeder.node_count(); ++k) {
      double v = std::sqrt(std::max(0.0, v_sq(k, t)));
      vviol = std::max(vviol, v - std::sqrt(feeder.v_upper_sq[k]));
      vviol = std::max(vviol, std::sqrt(feeder.v_lower_sq[k]) - v);
    }
  }
  report.add("voltage_band/" + tag, "max p.u. excursion beyond bounds", std::max(0.0, vviol),
             tol.balance);
  if (result.mechanism != Mechanism::Locational) {
    double eviol = 0.0;
    for (int i = 0; i < N; ++i) {
      Vec coeff = map.node_column(fleet.prosumers[static_cast<size_t>(i)].node);
      for (int t = 0; t < T; ++t) {
        Vec slack = alloc->at(t).col(i) - coeff * result.P(i, t);
        if (result.mechanism == Mechanism::UniformLimit)
          slack -= result.L[static_cast<size_t>(i)].col(t);
        eviol = std::max(eviol, -slack.minCoeff());
      }
    }
    report.add("envelope_containment/" + tag, "max component of g + l - w", std::max(0.0, eviol),
               tol.balance);
  }

  // (iv) Locational price identity from the raw duals.
  if (result.mechanism == Mechanism::Locational) {
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      int node = fleet.prosumers[static_cast<size_t>(i)].node;
      for (int t = 0; t < T; ++t) {
        double adj = 0.0;
        for (int k = 0; k < feeder.node_count(); ++k)
          adj += (result.prices.xi_lower(k, t) - result.prices.xi_upper(k, t)) *
                 feeder.R(k, node - 1);
        worst = std::max(worst, std::abs(result.prices.locational(i, t) -
                                         (result.prices.alpha[t] + adj)));
      }
    }
    report.add("price_identity/" + tag, "lambda_i vs alpha + voltage adjustment",
               worst / payment_scale(result, fleet), tol.relative);
  }

  // (v) Complementary slackness.
  double pscale = payment_scale(result, fleet);
  if (result.mechanism == Mechanism::Locational) {
    double worst = 0.0;
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < feeder.node_count(); ++k) {
        worst = std::max(worst, std::abs(result.prices.xi_upper(k, t) *
                                         (feeder.v_upper_sq[k] - v_sq(k, t))));
        worst = std::max(worst, std::abs(result.prices.xi_lower(k, t) *
                                         (v_sq(k, t) - feeder.v_lower_sq[k])));
      }
    report.add("complementary_slackness/" + tag, "shadow price times band slack", worst / pscale,
               tol.relative);
  } else {
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      Vec coeff = map.node_column(fleet.prosumers[static_cast<size_t>(i)].node);
      for (int t = 0; t < T; ++t) {
        Vec slack = alloc->at(t).col(i) - coeff * result.P(i, t);
        if (result.mechanism == Mechanism::UniformLimit)
          slack -= result.L[static_cast<size_t>(i)].col(t);
        worst = std::max(
            worst,
            result.doe_duals[static_cast<size_t>(i)].col(t).cwiseProduct(slack).cwiseAbs().maxCoeff());
      }
    }
    report.add("complementary_slackness/" + tag, "envelope dual times slack", worst / pscale,
               tol.relative);
  }
  if (result.mechanism == Mechanism::UniformLimit) {
    double neg = std::max(0.0, -result.prices.beta.minCoeff());
    report.add("beta_nonnegative/" + tag, "limit prices are nonnegative", neg, 1e-9);
  }
}

void check_welfare_equivalence(VerificationReport& report, const ClearingResult& locational,
                               const ClearingResult& limit, const EnvelopeAllocation& alloc,
                               const FeederModel& feeder, const ProsumerFleet& fleet,
                               const VerifyTolerances& tol) {
  if (locational.status != SolveStatus::Optimal || limit.status != SolveStatus::Optimal) {
    report.add("welfare_equivalence", "needs both clearings optimal", 1.0, 0.0);
    return;
  }
  double rel = std::abs(locational.welfare - limit.welfare) / (1.0 + std::abs(locational.welfare));
  report.add("welfare_equivalence", "locational vs limit trading", rel, tol.relative);

  AffineConstraintMap map = voltage_constraint_map(feeder);
  std::vector<Mat> trades = construct_limit_trades(map, fleet, locational.P, alloc);
  Mat sum = Mat::Zero(map.components, fleet.horizon);
  double worst_cap = 0.0;
  for (int i = 0; i < fleet.size(); ++i) {
    sum += trades[static_cast<size_t>(i)];
    Vec coeff = map.node_column(fleet.prosumers[static_cast<size_t>(i)].node);
    for (int t = 0; t < fleet.horizon; ++t) {
      Vec slack = alloc.at(t).col(i) - coeff * locational.P(i, t) -
                  trades[static_cast<size_t>(i)].col(t);
      worst_cap = std::max(worst_cap, -slack.minCoeff());
    }
  }
  report.add("constructed_trades_balanced", "max |sum_i l_i|", sum.cwiseAbs().maxCoeff(),
             tol.balance);
  report.add("constructed_trades_feasible", "max component of l - (w - g)",
             std::max(0.0, worst_cap), 1e-8);
}

void check_uniform_price_identity(VerificationReport& report, const ClearingResult& locational,
                                  const ClearingResult& limit, const VerifyTolerances& tol,
                                  double price_unit) {
  if (locational.status != SolveStatus::Optimal || limit.status != SolveStatus::Optimal) {
    report.add("uniform_price_identity", "needs both clearings optimal", 1.0, 0.0);
    return;
  }
  double worst = (limit.prices.alpha - locational.prices.alpha).cwiseAbs().maxCoeff() / price_unit;
  report.add("uniform_price_identity", "max_t |lambda_limit - alpha_locational|, cents/kWh",
             worst, tol.price);
}

void check_budget(VerificationReport& report, const ClearingResult& result,
                  const FeederModel& feeder, const VerifyTolerances& tol) {
  if (result.status != SolveStatus::Optimal) {
    report.add("budget/" + to_string(result.mechanism), "clearing not optimal", 1.0, 0.0);
    return;
  }
  const int T = static_cast<int>(result.budget_per_step.size());
  double scale = 1.0;
  for (const auto& inc : result.incomes) scale += std::abs(inc.energy) + std::abs(inc.limit);

  if (result.mechanism == Mechanism::Locational) {
    double deficit = 0.0;
    for (int t = 0; t < T; ++t) deficit = std::max(deficit, -result.budget_per_step[t]);
    report.add("budget_weak/locational", "per-step surplus is nonnegative", deficit / scale,
               tol.balance);

    // Surplus equals the shadow-price value of the voltage band headroom.
    double worst = 0.0;
    for (int t = 0; t < T; ++t) {
      double rhs = 0.0;
      for (int k = 0; k < feeder.node_count(); ++k)
        rhs += result.prices.xi_lower(k, t) * (feeder.v0_sq - feeder.v_lower_sq[k]) +
               result.prices.xi_upper(k, t) * (feeder.v_upper_sq[k] - feeder.v0_sq);
      worst = std::max(worst, std::abs(result.budget_per_step[t] - rhs));
    }
    report.add("budget_surplus_identity/locational", "surplus vs shadow value of band",
               worst / scale, tol.relative);
  } else {
    double worst = 0.0;
    for (int t = 0; t < T; ++t) worst = std::max(worst, std::abs(result.budget_per_step[t]));
    report.add("budget_strong/" + to_string(result.mechanism), "per-step payments sum to zero",
               worst / scale, tol.balance);
  }
}

void check_redistribution(VerificationReport& report, const ClearingResult& locational,
                          const FeederModel& feeder, const ProsumerFleet& fleet,
                          const VerifyTolerances& tol) {
  if (locational.status != SolveStatus::Optimal) {
    report.add("redistribution_equal_split", "locational clearing not optimal", 1.0, 0.0);
    return;
  }
  AffineConstraintMap map = voltage_constraint_map(feeder);
  EnvelopeAllocation equal = equal_split(map, fleet.size(), fleet.horizon);
  MarketOptions mopts;
  mopts.solver = tol.solver;
  ClearingResult limit = clear_uniform_limit(feeder, fleet, equal, mopts);
  if (limit.status != SolveStatus::Optimal) {
    report.add("redistribution_equal_split", "equal-share limit clearing " + to_string(limit.status),
               1.0, 0.0);
    return;
  }
  double target = locational.budget_total / fleet.size();
  double worst = 0.0;
  double income_scale = 1.0 + std::abs(target);
  for (int i = 0; i < fleet.size(); ++i) {
    double delta = limit.incomes[static_cast<size_t>(i)].total() -
                   locational.incomes[static_cast<size_t>(i)].total();
    worst = std::max(worst, std::abs(delta - target));
    income_scale = std::max({income_scale,
                             std::abs(limit.incomes[static_cast<size_t>(i)].total()),
                             std::abs(locational.incomes[static_cast<size_t>(i)].total())});
  }
  report.add("redistribution_equal_split", "income shift equals surplus / N",
             worst / income_scale, tol.relative);
}

// ---------------------------------------------------------------------------
// Brute-force oracle

namespace {

struct GridAxis {
  int prosumer, t, dim;
  double lo, hi;
};

double lipschitz_bound(const ProsumerParams& pr) {
  const int T = pr.horizon();
  const int n = pr.state_dim(), m = pr.input_dim();
  double ub = 0.0;
  for (int d = 0; d < m; ++d) ub = std::max(ub, std::max(std::abs(pr.u_lower[d]), pr.u_upper[d]));
  double xr = 0.0;
  for (int d = 0; d < n; ++d)
    xr = std::max({xr, std::abs(pr.x_upper[d] - pr.utility.target[d]),
                   std::abs(pr.x_lower[d] - pr.utility.target[d])});
  // |d welfare / d u(t,j)| <= 2 cw ub + sum_{tau>t} 2 sw(tau) xr * ||A^{tau-t-1} B||
  double amp = 0.0;
  Mat Ak = Mat::Identity(n, n);
  for (int k = 0; k < T; ++k) {
    amp = std::max(amp, (Ak * pr.B).cwiseAbs().maxCoeff());
    Ak = pr.A * Ak;
  }
  double sw_sum = pr.utility.state_weight.sum() + pr.utility.terminal_weight.sum();
  double cw_max = pr.utility.control_weight.maxCoeff();
  return 2.0 * cw_max * ub + 2.0 * sw_sum * xr * amp;
}

}  // namespace

OracleResult brute_force_oracle(const FeederModel& feeder, const ProsumerFleet& fleet,
                                Mechanism mechanism, const EnvelopeAllocation* alloc,
                                const OracleOptions& opts) {
  const int N = fleet.size(), T = fleet.horizon;
  OracleResult out;

  std::vector<GridAxis> axes;
  for (int i = 0; i < N; ++i) {
    const auto& pr = fleet.prosumers[static_cast<size_t>(i)];
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < pr.input_dim(); ++d)
        if (pr.available(t, d)) axes.push_back({i, t, d, pr.u_lower[d], pr.u_upper[d]});
  }
  int D = static_cast<int>(axes.size());
  int K = opts.control_points;
  double combos = std::pow(static_cast<double>(K), D);
  while (combos > 5e6 && K > 3) {
    --K;
    combos = std::pow(static_cast<double>(K), D);
  }
  if (combos > 5e6) {
    out.grid_too_coarse = true;
    return out;
  }

  double lip = 0.0;
  for (const auto& pr : fleet.prosumers) lip = std::max(lip, lipschitz_bound(pr));
  double h_max = 0.0;
  for (const auto& ax : axes) h_max = std::max(h_max, (ax.hi - ax.lo) / std::max(1, K - 1));
  out.gap = lip * 0.5 * h_max * D + 1e-9;
  out.grid_too_coarse = out.gap > opts.requested_gap;

  AffineConstraintMap map = voltage_constraint_map(feeder);
  std::vector<Vec> coeff(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i)
    coeff[static_cast<size_t>(i)] = map.node_column(fleet.prosumers[static_cast<size_t>(i)].node);

  std::vector<Mat> U(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i)
    U[static_cast<size_t>(i)] =
        Mat::Zero(fleet.prosumers[static_cast<size_t>(i)].input_dim(), T);

  std::vector<int> odo(static_cast<size_t>(D), 0);
  const int Kp = std::max(3, opts.trade_points);
  double best = -std::numeric_limits<double>::infinity();

  // Mechanism feasibility of one step's trade vector.
  auto step_ok = [&](const Vec& p, int t) {
    if (mechanism == Mechanism::Locational) {
      Vec node_p = Vec::Zero(feeder.node_count());
      for (int i = 0; i < N; ++i)
        node_p[fleet.prosumers[static_cast<size_t>(i)].node - 1] += p[i];
      Vec v = voltages_from_injections(feeder, node_p, Vec::Zero(feeder.node_count()));
      for (int k = 0; k < feeder.node_count(); ++k)
        if (v[k] > feeder.v_upper_sq[k] + 1e-12 || v[k] < feeder.v_lower_sq[k] - 1e-12)
          return false;
      return true;
    }
    if (mechanism == Mechanism::UniformDoe) {
      for (int i = 0; i < N; ++i) {
        Vec slack = alloc->at(t).col(i) - coeff[static_cast<size_t>(i)] * p[i];
        if (slack.minCoeff() < -1e-12) return false;
      }
      return true;
    }
    // Limit trading: feasible iff the pooled shares cover the pooled loads.
    Vec pool = alloc->at(t).rowwise().sum();
    for (int i = 0; i < N; ++i) pool -= coeff[static_cast<size_t>(i)] * p[i];
    return pool.minCoeff() >= -1e-12;
  };

  auto trades_exist = [&](const std::vector<Vec>& caps) {
    // For every step, search a feasible balanced trade vector on a grid.
    for (int t = 0; t < T; ++t) {
      const Vec& cap = caps[static_cast<size_t>(t)];
      bool found = false;
      if (N == 1) {
        Vec p = Vec::Zero(1);
        found = cap[0] >= -1e-12 && step_ok(p, t);
      } else {
        double pos_sum = 0.0;
        for (int i = 0; i < N; ++i) pos_sum += std::max(cap[i], 0.0);
        std::vector<int> podo(static_cast<size_t>(N - 1), 0);
        for (;;) {
          Vec p(N);
          double sum = 0.0;
          for (int i = 0; i < N - 1; ++i) {
            double lo = -pos_sum - 1.0;
            double hi = cap[i];
            p[i] = lo + (hi - lo) * podo[static_cast<size_t>(i)] / (Kp - 1);
            sum += p[i];
          }
          p[N - 1] = -sum;
          if (p[N - 1] <= cap[N - 1] + 1e-12 && step_ok(p, t)) {
            found = true;
            break;
          }
          int d = 0;
          while (d < N - 1 && ++podo[static_cast<size_t>(d)] == Kp) {
            podo[static_cast<size_t>(d)] = 0;
            ++d;
          }
          if (d == N - 1) break;
        }
      }
      if (!found) return false;
    }
    return true;
  };

  for (;;) {
    for (int a = 0; a < D; ++a) {
      const auto& ax = axes[static_cast<size_t>(a)];
      double v = K == 1 ? ax.lo
                        : ax.lo + (ax.hi - ax.lo) * odo[static_cast<size_t>(a)] / (K - 1);
      U[static_cast<size_t>(ax.prosumer)](ax.dim, ax.t) = v;
    }

    bool states_ok = true;
    double welfare = 0.0;
    std::vector<Vec> caps(static_cast<size_t>(T), Vec(N));
    for (int i = 0; i < N && states_ok; ++i) {
      const auto& pr = fleet.prosumers[static_cast<size_t>(i)];
      Mat X = expand_trajectory(pr, U[static_cast<size_t>(i)]);
      for (int t = 1; t <= T; ++t)
        for (int d = 0; d < pr.state_dim(); ++d)
          if (X(d, t) > pr.x_upper[d] + 1e-9 || X(d, t) < pr.x_lower[d] - 1e-9) states_ok = false;
      for (int t = 0; t < T; ++t)
        caps[static_cast<size_t>(t)][i] =
            pr.net_supply[t] - pr.energy_map(U[static_cast<size_t>(i)].col(t));
      welfare += utility_of(pr, U[static_cast<size_t>(i)]);
    }

    if (states_ok && welfare > best && trades_exist(caps)) {
      best = welfare;
      out.feasible_found = true;
    }

    int d = 0;
    while (d < D && ++odo[static_cast<size_t>(d)] == K) {
      odo[static_cast<size_t>(d)] = 0;
      ++d;
    }
    if (d == D) break;
    if (D == 0) break;
  }
  if (out.feasible_found) out.welfare = best;
  return out;
}

}  // namespace gridmarket
