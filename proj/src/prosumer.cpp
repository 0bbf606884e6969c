#include "gridmarket/prosumer.hpp"

#include <cmath>
#include <sstream>

namespace gridmarket {

void ProsumerParams::validate() const {
  const int n = state_dim(), m = input_dim(), T = horizon();
  auto fail = [&](const std::string& what) { throw ValidationError("prosumer " + id + ": " + what); };
  if (n < 1 || m < 1) fail("state and input dimensions must be positive");
  if (A.rows() != n || A.cols() != n) fail("A must be n x n");
  if (B.rows() != n || B.cols() != m) fail("B must be n x m");
  if (x0.size() != n || x_lower.size() != n || x_upper.size() != n) fail("state vectors sized n");
  if (u_lower.size() != m || u_upper.size() != m) fail("input bounds sized m");
  if (energy_map.coeff.size() != m) fail("energy map sized m");
  if (T < 1) fail("empty horizon");
  if (available.rows() != T || available.cols() != m) fail("availability mask must be T x m");
  for (int d = 0; d < n; ++d) {
    if (!(x_lower[d] <= x0[d] && x0[d] <= x_upper[d])) fail("x0 outside state box");
    if (x_lower[d] > x_upper[d]) fail("empty state box");
  }
  for (int d = 0; d < m; ++d) {
    if (u_lower[d] > u_upper[d]) fail("empty input box");
    if (u_lower[d] > 0.0 || u_upper[d] < 0.0) fail("input box must allow idling at zero");
  }
  if (utility.control_weight.size() != m || utility.terminal_weight.size() != n ||
      utility.target.size() != n)
    fail("utility weight dimensions");
  if (utility.state_weight.rows() != T || utility.state_weight.cols() != n)
    fail("state weights must be T x n");
  if (utility.control_weight.minCoeff() < 0 || utility.terminal_weight.minCoeff() < 0 ||
      utility.state_weight.minCoeff() < 0)
    fail("utility weights must be nonnegative for concavity");
  if (node < 1) fail("node assignment must be a prosumer node (>= 1)");
}

void ProsumerFleet::validate(int feeder_node_count) const {
  if (horizon < 1) throw ValidationError("fleet horizon must be >= 1");
  if (delta_hours <= 0) throw ValidationError("step length must be positive");
  if (prosumers.empty()) throw ValidationError("fleet is empty");
  for (const auto& pr : prosumers) {
    pr.validate();
    if (pr.horizon() != horizon)
      throw ValidationError("prosumer " + pr.id + " profile length differs from fleet horizon");
    if (pr.node > feeder_node_count)
      throw ValidationError("prosumer " + pr.id + " maps to node " + std::to_string(pr.node) +
                            " beyond the feeder");
  }
}

Mat expand_trajectory(const ProsumerParams& params, const Mat& U) {
  const int n = params.state_dim(), T = params.horizon();
  if (U.rows() != params.input_dim() || U.cols() != T)
    throw ValidationError("control matrix must be m x T");
  Mat X(n, T + 1);
  X.col(0) = params.x0;
  for (int t = 0; t < T; ++t) X.col(t + 1) = params.A * X.col(t) + params.B * U.col(t);
  return X;
}

double utility_of(const ProsumerParams& params, const Mat& U) {
  const int T = params.horizon();
  Mat X = expand_trajectory(params, U);
  const auto& ut = params.utility;
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    Vec dx = X.col(t) - ut.target;
    total -= ut.control_weight.dot(U.col(t).cwiseAbs2());
    total -= ut.state_weight.row(t).dot(dx.cwiseAbs2());
  }
  Vec dxT = X.col(T) - ut.target;
  total -= ut.terminal_weight.dot(dxT.cwiseAbs2());
  return total;
}

double payoff(const ProsumerParams& params, const Mat& U, const Vec& p, const Vec& lambda,
              const Mat* beta, const Mat* traded_limits) {
  double value = utility_of(params, U) + lambda.dot(p);
  if (beta && traded_limits) value += beta->cwiseProduct(*traded_limits).sum();
  return value;
}

std::string Violation::describe() const {
  std::ostringstream oss;
  switch (kind) {
    case Kind::StateLower: oss << "state below lower bound"; break;
    case Kind::StateUpper: oss << "state above upper bound"; break;
    case Kind::InputLower: oss << "input below lower bound"; break;
    case Kind::InputUpper: oss << "input above upper bound"; break;
    case Kind::TradeCap: oss << "trade exceeds excess supply"; break;
    case Kind::Availability: oss << "input nonzero while unavailable"; break;
  }
  oss << " at t=" << t << " component " << component << " (slack " << slack << ")";
  return oss.str();
}

std::vector<Violation> feasibility_check(const ProsumerParams& params, const Mat& U, const Vec& p,
                                         double tol) {
  const int n = params.state_dim(), m = params.input_dim(), T = params.horizon();
  std::vector<Violation> out;
  Mat X = expand_trajectory(params, U);
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < m; ++d) {
      if (!params.available(t, d)) {
        if (std::abs(U(d, t)) > tol)
          out.push_back({Violation::Kind::Availability, t, d, -std::abs(U(d, t))});
        continue;
      }
      double lo = U(d, t) - params.u_lower[d];
      double hi = params.u_upper[d] - U(d, t);
      if (lo < -tol) out.push_back({Violation::Kind::InputLower, t, d, lo});
      if (hi < -tol) out.push_back({Violation::Kind::InputUpper, t, d, hi});
    }
    double cap = params.net_supply[t] - params.energy_map(U.col(t)) - p[t];
    if (cap < -tol) out.push_back({Violation::Kind::TradeCap, t, 0, cap});
  }
  // State box holds for t = 1..T, terminal step included.
  for (int t = 1; t <= T; ++t) {
    for (int d = 0; d < n; ++d) {
      double lo = X(d, t) - params.x_lower[d];
      double hi = params.x_upper[d] - X(d, t);
      if (lo < -tol) out.push_back({Violation::Kind::StateLower, t, d, lo});
      if (hi < -tol) out.push_back({Violation::Kind::StateUpper, t, d, hi});
    }
  }
  return out;
}

}  // namespace gridmarket
