#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridmarket/types.hpp"

namespace gridmarket {

// Quadratic comfort terms, all weights >= 0 so the maximized utility is
// concave:
//   f(x(t), u(t)) = -sum_d cw_d u_d(t)^2 - sum_d sw(t,d) (x_d(t) - target_d)^2
//   phi(x(T))     = -sum_d tw_d (x_d(T) - target_d)^2
struct QuadraticUtility {
  Vec control_weight;  // m
  Mat state_weight;    // T x n, row t weights x(t) for t = 0..T-1
  Vec terminal_weight;  // n
  Vec target;           // n
};

// h(u) = coeff . u + offset, the power drawn by the controllable loads.
struct AffineEnergyMap {
  Vec coeff;
  double offset = 0.0;
  double operator()(const Vec& u) const { return coeff.dot(u) + offset; }
};

struct ProsumerParams {
  std::string id;
  int node = 1;  // feeder node this prosumer injects at
  Mat A;         // n x n state dynamics
  Mat B;         // n x m input map (efficiency and step length folded in)
  Vec x0;
  Vec x_lower, x_upper;
  Vec u_lower, u_upper;
  Vec net_supply;  // length T, uncontrollable production minus load
  AffineEnergyMap energy_map;
  QuadraticUtility utility;
  // available(t, d) == false pins u_d(t) = 0 (e.g. an unplugged EV).
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> available;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int input_dim() const { return static_cast<int>(B.cols()); }
  int horizon() const { return static_cast<int>(net_supply.size()); }

  void validate() const;  // throws ValidationError
};

struct ProsumerFleet {
  std::vector<ProsumerParams> prosumers;
  int horizon = 0;
  double delta_hours = 0.5;

  int size() const { return static_cast<int>(prosumers.size()); }
  void validate(int feeder_node_count) const;
};

// States produced by U (m x T, columns are u(t)); returns n x (T+1) with
// column 0 = x0.
Mat expand_trajectory(const ProsumerParams& params, const Mat& U);

// sum_t f(x(t), u(t)) + phi(x(T)) for the trajectory generated by U.
double utility_of(const ProsumerParams& params, const Mat& U);

// Utility plus trade income sum_t lambda(t) p(t), plus limit income
// sum_t beta(:,t) . l(:,t) when both are given.
double payoff(const ProsumerParams& params, const Mat& U, const Vec& p, const Vec& lambda,
              const Mat* beta = nullptr, const Mat* traded_limits = nullptr);

struct Violation {
  enum class Kind { StateLower, StateUpper, InputLower, InputUpper, TradeCap, Availability };
  Kind kind;
  int t = 0;
  int component = 0;
  double slack = 0.0;  // negative = violated by |slack|
  std::string describe() const;
};

// Diagnostic constraint scan; empty result means feasible within tol.
// Binding constraints (slack == 0) are allowed.
std::vector<Violation> feasibility_check(const ProsumerParams& params, const Mat& U, const Vec& p,
                                         double tol = 1e-9);

}  // namespace gridmarket
