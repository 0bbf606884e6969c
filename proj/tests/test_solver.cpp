#include <doctest.h>

#include <random>
#include <sstream>

#include "gridmarket/solver.hpp"

using namespace gridmarket;

namespace {

// Dense KKT solve for equality-constrained QPs; the reference the interior
// point duals are checked against.
std::pair<Vec, Vec> dense_kkt(const Mat& Q, const Vec& c, const Mat& A, const Vec& b) {
  Index n = Q.rows(), p = A.rows();
  Mat K = Mat::Zero(n + p, n + p);
  K.topLeftCorner(n, n) = Q;
  K.topRightCorner(n, p) = A.transpose();
  K.bottomLeftCorner(p, n) = A;
  Vec rhs(n + p);
  rhs << -c, b;
  Vec sol = K.fullPivLu().solve(rhs);
  return {sol.head(n), sol.tail(p)};
}

}  // namespace

TEST_CASE("scalar equality QP recovers the textbook dual") {
  // min x^2 s.t. x = 1: stationarity 2x + y = 0 at x = 1 gives y = -2, so the
  // negated-dual price lookup yields 2.
  ProgramBuilder pb;
  Index x = pb.add_variables("x", 1);
  pb.add_square(x, 1.0);
  Index row = pb.new_eq_row(1.0);
  pb.eq_coeff(row, x, 1.0);
  pb.tag_eq_rows("pin", row, 1);
  Solution sol = solve(pb.build());
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.y[0] == doctest::Approx(-2.0).epsilon(1e-8));
  CHECK(-sol.eq_duals(pb.build(), "pin")[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(sol.residuals.stationarity <= 1e-6);
}

TEST_CASE("contradictory box is infeasible") {
  ProgramBuilder pb;
  Index x = pb.add_variables("x", 1);
  Index r1 = pb.new_le_row(-1.0);  // x <= -1
  pb.le_coeff(r1, x, 1.0);
  Index r2 = pb.new_le_row(0.0);  // -x <= 0
  pb.le_coeff(r2, x, -1.0);
  Solution sol = solve(pb.build());
  CHECK(sol.status == SolveStatus::Infeasible);
  CHECK(!sol.infeasible_rows.empty());
}

TEST_CASE("linear decrease without a floor is unbounded") {
  ProgramBuilder pb;
  Index x = pb.add_variables("x", 1);
  pb.add_linear(x, -1.0);
  Index r = pb.new_le_row(0.0);  // -x <= 0, so x can grow without limit
  pb.le_coeff(r, x, -1.0);
  Solution sol = solve(pb.build());
  CHECK(sol.status == SolveStatus::Unbounded);
}

TEST_CASE("random equality QPs match the closed-form KKT system") {
  std::mt19937 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 20, p = 10;
    Mat F(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) F(i, j) = gauss(rng);
    Mat Q = F * F.transpose() + 0.1 * Mat::Identity(n, n);
    Mat A(p, n);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = gauss(rng);
    Vec c(n), b(p);
    for (int i = 0; i < n; ++i) c[i] = gauss(rng);
    for (int i = 0; i < p; ++i) b[i] = gauss(rng);

    ProgramBuilder pb;
    Index x0 = pb.add_variables("x", n);
    for (int i = 0; i < n; ++i) {
      pb.add_square(x0 + i, 0.5 * Q(i, i));
      pb.add_linear(x0 + i, c[i]);
      for (int j = i + 1; j < n; ++j) pb.add_cross(x0 + i, x0 + j, Q(i, j));
    }
    for (int i = 0; i < p; ++i) {
      Index row = pb.new_eq_row(b[i]);
      for (int j = 0; j < n; ++j) pb.eq_coeff(row, x0 + j, A(i, j));
    }
    Solution sol = solve(pb.build());
    REQUIRE(sol.status == SolveStatus::Optimal);
    auto [x_ref, y_ref] = dense_kkt(Q, c, A, b);
    CHECK((sol.x - x_ref).cwiseAbs().maxCoeff() <= 1e-8 * (1 + x_ref.cwiseAbs().maxCoeff()));
    CHECK((sol.y - y_ref).cwiseAbs().maxCoeff() <= 1e-8 * (1 + y_ref.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("inequality QPs satisfy complementary slackness and strong duality") {
  std::mt19937 rng(23);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    int n = 12, m = 18, p = 3;
    Mat F(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) F(i, j) = gauss(rng);
    Mat Q = F * F.transpose() + 0.05 * Mat::Identity(n, n);
    Mat G(m, n), A(p, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) G(i, j) = gauss(rng);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = gauss(rng);
    Vec c(n), h(m), b = Vec::Zero(p);
    for (int i = 0; i < n; ++i) c[i] = gauss(rng);
    for (int i = 0; i < m; ++i) h[i] = 1.0 + std::abs(gauss(rng));  // x = 0 strictly feasible

    ProgramBuilder pb;
    Index x0 = pb.add_variables("x", n);
    for (int i = 0; i < n; ++i) {
      pb.add_square(x0 + i, 0.5 * Q(i, i));
      pb.add_linear(x0 + i, c[i]);
      for (int j = i + 1; j < n; ++j) pb.add_cross(x0 + i, x0 + j, Q(i, j));
    }
    for (int i = 0; i < p; ++i) {
      Index row = pb.new_eq_row(b[i]);
      for (int j = 0; j < n; ++j) pb.eq_coeff(row, x0 + j, A(i, j));
    }
    for (int i = 0; i < m; ++i) {
      Index row = pb.new_le_row(h[i]);
      for (int j = 0; j < n; ++j) pb.le_coeff(row, x0 + j, G(i, j));
    }
    ConvexProgram prog = pb.build();
    Solution sol = solve(prog);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.residuals.comp_slack <= 1e-6);
    CHECK(sol.residuals.dual <= 1e-9);
    // Primal minus dual objective reduces to x'Qx + c'x + b'y + h'z.
    double gap = sol.x.dot(Q * sol.x) + c.dot(sol.x) + b.dot(sol.y) + h.dot(sol.z);
    CHECK(std::abs(gap) <= 1e-6 * (1 + std::abs(sol.objective)));
  }
}

TEST_CASE("slater margins") {
  SUBCASE("unit box has margin one at the center") {
    ProgramBuilder pb;
    Index x = pb.add_variables("x", 1);
    Index r1 = pb.new_le_row(1.0);
    pb.le_coeff(r1, x, 1.0);
    Index r2 = pb.new_le_row(1.0);
    pb.le_coeff(r2, x, -1.0);
    SlaterReport rep = check_slater(pb.build());
    CHECK(rep.strictly_feasible);
    CHECK(rep.margin == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("pinned point fails strict feasibility") {
    ProgramBuilder pb;
    Index x = pb.add_variables("x", 1);
    Index r1 = pb.new_le_row(0.0);
    pb.le_coeff(r1, x, 1.0);
    Index r2 = pb.new_le_row(0.0);
    pb.le_coeff(r2, x, -1.0);
    SlaterReport rep = check_slater(pb.build());
    CHECK(rep.feasible);
    CHECK(!rep.strictly_feasible);
    CHECK(rep.margin == doctest::Approx(0.0).epsilon(1e-6));
  }
}

TEST_CASE("norm objective terms reach the analytic projection") {
  // min ||x|| s.t. sum x = 1 in R^3 has solution x = (1/3, 1/3, 1/3).
  ProgramBuilder pb;
  Index x0 = pb.add_variables("x", 3);
  Index term = pb.add_norm_term(1.0);
  for (int i = 0; i < 3; ++i) pb.norm_entry(term, i, x0 + i, 1.0);
  Index row = pb.new_eq_row(1.0);
  for (int i = 0; i < 3; ++i) pb.eq_coeff(row, x0 + i, 1.0);
  Solution sol = solve(pb.build());
  REQUIRE(sol.status == SolveStatus::Optimal);
  for (int i = 0; i < 3; ++i) CHECK(sol.x[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));
  CHECK(sol.objective == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-7));
}

TEST_CASE("program dump emits coordinate triplets") {
  ProgramBuilder pb;
  Index x = pb.add_variables("x", 2);
  pb.add_square(x, 1.0);
  pb.add_linear(x + 1, -3.0);
  Index row = pb.new_le_row(2.0);
  pb.le_coeff(row, x, 1.0);
  std::ostringstream oss;
  pb.build().dump(oss);
  CHECK(oss.str().find("vars 2") != std::string::npos);
  CHECK(oss.str().find("G 1 1") != std::string::npos);
}

TEST_CASE("non-psd objective is rejected") {
  ProgramBuilder pb;
  Index x = pb.add_variables("x", 2);
  pb.add_square(x, -1.0);
  Solution sol = solve(pb.build());
  CHECK(sol.status == SolveStatus::NumericalTrouble);
}
