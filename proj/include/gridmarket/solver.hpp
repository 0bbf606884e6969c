#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gridmarket/types.hpp"

namespace gridmarket {

// Convex program in minimization form:
//
//   min  1/2 x'Qx + c'x + constant + sum_k weight_k * ||S_k x + d_k||_2
//   s.t. A x  = b
//        G x <= h
//
// Q must be positive semidefinite. Norm terms cover the second-order-cone
// objectives used by envelope allocation; everything else is a plain QP.
// Named row/variable ranges let callers look up duals without tracking raw
// indices.
struct ConvexProgram {
  Index n = 0;
  SpMat Q;  // full symmetric, 1/2 x'Qx convention
  Vec c;
  double constant = 0.0;
  SpMat A;
  Vec b;
  SpMat G;
  Vec h;

  struct NormTerm {
    double weight = 0.0;
    SpMat S;
    Vec d;
  };
  std::vector<NormTerm> norm_terms;

  std::map<std::string, std::pair<Index, Index>> var_ranges;  // name -> (first, count)
  std::map<std::string, std::pair<Index, Index>> eq_ranges;
  std::map<std::string, std::pair<Index, Index>> le_ranges;

  Index eq_count() const { return A.rows(); }
  Index le_count() const { return G.rows(); }

  // Plain-text standard-form dump (coordinate triplets) for cross-checking
  // against external tools.
  void dump(std::ostream& os) const;
};

// Incremental assembly with named ranges. Rows are created first (with their
// right-hand side), coefficients filled in any order afterwards.
class ProgramBuilder {
 public:
  Index add_variables(const std::string& name, Index count);
  Index num_variables() const { return n_; }

  void add_square(Index var, double w);              // + w * x_var^2
  void add_cross(Index var_a, Index var_b, double w);  // + w * x_a * x_b
  void add_linear(Index var, double w);
  void add_constant(double v) { constant_ += v; }

  Index new_eq_row(double rhs);
  Index new_le_row(double rhs);
  void eq_coeff(Index row, Index var, double coeff);
  void le_coeff(Index row, Index var, double coeff);
  void tag_eq_rows(const std::string& name, Index first, Index count);
  void tag_le_rows(const std::string& name, Index first, Index count);

  Index add_norm_term(double weight);
  Index norm_rows(Index term) const;
  void norm_entry(Index term, Index row, Index var, double coeff);
  void norm_offset(Index term, Index row, double d);

  ConvexProgram build() const;

 private:
  Index n_ = 0;
  double constant_ = 0.0;
  std::vector<Triplet> q_;  // stored directly in the 1/2 x'Qx convention
  std::vector<std::pair<Index, double>> c_;
  std::vector<Triplet> a_;
  std::vector<double> b_;
  std::vector<Triplet> g_;
  std::vector<double> h_;
  struct NormDraft {
    double weight;
    Index rows = 0;
    std::vector<Triplet> entries;
    std::vector<std::pair<Index, double>> offsets;
  };
  std::vector<NormDraft> norms_;
  std::map<std::string, std::pair<Index, Index>> var_ranges_, eq_ranges_, le_ranges_;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalTrouble };

std::string to_string(SolveStatus s);

struct KktResiduals {
  double stationarity = 0.0;   // ||Qx + c + A'y + G'z||_inf
  double primal = 0.0;         // max(||Ax - b||_inf, ||(Gx - h)_+||_inf)
  double dual = 0.0;           // ||min(z, 0)||_inf
  double comp_slack = 0.0;     // max_j |z_j (Gx - h)_j|
  double worst() const;
};

struct Solution {
  SolveStatus status = SolveStatus::NumericalTrouble;
  Vec x;
  Vec y;  // equality duals, minimization convention: Qx + c + A'y + G'z = 0
  Vec z;  // inequality duals, >= 0
  double objective = 0.0;
  KktResiduals residuals;
  int iterations = 0;
  std::string message;
  // Most violated inequality rows when infeasible (row index, violation).
  std::vector<std::pair<Index, double>> infeasible_rows;

  Vec eq_duals(const ConvexProgram& prog, const std::string& range) const;
  Vec le_duals(const ConvexProgram& prog, const std::string& range) const;
  Vec values(const ConvexProgram& prog, const std::string& var_range) const;
};

struct SolverOptions {
  double tol_solve = 1e-8;   // interior-point target
  double tol_accept = 1e-6;  // classification threshold for Optimal
  int max_iterations = 100;
  bool polish = true;
  int verbose = 0;
};

// Interior-point solve with primal and dual extraction. Status Infeasible and
// Unbounded are classified through an internal strict-feasibility phase
// rather than guessed from divergence.
Solution solve(const ConvexProgram& prog, const SolverOptions& opts = {});

struct SlaterReport {
  bool equalities_consistent = false;
  bool feasible = false;         // margin >= -tol
  bool strictly_feasible = false;  // margin > tol
  double margin = 0.0;           // max over x of min_j (h - Gx)_j, capped
  Vec point;
  std::vector<std::pair<Index, double>> blocking_rows;  // tightest rows at the optimum
};

// Phase-1 style diagnostic: maximizes the smallest inequality slack subject
// to the equalities. margin is capped at `cap` so unconstrained directions
// report a finite value.
SlaterReport check_slater(const ConvexProgram& prog, double cap = 10.0,
                          const SolverOptions& opts = {});

}  // namespace gridmarket
