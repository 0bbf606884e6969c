#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gridmarket {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Index = Eigen::Index;

// Tolerance ladder used throughout: solve tight, accept looser, compare
// independently solved programs looser still.
inline constexpr double kSolveTol = 1e-8;
inline constexpr double kAcceptTol = 1e-6;
inline constexpr double kCompareTol = 1e-5;

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, int line_, int col_)
      : std::runtime_error(what + " (line " + std::to_string(line_) + ", col " +
                           std::to_string(col_) + ")"),
        line(line_),
        col(col_) {}
  int line = 0;
  int col = 0;
};

}  // namespace gridmarket
