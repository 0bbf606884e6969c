#include "gridmarket/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <cstdio>

namespace gridmarket {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

// ---------------------------------------------------------------------------
// ProgramBuilder

Index ProgramBuilder::add_variables(const std::string& name, Index count) {
  Index first = n_;
  n_ += count;
  if (!name.empty()) var_ranges_[name] = {first, count};
  return first;
}

void ProgramBuilder::add_square(Index var, double w) {
  if (w != 0.0) q_.emplace_back(var, var, 2.0 * w);
}

void ProgramBuilder::add_cross(Index var_a, Index var_b, double w) {
  if (w == 0.0) return;
  q_.emplace_back(var_a, var_b, w);
  q_.emplace_back(var_b, var_a, w);
}

void ProgramBuilder::add_linear(Index var, double w) {
  if (w != 0.0) c_.emplace_back(var, w);
}

Index ProgramBuilder::new_eq_row(double rhs) {
  b_.push_back(rhs);
  return static_cast<Index>(b_.size()) - 1;
}

Index ProgramBuilder::new_le_row(double rhs) {
  h_.push_back(rhs);
  return static_cast<Index>(h_.size()) - 1;
}

void ProgramBuilder::eq_coeff(Index row, Index var, double coeff) {
  if (coeff != 0.0) a_.emplace_back(row, var, coeff);
}

void ProgramBuilder::le_coeff(Index row, Index var, double coeff) {
  if (coeff != 0.0) g_.emplace_back(row, var, coeff);
}

void ProgramBuilder::tag_eq_rows(const std::string& name, Index first, Index count) {
  eq_ranges_[name] = {first, count};
}

void ProgramBuilder::tag_le_rows(const std::string& name, Index first, Index count) {
  le_ranges_[name] = {first, count};
}

Index ProgramBuilder::add_norm_term(double weight) {
  norms_.push_back({weight, 0, {}, {}});
  return static_cast<Index>(norms_.size()) - 1;
}

Index ProgramBuilder::norm_rows(Index term) const { return norms_[static_cast<size_t>(term)].rows; }

void ProgramBuilder::norm_entry(Index term, Index row, Index var, double coeff) {
  auto& t = norms_[static_cast<size_t>(term)];
  t.rows = std::max(t.rows, row + 1);
  if (coeff != 0.0) t.entries.emplace_back(row, var, coeff);
}

void ProgramBuilder::norm_offset(Index term, Index row, double d) {
  auto& t = norms_[static_cast<size_t>(term)];
  t.rows = std::max(t.rows, row + 1);
  if (d != 0.0) t.offsets.emplace_back(row, d);
}

ConvexProgram ProgramBuilder::build() const {
  ConvexProgram prog;
  prog.n = n_;
  prog.constant = constant_;
  prog.Q.resize(n_, n_);
  prog.Q.setFromTriplets(q_.begin(), q_.end());
  prog.c = Vec::Zero(n_);
  for (auto& [i, v] : c_) prog.c[i] += v;
  prog.A.resize(static_cast<Index>(b_.size()), n_);
  prog.A.setFromTriplets(a_.begin(), a_.end());
  prog.b = Eigen::Map<const Vec>(b_.data(), static_cast<Index>(b_.size()));
  prog.G.resize(static_cast<Index>(h_.size()), n_);
  prog.G.setFromTriplets(g_.begin(), g_.end());
  prog.h = Eigen::Map<const Vec>(h_.data(), static_cast<Index>(h_.size()));
  for (const auto& nd : norms_) {
    ConvexProgram::NormTerm term;
    term.weight = nd.weight;
    term.S.resize(nd.rows, n_);
    term.S.setFromTriplets(nd.entries.begin(), nd.entries.end());
    term.d = Vec::Zero(nd.rows);
    for (auto& [r, v] : nd.offsets) term.d[r] += v;
    prog.norm_terms.push_back(std::move(term));
  }
  prog.var_ranges = var_ranges_;
  prog.eq_ranges = eq_ranges_;
  prog.le_ranges = le_ranges_;
  return prog;
}

void ConvexProgram::dump(std::ostream& os) const {
  os << "# standard form: min 1/2 x'Qx + c'x  s.t. Ax = b, Gx <= h\n";
  os << "vars " << n << "\n";
  os << "Q " << Q.nonZeros() << "\n";
  for (Index k = 0; k < Q.outerSize(); ++k)
    for (SpMat::InnerIterator it(Q, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "c\n";
  for (Index i = 0; i < n; ++i)
    if (c[i] != 0.0) os << i << " " << c[i] << "\n";
  os << "A " << A.rows() << " " << A.nonZeros() << "\n";
  for (Index k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "b\n";
  for (Index i = 0; i < b.size(); ++i) os << i << " " << b[i] << "\n";
  os << "G " << G.rows() << " " << G.nonZeros() << "\n";
  for (Index k = 0; k < G.outerSize(); ++k)
    for (SpMat::InnerIterator it(G, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "h\n";
  for (Index i = 0; i < h.size(); ++i) os << i << " " << h[i] << "\n";
  for (const auto& t : norm_terms) {
    os << "norm " << t.weight << " rows " << t.S.rows() << "\n";
    for (Index k = 0; k < t.S.outerSize(); ++k)
      for (SpMat::InnerIterator it(t.S, k); it; ++it)
        os << it.row() << " " << it.col() << " " << it.value() << "\n";
    os << "offset\n";
    for (Index i = 0; i < t.d.size(); ++i)
      if (t.d[i] != 0.0) os << i << " " << t.d[i] << "\n";
  }
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::NumericalTrouble: return "NumericalTrouble";
  }
  return "?";
}

double KktResiduals::worst() const {
  return std::max(std::max(stationarity, primal), std::max(dual, comp_slack));
}

namespace {

Vec slice(const Vec& v, std::pair<Index, Index> range) {
  return v.segment(range.first, range.second);
}

}  // namespace

Vec Solution::eq_duals(const ConvexProgram& prog, const std::string& range) const {
  return slice(y, prog.eq_ranges.at(range));
}

Vec Solution::le_duals(const ConvexProgram& prog, const std::string& range) const {
  return slice(z, prog.le_ranges.at(range));
}

Vec Solution::values(const ConvexProgram& prog, const std::string& var_range) const {
  return slice(x, prog.var_ranges.at(var_range));
}

// ---------------------------------------------------------------------------
// Interior point core

namespace {

struct QpData {
  // Scaled copy of the program (norm terms already folded in by the caller).
  SpMat Q;
  Vec c;
  SpMat A;
  Vec b;
  SpMat G;
  Vec h;
  double obj_scale = 1.0;
  Vec eq_row_scale;  // cumulative factor each row was divided by
  Vec in_row_scale;
  Vec col_scale;  // x_original = x_scaled ./ col_scale
};

// Ruiz-style equilibration: alternate max-norm row and column scaling, then
// normalize the objective. Duals unscale through the row factors and the
// objective scale; the primal through the column factors.
QpData scale_program(const SpMat& Q, const Vec& c, const SpMat& A, const Vec& b, const SpMat& G,
                     const Vec& h) {
  QpData d;
  d.Q = Q;
  d.c = c;
  d.A = A;
  d.b = b;
  d.G = G;
  d.h = h;
  const Index n = Q.cols();
  d.eq_row_scale = Vec::Ones(A.rows());
  d.in_row_scale = Vec::Ones(G.rows());
  d.col_scale = Vec::Ones(n);

  auto row_max = [](const SpMat& M) {
    Vec norms = Vec::Zero(M.rows());
    for (Index k = 0; k < M.outerSize(); ++k)
      for (SpMat::InnerIterator it(M, k); it; ++it)
        norms[it.row()] = std::max(norms[it.row()], std::abs(it.value()));
    return norms;
  };
  auto sqrt_factor = [](const Vec& norms) {
    Vec f(norms.size());
    for (Index i = 0; i < norms.size(); ++i)
      f[i] = norms[i] == 0.0 ? 1.0 : std::clamp(std::sqrt(norms[i]), 1e-4, 1e4);
    return f;
  };
  auto div_rows = [](SpMat& M, const Vec& f) {
    for (Index k = 0; k < M.outerSize(); ++k)
      for (SpMat::InnerIterator it(M, k); it; ++it) it.valueRef() /= f[it.row()];
  };

  // sqrt factors on both sides converge toward unit max norms.
  for (int pass = 0; pass < 5; ++pass) {
    Vec ra = sqrt_factor(row_max(d.A));
    div_rows(d.A, ra);
    d.b.array() /= ra.array();
    d.eq_row_scale.array() *= ra.array();
    Vec rg = sqrt_factor(row_max(d.G));
    div_rows(d.G, rg);
    d.h.array() /= rg.array();
    d.in_row_scale.array() *= rg.array();

    Vec cn = Vec::Zero(n);
    for (const SpMat* M : {&d.Q, &d.A, &d.G})
      for (Index k = 0; k < M->outerSize(); ++k)
        for (SpMat::InnerIterator it(*M, k); it; ++it)
          cn[it.col()] = std::max(cn[it.col()], std::abs(it.value()));
    Vec cs = sqrt_factor(cn);
    for (Index k = 0; k < d.Q.outerSize(); ++k)
      for (SpMat::InnerIterator it(d.Q, k); it; ++it)
        it.valueRef() /= cs[it.row()] * cs[it.col()];
    for (SpMat* M : {&d.A, &d.G})
      for (Index k = 0; k < M->outerSize(); ++k)
        for (SpMat::InnerIterator it(*M, k); it; ++it) it.valueRef() /= cs[it.col()];
    d.c.array() /= cs.array();
    d.col_scale.array() *= cs.array();
  }

  double qmax = 0.0;
  for (Index k = 0; k < d.Q.outerSize(); ++k)
    for (SpMat::InnerIterator it(d.Q, k); it; ++it) qmax = std::max(qmax, std::abs(it.value()));
  d.obj_scale = std::max({1.0, inf_norm(d.c), qmax});
  d.Q /= d.obj_scale;
  d.c /= d.obj_scale;
  return d;
}

// Symmetric quasi-definite KKT with static regularization:
//   [ Q + rho I   A'          G'       ]
//   [ A          -delta I     0        ]
//   [ G           0          -W - delta I ],  W = diag(s ./ z)
// Only the W diagonal changes between factorizations, so the sparsity
// pattern is analyzed once.
class KktSystem {
 public:
  KktSystem(const QpData& d, double rho, double delta) : d_(d), rho_(rho), delta_(delta) {
    n_ = d.Q.cols();
    p_ = d.A.rows();
    m_ = d.G.rows();
    Index nk = n_ + p_ + m_;
    std::vector<Triplet> trip;
    trip.reserve(static_cast<size_t>(d.Q.nonZeros() + d.A.nonZeros() + d.G.nonZeros() + nk));
    for (Index k = 0; k < d.Q.outerSize(); ++k)
      for (SpMat::InnerIterator it(d.Q, k); it; ++it)
        if (it.row() >= it.col()) trip.emplace_back(it.row(), it.col(), it.value());
    for (Index k = 0; k < d.A.outerSize(); ++k)
      for (SpMat::InnerIterator it(d.A, k); it; ++it)
        trip.emplace_back(n_ + it.row(), it.col(), it.value());
    for (Index k = 0; k < d.G.outerSize(); ++k)
      for (SpMat::InnerIterator it(d.G, k); it; ++it)
        trip.emplace_back(n_ + p_ + it.row(), it.col(), it.value());
    for (Index i = 0; i < nk; ++i) trip.emplace_back(i, i, 0.0);
    K_.resize(nk, nk);
    K_.setFromTriplets(trip.begin(), trip.end());

    diag_pos_.resize(static_cast<size_t>(nk));
    for (Index j = 0; j < nk; ++j) {
      for (Index idx = K_.outerIndexPtr()[j]; idx < K_.outerIndexPtr()[j + 1]; ++idx) {
        if (K_.innerIndexPtr()[idx] == j) {
          diag_pos_[static_cast<size_t>(j)] = idx;
          break;
        }
      }
    }
    base_diag_ = Vec::Zero(nk);
    for (Index j = 0; j < nk; ++j) base_diag_[j] = K_.valuePtr()[diag_pos_[static_cast<size_t>(j)]];
    ldlt_.analyzePattern(K_);
  }

  // w = s ./ z (empty when m == 0). Escalates the static regularization on a
  // failed pivot; the refinement steps absorb the extra perturbation.
  bool factorize(const Vec& w) {
    w_ = w;
    double rho = rho_, delta = delta_;
    for (int attempt = 0; attempt < 4; ++attempt) {
      for (Index j = 0; j < n_; ++j)
        K_.valuePtr()[diag_pos_[static_cast<size_t>(j)]] = base_diag_[j] + rho;
      for (Index j = n_; j < n_ + p_; ++j)
        K_.valuePtr()[diag_pos_[static_cast<size_t>(j)]] = base_diag_[j] - delta;
      for (Index j = 0; j < m_; ++j)
        K_.valuePtr()[diag_pos_[static_cast<size_t>(n_ + p_ + j)]] =
            base_diag_[n_ + p_ + j] - w[j] - delta;
      ldlt_.factorize(K_);
      if (ldlt_.info() == Eigen::Success) return true;
      rho *= 1e3;
      delta *= 1e3;
    }
    return false;
  }

  // Solves the *unregularized* system by refinement against the factored
  // regularized one.
  Vec solve(const Vec& rhs, int refine_steps = 2) const {
    Vec sol = ldlt_.solve(rhs);
    for (int it = 0; it < refine_steps; ++it) {
      Vec resid = rhs - apply_exact(sol);
      sol += ldlt_.solve(resid);
    }
    return sol;
  }

  Vec apply_exact(const Vec& v) const {
    Vec x = v.head(n_), y = v.segment(n_, p_), z = v.tail(m_);
    Vec out(n_ + p_ + m_);
    out.head(n_) = d_.Q * x + d_.A.transpose() * y + d_.G.transpose() * z;
    out.segment(n_, p_) = d_.A * x;
    out.tail(m_) = d_.G * x - w_.cwiseProduct(z);
    return out;
  }

  Index n() const { return n_; }
  Index p() const { return p_; }
  Index m() const { return m_; }

 private:
  const QpData& d_;
  double rho_, delta_;
  Index n_ = 0, p_ = 0, m_ = 0;
  SpMat K_;
  std::vector<Index> diag_pos_;
  Vec base_diag_;
  Vec w_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt_;
};

struct IpmResult {
  bool converged = false;
  Vec x, y, z, s;
  Vec ray;  // normalized diverging direction, when iterates blow up
  int iterations = 0;
  double mu = 0.0;
  std::string note;
};

// Mehrotra predictor-corrector on scaled data. Infeasible start allowed.
IpmResult ipm_solve(const QpData& d, const SolverOptions& opts) {
  const Index n = d.Q.cols(), p = d.A.rows(), m = d.G.rows();
  IpmResult res;

  double rho = 1e-9, delta = 1e-9;
  std::unique_ptr<KktSystem> kkt;
  for (int attempt = 0; attempt < 4; ++attempt) {
    kkt = std::make_unique<KktSystem>(d, rho, delta);
    if (kkt->factorize(Vec::Ones(m))) break;
    rho *= 100;
    delta *= 100;
    kkt.reset();
  }
  if (!kkt) {
    res.note = "KKT factorization failed at maximum regularization";
    return res;
  }

  // Starting point: solve once with unit complementarity scaling, then shift
  // the slack estimate and its mirror image into the positive orthant.
  Vec rhs0(n + p + m);
  rhs0 << -d.c, d.b, d.h;
  Vec init = kkt->solve(rhs0, 1);
  Vec x = init.head(n);
  Vec y = init.segment(n, p);
  Vec s(m), z(m);
  if (m > 0) {
    if (!x.allFinite() || inf_norm(x) > 1e8) {
      x.setZero();
      y.setZero();
    }
    Vec slack = d.h - d.G * x;
    for (Index j = 0; j < m; ++j) s[j] = std::max(1.0, slack[j]);
    z.setOnes();
  }

  double mu = m > 0 ? s.dot(z) / static_cast<double>(m) : 0.0;
  double best_measure = kInf;
  double prev_measure = kInf;
  int stall = 0;
  int slow = 0;
  Vec best_x = x, best_y = y, best_z = z, best_s = s;
  // Keep iterating well past the caller's tolerance: slack-row duals carry
  // O(mu) noise, and the price identities downstream need them clean. The
  // stall guard caps the extra effort.
  const double target = std::min(opts.tol_solve * 1e-4, 1e-12);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    Vec rd = d.Q * x + d.c + d.A.transpose() * y + d.G.transpose() * z;
    Vec rp = d.A * x - d.b;
    Vec rg = m > 0 ? Vec(d.G * x + s - d.h) : Vec();
    mu = m > 0 ? s.dot(z) / static_cast<double>(m) : 0.0;

    double stat = inf_norm(rd) / (1.0 + inf_norm(d.c));
    double peq = p > 0 ? inf_norm(rp) / (1.0 + inf_norm(d.b)) : 0.0;
    double pin = m > 0 ? inf_norm(rg) / (1.0 + inf_norm(d.h)) : 0.0;
    // The worst single product matters alongside the mean: off-central
    // iterates can hide a large pairwise violation behind a tiny average.
    double mu_max = m > 0 ? (s.array() * z.array()).maxCoeff() : 0.0;
    double measure = std::max({stat, peq, pin, mu, mu_max});
    res.iterations = iter;
    if (opts.verbose > 1) {
      std::ostringstream oss;
      oss << "iter " << iter << " stat " << stat << " peq " << peq << " pin " << pin << " mu "
          << mu;
      res.note = oss.str();
      if (opts.verbose > 2) std::fprintf(stderr, "%s slow=%d stall=%d\n", oss.str().c_str(), slow, stall);
    }
    if (measure < best_measure) {
      best_measure = measure;
      best_x = x;
      best_y = y;
      best_z = z;
      best_s = s;
      stall = 0;
    } else if (++stall > 15) {
      if (!res.converged) res.note = "progress stalled";
      break;
    }
    if (measure <= target) {
      res.converged = true;
      break;
    }
    if (measure <= opts.tol_solve) res.converged = true;  // keep pushing until stall
    slow = measure > 0.7 * prev_measure ? slow + 1 : std::max(0, slow - 2);
    prev_measure = measure;

    if (m == 0) {
      // Pure equality-constrained QP: one refined Newton solve is exact.
      Vec rhs(n + p);
      rhs << -rd, -rp;
      Vec full(n + p + m);
      full.head(n + p) = rhs;
      Vec step = kkt->solve(full, 3);
      x += step.head(n);
      y += step.segment(n, p);
      continue;
    }

    if (!kkt->factorize(s.cwiseQuotient(z))) {
      res.note = "KKT factorization failed";
      break;
    }

    auto step_len = [](const Vec& v, const Vec& dv) {
      double a = 1.0;
      for (Index j = 0; j < v.size(); ++j)
        if (dv[j] < 0) a = std::min(a, -v[j] / dv[j]);
      return a;
    };

    // Predictor.
    Vec rhs(n + p + m);
    rhs << -rd, -rp, Vec(-rg + s);
    Vec aff = kkt->solve(rhs);
    Vec dx_a = aff.head(n), dz_a = aff.tail(m);
    Vec ds_a = -rg - d.G * dx_a;
    double alpha_a = std::min(step_len(s, ds_a), step_len(z, dz_a));
    double mu_aff = (s + alpha_a * ds_a).dot(z + alpha_a * dz_a) / static_cast<double>(m);
    double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 1e-10, 1.0 - 1e-10);
    // Aggressive Mehrotra steps can crawl on thin feasible sets; once the
    // contraction rate degrades, bias toward the central path and shorten
    // steps.
    double eta = 0.995;
    if (slow >= 8) {
      sigma = std::max(sigma, 0.5);
      eta = 0.95;
    } else if (slow >= 4) {
      sigma = std::max(sigma, 0.1);
      eta = 0.98;
    }

    // Corrector.
    Vec comp = (s.array() * z.array() - sigma * mu + ds_a.array() * dz_a.array()).matrix();
    rhs.tail(m) = -rg + comp.cwiseQuotient(z);
    Vec step = kkt->solve(rhs);
    Vec dx = step.head(n), dy = step.segment(n, p), dz = step.tail(m);
    Vec ds = -rg - d.G * dx;

    double alpha = std::min(1.0, eta * std::min(step_len(s, ds), step_len(z, dz)));
    x += alpha * dx;
    y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
    if (inf_norm(x) > 1e9) {
      res.note = "iterates diverging";
      break;
    }
  }

  if (inf_norm(x) > 1e4) res.ray = x / inf_norm(x);
  res.x = best_x;
  res.y = best_y;
  res.z = best_z;
  res.s = best_s;
  res.mu = best_measure;
  return res;
}

KktResiduals compute_residuals(const SpMat& Q, const Vec& c, const SpMat& A, const Vec& b,
                               const SpMat& G, const Vec& h, const Vec& x, const Vec& y,
                               const Vec& z) {
  KktResiduals r;
  r.stationarity = inf_norm(Q * x + c + A.transpose() * y + G.transpose() * z);
  double req = A.rows() > 0 ? inf_norm(A * x - b) : 0.0;
  double rin = 0.0, comp = 0.0, dneg = 0.0;
  if (G.rows() > 0) {
    Vec slack = h - G * x;
    rin = std::max(0.0, -slack.minCoeff());
    comp = (z.array() * slack.array()).abs().maxCoeff();
    dneg = std::max(0.0, -z.minCoeff());
  }
  r.primal = std::max(req, rin);
  r.dual = dneg;
  r.comp_slack = comp;
  return r;
}

struct RelScales {
  double stat = 1.0, primal = 1.0, comp = 1.0;
};

RelScales residual_scales(const SpMat& Q, const Vec& c, const SpMat& A, const Vec& b,
                          const SpMat& G, const Vec& h, const Vec& x, const Vec& y, const Vec& z) {
  RelScales s;
  s.stat = 1.0 + std::max({inf_norm(Q * x), inf_norm(c), inf_norm(A.transpose() * y),
                           inf_norm(G.transpose() * z)});
  s.primal = 1.0 + std::max({A.rows() ? inf_norm(A * x) : 0.0, inf_norm(b),
                             G.rows() ? inf_norm(G * x) : 0.0, inf_norm(h)});
  // Complementarity products are price-times-quantity; normalize by the price
  // magnitudes as well, since the net objective can sit near zero.
  double obj = 0.5 * x.dot(Q * x) + c.dot(x);
  s.comp = std::abs(obj) + s.stat;
  return s;
}

bool good_enough(const KktResiduals& r, const RelScales& sc, double tol) {
  return r.stationarity <= tol * sc.stat && r.primal <= tol * sc.primal &&
         r.dual <= std::max(tol, 1e-9) && r.comp_slack <= tol * sc.comp;
}

// Active-set polish: re-solves the KKT equalities with the detected active
// inequalities, which typically gains a few digits on both primal and dual.
// Rows whose multipliers come back negative are pruned and the system is
// re-solved, so mildly degenerate active sets still polish cleanly.
bool try_polish(const SpMat& Q, const Vec& c, const SpMat& A, const Vec& b, const SpMat& G,
                const Vec& h, const Vec& s, const Vec& zscaled, Vec& x, Vec& y, Vec& z) {
  const Index n = Q.cols(), p = A.rows(), m = G.rows();
  std::vector<Index> active;
  for (Index j = 0; j < m; ++j)
    if (zscaled[j] > s[j]) active.push_back(j);

  Vec xp, yp, zp;
  for (int pass = 0; pass < 4; ++pass) {
    const Index ma = static_cast<Index>(active.size());
    std::vector<Triplet> trip;
    for (Index k = 0; k < Q.outerSize(); ++k)
      for (SpMat::InnerIterator it(Q, k); it; ++it)
        if (it.row() >= it.col()) trip.emplace_back(it.row(), it.col(), it.value());
    for (Index k = 0; k < A.outerSize(); ++k)
      for (SpMat::InnerIterator it(A, k); it; ++it)
        trip.emplace_back(n + it.row(), it.col(), it.value());
    SpMat Ga(ma, n);
    {
      // G is column-major; gather the active rows in one scan.
      std::vector<Triplet> gt;
      for (Index k = 0; k < G.outerSize(); ++k)
        for (SpMat::InnerIterator it(G, k); it; ++it) {
          auto pos = std::lower_bound(active.begin(), active.end(), it.row());
          if (pos != active.end() && *pos == it.row()) {
            Index r = static_cast<Index>(pos - active.begin());
            gt.emplace_back(r, it.col(), it.value());
            trip.emplace_back(n + p + r, it.col(), it.value());
          }
        }
      Ga.setFromTriplets(gt.begin(), gt.end());
    }
    const double reg = 1e-11;
    const Index nk = n + p + ma;
    for (Index i = 0; i < n; ++i) trip.emplace_back(i, i, reg);
    for (Index i = n; i < nk; ++i) trip.emplace_back(i, i, -reg);
    SpMat K(nk, nk);
    K.setFromTriplets(trip.begin(), trip.end());

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt;
    ldlt.compute(K);
    if (ldlt.info() != Eigen::Success) return false;

    Vec rhs(nk);
    rhs.head(n) = -c;
    rhs.segment(n, p) = b;
    for (Index r = 0; r < ma; ++r) rhs[n + p + r] = h[active[static_cast<size_t>(r)]];

    Vec sol = ldlt.solve(rhs);
    for (int it = 0; it < 2; ++it) {
      Vec resid(nk);
      Vec xs = sol.head(n), ys = sol.segment(n, p), zs = sol.tail(ma);
      resid.head(n) = rhs.head(n) - (Q * xs + A.transpose() * ys + Ga.transpose() * zs);
      resid.segment(n, p) = rhs.segment(n, p) - A * xs;
      resid.tail(ma) = rhs.tail(ma) - Ga * xs;
      sol += ldlt.solve(resid);
    }

    xp = sol.head(n);
    yp = sol.segment(n, p);
    zp = Vec::Zero(m);
    for (Index r = 0; r < ma; ++r) zp[active[static_cast<size_t>(r)]] = sol[n + p + r];

    std::vector<Index> keep;
    for (Index j : active)
      if (zp[j] >= -1e-9) keep.push_back(j);
    if (keep.size() == active.size()) break;
    if (pass == 3) return false;
    active.swap(keep);
  }

  KktResiduals before = compute_residuals(Q, c, A, b, G, h, x, y, z);
  KktResiduals after = compute_residuals(Q, c, A, b, G, h, xp, yp, zp);
  RelScales sc = residual_scales(Q, c, A, b, G, h, xp, yp, zp);
  if (after.dual > 1e-9 || !good_enough(after, sc, 1e-7)) return false;
  if (after.worst() >= before.worst()) return false;
  for (Index r = 0; r < m; ++r) zp[r] = std::max(zp[r], 0.0);
  x = xp;
  y = yp;
  z = zp;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points

namespace {

struct FlatProgram {
  SpMat Q;
  Vec c;
  double constant;
};

// Folds norm terms into a quadratic majorizer around x_ref (IRLS). With no
// norm terms this is the identity.
FlatProgram fold_norms(const ConvexProgram& prog, const Vec* x_ref) {
  FlatProgram f{prog.Q, prog.c, prog.constant};
  for (const auto& t : prog.norm_terms) {
    // Smoothing floor keeps the majorizer weights bounded near the kink; the
    // smoothed minimum coincides with the exact one on flat ties and is
    // within O(weight * floor) otherwise.
    double floor = 1e-6 * (1.0 + inf_norm(t.d));
    double r = 1.0;
    if (x_ref) {
      Vec res = t.S * (*x_ref) + t.d;
      r = std::sqrt(res.squaredNorm() + floor * floor);
    }
    double wscale = t.weight / r;
    SpMat StS = SpMat(t.S.transpose()) * t.S;
    f.Q = f.Q + wscale * StS;
    f.c += wscale * (t.S.transpose() * t.d);
  }
  return f;
}

double true_objective(const ConvexProgram& prog, const Vec& x) {
  double obj = 0.5 * x.dot(prog.Q * x) + prog.c.dot(x) + prog.constant;
  for (const auto& t : prog.norm_terms) obj += t.weight * (t.S * x + t.d).norm();
  return obj;
}

Solution solve_plain(const SpMat& Q, const Vec& c, double constant, const ConvexProgram& prog,
                     const SolverOptions& opts, bool classify);

ConvexProgram phase1_program(const ConvexProgram& prog, double cap) {
  ConvexProgram p1;
  p1.n = prog.n + 1;
  const Index t_var = prog.n;
  p1.Q.resize(p1.n, p1.n);
  // Tiny curvature keeps the phase-1 LP strictly convex in x directions that
  // do not matter, which steadies the interior point iteration.
  std::vector<Triplet> qt;
  for (Index i = 0; i < p1.n; ++i) qt.emplace_back(i, i, 1e-10);
  p1.Q.setFromTriplets(qt.begin(), qt.end());
  p1.c = Vec::Zero(p1.n);
  p1.c[t_var] = 1.0;
  p1.constant = 0.0;

  std::vector<Triplet> at;
  for (Index k = 0; k < prog.A.outerSize(); ++k)
    for (SpMat::InnerIterator it(prog.A, k); it; ++it)
      at.emplace_back(it.row(), it.col(), it.value());
  p1.A.resize(prog.A.rows(), p1.n);
  p1.A.setFromTriplets(at.begin(), at.end());
  p1.b = prog.b;

  std::vector<Triplet> gt;
  for (Index k = 0; k < prog.G.outerSize(); ++k)
    for (SpMat::InnerIterator it(prog.G, k); it; ++it)
      gt.emplace_back(it.row(), it.col(), it.value());
  for (Index j = 0; j < prog.G.rows(); ++j) gt.emplace_back(j, t_var, -1.0);
  gt.emplace_back(prog.G.rows(), t_var, -1.0);  // t >= -cap
  p1.G.resize(prog.G.rows() + 1, p1.n);
  p1.G.setFromTriplets(gt.begin(), gt.end());
  p1.h = Vec::Zero(prog.G.rows() + 1);
  p1.h.head(prog.G.rows()) = prog.h;
  p1.h[prog.G.rows()] = cap;
  return p1;
}

bool equalities_consistent(const ConvexProgram& prog, Vec* witness) {
  if (prog.A.rows() == 0) {
    if (witness) *witness = Vec::Zero(prog.n);
    return true;
  }
  SpMat AtA = SpMat(prog.A.transpose()) * prog.A;
  {
    SpMat eye(prog.n, prog.n);
    eye.setIdentity();
    AtA = AtA + 1e-10 * eye;
  }
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt(AtA);
  if (ldlt.info() != Eigen::Success) return false;
  Vec x = ldlt.solve(prog.A.transpose() * prog.b);
  for (int it = 0; it < 2; ++it)
    x += ldlt.solve(prog.A.transpose() * (prog.b - prog.A * x));
  if (witness) *witness = x;
  return inf_norm(prog.A * x - prog.b) <= 1e-6 * (1.0 + inf_norm(prog.b));
}

Solution solve_plain(const SpMat& Q, const Vec& c, double constant, const ConvexProgram& prog,
                     const SolverOptions& opts, bool classify) {
  Solution sol;
  QpData d = scale_program(Q, c, prog.A, prog.b, prog.G, prog.h);
  IpmResult ipm = ipm_solve(d, opts);

  sol.iterations = ipm.iterations;
  sol.x = (ipm.x.array() / d.col_scale.array()).matrix();
  sol.y = (d.obj_scale * ipm.y.array() * d.eq_row_scale.array().inverse()).matrix();
  sol.z = (d.obj_scale * ipm.z.array() * d.in_row_scale.array().inverse()).matrix();
  for (Index j = 0; j < sol.z.size(); ++j) sol.z[j] = std::max(sol.z[j], 0.0);

  if (ipm.converged && opts.polish && prog.G.rows() > 0)
    try_polish(Q, c, prog.A, prog.b, prog.G, prog.h, ipm.s, ipm.z, sol.x, sol.y, sol.z);

  sol.residuals = compute_residuals(Q, c, prog.A, prog.b, prog.G, prog.h, sol.x, sol.y, sol.z);
  RelScales sc = residual_scales(Q, c, prog.A, prog.b, prog.G, prog.h, sol.x, sol.y, sol.z);
  sol.objective = 0.5 * sol.x.dot(Q * sol.x) + c.dot(sol.x) + constant;

  if (good_enough(sol.residuals, sc, opts.tol_accept)) {
    sol.status = SolveStatus::Optimal;
    return sol;
  }

  if (!classify) {
    sol.status = SolveStatus::NumericalTrouble;
    sol.message = "did not converge: " + ipm.note;
    return sol;
  }

  // Classify through strict feasibility instead of trusting divergence
  // patterns.
  Vec witness;
  if (!equalities_consistent(prog, &witness)) {
    sol.status = SolveStatus::Infeasible;
    sol.message = "equality constraints are inconsistent";
    return sol;
  }
  SolverOptions p1opts = opts;
  p1opts.polish = false;
  p1opts.max_iterations = std::max(opts.max_iterations, 150);
  ConvexProgram p1 = phase1_program(prog, 10.0);
  Solution p1sol = solve_plain(p1.Q, p1.c, 0.0, p1, p1opts, false);
  if (p1sol.status != SolveStatus::Optimal) {
    sol.status = SolveStatus::NumericalTrouble;
    sol.message = "did not converge and feasibility phase is inconclusive";
    return sol;
  }
  double margin = -p1sol.x[prog.n];
  double feas_tol = 1e-7 * (1.0 + inf_norm(prog.h));
  if (margin < -feas_tol) {
    sol.status = SolveStatus::Infeasible;
    sol.message = "no feasible point: best inequality margin " + std::to_string(margin);
    Vec slack = prog.h - prog.G * p1sol.x.head(prog.n);
    for (Index j = 0; j < slack.size(); ++j)
      if (slack[j] <= margin + 0.05 * std::abs(margin) + feas_tol)
        sol.infeasible_rows.push_back({j, -slack[j]});
    std::sort(sol.infeasible_rows.begin(), sol.infeasible_rows.end(),
              [](auto& a, auto& b) { return a.second > b.second; });
    if (sol.infeasible_rows.size() > 32) sol.infeasible_rows.resize(32);
    return sol;
  }
  if (ipm.ray.size() > 0) {
    // Certify the diverging direction: it must stay feasible and improve the
    // objective without picking up curvature.
    Vec ray = (ipm.ray.array() / d.col_scale.array()).matrix();
    ray /= std::max(1e-300, inf_norm(ray));
    bool flat = inf_norm(Q * ray) <= 1e-6 * (1.0 + inf_norm(sol.x));
    bool eq_ok = prog.A.rows() == 0 || inf_norm(prog.A * ray) <= 1e-6;
    bool in_ok = prog.G.rows() == 0 || (prog.G * ray).maxCoeff() <= 1e-6;
    if (flat && eq_ok && in_ok && c.dot(ray) < -1e-9) {
      sol.status = SolveStatus::Unbounded;
      sol.message = "objective unbounded below along a feasible ray";
      return sol;
    }
  }
  if (sol.objective < -1e10 || inf_norm(sol.x) > 1e7) {
    sol.status = SolveStatus::Unbounded;
    sol.message = "feasible but iterates diverge; objective appears unbounded below";
    return sol;
  }
  sol.status = SolveStatus::NumericalTrouble;
  {
    std::ostringstream oss;
    oss << "feasible (margin " << margin << ") but tolerances not met (stat "
        << sol.residuals.stationarity << ", primal " << sol.residuals.primal << ", dual "
        << sol.residuals.dual << ", comp " << sol.residuals.comp_slack << "); " << ipm.note;
    sol.message = oss.str();
  }
  return sol;
}

}  // namespace

Solution solve(const ConvexProgram& prog, const SolverOptions& opts) {
  // PSD validation by shifted Cholesky; diagonal shift covers semidefinite
  // objectives with exactly singular directions.
  {
    double dmax = 0.0;
    std::vector<Triplet> qt;
    qt.reserve(static_cast<size_t>(prog.Q.nonZeros() + prog.n));
    for (Index k = 0; k < prog.Q.outerSize(); ++k)
      for (SpMat::InnerIterator it(prog.Q, k); it; ++it) {
        if (it.row() == it.col()) dmax = std::max(dmax, std::abs(it.value()));
        qt.emplace_back(it.row(), it.col(), it.value());
      }
    double shift = 1e-8 * std::max(1.0, dmax);
    for (Index i = 0; i < prog.n; ++i) qt.emplace_back(i, i, shift);
    SpMat Qshift(prog.n, prog.n);
    Qshift.setFromTriplets(qt.begin(), qt.end());
    Eigen::SimplicialLLT<SpMat, Eigen::Lower> llt(Qshift);
    if (llt.info() != Eigen::Success) {
      Solution bad;
      bad.status = SolveStatus::NumericalTrouble;
      bad.message = "objective matrix is not positive semidefinite";
      return bad;
    }
  }

  if (prog.norm_terms.empty()) {
    return solve_plain(prog.Q, prog.c, prog.constant, prog, opts, true);
  }

  // IRLS outer loop for norm objective terms: each pass solves the QP with
  // the norms replaced by tight quadratic majorizers at the previous iterate.
  FlatProgram f = fold_norms(prog, nullptr);
  Solution sol = solve_plain(f.Q, f.c, f.constant, prog, opts, true);
  if (sol.status != SolveStatus::Optimal) return sol;
  for (int outer = 0; outer < 60; ++outer) {
    Vec prev = sol.x;
    f = fold_norms(prog, &prev);
    sol = solve_plain(f.Q, f.c, f.constant, prog, opts, true);
    if (sol.status != SolveStatus::Optimal) return sol;
    if (inf_norm(sol.x - prev) <= 1e-9 * (1.0 + inf_norm(sol.x))) break;
  }
  sol.objective = true_objective(prog, sol.x);
  return sol;
}

SlaterReport check_slater(const ConvexProgram& prog, double cap, const SolverOptions& opts) {
  SlaterReport report;
  Vec witness;
  report.equalities_consistent = equalities_consistent(prog, &witness);
  if (!report.equalities_consistent) return report;
  if (prog.G.rows() == 0) {
    report.feasible = report.strictly_feasible = true;
    report.margin = cap;
    report.point = witness;
    return report;
  }
  SolverOptions p1opts = opts;
  p1opts.polish = false;
  ConvexProgram p1 = phase1_program(prog, cap);
  Solution sol = solve_plain(p1.Q, p1.c, 0.0, p1, p1opts, false);
  if (sol.status != SolveStatus::Optimal) return report;
  report.margin = -sol.x[prog.n];
  double tol = 1e-7 * (1.0 + inf_norm(prog.h));
  report.feasible = report.margin >= -tol;
  report.strictly_feasible = report.margin > tol;
  report.point = sol.x.head(prog.n);
  Vec slack = prog.h - prog.G * report.point;
  for (Index j = 0; j < slack.size(); ++j)
    if (slack[j] <= report.margin + tol + 0.05 * std::abs(report.margin))
      report.blocking_rows.push_back({j, slack[j]});
  return report;
}

}  // namespace gridmarket
