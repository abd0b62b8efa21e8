#pragma once

/**
 * Operator-splitting solver for convex quadratic programs of the form
 *
 *   minimize    0.5 y'Py + q'y + constant
 *   subject to  A_eq y = b_eq
 *               lower <= y <= upper
 *               y_i^2 + y_j^2 <= r^2      for each disk (i, j, r)
 *
 * Every variable gets an identity constraint row, so the constraint set is
 * C = {b_eq} x prod(boxes and disks), and each ADMM step alternates a linear
 * solve with a cached quasi-definite LDL' factorisation and a closed-form
 * projection onto C (clamping, or radial scaling on a disk).
 *
 * The data is equilibrated (modified Ruiz) before iterating. The penalty is
 * adapted from the ratio of primal to dual residuals, and converged solutions
 * are polished by Newton's method on the KKT system of the guessed active
 * set.
 */

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/grid.hpp"

namespace flexmarket::qp {

using Eigen::Index;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using grid::Disk;
using grid::kInf;

struct ConvexProgram {
  SparseMatrix P;  // symmetric PSD, full storage
  VectorXd q;
  double constant = 0.0;
  SparseMatrix A_eq;
  VectorXd b_eq;
  VectorXd lower;
  VectorXd upper;
  std::vector<Disk> disks;

  Index size() const { return q.size(); }

  void validate() const {
    const Index n = size();
    require(P.rows() == n && P.cols() == n, ErrorKind::contract, "objective matrix must be n x n");
    require(A_eq.cols() == n && A_eq.rows() == b_eq.size(), ErrorKind::contract, "equality block has wrong shape");
    require(lower.size() == n && upper.size() == n, ErrorKind::contract, "box block must have one bound per variable");
    require((lower.array() <= upper.array()).all(), ErrorKind::contract, "box block has lower > upper");
    const SparseMatrix asym = P - SparseMatrix(P.transpose());
    require(asym.norm() <= 1e-12 * std::max(1.0, P.norm()), ErrorKind::contract, "objective matrix is not symmetric");
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    for (const auto& d : disks) {
      require(d.radius > 0.0, ErrorKind::contract, "disk radius must be positive");
      require(d.i >= 0 && d.i < n && d.j >= 0 && d.j < n && d.i != d.j, ErrorKind::contract,
              "disk indices out of range");
      require(!used[static_cast<std::size_t>(d.i)] && !used[static_cast<std::size_t>(d.j)], ErrorKind::contract,
              "disk index pairs must be disjoint");
      used[static_cast<std::size_t>(d.i)] = used[static_cast<std::size_t>(d.j)] = true;
      require(std::isinf(lower(d.i)) && std::isinf(upper(d.i)) && std::isinf(lower(d.j)) && std::isinf(upper(d.j)),
              ErrorKind::contract, "disk variables must not carry box bounds");
    }
  }
};

enum class Status { optimal, infeasible, max_iter };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::infeasible: return "infeasible";
    case Status::max_iter: return "max_iter";
  }
  return "unknown";
}

struct Settings {
  double eps_pri = 1e-8;
  double eps_dual = 1e-8;
  Index max_iter = 50000;
  bool polish = true;
  double sigma = 1e-6;
  double relaxation = 1.6;
  double rho = 0.1;
  Index check_every = 10;
  Index adapt_every = 5;  // in checks
  Index infeasibility_window = 1000;
  double eps_infeasible = 1e-5;
  Index scaling_iters = 15;
};

struct Solution {
  VectorXd x;
  VectorXd y_eq;   // multipliers of the equality block
  VectorXd y_box;  // multipliers of the per-variable rows (box and disk)
  double primal_residual = 0.0;  // normalised: raw / (1 + magnitude)
  double dual_residual = 0.0;
  double primal_residual_raw = 0.0;
  double dual_residual_raw = 0.0;
  double objective = 0.0;
  Index iterations = 0;
  Status status = Status::max_iter;
  bool polished = false;
};

struct KktResiduals {
  double stationarity = 0.0;
  double complementarity = 0.0;
  double primal = 0.0;
};

/// KKT residuals of a candidate primal-dual pair in the program's own units.
inline KktResiduals kkt_residuals(const ConvexProgram& prog, const Solution& sol) {
  KktResiduals r;
  const VectorXd& x = sol.x;
  const VectorXd grad = prog.P * x + prog.q + prog.A_eq.transpose() * sol.y_eq + sol.y_box;
  r.stationarity = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  if (prog.b_eq.size()) r.primal = (prog.A_eq * x - prog.b_eq).lpNorm<Eigen::Infinity>();

  std::vector<bool> on_disk(static_cast<std::size_t>(x.size()), false);
  for (const auto& d : prog.disks) {
    on_disk[static_cast<std::size_t>(d.i)] = on_disk[static_cast<std::size_t>(d.j)] = true;
    const Eigen::Vector2d xp(x(d.i), x(d.j));
    const Eigen::Vector2d yp(sol.y_box(d.i), sol.y_box(d.j));
    const double nx = xp.norm();
    r.primal = std::max(r.primal, std::max(0.0, nx - d.radius));
    double c = yp.norm() * std::abs(d.radius - nx);
    if (nx > 0.0) {
      // Outward normal cone: y must be a nonnegative multiple of x.
      const double t = std::max(0.0, yp.dot(xp) / (nx * nx));
      c = std::max(c, (yp - t * xp).norm());
    } else {
      c = std::max(c, yp.norm());
    }
    r.complementarity = std::max(r.complementarity, c);
  }
  for (Index j = 0; j < x.size(); ++j) {
    if (on_disk[static_cast<std::size_t>(j)]) continue;
    const double lo = prog.lower(j), hi = prog.upper(j), y = sol.y_box(j);
    r.primal = std::max({r.primal, lo - x(j), x(j) - hi});
    if (lo == hi) continue;
    double c = 0.0;
    if (y < 0.0) c = std::isinf(lo) ? -y : -y * std::abs(x(j) - lo);
    if (y > 0.0) c = std::isinf(hi) ? y : y * std::abs(hi - x(j));
    r.complementarity = std::max(r.complementarity, c);
  }
  return r;
}

class AdmmSolver {
 public:
  explicit AdmmSolver(ConvexProgram program, Settings settings = {})
      : prog_(std::move(program)), set_(settings) {
    prog_.validate();
    n_ = prog_.size();
    m_eq_ = prog_.b_eq.size();
    m_ = m_eq_ + n_;
    build_constraint_matrix();
    equilibrate();
    on_disk_.assign(static_cast<std::size_t>(n_), -1);
    for (std::size_t k = 0; k < prog_.disks.size(); ++k) {
      on_disk_[static_cast<std::size_t>(prog_.disks[k].i)] = static_cast<int>(k);
      on_disk_[static_cast<std::size_t>(prog_.disks[k].j)] = static_cast<int>(k);
    }
    rho_scalar_ = set_.rho;
    set_rho_vector();
    factorize();
    x_ = VectorXd::Zero(n_);
    z_ = VectorXd::Zero(m_);
    y_ = VectorXd::Zero(m_);
  }

  const ConvexProgram& program() const { return prog_; }
  Settings& settings() { return set_; }

  /// Replaces q; the factorisation and warm-start state are kept.
  void set_linear_term(const VectorXd& q) {
    require(q.size() == n_, ErrorKind::contract, "linear term has wrong size");
    prog_.q = q;
    q_bar_ = cost_scale_ * (D_.asDiagonal() * q);
  }

  void reset() {
    x_.setZero();
    z_.setZero();
    y_.setZero();
  }

  Solution solve() {
    Solution sol;
    VectorXd x_tilde(n_), z_tilde(m_), z_hat(m_), y_prev(m_), rhs(n_ + m_), kkt_sol(n_ + m_);
    Index consecutive_certificate = 0;
    Index checks = 0;
    Index it = 0;
    bool done = false;
    for (it = 1; it <= set_.max_iter; ++it) {
      y_prev = y_;
      rhs.head(n_) = set_.sigma * x_ - q_bar_;
      rhs.tail(m_) = z_ - y_.cwiseQuotient(rho_);
      kkt_sol = ldlt_.solve(rhs);
      x_tilde = kkt_sol.head(n_);
      z_tilde = z_ + (kkt_sol.tail(m_) - y_).cwiseQuotient(rho_);

      x_ = set_.relaxation * x_tilde + (1.0 - set_.relaxation) * x_;
      z_hat = set_.relaxation * z_tilde + (1.0 - set_.relaxation) * z_;
      z_ = z_hat + y_.cwiseQuotient(rho_);
      project(z_);
      y_ += rho_.cwiseProduct(z_hat - z_);

      if (it % set_.check_every != 0 && it != set_.max_iter) continue;
      ++checks;
      compute_residuals(sol);
      if (sol.primal_residual <= set_.eps_pri && sol.dual_residual <= set_.eps_dual) {
        sol.status = Status::optimal;
        done = true;
        break;
      }
      if (infeasibility_certificate(y_ - y_prev))
        consecutive_certificate += set_.check_every;
      else
        consecutive_certificate = 0;
      if (consecutive_certificate >= set_.infeasibility_window) {
        sol.status = Status::infeasible;
        done = true;
        break;
      }
      if (checks % set_.adapt_every == 0) adapt_rho();
    }
    sol.iterations = std::min(it, set_.max_iter);
    if (!done) sol.status = Status::max_iter;
    extract(sol);
    if (sol.status == Status::optimal && set_.polish) polish(sol);
    sol.objective = 0.5 * sol.x.dot(prog_.P * sol.x) + prog_.q.dot(sol.x) + prog_.constant;
    return sol;
  }

 private:
  void build_constraint_matrix() {
    std::vector<Triplet> t;
    for (Index k = 0; k < prog_.A_eq.outerSize(); ++k)
      for (SparseMatrix::InnerIterator itr(prog_.A_eq, k); itr; ++itr) t.emplace_back(itr.row(), itr.col(), itr.value());
    for (Index j = 0; j < n_; ++j) t.emplace_back(m_eq_ + j, j, 1.0);
    A_.resize(m_, n_);
    A_.setFromTriplets(t.begin(), t.end());
  }

  static double col_inf_norm(const SparseMatrix& M, Index j) {
    double v = 0.0;
    for (SparseMatrix::InnerIterator itr(M, j); itr; ++itr) v = std::max(v, std::abs(itr.value()));
    return v;
  }

  void equilibrate() {
    D_ = VectorXd::Ones(n_);
    E_ = VectorXd::Ones(m_);
    SparseMatrix Pb = prog_.P;
    SparseMatrix Ab = A_;
    for (Index k = 0; k < set_.scaling_iters; ++k) {
      const SparseMatrix At = Ab.transpose();
      VectorXd dv(n_), de(m_);
      for (Index j = 0; j < n_; ++j) {
        const double nrm = std::max(col_inf_norm(Pb, j), col_inf_norm(Ab, j));
        dv(j) = nrm > 1e-12 ? std::clamp(1.0 / std::sqrt(nrm), 1e-4, 1e4) : 1.0;
      }
      for (Index i = 0; i < m_; ++i) {
        const double nrm = col_inf_norm(At, i);
        de(i) = nrm > 1e-12 ? std::clamp(1.0 / std::sqrt(nrm), 1e-4, 1e4) : 1.0;
      }
      for (const auto& d : prog_.disks) {
        const double g = std::sqrt(de(m_eq_ + d.i) * de(m_eq_ + d.j));
        de(m_eq_ + d.i) = de(m_eq_ + d.j) = g;
      }
      Pb = dv.asDiagonal() * Pb * dv.asDiagonal();
      Ab = de.asDiagonal() * Ab * dv.asDiagonal();
      D_ = D_.cwiseProduct(dv);
      E_ = E_.cwiseProduct(de);
    }
    double pmean = 0.0;
    for (Index j = 0; j < n_; ++j) pmean += col_inf_norm(Pb, j);
    pmean /= static_cast<double>(std::max<Index>(n_, 1));
    const VectorXd qs = D_.asDiagonal() * prog_.q;
    const double qn = qs.size() ? qs.lpNorm<Eigen::Infinity>() : 0.0;
    const double scale = std::max(pmean, qn);
    cost_scale_ = scale > 1e-12 ? std::clamp(1.0 / scale, 1e-4, 1e4) : 1.0;

    P_bar_ = cost_scale_ * Pb;
    A_bar_ = Ab;
    A_bar_t_ = A_bar_.transpose();
    q_bar_ = cost_scale_ * qs;
    b_bar_ = E_.head(m_eq_).cwiseProduct(prog_.b_eq);
    lo_bar_.resize(n_);
    hi_bar_.resize(n_);
    for (Index j = 0; j < n_; ++j) {
      const double e = E_(m_eq_ + j);
      lo_bar_(j) = std::isinf(prog_.lower(j)) ? prog_.lower(j) : e * prog_.lower(j);
      hi_bar_(j) = std::isinf(prog_.upper(j)) ? prog_.upper(j) : e * prog_.upper(j);
    }
    radius_bar_.clear();
    for (const auto& d : prog_.disks) radius_bar_.push_back(E_(m_eq_ + d.i) * d.radius);
  }

  void set_rho_vector() {
    rho_.resize(m_);
    for (Index i = 0; i < m_; ++i) {
      if (i < m_eq_) {
        rho_(i) = 1e3 * rho_scalar_;
        continue;
      }
      const Index j = i - m_eq_;
      const bool free_row = on_disk_[static_cast<std::size_t>(j)] < 0 && std::isinf(lo_bar_(j)) && std::isinf(hi_bar_(j));
      const bool fixed_row = lo_bar_(j) == hi_bar_(j);
      rho_(i) = free_row ? 1e-6 : (fixed_row ? 1e3 * rho_scalar_ : rho_scalar_);
    }
  }

  void factorize() {
    std::vector<Triplet> t;
    for (Index k = 0; k < P_bar_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator itr(P_bar_, k); itr; ++itr) t.emplace_back(itr.row(), itr.col(), itr.value());
    for (Index j = 0; j < n_; ++j) t.emplace_back(j, j, set_.sigma);
    for (Index k = 0; k < A_bar_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator itr(A_bar_, k); itr; ++itr) {
        t.emplace_back(n_ + itr.row(), itr.col(), itr.value());
        t.emplace_back(itr.col(), n_ + itr.row(), itr.value());
      }
    for (Index i = 0; i < m_; ++i) t.emplace_back(n_ + i, n_ + i, -1.0 / rho_(i));
    SparseMatrix K(n_ + m_, n_ + m_);
    K.setFromTriplets(t.begin(), t.end());
    ldlt_.compute(K);
    require(ldlt_.info() == Eigen::Success, ErrorKind::solver, "KKT factorisation failed");
  }

  void project(VectorXd& z) const {
    z.head(m_eq_) = b_bar_;
    for (Index j = 0; j < n_; ++j)
      if (on_disk_[static_cast<std::size_t>(j)] < 0) z(m_eq_ + j) = std::clamp(z(m_eq_ + j), lo_bar_(j), hi_bar_(j));
    for (std::size_t k = 0; k < prog_.disks.size(); ++k) {
      const auto& d = prog_.disks[k];
      double& a = z(m_eq_ + d.i);
      double& b = z(m_eq_ + d.j);
      const double nrm = std::hypot(a, b);
      if (nrm > radius_bar_[k]) {
        const double s = radius_bar_[k] / nrm;
        a *= s;
        b *= s;
      }
    }
  }

  void compute_residuals(Solution& sol) const {
    const VectorXd Ax = A_bar_ * x_;
    const VectorXd Px = P_bar_ * x_;
    const VectorXd Aty = A_bar_t_ * y_;
    const VectorXd einv = E_.cwiseInverse();
    const VectorXd dinv = D_.cwiseInverse();
    const double prim = (einv.cwiseProduct(Ax - z_)).lpNorm<Eigen::Infinity>();
    const double prim_mag =
        std::max((einv.cwiseProduct(Ax)).lpNorm<Eigen::Infinity>(), (einv.cwiseProduct(z_)).lpNorm<Eigen::Infinity>());
    const double inv_c = 1.0 / cost_scale_;
    const double dual = inv_c * (dinv.cwiseProduct(Px + q_bar_ + Aty)).lpNorm<Eigen::Infinity>();
    const double dual_mag = inv_c * std::max({(dinv.cwiseProduct(Px)).lpNorm<Eigen::Infinity>(),
                                              (dinv.cwiseProduct(Aty)).lpNorm<Eigen::Infinity>(),
                                              (dinv.cwiseProduct(q_bar_)).lpNorm<Eigen::Infinity>()});
    sol.primal_residual_raw = prim;
    sol.dual_residual_raw = dual;
    sol.primal_residual = prim / (1.0 + prim_mag);
    sol.dual_residual = dual / (1.0 + dual_mag);
  }

  bool infeasibility_certificate(const VectorXd& dy_bar) const {
    const VectorXd dy = E_.cwiseProduct(dy_bar);  // unscaled up to the cost factor
    const double nrm = dy.lpNorm<Eigen::Infinity>();
    if (nrm < 1e-12) return false;
    const VectorXd aty = D_.cwiseInverse().cwiseProduct(A_bar_t_ * dy_bar);
    if (aty.lpNorm<Eigen::Infinity>() > set_.eps_infeasible * nrm) return false;
    double support = prog_.b_eq.dot(dy.head(m_eq_));
    const double tiny = set_.eps_infeasible * nrm;
    for (Index j = 0; j < n_; ++j) {
      if (on_disk_[static_cast<std::size_t>(j)] >= 0) continue;
      const double v = dy(m_eq_ + j);
      if (v > tiny) {
        if (std::isinf(prog_.upper(j))) return false;
        support += prog_.upper(j) * v;
      } else if (v < -tiny) {
        if (std::isinf(prog_.lower(j))) return false;
        support += prog_.lower(j) * v;
      }
    }
    for (const auto& d : prog_.disks) support += d.radius * std::hypot(dy(m_eq_ + d.i), dy(m_eq_ + d.j));
    return support < -set_.eps_infeasible * nrm;
  }

  void adapt_rho() {
    const VectorXd Ax = A_bar_ * x_;
    const VectorXd Px = P_bar_ * x_;
    const VectorXd Aty = A_bar_t_ * y_;
    const double prim = (Ax - z_).lpNorm<Eigen::Infinity>() /
                        std::max({Ax.lpNorm<Eigen::Infinity>(), z_.lpNorm<Eigen::Infinity>(), 1e-12});
    const double dual = (Px + q_bar_ + Aty).lpNorm<Eigen::Infinity>() /
                        std::max({Px.lpNorm<Eigen::Infinity>(), Aty.lpNorm<Eigen::Infinity>(),
                                  q_bar_.lpNorm<Eigen::Infinity>(), 1e-12});
    if (dual <= 0.0 || prim <= 0.0) return;
    const double proposed = std::clamp(rho_scalar_ * std::sqrt(prim / dual), 1e-6, 1e6);
    if (proposed > 5.0 * rho_scalar_ || proposed < 0.2 * rho_scalar_) {
      rho_scalar_ = proposed;
      set_rho_vector();
      factorize();
    }
  }

  void extract(Solution& sol) const {
    sol.x = D_.cwiseProduct(x_);
    const VectorXd y = E_.cwiseProduct(y_) / cost_scale_;
    sol.y_eq = y.head(m_eq_);
    sol.y_box = y.tail(n_);
  }

  // Newton's method on the KKT system of the guessed active set: equality
  // rows, boxes at a bound, and disks on their boundary (as circles). The
  // result replaces the ADMM iterate when its residuals are no worse.
  void polish(Solution& sol) {
    std::vector<Index> rows;    // rows of A_bar_ treated as equalities
    std::vector<double> rhs_b;  // their right-hand sides
    std::vector<int> side;      // 0 equality, -1 lower, +1 upper
    for (Index i = 0; i < m_eq_; ++i) {
      rows.push_back(i);
      rhs_b.push_back(b_bar_(i));
      side.push_back(0);
    }
    for (Index j = 0; j < n_; ++j) {
      if (on_disk_[static_cast<std::size_t>(j)] >= 0) continue;
      const Index i = m_eq_ + j;
      if (lo_bar_(j) == hi_bar_(j)) {
        rows.push_back(i);
        rhs_b.push_back(lo_bar_(j));
        side.push_back(0);
      } else if (!std::isinf(lo_bar_(j)) && z_(i) - lo_bar_(j) < -y_(i)) {
        rows.push_back(i);
        rhs_b.push_back(lo_bar_(j));
        side.push_back(-1);
      } else if (!std::isinf(hi_bar_(j)) && hi_bar_(j) - z_(i) < y_(i)) {
        rows.push_back(i);
        rhs_b.push_back(hi_bar_(j));
        side.push_back(1);
      }
    }
    std::vector<std::size_t> circles;  // active disks
    for (std::size_t k = 0; k < prog_.disks.size(); ++k) {
      const auto& d = prog_.disks[k];
      const double zn = std::hypot(z_(m_eq_ + d.i), z_(m_eq_ + d.j));
      const double yn = std::hypot(y_(m_eq_ + d.i), y_(m_eq_ + d.j));
      if (zn >= radius_bar_[k] * (1.0 - 1e-6) && yn > 0.0) circles.push_back(k);
    }
    const auto ma = static_cast<Index>(rows.size());
    const auto mc = static_cast<Index>(circles.size());
    const Index dim = n_ + ma + mc;

    std::vector<Triplet> ta;
    {
      std::vector<Index> pos(static_cast<std::size_t>(m_), -1);
      for (Index r = 0; r < ma; ++r) pos[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])] = r;
      for (Index k = 0; k < A_bar_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator itr(A_bar_, k); itr; ++itr)
          if (const Index r = pos[static_cast<std::size_t>(itr.row())]; r >= 0) ta.emplace_back(r, itr.col(), itr.value());
    }
    const SparseMatrix A_act = [&] {
      SparseMatrix M(ma, n_);
      M.setFromTriplets(ta.begin(), ta.end());
      return M;
    }();
    VectorXd b_act(ma);
    for (Index r = 0; r < ma; ++r) b_act(r) = rhs_b[static_cast<std::size_t>(r)];
    // Disk rows are diagonal in A_bar_: z_i = s_i x_i.
    auto coef = [&](Index j) { return A_bar_.coeff(m_eq_ + j, j); };

    // Unknowns: x, multipliers of the active rows, and t_k >= 0 with the disk
    // row multipliers equal to t_k times the disk point.
    VectorXd s(dim);
    s.head(n_) = x_;
    for (Index r = 0; r < ma; ++r) s(n_ + r) = y_(rows[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < mc; ++c) {
      const auto& d = prog_.disks[circles[static_cast<std::size_t>(c)]];
      const Eigen::Vector2d zp(z_(m_eq_ + d.i), z_(m_eq_ + d.j)), yp(y_(m_eq_ + d.i), y_(m_eq_ + d.j));
      s(n_ + ma + c) = std::max(0.0, yp.dot(zp) / zp.squaredNorm());
    }

    auto residual = [&](const VectorXd& v) {
      const VectorXd x = v.head(n_);
      VectorXd F(dim);
      F.head(n_) = P_bar_ * x + q_bar_ + A_act.transpose() * v.segment(n_, ma);
      F.segment(n_, ma) = A_act * x - b_act;
      for (Index c = 0; c < mc; ++c) {
        const auto k = circles[static_cast<std::size_t>(c)];
        const auto& d = prog_.disks[k];
        const double si = coef(d.i), sj = coef(d.j), t = v(n_ + ma + c);
        F(d.i) += t * si * si * x(d.i);
        F(d.j) += t * sj * sj * x(d.j);
        const double zi = si * x(d.i), zj = sj * x(d.j);
        F(n_ + ma + c) = 0.5 * (zi * zi + zj * zj - radius_bar_[k] * radius_bar_[k]);
      }
      return F;
    };
    auto jacobian = [&](const VectorXd& v, double reg) {
      std::vector<Triplet> t;
      for (Index k = 0; k < P_bar_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator itr(P_bar_, k); itr; ++itr) t.emplace_back(itr.row(), itr.col(), itr.value());
      for (Index j = 0; j < n_; ++j) t.emplace_back(j, j, reg);
      for (const auto& e : ta) {
        t.emplace_back(n_ + e.row(), e.col(), e.value());
        t.emplace_back(e.col(), n_ + e.row(), e.value());
      }
      for (Index r = 0; r < ma; ++r) t.emplace_back(n_ + r, n_ + r, -reg);
      for (Index c = 0; c < mc; ++c) {
        const auto& d = prog_.disks[circles[static_cast<std::size_t>(c)]];
        const double tc = v(n_ + ma + c);
        const Index col = n_ + ma + c;
        for (Index j : {d.i, d.j}) {
          const double sj = coef(j);
          t.emplace_back(j, j, tc * sj * sj);
          t.emplace_back(j, col, sj * sj * v(j));
          t.emplace_back(col, j, sj * sj * v(j));
        }
        t.emplace_back(col, col, -reg);
      }
      SparseMatrix J(dim, dim);
      J.setFromTriplets(t.begin(), t.end());
      return J;
    };

    Eigen::SparseLU<SparseMatrix> lu;
    for (int newton = 0; newton < 20; ++newton) {
      const VectorXd F = residual(s);
      if (F.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + s.lpNorm<Eigen::Infinity>())) break;
      const SparseMatrix J = jacobian(s, 0.0);
      lu.compute(jacobian(s, 1e-9));
      if (lu.info() != Eigen::Success) return;
      VectorXd step = lu.solve(-F);
      for (int k = 0; k < 3; ++k) step += lu.solve(-F - J * step);
      if (!step.allFinite()) return;
      s += step;
    }
    if (!s.allFinite()) return;

    const VectorXd xp = s.head(n_);
    VectorXd yp = VectorXd::Zero(m_);
    const double ymag = std::max(1.0, s.tail(ma + mc).lpNorm<Eigen::Infinity>());
    for (Index r = 0; r < ma; ++r) {
      const double v = s(n_ + r);
      const int sd = side[static_cast<std::size_t>(r)];
      if ((sd < 0 && v > 1e-9 * ymag) || (sd > 0 && v < -1e-9 * ymag)) return;  // wrong dual sign
      yp(rows[static_cast<std::size_t>(r)]) = v;
    }
    for (Index c = 0; c < mc; ++c) {
      const double t = s(n_ + ma + c);
      if (t < -1e-9 * ymag) return;
      const auto& d = prog_.disks[circles[static_cast<std::size_t>(c)]];
      yp(m_eq_ + d.i) = t * coef(d.i) * xp(d.i);
      yp(m_eq_ + d.j) = t * coef(d.j) * xp(d.j);
    }
    VectorXd zp = A_bar_ * xp;
    project(zp);

    const VectorXd x_keep = x_, z_keep = z_, y_keep = y_;
    x_ = xp;
    z_ = zp;
    y_ = yp;
    Solution cand;
    compute_residuals(cand);
    const bool better = cand.primal_residual <= std::max(sol.primal_residual, 1e-12) &&
                        cand.dual_residual <= std::max(sol.dual_residual, 1e-12);
    if (!better) {
      x_ = x_keep;
      z_ = z_keep;
      y_ = y_keep;
      return;
    }
    cand.iterations = sol.iterations;
    cand.status = sol.status;
    cand.polished = true;
    sol = cand;
    extract(sol);
  }

  ConvexProgram prog_;
  Settings set_;
  Index n_ = 0, m_eq_ = 0, m_ = 0;
  SparseMatrix A_;  // [A_eq; I]
  VectorXd D_, E_;
  double cost_scale_ = 1.0;
  SparseMatrix P_bar_, A_bar_, A_bar_t_;
  VectorXd q_bar_, b_bar_, lo_bar_, hi_bar_;
  std::vector<double> radius_bar_;
  std::vector<int> on_disk_;
  double rho_scalar_ = 0.1;
  VectorXd rho_;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  VectorXd x_, z_, y_;
};

inline Solution solve(const ConvexProgram& program, const Settings& settings = {}) {
  AdmmSolver solver(program, settings);
  return solver.solve();
}

}  // namespace flexmarket::qp
