#pragma once

// Weighted least squares and limited-memory quasi-Newton minimization.
// Both kernels are templated on the scalar type so the same code runs in
// double and in extended precision.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/error.hpp"

namespace sdtr {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct WlsProblem {
  MatrixX<Scalar> design;   // Z
  VectorX<Scalar> weights;  // diagonal of V
  VectorX<Scalar> response;
};

// Relative pivot threshold below which a column is declared dependent.
template <typename Scalar>
Scalar default_rank_tolerance() {
  using std::pow;
  return pow(Eigen::NumTraits<Scalar>::epsilon(), Scalar(0.6));
}

class RankDeficientWls : public RankDeficientError {
 public:
  RankDeficientWls(const std::string& what, std::vector<double> null_direction)
      : RankDeficientError(what), null_direction_(std::move(null_direction)) {}
  const std::vector<double>& null_direction() const noexcept { return null_direction_; }

 private:
  std::vector<double> null_direction_;
};

// Factorizes sqrt(V) Z once with column-pivoted Householder QR so repeated
// solves against new responses cost one Q^T application and a triangular
// solve.
template <typename Scalar>
class WlsSolver {
 public:
  WlsSolver(const MatrixX<Scalar>& design, const VectorX<Scalar>& weights,
            Scalar rank_tolerance = default_rank_tolerance<Scalar>()) {
    if (design.rows() != weights.size()) {
      throw DataError("design has " + std::to_string(design.rows()) + " rows but " +
                      std::to_string(weights.size()) + " weights");
    }
    if ((weights.array() < Scalar(0)).any()) throw DataError("negative regression weight");
    sqrt_w_ = weights.array().sqrt().matrix();
    qr_.setThreshold(rank_tolerance);
    qr_.compute(sqrt_w_.asDiagonal() * design);
    const Eigen::Index p = design.cols();
    if (qr_.rank() < p) throw deficiency(p);
  }

  VectorX<Scalar> solve(const VectorX<Scalar>& response) const {
    if (response.size() != sqrt_w_.size()) throw DataError("response length mismatch");
    return qr_.solve((sqrt_w_.array() * response.array()).matrix());
  }

  Eigen::Index cols() const { return qr_.cols(); }

 private:
  RankDeficientWls deficiency(Eigen::Index p) const {
    const Eigen::Index r = qr_.rank();
    const MatrixX<Scalar> R = qr_.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    VectorX<Scalar> v_perm = VectorX<Scalar>::Zero(p);
    v_perm(r) = Scalar(1);
    if (r > 0) {
      v_perm.head(r) = -R.topLeftCorner(r, r).template triangularView<Eigen::Upper>().solve(
          R.block(0, r, r, 1));
    }
    VectorX<Scalar> v = qr_.colsPermutation() * v_perm;
    v /= v.cwiseAbs().maxCoeff();
    std::vector<double> dir(static_cast<std::size_t>(p));
    std::ostringstream msg;
    msg << "weighted design is rank deficient (rank " << r << " of " << p << "); null direction:";
    for (Eigen::Index k = 0; k < p; ++k) {
      dir[static_cast<std::size_t>(k)] = static_cast<double>(v(k));
      using std::abs;
      if (abs(v(k)) > Scalar(1e-8)) msg << " [" << k << "]=" << static_cast<double>(v(k));
    }
    return RankDeficientWls(msg.str(), std::move(dir));
  }

  VectorX<Scalar> sqrt_w_;
  Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr_;
};

// argmin_theta sum_i w_i (y_i - z_i^T theta)^2.
template <typename Scalar>
VectorX<Scalar> solve_wls(const WlsProblem<Scalar>& problem) {
  return WlsSolver<Scalar>(problem.design, problem.weights).solve(problem.response);
}

// Columns of the design that carry any weight; structurally zero columns
// (a covariate that is constant zero at one stage) are excluded by callers.
template <typename Scalar>
std::vector<Eigen::Index> weighted_nonzero_columns(const MatrixX<Scalar>& design,
                                                   const VectorX<Scalar>& weights) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index c = 0; c < design.cols(); ++c) {
    if (((design.col(c).array() != Scalar(0)) && (weights.array() > Scalar(0))).any()) {
      cols.push_back(c);
    }
  }
  return cols;
}

struct MinimizeOptions {
  double gradient_tolerance = 1e-6;
  int max_iterations = 500;
  double l1_weight = 0.0;  // tau_n
  int history_size = 10;
  // Coordinates subject to the L1 penalty; empty means all.
  std::vector<bool> l1_mask;
  double sufficient_decrease = 1e-4;
  int max_line_search = 60;
};

template <typename Scalar>
struct MinimizeResult {
  VectorX<Scalar> argmin;
  Scalar value{};  // smooth part plus penalty
  int iterations = 0;
  bool converged = false;
  Scalar optimality{};  // sup-norm of the (pseudo-)gradient at argmin
  std::vector<Scalar> value_trace;  // objective at every accepted iterate
};

namespace detail {

template <typename Scalar>
std::string describe_point(const VectorX<Scalar>& x) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << static_cast<double>(x(i));
  os << ")";
  return os.str();
}

}  // namespace detail

// Limited-memory BFGS with backtracking on the sufficient-decrease
// condition. With l1_weight > 0 this is the orthant-wise variant: the
// search uses the pseudo-gradient of f + l1 * |x|_1, directions are
// restricted to the orthant they point into, and trial points are
// projected back onto the current orthant.
//
// `objective(x, grad)` returns f(x) and writes the gradient into grad.
template <typename Scalar, typename Objective>
MinimizeResult<Scalar> minimize(Objective&& objective, VectorX<Scalar> start,
                                const MinimizeOptions& opts) {
  using Vec = VectorX<Scalar>;
  using std::abs;
  const Eigen::Index n = start.size();
  const Scalar lambda = static_cast<Scalar>(opts.l1_weight);
  if (!(opts.gradient_tolerance > 0)) throw DataError("gradient tolerance must be positive");
  if (lambda < Scalar(0)) throw DataError("l1 weight must be nonnegative");
  if (!opts.l1_mask.empty() && static_cast<Eigen::Index>(opts.l1_mask.size()) != n) {
    throw DataError("l1 mask length mismatch");
  }
  auto penalized = [&](Eigen::Index i) {
    return lambda > Scalar(0) && (opts.l1_mask.empty() || opts.l1_mask[static_cast<std::size_t>(i)]);
  };
  auto penalty = [&](const Vec& x) {
    Scalar s(0);
    for (Eigen::Index i = 0; i < n; ++i)
      if (penalized(i)) s += abs(x(i));
    return lambda * s;
  };
  auto pseudo_gradient = [&](const Vec& x, const Vec& g) {
    Vec pg = g;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!penalized(i)) continue;
      if (x(i) > Scalar(0)) {
        pg(i) = g(i) + lambda;
      } else if (x(i) < Scalar(0)) {
        pg(i) = g(i) - lambda;
      } else if (g(i) + lambda < Scalar(0)) {
        pg(i) = g(i) + lambda;
      } else if (g(i) - lambda > Scalar(0)) {
        pg(i) = g(i) - lambda;
      } else {
        pg(i) = Scalar(0);
      }
    }
    return pg;
  };
  auto finite = [](Scalar v, const Vec& g) {
    using std::isfinite;
    return isfinite(v) && g.allFinite();
  };

  MinimizeResult<Scalar> res;
  Vec x = std::move(start);
  Vec g(n);
  Scalar f = objective(x, g);
  if (!finite(f, g)) {
    throw NumericalError("objective or gradient not finite at " + detail::describe_point(x));
  }
  Scalar F = f + penalty(x);
  res.value_trace.push_back(F);

  std::deque<Vec> s_hist, y_hist;
  std::deque<Scalar> rho_hist;
  Vec pg = pseudo_gradient(x, g);

  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    if (pg.cwiseAbs().maxCoeff() <= static_cast<Scalar>(opts.gradient_tolerance)) {
      res.converged = true;
      break;
    }

    // Two-loop recursion on the pseudo-gradient.
    Vec d = -pg;
    {
      const std::size_t m = s_hist.size();
      std::vector<Scalar> alpha(m);
      for (std::size_t k = m; k-- > 0;) {
        alpha[k] = rho_hist[k] * s_hist[k].dot(d);
        d -= alpha[k] * y_hist[k];
      }
      if (m > 0) {
        d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      } else {
        d /= std::max(pg.norm(), Scalar(1));
      }
      for (std::size_t k = 0; k < m; ++k) {
        const Scalar beta = rho_hist[k] * y_hist[k].dot(d);
        d += (alpha[k] - beta) * s_hist[k];
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (penalized(i) && d(i) * pg(i) >= Scalar(0)) d(i) = Scalar(0);
    }
    if (d.dot(pg) >= Scalar(0)) {
      // Not a descent direction; fall back to steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -pg / std::max(pg.norm(), Scalar(1));
    }

    Vec orthant(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      orthant(i) = x(i) != Scalar(0) ? (x(i) > Scalar(0) ? Scalar(1) : Scalar(-1))
                                     : (pg(i) < Scalar(0) ? Scalar(1) : Scalar(-1));
    }

    Scalar step(1);
    bool accepted = false;
    Vec x_new(n), g_new(n);
    Scalar f_new(0), F_new(0);
    for (int ls = 0; ls < opts.max_line_search; ++ls, step *= Scalar(0.5)) {
      x_new = x + step * d;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (penalized(i) && x_new(i) * orthant(i) < Scalar(0)) x_new(i) = Scalar(0);
      }
      f_new = objective(x_new, g_new);
      if (!finite(f_new, g_new)) continue;
      F_new = f_new + penalty(x_new);
      if (F_new <= F + static_cast<Scalar>(opts.sufficient_decrease) * pg.dot(x_new - x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    Vec s = x_new - x;
    Vec y = g_new - g;
    const Scalar sy = s.dot(y);
    if (sy > Eigen::NumTraits<Scalar>::epsilon() * y.squaredNorm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(Scalar(1) / sy);
      if (static_cast<int>(s_hist.size()) > opts.history_size) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    F = F_new;
    res.value_trace.push_back(F);
    pg = pseudo_gradient(x, g);
  }
  if (!res.converged &&
      pg.cwiseAbs().maxCoeff() <= static_cast<Scalar>(opts.gradient_tolerance)) {
    res.converged = true;
  }

  res.argmin = std::move(x);
  res.value = F;
  res.iterations = iter;
  res.optimality = pg.cwiseAbs().maxCoeff();
  return res;
}

}  // namespace sdtr
