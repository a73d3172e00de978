#pragma once

// Independent reference computations, written from the definitions and
// kept apart from the library code paths they check.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Solves (Z^T V Z) theta = Z^T V y by Gaussian elimination with partial
// pivoting in long double.
inline std::vector<long double> normal_equations(const Eigen::MatrixXd& z, const Eigen::VectorXd& w,
                                                 const Eigen::VectorXd& y) {
  const int p = static_cast<int>(z.cols());
  std::vector<std::vector<long double>> a(p, std::vector<long double>(p + 1, 0.0L));
  for (int r = 0; r < z.rows(); ++r)
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < p; ++j) a[i][j] += (long double)w(r) * z(r, i) * z(r, j);
      a[i][p] += (long double)w(r) * z(r, i) * y(r);
    }
  for (int c = 0; c < p; ++c) {
    int piv = c;
    for (int r = c + 1; r < p; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (int r = c + 1; r < p; ++r) {
      const long double f = a[r][c] / a[c][c];
      for (int k = c; k <= p; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<long double> x(p);
  for (int i = p - 1; i >= 0; --i) {
    long double s = a[i][p];
    for (int k = i + 1; k < p; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

// Breslow-ties log partial likelihood, straight from the product over
// event times with risk sets {k : t_k >= t_i}.
inline long double log_partial_likelihood(const std::vector<double>& t, const std::vector<bool>& e,
                                          const Eigen::MatrixXd& z, const Eigen::VectorXd& beta) {
  long double ll = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!e[i]) continue;
    long double risk = 0;
    for (std::size_t k = 0; k < t.size(); ++k)
      if (t[k] >= t[i]) risk += std::exp(static_cast<long double>(z.row(static_cast<Eigen::Index>(k)).dot(beta)));
    ll += z.row(static_cast<Eigen::Index>(i)).dot(beta) - std::log(risk);
  }
  return ll;
}

// Grid maximizer of the one-covariate partial likelihood.
inline double cox_grid_search(const std::vector<double>& t, const std::vector<bool>& e,
                              const Eigen::MatrixXd& z, double lo, double hi, double step) {
  double best_b = lo;
  long double best = -INFINITY;
  for (double b = lo; b <= hi; b += step) {
    const long double v = log_partial_likelihood(t, e, z, Eigen::VectorXd::Constant(1, b));
    if (v > best) best = v, best_b = b;
  }
  return best_b;
}

}  // namespace oracle
