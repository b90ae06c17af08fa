#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

// Central finite-difference gradient checking used across the test suites.
// Perturbs every entry of every parameter matrix and compares against the
// analytic gradient at the stated relative tolerance.

namespace setrl::test {

struct FdReport {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline double rel_err(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// f() evaluates the scalar objective from the current parameter values;
// grads[i] must match params[i]'s shape.
inline FdReport fd_check(std::vector<Eigen::MatrixXd*> params,
                         const std::function<double()>& f,
                         const std::vector<Eigen::MatrixXd>& grads,
                         double step = 1e-5, double floor = 1e-5) {
  FdReport rep;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::MatrixXd& P = *params[p];
    for (int i = 0; i < P.rows(); ++i) {
      for (int j = 0; j < P.cols(); ++j) {
        const double orig = P(i, j);
        P(i, j) = orig + step;
        const double fp = f();
        P(i, j) = orig - step;
        const double fm = f();
        P(i, j) = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        rep.max_rel_err = std::max(rep.max_rel_err, rel_err(grads[p](i, j), numeric, floor));
        ++rep.checked;
      }
    }
  }
  return rep;
}

}  // namespace setrl::test
