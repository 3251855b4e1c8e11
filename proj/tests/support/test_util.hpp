#ifndef TGGM_TESTS_SUPPORT_TEST_UTIL_HPP
#define TGGM_TESTS_SUPPORT_TEST_UTIL_HPP

#include <Eigen/Dense>

#include "tggm/random.hpp"
#include "tggm/truncnorm.hpp"

namespace tggm::test {

// Fine-grained ratio table for checks that differentiate through the
// kernel (finite differences, tight moment agreement); the default
// 1e-3-step table bounds kernel accuracy around 1e-6.
inline const tggm::RatioTable& fine_table() {
  static const tggm::RatioTable t = tggm::build_ratio_table(-40.0, 10.0, 1e-5);
  return t;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1e-300, std::abs(want));
}

// Frobenius-relative distance between gradient blocks.
inline double rel_frob(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, tggm::RandomStream& rng,
                                     double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

inline Eigen::VectorXd random_vector(int n, tggm::RandomStream& rng,
                                     double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

}  // namespace tggm::test

#endif
