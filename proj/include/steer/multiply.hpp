#pragma once

#include <cfloat>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace steer::scenting {

inline constexpr double kMixFloor = 1e-12;

/// q(w) ∝ p1(w)^lambda1 * p2(w)^lambda2, both inputs floored at 1e-12.
/// Throws std::domain_error when the normalizer underflows.
inline Eigen::VectorXd multiply_mix(const Eigen::Ref<const Eigen::VectorXd>& base,
                                    const Eigen::Ref<const Eigen::VectorXd>& style, double lambda1, double lambda2) {
  if (base.size() != style.size()) throw std::invalid_argument("distributions cover different vocabularies");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw std::invalid_argument("mixing weights must be non-negative");
  Eigen::VectorXd q(base.size());
  for (Eigen::Index w = 0; w < base.size(); ++w) {
    q[w] = std::pow(std::max(base[w], kMixFloor), lambda1) * std::pow(std::max(style[w], kMixFloor), lambda2);
  }
  const double z = q.sum();
  if (!std::isfinite(z) || z < DBL_MIN) {
    throw std::domain_error("product of distributions underflowed; supports are effectively disjoint");
  }
  return q / z;
}

inline std::vector<double> multiply_mix(const std::vector<double>& base, const std::vector<double>& style,
                                        double lambda1, double lambda2) {
  const Eigen::Map<const Eigen::VectorXd> b(base.data(), static_cast<Eigen::Index>(base.size()));
  const Eigen::Map<const Eigen::VectorXd> s(style.data(), static_cast<Eigen::Index>(style.size()));
  const Eigen::VectorXd q = multiply_mix(b, s, lambda1, lambda2);
  return {q.data(), q.data() + q.size()};
}

}  // namespace steer::scenting
