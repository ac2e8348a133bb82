#pragma once

#include <cmath>
#include <stdexcept>

#include "vialign/bnn.hpp"

namespace vialign {

// Point on the 2-Wasserstein geodesic between two mean-field Gaussians.
// For diagonal Gaussians the optimal transport map is coordinate-wise, so
// the geodesic interpolates means and stddevs linearly:
//   m_tau = (1 - tau) m0 + tau m1,  s_tau = (1 - tau) s0 + tau s1.
inline GaussianPosterior geodesic_point(const GaussianPosterior& q0, const GaussianPosterior& q1,
                                        double tau) {
  if (!(q0.spec == q1.spec)) throw std::invalid_argument("geodesic: specs differ");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("geodesic: tau outside [0, 1]");
  GaussianPosterior q;
  q.spec = q0.spec;
  q.mean = lincomb(1.0 - tau, q0.mean, tau, q1.mean, 0.0, q0.mean);
  q.stddev = lincomb(1.0 - tau, q0.stddev, tau, q1.stddev, 0.0, q0.stddev);
  return q;
}

// Squared 2-Wasserstein distance between mean-field Gaussians:
// ||m0 - m1||^2 + ||s0 - s1||^2 over all coordinates.
inline double w2_distance_sq(const GaussianPosterior& q0, const GaussianPosterior& q1) {
  if (!(q0.spec == q1.spec)) throw std::invalid_argument("w2: specs differ");
  double total = 0.0;
  for (int l = 0; l < q0.mean.layers(); ++l) {
    const auto sl = static_cast<std::size_t>(l);
    total += (q0.mean.W[sl] - q1.mean.W[sl]).squaredNorm();
    total += (q0.mean.b[sl] - q1.mean.b[sl]).squaredNorm();
    total += (q0.stddev.W[sl] - q1.stddev.W[sl]).squaredNorm();
    total += (q0.stddev.b[sl] - q1.stddev.b[sl]).squaredNorm();
  }
  return total;
}

inline double w2_distance(const GaussianPosterior& q0, const GaussianPosterior& q1) {
  return std::sqrt(w2_distance_sq(q0, q1));
}

}  // namespace vialign
