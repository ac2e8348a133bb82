#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "vialign/bnn.hpp"
#include "vialign/data.hpp"
#include "vialign/interp.hpp"
#include "vialign/rng.hpp"

namespace vialign {

enum class PathKind { Geodesic, Mixture };

inline std::string to_string(PathKind p) {
  return p == PathKind::Geodesic ? "geodesic" : "mixture";
}

struct EvalOptions {
  int n_mc = 128;
  int n_taus = 25;
  PathKind path = PathKind::Geodesic;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_mc <= 0) throw std::invalid_argument("eval.n_mc must be positive");
    if (n_taus < 2) throw std::invalid_argument("eval.n_taus must be at least 2");
  }
};

// One reusable stack of standard-normal draws. Evaluating every point of
// an interpolation path with the same stack couples the Monte Carlo noise
// across tau, which removes sampling jitter from path comparisons and
// makes the path endpoints agree exactly with standalone evaluations
// seeded the same way.
inline std::vector<ParamVector> draw_noise_stack(const MlpSpec& spec, int n_mc,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ParamVector> stack;
  stack.reserve(static_cast<std::size_t>(n_mc));
  for (int k = 0; k < n_mc; ++k) stack.push_back(standard_normal_like(spec, rng));
  return stack;
}

// Marginalized predictive log likelihood per example:
//   log (1/K) sum_k p(y_i | x_i, theta_k),  theta_k = mean + stddev * eps_k,
// computed with a max shift. Throws if every draw underflows for some
// example.
inline Eigen::VectorXd per_point_log_marginal(const GaussianPosterior& q, const Dataset& data,
                                              const std::vector<ParamVector>& noise) {
  if (noise.empty()) throw std::invalid_argument("need at least one noise draw");
  const int n = data.n();
  const int K = static_cast<int>(noise.size());
  Eigen::MatrixXd ll(n, K);
  for (int k = 0; k < K; ++k) {
    ll.col(k) = per_example_loglik(q.spec, sample_params(q, noise[static_cast<std::size_t>(k)]),
                                   data);
  }
  Eigen::VectorXd mx = ll.rowwise().maxCoeff();
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(mx(i))) {
      throw std::runtime_error("predictive likelihood underflowed for every draw");
    }
  }
  return mx.array() +
         ((ll.colwise() - mx).array().exp().rowwise().sum() / K).log();
}

// Monte Carlo average of softmax class probabilities (classification
// only), n x num_classes.
inline Eigen::MatrixXd mc_average_probs(const GaussianPosterior& q, const Dataset& data,
                                        const std::vector<ParamVector>& noise) {
  if (q.spec.task != TaskKind::Classification) {
    throw std::invalid_argument("class probabilities need a classification model");
  }
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(data.n(), q.spec.out_dim());
  for (const auto& eps : noise) {
    probs += softmax_probs(forward(q.spec, sample_params(q, eps), data.X));
  }
  return probs / static_cast<double>(noise.size());
}

inline double accuracy_from_probs(const Eigen::MatrixXd& probs, const Eigen::VectorXi& labels) {
  int hits = 0;
  for (int i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg;
    probs.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == labels(i)) ++hits;
  }
  return static_cast<double>(hits) / probs.rows();
}

struct PredictiveResult {
  double loglik = 0.0;       // total over the dataset
  double mean_loglik = 0.0;  // per datum
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // classification only
};

inline PredictiveResult predictive_loglik(const GaussianPosterior& q, const Dataset& data,
                                          int n_mc, std::uint64_t seed) {
  const auto noise = draw_noise_stack(q.spec, n_mc, seed);
  PredictiveResult r;
  r.loglik = per_point_log_marginal(q, data, noise).sum();
  r.mean_loglik = r.loglik / data.n();
  if (q.spec.task == TaskKind::Classification) {
    r.accuracy = accuracy_from_probs(mc_average_probs(q, data, noise), data.labels);
  }
  return r;
}

// Path scan of the marginalized predictive log likelihood.
//
// The barrier is the largest amount by which the path drops below the
// straight chord between its endpoints:
//   barrier = max_tau [ (1 - tau) L(0) + tau L(1) - L(tau) ].
// The grid includes both endpoints, where the expression is exactly zero
// under the shared noise stack, so the barrier is never negative. The
// mixture path scores each example as a log of the tau-weighted average
// of the endpoint predictive densities; pointwise concavity of the log
// puts the mixture on or above the chord, so its barrier is zero up to
// rounding.
struct BarrierReport {
  PathKind path = PathKind::Geodesic;
  std::vector<double> taus;
  std::vector<double> loglik;    // total log marginal at each tau
  std::vector<double> accuracy;  // per tau; empty for regression
  double barrier = 0.0;          // total scale
  double barrier_per_datum = 0.0;
  int n_points = 0;
  int n_mc = 0;
  std::uint64_t seed = 0;
};

inline BarrierReport barrier_scan(const GaussianPosterior& q0, const GaussianPosterior& q1,
                                  const Dataset& data, const EvalOptions& opt) {
  opt.validate();
  if (!(q0.spec == q1.spec)) throw std::invalid_argument("barrier: specs differ");
  data.validate(q0.spec.out_dim());
  const auto noise = draw_noise_stack(q0.spec, opt.n_mc, opt.seed);
  const bool cls = q0.spec.task == TaskKind::Classification;

  BarrierReport rep;
  rep.path = opt.path;
  rep.n_points = data.n();
  rep.n_mc = opt.n_mc;
  rep.seed = opt.seed;
  rep.taus.resize(static_cast<std::size_t>(opt.n_taus));
  for (int t = 0; t < opt.n_taus; ++t) {
    rep.taus[static_cast<std::size_t>(t)] = static_cast<double>(t) / (opt.n_taus - 1);
  }

  if (opt.path == PathKind::Geodesic) {
    for (double tau : rep.taus) {
      const GaussianPosterior q = geodesic_point(q0, q1, tau);
      rep.loglik.push_back(per_point_log_marginal(q, data, noise).sum());
      if (cls) rep.accuracy.push_back(accuracy_from_probs(mc_average_probs(q, data, noise), data.labels));
    }
  } else {
    const Eigen::VectorXd l0 = per_point_log_marginal(q0, data, noise);
    const Eigen::VectorXd l1 = per_point_log_marginal(q1, data, noise);
    Eigen::MatrixXd p0, p1;
    if (cls) {
      p0 = mc_average_probs(q0, data, noise);
      p1 = mc_average_probs(q1, data, noise);
    }
    for (double tau : rep.taus) {
      double total = 0.0;
      if (tau <= 0.0) {
        total = l0.sum();
      } else if (tau >= 1.0) {
        total = l1.sum();
      } else {
        for (int i = 0; i < data.n(); ++i) {
          const double a = std::log1p(-tau) + l0(i);
          const double b = std::log(tau) + l1(i);
          const double m = std::max(a, b);
          total += m + std::log(std::exp(a - m) + std::exp(b - m));
        }
      }
      rep.loglik.push_back(total);
      if (cls) {
        rep.accuracy.push_back(
            accuracy_from_probs((1.0 - tau) * p0 + tau * p1, data.labels));
      }
    }
  }

  const double L0 = rep.loglik.front();
  const double L1 = rep.loglik.back();
  double barrier = 0.0;
  for (std::size_t t = 0; t < rep.taus.size(); ++t) {
    const double chord = (1.0 - rep.taus[t]) * L0 + rep.taus[t] * L1;
    barrier = std::max(barrier, chord - rep.loglik[t]);
  }
  rep.barrier = barrier;
  rep.barrier_per_datum = barrier / data.n();
  return rep;
}

// ---- 2-d landscape slice ----------------------------------------------

// Affine plane through three weight-space anchors, theta(a, b) =
// a * theta_a + b * theta_b + (1 - a - b) * theta_c, evaluated on a
// regular (a, b) grid. The anchors sit at (1,0), (0,1) and (0,0). The
// default range [-0.5, 1.5] at resolution 25 places all three exactly on
// grid nodes.
struct SliceOptions {
  double lo = -0.5;
  double hi = 1.5;
  int resolution = 25;
  double temperature = 1.0;

  void validate() const {
    if (resolution < 2) throw std::invalid_argument("slice.resolution must be at least 2");
    if (!(hi > lo)) throw std::invalid_argument("slice: empty range");
    if (!(temperature > 0.0)) throw std::invalid_argument("slice.temperature must be positive");
  }
};

struct SliceGrid {
  std::vector<double> a_coords;
  std::vector<double> b_coords;
  Eigen::MatrixXd logpost;  // (ia, ib)
};

inline SliceGrid slice_logposterior(const MlpSpec& spec, const Dataset& data, const Prior& prior,
                                    const ParamVector& theta_a, const ParamVector& theta_b,
                                    const ParamVector& theta_c, const SliceOptions& opt) {
  opt.validate();
  const auto dist = [](const ParamVector& x, const ParamVector& y) {
    const ParamVector d = lincomb(1.0, x, -1.0, y, 0.0, x);
    return std::sqrt(flatten_params(d).squaredNorm());
  };
  if (dist(theta_a, theta_b) < 1e-9 || dist(theta_a, theta_c) < 1e-9 ||
      dist(theta_b, theta_c) < 1e-9) {
    throw std::invalid_argument("slice: anchors must be pairwise distinct");
  }
  SliceGrid grid;
  grid.a_coords.resize(static_cast<std::size_t>(opt.resolution));
  grid.b_coords.resize(static_cast<std::size_t>(opt.resolution));
  for (int i = 0; i < opt.resolution; ++i) {
    const double f = static_cast<double>(i) / (opt.resolution - 1);
    grid.a_coords[static_cast<std::size_t>(i)] = opt.lo + f * (opt.hi - opt.lo);
    grid.b_coords[static_cast<std::size_t>(i)] = grid.a_coords[static_cast<std::size_t>(i)];
  }
  grid.logpost.resize(opt.resolution, opt.resolution);
  for (int ia = 0; ia < opt.resolution; ++ia) {
    for (int ib = 0; ib < opt.resolution; ++ib) {
      const double a = grid.a_coords[static_cast<std::size_t>(ia)];
      const double b = grid.b_coords[static_cast<std::size_t>(ib)];
      const ParamVector theta = lincomb(a, theta_a, b, theta_b, 1.0 - a - b, theta_c);
      grid.logpost(ia, ib) = log_posterior_unnorm(spec, theta, data, prior, opt.temperature);
    }
  }
  return grid;
}

// ---- csv --------------------------------------------------------------

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Columns: tau, loglik (total), loglik_mean (per datum), acc (empty for
// regression).
inline void write_barrier_csv(const std::string& path, const BarrierReport& rep) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "tau,loglik,loglik_mean,acc\n";
  for (std::size_t t = 0; t < rep.taus.size(); ++t) {
    os << detail::g17(rep.taus[t]) << ',' << detail::g17(rep.loglik[t]) << ','
       << detail::g17(rep.loglik[t] / rep.n_points) << ',';
    if (!rep.accuracy.empty()) os << detail::g17(rep.accuracy[t]);
    os << '\n';
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

// Columns: a, b, logpost; rows in row-major (a outer, b inner) order.
inline void write_slice_csv(const std::string& path, const SliceGrid& grid) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "a,b,logpost\n";
  for (std::size_t ia = 0; ia < grid.a_coords.size(); ++ia) {
    for (std::size_t ib = 0; ib < grid.b_coords.size(); ++ib) {
      os << detail::g17(grid.a_coords[ia]) << ',' << detail::g17(grid.b_coords[ib]) << ','
         << detail::g17(grid.logpost(static_cast<int>(ia), static_cast<int>(ib))) << '\n';
    }
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

}  // namespace vialign
