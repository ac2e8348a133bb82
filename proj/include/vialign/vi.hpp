#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "vialign/bnn.hpp"
#include "vialign/data.hpp"
#include "vialign/rng.hpp"
#include "vialign/types.hpp"

namespace vialign {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct TrainConfig {
  int batch_size = 500;
  int epochs = 100;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int n_mc_train = 1;
  double temperature = 1.0;
  double prior_variance = 1.0;
  double std_init = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size <= 0) throw std::invalid_argument("train.batch_size must be positive");
    if (epochs <= 0) throw std::invalid_argument("train.epochs must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw std::invalid_argument("train.momentum must be in [0, 1)");
    }
    if (n_mc_train <= 0) throw std::invalid_argument("train.n_mc_train must be positive");
    if (!(temperature > 0.0)) throw std::invalid_argument("train.temperature must be positive");
    if (!(prior_variance > 0.0)) throw std::invalid_argument("train.prior_variance must be positive");
    if (!(std_init > 0.0)) throw std::invalid_argument("train.std_init must be positive");
  }
};

// One ELBO evaluation. All three fields are on the tempered scale
// (divided by temperature), so elbo == expected_loglik - kl holds for
// every temperature, not just T = 1.
struct ElboEstimate {
  double elbo = 0.0;
  double expected_loglik = 0.0;
  double kl = 0.0;
};

// KL(q || N(0, variance I)) for a mean-field Gaussian, closed form,
// untempered.
inline double kl_gaussians(const GaussianPosterior& q, const Prior& prior) {
  prior.validate();
  const double a2 = prior.variance;
  const double log_a = 0.5 * std::log(a2);
  double kl = 0.0;
  auto accum = [&](const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sig) {
    kl += (log_a - sig.array().log() + (sig.array().square() + mu.array().square()) / (2.0 * a2) -
           0.5)
              .sum();
  };
  for (int l = 0; l < q.mean.layers(); ++l) {
    accum(q.mean.W[static_cast<std::size_t>(l)], q.stddev.W[static_cast<std::size_t>(l)]);
    accum(q.mean.b[static_cast<std::size_t>(l)], q.stddev.b[static_cast<std::size_t>(l)]);
  }
  return kl;
}

// Monte Carlo ELBO with explicit noise draws. The expected log likelihood
// is estimated on the batch and rescaled by n_total / batch size, so a
// mini-batch estimate is unbiased for the full-data ELBO.
inline ElboEstimate estimate_elbo(const GaussianPosterior& q, const Dataset& batch, int n_total,
                                  const Prior& prior, const TrainConfig& cfg,
                                  const std::vector<ParamVector>& noise) {
  if (noise.empty()) throw std::invalid_argument("estimate_elbo: need at least one noise draw");
  if (n_total < batch.n()) throw std::invalid_argument("estimate_elbo: n_total < batch size");
  double ell = 0.0;
  for (const auto& eps : noise) {
    ell += log_likelihood(q.spec, sample_params(q, eps), batch);
  }
  ell *= static_cast<double>(n_total) / batch.n() / static_cast<double>(noise.size());
  const double kl = kl_gaussians(q, prior);
  ElboEstimate est;
  est.expected_loglik = ell / cfg.temperature;
  est.kl = kl / cfg.temperature;
  est.elbo = est.expected_loglik - est.kl;
  return est;
}

// Variational parameters in unconstrained form: stddev = softplus(rho).
struct VarParams {
  MlpSpec spec;
  ParamVector mean;
  ParamVector rho;

  GaussianPosterior posterior() const {
    GaussianPosterior q;
    q.spec = spec;
    q.mean = mean;
    q.stddev = rho;
    for (auto& w : q.stddev.W) w = w.unaryExpr([](double x) { return softplus(x); });
    for (auto& v : q.stddev.b) v = v.unaryExpr([](double x) { return softplus(x); });
    return q;
  }

  static VarParams from_posterior(const GaussianPosterior& q) {
    VarParams v;
    v.spec = q.spec;
    v.mean = q.mean;
    v.rho = q.stddev;
    for (auto& w : v.rho.W) w = w.unaryExpr([](double x) { return softplus_inv(x); });
    for (auto& b : v.rho.b) b = b.unaryExpr([](double x) { return softplus_inv(x); });
    return v;
  }
};

struct VarGrad {
  ParamVector mean;
  ParamVector rho;

  static VarGrad zeros(const MlpSpec& spec) {
    return VarGrad{ParamVector::zeros(spec), ParamVector::zeros(spec)};
  }
};

// Batch log likelihood and its gradient in theta, by hand-rolled
// backprop. Output-layer gradients are (Y - F)/noise_var for regression
// and onehot - softmax for classification; ReLU passes gradient where
// the pre-activation is strictly positive.
inline std::pair<double, ParamVector> loglik_backward(const MlpSpec& spec,
                                                      const ParamVector& theta,
                                                      const Dataset& batch) {
  const int L = spec.layers();
  std::vector<Eigen::MatrixXd> acts(static_cast<std::size_t>(L) + 1);
  std::vector<Eigen::MatrixXd> pre(static_cast<std::size_t>(L));
  acts[0] = batch.X;
  for (int l = 0; l < L; ++l) {
    pre[static_cast<std::size_t>(l)] =
        (acts[static_cast<std::size_t>(l)] * theta.W[static_cast<std::size_t>(l)].transpose())
            .rowwise() +
        theta.b[static_cast<std::size_t>(l)].transpose();
    acts[static_cast<std::size_t>(l) + 1] = (l + 1 < L)
                                                ? pre[static_cast<std::size_t>(l)].cwiseMax(0.0)
                                                : pre[static_cast<std::size_t>(l)];
  }
  const Eigen::MatrixXd& out = acts[static_cast<std::size_t>(L)];

  double ll = 0.0;
  Eigen::MatrixXd G;
  if (spec.task == TaskKind::Regression) {
    const double s2 = spec.noise_std * spec.noise_std;
    const Eigen::MatrixXd resid = batch.Y - out;
    ll = -0.5 * resid.squaredNorm() / s2 -
         0.5 * batch.n() * spec.out_dim() * std::log(2.0 * 3.14159265358979323846 * s2);
    G = resid / s2;
  } else {
    const Eigen::MatrixXd probs = softmax_probs(out);
    for (int i = 0; i < out.rows(); ++i) {
      ll += std::log(std::max(probs(i, batch.labels(i)), 1e-300));
    }
    G = -probs;
    for (int i = 0; i < out.rows(); ++i) G(i, batch.labels(i)) += 1.0;
  }

  ParamVector grad = ParamVector::zeros(spec);
  for (int l = L - 1; l >= 0; --l) {
    grad.W[static_cast<std::size_t>(l)] = G.transpose() * acts[static_cast<std::size_t>(l)];
    grad.b[static_cast<std::size_t>(l)] = G.colwise().sum();
    if (l > 0) {
      G = (G * theta.W[static_cast<std::size_t>(l)])
              .cwiseProduct((pre[static_cast<std::size_t>(l) - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return {ll, std::move(grad)};
}

struct ElboGradient {
  ElboEstimate estimate;
  VarGrad grad;
};

// Pathwise (reparameterization) gradient of the tempered ELBO with
// respect to the unconstrained parameters, using the supplied noise
// draws. Per coordinate, with sigma = softplus(rho) and theta = mu +
// sigma * eps:
//   d elbo / d mu  = E[ d loglik / d theta ] - mu / prior_var
//   d elbo / d rho = ( E[ d loglik/d theta * eps ]
//                      - (sigma/prior_var - 1/sigma) ) * sigmoid(rho)
// all divided by temperature; the likelihood part carries the
// n_total / batch rescaling.
inline ElboGradient elbo_gradient(const VarParams& v, const Dataset& batch, int n_total,
                                  const Prior& prior, const TrainConfig& cfg,
                                  const std::vector<ParamVector>& noise) {
  if (noise.empty()) throw std::invalid_argument("elbo_gradient: need at least one noise draw");
  const GaussianPosterior q = v.posterior();
  const double scale = static_cast<double>(n_total) / batch.n() / static_cast<double>(noise.size());

  ElboGradient out;
  out.grad = VarGrad::zeros(v.spec);
  double ell = 0.0;
  for (const auto& eps : noise) {
    const ParamVector theta = sample_params(q, eps);
    auto [ll, g] = loglik_backward(v.spec, theta, batch);
    ell += ll;
    for (int l = 0; l < v.spec.layers(); ++l) {
      const auto sl = static_cast<std::size_t>(l);
      out.grad.mean.W[sl] += g.W[sl];
      out.grad.mean.b[sl] += g.b[sl];
      out.grad.rho.W[sl] += g.W[sl].cwiseProduct(eps.W[sl]);
      out.grad.rho.b[sl] += g.b[sl].cwiseProduct(eps.b[sl]);
    }
  }
  ell *= scale;

  const double a2 = prior.variance;
  const double invT = 1.0 / cfg.temperature;
  for (int l = 0; l < v.spec.layers(); ++l) {
    const auto sl = static_cast<std::size_t>(l);
    const Eigen::MatrixXd sig_w = q.stddev.W[sl];
    const Eigen::VectorXd sig_b = q.stddev.b[sl];
    const Eigen::MatrixXd gate_w =
        v.rho.W[sl].unaryExpr([](double x) { return sigmoid(x); });
    const Eigen::VectorXd gate_b =
        v.rho.b[sl].unaryExpr([](double x) { return sigmoid(x); });

    out.grad.mean.W[sl] = (out.grad.mean.W[sl] * scale - v.mean.W[sl] / a2) * invT;
    out.grad.mean.b[sl] = (out.grad.mean.b[sl] * scale - v.mean.b[sl] / a2) * invT;
    out.grad.rho.W[sl] =
        ((out.grad.rho.W[sl] * scale -
          (sig_w.array() / a2 - sig_w.array().inverse()).matrix())
             .cwiseProduct(gate_w)) *
        invT;
    out.grad.rho.b[sl] =
        ((out.grad.rho.b[sl] * scale -
          (sig_b.array() / a2 - sig_b.array().inverse()).matrix())
             .cwiseProduct(gate_b)) *
        invT;
  }

  const double kl = kl_gaussians(q, prior);
  out.estimate.expected_loglik = ell * invT;
  out.estimate.kl = kl * invT;
  out.estimate.elbo = out.estimate.expected_loglik - out.estimate.kl;
  return out;
}

// Mean init: uniform with fan-in scaling, U(-1/sqrt(fan_in), 1/sqrt(fan_in))
// for both weights and biases; stddevs start at std_init everywhere.
inline VarParams init_var_params(const MlpSpec& spec, const TrainConfig& cfg, Rng& rng) {
  VarParams v;
  v.spec = spec;
  v.mean = ParamVector::zeros(spec);
  v.rho = ParamVector::zeros(spec);
  const double rho0 = softplus_inv(cfg.std_init);
  for (int l = 0; l < spec.layers(); ++l) {
    const auto sl = static_cast<std::size_t>(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.widths[l]));
    auto& w = v.mean.W[sl];
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    }
    auto& b = v.mean.b[sl];
    for (int i = 0; i < b.size(); ++i) b(i) = rng.uniform(-bound, bound);
    v.rho.W[sl].setConstant(rho0);
    v.rho.b[sl].setConstant(rho0);
  }
  return v;
}

struct TracePoint {
  int epoch = 0;
  double elbo = 0.0;
  double expected_loglik = 0.0;
  double kl = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  GaussianPosterior posterior;
  std::vector<TracePoint> trace;
};

// SGD-with-momentum ascent on the tempered ELBO. One Rng seeded from
// cfg.seed drives init, epoch shuffles and noise draws in a fixed order,
// so the whole run is reproducible bit for bit. Throws if the ELBO goes
// non-finite.
inline TrainResult train_vi(const MlpSpec& spec, const Dataset& train, const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  train.validate(spec.out_dim());
  if (train.task != spec.task) throw std::invalid_argument("train_vi: task mismatch");

  Rng rng(cfg.seed);
  VarParams v = init_var_params(spec, cfg, rng);
  VarGrad mom = VarGrad::zeros(spec);
  const Prior prior{cfg.prior_variance};
  const int n = train.n();

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double ep_elbo = 0.0, ep_ell = 0.0, ep_kl = 0.0;
    for (int at = 0; at < n; at += cfg.batch_size) {
      const int m = std::min(cfg.batch_size, n - at);
      const std::vector<int> idx(order.begin() + at, order.begin() + at + m);
      const Dataset batch = train.take(idx);
      std::vector<ParamVector> noise;
      noise.reserve(static_cast<std::size_t>(cfg.n_mc_train));
      for (int k = 0; k < cfg.n_mc_train; ++k) noise.push_back(standard_normal_like(spec, rng));

      ElboGradient g = elbo_gradient(v, batch, n, prior, cfg, noise);
      const double w = static_cast<double>(m) / n;
      ep_elbo += w * g.estimate.elbo;
      ep_ell += w * g.estimate.expected_loglik;
      ep_kl += w * g.estimate.kl;

      for (int l = 0; l < spec.layers(); ++l) {
        const auto sl = static_cast<std::size_t>(l);
        mom.mean.W[sl] = cfg.momentum * mom.mean.W[sl] + g.grad.mean.W[sl];
        mom.mean.b[sl] = cfg.momentum * mom.mean.b[sl] + g.grad.mean.b[sl];
        mom.rho.W[sl] = cfg.momentum * mom.rho.W[sl] + g.grad.rho.W[sl];
        mom.rho.b[sl] = cfg.momentum * mom.rho.b[sl] + g.grad.rho.b[sl];
        v.mean.W[sl] += cfg.learning_rate * mom.mean.W[sl];
        v.mean.b[sl] += cfg.learning_rate * mom.mean.b[sl];
        v.rho.W[sl] += cfg.learning_rate * mom.rho.W[sl];
        v.rho.b[sl] += cfg.learning_rate * mom.rho.b[sl];
      }
    }
    if (!std::isfinite(ep_elbo)) {
      throw std::runtime_error("vi: elbo diverged at epoch " + std::to_string(epoch) +
                               "; reduce the learning rate");
    }
    const double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.trace.push_back(TracePoint{epoch, ep_elbo, ep_ell, ep_kl, wall});
  }
  res.posterior = v.posterior();
  res.posterior.validate();
  return res;
}

}  // namespace vialign
