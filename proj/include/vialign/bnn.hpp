#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vialign/data.hpp"
#include "vialign/rng.hpp"
#include "vialign/types.hpp"

namespace vialign {

// Architecture of a fully connected net. widths runs input to output,
// e.g. {784, 128, 128, 10} has two hidden layers of 128 units. Hidden
// activations are ReLU; the final layer is linear (logits for
// classification, predictive mean for regression with Gaussian noise of
// scale noise_std).
struct MlpSpec {
  std::vector<int> widths;
  Activation activation = Activation::Relu;
  TaskKind task = TaskKind::Regression;
  double noise_std = 1.0;

  int layers() const { return static_cast<int>(widths.size()) - 1; }
  int hidden_layers() const { return layers() - 1; }
  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }

  long param_count() const {
    long n = 0;
    for (int l = 0; l < layers(); ++l) {
      n += static_cast<long>(widths[l + 1]) * widths[l] + widths[l + 1];
    }
    return n;
  }

  void validate() const {
    if (widths.size() < 2) throw std::invalid_argument("mlp: need at least two widths");
    for (int w : widths) {
      if (w <= 0) throw std::invalid_argument("mlp: widths must be positive");
    }
    if (task == TaskKind::Regression && !(noise_std > 0.0)) {
      throw std::invalid_argument("mlp: regression noise_std must be positive");
    }
    if (task == TaskKind::Classification && widths.back() < 2) {
      throw std::invalid_argument("mlp: classification needs at least two classes");
    }
  }

  bool operator==(const MlpSpec& o) const {
    return widths == o.widths && activation == o.activation && task == o.task &&
           noise_std == o.noise_std;
  }
};

// One point in weight space: W[l] is widths[l+1] x widths[l], b[l] has
// widths[l+1] entries.
struct ParamVector {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;

  static ParamVector zeros(const MlpSpec& spec) {
    ParamVector p;
    p.W.reserve(static_cast<std::size_t>(spec.layers()));
    p.b.reserve(static_cast<std::size_t>(spec.layers()));
    for (int l = 0; l < spec.layers(); ++l) {
      p.W.emplace_back(Eigen::MatrixXd::Zero(spec.widths[l + 1], spec.widths[l]));
      p.b.emplace_back(Eigen::VectorXd::Zero(spec.widths[l + 1]));
    }
    return p;
  }

  int layers() const { return static_cast<int>(W.size()); }

  bool matches(const MlpSpec& spec) const {
    if (layers() != spec.layers()) return false;
    for (int l = 0; l < layers(); ++l) {
      if (W[static_cast<std::size_t>(l)].rows() != spec.widths[l + 1] ||
          W[static_cast<std::size_t>(l)].cols() != spec.widths[l] ||
          b[static_cast<std::size_t>(l)].size() != spec.widths[l + 1]) {
        return false;
      }
    }
    return true;
  }

  bool allFinite() const {
    for (const auto& w : W) {
      if (!w.allFinite()) return false;
    }
    for (const auto& v : b) {
      if (!v.allFinite()) return false;
    }
    return true;
  }
};

// out = a*x + b*y + c*z, elementwise over every tensor.
inline ParamVector lincomb(double a, const ParamVector& x, double b, const ParamVector& y,
                           double c, const ParamVector& z) {
  ParamVector out = x;
  for (int l = 0; l < x.layers(); ++l) {
    out.W[static_cast<std::size_t>(l)] = a * x.W[static_cast<std::size_t>(l)] +
                                         b * y.W[static_cast<std::size_t>(l)] +
                                         c * z.W[static_cast<std::size_t>(l)];
    out.b[static_cast<std::size_t>(l)] = a * x.b[static_cast<std::size_t>(l)] +
                                         b * y.b[static_cast<std::size_t>(l)] +
                                         c * z.b[static_cast<std::size_t>(l)];
  }
  return out;
}

inline Eigen::VectorXd flatten_params(const ParamVector& p) {
  long n = 0;
  for (const auto& w : p.W) n += w.size();
  for (const auto& v : p.b) n += v.size();
  Eigen::VectorXd out(n);
  long at = 0;
  for (int l = 0; l < p.layers(); ++l) {
    const auto& w = p.W[static_cast<std::size_t>(l)];
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) out(at++) = w(i, j);
    }
    const auto& v = p.b[static_cast<std::size_t>(l)];
    for (int i = 0; i < v.size(); ++i) out(at++) = v(i);
  }
  return out;
}

inline ParamVector unflatten_params(const MlpSpec& spec, const Eigen::VectorXd& flat) {
  if (flat.size() != spec.param_count()) {
    throw std::invalid_argument("unflatten: length mismatch");
  }
  ParamVector p = ParamVector::zeros(spec);
  long at = 0;
  for (int l = 0; l < p.layers(); ++l) {
    auto& w = p.W[static_cast<std::size_t>(l)];
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) w(i, j) = flat(at++);
    }
    auto& v = p.b[static_cast<std::size_t>(l)];
    for (int i = 0; i < v.size(); ++i) v(i) = flat(at++);
  }
  return p;
}

// Mean-field Gaussian over the weights: independent N(mean, stddev^2) per
// coordinate.
struct GaussianPosterior {
  MlpSpec spec;
  ParamVector mean;
  ParamVector stddev;

  void validate() const {
    spec.validate();
    if (!mean.matches(spec) || !stddev.matches(spec)) {
      throw std::invalid_argument("posterior: tensor shapes do not match spec");
    }
    if (!mean.allFinite() || !stddev.allFinite()) {
      throw std::invalid_argument("posterior: non-finite parameter");
    }
    for (const auto& s : stddev.W) {
      if ((s.array() <= 0.0).any()) throw std::invalid_argument("posterior: stddev must be positive");
    }
    for (const auto& s : stddev.b) {
      if ((s.array() <= 0.0).any()) throw std::invalid_argument("posterior: stddev must be positive");
    }
  }
};

inline ParamVector standard_normal_like(const MlpSpec& spec, Rng& rng) {
  ParamVector p = ParamVector::zeros(spec);
  for (int l = 0; l < p.layers(); ++l) {
    auto& w = p.W[static_cast<std::size_t>(l)];
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) w(i, j) = rng.normal();
    }
    auto& v = p.b[static_cast<std::size_t>(l)];
    for (int i = 0; i < v.size(); ++i) v(i) = rng.normal();
  }
  return p;
}

// theta = mean + stddev .* eps (reparameterization).
inline ParamVector sample_params(const GaussianPosterior& q, const ParamVector& eps) {
  ParamVector out = q.mean;
  for (int l = 0; l < out.layers(); ++l) {
    out.W[static_cast<std::size_t>(l)] +=
        q.stddev.W[static_cast<std::size_t>(l)].cwiseProduct(eps.W[static_cast<std::size_t>(l)]);
    out.b[static_cast<std::size_t>(l)] +=
        q.stddev.b[static_cast<std::size_t>(l)].cwiseProduct(eps.b[static_cast<std::size_t>(l)]);
  }
  return out;
}

// iid posterior for synthetic experiments: means N(0, mean_scale^2),
// stddevs uniform on [std_lo, std_hi].
inline GaussianPosterior random_posterior(const MlpSpec& spec, std::uint64_t seed,
                                          double mean_scale = 1.0, double std_lo = 0.5,
                                          double std_hi = 1.5) {
  Rng rng(seed);
  GaussianPosterior q;
  q.spec = spec;
  q.mean = standard_normal_like(spec, rng);
  for (auto& w : q.mean.W) w *= mean_scale;
  for (auto& v : q.mean.b) v *= mean_scale;
  q.stddev = ParamVector::zeros(spec);
  for (int l = 0; l < q.stddev.layers(); ++l) {
    auto& w = q.stddev.W[static_cast<std::size_t>(l)];
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(std_lo, std_hi);
    }
    auto& v = q.stddev.b[static_cast<std::size_t>(l)];
    for (int i = 0; i < v.size(); ++i) v(i) = rng.uniform(std_lo, std_hi);
  }
  return q;
}

namespace detail {

inline Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& m) {
  Eigen::VectorXd mx = m.rowwise().maxCoeff();
  return mx.array() + (m.colwise() - mx).array().exp().rowwise().sum().log();
}

}  // namespace detail

// Batch forward pass. X is n x in_dim; returns n x out_dim network
// outputs (logits or predictive means).
inline Eigen::MatrixXd forward(const MlpSpec& spec, const ParamVector& theta,
                               const Eigen::MatrixXd& X) {
  if (X.cols() != spec.in_dim()) throw std::invalid_argument("forward: input width mismatch");
  Eigen::MatrixXd h = X;
  for (int l = 0; l < spec.layers(); ++l) {
    h = ((h * theta.W[static_cast<std::size_t>(l)].transpose()).rowwise() +
         theta.b[static_cast<std::size_t>(l)].transpose())
            .eval();
    if (l + 1 < spec.layers()) h = h.cwiseMax(0.0);
  }
  return h;
}

// Row-wise softmax probabilities from logits, numerically stable.
inline Eigen::MatrixXd softmax_probs(const Eigen::MatrixXd& logits) {
  Eigen::VectorXd mx = logits.rowwise().maxCoeff();
  Eigen::MatrixXd e = (logits.colwise() - mx).array().exp();
  Eigen::VectorXd z = e.rowwise().sum();
  return e.array().colwise() / z.array();
}

// log p(y_i | x_i, theta) for every example in the batch.
inline Eigen::VectorXd per_example_loglik(const MlpSpec& spec, const ParamVector& theta,
                                          const Dataset& batch) {
  const Eigen::MatrixXd out = forward(spec, theta, batch.X);
  if (batch.task != spec.task) throw std::invalid_argument("loglik: task mismatch");
  if (spec.task == TaskKind::Regression) {
    const double s2 = spec.noise_std * spec.noise_std;
    const double norm = -0.5 * spec.out_dim() * std::log(2.0 * 3.14159265358979323846 * s2);
    return ((batch.Y - out).rowwise().squaredNorm() * (-0.5 / s2)).array() + norm;
  }
  const Eigen::VectorXd lse = detail::row_logsumexp(out);
  Eigen::VectorXd ll(out.rows());
  for (int i = 0; i < out.rows(); ++i) ll(i) = out(i, batch.labels(i)) - lse(i);
  return ll;
}

inline double log_likelihood(const MlpSpec& spec, const ParamVector& theta,
                             const Dataset& batch) {
  return per_example_loglik(spec, theta, batch).sum();
}

// log N(theta; 0, variance I), all weights and biases.
inline double log_prior(const ParamVector& theta, const Prior& prior) {
  prior.validate();
  double sq = 0.0;
  long n = 0;
  for (const auto& w : theta.W) {
    sq += w.squaredNorm();
    n += w.size();
  }
  for (const auto& v : theta.b) {
    sq += v.squaredNorm();
    n += v.size();
  }
  return -0.5 * n * std::log(2.0 * 3.14159265358979323846 * prior.variance) -
         sq / (2.0 * prior.variance);
}

// (log p(Y | theta) + log p(theta)) / T, the tempered unnormalized log
// posterior used for landscape slices.
inline double log_posterior_unnorm(const MlpSpec& spec, const ParamVector& theta,
                                   const Dataset& data, const Prior& prior,
                                   double temperature = 1.0) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  return (log_likelihood(spec, theta, data) + log_prior(theta, prior)) / temperature;
}

// ---- checkpoint io ----------------------------------------------------
//
// Binary, little endian. Layout:
//   8 bytes  magic "VIALNCK1"
//   u32      version (1)
//   u8       task (0 regression, 1 classification)
//   u8       activation (0 relu)
//   u32      number of widths, then i32 widths input..output
//   f64      noise_std
//   f64      prior variance
//   u64      training seed
//   per layer: W mean row-major f64, W stddev, b mean, b stddev
// Doubles are written bit for bit, so save/load round-trips exactly.

struct Checkpoint {
  GaussianPosterior posterior;
  double prior_variance = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: file cut short");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: file cut short");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

inline void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) put_f64(os, m(i, j));
  }
}

inline void get_matrix(std::istream& is, Eigen::MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) m(i, j) = get_f64(is);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  ck.posterior.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("VIALNCK1", 8);
  detail::put_u32(os, 1);
  os.put(ck.posterior.spec.task == TaskKind::Classification ? 1 : 0);
  os.put(0);  // relu
  const auto& widths = ck.posterior.spec.widths;
  detail::put_u32(os, static_cast<std::uint32_t>(widths.size()));
  for (int w : widths) detail::put_u32(os, static_cast<std::uint32_t>(w));
  detail::put_f64(os, ck.posterior.spec.noise_std);
  detail::put_f64(os, ck.prior_variance);
  detail::put_u64(os, ck.seed);
  for (int l = 0; l < ck.posterior.spec.layers(); ++l) {
    detail::put_matrix(os, ck.posterior.mean.W[static_cast<std::size_t>(l)]);
    detail::put_matrix(os, ck.posterior.stddev.W[static_cast<std::size_t>(l)]);
    detail::put_matrix(os, ck.posterior.mean.b[static_cast<std::size_t>(l)]);
    detail::put_matrix(os, ck.posterior.stddev.b[static_cast<std::size_t>(l)]);
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "VIALNCK1", 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  if (detail::get_u32(is) != 1) throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ck;
  const int task = is.get();
  const int act = is.get();
  if (task < 0 || task > 1 || act != 0) throw std::runtime_error("checkpoint: bad header");
  ck.posterior.spec.task = task == 1 ? TaskKind::Classification : TaskKind::Regression;
  ck.posterior.spec.activation = Activation::Relu;
  const std::uint32_t nw = detail::get_u32(is);
  if (nw < 2 || nw > 64) throw std::runtime_error("checkpoint: implausible width count");
  ck.posterior.spec.widths.resize(nw);
  for (auto& w : ck.posterior.spec.widths) w = static_cast<int>(detail::get_u32(is));
  ck.posterior.spec.noise_std = detail::get_f64(is);
  ck.prior_variance = detail::get_f64(is);
  ck.seed = detail::get_u64(is);
  ck.posterior.mean = ParamVector::zeros(ck.posterior.spec);
  ck.posterior.stddev = ParamVector::zeros(ck.posterior.spec);
  Eigen::MatrixXd bm, bs;
  for (int l = 0; l < ck.posterior.spec.layers(); ++l) {
    detail::get_matrix(is, ck.posterior.mean.W[static_cast<std::size_t>(l)]);
    detail::get_matrix(is, ck.posterior.stddev.W[static_cast<std::size_t>(l)]);
    bm.resize(ck.posterior.spec.widths[l + 1], 1);
    bs.resize(ck.posterior.spec.widths[l + 1], 1);
    detail::get_matrix(is, bm);
    detail::get_matrix(is, bs);
    ck.posterior.mean.b[static_cast<std::size_t>(l)] = bm.col(0);
    ck.posterior.stddev.b[static_cast<std::size_t>(l)] = bs.col(0);
  }
  is.peek();
  if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  ck.posterior.validate();
  return ck;
}

}  // namespace vialign
