#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vialign/bnn.hpp"
#include "vialign/lap.hpp"
#include "vialign/rng.hpp"

namespace vialign {

enum class AlignCost { Wasserstein, KlMeans };

// Weight applied per q0 coordinate in the kl_means cost.
enum class KlWeighting { InvVariance, InvStd };

struct AlignOptions {
  AlignCost cost = AlignCost::Wasserstein;
  KlWeighting kl_weighting = KlWeighting::InvVariance;
  int max_sweeps = 50;
  int restarts = 32;
  std::uint64_t seed = 0;
  bool include_bias = true;

  void validate() const {
    if (max_sweeps <= 0) throw std::invalid_argument("align.max_sweeps must be positive");
    if (restarts <= 0) throw std::invalid_argument("align.restarts must be positive");
  }
};

// One permutation per hidden layer; input and output units never permute.
struct PermutationSet {
  std::vector<Permutation> perms;

  static PermutationSet identity(const MlpSpec& spec) {
    PermutationSet ps;
    ps.perms.reserve(static_cast<std::size_t>(spec.hidden_layers()));
    for (int h = 0; h < spec.hidden_layers(); ++h) {
      ps.perms.push_back(Permutation::identity(spec.widths[h + 1]));
    }
    return ps;
  }

  int layers() const { return static_cast<int>(perms.size()); }

  bool matches(const MlpSpec& spec) const {
    if (layers() != spec.hidden_layers()) return false;
    for (int h = 0; h < layers(); ++h) {
      if (perms[static_cast<std::size_t>(h)].size() != spec.widths[h + 1]) return false;
    }
    return true;
  }

  bool is_identity() const {
    for (const auto& p : perms) {
      if (!p.is_identity()) return false;
    }
    return true;
  }

  PermutationSet inverse() const {
    PermutationSet out;
    out.perms.reserve(perms.size());
    for (const auto& p : perms) out.perms.push_back(p.inverse());
    return out;
  }

  bool operator==(const PermutationSet& o) const { return perms == o.perms; }
  bool operator!=(const PermutationSet& o) const { return !(*this == o); }
};

// Text format: one line per hidden layer, space-separated map entries
// (map[i] = source unit placed at position i).
inline void save_permutation_set(const std::string& path, const PermutationSet& ps) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& p : ps.perms) {
    for (int i = 0; i < p.size(); ++i) {
      if (i) os << ' ';
      os << p.map[static_cast<std::size_t>(i)];
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

inline PermutationSet load_permutation_set(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  PermutationSet ps;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Permutation p;
    int v;
    while (ls >> v) p.map.push_back(v);
    if (!ls.eof()) throw std::runtime_error("permutations: bad token in " + path);
    p.validate();
    ps.perms.push_back(std::move(p));
  }
  if (ps.perms.empty()) throw std::runtime_error("permutations: empty file " + path);
  return ps;
}

// Applies the symmetry: unit i of hidden layer h takes over the weights
// of unit map[i], i.e. W'[l] = P_l W[l] P_{l-1}^T with identity at the
// input and output boundaries. Function values are preserved exactly.
inline ParamVector pushforward(const ParamVector& theta, const PermutationSet& ps) {
  ParamVector out = theta;
  const int L = theta.layers();
  if (static_cast<int>(ps.perms.size()) != L - 1) {
    throw std::invalid_argument("pushforward: permutation count mismatch");
  }
  for (int l = 0; l < L; ++l) {
    const auto sl = static_cast<std::size_t>(l);
    Eigen::MatrixXd w = theta.W[sl];
    if (l > 0) w = permute_cols(ps.perms[sl - 1], w);
    if (l < L - 1) {
      w = permute_rows(ps.perms[sl], w);
      out.b[sl] = permute_vec(ps.perms[sl], theta.b[sl]);
    }
    out.W[sl] = std::move(w);
  }
  return out;
}

// Push a mean-field Gaussian through the permutation: means and stddevs
// reorder coordinate-wise.
inline GaussianPosterior pushforward(const GaussianPosterior& q, const PermutationSet& ps) {
  if (!ps.matches(q.spec)) throw std::invalid_argument("pushforward: permutations do not match spec");
  GaussianPosterior out;
  out.spec = q.spec;
  out.mean = pushforward(q.mean, ps);
  out.stddev = pushforward(q.stddev, ps);
  return out;
}

namespace detail {

struct AlignView {
  const MlpSpec* spec;
  const ParamVector* m0;
  const ParamVector* m1;
  const ParamVector* s0;  // null for point estimates
  const ParamVector* s1;
};

inline Eigen::MatrixXd kl_weights(const Eigen::MatrixXd& s0, KlWeighting w) {
  if (w == KlWeighting::InvVariance) return s0.array().square().inverse().matrix();
  return s0.array().inverse().matrix();
}

// Weighted squared distance matrix D(i, j) = sum_a w(i, a) (A(i, a) -
// B(j, a))^2, expanded into three matrix products.
inline Eigen::MatrixXd weighted_sq_dist_rows(const Eigen::MatrixXd& w, const Eigen::MatrixXd& A,
                                             const Eigen::MatrixXd& B) {
  const Eigen::VectorXd rowconst = (w.cwiseProduct(A.cwiseProduct(A))).rowwise().sum();
  Eigen::MatrixXd D = w * B.cwiseProduct(B).transpose();
  D.noalias() -= 2.0 * w.cwiseProduct(A) * B.transpose();
  D.colwise() += rowconst;
  return D;
}

inline double sq(double x) { return x * x; }

}  // namespace detail

// Score matrix for the LAP of hidden layer h given the current
// permutations of its neighbors. Entry (i, j) scores matching q0 unit i
// with q1 unit j; solve_lap_max on it yields the locally optimal P_h.
// For the Wasserstein cost the entries are inner products between the
// adjacent weight rows/columns (means and stddevs, plus bias terms when
// enabled); for kl_means they are negated squared distances weighted by
// q0's coordinate precisions.
inline Eigen::MatrixXd layer_score_matrix_impl(const detail::AlignView& view,
                                               const PermutationSet& ps, int h,
                                               const AlignOptions& opt) {
  const MlpSpec& spec = *view.spec;
  const int H = spec.hidden_layers();
  if (h < 0 || h >= H) throw std::invalid_argument("layer index out of range");
  const auto l = static_cast<std::size_t>(h);

  const Eigen::MatrixXd in1 = (h == 0)
                                  ? view.m1->W[l]
                                  : permute_cols(ps.perms[l - 1], view.m1->W[l]);
  const Eigen::MatrixXd out1 = (h == H - 1)
                                   ? view.m1->W[l + 1]
                                   : permute_rows(ps.perms[l + 1], view.m1->W[l + 1]);

  const int d = spec.widths[h + 1];
  Eigen::MatrixXd score = Eigen::MatrixXd::Zero(d, d);

  if (opt.cost == AlignCost::Wasserstein || view.s0 == nullptr) {
    score.noalias() += view.m0->W[l] * in1.transpose();
    score.noalias() += view.m0->W[l + 1].transpose() * out1;
    if (opt.include_bias) score.noalias() += view.m0->b[l] * view.m1->b[l].transpose();
    if (view.s0 != nullptr) {
      const Eigen::MatrixXd sin1 = (h == 0)
                                       ? view.s1->W[l]
                                       : permute_cols(ps.perms[l - 1], view.s1->W[l]);
      const Eigen::MatrixXd sout1 = (h == H - 1)
                                        ? view.s1->W[l + 1]
                                        : permute_rows(ps.perms[l + 1], view.s1->W[l + 1]);
      score.noalias() += view.s0->W[l] * sin1.transpose();
      score.noalias() += view.s0->W[l + 1].transpose() * sout1;
      if (opt.include_bias) score.noalias() += view.s0->b[l] * view.s1->b[l].transpose();
    }
    return score;
  }

  // kl_means: negated weighted squared distances.
  const Eigen::MatrixXd w_in = detail::kl_weights(view.s0->W[l], opt.kl_weighting);
  score -= detail::weighted_sq_dist_rows(w_in, view.m0->W[l], in1);
  const Eigen::MatrixXd w_out =
      detail::kl_weights(view.s0->W[l + 1], opt.kl_weighting).transpose();
  score -= detail::weighted_sq_dist_rows(w_out, view.m0->W[l + 1].transpose(), out1.transpose());
  if (opt.include_bias) {
    const Eigen::MatrixXd w_b = detail::kl_weights(view.s0->b[l], opt.kl_weighting);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        score(i, j) -= w_b(i, 0) * detail::sq((*view.m0).b[l](i) - (*view.m1).b[l](j));
      }
    }
  }
  return score;
}

inline Eigen::MatrixXd layer_score_matrix(const GaussianPosterior& q0,
                                          const GaussianPosterior& q1,
                                          const PermutationSet& ps, int h,
                                          const AlignOptions& opt) {
  detail::AlignView view{&q0.spec, &q0.mean, &q1.mean, &q0.stddev, &q1.stddev};
  return layer_score_matrix_impl(view, ps, h, opt);
}

// Joint objective over all layers. Each tensor is counted once (unlike
// the per-layer scores, where a weight matrix contributes to both of its
// endpoint layers). Wasserstein: sum of inner products between q0 and the
// pushed-forward q1, higher is better. kl_means: negated total weighted
// squared mean distance.
inline double align_objective_impl(const detail::AlignView& view, const PermutationSet& ps,
                                   const AlignOptions& opt) {
  const MlpSpec& spec = *view.spec;
  ParamVector m1p = pushforward(*view.m1, ps);
  double total = 0.0;
  if (opt.cost == AlignCost::Wasserstein || view.s0 == nullptr) {
    for (int l = 0; l < spec.layers(); ++l) {
      const auto sl = static_cast<std::size_t>(l);
      total += view.m0->W[sl].cwiseProduct(m1p.W[sl]).sum();
      if (opt.include_bias) total += view.m0->b[sl].dot(m1p.b[sl]);
    }
    if (view.s0 != nullptr) {
      ParamVector s1p = pushforward(*view.s1, ps);
      for (int l = 0; l < spec.layers(); ++l) {
        const auto sl = static_cast<std::size_t>(l);
        total += view.s0->W[sl].cwiseProduct(s1p.W[sl]).sum();
        if (opt.include_bias) total += view.s0->b[sl].dot(s1p.b[sl]);
      }
    }
    return total;
  }
  for (int l = 0; l < spec.layers(); ++l) {
    const auto sl = static_cast<std::size_t>(l);
    const Eigen::MatrixXd w = detail::kl_weights(view.s0->W[sl], opt.kl_weighting);
    total -= (w.cwiseProduct((view.m0->W[sl] - m1p.W[sl]).cwiseAbs2())).sum();
    if (opt.include_bias) {
      const Eigen::MatrixXd wb = detail::kl_weights(view.s0->b[sl], opt.kl_weighting);
      total -= (wb.col(0).cwiseProduct((view.m0->b[sl] - m1p.b[sl]).cwiseAbs2())).sum();
    }
  }
  return total;
}

inline double align_objective(const GaussianPosterior& q0, const GaussianPosterior& q1,
                              const PermutationSet& ps, const AlignOptions& opt) {
  detail::AlignView view{&q0.spec, &q0.mean, &q1.mean, &q0.stddev, &q1.stddev};
  return align_objective_impl(view, ps, opt);
}

struct AlignReport {
  std::vector<double> objective_trace;  // initial value, then one entry per sweep
  int sweeps = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

namespace detail {

// Coordinate descent over the hidden layers: each step solves the LAP of
// one layer with the neighbors held fixed and keeps the result only if
// it strictly improves that layer's score (ties keep the incumbent, so
// tied optima cannot oscillate). Layer order is reshuffled every sweep.
// Stops when a full sweep changes nothing.
inline std::pair<PermutationSet, AlignReport> align_single(const AlignView& view,
                                                           const AlignOptions& opt,
                                                           PermutationSet ps, Rng& rng) {
  AlignReport rep;
  rep.objective_trace.push_back(align_objective_impl(view, ps, opt));

  std::vector<int> order(static_cast<std::size_t>(view.spec->hidden_layers()));
  std::iota(order.begin(), order.end(), 0);

  for (int sweep = 1; sweep <= opt.max_sweeps && !order.empty(); ++sweep) {
    rng.shuffle(order);
    bool changed = false;
    for (int h : order) {
      const Eigen::MatrixXd score = layer_score_matrix_impl(view, ps, h, opt);
      Permutation cand = solve_lap_max(score);
      const auto sh = static_cast<std::size_t>(h);
      if (lap_objective(cand, score) > lap_objective(ps.perms[sh], score)) {
        ps.perms[sh] = std::move(cand);
        changed = true;
      }
    }
    const double obj = align_objective_impl(view, ps, opt);
    const double floor = rep.objective_trace.back() -
                         1e-9 * (1.0 + std::abs(rep.objective_trace.back()));
    if (obj < floor) throw std::logic_error("align: objective decreased during a sweep");
    rep.objective_trace.push_back(obj);
    rep.sweeps = sweep;
    if (!changed) {
      rep.converged = true;
      break;
    }
  }
  if (order.empty()) rep.converged = true;
  return {std::move(ps), std::move(rep)};
}

// The joint problem is non-convex and a single descent run can stall in a
// layer-coupled local optimum, so the search is an iterated local search:
// the first run starts at the identity, even restarts at fresh random
// permutation sets, odd restarts at the incumbent perturbed by one random
// transposition per layer. The best final objective wins (first winner kept
// on ties, so the identity start prevails whenever it is optimal). All
// randomness comes from one seeded stream. The returned report describes
// the winning run only; wall_ms covers the whole search.
inline std::pair<PermutationSet, AlignReport> align_impl(const AlignView& view,
                                                         const AlignOptions& opt) {
  opt.validate();
  const MlpSpec& spec = *view.spec;
  const auto t0 = std::chrono::steady_clock::now();

  Rng rng(opt.seed);
  std::pair<PermutationSet, AlignReport> best;
  for (int r = 0; r < opt.restarts; ++r) {
    PermutationSet start = PermutationSet::identity(spec);
    if (r > 0 && r % 2 == 1) {
      start = best.first;
      for (auto& p : start.perms) {
        if (p.size() < 2) continue;
        const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.size())));
        int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.size() - 1)));
        if (b >= a) ++b;
        std::swap(p.map[static_cast<std::size_t>(a)], p.map[static_cast<std::size_t>(b)]);
      }
    } else if (r > 0) {
      for (auto& p : start.perms) rng.shuffle(p.map);
    }
    auto run = align_single(view, opt, std::move(start), rng);
    if (r == 0 || run.second.objective_trace.back() > best.second.objective_trace.back()) {
      best = std::move(run);
    }
  }
  best.second.seed = opt.seed;
  best.second.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

}  // namespace detail

// Aligns q1 onto q0 over the neuron permutation symmetry. Returns the
// permutation set to apply to q1 (pushforward(q1, P) is the aligned
// posterior) plus the sweep report.
inline std::pair<PermutationSet, AlignReport> align_posteriors(const GaussianPosterior& q0,
                                                               const GaussianPosterior& q1,
                                                               const AlignOptions& opt = {}) {
  q0.validate();
  q1.validate();
  if (!(q0.spec == q1.spec)) throw std::invalid_argument("align: specs differ");
  detail::AlignView view{&q0.spec, &q0.mean, &q1.mean, &q0.stddev, &q1.stddev};
  return detail::align_impl(view, opt);
}

// Point-estimate variant (classic weight matching on two weight vectors).
inline std::pair<PermutationSet, AlignReport> align_point_estimates(const MlpSpec& spec,
                                                                    const ParamVector& theta0,
                                                                    const ParamVector& theta1,
                                                                    const AlignOptions& opt = {}) {
  spec.validate();
  if (!theta0.matches(spec) || !theta1.matches(spec)) {
    throw std::invalid_argument("align: parameter shapes do not match spec");
  }
  detail::AlignView view{&spec, &theta0, &theta1, nullptr, nullptr};
  return detail::align_impl(view, opt);
}

}  // namespace vialign
