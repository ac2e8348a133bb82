// Acceptance gates: every release property is checked here end to end,
// one [PASS]/[FAIL] line each, with a wall-clock budget per gate. The
// binary exits nonzero if any gate fails. The desk-scale gate shells out
// to the CLI binaries named by VIALIGN_CLI / VIALIGN_SYNTH and patches
// the data paths of the shipped config named by VIALIGN_DESK_CONFIG.

#include <sys/wait.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "vialign/align.hpp"
#include "vialign/bnn.hpp"
#include "vialign/data.hpp"
#include "vialign/eval.hpp"
#include "vialign/interp.hpp"
#include "vialign/lap.hpp"
#include "vialign/rng.hpp"
#include "vialign/vi.hpp"

namespace fs = std::filesystem;
using namespace vialign;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Check {
  std::vector<std::string> failures;

  void require(bool ok, const std::string& msg) {
    if (!ok) failures.push_back(msg);
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double max_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double worst = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) worst = std::max(worst, rel_err(a(i, j), b(i, j)));
  }
  return worst;
}

Dataset random_regression_batch(const MlpSpec& spec, int n, Rng& rng) {
  Dataset ds;
  ds.task = TaskKind::Regression;
  ds.X.resize(n, spec.in_dim());
  ds.Y.resize(n, spec.out_dim());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.in_dim(); ++j) ds.X(i, j) = rng.normal();
    for (int j = 0; j < spec.out_dim(); ++j) ds.Y(i, j) = rng.normal();
  }
  return ds;
}

Dataset random_class_batch(const MlpSpec& spec, int n, Rng& rng) {
  Dataset ds;
  ds.task = TaskKind::Classification;
  ds.X.resize(n, spec.in_dim());
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.in_dim(); ++j) ds.X(i, j) = rng.normal();
    ds.labels(i) = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.out_dim())));
  }
  return ds;
}

Dataset random_batch(const MlpSpec& spec, int n, Rng& rng) {
  return spec.task == TaskKind::Regression ? random_regression_batch(spec, n, rng)
                                           : random_class_batch(spec, n, rng);
}

template <class F>
void for_each_coord(const MlpSpec& spec, F f) {
  for (int l = 0; l < spec.layers(); ++l) {
    for (int i = 0; i < spec.widths[static_cast<std::size_t>(l) + 1]; ++i) {
      for (int j = 0; j < spec.widths[static_cast<std::size_t>(l)]; ++j) f(l, false, i, j);
      f(l, true, i, 0);
    }
  }
}

double& coord(ParamVector& p, int l, bool bias, int i, int j) {
  return bias ? p.b[static_cast<std::size_t>(l)](i) : p.W[static_cast<std::size_t>(l)](i, j);
}

PermutationSet random_hidden_perms(const MlpSpec& spec, Rng& rng) {
  PermutationSet ps = PermutationSet::identity(spec);
  for (auto& p : ps.perms) rng.shuffle(p.map);
  return ps;
}

Eigen::VectorXd flat_posterior(const GaussianPosterior& q) {
  const Eigen::VectorXd m = flatten_params(q.mean);
  const Eigen::VectorXd s = flatten_params(q.stddev);
  Eigen::VectorXd v(m.size() + s.size());
  v << m, s;
  return v;
}

// ---- gate 1: the LAP solver matches exhaustive search exactly ----------

void lap_matches_exhaustive(Check& c) {
  Rng rng(101);
  for (int t = 0; t < 500; ++t) {
    const int d = 2 + t % 6;
    Eigen::MatrixXd score(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) score(i, j) = rng.uniform(-5.0, 5.0);
    }
    // Every fifth matrix gets integer entries so ties are exercised too.
    if (t % 5 == 0) score = score.array().round().matrix();

    const double got = lap_objective(solve_lap_max(score), score);
    std::vector<int> idx(static_cast<std::size_t>(d));
    std::iota(idx.begin(), idx.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    Permutation p;
    do {
      p.map = idx;
      best = std::max(best, lap_objective(p, score));
    } while (std::next_permutation(idx.begin(), idx.end()));

    if (got != best) {
      c.require(false, "matrix " + std::to_string(t) + " (d " + std::to_string(d) + "): solver " +
                           num(got) + " vs exhaustive " + num(best));
      return;
    }
  }
}

// ---- gate 2: hidden-unit permutations leave the network function alone -

void permutation_preserves_predictions(Check& c) {
  for (int t = 0; t < 20; ++t) {
    MlpSpec spec;
    spec.task = t % 2 == 0 ? TaskKind::Regression : TaskKind::Classification;
    spec.noise_std = 0.7;
    spec.widths.push_back(2 + t % 3);
    for (int h = 0; h < 1 + t % 3; ++h) spec.widths.push_back(3 + (t + 2 * h) % 6);
    spec.widths.push_back(2 + (t / 2) % 3);

    Rng rng(200 + static_cast<std::uint64_t>(t));
    const GaussianPosterior q = random_posterior(spec, 500 + static_cast<std::uint64_t>(t), 0.8, 0.3, 1.1);
    const PermutationSet ps = random_hidden_perms(spec, rng);
    const GaussianPosterior qp = pushforward(q, ps);
    const Dataset data = random_batch(spec, 16, rng);

    const auto noise = draw_noise_stack(spec, 8, 900 + static_cast<std::uint64_t>(t));
    std::vector<ParamVector> pushed;
    pushed.reserve(noise.size());
    for (const auto& eps : noise) pushed.push_back(pushforward(eps, ps));

    // Raw outputs draw by draw under coupled noise, then the marginal.
    double worst = 0.0;
    for (std::size_t k = 0; k < noise.size(); ++k) {
      const Eigen::MatrixXd ya = forward(spec, sample_params(q, noise[k]), data.X);
      const Eigen::MatrixXd yb = forward(spec, sample_params(qp, pushed[k]), data.X);
      worst = std::max(worst, max_rel_err(ya, yb));
    }
    const Eigen::VectorXd la = per_point_log_marginal(q, data, noise);
    const Eigen::VectorXd lb = per_point_log_marginal(qp, data, pushed);
    for (int i = 0; i < la.size(); ++i) worst = std::max(worst, rel_err(la(i), lb(i)));

    c.require(worst <= 1e-6,
              "pair " + std::to_string(t) + ": outputs diverge, worst rel err " + num(worst));
  }
}

// ---- gate 3: a planted permutation is recovered at realistic widths ----

void planted_permutation_recovery(Check& c) {
  for (int w : {8, 32, 128}) {
    MlpSpec spec;
    spec.widths = {16, w, w, w, 16};
    spec.task = TaskKind::Classification;

    const GaussianPosterior q0 =
        random_posterior(spec, 310 + static_cast<std::uint64_t>(w), 1.0, 0.5, 1.5);
    Rng prng(320 + static_cast<std::uint64_t>(w));
    const PermutationSet planted = random_hidden_perms(spec, prng);
    const GaussianPosterior q1 = pushforward(q0, planted);

    AlignOptions opt;
    opt.seed = 7;
    const auto [ps, rep] = align_posteriors(q0, q1, opt);
    const double target = align_objective(q0, q1, planted.inverse(), opt);

    c.require(ps == planted.inverse(),
              "width " + std::to_string(w) + ": planted permutation not recovered");
    c.require(rel_err(rep.objective_trace.back(), target) <= 1e-9,
              "width " + std::to_string(w) + ": objective " + num(rep.objective_trace.back()) +
                  " vs planted " + num(target));

    // Aligning q1 back onto q0 must leave no geodesic barrier beyond
    // Monte Carlo noise: |mean| within 3 standard errors over eval seeds
    // (floored at 1e-9 because exact recovery leaves zero spread).
    const GaussianPosterior aligned = pushforward(q1, ps);
    Rng drng(340 + static_cast<std::uint64_t>(w));
    const Dataset data = random_class_batch(spec, 200, drng);
    EvalOptions eo;
    eo.n_mc = 16;
    eo.n_taus = 11;
    eo.path = PathKind::Geodesic;
    std::vector<double> barriers;
    for (int s = 0; s < 5; ++s) {
      eo.seed = 1000 + static_cast<std::uint64_t>(s);
      barriers.push_back(barrier_scan(q0, aligned, data, eo).barrier);
    }
    const double mean =
        std::accumulate(barriers.begin(), barriers.end(), 0.0) / static_cast<double>(barriers.size());
    double ss = 0.0;
    for (double b : barriers) ss += (b - mean) * (b - mean);
    const double se = std::sqrt(ss / (barriers.size() - 1) / static_cast<double>(barriers.size()));
    c.require(std::abs(mean) <= std::max(3.0 * se, 1e-9),
              "width " + std::to_string(w) + ": post-alignment barrier " + num(mean) +
                  " above noise allowance " + num(std::max(3.0 * se, 1e-9)));
  }
}

// ---- gate 4: coordinate descent vs the exhaustive joint optimum --------

void alignment_near_exhaustive_optimum(Check& c) {
  MlpSpec spec;
  spec.widths = {3, 4, 4, 2};
  spec.task = TaskKind::Regression;
  for (int t = 0; t < 50; ++t) {
    const GaussianPosterior q0 =
        random_posterior(spec, 4000 + 2 * static_cast<std::uint64_t>(t), 0.9, 0.4, 1.3);
    const GaussianPosterior q1 =
        random_posterior(spec, 4001 + 2 * static_cast<std::uint64_t>(t), 0.9, 0.4, 1.3);
    AlignOptions opt;
    opt.seed = static_cast<std::uint64_t>(t);
    const auto [ps, rep] = align_posteriors(q0, q1, opt);
    const double cd = rep.objective_trace.back();

    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> p0{0, 1, 2, 3};
    do {
      std::vector<int> p1{0, 1, 2, 3};
      do {
        PermutationSet cand = PermutationSet::identity(spec);
        cand.perms[0].map = p0;
        cand.perms[1].map = p1;
        best = std::max(best, align_objective(q0, q1, cand, opt));
      } while (std::next_permutation(p1.begin(), p1.end()));
    } while (std::next_permutation(p0.begin(), p0.end()));

    c.require(cd >= best - 0.01 * std::abs(best), "pair " + std::to_string(t) + ": descent " +
                                                      num(cd) + " below 99% of optimum " + num(best));
    c.require(cd <= best + 1e-9 * (1.0 + std::abs(best)),
              "pair " + std::to_string(t) + ": descent " + num(cd) +
                  " above the exhaustive optimum " + num(best));
  }
}

// ---- gate 5: pathwise ELBO gradients vs central finite differences -----

void elbo_gradient_finite_differences(Check& c) {
  MlpSpec spec;
  spec.widths = {2, 4, 2};  // 22 parameters
  spec.task = TaskKind::Regression;
  spec.noise_std = 0.8;
  c.require(spec.param_count() <= 50, "gate model must stay small");

  Rng rng(81);
  const Dataset batch = random_regression_batch(spec, 8, rng);
  const Prior prior{0.7};
  TrainConfig cfg;
  cfg.temperature = 1.3;

  VarParams v;
  v.spec = spec;
  v.mean = random_posterior(spec, 82, 0.7).mean;
  v.rho = random_posterior(spec, 83, 0.5).mean;

  std::vector<ParamVector> noise;
  for (int k = 0; k < 3; ++k) noise.push_back(standard_normal_like(spec, rng));

  ElboGradient eg = elbo_gradient(v, batch, 20, prior, cfg, noise);
  const ElboEstimate direct = estimate_elbo(v.posterior(), batch, 20, prior, cfg, noise);
  c.require(std::abs(eg.estimate.elbo - direct.elbo) <= 1e-9,
            "gradient-path elbo " + num(eg.estimate.elbo) + " vs direct " + num(direct.elbo));

  const auto elbo_at = [&](const VarParams& vp) {
    return estimate_elbo(vp.posterior(), batch, 20, prior, cfg, noise).elbo;
  };
  const double h = 1e-4;
  double worst = 0.0;
  for (int part = 0; part < 2; ++part) {
    for_each_coord(spec, [&](int l, bool bias, int i, int j) {
      VarParams vp = v, vm = v;
      coord(part == 0 ? vp.mean : vp.rho, l, bias, i, j) += h;
      coord(part == 0 ? vm.mean : vm.rho, l, bias, i, j) -= h;
      const double fd = (elbo_at(vp) - elbo_at(vm)) / (2.0 * h);
      const double an = coord(part == 0 ? eg.grad.mean : eg.grad.rho, l, bias, i, j);
      worst = std::max(worst, rel_err(an, fd));
    });
  }
  c.require(worst <= 1e-4, "worst per-coordinate rel err " + num(worst) + " above 1e-4");
}

// ---- gate 6: VI recovers the conjugate linear-Gaussian posterior -------

struct ConjugateOracle {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
  double log_evidence;
};

ConjugateOracle exact_linear_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                      double s, double a2) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd Phi(n, 2);
  Phi.col(0) = x;
  Phi.col(1).setOnes();
  const Eigen::Matrix2d A = Phi.transpose() * Phi / (s * s) + Eigen::Matrix2d::Identity() / a2;
  ConjugateOracle out;
  out.cov = A.inverse();
  out.mean = out.cov * Phi.transpose() * y / (s * s);
  const Eigen::MatrixXd K = s * s * Eigen::MatrixXd::Identity(n, n) + a2 * Phi * Phi.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(K);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  out.log_evidence = -0.5 * (y.dot(llt.solve(y)) + logdet + n * std::log(2.0 * kPi));
  return out;
}

double closed_form_elbo(double mw, double mb, double sw, double sb, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& y, double s, double a2) {
  double ell = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double r = y(i) - mw * x(i) - mb;
    ell += -0.5 * std::log(2.0 * kPi * s * s) -
           (r * r + sw * sw * x(i) * x(i) + sb * sb) / (2.0 * s * s);
  }
  const auto kl1 = [&](double m, double sig) {
    return 0.5 * std::log(a2 / (sig * sig)) + (sig * sig + m * m) / (2.0 * a2) - 0.5;
  };
  return ell - kl1(mw, sw) - kl1(mb, sb);
}

void vi_recovers_conjugate_posterior(Check& c) {
  const int n = 16;
  const double s = 0.5, a2 = 1.0;
  Rng rng(123);
  Eigen::VectorXd x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x(i) = rng.uniform(-2.0, 2.0);
    y(i) = 1.2 * x(i) + 0.3 + s * rng.normal();
  }
  const ConjugateOracle oracle = exact_linear_gaussian(x, y, s, a2);

  MlpSpec spec;
  spec.widths = {1, 1};
  spec.task = TaskKind::Regression;
  spec.noise_std = s;

  Dataset train;
  train.task = TaskKind::Regression;
  train.X = x;
  train.Y = y;

  TrainConfig cfg;
  cfg.batch_size = n;
  cfg.epochs = 6000;
  cfg.learning_rate = 1e-4;
  cfg.momentum = 0.9;
  cfg.n_mc_train = 64;
  cfg.prior_variance = a2;
  cfg.std_init = 0.05;
  cfg.seed = 2024;

  const TrainResult res = train_vi(spec, train, cfg);
  const double mw = res.posterior.mean.W[0](0, 0);
  const double mb = res.posterior.mean.b[0](0);
  const double sw = res.posterior.stddev.W[0](0, 0);
  const double sb = res.posterior.stddev.b[0](0);

  c.require(std::abs(mw - oracle.mean(0)) <= 0.05 * std::abs(oracle.mean(0)),
            "slope " + num(mw) + " outside 5% of exact " + num(oracle.mean(0)));
  c.require(std::abs(mb - oracle.mean(1)) <= 0.05 * std::abs(oracle.mean(1)),
            "intercept " + num(mb) + " outside 5% of exact " + num(oracle.mean(1)));

  const double elbo = closed_form_elbo(mw, mb, sw, sb, x, y, s, a2);
  c.require(elbo <= oracle.log_evidence + 1e-6,
            "elbo " + num(elbo) + " above the log evidence " + num(oracle.log_evidence));
  c.require(elbo > oracle.log_evidence - 1.0,
            "elbo " + num(elbo) + " far below the log evidence " + num(oracle.log_evidence));
}

// ---- gate 7: the mixture path never drops below its chord --------------

void mixture_path_barrier_is_flat(Check& c) {
  for (int t = 0; t < 20; ++t) {
    MlpSpec spec;
    spec.task = t % 2 == 0 ? TaskKind::Classification : TaskKind::Regression;
    spec.noise_std = 0.6;
    spec.widths = {2 + t % 3, 5, 4, 2 + (t / 3) % 2};
    Rng rng(700 + static_cast<std::uint64_t>(t));
    const GaussianPosterior q0 =
        random_posterior(spec, 7100 + 2 * static_cast<std::uint64_t>(t), 0.9, 0.3, 1.2);
    const GaussianPosterior q1 =
        random_posterior(spec, 7101 + 2 * static_cast<std::uint64_t>(t), 0.9, 0.3, 1.2);
    const Dataset data = random_batch(spec, 24, rng);

    EvalOptions eo;
    eo.path = PathKind::Mixture;
    eo.n_mc = 8;
    eo.n_taus = 15;
    eo.seed = 7000 + static_cast<std::uint64_t>(t);
    const BarrierReport rep = barrier_scan(q0, q1, data, eo);
    c.require(rep.barrier >= 0.0 && rep.barrier <= 1e-9,
              "pair " + std::to_string(t) + ": mixture barrier " + num(rep.barrier));
  }
}

// ---- gate 8: desk-scale pipeline through the CLI ------------------------

std::string log_tail(const fs::path& p) {
  std::ifstream is(p);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (all.size() > 400) all = "..." + all.substr(all.size() - 400);
  for (auto& ch : all) {
    if (ch == '\n') ch = ' ';
  }
  return all;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(is, nullptr, true, true);
}

void desk_scale_alignment_cuts_barrier(Check& c) {
  const char* cli = std::getenv("VIALIGN_CLI");
  const char* synth = std::getenv("VIALIGN_SYNTH");
  const char* cfg_env = std::getenv("VIALIGN_DESK_CONFIG");
  if (cli == nullptr || synth == nullptr || cfg_env == nullptr) {
    c.require(false, "VIALIGN_CLI, VIALIGN_SYNTH and VIALIGN_DESK_CONFIG must be set");
    return;
  }

  const fs::path work = fs::temp_directory_path() / "vialign_acceptance";
  fs::remove_all(work);
  fs::create_directories(work / "data");

  const auto sh = [&](const std::string& what, const std::string& cmd) {
    const fs::path log = work / (what + ".log");
    const int rc = std::system((cmd + " > \"" + log.string() + "\" 2>&1").c_str());
    const int status = (rc != -1 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
    if (status != 0) {
      c.require(false, what + " exited with " + std::to_string(status) + ": " + log_tail(log));
      return false;
    }
    return true;
  };
  const auto quoted = [](const fs::path& p) { return "\"" + p.string() + "\""; };

  // A fresh dataset pool, subsetted by the config to 5000 / 2000.
  if (!sh("synth", quoted(synth) + " --out " + quoted(work / "data") +
                       " --n-train 12000 --n-test 3000 --seed 7")) {
    return;
  }

  // The shipped config, with only the file locations rewritten.
  nlohmann::json j = read_json(cfg_env);
  j["data"]["train_images"] = (work / "data" / "train-images-idx3-ubyte.gz").string();
  j["data"]["train_labels"] = (work / "data" / "train-labels-idx1-ubyte.gz").string();
  j["data"]["test_images"] = (work / "data" / "t10k-images-idx3-ubyte.gz").string();
  j["data"]["test_labels"] = (work / "data" / "t10k-labels-idx1-ubyte.gz").string();
  j["output_dir"] = (work / "out").string();
  const fs::path cfg_path = work / "desk.json";
  std::ofstream(cfg_path) << j.dump(2) << "\n";

  const fs::path out = work / "out";
  const std::string base = quoted(cli) + " ";
  const std::string cfg_arg = " --config " + quoted(cfg_path);
  const std::string ckpts =
      quoted(out / "ckpt_seed0.bin") + " " + quoted(out / "ckpt_seed1.bin");

  if (!sh("train", base + "train" + cfg_arg)) return;
  if (!sh("align", base + "align " + ckpts + cfg_arg)) return;
  if (!sh("barrier_naive", base + "barrier " + ckpts + cfg_arg)) return;
  const nlohmann::json naive = read_json(out / "barrier_summary.json");
  if (!sh("barrier_aligned", base + "barrier " + ckpts + " --perms " +
                                 quoted(out / "perms.txt") + cfg_arg)) {
    return;
  }
  const nlohmann::json aligned = read_json(out / "barrier_summary.json");

  c.require(!naive["perms_applied"].get<bool>() && aligned["perms_applied"].get<bool>(),
            "perms_applied flags are wrong");
  c.require(naive["path"].get<std::string>() == "geodesic", "config must scan the geodesic path");

  const double naive_pd = naive["test"]["barrier_per_datum"].get<double>();
  const double naive_total = naive["test"]["barrier"].get<double>();
  const double aligned_total = aligned["test"]["barrier"].get<double>();
  c.require(naive_pd >= 0.1,
            "naive test barrier " + num(naive_pd) + " nats/datum, need at least 0.1");
  c.require(aligned_total <= 0.30 * naive_total,
            "aligned test barrier " + num(aligned_total) + " not below 30% of naive " +
                num(naive_total));
}

// ---- gate 9: geodesic identities ----------------------------------------

void geodesic_identities(Check& c) {
  for (int t = 0; t < 10; ++t) {
    MlpSpec spec;
    spec.task = TaskKind::Regression;
    spec.noise_std = 0.5;
    spec.widths = {2 + t % 2, 4 + t % 3, 3 + (t / 2) % 3, 2};
    const GaussianPosterior q0 =
        random_posterior(spec, 9000 + 2 * static_cast<std::uint64_t>(t), 1.0, 0.4, 1.4);
    const GaussianPosterior q1 =
        random_posterior(spec, 9001 + 2 * static_cast<std::uint64_t>(t), 1.0, 0.4, 1.4);

    const double e0 = (flat_posterior(geodesic_point(q0, q1, 0.0)) - flat_posterior(q0))
                          .cwiseAbs()
                          .maxCoeff();
    const double e1 = (flat_posterior(geodesic_point(q0, q1, 1.0)) - flat_posterior(q1))
                          .cwiseAbs()
                          .maxCoeff();
    c.require(e0 == 0.0 && e1 == 0.0, "pair " + std::to_string(t) + ": endpoints not exact");

    const double full = w2_distance_sq(q0, q1);
    for (double tau : {0.25, 0.5, 0.8}) {
      const GaussianPosterior qt = geodesic_point(q0, q1, tau);
      c.require(rel_err(w2_distance_sq(q0, qt), tau * tau * full) <= 1e-8,
                "pair " + std::to_string(t) + ": speed to tau " + num(tau) + " not constant");
      c.require(rel_err(w2_distance_sq(qt, q1), (1.0 - tau) * (1.0 - tau) * full) <= 1e-8,
                "pair " + std::to_string(t) + ": speed from tau " + num(tau) + " not constant");
    }

    Rng rng(9100 + static_cast<std::uint64_t>(t));
    const PermutationSet ps = random_hidden_perms(spec, rng);
    const Eigen::VectorXd a = flat_posterior(pushforward(geodesic_point(q0, q1, 0.4), ps));
    const Eigen::VectorXd b = flat_posterior(
        geodesic_point(pushforward(q0, ps), pushforward(q1, ps), 0.4));
    const double comm = (a - b).cwiseAbs().maxCoeff();
    c.require(comm <= 1e-8 * std::max(1.0, a.cwiseAbs().maxCoeff()),
              "pair " + std::to_string(t) + ": pushforward does not commute, gap " + num(comm));
    c.require(rel_err(w2_distance_sq(pushforward(q0, ps), pushforward(q1, ps)), full) <= 1e-8,
              "pair " + std::to_string(t) + ": W2 not permutation invariant");
  }
}

// ---- gate 10: IDX container round trip and damage rejection -------------

void idx_roundtrip_and_truncation(Check& c) {
  Rng rng(1010);
  for (int t = 0; t < 50; ++t) {
    IdxTensor x;
    const int rank = 1 + t % 3;
    std::size_t total = 1;
    for (int k = 0; k < rank; ++k) {
      const auto d = static_cast<std::uint32_t>(1 + rng.below(5));
      x.dims.push_back(d);
      total *= d;
    }
    x.data.resize(total);
    for (auto& b : x.data) b = static_cast<std::uint8_t>(rng.below(256));
    if (!(parse_idx(serialize_idx(x)) == x)) {
      c.require(false, "round trip " + std::to_string(t) + " changed the tensor");
      return;
    }
  }

  {
    IdxTensor x;
    x.dims = {2, 3};
    x.data = {1, 2, 3, 4, 5, 6};
    const fs::path p = fs::temp_directory_path() / "vialign_acceptance_idx.gz";
    write_file_bytes(p.string(), gzip_compress(serialize_idx(x)));
    c.require(load_idx(p.string()) == x, "gzipped file did not round trip");
    fs::remove(p);
  }

  IdxTensor m;
  m.dims = {3};
  m.data = {1, 2, 3};
  const std::vector<std::uint8_t> bytes = serialize_idx(m);
  c.require(bytes.size() == 11, "minimal file should be 11 bytes");
  c.require(parse_idx(bytes) == m, "minimal file must parse");
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    bool threw = false;
    try {
      parse_idx(bytes.data(), len);
    } catch (const IdxError&) {
      threw = true;
    }
    c.require(threw, "truncation to " + std::to_string(len) + " bytes was accepted");
  }
  for (std::size_t k = 0; k < bytes.size(); ++k) {
    std::vector<std::uint8_t> cut = bytes;
    cut.erase(cut.begin() + static_cast<std::ptrdiff_t>(k));
    bool threw = false;
    try {
      parse_idx(cut);
    } catch (const IdxError&) {
      threw = true;
    }
    c.require(threw, "dropping byte " + std::to_string(k) + " was accepted");
  }
}

}  // namespace

int main() {
  struct Gate {
    const char* label;
    double budget_s;
    void (*fn)(Check&);
  };
  const Gate gates[] = {
      {"lap-matches-exhaustive-search", 10.0, lap_matches_exhaustive},
      {"permutation-preserves-predictions", 5.0, permutation_preserves_predictions},
      {"planted-permutation-recovery", 30.0, planted_permutation_recovery},
      {"alignment-near-exhaustive-optimum", 60.0, alignment_near_exhaustive_optimum},
      {"elbo-gradient-finite-differences", 5.0, elbo_gradient_finite_differences},
      {"vi-recovers-conjugate-posterior", 60.0, vi_recovers_conjugate_posterior},
      {"mixture-path-barrier-is-flat", 30.0, mixture_path_barrier_is_flat},
      {"desk-scale-alignment-cuts-barrier", 1800.0, desk_scale_alignment_cuts_barrier},
      {"geodesic-identities", 5.0, geodesic_identities},
      {"idx-roundtrip-and-truncation", 5.0, idx_roundtrip_and_truncation},
  };

  int failed = 0;
  for (std::size_t k = 0; k < std::size(gates); ++k) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      gates[k].fn(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("unexpected exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > gates[k].budget_s) {
      c.failures.push_back("runtime " + num(secs) + " s exceeds the " + num(gates[k].budget_s) +
                           " s budget");
    }
    char line[160];
    std::snprintf(line, sizeof(line), "[%s] %2zu. %s (%.1f s)",
                  c.failures.empty() ? "PASS" : "FAIL", k + 1, gates[k].label, secs);
    std::cout << line << "\n";
    for (const auto& f : c.failures) std::cout << "        - " << f << "\n";
    std::cout.flush();
    if (!c.failures.empty()) ++failed;
  }

  if (failed > 0) {
    std::cout << failed << " of " << std::size(gates) << " gates failed\n";
    return 1;
  }
  std::cout << "all " << std::size(gates) << " gates passed\n";
  return 0;
}
