#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vialign/align.hpp"
#include "vialign/bnn.hpp"
#include "vialign/config.hpp"
#include "vialign/data.hpp"
#include "vialign/eval.hpp"
#include "vialign/interp.hpp"
#include "vialign/vi.hpp"

namespace vialign {

inline constexpr const char* kVersion = "0.1.0";

// Builds the train/test splits named by the config. "idx" reads (possibly
// gzipped) IDX files and is classification only; "synth_regression" draws
// the 1-d toy, with the test split seeded one past the train split.
inline std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
  if (cfg.data.source == "idx") {
    if (cfg.task_kind() != TaskKind::Classification) {
      throw ConfigError("data.source \"idx\" requires model.task \"classification\"");
    }
    return build_image_split(load_idx(cfg.data.train_images), load_idx(cfg.data.train_labels),
                             load_idx(cfg.data.test_images), load_idx(cfg.data.test_labels),
                             cfg.data.n_train, cfg.data.n_test, cfg.data.num_classes,
                             cfg.data.seed);
  }
  if (cfg.task_kind() != TaskKind::Regression) {
    throw ConfigError("data.source \"synth_regression\" requires model.task \"regression\"");
  }
  return {synth_regression(cfg.data.n_train, cfg.data.noise_std, cfg.data.seed),
          synth_regression(cfg.data.n_test, cfg.data.noise_std, cfg.data.seed + 1)};
}

// Columns: epoch, elbo, expected_loglik, kl, wall_ms. Everything except
// wall_ms is bit-reproducible for a fixed seed.
inline void write_trace_csv(const std::string& path, const std::vector<TracePoint>& trace) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "epoch,elbo,expected_loglik,kl,wall_ms\n";
  for (const auto& p : trace) {
    os << p.epoch << ',' << detail::g17(p.elbo) << ',' << detail::g17(p.expected_loglik) << ','
       << detail::g17(p.kl) << ',' << detail::g17(p.wall_ms) << '\n';
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("short write to " + path);
}

class ManifestScope {
 public:
  ManifestScope(std::string command, const ExperimentConfig& cfg, std::string out_dir)
      : command_(std::move(command)), cfg_(cfg), out_dir_(std::move(out_dir)),
        t0_(std::chrono::steady_clock::now()) {
    std::filesystem::create_directories(out_dir_);
  }

  std::string out_path(const std::string& name) {
    outputs_.push_back(name);
    return (std::filesystem::path(out_dir_) / name).string();
  }

  void extra(const std::string& key, const nlohmann::json& value) { extras_[key] = value; }

  // Writes manifest_<command>.json next to the outputs.
  void finish() {
    nlohmann::json j;
    j["command"] = command_;
    j["version"] = kVersion;
    j["config_hash"] = hex64(config_hash(cfg_));
    j["seeds"] = {{"seed0", cfg_.seeds.seed0}, {"seed1", cfg_.seeds.seed1}};
    j["wall_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
    j["outputs"] = outputs_;
    for (auto& [k, v] : extras_.items()) j[k] = v;
    write_json((std::filesystem::path(out_dir_) / ("manifest_" + command_ + ".json")).string(),
               j);
  }

 private:
  std::string command_;
  const ExperimentConfig& cfg_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point t0_;
  std::vector<std::string> outputs_;
  nlohmann::json extras_ = nlohmann::json::object();
};

inline Checkpoint load_matching_checkpoints(const std::string& p0, const std::string& p1,
                                            Checkpoint& ck1) {
  Checkpoint ck0 = load_checkpoint(p0);
  ck1 = load_checkpoint(p1);
  if (!(ck0.posterior.spec == ck1.posterior.spec)) {
    throw std::runtime_error("checkpoints " + p0 + " and " + p1 + " have different architectures");
  }
  return ck0;
}

}  // namespace detail

// Trains one posterior per seed (seeds.seed0 and seeds.seed1; an explicit
// seed override rebases them to seed, seed+1) and writes
// ckpt_seed<i>.bin plus trace_seed<i>.csv.
inline void cmd_train(ExperimentConfig cfg, const std::string& out_dir,
                      std::optional<std::uint64_t> seed_override = {}) {
  if (seed_override) {
    cfg.seeds.seed0 = *seed_override;
    cfg.seeds.seed1 = *seed_override + 1;
  }
  auto [train, test] = load_datasets(cfg);
  const MlpSpec spec = cfg.mlp_spec(train.in_dim());
  spec.validate();

  detail::ManifestScope scope("train", cfg, out_dir);
  const std::uint64_t seeds[2] = {cfg.seeds.seed0, cfg.seeds.seed1};
  for (int i = 0; i < 2; ++i) {
    TrainConfig tc = cfg.train;
    tc.seed = seeds[i];
    TrainResult res = train_vi(spec, train, tc);
    const std::string tag = "seed" + std::to_string(i);
    save_checkpoint(scope.out_path("ckpt_" + tag + ".bin"),
                    Checkpoint{res.posterior, tc.prior_variance, tc.seed});
    write_trace_csv(scope.out_path("trace_" + tag + ".csv"), res.trace);
    const auto& last = res.trace.back();
    std::cout << "trained " << tag << " (seed " << seeds[i] << "): elbo " << last.elbo
              << ", expected loglik " << last.expected_loglik << ", kl " << last.kl << "\n";
  }
  scope.extra("n_train", train.n());
  scope.extra("n_test", test.n());
  scope.finish();
}

// Aligns the second checkpoint onto the first and writes perms.txt (one
// line per hidden layer) plus align_report.json.
inline void cmd_align(const ExperimentConfig& cfg, const std::string& out_dir,
                      const std::string& ckpt0, const std::string& ckpt1) {
  Checkpoint ck1;
  const Checkpoint ck0 = detail::load_matching_checkpoints(ckpt0, ckpt1, ck1);

  detail::ManifestScope scope("align", cfg, out_dir);
  const AlignOptions opt = cfg.align_options();
  auto [perms, rep] = align_posteriors(ck0.posterior, ck1.posterior, opt);
  save_permutation_set(scope.out_path("perms.txt"), perms);

  const double w2_before = w2_distance(ck0.posterior, ck1.posterior);
  const double w2_after = w2_distance(ck0.posterior, pushforward(ck1.posterior, perms));
  nlohmann::json rj;
  rj["cost"] = cfg.align.cost;
  rj["converged"] = rep.converged;
  rj["sweeps"] = rep.sweeps;
  rj["seed"] = rep.seed;
  rj["objective_trace"] = rep.objective_trace;
  rj["objective_initial"] = rep.objective_trace.front();
  rj["objective_final"] = rep.objective_trace.back();
  rj["w2_before"] = w2_before;
  rj["w2_after"] = w2_after;
  rj["wall_ms"] = rep.wall_ms;
  detail::write_json(scope.out_path("align_report.json"), rj);
  scope.finish();

  std::cout << "aligned in " << rep.sweeps << " sweep(s), objective "
            << rep.objective_trace.front() << " -> " << rep.objective_trace.back()
            << ", W2 " << w2_before << " -> " << w2_after << "\n";
}

// Scans the interpolation path on the train and test splits and writes
// barrier_train.csv, barrier_test.csv and barrier_summary.json. With
// --perms the second posterior is pushed through the permutations first.
inline void cmd_barrier(const ExperimentConfig& cfg, const std::string& out_dir,
                        const std::string& ckpt0, const std::string& ckpt1,
                        const std::optional<std::string>& perms_path) {
  Checkpoint ck1;
  const Checkpoint ck0 = detail::load_matching_checkpoints(ckpt0, ckpt1, ck1);
  GaussianPosterior q1 = ck1.posterior;
  if (perms_path) {
    const PermutationSet perms = load_permutation_set(*perms_path);
    if (!perms.matches(q1.spec)) {
      throw std::runtime_error("permutations in " + *perms_path + " do not fit the checkpoints");
    }
    q1 = pushforward(q1, perms);
  }
  auto [train, test] = load_datasets(cfg);
  const EvalOptions opt = cfg.eval_options();

  detail::ManifestScope scope("barrier", cfg, out_dir);
  nlohmann::json summary;
  summary["path"] = to_string(opt.path);
  summary["n_mc"] = opt.n_mc;
  summary["n_taus"] = opt.n_taus;
  summary["seed"] = opt.seed;
  summary["perms_applied"] = perms_path.has_value();
  for (const auto& [name, split] : {std::pair<std::string, const Dataset*>{"train", &train},
                                    {"test", &test}}) {
    const BarrierReport rep = barrier_scan(ck0.posterior, q1, *split, opt);
    write_barrier_csv(scope.out_path("barrier_" + name + ".csv"), rep);
    summary[name] = {{"barrier", rep.barrier},
                     {"barrier_per_datum", rep.barrier_per_datum},
                     {"loglik_q0", rep.loglik.front()},
                     {"loglik_q1", rep.loglik.back()},
                     {"n_points", rep.n_points}};
    std::cout << name << " barrier: " << rep.barrier_per_datum << " nats/datum (total "
              << rep.barrier << " over " << rep.n_points << " points)\n";
  }
  detail::write_json(scope.out_path("barrier_summary.json"), summary);
  scope.finish();
}

// Evaluates the tempered log posterior on the plane through one sample
// from each of q0, the (aligned) q1 and the (aligned) midpoint
// distribution q_tau; anchors land at (1,0), (0,1), (0,0).
inline void cmd_slice(const ExperimentConfig& cfg, const std::string& out_dir,
                      const std::string& ckpt0, const std::string& ckpt1,
                      const std::optional<std::string>& perms_path,
                      std::optional<double> tau_override = {}) {
  Checkpoint ck1;
  const Checkpoint ck0 = detail::load_matching_checkpoints(ckpt0, ckpt1, ck1);
  GaussianPosterior q1 = ck1.posterior;
  if (perms_path) {
    const PermutationSet perms = load_permutation_set(*perms_path);
    if (!perms.matches(q1.spec)) {
      throw std::runtime_error("permutations in " + *perms_path + " do not fit the checkpoints");
    }
    q1 = pushforward(q1, perms);
  }
  const double tau = tau_override.value_or(cfg.slice.tau);
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("--tau must be in [0, 1]");

  auto [train, test] = load_datasets(cfg);
  (void)test;
  const MlpSpec& spec = ck0.posterior.spec;
  if (train.in_dim() != spec.in_dim()) {
    throw std::runtime_error("dataset width does not match the checkpoints");
  }

  Rng rng_a(cfg.seeds.seed0);
  Rng rng_b(cfg.seeds.seed1);
  Rng rng_c(cfg.seeds.seed0 + cfg.seeds.seed1);
  const ParamVector theta_a = sample_params(ck0.posterior, standard_normal_like(spec, rng_a));
  const ParamVector theta_b = sample_params(q1, standard_normal_like(spec, rng_b));
  const ParamVector theta_c =
      sample_params(geodesic_point(ck0.posterior, q1, tau), standard_normal_like(spec, rng_c));

  SliceOptions sopt;
  sopt.lo = cfg.slice.lo;
  sopt.hi = cfg.slice.hi;
  sopt.resolution = cfg.slice.resolution;
  sopt.temperature = cfg.train.temperature;
  const Prior prior{ck0.prior_variance};

  detail::ManifestScope scope("slice", cfg, out_dir);
  const SliceGrid grid = slice_logposterior(spec, train, prior, theta_a, theta_b, theta_c, sopt);
  write_slice_csv(scope.out_path("slice.csv"), grid);
  scope.extra("tau", tau);
  scope.extra("perms_applied", perms_path.has_value());
  scope.finish();
  std::cout << "slice grid " << sopt.resolution << "x" << sopt.resolution << " written\n";
}

// Times distributional vs point-estimate alignment on random posteriors
// over a range of widths (three hidden layers each). Writes profile.csv.
inline void cmd_profile(const ExperimentConfig& cfg, const std::string& out_dir,
                        const std::vector<int>& widths) {
  if (widths.empty()) throw ConfigError("--widths must name at least one width");
  for (int w : widths) {
    if (w <= 0) throw ConfigError("--widths entries must be positive");
  }

  detail::ManifestScope scope("profile", cfg, out_dir);
  std::ofstream os(scope.out_path("profile.csv"), std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open profile.csv for writing");
  os << "width,mode,wall_ms,sweeps,converged\n";
  AlignOptions opt = cfg.align_options();
  for (int w : widths) {
    MlpSpec spec;
    spec.widths = {16, w, w, w, 10};
    spec.task = TaskKind::Classification;
    const GaussianPosterior q0 = random_posterior(spec, cfg.seeds.seed0 + w);
    const GaussianPosterior q1 = random_posterior(spec, cfg.seeds.seed1 + w);

    auto [pd, rd] = align_posteriors(q0, q1, opt);
    (void)pd;
    os << w << ",distributional," << detail::g17(rd.wall_ms) << ',' << rd.sweeps << ','
       << (rd.converged ? 1 : 0) << '\n';
    auto [pp, rp] = align_point_estimates(spec, q0.mean, q1.mean, opt);
    (void)pp;
    os << w << ",point," << detail::g17(rp.wall_ms) << ',' << rp.sweeps << ','
       << (rp.converged ? 1 : 0) << '\n';
    std::cout << "width " << w << ": distributional " << rd.wall_ms << " ms, point "
              << rp.wall_ms << " ms\n";
  }
  if (!os) throw std::runtime_error("short write to profile.csv");
  os.close();
  scope.finish();
}

}  // namespace vialign
