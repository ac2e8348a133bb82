#pragma once

#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vialign/align.hpp"
#include "vialign/eval.hpp"
#include "vialign/types.hpp"
#include "vialign/vi.hpp"

namespace vialign {

// Configuration or argument problem; the CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synth_regression";  // "idx" or "synth_regression"
  std::string train_images, train_labels, test_images, test_labels;
  int n_train = 0;  // idx: subset size, 0 keeps all; synth: sample count
  int n_test = 0;
  int num_classes = 10;
  double noise_std = 0.1;  // synth regression target noise
  std::uint64_t seed = 12345;
};

struct ModelConfig {
  std::vector<int> hidden = {64, 64};
  std::string task = "classification";
  double noise_std = 1.0;  // regression likelihood scale
};

struct SeedsConfig {
  std::uint64_t seed0 = 1;
  std::uint64_t seed1 = 2;
};

struct AlignSection {
  std::string cost = "wasserstein";  // or "kl_means"
  std::string kl_weighting = "inv_variance";  // or "inv_std"
  int max_sweeps = 50;
  int restarts = 32;
  bool include_bias = true;
};

struct EvalSection {
  int n_mc = 128;
  int n_taus = 25;
  std::string path = "geodesic";  // or "mixture"
};

struct SliceSection {
  double lo = -0.5;
  double hi = 1.5;
  int resolution = 25;
  double tau = 0.5;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  SeedsConfig seeds;
  AlignSection align;
  EvalSection eval;
  SliceSection slice;
  std::string output_dir = "out";

  TaskKind task_kind() const {
    return model.task == "regression" ? TaskKind::Regression : TaskKind::Classification;
  }

  int out_dim() const { return task_kind() == TaskKind::Classification ? data.num_classes : 1; }

  MlpSpec mlp_spec(int in_dim) const {
    MlpSpec spec;
    spec.widths.push_back(in_dim);
    for (int h : model.hidden) spec.widths.push_back(h);
    spec.widths.push_back(out_dim());
    spec.task = task_kind();
    spec.noise_std = model.noise_std;
    return spec;
  }

  AlignOptions align_options() const {
    AlignOptions opt;
    opt.cost = align.cost == "kl_means" ? AlignCost::KlMeans : AlignCost::Wasserstein;
    opt.kl_weighting =
        align.kl_weighting == "inv_std" ? KlWeighting::InvStd : KlWeighting::InvVariance;
    opt.max_sweeps = align.max_sweeps;
    opt.restarts = align.restarts;
    opt.include_bias = align.include_bias;
    opt.seed = seeds.seed0;
    return opt;
  }

  EvalOptions eval_options() const {
    EvalOptions opt;
    opt.n_mc = eval.n_mc;
    opt.n_taus = eval.n_taus;
    opt.path = eval.path == "mixture" ? PathKind::Mixture : PathKind::Geodesic;
    opt.seed = seeds.seed0;
    return opt;
  }
};

namespace detail {

// Field reader that records type errors under "section.key" paths and
// tracks which keys were consumed so typos surface as unknown-key errors.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {}

  ~FieldReader() {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) errors_.push_back(path_ + "." + it.key() + ": unknown field");
    }
  }

  void number(const char* key, double& out) {
    if (!mark(key)) return;
    if (!j_[key].is_number()) return bad(key, "expected a number");
    out = j_[key].get<double>();
  }

  void integer(const char* key, int& out) {
    if (!mark(key)) return;
    if (!j_[key].is_number_integer()) return bad(key, "expected an integer");
    out = j_[key].get<int>();
  }

  void uinteger(const char* key, std::uint64_t& out) {
    if (!mark(key)) return;
    if (!j_[key].is_number_unsigned() && !(j_[key].is_number_integer() && j_[key].get<long long>() >= 0)) {
      return bad(key, "expected a non-negative integer");
    }
    out = j_[key].get<std::uint64_t>();
  }

  void boolean(const char* key, bool& out) {
    if (!mark(key)) return;
    if (!j_[key].is_boolean()) return bad(key, "expected true or false");
    out = j_[key].get<bool>();
  }

  void string(const char* key, std::string& out) {
    if (!mark(key)) return;
    if (!j_[key].is_string()) return bad(key, "expected a string");
    out = j_[key].get<std::string>();
  }

  void int_list(const char* key, std::vector<int>& out) {
    if (!mark(key)) return;
    if (!j_[key].is_array()) return bad(key, "expected an array of integers");
    std::vector<int> vals;
    for (const auto& v : j_[key]) {
      if (!v.is_number_integer()) return bad(key, "expected an array of integers");
      vals.push_back(v.get<int>());
    }
    out = std::move(vals);
  }

  void check(bool ok, const char* key, const char* message) {
    if (!ok) errors_.push_back(path_ + "." + std::string(key) + ": " + message);
  }

 private:
  bool mark(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void bad(const char* key, const char* message) {
    errors_.push_back(path_ + "." + std::string(key) + ": " + message);
  }

  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

inline const nlohmann::json& section(const nlohmann::json& j, const char* key,
                                     const nlohmann::json& empty,
                                     std::vector<std::string>& errors) {
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) {
    errors.push_back(std::string(key) + ": expected an object");
    return empty;
  }
  return j[key];
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  std::vector<std::string> errors;
  static const nlohmann::json empty = nlohmann::json::object();
  ExperimentConfig cfg;

  {
    detail::FieldReader r(detail::section(j, "data", empty, errors), "data", errors);
    r.string("source", cfg.data.source);
    r.string("train_images", cfg.data.train_images);
    r.string("train_labels", cfg.data.train_labels);
    r.string("test_images", cfg.data.test_images);
    r.string("test_labels", cfg.data.test_labels);
    r.integer("n_train", cfg.data.n_train);
    r.integer("n_test", cfg.data.n_test);
    r.integer("num_classes", cfg.data.num_classes);
    r.number("noise_std", cfg.data.noise_std);
    r.uinteger("seed", cfg.data.seed);
    r.check(cfg.data.source == "idx" || cfg.data.source == "synth_regression", "source",
            "must be \"idx\" or \"synth_regression\"");
    r.check(cfg.data.n_train >= 0, "n_train", "must be non-negative");
    r.check(cfg.data.n_test >= 0, "n_test", "must be non-negative");
    r.check(cfg.data.num_classes >= 2, "num_classes", "must be at least 2");
    r.check(cfg.data.noise_std > 0.0, "noise_std", "must be positive");
    if (cfg.data.source == "idx") {
      r.check(!cfg.data.train_images.empty(), "train_images", "required for source \"idx\"");
      r.check(!cfg.data.train_labels.empty(), "train_labels", "required for source \"idx\"");
      r.check(!cfg.data.test_images.empty(), "test_images", "required for source \"idx\"");
      r.check(!cfg.data.test_labels.empty(), "test_labels", "required for source \"idx\"");
    } else {
      r.check(cfg.data.n_train > 0, "n_train", "must be positive for synthetic data");
      r.check(cfg.data.n_test > 0, "n_test", "must be positive for synthetic data");
    }
  }
  {
    detail::FieldReader r(detail::section(j, "model", empty, errors), "model", errors);
    r.int_list("hidden", cfg.model.hidden);
    r.string("task", cfg.model.task);
    r.number("noise_std", cfg.model.noise_std);
    r.check(cfg.model.task == "classification" || cfg.model.task == "regression", "task",
            "must be \"classification\" or \"regression\"");
    r.check(!cfg.model.hidden.empty(), "hidden", "need at least one hidden layer");
    bool pos = true;
    for (int h : cfg.model.hidden) pos = pos && h > 0;
    r.check(pos, "hidden", "widths must be positive");
    r.check(cfg.model.noise_std > 0.0, "noise_std", "must be positive");
  }
  {
    detail::FieldReader r(detail::section(j, "train", empty, errors), "train", errors);
    r.integer("batch_size", cfg.train.batch_size);
    r.integer("epochs", cfg.train.epochs);
    r.number("learning_rate", cfg.train.learning_rate);
    r.number("momentum", cfg.train.momentum);
    r.integer("n_mc_train", cfg.train.n_mc_train);
    r.number("temperature", cfg.train.temperature);
    r.number("prior_variance", cfg.train.prior_variance);
    r.number("std_init", cfg.train.std_init);
    r.check(cfg.train.batch_size > 0, "batch_size", "must be positive");
    r.check(cfg.train.epochs > 0, "epochs", "must be positive");
    r.check(cfg.train.learning_rate > 0.0, "learning_rate", "must be positive");
    r.check(cfg.train.momentum >= 0.0 && cfg.train.momentum < 1.0, "momentum",
            "must be in [0, 1)");
    r.check(cfg.train.n_mc_train > 0, "n_mc_train", "must be positive");
    r.check(cfg.train.temperature > 0.0, "temperature", "must be positive");
    r.check(cfg.train.prior_variance > 0.0, "prior_variance", "must be positive");
    r.check(cfg.train.std_init > 0.0, "std_init", "must be positive");
  }
  {
    detail::FieldReader r(detail::section(j, "seeds", empty, errors), "seeds", errors);
    r.uinteger("seed0", cfg.seeds.seed0);
    r.uinteger("seed1", cfg.seeds.seed1);
  }
  {
    detail::FieldReader r(detail::section(j, "align", empty, errors), "align", errors);
    r.string("cost", cfg.align.cost);
    r.string("kl_weighting", cfg.align.kl_weighting);
    r.integer("max_sweeps", cfg.align.max_sweeps);
    r.integer("restarts", cfg.align.restarts);
    r.boolean("include_bias", cfg.align.include_bias);
    r.check(cfg.align.cost == "wasserstein" || cfg.align.cost == "kl_means", "cost",
            "must be \"wasserstein\" or \"kl_means\"");
    r.check(cfg.align.kl_weighting == "inv_variance" || cfg.align.kl_weighting == "inv_std",
            "kl_weighting", "must be \"inv_variance\" or \"inv_std\"");
    r.check(cfg.align.max_sweeps > 0, "max_sweeps", "must be positive");
    r.check(cfg.align.restarts > 0, "restarts", "must be positive");
  }
  {
    detail::FieldReader r(detail::section(j, "eval", empty, errors), "eval", errors);
    r.integer("n_mc", cfg.eval.n_mc);
    r.integer("n_taus", cfg.eval.n_taus);
    r.string("path", cfg.eval.path);
    r.check(cfg.eval.n_mc > 0, "n_mc", "must be positive");
    r.check(cfg.eval.n_taus >= 2, "n_taus", "must be at least 2");
    r.check(cfg.eval.path == "geodesic" || cfg.eval.path == "mixture", "path",
            "must be \"geodesic\" or \"mixture\"");
  }
  {
    detail::FieldReader r(detail::section(j, "slice", empty, errors), "slice", errors);
    r.number("lo", cfg.slice.lo);
    r.number("hi", cfg.slice.hi);
    r.integer("resolution", cfg.slice.resolution);
    r.number("tau", cfg.slice.tau);
    r.check(cfg.slice.hi > cfg.slice.lo, "lo", "range must be non-empty");
    r.check(cfg.slice.resolution >= 2, "resolution", "must be at least 2");
    r.check(cfg.slice.tau >= 0.0 && cfg.slice.tau <= 1.0, "tau", "must be in [0, 1]");
  }
  {
    std::set<std::string> known = {"data", "model", "train", "seeds",
                                   "align", "eval", "slice", "output_dir"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) errors.push_back(it.key() + ": unknown field");
    }
    if (j.contains("output_dir")) {
      if (j["output_dir"].is_string()) {
        cfg.output_dir = j["output_dir"].get<std::string>();
      } else {
        errors.push_back("output_dir: expected a string");
      }
    }
  }

  if (!errors.empty()) {
    std::ostringstream msg;
    msg << "invalid config (" << errors.size() << " problem" << (errors.size() > 1 ? "s" : "")
        << "):";
    for (const auto& e : errors) msg << "\n  " << e;
    throw ConfigError(msg.str());
  }
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["data"] = {{"source", cfg.data.source},
               {"train_images", cfg.data.train_images},
               {"train_labels", cfg.data.train_labels},
               {"test_images", cfg.data.test_images},
               {"test_labels", cfg.data.test_labels},
               {"n_train", cfg.data.n_train},
               {"n_test", cfg.data.n_test},
               {"num_classes", cfg.data.num_classes},
               {"noise_std", cfg.data.noise_std},
               {"seed", cfg.data.seed}};
  j["model"] = {{"hidden", cfg.model.hidden},
                {"task", cfg.model.task},
                {"noise_std", cfg.model.noise_std}};
  j["train"] = {{"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.learning_rate},
                {"momentum", cfg.train.momentum},
                {"n_mc_train", cfg.train.n_mc_train},
                {"temperature", cfg.train.temperature},
                {"prior_variance", cfg.train.prior_variance},
                {"std_init", cfg.train.std_init}};
  j["seeds"] = {{"seed0", cfg.seeds.seed0}, {"seed1", cfg.seeds.seed1}};
  j["align"] = {{"cost", cfg.align.cost},
                {"kl_weighting", cfg.align.kl_weighting},
                {"max_sweeps", cfg.align.max_sweeps},
                {"restarts", cfg.align.restarts},
                {"include_bias", cfg.align.include_bias}};
  j["eval"] = {{"n_mc", cfg.eval.n_mc}, {"n_taus", cfg.eval.n_taus}, {"path", cfg.eval.path}};
  j["slice"] = {{"lo", cfg.slice.lo},
                {"hi", cfg.slice.hi},
                {"resolution", cfg.slice.resolution},
                {"tau", cfg.slice.tau}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

// JSON with // and /* */ comments allowed.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// FNV-1a over the canonical serialization, so the hash tracks the
// effective settings rather than formatting or comments.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace vialign
