#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scabi/diagnostics.hpp"
#include "scabi/training.hpp"

namespace scabi::pipeline {

enum class ReferenceKind { kNone, kExact, kGrid, kRejection, kMetropolis };

struct EvaluationSpec {
  int test_instances = 100;
  int posterior_samples = 500;
  ReferenceKind reference = ReferenceKind::kNone;
  int grid_resolution = 512;
  diagnostics::MetropolisSpec metropolis;
  int lml_draws = 100;
  double lml_level = 0.95;
  int sbc_rows = 200;
  int sbc_draws = 99;
  double ecdf_alpha = 0.05;
  int sample_instances = 3;  // instances whose posterior draws go to samples_*.csv
};

void to_json(nlohmann::json& j, const EvaluationSpec& s);
void from_json(const nlohmann::json& j, EvaluationSpec& s);

struct ExperimentConfig {
  std::string name = "experiment";
  nlohmann::json task;
  int simulation_budget = 1024;
  std::vector<std::uint64_t> seeds{1};
  // When set, every seed trains and is tested on the data simulated with this
  // seed; only initialization, shuffling and self-consistency draws vary.
  std::optional<std::uint64_t> data_seed;
  // When set, test instances, reference posteriors and calibration draws come
  // from this seed for every run; otherwise from the simulation seed.
  std::optional<std::uint64_t> eval_seed;
  std::vector<training::Variant> variants{training::Variant::kNpe};
  training::ModelSpec model;
  training::TrainConfig training;  // variant is set per run
  // Likelihood used by the self-consistency term when set in the config;
  // otherwise learned for likelihood variants and explicit for the others.
  std::optional<objectives::LikelihoodSource> sc_source;
  EvaluationSpec evaluation;

  void validate() const;
  std::uint64_t simulation_seed(std::uint64_t seed) const { return data_seed.value_or(seed); }
  std::uint64_t evaluation_seed(std::uint64_t seed) const { return eval_seed.value_or(simulation_seed(seed)); }
  // Fully expanded JSON (all defaults filled in).
  nlohmann::json resolved() const;
  // FNV-1a of the resolved JSON, hex.
  std::string hash() const;
  // Hash of the parts that determine a trained model (task, budget, model,
  // training); checkpoints carry it. Seeds are recorded separately.
  std::string training_hash() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

using Logger = std::function<void(const std::string&)>;

// Output layout below `out`:
//   config_resolved.json
//   seed_<s>/train.bin, seed_<s>/validation.bin
//   seed_<s>/<variant>/history.csv, model.ckpt, timing.json,
//     report.json, report.csv, ecdf_<variant>.csv, samples_<variant>.csv
//   compare.json, compare.csv
struct Layout {
  std::filesystem::path out;

  std::filesystem::path seed_dir(std::uint64_t seed) const;
  std::filesystem::path run_dir(std::uint64_t seed, training::Variant v) const;
  std::filesystem::path training_set(std::uint64_t seed) const { return seed_dir(seed) / "train.bin"; }
  std::filesystem::path validation_set(std::uint64_t seed) const { return seed_dir(seed) / "validation.bin"; }
  std::filesystem::path checkpoint(std::uint64_t seed, training::Variant v) const { return run_dir(seed, v) / "model.ckpt"; }
  std::filesystem::path history(std::uint64_t seed, training::Variant v) const { return run_dir(seed, v) / "history.csv"; }
  std::filesystem::path report(std::uint64_t seed, training::Variant v) const { return run_dir(seed, v) / "report.json"; }
  std::filesystem::path resolved_config() const { return out / "config_resolved.json"; }
};

void write_resolved_config(const ExperimentConfig& config, const Layout& layout);

// Stages. Each reads what earlier stages wrote.
void simulate(const ExperimentConfig& config, const Layout& layout, const Logger& log = {});
// Trains one (seed, variant) run. An existing checkpoint for the same run is
// resumed, or left untouched when it already holds the final epoch. A
// checkpoint from a different config is an error.
training::TrainResult train_run(const ExperimentConfig& config, const Layout& layout, std::uint64_t seed,
                                training::Variant variant, const Logger& log = {},
                                const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
void train(const ExperimentConfig& config, const Layout& layout, const Logger& log = {});

// Test instances and (if configured) reference posterior draws,
// shared by all variants of that seed.
struct TestBed {
  training::TrainingSet instances;
  std::vector<Matrix> reference;  // empty without a reference
};
TestBed make_test_bed(const ExperimentConfig& config, const simulators::Task& task, std::uint64_t seed);

nlohmann::json evaluate_run(const ExperimentConfig& config, const Layout& layout, std::uint64_t seed,
                            training::Variant variant, const TestBed& bed, const Logger& log = {},
                            const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
void evaluate(const ExperimentConfig& config, const Layout& layout, const Logger& log = {});

// Paired per-instance comparison of two report.json files on every shared
// metric (mmd, lml_width). Throws diagnostics::ComparisonError when the
// reports cover different instances. Writes compare_reports.json/.csv to `out`.
nlohmann::json compare_reports(const std::filesystem::path& report_a, const std::filesystem::path& report_b,
                               const std::filesystem::path& out, const Logger& log = {});

// Pairs every variant with its self-consistent counterpart (npe/sc-npe,
// nple/sc-nple) per seed and metric; writes compare.json and compare.csv.
nlohmann::json compare(const ExperimentConfig& config, const Layout& layout, const Logger& log = {});

void run_all(const ExperimentConfig& config, const Layout& layout, const Logger& log = {});

}  // namespace scabi::pipeline
