#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scabi/models.hpp"
#include "scabi/objectives.hpp"
#include "scabi/optimizer.hpp"

namespace scabi::training {

// Simulated (theta, Y) pairs, data sets flattened one per row.
struct TrainingSet {
  Matrix theta;
  Matrix data;
  long rejected = 0;

  Index size() const { return theta.rows(); }
  objectives::Batch batch(const std::vector<Index>& rows) const;
};

// Draws n pairs from the prior predictive using the stream (seed, domain).
// Rejected simulations are redrawn; more than max_rejection_rate * n
// rejections (but at least 10) abort with SimulationError.
TrainingSet generate_training_set(const simulators::Task& task, Index n, std::uint64_t seed, SeedDomain domain,
                                  double max_rejection_rate = 0.1);

// Binary round trip; values reload bit-exactly.
// `meta` is merged into the header. read_training_set_header returns it
// without loading the values.
void save_training_set(const TrainingSet& set, const std::filesystem::path& path, const nlohmann::json& meta = {});
TrainingSet load_training_set(const std::filesystem::path& path);
nlohmann::json read_training_set_header(const std::filesystem::path& path);

enum class Variant { kNpe, kScNpe, kNple, kScNple };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);
inline bool learns_likelihood(Variant v) { return v == Variant::kNple || v == Variant::kScNple; }
inline bool uses_self_consistency(Variant v) { return v == Variant::kScNpe || v == Variant::kScNple; }

// Network architecture. Input/output widths are filled in from the task.
struct ModelSpec {
  flows::FlowSpec posterior;
  std::optional<summaries::SummarySpec> summary;
  flows::FlowSpec likelihood;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

struct Models {
  std::unique_ptr<models::NeuralPosterior> posterior;
  std::unique_ptr<models::NeuralLikelihood> likelihood;  // null unless the variant learns it

  ad::ParameterList parameters();
};

Models build_models(const ModelSpec& spec, const simulators::Task& task, Variant variant, std::uint64_t seed);
// Input/target standardization fitted on the training set.
void fit_standardizers(Models& models, const simulators::Task& task, const TrainingSet& set);

struct TrainConfig {
  Variant variant = Variant::kNpe;
  int epochs = 35;
  int batch_size = 32;
  objectives::ScheduleSpec schedule;
  objectives::SelfConsistencyConfig self_consistency;
  optim::OptimizerSpec optimizer;
  // Validation pairs simulated separately, ceil(fraction * N); logged only.
  double validation_fraction = 0.1;
  int failure_limit = 3;
  // Checkpoint after every this many epochs (and after the last); 0 means
  // only after the last.
  int checkpoint_every = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  double lambda = 0.0;
  double loss = 0.0;
  double base_loss = 0.0;
  double sc_loss = 0.0;
  double val_loss = 0.0;
  double grad_norm = 0.0;
  long clamped = 0;
  long excluded = 0;
  long degenerate = 0;
  long skipped = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  long steps = 0;  // optimizer updates applied, including resumed ones
  double wall_seconds = 0.0;
};

// Everything needed to continue a run after its last completed epoch.
struct TrainState {
  std::vector<EpochRecord> history;
  Vector optimizer;
};

// Mean base loss (NPE, plus the likelihood NLL for likelihood variants) over a set.
double evaluate_base_loss(const Models& models, const TrainingSet& set, Index chunk = 256);

using EpochCallback = std::function<void(const EpochRecord&)>;
using CheckpointCallback = std::function<void(const TrainState&)>;

// With `resume`, training continues after resume->history.size() epochs from
// the restored models and optimizer; the result matches an uninterrupted run.
// `on_checkpoint` fires at the configured cadence. A TrainingError leaves the
// last checkpoint as it was.
TrainResult train(Models& models, const simulators::Task& task, const TrainingSet& train_set,
                  const TrainingSet& validation_set, const TrainConfig& config, std::uint64_t seed,
                  const EpochCallback& on_epoch = {}, const TrainState* resume = nullptr,
                  const CheckpointCallback& on_checkpoint = {});

// Fixed-format CSV; identical inputs produce identical bytes. A non-empty
// hash is written as a leading "# config_hash: ..." line; the reader skips
// lines starting with '#'.
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path,
                       const std::string& config_hash = {});
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

// Binary checkpoint: magic, format version, JSON header (which must carry
// "config_hash"), raw parameter and standardizer values, FNV-1a checksum.
// With `state`, the header gains "epoch" (completed epochs) and the history
// and optimizer moments are stored as well. The file is written atomically.
void save_checkpoint(const std::filesystem::path& path, Models& models, const nlohmann::json& header,
                     const TrainState* state = nullptr);
// Loads into models built from the same spec. Throws CheckpointError on a
// corrupt file, a shape mismatch or a config hash different from
// `expected_hash` (when non-empty). Returns the header.
// `state` (if given) receives the stored history and optimizer moments; both
// are empty for a checkpoint saved without them.
nlohmann::json load_checkpoint(const std::filesystem::path& path, Models& models,
                               const std::string& expected_hash = {}, TrainState* state = nullptr);
// Validated header alone, without loading values.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace scabi::training
