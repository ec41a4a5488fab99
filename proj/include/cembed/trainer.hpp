#pragma once

// Two-stage training: a continual stage that may update the base weights
// with plain prompts, then adapter-only fine-tuning with prompts and
// per-task temperatures. AdamW with decoupled weight decay, cosine decay,
// global-norm clipping.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cembed/data.hpp"
#include "cembed/encoder.hpp"
#include "cembed/loss.hpp"
#include "cembed/sampler.hpp"

namespace cembed {

inline const double kDefaultThetaInit = std::log(0.05);
inline constexpr std::string_view kSharedTemperatureKey = "shared";

struct StageConfig {
  std::string name = "finetune";  // "continual" | "finetune"
  std::size_t steps = 0;          // 0: derived from TrainConfig::epochs (epoch_unit "passes")
  std::vector<std::string> dataset_filter;  // dataset ids or task kinds; empty keeps all
  bool prompting_enabled = true;
  bool per_task_temperature = true;
  bool learn_temperature = true;
  bool train_base = false;
  bool train_adapter = true;
  bool merge_classification = false;
  bool resample = false;  // apply SamplerConfig::resample_weights in this stage
  std::uint64_t sampler_seed = 0;  // nonzero: reseeds this stage's batch order only
  LossConfig loss;        // alpha, delta, differentiate_weights, symmetric

  void validate() const;
};

/// Stage defaults by name; "finetune" takes `finetune_loss`, "continual" plain InfoNCE.
StageConfig default_stage(const std::string& name, const LossConfig& finetune_loss);

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
};

struct TrainConfig {
  std::vector<StageConfig> stages;
  double lr0 = 2e-4;
  double weight_decay = 5e-2;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  LossConfig loss;              // stage defaults; theta_per_task holds initial thetas
  double theta_init = kDefaultThetaInit;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;
  AdamWSettings adam;

  void validate() const;
};

struct ModelConfig {
  Eigen::Index d_in = 64;
  Eigen::Index d_out = 32;
  Eigen::Index rank = 4;  // small on purpose; the encoder is linear
  double lora_scaling = 1.0;
  double lora_init_sigma = 0.02;
  std::uint64_t featurizer_seed = 0;
};

/// Everything one training run needs. `seed` drives data generation,
/// initialization and sampling.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::string> manifest_path;  // otherwise generated from `generation`
  GenerationSpec generation = GenerationSpec::desk_default();
  std::size_t dataset_cap = 1000;  // per dataset
  ModelConfig model;
  SamplerConfig sampler;
  TrainConfig train;
  PromptTemplate prompt;

  static RunConfig desk_default();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Starts from desk_default() and merge-patches `j` over it.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct TrainLogEntry {
  std::size_t step = 0;
  std::string stage;
  std::string dataset_id;
  double loss = 0.0;
  double lr = 0.0;
  std::map<std::string, double> tau_per_task;
  std::size_t fn_masked_count = 0;
};

void to_json(nlohmann::json& j, const TrainLogEntry& e);
std::string log_to_jsonl(const std::vector<TrainLogEntry>& log);

struct TrainState {
  EncoderParams params;
  std::map<std::string, double> thetas;
  std::size_t global_step = 0;
  std::size_t stages_done = 0;
  bool prompting = false;  // prompting mode of the last completed stage
  std::vector<TrainLogEntry> log;
};

/// Called after every optimizer step.
using StepCallback = std::function<void(const TrainState&, const TrainLogEntry&)>;

/// Seeded initial parameters (adapter with B = 0 when rank > 0).
TrainState initial_state(const RunConfig& config);

/// Runs stage `config.train.stages[state.stages_done]` and advances the state.
/// Throws NonFiniteLoss with the offending step.
void run_stage(TrainState& state, const DatasetManifest& manifest, const RunConfig& config,
               const StepCallback& on_step = {});

/// All stages in order.
TrainState train(const DatasetManifest& manifest, const RunConfig& config, const StepCallback& on_step = {});

/// The manifest a run trains and evaluates on: read from manifest_path or generated.
DatasetManifest resolve_manifest(const RunConfig& config);

Featurizer make_featurizer(const RunConfig& config);

// Checkpoints ---------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  EncoderParams params;
  std::map<std::string, double> theta_per_task;
  std::uint64_t rng_seed = 0;
  std::uint64_t featurizer_seed = 0;
  bool prompting = false;
  nlohmann::json config;  // provenance echo; null when absent
};

Checkpoint make_checkpoint(const TrainState& state, const RunConfig& config);
std::string checkpoint_to_string(const Checkpoint& ckpt);
/// Throws ParseError, VersionMismatch.
Checkpoint checkpoint_from_string(std::string_view text);
/// Atomic (temp file + rename). Throws IoError.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cembed
