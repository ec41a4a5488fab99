#include "cembed/trainer.hpp"

#include <algorithm>
#include <sstream>

#include "cembed/error.hpp"
#include "cembed/io.hpp"
#include "cembed/rng.hpp"

namespace cembed {

using nlohmann::json;

namespace {

// Adaptive-moment state for one parameter block.
template <typename Block>
struct Moments {
  Block m;
  Block v;
};

template <typename Block>
Moments<Block> zero_moments(const Block& like) {
  return {Block::Zero(like.rows(), like.cols()), Block::Zero(like.rows(), like.cols())};
}

struct AdamStep {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

template <typename Block>
void adam_update(Block& param, const Block& grad, Moments<Block>& mom, const AdamStep& s, double weight_decay) {
  mom.m = s.beta1 * mom.m + (1.0 - s.beta1) * grad;
  mom.v = s.beta2 * mom.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  if (weight_decay > 0.0) param *= (1.0 - s.lr * weight_decay);
  param.array() -= s.lr * (mom.m.array() / s.bias1) / ((mom.v.array() / s.bias2).sqrt() + s.eps);
}

struct ScalarMoments {
  double m = 0.0;
  double v = 0.0;
};

void adam_update(double& param, double grad, ScalarMoments& mom, const AdamStep& s) {
  mom.m = s.beta1 * mom.m + (1.0 - s.beta1) * grad;
  mom.v = s.beta2 * mom.v + (1.0 - s.beta2) * grad * grad;
  param -= s.lr * (mom.m / s.bias1) / (std::sqrt(mom.v / s.bias2) + s.eps);
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw Error(ErrorCode::kParseError, std::string(what) + ": expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::kParseError, std::string(what) + ": row " + std::to_string(i) + " has wrong length");
    }
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

TrainMode mode_for(const StageConfig& stage) {
  if (stage.train_base && stage.train_adapter) return TrainMode::kFull;
  if (stage.train_adapter) return TrainMode::kAdapterOnly;
  return TrainMode::kBaseOnly;
}

Matrix featurize_side(const std::vector<Record>& records, const Featurizer& featurizer, const PromptTemplate& prompt,
                      Side side) {
  Matrix out(static_cast<Eigen::Index>(records.size()), featurizer.dim_in);
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = featurizer.featurize(build_prompt(records[i], prompt, side)).transpose();
  }
  return out;
}

DatasetManifest stage_manifest(const DatasetManifest& manifest, const RunConfig& config, const StageConfig& stage) {
  DatasetManifest view = manifest.split_view(Split::kTrain).filtered(stage.dataset_filter);
  std::size_t index = 0;
  for (auto& [id, records] : view.datasets) {
    records = cap_dataset(records, config.dataset_cap, derive_seed(config.seed, 0x636170ULL, index++));  // "cap"
  }
  if (stage.merge_classification) {
    bool has_cls = false;
    for (const auto& [id, records] : view.datasets) has_cls |= records.front().task_kind == TaskKind::kImgCls;
    if (has_cls) view = merge_classification_datasets(view);
  }
  return view;
}

}  // namespace

void StageConfig::validate() const {
  if (name != "continual" && name != "finetune") {
    throw Error(ErrorCode::kConfigInvalid, "stage name must be 'continual' or 'finetune', got '" + name + "'");
  }
  if (name == "continual" && prompting_enabled) {
    throw Error(ErrorCode::kConfigInvalid, "the continual stage trains without instruction prompts");
  }
  if (!train_base && !train_adapter) throw Error(ErrorCode::kConfigInvalid, "stage " + name + " trains nothing");
  loss.validate();
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw Error(ErrorCode::kConfigInvalid, "lr0 must be positive");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kConfigInvalid, "weight_decay must be >= 0");
  if (stages.empty()) throw Error(ErrorCode::kConfigInvalid, "at least one stage is required");
  if (batch_size < 2) throw Error(ErrorCode::kConfigInvalid, "batch_size must be >= 2");
  if (!std::isfinite(theta_init)) throw Error(ErrorCode::kConfigInvalid, "theta_init must be finite");
  for (const auto& s : stages) s.validate();
  loss.validate();
}

StageConfig default_stage(const std::string& name, const LossConfig& finetune_loss) {
  StageConfig s;
  s.name = name;
  if (name == "continual") {
    // Plain InfoNCE on pairs, no instructions, shared fixed temperature, base weights trainable.
    s.steps = 300;
    s.prompting_enabled = false;
    s.per_task_temperature = false;
    s.learn_temperature = false;
    s.train_base = true;
    s.train_adapter = false;
    s.dataset_filter = {"img_ret", "doc_ret", "vid_ret"};
  } else {
    s.steps = 2000;
    s.prompting_enabled = true;
    s.per_task_temperature = true;
    s.learn_temperature = true;
    s.train_base = false;
    s.train_adapter = true;
    s.merge_classification = true;
    s.resample = true;
    s.loss = finetune_loss;
  }
  return s;
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  c.train.loss.alpha = 9.0;
  c.train.loss.delta = 0.95;
  c.train.stages = {default_stage("continual", c.train.loss), default_stage("finetune", c.train.loss)};
  c.sampler.resample_weights = {{"image", 1.5}, {"video", 0.5}};
  return c;
}

void RunConfig::validate() const {
  generation.validate();
  sampler.validate();
  train.validate();
  if (dataset_cap < 1) throw Error(ErrorCode::kConfigInvalid, "dataset_cap must be >= 1");
  if (model.d_in < 1 || model.d_out < 1 || model.rank < 0) {
    throw Error(ErrorCode::kConfigInvalid, "model dimensions must be positive");
  }
  for (const auto& s : train.stages) {
    if (s.train_adapter && model.rank == 0) {
      throw Error(ErrorCode::kConfigInvalid, "stage " + s.name + " trains an adapter but rank is 0");
    }
  }
}

void to_json(json& j, const LossConfig& c) {
  j = json{{"alpha", c.alpha},
           {"delta", c.delta ? json(*c.delta) : json(nullptr)},
           {"theta_per_task", c.theta_per_task},
           {"differentiate_weights", c.differentiate_weights},
           {"symmetric", c.symmetric}};
}

void from_json(const json& j, LossConfig& c) {
  const LossConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.delta = (j.contains("delta") && !j.at("delta").is_null()) ? std::optional<double>(j.at("delta").get<double>())
                                                               : std::nullopt;
  c.theta_per_task = j.value("theta_per_task", d.theta_per_task);
  c.differentiate_weights = j.value("differentiate_weights", d.differentiate_weights);
  c.symmetric = j.value("symmetric", d.symmetric);
}

namespace {

json stage_to_json(const StageConfig& s) {
  return json{{"name", s.name},
              {"steps", s.steps},
              {"dataset_filter", s.dataset_filter},
              {"prompting_enabled", s.prompting_enabled},
              {"per_task_temperature", s.per_task_temperature},
              {"learn_temperature", s.learn_temperature},
              {"train_base", s.train_base},
              {"train_adapter", s.train_adapter},
              {"merge_classification", s.merge_classification},
              {"resample", s.resample},
              {"sampler_seed", s.sampler_seed},
              {"loss", s.loss}};
}

StageConfig stage_from_json(const json& j) {
  StageConfig s;
  s.name = j.at("name").get<std::string>();
  s.steps = j.value("steps", s.steps);
  s.dataset_filter = j.value("dataset_filter", s.dataset_filter);
  s.prompting_enabled = j.value("prompting_enabled", s.prompting_enabled);
  s.per_task_temperature = j.value("per_task_temperature", s.per_task_temperature);
  s.learn_temperature = j.value("learn_temperature", s.learn_temperature);
  s.train_base = j.value("train_base", s.train_base);
  s.train_adapter = j.value("train_adapter", s.train_adapter);
  s.merge_classification = j.value("merge_classification", s.merge_classification);
  s.resample = j.value("resample", s.resample);
  s.sampler_seed = j.value("sampler_seed", s.sampler_seed);
  if (j.contains("loss")) s.loss = j.at("loss").get<LossConfig>();
  return s;
}

}  // namespace

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.train.stages) stages.push_back(stage_to_json(s));
  return json{
      {"seed", c.seed},
      {"manifest_path", c.manifest_path ? json(*c.manifest_path) : json(nullptr)},
      {"generation", c.generation},
      {"dataset_cap", c.dataset_cap},
      {"model",
       {{"d_in", c.model.d_in},
        {"d_out", c.model.d_out},
        {"rank", c.model.rank},
        {"lora_scaling", c.model.lora_scaling},
        {"lora_init_sigma", c.model.lora_init_sigma},
        {"featurizer_seed", c.model.featurizer_seed}}},
      {"sampler", c.sampler},
      {"train",
       {{"stages", stages},
        {"lr0", c.train.lr0},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"loss", c.train.loss},
        {"theta_init", c.train.theta_init},
        {"checkpoint_every", c.train.checkpoint_every},
        {"adam",
         {{"beta1", c.train.adam.beta1},
          {"beta2", c.train.adam.beta2},
          {"eps", c.train.adam.eps},
          {"grad_clip", c.train.adam.grad_clip}}}}},
      {"prompt",
       {{"system_prompt", c.prompt.system_prompt},
        {"text_repr_prompt", c.prompt.text_repr_prompt},
        {"multimodal_repr_prompt", c.prompt.multimodal_repr_prompt}}},
  };
}

RunConfig run_config_from_json(const json& patch) {
  if (!patch.is_object()) throw Error(ErrorCode::kConfigInvalid, "run config must be a JSON object");
  json j = to_json(RunConfig::desk_default());
  // Stage lists replace rather than merge; a stage's loss inherits train.loss.
  json user = patch;
  json stages_patch;
  if (user.contains("train") && user["train"].contains("stages")) {
    stages_patch = user["train"]["stages"];
    user["train"].erase("stages");
  }
  j.merge_patch(user);
  try {
    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("manifest_path") && !j.at("manifest_path").is_null()) c.manifest_path = j.at("manifest_path").get<std::string>();
    c.generation = j.at("generation").get<GenerationSpec>();
    c.dataset_cap = j.at("dataset_cap").get<std::size_t>();
    const json& m = j.at("model");
    c.model.d_in = m.at("d_in").get<Eigen::Index>();
    c.model.d_out = m.at("d_out").get<Eigen::Index>();
    c.model.rank = m.at("rank").get<Eigen::Index>();
    c.model.lora_scaling = m.at("lora_scaling").get<double>();
    c.model.lora_init_sigma = m.at("lora_init_sigma").get<double>();
    c.model.featurizer_seed = m.at("featurizer_seed").get<std::uint64_t>();
    c.sampler = j.at("sampler").get<SamplerConfig>();
    const json& t = j.at("train");
    c.train.lr0 = t.at("lr0").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.loss = t.at("loss").get<LossConfig>();
    c.train.theta_init = t.at("theta_init").get<double>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    const json& a = t.at("adam");
    c.train.adam.beta1 = a.at("beta1").get<double>();
    c.train.adam.beta2 = a.at("beta2").get<double>();
    c.train.adam.eps = a.at("eps").get<double>();
    c.train.adam.grad_clip = a.at("grad_clip").get<double>();
    const json stages = stages_patch.is_null() ? t.at("stages") : stages_patch;
    for (const json& s : stages) {
      if (!s.contains("name")) throw Error(ErrorCode::kConfigInvalid, "every stage needs a name");
      json merged = stage_to_json(default_stage(s.at("name").get<std::string>(), c.train.loss));
      merged.merge_patch(s);
      c.train.stages.push_back(stage_from_json(merged));
    }
    const json& p = j.at("prompt");
    c.prompt.system_prompt = p.at("system_prompt").get<std::string>();
    c.prompt.text_repr_prompt = p.at("text_repr_prompt").get<std::string>();
    c.prompt.multimodal_repr_prompt = p.at("multimodal_repr_prompt").get<std::string>();
    c.sampler.batch_size = c.train.batch_size;
    c.train.seed = c.seed;
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigInvalid, e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps < 1 || step > total_steps) {
    throw Error(ErrorCode::kConfigInvalid, "cosine_lr needs 0 <= step <= total_steps and total_steps >= 1");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void to_json(json& j, const TrainLogEntry& e) {
  j = json{{"step", e.step},
           {"stage", e.stage},
           {"dataset_id", e.dataset_id},
           {"loss", e.loss},
           {"lr", e.lr},
           {"tau_per_task", e.tau_per_task},
           {"fn_masked_count", e.fn_masked_count}};
}

std::string log_to_jsonl(const std::vector<TrainLogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    out += json(e).dump();
    out += '\n';
  }
  return out;
}

Featurizer make_featurizer(const RunConfig& config) {
  return Featurizer{config.model.d_in, config.model.featurizer_seed};
}

DatasetManifest resolve_manifest(const RunConfig& config) {
  if (config.manifest_path) return read_manifest(*config.manifest_path);
  return generate_benchmark(config.seed, config.generation);
}

TrainState initial_state(const RunConfig& config) {
  Rng rng(derive_seed(config.seed, 0x696e6974ULL));  // "init"
  TrainState state;
  state.params = EncoderParams::initialize(config.model.d_in, config.model.d_out, rng);
  if (config.model.rank > 0) {
    state.params.adapter = LoraAdapter::initialize(config.model.d_in, config.model.d_out, config.model.rank, rng,
                                                   config.model.lora_init_sigma, config.model.lora_scaling);
  }
  state.thetas = config.train.loss.theta_per_task;
  return state;
}

void run_stage(TrainState& state, const DatasetManifest& manifest, const RunConfig& config,
               const StepCallback& on_step) {
  if (state.stages_done >= config.train.stages.size()) {
    throw Error(ErrorCode::kConfigInvalid, "all stages already completed");
  }
  const std::size_t stage_index = state.stages_done;
  const StageConfig& stage = config.train.stages[stage_index];
  stage.validate();

  const DatasetManifest view = stage_manifest(manifest, config, stage);
  SamplerConfig sampler_config = config.sampler;
  sampler_config.batch_size = config.train.batch_size;
  sampler_config.seed = derive_seed(config.seed, config.sampler.seed, stage_index);
  if (stage.sampler_seed != 0) sampler_config.seed = derive_seed(sampler_config.seed, stage.sampler_seed);
  if (!stage.resample) sampler_config.resample_weights.clear();
  const BatchSampler sampler(view, sampler_config);

  std::size_t total = stage.steps;
  if (total == 0) {
    if (config.sampler.epoch_unit != EpochUnit::kPasses) {
      throw Error(ErrorCode::kConfigInvalid, "stage " + stage.name + " has no step count");
    }
    const double passes = static_cast<double>(config.train.epochs * sampler.train_record_count());
    total = static_cast<std::size_t>(std::ceil(passes / static_cast<double>(config.train.batch_size)));
  }

  const Featurizer featurizer = make_featurizer(config);
  const PromptTemplate prompt = stage.prompting_enabled ? config.prompt : PromptTemplate::disabled();
  const TrainMode mode = mode_for(stage);
  const bool update_base = mode != TrainMode::kAdapterOnly;
  const bool update_adapter = mode != TrainMode::kBaseOnly && state.params.adapter.has_value();

  Moments<Matrix> mom_w = zero_moments(state.params.W);
  Moments<Vector> mom_b = zero_moments(state.params.b);
  Moments<Matrix> mom_a, mom_bb;
  if (state.params.adapter) {
    mom_a = zero_moments(state.params.adapter->A);
    mom_bb = zero_moments(state.params.adapter->B);
  }
  std::map<std::string, ScalarMoments> mom_theta;
  const AdamWSettings& adam = config.train.adam;

  for (std::size_t step = 0; step < total; ++step) {
    const Batch batch = sampler.batch_at(step);
    const std::string key =
        stage.per_task_temperature ? std::string(to_string(batch.task_kind)) : std::string(kSharedTemperatureKey);
    if (!state.thetas.contains(key)) {
      const auto shared = state.thetas.find(std::string(kSharedTemperatureKey));
      state.thetas[key] = shared != state.thetas.end() ? shared->second : config.train.theta_init;
    }

    const EncodedBatch queries =
        encode_batch(featurize_side(batch.records, featurizer, prompt, Side::kQuery), state.params);
    const EncodedBatch targets =
        encode_batch(featurize_side(batch.records, featurizer, prompt, Side::kTarget), state.params);

    ContrastiveBatch cb;
    cb.queries = queries.outputs;
    cb.targets = targets.outputs;
    cb.task_id = key;
    LossConfig loss_config = stage.loss;
    loss_config.theta_per_task = {{key, state.thetas.at(key)}};
    const LossOutput out = whnm_loss(cb, loss_config);
    const std::size_t global = state.global_step + step;
    if (!std::isfinite(out.loss)) throw Error::at_step(ErrorCode::kNonFiniteLoss, global, "loss is not finite");

    EncoderGrads grads = encode_backward(queries, state.params, out.grad_queries, mode);
    grads += encode_backward(targets, state.params, out.grad_targets, mode);
    double grad_theta = stage.learn_temperature ? out.grad_theta : 0.0;

    double norm2 = grad_theta * grad_theta;
    if (update_base) norm2 += grads.W.squaredNorm() + grads.b.squaredNorm();
    if (update_adapter) norm2 += grads.A.squaredNorm() + grads.B.squaredNorm();
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw Error::at_step(ErrorCode::kNonFiniteLoss, global, "gradient is not finite");
    if (adam.grad_clip > 0.0 && norm > adam.grad_clip) {
      const double scale = adam.grad_clip / norm;
      grads.W *= scale;
      grads.b *= scale;
      grads.A *= scale;
      grads.B *= scale;
      grad_theta *= scale;
    }

    const double lr = cosine_lr(step, std::max<std::size_t>(total - 1, 1), config.train.lr0);
    const auto t = static_cast<double>(step + 1);
    const AdamStep s{lr, adam.beta1, adam.beta2, adam.eps, 1.0 - std::pow(adam.beta1, t),
                     1.0 - std::pow(adam.beta2, t)};
    if (update_base) {
      adam_update(state.params.W, grads.W, mom_w, s, config.train.weight_decay);
      adam_update(state.params.b, grads.b, mom_b, s, 0.0);
    }
    if (update_adapter) {
      adam_update(state.params.adapter->A, grads.A, mom_a, s, config.train.weight_decay);
      adam_update(state.params.adapter->B, grads.B, mom_bb, s, config.train.weight_decay);
    }
    if (stage.learn_temperature) {
      // Temperatures are never decayed.
      adam_update(state.thetas[key], grad_theta, mom_theta[key], s);
      state.thetas[key] = clamp_theta(state.thetas[key]);
    }

    TrainLogEntry entry;
    entry.step = global;
    entry.stage = stage.name;
    entry.dataset_id = batch.dataset_id;
    entry.loss = out.loss;
    entry.lr = lr;
    for (const auto& [task, theta] : state.thetas) entry.tau_per_task[task] = task_temperature(theta);
    entry.fn_masked_count = static_cast<std::size_t>(out.masked_count());
    state.log.push_back(entry);
    if (on_step) on_step(state, entry);
  }

  state.global_step += total;
  state.stages_done += 1;
  state.prompting = stage.prompting_enabled;
}

TrainState train(const DatasetManifest& manifest, const RunConfig& config, const StepCallback& on_step) {
  config.validate();
  TrainState state = initial_state(config);
  while (state.stages_done < config.train.stages.size()) run_stage(state, manifest, config, on_step);
  return state;
}

Checkpoint make_checkpoint(const TrainState& state, const RunConfig& config) {
  Checkpoint c;
  c.params = state.params;
  c.theta_per_task = state.thetas;
  c.rng_seed = config.seed;
  c.featurizer_seed = config.model.featurizer_seed;
  c.prompting = state.prompting;
  c.config = to_json(config);
  return c;
}

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  const EncoderParams& p = ckpt.params;
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["d_in"] = p.d_in();
  j["d_out"] = p.d_out();
  j["rank"] = p.adapter ? p.adapter->rank() : 0;
  j["W"] = matrix_to_json(p.W);
  j["b"] = std::vector<double>(p.b.data(), p.b.data() + p.b.size());
  j["A"] = p.adapter ? matrix_to_json(p.adapter->A) : json::array();
  j["B"] = p.adapter ? matrix_to_json(p.adapter->B) : json::array();
  j["scaling"] = p.adapter ? p.adapter->scaling : 1.0;
  j["theta_per_task"] = ckpt.theta_per_task;
  j["rng_seed"] = ckpt.rng_seed;
  j["featurizer_seed"] = ckpt.featurizer_seed;
  j["prompting"] = ckpt.prompting;
  j["config"] = ckpt.config;
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("format_version")) {
      throw Error(ErrorCode::kParseError, "checkpoint lacks format_version");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw Error(ErrorCode::kVersionMismatch, "checkpoint format " + std::to_string(version) + ", reader expects " +
                                                   std::to_string(kCheckpointFormatVersion));
    }
    const auto d_in = j.at("d_in").get<Eigen::Index>();
    const auto d_out = j.at("d_out").get<Eigen::Index>();
    const auto rank = j.at("rank").get<Eigen::Index>();
    if (d_in < 1 || d_out < 1 || rank < 0) throw Error(ErrorCode::kParseError, "invalid checkpoint dimensions");
    Checkpoint c;
    c.params.W = matrix_from_json(j.at("W"), d_out, d_in, "W");
    const auto b = j.at("b").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(b.size()) != d_out) throw Error(ErrorCode::kParseError, "b has wrong length");
    c.params.b = Eigen::Map<const Vector>(b.data(), d_out);
    if (rank > 0) {
      LoraAdapter a;
      a.A = matrix_from_json(j.at("A"), rank, d_in, "A");
      a.B = matrix_from_json(j.at("B"), d_out, rank, "B");
      a.scaling = j.at("scaling").get<double>();
      c.params.adapter = std::move(a);
    }
    c.theta_per_task = j.at("theta_per_task").get<std::map<std::string, double>>();
    c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    c.featurizer_seed = j.value("featurizer_seed", std::uint64_t{0});
    c.prompting = j.value("prompting", false);
    c.config = j.value("config", json());
    if (!all_finite(c.params.W) || !all_finite(c.params.b)) {
      throw Error(ErrorCode::kParseError, "checkpoint holds non-finite weights");
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_string(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_string(read_file(path)); }

}  // namespace cembed
