#include "cembed/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cembed/error.hpp"
#include "cembed/rng.hpp"

namespace cembed {

void SamplerConfig::validate() const {
  if (batch_size < 2) throw Error(ErrorCode::kConfigInvalid, "batch_size must be >= 2");
  for (const auto& [key, w] : resample_weights) {
    if (!std::isfinite(w) || w <= 0.0) {
      throw Error(ErrorCode::kConfigInvalid, "resample weight for '" + key + "' must be positive");
    }
  }
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"resample_weights", c.resample_weights},
                     {"dedup_classification_targets", c.dedup_classification_targets},
                     {"seed", c.seed},
                     {"epoch_unit", c.epoch_unit == EpochUnit::kSteps ? "steps" : "passes"}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  const SamplerConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.resample_weights = j.value("resample_weights", d.resample_weights);
  c.dedup_classification_targets = j.value("dedup_classification_targets", d.dedup_classification_targets);
  c.seed = j.value("seed", d.seed);
  const std::string unit = j.value("epoch_unit", std::string("steps"));
  if (unit == "steps") {
    c.epoch_unit = EpochUnit::kSteps;
  } else if (unit == "passes") {
    c.epoch_unit = EpochUnit::kPasses;
  } else {
    throw Error(ErrorCode::kConfigInvalid, "epoch_unit must be 'steps' or 'passes'");
  }
}

BatchSampler::BatchSampler(const DatasetManifest& manifest, SamplerConfig config) : config_(std::move(config)) {
  config_.validate();
  for (const auto& [id, records] : manifest.datasets) {
    std::vector<Record> pool;
    for (const Record& r : records) {
      if (r.split == Split::kTrain) pool.push_back(r);
    }
    if (pool.empty()) continue;
    if (pool.size() < config_.batch_size) {
      throw Error(ErrorCode::kBatchInfeasible, "dataset " + id + " has " + std::to_string(pool.size()) +
                                                   " training records, fewer than the batch size");
    }
    if (config_.dedup_classification_targets && pool.front().task_kind == TaskKind::kImgCls) {
      std::set<std::string> labels;
      for (const Record& r : pool) labels.insert(r.target_text);
      if (labels.size() < config_.batch_size) {
        throw Error(ErrorCode::kBatchInfeasible, "dataset " + id + " has " + std::to_string(labels.size()) +
                                                     " distinct targets, fewer than the batch size");
      }
    }
    ids_.push_back(id);
    pools_.push_back(std::move(pool));
  }
  if (ids_.empty()) throw Error(ErrorCode::kBatchInfeasible, "no training records to sample from");

  double total = 0.0;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    total += weight_for(ids_[i]) * static_cast<double>(pools_[i].size());
    cumulative_.push_back(total);
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    probabilities_[ids_[i]] = weight_for(ids_[i]) * static_cast<double>(pools_[i].size()) / total;
  }
}

double BatchSampler::weight_for(const std::string& dataset_id) const {
  const auto& w = config_.resample_weights;
  if (auto it = w.find(dataset_id); it != w.end()) return it->second;
  const auto pos = std::find(ids_.begin(), ids_.end(), dataset_id);
  if (pos == ids_.end()) return 1.0;
  const TaskKind kind = pools_[static_cast<std::size_t>(pos - ids_.begin())].front().task_kind;
  if (auto it = w.find(std::string(to_string(kind))); it != w.end()) return it->second;
  if (auto it = w.find(std::string(modality_group(kind))); it != w.end()) return it->second;
  return 1.0;
}

std::size_t BatchSampler::train_record_count() const {
  std::size_t n = 0;
  for (const auto& p : pools_) n += p.size();
  return n;
}

Batch BatchSampler::batch_at(std::size_t step) const {
  Rng rng(derive_seed(config_.seed, 0x73616d706c65ULL, step));  // "sample"
  const double u = rng.uniform() * cumulative_.back();
  std::size_t chosen = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) -
                                                cumulative_.begin());
  chosen = std::min(chosen, ids_.size() - 1);
  const std::vector<Record>& pool = pools_[chosen];

  Batch batch;
  batch.step = step;
  batch.dataset_id = ids_[chosen];
  batch.task_kind = pool.front().task_kind;
  const bool dedup = config_.dedup_classification_targets && batch.task_kind == TaskKind::kImgCls;

  // Lazy Fisher-Yates over indices; skipped draws keep the batch label-distinct.
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < order.size() && batch.records.size() < config_.batch_size; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
    const Record& r = pool[order[i]];
    if (dedup && !seen.insert(r.target_text).second) continue;
    batch.records.push_back(r);
  }
  return batch;
}

}  // namespace cembed
