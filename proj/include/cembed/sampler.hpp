#pragma once

// Single-dataset batch construction. Each step picks one dataset with
// probability proportional to resample_weight * size, then draws a batch
// without replacement from it. Step k's batch depends only on (seed, k).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cembed/data.hpp"

namespace cembed {

enum class EpochUnit { kSteps, kPasses };

struct SamplerConfig {
  std::size_t batch_size = 64;
  // Keys are matched against the dataset id, then its task kind, then its
  // modality group ("image", "video", "visdoc"). Missing keys weigh 1.
  std::map<std::string, double> resample_weights;
  bool dedup_classification_targets = false;
  std::uint64_t seed = 0;
  EpochUnit epoch_unit = EpochUnit::kSteps;

  void validate() const;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

struct Batch {
  std::size_t step = 0;
  std::string dataset_id;
  TaskKind task_kind = TaskKind::kImgRet;
  std::vector<Record> records;
};

class BatchSampler {
 public:
  /// Samples from the train split of `manifest`. Throws BatchInfeasible,
  /// ConfigInvalid.
  BatchSampler(const DatasetManifest& manifest, SamplerConfig config);

  Batch batch_at(std::size_t step) const;
  Batch next_batch() { return batch_at(step_++); }

  /// Selection probability per dataset, in dataset-id order.
  const std::map<std::string, double>& dataset_probabilities() const { return probabilities_; }
  double weight_for(const std::string& dataset_id) const;
  std::size_t train_record_count() const;

 private:
  SamplerConfig config_;
  std::vector<std::string> ids_;
  std::vector<std::vector<Record>> pools_;
  std::vector<double> cumulative_;
  std::map<std::string, double> probabilities_;
  std::size_t step_ = 0;
};

}  // namespace cembed
