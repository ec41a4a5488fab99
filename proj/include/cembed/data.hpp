#pragma once

// Synthetic multi-task benchmark: typed records, the generator that plants
// false negatives and sibling-clip hard negatives, classification-dataset
// merging, prompt assembly, per-dataset capping and JSON Lines manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cembed {

enum class TaskKind { kImgCls, kImgQa, kImgRet, kImgGround, kDocRet, kVidRet, kVidQa };
enum class Modality { kText, kImage };
enum class Split { kTrain, kTest };
enum class Side { kQuery, kTarget };

std::string_view to_string(TaskKind kind);
std::string_view to_string(Modality modality);
std::string_view to_string(Split split);
TaskKind parse_task_kind(std::string_view name);
Modality parse_modality(std::string_view name);
Split parse_split(std::string_view name);

/// "image", "video" or "visdoc".
std::string_view modality_group(TaskKind kind);

inline constexpr std::string_view kMergedClassificationId = "img_cls_merged";

struct Record {
  std::string id;
  std::string dataset_id;
  TaskKind task_kind = TaskKind::kImgRet;
  std::optional<std::string> group_id;  // source video for sibling clips
  std::string query_text;
  std::string target_text;
  std::string gold_group;               // equivalence class; evaluation only
  Modality query_modality = Modality::kText;
  Split split = Split::kTrain;

  bool operator==(const Record&) const = default;
};

struct ManifestMetadata {
  std::uint64_t seed = 0;
  double p_fn = 0.0;
  std::map<std::string, std::vector<std::string>> label_sets;  // classification datasets only

  bool operator==(const ManifestMetadata&) const = default;
};

struct DatasetManifest {
  std::map<std::string, std::vector<Record>> datasets;
  ManifestMetadata metadata;

  std::size_t record_count() const;
  /// Copy holding only records of `split`; datasets left empty are dropped.
  DatasetManifest split_view(Split split) const;
  /// Copy holding only datasets whose id or task kind is listed. Empty filter keeps everything.
  DatasetManifest filtered(const std::vector<std::string>& keep) const;
  /// Throws DuplicateId, SpecInvalid.
  void validate() const;

  bool operator==(const DatasetManifest&) const = default;
};

struct DatasetSpec {
  std::string id;
  TaskKind task_kind = TaskKind::kImgRet;
  std::size_t records = 200;            // before the train/test split
  std::size_t labels = 0;               // classification only
  std::size_t clip_group_size = 0;      // sibling clips per source video (0: none)
  std::size_t concept_pool = 400;       // distinct topic words this dataset draws from
  std::size_t topic_words = 3;
  std::size_t query_noise_words = 3;
  std::size_t target_noise_words = 3;
  std::optional<Modality> query_modality;  // defaults from the task kind
};

struct GenerationSpec {
  std::uint64_t seed = 0;
  double p_fn = 0.05;                // planted duplicate-topic rate
  double test_fraction = 0.25;
  std::size_t noise_pool = 24;       // shared nuisance vocabulary per modality group
  std::vector<DatasetSpec> datasets;

  /// Nine datasets over the seven task kinds, three of them classification
  /// (2, 20 and 24 labels).
  static GenerationSpec desk_default();
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);
void to_json(nlohmann::json& j, const GenerationSpec& s);
void from_json(const nlohmann::json& j, GenerationSpec& s);
void to_json(nlohmann::json& j, const Record& r);
void from_json(const nlohmann::json& j, Record& r);

/// Pure function of (seed, spec); `seed` overrides spec.seed. Throws SpecInvalid.
DatasetManifest generate_benchmark(std::uint64_t seed, const GenerationSpec& spec);

/// Replaces every img_cls dataset with one dataset whose labels are prefixed
/// by their source id. Throws NoClassificationData.
DatasetManifest merge_classification_datasets(const DatasetManifest& manifest);

struct PromptTemplate {
  std::string system_prompt =
      "Given an image, summarize the provided image in one word. Given only text, describe the text in one word.";
  std::string text_repr_prompt = "Represent the given text in one word.";
  std::string multimodal_repr_prompt = "Represent the given image in one word.";

  static PromptTemplate disabled() { return {"", "", ""}; }
};

/// Query side: "<system> <content> <representation>", empty parts skipped.
/// Target side: the content alone.
std::string build_prompt(const Record& record, const PromptTemplate& prompt, Side side);

/// Unchanged when records.size() <= cap; otherwise a seeded uniform sample of
/// exactly `cap` records in their original order.
std::vector<Record> cap_dataset(const std::vector<Record>& records, std::size_t cap, std::uint64_t seed);

/// JSON Lines: one header line {"manifest": {...}} followed by one record per line.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Throws IoError, ParseError (with line number), DuplicateId.
DatasetManifest read_manifest(const std::filesystem::path& path);

std::string manifest_to_string(const DatasetManifest& manifest);
DatasetManifest manifest_from_string(std::string_view text);

}  // namespace cembed
