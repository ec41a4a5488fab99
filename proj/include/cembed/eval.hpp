#pragma once

// Brute-force retrieval evaluation with multi-positive ground truth, and the
// ablation / souping harness built on top of it.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cembed/data.hpp"
#include "cembed/encoder.hpp"
#include "cembed/trainer.hpp"

namespace cembed {

struct DatasetScore {
  std::string task_kind;
  double hit_at_1 = 0.0;
  double recall_at_5 = 0.0;  // at least one in-group candidate among the top 5
  std::size_t n_queries = 0;

  bool operator==(const DatasetScore&) const = default;
};

struct EvalReport {
  std::map<std::string, DatasetScore> per_dataset;
  std::map<std::string, double> per_meta_task;  // task kind -> mean hit@1 of its datasets
  double overall = 0.0;                         // mean hit@1 over datasets
  nlohmann::json config;                        // provenance echo

  /// Recomputes per_meta_task and overall from per_dataset.
  void aggregate();
  std::string to_markdown() const;

  bool operator==(const EvalReport&) const = default;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct EvalOptions {
  Featurizer featurizer;
  bool prompting = false;
  PromptTemplate prompt;
  Split split = Split::kTest;
  unsigned threads = 1;  // datasets scored concurrently; results do not depend on it
};

/// Per dataset, every query of `split` ranks all targets of that split by
/// cosine similarity, ties broken by candidate id. Throws EmptySplit.
EvalReport evaluate(const EncoderParams& params, const DatasetManifest& manifest, const EvalOptions& options);

EvalOptions eval_options_for(const RunConfig& config, bool prompting);

// Ablation harness ----------------------------------------------------------

struct AblationVariant {
  std::string name;
  nlohmann::json overrides;  // merge-patched over the base run config
};

struct AblationGrid {
  nlohmann::json base;  // run config (patch over the desk default)
  std::vector<AblationVariant> rows;
  std::vector<AblationVariant> soup_mixes;  // >= 2 to produce a souped row
  std::vector<double> soup_weights;         // empty: uniform
};

void from_json(const nlohmann::json& j, AblationGrid& g);
void to_json(nlohmann::json& j, const AblationGrid& g);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one seed
};

struct AblationRow {
  std::string name;
  std::vector<EvalReport> per_seed;
  MeanStd overall;
  std::map<std::string, MeanStd> per_meta_task;

  void summarize();
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  std::vector<AblationRow> soup_rows;  // mixes followed by "Souped"
  nlohmann::json grid;

  const AblationRow& row(const std::string& name) const;
  std::string to_markdown() const;
};

void to_json(nlohmann::json& j, const AblationTable& t);

/// Reports progress as (label, seed).
using AblationProgress = std::function<void(const std::string&, std::uint64_t)>;

/// Trains and evaluates every (row, seed). Runs sharing an identical first
/// stage reuse its result. Throws ConfigInvalid when fewer than two rows.
AblationTable run_ablation(const AblationGrid& grid, const std::vector<std::uint64_t>& seeds,
                           const AblationProgress& progress = {});

/// Run config for one (variant, seed).
RunConfig variant_config(const AblationGrid& grid, const AblationVariant& variant, std::uint64_t seed);

}  // namespace cembed
