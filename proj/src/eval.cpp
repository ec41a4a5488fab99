#include "cembed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>
#include <optional>
#include <sstream>

#include "cembed/error.hpp"
#include "cembed/souping.hpp"

namespace cembed {

using nlohmann::json;

namespace {

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

Matrix encode_texts(const std::vector<std::string>& texts, const Featurizer& featurizer, const EncoderParams& params) {
  Matrix x(static_cast<Eigen::Index>(texts.size()), featurizer.dim_in);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = featurizer.featurize(texts[i]).transpose();
  }
  return encode_batch(x, params).outputs;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

json mean_std_json(const MeanStd& m) { return json{{"mean", m.mean}, {"stddev", m.stddev}}; }

}  // namespace

void EvalReport::aggregate() {
  per_meta_task.clear();
  std::map<std::string, std::pair<double, std::size_t>> sums;
  double total = 0.0;
  for (const auto& [id, score] : per_dataset) {
    auto& s = sums[score.task_kind];
    s.first += score.hit_at_1;
    s.second += 1;
    total += score.hit_at_1;
  }
  for (const auto& [kind, s] : sums) per_meta_task[kind] = s.first / static_cast<double>(s.second);
  overall = per_dataset.empty() ? 0.0 : total / static_cast<double>(per_dataset.size());
}

std::string EvalReport::to_markdown() const {
  std::ostringstream md;
  md << "| Dataset | Task | Hit@1 | Recall@5 | Queries |\n|---|---|---|---|---|\n";
  for (const auto& [id, s] : per_dataset) {
    md << "| " << id << " | " << s.task_kind << " | " << fmt(s.hit_at_1) << " | " << fmt(s.recall_at_5) << " | "
       << s.n_queries << " |\n";
  }
  md << "\n| Meta-task | Hit@1 |\n|---|---|\n";
  for (const auto& [kind, v] : per_meta_task) md << "| " << kind << " | " << fmt(v) << " |\n";
  md << "\n**Overall Hit@1:** " << fmt(overall) << "\n";
  return md.str();
}

void to_json(json& j, const EvalReport& r) {
  json per_dataset = json::object();
  for (const auto& [id, s] : r.per_dataset) {
    per_dataset[id] = json{{"task_kind", s.task_kind},
                           {"hit_at_1", s.hit_at_1},
                           {"recall_at_5", s.recall_at_5},
                           {"n_queries", s.n_queries}};
  }
  j = json{{"per_dataset", per_dataset},
           {"per_meta_task", r.per_meta_task},
           {"overall", r.overall},
           {"config", r.config}};
}

void from_json(const json& j, EvalReport& r) {
  r.per_dataset.clear();
  for (const auto& [id, s] : j.at("per_dataset").items()) {
    DatasetScore d;
    d.task_kind = s.at("task_kind").get<std::string>();
    d.hit_at_1 = s.at("hit_at_1").get<double>();
    d.recall_at_5 = s.at("recall_at_5").get<double>();
    d.n_queries = s.at("n_queries").get<std::size_t>();
    r.per_dataset[id] = d;
  }
  r.per_meta_task = j.at("per_meta_task").get<std::map<std::string, double>>();
  r.overall = j.at("overall").get<double>();
  r.config = j.value("config", json());
}

namespace {

std::optional<DatasetScore> score_dataset(const std::vector<Record>& all, const EncoderParams& params,
                                          const EvalOptions& options, const PromptTemplate& prompt) {
  std::vector<const Record*> records;
  for (const Record& r : all) {
    if (r.split == options.split) records.push_back(&r);
  }
  if (records.empty()) return std::nullopt;

  std::vector<std::string> queries, targets;
  for (const Record* r : records) {
    queries.push_back(build_prompt(*r, prompt, Side::kQuery));
    targets.push_back(build_prompt(*r, prompt, Side::kTarget));
  }
  const Matrix q = encode_texts(queries, options.featurizer, params);
  const Matrix t = encode_texts(targets, options.featurizer, params);
  const Matrix scores = similarity_matrix(q, t);

  const std::size_t n = records.size();
  const std::size_t k = std::min<std::size_t>(5, n);
  std::vector<std::size_t> order(n);
  double hits = 0.0, recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto row = scores.row(static_cast<Eigen::Index>(i));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = row(static_cast<Eigen::Index>(a));
                        const double sb = row(static_cast<Eigen::Index>(b));
                        if (sa != sb) return sa > sb;
                        return records[a]->id < records[b]->id;
                      });
    const std::string& gold = records[i]->gold_group;
    if (records[order[0]]->gold_group == gold) hits += 1.0;
    for (std::size_t r = 0; r < k; ++r) {
      if (records[order[r]]->gold_group == gold) {
        recall += 1.0;
        break;
      }
    }
  }
  DatasetScore score;
  score.task_kind = std::string(to_string(records.front()->task_kind));
  score.n_queries = n;
  score.hit_at_1 = hits / static_cast<double>(n);
  score.recall_at_5 = recall / static_cast<double>(n);
  return score;
}

}  // namespace

EvalReport evaluate(const EncoderParams& params, const DatasetManifest& manifest, const EvalOptions& options) {
  params.validate();
  const PromptTemplate prompt = options.prompting ? options.prompt : PromptTemplate::disabled();
  std::vector<const std::pair<const std::string, std::vector<Record>>*> entries;
  for (const auto& entry : manifest.datasets) entries.push_back(&entry);
  std::vector<std::optional<DatasetScore>> scores(entries.size());

  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(entries.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < entries.size(); ++i) scores[i] = score_dataset(entries[i]->second, params, options, prompt);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < entries.size(); i += workers) {
          scores[i] = score_dataset(entries[i]->second, params, options, prompt);
        }
      }));
    }
    for (auto& j : jobs) j.get();
  }

  EvalReport report;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (scores[i]) report.per_dataset[entries[i]->first] = *scores[i];
  }
  if (report.per_dataset.empty()) {
    throw Error(ErrorCode::kEmptySplit, "no " + std::string(to_string(options.split)) + " records to evaluate");
  }
  report.aggregate();
  return report;
}

EvalOptions eval_options_for(const RunConfig& config, bool prompting) {
  EvalOptions o;
  o.featurizer = make_featurizer(config);
  o.prompting = prompting;
  o.prompt = config.prompt;
  return o;
}

// Ablation ------------------------------------------------------------------

void from_json(const json& j, AblationGrid& g) {
  g.base = j.value("base", json::object());
  auto variants = [](const json& arr) {
    std::vector<AblationVariant> out;
    for (const json& v : arr) out.push_back({v.at("name").get<std::string>(), v.value("overrides", json::object())});
    return out;
  };
  g.rows = variants(j.value("rows", json::array()));
  g.soup_mixes.clear();
  g.soup_weights.clear();
  if (j.contains("soup")) {
    g.soup_mixes = variants(j.at("soup").value("mixes", json::array()));
    g.soup_weights = j.at("soup").value("weights", std::vector<double>{});
  }
}

void to_json(json& j, const AblationGrid& g) {
  auto variants = [](const std::vector<AblationVariant>& vs) {
    json arr = json::array();
    for (const auto& v : vs) arr.push_back(json{{"name", v.name}, {"overrides", v.overrides}});
    return arr;
  };
  j = json{{"base", g.base}, {"rows", variants(g.rows)}};
  if (!g.soup_mixes.empty()) j["soup"] = json{{"mixes", variants(g.soup_mixes)}, {"weights", g.soup_weights}};
}

RunConfig variant_config(const AblationGrid& grid, const AblationVariant& variant, std::uint64_t seed) {
  json patch = grid.base.is_null() ? json::object() : grid.base;
  json overrides = variant.overrides.is_null() ? json::object() : variant.overrides;
  json stage_overrides;
  if (overrides.contains("stage_overrides")) {
    stage_overrides = overrides["stage_overrides"];
    overrides.erase("stage_overrides");
  }
  patch.merge_patch(overrides);
  patch["seed"] = seed;
  RunConfig config = run_config_from_json(patch);
  if (stage_overrides.is_object()) {
    // Patch stages by name on top of the fully resolved config.
    json full = to_json(config);
    for (json& stage : full["train"]["stages"]) {
      const std::string name = stage.at("name").get<std::string>();
      if (stage_overrides.contains(name)) stage.merge_patch(stage_overrides[name]);
    }
    config = run_config_from_json(full);
  }
  return config;
}

void AblationRow::summarize() {
  std::vector<double> overall_values;
  std::map<std::string, std::vector<double>> meta;
  for (const auto& r : per_seed) {
    overall_values.push_back(r.overall);
    for (const auto& [kind, v] : r.per_meta_task) meta[kind].push_back(v);
  }
  overall = mean_std(overall_values);
  per_meta_task.clear();
  for (const auto& [kind, vs] : meta) per_meta_task[kind] = mean_std(vs);
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  for (const auto& r : soup_rows) {
    if (r.name == name) return r;
  }
  throw Error(ErrorCode::kConfigInvalid, "no ablation row named '" + name + "'");
}

namespace {

void markdown_rows(std::ostringstream& md, const std::vector<AblationRow>& rows) {
  if (rows.empty()) return;
  md << "| Config | Overall |";
  for (const auto& [kind, v] : rows.front().per_meta_task) md << ' ' << kind << " |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < rows.front().per_meta_task.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& r : rows) {
    md << "| " << r.name << " | " << fmt(r.overall.mean) << " ± " << fmt(r.overall.stddev) << " |";
    for (const auto& [kind, v] : r.per_meta_task) md << ' ' << fmt(v.mean) << " ± " << fmt(v.stddev) << " |";
    md << '\n';
  }
}

json row_json(const AblationRow& r, const std::vector<std::uint64_t>& seeds) {
  json per_seed = json::array();
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    per_seed.push_back(json{{"seed", seeds[i]}, {"overall", r.per_seed[i].overall},
                            {"per_meta_task", r.per_seed[i].per_meta_task}});
  }
  json meta = json::object();
  for (const auto& [kind, v] : r.per_meta_task) meta[kind] = mean_std_json(v);
  return json{{"name", r.name}, {"overall", mean_std_json(r.overall)}, {"per_meta_task", meta},
              {"per_seed", per_seed}};
}

}  // namespace

std::string AblationTable::to_markdown() const {
  std::ostringstream md;
  md << "## Strategy ablation (Hit@1, mean ± std over " << seeds.size() << " seeds)\n\n";
  markdown_rows(md, rows);
  if (!soup_rows.empty()) {
    md << "\n## Adapter souping (Hit@1, mean ± std over " << seeds.size() << " seeds)\n\n";
    markdown_rows(md, soup_rows);
  }
  return md.str();
}

void to_json(json& j, const AblationTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back(row_json(r, t.seeds));
  json soup = json::array();
  for (const auto& r : t.soup_rows) soup.push_back(row_json(r, t.seeds));
  j = json{{"seeds", t.seeds}, {"rows", rows}, {"soup_rows", soup}, {"grid", t.grid}};
}

namespace {

// Memoizes generated manifests and first-stage training results.
class RunCache {
 public:
  const DatasetManifest& manifest(const RunConfig& config) {
    const std::string key = config.manifest_path ? "path:" + *config.manifest_path
                                                 : std::to_string(config.seed) + json(config.generation).dump();
    auto it = manifests_.find(key);
    if (it == manifests_.end()) it = manifests_.emplace(key, resolve_manifest(config)).first;
    return it->second;
  }

  TrainState train(const RunConfig& config) {
    config.validate();
    const DatasetManifest& data = manifest(config);
    json first = to_json(config);
    first["train"]["stages"] = json::array({first["train"]["stages"][0]});
    const std::string key = first.dump();
    auto it = first_stage_.find(key);
    if (it == first_stage_.end()) {
      TrainState state = initial_state(config);
      run_stage(state, data, config);
      it = first_stage_.emplace(key, std::move(state)).first;
    }
    TrainState state = it->second;
    while (state.stages_done < config.train.stages.size()) run_stage(state, data, config);
    return state;
  }

  void clear_stages() { first_stage_.clear(); }

 private:
  std::map<std::string, DatasetManifest> manifests_;
  std::map<std::string, TrainState> first_stage_;
};

EncoderParams soup_states(const std::vector<TrainState>& states, const std::vector<double>& weights,
                          std::map<std::string, double>& thetas) {
  SoupSpec spec;
  spec.weights = weights;
  const EncoderParams& base = states.front().params;
  for (const auto& s : states) {
    if (!s.params.adapter) throw Error(ErrorCode::kShapeMismatch, "souping needs adapters");
    if (s.params.W != base.W || s.params.b != base.b) {
      throw Error(ErrorCode::kShapeMismatch, "soup mixes must share their base weights");
    }
    spec.adapters.push_back(*s.params.adapter);
  }
  const SoupResult soup = soup_adapters(spec);
  std::vector<double> w = weights;
  if (w.empty()) w.assign(states.size(), 1.0 / static_cast<double>(states.size()));
  std::map<std::string, std::pair<double, double>> acc;
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (const auto& [key, theta] : states[i].thetas) {
      acc[key].first += w[i] * theta;
      acc[key].second += w[i];
    }
  }
  thetas.clear();
  for (const auto& [key, a] : acc) thetas[key] = a.first / a.second;
  return merge_into_base(base, soup.delta);
}

}  // namespace

AblationTable run_ablation(const AblationGrid& grid, const std::vector<std::uint64_t>& seeds,
                           const AblationProgress& progress) {
  if (grid.rows.size() < 2) throw Error(ErrorCode::kConfigInvalid, "an ablation needs at least two configs");
  if (seeds.empty()) throw Error(ErrorCode::kConfigInvalid, "an ablation needs at least one seed");
  AblationTable table;
  table.seeds = seeds;
  table.grid = grid;
  for (const auto& v : grid.rows) table.rows.push_back({v.name, {}, {}, {}});
  const bool soup = grid.soup_mixes.size() >= 2;
  if (soup) {
    for (const auto& v : grid.soup_mixes) table.soup_rows.push_back({v.name, {}, {}, {}});
    table.soup_rows.push_back({"Souped", {}, {}, {}});
  }

  for (std::uint64_t seed : seeds) {
    RunCache cache;
    for (std::size_t r = 0; r < grid.rows.size(); ++r) {
      if (progress) progress(grid.rows[r].name, seed);
      const RunConfig config = variant_config(grid, grid.rows[r], seed);
      const TrainState state = cache.train(config);
      EvalReport report = evaluate(state.params, cache.manifest(config), eval_options_for(config, state.prompting));
      table.rows[r].per_seed.push_back(std::move(report));
    }
    if (soup) {
      std::vector<TrainState> states;
      RunConfig last;
      for (std::size_t m = 0; m < grid.soup_mixes.size(); ++m) {
        if (progress) progress(grid.soup_mixes[m].name, seed);
        last = variant_config(grid, grid.soup_mixes[m], seed);
        states.push_back(cache.train(last));
        table.soup_rows[m].per_seed.push_back(
            evaluate(states.back().params, cache.manifest(last), eval_options_for(last, states.back().prompting)));
      }
      if (progress) progress("Souped", seed);
      std::map<std::string, double> thetas;
      const EncoderParams souped = soup_states(states, grid.soup_weights, thetas);
      table.soup_rows.back().per_seed.push_back(
          evaluate(souped, cache.manifest(last), eval_options_for(last, states.front().prompting)));
    }
  }
  for (auto& r : table.rows) r.summarize();
  for (auto& r : table.soup_rows) r.summarize();
  return table;
}

}  // namespace cembed
