// cembed: generate data, train, evaluate, soup adapters, check gradients and
// run ablations from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cembed/error.hpp"
#include "cembed/eval.hpp"
#include "cembed/gradcheck.hpp"
#include "cembed/io.hpp"
#include "cembed/souping.hpp"
#include "cembed/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cembed;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, const std::string& out_help) {
  cmd->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Master seed (overrides the config)");
  cmd->add_option("-o,--out", flags.out, out_help);
  cmd->add_option("--threads", flags.threads, "Threads for read-only parallel sections")->check(CLI::Range(1u, 256u));
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
}

RunConfig run_config(const CommonFlags& flags, const std::optional<std::string>& manifest) {
  json patch = flags.config.empty() ? json::object() : read_json(flags.config);
  if (flags.seed) patch["seed"] = *flags.seed;
  if (manifest) patch["manifest_path"] = *manifest;
  return run_config_from_json(patch);
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// gen-data ------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& flags) {
  GenerationSpec spec = GenerationSpec::desk_default();
  if (!flags.config.empty()) spec = read_json(flags.config).get<GenerationSpec>();
  if (flags.seed) spec.seed = *flags.seed;
  const DatasetManifest manifest = generate_benchmark(spec.seed, spec);
  const fs::path out = flags.out.empty() ? "manifest.jsonl" : flags.out;
  write_manifest(manifest, out);
  std::cout << "wrote " << manifest.record_count() << " records in " << manifest.datasets.size() << " datasets to "
            << out.string() << "\n";
  return 0;
}

// train ---------------------------------------------------------------------

int cmd_train(const CommonFlags& flags, const std::optional<std::string>& manifest_path, std::string log_path) {
  const RunConfig config = run_config(flags, manifest_path);
  const DatasetManifest manifest = resolve_manifest(config);
  const fs::path out = flags.out.empty() ? "model.ckpt" : flags.out;
  if (log_path.empty()) log_path = out.string() + ".log.jsonl";

  const std::size_t every = config.train.checkpoint_every;
  const TrainState state = train(manifest, config, [&](const TrainState& s, const TrainLogEntry& e) {
    if (every > 0 && (e.step + 1) % every == 0) save_checkpoint(make_checkpoint(s, config), out);
  });
  save_checkpoint(make_checkpoint(state, config), out);
  write_file_atomic(log_path, log_to_jsonl(state.log));
  const TrainLogEntry& last = state.log.back();
  std::cout << "trained " << state.global_step << " steps; final loss " << last.loss << "\n"
            << "checkpoint: " << out.string() << "\nlog: " << log_path << "\n";
  return 0;
}

// eval ----------------------------------------------------------------------

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path, const std::optional<std::string>& manifest_path,
             const std::string& split) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  // Data and featurizer come from the run that produced the checkpoint unless overridden.
  json patch = flags.config.empty() ? (ckpt.config.is_object() ? ckpt.config : json::object()) : read_json(flags.config);
  if (flags.seed) patch["seed"] = *flags.seed;
  if (manifest_path) patch["manifest_path"] = *manifest_path;
  const RunConfig config = run_config_from_json(patch);
  const DatasetManifest manifest = resolve_manifest(config);

  EvalOptions options = eval_options_for(config, ckpt.prompting);
  options.featurizer.seed = ckpt.featurizer_seed;
  options.split = parse_split(split);
  options.threads = flags.threads;
  EvalReport report = evaluate(ckpt.params, manifest, options);
  report.config = json{{"checkpoint", checkpoint_path}, {"split", split}, {"run_config", to_json(config)}};

  const fs::path dir = flags.out.empty() ? "." : flags.out;
  fs::create_directories(dir);
  write_json(dir / "report.json", report);
  write_file_atomic(dir / "report.md", report.to_markdown());
  std::cout << report.to_markdown() << "\nwrote " << (dir / "report.json").string() << " and "
            << (dir / "report.md").string() << "\n";
  return 0;
}

// soup ----------------------------------------------------------------------

std::vector<double> parse_weights(const std::string& text, std::size_t count) {
  std::vector<double> weights;
  if (text.empty()) return std::vector<double>(count, 1.0 / static_cast<double>(count));
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      weights.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--weights: '" + item + "' is not a number");
    }
  }
  try {
    validate_soup_weights(weights, count);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return weights;
}

int cmd_soup(const CommonFlags& flags, const std::vector<std::string>& inputs, const std::string& weight_text,
             const std::string& strategy, std::optional<Eigen::Index> rank, bool merge_base) {
  if (flags.out.empty()) throw UsageError("soup needs -o/--out");
  if (strategy != "delta-average" && strategy != "factor-svd") {
    throw UsageError("--strategy must be delta-average or factor-svd");
  }
  const std::vector<double> weights = parse_weights(weight_text, inputs.size());

  std::vector<Checkpoint> ckpts;
  for (const auto& path : inputs) ckpts.push_back(load_checkpoint(path));
  const EncoderParams& base = ckpts.front().params;
  SoupSpec spec;
  spec.weights = weights;
  Eigen::Index total_rank = 0;
  for (const auto& c : ckpts) {
    if (!c.params.adapter) throw Error(ErrorCode::kShapeMismatch, "checkpoint without an adapter cannot be souped");
    if (c.params.W.rows() != base.W.rows() || c.params.W.cols() != base.W.cols() || c.params.W != base.W ||
        c.params.b != base.b) {
      throw Error(ErrorCode::kShapeMismatch, "checkpoints do not share a base model");
    }
    spec.adapters.push_back(*c.params.adapter);
    total_rank += c.params.adapter->rank();
  }
  // delta-average is stored exactly: a rank sum(r_i) factorization reproduces it.
  spec.strategy = SoupStrategy::kFactorSvd;
  spec.target_rank = strategy == "factor-svd" ? rank.value_or(spec.adapters.front().rank())
                                              : std::min({total_rank, base.d_in(), base.d_out()});
  const SoupResult soup = soup_adapters(spec);

  Checkpoint out = ckpts.front();
  if (merge_base) {
    out.params = merge_into_base(base, strategy == "factor-svd" ? soup.adapter->delta() : soup.delta);
  } else {
    out.params.adapter = soup.adapter;
  }
  out.theta_per_task.clear();
  std::map<std::string, std::pair<double, double>> acc;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    for (const auto& [task, theta] : ckpts[i].theta_per_task) {
      acc[task].first += weights[i] * theta;
      acc[task].second += weights[i];
    }
  }
  for (const auto& [task, a] : acc) out.theta_per_task[task] = a.first / a.second;
  if (flags.seed) out.rng_seed = *flags.seed;
  json provenance = out.config;
  if (!provenance.is_object()) provenance = json::object();
  provenance["soup"] = json{{"inputs", inputs}, {"weights", weights}, {"strategy", strategy},
                            {"rank", spec.target_rank.value()}, {"merge_base", merge_base}};
  out.config = provenance;
  save_checkpoint(out, flags.out);
  std::cout << "souped " << inputs.size() << " adapters (" << strategy << ") into " << flags.out << "\n";
  return 0;
}

// gradcheck -----------------------------------------------------------------

int cmd_gradcheck(const CommonFlags& flags, std::size_t trials, bool normalized) {
  GradCheckOptions o;
  if (!flags.config.empty()) {
    const json j = read_json(flags.config);
    o.tolerance = j.value("tolerance", o.tolerance);
    o.step = j.value("step", o.step);
    o.floor = j.value("floor", o.floor);
    o.seed = j.value("seed", o.seed);
  }
  o.trials = trials;
  o.through_normalization = normalized;
  if (flags.seed) o.seed = *flags.seed;
  const GradCheckReport loss = check_loss_gradients(o);
  EncoderGradCheckOptions eo;
  eo.seed = o.seed;
  eo.trials = std::max<std::size_t>(1, trials / 2);
  eo.tolerance = o.tolerance;
  eo.step = o.step;
  eo.floor = o.floor;
  const GradCheckReport enc = check_encoder_gradients(eo);

  std::printf("loss gradients:    %zu trials, %zu coordinates, %zu failures\n", loss.trials, loss.coordinates,
              loss.failures);
  std::printf("  max rel err queries %.3e, targets %.3e, theta %.3e\n", loss.max_rel_err_queries,
              loss.max_rel_err_targets, loss.max_rel_err_theta);
  std::printf("encoder gradients: %zu trials, %zu coordinates, %zu failures\n", enc.trials, enc.coordinates,
              enc.failures);
  std::printf("max rel err %.3e (tolerance %.1e)\n", std::max(loss.max_rel_err, enc.max_rel_err), o.tolerance);
  if (!loss.passed() || !enc.passed()) {
    std::fprintf(stderr, "gradient check FAILED\n");
    return 2;
  }
  return 0;
}

// ablate --------------------------------------------------------------------

int cmd_ablate(const CommonFlags& flags, std::string seed_text, std::size_t num_seeds) {
  if (flags.config.empty()) throw UsageError("ablate needs --config GRID.json");
  const json grid_json = read_json(flags.config);
  const AblationGrid grid = grid_json.get<AblationGrid>();
  std::vector<std::uint64_t> seeds;
  if (!seed_text.empty()) {
    std::stringstream ss(seed_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw UsageError("--seeds: '" + item + "' is not an integer");
      }
    }
  } else {
    const std::uint64_t first = flags.seed.value_or(1);
    for (std::size_t i = 0; i < num_seeds; ++i) seeds.push_back(first + i);
  }
  const AblationTable table = run_ablation(grid, seeds, [](const std::string& name, std::uint64_t seed) {
    std::fprintf(stderr, "[ablate] seed %llu: %s\n", static_cast<unsigned long long>(seed), name.c_str());
  });
  const fs::path dir = flags.out.empty() ? "." : flags.out;
  fs::create_directories(dir);
  write_json(dir / "ablation.json", table);
  write_file_atomic(dir / "ablation.md", table.to_markdown());
  std::cout << table.to_markdown() << "\nwrote " << (dir / "ablation.json").string() << " and "
            << (dir / "ablation.md").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive embedding training with hardness-weighted, false-negative-masked InfoNCE"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, soup_flags, grad_flags, ablate_flags;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic benchmark manifest (JSON Lines)");
  add_common(gen, gen_flags, "Output manifest path (default manifest.jsonl)");

  std::optional<std::string> train_manifest;
  std::string train_log;
  auto* tr = app.add_subcommand("train", "Train an encoder from a run config");
  add_common(tr, train_flags, "Output checkpoint path (default model.ckpt)");
  tr->add_option("--manifest", train_manifest, "Manifest to train on instead of generating one")
      ->check(CLI::ExistingFile);
  tr->add_option("--log", train_log, "Training log path (default <out>.log.jsonl)");

  std::string eval_ckpt, eval_split = "test";
  std::optional<std::string> eval_manifest;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.json and report.md");
  add_common(ev, eval_flags, "Output directory (default .)");
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", eval_manifest, "Manifest to evaluate on")->check(CLI::ExistingFile);
  ev->add_option("--split", eval_split, "train or test")->check(CLI::IsMember({"train", "test"}));

  std::vector<std::string> soup_inputs;
  std::string soup_weights, soup_strategy = "delta-average";
  std::optional<Eigen::Index> soup_rank;
  bool soup_merge = false;
  auto* sp = app.add_subcommand("soup", "Merge adapters of several checkpoints into one checkpoint");
  add_common(sp, soup_flags, "Output checkpoint path");
  sp->add_option("checkpoints", soup_inputs, "Checkpoints sharing one base model")->required()->check(CLI::ExistingFile);
  sp->add_option("--weights", soup_weights, "Comma-separated weights summing to 1 (default uniform)");
  sp->add_option("--strategy", soup_strategy, "delta-average or factor-svd");
  sp->add_option("--rank", soup_rank, "Target rank for factor-svd")->check(CLI::PositiveNumber);
  sp->add_flag("--merge-base", soup_merge, "Fold the merged delta into the base weights");

  std::size_t grad_trials = 100;
  bool grad_normalized = false;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  add_common(gc, grad_flags, "Unused");
  gc->add_option("--trials", grad_trials, "Random configurations")->check(CLI::PositiveNumber);
  gc->add_flag("--through-normalization", grad_normalized, "Differentiate w.r.t. unnormalized embeddings");

  std::string ablate_seeds;
  std::size_t ablate_num_seeds = 5;
  auto* ab = app.add_subcommand("ablate", "Run a strategy ablation grid; writes ablation.json and ablation.md");
  add_common(ab, ablate_flags, "Output directory (default .)");
  ab->add_option("--seeds", ablate_seeds, "Comma-separated seeds (default: --seed .. --seed+N-1)");
  ab->add_option("--num-seeds", ablate_num_seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags);
    if (*tr) return cmd_train(train_flags, train_manifest, train_log);
    if (*ev) return cmd_eval(eval_flags, eval_ckpt, eval_manifest, eval_split);
    if (*sp) return cmd_soup(soup_flags, soup_inputs, soup_weights, soup_strategy, soup_rank, soup_merge);
    if (*gc) return cmd_gradcheck(grad_flags, grad_trials, grad_normalized);
    if (*ab) return cmd_ablate(ablate_flags, ablate_seeds, ablate_num_seeds);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
