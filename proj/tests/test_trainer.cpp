#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "cembed/error.hpp"
#include "cembed/io.hpp"
#include "cembed/trainer.hpp"

using namespace cembed;
using nlohmann::json;

namespace {

RunConfig short_run(std::size_t continual_steps, std::size_t finetune_steps, std::uint64_t seed = 1) {
  return run_config_from_json(json{
      {"seed", seed},
      {"train",
       {{"lr0", 1e-2},
        {"stages",
         {{{"name", "continual"}, {"steps", continual_steps}},
          {{"name", "finetune"}, {"steps", finetune_steps}}}}}}});
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 2e-4) == 2e-4);
  CHECK(cosine_lr(50, 100, 2e-4) == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(cosine_lr(100, 100, 2e-4) == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(cosine_lr(25, 100, 1.0) == doctest::Approx(0.5 * (1.0 + std::cos(std::numbers::pi / 4.0))));
  double last = 1.0;
  for (std::size_t s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 1.0);
    CHECK(lr <= last);
    last = lr;
  }
  CHECK_THROWS_AS(cosine_lr(5, 0, 1.0), Error);
  CHECK_THROWS_AS(cosine_lr(11, 10, 1.0), Error);
}

TEST_CASE("run config defaults and JSON") {
  const RunConfig d = RunConfig::desk_default();
  CHECK(d.train.lr0 == 2e-4);
  CHECK(d.train.weight_decay == 5e-2);
  CHECK(d.train.loss.alpha == 9.0);
  REQUIRE(d.train.loss.delta.has_value());
  CHECK(*d.train.loss.delta == 0.95);
  CHECK(d.model.rank == 4);
  CHECK(d.dataset_cap == 1000);
  REQUIRE(d.train.stages.size() == 2);
  CHECK(d.train.stages[0].name == "continual");
  CHECK_FALSE(d.train.stages[0].prompting_enabled);
  CHECK(d.train.stages[1].prompting_enabled);
  CHECK(d.train.stages[1].per_task_temperature);

  const json j = to_json(d);
  CHECK(to_json(run_config_from_json(j)) == j);

  // A continual stage may not use prompts.
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"stages", {{{"name", "continual"}, {"prompting_enabled", true}}}}}}}),
                  Error);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"lr0", "fast"}}}}), Error);
  CHECK_THROWS_AS(run_config_from_json(json::array()), Error);
}

TEST_CASE("temperatures stay positive and theta is not decayed") {
  RunConfig c = short_run(20, 500);
  const DatasetManifest m = resolve_manifest(c);
  std::size_t steps = 0;
  const TrainState s = train(m, c, [&](const TrainState& st, const TrainLogEntry& e) {
    ++steps;
    for (const auto& [task, tau] : e.tau_per_task) CHECK(tau > 0.0);
    for (const auto& [task, theta] : st.thetas) CHECK(std::isfinite(theta));
  });
  CHECK(steps == 520);
  CHECK(s.log.size() == 520);
  CHECK(s.global_step == 520);

  // With temperature learning off and a huge decay, theta does not move.
  RunConfig frozen = short_run(5, 30);
  frozen.train.weight_decay = 10.0;
  frozen.train.stages[1].learn_temperature = false;
  const TrainState f = train(resolve_manifest(frozen), frozen);
  for (const auto& [task, theta] : f.thetas) CHECK(theta == kDefaultThetaInit);
}

TEST_CASE("stage behaviour") {
  RunConfig c = short_run(15, 15);
  const DatasetManifest m = resolve_manifest(c);
  TrainState s = initial_state(c);
  REQUIRE(s.params.adapter.has_value());
  CHECK(s.params.adapter->B.isZero(0.0));
  const Matrix w0 = s.params.W;

  run_stage(s, m, c);
  CHECK(s.stages_done == 1);
  CHECK_FALSE(s.prompting);
  CHECK(s.params.W != w0);  // continual trains the base
  CHECK(s.params.adapter->B.isZero(0.0));
  for (const auto& e : s.log) {
    CHECK(e.stage == "continual");
    CHECK(e.tau_per_task.size() == 1);
    CHECK(e.tau_per_task.count(std::string(kSharedTemperatureKey)) == 1);
    CHECK((e.dataset_id == "img_ret" || e.dataset_id == "doc_ret" || e.dataset_id == "vid_ret"));
  }

  const Matrix w1 = s.params.W;
  run_stage(s, m, c);
  CHECK(s.prompting);
  CHECK(s.params.W == w1);  // finetune trains the adapter only
  CHECK_FALSE(s.params.adapter->B.isZero(0.0));
  CHECK(s.log.back().lr == 0.0);
  CHECK(s.log[15].lr == c.train.lr0);
  CHECK_THROWS_AS(run_stage(s, m, c), Error);
}

TEST_CASE("training is deterministic") {
  const RunConfig c = short_run(10, 40, 5);
  const DatasetManifest m = resolve_manifest(c);
  const std::string a = checkpoint_to_string(make_checkpoint(train(m, c), c));
  const std::string b = checkpoint_to_string(make_checkpoint(train(m, c), c));
  CHECK(a == b);
  const RunConfig other = short_run(10, 40, 6);
  CHECK(checkpoint_to_string(make_checkpoint(train(resolve_manifest(other), other), other)) != a);
}

TEST_CASE("checkpoint round trip and errors") {
  const RunConfig c = short_run(5, 5);
  const TrainState s = train(resolve_manifest(c), c);
  const Checkpoint ck = make_checkpoint(s, c);
  const std::string text = checkpoint_to_string(ck);
  const json j = json::parse(text);
  for (const char* key : {"format_version", "d_in", "d_out", "rank", "W", "b", "A", "B", "scaling", "theta_per_task", "rng_seed"}) {
    CHECK(j.contains(key));
  }
  const Checkpoint back = checkpoint_from_string(text);
  CHECK(back.params.W == ck.params.W);
  CHECK(back.params.adapter->A == ck.params.adapter->A);
  CHECK(back.theta_per_task == ck.theta_per_task);
  CHECK(checkpoint_to_string(back) == text);

  const auto dir = std::filesystem::temp_directory_path() / "cembed_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(ck, dir / "a.json");
  CHECK(read_file(dir / "a.json") == text);
  CHECK_FALSE(std::filesystem::exists(dir / "a.json.tmp"));
  CHECK(checkpoint_to_string(load_checkpoint(dir / "a.json")) == text);
  std::filesystem::remove_all(dir);

  try {
    checkpoint_from_string(text.substr(0, text.size() / 2));
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParseError);
  }
  json old = j;
  old["format_version"] = 0;
  try {
    checkpoint_from_string(old.dump());
    FAIL("expected VersionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVersionMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.json"), Error);
}

TEST_CASE("log lines") {
  const RunConfig c = short_run(3, 3);
  const TrainState s = train(resolve_manifest(c), c);
  const std::string jsonl = log_to_jsonl(s.log);
  std::size_t lines = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    const std::size_t end = jsonl.find('\n', start);
    const json e = json::parse(jsonl.substr(start, end - start));
    for (const char* key : {"step", "stage", "dataset_id", "loss", "lr", "tau_per_task", "fn_masked_count"}) {
      CHECK(e.contains(key));
    }
    CHECK(e["step"] == lines);
    ++lines;
    start = end + 1;
  }
  CHECK(lines == 6);
}
