#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cembed/error.hpp"
#include "cembed/eval.hpp"
#include "cembed/rng.hpp"

using namespace cembed;

namespace {

Record rec(std::string id, std::string q, std::string t, std::string gold, Split split = Split::kTest) {
  Record r;
  r.id = std::move(id);
  r.dataset_id = "d";
  r.task_kind = TaskKind::kImgRet;
  r.query_text = std::move(q);
  r.target_text = std::move(t);
  r.gold_group = std::move(gold);
  r.split = split;
  return r;
}

EncoderParams identity(Eigen::Index d) {
  EncoderParams p;
  p.W = Matrix::Identity(d, d);
  p.b = Vector::Zero(d);
  return p;
}

}  // namespace

TEST_CASE("perfect encoder scores 1") {
  DatasetManifest m;
  const char* words[] = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"};
  for (int i = 0; i < 8; ++i) {
    m.datasets["d"].push_back(rec("r" + std::to_string(i), words[i], words[i], "g" + std::to_string(i)));
  }
  EvalOptions o;
  o.featurizer = Featurizer{64, 0};
  const EvalReport r = evaluate(identity(64), m, o);
  CHECK(r.per_dataset.at("d").hit_at_1 == 1.0);
  CHECK(r.per_dataset.at("d").recall_at_5 == 1.0);
  CHECK(r.per_dataset.at("d").n_queries == 8);
  CHECK(r.overall == 1.0);
}

TEST_CASE("random encoder is at chance") {
  Rng rng(3);
  DatasetManifest m;
  for (int i = 0; i < 400; ++i) {
    m.datasets["d"].push_back(rec("r" + std::to_string(1000 + i), "q" + std::to_string(rng.next()),
                                  "t" + std::to_string(rng.next()), "g" + std::to_string(i)));
  }
  EvalOptions o;
  double total = 0.0;
  for (int t = 0; t < 10; ++t) {
    Rng prng(100 + t);
    total += evaluate(EncoderParams::initialize(64, 32, prng), m, o).overall;
  }
  // 1/400 = 0.0025
  CHECK(total / 10.0 < 0.015);
}

TEST_CASE("ties go to the lower id and order does not matter") {
  DatasetManifest m;
  // Two candidates with identical text; only the lower id is in the query's group.
  m.datasets["d"] = {rec("b", "red car", "red car", "g1"), rec("a", "blue boat", "red car", "g2")};
  EvalOptions o;
  const EvalReport r = evaluate(identity(64), m, o);
  // Query "red car" (gold g1) ties between a (g2) and b (g1): a wins -> miss.
  // Query "blue boat" (gold g2) is closest to ... whichever; both candidates are the same text, a wins -> hit.
  CHECK(r.per_dataset.at("d").hit_at_1 == doctest::Approx(0.5));

  std::reverse(m.datasets["d"].begin(), m.datasets["d"].end());
  CHECK(evaluate(identity(64), m, o).per_dataset.at("d").hit_at_1 == r.per_dataset.at("d").hit_at_1);
}

TEST_CASE("evaluation is invariant to candidate order") {
  const DatasetManifest m = generate_benchmark(3, GenerationSpec::desk_default());
  Rng rng(9);
  const EncoderParams p = EncoderParams::initialize(64, 32, rng);
  EvalOptions o;
  const EvalReport a = evaluate(p, m, o);
  DatasetManifest shuffled = m;
  for (auto& [id, recs] : shuffled.datasets) std::reverse(recs.begin(), recs.end());
  CHECK(evaluate(p, shuffled, o) == a);

  o.threads = 4;
  CHECK(evaluate(p, m, o) == a);
}

TEST_CASE("report aggregation and serialization") {
  const DatasetManifest m = generate_benchmark(3, GenerationSpec::desk_default());
  Rng rng(1);
  EvalOptions o;
  o.prompting = true;
  EvalReport r = evaluate(EncoderParams::initialize(64, 32, rng), m, o);
  double sum = 0.0;
  for (const auto& [id, s] : r.per_dataset) {
    CHECK(s.hit_at_1 >= 0.0);
    CHECK(s.hit_at_1 <= 1.0);
    CHECK(s.recall_at_5 >= s.hit_at_1);
    sum += s.hit_at_1;
  }
  CHECK(std::abs(r.overall - sum / static_cast<double>(r.per_dataset.size())) < 1e-12);
  const double cls = (r.per_dataset.at("cls_memes").hit_at_1 + r.per_dataset.at("cls_voc").hit_at_1 +
                      r.per_dataset.at("cls_news").hit_at_1) / 3.0;
  CHECK(std::abs(r.per_meta_task.at("img_cls") - cls) < 1e-12);

  r.config = nlohmann::json{{"note", "x"}};
  const nlohmann::json j = r;
  CHECK(j.get<EvalReport>() == r);
  CHECK(r.to_markdown().find("Overall") != std::string::npos);

  o.split = Split::kTrain;
  CHECK(evaluate(EncoderParams::initialize(64, 32, rng), m, o).per_dataset.size() == r.per_dataset.size());

  DatasetManifest only_train;
  only_train.datasets["d"] = {rec("x", "a", "b", "g", Split::kTrain), rec("y", "c", "d", "h", Split::kTrain)};
  o.split = Split::kTest;
  try {
    evaluate(identity(64), only_train, o);
    FAIL("expected EmptySplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptySplit);
  }
}

TEST_CASE("ablation harness, small") {
  AblationGrid g;
  g.base = nlohmann::json{{"train",
                           {{"lr0", 1e-2},
                            {"stages", {{{"name", "continual"}, {"steps", 10}}, {{"name", "finetune"}, {"steps", 20}}}}}}};
  g.rows = {{"base", nlohmann::json::object()},
            {"no prompts", nlohmann::json{{"stage_overrides", {{"finetune", {{"prompting_enabled", false}}}}}}}};
  g.soup_mixes = {{"m1", nlohmann::json{{"stage_overrides", {{"finetune", {{"sampler_seed", 1}}}}}}},
                  {"m2", nlohmann::json{{"stage_overrides", {{"finetune", {{"sampler_seed", 2}}}}}}}};
  const AblationTable t = run_ablation(g, {1, 2});
  CHECK(t.rows.size() == 2);
  CHECK(t.soup_rows.size() == 3);
  CHECK(t.soup_rows.back().name == "Souped");
  CHECK(t.row("base").per_seed.size() == 2);
  CHECK_FALSE(variant_config(g, g.rows[1], 1).train.stages[1].prompting_enabled);
  CHECK(variant_config(g, g.rows[1], 1).seed == 1);
  const std::string md = t.to_markdown();
  CHECK(md.find("Souped") != std::string::npos);
  CHECK(md.find("no prompts") != std::string::npos);
  const nlohmann::json j = t;
  CHECK(j.contains("rows"));
  // Same grid, same numbers.
  CHECK(nlohmann::json(run_ablation(g, {1, 2})).dump() == j.dump());

  AblationGrid one = g;
  one.rows.resize(1);
  CHECK_THROWS_AS(run_ablation(one, {1}), Error);
  const nlohmann::json gj = g;
  CHECK(nlohmann::json(gj.get<AblationGrid>()) == gj);
}
