#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "cembed/data.hpp"
#include "cembed/error.hpp"
#include "cembed/sampler.hpp"

using namespace cembed;

namespace {

DatasetManifest two_datasets(std::size_t n_a, std::size_t n_b, TaskKind kind_a = TaskKind::kImgRet,
                             TaskKind kind_b = TaskKind::kVidRet) {
  DatasetManifest m;
  auto fill = [&](const std::string& id, std::size_t n, TaskKind kind) {
    for (std::size_t i = 0; i < n; ++i) {
      Record r;
      r.id = id + std::to_string(i);
      r.dataset_id = id;
      r.task_kind = kind;
      r.query_text = "q" + std::to_string(i);
      r.target_text = "t" + std::to_string(i);
      r.gold_group = r.id;
      m.datasets[id].push_back(r);
    }
  };
  fill("A", n_a, kind_a);
  fill("B", n_b, kind_b);
  return m;
}

}  // namespace

TEST_CASE("single-dataset batches without replacement") {
  const DatasetManifest m = generate_benchmark(1, GenerationSpec::desk_default());
  SamplerConfig c;
  c.batch_size = 32;
  const BatchSampler s(m, c);
  for (std::size_t k = 0; k < 200; ++k) {
    const Batch b = s.batch_at(k);
    CHECK(b.records.size() == 32);
    std::set<std::string> ids;
    for (const auto& r : b.records) {
      CHECK(r.dataset_id == b.dataset_id);
      CHECK(r.task_kind == b.task_kind);
      CHECK(r.split == Split::kTrain);
      ids.insert(r.id);
    }
    CHECK(ids.size() == 32);
  }
}

TEST_CASE("batches are a function of (seed, step)") {
  const DatasetManifest m = generate_benchmark(1, GenerationSpec::desk_default());
  SamplerConfig c;
  c.seed = 77;
  BatchSampler a(m, c);
  const BatchSampler b(m, c);
  for (std::size_t k = 0; k < 20; ++k) {
    const Batch x = a.next_batch();
    const Batch y = b.batch_at(k);
    CHECK(x.records == y.records);
  }
  c.seed = 78;
  CHECK_FALSE(BatchSampler(m, c).batch_at(0).records == b.batch_at(0).records);
}

TEST_CASE("equal weights and sizes: 50/50 within 2%") {
  SamplerConfig c;
  c.batch_size = 2;
  c.resample_weights = {{"A", 1.0}, {"B", 1.0}};
  const BatchSampler s(two_datasets(100, 100), c);
  std::size_t a = 0;
  const std::size_t n = 10000;
  for (std::size_t k = 0; k < n; ++k) a += s.batch_at(k).dataset_id == "A";
  CHECK(std::abs(static_cast<double>(a) / n - 0.5) < 0.02);
}

TEST_CASE("image 1.5 vs video 0.5 gives about 3x") {
  SamplerConfig c;
  c.batch_size = 2;
  c.resample_weights = {{"image", 1.5}, {"video", 0.5}};
  const BatchSampler s(two_datasets(100, 100), c);
  CHECK(s.weight_for("A") == 1.5);
  CHECK(s.weight_for("B") == 0.5);
  CHECK(s.dataset_probabilities().at("A") == doctest::Approx(0.75));
  std::size_t image = 0;
  const std::size_t n = 10000;
  for (std::size_t k = 0; k < n; ++k) image += s.batch_at(k).dataset_id == "A";
  const double ratio = static_cast<double>(image) / static_cast<double>(n - image);
  CHECK(ratio == doctest::Approx(3.0).epsilon(0.1));

  // Dataset ids take precedence over kinds and groups.
  c.resample_weights = {{"image", 1.5}, {"img_ret", 4.0}, {"A", 2.0}};
  CHECK(BatchSampler(two_datasets(10, 10), c).weight_for("A") == 2.0);
  c.resample_weights = {{"image", 1.5}, {"img_ret", 4.0}};
  CHECK(BatchSampler(two_datasets(10, 10), c).weight_for("A") == 4.0);
}

TEST_CASE("classification dedup") {
  const DatasetManifest merged =
      merge_classification_datasets(generate_benchmark(4, GenerationSpec::desk_default()).filtered({"img_cls"}));
  SamplerConfig c;
  c.batch_size = 16;
  c.dedup_classification_targets = true;
  const BatchSampler s(merged, c);
  for (std::size_t k = 0; k < 200; ++k) {
    std::set<std::string> targets;
    for (const auto& r : s.batch_at(k).records) targets.insert(r.target_text);
    CHECK(targets.size() == 16);
  }

  // Two labels cannot fill a deduplicated batch of 16.
  try {
    BatchSampler(generate_benchmark(4, GenerationSpec::desk_default()).filtered({"cls_memes"}), c);
    FAIL("expected BatchInfeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBatchInfeasible);
  }
}

TEST_CASE("sampler errors") {
  SamplerConfig c;
  c.batch_size = 8;
  CHECK_THROWS_AS(BatchSampler(two_datasets(4, 20), c), Error);
  c.batch_size = 1;
  CHECK_THROWS_AS(BatchSampler(two_datasets(20, 20), c), Error);
  c.batch_size = 2;
  c.resample_weights = {{"A", 0.0}};
  CHECK_THROWS_AS(BatchSampler(two_datasets(20, 20), c), Error);
}
