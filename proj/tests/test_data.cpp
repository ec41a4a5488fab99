#include <doctest.h>

#include <map>
#include <set>

#include "cembed/data.hpp"
#include "cembed/encoder.hpp"
#include "cembed/error.hpp"
#include "cembed/sampler.hpp"

using namespace cembed;

namespace {

Record text_record(std::string query) {
  Record r;
  r.id = "r";
  r.dataset_id = "d";
  r.query_text = std::move(query);
  r.target_text = "a red car";
  r.gold_group = "g";
  return r;
}

std::size_t in_batch_duplicates(const Batch& b) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    for (std::size_t j = 0; j < b.records.size(); ++j) {
      if (i != j && b.records[i].gold_group == b.records[j].gold_group) ++count;
    }
  }
  return count;
}

}  // namespace

TEST_CASE("desk benchmark shape") {
  const GenerationSpec spec = GenerationSpec::desk_default();
  const DatasetManifest m = generate_benchmark(7, spec);
  CHECK(m.datasets.size() >= 6);
  CHECK(m.metadata.seed == 7);
  CHECK(m.metadata.p_fn == 0.05);
  std::set<std::string> kinds;
  for (const auto& [id, recs] : m.datasets) {
    REQUIRE_FALSE(recs.empty());
    for (const auto& r : recs) {
      CHECK(r.dataset_id == id);
      CHECK(r.task_kind == recs.front().task_kind);
      kinds.insert(std::string(to_string(r.task_kind)));
    }
  }
  CHECK(kinds.size() == 7);
  CHECK(m.metadata.label_sets.at("cls_memes").size() == 2);
  CHECK(m.metadata.label_sets.at("cls_voc").size() == 20);
  CHECK(m.metadata.label_sets.at("cls_news").size() == 24);
  m.validate();

  CHECK(generate_benchmark(7, spec) == m);
  CHECK_FALSE(generate_benchmark(8, spec) == m);
}

TEST_CASE("planted false negatives") {
  GenerationSpec spec = GenerationSpec::desk_default();
  spec.p_fn = 0.0;
  const DatasetManifest clean = generate_benchmark(3, spec);
  for (const auto& [id, recs] : clean.datasets) {
    if (recs.front().task_kind == TaskKind::kImgCls) continue;
    std::set<std::string> groups;
    for (const auto& r : recs) CHECK(groups.insert(r.gold_group).second);
  }

  spec.p_fn = 0.2;
  const DatasetManifest noisy = generate_benchmark(3, spec);
  std::size_t shared = 0, total = 0;
  for (const auto& [id, recs] : noisy.datasets) {
    if (recs.front().task_kind == TaskKind::kImgCls) continue;
    std::map<std::string, int> counts;
    for (const auto& r : recs) ++counts[r.gold_group];
    for (const auto& r : recs) {
      ++total;
      if (counts[r.gold_group] > 1) ++shared;
    }
    // A duplicate and its original always land in the same split.
    std::map<std::string, Split> split_of;
    for (const auto& r : recs) {
      auto [it, fresh] = split_of.emplace(r.gold_group, r.split);
      if (!fresh) CHECK(it->second == r.split);
    }
  }
  CHECK(shared > total / 10);
}

TEST_CASE("sibling clips are harder than unrelated clips") {
  const DatasetManifest m = generate_benchmark(11, GenerationSpec::desk_default());
  const auto& clips = m.datasets.at("vid_ret");
  const Featurizer f{64, 0};
  double same = 0.0, cross = 0.0;
  std::size_t n_same = 0, n_cross = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const Vector a = f.featurize(clips[i].query_text).normalized();
    for (std::size_t j = i + 1; j < 200; ++j) {
      const double s = a.dot(f.featurize(clips[j].query_text).normalized());
      if (clips[i].group_id && clips[i].group_id == clips[j].group_id) {
        same += s;
        ++n_same;
      } else {
        cross += s;
        ++n_cross;
      }
    }
  }
  REQUIRE(n_same > 0);
  CHECK(same / static_cast<double>(n_same) > cross / static_cast<double>(n_cross));

  // Siblings differ in exactly one topic word.
  std::map<std::string, int> per_group;
  for (const auto& r : clips) {
    if (r.group_id) ++per_group[*r.group_id];
  }
  CHECK(per_group.size() > 10);
}

TEST_CASE("2 labels, batch 16: duplicates by pigeonhole") {
  const DatasetManifest m = generate_benchmark(5, GenerationSpec::desk_default());
  SamplerConfig c;
  c.batch_size = 16;
  const BatchSampler s(m.filtered({"cls_memes"}), c);
  for (std::size_t k = 0; k < 50; ++k) CHECK(in_batch_duplicates(s.batch_at(k)) >= 1);
}

TEST_CASE("merge classification datasets") {
  const DatasetManifest m = generate_benchmark(5, GenerationSpec::desk_default());
  const DatasetManifest merged = merge_classification_datasets(m);
  CHECK(merged.record_count() == m.record_count());
  CHECK(merged.datasets.count(std::string(kMergedClassificationId)) == 1);
  CHECK(merged.datasets.count("cls_voc") == 0);
  const auto& labels = merged.metadata.label_sets.at(std::string(kMergedClassificationId));
  CHECK(labels.size() == 46);
  CHECK(std::set<std::string>(labels.begin(), labels.end()).size() == 46);
  merged.validate();

  // Only one classification dataset: renamed, otherwise unchanged.
  const DatasetManifest one = merge_classification_datasets(m.filtered({"cls_voc", "img_ret"}));
  CHECK(one.datasets.at(std::string(kMergedClassificationId)).size() == m.datasets.at("cls_voc").size());
  CHECK(one.metadata.label_sets.at(std::string(kMergedClassificationId)).size() == 20);

  CHECK_THROWS_AS(merge_classification_datasets(m.filtered({"img_ret"})), Error);
}

TEST_CASE("merging lowers in-batch duplicates (Monte-Carlo, batch 16)") {
  const DatasetManifest m = generate_benchmark(9, GenerationSpec::desk_default()).filtered({"img_cls"});
  SamplerConfig c;
  c.batch_size = 16;
  c.seed = 1;
  const BatchSampler before(m, c);
  const BatchSampler after(merge_classification_datasets(m), c);
  std::size_t dup_before = 0, dup_after = 0;
  for (std::size_t k = 0; k < 1000; ++k) {
    dup_before += in_batch_duplicates(before.batch_at(k));
    dup_after += in_batch_duplicates(after.batch_at(k));
  }
  CHECK(dup_after < dup_before);
}

TEST_CASE("build_prompt") {
  const PromptTemplate t;
  Record r = text_record("find red car");
  CHECK(build_prompt(r, t, Side::kQuery) ==
        "Given an image, summarize the provided image in one word. Given only text, describe the text in one word. "
        "find red car Represent the given text in one word.");
  r.query_modality = Modality::kImage;
  CHECK(build_prompt(r, t, Side::kQuery) ==
        "Given an image, summarize the provided image in one word. Given only text, describe the text in one word. "
        "find red car Represent the given image in one word.");
  CHECK(build_prompt(r, t, Side::kTarget) == "a red car");
  CHECK(build_prompt(r, PromptTemplate::disabled(), Side::kQuery) == "find red car");
}

TEST_CASE("cap_dataset") {
  std::vector<Record> recs;
  for (int i = 0; i < 150; ++i) {
    Record r = text_record("q");
    r.id = "r" + std::to_string(1000 + i);
    recs.push_back(r);
  }
  const auto capped = cap_dataset(recs, 100, 3);
  CHECK(capped.size() == 100);
  CHECK(capped == cap_dataset(recs, 100, 3));
  CHECK_FALSE(capped == cap_dataset(recs, 100, 4));
  for (std::size_t i = 1; i < capped.size(); ++i) CHECK(capped[i - 1].id < capped[i].id);  // order kept
  CHECK(cap_dataset(std::vector<Record>(recs.begin(), recs.begin() + 50), 100, 3).size() == 50);
}

TEST_CASE("manifest round trip and errors") {
  const DatasetManifest m = generate_benchmark(2, GenerationSpec::desk_default());
  const std::string text = manifest_to_string(m);
  CHECK(manifest_from_string(text) == m);
  CHECK(manifest_to_string(manifest_from_string(text)) == text);

  // Corrupt line 7.
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::size_t end = text.find('\n', start);
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  std::string broken;
  for (std::size_t i = 0; i < lines.size(); ++i) broken += (i == 6 ? std::string("{not json") : lines[i]) + "\n";
  try {
    manifest_from_string(broken);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParseError);
    REQUIRE(e.line().has_value());
    CHECK(*e.line() == 7);
  }

  std::string dup;
  for (std::size_t i = 0; i < 5; ++i) dup += lines[i] + "\n";
  dup += lines[3] + "\n";
  try {
    manifest_from_string(dup);
    FAIL("expected DuplicateId");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDuplicateId);
    CHECK(std::string(e.what()).find(nlohmann::json::parse(lines[3]).at("id").get<std::string>()) != std::string::npos);
  }
}

TEST_CASE("generation spec validation") {
  GenerationSpec spec = GenerationSpec::desk_default();
  spec.p_fn = 1.5;
  CHECK_THROWS_AS(generate_benchmark(1, spec), Error);
  spec = GenerationSpec::desk_default();
  spec.datasets[0].records = 1;
  CHECK_THROWS_AS(generate_benchmark(1, spec), Error);
  spec = GenerationSpec::desk_default();
  const nlohmann::json j = spec;
  CHECK(nlohmann::json(j.get<GenerationSpec>()) == j);
}
