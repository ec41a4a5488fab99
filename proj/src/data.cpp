#include "cembed/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "cembed/error.hpp"
#include "cembed/io.hpp"
#include "cembed/rng.hpp"

namespace cembed {

namespace {

using nlohmann::json;

constexpr TaskKind kAllKinds[] = {TaskKind::kImgCls, TaskKind::kImgQa,  TaskKind::kImgRet, TaskKind::kImgGround,
                                  TaskKind::kDocRet, TaskKind::kVidRet, TaskKind::kVidQa};

Modality default_modality(TaskKind kind) {
  switch (kind) {
    case TaskKind::kImgCls:
    case TaskKind::kImgQa:
    case TaskKind::kImgGround:
    case TaskKind::kVidQa:
      return Modality::kImage;
    default:
      return Modality::kText;
  }
}

// Fixed instruction-like words per task, shared by every record of a dataset.
std::string_view query_boilerplate(TaskKind kind) {
  switch (kind) {
    case TaskKind::kImgCls: return "classify this image";
    case TaskKind::kImgQa: return "answer the question about this image";
    case TaskKind::kImgRet: return "find an image showing";
    case TaskKind::kImgGround: return "locate the region with";
    case TaskKind::kDocRet: return "find the document page about";
    case TaskKind::kVidRet: return "find the video clip where";
    case TaskKind::kVidQa: return "answer the question about this video";
  }
  return "";
}

std::string_view target_boilerplate(TaskKind kind) {
  switch (kind) {
    case TaskKind::kImgCls: return "";
    case TaskKind::kImgQa: return "the answer is";
    case TaskKind::kImgRet: return "a photo of";
    case TaskKind::kImgGround: return "a cropped region of";
    case TaskKind::kDocRet: return "a page describing";
    case TaskKind::kVidRet: return "a clip showing";
    case TaskKind::kVidQa: return "the answer is";
  }
  return "";
}

// Pronounceable pseudo-words, unique across the whole benchmark.
class WordSource {
 public:
  explicit WordSource(std::uint64_t seed) : rng_(seed) {}

  std::string fresh() {
    static constexpr std::string_view kConsonants = "bcdfghjklmnprstvz";
    static constexpr std::string_view kVowels = "aeiou";
    for (;;) {
      std::string w;
      const std::uint64_t syllables = 2 + rng_.below(2);
      for (std::uint64_t s = 0; s < syllables; ++s) {
        w += kConsonants[rng_.below(kConsonants.size())];
        w += kVowels[rng_.below(kVowels.size())];
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> fresh(std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(fresh());
    return out;
  }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t population, std::size_t k) {
  std::vector<std::size_t> idx(population);
  for (std::size_t i = 0; i < population; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(population - i)]);
  idx.resize(k);
  return idx;
}

std::string join_words(std::string_view head, const std::vector<std::string>& words) {
  std::string out(head);
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> draw_noise(Rng& rng, const std::vector<std::string>& pool, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng.below(pool.size())]);
  return out;
}

std::string record_id(const std::string& dataset, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return dataset + "-" + buf;
}

// One generation unit: a record, or a group of sibling clips.
struct Topic {
  std::vector<std::string> words;
  std::string gold;
};

void generate_dataset(const DatasetSpec& ds, const GenerationSpec& spec, std::uint64_t seed, WordSource& words,
                      const std::vector<std::string>& noise, DatasetManifest& out) {
  Rng rng(seed);
  const std::vector<std::string> pool = words.fresh(ds.concept_pool);
  const Modality modality = ds.query_modality.value_or(default_modality(ds.task_kind));
  const std::string_view qhead = query_boilerplate(ds.task_kind);
  const std::string_view thead = target_boilerplate(ds.task_kind);
  std::vector<Record> records;
  records.reserve(ds.records);
  std::vector<std::size_t> unit_of;  // record -> split unit

  auto make = [&](std::size_t index, const std::vector<std::string>& topic, std::string gold,
                  std::optional<std::string> group) {
    Record r;
    r.id = record_id(ds.id, index);
    r.dataset_id = ds.id;
    r.task_kind = ds.task_kind;
    r.group_id = std::move(group);
    std::vector<std::string> q = topic;
    for (auto& w : draw_noise(rng, noise, ds.query_noise_words)) q.push_back(std::move(w));
    std::vector<std::string> t = topic;
    for (auto& w : draw_noise(rng, noise, ds.target_noise_words)) t.push_back(std::move(w));
    r.query_text = join_words(qhead, q);
    r.target_text = join_words(thead, t);
    r.gold_group = std::move(gold);
    r.query_modality = modality;
    return r;
  };

  std::size_t units = 0;
  if (ds.task_kind == TaskKind::kImgCls) {
    std::vector<std::string> labels;
    std::vector<std::vector<std::string>> label_words;
    for (std::size_t l = 0; l < ds.labels; ++l) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "L%02zu", l);
      labels.emplace_back(buf);
      std::vector<std::string> lw;
      for (std::size_t k : sample_distinct(rng, pool.size(), std::min<std::size_t>(2, pool.size()))) {
        lw.push_back(pool[k]);
      }
      label_words.push_back(std::move(lw));
    }
    for (std::size_t i = 0; i < ds.records; ++i) {
      const std::size_t l = rng.below(ds.labels);
      Record r;
      r.id = record_id(ds.id, i);
      r.dataset_id = ds.id;
      r.task_kind = ds.task_kind;
      std::vector<std::string> q = label_words[l];
      q.push_back(pool[rng.below(pool.size())]);  // incidental content of the image
      for (auto& w : draw_noise(rng, noise, ds.query_noise_words)) q.push_back(std::move(w));
      r.query_text = join_words(qhead, q);
      r.target_text = join_words(thead, label_words[l]);
      r.gold_group = labels[l];
      r.query_modality = modality;
      records.push_back(std::move(r));
      unit_of.push_back(i);
    }
    units = ds.records;
    out.metadata.label_sets[ds.id] = labels;
  } else {
    std::vector<Topic> originals;
    std::vector<std::size_t> original_unit;
    std::vector<std::optional<std::string>> original_group;
    const std::size_t group_size = ds.clip_group_size;
    std::vector<std::string> group_base;
    std::string group_name;
    std::size_t clips_left = 0;
    for (std::size_t i = 0; i < ds.records; ++i) {
      if (!originals.empty() && rng.bernoulli(spec.p_fn)) {
        // Planted false negative: same topic and gold group, fresh surface noise.
        const std::size_t k = rng.below(originals.size());
        records.push_back(make(i, originals[k].words, originals[k].gold, original_group[k]));
        unit_of.push_back(original_unit[k]);
        continue;
      }
      std::vector<std::string> topic;
      std::optional<std::string> group;
      if (group_size > 0) {
        if (clips_left == 0) {
          group_base.clear();
          for (std::size_t k : sample_distinct(rng, pool.size(), ds.topic_words - 1)) group_base.push_back(pool[k]);
          group_name = ds.id + "/v" + std::to_string(units);
          clips_left = group_size;
          ++units;
        }
        --clips_left;
        topic = group_base;
        std::string clip_word;
        do {
          clip_word = pool[rng.below(pool.size())];
        } while (std::find(group_base.begin(), group_base.end(), clip_word) != group_base.end());
        topic.push_back(clip_word);
        group = group_name;
        original_unit.push_back(units - 1);
      } else {
        for (std::size_t k : sample_distinct(rng, pool.size(), ds.topic_words)) topic.push_back(pool[k]);
        original_unit.push_back(units++);
      }
      const std::string gold = record_id(ds.id, i);
      records.push_back(make(i, topic, gold, group));
      unit_of.push_back(original_unit.back());
      originals.push_back({topic, gold});
      original_group.push_back(group);
    }
  }

  // Whole units (records, or clip groups with their duplicates) go to one split.
  const auto n_test = static_cast<std::size_t>(std::ceil(spec.test_fraction * static_cast<double>(units)));
  std::vector<bool> is_test(units, false);
  for (std::size_t u : sample_distinct(rng, units, std::min(n_test, units))) is_test[u] = true;
  for (std::size_t i = 0; i < records.size(); ++i) records[i].split = is_test[unit_of[i]] ? Split::kTest : Split::kTrain;

  out.datasets[ds.id] = std::move(records);
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kImgCls: return "img_cls";
    case TaskKind::kImgQa: return "img_qa";
    case TaskKind::kImgRet: return "img_ret";
    case TaskKind::kImgGround: return "img_ground";
    case TaskKind::kDocRet: return "doc_ret";
    case TaskKind::kVidRet: return "vid_ret";
    case TaskKind::kVidQa: return "vid_qa";
  }
  return "";
}

std::string_view to_string(Modality modality) { return modality == Modality::kText ? "text" : "image"; }
std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

TaskKind parse_task_kind(std::string_view name) {
  for (TaskKind k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kSpecInvalid, "unknown task kind '" + std::string(name) + "'");
}

Modality parse_modality(std::string_view name) {
  if (name == "text") return Modality::kText;
  if (name == "image") return Modality::kImage;
  throw Error(ErrorCode::kSpecInvalid, "unknown modality '" + std::string(name) + "'");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw Error(ErrorCode::kSpecInvalid, "unknown split '" + std::string(name) + "'");
}

std::string_view modality_group(TaskKind kind) {
  switch (kind) {
    case TaskKind::kDocRet: return "visdoc";
    case TaskKind::kVidRet:
    case TaskKind::kVidQa: return "video";
    default: return "image";
  }
}

std::size_t DatasetManifest::record_count() const {
  std::size_t n = 0;
  for (const auto& [id, records] : datasets) n += records.size();
  return n;
}

DatasetManifest DatasetManifest::split_view(Split split) const {
  DatasetManifest out;
  out.metadata = metadata;
  for (const auto& [id, records] : datasets) {
    std::vector<Record> kept;
    for (const Record& r : records) {
      if (r.split == split) kept.push_back(r);
    }
    if (!kept.empty()) out.datasets[id] = std::move(kept);
  }
  return out;
}

DatasetManifest DatasetManifest::filtered(const std::vector<std::string>& keep) const {
  if (keep.empty()) return *this;
  DatasetManifest out;
  out.metadata = metadata;
  for (const auto& [id, records] : datasets) {
    if (records.empty()) continue;
    const std::string kind(to_string(records.front().task_kind));
    if (std::find(keep.begin(), keep.end(), id) != keep.end() ||
        std::find(keep.begin(), keep.end(), kind) != keep.end()) {
      out.datasets[id] = records;
    }
  }
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& [dataset, records] : datasets) {
    for (const Record& r : records) {
      if (r.dataset_id != dataset) throw Error(ErrorCode::kSpecInvalid, "record " + r.id + " filed under " + dataset);
      if (r.task_kind != records.front().task_kind) {
        throw Error(ErrorCode::kSpecInvalid, "dataset " + dataset + " mixes task kinds");
      }
      if (!ids.insert(r.id).second) throw Error(ErrorCode::kDuplicateId, "duplicate record id '" + r.id + "'");
    }
    if (!records.empty() && records.front().task_kind == TaskKind::kImgCls && !metadata.label_sets.contains(dataset)) {
      throw Error(ErrorCode::kSpecInvalid, "classification dataset " + dataset + " declares no label set");
    }
  }
}

GenerationSpec GenerationSpec::desk_default() {
  GenerationSpec spec;
  auto add = [&](std::string id, TaskKind kind, std::size_t n) -> DatasetSpec& {
    DatasetSpec d;
    d.id = std::move(id);
    d.task_kind = kind;
    d.records = n;
    spec.datasets.push_back(d);
    return spec.datasets.back();
  };
  add("cls_memes", TaskKind::kImgCls, 400).labels = 2;
  add("cls_voc", TaskKind::kImgCls, 400).labels = 20;
  add("cls_news", TaskKind::kImgCls, 400).labels = 24;
  add("img_qa", TaskKind::kImgQa, 400);
  add("img_ret", TaskKind::kImgRet, 400);
  add("img_ground", TaskKind::kImgGround, 400);
  add("doc_ret", TaskKind::kDocRet, 400);
  add("vid_ret", TaskKind::kVidRet, 800).clip_group_size = 4;
  add("vid_qa", TaskKind::kVidQa, 800);
  return spec;
}

void GenerationSpec::validate() const {
  if (!(p_fn >= 0.0 && p_fn <= 1.0)) throw Error(ErrorCode::kSpecInvalid, "p_fn must lie in [0, 1]");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kSpecInvalid, "test_fraction must lie in [0, 1)");
  }
  if (noise_pool < 1) throw Error(ErrorCode::kSpecInvalid, "noise_pool must be >= 1");
  if (datasets.empty()) throw Error(ErrorCode::kSpecInvalid, "no datasets requested");
  std::set<std::string> ids;
  for (const DatasetSpec& d : datasets) {
    if (d.id.empty() || !ids.insert(d.id).second) throw Error(ErrorCode::kSpecInvalid, "dataset ids must be unique");
    if (d.records < 2) throw Error(ErrorCode::kSpecInvalid, d.id + ": need at least 2 records");
    if (d.task_kind == TaskKind::kImgCls) {
      if (d.labels < 2) throw Error(ErrorCode::kSpecInvalid, d.id + ": classification needs >= 2 labels");
      if (d.concept_pool < 2 * d.labels) throw Error(ErrorCode::kSpecInvalid, d.id + ": concept pool too small");
    } else {
      if (d.topic_words < 1 || d.concept_pool < d.topic_words) {
        throw Error(ErrorCode::kSpecInvalid, d.id + ": concept pool smaller than a topic");
      }
      if (d.clip_group_size > 0 && d.topic_words < 2) {
        throw Error(ErrorCode::kSpecInvalid, d.id + ": sibling clips need topic_words >= 2");
      }
    }
  }
}

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"id", s.id},
           {"task_kind", to_string(s.task_kind)},
           {"records", s.records},
           {"labels", s.labels},
           {"clip_group_size", s.clip_group_size},
           {"concept_pool", s.concept_pool},
           {"topic_words", s.topic_words},
           {"query_noise_words", s.query_noise_words},
           {"target_noise_words", s.target_noise_words}};
  if (s.query_modality) j["query_modality"] = to_string(*s.query_modality);
}

void from_json(const json& j, DatasetSpec& s) {
  DatasetSpec d;
  s = d;
  s.id = j.at("id").get<std::string>();
  s.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
  s.records = j.value("records", d.records);
  s.labels = j.value("labels", d.labels);
  s.clip_group_size = j.value("clip_group_size", d.clip_group_size);
  s.concept_pool = j.value("concept_pool", d.concept_pool);
  s.topic_words = j.value("topic_words", d.topic_words);
  s.query_noise_words = j.value("query_noise_words", d.query_noise_words);
  s.target_noise_words = j.value("target_noise_words", d.target_noise_words);
  if (j.contains("query_modality")) s.query_modality = parse_modality(j.at("query_modality").get<std::string>());
}

void to_json(json& j, const GenerationSpec& s) {
  j = json{{"seed", s.seed},
           {"p_fn", s.p_fn},
           {"test_fraction", s.test_fraction},
           {"noise_pool", s.noise_pool},
           {"datasets", s.datasets}};
}

void from_json(const json& j, GenerationSpec& s) {
  const GenerationSpec d = GenerationSpec::desk_default();
  s.seed = j.value("seed", d.seed);
  s.p_fn = j.value("p_fn", d.p_fn);
  s.test_fraction = j.value("test_fraction", d.test_fraction);
  s.noise_pool = j.value("noise_pool", d.noise_pool);
  s.datasets = j.contains("datasets") ? j.at("datasets").get<std::vector<DatasetSpec>>() : d.datasets;
}

void to_json(json& j, const Record& r) {
  j = json{{"id", r.id},
           {"dataset_id", r.dataset_id},
           {"task_kind", to_string(r.task_kind)},
           {"group_id", r.group_id ? json(*r.group_id) : json(nullptr)},
           {"query_text", r.query_text},
           {"target_text", r.target_text},
           {"gold_group", r.gold_group},
           {"query_modality", to_string(r.query_modality)},
           {"split", to_string(r.split)}};
}

void from_json(const json& j, Record& r) {
  r.id = j.at("id").get<std::string>();
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
  const json& g = j.at("group_id");
  r.group_id = g.is_null() ? std::nullopt : std::optional<std::string>(g.get<std::string>());
  r.query_text = j.at("query_text").get<std::string>();
  r.target_text = j.at("target_text").get<std::string>();
  r.gold_group = j.at("gold_group").get<std::string>();
  r.query_modality = parse_modality(j.value("query_modality", std::string("text")));
  r.split = parse_split(j.value("split", std::string("train")));
  if (r.id.empty() || r.query_text.empty() || r.target_text.empty()) {
    throw Error(ErrorCode::kSpecInvalid, "record fields must be nonempty");
  }
}

DatasetManifest generate_benchmark(std::uint64_t seed, const GenerationSpec& spec) {
  spec.validate();
  DatasetManifest out;
  out.metadata.seed = seed;
  out.metadata.p_fn = spec.p_fn;
  WordSource words(derive_seed(seed, 0x776f726473ULL));  // "words"

  std::map<std::string, std::vector<std::string>> noise;
  for (std::string_view group : {"image", "video", "visdoc"}) noise[std::string(group)] = words.fresh(spec.noise_pool);

  for (std::size_t i = 0; i < spec.datasets.size(); ++i) {
    const DatasetSpec& ds = spec.datasets[i];
    generate_dataset(ds, spec, derive_seed(seed, 0x64617461ULL, i), words,
                     noise.at(std::string(modality_group(ds.task_kind))), out);
  }
  out.validate();
  return out;
}

DatasetManifest merge_classification_datasets(const DatasetManifest& manifest) {
  DatasetManifest out;
  out.metadata = manifest.metadata;
  std::vector<Record> merged;
  std::vector<std::string> merged_labels;
  for (const auto& [id, records] : manifest.datasets) {
    if (records.empty() || records.front().task_kind != TaskKind::kImgCls) {
      out.datasets[id] = records;
      continue;
    }
    out.metadata.label_sets.erase(id);
    if (const auto it = manifest.metadata.label_sets.find(id); it != manifest.metadata.label_sets.end()) {
      for (const auto& label : it->second) merged_labels.push_back(id + "/" + label);
    }
    for (Record r : records) {
      r.dataset_id = std::string(kMergedClassificationId);
      r.gold_group = id + "/" + r.gold_group;
      merged.push_back(std::move(r));
    }
  }
  if (merged.empty()) throw Error(ErrorCode::kNoClassificationData, "manifest has no img_cls dataset");
  out.datasets[std::string(kMergedClassificationId)] = std::move(merged);
  out.metadata.label_sets[std::string(kMergedClassificationId)] = std::move(merged_labels);
  return out;
}

std::string build_prompt(const Record& record, const PromptTemplate& prompt, Side side) {
  if (side == Side::kTarget) return record.target_text;
  const std::string& repr =
      record.query_modality == Modality::kText ? prompt.text_repr_prompt : prompt.multimodal_repr_prompt;
  std::string out;
  for (const std::string* part : {&prompt.system_prompt, &record.query_text, &repr}) {
    if (part->empty()) continue;
    if (!out.empty()) out += ' ';
    out += *part;
  }
  return out;
}

std::vector<Record> cap_dataset(const std::vector<Record>& records, std::size_t cap, std::uint64_t seed) {
  if (cap < 1) throw Error(ErrorCode::kSpecInvalid, "cap must be >= 1");
  if (records.size() <= cap) return records;
  Rng rng(seed);
  std::vector<std::size_t> keep = sample_distinct(rng, records.size(), cap);
  std::sort(keep.begin(), keep.end());
  std::vector<Record> out;
  out.reserve(cap);
  for (std::size_t i : keep) out.push_back(records[i]);
  return out;
}

std::string manifest_to_string(const DatasetManifest& manifest) {
  std::string out;
  json header = {{"manifest",
                  {{"seed", manifest.metadata.seed},
                   {"p_fn", manifest.metadata.p_fn},
                   {"label_sets", manifest.metadata.label_sets}}}};
  out += header.dump();
  out += '\n';
  for (const auto& [id, records] : manifest.datasets) {
    for (const Record& r : records) {
      out += json(r).dump();
      out += '\n';
    }
  }
  return out;
}

DatasetManifest manifest_from_string(std::string_view text) {
  DatasetManifest out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error::at_line(ErrorCode::kParseError, line_no, e.what());
    }
    try {
      if (j.is_object() && j.contains("manifest")) {
        const json& m = j.at("manifest");
        out.metadata.seed = m.value("seed", std::uint64_t{0});
        out.metadata.p_fn = m.value("p_fn", 0.0);
        out.metadata.label_sets =
            m.value("label_sets", std::map<std::string, std::vector<std::string>>{});
        continue;
      }
      Record r = j.get<Record>();
      if (!ids.insert(r.id).second) {
        throw Error::at_line(ErrorCode::kDuplicateId, line_no, "duplicate record id '" + r.id + "'");
      }
      auto& bucket = out.datasets[r.dataset_id];
      if (!bucket.empty() && bucket.front().task_kind != r.task_kind) {
        throw Error::at_line(ErrorCode::kParseError, line_no, "task kind changes within dataset " + r.dataset_id);
      }
      bucket.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error::at_line(ErrorCode::kParseError, line_no, e.what());
    } catch (const Error& e) {
      if (e.line()) throw;
      throw Error::at_line(ErrorCode::kParseError, line_no, e.what());
    }
  }
  return out;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_string(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& path) { return manifest_from_string(read_file(path)); }

}  // namespace cembed
