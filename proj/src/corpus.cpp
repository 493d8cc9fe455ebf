#include "dtv/corpus.hpp"

#include "dtv/binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <unordered_map>
#include <unordered_set>

namespace dtv {

namespace {

struct TruncatedRead : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Reader = io::Reader<TruncatedRead>;

struct TruncationGuard {
  template <typename F>
  auto operator()(F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const TruncatedRead& e) {
      throw ContainerError(ContainerError::Kind::truncated, e.what());
    }
  }
};

}  // namespace

std::vector<char> encode_embeddings(const EmbeddingContainer& container) {
  std::vector<char> out;
  io::Writer w(out);
  w.bytes(kEmbeddingMagic, 4);
  w.put<std::uint16_t>(kEmbeddingVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(container.records.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(container.dim));
  for (const auto& rec : container.records) {
    if (rec.rows.cols() != container.dim) {
      throw ContainerError(ContainerError::Kind::dim_mismatch,
                           "record " + rec.id + " has width " + std::to_string(rec.rows.cols()) +
                               ", container dim is " + std::to_string(container.dim));
    }
    if (rec.id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ContainerError(ContainerError::Kind::malformed, "id longer than 65535 bytes");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(rec.id.size()));
    w.bytes(rec.id.data(), rec.id.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(rec.rows.rows()));
    w.bytes(rec.rows.data(), static_cast<std::size_t>(rec.rows.size()) * sizeof(float));
  }
  return out;
}

EmbeddingContainer decode_embeddings(const std::vector<char>& bytes, std::optional<Index> expected_dim) {
  Reader r(bytes.data(), bytes.size(), "embedding container");
  return TruncationGuard{}([&] {
    char magic[4];
    r.take(magic, 4);
    if (std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
      throw ContainerError(ContainerError::Kind::bad_magic, "embedding container: bad magic (expected DTVE)");
    }
    const auto version = r.get<std::uint16_t>();
    if (version != kEmbeddingVersion) {
      throw ContainerError(ContainerError::Kind::bad_version,
                           "embedding container: unsupported version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    if (expected_dim && static_cast<Index>(dim) != *expected_dim) {
      throw ContainerError(ContainerError::Kind::dim_mismatch,
                           "embedding container: dim " + std::to_string(dim) + " but manifest says " +
                               std::to_string(*expected_dim));
    }
    EmbeddingContainer out;
    out.dim = dim;
    out.records.reserve(std::min<std::size_t>(count, bytes.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
      EmbeddingRecord rec;
      rec.id = r.string(r.get<std::uint16_t>());
      const auto rows = r.get<std::uint32_t>();
      const std::size_t floats = static_cast<std::size_t>(rows) * dim;
      if (floats * sizeof(float) > r.remaining()) {
        throw ContainerError(ContainerError::Kind::truncated,
                             "embedding container: record " + rec.id + " truncated");
      }
      rec.rows.resize(rows, dim);
      r.take(rec.rows.data(), floats * sizeof(float));
      out.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) {
      throw ContainerError(ContainerError::Kind::malformed, "embedding container: trailing bytes");
    }
    return out;
  });
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingContainer& container) {
  io::write_file_atomic(path.string(), encode_embeddings(container));
}

EmbeddingContainer read_embeddings(const std::filesystem::path& path, std::optional<Index> expected_dim) {
  return decode_embeddings(io::read_file(path.string()), expected_dim);
}

const SplitEntry& CorpusManifest::split(std::string_view name) const {
  for (const auto& s : splits) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("manifest " + this->name + " has no split '" + std::string(name) + "'");
}

void CorpusManifest::validate() const {
  std::unordered_map<std::string, std::string> owner;
  for (const auto& s : splits) {
    for (const auto& id : s.ids) {
      auto [it, inserted] = owner.emplace(id, s.name);
      if (!inserted) {
        throw std::invalid_argument("id " + id + " appears in both " + it->second + " and " + s.name);
      }
    }
  }
}

void save_manifest(const std::filesystem::path& path, const CorpusManifest& m) {
  m.validate();
  nlohmann::json j;
  j["name"] = m.name;
  j["embedding_dim"] = m.embedding_dim;
  j["dialogue_mode"] = to_string(m.mode);
  j["frames_per_video"] = m.frames_per_video;
  j["turns_per_dialogue"] = m.turns_per_dialogue;
  if (m.generator_seed) j["generator_seed"] = *m.generator_seed;
  auto& splits = j["splits"] = nlohmann::json::object();
  for (const auto& s : m.splits) {
    splits[s.name] = {{"count", s.ids.size()},
                      {"videos", s.videos_file},
                      {"dialogues", s.dialogues_file},
                      {"ids", s.ids}};
  }
  const std::string text = j.dump(2) + "\n";
  io::write_file_atomic(path.string(), std::vector<char>(text.begin(), text.end()));
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  CorpusManifest m;
  m.name = j.at("name").get<std::string>();
  m.embedding_dim = j.at("embedding_dim").get<Index>();
  m.mode = parse_dialogue_mode(j.at("dialogue_mode").get<std::string>());
  m.frames_per_video = j.value("frames_per_video", Index{0});
  m.turns_per_dialogue = j.value("turns_per_dialogue", Index{0});
  if (j.contains("generator_seed")) m.generator_seed = j["generator_seed"].get<std::uint64_t>();
  for (const auto& [name, s] : j.at("splits").items()) {
    SplitEntry e;
    e.name = name;
    e.videos_file = s.at("videos").get<std::string>();
    e.dialogues_file = s.at("dialogues").get<std::string>();
    e.ids = s.at("ids").get<std::vector<std::string>>();
    m.splits.push_back(std::move(e));
  }
  m.root = path.parent_path();
  m.validate();
  return m;
}

std::vector<std::string> Split::video_ids() const {
  std::vector<std::string> ids;
  ids.reserve(videos.size());
  for (const auto& v : videos) ids.push_back(v.video_id);
  return ids;
}

Split make_split(std::string name, std::vector<VideoRecord> videos, std::vector<DialogueQuery> queries) {
  std::unordered_map<std::string, Index> by_id;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (!by_id.emplace(videos[i].video_id, static_cast<Index>(i)).second) {
      throw std::invalid_argument("split " + name + ": duplicate video id " + videos[i].video_id);
    }
  }
  Split split;
  split.name = std::move(name);
  split.gold.reserve(queries.size());
  for (const auto& q : queries) {
    auto it = by_id.find(q.query_id);
    if (it == by_id.end()) {
      throw std::invalid_argument("split " + split.name + ": query " + q.query_id + " has no gold video");
    }
    split.gold.push_back(it->second);
  }
  split.videos = std::move(videos);
  split.queries = std::move(queries);
  return split;
}

Split load_split(const CorpusManifest& manifest, std::string_view name) {
  const SplitEntry& entry = manifest.split(name);
  const auto videos = read_embeddings(manifest.root / entry.videos_file, manifest.embedding_dim);
  const auto dialogues = read_embeddings(manifest.root / entry.dialogues_file, manifest.embedding_dim);

  std::unordered_map<std::string, const EmbeddingRecord*> video_by_id, dialogue_by_id;
  for (const auto& rec : videos.records) video_by_id[rec.id] = &rec;
  for (const auto& rec : dialogues.records) dialogue_by_id[rec.id] = &rec;

  std::vector<VideoRecord> vs;
  std::vector<DialogueQuery> qs;
  vs.reserve(entry.ids.size());
  qs.reserve(entry.ids.size());
  for (const auto& id : entry.ids) {
    auto v = video_by_id.find(id);
    auto d = dialogue_by_id.find(id);
    if (v == video_by_id.end() || d == dialogue_by_id.end()) {
      throw std::invalid_argument("split " + entry.name + ": id " + id + " missing from " +
                                  (v == video_by_id.end() ? entry.videos_file : entry.dialogues_file));
    }
    vs.push_back(VideoRecord{id, v->second->rows});
    qs.push_back(DialogueQuery{id, d->second->rows, manifest.mode});
  }
  return make_split(entry.name, std::move(vs), std::move(qs));
}

void write_split(const std::filesystem::path& videos_path, const std::filesystem::path& dialogues_path,
                 const Split& split, Index dim) {
  EmbeddingContainer videos{dim, {}};
  for (const auto& v : split.videos) videos.records.push_back({v.video_id, v.frames});
  EmbeddingContainer dialogues{dim, {}};
  for (const auto& q : split.queries) dialogues.records.push_back({q.query_id, q.turns});
  write_embeddings(videos_path, videos);
  write_embeddings(dialogues_path, dialogues);
}

SplitAssignment split_corpus(std::span<const std::string> ids, const SplitPlan& plan, std::uint64_t seed) {
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) throw std::invalid_argument("split_corpus: duplicate id " + id);
    }
  }
  SplitAssignment out;
  if (const auto* explicit_lists = std::get_if<ExplicitSplit>(&plan)) {
    const std::unordered_set<std::string> known(ids.begin(), ids.end());
    std::unordered_map<std::string, std::string_view> owner;
    auto claim = [&](const std::vector<std::string>& list, std::string_view name) {
      for (const auto& id : list) {
        if (!known.count(id)) throw std::invalid_argument("split_corpus: unknown id " + id);
        auto [it, inserted] = owner.emplace(id, name);
        if (!inserted) {
          throw std::invalid_argument("split_corpus: id " + id + " listed in both " + std::string(it->second) +
                                      " and " + std::string(name));
        }
      }
    };
    claim(explicit_lists->train, kTrain);
    claim(explicit_lists->validation, kValidation);
    claim(explicit_lists->test, kTest);
    out.train = explicit_lists->train;
    out.validation = explicit_lists->validation;
    out.test = explicit_lists->test;
    return out;
  }

  std::vector<std::string> shuffled(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const std::size_t n = shuffled.size();

  std::size_t n_train = 0, n_val = 0, n_test = 0;
  if (const auto* counts = std::get_if<SplitCounts>(&plan)) {
    if (counts->train + counts->validation + counts->test > n) {
      throw std::invalid_argument("split_corpus: counts exceed the " + std::to_string(n) + " available ids");
    }
    n_train = counts->train;
    n_val = counts->validation;
    n_test = counts->test;
  } else {
    const auto& r = std::get<SplitRatios>(plan);
    const double total = r.train + r.validation + r.test;
    if (r.train < 0 || r.validation < 0 || r.test < 0 || total <= 0 || total > 1.0 + 1e-9) {
      throw std::invalid_argument("split_corpus: ratios must be non-negative and sum to at most 1");
    }
    auto cut = [n](double ratio) { return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)); };
    n_train = cut(r.train);
    n_val = cut(r.validation);
    n_test = std::abs(total - 1.0) < 1e-9 ? n - n_train - n_val : cut(r.test);
  }
  auto first = shuffled.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  first += static_cast<std::ptrdiff_t>(n_train);
  out.validation.assign(first, first + static_cast<std::ptrdiff_t>(n_val));
  first += static_cast<std::ptrdiff_t>(n_val);
  out.test.assign(first, first + static_cast<std::ptrdiff_t>(n_test));
  return out;
}

}  // namespace dtv
