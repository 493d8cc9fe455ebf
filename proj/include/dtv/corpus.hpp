#pragma once

// Corpus data model: the DTVE embedding container, JSON split manifests and
// deterministic split assignment.
//
// DTVE layout (little-endian):
//   "DTVE" | u16 version | u32 count | u32 dim
//   count x ( u16 id length | UTF-8 id | u32 rows | rows*dim f32 )

#include "dtv/checkpoint.hpp"
#include "dtv/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dtv {

inline constexpr char kEmbeddingMagic[4] = {'D', 'T', 'V', 'E'};
inline constexpr std::uint16_t kEmbeddingVersion = 1;

class ContainerError : public FormatError {
 public:
  enum class Kind { bad_magic, bad_version, truncated, dim_mismatch, malformed };
  ContainerError(Kind kind, const std::string& message) : FormatError(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct EmbeddingRecord {
  std::string id;
  EmbeddingMatrix rows;
};

struct EmbeddingContainer {
  Index dim = 0;
  std::vector<EmbeddingRecord> records;
};

std::vector<char> encode_embeddings(const EmbeddingContainer& container);
/// Parses a whole buffer; nothing is returned unless every record is valid.
EmbeddingContainer decode_embeddings(const std::vector<char>& bytes, std::optional<Index> expected_dim = {});

void write_embeddings(const std::filesystem::path& path, const EmbeddingContainer& container);
EmbeddingContainer read_embeddings(const std::filesystem::path& path, std::optional<Index> expected_dim = {});

inline constexpr std::string_view kTrain = "train";
inline constexpr std::string_view kValidation = "validation";
inline constexpr std::string_view kTest = "test";

struct SplitEntry {
  std::string name;
  std::string videos_file;     // relative to the manifest directory
  std::string dialogues_file;  // relative to the manifest directory
  std::vector<std::string> ids;
};

struct CorpusManifest {
  std::string name;
  Index embedding_dim = 0;
  DialogueMode mode = DialogueMode::cumulative_prefix;
  Index frames_per_video = 0;
  Index turns_per_dialogue = 0;
  std::optional<std::uint64_t> generator_seed;
  std::vector<SplitEntry> splits;
  /// Directory the relative file names resolve against. Not serialized.
  std::filesystem::path root;

  const SplitEntry& split(std::string_view name) const;
  /// Throws if split ids overlap.
  void validate() const;
};

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::filesystem::path& path);

/// Videos and their dialogues for one split. Query q's gold video is videos[gold[q]].
struct Split {
  std::string name;
  std::vector<VideoRecord> videos;
  std::vector<DialogueQuery> queries;
  std::vector<Index> gold;

  std::vector<std::string> video_ids() const;
};

/// Gold pairs share an id; throws if an id is missing from either file.
Split make_split(std::string name, std::vector<VideoRecord> videos, std::vector<DialogueQuery> queries);

Split load_split(const CorpusManifest& manifest, std::string_view name);

void write_split(const std::filesystem::path& videos_path, const std::filesystem::path& dialogues_path,
                 const Split& split, Index dim);

struct SplitRatios {
  double train = 0.8, validation = 0.1, test = 0.1;
};
struct SplitCounts {
  std::size_t train = 0, validation = 0, test = 0;
};
struct ExplicitSplit {
  std::vector<std::string> train, validation, test;
};
using SplitPlan = std::variant<SplitRatios, SplitCounts, ExplicitSplit>;

struct SplitAssignment {
  std::vector<std::string> train, validation, test;
};

/// Ratios and counts shuffle the ids with `seed` and cut in order train,
/// validation, test (ratio remainders go to test). Explicit lists are taken
/// as given.
SplitAssignment split_corpus(std::span<const std::string> ids, const SplitPlan& plan, std::uint64_t seed);

}  // namespace dtv
