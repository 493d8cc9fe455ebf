#pragma once

// Interactive retrieval: a precomputed video index, pluggable turn-embedding
// providers and a session engine that re-ranks the whole index after every
// dialogue turn.

#include "dtv/checkpoint.hpp"
#include "dtv/metrics.hpp"
#include "dtv/model.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dtv {

// Service errors; the HTTP layer maps them to 404 / 400 / 409 / 503.
struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadRequestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TurnLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProviderUnavailableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Index dim() const = 0;
  /// One embedding per text, in order.
  virtual std::vector<Vector<float>> embed(const std::vector<std::string>& texts) = 0;
};

/// Deterministic stand-in for a text encoder: each text seeds a Gaussian
/// vector, L2-normalized.
class HashingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashingEmbeddingProvider(Index dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  Index dim() const override { return dim_; }
  std::vector<Vector<float>> embed(const std::vector<std::string>& texts) override;

 private:
  Index dim_;
  std::uint64_t seed_;
};

/// Client for an external embedding server: POST {base}/embed {texts:[...]}
/// -> {embeddings:[[...]]}.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string base_url, Index dim);
  Index dim() const override { return dim_; }
  std::vector<Vector<float>> embed(const std::vector<std::string>& texts) override;

 private:
  std::string base_url_;
  Index dim_;
};

// Index container (little-endian):
//   "DTVI" | u16 version | u64 checkpoint fingerprint | u32 count | u32 dim
//   count x ( u16 id length | id | u32 rows | rows*dim f64 )
inline constexpr char kIndexMagic[4] = {'D', 'T', 'V', 'I'};
inline constexpr std::uint16_t kIndexVersion = 1;

struct VideoIndex {
  std::uint64_t checkpoint_fingerprint = 0;
  Index dim = 0;
  std::vector<std::string> ids;
  std::vector<Matrix> temporal_frames;  // encode_frames output per video
};

VideoIndex build_index(const ModelParams& params, std::span<const VideoRecord> videos);
std::vector<char> encode_index(const VideoIndex& index);
VideoIndex decode_index(const std::vector<char>& bytes);
void write_index(const std::filesystem::path& path, const VideoIndex& index);
VideoIndex read_index(const std::filesystem::path& path);

struct Session {
  std::string session_id;
  DialogueMode mode = DialogueMode::cumulative_prefix;
  std::vector<Vector<float>> turns;  // one row per turn, as the model consumes them
  std::vector<std::string> texts;    // raw text per turn; empty for embedding turns
  Vector<double> query;              // D^h over all turns so far
  std::chrono::system_clock::time_point created;
};

struct AttentionResult {
  std::string video_id;
  Vector<double> weights;
  double score = 0.0;
};

struct EngineOptions {
  Index max_turns = 10;
};

/// Thread-safe. The model and index are read-only; each session is guarded
/// by its own mutex so distinct sessions proceed concurrently.
class RetrievalEngine {
 public:
  /// Throws std::invalid_argument when the index was built from other weights.
  RetrievalEngine(ModelParams params, VideoIndex index, std::shared_ptr<EmbeddingProvider> provider = nullptr,
                  EngineOptions options = {});

  std::string create_session();
  /// Appends a turn row; returns the 1-based turn index.
  Index add_turn_embedding(const std::string& session_id, const Vector<float>& embedding);
  /// Embeds the turn text (or, in cumulative-prefix mode, the whole dialogue
  /// so far) through the provider.
  Index add_turn_text(const std::string& session_id, const std::string& text);
  /// Top k of the index (k <= 0: every video).
  RankingResult ranking(const std::string& session_id, Index k = 10) const;
  AttentionResult attention(const std::string& session_id, const std::string& video_id) const;
  void delete_session(const std::string& session_id);

  Index turn_count(const std::string& session_id) const;
  std::size_t session_count() const;

  nlohmann::json snapshot() const;
  void restore(const nlohmann::json& snapshot);
  void save_sessions(const std::filesystem::path& path) const;
  void load_sessions(const std::filesystem::path& path);

  const VideoIndex& index() const { return index_; }
  const ModelParams& params() const { return params_; }
  const EngineOptions& options() const { return options_; }

 private:
  struct Slot {
    mutable std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Slot> find(const std::string& session_id) const;
  Index append_turn(Slot& slot, Vector<float> row, std::string text);
  void recompute_query(Session& session) const;

  ModelParams params_;
  VideoIndex index_;
  std::vector<ag::Tensor> temporal_;
  std::unordered_map<std::string, Index> position_;
  std::shared_ptr<EmbeddingProvider> provider_;
  EngineOptions options_;

  mutable std::mutex sessions_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t next_session_ = 1;
};

}  // namespace dtv
