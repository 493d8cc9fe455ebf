#include "dtv/service.hpp"

#include "dtv/binary_io.hpp"

#include <httplib.h>

#include <fstream>
#include <random>

namespace dtv {

std::vector<Vector<float>> HashingEmbeddingProvider::embed(const std::vector<std::string>& texts) {
  std::vector<Vector<float>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::mt19937_64 rng(fnv1a64(text.data(), text.size()) ^ seed_);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector<double> v(dim_);
    for (Index i = 0; i < dim_; ++i) v(i) = normal(rng);
    v.normalize();
    out.push_back(v.cast<float>());
  }
  return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, Index dim)
    : base_url_(std::move(base_url)), dim_(dim) {}

std::vector<Vector<float>> HttpEmbeddingProvider::embed(const std::vector<std::string>& texts) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  const nlohmann::json body = {{"texts", texts}};
  auto response = client.Post("/embed", body.dump(), "application/json");
  if (!response) {
    throw ProviderUnavailableError("embedding provider " + base_url_ + " unreachable: " +
                                   httplib::to_string(response.error()));
  }
  if (response->status != 200) {
    throw ProviderUnavailableError("embedding provider returned HTTP " + std::to_string(response->status));
  }
  std::vector<Vector<float>> out;
  try {
    const auto reply = nlohmann::json::parse(response->body);
    for (const auto& row : reply.at("embeddings")) {
      const auto values = row.get<std::vector<float>>();
      if (static_cast<Index>(values.size()) != dim_) {
        throw ProviderUnavailableError("embedding provider returned width " + std::to_string(values.size()) +
                                       ", expected " + std::to_string(dim_));
      }
      out.push_back(Eigen::Map<const Vector<float>>(values.data(), dim_));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProviderUnavailableError(std::string("embedding provider sent malformed JSON: ") + e.what());
  }
  if (out.size() != texts.size()) throw ProviderUnavailableError("embedding provider returned the wrong count");
  return out;
}

VideoIndex build_index(const ModelParams& params, std::span<const VideoRecord> videos) {
  ag::NoGradGuard no_grad;
  VideoIndex index;
  index.checkpoint_fingerprint = checkpoint_fingerprint(params);
  index.dim = params.config().dim;
  for (const auto& v : videos) {
    index.ids.push_back(v.video_id);
    index.temporal_frames.push_back(encode_frames(v, params).value());
  }
  return index;
}

std::vector<char> encode_index(const VideoIndex& index) {
  std::vector<char> out;
  io::Writer w(out);
  w.bytes(kIndexMagic, 4);
  w.put<std::uint16_t>(kIndexVersion);
  w.put<std::uint64_t>(index.checkpoint_fingerprint);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.ids.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.dim));
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    const Matrix& frames = index.temporal_frames[i];
    w.put<std::uint16_t>(static_cast<std::uint16_t>(index.ids[i].size()));
    w.bytes(index.ids[i].data(), index.ids[i].size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(frames.rows()));
    w.bytes(frames.data(), static_cast<std::size_t>(frames.size()) * sizeof(double));
  }
  return out;
}

VideoIndex decode_index(const std::vector<char>& bytes) {
  io::Reader<FormatError> r(bytes.data(), bytes.size(), "index");
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, kIndexMagic, 4) != 0) throw FormatError("index: bad magic (expected DTVI)");
  const auto version = r.get<std::uint16_t>();
  if (version != kIndexVersion) throw FormatError("index: unsupported version " + std::to_string(version));
  VideoIndex index;
  index.checkpoint_fingerprint = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  index.dim = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    index.ids.push_back(r.string(r.get<std::uint16_t>()));
    const auto rows = r.get<std::uint32_t>();
    Matrix frames(rows, index.dim);
    r.take(frames.data(), static_cast<std::size_t>(frames.size()) * sizeof(double));
    index.temporal_frames.push_back(std::move(frames));
  }
  if (r.remaining() != 0) throw FormatError("index: trailing bytes");
  return index;
}

void write_index(const std::filesystem::path& path, const VideoIndex& index) {
  io::write_file_atomic(path.string(), encode_index(index));
}

VideoIndex read_index(const std::filesystem::path& path) { return decode_index(io::read_file(path.string())); }

RetrievalEngine::RetrievalEngine(ModelParams params, VideoIndex index, std::shared_ptr<EmbeddingProvider> provider,
                                 EngineOptions options)
    : params_(std::move(params)), index_(std::move(index)), provider_(std::move(provider)), options_(options) {
  if (index_.checkpoint_fingerprint != checkpoint_fingerprint(params_)) {
    throw std::invalid_argument("index was built from a different checkpoint; rebuild it");
  }
  if (index_.ids.empty()) throw std::invalid_argument("index is empty");
  if (provider_ && provider_->dim() != params_.config().dim) {
    throw std::invalid_argument("embedding provider width does not match the model");
  }
  for (std::size_t i = 0; i < index_.ids.size(); ++i) {
    temporal_.push_back(ag::Tensor::constant(index_.temporal_frames[i]));
    position_[index_.ids[i]] = static_cast<Index>(i);
  }
}

std::shared_ptr<RetrievalEngine::Slot> RetrievalEngine::find(const std::string& session_id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return it->second;
}

std::string RetrievalEngine::create_session() {
  static thread_local std::mt19937_64 rng(std::random_device{}());
  auto slot = std::make_shared<Slot>();
  slot->session.mode = params_.config().mode;
  slot->session.created = std::chrono::system_clock::now();
  std::lock_guard lock(sessions_mutex_);
  char suffix[17];
  std::snprintf(suffix, sizeof suffix, "%016llx", static_cast<unsigned long long>(rng()));
  slot->session.session_id = "s" + std::to_string(next_session_++) + "-" + std::string(suffix, 8);
  sessions_[slot->session.session_id] = slot;
  return slot->session.session_id;
}

void RetrievalEngine::recompute_query(Session& session) const {
  ag::NoGradGuard no_grad;
  DialogueQuery query;
  query.query_id = session.session_id;
  query.mode = session.mode;
  query.turns.resize(static_cast<Index>(session.turns.size()), params_.config().dim);
  for (std::size_t i = 0; i < session.turns.size(); ++i) query.turns.row(static_cast<Index>(i)) = session.turns[i].transpose();
  session.query = encode_query(query, params_).value().row(0).transpose();
}

Index RetrievalEngine::append_turn(Slot& slot, Vector<float> row, std::string text) {
  Session& s = slot.session;
  if (static_cast<Index>(s.turns.size()) >= options_.max_turns) {
    throw TurnLimitError("session " + s.session_id + " already has the maximum of " +
                         std::to_string(options_.max_turns) + " turns");
  }
  if (row.size() != params_.config().dim) {
    throw BadRequestError("turn embedding has width " + std::to_string(row.size()) + ", expected " +
                          std::to_string(params_.config().dim));
  }
  if (!row.allFinite()) throw BadRequestError("turn embedding contains non-finite values");
  s.turns.push_back(std::move(row));
  s.texts.push_back(std::move(text));
  try {
    recompute_query(s);
  } catch (...) {
    s.turns.pop_back();
    s.texts.pop_back();
    throw;
  }
  return static_cast<Index>(s.turns.size());
}

Index RetrievalEngine::add_turn_embedding(const std::string& session_id, const Vector<float>& embedding) {
  auto slot = find(session_id);
  std::lock_guard lock(slot->mutex);
  return append_turn(*slot, embedding, {});
}

Index RetrievalEngine::add_turn_text(const std::string& session_id, const std::string& text) {
  if (text.empty()) throw BadRequestError("turn text is empty");
  auto slot = find(session_id);
  if (!provider_) throw ProviderUnavailableError("no embedding provider configured for text turns");
  std::lock_guard lock(slot->mutex);
  const Session& s = slot->session;
  if (static_cast<Index>(s.turns.size()) >= options_.max_turns) {
    throw TurnLimitError("session " + s.session_id + " already has the maximum of " +
                         std::to_string(options_.max_turns) + " turns");
  }
  std::string input = text;
  if (s.mode == DialogueMode::cumulative_prefix) {
    input.clear();
    for (const auto& previous : s.texts) {
      if (previous.empty()) {
        throw BadRequestError("cannot extend a prefix dialogue whose earlier turns were posted as embeddings");
      }
      input += previous + "\n";
    }
    input += text;
  }
  auto rows = provider_->embed({input});
  if (rows.size() != 1) throw ProviderUnavailableError("embedding provider returned no embedding");
  return append_turn(*slot, std::move(rows.front()), text);
}

RankingResult RetrievalEngine::ranking(const std::string& session_id, Index k) const {
  auto slot = find(session_id);
  Vector<double> query;
  {
    std::lock_guard lock(slot->mutex);
    if (slot->session.turns.empty()) throw BadRequestError("at least one turn required before ranking");
    query = slot->session.query;
  }
  ag::NoGradGuard no_grad;
  const Matrix scores = score_matrix(ag::Tensor::constant(query.transpose()), temporal_, params_).value();
  RankingResult result = rank_videos(scores.row(0), index_.ids, session_id);
  if (k > 0 && static_cast<std::size_t>(k) < result.ranked.size()) result.ranked.resize(static_cast<std::size_t>(k));
  return result;
}

AttentionResult RetrievalEngine::attention(const std::string& session_id, const std::string& video_id) const {
  auto slot = find(session_id);
  Vector<double> query;
  {
    std::lock_guard lock(slot->mutex);
    if (slot->session.turns.empty()) throw BadRequestError("at least one turn required before attention");
    query = slot->session.query;
  }
  auto it = position_.find(video_id);
  if (it == position_.end()) throw NotFoundError("unknown video " + video_id);
  const PooledScore pooled = pool_video(query, index_.temporal_frames[static_cast<std::size_t>(it->second)], params_);
  return AttentionResult{video_id, pooled.weights, pooled.score};
}

void RetrievalEngine::delete_session(const std::string& session_id) {
  std::lock_guard lock(sessions_mutex_);
  if (sessions_.erase(session_id) == 0) throw NotFoundError("unknown session " + session_id);
}

Index RetrievalEngine::turn_count(const std::string& session_id) const {
  auto slot = find(session_id);
  std::lock_guard lock(slot->mutex);
  return static_cast<Index>(slot->session.turns.size());
}

std::size_t RetrievalEngine::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

nlohmann::json RetrievalEngine::snapshot() const {
  std::vector<std::shared_ptr<Slot>> slots;
  std::uint64_t next = 0;
  {
    std::lock_guard lock(sessions_mutex_);
    for (const auto& [id, slot] : sessions_) slots.push_back(slot);
    next = next_session_;
  }
  nlohmann::json out = {{"next_session", next}, {"sessions", nlohmann::json::array()}};
  for (const auto& slot : slots) {
    std::lock_guard lock(slot->mutex);
    const Session& s = slot->session;
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& row : s.turns) turns.push_back(std::vector<float>(row.data(), row.data() + row.size()));
    out["sessions"].push_back({{"session_id", s.session_id},
                               {"mode", to_string(s.mode)},
                               {"created", std::chrono::duration_cast<std::chrono::milliseconds>(
                                               s.created.time_since_epoch())
                                               .count()},
                               {"texts", s.texts},
                               {"turns", std::move(turns)}});
  }
  return out;
}

void RetrievalEngine::restore(const nlohmann::json& snapshot) {
  std::unordered_map<std::string, std::shared_ptr<Slot>> restored;
  for (const auto& j : snapshot.at("sessions")) {
    auto slot = std::make_shared<Slot>();
    Session& s = slot->session;
    s.session_id = j.at("session_id").get<std::string>();
    s.mode = parse_dialogue_mode(j.at("mode").get<std::string>());
    if (s.mode != params_.config().mode) throw std::invalid_argument("snapshot session mode does not match the model");
    s.created = std::chrono::system_clock::time_point(std::chrono::milliseconds(j.at("created").get<std::int64_t>()));
    s.texts = j.at("texts").get<std::vector<std::string>>();
    for (const auto& row : j.at("turns")) {
      const auto values = row.get<std::vector<float>>();
      s.turns.push_back(Eigen::Map<const Vector<float>>(values.data(), static_cast<Index>(values.size())));
    }
    if (!s.turns.empty()) recompute_query(s);
    restored[s.session_id] = std::move(slot);
  }
  std::lock_guard lock(sessions_mutex_);
  sessions_ = std::move(restored);
  next_session_ = snapshot.value("next_session", next_session_);
}

void RetrievalEngine::save_sessions(const std::filesystem::path& path) const {
  const std::string text = snapshot().dump();
  io::write_file_atomic(path.string(), std::vector<char>(text.begin(), text.end()));
}

void RetrievalEngine::load_sessions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open session snapshot " + path.string());
  restore(nlohmann::json::parse(in));
}

}  // namespace dtv
