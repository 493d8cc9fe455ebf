#pragma once

// Dialogue-to-video scoring model over precomputed frame and turn embeddings.
//
// Video side: frames + absolute positional rows, then a stack of multi-head
// self-attention blocks (residual + layer norm) giving temporal frame
// representations. Query side: per-turn rows through a learned recurrence, or
// cumulative-prefix rows through a projection, then fused (mean or last) into
// one query vector. The query attends over the temporal frames; the pooled
// video vector is scored against the query by dot product.

#include "dtv/autograd.hpp"
#include "dtv/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dtv {

enum class DialogueMode { per_turn, cumulative_prefix };
enum class Fusion { mean, last };
enum class Activation { relu, gelu };
/// Frame-query similarity used for the pooling weights. The final score is
/// always the dot product of the query and the pooled video vector.
enum class Similarity { dot, cosine };

std::string_view to_string(DialogueMode mode);
std::string_view to_string(Fusion fusion);
std::string_view to_string(Activation activation);
std::string_view to_string(Similarity similarity);
DialogueMode parse_dialogue_mode(std::string_view text);
Fusion parse_fusion(std::string_view text);
Activation parse_activation(std::string_view text);
Similarity parse_similarity(std::string_view text);

struct ModelConfig {
  Index dim = 32;
  Index max_frames = 32;
  int layers = 2;
  int heads = 4;
  /// Hidden width of an optional feed-forward sublayer per attention block; 0 disables it.
  Index ffn_dim = 0;
  Activation activation = Activation::gelu;
  DialogueMode mode = DialogueMode::cumulative_prefix;
  Fusion fusion = Fusion::mean;
  bool fusion_projection = false;
  Similarity similarity = Similarity::dot;

  /// Throws ConfigError for non-positive sizes or heads not dividing dim.
  void validate() const;
};

struct VideoRecord {
  std::string video_id;
  EmbeddingMatrix frames;  // n x d
};

struct DialogueQuery {
  std::string query_id;
  EmbeddingMatrix turns;  // m x d; row i is turn i (per_turn) or turns 1..i (cumulative_prefix)
  DialogueMode mode = DialogueMode::cumulative_prefix;

  /// First `rounds` turns. Throws if rounds is 0 or exceeds the turn count.
  DialogueQuery truncated(Index rounds) const;
};

struct AttentionLayer {
  ag::Tensor query_weight, query_bias;
  ag::Tensor key_weight, key_bias;
  ag::Tensor value_weight, value_bias;
  ag::Tensor output_weight, output_bias;
  ag::Tensor norm_gain, norm_bias;
  // Present only when ffn_dim > 0.
  ag::Tensor ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias;
  ag::Tensor ffn_norm_gain, ffn_norm_bias;
};

/// d_i = tanh(d_{i-1} W_state + e_i W_input + b), d_0 = initial_state.
struct RecurrenceCell {
  ag::Tensor state_weight, input_weight, bias, initial_state;
};

struct NamedTensor {
  std::string name;
  ag::Tensor tensor;
};

/// Trainable weights. Copies share storage; use clone() for an independent snapshot.
class ModelParams {
 public:
  ModelParams() = default;

  /// Positional table zero; attention and recurrence weights uniform in
  /// +-1/sqrt(d); prefix and fusion projections identity; norms unit gain.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Parameters active for this configuration, in a fixed order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<ag::Tensor> parameters() const;
  Index parameter_count() const;

  ModelParams clone() const;

  ag::Tensor positional_table;  // max_frames x d
  std::vector<AttentionLayer> layers;
  RecurrenceCell cell;                      // per_turn
  ag::Tensor prefix_weight, prefix_bias;    // cumulative_prefix
  ag::Tensor fusion_weight, fusion_bias;    // fusion_projection
  ag::Tensor log_temperature;               // cosine similarity

 private:
  ModelConfig config_;
};

struct PooledScore {
  Vector<double> query;    // D^h
  Vector<double> video;    // V^h
  Vector<double> weights;  // c_i, one per frame
  double score = 0.0;
};

ag::Tensor to_tensor(const EmbeddingMatrix& m);

/// Row i becomes frames[i] + positional_table[i].
ag::Tensor inject_positions(const ag::Tensor& frames, const ModelParams& params);

/// One attention block: multi-head self-attention, residual, layer norm
/// (and the optional feed-forward sublayer).
ag::Tensor attention_block(const ag::Tensor& x, const AttentionLayer& layer, const ModelConfig& config);

/// Temporal frame representations (n x d).
ag::Tensor encode_frames(const ag::Tensor& frames, const ModelParams& params);
ag::Tensor encode_frames(const VideoRecord& video, const ModelParams& params);

/// Per-turn dialogue states (m x d).
ag::Tensor encode_dialogue(const DialogueQuery& query, const ModelParams& params);

/// Dialogue-level representation (1 x d).
ag::Tensor fuse_dialogue(const ag::Tensor& states, const ModelParams& params);

/// encode_dialogue followed by fuse_dialogue.
ag::Tensor encode_query(const DialogueQuery& query, const ModelParams& params);

/// Pooling weights for every query row against one video's temporal frames
/// (Q x n, rows sum to 1).
ag::Tensor pooling_weights(const ag::Tensor& queries, const ag::Tensor& temporal_frames,
                           const ModelParams& params);

/// Scores of every query row against one video (Q x 1).
ag::Tensor pooled_scores(const ag::Tensor& queries, const ag::Tensor& temporal_frames,
                         const ModelParams& params);

PooledScore pool_video(const Vector<double>& query, const Matrix& temporal_frames, const ModelParams& params);

/// Q x V scores. Each video and each query is encoded once.
ag::Tensor score_matrix(std::span<const DialogueQuery> queries, std::span<const VideoRecord> videos,
                        const ModelParams& params);

/// Same as score_matrix over already-encoded query rows (Q x d) and videos.
ag::Tensor score_matrix(const ag::Tensor& query_rows, std::span<const ag::Tensor> temporal_videos,
                        const ModelParams& params);

double score(const DialogueQuery& query, const VideoRecord& video, const ModelParams& params);

}  // namespace dtv
