#include "dtv/model.hpp"

#include <cmath>
#include <random>

namespace dtv {

namespace {

Matrix uniform_matrix(Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

ag::Tensor param(Matrix m) { return ag::Tensor::parameter(std::move(m)); }

ag::Tensor linear(const ag::Tensor& x, const ag::Tensor& weight, const ag::Tensor& bias) {
  return ag::add_row(ag::matmul(x, weight), bias);
}

ag::Tensor activate(const ag::Tensor& x, Activation activation) {
  return activation == Activation::relu ? ag::relu(x) : ag::gelu(x);
}

ag::Tensor clone_tensor(const ag::Tensor& t) {
  return t.defined() ? ag::Tensor::parameter(t.value()) : ag::Tensor{};
}

void require_dim(Index cols, Index dim, const char* what) {
  if (cols != dim) {
    throw DimensionError(std::string(what) + ": embedding width " + std::to_string(cols) +
                         " does not match model dim " + std::to_string(dim));
  }
}

}  // namespace

std::string_view to_string(DialogueMode mode) {
  return mode == DialogueMode::per_turn ? "per_turn" : "cumulative_prefix";
}
std::string_view to_string(Fusion fusion) { return fusion == Fusion::mean ? "mean" : "last"; }
std::string_view to_string(Activation activation) {
  return activation == Activation::relu ? "relu" : "gelu";
}
std::string_view to_string(Similarity similarity) {
  return similarity == Similarity::dot ? "dot" : "cosine";
}

DialogueMode parse_dialogue_mode(std::string_view text) {
  if (text == "per_turn") return DialogueMode::per_turn;
  if (text == "cumulative_prefix") return DialogueMode::cumulative_prefix;
  throw ConfigError("unknown dialogue mode '" + std::string(text) + "'");
}
Fusion parse_fusion(std::string_view text) {
  if (text == "mean") return Fusion::mean;
  if (text == "last") return Fusion::last;
  throw ConfigError("unknown fusion '" + std::string(text) + "'");
}
Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu;
  if (text == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + std::string(text) + "'");
}
Similarity parse_similarity(std::string_view text) {
  if (text == "dot") return Similarity::dot;
  if (text == "cosine") return Similarity::cosine;
  throw ConfigError("unknown similarity '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (dim <= 0) throw ConfigError("dim must be positive");
  if (max_frames <= 0) throw ConfigError("max_frames must be positive");
  if (layers < 0) throw ConfigError("layers must be non-negative");
  if (heads <= 0) throw ConfigError("heads must be positive");
  if (dim % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " does not divide dim " + std::to_string(dim));
  }
  if (ffn_dim < 0) throw ConfigError("ffn_dim must be non-negative");
}

DialogueQuery DialogueQuery::truncated(Index rounds) const {
  if (rounds < 1 || rounds > turns.rows()) {
    throw std::out_of_range("query " + query_id + ": requested " + std::to_string(rounds) +
                            " rounds but only " + std::to_string(turns.rows()) + " available");
  }
  return DialogueQuery{query_id, turns.topRows(rounds), mode};
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Index d = config.dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));

  ModelParams p;
  p.config_ = config;
  p.positional_table = param(Matrix::Zero(config.max_frames, d));
  for (int l = 0; l < config.layers; ++l) {
    AttentionLayer layer;
    layer.query_weight = param(uniform_matrix(d, d, bound, rng));
    layer.query_bias = param(Matrix::Zero(1, d));
    layer.key_weight = param(uniform_matrix(d, d, bound, rng));
    layer.key_bias = param(Matrix::Zero(1, d));
    layer.value_weight = param(uniform_matrix(d, d, bound, rng));
    layer.value_bias = param(Matrix::Zero(1, d));
    layer.output_weight = param(uniform_matrix(d, d, bound, rng));
    layer.output_bias = param(Matrix::Zero(1, d));
    layer.norm_gain = param(Matrix::Ones(1, d));
    layer.norm_bias = param(Matrix::Zero(1, d));
    if (config.ffn_dim > 0) {
      const double out_bound = 1.0 / std::sqrt(static_cast<double>(config.ffn_dim));
      layer.ffn_in_weight = param(uniform_matrix(d, config.ffn_dim, bound, rng));
      layer.ffn_in_bias = param(Matrix::Zero(1, config.ffn_dim));
      layer.ffn_out_weight = param(uniform_matrix(config.ffn_dim, d, out_bound, rng));
      layer.ffn_out_bias = param(Matrix::Zero(1, d));
      layer.ffn_norm_gain = param(Matrix::Ones(1, d));
      layer.ffn_norm_bias = param(Matrix::Zero(1, d));
    }
    p.layers.push_back(std::move(layer));
  }
  if (config.mode == DialogueMode::per_turn) {
    p.cell.state_weight = param(uniform_matrix(d, d, bound, rng));
    p.cell.input_weight = param(uniform_matrix(d, d, bound, rng));
    p.cell.bias = param(Matrix::Zero(1, d));
    p.cell.initial_state = param(Matrix::Zero(1, d));
  } else {
    p.prefix_weight = param(Matrix::Identity(d, d));
    p.prefix_bias = param(Matrix::Zero(1, d));
  }
  if (config.fusion_projection) {
    p.fusion_weight = param(Matrix::Identity(d, d));
    p.fusion_bias = param(Matrix::Zero(1, d));
  }
  if (config.similarity == Similarity::cosine) {
    p.log_temperature = param(Matrix::Constant(1, 1, std::log(1.0 / 0.07)));
  }
  return p;
}

std::vector<NamedTensor> ModelParams::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"positional_table", positional_table});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    out.push_back({prefix + "query_weight", layer.query_weight});
    out.push_back({prefix + "query_bias", layer.query_bias});
    out.push_back({prefix + "key_weight", layer.key_weight});
    out.push_back({prefix + "key_bias", layer.key_bias});
    out.push_back({prefix + "value_weight", layer.value_weight});
    out.push_back({prefix + "value_bias", layer.value_bias});
    out.push_back({prefix + "output_weight", layer.output_weight});
    out.push_back({prefix + "output_bias", layer.output_bias});
    out.push_back({prefix + "norm_gain", layer.norm_gain});
    out.push_back({prefix + "norm_bias", layer.norm_bias});
    if (config_.ffn_dim > 0) {
      out.push_back({prefix + "ffn_in_weight", layer.ffn_in_weight});
      out.push_back({prefix + "ffn_in_bias", layer.ffn_in_bias});
      out.push_back({prefix + "ffn_out_weight", layer.ffn_out_weight});
      out.push_back({prefix + "ffn_out_bias", layer.ffn_out_bias});
      out.push_back({prefix + "ffn_norm_gain", layer.ffn_norm_gain});
      out.push_back({prefix + "ffn_norm_bias", layer.ffn_norm_bias});
    }
  }
  if (config_.mode == DialogueMode::per_turn) {
    out.push_back({"cell.state_weight", cell.state_weight});
    out.push_back({"cell.input_weight", cell.input_weight});
    out.push_back({"cell.bias", cell.bias});
    out.push_back({"cell.initial_state", cell.initial_state});
  } else {
    out.push_back({"prefix_weight", prefix_weight});
    out.push_back({"prefix_bias", prefix_bias});
  }
  if (config_.fusion_projection) {
    out.push_back({"fusion_weight", fusion_weight});
    out.push_back({"fusion_bias", fusion_bias});
  }
  if (config_.similarity == Similarity::cosine) out.push_back({"log_temperature", log_temperature});
  return out;
}

std::vector<ag::Tensor> ModelParams::parameters() const {
  std::vector<ag::Tensor> out;
  for (auto& named : named_parameters()) out.push_back(std::move(named.tensor));
  return out;
}

Index ModelParams::parameter_count() const {
  Index total = 0;
  for (const auto& named : named_parameters()) total += named.tensor.size();
  return total;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.config_ = config_;
  p.positional_table = clone_tensor(positional_table);
  for (const auto& layer : layers) {
    AttentionLayer c;
    c.query_weight = clone_tensor(layer.query_weight);
    c.query_bias = clone_tensor(layer.query_bias);
    c.key_weight = clone_tensor(layer.key_weight);
    c.key_bias = clone_tensor(layer.key_bias);
    c.value_weight = clone_tensor(layer.value_weight);
    c.value_bias = clone_tensor(layer.value_bias);
    c.output_weight = clone_tensor(layer.output_weight);
    c.output_bias = clone_tensor(layer.output_bias);
    c.norm_gain = clone_tensor(layer.norm_gain);
    c.norm_bias = clone_tensor(layer.norm_bias);
    c.ffn_in_weight = clone_tensor(layer.ffn_in_weight);
    c.ffn_in_bias = clone_tensor(layer.ffn_in_bias);
    c.ffn_out_weight = clone_tensor(layer.ffn_out_weight);
    c.ffn_out_bias = clone_tensor(layer.ffn_out_bias);
    c.ffn_norm_gain = clone_tensor(layer.ffn_norm_gain);
    c.ffn_norm_bias = clone_tensor(layer.ffn_norm_bias);
    p.layers.push_back(std::move(c));
  }
  p.cell.state_weight = clone_tensor(cell.state_weight);
  p.cell.input_weight = clone_tensor(cell.input_weight);
  p.cell.bias = clone_tensor(cell.bias);
  p.cell.initial_state = clone_tensor(cell.initial_state);
  p.prefix_weight = clone_tensor(prefix_weight);
  p.prefix_bias = clone_tensor(prefix_bias);
  p.fusion_weight = clone_tensor(fusion_weight);
  p.fusion_bias = clone_tensor(fusion_bias);
  p.log_temperature = clone_tensor(log_temperature);
  return p;
}

ag::Tensor to_tensor(const EmbeddingMatrix& m) { return ag::Tensor::constant(m.cast<double>()); }

ag::Tensor inject_positions(const ag::Tensor& frames, const ModelParams& params) {
  const Index n = frames.rows();
  const Index max_frames = params.config().max_frames;
  if (n > max_frames) {
    throw DimensionError("video has " + std::to_string(n) + " frames but the model supports at most " +
                         std::to_string(max_frames) + "; subsample the video or retrain with a larger max_frames");
  }
  require_dim(frames.cols(), params.config().dim, "inject_positions");
  return ag::add(frames, ag::slice_rows(params.positional_table, 0, n));
}

ag::Tensor attention_block(const ag::Tensor& x, const AttentionLayer& layer, const ModelConfig& config) {
  const Index d = config.dim;
  const Index head_dim = d / config.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const ag::Tensor q = linear(x, layer.query_weight, layer.query_bias);
  const ag::Tensor k = linear(x, layer.key_weight, layer.key_bias);
  const ag::Tensor v = linear(x, layer.value_weight, layer.value_bias);

  std::vector<ag::Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config.heads));
  for (int h = 0; h < config.heads; ++h) {
    const Index offset = h * head_dim;
    const ag::Tensor qh = ag::slice_cols(q, offset, head_dim);
    const ag::Tensor kh = ag::slice_cols(k, offset, head_dim);
    const ag::Tensor vh = ag::slice_cols(v, offset, head_dim);
    const ag::Tensor attn = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt));
    heads.push_back(ag::matmul(attn, vh));
  }
  const ag::Tensor mixed = linear(ag::concat_cols(heads), layer.output_weight, layer.output_bias);
  ag::Tensor y = ag::layer_norm(ag::add(x, mixed), layer.norm_gain, layer.norm_bias);

  if (config.ffn_dim > 0) {
    const ag::Tensor hidden = activate(linear(y, layer.ffn_in_weight, layer.ffn_in_bias), config.activation);
    const ag::Tensor ffn = linear(hidden, layer.ffn_out_weight, layer.ffn_out_bias);
    y = ag::layer_norm(ag::add(y, ffn), layer.ffn_norm_gain, layer.ffn_norm_bias);
  }
  return y;
}

ag::Tensor encode_frames(const ag::Tensor& frames, const ModelParams& params) {
  if (frames.rows() == 0) throw DimensionError("encode_frames: video has no frames");
  ag::Tensor x = inject_positions(frames, params);
  for (const auto& layer : params.layers) x = attention_block(x, layer, params.config());
  return x;
}

ag::Tensor encode_frames(const VideoRecord& video, const ModelParams& params) {
  return encode_frames(to_tensor(video.frames), params);
}

ag::Tensor encode_dialogue(const DialogueQuery& query, const ModelParams& params) {
  const ModelConfig& config = params.config();
  if (query.mode != config.mode) {
    throw ConfigError("query " + query.query_id + " is in " + std::string(to_string(query.mode)) +
                      " mode but the model expects " + std::string(to_string(config.mode)));
  }
  if (query.turns.rows() == 0) throw DimensionError("query " + query.query_id + " has no turns");
  require_dim(query.turns.cols(), config.dim, "encode_dialogue");

  const ag::Tensor turns = to_tensor(query.turns);
  if (config.mode == DialogueMode::cumulative_prefix) {
    return linear(turns, params.prefix_weight, params.prefix_bias);
  }
  const RecurrenceCell& cell = params.cell;
  // Input projections for all turns at once; the recurrence only adds the state term.
  const ag::Tensor projected = linear(turns, cell.input_weight, cell.bias);
  std::vector<ag::Tensor> states;
  states.reserve(static_cast<std::size_t>(turns.rows()));
  ag::Tensor state = cell.initial_state;
  for (Index i = 0; i < turns.rows(); ++i) {
    state = ag::tanh(ag::add(ag::matmul(state, cell.state_weight), ag::slice_rows(projected, i, 1)));
    states.push_back(state);
  }
  return ag::concat_rows(states);
}

ag::Tensor fuse_dialogue(const ag::Tensor& states, const ModelParams& params) {
  if (states.rows() == 0) throw DimensionError("fuse_dialogue: no dialogue states");
  const ModelConfig& config = params.config();
  ag::Tensor fused = config.fusion == Fusion::mean ? ag::mean_rows(states)
                                                   : ag::slice_rows(states, states.rows() - 1, 1);
  if (config.fusion_projection) fused = linear(fused, params.fusion_weight, params.fusion_bias);
  return fused;
}

ag::Tensor encode_query(const DialogueQuery& query, const ModelParams& params) {
  return fuse_dialogue(encode_dialogue(query, params), params);
}

namespace {

// Raw query-frame dot products and the similarities that drive the weights.
std::pair<ag::Tensor, ag::Tensor> similarities(const ag::Tensor& queries, const ag::Tensor& frames,
                                               const ModelParams& params) {
  if (frames.rows() == 0) throw DimensionError("pool_video: video has no frames");
  if (queries.cols() != frames.cols()) {
    throw DimensionError("pool_video: query " + shape_string(queries.value()) + " and frames " +
                         shape_string(frames.value()) + " disagree on dim");
  }
  ag::Tensor raw = ag::matmul(queries, ag::transpose(frames));
  if (params.config().similarity == Similarity::dot) return {raw, raw};
  const ag::Tensor cosine =
      ag::matmul(ag::normalize_rows(queries), ag::transpose(ag::normalize_rows(frames)));
  return {raw, ag::scale_by(cosine, ag::exp(params.log_temperature))};
}

}  // namespace

ag::Tensor pooling_weights(const ag::Tensor& queries, const ag::Tensor& temporal_frames,
                           const ModelParams& params) {
  return ag::softmax_rows(similarities(queries, temporal_frames, params).second);
}

ag::Tensor pooled_scores(const ag::Tensor& queries, const ag::Tensor& temporal_frames,
                         const ModelParams& params) {
  auto [raw, sims] = similarities(queries, temporal_frames, params);
  // s = D . sum_i c_i f_i = sum_i c_i (D . f_i)
  return ag::row_sum(ag::mul(ag::softmax_rows(sims), raw));
}

PooledScore pool_video(const Vector<double>& query, const Matrix& temporal_frames, const ModelParams& params) {
  ag::NoGradGuard no_grad;
  const ag::Tensor q = ag::Tensor::constant(query.transpose());
  const ag::Tensor frames = ag::Tensor::constant(temporal_frames);
  const ag::Tensor weights = pooling_weights(q, frames, params);
  const ag::Tensor pooled = ag::matmul(weights, frames);
  PooledScore out;
  out.query = query;
  out.weights = weights.value().row(0).transpose();
  out.video = pooled.value().row(0).transpose();
  out.score = query.dot(out.video);
  return out;
}

ag::Tensor score_matrix(const ag::Tensor& query_rows, std::span<const ag::Tensor> temporal_videos,
                        const ModelParams& params) {
  if (query_rows.rows() == 0 || temporal_videos.empty()) {
    throw std::invalid_argument("score_matrix: need at least one query and one video");
  }
  std::vector<ag::Tensor> columns;
  columns.reserve(temporal_videos.size());
  for (const auto& frames : temporal_videos) columns.push_back(pooled_scores(query_rows, frames, params));
  return ag::concat_cols(columns);
}

ag::Tensor score_matrix(std::span<const DialogueQuery> queries, std::span<const VideoRecord> videos,
                        const ModelParams& params) {
  if (queries.empty() || videos.empty()) {
    throw std::invalid_argument("score_matrix: need at least one query and one video");
  }
  std::vector<ag::Tensor> rows;
  rows.reserve(queries.size());
  for (const auto& q : queries) rows.push_back(encode_query(q, params));
  std::vector<ag::Tensor> temporal;
  temporal.reserve(videos.size());
  for (const auto& v : videos) temporal.push_back(encode_frames(v, params));
  return score_matrix(ag::concat_rows(rows), temporal, params);
}

double score(const DialogueQuery& query, const VideoRecord& video, const ModelParams& params) {
  ag::NoGradGuard no_grad;
  const Vector<double> d = encode_query(query, params).value().row(0).transpose();
  return pool_video(d, encode_frames(video, params).value(), params).score;
}

}  // namespace dtv
