#include "dtv/evaluate.hpp"

namespace dtv {

namespace {

void require_rounds(const Split& split, Index rounds) {
  for (const auto& q : split.queries) {
    if (rounds > q.turns.rows()) {
      throw std::out_of_range("rounds " + std::to_string(rounds) + " exceeds the " + std::to_string(q.turns.rows()) +
                              " turns of query " + q.query_id);
    }
  }
}

}  // namespace

Matrix evaluate_scores(const ModelParams& params, const Split& split, Index rounds) {
  if (split.queries.empty() || split.videos.empty()) {
    throw std::invalid_argument("split " + split.name + " has no queries or no videos");
  }
  if (rounds < 0) throw std::invalid_argument("rounds must be non-negative");
  require_rounds(split, rounds);
  ag::NoGradGuard no_grad;
  std::vector<ag::Tensor> query_rows;
  query_rows.reserve(split.queries.size());
  for (const auto& q : split.queries) {
    query_rows.push_back(encode_query(rounds == 0 ? q : q.truncated(rounds), params));
  }
  std::vector<ag::Tensor> temporal;
  temporal.reserve(split.videos.size());
  for (const auto& v : split.videos) temporal.push_back(encode_frames(v, params));
  return score_matrix(ag::concat_rows(query_rows), temporal, params).value();
}

MetricSummary evaluate(const ModelParams& params, const Split& split, Index rounds) {
  const Matrix scores = evaluate_scores(params, split, rounds);
  const auto ids = split.video_ids();
  return summarize(compute_ranks(scores, split.gold, ids));
}

Matrix raw_dot_product_scores(const Split& split, Index rounds) {
  require_rounds(split, rounds);
  Matrix queries(static_cast<Index>(split.queries.size()), split.videos.front().frames.cols());
  for (std::size_t i = 0; i < split.queries.size(); ++i) {
    const auto& turns = split.queries[i].turns;
    queries.row(static_cast<Index>(i)) = turns.row(rounds == 0 ? turns.rows() - 1 : rounds - 1).cast<double>();
  }
  Matrix videos(static_cast<Index>(split.videos.size()), queries.cols());
  for (std::size_t i = 0; i < split.videos.size(); ++i) {
    videos.row(static_cast<Index>(i)) = split.videos[i].frames.cast<double>().colwise().mean();
  }
  return queries * videos.transpose();
}

std::vector<Index> default_rounds(Index max_rounds) {
  std::vector<Index> out;
  for (Index r = 1; r <= max_rounds; ++r) out.push_back(r);
  return out;
}

std::vector<RoundsPoint> rounds_ablation(const ModelParams& params, const Split& split,
                                         const std::vector<Index>& rounds_list) {
  std::vector<RoundsPoint> curve;
  curve.reserve(rounds_list.size());
  for (Index r : rounds_list) {
    if (r < 1) throw std::out_of_range("rounds_ablation: round counts start at 1");
    curve.push_back({r, evaluate(params, split, r)});
  }
  return curve;
}

nlohmann::json metrics_json(const MetricSummary& m) {
  return {{"r1", m.r1},
          {"r5", m.r5},
          {"r10", m.r10},
          {"med_rank", m.median_rank},
          {"mean_rank", m.mean_rank},
          {"num_queries", m.num_queries}};
}

nlohmann::json evaluation_report(const MetricSummary& m, const std::vector<RoundsPoint>* curve) {
  nlohmann::json j = metrics_json(m);
  if (curve) {
    auto& points = j["rounds_curve"] = nlohmann::json::array();
    for (const auto& p : *curve) {
      nlohmann::json point = metrics_json(p.metrics);
      point["rounds"] = p.rounds;
      points.push_back(std::move(point));
    }
  }
  return j;
}

}  // namespace dtv
