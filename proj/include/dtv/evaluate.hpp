#pragma once

// Model-side evaluation: split-level score matrices, metric summaries, the
// dialogue-rounds ablation and the JSON evaluation report.

#include "dtv/corpus.hpp"
#include "dtv/metrics.hpp"
#include "dtv/model.hpp"

#include <json.hpp>

#include <vector>

namespace dtv {

/// Query x video scores for a split with queries cut to their first `rounds`
/// turns (0 keeps every turn).
Matrix evaluate_scores(const ModelParams& params, const Split& split, Index rounds = 0);

MetricSummary evaluate(const ModelParams& params, const Split& split, Index rounds = 0);

/// Untrained baseline: prefix/turn row `rounds` (or the last row) dotted with
/// the mean frame embedding.
Matrix raw_dot_product_scores(const Split& split, Index rounds = 0);

struct RoundsPoint {
  Index rounds = 0;
  MetricSummary metrics;
};

std::vector<Index> default_rounds(Index max_rounds);

std::vector<RoundsPoint> rounds_ablation(const ModelParams& params, const Split& split,
                                         const std::vector<Index>& rounds_list);

nlohmann::json metrics_json(const MetricSummary& m);
/// {r1, r5, r10, med_rank, mean_rank, num_queries, rounds_curve?}
nlohmann::json evaluation_report(const MetricSummary& m, const std::vector<RoundsPoint>* curve = nullptr);

}  // namespace dtv
