#pragma once

// Ranking metrics: gold ranks, R@K, median and mean rank.
//
// Rank of the gold video = 1 + #candidates scoring strictly higher
//                            + #candidates tied with it that order before it.
// Ties order by video id (column index when no ids are given).

#include "dtv/types.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dtv {

namespace detail {

template <typename Derived, typename Before>
std::vector<Index> compute_ranks(const Eigen::MatrixBase<Derived>& scores, std::span<const Index> gold,
                                 Before&& tie_before) {
  if (static_cast<Index>(gold.size()) != scores.rows()) {
    throw DimensionError("compute_ranks: " + std::to_string(gold.size()) + " gold entries for " +
                         std::to_string(scores.rows()) + " queries");
  }
  std::vector<Index> ranks(gold.size());
  for (Index q = 0; q < scores.rows(); ++q) {
    const Index g = gold[static_cast<std::size_t>(q)];
    if (g < 0 || g >= scores.cols()) {
      throw std::out_of_range("compute_ranks: query " + std::to_string(q) + " has no gold video in the candidates");
    }
    const auto target = scores(q, g);
    Index rank = 1;
    for (Index v = 0; v < scores.cols(); ++v) {
      const auto s = scores(q, v);
      if (s > target || (s == target && v != g && tie_before(v, g))) ++rank;
    }
    ranks[static_cast<std::size_t>(q)] = rank;
  }
  return ranks;
}

}  // namespace detail

template <typename Derived>
std::vector<Index> compute_ranks(const Eigen::MatrixBase<Derived>& scores, std::span<const Index> gold) {
  return detail::compute_ranks(scores, gold, [](Index a, Index b) { return a < b; });
}

template <typename Derived>
std::vector<Index> compute_ranks(const Eigen::MatrixBase<Derived>& scores, std::span<const Index> gold,
                                 std::span<const std::string> video_ids) {
  if (static_cast<Index>(video_ids.size()) != scores.cols()) {
    throw DimensionError("compute_ranks: " + std::to_string(video_ids.size()) + " ids for " +
                         std::to_string(scores.cols()) + " candidates");
  }
  return detail::compute_ranks(scores, gold, [&](Index a, Index b) {
    return video_ids[static_cast<std::size_t>(a)] < video_ids[static_cast<std::size_t>(b)];
  });
}

double recall_at_k(std::span<const Index> ranks, Index k);
double median_rank(std::span<const Index> ranks);
double mean_rank(std::span<const Index> ranks);

struct MetricSummary {
  double r1 = 0, r5 = 0, r10 = 0;
  double median_rank = 0, mean_rank = 0;
  std::size_t num_queries = 0;
};

MetricSummary summarize(std::span<const Index> ranks);

struct RankingResult {
  std::string query_id;
  std::vector<std::pair<std::string, double>> ranked;  // score non-increasing
  std::string gold_video_id;
  Index gold_rank = 0;
};

/// Orders one query's candidates by score, ties by id. `gold` may be -1 when
/// the query has no known gold video (gold_rank is then 0).
template <typename Derived>
RankingResult rank_videos(const Eigen::MatrixBase<Derived>& row_scores, std::span<const std::string> video_ids,
                          std::string query_id, Index gold = -1) {
  const Index n = row_scores.size();
  if (static_cast<Index>(video_ids.size()) != n) {
    throw DimensionError("rank_videos: " + std::to_string(video_ids.size()) + " ids for " + std::to_string(n) +
                         " scores");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double sa = static_cast<double>(row_scores(a));
    const double sb = static_cast<double>(row_scores(b));
    if (sa != sb) return sa > sb;
    return video_ids[static_cast<std::size_t>(a)] < video_ids[static_cast<std::size_t>(b)];
  });
  RankingResult out;
  out.query_id = std::move(query_id);
  out.ranked.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Index v = order[i];
    out.ranked.emplace_back(video_ids[static_cast<std::size_t>(v)], static_cast<double>(row_scores(v)));
    if (v == gold) {
      out.gold_video_id = video_ids[static_cast<std::size_t>(v)];
      out.gold_rank = static_cast<Index>(i) + 1;
    }
  }
  return out;
}

}  // namespace dtv
