#include "dtv/metrics.hpp"

#include <stdexcept>

namespace dtv {

namespace {

void require_ranks(std::span<const Index> ranks, const char* what) {
  if (ranks.empty()) throw std::invalid_argument(std::string(what) + ": no ranks");
}

}  // namespace

double recall_at_k(std::span<const Index> ranks, Index k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be at least 1, got " + std::to_string(k));
  require_ranks(ranks, "recall_at_k");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](Index r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double median_rank(std::span<const Index> ranks) {
  require_ranks(ranks, "median_rank");
  std::vector<Index> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  if (sorted.size() % 2 == 1) return static_cast<double>(sorted[mid]);
  return 0.5 * static_cast<double>(sorted[mid - 1] + sorted[mid]);
}

double mean_rank(std::span<const Index> ranks) {
  require_ranks(ranks, "mean_rank");
  double total = 0.0;
  for (Index r : ranks) total += static_cast<double>(r);
  return total / static_cast<double>(ranks.size());
}

MetricSummary summarize(std::span<const Index> ranks) {
  MetricSummary s;
  s.r1 = recall_at_k(ranks, 1);
  s.r5 = recall_at_k(ranks, 5);
  s.r10 = recall_at_k(ranks, 10);
  s.median_rank = median_rank(ranks);
  s.mean_rank = mean_rank(ranks);
  s.num_queries = ranks.size();
  return s;
}

}  // namespace dtv
