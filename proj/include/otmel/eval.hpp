#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otmel/core_types.hpp"
#include "otmel/matching.hpp"

namespace otmel {

struct RankingResult {
  std::string mention_id;
  std::vector<std::string> ordered_ids;  // descending S_O, ties by id
  std::vector<double> ordered_scores;
  // 1-based; a gold tied with others takes the worst position among them.
  std::optional<std::size_t> rank_of_gold;
};

// Ranks precomputed overall scores. `gold` indexes into ids/scores.
RankingResult rank_scores(const std::string& mention_id, std::span<const std::string> ids,
                          std::span<const double> scores, std::optional<std::size_t> gold);

// Scores every candidate with `scorer` and ranks them. When `require_gold`
// is set the mention must name a gold entity present among the candidates.
RankingResult rank_candidates(const MentionRecord& mention, std::span<const EntityRecord> entities,
                              const Scorer& scorer, bool require_gold = true);

// Ranks every mention against every entity. Entities are encoded once;
// mentions are split over `threads` workers (0 = hardware concurrency).
// Output order follows `mentions` regardless of thread count.
std::vector<RankingResult> rank_all(std::span<const MentionRecord> mentions,
                                    std::span<const EntityRecord> entities, const Scorer& scorer,
                                    bool require_gold = true, std::size_t threads = 1);

// (1/N) sum I(rank <= k)
double hits_at_k(std::span<const std::size_t> ranks, std::size_t k);
// (1/N) sum 1/rank
double mrr(std::span<const std::size_t> ranks);

std::vector<std::size_t> gold_ranks(std::span<const RankingResult> results);
double hits_at_k(std::span<const RankingResult> results, std::size_t k);
double mrr(std::span<const RankingResult> results);

}  // namespace otmel
