#include "otmel/eval.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <thread>

namespace otmel {

RankingResult rank_scores(const std::string& mention_id, std::span<const std::string> ids,
                          std::span<const double> scores, std::optional<std::size_t> gold) {
  if (ids.empty()) throw Error(ErrorKind::empty_input, "no candidates for '" + mention_id + "'");
  if (ids.size() != scores.size()) throw Error(ErrorKind::dimension, "ids and scores differ");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  RankingResult r;
  r.mention_id = mention_id;
  for (std::size_t i : order) {
    r.ordered_ids.push_back(ids[i]);
    r.ordered_scores.push_back(scores[i]);
  }
  if (gold) {
    const double g = scores[*gold];
    r.rank_of_gold = static_cast<std::size_t>(
        std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= g; }));
  }
  return r;
}

namespace {

std::optional<std::size_t> find_gold(const MentionRecord& mention,
                                     std::span<const EntityRecord> entities, bool require_gold) {
  if (!mention.gold_entity) {
    if (require_gold)
      throw Error(ErrorKind::missing_gold, "mention '" + mention.id + "' has no gold entity");
    return std::nullopt;
  }
  for (std::size_t j = 0; j < entities.size(); ++j)
    if (entities[j].id == *mention.gold_entity) return j;
  if (require_gold)
    throw Error(ErrorKind::unresolved_id, "gold entity '" + *mention.gold_entity +
                                              "' of mention '" + mention.id +
                                              "' is not among the candidates");
  return std::nullopt;
}

RankingResult rank_encoded(const MentionRecord& mention, std::span<const EntityRecord> entities,
                           std::span<const PooledRecord> pooled, std::span<const std::string> ids,
                           const Scorer& scorer, bool require_gold) {
  if (entities.empty())
    throw Error(ErrorKind::empty_input, "no candidates for '" + mention.id + "'");
  const auto gold = find_gold(mention, entities, require_gold);
  const PooledRecord pm = scorer.encode(mention);
  std::vector<double> scores(entities.size());
  for (std::size_t j = 0; j < entities.size(); ++j)
    scores[j] = scorer.score(mention, pm, entities[j], pooled[j]).s_o;
  return rank_scores(mention.id, ids, scores, gold);
}

}  // namespace

RankingResult rank_candidates(const MentionRecord& mention, std::span<const EntityRecord> entities,
                              const Scorer& scorer, bool require_gold) {
  std::vector<PooledRecord> pooled;
  std::vector<std::string> ids;
  for (const auto& e : entities) {
    pooled.push_back(scorer.encode(e));
    ids.push_back(e.id);
  }
  return rank_encoded(mention, entities, pooled, ids, scorer, require_gold);
}

std::vector<RankingResult> rank_all(std::span<const MentionRecord> mentions,
                                    std::span<const EntityRecord> entities, const Scorer& scorer,
                                    bool require_gold, std::size_t threads) {
  if (entities.empty()) throw Error(ErrorKind::empty_input, "no candidate entities");
  std::vector<PooledRecord> pooled;
  std::vector<std::string> ids;
  for (const auto& e : entities) {
    pooled.push_back(scorer.encode(e));
    ids.push_back(e.id);
  }
  std::vector<RankingResult> out(mentions.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(mentions.size(), 1));

  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < mentions.size(); i += threads)
        out[i] = rank_encoded(mentions[i], entities, pooled, ids, scorer, require_gold);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw Error(ErrorKind::empty_input, "no rankings to evaluate");
  if (k < 1) throw Error(ErrorKind::config, "k must be at least 1");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw Error(ErrorKind::empty_input, "no rankings to evaluate");
  double total = 0.0;
  for (std::size_t r : ranks) total += 1.0 / static_cast<double>(r);
  return total / static_cast<double>(ranks.size());
}

std::vector<std::size_t> gold_ranks(std::span<const RankingResult> results) {
  std::vector<std::size_t> ranks;
  ranks.reserve(results.size());
  for (const auto& r : results) {
    if (!r.rank_of_gold)
      throw Error(ErrorKind::missing_gold, "mention '" + r.mention_id + "' has no gold rank");
    ranks.push_back(*r.rank_of_gold);
  }
  return ranks;
}

double hits_at_k(std::span<const RankingResult> results, std::size_t k) {
  const auto ranks = gold_ranks(results);
  return hits_at_k(std::span<const std::size_t>(ranks), k);
}

double mrr(std::span<const RankingResult> results) {
  const auto ranks = gold_ranks(results);
  return mrr(std::span<const std::size_t>(ranks));
}

}  // namespace otmel
