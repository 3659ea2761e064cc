#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "otmel/core_types.hpp"
#include "otmel/correlation.hpp"
#include "otmel/matching.hpp"
#include "otmel/ot_solver.hpp"

namespace otmel {

// Mean over rows of -log softmax(row)[i], with the diagonal as positives.
double contrastive_loss(const Matrix& scores);

// b x b in-batch scores of every kind; row i = mention i, column j = entity j.
struct BatchScores {
  Matrix f;
  Matrix t;
  Matrix v;
  Matrix o;
};

struct LossBreakdown {
  double l_f = 0.0;
  double l_t = 0.0;
  double l_v = 0.0;
  double l_o = 0.0;
  double l_kd = 0.0;
  double j = 0.0;
};

// L_O + L_F + L_T + L_V
double total_matching_loss(const BatchScores& scores);

// Teacher plan and student attention logits of one assignment.
struct DistillPair {
  Matrix plan;
  Matrix logits;
};

// (sum over rows of KL(plan row || softmax(logit row)) +
//  sum over columns of the same) / 2
// Plan rows and columns are renormalized to unit mass first, which is
// softmax(log plan); logits equal to log plan give zero.
double kd_pair_loss(const Matrix& plan, const Matrix& logits);

// Sum of kd_pair_loss over all pairs.
double kd_loss(std::span<const DistillPair> pairs);

double total_loss_with_kd(const BatchScores& scores, std::span<const DistillPair> pairs);

// KL(p || q) for discrete distributions given as probabilities.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Mentions paired with their gold entities: entities[i] is the gold of
// mentions[i], and every other entity is an in-batch negative.
struct TrainingBatch {
  std::vector<MentionRecord> mentions;
  std::vector<EntityRecord> entities;

  std::size_t size() const noexcept { return mentions.size(); }
};

enum class Objective {
  ot,  // L with OT assignments everywhere
  kd,  // J = L + L_KD with attention assignments distilled from detached OT plans
};

std::string_view objective_name(Objective o);
Objective parse_objective(std::string_view name);

struct ToyTrainConfig {
  double lr = 1e-2;
  std::size_t steps = 50;
  double fd_step = 1e-4;
  Objective objective = Objective::kd;
  SinkhornConfig sinkhorn;
  PoolMode pool = PoolMode::soft;
};

// d <= 16, sequence lengths <= 8, 1 <= batch <= 8. Throws Error(size_guard).
void check_toy_limits(const TrainingBatch& batch, std::size_t d);

// Loss of the configured objective at `table`; teacher plans are taken at
// `table` as well.
LossBreakdown evaluate_objective(const TrainingBatch& batch, const ProjectionTable& table,
                                 const ToyTrainConfig& cfg);

// Central-difference gradient of the objective w.r.t. every projection
// entry, with teacher plans held fixed at `table`. Order: sites in kAllSites
// order, then w_q, w_k, w_h, each row-major.
std::vector<double> fd_gradient(const TrainingBatch& batch, const ProjectionTable& table,
                                const ToyTrainConfig& cfg, double fd_step);

struct TraceRow {
  std::size_t step = 0;
  LossBreakdown loss;
};

struct ToyTrainResult {
  ProjectionTable table;
  std::vector<TraceRow> trace;  // steps + 1 rows, row 0 before any update
};

ToyTrainResult toy_train(const TrainingBatch& batch, ProjectionTable init,
                         const ToyTrainConfig& cfg);

// Teacher/student pairs for every assignment the model computes: the four
// cross-modal sites per record and the four unimodal sites per
// (mention, entity) pair.
struct SitePairs {
  Site site;
  std::vector<DistillPair> pairs;
};

std::array<SitePairs, kSiteCount> collect_distill_pairs(std::span<const MentionRecord> mentions,
                                                        std::span<const EntityRecord> entities,
                                                        const ProjectionTable& table,
                                                        const SinkhornConfig& cfg);

// Mean KD loss per reported site. The unimodal directions are reported per
// direction with text and visual assignments pooled: m2e and e2m.
struct SiteGap {
  std::string site;
  double mean_kd = 0.0;
  std::size_t count = 0;
};

std::vector<SiteGap> distillation_gap(std::span<const MentionRecord> mentions,
                                      std::span<const EntityRecord> entities,
                                      const ProjectionTable& table, const SinkhornConfig& cfg);

// Mean of the per-site means.
double mean_site_gap(const std::vector<SiteGap>& gaps);

}  // namespace otmel
