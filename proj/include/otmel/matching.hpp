#pragma once

#include <string_view>
#include <vector>

#include "otmel/core_types.hpp"
#include "otmel/correlation.hpp"
#include "otmel/ot_solver.hpp"

namespace otmel {

enum class PoolMode { soft, mean, max };

std::string_view pool_name(PoolMode p);
PoolMode parse_pool(std::string_view name);

// Members share a width; their row counts may differ. Rows of all members
// are stacked and pooled column by column.
using PoolInput = std::vector<const Matrix*>;

// Per column c: sum_r w_rc R_rc with w_.c = softmax over rows of R_.c.
std::vector<double> softpool(const PoolInput& members);
std::vector<double> pool(const PoolInput& members, PoolMode mode);

struct Ablations {
  bool no_fusm = false;
  bool no_unim = false;
  PoolMode pool = PoolMode::soft;
};

struct ScoringConfig {
  Mechanism mechanism = Mechanism::ot;
  SinkhornConfig sinkhorn;
  Ablations ablations;
};

// Pooled text and visual representations of one record after interaction.
struct PooledRecord {
  std::vector<double> text;    // pool({T, G^{v->t}})
  std::vector<double> visual;  // pool({V, G^{t->v}})
};

PooledRecord pool_record(const FeatureMatrix& text, const FeatureMatrix& visual,
                         const Interaction& inter, PoolMode mode);

// <m.text ++ m.visual, e.text ++ e.visual>
double fused_score(const PooledRecord& mention, const PooledRecord& entity);

// Entity rows query the mention rows (Q from the entity, K and H from the
// mention); the transported mention features are pooled and compared with
// the entity summary row:  (<g_m, t_e> + <t_m, t_e>) / 2.
double unimodal_score(const FeatureMatrix& mention, const FeatureMatrix& entity,
                      const ProjectionSet& p, Mechanism mechanism, const SinkhornConfig& cfg,
                      PoolMode mode = PoolMode::soft);

// Same score from an already computed entity <- mention assignment.
double unimodal_score(const AssignmentResult& assignment, const FeatureMatrix& mention,
                      const FeatureMatrix& entity, PoolMode mode = PoolMode::soft);

// Mean of the components left active by `ab`. Throws Error(config) when the
// ablations remove every component.
MatchScores combine_scores(double s_f, double s_t, double s_v, const Ablations& ab);

class Scorer {
 public:
  Scorer(ProjectionTable table, ScoringConfig config);

  const ProjectionTable& table() const noexcept { return table_; }
  const ScoringConfig& config() const noexcept { return config_; }

  PooledRecord encode(const MentionRecord& m) const;
  PooledRecord encode(const EntityRecord& e) const;

  MatchScores score(const MentionRecord& m, const PooledRecord& pm, const EntityRecord& e,
                    const PooledRecord& pe) const;

  MatchScores overall_score(const MentionRecord& m, const EntityRecord& e) const;

 private:
  ProjectionTable table_;
  ScoringConfig config_;
};

}  // namespace otmel
