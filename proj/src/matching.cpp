#include "otmel/matching.hpp"

#include <algorithm>
#include <cmath>

#include "otmel/kernels.hpp"

namespace otmel {

std::string_view pool_name(PoolMode p) {
  switch (p) {
    case PoolMode::soft: return "soft";
    case PoolMode::mean: return "mean";
    case PoolMode::max: return "max";
  }
  return "soft";
}

PoolMode parse_pool(std::string_view name) {
  if (name == "soft") return PoolMode::soft;
  if (name == "mean") return PoolMode::mean;
  if (name == "max") return PoolMode::max;
  throw Error(ErrorKind::parse, "unknown pool mode '" + std::string(name) + "'");
}

namespace {

std::size_t checked_width(const PoolInput& members) {
  if (members.empty()) throw Error(ErrorKind::empty_input, "pooling an empty set");
  const std::size_t d = members.front()->cols();
  std::size_t rows = 0;
  for (const Matrix* m : members) {
    if (m->cols() != d) throw Error(ErrorKind::dimension, "pool members differ in width");
    rows += m->rows();
  }
  if (rows == 0 || d == 0) throw Error(ErrorKind::empty_input, "pooling zero rows");
  return d;
}

std::vector<double> column_max(const PoolInput& members, std::size_t d) {
  std::vector<double> mx(d, -INFINITY);
  for (const Matrix* m : members)
    for (std::size_t r = 0; r < m->rows(); ++r) {
      const auto row = m->row(r);
      for (std::size_t c = 0; c < d; ++c) mx[c] = std::max(mx[c], row[c]);
    }
  return mx;
}

}  // namespace

std::vector<double> softpool(const PoolInput& members) {
  const std::size_t d = checked_width(members);
  const auto mx = column_max(members, d);
  std::vector<double> num(d, 0.0);
  std::vector<double> den(d, 0.0);
  std::vector<double> w(d);
  const auto& k = kernels::active();
  for (const Matrix* m : members)
    for (std::size_t r = 0; r < m->rows(); ++r) {
      const auto row = m->row(r);
      for (std::size_t c = 0; c < d; ++c) w[c] = std::exp(row[c] - mx[c]);
      k.axpy(1.0, w.data(), den.data(), d);
      for (std::size_t c = 0; c < d; ++c) num[c] += w[c] * row[c];
    }
  for (std::size_t c = 0; c < d; ++c) num[c] /= den[c];
  return num;
}

std::vector<double> pool(const PoolInput& members, PoolMode mode) {
  if (mode == PoolMode::soft) return softpool(members);
  const std::size_t d = checked_width(members);
  if (mode == PoolMode::max) return column_max(members, d);
  std::vector<double> acc(d, 0.0);
  std::size_t rows = 0;
  for (const Matrix* m : members)
    for (std::size_t r = 0; r < m->rows(); ++r, ++rows) kernels::axpy(1.0, m->row(r), acc);
  for (double& v : acc) v /= static_cast<double>(rows);
  return acc;
}

PooledRecord pool_record(const FeatureMatrix& text, const FeatureMatrix& visual,
                         const Interaction& inter, PoolMode mode) {
  return {pool({&text, &inter.v2t.g}, mode), pool({&visual, &inter.t2v.g}, mode)};
}

double fused_score(const PooledRecord& mention, const PooledRecord& entity) {
  if (mention.text.size() != entity.text.size() || mention.visual.size() != entity.visual.size())
    throw Error(ErrorKind::dimension, "fused_score: pooled widths differ");
  return kernels::dot(mention.text, entity.text) + kernels::dot(mention.visual, entity.visual);
}

double unimodal_score(const FeatureMatrix& mention, const FeatureMatrix& entity,
                      const ProjectionSet& p, Mechanism mechanism, const SinkhornConfig& cfg,
                      PoolMode mode) {
  if (mention.cols() != entity.cols())
    throw Error(ErrorKind::dimension, "unimodal_score: mention and entity widths differ");
  if (mention.rows() == 0 || entity.rows() == 0)
    throw Error(ErrorKind::empty_input, "unimodal_score: empty feature matrix");
  return unimodal_score(assign(mechanism, entity, mention, p, cfg), mention, entity, mode);
}

double unimodal_score(const AssignmentResult& assignment, const FeatureMatrix& mention,
                      const FeatureMatrix& entity, PoolMode mode) {
  const std::vector<double> g = pool({&assignment.g}, mode);
  const auto t_e = entity.row(0);
  const auto t_m = mention.row(0);
  return 0.5 * (kernels::dot(g, t_e) + kernels::dot(t_m, t_e));
}

MatchScores combine_scores(double s_f, double s_t, double s_v, const Ablations& ab) {
  MatchScores s;
  s.components = 0;
  if (!ab.no_fusm) {
    s.s_f = s_f;
    s.components |= MatchScores::kFused;
  }
  if (!ab.no_unim) {
    s.s_t = s_t;
    s.s_v = s_v;
    s.components |= MatchScores::kText | MatchScores::kVisual;
  }
  if (s.components == 0)
    throw Error(ErrorKind::config, "ablations removed every matching score");
  s.s_o = s.recompute_overall();
  return s;
}

Scorer::Scorer(ProjectionTable table, ScoringConfig config)
    : table_(std::move(table)), config_(config) {
  config_.sinkhorn.check();
  if (config_.ablations.no_fusm && config_.ablations.no_unim)
    throw Error(ErrorKind::config, "ablations removed every matching score");
}

PooledRecord Scorer::encode(const MentionRecord& m) const {
  if (config_.ablations.no_fusm) return {};
  const Interaction inter = interact_record(m, table_, config_.mechanism, config_.sinkhorn);
  return pool_record(m.text, m.visual, inter, config_.ablations.pool);
}

PooledRecord Scorer::encode(const EntityRecord& e) const {
  if (config_.ablations.no_fusm) return {};
  const Interaction inter = interact_record(e, table_, config_.mechanism, config_.sinkhorn);
  return pool_record(e.text, e.visual, inter, config_.ablations.pool);
}

MatchScores Scorer::score(const MentionRecord& m, const PooledRecord& pm, const EntityRecord& e,
                          const PooledRecord& pe) const {
  const auto& ab = config_.ablations;
  double s_f = 0.0, s_t = 0.0, s_v = 0.0;
  if (!ab.no_fusm) s_f = fused_score(pm, pe);
  if (!ab.no_unim) {
    s_t = unimodal_score(m.text, e.text, table_.at(Site::m2e_text), config_.mechanism,
                         config_.sinkhorn, ab.pool);
    s_v = unimodal_score(m.visual, e.visual, table_.at(Site::m2e_visual), config_.mechanism,
                         config_.sinkhorn, ab.pool);
  }
  return combine_scores(s_f, s_t, s_v, ab);
}

MatchScores Scorer::overall_score(const MentionRecord& m, const EntityRecord& e) const {
  return score(m, encode(m), e, encode(e));
}

}  // namespace otmel
