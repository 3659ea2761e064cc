#include "otmel/objectives.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

#include "otmel/kernels.hpp"

namespace otmel {

namespace {

double log_sum_exp(std::span<const double> x) {
  const double mx = kernels::max(x);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  return mx + std::log(z);
}

// KL(p || softmax(b)) with p the plan slice a renormalized to unit mass,
// i.e. softmax(log a). Zero plan entries contribute nothing.
double kl_plan_softmax(std::span<const double> a, std::span<const double> b) {
  double mass = 0.0;
  for (double v : a) {
    if (!(v >= 0.0)) throw Error(ErrorKind::invalid_marginals, "teacher plan has a negative entry");
    mass += v;
  }
  if (!(mass > 0.0)) throw Error(ErrorKind::invalid_marginals, "teacher plan slice has no mass");
  const double lb = log_sum_exp(b);
  double kl = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    const double p = a[i] / mass;
    kl += p * (std::log(p) - (b[i] - lb));
  }
  return kl > 0.0 ? kl : 0.0;
}

}  // namespace

double contrastive_loss(const Matrix& scores) {
  if (scores.rows() != scores.cols()) {
    std::ostringstream os;
    os << "contrastive loss needs a square score matrix, got " << scores.rows() << "x"
       << scores.cols();
    throw Error(ErrorKind::dimension, os.str());
  }
  if (scores.rows() == 0) throw Error(ErrorKind::empty_input, "empty score matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    total += log_sum_exp(r) - r[i];
  }
  return total / static_cast<double>(scores.rows());
}

double total_matching_loss(const BatchScores& s) {
  return contrastive_loss(s.o) + contrastive_loss(s.f) + contrastive_loss(s.t) +
         contrastive_loss(s.v);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorKind::dimension, "kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

double kd_pair_loss(const Matrix& plan, const Matrix& logits) {
  if (plan.rows() != logits.rows() || plan.cols() != logits.cols()) {
    std::ostringstream os;
    os << "distillation pair shapes differ: plan " << plan.rows() << "x" << plan.cols()
       << ", logits " << logits.rows() << "x" << logits.cols();
    throw Error(ErrorKind::dimension, os.str());
  }
  if (!all_finite(logits)) throw Error(ErrorKind::non_finite, "distillation logits not finite");
  double rows = 0.0;
  for (std::size_t i = 0; i < plan.rows(); ++i) rows += kl_plan_softmax(plan.row(i), logits.row(i));
  const Matrix pt = plan.transposed();
  const Matrix st = logits.transposed();
  double cols = 0.0;
  for (std::size_t j = 0; j < pt.rows(); ++j) cols += kl_plan_softmax(pt.row(j), st.row(j));
  return 0.5 * (rows + cols);
}

double kd_loss(std::span<const DistillPair> pairs) {
  double total = 0.0;
  for (const auto& p : pairs) total += kd_pair_loss(p.plan, p.logits);
  return total;
}

double total_loss_with_kd(const BatchScores& scores, std::span<const DistillPair> pairs) {
  return total_matching_loss(scores) + kd_loss(pairs);
}

std::string_view objective_name(Objective o) { return o == Objective::ot ? "ot" : "kd"; }

Objective parse_objective(std::string_view name) {
  if (name == "ot") return Objective::ot;
  if (name == "kd") return Objective::kd;
  throw Error(ErrorKind::parse, "unknown objective '" + std::string(name) + "'");
}

void check_toy_limits(const TrainingBatch& batch, std::size_t d) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::size_guard, what); };
  if (batch.mentions.empty()) fail("toy training needs at least one mention");
  if (batch.mentions.size() != batch.entities.size())
    throw Error(ErrorKind::dimension, "training batch needs one gold entity per mention");
  if (batch.size() > 8) fail("toy training batch limited to 8 pairs");
  if (d > 16) fail("toy training limited to d <= 16");
  auto check = [&](const Matrix& m, const std::string& id) {
    if (m.rows() > 8) fail("sequence of '" + id + "' exceeds 8 rows");
    if (m.cols() != d) throw Error(ErrorKind::dimension, "record '" + id + "' width != d");
  };
  for (const auto& m : batch.mentions) check(m.text, m.id), check(m.visual, m.id);
  for (const auto& e : batch.entities) check(e.text, e.id), check(e.visual, e.id);
}

namespace {

bool is_unimodal(Site s) {
  return s == Site::m2e_text || s == Site::m2e_visual || s == Site::e2m_text ||
         s == Site::e2m_visual;
}

// Calls fn(index, dest, source) for every assignment computed at `site`.
// Cross-modal sites enumerate records; unimodal sites enumerate
// (mention i, entity j) pairs with index i * |entities| + j.
template <class Fn>
void for_each_assignment(Site site, std::span<const MentionRecord> mentions,
                         std::span<const EntityRecord> entities, Fn&& fn) {
  const std::size_t ne = entities.size();
  switch (site) {
    case Site::mention_v2t:
      for (std::size_t i = 0; i < mentions.size(); ++i) fn(i, mentions[i].text, mentions[i].visual);
      return;
    case Site::mention_t2v:
      for (std::size_t i = 0; i < mentions.size(); ++i) fn(i, mentions[i].visual, mentions[i].text);
      return;
    case Site::entity_v2t:
      for (std::size_t i = 0; i < ne; ++i) fn(i, entities[i].text, entities[i].visual);
      return;
    case Site::entity_t2v:
      for (std::size_t i = 0; i < ne; ++i) fn(i, entities[i].visual, entities[i].text);
      return;
    case Site::m2e_text:
      for (std::size_t i = 0; i < mentions.size(); ++i)
        for (std::size_t j = 0; j < ne; ++j) fn(i * ne + j, entities[j].text, mentions[i].text);
      return;
    case Site::m2e_visual:
      for (std::size_t i = 0; i < mentions.size(); ++i)
        for (std::size_t j = 0; j < ne; ++j) fn(i * ne + j, entities[j].visual, mentions[i].visual);
      return;
    case Site::e2m_text:
      for (std::size_t i = 0; i < mentions.size(); ++i)
        for (std::size_t j = 0; j < ne; ++j) fn(i * ne + j, mentions[i].text, entities[j].text);
      return;
    case Site::e2m_visual:
      for (std::size_t i = 0; i < mentions.size(); ++i)
        for (std::size_t j = 0; j < ne; ++j) fn(i * ne + j, mentions[i].visual, entities[j].visual);
      return;
  }
}

// Everything one site contributes to the objective.
struct SiteState {
  std::vector<std::vector<double>> pooled;  // cross-modal sites: per record
  Matrix scores;                            // m2e sites: S_T or S_V
  double kd = 0.0;
};

// Objective over one batch with per-site caches, so that perturbing one
// site's projections only recomputes what that site feeds.
class BatchObjective {
 public:
  BatchObjective(const TrainingBatch& batch, const ProjectionTable& table,
                 const ToyTrainConfig& cfg)
      : batch_(batch),
        cfg_(cfg),
        table_(table),
        mechanism_(cfg.objective == Objective::ot ? Mechanism::ot : Mechanism::attention) {
    if (batch.mentions.size() != batch.entities.size() || batch.mentions.empty())
      throw Error(ErrorKind::dimension, "training batch needs one gold entity per mention");
    if (cfg_.objective == Objective::kd) {
      for (Site s : kAllSites) {
        auto& plans = teacher_[static_cast<std::size_t>(s)];
        for_each_assignment(s, batch_.mentions, batch_.entities,
                            [&](std::size_t, const Matrix& dest, const Matrix& source) {
                              plans.push_back(ot_assign(dest, source, table_.at(s), cfg_.sinkhorn).a);
                            });
      }
    }
    for (Site s : kAllSites) state_[static_cast<std::size_t>(s)] = compute(s, table_.at(s));
  }

  LossBreakdown current() const { return assemble(std::nullopt, nullptr); }

  double with_site(Site s, const ProjectionSet& p) const {
    const SiteState st = compute(s, p);
    return assemble(s, &st).j;
  }

  std::vector<double> gradient(double h) const {
    std::vector<double> g;
    g.reserve(kSiteCount * 3 * table_.dim() * table_.dim());
    for (Site s : kAllSites) {
      ProjectionSet probe = table_.at(s);
      for (Matrix ProjectionSet::*w : {&ProjectionSet::w_q, &ProjectionSet::w_k, &ProjectionSet::w_h}) {
        auto values = (probe.*w).values();
        for (double& x : values) {
          const double saved = x;
          x = saved + h;
          const double up = with_site(s, probe);
          x = saved - h;
          const double down = with_site(s, probe);
          x = saved;
          g.push_back((up - down) / (2.0 * h));
        }
      }
    }
    return g;
  }

 private:
  SiteState compute(Site s, const ProjectionSet& p) const {
    SiteState st;
    const bool kd = cfg_.objective == Objective::kd;
    const auto& teacher = teacher_[static_cast<std::size_t>(s)];
    const std::size_t b = batch_.size();
    if (!is_unimodal(s)) st.pooled.resize(b);
    if (s == Site::m2e_text || s == Site::m2e_visual) st.scores = Matrix(b, b);
    const bool reverse = s == Site::e2m_text || s == Site::e2m_visual;
    if (reverse && !kd) return st;  // reverse sites only feed distillation

    for_each_assignment(s, batch_.mentions, batch_.entities,
                        [&](std::size_t idx, const Matrix& dest, const Matrix& source) {
                          const AssignmentResult r =
                              assign(mechanism_, dest, source, p, cfg_.sinkhorn);
                          if (kd) st.kd += kd_pair_loss(teacher[idx], r.logits);
                          if (reverse) return;
                          if (is_unimodal(s)) {
                            // dest is the entity matrix, source the mention matrix
                            st.scores(idx / b, idx % b) =
                                unimodal_score(r, source, dest, cfg_.pool);
                          } else {
                            st.pooled[idx] = pool({&dest, &r.g}, cfg_.pool);
                          }
                        });
    return st;
  }

  LossBreakdown assemble(std::optional<Site> swapped, const SiteState* replacement) const {
    auto get = [&](Site s) -> const SiteState& {
      if (swapped && *swapped == s) return *replacement;
      return state_[static_cast<std::size_t>(s)];
    };
    const std::size_t b = batch_.size();
    const auto& mt = get(Site::mention_v2t).pooled;
    const auto& mv = get(Site::mention_t2v).pooled;
    const auto& et = get(Site::entity_v2t).pooled;
    const auto& ev = get(Site::entity_t2v).pooled;
    BatchScores sc;
    sc.f = Matrix(b, b);
    sc.t = get(Site::m2e_text).scores;
    sc.v = get(Site::m2e_visual).scores;
    sc.o = Matrix(b, b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        sc.f(i, j) = kernels::dot(mt[i], et[j]) + kernels::dot(mv[i], ev[j]);
        sc.o(i, j) = (sc.f(i, j) + sc.t(i, j) + sc.v(i, j)) / 3.0;
      }
    LossBreakdown out;
    out.l_f = contrastive_loss(sc.f);
    out.l_t = contrastive_loss(sc.t);
    out.l_v = contrastive_loss(sc.v);
    out.l_o = contrastive_loss(sc.o);
    if (cfg_.objective == Objective::kd)
      for (Site s : kAllSites) out.l_kd += get(s).kd;
    out.j = out.l_o + out.l_f + out.l_t + out.l_v + out.l_kd;
    return out;
  }

  const TrainingBatch& batch_;
  ToyTrainConfig cfg_;
  ProjectionTable table_;
  Mechanism mechanism_;
  std::array<std::vector<Matrix>, kSiteCount> teacher_;
  std::array<SiteState, kSiteCount> state_;
};

}  // namespace

LossBreakdown evaluate_objective(const TrainingBatch& batch, const ProjectionTable& table,
                                 const ToyTrainConfig& cfg) {
  return BatchObjective(batch, table, cfg).current();
}

std::vector<double> fd_gradient(const TrainingBatch& batch, const ProjectionTable& table,
                                const ToyTrainConfig& cfg, double fd_step) {
  if (!(fd_step > 0.0)) throw Error(ErrorKind::config, "fd_step must be positive");
  return BatchObjective(batch, table, cfg).gradient(fd_step);
}

ToyTrainResult toy_train(const TrainingBatch& batch, ProjectionTable init,
                         const ToyTrainConfig& cfg) {
  check_toy_limits(batch, init.dim());
  if (!(cfg.fd_step > 0.0)) throw Error(ErrorKind::config, "fd_step must be positive");
  if (!std::isfinite(cfg.lr)) throw Error(ErrorKind::config, "learning rate must be finite");

  ToyTrainResult result{std::move(init), {}};
  auto objective = std::make_unique<BatchObjective>(batch, result.table, cfg);
  result.trace.push_back({0, objective->current()});
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const std::vector<double> g = objective->gradient(cfg.fd_step);
    std::size_t idx = 0;
    for (Site s : kAllSites) {
      ProjectionSet& p = result.table.at(s);
      for (Matrix* w : {&p.w_q, &p.w_k, &p.w_h})
        for (double& x : w->values()) x -= cfg.lr * g[idx++];
    }
    objective = std::make_unique<BatchObjective>(batch, result.table, cfg);
    result.trace.push_back({step, objective->current()});
  }
  return result;
}

std::array<SitePairs, kSiteCount> collect_distill_pairs(std::span<const MentionRecord> mentions,
                                                        std::span<const EntityRecord> entities,
                                                        const ProjectionTable& table,
                                                        const SinkhornConfig& cfg) {
  std::array<SitePairs, kSiteCount> out;
  for (Site s : kAllSites) {
    auto& sp = out[static_cast<std::size_t>(s)];
    sp.site = s;
    for_each_assignment(s, mentions, entities,
                        [&](std::size_t, const Matrix& dest, const Matrix& source) {
                          const ProjectionSet& p = table.at(s);
                          sp.pairs.push_back({ot_assign(dest, source, p, cfg).a,
                                              attention_assign(dest, source, p).logits});
                        });
  }
  return out;
}

std::vector<SiteGap> distillation_gap(std::span<const MentionRecord> mentions,
                                      std::span<const EntityRecord> entities,
                                      const ProjectionTable& table, const SinkhornConfig& cfg) {
  if (mentions.empty() || entities.empty())
    throw Error(ErrorKind::empty_input, "distillation report needs mentions and entities");
  const auto pairs = collect_distill_pairs(mentions, entities, table, cfg);
  auto gap = [&](std::string name, std::initializer_list<Site> sites) {
    SiteGap g{std::move(name), 0.0, 0};
    for (Site s : sites) {
      const auto& sp = pairs[static_cast<std::size_t>(s)].pairs;
      g.mean_kd += kd_loss(sp);
      g.count += sp.size();
    }
    g.mean_kd /= static_cast<double>(g.count);
    return g;
  };
  return {gap("mention_v2t", {Site::mention_v2t}), gap("mention_t2v", {Site::mention_t2v}),
          gap("entity_v2t", {Site::entity_v2t}),   gap("entity_t2v", {Site::entity_t2v}),
          gap("m2e", {Site::m2e_text, Site::m2e_visual}),
          gap("e2m", {Site::e2m_text, Site::e2m_visual})};
}

double mean_site_gap(const std::vector<SiteGap>& gaps) {
  if (gaps.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : gaps) total += g.mean_kd;
  return total / static_cast<double>(gaps.size());
}

}  // namespace otmel
