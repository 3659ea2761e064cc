#include "otmel/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "otmel/kernels.hpp"

namespace otmel {

std::string_view mechanism_name(Mechanism m) {
  return m == Mechanism::ot ? "ot" : "attention";
}

Mechanism parse_mechanism(std::string_view name) {
  if (name == "ot") return Mechanism::ot;
  if (name == "attention" || name == "att") return Mechanism::attention;
  throw Error(ErrorKind::parse, "unknown mechanism '" + std::string(name) + "'");
}

Projected project(const FeatureMatrix& dest, const FeatureMatrix& source, const ProjectionSet& p) {
  const std::size_t d = p.dim();
  if (dest.cols() != d || source.cols() != d || p.w_k.rows() != d || p.w_h.rows() != d) {
    std::ostringstream os;
    os << "projection for " << site_name(p.site) << " has d=" << d << " but features have d="
       << dest.cols() << " and d=" << source.cols();
    throw Error(ErrorKind::dimension, os.str());
  }
  return {matmul(dest, p.w_q), matmul(source, p.w_k), matmul(source, p.w_h)};
}

Matrix softmax_rows(const Matrix& s) {
  const auto& k = kernels::active();
  Matrix a(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto in = s.row(i);
    auto out = a.row(i);
    const double mx = k.max(in.data(), in.size());
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = std::exp(in[j] - mx);
    const double z = k.sum(out.data(), out.size());
    for (double& v : out) v /= z;
  }
  return a;
}

CostMatrix cosine_cost(const Matrix& q, const Matrix& kmat) {
  if (q.cols() != kmat.cols()) throw Error(ErrorKind::dimension, "cosine_cost: width mismatch");
  const auto& k = kernels::active();
  auto norms = [&](const Matrix& m, const char* label) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const auto r = m.row(i);
      out[i] = std::sqrt(k.dot(r.data(), r.data(), r.size()));
      if (!(out[i] > 0.0)) {
        std::ostringstream os;
        os << "cosine cost undefined: " << label << " row " << i << " has zero norm";
        throw Error(ErrorKind::zero_norm, os.str());
      }
    }
    return out;
  };
  const auto qn = norms(q, "query");
  const auto kn = norms(kmat, "key");
  CostMatrix c = matmul_bt(q, kmat);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) {
      const double cos = std::clamp(c(i, j) / (qn[i] * kn[j]), -1.0, 1.0);
      c(i, j) = 0.5 * (1.0 - cos);
    }
  return c;
}

AssignmentResult attention_assign(const FeatureMatrix& dest, const FeatureMatrix& source,
                                  const ProjectionSet& p) {
  auto [q, kmat, h] = project(dest, source, p);
  Matrix s = matmul_bt(q, kmat);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.dim()));
  for (double& v : s.values()) v *= scale;
  AssignmentResult r;
  r.a = softmax_rows(s);
  r.g = matmul(r.a, h);
  r.logits = std::move(s);
  r.mechanism = Mechanism::attention;
  return r;
}

AssignmentResult ot_assign(const FeatureMatrix& dest, const FeatureMatrix& source,
                           const ProjectionSet& p, const SinkhornConfig& cfg) {
  auto [q, kmat, h] = project(dest, source, p);
  CostMatrix c = cosine_cost(q, kmat);
  TransportPlan plan = sinkhorn(c, Marginals::uniform(c.rows(), c.cols()), cfg);
  AssignmentResult r;
  r.a = std::move(plan.data);
  r.g = matmul(r.a, h);
  r.logits = std::move(c);
  r.mechanism = Mechanism::ot;
  r.marginal_error = plan.achieved_marginal_error;
  r.iterations = plan.iterations_used;
  return r;
}

AssignmentResult assign(Mechanism mechanism, const FeatureMatrix& dest,
                        const FeatureMatrix& source, const ProjectionSet& p,
                        const SinkhornConfig& cfg) {
  return mechanism == Mechanism::ot ? ot_assign(dest, source, p, cfg)
                                    : attention_assign(dest, source, p);
}

Interaction interact(const FeatureMatrix& text, const FeatureMatrix& visual,
                     const ProjectionSet& v2t, const ProjectionSet& t2v, Mechanism mechanism,
                     const SinkhornConfig& cfg) {
  if (text.cols() != visual.cols())
    throw Error(ErrorKind::dimension, "text and visual features differ in width");
  return {assign(mechanism, text, visual, v2t, cfg), assign(mechanism, visual, text, t2v, cfg)};
}

Interaction interact_record(const MentionRecord& rec, const ProjectionTable& table,
                            Mechanism mechanism, const SinkhornConfig& cfg) {
  return interact(rec.text, rec.visual, table.at(Site::mention_v2t), table.at(Site::mention_t2v),
                  mechanism, cfg);
}

Interaction interact_record(const EntityRecord& rec, const ProjectionTable& table,
                            Mechanism mechanism, const SinkhornConfig& cfg) {
  return interact(rec.text, rec.visual, table.at(Site::entity_v2t), table.at(Site::entity_t2v),
                  mechanism, cfg);
}

double argmax_recovery(const Matrix& a, const std::vector<std::size_t>& truth) {
  if (truth.size() != a.rows()) throw Error(ErrorKind::dimension, "truth length != rows");
  if (a.rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    if (best == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(a.rows());
}

double feature_recovery(const Matrix& g, const Matrix& h, const std::vector<std::size_t>& truth) {
  if (truth.size() != g.rows()) throw Error(ErrorKind::dimension, "truth length != rows");
  if (g.rows() == 0) return 0.0;
  const CostMatrix c = cosine_cost(g, h);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    const auto r = c.row(i);
    const auto best = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
    if (best == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(g.rows());
}

}  // namespace otmel
