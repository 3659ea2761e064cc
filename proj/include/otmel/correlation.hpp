#pragma once

// Correlation assignment between two feature sequences.
//
// The destination sequence supplies queries; the source sequence supplies
// keys and values. A row i of the assignment distributes destination element
// i over the source elements, and G = A H carries source values over to the
// destination positions.

#include <cstddef>
#include <string_view>
#include <vector>

#include "otmel/core_types.hpp"
#include "otmel/ot_solver.hpp"

namespace otmel {

enum class Mechanism { attention, ot };

std::string_view mechanism_name(Mechanism m);
Mechanism parse_mechanism(std::string_view name);

struct Projected {
  Matrix q;  // dest * W_q
  Matrix k;  // source * W_k
  Matrix h;  // source * W_h
};

Projected project(const FeatureMatrix& dest, const FeatureMatrix& source, const ProjectionSet& p);

struct AssignmentResult {
  Matrix a;       // n x m
  Matrix g;       // n x d, always a * h
  Matrix logits;  // attention: S = Q K^T / sqrt(d); ot: the cosine cost C
  Mechanism mechanism = Mechanism::attention;
  // ot only
  double marginal_error = 0.0;
  std::size_t iterations = 0;
};

// C_ij = (1 - cos(Q_i, K_j)) / 2. Throws Error(zero_norm) naming the row.
CostMatrix cosine_cost(const Matrix& q, const Matrix& k);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& s);

AssignmentResult attention_assign(const FeatureMatrix& dest, const FeatureMatrix& source,
                                  const ProjectionSet& p);

AssignmentResult ot_assign(const FeatureMatrix& dest, const FeatureMatrix& source,
                           const ProjectionSet& p, const SinkhornConfig& cfg);

AssignmentResult assign(Mechanism mechanism, const FeatureMatrix& dest,
                        const FeatureMatrix& source, const ProjectionSet& p,
                        const SinkhornConfig& cfg);

// Both cross-modal directions for one record.
struct Interaction {
  AssignmentResult v2t;  // text rows receive visual values: G^{v->t} is L_t x d
  AssignmentResult t2v;  // visual rows receive text values: G^{t->v} is L_v x d
};

Interaction interact(const FeatureMatrix& text, const FeatureMatrix& visual,
                     const ProjectionSet& v2t, const ProjectionSet& t2v, Mechanism mechanism,
                     const SinkhornConfig& cfg);

Interaction interact_record(const MentionRecord& rec, const ProjectionTable& table,
                            Mechanism mechanism, const SinkhornConfig& cfg);
Interaction interact_record(const EntityRecord& rec, const ProjectionTable& table,
                            Mechanism mechanism, const SinkhornConfig& cfg);

// Fraction of destination rows whose largest assignment weight sits on the
// planted source row. `truth[i]` is the planted source index of row i.
double argmax_recovery(const Matrix& a, const std::vector<std::size_t>& truth);

// Fraction of destination rows whose transported feature g_i is closest in
// cosine to the planted source value row h_{truth[i]}.
double feature_recovery(const Matrix& g, const Matrix& h, const std::vector<std::size_t>& truth);

}  // namespace otmel
