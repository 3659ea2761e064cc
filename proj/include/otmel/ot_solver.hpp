#pragma once

// Entropy-regularized discrete optimal transport.
//
// The kernel is K = exp(-lambda * C): larger lambda means weaker entropic
// smoothing and a plan closer to the unregularized optimum.

#include <cstddef>
#include <vector>

#include "otmel/core_types.hpp"

namespace otmel {

// n x m transport costs, row-major.
using CostMatrix = Matrix;

struct Marginals {
  std::vector<double> mu;  // length n
  std::vector<double> nu;  // length m

  static Marginals uniform(std::size_t n, std::size_t m);

  // Throws Error(invalid_marginals) on negative or non-finite entries, or
  // when either vector does not sum to 1 within 1e-12.
  void check() const;
};

struct TransportPlan {
  Matrix data;
  // ||P 1 - mu||_1 + ||P^T 1 - nu||_1 of `data` as returned.
  double achieved_marginal_error = 0.0;
  // Same measure for the scaling iterate diag(u) K diag(v) before rounding.
  double scaling_error = 0.0;
  std::size_t iterations_used = 0;
  bool converged = false;

  std::size_t rows() const noexcept { return data.rows(); }
  std::size_t cols() const noexcept { return data.cols(); }
};

struct SinkhornConfig {
  double lambda = 0.6;
  double tol = 1e-6;
  std::size_t max_iter = 1000;
  double floor = 1e-300;

  void check() const;
};

// Alternating u <- mu / (K v), v <- nu / (K^T u) from u = v = 1, stopping once
// the L1 marginal error of diag(u) K diag(v) drops below cfg.tol. Running out
// of iterations is not an error; the plan comes back with converged = false.
// The final iterate is then rounded onto the marginals, so the returned plan
// is feasible up to floating point even when scaling stopped early.
TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornConfig& cfg = {});

// Exact optimum for n == m <= 8 under uniform marginals, by enumerating the
// n! permutation plans. Ties go to the lexicographically smallest permutation.
TransportPlan exact_ot_uniform_square(const CostMatrix& cost);

// sum_ij C_ij P_ij
double transport_cost(const CostMatrix& cost, const Matrix& plan);
inline double transport_cost(const CostMatrix& cost, const TransportPlan& plan) {
  return transport_cost(cost, plan.data);
}

// -sum_ij P_ij log P_ij, with 0 log 0 = 0.
double plan_entropy(const Matrix& plan);
inline double plan_entropy(const TransportPlan& plan) { return plan_entropy(plan.data); }

struct MarginalError {
  double rows = 0.0;
  double cols = 0.0;
  double total() const { return rows + cols; }
};

// Scales down rows above mu and columns above nu, then adds a rank-one fill
// for the remaining deficits. Changes the plan by at most twice its L1
// marginal error.
void round_to_marginals(Matrix& plan, const Marginals& marginals);

MarginalError marginal_error(const Matrix& plan, const Marginals& marginals);

}  // namespace otmel
