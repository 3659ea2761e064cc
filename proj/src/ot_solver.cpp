#include "otmel/ot_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "otmel/kernels.hpp"

namespace otmel {

namespace {

constexpr double kMarginalSumTol = 1e-12;

void check_distribution(const std::vector<double>& p, const char* name) {
  if (p.empty()) throw Error(ErrorKind::invalid_marginals, std::string(name) + " is empty");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0) {
      std::ostringstream os;
      os << name << "[" << i << "] = " << p[i] << " is not a nonnegative finite mass";
      throw Error(ErrorKind::invalid_marginals, os.str());
    }
    total += p[i];
  }
  if (std::fabs(total - 1.0) > kMarginalSumTol) {
    std::ostringstream os;
    os.precision(17);
    os << name << " sums to " << total << ", expected 1";
    throw Error(ErrorKind::invalid_marginals, os.str());
  }
}

}  // namespace

Marginals Marginals::uniform(std::size_t n, std::size_t m) {
  return {std::vector<double>(n, 1.0 / static_cast<double>(n)),
          std::vector<double>(m, 1.0 / static_cast<double>(m))};
}

void Marginals::check() const {
  check_distribution(mu, "mu");
  check_distribution(nu, "nu");
}

void SinkhornConfig::check() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw Error(ErrorKind::config, "sinkhorn lambda must be positive");
  if (!(tol > 0.0)) throw Error(ErrorKind::config, "sinkhorn tol must be positive");
  if (!(floor >= 0.0)) throw Error(ErrorKind::config, "sinkhorn floor must be nonnegative");
}

MarginalError marginal_error(const Matrix& plan, const Marginals& marginals) {
  if (plan.rows() != marginals.mu.size() || plan.cols() != marginals.nu.size())
    throw Error(ErrorKind::dimension, "plan shape does not match marginals");
  const auto& k = kernels::active();
  MarginalError err;
  std::vector<double> col(plan.cols(), 0.0);
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto r = plan.row(i);
    err.rows += std::fabs(k.sum(r.data(), r.size()) - marginals.mu[i]);
    k.axpy(1.0, r.data(), col.data(), col.size());
  }
  err.cols = k.l1_dist(col.data(), marginals.nu.data(), col.size());
  return err;
}

void round_to_marginals(Matrix& plan, const Marginals& marginals) {
  const std::size_t n = plan.rows();
  const std::size_t m = plan.cols();
  if (n != marginals.mu.size() || m != marginals.nu.size())
    throw Error(ErrorKind::dimension, "plan shape does not match marginals");
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = plan.row(i);
    const double s = std::accumulate(r.begin(), r.end(), 0.0);
    if (s > marginals.mu[i])
      for (double& x : r) x *= marginals.mu[i] / s;
  }
  std::vector<double> col(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) col[j] += plan(i, j);
  for (std::size_t j = 0; j < m; ++j)
    if (col[j] > marginals.nu[j]) {
      const double f = marginals.nu[j] / col[j];
      for (std::size_t i = 0; i < n; ++i) plan(i, j) *= f;
    }
  // Both deficits are now nonnegative with equal totals; spread them as a
  // rank-one correction.
  std::vector<double> dr(n);
  std::vector<double> dc(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = plan.row(i);
    dr[i] = std::max(marginals.mu[i] - std::accumulate(r.begin(), r.end(), 0.0), 0.0);
    for (std::size_t j = 0; j < m; ++j) dc[j] += r[j];
  }
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    dc[j] = std::max(marginals.nu[j] - dc[j], 0.0);
    total += dc[j];
  }
  if (total <= 0.0) return;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) plan(i, j) += dr[i] * dc[j] / total;
}

TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornConfig& cfg) {
  cfg.check();
  marginals.check();
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  if (n != marginals.mu.size() || m != marginals.nu.size()) {
    std::ostringstream os;
    os << "cost is " << n << "x" << m << " but marginals have lengths " << marginals.mu.size()
       << " and " << marginals.nu.size();
    throw Error(ErrorKind::dimension, os.str());
  }
  if (n == 0 || m == 0) throw Error(ErrorKind::dimension, "empty cost matrix");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (!std::isfinite(cost(i, j))) {
        std::ostringstream os;
        os << "cost(" << i << "," << j << ") is not finite";
        throw Error(ErrorKind::non_finite, os.str());
      }

  const auto& k = kernels::active();
  Matrix kernel(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      kernel(i, j) = std::max(std::exp(-cfg.lambda * cost(i, j)), cfg.floor);

  const auto& mu = marginals.mu;
  const auto& nu = marginals.nu;
  std::vector<double> u(n, 1.0);
  std::vector<double> v(m, 1.0);
  std::vector<double> kv(n);
  std::vector<double> ktu(m);
  std::vector<double> col(m);

  // Row sums of diag(u) K diag(v) are u_i (Kv)_i and column sums v_j (K^T u)_j,
  // so the error check reuses the products the next update needs.
  auto measured_error = [&] {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += std::fabs(u[i] * kv[i] - mu[i]);
    for (std::size_t j = 0; j < m; ++j) col[j] = v[j] * ktu[j];
    return e + k.l1_dist(col.data(), nu.data(), m);
  };

  std::size_t iter = 0;
  bool converged = false;
  while (true) {
    for (std::size_t i = 0; i < n; ++i) kv[i] = k.dot(kernel.row(i).data(), v.data(), m);
    if (iter > 0 && measured_error() < cfg.tol) {
      converged = true;
      break;
    }
    if (iter == cfg.max_iter) break;
    for (std::size_t i = 0; i < n; ++i) u[i] = mu[i] / std::max(kv[i], cfg.floor);
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) k.axpy(u[i], kernel.row(i).data(), ktu.data(), m);
    for (std::size_t j = 0; j < m; ++j) v[j] = nu[j] / std::max(ktu[j], cfg.floor);
    ++iter;
  }

  TransportPlan plan;
  plan.data = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    k.scaled_mul(u[i], kernel.row(i).data(), v.data(), plan.data.row(i).data(), m);
  plan.iterations_used = iter;
  plan.scaling_error = marginal_error(plan.data, marginals).total();
  plan.converged = converged && plan.scaling_error < cfg.tol;
  round_to_marginals(plan.data, marginals);
  plan.achieved_marginal_error = marginal_error(plan.data, marginals).total();
  return plan;
}

TransportPlan exact_ot_uniform_square(const CostMatrix& cost) {
  const std::size_t n = cost.rows();
  if (n != cost.cols()) throw Error(ErrorKind::dimension, "exact oracle needs a square cost");
  if (n == 0) throw Error(ErrorKind::dimension, "empty cost matrix");
  if (n > 8) throw Error(ErrorKind::size_guard, "exact oracle limited to n <= 8");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_cost = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost(i, perm[i]);
    // strict: the first permutation in lexicographic order wins ties
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  TransportPlan plan;
  plan.data = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) plan.data(i, best[i]) = 1.0 / static_cast<double>(n);
  plan.achieved_marginal_error = marginal_error(plan.data, Marginals::uniform(n, n)).total();
  plan.iterations_used = 0;
  plan.converged = true;
  return plan;
}

double transport_cost(const CostMatrix& cost, const Matrix& plan) {
  if (cost.rows() != plan.rows() || cost.cols() != plan.cols())
    throw Error(ErrorKind::dimension, "cost and plan shapes differ");
  return kernels::dot(cost.values(), plan.values());
}

double plan_entropy(const Matrix& plan) {
  double h = 0.0;
  for (double p : plan.values()) {
    if (p < 0.0) throw Error(ErrorKind::invalid_marginals, "plan has a negative entry");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace otmel
