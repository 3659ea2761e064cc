// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "otmel/core_types.hpp"
#include "otmel/correlation.hpp"
#include "otmel/data_io.hpp"
#include "otmel/eval.hpp"
#include "otmel/matching.hpp"
#include "otmel/objectives.hpp"
#include "otmel/ot_solver.hpp"
#include "otmel/rng.hpp"

using namespace otmel;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix uniform_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& x : m.values()) x = rng.uniform();
  return m;
}

std::vector<double> random_distribution(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double total = 0.0;
  for (double& x : p) total += (x = rng.uniform(0.01, 1.0));
  for (double& x : p) x /= total;
  double s = 0.0;
  for (double x : p) s += x;
  p[0] += 1.0 - s;
  return p;
}

// 1. Sinkhorn feasibility
Outcome sinkhorn_feasibility() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  const double lambdas[] = {0.1, 0.6, 5.0, 50.0};
  std::size_t converged = 0, violations = 0;
  std::size_t per_lambda[4] = {0, 0, 0, 0};
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(64), m = 1 + rng.below(64);
    Matrix c = uniform_matrix(rng, n, m);
    Marginals mg{random_distribution(rng, n), random_distribution(rng, m)};
    TransportPlan p = sinkhorn(c, mg, {.lambda = lambdas[t % 4]});
    if (!p.converged) continue;
    ++converged;
    ++per_lambda[t % 4];
    const double err = marginal_error(p.data, mg).total();
    worst = std::max(worst, err);
    if (!(err < 1e-6)) ++violations;
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && converged > 0 && secs < 30.0,
          fmt("%zu/1000 converged (lambda 0.1: %zu/250, 0.6: %zu/250, 5: %zu/250, 50: %zu/250), "
              "worst L1 error among converged %.3g, %.2f s",
              converged, per_lambda[0], per_lambda[1], per_lambda[2], per_lambda[3], worst, secs)};
}

// 2. Oracle equivalence
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(2002);
  double worst_above = 0.0, worst_below = 0.0;
  bool ok = true;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(6);
    Matrix c = uniform_matrix(rng, n, n);
    const double exact = transport_cost(c, exact_ot_uniform_square(c));
    const double approx = transport_cost(c, sinkhorn(c, Marginals::uniform(n, n), {.lambda = 50}));
    worst_above = std::max(worst_above, approx - exact);
    worst_below = std::max(worst_below, exact - approx);
    if (!(std::fabs(approx - exact) <= 1e-2) || exact - approx > 1e-12) ok = false;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 10.0, fmt("max excess %.3g, max shortfall %.3g, %.2f s", worst_above,
                                 std::max(worst_below, 0.0), secs)};
}

// 3. Entropy sweep
Outcome entropy_sweep() {
  const std::vector<double> grid{0.05, 0.1, 0.3, 0.6, 1.0, 3.0, 10.0, 50.0};
  // eight text rows onto four visual rows, with visual row 1 planted three
  // times and row 0 once
  FixtureSpec spec;
  spec.seed = 3003;
  spec.d = 16;
  spec.n_entities = 40;
  spec.n_mentions = 0;
  spec.text_len = 8;
  spec.visual_len = 4;
  spec.noise_sigma = 0.3;
  const Fixture fx = make_fixture(spec);
  const ProjectionTable table = ProjectionTable::identity(spec.d);
  const ProjectionSet& p = table.at(Site::entity_v2t);

  bool monotone = true;
  std::vector<double> recovery;
  std::vector<double> mean_entropy;
  for (double lambda : grid) {
    double hits = 0.0, h = 0.0;
    for (std::size_t r = 0; r < fx.dataset.entities.size(); ++r) {
      const auto& e = fx.dataset.entities[r];
      const AssignmentResult a = ot_assign(e.text, e.visual, p, {.lambda = lambda});
      hits += feature_recovery(a.g, matmul(e.visual, p.w_h), fx.truth.text_to_visual[r]);
      h += plan_entropy(a.a);
    }
    recovery.push_back(hits / fx.dataset.entities.size());
    mean_entropy.push_back(h / fx.dataset.entities.size());
  }
  // entropy must not rise along the grid on any single record either
  for (std::size_t r = 0; r < fx.dataset.entities.size() && monotone; ++r) {
    const auto& e = fx.dataset.entities[r];
    const Matrix c = cosine_cost(matmul(e.text, p.w_q), matmul(e.visual, p.w_k));
    double prev = INFINITY;
    for (double lambda : grid) {
      const double h = plan_entropy(sinkhorn(c, Marginals::uniform(c.rows(), c.cols()),
                                             {.lambda = lambda}));
      if (h > prev + 1e-12) monotone = false;
      prev = h;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (recovery[i] > recovery[best]) best = i;
  const bool interior = recovery[best] > recovery.front() && recovery[best] > recovery.back();
  std::string curve;
  for (std::size_t i = 0; i < grid.size(); ++i)
    curve += fmt("%s%g:%.3f", i ? " " : "", grid[i], recovery[i]);
  return {monotone && interior,
          fmt("entropy %s (%.3f -> %.3f); recovery by lambda [%s], best at %g",
              monotone ? "nonincreasing" : "NOT monotone", mean_entropy.front(),
              mean_entropy.back(), curve.c_str(), grid[best])};
}

// 4. Anti-domination witness
Outcome anti_domination() {
  Rng rng(4004);
  const std::size_t d = 8, n = 6, m = 5;
  // queries share one direction plus small perturbations
  std::vector<double> dir(d);
  for (double& x : dir) x = rng.normal();
  Matrix dest(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) dest(i, c) = dir[c] + 0.3 * rng.normal();
  Matrix source(m, d);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < d; ++c) source(j, c) = rng.normal();
  // key row 2 duplicates the shared query direction at large scale
  for (std::size_t c = 0; c < d; ++c) source(2, c) = 4.0 * dir[c];

  const ProjectionTable table = ProjectionTable::identity(d);
  const ProjectionSet& p = table.at(Site::mention_v2t);
  const AssignmentResult att = attention_assign(dest, source, p);
  const AssignmentResult ot = ot_assign(dest, source, p, {});
  auto max_column_mass = [](const Matrix& a, double row_mass) {
    double best = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j);
      best = std::max(best, s / (row_mass * a.rows()));
    }
    return best;
  };
  // attention rows carry mass 1 each, OT rows 1/n each; both are reported
  // as a fraction of the total
  const double att_mass = max_column_mass(att.a, 1.0);
  const double ot_mass = max_column_mass(ot.a, 1.0 / n);
  return {att_mass > 0.9 && ot_mass <= 1.0 / m + 1e-6,
          fmt("attention max column mass %.4f, OT max column mass %.9f (bound %.9f)", att_mass,
              ot_mass, 1.0 / m + 1e-6)};
}

// 5. Distillation efficacy
Outcome distillation_efficacy() {
  const auto t0 = Clock::now();
  FixtureSpec spec;
  spec.d = 8;
  spec.n_entities = 4;
  spec.n_mentions = 4;
  spec.text_len = 6;
  spec.visual_len = 4;
  spec.noise_sigma = 0.3;
  spec.seed = 5005;
  const Fixture train = make_fixture(spec);
  spec.seed = 5006;
  const Fixture held_out = make_fixture(spec);

  const ProjectionTable init = ProjectionTable::random_orthogonal(spec.d, 5);
  ToyTrainConfig cfg;
  cfg.objective = Objective::kd;
  cfg.steps = 150;
  cfg.lr = 0.02;
  const TrainingBatch batch{train.dataset.mentions, train.dataset.entities};
  const ToyTrainResult trained = toy_train(batch, init, cfg);

  const auto& hm = held_out.dataset.mentions;
  const auto& he = held_out.dataset.entities;
  const double before = mean_site_gap(distillation_gap(hm, he, init, cfg.sinkhorn));
  const double after = mean_site_gap(distillation_gap(hm, he, trained.table, cfg.sinkhorn));
  const double drop = 1.0 - after / before;
  const double secs = seconds_since(t0);
  return {drop >= 0.5 && secs < 300.0,
          fmt("held-out mean per-site KL %.4f -> %.4f (%.1f%% lower), %zu steps, d=%zu, %.1f s",
              before, after, 100.0 * drop, cfg.steps, spec.d, secs)};
}

// 6. Planted-linking accuracy
Outcome planted_linking() {
  auto h1 = [](const Fixture& fx, Mechanism mech, std::uint64_t seed) {
    ScoringConfig sc;
    sc.mechanism = mech;
    Scorer scorer(ProjectionTable::random_orthogonal(fx.dataset.d, seed), sc);
    return hits_at_k(rank_all(fx.dataset.mentions, fx.dataset.entities, scorer), 1);
  };
  FixtureSpec spec;
  spec.d = 16;
  spec.n_entities = 20;
  spec.n_mentions = 20;

  bool noiseless_ok = true;
  double noiseless_min = 1.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    spec.seed = 6000 + s;
    spec.noise_sigma = 0.0;
    const double v = h1(make_fixture(spec), Mechanism::ot, s);
    noiseless_min = std::min(noiseless_min, v);
    if (v != 1.0) noiseless_ok = false;
  }
  double ot = 0.0, att = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    spec.seed = 6100 + s;
    spec.noise_sigma = 0.5;
    const Fixture fx = make_fixture(spec);
    ot += h1(fx, Mechanism::ot, s);
    att += h1(fx, Mechanism::attention, s);
  }
  ot /= 20;
  att /= 20;
  return {noiseless_ok && ot >= att,
          fmt("noiseless OT H@1 min %.2f; sigma 0.5 over 20 seeds: OT H@1 %.2f, attention H@1 %.2f",
              100.0 * noiseless_min, 100.0 * ot, 100.0 * att)};
}

// 7. Metric unit tests
Outcome metric_units() {
  const std::vector<std::size_t> ranks{1, 2, 4};
  const std::string h1 = fmt("%.2f", 100.0 * hits_at_k(ranks, 1));
  const std::string h3 = fmt("%.2f", 100.0 * hits_at_k(ranks, 3));
  const std::string m = fmt("%.2f", 100.0 * mrr(ranks));
  const bool exact = hits_at_k(ranks, 1) == 1.0 / 3 && hits_at_k(ranks, 3) == 2.0 / 3 &&
                     std::fabs(mrr(ranks) - 7.0 / 12) < 1e-15;
  return {exact && h1 == "33.33" && h3 == "66.67" && m == "58.33",
          fmt("H@1 %s%%, H@3 %s%%, MRR %s%%", h1.c_str(), h3.c_str(), m.c_str())};
}

// 8. Loss identities
Outcome loss_identities() {
  double worst_uniform = 0.0;
  for (std::size_t b : {2u, 4u, 8u})
    worst_uniform = std::max(worst_uniform,
                             std::fabs(contrastive_loss(Matrix(b, b, 0.7)) - std::log(double(b))));

  Rng rng(8008);
  double worst_l = 0.0, worst_j = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t b = 1 + rng.below(8);
    BatchScores s;
    for (Matrix* m : {&s.f, &s.t, &s.v, &s.o}) {
      *m = Matrix(b, b);
      for (double& x : m->values()) x = 3.0 * rng.normal();
    }
    const double parts = contrastive_loss(s.o) + contrastive_loss(s.f) + contrastive_loss(s.t) +
                         contrastive_loss(s.v);
    const double l = total_matching_loss(s);
    worst_l = std::max(worst_l, std::fabs(l - parts));
    std::vector<DistillPair> pairs;
    for (int k = 0; k < 3; ++k) {
      Matrix c(3, 4);
      for (double& x : c.values()) x = rng.uniform();
      Matrix logits(3, 4);
      for (double& x : logits.values()) x = rng.normal();
      pairs.push_back({sinkhorn(c, Marginals::uniform(3, 4)).data, logits});
    }
    worst_j = std::max(worst_j, std::fabs(total_loss_with_kd(s, pairs) - (l + kd_loss(pairs))));
  }
  // the same decompositions on the toy objective over fixture batches
  FixtureSpec spec;
  spec.d = 6;
  spec.n_entities = 3;
  spec.n_mentions = 3;
  spec.text_len = 4;
  spec.visual_len = 3;
  spec.noise_sigma = 0.3;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    spec.seed = 8100 + seed;
    const Fixture fx = make_fixture(spec);
    const TrainingBatch batch{fx.dataset.mentions, fx.dataset.entities};
    const LossBreakdown lb =
        evaluate_objective(batch, ProjectionTable::random_orthogonal(6, seed), {});
    worst_j = std::max(worst_j, std::fabs(lb.j - (lb.l_o + lb.l_f + lb.l_t + lb.l_v + lb.l_kd)));
  }
  const bool ok = worst_uniform <= 1e-12 && worst_l <= 1e-12 && worst_j <= 1e-12;
  return {ok, fmt("|L(uniform) - log b| max %.2g; L decomposition max %.2g; J decomposition max %.2g",
                  worst_uniform, worst_l, worst_j)};
}

// 9. Finite-difference sanity
Outcome fd_sanity() {
  FixtureSpec spec;
  spec.d = 4;
  spec.n_entities = 3;
  spec.n_mentions = 3;
  spec.text_len = 4;
  spec.visual_len = 3;
  spec.noise_sigma = 0.2;
  spec.seed = 9009;
  const Fixture fx = make_fixture(spec);
  const TrainingBatch batch{fx.dataset.mentions, fx.dataset.entities};
  const ProjectionTable table = ProjectionTable::random_orthogonal(spec.d, 9);
  bool ok = true;
  std::string detail;
  for (Objective obj : {Objective::kd, Objective::ot}) {
    ToyTrainConfig cfg;
    cfg.objective = obj;
    cfg.sinkhorn.tol = 1e-12;
    cfg.sinkhorn.max_iter = 100000;
    const auto g1 = fd_gradient(batch, table, cfg, cfg.fd_step);
    const auto g2 = fd_gradient(batch, table, cfg, cfg.fd_step / 2);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
      diff += (g1[i] - g2[i]) * (g1[i] - g2[i]);
      norm += g2[i] * g2[i];
    }
    const double rel = std::sqrt(diff / norm);
    if (!(rel <= 0.05)) ok = false;
    detail += fmt("%s%s objective relative gap %.3g", detail.empty() ? "" : ", ",
                  std::string(objective_name(obj)).c_str(), rel);
  }
  return {ok, detail};
}

// 10. Format round-trip
Outcome format_round_trip() {
  const fs::path dir = fs::temp_directory_path() / "otmel_acceptance_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  Rng rng(10010);
  std::size_t identical = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t r = 1 + rng.below(40), c = 1 + rng.below(40);
    Matrix m(r, c);
    for (double& x : m.values()) x = static_cast<float>(rng.normal() * std::exp(rng.uniform(-10, 10)));
    const fs::path a = dir / "a.otml", b = dir / "b.otml";
    write_feature_file(m, a);
    const Matrix back = read_feature_file(a);
    write_feature_file(back, b);
    if (back == m && slurp(a) == slurp(b)) ++identical;
  }
  fs::remove_all(dir);

  const auto good = encode_feature_matrix(Matrix(2, 3, 1.0));
  auto kind_of = [](std::vector<std::uint8_t> bytes) {
    try {
      decode_feature_matrix(bytes);
    } catch (const Error& e) {
      return std::string(to_string(e.kind()));
    }
    return std::string("none");
  };
  auto magic = good;
  std::memcpy(magic.data(), "XXXX", 4);
  auto truncated = good;
  truncated.resize(good.size() - 1);
  auto header = good;
  header.resize(7);
  auto version = good;
  version[4] = 9;
  const std::string k1 = kind_of(magic), k2 = kind_of(truncated), k3 = kind_of(header),
                    k4 = kind_of(version);
  const bool ok = identical == 100 && k1 == "bad_magic" && k2 == "truncated" &&
                  k3 == "truncated" && k4 == "version";
  return {ok, fmt("%zu/100 byte-identical; bad magic -> %s, short payload -> %s, short header -> %s, "
                  "version 9 -> %s",
                  identical, k1.c_str(), k2.c_str(), k3.c_str(), k4.c_str())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"Sinkhorn feasibility", sinkhorn_feasibility},
      {"Oracle equivalence", oracle_equivalence},
      {"Entropy sweep", entropy_sweep},
      {"Anti-domination witness", anti_domination},
      {"Distillation efficacy", distillation_efficacy},
      {"Planted-linking accuracy", planted_linking},
      {"Metric unit tests", metric_units},
      {"Loss identities", loss_identities},
      {"Finite-difference sanity", fd_sanity},
      {"Format round-trip", format_round_trip},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
