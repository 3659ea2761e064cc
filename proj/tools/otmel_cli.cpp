// otmel: command-line front end.
//
// Exit codes: 0 success, 2 parse, 3 dimension, 4 config/guard,
// 5 data resolution, 1 anything unexpected.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "otmel/core_types.hpp"
#include "otmel/correlation.hpp"
#include "otmel/data_io.hpp"
#include "otmel/eval.hpp"
#include "otmel/matching.hpp"
#include "otmel/objectives.hpp"
#include "otmel/ot_solver.hpp"

namespace fs = std::filesystem;
using namespace otmel;

namespace {

struct RunConfig {
  Mechanism mechanism = Mechanism::ot;
  SinkhornConfig sinkhorn;
  Ablations ablations;
  std::string projections_path;
  std::string init = "random";
  std::uint64_t seed = 0;
  std::size_t threads = 0;

  void check() const {
    sinkhorn.check();
    if (ablations.no_fusm && ablations.no_unim)
      throw Error(ErrorKind::config, "no_fusm and no_unim together leave no score");
  }
};

void apply_ablation(Ablations& ab, const std::string& item) {
  if (item == "no_fusm") {
    ab.no_fusm = true;
  } else if (item == "no_unim") {
    ab.no_unim = true;
  } else if (item.rfind("pool=", 0) == 0) {
    try {
      ab.pool = parse_pool(item.substr(5));
    } catch (const Error& e) {
      throw Error(ErrorKind::config, e.what());
    }
  } else {
    throw Error(ErrorKind::config, "unknown ablation '" + item + "'");
  }
}

RunConfig read_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::parse, path.string() + ": expected a JSON object");
  RunConfig rc;
  try {
    if (doc.contains("mechanism"))
      rc.mechanism = parse_mechanism(doc["mechanism"].get<std::string>());
    if (doc.contains("lambda")) rc.sinkhorn.lambda = doc["lambda"].get<double>();
    if (doc.contains("tol")) rc.sinkhorn.tol = doc["tol"].get<double>();
    if (doc.contains("max_iter")) rc.sinkhorn.max_iter = doc["max_iter"].get<std::size_t>();
    if (doc.contains("ablations"))
      for (const auto& a : doc["ablations"]) apply_ablation(rc.ablations, a.get<std::string>());
    if (doc.contains("projections_path")) {
      fs::path p = doc["projections_path"].get<std::string>();
      if (p.is_relative()) p = path.parent_path() / p;
      rc.projections_path = p.string();
    }
    if (doc.contains("init")) rc.init = doc["init"].get<std::string>();
    if (doc.contains("seed")) rc.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("threads")) rc.threads = doc["threads"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return rc;
}

// Solver and projection flags shared by several subcommands. Values land in
// `rc` only when the flag was given, so they override a config file.
struct CommonFlags {
  double lambda = 0.6;
  double tol = 1e-6;
  std::size_t max_iter = 1000;
  std::string proj;
  std::string init = "random";
  std::uint64_t seed = 0;
  CLI::Option* o_lambda = nullptr;
  CLI::Option* o_tol = nullptr;
  CLI::Option* o_max_iter = nullptr;
  CLI::Option* o_proj = nullptr;
  CLI::Option* o_init = nullptr;
  CLI::Option* o_seed = nullptr;

  void add_solver(CLI::App& cmd) {
    o_lambda = cmd.add_option("--lambda", lambda, "kernel sharpness in exp(-lambda C)");
    o_tol = cmd.add_option("--tol", tol, "L1 marginal error tolerance");
    o_max_iter = cmd.add_option("--max-iter", max_iter, "Sinkhorn iteration cap");
  }
  void add_projection(CLI::App& cmd) {
    o_proj = cmd.add_option("--proj", proj, "projections.json from train-toy --save-proj");
    o_init = cmd.add_option("--init", init, "projections when --proj is absent")
                 ->check(CLI::IsMember({"identity", "random"}));
    o_seed = cmd.add_option("--seed", seed, "seed for random projections");
  }
  void apply(RunConfig& rc) const {
    if (o_lambda && o_lambda->count()) rc.sinkhorn.lambda = lambda;
    if (o_tol && o_tol->count()) rc.sinkhorn.tol = tol;
    if (o_max_iter && o_max_iter->count()) rc.sinkhorn.max_iter = max_iter;
    if (o_proj && o_proj->count()) rc.projections_path = proj;
    if (o_init && o_init->count()) rc.init = init;
    if (o_seed && o_seed->count()) rc.seed = seed;
  }
};

ProjectionTable load_table(const RunConfig& rc, std::size_t d) {
  if (!rc.projections_path.empty()) {
    ProjectionTable t = load_projections(rc.projections_path);
    if (t.dim() != d)
      throw Error(ErrorKind::dimension, "projections have d=" + std::to_string(t.dim()) +
                                            " but features have d=" + std::to_string(d));
    return t;
  }
  if (rc.init == "identity") return ProjectionTable::identity(d);
  return ProjectionTable::random_orthogonal(d, rc.seed);
}

std::vector<double> parse_vector(const std::string& text, const char* flag) {
  std::istringstream in(text);
  Matrix m = read_csv_matrix(in, flag);
  if (m.rows() != 1) throw Error(ErrorKind::parse, std::string(flag) + ": expected one line");
  return {m.values().begin(), m.values().end()};
}

Matrix read_matrix_any(const fs::path& path) {
  if (path.extension() == ".csv") return read_csv_matrix(path);
  return read_feature_file(path);
}

std::size_t thread_fallback(CLI::Option* opt, std::size_t given, std::size_t from_config) {
  if (opt->count()) return given;
  if (const char* env = std::getenv("OTMEL_THREADS")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw Error(ErrorKind::config, "OTMEL_THREADS must be a non-negative integer");
    return static_cast<std::size_t>(v);
  }
  return from_config;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

void write_rankings(std::ostream& out, const std::vector<RankingResult>& results) {
  out << "mention_id,gold_rank";
  for (int k = 1; k <= 10; ++k) out << ",top" << k;
  out << '\n';
  for (const auto& r : results) {
    out << r.mention_id << ',';
    if (r.rank_of_gold) out << *r.rank_of_gold;
    for (std::size_t k = 0; k < 10; ++k) {
      out << ',';
      if (k < r.ordered_ids.size()) out << r.ordered_ids[k];
    }
    out << '\n';
  }
}

void write_trace_header(std::ostream& out) { out << "step,L_F,L_T,L_V,L_O,L_KD,J\n"; }

void write_trace_row(std::ostream& out, std::size_t step, const LossBreakdown& l) {
  out << step << ',' << format_double(l.l_f) << ',' << format_double(l.l_t) << ','
      << format_double(l.l_v) << ',' << format_double(l.l_o) << ',' << format_double(l.l_kd)
      << ',' << format_double(l.j) << '\n';
}

// Mentions with gold links, each paired with its gold entity, at most `limit`.
TrainingBatch make_batch(const Dataset& ds, std::size_t limit) {
  TrainingBatch batch;
  for (const auto& m : ds.mentions) {
    if (batch.size() == limit) break;
    if (!m.gold_entity) continue;
    for (const auto& e : ds.entities)
      if (e.id == *m.gold_entity) {
        batch.mentions.push_back(m);
        batch.entities.push_back(e);
        break;
      }
  }
  if (batch.size() == 0) throw Error(ErrorKind::missing_gold, "no mention with a gold entity");
  return batch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OT-guided multimodal entity linking toolkit"};
  app.require_subcommand(1);

  // solve
  std::string solve_cost;
  std::string solve_mu;
  std::string solve_nu;
  CommonFlags solve_flags;
  auto* solve = app.add_subcommand("solve", "entropic OT plan for a CSV cost matrix");
  solve->add_option("cost_csv", solve_cost, "cost matrix, CSV")->required();
  solve->add_option("--mu", solve_mu, "row marginal, comma separated (default uniform)");
  solve->add_option("--nu", solve_nu, "column marginal, comma separated (default uniform)");
  solve_flags.add_solver(*solve);

  // assign
  std::string assign_src;
  std::string assign_tgt;
  std::string assign_mech = "ot";
  std::string assign_site = "mention_v2t";
  CommonFlags assign_flags;
  auto* assign_cmd = app.add_subcommand("assign", "correlation assignment of two feature matrices");
  assign_cmd->add_option("src_fmat", assign_src, "query side; one output row per row")->required();
  assign_cmd->add_option("tgt_fmat", assign_tgt, "key and value side; one output column per row")->required();
  assign_cmd->add_option("--mechanism", assign_mech, "ot or attention")
      ->check(CLI::IsMember({"ot", "attention", "att"}));
  assign_cmd->add_option("--site", assign_site, "projection site to use");
  assign_flags.add_solver(*assign_cmd);
  assign_flags.add_projection(*assign_cmd);

  // link
  std::string link_manifest;
  std::string link_config;
  std::string link_mech;
  std::vector<std::string> link_ablations;
  std::string link_rankings;
  std::size_t link_threads = 0;
  bool link_no_metrics = false;
  CommonFlags link_flags;
  auto* link = app.add_subcommand("link", "rank every entity for every mention");
  link->add_option("manifest", link_manifest, "manifest.json")->required();
  link->add_option("--config", link_config, "RunConfig JSON");
  auto* o_link_mech = link->add_option("--mechanism", link_mech, "ot or attention")
                          ->check(CLI::IsMember({"ot", "attention", "att"}));
  link->add_option("--ablation", link_ablations, "no_fusm, no_unim, pool=soft|mean|max");
  link->add_option("--rankings", link_rankings, "write rankings CSV here instead of stdout");
  auto* o_link_threads = link->add_option("--threads", link_threads, "workers, 0 = auto");
  link->add_flag("--no-metrics", link_no_metrics, "skip gold ranks and the summary");
  link_flags.add_solver(*link);
  link_flags.add_projection(*link);

  // distill-gap
  std::string gap_manifest;
  CommonFlags gap_flags;
  auto* gap = app.add_subcommand("distill-gap", "per-site KD loss between OT and attention");
  gap->add_option("manifest", gap_manifest, "manifest.json")->required();
  gap_flags.add_solver(*gap);
  gap_flags.add_projection(*gap);

  // gen-fixtures
  std::string gen_spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-fixtures", "write a planted fixture dataset");
  gen->add_option("spec_file", gen_spec, "fixture spec JSON")->required();
  gen->add_option("out_dir", gen_out, "output directory")->required();

  // train-toy and loss share their options
  std::string train_manifest;
  std::string train_objective = "kd";
  std::string train_pool = "soft";
  std::string train_trace;
  std::string train_save;
  std::size_t train_steps = 50;
  std::size_t train_batch = 8;
  double train_lr = 1e-2;
  double train_fd = 1e-4;
  CommonFlags train_flags;
  auto* train = app.add_subcommand("train-toy", "finite-difference training of the projections");
  auto* loss = app.add_subcommand("loss", "objective value of one batch");
  for (auto* cmd : {train, loss}) {
    cmd->add_option("manifest", train_manifest, "manifest.json")->required();
    cmd->add_option("--objective", train_objective, "ot or kd")
        ->check(CLI::IsMember({"ot", "kd"}));
    cmd->add_option("--pool", train_pool, "soft, mean or max")
        ->check(CLI::IsMember({"soft", "mean", "max"}));
    cmd->add_option("--batch", train_batch, "mentions taken from the manifest, at most 8");
  }
  train->add_option("--steps", train_steps, "gradient steps");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--fd-step", train_fd, "central-difference step");
  train->add_option("--trace", train_trace, "write the trace CSV here instead of stdout");
  train->add_option("--save-proj", train_save, "directory for the trained projections");
  train_flags.add_solver(*train);
  train_flags.add_projection(*train);
  CommonFlags loss_flags;
  loss_flags.add_solver(*loss);
  loss_flags.add_projection(*loss);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*solve) {
      RunConfig rc;
      solve_flags.apply(rc);
      rc.sinkhorn.check();
      Matrix cost = read_csv_matrix(fs::path(solve_cost));
      Marginals marg = Marginals::uniform(cost.rows(), cost.cols());
      if (!solve_mu.empty()) marg.mu = parse_vector(solve_mu, "--mu");
      if (!solve_nu.empty()) marg.nu = parse_vector(solve_nu, "--nu");
      if (marg.mu.size() != cost.rows() || marg.nu.size() != cost.cols())
        throw Error(ErrorKind::dimension, "marginal lengths do not match the cost matrix");
      TransportPlan plan = sinkhorn(cost, marg, rc.sinkhorn);
      write_csv_matrix(std::cout, plan.data);
      std::cout << "# cost=" << format_double(transport_cost(cost, plan))
                << " entropy=" << format_double(plan_entropy(plan))
                << " iterations=" << plan.iterations_used
                << " marginal_error=" << format_double(plan.achieved_marginal_error)
                << " scaling_error=" << format_double(plan.scaling_error)
                << " converged=" << (plan.converged ? "true" : "false") << '\n';
      if (!plan.converged) std::cerr << "warning: Sinkhorn did not converge\n";
    } else if (*assign_cmd) {
      RunConfig rc;
      assign_flags.apply(rc);
      rc.sinkhorn.check();
      Matrix src = read_matrix_any(assign_src);
      Matrix tgt = read_matrix_any(assign_tgt);
      if (src.cols() != tgt.cols())
        throw Error(ErrorKind::dimension, "src has d=" + std::to_string(src.cols()) +
                                              ", tgt has d=" + std::to_string(tgt.cols()));
      ProjectionTable table = load_table(rc, src.cols());
      AssignmentResult r = assign(parse_mechanism(assign_mech), src, tgt,
                                  table.at(parse_site(assign_site)), rc.sinkhorn);
      write_csv_matrix(std::cout, r.a);
    } else if (*link) {
      RunConfig rc = link_config.empty() ? RunConfig{} : read_run_config(link_config);
      link_flags.apply(rc);
      if (o_link_mech->count()) rc.mechanism = parse_mechanism(link_mech);
      for (const auto& a : link_ablations) apply_ablation(rc.ablations, a);
      rc.threads = thread_fallback(o_link_threads, link_threads, rc.threads);
      rc.check();

      Dataset ds = load_manifest(link_manifest);
      ScoringConfig sc;
      sc.mechanism = rc.mechanism;
      sc.sinkhorn = rc.sinkhorn;
      sc.ablations = rc.ablations;
      Scorer scorer(load_table(rc, ds.d), sc);
      auto results = rank_all(ds.mentions, ds.entities, scorer, !link_no_metrics, rc.threads);

      if (link_rankings.empty()) {
        write_rankings(std::cout, results);
      } else {
        std::ofstream out(link_rankings, std::ios::binary);
        if (!out) throw Error(ErrorKind::io, "cannot write '" + link_rankings + "'");
        write_rankings(out, results);
      }
      if (!link_no_metrics) {
        if (link_rankings.empty()) std::cout << '\n';
        std::cout << "H@1: " << percent(hits_at_k(results, 1)) << '\n'
                  << "H@3: " << percent(hits_at_k(results, 3)) << '\n'
                  << "H@5: " << percent(hits_at_k(results, 5)) << '\n'
                  << "MRR: " << percent(mrr(results)) << '\n';
      }
    } else if (*gap) {
      RunConfig rc;
      gap_flags.apply(rc);
      rc.sinkhorn.check();
      Dataset ds = load_manifest(gap_manifest);
      if (ds.mentions.empty() || ds.entities.empty())
        throw Error(ErrorKind::empty_input, "manifest has no records");
      auto gaps = distillation_gap(ds.mentions, ds.entities, load_table(rc, ds.d), rc.sinkhorn);
      std::cout << "site,mean_kd,pairs\n";
      for (const auto& g : gaps)
        std::cout << g.site << ',' << format_double(g.mean_kd) << ',' << g.count << '\n';
      std::cout << "mean," << format_double(mean_site_gap(gaps)) << ",\n";
    } else if (*gen) {
      generate_fixtures(read_fixture_spec(gen_spec), gen_out);
    } else if (*train || *loss) {
      const bool training = static_cast<bool>(*train);
      RunConfig rc;
      (training ? train_flags : loss_flags).apply(rc);
      rc.sinkhorn.check();
      ToyTrainConfig cfg;
      cfg.lr = train_lr;
      cfg.steps = train_steps;
      cfg.fd_step = train_fd;
      cfg.objective = parse_objective(train_objective);
      cfg.sinkhorn = rc.sinkhorn;
      cfg.pool = parse_pool(train_pool);

      Dataset ds = load_manifest(train_manifest);
      if (train_batch == 0 || train_batch > 8)
        throw Error(ErrorKind::size_guard, "--batch must be between 1 and 8");
      TrainingBatch batch = make_batch(ds, train_batch);
      check_toy_limits(batch, ds.d);
      ProjectionTable init = load_table(rc, ds.d);

      if (!training) {
        write_trace_header(std::cout);
        write_trace_row(std::cout, 0, evaluate_objective(batch, init, cfg));
      } else {
        ToyTrainResult res = toy_train(batch, std::move(init), cfg);
        std::ofstream file;
        if (!train_trace.empty()) {
          file.open(train_trace, std::ios::binary);
          if (!file) throw Error(ErrorKind::io, "cannot write '" + train_trace + "'");
        }
        std::ostream& out = train_trace.empty() ? std::cout : file;
        write_trace_header(out);
        for (const auto& row : res.trace) write_trace_row(out, row.step, row.loss);
        if (!train_save.empty()) save_projections(res.table, train_save);
      }
    }
  } catch (const Error& e) {
    std::cerr << "otmel: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "otmel: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
