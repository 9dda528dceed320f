// Command-line front end: geometry synthesis/import/summary, mechanism
// construction, gain predictions, sweeps, privacy accounting and reports.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fishmech/fishmech.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fishmech;

namespace {

json real_json(const ExtendedReal& v) { return v.infinite ? json("inf") : json(v.value); }

void emit(const json& j, const std::optional<fs::path>& out) {
  const std::string text = j.dump(2) + "\n";
  if (out) io::write_file(*out, text);
  else std::cout << text;
}

void emit_text(const std::string& text, const std::optional<fs::path>& out) {
  if (out) io::write_file(*out, text);
  else std::cout << text;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::input:
    case ErrorKind::domain: return 2;
    case ErrorKind::singularity:
    case ErrorKind::normalization:
    case ErrorKind::degenerate:
    case ErrorKind::calibration: return 3;
    case ErrorKind::parse:
    case ErrorKind::io: return 4;
  }
  return 1;
}

const char* kind_label(ErrorKind k) {
  switch (k) {
    case ErrorKind::input: return "input";
    case ErrorKind::domain: return "domain";
    case ErrorKind::normalization: return "normalization";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::degenerate: return "degenerate_fisher";
    case ErrorKind::calibration: return "calibration";
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& t : io::split_list(s)) out.push_back(io::parse_double(t, what));
  return out;
}

Ridges ridges_from(const std::optional<double>& lambda, const std::optional<double>& rho, bool predictor) {
  Ridges r = predictor ? Ridges::none() : Ridges{};
  if (lambda) r.fisher = *lambda;
  if (rho) r.margin = *rho;
  return r;
}

json summary_json(const GeometrySpec& g, std::size_t k) {
  const FisherSummary s = summarize(g, k);
  return json{{"label", g.label},
              {"dim", g.dim()},
              {"k", s.k},
              {"e_k", s.e_k},
              {"r95", s.r95},
              {"rho", s.rho},
              {"kappa", s.kappa},
              {"q_b", s.q_b},
              {"eps_iso", s.eps_iso},
              {"cumulative_energy", s.cumulative_energy}};
}

/// Reads a sweep CSV (comment lines skipped) back into cells.
SweepResult read_sweep_csv(const fs::path& p) {
  const std::string text = io::read_file(p);
  SweepResult r;
  std::size_t pos = 0;
  bool header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = io::trim(text.substr(pos, end - pos));
    const std::size_t line_start = pos;
    pos = end + 1;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != config::kSweepHeader) throw ParseError("sweep CSV: unexpected header", line_start);
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::size_t a = 0;
    while (true) {
      const std::size_t b = line.find(',', a);
      f.push_back(line.substr(a, b == std::string::npos ? std::string::npos : b - a));
      if (b == std::string::npos) break;
      a = b + 1;
    }
    if (f.size() != 7) throw ParseError("sweep CSV: expected 7 fields", line_start);
    SweepCell c;
    try {
      c.mech = f[0];
      c.scale = io::parse_double(f[1], "scale_or_K");
      c.attacker = f[2];
      c.top1_attack = io::parse_double(f[3], "top1_attack");
      c.kl_first_order = io::parse_double(f[4], "kl_first_order");
      c.top1_agree = io::parse_double(f[5], "top1_agree");
      c.seed = io::parse_u64(f[6], "seed");
    } catch (const ConfigError& e) {
      throw ParseError(std::string("sweep CSV: ") + e.what(), line_start);
    }
    r.cells.push_back(std::move(c));
  }
  if (!header) throw ParseError("sweep CSV: missing header", 0);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian release mechanism toolkit and retrieval-attack simulator"};
  app.require_subcommand(1);
  std::optional<std::string> out_opt;

  // geometry -----------------------------------------------------------------
  auto* geom = app.add_subcommand("geometry", "Synthesize, import or summarize a geometry");
  geom->require_subcommand(1);

  std::string kind = "concentrated", spectrum, margin_spectrum;
  std::size_t d = 0, r = 1;
  double q = 0.0;
  std::uint64_t seed = 0;
  std::string manifest_out;
  auto* g_synth = geom->add_subcommand("synth", "Synthesize a geometry and write a manifest");
  g_synth->add_option("--kind", kind, "concentrated | diffuse | block | custom")->capture_default_str();
  g_synth->add_option("--d", d, "Dimension")->required();
  g_synth->add_option("--r", r, "Block model trunk rank");
  g_synth->add_option("--q", q, "Block model margin trunk mass");
  g_synth->add_option("--seed", seed, "Generator seed");
  g_synth->add_option("--spectrum", spectrum, "Custom Fisher eigenvalues (comma separated)");
  g_synth->add_option("--margin-spectrum", margin_spectrum, "Custom margin eigenvalues (default isotropic)");
  g_synth->add_option("--out", manifest_out, "Manifest path (matrices are written next to it)")->required();

  std::string fisher_path, margin_path, label;
  auto* g_import = geom->add_subcommand("import", "Import Fisher and margin matrices (GMX1 or CSV)");
  g_import->add_option("--fisher", fisher_path, "Fisher matrix file")->required();
  g_import->add_option("--margin", margin_path, "Margin covariance file")->required();
  g_import->add_option("--label", label, "Provenance label");
  g_import->add_option("--seed", seed, "Seed metadata");
  g_import->add_option("--out", manifest_out, "Manifest path")->required();

  std::string geometry_path;
  std::size_t k = 1;
  auto* g_summary = geom->add_subcommand("summary", "Fisher concentration, r95, kappa, q_B, eps_iso (JSON)");
  g_summary->add_option("--geometry", geometry_path, "Geometry manifest")->required();
  g_summary->add_option("--k", k, "Projector rank")->required();
  g_summary->add_option("--out", out_opt, "Output file (default stdout)");

  // mechanism ----------------------------------------------------------------
  auto* mech = app.add_subcommand("mechanism", "Construct release covariances");
  mech->require_subcommand(1);
  std::string mech_token, cov_out;
  double budget = 0.0;
  std::optional<double> lambda, rho;
  auto* m_build = mech->add_subcommand("build", "Build a mechanism at budget K and write its covariance (GMX1)");
  m_build->add_option("--geometry", geometry_path, "Geometry manifest")->required();
  m_build->add_option("--mech", mech_token, "name[:param][@floor], e.g. gen_eigen:16, alpha:0.5")->required();
  m_build->add_option("--K", budget, "Utility budget in nats")->required();
  m_build->add_option("--k", k, "Projector rank (complement mechanisms)");
  m_build->add_option("--lambda", lambda, "Fisher ridge (default 1e-6 tr(F)/d)");
  m_build->add_option("--rho", rho, "Margin ridge (default 1e-6 tr(S)/d)");
  m_build->add_option("--out", cov_out, "Covariance output (GMX1)")->required();

  // predict ------------------------------------------------------------------
  auto* predict = app.add_subcommand("predict", "Euclidean and Mahalanobis gain report (JSON)");
  predict->add_option("--geometry", geometry_path, "Geometry manifest")->required();
  predict->add_option("--k", k, "Rank for G_Euc,k, E_k and q_B")->required();
  predict->add_option("--lambda", lambda, "Fisher ridge (default 0)");
  predict->add_option("--rho", rho, "Margin ridge (default 0)");
  predict->add_option("--out", out_opt, "Output file (default stdout)");

  // sweep --------------------------------------------------------------------
  std::string config_path;
  std::size_t jobs = 1;
  bool deterministic = false;
  auto* sweep = app.add_subcommand("sweep", "Run a (mechanism x K x attacker) sweep and write CSV");
  sweep->add_option("--config", config_path, "Sweep config file")->required();
  sweep->add_option("--jobs", jobs, "Worker threads")->capture_default_str();
  sweep->add_flag("--deterministic", deterministic, "Omit the generation timestamp comment");
  sweep->add_option("--out", out_opt, "Output CSV (default: report.out from the config, else stdout)");
  sweep->footer(
      "Config sections and keys:\n"
      "  [geometry] source=synth|file, kind, d, seed, r, q (block), path (file), k\n"
      "  [bank]     n, seed, queries, query_mode=from_bank|held_out\n"
      "  [sweep]    mechanisms (name[:param][@floor], ...), scales (K values), attackers\n"
      "             (euclid, pI_restricted, mahalanobis, nullspace), tau_grid, trials,\n"
      "             utility_trials, seed, readout_seed\n"
      "  [report]   utility_threshold, attack_threshold, out\n"
      "Environment: RG_SEED overrides [sweep] seed.");

  // privacy ------------------------------------------------------------------
  auto* priv = app.add_subcommand("privacy", "Renyi-DP accounting over an adjacency set");
  priv->require_subcommand(1);
  std::string cov_path, adj_path, alphas;
  double delta = 1e-6, target = 0.0;
  auto* p_account = priv->add_subcommand("account", "Per-alpha eps and eps(delta) records (JSON)");
  p_account->add_option("--cov", cov_path, "Release covariance (GMX1/CSV)")->required();
  p_account->add_option("--adjacency", adj_path, "Adjacency differences, one per row (GMX1/CSV)")->required();
  p_account->add_option("--delta", delta, "Target delta")->capture_default_str();
  p_account->add_option("--alphas", alphas, "Alpha grid (default 2,4,...,128)");
  p_account->add_option("--out", out_opt, "Output file (default stdout)");
  auto* p_cal = priv->add_subcommand("calibrate", "Scale c with eps(c Sigma, delta) = target (JSON)");
  p_cal->add_option("--cov", cov_path, "Base covariance")->required();
  p_cal->add_option("--adjacency", adj_path, "Adjacency differences")->required();
  p_cal->add_option("--target", target, "Target eps")->required();
  p_cal->add_option("--delta", delta, "Target delta")->capture_default_str();
  p_cal->add_option("--alphas", alphas, "Alpha grid (default 2,4,...,128)");
  p_cal->add_option("--out", out_opt, "Output file (default stdout)");

  // report -------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Reports over sweeps and the alpha family");
  report->require_subcommand(1);
  std::string sweep_path;
  double u_thr = 0.5, a_thr = 0.5;
  auto* r_empty = report->add_subcommand("empty-middle", "Count cells with agreement >= U and worst attack <= A");
  r_empty->add_option("--sweep", sweep_path, "Sweep CSV")->required();
  r_empty->add_option("--utility-threshold", u_thr, "U")->capture_default_str();
  r_empty->add_option("--attack-threshold", a_thr, "A")->capture_default_str();
  r_empty->add_option("--out", out_opt, "Output file (default stdout)");
  std::string alpha_list = "0,0.25,0.5,0.75,1,1.25,1.5";
  auto* r_alpha = report->add_subcommand("alpha-sweep", "Per-coordinate cost audit of the alpha family (CSV)");
  r_alpha->add_option("--geometry", geometry_path, "Geometry manifest")->required();
  r_alpha->add_option("--K", budget, "Utility budget")->required();
  r_alpha->add_option("--alphas", alpha_list, "Alpha values")->capture_default_str();
  r_alpha->add_option("--out", out_opt, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::optional<fs::path> out = out_opt ? std::optional<fs::path>(*out_opt) : std::nullopt;
  try {
    if (*g_synth) {
      SynthRequest req;
      req.kind = parse_geometry_kind(kind);
      req.d = d;
      req.seed = seed;
      req.block = {d, r, q};
      if (!spectrum.empty()) req.fisher_spectrum = parse_list(spectrum, "--spectrum");
      if (!margin_spectrum.empty()) req.margin_spectrum = parse_list(margin_spectrum, "--margin-spectrum");
      const GeometrySpec g = synth_geometry(req);
      io::write_geometry(manifest_out, g);
      emit(json{{"manifest", manifest_out}, {"label", g.label}, {"dim", g.dim()}}, std::nullopt);
    } else if (*g_import) {
      GeometrySpec g(PsdMatrix(io::read_matrix(fisher_path)), PsdMatrix(io::read_matrix(margin_path)), label,
                     g_import->count("--seed") ? std::optional<std::uint64_t>(seed) : std::nullopt);
      io::write_geometry(manifest_out, g);
      emit(json{{"manifest", manifest_out}, {"label", g.label}, {"dim", g.dim()}}, std::nullopt);
    } else if (*g_summary) {
      emit(summary_json(io::read_geometry(geometry_path), k), out);
    } else if (*m_build) {
      const GeometrySpec g = io::read_geometry(geometry_path);
      MechanismSpec spec = config::parse_mechanism_token(mech_token);
      spec.ridges = ridges_from(lambda, rho, false);
      if (!(budget > 0.0)) throw ConfigError("--K must be > 0");
      const ProjectorPair pair = build_projectors(g, k);
      const ReleaseCovariance cov = build_mechanism(g, pair, spec, UtilityBudget(budget));
      io::write_matrix(cov_out, cov.realized().matrix());
      emit(json{{"mech", spec.id()},
                {"form", cov.form_name()},
                {"K", budget},
                {"utility", utility(g, cov)},
                {"trace", cov.trace()},
                {"singular", cov.singular()},
                {"out", cov_out}},
           std::nullopt);
    } else if (*predict) {
      const GeometrySpec g = io::read_geometry(geometry_path);
      const GainReport rep = gain_report(g, k, ridges_from(lambda, rho, true));
      emit(json{{"k", rep.k},
                {"g_euc_1", rep.g_euc_1},
                {"g_euc_k", rep.g_euc_k},
                {"lambda_bar", rep.lambda_bar},
                {"euc_ridge", rep.euc_ridge},
                {"g_mah", rep.g_mah},
                {"fidelity", rep.fidelity},
                {"e_k", rep.e_k},
                {"q_b", rep.q_b},
                {"projector_bound", real_json(rep.projector_bound)}},
           out);
    } else if (*sweep) {
      const config::SweepConfig c = config::load_sweep_config(config_path);
      if (jobs < 1) throw ConfigError("--jobs must be >= 1");
      const auto run = config::run_sweep(c, jobs);
      const std::optional<fs::path> dest = out ? out : c.out;
      emit_text(config::sweep_csv(run.result, deterministic), dest);
    } else if (*p_account || *p_cal) {
      const PsdMatrix sigma(io::read_matrix(cov_path));
      const AdjacencySet adj(io::read_matrix(adj_path), adj_path);
      std::vector<double> grid = default_alpha_grid();
      if (!alphas.empty()) grid = parse_list(alphas, "--alphas");
      if (*p_account) {
        const RdpAccount acc = rdp_account(sigma, adj, grid);
        json recs = json::array();
        for (const auto& rec : account_records(acc, delta)) {
          recs.push_back({{"alpha", rec.alpha},
                          {"eps_alpha", real_json(rec.eps_alpha)},
                          {"eps_at_delta", real_json(rec.eps_at_delta)},
                          {"argmin_alpha", rec.argmin_alpha}});
        }
        emit(recs, out);
      } else {
        const double c = matched_eps_calibrate(sigma, adj, target, delta, grid);
        const EpsDelta hit = eps_of_delta(rdp_account(sigma.scaled(c), adj, grid), delta);
        emit(json{{"scale", c}, {"eps_at_delta", real_json(hit.eps)}, {"argmin_alpha", hit.alpha}}, out);
      }
    } else if (*r_empty) {
      const SweepResult res = read_sweep_csv(sweep_path);
      const EmptyMiddle em = empty_middle_count(res, u_thr, a_thr);
      json rows = json::array();
      for (const auto& row : em.qualifying) {
        rows.push_back({{"mech", row.mech},
                        {"scale_or_K", row.scale},
                        {"worst_attack", row.worst_attack},
                        {"worst_attacker", row.worst_attacker},
                        {"top1_agree", row.top1_agree}});
      }
      emit(json{{"utility_threshold", u_thr},
                {"attack_threshold", a_thr},
                {"rows", worst_over_attackers(res).size()},
                {"count", em.count},
                {"qualifying", rows}},
           out);
    } else if (*r_alpha) {
      const GeometrySpec g = io::read_geometry(geometry_path);
      const UtilityBudget kb(budget);
      const Vector dg = g.fisher.matrix().diagonal();
      std::string csv = "alpha,utility,coord_cost_min,coord_cost_max,coord_cost_spread,worst_coord_signal\n";
      for (double a : parse_list(alpha_list, "--alphas")) {
        const ReleaseCovariance cov = mech_alpha_family(g, kb, a);
        const Vector s = std::get<DiagonalForm>(cov.form()).variances;
        const Vector cost = dg.cwiseProduct(s);
        const double lo = cost.minCoeff(), hi = cost.maxCoeff();
        // Largest per-coordinate Fisher-ball signal, rho = 1: max_i 1/(D_i s_i).
        csv += format_real(a) + "," + format_real(utility(g, cov)) + "," + format_real(lo) + "," + format_real(hi) +
               "," + format_real(hi - lo) + "," + format_real(1.0 / lo) + "\n";
      }
      emit_text(csv, out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", json{{"error", kind_label(e.kind())}, {"message", e.what()}}.dump().c_str());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", json{{"error", "internal"}, {"message", e.what()}}.dump().c_str());
    return 1;
  }
  return 0;
}
