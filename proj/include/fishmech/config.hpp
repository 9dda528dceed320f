#pragma once

// Sweep configuration: parsing, validation and end-to-end execution into the
// sweep CSV schema.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "attack_sim.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "mechanisms.hpp"
#include "numeric.hpp"

namespace fishmech::config {

namespace fs = std::filesystem;

/// Every key a sweep config may contain, by section.
inline const std::map<std::string, std::vector<std::string>>& sweep_schema() {
  static const std::map<std::string, std::vector<std::string>> schema = {
      {"geometry", {"source", "kind", "d", "seed", "r", "q", "path", "k"}},
      {"bank", {"n", "seed", "queries", "query_mode"}},
      {"sweep", {"mechanisms", "scales", "attackers", "tau_grid", "trials", "utility_trials", "seed",
                 "readout_seed"}},
      {"report", {"utility_threshold", "attack_threshold", "out"}},
  };
  return schema;
}

struct SweepConfig {
  // geometry
  std::optional<fs::path> geometry_path;  // manifest, when source = file
  SynthRequest synth;
  std::size_t k = 0;
  // bank
  std::size_t n = 0;
  std::uint64_t bank_seed = 0;
  std::size_t queries = 0;
  QueryMode query_mode = QueryMode::from_bank;
  // sweep
  std::vector<MechanismSpec> mechanisms;
  std::vector<double> scales;
  std::vector<std::string> attackers;
  std::vector<double> tau_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::size_t trials = 0;
  std::size_t utility_trials = 0;
  std::uint64_t seed = 0;
  std::uint64_t readout_seed = 0;
  // report
  double utility_threshold = 0.5;
  double attack_threshold = 0.5;
  std::optional<fs::path> out;
};

/// Mechanism token: name[:param][@floor], e.g. gen_eigen:16, alpha:0.5,
/// mah_optimal@1e-3. The parameter is the gen-eigen rank or the alpha
/// exponent; the floor is relative to tr(Sigma)/d.
inline MechanismSpec parse_mechanism_token(const std::string& token) {
  MechanismSpec m;
  std::string body = token;
  if (const auto at = body.find('@'); at != std::string::npos) {
    m.floor_rel = io::parse_double(body.substr(at + 1), "mechanism floor in '" + token + "'");
    if (!(m.floor_rel >= 0.0) || !std::isfinite(m.floor_rel)) throw ConfigError("floor must be >= 0 in '" + token + "'");
    body = body.substr(0, at);
  }
  std::optional<std::string> param;
  if (const auto colon = body.find(':'); colon != std::string::npos) {
    param = body.substr(colon + 1);
    body = body.substr(0, colon);
  }
  m.kind = parse_mechanism_kind(body);
  if (m.kind == MechanismKind::gen_eigen) {
    if (!param) throw ConfigError("gen_eigen needs a rank, e.g. gen_eigen:16");
    m.k_xi = static_cast<std::size_t>(io::parse_u64(*param, "gen_eigen rank"));
    if (m.k_xi < 1) throw ConfigError("gen_eigen rank must be >= 1");
  } else if (m.kind == MechanismKind::alpha) {
    if (!param) throw ConfigError("alpha needs an exponent, e.g. alpha:0.5");
    m.alpha = io::parse_double(*param, "alpha exponent");
  } else if (param) {
    throw ConfigError("mechanism '" + body + "' takes no parameter");
  }
  return m;
}

inline SweepConfig parse_sweep_config(const io::KvFile& f) {
  io::require_schema(f, sweep_schema());
  SweepConfig c;
  const fs::path dir = f.source.parent_path();
  auto opt = [&](const std::string& s, const std::string& k) -> std::optional<std::string> {
    if (const auto* e = f.find(s, k)) return e->value;
    return std::nullopt;
  };
  auto req = [&](const std::string& s, const std::string& k) -> std::string {
    if (auto v = opt(s, k)) return *v;
    throw ConfigError(f.source.string() + ": missing key '" + k + "' in [" + s + "]");
  };
  auto size = [&](const std::string& s, const std::string& k) {
    return static_cast<std::size_t>(io::parse_u64(req(s, k), s + "." + k));
  };

  const std::string source = opt("geometry", "source").value_or("synth");
  if (source == "file") {
    c.geometry_path = dir / req("geometry", "path");
  } else if (source == "synth") {
    c.synth.kind = parse_geometry_kind(req("geometry", "kind"));
    c.synth.d = size("geometry", "d");
    c.synth.seed = io::parse_u64(opt("geometry", "seed").value_or("0"), "geometry.seed");
    if (c.synth.kind == GeometryKind::block) {
      c.synth.block.r = size("geometry", "r");
      c.synth.block.q = io::parse_double(req("geometry", "q"), "geometry.q");
    }
    if (c.synth.kind == GeometryKind::custom) throw ConfigError("custom spectra are not configurable; import a file");
  } else {
    throw ConfigError("geometry.source must be 'synth' or 'file', got '" + source + "'");
  }
  c.k = size("geometry", "k");

  c.n = size("bank", "n");
  if (c.n < 2) throw ConfigError("bank.n must be >= 2");
  c.bank_seed = io::parse_u64(opt("bank", "seed").value_or("0"), "bank.seed");
  c.queries = static_cast<std::size_t>(io::parse_u64(opt("bank", "queries").value_or("100"), "bank.queries"));
  if (c.queries < 1) throw ConfigError("bank.queries must be >= 1");
  const std::string qm = opt("bank", "query_mode").value_or("from_bank");
  if (qm == "from_bank") c.query_mode = QueryMode::from_bank;
  else if (qm == "held_out") c.query_mode = QueryMode::held_out;
  else throw ConfigError("bank.query_mode must be 'from_bank' or 'held_out'");

  for (const auto& t : io::split_list(req("sweep", "mechanisms"))) c.mechanisms.push_back(parse_mechanism_token(t));
  for (const auto& t : io::split_list(req("sweep", "scales"))) {
    const double k = io::parse_double(t, "sweep.scales");
    if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("sweep.scales: budgets must be > 0, got '" + t + "'");
    c.scales.push_back(k);
  }
  c.attackers = io::split_list(req("sweep", "attackers"));
  for (const auto& a : c.attackers) {
    if (a != "euclid" && a != "pI_restricted" && a != "mahalanobis" && a != "nullspace")
      throw ConfigError("unknown attacker '" + a + "'");
  }
  if (auto t = opt("sweep", "tau_grid")) {
    c.tau_grid.clear();
    for (const auto& x : io::split_list(*t)) {
      const double v = io::parse_double(x, "sweep.tau_grid");
      if (!(v > 0.0)) throw ConfigError("sweep.tau_grid values must be > 0");
      c.tau_grid.push_back(v);
    }
  }
  if (c.mechanisms.empty() || c.scales.empty() || c.attackers.empty()) {
    throw ConfigError("sweep needs at least one mechanism, scale and attacker");
  }
  c.trials = static_cast<std::size_t>(io::parse_u64(opt("sweep", "trials").value_or("200"), "sweep.trials"));
  c.utility_trials =
      static_cast<std::size_t>(io::parse_u64(opt("sweep", "utility_trials").value_or("200"), "sweep.utility_trials"));
  if (c.trials < 1 || c.utility_trials < 1) throw ConfigError("trials must be >= 1");
  c.seed = io::parse_u64(req("sweep", "seed"), "sweep.seed");
  c.readout_seed = io::parse_u64(opt("sweep", "readout_seed").value_or("0"), "sweep.readout_seed");

  c.utility_threshold = io::parse_double(opt("report", "utility_threshold").value_or("0.5"), "report.utility_threshold");
  c.attack_threshold = io::parse_double(opt("report", "attack_threshold").value_or("0.5"), "report.attack_threshold");
  if (auto o = opt("report", "out")) c.out = dir / *o;
  return c;
}

/// Reads a sweep config; RG_SEED, when set, overrides the master seed.
inline SweepConfig load_sweep_config(const fs::path& p) {
  SweepConfig c = parse_sweep_config(io::read_kv(p));
  if (const char* env = std::getenv("RG_SEED")) c.seed = io::parse_u64(env, "RG_SEED");
  if (c.geometry_path && !fs::exists(*c.geometry_path)) {
    throw IoError("geometry manifest '" + c.geometry_path->string() + "' does not exist");
  }
  return c;
}

struct SweepRun {
  SweepResult result;
  std::string label;
};

inline SweepRun run_sweep(const SweepConfig& c, std::size_t jobs) {
  const GeometrySpec g = c.geometry_path ? io::read_geometry(*c.geometry_path) : synth_geometry(c.synth);
  const ProjectorPair pair = build_projectors(g, c.k);
  const std::size_t bank_rows = c.query_mode == QueryMode::held_out ? c.n + c.queries : c.n;
  const HiddenBank bank = synth_bank(g, bank_rows, c.bank_seed);
  const auto queries = sample_queries(bank.size(), c.queries, c.query_mode, derive_seed(c.seed, {0x71756572ULL}));
  SweepPlan plan;
  plan.mechanisms = c.mechanisms;
  plan.scales = c.scales;
  for (const auto& a : c.attackers) {
    if (a == "euclid") plan.attackers.push_back(AttackerSpec::euclid());
    else if (a == "pI_restricted") plan.attackers.push_back(AttackerSpec::pi_restricted(pair));
    else if (a == "mahalanobis") plan.attackers.push_back(AttackerSpec::mahalanobis(c.tau_grid));
    else plan.attackers.push_back(AttackerSpec::nullspace());
  }
  plan.trials = c.trials;
  plan.utility_trials = c.utility_trials;
  plan.seed = c.seed;
  plan.readout_seed = c.readout_seed;
  plan.jobs = jobs;
  return {pareto_sweep(g, pair, bank, queries, plan), g.label};
}

inline constexpr const char* kSweepHeader = "mech,scale_or_K,attacker,top1_attack,kl_first_order,top1_agree,seed";

/// Sweep CSV. Unless deterministic, a leading comment records the time of
/// generation.
inline std::string sweep_csv(const SweepResult& r, bool deterministic) {
  std::ostringstream out;
  if (!deterministic) {
    char buf[64];
    const std::time_t now = std::time(nullptr);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out << "# generated " << buf << "\n";
  }
  out << kSweepHeader << "\n";
  for (const auto& c : r.cells) {
    out << c.mech << ',' << format_real(c.scale) << ',' << c.attacker << ',' << format_real(c.top1_attack) << ','
        << format_real(c.kl_first_order) << ',' << format_real(c.top1_agree) << ',' << c.seed << "\n";
  }
  return out.str();
}

}  // namespace fishmech::config
