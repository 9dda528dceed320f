// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "fishmech/fishmech.hpp"

using namespace fishmech;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) { return gaussian_matrix(r, c, rng); }

Matrix random_psd(int d, Rng& rng) {
  const Matrix g = gaussian(d, d + 2, rng);
  const Matrix m = g * g.transpose() / d;
  return 0.5 * (m + m.transpose());
}

GeometrySpec random_geom(int d, Rng& rng) { return GeometrySpec(PsdMatrix(random_psd(d, rng)), PsdMatrix(random_psd(d, rng))); }

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// 1 -------------------------------------------------------------------------
Outcome fidelity_identity() {
  Rng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const int d = 2 + t % 31;
    const PsdMatrix f = PsdMatrix(random_psd(d, rng)).normalized();
    const PsdMatrix s = PsdMatrix(random_psd(d, rng)).normalized();
    const GeometrySpec g(f, s);
    const double fid = fidelity(g);
    worst = std::max(worst, std::abs(g_mah(g) * fid * fid - 1.0));
  }
  return {worst <= 1e-8, "max |g_mah*fid^2 - 1| = " + fmt(worst)};
}

// 2 -------------------------------------------------------------------------
Outcome diagonal_minimax() {
  Rng rng(202);
  const int d = 12;
  const double k = 0.8, rho = 1.0;
  Vector dg(d);
  for (int i = 0; i < d; ++i) dg(i) = std::exp(std::normal_distribution<double>(0.0, 1.0)(rng));
  const Matrix fd = dg.asDiagonal();
  const GeometrySpec g(PsdMatrix(fd), PsdMatrix::identity(d));
  const double floor = rho * rho * d / (2.0 * k);
  const auto star = mech_diag_minimax(g, UtilityBudget(k));
  const double at_star = fisher_ball_worst(star.realized(), g.fisher, rho).value;
  bool ok = std::abs(at_star - floor) <= 1e-8 * floor;
  std::size_t below = 0;
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int t = 0; t < 1000; ++t) {
    Vector s(d);
    for (int i = 0; i < d; ++i) s(i) = u(rng);
    s *= 2.0 * k / dg.dot(s);  // 1/2 sum D_i s_i = K
    const double w = fisher_ball_worst(PsdMatrix(Matrix(s.asDiagonal())), g.fisher, rho).value;
    if (w < floor * (1 - 1e-12)) ++below;
  }
  ok = ok && below == 0;
  return {ok, "Sigma*_diag worst = " + fmt(at_star) + " vs rho^2 d/2K = " + fmt(floor) + ", " +
                  std::to_string(below) + "/1000 alternatives below"};
}

// 3 -------------------------------------------------------------------------
Outcome gaussian_impossibility() {
  Rng rng(303);
  std::size_t below = 0;
  double eq_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int d = 2 + t % 15;
    const double k = 0.5 + 0.01 * (t % 50), rho = 1.0;
    const GeometrySpec g(PsdMatrix(Matrix(random_psd(d, rng) + 0.05 * Matrix::Identity(d, d))), PsdMatrix::identity(d));
    const double floor = rho * rho * d / (2.0 * k);
    const ReleaseCovariance raw(d, DenseForm{PsdMatrix(Matrix(random_psd(d, rng) + 0.01 * Matrix::Identity(d, d)))});
    const auto feasible = budget_matched(g, raw, UtilityBudget(k));
    if (fisher_ball_worst(feasible.realized(), g.fisher, rho).value < floor * (1 - 1e-9)) ++below;
    if (t % 10 == 0) {
      const auto star = mech_full_minimax(g, UtilityBudget(k), 0.0);
      eq_err = std::max(eq_err, std::abs(fisher_ball_worst(star.realized(), g.fisher, rho).value / floor - 1.0));
    }
  }
  return {below == 0 && eq_err <= 1e-6,
          std::to_string(below) + "/1000 below rho^2 d/2K, equality error at Sigma*_full " + fmt(eq_err)};
}

// 4 -------------------------------------------------------------------------
Outcome mahalanobis_optimum() {
  Rng rng(404);
  double closed_err = 0.0;
  std::size_t beaten = 0;
  for (int t = 0; t < 50; ++t) {
    const int d = 3 + t % 10;
    const double k = 1.0 + 0.1 * (t % 7);
    const auto g = random_geom(d, rng);
    const auto star = mech_mah_optimal(g, UtilityBudget(k), Ridges::none());
    const double j_star = mahalanobis_objective(g.margin_cov, star.realized());
    // Closed form through an independent square-root path.
    Eigen::SelfAdjointEigenSolver<Matrix> ef(g.fisher.matrix());
    const Matrix fh = ef.eigenvectors() * ef.eigenvalues().cwiseSqrt().asDiagonal() * ef.eigenvectors().transpose();
    const Matrix c = fh * g.margin_cov.matrix() * fh;
    Eigen::SelfAdjointEigenSolver<Matrix> ec(0.5 * (c + c.transpose()));
    const double tr_half = ec.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double closed = tr_half * tr_half / (2.0 * k);
    closed_err = std::max(closed_err, std::abs(j_star / closed - 1.0));
    for (int s = 0; s < 100; ++s) {
      const ReleaseCovariance raw(d, DenseForm{PsdMatrix(Matrix(random_psd(d, rng) + 0.01 * Matrix::Identity(d, d)))});
      const auto feasible = budget_matched(g, raw, UtilityBudget(k));
      if (mahalanobis_objective(g.margin_cov, feasible.realized()) < j_star * (1 - 1e-9)) ++beaten;
    }
  }
  return {closed_err <= 1e-6 && beaten == 0,
          "closed-form rel error " + fmt(closed_err) + ", " + std::to_string(beaten) + "/5000 feasible beat J*"};
}

// 5 -------------------------------------------------------------------------
Outcome projector_separation() {
  Rng rng(505);
  std::size_t violations = 0, checked = 0;
  for (int t = 0; t < 60; ++t) {
    const int d = 2 + t % 15;
    const auto g = random_geom(d, rng);
    for (int k = 1; k <= d; ++k) {
      const auto r = gain_report(g, k);
      if (r.projector_bound.infinite) {
        ++violations;  // a random full-rank pair never has E_k = 1, q_B = 0
        continue;
      }
      ++checked;
      if (r.g_mah < r.projector_bound.value - 1e-6) ++violations;
    }
  }
  // Reference point: E_k = 0.99 and q_B chosen so the denominator is 0.36.
  const double e_k = 0.99;
  double lo = 0.0, hi = 0.5;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::sqrt(e_k * mid) + std::sqrt((1 - e_k) * (1 - mid)) < 0.36 ? lo : hi) = mid;
  }
  const double spot = projector_separation_bound(e_k, lo).value;
  const bool spot_ok = std::abs(spot - 1.0 / (0.36 * 0.36)) < 1e-9 && std::abs(spot - 7.7) < 0.05;
  return {violations == 0 && spot_ok, std::to_string(checked) + " (geometry, k) pairs, " +
                                          std::to_string(violations) + " violations; bound at denominator 0.36 = " + fmt(spot)};
}

// 6 -------------------------------------------------------------------------
Outcome adaptive_collapse() {
  SynthRequest req{GeometryKind::concentrated, 64, 606, {}, {}, {}};
  const GeometrySpec g = synth_geometry(req);
  const HiddenBank bank = synth_bank(g, 1000, 607);
  const auto q = sample_queries(bank.size(), 500, QueryMode::from_bank, 608);
  const UtilityBudget k(0.02);
  const auto iso = mech_isotropic(g, k);
  const auto ge = mech_gen_eigen(g, k, 16, 0.0);
  const std::size_t trials = 1000;
  const double iso_euc = attack_top1(bank, q, iso, AttackerSpec::euclid(), trials, 1);
  const double ge_euc = attack_top1(bank, q, ge, AttackerSpec::euclid(), trials, 1);
  const double ge_null = attack_top1(bank, q, ge, AttackerSpec::nullspace(), trials, 1);
  const double ge_mah = attack_top1(bank, q, ge, AttackerSpec::mahalanobis(), trials, 1);
  const double se = std::sqrt(0.25 / trials);
  const bool ok = ge_euc + 3 * se < iso_euc && ge_null == 1.0 && ge_mah == 1.0;
  return {ok, "euclid: gen_eigen16 " + fmt(ge_euc) + " < isotropic " + fmt(iso_euc) + "; gen_eigen16 nullspace " +
                  fmt(ge_null) + ", mahalanobis " + fmt(ge_mah)};
}

// 7 -------------------------------------------------------------------------
Outcome random_projection_laws() {
  const int d = 16, k = 4, draws = 100000;
  Rng rng(707);
  const Matrix g = gaussian(d, d, rng);
  Matrix e = 0.5 * (g + g.transpose());
  e -= (e.trace() / d) * Matrix::Identity(d, d);
  e *= 0.05 / e.norm();
  const Matrix s = Matrix::Identity(d, d) / d + e;
  const auto law = random_projection_stats(d, k, SymMatrix(e));
  const Vector u = gaussian(d, 1, rng).col(0).normalized();
  double su = 0, st = 0, st2 = 0;
  for (int i = 0; i < draws; ++i) {
    const Matrix p = haar_projector(d, k, rng);
    su += u.dot(p * u);
    const double t = p.cwiseProduct(s).sum();
    st += t;
    st2 += t * t;
  }
  const double mean_u = su / draws;
  const double beta_var = 2.0 * k * (d - k) / (double(d) * d * (d + 2));
  const double se = std::sqrt(beta_var / draws);
  const double mt = st / draws;
  const double var_t = st2 / draws - mt * mt;
  const bool ok = std::abs(mean_u - double(k) / d) <= 3 * se && std::abs(var_t / law.variance - 1.0) <= 0.05;
  return {ok, "mean " + fmt(mean_u) + " vs k/d = 0.25 (3 SE = " + fmt(3 * se) + "), variance ratio " +
                  fmt(var_t / law.variance)};
}

// 8 -------------------------------------------------------------------------
Outcome bayes_error() {
  Rng rng(808);
  const int d = 5;
  const Matrix sm = random_psd(d, rng) + 0.1 * Matrix::Identity(d, d);
  const ReleaseCovariance cov(d, DenseForm{PsdMatrix(sm)});
  const Matrix inv = sm.inverse();
  bool ok = true;
  std::string detail;
  for (double m2 : {1.0, 4.0, 16.0}) {
    const Vector x0 = gaussian(d, 1, rng).col(0);
    Vector v = gaussian(d, 1, rng).col(0);
    v *= std::sqrt(m2 / v.dot(inv * v));
    const double n = 100000;
    const double err = pairwise_error_rate(x0, x0 + v, cov, 100000, 809);
    const double exact = phi(-0.5 * std::sqrt(m2));
    const double se = std::sqrt(exact * (1 - exact) / n);
    ok = ok && std::abs(err - exact) <= 3 * se && err <= std::exp(-m2 / 8.0);
    detail += "m2=" + fmt(m2) + ": " + fmt(err) + " vs " + fmt(exact) + "; ";
  }
  return {ok, detail};
}

// 9 -------------------------------------------------------------------------
Outcome rdp_pipeline() {
  Matrix unit = Matrix::Zero(1, 4);
  unit(0, 0) = 1.0;
  const auto e = eps_of_delta(rdp_account(PsdMatrix::identity(4), AdjacencySet(unit)), 1e-6);
  const double oracle = 4.0 + std::log(1e6) / 7.0;
  bool ok = e.alpha == 8.0 && std::abs(e.eps.value - oracle) <= 1e-6 && std::abs(e.eps.value - 5.974) < 5e-4;
  Rng rng(909);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = 2 + t % 12;
    const PsdMatrix base(random_psd(d, rng));
    const AdjacencySet a(gaussian(1 + t % 5, d, rng));
    const double target = 0.5 + 0.08 * t;
    const double c = matched_eps_calibrate(base, a, target, 1e-5);
    const double got = eps_of_delta(rdp_account(base.scaled(c), a), 1e-5).eps.value;
    worst = std::max(worst, std::abs(got / target - 1.0));
  }
  ok = ok && worst <= 1e-6;
  return {ok, "eps(1e-6) = " + fmt(e.eps.value) + " at alpha " + fmt(e.alpha) + ", calibration max rel error " +
                  fmt(worst)};
}

// 10 ------------------------------------------------------------------------
Outcome sequential_em() {
  const double thr = vocab_margin_threshold(50257, 0.1);
  const double prod = seq_em_bound(std::vector<double>(32, 12.0), 50257).success_lower;
  return {std::abs(thr - 10.25) <= 0.01 && std::abs(prod - 0.9758) <= 1e-3,
          "threshold " + fmt(thr) + ", success bound " + fmt(prod)};
}

// 11 ------------------------------------------------------------------------
Outcome quantization() {
  Rng rng(1111);
  const int d = 16;
  const Matrix calib = gaussian(5000, d, rng);
  std::size_t violations = 0, pairs = 0;
  for (int bits : {4, 6, 8, 16}) {
    const auto qs = calibrate_quantizer(calib, bits);
    int tested = 0;
    while (tested < 1000) {
      const Vector x = gaussian(d, 1, rng).col(0), y = gaussian(d, 1, rng).col(0);
      if (!qs.in_range(x) || !qs.in_range(y)) continue;  // the bound covers in-range states
      ++tested;
      ++pairs;
      const double measured = (quantize(x, qs) - quantize(y, qs)).norm();
      if (measured < quant_margin_bound((x - y).norm(), qs)) ++violations;
    }
  }
  return {violations == 0, std::to_string(pairs) + " in-range pairs, " + std::to_string(violations) + " violations"};
}

// 12 ------------------------------------------------------------------------
Outcome block_model() {
  bool ok = true;
  std::string detail;
  for (double q : {0.05, 0.1, 0.5}) {
    SynthRequest req{GeometryKind::block, 20, 1212, {20, 4, q}, {}, {}};
    const auto g = synth_geometry(req);
    const double gm = g_mah(g);
    const double prod = inverse_coupling_product(q_b(g, build_projectors(g, 4)), gm);
    ok = ok && std::abs(gm - 1.0 / q) <= 1e-6 && std::abs(prod - 1.0) <= 1e-8;
    detail += "q=" + fmt(q) + ": g_mah " + fmt(gm) + ", q_B*g_mah " + fmt(prod) + "; ";
  }
  return {ok, detail};
}

// 13 ------------------------------------------------------------------------
Outcome sweep_determinism() {
  const fs::path work = fs::temp_directory_path() / ("fishmech_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  const fs::path cfg = fs::path(FISHMECH_CONFIGS) / "sweep_3x4x3.cfg";
  auto run = [&](int jobs, const std::string& name) {
    const fs::path out = work / name;
    const std::string cmd = std::string("\"") + FISHMECH_CLI + "\" sweep --config \"" + cfg.string() +
                            "\" --deterministic --jobs " + std::to_string(jobs) + " --out \"" + out.string() + "\"";
    if (std::system(cmd.c_str()) != 0) return std::string("<exit nonzero>");
    return io::read_file(out);
  };
  const std::string a = run(1, "a.csv"), b = run(1, "b.csv"), c = run(8, "c.csv");
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  fs::remove_all(work);
  const bool ok = a.rfind(config::kSweepHeader, 0) == 0 && a == b && a == c && rows == 36;
  return {ok, std::to_string(rows) + " rows; jobs1 run1==run2: " + (a == b ? "yes" : "no") +
                  ", jobs1==jobs8: " + (a == c ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"fidelity identity", fidelity_identity},
      {"diagonal minimax", diagonal_minimax},
      {"gaussian impossibility", gaussian_impossibility},
      {"mahalanobis optimum", mahalanobis_optimum},
      {"projector separation", projector_separation},
      {"adaptive collapse", adaptive_collapse},
      {"random-projection laws", random_projection_laws},
      {"bayes-error consistency", bayes_error},
      {"rdp pipeline", rdp_pipeline},
      {"sequential exact match", sequential_em},
      {"quantization margins", quantization},
      {"block model end-to-end", block_model},
      {"sweep determinism", sweep_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.ok) ++failed;
    std::printf("%s criterion %2zu %-24s %s [%.2fs]\n", o.ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
