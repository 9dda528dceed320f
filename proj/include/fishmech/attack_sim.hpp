#pragma once

// Retrieval-attack game under Gaussian release: synthetic candidate banks,
// attacker metrics, a readout-based utility surrogate, parallel Pareto sweeps,
// empty-middle counting, quantization margins and sequential exact-match bounds.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "mechanisms.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace fishmech {

struct HiddenBank {
  Matrix states;  // N x d
  std::uint64_t gen_seed = 0;
  std::string label;

  HiddenBank(Matrix s, std::uint64_t seed, std::string lbl)
      : states(std::move(s)), gen_seed(seed), label(std::move(lbl)) {
    if (states.rows() < 2) throw InputError("hidden bank needs N >= 2");
    if (!states.allFinite()) throw InputError("hidden bank has non-finite entries");
  }

  std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(states.cols()); }
};

namespace detail {

/// Median pairwise distance over the first min(N, 256) rows.
inline double median_pairwise_distance(const Matrix& x) {
  const Eigen::Index m = std::min<Eigen::Index>(x.rows(), 256);
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) d.push_back((x.row(i) - x.row(j)).norm());
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace detail

/// N states ~ N(0, c d rho_S) with rho_S the trace-normalized margin
/// covariance, c fixed so that the median pairwise distance is 1. Pairwise
/// differences then have second moment proportional to Sigma_delta.
inline HiddenBank synth_bank(const GeometrySpec& g, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw InputError("hidden bank needs N >= 2");
  const auto d = static_cast<Eigen::Index>(g.dim());
  const auto& e = g.margin_cov.eigen();
  const double scale = static_cast<double>(g.dim()) / g.margin_cov.trace();
  const Matrix factor = e.vectors * (scale * e.values).cwiseSqrt().asDiagonal();
  Rng rng(seed);
  const Matrix z = gaussian_matrix(static_cast<Eigen::Index>(n), d, rng);
  Matrix states = z * factor.transpose();
  const double med = detail::median_pairwise_distance(states);
  if (!(med > 0.0)) throw DegenerateFisherError("bank has zero median pairwise distance");
  states /= med;
  return HiddenBank(std::move(states), seed, g.label);
}

/// h + xi with xi ~ N(0, Sigma).
inline Vector release(const Vector& state, const ReleaseCovariance& cov, Rng& rng) {
  const Matrix& l = cov.noise_factor();
  if (state.size() != l.rows()) throw InputError("release: dimension mismatch");
  return state + l * gaussian_vector(l.cols(), rng);
}

// ---------------------------------------------------------------------------
// Attackers

enum class AttackerKind { euclid, pi_restricted, mahalanobis, nullspace };

struct AttackerSpec {
  AttackerKind kind = AttackerKind::euclid;
  /// Mahalanobis tau values, relative to tr(Sigma)/d.
  std::vector<double> tau_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  /// P_I for the restricted attacker.
  std::optional<Matrix> projector;

  static AttackerSpec euclid() { return {AttackerKind::euclid, {}, std::nullopt}; }
  static AttackerSpec pi_restricted(const ProjectorPair& pair) {
    return {AttackerKind::pi_restricted, {}, pair.p_i};
  }
  static AttackerSpec mahalanobis(std::vector<double> taus = {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    for (double t : taus) {
      if (!(t > 0.0) || !std::isfinite(t)) throw InputError("Mahalanobis tau values must be > 0");
    }
    if (taus.empty()) throw InputError("Mahalanobis tau grid is empty");
    return {AttackerKind::mahalanobis, std::move(taus), std::nullopt};
  }
  static AttackerSpec nullspace() { return {AttackerKind::nullspace, {}, std::nullopt}; }

  std::string id() const {
    switch (kind) {
      case AttackerKind::euclid: return "euclid";
      case AttackerKind::pi_restricted: return "pI_restricted";
      case AttackerKind::mahalanobis: return "mahalanobis";
      case AttackerKind::nullspace: return "nullspace";
    }
    return "?";
  }
};

namespace detail {

/// One ranking rule: candidates are compared by ||W (y - x)||^2, optionally
/// after a primary key ||N0^T (y - x)||^2 (the tau -> 0 limit on a singular
/// covariance, where the nullspace distance dominates).
struct Ranker {
  Matrix w;                      // k x d, transforms differences
  std::optional<Matrix> null_t;  // n0 x d
  Matrix bank_w;                 // N x k
  Matrix bank_null;              // N x n0
  double null_tol = 0.0;

  void prepare(const Matrix& states) {
    bank_w = states * w.transpose();
    if (null_t) {
      bank_null = states * null_t->transpose();
      const double s = bank_null.size() ? bank_null.cwiseAbs().maxCoeff() : 0.0;
      null_tol = 1e-20 * std::max(1.0, s * s);
    }
  }

  Eigen::Index top1(const Vector& y) const {
    const Vector yw = w * y;
    Vector yn;
    if (null_t) yn = *null_t * y;
    Eigen::Index best = 0;
    double best_n = std::numeric_limits<double>::infinity();
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < bank_w.rows(); ++i) {
      double dn = 0.0;
      if (null_t) {
        dn = (bank_null.row(i).transpose() - yn).squaredNorm();
        if (dn > best_n + null_tol) continue;
      }
      const double dd = (bank_w.row(i).transpose() - yw).squaredNorm();
      const bool null_better = null_t && dn < best_n - null_tol;
      if (null_better || dd < best_d) {
        best = i;
        best_n = dn;
        best_d = dd;
      }
    }
    return best;
  }
};

/// Rankers an attacker evaluates; it reports the best of them.
inline std::vector<Ranker> rankers_for(const AttackerSpec& a, const ReleaseCovariance& cov) {
  const auto d = static_cast<Eigen::Index>(cov.dim());
  std::vector<Ranker> out;
  auto inverse_root = [](const linalg::EigenDecomposition& e, const Vector& vals) {
    return Matrix(vals.cwiseSqrt().cwiseInverse().asDiagonal() * e.vectors.transpose());
  };
  switch (a.kind) {
    case AttackerKind::euclid:
      out.push_back({Matrix::Identity(d, d), std::nullopt, {}, {}, 0.0});
      break;
    case AttackerKind::pi_restricted:
      if (!a.projector || a.projector->rows() != d) throw InputError("restricted attacker needs a d x d projector");
      out.push_back({*a.projector, std::nullopt, {}, {}, 0.0});
      break;
    case AttackerKind::mahalanobis: {
      const double tr = cov.trace();
      if (!(tr > 0.0)) {
        out.push_back({Matrix::Identity(d, d), std::nullopt, {}, {}, 0.0});
        break;
      }
      const auto& e = cov.realized().eigen();
      for (double tau : a.tau_grid) {
        const Vector vals = (e.values.array() + tau * tr / static_cast<double>(d)).matrix();
        out.push_back({inverse_root(e, vals), std::nullopt, {}, {}, 0.0});
      }
      if (cov.singular()) {
        auto limit = rankers_for(AttackerSpec::nullspace(), cov);
        out.insert(out.end(), limit.begin(), limit.end());
      }
      break;
    }
    case AttackerKind::nullspace: {
      if (!(cov.trace() > 0.0)) {
        out.push_back({Matrix::Identity(d, d), std::nullopt, {}, {}, 0.0});
        break;
      }
      const PsdMatrix& s = cov.realized();
      const auto& e = s.eigen();
      const Matrix null = linalg::psd_nullspace(s);
      const Eigen::Index rank = d - null.cols();
      // Secondary key: Mahalanobis distance on the range (pseudo-inverse).
      Matrix w = inverse_root(e, e.values).topRows(rank);
      if (null.cols() == 0) {
        out.push_back({std::move(w), std::nullopt, {}, {}, 0.0});
      } else {
        out.push_back({std::move(w), Matrix(null.transpose()), {}, {}, 0.0});
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Fraction of trials in which the true bank index is ranked first. Trial t
/// releases bank row queries[t mod Q]; ties go to the lowest index. Attackers
/// with several rankings (Mahalanobis tau grid) report their best, all on the
/// same noise draws.
inline double attack_top1(const HiddenBank& bank, const std::vector<std::size_t>& queries,
                          const ReleaseCovariance& cov, const AttackerSpec& attacker, std::size_t trials,
                          std::uint64_t seed) {
  if (queries.empty()) throw InputError("attack needs at least one query");
  if (trials < 1) throw InputError("attack needs trials >= 1");
  if (cov.dim() != bank.dim()) throw InputError("attack: covariance and bank dimensions differ");
  for (std::size_t q : queries) {
    if (q >= bank.size()) throw InputError("query index outside the bank");
  }
  auto rankers = detail::rankers_for(attacker, cov);
  for (auto& r : rankers) r.prepare(bank.states);
  std::vector<std::size_t> hits(rankers.size(), 0);
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t q = queries[t % queries.size()];
    const Vector y = release(bank.states.row(static_cast<Eigen::Index>(q)).transpose(), cov, rng);
    for (std::size_t r = 0; r < rankers.size(); ++r) {
      if (static_cast<std::size_t>(rankers[r].top1(y)) == q) ++hits[r];
    }
  }
  return static_cast<double>(*std::max_element(hits.begin(), hits.end())) / static_cast<double>(trials);
}

/// Empirical error of the Bayes decision between x0 and x1 (equal priors,
/// known full-rank Sigma) when x0 was released.
inline double pairwise_error_rate(const Vector& x0, const Vector& x1, const ReleaseCovariance& cov,
                                  std::size_t trials, std::uint64_t seed) {
  const Matrix inv = linalg::psd_inverse(cov.realized());
  const Vector diff = x1 - x0;
  // (y-x1)' S (y-x1) < (y-x0)' S (y-x0)  <=>  2 xi' S diff > diff' S diff
  const Vector s_diff = inv * diff;
  const double thr = diff.dot(s_diff);
  Rng rng(seed);
  std::size_t errors = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Vector xi = release(Vector::Zero(x0.size()), cov, rng);
    if (2.0 * xi.dot(s_diff) > thr) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(trials);
}

// ---------------------------------------------------------------------------
// Utility surrogate

inline constexpr Eigen::Index kReadoutVocab = 256;

/// Fixed synthetic readout (V_syn x d). Haar with orthonormal columns when
/// d <= V_syn, otherwise i.i.d. N(0, 1/d).
inline Matrix synthetic_readout(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  const auto dd = static_cast<Eigen::Index>(d);
  if (dd <= kReadoutVocab) return haar_orthonormal(kReadoutVocab, dd, rng);
  return gaussian_matrix(kReadoutVocab, dd, rng) / std::sqrt(static_cast<double>(d));
}

struct UtilitySurrogate {
  double kl_first_order = 0.0;
  double top1_agree = 0.0;
};

inline UtilitySurrogate utility_surrogate(const GeometrySpec& g, const ReleaseCovariance& cov,
                                          const HiddenBank& bank, std::uint64_t readout_seed,
                                          std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw InputError("utility surrogate needs trials >= 1");
  const Matrix r = synthetic_readout(g.dim(), readout_seed);
  UtilitySurrogate out;
  out.kl_first_order = utility(g, cov);
  Rng rng(seed);
  std::size_t agree = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Vector x = bank.states.row(static_cast<Eigen::Index>(t % bank.size())).transpose();
    Eigen::Index clean = 0, noisy = 0;
    (r * x).maxCoeff(&clean);
    (r * release(x, cov, rng)).maxCoeff(&noisy);
    if (clean == noisy) ++agree;
  }
  out.top1_agree = static_cast<double>(agree) / static_cast<double>(trials);
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class QueryMode { from_bank, held_out };

/// Query indices: uniform with replacement from the bank, or (held_out) the
/// last `count` rows, which the caller appends as fresh states.
inline std::vector<std::size_t> sample_queries(std::size_t bank_size, std::size_t count, QueryMode mode,
                                               std::uint64_t seed) {
  if (count < 1) throw InputError("need at least one query");
  std::vector<std::size_t> q(count);
  if (mode == QueryMode::held_out) {
    if (count >= bank_size) throw InputError("held-out queries need a bank larger than the query set");
    for (std::size_t i = 0; i < count; ++i) q[i] = bank_size - count + i;
    return q;
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, bank_size - 1);
  for (auto& x : q) x = pick(rng);
  return q;
}

struct SweepCell {
  std::size_t mech_index = 0, scale_index = 0, attacker_index = 0;
  std::string mech;
  double scale = 0.0;  // utility budget K
  std::string attacker;
  double top1_attack = 0.0;
  double kl_first_order = 0.0;
  double top1_agree = 0.0;
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // ordered by (mech, scale, attacker)
};

struct SweepPlan {
  std::vector<MechanismSpec> mechanisms;
  std::vector<double> scales;  // K values
  std::vector<AttackerSpec> attackers;
  std::size_t trials = 200;
  std::size_t utility_trials = 200;
  std::uint64_t seed = 0;
  std::uint64_t readout_seed = 0;
  std::size_t jobs = 1;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is claimed
/// dynamically; results must be written to index-keyed slots.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next.store(n);
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline constexpr std::uint64_t kUtilityTag = 0x7574696cULL;

}  // namespace detail

/// Every (mechanism, K, attacker) cell. Cell seeds are derived from the
/// master seed and the cell coordinates, so results do not depend on the
/// number of jobs or completion order.
inline SweepResult pareto_sweep(const GeometrySpec& g, const ProjectorPair& pair, const HiddenBank& bank,
                                const std::vector<std::size_t>& queries, const SweepPlan& plan) {
  for (double k : plan.scales) (void)UtilityBudget(k);
  const std::size_t nm = plan.mechanisms.size(), ns = plan.scales.size(), na = plan.attackers.size();

  struct Group {
    std::optional<ReleaseCovariance> cov;
    UtilitySurrogate util;
  };
  std::vector<Group> groups(nm * ns);
  detail::parallel_for(groups.size(), plan.jobs, [&](std::size_t gi) {
    const std::size_t mi = gi / ns, si = gi % ns;
    auto cov = build_mechanism(g, pair, plan.mechanisms[mi], UtilityBudget(plan.scales[si]));
    const std::uint64_t useed = derive_seed(plan.seed, {mi, si, detail::kUtilityTag});
    groups[gi].util = utility_surrogate(g, cov, bank, plan.readout_seed, plan.utility_trials, useed);
    cov.realized();
    groups[gi].cov.emplace(std::move(cov));
  });

  SweepResult res;
  res.cells.resize(nm * ns * na);
  detail::parallel_for(res.cells.size(), plan.jobs, [&](std::size_t ci) {
    const std::size_t gi = ci / na, ai = ci % na;
    const std::size_t mi = gi / ns, si = gi % ns;
    SweepCell& c = res.cells[ci];
    c.mech_index = mi;
    c.scale_index = si;
    c.attacker_index = ai;
    c.mech = plan.mechanisms[mi].id();
    c.scale = plan.scales[si];
    c.attacker = plan.attackers[ai].id();
    c.seed = derive_seed(plan.seed, {mi, si, ai});
    c.top1_attack = attack_top1(bank, queries, *groups[gi].cov, plan.attackers[ai], plan.trials, c.seed);
    c.kl_first_order = groups[gi].util.kl_first_order;
    c.top1_agree = groups[gi].util.top1_agree;
  });
  return res;
}

struct WorstRow {
  std::string mech;
  double scale = 0.0;
  double worst_attack = 0.0;
  std::string worst_attacker;
  double top1_agree = 0.0;
  double kl_first_order = 0.0;
};

/// Row-wise max over attackers for each (mechanism, K).
inline std::vector<WorstRow> worst_over_attackers(const SweepResult& r) {
  std::vector<WorstRow> rows;
  for (const auto& c : r.cells) {
    if (rows.empty() || rows.back().mech != c.mech || rows.back().scale != c.scale) {
      rows.push_back({c.mech, c.scale, c.top1_attack, c.attacker, c.top1_agree, c.kl_first_order});
    } else if (c.top1_attack > rows.back().worst_attack) {
      rows.back().worst_attack = c.top1_attack;
      rows.back().worst_attacker = c.attacker;
    }
  }
  return rows;
}

struct EmptyMiddle {
  std::size_t count = 0;
  std::vector<WorstRow> qualifying;
};

/// Rows with utility agreement >= u and worst-over-attackers success <= a.
inline EmptyMiddle empty_middle_count(const SweepResult& r, double u, double a) {
  EmptyMiddle out;
  for (const auto& row : worst_over_attackers(r)) {
    if (row.top1_agree >= u && row.worst_attack <= a) out.qualifying.push_back(row);
  }
  out.count = out.qualifying.size();
  return out;
}

// ---------------------------------------------------------------------------
// Quantization

struct QuantizerSpec {
  int bits = 8;
  Vector scales;  // s_j > 0

  QuantizerSpec(int b, Vector s) : bits(b), scales(std::move(s)) {
    if (b != 4 && b != 6 && b != 8 && b != 16) throw InputError("quantizer bits must be 4, 6, 8 or 16");
    if (!(scales.array() > 0.0).all() || !scales.allFinite()) throw InputError("quantizer scales must be > 0");
  }

  double levels() const { return std::ldexp(1.0, bits - 1) - 1.0; }
  Vector steps() const { return scales / levels(); }
  /// Worst-case rounding error 1/2 sqrt(sum alpha_j^2) inside the range.
  double eps_b() const { return 0.5 * steps().norm(); }
  bool in_range(const Vector& x) const { return (x.array().abs() <= scales.array()).all(); }
};

/// Per-coordinate scale = 99.5th percentile of |x_j| over the calibration rows.
inline QuantizerSpec calibrate_quantizer(const Matrix& calib, int bits) {
  if (calib.rows() < 1) throw InputError("quantizer calibration needs rows");
  Vector s(calib.cols());
  std::vector<double> col(static_cast<std::size_t>(calib.rows()));
  for (Eigen::Index j = 0; j < calib.cols(); ++j) {
    for (Eigen::Index i = 0; i < calib.rows(); ++i) col[static_cast<std::size_t>(i)] = std::abs(calib(i, j));
    std::sort(col.begin(), col.end());
    const double pos = 0.995 * static_cast<double>(col.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, col.size() - 1);
    s(j) = col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]);
    if (!(s(j) > 0.0)) s(j) = std::numeric_limits<double>::min();
  }
  return QuantizerSpec(bits, std::move(s));
}

/// Symmetric uniform quantization; values outside the calibration range clip.
inline Vector quantize(const Vector& x, const QuantizerSpec& q) {
  const Vector a = q.steps();
  Vector out(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double c = std::clamp(x(j), -q.scales(j), q.scales(j));
    out(j) = a(j) * std::round(c / a(j));
  }
  return out;
}

inline double quant_margin_bound(double m_p, const QuantizerSpec& q) {
  return std::max(0.0, m_p - 2.0 * q.eps_b());
}

/// Per-row distance to the nearest other bank row, optionally after a
/// projector (identical rows give 0).
inline std::vector<double> one_step_margin(const HiddenBank& bank, const std::optional<Matrix>& projector = {}) {
  const Matrix x = projector ? Matrix(bank.states * projector->transpose()) : bank.states;
  const Eigen::Index n = x.rows();
  const Vector norms = x.rowwise().squaredNorm();
  const Matrix gram = x * x.transpose();
  std::vector<double> m(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d2 = std::max(0.0, norms(i) + norms(j) - 2.0 * gram(i, j));
      m[static_cast<std::size_t>(i)] = std::min(m[static_cast<std::size_t>(i)], d2);
    }
  }
  for (double& v : m) v = std::sqrt(v);
  return m;
}

// ---------------------------------------------------------------------------
// Sequential exact match

struct SequentialBound {
  std::vector<double> per_step_error;  // min(1, (V-1) exp(-m_t^2/8))
  double success_lower = 0.0;          // prod [1 - e_t]_+
};

inline SequentialBound seq_em_from_squares(const std::vector<double>& m2, double vocab) {
  if (!(vocab >= 2.0)) throw DomainError("vocabulary size must be >= 2");
  SequentialBound b;
  b.success_lower = 1.0;
  for (double s : m2) {
    if (!(s >= 0.0)) throw DomainError("margins must be >= 0");
    const double e = std::min(1.0, (vocab - 1.0) * std::exp(-s / 8.0));
    b.per_step_error.push_back(e);
    b.success_lower *= std::max(0.0, 1.0 - e);
  }
  return b;
}

inline SequentialBound seq_em_bound(const std::vector<double>& margins, double vocab) {
  std::vector<double> m2;
  for (double m : margins) m2.push_back(m * m);
  return seq_em_from_squares(m2, vocab);
}

/// views[v][t]: margin of view v at step t; squared margins add across views.
inline SequentialBound seq_em_bound_multi_view(const std::vector<std::vector<double>>& views, double vocab) {
  if (views.empty()) throw InputError("multi-view bound needs at least one view");
  const std::size_t t = views.front().size();
  std::vector<double> m2(t, 0.0);
  for (const auto& v : views) {
    if (v.size() != t) throw InputError("all views need the same number of steps");
    for (std::size_t i = 0; i < t; ++i) m2[i] += v[i] * v[i];
  }
  return seq_em_from_squares(m2, vocab);
}

/// Smallest per-step margin making (V-1) exp(-m^2/8) <= delta.
inline double vocab_margin_threshold(double vocab, double delta) {
  if (!(vocab >= 2.0) || !(delta > 0.0 && delta < 1.0)) throw DomainError("need V >= 2 and delta in (0, 1)");
  return std::sqrt(8.0 * std::log((vocab - 1.0) / delta));
}

}  // namespace fishmech
