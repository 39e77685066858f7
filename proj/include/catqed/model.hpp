#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "catqed/hilbert.hpp"
#include "catqed/tensor_operator.hpp"

namespace catqed {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// MHz (cycles per microsecond) to rad/us.
inline constexpr double angular(double mhz) { return kTwoPi * mhz; }
inline constexpr double cycles(double rad_per_us) { return rad_per_us / kTwoPi; }

using CouplingMatrix = std::array<std::array<double, 4>, 4>;

/// Physical inputs. Frequencies are angular, rad/us.
struct SystemParams {
  std::array<double, 4> g{};
  double delta = 0.0;
  double omega_eg = 0.0;
  double omega_fg = 0.0;
  double rabi = 0.0;
  double rabi_fe = 0.0;
  double alpha = 1.5;
  /// Symmetric cavity-cavity couplings; only j < l entries are used.
  CouplingMatrix crosstalk{};
  /// Fabrication asymmetry: g2 -> (1+eps) g2, g4 -> (1+eps) g4.
  double epsilon = 0.0;
  /// Replaces the matched value of the second detuning when set.
  std::optional<double> delta_prime_override;

  static SystemParams reference() {
    SystemParams p;
    p.g = {angular(60), angular(60), angular(70), angular(70)};
    p.delta = angular(800);
    p.omega_eg = angular(7500);
    p.omega_fg = angular(12500);
    p.rabi = angular(47);
    p.rabi_fe = angular(47);
    p.alpha = 1.5;
    return p;
  }

  double omega_fe() const { return omega_fg - omega_eg; }
  double g_max() const { return std::max(std::max(g[0], g[1]), std::max(g[2], g[3])); }

  /// Couplings with the asymmetry applied.
  std::array<double, 4> couplings() const {
    return {g[0], (1.0 + epsilon) * g[1], g[2], (1.0 + epsilon) * g[3]};
  }

  void set_uniform_crosstalk(double gcr) {
    for (int j = 0; j < 4; ++j) {
      for (int l = 0; l < 4; ++l) crosstalk[j][l] = j == l ? 0.0 : gcr;
    }
  }

  void validate() const {
    for (double x : g) {
      if (!(x > 0.0)) throw InvalidArgument("couplings must be positive");
    }
    if (!(delta > 0.0)) throw InvalidArgument("detuning must be positive");
    if (!(omega_eg > 0.0) || !(omega_fg > omega_eg)) {
      throw InvalidArgument("qutrit levels must satisfy omega_fg > omega_eg > 0");
    }
    if (rabi < 0.0 || rabi_fe < 0.0) throw InvalidArgument("Rabi frequencies must be non-negative");
    if (!(1.0 + epsilon > 0.0)) throw InvalidArgument("asymmetry must keep couplings positive");
    for (int j = 0; j < 4; ++j) {
      for (int l = 0; l < 4; ++l) {
        if (crosstalk[j][l] != crosstalk[l][j]) throw InvalidArgument("crosstalk matrix must be symmetric");
      }
    }
  }
};

struct DerivedParams {
  double delta_prime = 0.0;
  std::array<double, 4> lambda_j{};
  double lambda = 0.0;
  double lambda_prime = 0.0;
  std::array<double, 4> omega{};
  double delta_p = 0.0;
  double transfer_time = 0.0;
  double eta = 0.0;
  double eta_prime = 0.0;
  double phi0 = 0.0;

  /// omega_l - omega_j for cavities j, l in 0..3.
  double delta_jl(int j, int l) const { return omega[l] - omega[j]; }
};

inline DerivedParams derive_parameters(const SystemParams& p) {
  p.validate();
  const auto g = p.couplings();
  DerivedParams d;
  d.delta_prime = p.delta_prime_override ? *p.delta_prime_override : -g[2] * g[3] * p.delta / (g[0] * g[1]);
  if (d.delta_prime == 0.0) throw InvalidArgument("second detuning is zero");
  d.lambda_j = {g[0] * g[0] / (2 * p.delta), g[1] * g[1] / (2 * p.delta), g[2] * g[2] / (2 * d.delta_prime),
                g[3] * g[3] / (2 * d.delta_prime)};
  d.lambda = g[0] * g[1] / (2 * p.delta);
  d.lambda_prime = g[2] * g[3] / (2 * d.delta_prime);
  if (!(d.lambda > 0.0)) throw InvalidArgument("Raman coupling must be positive");
  const double wfe = p.omega_fe();
  d.omega = {p.omega_fg - p.delta, wfe - p.delta, p.omega_fg - d.delta_prime, wfe - d.delta_prime};
  d.delta_p = wfe - p.omega_eg;
  d.transfer_time = std::numbers::pi / (2 * d.lambda);
  d.eta = d.lambda_j[1] / (2 * d.lambda) + 0.5;
  d.eta_prime = d.lambda_j[3] / (2 * d.lambda) - 0.5;
  d.phi0 = p.rabi * std::numbers::pi / (2 * d.lambda);
  return d;
}

/// Parameters of the symmetric design the protocol timing is built for.
inline DerivedParams design_parameters(SystemParams p) {
  p.epsilon = 0.0;
  return derive_parameters(p);
}

/// Rates in 1/us.
struct DecoherenceRates {
  std::array<double, 4> kappa{};
  double gamma_eg = 0.0;
  double gamma_fe = 0.0;
  double gamma_fg = 0.0;
  double gamma_phi_e = 0.0;
  double gamma_phi_f = 0.0;

  /// Qutrit rates from the reference device and uniform cavity lifetime.
  static DecoherenceRates reference(double cavity_lifetime_us) {
    DecoherenceRates r;
    r.kappa.fill(1.0 / cavity_lifetime_us);
    r.gamma_eg = 1.0 / 28.0;
    r.gamma_fe = 1.0 / 14.0;
    r.gamma_fg = 1.0 / 21.0;
    r.gamma_phi_e = 1.0 / 7.0;
    r.gamma_phi_f = 1.0 / 7.0;
    return r;
  }

  void validate() const {
    for (double k : kappa) {
      if (!(k >= 0.0)) throw InvalidArgument("rates must be non-negative");
    }
    for (double x : {gamma_eg, gamma_fe, gamma_fg, gamma_phi_e, gamma_phi_f}) {
      if (!(x >= 0.0)) throw InvalidArgument("rates must be non-negative");
    }
  }
};

// ---------------------------------------------------------------------------
// Regime conditions

struct ConditionResult {
  std::string name;
  std::string description;
  bool equality = false;
  /// Relative mismatch for equalities, left/right ratio otherwise.
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string note;
};

struct ConditionTolerances {
  double equality_rel = 1e-9;
  double dominance_ratio = 10.0;
};

struct ConditionReport {
  std::vector<ConditionResult> results;

  bool all_pass() const {
    for (const auto& r : results) {
      if (!r.pass) return false;
    }
    return true;
  }

  const ConditionResult& find(const std::string& name) const {
    for (const auto& r : results) {
      if (r.name == name) return r;
    }
    throw InvalidArgument("no condition named " + name);
  }
};

namespace detail {

inline double rel_mismatch(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace detail

inline ConditionReport validate_conditions(const SystemParams& p, const DerivedParams& d,
                                           const ConditionTolerances& tol = {}) {
  ConditionReport rep;
  const auto g = p.couplings();
  const auto& lj = d.lambda_j;
  auto eq = [&](std::string name, std::string desc, double a, double b) {
    const double m = detail::rel_mismatch(a, b);
    rep.results.push_back({std::move(name), std::move(desc), true, m, tol.equality_rel, m <= tol.equality_rel, ""});
  };
  auto dom = [&](std::string name, std::string desc, double big, double small, std::string note = "") {
    const double r = small == 0.0 ? INFINITY : big / small;
    rep.results.push_back(
        {std::move(name), std::move(desc), false, r, tol.dominance_ratio, r >= tol.dominance_ratio, std::move(note)});
  };

  eq("stark_12", "lambda1 = lambda2", lj[0], lj[1]);
  eq("stark_34", "lambda3 = lambda4", lj[2], lj[3]);
  eq("raman_balance", "lambda = -lambda'", d.lambda, -d.lambda_prime);
  eq("phase_2", "lambda2 = lambda", lj[1], d.lambda);
  eq("phase_4", "lambda4 = -lambda", lj[3], -d.lambda);
  eq("detuning_match", "g1 g2 / Delta = -g3 g4 / Delta'", g[0] * g[1] / p.delta, -g[2] * g[3] / d.delta_prime);

  dom("dispersive_12", "Delta >> g1, g2", p.delta, std::max(g[0], g[1]));
  dom("dispersive_34", "|Delta'| >> g3, g4", std::abs(d.delta_prime), std::max(g[2], g[3]));
  dom("cross_raman", "|Delta - Delta'| / |1/Delta + 1/Delta'| >> g1 g4, g2 g3",
      std::abs(p.delta - d.delta_prime) / std::abs(1.0 / p.delta + 1.0 / d.delta_prime),
      std::max(g[0] * g[3], g[1] * g[2]), "both sides are frequency squared, evaluated as written");
  double lmax = std::abs(d.lambda);
  for (double x : lj) lmax = std::max(lmax, std::abs(x));
  lmax = std::max(lmax, std::abs(d.lambda_prime));
  dom("strong_drive", "2 Omega >> all lambda", 2.0 * p.rabi, lmax);
  dom("weak_drive", "Delta, |Delta'| >> Omega", std::min(p.delta, std::abs(d.delta_prime)), p.rabi);
  return rep;
}

// ---------------------------------------------------------------------------
// Hamiltonians

/// H(t) = static + sum_k (e^{i nu_k t} A_k + h.c.)
struct ModulatedHamiltonian {
  struct Term {
    OperatorSum op;
    double frequency = 0.0;
    std::string label;
  };

  HilbertLayout layout;
  OperatorSum static_part;
  std::vector<Term> terms;

  static ModulatedHamiltonian constant(OperatorSum h) {
    ModulatedHamiltonian m;
    m.layout = h.layout();
    m.static_part = std::move(h);
    return m;
  }

  double max_frequency() const {
    double m = 0.0;
    for (const auto& t : terms) m = std::max(m, std::abs(t.frequency));
    return m;
  }

  SparseOperator static_sparse() const { return materialize(static_part); }

  SparseOperator at(double t) const {
    SparseOperator h = materialize(static_part);
    for (const auto& term : terms) {
      const cplx ph = std::polar(1.0, term.frequency * t);
      SparseOperator a = term.op.to_sparse();
      h += ph * a + std::conj(ph) * a.adjoint();
    }
    return h;
  }

 private:
  SparseOperator materialize(const OperatorSum& s) const {
    return s.empty() ? SparseOperator(layout, std::vector<Entry>{}) : s.to_sparse();
  }
};

/// Operators on the qutrit + four cavity layout. Cavity index j is 0-based.
class TransferOperators {
 public:
  explicit TransferOperators(HilbertLayout layout) : layout_(std::move(layout)) {
    if (layout_.slots() != 5 || layout_.dim(0) != 3) {
      throw DimensionMismatch("expected a qutrit + four cavity layout, got " + layout_.describe());
    }
  }

  const HilbertLayout& layout() const { return layout_; }
  OperatorSum a(int j) const { return OperatorSum::local(layout_, slot(j), annihilation_op(layout_.dim(slot(j)))); }
  OperatorSum adag(int j) const { return OperatorSum::local(layout_, slot(j), creation_op(layout_.dim(slot(j)))); }
  OperatorSum n(int j) const { return OperatorSum::local(layout_, slot(j), number_op(layout_.dim(slot(j)))); }
  OperatorSum sigma(Level bra, Level ket) const { return OperatorSum::local(layout_, 0, qutrit_op(bra, ket)); }
  /// |e><g| + |g><e|, the dressed-basis z operator on the g/e block.
  OperatorSum sigma_x() const { return sigma(Level::e, Level::g) + sigma(Level::g, Level::e); }
  OperatorSum identity() const { return OperatorSum::identity(layout_); }

  /// sum_j n_j + sigma_ff
  OperatorSum excitation_number() const {
    OperatorSum e = sigma(Level::f, Level::f);
    for (int j = 0; j < 4; ++j) e += n(j);
    return e;
  }

 private:
  static std::size_t slot(int j) {
    if (j < 0 || j > 3) throw InvalidArgument("cavity index out of range");
    return static_cast<std::size_t>(j + 1);
  }
  HilbertLayout layout_;
};

inline ModulatedHamiltonian build_full_hamiltonian(const SystemParams& p, const DerivedParams& d,
                                                   const HilbertLayout& layout, bool include_crosstalk,
                                                   bool include_pulse_leakage) {
  TransferOperators o(layout);
  const auto g = p.couplings();
  ModulatedHamiltonian h;
  h.layout = layout;
  h.static_part = OperatorSum(layout);
  if (p.rabi != 0.0) h.static_part = p.rabi * o.sigma_x();
  h.terms.push_back({g[0] * o.a(0) * o.sigma(Level::f, Level::g) + g[1] * o.a(1) * o.sigma(Level::f, Level::e),
                     p.delta, "pair_12"});
  h.terms.push_back({g[2] * o.a(2) * o.sigma(Level::f, Level::g) + g[3] * o.a(3) * o.sigma(Level::f, Level::e),
                     d.delta_prime, "pair_34"});
  if (include_crosstalk) {
    for (int j = 0; j < 4; ++j) {
      for (int l = j + 1; l < 4; ++l) {
        const double gjl = p.crosstalk[j][l];
        if (gjl == 0.0) continue;
        h.terms.push_back({gjl * o.a(j) * o.adag(l), d.delta_jl(j, l),
                           "crosstalk_" + std::to_string(j + 1) + std::to_string(l + 1)});
      }
    }
  }
  if (include_pulse_leakage && p.rabi_fe != 0.0) {
    h.terms.push_back({p.rabi_fe * o.sigma(Level::f, Level::e), d.delta_p, "leakage_fe"});
  }
  return h;
}

struct EffectiveHamiltonians {
  /// Dispersive form in the bare qutrit basis.
  OperatorSum h_eff;
  /// After the rotating-wave step in the dressed basis.
  OperatorSum h_tilde_eff;
  OperatorSum h0;
  /// Exchange Hamiltonian in the H0 frame, with the dressed z operator.
  OperatorSum he;
  /// Beam-splitter parts with identity on the qutrit.
  OperatorSum he1;
  OperatorSum he2;
};

inline EffectiveHamiltonians build_effective_hamiltonians(const SystemParams& p, const DerivedParams& d,
                                                          const HilbertLayout& layout, bool with_exchange = true,
                                                          const ConditionTolerances& tol = {}) {
  TransferOperators o(layout);
  const auto& l = d.lambda_j;
  const auto sgg = o.sigma(Level::g, Level::g);
  const auto see = o.sigma(Level::e, Level::e);
  const auto seg = o.sigma(Level::e, Level::g);
  const auto sz = o.sigma_x();
  const auto x12 = o.a(0) * o.adag(1);
  const auto x34 = o.a(2) * o.adag(3);
  const auto bs12 = x12 + x12.adjoint();
  const auto bs34 = x34 + x34.adjoint();

  EffectiveHamiltonians e;
  auto stark = OperatorSum(layout);
  for (int j = 0; j < 4; ++j) stark += (-l[j]) * o.n(j);

  auto hop12 = x12 * seg;
  auto hop34 = x34 * seg;
  e.h_eff = (-2 * l[0]) * (o.n(0) * sgg) + (-2 * l[1]) * (o.n(1) * see) + (-2 * l[2]) * (o.n(2) * sgg) +
            (-2 * l[3]) * (o.n(3) * see) + (-2 * d.lambda) * (hop12 + hop12.adjoint()) +
            (-2 * d.lambda_prime) * (hop34 + hop34.adjoint()) + p.rabi * sz;
  e.h0 = stark + p.rabi * sz;
  e.h_tilde_eff = e.h0 + (-d.lambda) * (bs12 * sz) + (-d.lambda_prime) * (bs34 * sz);

  if (with_exchange) {
    const auto rep = validate_conditions(p, d, tol);
    for (const char* name : {"stark_12", "stark_34", "raman_balance"}) {
      const auto& r = rep.find(name);
      if (!r.pass) {
        throw ConditionViolation("exchange Hamiltonian needs " + r.description + " (relative mismatch " +
                                 std::to_string(r.value) + ")");
      }
    }
    e.he = (-d.lambda) * (bs12 * sz) + d.lambda * (bs34 * sz);
    e.he1 = (-d.lambda) * bs12;
    e.he2 = d.lambda * bs34;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Dissipation

enum class JumpKind { cavity_decay, relax_fe, relax_fg, relax_eg, dephase_e, dephase_f };

inline const char* to_string(JumpKind k) {
  switch (k) {
    case JumpKind::cavity_decay: return "cavity_decay";
    case JumpKind::relax_fe: return "relax_fe";
    case JumpKind::relax_fg: return "relax_fg";
    case JumpKind::relax_eg: return "relax_eg";
    case JumpKind::dephase_e: return "dephase_e";
    case JumpKind::dephase_f: return "dephase_f";
  }
  return "unknown";
}

struct JumpOperator {
  OperatorSum op;
  JumpKind kind;
  /// Cavity index for cavity_decay, -1 otherwise.
  int cavity = -1;
};

inline std::vector<JumpOperator> jump_operators(const DecoherenceRates& r, const HilbertLayout& layout) {
  r.validate();
  TransferOperators o(layout);
  std::vector<JumpOperator> out;
  for (int j = 0; j < 4; ++j) {
    if (r.kappa[j] > 0.0) out.push_back({std::sqrt(r.kappa[j]) * o.a(j), JumpKind::cavity_decay, j});
  }
  auto add = [&](double rate, Level bra, Level ket, JumpKind kind) {
    if (rate > 0.0) out.push_back({std::sqrt(rate) * o.sigma(bra, ket), kind, -1});
  };
  add(r.gamma_fe, Level::e, Level::f, JumpKind::relax_fe);
  add(r.gamma_fg, Level::g, Level::f, JumpKind::relax_fg);
  add(r.gamma_eg, Level::g, Level::e, JumpKind::relax_eg);
  add(r.gamma_phi_e, Level::e, Level::e, JumpKind::dephase_e);
  add(r.gamma_phi_f, Level::f, Level::f, JumpKind::dephase_f);
  return out;
}

/// Phase exp(i t sum_j lambda_j n_j) on every basis state. Undoes the cavity
/// part of the H0 frame; the qutrit part is a global phase for |+>.
inline Vector frame_return_phases(const HilbertLayout& layout, const DerivedParams& d, double t) {
  const auto cav_offset = layout.slots() == 5 ? 1u : 0u;
  if (layout.slots() - cav_offset != 4) throw DimensionMismatch("expected four cavities");
  Vector ph(layout.total_dim());
  for (Index i = 0; i < layout.total_dim(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 4; ++j) acc += d.lambda_j[j] * layout.level(i, j + cav_offset);
    ph(i) = std::polar(1.0, acc * t);
  }
  return ph;
}

}  // namespace catqed
