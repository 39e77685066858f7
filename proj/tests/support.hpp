#pragma once

#include <vector>

#include "catqed/analysis.hpp"
#include "catqed/dynamics.hpp"
#include "catqed/model.hpp"
#include "catqed/states.hpp"

namespace catqed::fixtures {

/// Qutrit + two cavities driven by the first cavity pair of the full model.
struct SmallTransfer {
  HilbertLayout layout;
  ModulatedHamiltonian h;
  std::vector<JumpOperator> jumps;
  QuantumState psi0;
  double t_final = 0.0;
};

inline SmallTransfer small_transfer(int cutoff, double cavity_lifetime_us, cplx alpha = 0.8) {
  SmallTransfer s{HilbertLayout({3, cutoff, cutoff}), {}, {}, {}, 0.0};
  const auto& L = s.layout;
  const auto p = SystemParams::reference();
  const auto d = derive_parameters(p);
  auto a = [&](std::size_t slot) { return OperatorSum::local(L, slot, annihilation_op(cutoff)); };
  auto sig = [&](Level bra, Level ket) { return OperatorSum::local(L, 0, qutrit_op(bra, ket)); };

  s.h.layout = L;
  s.h.static_part = p.rabi * (sig(Level::e, Level::g) + sig(Level::g, Level::e));
  s.h.terms.push_back({p.g[0] * a(1) * sig(Level::f, Level::g) + p.g[1] * a(2) * sig(Level::f, Level::e), p.delta,
                       "pair_12"});
  s.h.terms.push_back({p.rabi_fe * sig(Level::f, Level::e), d.delta_p, "leakage_fe"});

  const auto r = DecoherenceRates::reference(cavity_lifetime_us);
  for (std::size_t j = 1; j <= 2; ++j) {
    s.jumps.push_back({std::sqrt(r.kappa[j - 1]) * a(j), JumpKind::cavity_decay, static_cast<int>(j - 1)});
  }
  s.jumps.push_back({std::sqrt(r.gamma_fe) * sig(Level::e, Level::f), JumpKind::relax_fe, -1});
  s.jumps.push_back({std::sqrt(r.gamma_fg) * sig(Level::g, Level::f), JumpKind::relax_fg, -1});
  s.jumps.push_back({std::sqrt(r.gamma_eg) * sig(Level::g, Level::e), JumpKind::relax_eg, -1});
  s.jumps.push_back({std::sqrt(r.gamma_phi_e) * sig(Level::e, Level::e), JumpKind::dephase_e, -1});
  s.jumps.push_back({std::sqrt(r.gamma_phi_f) * sig(Level::f, Level::f), JumpKind::dephase_f, -1});

  const Vector cat = cat_state({alpha, Parity::even, cutoff, 1e-2}).state.vector();
  s.psi0 = QuantumState::pure(L, kron(kron(qutrit_plus(), cat), basis_vector(cutoff, 0)));
  s.t_final = d.transfer_time;
  return s;
}

struct CrossCheck {
  double trace_distance = 0.0;
  double std_error = 0.0;
  double max_trace_drift = 0.0;
  double min_eigenvalue = 0.0;
  double max_hermiticity_error = 0.0;
};

/// Trajectory average against the master equation at the final time.
inline CrossCheck small_transfer_cross_check(int n_traj, std::uint64_t seed, int workers) {
  auto s = small_transfer(4, 10.0);
  IntegratorConfig cfg;
  const auto lind = evolve_lindblad(s.h, s.jumps, s.psi0.to_density(), s.t_final, cfg);
  cfg.n_traj = n_traj;
  cfg.seed = seed;
  cfg.workers = workers;
  cfg.keep_density = true;
  const auto traj = evolve_trajectories(s.h, s.jumps, s.psi0, s.t_final, cfg);
  CrossCheck c;
  c.trace_distance = trace_distance(traj.density.back(), lind.states.back().matrix());
  c.std_error = traj.density_std_error.back();
  c.max_trace_drift = lind.max_trace_drift;
  c.min_eigenvalue = lind.min_eigenvalue;
  c.max_hermiticity_error = lind.max_hermiticity_error;
  return c;
}

}  // namespace catqed::fixtures
