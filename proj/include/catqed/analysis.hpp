#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "catqed/dynamics.hpp"
#include "catqed/hilbert.hpp"
#include "catqed/states.hpp"

namespace catqed {

namespace detail {

inline void check_transfer_pair(const HilbertLayout& full, const QuantumState& target) {
  if (full.slots() != 5 || full.dim(0) != 3) {
    throw DimensionMismatch("final state must live on the qutrit + four cavity layout");
  }
  if (!(cavity_layout(full) == target.layout())) {
    throw DimensionMismatch("target layout " + target.layout().describe() + " does not match cavities of " +
                            full.describe());
  }
  if (!target.is_pure()) throw InvalidArgument("target must be a pure state");
}

}  // namespace detail

/// <t| Tr_q(|psi><psi|) |t> = sum_q |<t|psi_q>|^2 for a vector on the
/// qutrit + four cavity layout.
inline double target_overlap(const Vector& psi, const Vector& target) {
  const Index dc = target.size();
  if (psi.size() != 3 * dc) throw DimensionMismatch("state and target sizes disagree");
  double acc = 0.0;
  for (Index q = 0; q < 3; ++q) acc += std::norm(target.dot(psi.segment(q * dc, dc)));
  return acc;
}

/// sqrt(<psi_id| rho_cav |psi_id>) with the qutrit traced out.
inline double transfer_fidelity(const QuantumState& final_state, const QuantumState& target) {
  detail::check_transfer_pair(final_state.layout(), target);
  double ov = 0.0;
  if (final_state.is_pure()) {
    ov = target_overlap(final_state.vector(), target.vector());
  } else {
    const std::size_t keep[] = {1, 2, 3, 4};
    const Matrix red = partial_trace(final_state.layout(), final_state.matrix(), keep);
    ov = target.vector().dot(red * target.vector()).real();
  }
  return std::sqrt(std::max(0.0, ov));
}

/// |<a|b>|^2 for pure states on the same layout.
inline double state_fidelity(const QuantumState& a, const QuantumState& b) {
  if (!(a.layout() == b.layout())) throw DimensionMismatch("states live on different layouts");
  if (!a.is_pure() || !b.is_pure()) throw InvalidArgument("state_fidelity compares pure states");
  return std::norm(a.vector().dot(b.vector()));
}

/// Closed-form cavity state after time t of the exchange dynamics, returned
/// to the interaction frame: each pair is rotated by the beam splitter
/// a1^+ -> cos a1^+ + i sin a2^+, a3^+ -> cos a3^+ - i sin a4^+, then basis
/// states pick up exp(i lambda t (n1 + n2 - n3 - n4)).
inline QuantumState analytic_transfer_oracle(cplx alpha, double t, double lambda, const HilbertLayout& layout,
                                             double max_deficit = 1e-6) {
  const auto cav = cavity_layout(layout);
  const double theta = lambda * t;
  if (theta < -1e-12 || theta > std::numbers::pi / 2 + 1e-12) {
    throw InvalidArgument("oracle needs lambda t in [0, pi/2], got " + std::to_string(theta));
  }
  const int d1 = cav.dim(0), d2 = cav.dim(1), d3 = cav.dim(2), d4 = cav.dim(3);
  if (d2 < d1 || d4 < d3) throw DimensionMismatch("receiving cavities need cutoffs at least the sending ones");
  const double c = std::cos(theta), s = std::sin(theta);

  auto rotate_pair = [&](const Vector& coeff, int da, int db, cplx partner) {
    // partner = +i s or -i s
    Vector out = Vector::Zero(static_cast<Index>(da) * db);
    for (int m = 0; m < da; ++m) {
      if (coeff(m) == cplx(0.0)) continue;
      for (int j = 0; j <= m; ++j) {
        const double binom = std::exp(0.5 * (std::lgamma(m + 1.0) - std::lgamma(j + 1.0) - std::lgamma(m - j + 1.0)));
        out(static_cast<Index>(j) * db + (m - j)) +=
            coeff(m) * binom * std::pow(c, j) * std::pow(partner, m - j);
      }
    }
    return out;
  };

  Vector total = Vector::Zero(cav.total_dim());
  for (Parity p : {Parity::even, Parity::odd}) {
    const Vector ca = cat_state({alpha, p, d1, max_deficit}).state.vector();
    const Vector cb = cat_state({alpha, p, d3, max_deficit}).state.vector();
    total += kron(rotate_pair(ca, d1, d2, cplx(0.0, s)), rotate_pair(cb, d3, d4, cplx(0.0, -s)));
  }
  total /= std::sqrt(2.0);
  for (Index i = 0; i < cav.total_dim(); ++i) {
    const int n = cav.level(i, 0) + cav.level(i, 1) - cav.level(i, 2) - cav.level(i, 3);
    total(i) *= std::polar(1.0, theta * n);
  }
  return QuantumState::pure(cav, std::move(total));
}

/// Probability of `index` on `slot` (qutrit level or Fock number).
inline double population(const QuantumState& state, std::size_t slot, int index) {
  const auto& L = state.layout();
  if (slot >= L.slots()) throw InvalidArgument("slot out of range");
  if (index < 0 || index >= L.dim(slot)) throw InvalidArgument("level index out of range");
  double p = 0.0;
  for (Index i = 0; i < L.total_dim(); ++i) {
    if (L.level(i, slot) != index) continue;
    p += state.is_pure() ? std::norm(state.vector()(i)) : state.matrix()(i, i).real();
  }
  return p;
}

inline double population(const QuantumState& state, Level level) {
  return population(state, 0, static_cast<int>(level));
}

inline double mean_occupation(const QuantumState& state, std::size_t slot) {
  const auto& L = state.layout();
  if (slot >= L.slots()) throw InvalidArgument("slot out of range");
  double n = 0.0;
  for (Index i = 0; i < L.total_dim(); ++i) {
    const double w = state.is_pure() ? std::norm(state.vector()(i)) : state.matrix()(i, i).real();
    n += w * L.level(i, slot);
  }
  return n;
}

/// -Tr rho ln rho in nats.
inline double von_neumann_entropy(const Matrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double p = es.eigenvalues()(i);
    if (p > 1e-300) s -= p * std::log(p);
  }
  return s;
}

/// Observables for a transfer run measured on states of the qutrit + four
/// cavity layout: target and oracle overlaps, qutrit populations and
/// coherences, cavity occupations.
struct TransferObservables {
  static std::vector<std::string> names() {
    return {"overlap_target", "overlap_oracle", "p_g",  "p_e",  "p_f",  "n1",   "n2",   "n3",
            "n4",             "q_ge_re",        "q_ge_im", "q_gf_re", "q_gf_im", "q_ef_re", "q_ef_im"};
  }

  /// `oracle` may be empty, otherwise one cavity state per sample.
  static TrajectoryObservables make(const HilbertLayout& layout, Vector target, std::vector<Vector> oracle) {
    if (layout.slots() != 5) throw DimensionMismatch("transfer observables need the full layout");
    const Index dc = layout.total_dim() / 3;
    std::vector<std::vector<double>> occ(4, std::vector<double>(static_cast<std::size_t>(dc)));
    const auto cav = cavity_layout(layout);
    for (Index i = 0; i < dc; ++i) {
      for (std::size_t j = 0; j < 4; ++j) occ[j][static_cast<std::size_t>(i)] = cav.level(i, j);
    }
    TrajectoryObservables o;
    o.names = names();
    o.measure = [target = std::move(target), oracle = std::move(oracle), occ = std::move(occ), dc](
                    std::size_t sample, const Vector& psi, std::span<double> out) {
      out[0] = target_overlap(psi, target);
      out[1] = oracle.empty() ? 0.0 : target_overlap(psi, oracle.at(sample));
      cplx q[3][3];
      for (Index a = 0; a < 3; ++a) {
        for (Index b = 0; b < 3; ++b) q[a][b] = psi.segment(b * dc, dc).dot(psi.segment(a * dc, dc));
      }
      out[2] = q[0][0].real();
      out[3] = q[1][1].real();
      out[4] = q[2][2].real();
      for (std::size_t j = 0; j < 4; ++j) {
        double n = 0.0;
        for (Index a = 0; a < 3; ++a) {
          const cplx* v = psi.data() + a * dc;
          for (Index i = 0; i < dc; ++i) n += std::norm(v[i]) * occ[j][static_cast<std::size_t>(i)];
        }
        out[5 + j] = n;
      }
      out[9] = q[0][1].real();
      out[10] = q[0][1].imag();
      out[11] = q[0][2].real();
      out[12] = q[0][2].imag();
      out[13] = q[1][2].real();
      out[14] = q[1][2].imag();
    };
    return o;
  }

  /// Qutrit density matrix rebuilt from one row of observables.
  static Matrix qutrit_marginal(const Eigen::MatrixXd& values, Index row, Index first_column = 2) {
    auto v = [&](Index k) { return values(row, first_column + k); };
    Matrix q(3, 3);
    q(0, 0) = v(0);
    q(1, 1) = v(1);
    q(2, 2) = v(2);
    q(0, 1) = cplx(v(7), v(8));
    q(0, 2) = cplx(v(9), v(10));
    q(1, 2) = cplx(v(11), v(12));
    q(1, 0) = std::conj(q(0, 1));
    q(2, 0) = std::conj(q(0, 2));
    q(2, 1) = std::conj(q(1, 2));
    return q;
  }
};

struct TransferSample {
  double t = 0.0;
  double fidelity_target = 0.0;
  double fidelity_oracle = 0.0;
  double p_f = 0.0;
  std::array<double, 4> occupation{};
};

struct TransferResult {
  double fidelity = 0.0;
  double fidelity_std_error = 0.0;
  double p_f_max = 0.0;
  std::vector<TransferSample> samples;
  std::map<std::string, std::string> metadata;

  void validate() const {
    if (fidelity < 0.0 || fidelity > 1.0 + 1e-9) throw InvalidState("fidelity outside [0, 1]");
    if (p_f_max < 0.0) throw InvalidState("negative population");
  }
};

}  // namespace catqed
