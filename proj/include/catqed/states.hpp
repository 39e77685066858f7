#pragma once

#include <cmath>
#include <complex>

#include "catqed/hilbert.hpp"

namespace catqed {

enum class Parity { even, odd };

struct CatSpec {
  cplx alpha;
  Parity parity = Parity::even;
  int cutoff = 10;
  /// Largest probability allowed outside the truncated space.
  double max_deficit = 1e-6;
};

/// Single-mode state truncated to `cutoff` Fock levels and renormalized.
/// `deficit` is the probability the untruncated state has above the cutoff.
struct TruncatedMode {
  QuantumState state;
  double deficit = 0.0;
};

namespace detail {

/// sum_{n >= from, n = from (mod step)} e^{-x} x^n / n!
inline double poisson_tail(double x, int from, int step) {
  if (x == 0.0) return from == 0 ? 1.0 : 0.0;
  double p = std::exp(-x);
  for (int n = 1; n <= from; ++n) p *= x / n;
  double sum = 0.0;
  for (int n = from; n < from + 100000; n += step) {
    sum += p;
    if (n > x && p < 1e-20 * sum) break;
    for (int k = 1; k <= step; ++k) p *= x / (n + k);
  }
  return sum;
}

/// alpha^n / sqrt(n!) for n < cutoff.
inline Vector fock_amplitudes(cplx alpha, int cutoff) {
  Vector c(cutoff);
  c(0) = 1.0;
  for (int n = 1; n < cutoff; ++n) c(n) = c(n - 1) * alpha / std::sqrt(static_cast<double>(n));
  return c;
}

inline void check_deficit(double deficit, double max_deficit, int cutoff) {
  if (deficit >= max_deficit) {
    throw CutoffTooSmall("cutoff " + std::to_string(cutoff) + " leaves norm deficit " +
                             std::to_string(deficit) + " (allowed " + std::to_string(max_deficit) + ")",
                         deficit);
  }
}

}  // namespace detail

/// Smallest even cutoff covering |alpha|^2 + 5|alpha| photons, at least 8.
inline int default_cutoff(cplx alpha) {
  const double a2 = std::norm(alpha);
  int d = static_cast<int>(std::ceil(a2 + 5.0 * std::sqrt(a2)));
  if (d % 2) ++d;
  return std::max(d, 8);
}

inline TruncatedMode coherent_state(cplx alpha, int cutoff, double max_deficit = 1e-6) {
  if (cutoff < 2) throw InvalidDimension("coherent state cutoff must be at least 2");
  const double a2 = std::norm(alpha);
  const double deficit = detail::poisson_tail(a2, cutoff, 1);
  detail::check_deficit(deficit, max_deficit, cutoff);
  Vector c = detail::fock_amplitudes(alpha, cutoff) * std::exp(-a2 / 2.0);
  c /= c.norm();
  return {QuantumState::pure(HilbertLayout({cutoff}), std::move(c)), deficit};
}

/// Normalization N^{+/-} = [2(1 +/- e^{-2|alpha|^2})]^{-1/2}.
inline double cat_normalization(cplx alpha, Parity parity) {
  const double overlap = std::exp(-2.0 * std::norm(alpha));
  return 1.0 / std::sqrt(2.0 * (1.0 + (parity == Parity::even ? overlap : -overlap)));
}

/// Even or odd coherent state with coefficients
/// C_n = 2 N e^{-|alpha|^2/2} alpha^n / sqrt(n!) on the matching parity.
inline TruncatedMode cat_state(const CatSpec& spec) {
  if (spec.alpha == cplx(0.0)) throw InvalidArgument("cat state needs alpha != 0");
  if (spec.cutoff < 2) throw InvalidDimension("cat state cutoff must be at least 2");
  const double a2 = std::norm(spec.alpha);
  const double n = cat_normalization(spec.alpha, spec.parity);
  const int first = spec.parity == Parity::even ? 0 : 1;
  // first level of matching parity at or above the cutoff
  const int tail_from = spec.cutoff + ((spec.cutoff - first) % 2 + 2) % 2;
  const double deficit = 4.0 * n * n * detail::poisson_tail(a2, tail_from, 2);
  detail::check_deficit(deficit, spec.max_deficit, spec.cutoff);
  Vector c = detail::fock_amplitudes(spec.alpha, spec.cutoff) * (2.0 * n * std::exp(-a2 / 2.0));
  for (int k = 1 - first; k < spec.cutoff; k += 2) c(k) = 0.0;
  c /= c.norm();
  return {QuantumState::pure(HilbertLayout({spec.cutoff}), std::move(c)), deficit};
}

/// Slots 1..4 of a transfer layout.
inline HilbertLayout cavity_layout(const HilbertLayout& layout) {
  if (layout.slots() == 4) return layout;
  if (layout.slots() != 5 || layout.dim(0) != 3) {
    throw DimensionMismatch("expected a qutrit + four cavity layout, got " + layout.describe());
  }
  return HilbertLayout({layout.dim(1), layout.dim(2), layout.dim(3), layout.dim(4)});
}

/// (|cat>_a|cat>_b + |cat-bar>_a|cat-bar>_b)/sqrt(2) with every other cavity
/// in vacuum. Modes are 0-based cavity indices into a four-cavity layout.
inline QuantumState cavity_bell_state(cplx alpha, const HilbertLayout& cavities, int mode_a, int mode_b,
                                      double max_deficit = 1e-6) {
  if (cavities.slots() != 4) throw DimensionMismatch("expected a four-cavity layout");
  if (mode_a == mode_b || mode_a < 0 || mode_b < 0 || mode_a > 3 || mode_b > 3) {
    throw InvalidArgument("cat modes must be two distinct cavities");
  }
  Vector total = Vector::Zero(cavities.total_dim());
  for (Parity p : {Parity::even, Parity::odd}) {
    Vector branch = Vector::Ones(1);
    for (int m = 0; m < 4; ++m) {
      const int d = cavities.dim(static_cast<std::size_t>(m));
      Vector mode = (m == mode_a || m == mode_b)
                        ? cat_state({alpha, p, d, max_deficit}).state.vector()
                        : basis_vector(d, 0);
      branch = kron(branch, mode);
    }
    total += branch;
  }
  total /= std::sqrt(2.0);
  return QuantumState::pure(cavities, std::move(total));
}

/// (|g> + |e>)/sqrt(2)
inline Vector qutrit_plus() {
  Vector v = Vector::Zero(3);
  v(0) = v(1) = 1.0 / std::sqrt(2.0);
  return v;
}

/// Cavities 1 and 3 hold the two-cqubit Bell state, cavities 2 and 4 are
/// empty, and the qutrit is in |+>.
inline QuantumState initial_transfer_state(cplx alpha, const HilbertLayout& layout, double max_deficit = 1e-6) {
  const auto cav = cavity_layout(layout);
  if (layout.slots() != 5) throw DimensionMismatch("initial state needs the qutrit + four cavity layout");
  const auto bell = cavity_bell_state(alpha, cav, 0, 2, max_deficit);
  return QuantumState::pure(layout, kron(qutrit_plus(), bell.vector()));
}

/// Cavities 2 and 4 hold the Bell state, cavities 1 and 3 are empty. Lives on
/// the four-cavity layout.
inline QuantumState ideal_target_state(cplx alpha, const HilbertLayout& layout, double max_deficit = 1e-6) {
  return cavity_bell_state(alpha, cavity_layout(layout), 1, 3, max_deficit);
}

}  // namespace catqed
