#pragma once

#include <algorithm>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "catqed/hilbert.hpp"

namespace catqed {

/// Single-slot factor of a tensor-product term.
struct LocalFactor {
  std::size_t slot;
  Matrix matrix;
};

/// coefficient * (x)_s factor_s, identity on slots without a factor.
/// Factors are sorted by slot and never repeat a slot.
struct ProductTerm {
  cplx coefficient{1.0};
  std::vector<LocalFactor> factors;

  ProductTerm adjoint() const {
    ProductTerm out{std::conj(coefficient), {}};
    out.factors.reserve(factors.size());
    for (const auto& f : factors) out.factors.push_back({f.slot, f.matrix.adjoint()});
    return out;
  }

  bool is_diagonal() const {
    for (const auto& f : factors) {
      const Index d = f.matrix.rows();
      for (Index c = 0; c < d; ++c) {
        for (Index r = 0; r < d; ++r) {
          if (r != c && f.matrix(r, c) != cplx(0.0)) return false;
        }
      }
    }
    return true;
  }
};

namespace detail {

struct TermPattern {
  std::vector<Index> out_offset;
  std::vector<Index> in_offset;
  std::vector<cplx> value;
  std::vector<Index> bases;
  Index run = 1;
};

/// Offsets of every level combination of the slots before `upto` that are
/// not involved.
inline std::vector<Index> spectator_bases(const HilbertLayout& layout, const std::vector<bool>& involved,
                                          std::size_t upto) {
  std::vector<Index> bases = {0};
  for (std::size_t s = 0; s < upto; ++s) {
    if (involved[s]) continue;
    std::vector<Index> next;
    next.reserve(bases.size() * static_cast<std::size_t>(layout.dim(s)));
    for (Index b : bases) {
      for (int n = 0; n < layout.dim(s); ++n) next.push_back(b + n * layout.stride(s));
    }
    bases = std::move(next);
  }
  std::sort(bases.begin(), bases.end());
  return bases;
}

/// Term acting on the fastest slot: the other factors expand into offset
/// combinations, the fastest-slot factor is kept as diagonals so the inner
/// loop runs over contiguous memory.
struct BandPattern {
  struct Band {
    Index out_shift;
    Index in_shift;
    std::vector<cplx> weight;
  };
  std::vector<Index> out_offset;
  std::vector<Index> in_offset;
  std::vector<cplx> value;
  std::vector<Index> bases;
  std::vector<Band> bands;
};

/// Expands a product term into (row offset, col offset, value) combinations
/// over its factors plus the list of spectator base indices. Every matrix
/// entry is (base + out_offset + k, base + in_offset + k) for k < run.
inline TermPattern expand(const HilbertLayout& layout, const ProductTerm& term) {
  TermPattern p;
  p.out_offset.push_back(0);
  p.in_offset.push_back(0);
  p.value.push_back(term.coefficient);
  for (const auto& f : term.factors) {
    const Index stride = layout.stride(f.slot);
    std::vector<Index> out, in;
    std::vector<cplx> val;
    for (std::size_t c = 0; c < p.value.size(); ++c) {
      for (Index col = 0; col < f.matrix.cols(); ++col) {
        for (Index row = 0; row < f.matrix.rows(); ++row) {
          const cplx v = f.matrix(row, col);
          if (v == cplx(0.0)) continue;
          out.push_back(p.out_offset[c] + row * stride);
          in.push_back(p.in_offset[c] + col * stride);
          val.push_back(p.value[c] * v);
        }
      }
    }
    p.out_offset = std::move(out);
    p.in_offset = std::move(in);
    p.value = std::move(val);
  }

  if (term.factors.empty()) {
    p.run = layout.total_dim();
    p.bases = {0};
    return p;
  }
  std::vector<bool> involved(layout.slots(), false);
  for (const auto& f : term.factors) involved[f.slot] = true;
  const std::size_t last = term.factors.back().slot;
  p.run = layout.stride(last);
  p.bases = spectator_bases(layout, involved, last);
  return p;
}

inline BandPattern expand_banded(const HilbertLayout& layout, const ProductTerm& term) {
  BandPattern p;
  ProductTerm rest{term.coefficient, {term.factors.begin(), term.factors.end() - 1}};
  auto head = expand(layout, rest);
  p.out_offset = std::move(head.out_offset);
  p.in_offset = std::move(head.in_offset);
  p.value = std::move(head.value);
  const std::size_t fast = term.factors.back().slot;
  std::vector<bool> involved(layout.slots(), false);
  for (const auto& f : term.factors) involved[f.slot] = true;
  p.bases = spectator_bases(layout, involved, fast);
  const Matrix& m = term.factors.back().matrix;
  const Index d = m.rows();
  for (Index k = -(d - 1); k < d; ++k) {
    BandPattern::Band b{std::max<Index>(k, 0), std::max<Index>(-k, 0), {}};
    bool any = false;
    for (Index j = 0; j < d - std::abs(k); ++j) {
      const cplx w = m(b.out_shift + j, b.in_shift + j);
      any = any || w != cplx(0.0);
      b.weight.push_back(w);
    }
    if (!any) continue;
    // trim zero ends
    std::size_t lo = 0, hi = b.weight.size();
    while (b.weight[lo] == cplx(0.0)) ++lo;
    while (b.weight[hi - 1] == cplx(0.0)) --hi;
    b.out_shift += static_cast<Index>(lo);
    b.in_shift += static_cast<Index>(lo);
    b.weight = std::vector<cplx>(b.weight.begin() + static_cast<std::ptrdiff_t>(lo),
                                 b.weight.begin() + static_cast<std::ptrdiff_t>(hi));
    p.bands.push_back(std::move(b));
  }
  return p;
}

inline ProductTerm multiply_terms(const ProductTerm& a, const ProductTerm& b) {
  ProductTerm out{a.coefficient * b.coefficient, {}};
  std::size_t i = 0, j = 0;
  while (i < a.factors.size() || j < b.factors.size()) {
    if (j == b.factors.size() || (i < a.factors.size() && a.factors[i].slot < b.factors[j].slot)) {
      out.factors.push_back(a.factors[i++]);
    } else if (i == a.factors.size() || b.factors[j].slot < a.factors[i].slot) {
      out.factors.push_back(b.factors[j++]);
    } else {
      out.factors.push_back({a.factors[i].slot, a.factors[i].matrix * b.factors[j].matrix});
      ++i;
      ++j;
    }
  }
  return out;
}

inline bool is_zero_term(const ProductTerm& t) {
  if (t.coefficient == cplx(0.0)) return true;
  for (const auto& f : t.factors) {
    if (f.matrix.cwiseAbs().maxCoeff() == 0.0) return true;
  }
  return false;
}

}  // namespace detail

/// Sum of tensor-product terms. This is the symbolic form every Hamiltonian
/// and jump operator is built in; it materializes to a SparseOperator or
/// compiles to a matrix-free kernel.
class OperatorSum {
 public:
  OperatorSum() = default;
  explicit OperatorSum(HilbertLayout layout) : layout_(std::move(layout)) {}

  static OperatorSum identity(const HilbertLayout& layout, cplx coefficient = 1.0) {
    OperatorSum s(layout);
    if (coefficient != cplx(0.0)) s.terms_.push_back({coefficient, {}});
    return s;
  }

  /// Lifts a single-slot operator onto `slot`.
  static OperatorSum local(const HilbertLayout& layout, std::size_t slot, const SparseOperator& op) {
    if (slot >= layout.slots()) throw InvalidArgument("slot out of range");
    if (op.layout().slots() != 1 || op.dim() != layout.dim(slot)) {
      throw DimensionMismatch("local operator dimension does not match slot " + std::to_string(slot));
    }
    OperatorSum s(layout);
    s.terms_.push_back({1.0, {{slot, op.dense()}}});
    return s;
  }

  const HilbertLayout& layout() const { return layout_; }
  const std::vector<ProductTerm>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }
  Index dim() const { return layout_.total_dim(); }

  OperatorSum& operator+=(const OperatorSum& o) {
    adopt_layout(o);
    for (const auto& t : o.terms_) terms_.push_back(t);
    return *this;
  }

  OperatorSum& operator-=(const OperatorSum& o) { return *this += (-1.0) * o; }

  OperatorSum& operator*=(cplx s) {
    if (s == cplx(0.0)) {
      terms_.clear();
      return *this;
    }
    for (auto& t : terms_) t.coefficient *= s;
    return *this;
  }

  friend OperatorSum operator+(OperatorSum a, const OperatorSum& b) { return a += b; }
  friend OperatorSum operator-(OperatorSum a, const OperatorSum& b) { return a -= b; }
  friend OperatorSum operator*(cplx s, OperatorSum a) { return a *= s; }
  friend OperatorSum operator*(double s, OperatorSum a) { return a *= cplx(s); }
  friend OperatorSum operator*(const OperatorSum& a, const OperatorSum& b) {
    OperatorSum out(a.layout_.slots() ? a.layout_ : b.layout_);
    if (a.layout_.slots() && b.layout_.slots() && !(a.layout_ == b.layout_)) {
      throw DimensionMismatch("operator sums live on different layouts");
    }
    for (const auto& x : a.terms_) {
      for (const auto& y : b.terms_) {
        auto t = detail::multiply_terms(x, y);
        if (!detail::is_zero_term(t)) out.terms_.push_back(std::move(t));
      }
    }
    return out;
  }

  OperatorSum adjoint() const {
    OperatorSum out(layout_);
    out.terms_.reserve(terms_.size());
    for (const auto& t : terms_) out.terms_.push_back(t.adjoint());
    return out;
  }

  SparseOperator to_sparse() const {
    std::vector<Entry> entries;
    for (const auto& t : terms_) {
      const auto p = detail::expand(layout_, t);
      for (std::size_t c = 0; c < p.value.size(); ++c) {
        for (Index b : p.bases) {
          for (Index k = 0; k < p.run; ++k) {
            entries.push_back({b + p.out_offset[c] + k, b + p.in_offset[c] + k, p.value[c]});
          }
        }
      }
    }
    return SparseOperator(layout_, entries);
  }

 private:
  void adopt_layout(const OperatorSum& o) {
    if (!layout_.slots()) {
      layout_ = o.layout_;
    } else if (o.layout_.slots() && !(layout_ == o.layout_)) {
      throw DimensionMismatch("operator sums live on different layouts");
    }
  }

  HilbertLayout layout_;
  std::vector<ProductTerm> terms_;
};

/// Matrix-free kernel for an OperatorSum. Diagonal terms are folded into one
/// vector; off-diagonal terms sharing a slot set share a block. Only the
/// state vectors are touched in the inner loops.
class CompiledOperator {
 public:
  CompiledOperator() = default;

  explicit CompiledOperator(const OperatorSum& op) : dim_(op.dim()) {
    std::map<std::vector<std::size_t>, std::size_t> by_slots;
    for (const auto& t : op.terms()) {
      if (detail::is_zero_term(t)) continue;
      auto p = detail::expand(op.layout(), t);
      if (t.is_diagonal()) {
        if (diagonal_.size() == 0) diagonal_ = Vector::Zero(dim_);
        for (std::size_t c = 0; c < p.value.size(); ++c) {
          for (Index b : p.bases) {
            for (Index k = 0; k < p.run; ++k) diagonal_(b + p.out_offset[c] + k) += p.value[c];
          }
        }
        continue;
      }
      if (t.factors.back().slot + 1 == op.layout().slots() && op.layout().dim(t.factors.back().slot) > 2) {
        banded_.push_back(detail::expand_banded(op.layout(), t));
        continue;
      }
      std::vector<std::size_t> key;
      for (const auto& f : t.factors) key.push_back(f.slot);
      auto [it, inserted] = by_slots.try_emplace(key, blocks_.size());
      if (inserted) {
        blocks_.push_back(std::move(p));
      } else {
        auto& blk = blocks_[it->second];
        blk.out_offset.insert(blk.out_offset.end(), p.out_offset.begin(), p.out_offset.end());
        blk.in_offset.insert(blk.in_offset.end(), p.in_offset.begin(), p.in_offset.end());
        blk.value.insert(blk.value.end(), p.value.begin(), p.value.end());
      }
    }
    for (auto& blk : blocks_) merge_duplicates(blk);
  }

  Index dim() const { return dim_; }
  bool empty() const { return diagonal_.size() == 0 && blocks_.empty() && banded_.empty(); }

  /// y += scale * Op x
  void apply_add(const cplx* x, cplx* y, cplx scale) const {
    const double sr = scale.real(), si = scale.imag();
    if (diagonal_.size()) {
      const cplx* dg = diagonal_.data();
      for (Index i = 0; i < dim_; ++i) {
        const double vr = sr * dg[i].real() - si * dg[i].imag();
        const double vi = sr * dg[i].imag() + si * dg[i].real();
        fma(vr, vi, x[i], y[i]);
      }
    }
    for (const auto& blk : blocks_) {
      const Index run = blk.run;
      const Index* bases = blk.bases.data();
      const std::size_t nb = blk.bases.size();
      const std::size_t nc = blk.value.size();
      thread_local std::vector<double> scaled_;
      scaled_.resize(2 * nc);
      for (std::size_t c = 0; c < nc; ++c) {
        scaled_[2 * c] = sr * blk.value[c].real() - si * blk.value[c].imag();
        scaled_[2 * c + 1] = sr * blk.value[c].imag() + si * blk.value[c].real();
      }
      const double* v = scaled_.data();
      if (run < 8) {
        // short runs: keep the local block in cache
        for (std::size_t b = 0; b < nb; ++b) {
          const cplx* xs = x + bases[b];
          cplx* ys = y + bases[b];
          for (std::size_t c = 0; c < nc; ++c) {
            for (Index k = 0; k < run; ++k) {
              fma(v[2 * c], v[2 * c + 1], xs[blk.in_offset[c] + k], ys[blk.out_offset[c] + k]);
            }
          }
        }
        continue;
      }
      for (std::size_t c = 0; c < nc; ++c) {
        const double vr = v[2 * c], vi = v[2 * c + 1];
        const cplx* xs = x + blk.in_offset[c];
        cplx* ys = y + blk.out_offset[c];
        for (std::size_t b = 0; b < nb; ++b) {
          const double* xr = reinterpret_cast<const double*>(xs + bases[b]);
          double* yr = reinterpret_cast<double*>(ys + bases[b]);
          for (Index k = 0; k < run; ++k) {
            const double a = xr[2 * k], bi = xr[2 * k + 1];
            yr[2 * k] += vr * a - vi * bi;
            yr[2 * k + 1] += vr * bi + vi * a;
          }
        }
      }
    }
    for (const auto& bp : banded_) apply_banded(bp, x, y, sr, si);
  }

  Vector apply(const Vector& x) const {
    if (x.size() != dim_) throw DimensionMismatch("vector length does not match operator");
    Vector y = Vector::Zero(dim_);
    apply_add(x.data(), y.data(), 1.0);
    return y;
  }

  /// Number of stored (value, offset) combinations times their spectator
  /// count, i.e. the matrix nonzeros visited per application.
  Index work() const {
    Index w = diagonal_.size();
    for (const auto& blk : blocks_) {
      w += static_cast<Index>(blk.value.size() * blk.bases.size()) * blk.run;
    }
    for (const auto& bp : banded_) {
      Index per = 0;
      for (const auto& b : bp.bands) per += static_cast<Index>(b.weight.size());
      w += static_cast<Index>(bp.value.size() * bp.bases.size()) * per;
    }
    return w;
  }

 private:
  static void apply_banded(const detail::BandPattern& bp, const cplx* x, cplx* y, double sr, double si) {
    // scaled weights, laid out [combination][band][j] as (re, im)
    thread_local std::vector<double> table;
    std::size_t per = 0;
    for (const auto& b : bp.bands) per += b.weight.size();
    table.resize(2 * per * bp.value.size());
    double* tp = table.data();
    for (const cplx& v0 : bp.value) {
      const cplx v = cplx(sr, si) * v0;
      for (const auto& b : bp.bands) {
        for (const cplx& w : b.weight) {
          const cplx z = v * w;
          *tp++ = z.real();
          *tp++ = z.imag();
        }
      }
    }
    const std::size_t nc = bp.value.size();
    const double* t = table.data();
    for (std::size_t c = 0; c < nc; ++c) {
      const double* xs = reinterpret_cast<const double*>(x + bp.in_offset[c]);
      double* ys = reinterpret_cast<double*>(y + bp.out_offset[c]);
      for (const auto& b : bp.bands) {
        const Index len = static_cast<Index>(b.weight.size());
        for (Index base : bp.bases) {
          const double* xb = xs + 2 * (base + b.in_shift);
          double* yb = ys + 2 * (base + b.out_shift);
          for (Index j = 0; j < len; ++j) {
            const double wr = t[2 * j], wi = t[2 * j + 1];
            const double a = xb[2 * j], bi = xb[2 * j + 1];
            yb[2 * j] += wr * a - wi * bi;
            yb[2 * j + 1] += wr * bi + wi * a;
          }
        }
        t += 2 * len;
      }
    }
  }

  static inline void fma(double vr, double vi, const cplx& x, cplx& y) {
    const double a = x.real(), b = x.imag();
    y = cplx(y.real() + vr * a - vi * b, y.imag() + vr * b + vi * a);
  }

  static void merge_duplicates(detail::TermPattern& blk) {
    std::vector<std::size_t> order(blk.value.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(blk.out_offset[a], blk.in_offset[a]) < std::tie(blk.out_offset[b], blk.in_offset[b]);
    });
    detail::TermPattern merged;
    merged.bases = std::move(blk.bases);
    merged.run = blk.run;
    for (auto i : order) {
      if (!merged.value.empty() && merged.out_offset.back() == blk.out_offset[i] &&
          merged.in_offset.back() == blk.in_offset[i]) {
        merged.value.back() += blk.value[i];
      } else {
        merged.out_offset.push_back(blk.out_offset[i]);
        merged.in_offset.push_back(blk.in_offset[i]);
        merged.value.push_back(blk.value[i]);
      }
    }
    detail::TermPattern kept;
    kept.bases = std::move(merged.bases);
    kept.run = merged.run;
    for (std::size_t i = 0; i < merged.value.size(); ++i) {
      if (merged.value[i] == cplx(0.0)) continue;
      kept.out_offset.push_back(merged.out_offset[i]);
      kept.in_offset.push_back(merged.in_offset[i]);
      kept.value.push_back(merged.value[i]);
    }
    blk = std::move(kept);
  }

  Index dim_ = 0;
  Vector diagonal_;
  std::vector<detail::TermPattern> blocks_;
  std::vector<detail::BandPattern> banded_;
};

}  // namespace catqed
