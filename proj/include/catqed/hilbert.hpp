#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "catqed/errors.hpp"

namespace catqed {

using cplx = std::complex<double>;
using Index = Eigen::Index;
using Vector = Eigen::VectorXcd;
using Matrix = Eigen::MatrixXcd;

inline constexpr cplx kI{0.0, 1.0};

/// Qutrit levels in ascending energy.
enum class Level : int { g = 0, e = 1, f = 2 };

inline Level level_from_string(std::string_view name) {
  if (name == "g") return Level::g;
  if (name == "e") return Level::e;
  if (name == "f") return Level::f;
  throw InvalidArgument("unknown qutrit level '" + std::string(name) + "'");
}

/// Ordered subsystem dimensions of a composite space. Row-major flattening:
/// the last slot varies fastest.
class HilbertLayout {
 public:
  HilbertLayout() = default;

  explicit HilbertLayout(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw InvalidDimension("layout needs at least one slot");
    strides_.assign(dims_.size(), 1);
    total_ = 1;
    for (std::size_t s = dims_.size(); s-- > 0;) {
      if (dims_[s] < 1) throw InvalidDimension("slot dimension must be positive");
      strides_[s] = total_;
      total_ *= dims_[s];
    }
  }

  /// Qutrit in slot 0 followed by cavities 1-4.
  static HilbertLayout transfer(const std::array<int, 4>& cutoffs) {
    for (int d : cutoffs) {
      if (d < 2) throw InvalidDimension("cavity cutoff must be at least 2");
    }
    return HilbertLayout({3, cutoffs[0], cutoffs[1], cutoffs[2], cutoffs[3]});
  }

  static HilbertLayout transfer(int cutoff) {
    return transfer({cutoff, cutoff, cutoff, cutoff});
  }

  std::size_t slots() const { return dims_.size(); }
  int dim(std::size_t slot) const { return dims_.at(slot); }
  const std::vector<int>& dims() const { return dims_; }
  Index total_dim() const { return total_; }
  Index stride(std::size_t slot) const { return strides_.at(slot); }

  Index flatten(std::span<const int> levels) const {
    if (levels.size() != dims_.size()) {
      throw DimensionMismatch("multi-index has wrong number of slots");
    }
    Index idx = 0;
    for (std::size_t s = 0; s < dims_.size(); ++s) {
      if (levels[s] < 0 || levels[s] >= dims_[s]) {
        throw InvalidArgument("level out of range in slot " + std::to_string(s));
      }
      idx += levels[s] * strides_[s];
    }
    return idx;
  }

  std::vector<int> unflatten(Index idx) const {
    if (idx < 0 || idx >= total_) throw InvalidArgument("basis index out of range");
    std::vector<int> levels(dims_.size());
    for (std::size_t s = 0; s < dims_.size(); ++s) {
      levels[s] = static_cast<int>(idx / strides_[s]);
      idx %= strides_[s];
    }
    return levels;
  }

  int level(Index idx, std::size_t slot) const {
    return static_cast<int>((idx / strides_[slot]) % dims_[slot]);
  }

  /// Layout of the given slots, in the given order.
  HilbertLayout subsystem(std::span<const std::size_t> keep) const {
    std::vector<int> d;
    d.reserve(keep.size());
    for (auto s : keep) d.push_back(dim(s));
    return HilbertLayout(std::move(d));
  }

  bool operator==(const HilbertLayout& other) const { return dims_ == other.dims_; }

  std::string describe() const {
    std::string out = "[";
    for (std::size_t s = 0; s < dims_.size(); ++s) {
      if (s) out += "x";
      out += std::to_string(dims_[s]);
    }
    return out + "]";
  }

 private:
  std::vector<int> dims_;
  std::vector<Index> strides_;
  Index total_ = 0;
};

struct Entry {
  Index row;
  Index col;
  cplx value;
};

/// Complex sparse matrix on a layout. Entries are kept in canonical
/// row-major order with duplicates summed.
class SparseOperator {
 public:
  using Storage = Eigen::SparseMatrix<cplx, Eigen::RowMajor, std::int64_t>;

  SparseOperator() = default;

  SparseOperator(HilbertLayout layout, const std::vector<Entry>& entries,
                 bool hermitian = false)
      : layout_(std::move(layout)), hermitian_(hermitian) {
    const Index n = layout_.total_dim();
    std::vector<Eigen::Triplet<cplx, std::int64_t>> trip;
    trip.reserve(entries.size());
    for (const auto& e : entries) {
      if (e.row < 0 || e.row >= n || e.col < 0 || e.col >= n) {
        throw InvalidArgument("operator entry index out of range");
      }
      trip.emplace_back(e.row, e.col, e.value);
    }
    m_.resize(n, n);
    m_.setFromTriplets(trip.begin(), trip.end());
    m_.prune(cplx(0.0));
    m_.makeCompressed();
  }

  SparseOperator(HilbertLayout layout, Storage m, bool hermitian = false)
      : layout_(std::move(layout)), m_(std::move(m)), hermitian_(hermitian) {
    if (m_.rows() != layout_.total_dim() || m_.cols() != layout_.total_dim()) {
      throw DimensionMismatch("matrix shape does not match layout");
    }
    m_.prune(cplx(0.0));
    m_.makeCompressed();
  }

  static SparseOperator identity(const HilbertLayout& layout) {
    Storage m(layout.total_dim(), layout.total_dim());
    m.setIdentity();
    return SparseOperator(layout, std::move(m), true);
  }

  const HilbertLayout& layout() const { return layout_; }
  Index dim() const { return layout_.total_dim(); }
  Index nnz() const { return m_.nonZeros(); }
  const Storage& storage() const { return m_; }
  bool hermitian_flag() const { return hermitian_; }

  cplx coeff(Index row, Index col) const { return m_.coeff(row, col); }

  std::vector<Entry> entries() const {
    std::vector<Entry> out;
    out.reserve(static_cast<std::size_t>(m_.nonZeros()));
    for (Index r = 0; r < m_.outerSize(); ++r) {
      for (Storage::InnerIterator it(m_, r); it; ++it) {
        out.push_back({it.row(), it.col(), it.value()});
      }
    }
    return out;
  }

  SparseOperator adjoint() const {
    Storage a = m_.adjoint();
    return SparseOperator(layout_, std::move(a), hermitian_);
  }

  Vector apply(const Vector& x) const {
    if (x.size() != dim()) throw DimensionMismatch("vector length does not match operator");
    return m_ * x;
  }

  Matrix dense() const { return Matrix(m_); }

  /// Largest entry modulus of M - M^dagger.
  double hermiticity_error() const {
    Storage d = m_ - Storage(m_.adjoint());
    return max_abs(d);
  }

  bool is_hermitian(double tol = 1e-12) const { return hermiticity_error() < tol; }

  SparseOperator& operator+=(const SparseOperator& o) {
    check_same(o);
    m_ += o.m_;
    m_.prune(cplx(0.0));
    hermitian_ = hermitian_ && o.hermitian_;
    return *this;
  }
  SparseOperator& operator-=(const SparseOperator& o) {
    check_same(o);
    m_ -= o.m_;
    m_.prune(cplx(0.0));
    hermitian_ = hermitian_ && o.hermitian_;
    return *this;
  }
  SparseOperator& operator*=(cplx s) {
    m_ *= s;
    m_.prune(cplx(0.0));
    hermitian_ = hermitian_ && s.imag() == 0.0;
    return *this;
  }

  friend SparseOperator operator+(SparseOperator a, const SparseOperator& b) { return a += b; }
  friend SparseOperator operator-(SparseOperator a, const SparseOperator& b) { return a -= b; }
  friend SparseOperator operator*(cplx s, SparseOperator a) { return a *= s; }
  friend SparseOperator operator*(const SparseOperator& a, const SparseOperator& b) {
    a.check_same(b);
    Storage p = a.m_ * b.m_;
    return SparseOperator(a.layout_, std::move(p));
  }

  /// Largest entry modulus of this - other.
  double max_abs_diff(const SparseOperator& other) const {
    check_same(other);
    Storage d = m_ - other.m_;
    return max_abs(d);
  }

  double max_abs() const { return max_abs(m_); }

 private:
  static double max_abs(const Storage& m) {
    double best = 0.0;
    for (Index r = 0; r < m.outerSize(); ++r) {
      for (Storage::InnerIterator it(m, r); it; ++it) best = std::max(best, std::abs(it.value()));
    }
    return best;
  }

  void check_same(const SparseOperator& o) const {
    if (!(layout_ == o.layout_)) throw DimensionMismatch("operators live on different layouts");
  }

  HilbertLayout layout_;
  Storage m_;
  bool hermitian_ = false;
};

inline SparseOperator commutator(const SparseOperator& a, const SparseOperator& b) {
  return a * b - b * a;
}

/// Truncated ladder operator: <n-1|a|n> = sqrt(n).
inline SparseOperator annihilation_op(int d) {
  if (d < 2) throw InvalidDimension("ladder operator needs dimension >= 2");
  std::vector<Entry> e;
  for (int n = 1; n < d; ++n) e.push_back({n - 1, n, std::sqrt(static_cast<double>(n))});
  return SparseOperator(HilbertLayout({d}), e);
}

inline SparseOperator creation_op(int d) { return annihilation_op(d).adjoint(); }

inline SparseOperator number_op(int d) {
  if (d < 2) throw InvalidDimension("number operator needs dimension >= 2");
  std::vector<Entry> e;
  for (int n = 1; n < d; ++n) e.push_back({n, n, static_cast<double>(n)});
  return SparseOperator(HilbertLayout({d}), e, true);
}

inline SparseOperator identity_op(int d) { return SparseOperator::identity(HilbertLayout({d})); }

/// |bra><ket| on the qutrit.
inline SparseOperator qutrit_op(Level bra, Level ket) {
  return SparseOperator(HilbertLayout({3}),
                        {{static_cast<Index>(bra), static_cast<Index>(ket), 1.0}},
                        bra == ket);
}

inline SparseOperator qutrit_op(std::string_view bra, std::string_view ket) {
  return qutrit_op(level_from_string(bra), level_from_string(ket));
}

/// I (x) ... (x) op (x) ... (x) I with op acting on `slot`.
inline SparseOperator embed(const SparseOperator& op, std::size_t slot, const HilbertLayout& layout) {
  if (slot >= layout.slots()) throw InvalidArgument("slot out of range");
  if (op.layout().slots() != 1 || op.dim() != layout.dim(slot)) {
    throw DimensionMismatch("operator dimension does not match slot " + std::to_string(slot));
  }
  const Index inner = layout.stride(slot);
  const Index outer = layout.total_dim() / (inner * layout.dim(slot));
  const auto local = op.entries();
  std::vector<Entry> e;
  e.reserve(local.size() * static_cast<std::size_t>(inner * outer));
  const Index block = inner * layout.dim(slot);
  for (Index o = 0; o < outer; ++o) {
    for (const auto& le : local) {
      for (Index i = 0; i < inner; ++i) {
        e.push_back({o * block + le.row * inner + i, o * block + le.col * inner + i, le.value});
      }
    }
  }
  return SparseOperator(layout, e, op.hermitian_flag());
}

/// Pure state vector or dense density matrix over a layout.
class QuantumState {
 public:
  static constexpr double kPureNormTol = 1e-9;
  static constexpr double kTraceTol = 1e-8;
  static constexpr double kHermitianTol = 1e-10;

  QuantumState() = default;

  /// Validated normalized pure state.
  static QuantumState pure(HilbertLayout layout, Vector psi) {
    QuantumState s = raw(std::move(layout), std::move(psi));
    s.validate();
    return s;
  }

  /// Validated density matrix.
  static QuantumState density(HilbertLayout layout, Matrix rho) {
    QuantumState s = raw(std::move(layout), std::move(rho));
    s.validate();
    return s;
  }

  static QuantumState raw(HilbertLayout layout, Vector psi) {
    if (psi.size() != layout.total_dim()) throw DimensionMismatch("state vector length mismatch");
    QuantumState s;
    s.layout_ = std::move(layout);
    s.data_ = std::move(psi);
    return s;
  }

  static QuantumState raw(HilbertLayout layout, Matrix rho) {
    if (rho.rows() != layout.total_dim() || rho.cols() != layout.total_dim()) {
      throw DimensionMismatch("density matrix shape mismatch");
    }
    QuantumState s;
    s.layout_ = std::move(layout);
    s.data_ = std::move(rho);
    return s;
  }

  const HilbertLayout& layout() const { return layout_; }
  bool is_pure() const { return std::holds_alternative<Vector>(data_); }
  const Vector& vector() const { return std::get<Vector>(data_); }
  const Matrix& matrix() const { return std::get<Matrix>(data_); }

  double norm() const { return is_pure() ? vector().norm() : std::sqrt(trace()); }

  double trace() const {
    return is_pure() ? vector().squaredNorm() : matrix().trace().real();
  }

  double hermiticity_error() const {
    if (is_pure()) return 0.0;
    return (matrix() - matrix().adjoint()).cwiseAbs().maxCoeff();
  }

  double purity() const {
    if (is_pure()) return vector().squaredNorm() * vector().squaredNorm();
    return (matrix() * matrix()).trace().real();
  }

  QuantumState to_density() const {
    if (!is_pure()) return *this;
    return raw(layout_, Matrix(vector() * vector().adjoint()));
  }

  void validate() const {
    if (is_pure()) {
      if (std::abs(vector().norm() - 1.0) >= kPureNormTol) {
        throw InvalidState("pure state is not normalized");
      }
    } else {
      if (std::abs(trace() - 1.0) >= kTraceTol) throw InvalidState("density matrix trace is not 1");
      if (hermiticity_error() >= kHermitianTol) throw InvalidState("density matrix is not Hermitian");
    }
  }

 private:
  HilbertLayout layout_;
  std::variant<Vector, Matrix> data_;
};

namespace detail {

/// Splits every basis index into (kept index, traced index).
struct SlotSplit {
  std::vector<Index> keep_index;
  std::vector<Index> trace_index;
  Index keep_dim = 1;
  Index trace_dim = 1;
};

inline SlotSplit split_slots(const HilbertLayout& layout, std::span<const std::size_t> keep) {
  std::vector<bool> kept(layout.slots(), false);
  for (auto s : keep) {
    if (s >= layout.slots()) throw InvalidArgument("kept slot out of range");
    if (kept[s]) throw InvalidArgument("kept slot listed twice");
    kept[s] = true;
  }
  std::vector<std::size_t> traced;
  for (std::size_t s = 0; s < layout.slots(); ++s) {
    if (!kept[s]) traced.push_back(s);
  }
  SlotSplit out;
  for (auto s : keep) out.keep_dim *= layout.dim(s);
  for (auto s : traced) out.trace_dim *= layout.dim(s);
  const Index n = layout.total_dim();
  out.keep_index.resize(static_cast<std::size_t>(n));
  out.trace_index.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index k = 0;
    for (auto s : keep) k = k * layout.dim(s) + layout.level(i, s);
    Index r = 0;
    for (auto s : traced) r = r * layout.dim(s) + layout.level(i, s);
    out.keep_index[static_cast<std::size_t>(i)] = k;
    out.trace_index[static_cast<std::size_t>(i)] = r;
  }
  return out;
}

}  // namespace detail

/// Reduced matrix on `keep` (in the given slot order). Works on any square
/// matrix, normalized or not.
inline Matrix partial_trace(const HilbertLayout& layout, const Matrix& rho,
                            std::span<const std::size_t> keep) {
  if (keep.empty()) throw InvalidArgument("partial trace needs at least one kept slot");
  if (rho.rows() != layout.total_dim() || rho.cols() != layout.total_dim()) {
    throw DimensionMismatch("density matrix shape mismatch");
  }
  const auto split = detail::split_slots(layout, keep);
  // full index for (k, r)
  std::vector<Index> full(static_cast<std::size_t>(split.keep_dim * split.trace_dim));
  for (Index i = 0; i < layout.total_dim(); ++i) {
    full[static_cast<std::size_t>(split.keep_index[static_cast<std::size_t>(i)] * split.trace_dim +
                                  split.trace_index[static_cast<std::size_t>(i)])] = i;
  }
  Matrix out = Matrix::Zero(split.keep_dim, split.keep_dim);
  for (Index k2 = 0; k2 < split.keep_dim; ++k2) {
    for (Index k1 = 0; k1 < split.keep_dim; ++k1) {
      cplx acc = 0.0;
      for (Index r = 0; r < split.trace_dim; ++r) {
        acc += rho(full[static_cast<std::size_t>(k1 * split.trace_dim + r)],
                   full[static_cast<std::size_t>(k2 * split.trace_dim + r)]);
      }
      out(k1, k2) = acc;
    }
  }
  return out;
}

inline QuantumState partial_trace(const QuantumState& state, std::span<const std::size_t> keep) {
  if (state.is_pure()) {
    throw InvalidArgument("partial_trace expects a density matrix; convert with to_density()");
  }
  if (keep.empty()) throw InvalidArgument("partial trace needs at least one kept slot");
  Matrix red = partial_trace(state.layout(), state.matrix(), keep);
  return QuantumState::raw(state.layout().subsystem(keep), std::move(red));
}

/// Reduced density matrix of a pure vector, computed as M M^dagger.
inline Matrix reduced_density(const HilbertLayout& layout, const Vector& psi,
                              std::span<const std::size_t> keep) {
  if (keep.empty()) throw InvalidArgument("reduction needs at least one kept slot");
  if (psi.size() != layout.total_dim()) throw DimensionMismatch("state vector length mismatch");
  const auto split = detail::split_slots(layout, keep);
  Matrix m = Matrix::Zero(split.keep_dim, split.trace_dim);
  for (Index i = 0; i < layout.total_dim(); ++i) {
    m(split.keep_index[static_cast<std::size_t>(i)], split.trace_index[static_cast<std::size_t>(i)]) = psi(i);
  }
  return m * m.adjoint();
}

/// Kronecker product of vectors, first factor slowest.
inline Vector kron(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

inline Vector basis_vector(int dim, int level) {
  if (level < 0 || level >= dim) throw InvalidArgument("basis level out of range");
  Vector v = Vector::Zero(dim);
  v(level) = 1.0;
  return v;
}

}  // namespace catqed
