#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "catqed/hilbert.hpp"
#include "catqed/model.hpp"
#include "catqed/tensor_operator.hpp"

namespace catqed {

struct IntegratorConfig {
  double rel_tol = 1e-9;
  double abs_tol = 1e-11;
  /// Upper step bound in us; 0 picks the modulation bound.
  double max_step = 0.0;
  /// Output times in [0, t_final]; empty means the final time only.
  std::vector<double> sample_times;
  std::uint64_t seed = 1;
  int n_traj = 1;
  int workers = 1;

  /// Allowed drift of the norm (pure) or trace (density). <= 0 disables.
  double drift_tol = 1e-8;
  /// Most negative eigenvalue tolerated in density samples.
  double positivity_tol = 1e-6;

  /// Draw the first jump conditioned on at least one jump before t_final
  /// and add the no-jump branch analytically.
  bool conditioned_sampling = true;
  /// Restart points stored along the no-jump reference run.
  int checkpoints = 128;
  /// Contiguous trajectory batches used for density error bars.
  int batches = 20;
  /// Keep the averaged density matrix (small systems only).
  bool keep_density = false;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw InvalidArgument("integrator tolerances must be positive");
    if (max_step < 0.0) throw InvalidArgument("max_step must be non-negative");
    if (n_traj < 1) throw InvalidArgument("n_traj must be at least 1");
    if (workers < 1) throw InvalidArgument("workers must be at least 1");
    if (batches < 1) throw InvalidArgument("batches must be at least 1");
  }
};

/// 1 / (20 nu_max) with nu_max the largest modulation in cycles per us.
inline double max_step_bound(const ModulatedHamiltonian& h) {
  const double nu = cycles(h.max_frequency());
  return nu > 0.0 ? 1.0 / (20.0 * nu) : std::numeric_limits<double>::infinity();
}

inline double effective_max_step(const ModulatedHamiltonian& h, const IntegratorConfig& cfg, double t_final) {
  const double bound = max_step_bound(h);
  if (cfg.max_step > 0.0) {
    if (cfg.max_step > bound * (1.0 + 1e-12)) {
      throw InvalidArgument("max_step " + std::to_string(cfg.max_step) + " exceeds the modulation bound " +
                            std::to_string(bound));
    }
    return cfg.max_step;
  }
  return std::min(bound, std::max(t_final, 1e-300));
}

inline std::vector<double> sample_grid(const IntegratorConfig& cfg, double t_final) {
  if (!(t_final >= 0.0)) throw InvalidArgument("final time must be non-negative");
  std::vector<double> s = cfg.sample_times.empty() ? std::vector<double>{t_final} : cfg.sample_times;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0.0 || s[i] > t_final * (1.0 + 1e-12)) throw InvalidArgument("sample time outside [0, t_final]");
    if (i && s[i] <= s[i - 1]) throw InvalidArgument("sample times must increase");
    s[i] = std::min(s[i], t_final);
  }
  return s;
}

/// Uniform grid of n+1 times over [0, t_final].
inline std::vector<double> uniform_times(double t_final, int n) {
  std::vector<double> s(static_cast<std::size_t>(n + 1));
  for (int i = 0; i <= n; ++i) s[static_cast<std::size_t>(i)] = t_final * i / n;
  s.back() = t_final;
  return s;
}

// ---------------------------------------------------------------------------
// Right-hand side

/// -i H(t) with optional non-Hermitian static part, as a matrix-free kernel.
class CompiledHamiltonian {
 public:
  CompiledHamiltonian() = default;

  explicit CompiledHamiltonian(const ModulatedHamiltonian& h, const std::vector<JumpOperator>& jumps = {})
      : dim_(h.layout.total_dim()), max_frequency_(h.max_frequency()) {
    OperatorSum st = h.static_part.empty() ? OperatorSum(h.layout) : h.static_part;
    for (const auto& j : jumps) st += cplx(0.0, -0.5) * (j.op.adjoint() * j.op);
    static_ = CompiledOperator(st);
    for (const auto& t : h.terms) {
      if (t.op.empty()) continue;
      terms_.push_back({CompiledOperator(t.op), CompiledOperator(t.op.adjoint()), t.frequency});
    }
  }

  Index dim() const { return dim_; }
  double max_frequency() const { return max_frequency_; }

  /// y = -i H(t) x for `cols` contiguous columns.
  void apply(double t, const cplx* x, cplx* y, Index cols = 1) const {
    std::fill(y, y + dim_ * cols, cplx(0.0));
    apply_add(t, x, y, cols, cplx(0.0, -1.0));
  }

  void apply_add(double t, const cplx* x, cplx* y, Index cols, cplx scale) const {
    for (Index c = 0; c < cols; ++c) {
      const cplx* xc = x + c * dim_;
      cplx* yc = y + c * dim_;
      static_.apply_add(xc, yc, scale);
      for (const auto& term : terms_) {
        const cplx ph = std::polar(1.0, term.frequency * t);
        term.op.apply_add(xc, yc, scale * ph);
        term.adj.apply_add(xc, yc, scale * std::conj(ph));
      }
    }
  }

 private:
  struct Term {
    CompiledOperator op;
    CompiledOperator adj;
    double frequency;
  };
  Index dim_ = 0;
  double max_frequency_ = 0.0;
  CompiledOperator static_;
  std::vector<Term> terms_;
};

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

namespace dp5 {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dp5

/// Adaptive Dormand-Prince stepper over an Eigen vector or matrix state.
/// `F` is callable as f(t, y, dy) writing dy/dt into dy.
template <class State, class F>
class DormandPrince {
 public:
  DormandPrince(F f, double rel_tol, double abs_tol, double max_step)
      : f_(std::move(f)), rtol_(rel_tol), atol_(abs_tol), hmax_(max_step) {}

  void reset(double t, State y, double h_proposed = 0.0) {
    t_ = t;
    y_ = std::move(y);
    k1_.resizeLike(y_);
    f_(t_, y_, k1_);
    h_ = h_proposed > 0.0 ? std::min(h_proposed, hmax_) : initial_step();
  }

  double t() const { return t_; }
  const State& y() const { return y_; }
  State& mutable_y() { return y_; }
  double proposed_step() const { return h_; }
  std::size_t accepted() const { return accepted_; }
  std::size_t rejected() const { return rejected_; }

  /// Recomputes the stored derivative after an external change of y.
  void refresh() { f_(t_, y_, k1_); }

  /// One accepted step that ends at or before t_limit.
  void step(double t_limit) {
    for (;;) {
      const double room = t_limit - t_;
      const bool clipped = h_ >= room;
      const double h = clipped ? room : h_;
      stages(h, ynew_);
      k7_.resizeLike(y_);
      err_.resizeLike(y_);
      f_(clipped ? t_limit : t_ + h, ynew_, k7_);
      re(err_) = h * (dp5::e1 * re(k1_) + dp5::e3 * re(k3_) + dp5::e4 * re(k4_) + dp5::e5 * re(k5_) +
                      dp5::e6 * re(k6_) + dp5::e7 * re(k7_));
      const double en = error_norm();
      if (en <= 1.0) {
        const double fac = en == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 10.0);
        const double hnew = std::min(h * fac, hmax_);
        h_ = clipped ? std::max(h_, hnew) : hnew;
        h_ = std::min(h_, hmax_);
        t_ = clipped ? t_limit : t_ + h;
        std::swap(y_, ynew_);
        std::swap(k1_, k7_);
        ++accepted_;
        return;
      }
      ++rejected_;
      h_ = h * std::max(0.2, 0.9 * std::pow(en, -0.2));
      if (!(h_ > 16 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t_)))) {
        throw StepSizeUnderflow("step size underflow at t = " + std::to_string(t_));
      }
    }
  }

  /// Fifth-order solution after a fixed step h from the current point.
  void trial(double h, State& out) { stages(h, out); }

  void advance_to(double t_end) {
    while (t_ < t_end) step(t_end);
  }

 private:
  // Real views of complex buffers; every tableau coefficient is real.
  static Eigen::Map<Eigen::ArrayXd> re(State& s) {
    return {reinterpret_cast<double*>(s.data()), 2 * s.size()};
  }

  void stages(double h, State& out) {
    using namespace dp5;
    for (State* k : {&tmp_, &k2_, &k3_, &k4_, &k5_, &k6_, &out}) k->resizeLike(y_);
    auto y = re(y_), t = re(tmp_), r1 = re(k1_), r2 = re(k2_), r3 = re(k3_), r4 = re(k4_), r5 = re(k5_),
         r6 = re(k6_);
    t = y + (h * a21) * r1;
    f_(t_ + c2 * h, tmp_, k2_);
    t = y + h * (a31 * r1 + a32 * r2);
    f_(t_ + c3 * h, tmp_, k3_);
    t = y + h * (a41 * r1 + a42 * r2 + a43 * r3);
    f_(t_ + c4 * h, tmp_, k4_);
    t = y + h * (a51 * r1 + a52 * r2 + a53 * r3 + a54 * r4);
    f_(t_ + c5 * h, tmp_, k5_);
    t = y + h * (a61 * r1 + a62 * r2 + a63 * r3 + a64 * r4 + a65 * r5);
    f_(t_ + h, tmp_, k6_);
    re(out) = y + h * (b1 * r1 + b3 * r3 + b4 * r4 + b5 * r5 + b6 * r6);
  }

  double error_norm() const {
    const cplx* y = y_.data();
    const cplx* yn = ynew_.data();
    const cplx* e = err_.data();
    const Index n = y_.size();
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double sc = atol_ + rtol_ * std::sqrt(std::max(std::norm(y[i]), std::norm(yn[i])));
      s += std::norm(e[i]) / (sc * sc);
    }
    return std::sqrt(s / static_cast<double>(n));
  }

  double initial_step() const {
    const double d0 = y_.norm(), d1 = k1_.norm();
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    return std::min(h, hmax_);
  }

  F f_;
  double rtol_, atol_, hmax_;
  double t_ = 0.0, h_ = 0.0;
  State y_, ynew_, tmp_, err_, k1_, k2_, k3_, k4_, k5_, k6_, k7_;
  std::size_t accepted_ = 0, rejected_ = 0;
};

template <class State, class F>
DormandPrince<State, F> make_stepper(F f, double rel_tol, double abs_tol, double max_step) {
  return DormandPrince<State, F>(std::move(f), rel_tol, abs_tol, max_step);
}

// ---------------------------------------------------------------------------
// Pure states

struct PureEvolution {
  std::vector<double> times;
  std::vector<QuantumState> states;
  double max_norm_drift = 0.0;
  std::size_t steps = 0;
};

/// Calls `observe(t, psi)` at each sample time.
template <class Observe>
inline std::size_t evolve_pure_observe(const ModulatedHamiltonian& h, const Vector& psi0, double t_final,
                                       const IntegratorConfig& cfg, Observe&& observe) {
  cfg.validate();
  if (psi0.size() != h.layout.total_dim()) throw DimensionMismatch("initial state does not match Hamiltonian");
  const auto samples = sample_grid(cfg, t_final);
  const double hmax = effective_max_step(h, cfg, t_final);
  CompiledHamiltonian ch(h);
  auto rhs = [&ch](double t, const Vector& y, Vector& dy) { ch.apply(t, y.data(), dy.data()); };
  auto stepper = make_stepper<Vector>(rhs, cfg.rel_tol, cfg.abs_tol, hmax);
  stepper.reset(0.0, psi0);
  for (double ts : samples) {
    try {
      stepper.advance_to(ts);
    } catch (const StepSizeUnderflow& e) {
      throw StepSizeUnderflow(std::string(e.what()) + "; largest modulation " +
                              std::to_string(cycles(h.max_frequency())) + " MHz");
    }
    observe(ts, stepper.y());
  }
  return stepper.accepted();
}

inline PureEvolution evolve_pure(const ModulatedHamiltonian& h, const QuantumState& psi0, double t_final,
                                 const IntegratorConfig& cfg) {
  if (!psi0.is_pure()) throw InvalidArgument("evolve_pure needs a pure state");
  if (!(psi0.layout() == h.layout)) throw DimensionMismatch("state layout does not match Hamiltonian");
  PureEvolution out;
  const double n0 = psi0.vector().norm();
  out.steps = evolve_pure_observe(h, psi0.vector(), t_final, cfg, [&](double t, const Vector& psi) {
    out.times.push_back(t);
    out.states.push_back(QuantumState::raw(h.layout, psi));
    out.max_norm_drift = std::max(out.max_norm_drift, std::abs(psi.norm() - n0));
  });
  if (cfg.drift_tol > 0.0 && out.max_norm_drift >= cfg.drift_tol) {
    throw InvalidState("norm drift " + std::to_string(out.max_norm_drift) + " exceeds tolerance");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Density matrices

struct LindbladEvolution {
  std::vector<double> times;
  std::vector<QuantumState> states;
  double max_trace_drift = 0.0;
  /// Largest |rho - rho^dagger| seen before symmetrization.
  double max_hermiticity_error = 0.0;
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
};

inline double min_eigenvalue(const Matrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// d rho/dt = -i(H_nh rho - rho H_nh^dagger) + sum_k C_k rho C_k^dagger
class LindbladRhs {
 public:
  LindbladRhs(const ModulatedHamiltonian& h, const std::vector<JumpOperator>& jumps)
      : ham_(h, jumps), dim_(h.layout.total_dim()) {
    for (const auto& j : jumps) jumps_.emplace_back(j.op);
  }

  void operator()(double t, const Matrix& rho, Matrix& drho) {
    y_.resize(dim_, dim_);
    ham_.apply(t, rho.data(), y_.data(), dim_);
    drho = y_ + y_.adjoint();
    for (const auto& c : jumps_) {
      z_.setZero(dim_, dim_);
      for (Index k = 0; k < dim_; ++k) c.apply_add(rho.col(k).data(), z_.col(k).data(), 1.0);
      zt_ = z_.adjoint();
      for (Index k = 0; k < dim_; ++k) c.apply_add(zt_.col(k).data(), drho.col(k).data(), 1.0);
    }
  }

 private:
  CompiledHamiltonian ham_;
  std::vector<CompiledOperator> jumps_;
  Index dim_;
  Matrix y_, z_, zt_;
};

inline LindbladEvolution evolve_lindblad(const ModulatedHamiltonian& h, const std::vector<JumpOperator>& jumps,
                                         const QuantumState& rho0, double t_final, const IntegratorConfig& cfg) {
  cfg.validate();
  if (rho0.is_pure()) throw InvalidArgument("evolve_lindblad needs a density matrix");
  if (!(rho0.layout() == h.layout)) throw DimensionMismatch("state layout does not match Hamiltonian");
  const auto samples = sample_grid(cfg, t_final);
  const double hmax = effective_max_step(h, cfg, t_final);
  LindbladRhs rhs(h, jumps);
  auto f = [&rhs](double t, const Matrix& y, Matrix& dy) { rhs(t, y, dy); };
  auto stepper = make_stepper<Matrix>(f, cfg.rel_tol, cfg.abs_tol, hmax);
  stepper.reset(0.0, rho0.matrix());
  const double tr0 = rho0.trace();
  LindbladEvolution out;
  for (double ts : samples) {
    while (stepper.t() < ts) {
      stepper.step(ts);
      auto& y = stepper.mutable_y();
      out.max_hermiticity_error = std::max(out.max_hermiticity_error, (y - y.adjoint()).cwiseAbs().maxCoeff());
      Matrix sym = 0.5 * (y + y.adjoint());
      y = std::move(sym);
      stepper.refresh();
    }
    const Matrix& rho = stepper.y();
    const double drift = std::abs(rho.trace().real() - tr0);
    out.max_trace_drift = std::max(out.max_trace_drift, drift);
    const double ev = min_eigenvalue(rho);
    out.min_eigenvalue = std::min(out.min_eigenvalue, ev);
    if (ev < -cfg.positivity_tol) {
      throw PositivityViolation("density matrix eigenvalue " + std::to_string(ev) + " at t = " + std::to_string(ts),
                                ev);
    }
    out.times.push_back(ts);
    out.states.push_back(QuantumState::raw(h.layout, rho));
  }
  out.steps = stepper.accepted();
  if (cfg.drift_tol > 0.0 && out.max_trace_drift >= cfg.drift_tol) {
    throw InvalidState("trace drift " + std::to_string(out.max_trace_drift) + " exceeds tolerance");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quantum trajectories

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

class UniformSource {
 public:
  explicit UniformSource(std::uint64_t seed) : gen_(seed) {}
  /// Uniform in [0, 1).
  double operator()() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

/// Scalar observables measured on normalized trajectory states, given the
/// sample index.
struct TrajectoryObservables {
  std::vector<std::string> names;
  std::function<void(std::size_t sample, const Vector& psi, std::span<double> out)> measure;
};

struct TrajectoryResult {
  std::vector<double> times;
  std::vector<std::string> names;
  /// samples x observables
  Eigen::MatrixXd mean;
  Eigen::MatrixXd std_error;
  /// Averaged density matrices when requested.
  std::vector<Matrix> density;
  /// Batch-means standard error of the trace distance to the average.
  std::vector<double> density_std_error;
  /// Probability of no jump over the whole run.
  double no_jump_probability = 1.0;
  int n_traj = 0;
  std::uint64_t seed = 0;
  std::size_t jumps = 0;
  std::size_t steps = 0;

  Index column(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<Index>(i);
    }
    throw InvalidArgument("no observable named " + name);
  }
};

inline double trace_distance(const Matrix& a, const Matrix& b) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a - b, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

namespace detail {

struct Checkpoint {
  double t;
  Vector psi;
  double h;
  double norm2;
  std::size_t next_sample;
};

class TrajectoryEngine {
 public:
  using Rhs = std::function<void(double, const Vector&, Vector&)>;

  TrajectoryEngine(const ModulatedHamiltonian& h, const std::vector<JumpOperator>& jumps,
                   const IntegratorConfig& cfg, double t_final, const TrajectoryObservables& obs)
      : ham_(h, jumps), cfg_(cfg), samples_(sample_grid(cfg, t_final)), t_final_(t_final), obs_(obs),
        hmax_(effective_max_step(h, cfg, t_final)) {
    for (const auto& j : jumps) jumps_.emplace_back(j.op);
    nobs_ = obs.names.size();
  }

  std::size_t n_samples() const { return samples_.size(); }
  std::size_t n_obs() const { return nobs_; }
  const std::vector<double>& samples() const { return samples_; }
  bool has_jumps() const { return !jumps_.empty(); }

  /// No-jump run: records observables, normalized states if requested,
  /// checkpoints and the final no-jump probability.
  void run_reference(const Vector& psi0, bool keep_states) {
    ref_obs_.assign(samples_.size() * nobs_, 0.0);
    auto st = stepper();
    st.reset(0.0, psi0);
    const double spacing = t_final_ / std::max(1, cfg_.checkpoints);
    double next_cp = 0.0;
    std::size_t si = 0;
    auto record = [&]() {
      while (si < samples_.size() && samples_[si] <= st.t()) {
        Vector psi = st.y() / st.y().norm();
        measure(si, psi, &ref_obs_[si * nobs_]);
        if (keep_states) ref_states_.push_back(psi);
        ++si;
      }
    };
    record();
    checkpoints_.push_back({0.0, psi0, st.proposed_step(), psi0.squaredNorm(), si});
    next_cp = spacing;
    while (si < samples_.size()) {
      st.step(samples_[si]);
      record();
      if (st.t() >= next_cp && si < samples_.size()) {
        checkpoints_.push_back({st.t(), st.y(), st.proposed_step(), st.y().squaredNorm(), si});
        next_cp = st.t() + spacing;
      }
    }
    p0_ = st.y().squaredNorm();
    ref_steps_ = st.accepted();
  }

  double no_jump_probability() const { return p0_; }
  const std::vector<double>& reference_observables() const { return ref_obs_; }
  const std::vector<Vector>& reference_states() const { return ref_states_; }
  std::size_t reference_steps() const { return ref_steps_; }

  struct Outcome {
    std::size_t jumps = 0;
    std::size_t steps = 0;
  };

  /// One trajectory whose first jump happens when the no-jump norm^2 falls
  /// to r1. Writes observables (and states) for every sample.
  Outcome run(double r1, UniformSource& rng, double* obs_out, std::vector<Vector>* states_out) {
    Outcome oc;
    if (r1 <= p0_) {
      std::copy(ref_obs_.begin(), ref_obs_.end(), obs_out);
      if (states_out) *states_out = ref_states_;
      return oc;
    }
    // latest checkpoint still above the threshold
    std::size_t c = 0;
    for (std::size_t i = 0; i < checkpoints_.size(); ++i) {
      if (checkpoints_[i].norm2 > r1) c = i;
    }
    const auto& cp = checkpoints_[c];
    std::size_t si = cp.next_sample;
    std::copy(ref_obs_.begin(), ref_obs_.begin() + static_cast<std::ptrdiff_t>(si * nobs_), obs_out);
    if (states_out) {
      states_out->assign(ref_states_.begin(), ref_states_.begin() + static_cast<std::ptrdiff_t>(si));
    }
    auto st = stepper();
    st.reset(cp.t, cp.psi, cp.h);
    double r = r1;
    Vector trial(cp.psi.size());
    Vector prev;
    while (si < samples_.size()) {
      const double t0 = st.t();
      const double h0 = st.proposed_step();
      prev = st.y();
      st.step(samples_[si]);
      ++oc.steps;
      if (st.y().squaredNorm() <= r) {
        // back up and bisect the crossing inside [t0, t]
        const double h_taken = st.t() - t0;
        st.reset(t0, std::move(prev), h0);
        double lo = 0.0, hi = h_taken;
        for (int it = 0; it < 200; ++it) {
          const double mid = 0.5 * (lo + hi);
          st.trial(mid, trial);
          const double n2 = trial.squaredNorm();
          if (n2 > r) lo = mid; else hi = mid;
          if (std::abs(n2 - r) <= cfg_.rel_tol * r || hi - lo <= 1e-15 * std::max(1.0, t0)) break;
        }
        st.trial(hi, trial);
        const double tj = t0 + hi;
        Vector jumped = apply_jump(trial, rng);
        ++oc.jumps;
        st.reset(tj, std::move(jumped), h0);
        r = rng();
        if (tj >= samples_[si]) {
          // jump landed on the sample time itself
          record_sample(st.y(), si, obs_out, states_out);
          ++si;
        }
        continue;
      }
      if (st.t() >= samples_[si]) {
        record_sample(st.y(), si, obs_out, states_out);
        ++si;
      }
    }
    return oc;
  }

 private:
  DormandPrince<Vector, Rhs> stepper() {
    Rhs f = [this](double t, const Vector& y, Vector& dy) { ham_.apply(t, y.data(), dy.data()); };
    DormandPrince<Vector, Rhs> st(std::move(f), cfg_.rel_tol, cfg_.abs_tol, hmax_);
    return st;
  }

  void measure(std::size_t si, const Vector& psi, double* out) const {
    if (nobs_) obs_.measure(si, psi, std::span<double>(out, nobs_));
  }

  void record_sample(const Vector& y, std::size_t si, double* obs_out, std::vector<Vector>* states_out) {
    Vector psi = y / y.norm();
    measure(si, psi, obs_out + si * nobs_);
    if (states_out) states_out->push_back(std::move(psi));
  }

  Vector apply_jump(const Vector& psi, UniformSource& rng) {
    std::vector<Vector> out;
    std::vector<double> w;
    double total = 0.0;
    for (const auto& c : jumps_) {
      Vector v = c.apply(psi);
      const double n2 = v.squaredNorm();
      total += n2;
      w.push_back(total);
      out.push_back(std::move(v));
    }
    const double x = rng() * total;
    std::size_t k = 0;
    while (k + 1 < w.size() && w[k] <= x) ++k;
    return out[k] / std::sqrt(out[k].squaredNorm());
  }

  CompiledHamiltonian ham_;
  std::vector<CompiledOperator> jumps_;
  IntegratorConfig cfg_;
  std::vector<double> samples_;
  double t_final_;
  const TrajectoryObservables& obs_;
  double hmax_;
  std::size_t nobs_ = 0;
  std::vector<double> ref_obs_;
  std::vector<Vector> ref_states_;
  std::vector<Checkpoint> checkpoints_;
  double p0_ = 1.0;
  std::size_t ref_steps_ = 0;
};

}  // namespace detail

/// Monte-Carlo wave-function average of `obs` (and optionally of the density
/// matrix). Results depend only on the seed, never on the worker count.
inline TrajectoryResult evolve_trajectories(const ModulatedHamiltonian& h, const std::vector<JumpOperator>& jumps,
                                            const QuantumState& psi0, double t_final, const IntegratorConfig& cfg,
                                            const TrajectoryObservables& obs = {}) {
  cfg.validate();
  if (!psi0.is_pure()) throw InvalidArgument("trajectories need a pure initial state");
  if (!(psi0.layout() == h.layout)) throw DimensionMismatch("state layout does not match Hamiltonian");
  detail::TrajectoryEngine engine(h, jumps, cfg, t_final, obs);
  const bool keep = cfg.keep_density;
  engine.run_reference(psi0.vector(), keep);

  const std::size_t ns = engine.n_samples(), no = engine.n_obs();
  const double p0 = engine.no_jump_probability();
  const bool conditioned = cfg.conditioned_sampling && engine.has_jumps();
  const int n = cfg.n_traj;
  const int nb = std::min(cfg.batches, n);

  TrajectoryResult res;
  res.times = engine.samples();
  res.names = obs.names;
  res.no_jump_probability = p0;
  res.n_traj = n;
  res.seed = cfg.seed;

  std::vector<double> values(static_cast<std::size_t>(n) * ns * no, 0.0);
  std::vector<std::vector<Matrix>> batch_rho(static_cast<std::size_t>(nb));
  std::vector<std::size_t> jumps_per(static_cast<std::size_t>(n), 0), steps_per(static_cast<std::size_t>(n), 0);
  const Index dim = h.layout.total_dim();

  auto batch_begin = [&](int b) { return static_cast<int>(static_cast<long long>(b) * n / nb); };
  std::atomic<int> next{0};
  auto worker = [&]() {
    std::vector<Vector> states;
    for (int b = next++; b < nb; b = next++) {
      auto& acc = batch_rho[static_cast<std::size_t>(b)];
      if (keep) acc.assign(ns, Matrix::Zero(dim, dim));
      for (int i = batch_begin(b); i < batch_begin(b + 1); ++i) {
        UniformSource rng(trajectory_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        const double u = rng();
        const double r1 = conditioned ? p0 + (1.0 - p0) * u : u;
        auto oc = engine.run(r1, rng, &values[static_cast<std::size_t>(i) * ns * no], keep ? &states : nullptr);
        jumps_per[static_cast<std::size_t>(i)] = oc.jumps;
        steps_per[static_cast<std::size_t>(i)] = oc.steps;
        if (keep) {
          for (std::size_t s = 0; s < ns; ++s) acc[s].noalias() += states[s] * states[s].adjoint();
        }
      }
    }
  };
  const int nw = std::min(cfg.workers, nb);
  if (nw <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // weight of the sampled part and the analytic no-jump part
  const double wj = conditioned ? 1.0 - p0 : 1.0;
  const double w0 = conditioned ? p0 : 0.0;
  const auto& ref = engine.reference_observables();
  res.mean = Eigen::MatrixXd::Zero(static_cast<Index>(ns), static_cast<Index>(no));
  res.std_error = Eigen::MatrixXd::Zero(static_cast<Index>(ns), static_cast<Index>(no));
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t k = 0; k < no; ++k) {
      double sum = 0.0, sum2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double v = values[(static_cast<std::size_t>(i) * ns + s) * no + k];
        sum += v;
        sum2 += v * v;
      }
      const double m = sum / n;
      const double var = n > 1 ? std::max(0.0, (sum2 - n * m * m) / (n - 1)) : 0.0;
      res.mean(static_cast<Index>(s), static_cast<Index>(k)) = w0 * ref[s * no + k] + wj * m;
      res.std_error(static_cast<Index>(s), static_cast<Index>(k)) = wj * std::sqrt(var / n);
    }
  }

  if (keep) {
    const auto& ref_states = engine.reference_states();
    res.density.assign(ns, Matrix::Zero(dim, dim));
    res.density_std_error.assign(ns, 0.0);
    for (std::size_t s = 0; s < ns; ++s) {
      const Matrix base = w0 * (ref_states[s] * ref_states[s].adjoint());
      std::vector<Matrix> per_batch;
      Matrix total = Matrix::Zero(dim, dim);
      for (int b = 0; b < nb; ++b) {
        const int cnt = batch_begin(b + 1) - batch_begin(b);
        total += batch_rho[static_cast<std::size_t>(b)][s];
        per_batch.push_back(base + (wj / cnt) * batch_rho[static_cast<std::size_t>(b)][s]);
      }
      res.density[s] = base + (wj / n) * total;
      if (nb > 1) {
        double acc = 0.0;
        for (const auto& rb : per_batch) {
          const double d = trace_distance(rb, res.density[s]);
          acc += d * d;
        }
        res.density_std_error[s] = std::sqrt(acc / (static_cast<double>(nb) * (nb - 1)));
      }
    }
  }

  res.steps = engine.reference_steps();
  for (int i = 0; i < n; ++i) {
    res.jumps += jumps_per[static_cast<std::size_t>(i)];
    res.steps += steps_per[static_cast<std::size_t>(i)];
  }
  return res;
}

}  // namespace catqed
