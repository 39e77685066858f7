#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "catqed/analysis.hpp"
#include "catqed/config.hpp"
#include "catqed/dynamics.hpp"
#include "catqed/model.hpp"
#include "catqed/states.hpp"

namespace catqed {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kSweepSchema = "catqed-sweep/1";
inline constexpr const char* kSeriesSchema = "catqed-series/1";
inline constexpr const char* kConvergenceSchema = "catqed-convergence/1";

/// Above this dimension the automatic solver switches to trajectories.
inline constexpr Index kDeterministicDimLimit = 600;

struct RunOutcome {
  TransferResult result;
  std::vector<double> fidelity_std_error;
  std::string solver;
  /// Norm drift (pure), trace drift (Lindblad) or population-sum drift of
  /// the trajectory average.
  double max_drift = 0.0;
  double min_eigenvalue = 0.0;
  double max_hermiticity_error = 0.0;
  double no_jump_probability = 1.0;
  int n_traj = 0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t jumps = 0;
  double wall_seconds = 0.0;
  double transfer_time = 0.0;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string params_hash(const RunConfig& c) {
  auto j = c.to_json();
  j.erase("output");
  j.erase("sweep");
  j["integrator"].erase("workers");
  return hex64(fnv1a(j.dump()));
}

/// Shortest round-trip decimal form.
inline std::string fmt(double x) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline ModulatedHamiltonian transfer_hamiltonian(const RunConfig& c, const SystemParams& p, const DerivedParams& d,
                                                 const HilbertLayout& L) {
  switch (c.mode) {
    case ModelMode::full: return build_full_hamiltonian(p, d, L, c.has_crosstalk(), c.pulse_leakage);
    case ModelMode::effective:
      return ModulatedHamiltonian::constant(build_effective_hamiltonians(p, d, L, false, c.conditions).h_tilde_eff);
    case ModelMode::exchange:
      return ModulatedHamiltonian::constant(build_effective_hamiltonians(p, d, L, true, c.conditions).he);
  }
  throw ConfigError("unknown model mode");
}

namespace detail {

inline double qutrit_min_eigenvalue(const Eigen::MatrixXd& mean, Index row) {
  return min_eigenvalue(TransferObservables::qutrit_marginal(mean, row));
}

/// Target/oracle overlaps, P_f and occupations of a density sample.
inline void measure_density(const QuantumState& rho, const QuantumState& target, const QuantumState& oracle,
                            std::span<double> out) {
  const double ft = transfer_fidelity(rho, target), fo = transfer_fidelity(rho, oracle);
  out[0] = ft * ft;
  out[1] = fo * fo;
  out[2] = population(rho, Level::g);
  out[3] = population(rho, Level::e);
  out[4] = population(rho, Level::f);
  for (std::size_t j = 0; j < 4; ++j) out[5 + j] = mean_occupation(rho, j + 1);
}

}  // namespace detail

/// One transfer run over [0, T] with T fixed by the symmetric design.
inline RunOutcome run_transfer(const RunConfig& c, std::ostream* log = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  c.validate();
  const auto p = c.system();
  const auto d = derive_parameters(p);
  const auto design = design_parameters(p);
  const auto L = c.layout();
  const auto cav = cavity_layout(L);
  const double T = design.transfer_time;

  const auto psi0 = initial_transfer_state(c.alpha, L, c.max_deficit);
  const auto target = ideal_target_state(c.alpha, L, c.max_deficit);
  const auto h = transfer_hamiltonian(c, p, d, L);
  const auto jumps = jump_operators(c.rates(), L);

  auto cfg = c.integrator();
  cfg.sample_times = uniform_times(T, c.samples);
  const auto& times = cfg.sample_times;

  std::vector<Vector> oracle;
  for (double t : times) oracle.push_back(analytic_transfer_oracle(c.alpha, t, design.lambda, cav, c.max_deficit).vector());
  std::vector<Vector> frame;
  if (c.mode == ModelMode::exchange) {
    for (double t : times) frame.push_back(frame_return_phases(L, d, t));
  }

  std::string solver;
  if (jumps.empty()) {
    solver = "pure";
  } else if (c.solver == SolverKind::deterministic ||
             (c.solver == SolverKind::automatic && L.total_dim() <= kDeterministicDimLimit)) {
    solver = "lindblad";
  } else {
    solver = "trajectories";
  }
  if (log) *log << "solver " << solver << ", dimension " << L.total_dim() << ", " << jumps.size() << " jump operators\n";

  auto obs = TransferObservables::make(L, target.vector(), oracle);
  if (!frame.empty()) {
    obs.measure = [inner = obs.measure, &frame](std::size_t s, const Vector& psi, std::span<double> out) {
      inner(s, psi.cwiseProduct(frame[s]), out);
    };
  }
  const std::size_t no = obs.names.size(), ns = times.size();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(static_cast<Index>(ns), static_cast<Index>(no));
  Eigen::MatrixXd se = Eigen::MatrixXd::Zero(static_cast<Index>(ns), static_cast<Index>(no));

  RunOutcome r;
  r.solver = solver;
  r.transfer_time = T;
  if (solver == "pure") {
    const double n0 = psi0.vector().norm();
    std::size_t k = 0;
    std::vector<double> row(no);
    r.steps = evolve_pure_observe(h, psi0.vector(), T, cfg, [&](double, const Vector& psi) {
      r.max_drift = std::max(r.max_drift, std::abs(psi.norm() - n0));
      obs.measure(k, psi, row);
      for (std::size_t q = 0; q < no; ++q) mean(static_cast<Index>(k), static_cast<Index>(q)) = row[q];
      ++k;
    });
    if (cfg.drift_tol > 0.0 && r.max_drift >= cfg.drift_tol) {
      throw InvalidState("norm drift " + fmt(r.max_drift) + " exceeds tolerance");
    }
  } else if (solver == "lindblad") {
    if (L.total_dim() > 4 * kDeterministicDimLimit) {
      throw ConfigError("dimension " + std::to_string(L.total_dim()) + " is too large for the master equation");
    }
    const auto ev = evolve_lindblad(h, jumps, psi0.to_density(), T, cfg);
    std::vector<double> row(no, 0.0);
    for (std::size_t k = 0; k < ns; ++k) {
      QuantumState rho = ev.states[k];
      if (!frame.empty()) {
        const Matrix m = frame[k].asDiagonal() * rho.matrix() * frame[k].conjugate().asDiagonal();
        rho = QuantumState::raw(L, m);
      }
      detail::measure_density(rho, target, QuantumState::pure(cav, oracle[k]), row);
      for (std::size_t q = 0; q < 9; ++q) mean(static_cast<Index>(k), static_cast<Index>(q)) = row[q];
    }
    r.max_drift = ev.max_trace_drift;
    r.min_eigenvalue = ev.min_eigenvalue;
    r.max_hermiticity_error = ev.max_hermiticity_error;
    r.steps = ev.steps;
  } else {
    const auto tr = evolve_trajectories(h, jumps, psi0, T, cfg, obs);
    mean = tr.mean;
    se = tr.std_error;
    r.no_jump_probability = tr.no_jump_probability;
    r.n_traj = tr.n_traj;
    r.seed = tr.seed;
    r.steps = tr.steps;
    r.jumps = tr.jumps;
    r.min_eigenvalue = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ns; ++k) {
      const Index i = static_cast<Index>(k);
      r.max_drift = std::max(r.max_drift, std::abs(mean(i, 2) + mean(i, 3) + mean(i, 4) - 1.0));
      r.min_eigenvalue = std::min(r.min_eigenvalue, detail::qutrit_min_eigenvalue(mean, i));
    }
  }

  auto& res = r.result;
  r.fidelity_std_error.resize(ns);
  for (std::size_t k = 0; k < ns; ++k) {
    const Index i = static_cast<Index>(k);
    TransferSample s;
    s.t = times[k];
    s.fidelity_target = std::sqrt(std::max(0.0, mean(i, 0)));
    s.fidelity_oracle = std::sqrt(std::max(0.0, mean(i, 1)));
    s.p_f = mean(i, 4);
    for (int j = 0; j < 4; ++j) s.occupation[j] = mean(i, 5 + j);
    r.fidelity_std_error[k] = s.fidelity_target > 0 ? se(i, 0) / (2 * s.fidelity_target) : 0.0;
    res.p_f_max = std::max(res.p_f_max, s.p_f);
    res.samples.push_back(s);
  }
  res.fidelity = res.samples.back().fidelity_target;
  res.fidelity_std_error = r.fidelity_std_error.back();
  res.metadata = {{"solver", solver},
                  {"mode", to_string(c.mode)},
                  {"params_hash", params_hash(c)},
                  {"dimension", std::to_string(L.total_dim())}};
  res.validate();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Files

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\r\n";
}

inline void write_series_csv(const std::string& path, const RunOutcome& r) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "# schema " << kSeriesSchema << "\r\n";
  out << csv_line({"t_over_T", "t_us", "fidelity", "fidelity_se", "fidelity_oracle", "p_f", "n1", "n2", "n3", "n4"});
  for (std::size_t k = 0; k < r.result.samples.size(); ++k) {
    const auto& s = r.result.samples[k];
    out << csv_line({fmt(s.t / r.transfer_time), fmt(s.t), fmt(s.fidelity_target), fmt(r.fidelity_std_error[k]),
                     fmt(s.fidelity_oracle), fmt(s.p_f), fmt(s.occupation[0]), fmt(s.occupation[1]),
                     fmt(s.occupation[2]), fmt(s.occupation[3])});
  }
}

inline nlohmann::ordered_json summary_json(const RunConfig& c, const RunOutcome& r) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["compiler"] = __VERSION__;
  j["params_hash"] = params_hash(c);
  j["solver"] = r.solver;
  j["fidelity"] = r.result.fidelity;
  j["fidelity_std_error"] = r.result.fidelity_std_error;
  j["initial_fidelity"] = r.result.samples.front().fidelity_target;
  j["p_f_max"] = r.result.p_f_max;
  j["transfer_time_us"] = r.transfer_time;
  j["max_drift"] = r.max_drift;
  j["min_eigenvalue"] = r.min_eigenvalue;
  j["max_hermiticity_error"] = r.max_hermiticity_error;
  if (r.solver == "trajectories") {
    j["n_traj"] = r.n_traj;
    j["seed"] = r.seed;
    j["no_jump_probability"] = r.no_jump_probability;
    j["jumps"] = r.jumps;
  }
  j["steps"] = r.steps;
  j["wall_seconds"] = r.wall_seconds;
  j["config"] = c.to_json();
  return j;
}

inline void write_summary(const std::string& path, const RunConfig& c, const RunOutcome& r) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << summary_json(c, r).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Validation report

inline void print_report(std::ostream& os, const RunConfig& c, const ConditionReport& rep) {
  const auto p = c.system();
  const auto d = derive_parameters(p);
  const auto r = c.rates();
  char buf[256];
  auto line = [&](const char* f, auto... a) {
    std::snprintf(buf, sizeof buf, f, a...);
    os << buf << "\n";
  };
  line("Delta'/2pi          %.4f MHz", cycles(d.delta_prime));
  line("lambda/2pi          %.6f MHz", cycles(d.lambda));
  line("lambda'/2pi         %.6f MHz", cycles(d.lambda_prime));
  for (int j = 0; j < 4; ++j) line("lambda_%d/2pi        %.6f MHz", j + 1, cycles(d.lambda_j[j]));
  line("T                   %.6f us", design_parameters(p).transfer_time);
  line("Delta_p/2pi         %.4f MHz", cycles(d.delta_p));
  for (int j = 0; j < 4; ++j) line("omega_%d/2pi         %.6f GHz", j + 1, cycles(d.omega[j]) / 1000);
  for (int j = 0; j < 4; ++j) {
    for (int l = j + 1; l < 4; ++l) line("Delta_%d%d/2pi        %.4f GHz", j + 1, l + 1, cycles(d.delta_jl(j, l)) / 1000);
  }
  for (int j = 0; j < 4; ++j) {
    if (r.kappa[j] > 0) {
      line("Q_%d                 %.4e", j + 1, d.omega[j] / r.kappa[j]);
    } else {
      line("Q_%d                 inf", j + 1);
    }
  }
  os << "conditions\n";
  for (const auto& cr : rep.results) {
    if (cr.equality) {
      line("  %-4s %-15s %-52s mismatch %.3e (tol %.1e)", cr.pass ? "ok" : "FAIL", cr.name.c_str(),
           cr.description.c_str(), cr.value, cr.threshold);
    } else {
      line("  %-4s %-15s %-52s ratio %.2f (min %.1f)", cr.pass ? "ok" : "FAIL", cr.name.c_str(),
           cr.description.c_str(), cr.value, cr.threshold);
    }
    if (!cr.note.empty()) os << "       " << cr.note << "\n";
  }
}

// ---------------------------------------------------------------------------
// Sweeps

struct GridPoint {
  std::vector<std::pair<std::string, double>> coords;
};

inline std::vector<GridPoint> expand_grid(const std::vector<SweepAxis>& axes) {
  std::vector<GridPoint> out{GridPoint{}};
  for (const auto& a : axes) {
    std::vector<GridPoint> next;
    for (const auto& g : out) {
      for (double v : a.values) {
        auto h = g;
        h.coords.emplace_back(a.name, v);
        next.push_back(std::move(h));
      }
    }
    out = std::move(next);
  }
  return out;
}

/// Preset grids. fig5 has no axes: it is a single time-resolved run.
inline RunConfig figure_preset(const RunConfig& base, const std::string& figure) {
  RunConfig c = base;
  if (figure == "fig3") {
    c.sweep = {{"crosstalk_ratio", {0.0, 0.01, 0.1}}, {"cavity_lifetime_us", {5, 10, 20, 30, 40, 50}}};
  } else if (figure == "fig4") {
    c.crosstalk_ratio = 0.01;
    c.sweep = {{"cavity_lifetime_us", {5, 10, 20, 30, 40, 50}}, {"f_decay", {1, 0}}};
  } else if (figure == "fig5") {
    c.crosstalk_ratio = 0.01;
    c.cavity_lifetime_us.fill(10.0);
    c.sweep.clear();
  } else if (figure == "fig6") {
    c.cavity_lifetime_us.fill(10.0);
    c.sweep = {{"crosstalk_ratio", {0.0, 0.01, 0.1}}, {"epsilon", {-0.05, -0.025, 0.0, 0.025, 0.05}}};
  } else {
    throw ConfigError("unknown figure \"" + figure + "\" (expected fig3, fig4, fig5 or fig6)");
  }
  return c;
}

inline std::vector<std::string> sweep_header(const std::vector<SweepAxis>& axes) {
  std::vector<std::string> h;
  for (const auto& a : axes) h.push_back(a.name);
  for (const char* s : {"fidelity", "fidelity_se", "p_f_max", "drift", "min_eigenvalue", "hermiticity_error",
                        "solver", "n_traj", "seed", "wall_s"})
    h.emplace_back(s);
  return h;
}

inline std::string point_key(const GridPoint& g) {
  std::string k;
  for (const auto& [name, v] : g.coords) k += fmt(v) + ",";
  return k;
}

/// Keys of rows already present in a sweep file with a matching header.
inline std::set<std::string> completed_keys(const std::string& path, const std::vector<std::string>& header,
                                            std::size_t n_axes) {
  std::set<std::string> keys;
  std::ifstream in(path, std::ios::binary);
  if (!in) return keys;
  std::string line;
  std::getline(in, line);
  if (line.rfind(std::string("# schema ") + kSweepSchema, 0) != 0) {
    throw Error(path + ": existing file has a different schema");
  }
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::string expect = csv_line(header);
  expect.resize(expect.size() - 2);
  if (line != expect) throw Error(path + ": existing file has a different header");
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::string k;
    std::size_t pos = 0;
    for (std::size_t a = 0; a < n_axes; ++a) {
      const auto comma = line.find(',', pos);
      if (comma == std::string::npos) throw Error(path + ": truncated row");
      k += line.substr(pos, comma - pos) + ",";
      pos = comma + 1;
    }
    keys.insert(k);
  }
  return keys;
}

struct SweepReport {
  std::size_t computed = 0;
  std::size_t skipped = 0;
};

/// Runs every grid point missing from the CSV and appends it in grid order.
inline SweepReport run_sweep(const RunConfig& c, const std::string& path, std::ostream* log = nullptr) {
  const auto header = sweep_header(c.sweep);
  const auto grid = expand_grid(c.sweep);
  ensure_parent(path);
  const bool exists = std::filesystem::exists(path);
  auto done = exists ? completed_keys(path, header, c.sweep.size()) : std::set<std::string>{};
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot write " + path);
  if (!exists) {
    out << "# schema " << kSweepSchema << "\r\n" << csv_line(header);
    out.flush();
  }
  SweepReport rep;
  for (const auto& g : grid) {
    if (done.count(point_key(g))) {
      ++rep.skipped;
      continue;
    }
    RunConfig pc = c;
    for (const auto& [name, v] : g.coords) pc.apply(name, v);
    if (log) {
      *log << "point";
      for (const auto& [name, v] : g.coords) *log << " " << name << "=" << fmt(v);
      *log << "\n";
    }
    const auto r = run_transfer(pc, log);
    std::vector<std::string> row;
    for (const auto& [name, v] : g.coords) row.push_back(fmt(v));
    const bool stoch = r.solver == "trajectories";
    for (std::string s : {fmt(r.result.fidelity), fmt(r.result.fidelity_std_error), fmt(r.result.p_f_max),
                          fmt(r.max_drift), fmt(r.min_eigenvalue), fmt(r.max_hermiticity_error), r.solver,
                          stoch ? std::to_string(r.n_traj) : std::string(),
                          stoch ? std::to_string(r.seed) : std::string(), fmt(r.wall_seconds)})
      row.push_back(s);
    out << csv_line(row);
    out.flush();
    if (log) *log << "  F = " << fmt(r.result.fidelity) << "  P_f max = " << fmt(r.result.p_f_max) << "\n";
    ++rep.computed;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceRow {
  std::string variant;
  int cutoff = 0;
  double rel_tol = 0.0;
  int n_traj = 0;
  RunOutcome outcome;
};

/// Base run, cutoffs +2 and +4, halved tolerances and, for stochastic runs,
/// doubled trajectory count.
inline std::vector<ConvergenceRow> run_convergence(const RunConfig& c, const std::string& path,
                                                   std::ostream* log = nullptr) {
  std::vector<std::pair<std::string, RunConfig>> variants;
  variants.emplace_back("base", c);
  for (int dc : {2, 4}) {
    RunConfig v = c;
    for (auto& k : v.cutoffs) k += dc;
    variants.emplace_back("cutoff+" + std::to_string(dc), v);
  }
  {
    RunConfig v = c;
    v.rel_tol /= 2;
    v.abs_tol /= 2;
    variants.emplace_back("tol/2", v);
  }
  std::vector<ConvergenceRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto name = variants[i].first;
    const auto v = variants[i].second;
    if (log) *log << "variant " << name << "\n";
    rows.push_back({name, v.cutoffs[0], v.rel_tol, 0, run_transfer(v, log)});
    rows.back().n_traj = rows.back().outcome.n_traj;
    if (name == "base" && rows.back().outcome.solver == "trajectories") {
      RunConfig w = c;
      w.n_traj *= 2;
      variants.emplace_back("n_traj*2", w);
    }
  }
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "# schema " << kConvergenceSchema << "\r\n";
  out << csv_line({"variant", "cutoff", "rel_tol", "n_traj", "fidelity", "fidelity_se", "delta_vs_base", "p_f_max",
                   "solver", "wall_s"});
  const double f0 = rows.front().outcome.result.fidelity;
  for (const auto& r : rows) {
    const auto& o = r.outcome;
    out << csv_line({r.variant, std::to_string(r.cutoff), fmt(r.rel_tol), std::to_string(r.n_traj),
                     fmt(o.result.fidelity), fmt(o.result.fidelity_std_error), fmt(o.result.fidelity - f0),
                     fmt(o.result.p_f_max), o.solver, fmt(o.wall_seconds)});
  }
  return rows;
}

}  // namespace catqed
