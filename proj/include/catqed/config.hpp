#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "catqed/dynamics.hpp"
#include "catqed/model.hpp"

namespace catqed {

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class ModelMode { full, effective, exchange };
enum class SolverKind { automatic, deterministic, trajectories };

inline const char* to_string(ModelMode m) {
  switch (m) {
    case ModelMode::full: return "full";
    case ModelMode::effective: return "effective";
    case ModelMode::exchange: return "exchange";
  }
  return "full";
}

inline const char* to_string(SolverKind s) {
  switch (s) {
    case SolverKind::automatic: return "auto";
    case SolverKind::deterministic: return "deterministic";
    case SolverKind::trajectories: return "trajectories";
  }
  return "auto";
}

inline SolverKind parse_solver(const std::string& s) {
  if (s == "auto") return SolverKind::automatic;
  if (s == "deterministic") return SolverKind::deterministic;
  if (s == "trajectories") return SolverKind::trajectories;
  throw ConfigError("solver: expected auto | deterministic | trajectories, got \"" + s + "\"");
}

inline ModelMode parse_mode(const std::string& s) {
  if (s == "full") return ModelMode::full;
  if (s == "effective") return ModelMode::effective;
  if (s == "exchange") return ModelMode::exchange;
  throw ConfigError("model.mode: expected full | effective | exchange, got \"" + s + "\"");
}

inline const std::vector<std::string>& sweep_axis_names() {
  static const std::vector<std::string> names = {"cavity_lifetime_us", "crosstalk_ratio", "epsilon",
                                                 "f_decay",            "cutoff",          "alpha"};
  return names;
}

struct SweepAxis {
  std::string name;
  std::vector<double> values;
  bool operator==(const SweepAxis&) const = default;
};

/// Everything needed for one transfer run. Frequencies in MHz (cycles per
/// us), times in us, decoherence given as lifetimes; an absent lifetime
/// switches the channel off.
struct RunConfig {
  // system
  std::array<double, 4> g_mhz{60, 60, 70, 70};
  double delta_mhz = 800;
  double omega_eg_mhz = 7500;
  double omega_fg_mhz = 12500;
  double rabi_mhz = 47;
  double rabi_fe_mhz = 47;
  double alpha = 1.5;
  /// Uniform cavity-cavity coupling as a fraction of the largest g.
  double crosstalk_ratio = 0.0;
  double epsilon = 0.0;
  std::optional<double> delta_prime_mhz;

  // rates
  std::array<std::optional<double>, 4> cavity_lifetime_us{10.0, 10.0, 10.0, 10.0};
  std::optional<double> t_eg_us = 28;
  std::optional<double> t_fe_us = 14;
  std::optional<double> t_fg_us = 21;
  std::optional<double> t_phi_e_us = 7;
  std::optional<double> t_phi_f_us = 7;
  /// false switches off every channel out of or on |f>.
  bool f_decay = true;

  std::array<int, 4> cutoffs{8, 8, 8, 8};
  double max_deficit = 1e-2;

  ModelMode mode = ModelMode::full;
  bool crosstalk = true;
  bool pulse_leakage = true;
  SolverKind solver = SolverKind::automatic;

  // integrator
  double rel_tol = 1e-9;
  double abs_tol = 1e-11;
  double max_step_us = 0.0;
  int samples = 100;
  std::uint64_t seed = 1;
  int n_traj = 300;
  int workers = 1;
  int checkpoints = 128;
  int batches = 20;

  ConditionTolerances conditions;
  std::vector<SweepAxis> sweep;
  std::string output = "results/run";

  bool operator==(const RunConfig& o) const {
    return to_json().dump() == o.to_json().dump();
  }

  SystemParams system() const {
    SystemParams p;
    for (int j = 0; j < 4; ++j) p.g[j] = angular(g_mhz[j]);
    p.delta = angular(delta_mhz);
    p.omega_eg = angular(omega_eg_mhz);
    p.omega_fg = angular(omega_fg_mhz);
    p.rabi = angular(rabi_mhz);
    p.rabi_fe = angular(rabi_fe_mhz);
    p.alpha = alpha;
    p.epsilon = epsilon;
    if (delta_prime_mhz) p.delta_prime_override = angular(*delta_prime_mhz);
    p.set_uniform_crosstalk(crosstalk_ratio * p.g_max());
    return p;
  }

  DecoherenceRates rates() const {
    auto inv = [](const std::optional<double>& t) { return t ? 1.0 / *t : 0.0; };
    DecoherenceRates r;
    for (int j = 0; j < 4; ++j) r.kappa[j] = inv(cavity_lifetime_us[j]);
    r.gamma_eg = inv(t_eg_us);
    r.gamma_phi_e = inv(t_phi_e_us);
    if (f_decay) {
      r.gamma_fe = inv(t_fe_us);
      r.gamma_fg = inv(t_fg_us);
      r.gamma_phi_f = inv(t_phi_f_us);
    }
    return r;
  }

  bool has_crosstalk() const { return crosstalk && crosstalk_ratio != 0.0; }

  HilbertLayout layout() const { return HilbertLayout({3, cutoffs[0], cutoffs[1], cutoffs[2], cutoffs[3]}); }

  IntegratorConfig integrator() const {
    IntegratorConfig c;
    c.rel_tol = rel_tol;
    c.abs_tol = abs_tol;
    c.max_step = max_step_us;
    c.seed = seed;
    c.n_traj = n_traj;
    c.workers = workers;
    c.checkpoints = checkpoints;
    c.batches = batches;
    return c;
  }

  /// Sets one sweep coordinate.
  void apply(const std::string& axis, double v) {
    if (axis == "cavity_lifetime_us") {
      cavity_lifetime_us.fill(v);
    } else if (axis == "crosstalk_ratio") {
      crosstalk_ratio = v;
    } else if (axis == "epsilon") {
      epsilon = v;
    } else if (axis == "f_decay") {
      f_decay = v != 0.0;
    } else if (axis == "cutoff") {
      if (v != std::round(v)) throw ConfigError("sweep axis cutoff needs integer values");
      cutoffs.fill(static_cast<int>(v));
    } else if (axis == "alpha") {
      alpha = v;
    } else {
      throw ConfigError("unknown sweep axis \"" + axis + "\"");
    }
  }

  /// Range checks beyond the JSON schema.
  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    for (int j = 0; j < 4; ++j) {
      if (!(g_mhz[j] > 0)) fail("system.g_mhz[" + std::to_string(j) + "]: must be positive");
      if (cutoffs[j] < 2) fail("cutoffs[" + std::to_string(j) + "]: must be at least 2");
      if (cavity_lifetime_us[j] && !(*cavity_lifetime_us[j] > 0))
        fail("rates.cavity_lifetime_us[" + std::to_string(j) + "]: must be positive or null");
    }
    const std::pair<const char*, const std::optional<double>*> lifetimes[] = {
        {"t_eg_us", &t_eg_us}, {"t_fe_us", &t_fe_us}, {"t_fg_us", &t_fg_us},
        {"t_phi_e_us", &t_phi_e_us}, {"t_phi_f_us", &t_phi_f_us}};
    for (const auto& [name, t] : lifetimes) {
      if (*t && !(**t > 0)) fail(std::string("rates.") + name + ": must be positive or null");
    }
    if (!(alpha > 0)) fail("system.alpha: must be positive");
    if (!(max_deficit > 0 && max_deficit < 1)) fail("max_deficit: must lie in (0, 1)");
    if (crosstalk_ratio < 0) fail("system.crosstalk_ratio: must be non-negative");
    if (!(rel_tol > 0) || !(abs_tol > 0)) fail("integrator: tolerances must be positive");
    if (max_step_us < 0) fail("integrator.max_step_us: must be non-negative");
    if (samples < 1) fail("integrator.samples: must be at least 1");
    if (n_traj < 1) fail("integrator.n_traj: must be at least 1");
    if (workers < 1) fail("integrator.workers: must be at least 1");
    if (checkpoints < 1) fail("integrator.checkpoints: must be at least 1");
    if (batches < 1) fail("integrator.batches: must be at least 1");
    if (output.empty()) fail("output: must not be empty");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      const auto& a = sweep[i];
      const auto& names = sweep_axis_names();
      if (std::find(names.begin(), names.end(), a.name) == names.end())
        fail("sweep[" + std::to_string(i) + "].name: unknown axis \"" + a.name + "\"");
      if (!seen.insert(a.name).second) fail("sweep[" + std::to_string(i) + "].name: duplicate axis");
      if (a.values.empty()) fail("sweep[" + std::to_string(i) + "].values: must not be empty");
    }
    try {
      system().validate();
    } catch (const InvalidArgument& e) {
      fail(std::string("system: ") + e.what());
    }
  }

  nlohmann::ordered_json to_json() const {
    using J = nlohmann::ordered_json;
    auto opt = [](const std::optional<double>& v) { return v ? J(*v) : J(nullptr); };
    J j;
    J s;
    s["g_mhz"] = g_mhz;
    s["delta_mhz"] = delta_mhz;
    s["delta_prime_mhz"] = opt(delta_prime_mhz);
    s["omega_eg_mhz"] = omega_eg_mhz;
    s["omega_fg_mhz"] = omega_fg_mhz;
    s["rabi_mhz"] = rabi_mhz;
    s["rabi_fe_mhz"] = rabi_fe_mhz;
    s["alpha"] = alpha;
    s["crosstalk_ratio"] = crosstalk_ratio;
    s["epsilon"] = epsilon;
    j["system"] = s;
    J r;
    r["cavity_lifetime_us"] = J::array();
    for (const auto& k : cavity_lifetime_us) r["cavity_lifetime_us"].push_back(opt(k));
    r["t_eg_us"] = opt(t_eg_us);
    r["t_fe_us"] = opt(t_fe_us);
    r["t_fg_us"] = opt(t_fg_us);
    r["t_phi_e_us"] = opt(t_phi_e_us);
    r["t_phi_f_us"] = opt(t_phi_f_us);
    r["f_decay"] = f_decay;
    j["rates"] = r;
    j["cutoffs"] = cutoffs;
    j["max_deficit"] = max_deficit;
    j["model"] = {{"mode", to_string(mode)}, {"crosstalk", crosstalk}, {"pulse_leakage", pulse_leakage}};
    j["solver"] = to_string(solver);
    j["integrator"] = {{"rel_tol", rel_tol},         {"abs_tol", abs_tol}, {"max_step_us", max_step_us},
                       {"samples", samples},         {"seed", seed},       {"n_traj", n_traj},
                       {"workers", workers},         {"checkpoints", checkpoints}, {"batches", batches}};
    j["conditions"] = {{"equality_rel", conditions.equality_rel},
                       {"dominance_ratio", conditions.dominance_ratio}};
    j["sweep"] = J::array();
    for (const auto& a : sweep) j["sweep"].push_back({{"name", a.name}, {"values", a.values}});
    j["output"] = output;
    return j;
  }

  std::string dump() const { return to_json().dump(2) + "\n"; }
};

namespace detail {

/// Strict object reader: typed access with field paths, unknown keys rejected.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (auto* v = get(key)) out = as_number(*v, path(key));
  }

  void optional_number(const std::string& key, std::optional<double>& out) {
    if (auto* v = get(key)) out = v->is_null() ? std::nullopt : std::optional<double>(as_number(*v, path(key)));
  }

  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (auto* v = get(key)) out = static_cast<Int>(as_integer(*v, path(key)));
  }

  void boolean(const std::string& key, bool& out) {
    if (auto* v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (auto* v = get(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  const nlohmann::json* array(const std::string& key, std::size_t n = 0) {
    auto* v = get(key);
    if (!v) return nullptr;
    if (!v->is_array()) throw ConfigError(path(key) + ": expected an array");
    if (n && v->size() != n) throw ConfigError(path(key) + ": expected " + std::to_string(n) + " entries");
    return v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown key");
    }
  }

  static double as_number(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path + ": must be finite");
    return x;
  }

  static long long as_integer(const nlohmann::json& v, const std::string& path) {
    if (v.is_number_integer() || v.is_number_unsigned()) return v.get<long long>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (x == std::round(x)) return static_cast<long long>(x);
    }
    throw ConfigError(path + ": expected an integer");
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("JSON syntax error at " + detail::line_column(text, e.byte) + ": " + e.what());
  }
  RunConfig c;
  detail::ObjectReader top(j, "");

  if (auto* s = top.get("system")) {
    detail::ObjectReader r(*s, "system");
    if (auto* g = r.array("g_mhz", 4)) {
      for (std::size_t i = 0; i < 4; ++i)
        c.g_mhz[i] = detail::ObjectReader::as_number((*g)[i], "system.g_mhz[" + std::to_string(i) + "]");
    }
    r.number("delta_mhz", c.delta_mhz);
    r.optional_number("delta_prime_mhz", c.delta_prime_mhz);
    r.number("omega_eg_mhz", c.omega_eg_mhz);
    r.number("omega_fg_mhz", c.omega_fg_mhz);
    r.number("rabi_mhz", c.rabi_mhz);
    r.number("rabi_fe_mhz", c.rabi_fe_mhz);
    r.number("alpha", c.alpha);
    r.number("crosstalk_ratio", c.crosstalk_ratio);
    r.number("epsilon", c.epsilon);
    r.finish();
  }
  if (auto* s = top.get("rates")) {
    detail::ObjectReader r(*s, "rates");
    if (auto* k = r.array("cavity_lifetime_us", 4)) {
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& v = (*k)[i];
        c.cavity_lifetime_us[i] =
            v.is_null() ? std::nullopt
                        : std::optional<double>(detail::ObjectReader::as_number(
                              v, "rates.cavity_lifetime_us[" + std::to_string(i) + "]"));
      }
    }
    r.optional_number("t_eg_us", c.t_eg_us);
    r.optional_number("t_fe_us", c.t_fe_us);
    r.optional_number("t_fg_us", c.t_fg_us);
    r.optional_number("t_phi_e_us", c.t_phi_e_us);
    r.optional_number("t_phi_f_us", c.t_phi_f_us);
    r.boolean("f_decay", c.f_decay);
    r.finish();
  }
  if (auto* a = top.array("cutoffs", 4)) {
    for (std::size_t i = 0; i < 4; ++i)
      c.cutoffs[i] = static_cast<int>(detail::ObjectReader::as_integer((*a)[i], "cutoffs[" + std::to_string(i) + "]"));
  }
  top.number("max_deficit", c.max_deficit);
  if (auto* m = top.get("model")) {
    detail::ObjectReader r(*m, "model");
    std::string mode = to_string(c.mode);
    r.string("mode", mode);
    c.mode = parse_mode(mode);
    r.boolean("crosstalk", c.crosstalk);
    r.boolean("pulse_leakage", c.pulse_leakage);
    r.finish();
  }
  {
    std::string s = to_string(c.solver);
    top.string("solver", s);
    c.solver = parse_solver(s);
  }
  if (auto* m = top.get("integrator")) {
    detail::ObjectReader r(*m, "integrator");
    r.number("rel_tol", c.rel_tol);
    r.number("abs_tol", c.abs_tol);
    r.number("max_step_us", c.max_step_us);
    r.integer("samples", c.samples);
    r.integer("seed", c.seed);
    r.integer("n_traj", c.n_traj);
    r.integer("workers", c.workers);
    r.integer("checkpoints", c.checkpoints);
    r.integer("batches", c.batches);
    r.finish();
  }
  if (auto* m = top.get("conditions")) {
    detail::ObjectReader r(*m, "conditions");
    r.number("equality_rel", c.conditions.equality_rel);
    r.number("dominance_ratio", c.conditions.dominance_ratio);
    r.finish();
  }
  if (auto* sw = top.array("sweep")) {
    for (std::size_t i = 0; i < sw->size(); ++i) {
      const std::string p = "sweep[" + std::to_string(i) + "]";
      detail::ObjectReader r((*sw)[i], p);
      SweepAxis ax;
      r.string("name", ax.name);
      if (auto* v = r.array("values")) {
        for (std::size_t k = 0; k < v->size(); ++k)
          ax.values.push_back(detail::ObjectReader::as_number((*v)[k], p + ".values[" + std::to_string(k) + "]"));
      }
      r.finish();
      c.sweep.push_back(std::move(ax));
    }
  }
  top.string("output", c.output);
  top.finish();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace catqed
