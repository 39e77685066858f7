#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "catqed/catqed.hpp"

using namespace catqed;

namespace {

enum Exit { kOk = 0, kDomain = 1, kUsage = 2 };

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> cutoff;
  std::string solver;
};

void add_common(CLI::App* sub, Overrides& o, bool run_flags) {
  sub->add_option("--config", o.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  if (!run_flags) return;
  sub->add_option("--out", o.out, "output prefix (overrides the config)");
  sub->add_option("--seed", o.seed, "trajectory seed");
  sub->add_option("--workers", o.workers, "worker threads for trajectories")->check(CLI::PositiveNumber);
  sub->add_option("--solver", o.solver, "auto | deterministic | trajectories");
  sub->add_option("--cutoff", o.cutoff, "Fock dimension for every cavity")->check(CLI::Range(2, 64));
}

RunConfig load(const Overrides& o) {
  RunConfig c = load_config(o.config);
  if (!o.out.empty()) c.output = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.cutoff) c.cutoffs.fill(*o.cutoff);
  if (!o.solver.empty()) c.solver = parse_solver(o.solver);
  c.validate();
  return c;
}

int cmd_validate(const Overrides& o) {
  const RunConfig c = load(o);
  const auto rep = validate_conditions(c.system(), derive_parameters(c.system()), c.conditions);
  print_report(std::cout, c, rep);
  std::cout << (rep.all_pass() ? "all conditions hold\n" : "some conditions fail\n");
  return rep.all_pass() ? kOk : kDomain;
}

void print_outcome(const RunOutcome& r) {
  std::printf("solver %s, F(0) = %.6f, F(T) = %.6f", r.solver.c_str(), r.result.samples.front().fidelity_target,
              r.result.fidelity);
  if (r.solver == "trajectories") std::printf(" +- %.6f (n_traj %d, seed %llu)", r.result.fidelity_std_error, r.n_traj,
                                              static_cast<unsigned long long>(r.seed));
  std::printf("\nP_f max %.6f, drift %.3e, %.1f s\n", r.result.p_f_max, r.max_drift, r.wall_seconds);
}

int cmd_evolve(const Overrides& o) {
  const RunConfig c = load(o);
  const auto r = run_transfer(c, &std::cerr);
  write_series_csv(c.output + "_series.csv", r);
  write_summary(c.output + "_summary.json", c, r);
  print_outcome(r);
  std::cout << "wrote " << c.output << "_series.csv and " << c.output << "_summary.json\n";
  return kOk;
}

int cmd_sweep(const Overrides& o, const std::string& figure) {
  RunConfig c = load(o);
  if (!figure.empty()) c = figure_preset(c, figure);
  if (figure == "fig5") {
    const auto r = run_transfer(c, &std::cerr);
    write_series_csv(c.output + "_fig5.csv", r);
    write_summary(c.output + "_fig5_summary.json", c, r);
    print_outcome(r);
    std::cout << "wrote " << c.output << "_fig5.csv\n";
    return kOk;
  }
  if (c.sweep.empty()) throw ConfigError("no sweep axes: pass --figure or add a sweep section");
  const std::string path = c.output + "_" + (figure.empty() ? std::string("sweep") : figure) + ".csv";
  const auto rep = run_sweep(c, path, &std::cerr);
  std::cout << "wrote " << path << " (" << rep.computed << " computed, " << rep.skipped << " already present)\n";
  return kOk;
}

int cmd_convergence(const Overrides& o) {
  const RunConfig c = load(o);
  const std::string path = c.output + "_convergence.csv";
  const auto rows = run_convergence(c, path, &std::cerr);
  for (const auto& r : rows) {
    std::printf("%-10s F = %.8f  delta = %+.3e\n", r.variant.c_str(), r.outcome.result.fidelity,
                r.outcome.result.fidelity - rows.front().outcome.result.fidelity);
  }
  std::cout << "wrote " << path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cat-state transfer between cavity pairs through a driven qutrit coupler"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Overrides o;
  std::string figure;
  auto* validate = app.add_subcommand("validate", "print derived parameters and regime conditions");
  add_common(validate, o, false);
  auto* evolve = app.add_subcommand("evolve", "one transfer run: time series CSV and JSON summary");
  add_common(evolve, o, true);
  auto* sweep = app.add_subcommand("sweep", "grid of transfer runs (figure preset or config sweep)");
  add_common(sweep, o, true);
  sweep->add_option("--figure", figure, "fig3 | fig4 | fig5 | fig6");
  auto* conv = app.add_subcommand("convergence", "cutoff, tolerance and sample-size study");
  add_common(conv, o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(o);
    if (evolve->parsed()) return cmd_evolve(o);
    if (sweep->parsed()) return cmd_sweep(o, figure);
    if (conv->parsed()) return cmd_convergence(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomain;
  }
  return kUsage;
}
