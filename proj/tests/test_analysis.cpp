#include <gtest/gtest.h>

#include <random>

#include "catqed/analysis.hpp"

using namespace catqed;

namespace {

Vector random_vector(Index n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = cplx(nd(gen), nd(gen));
  return v.normalized();
}

double pair_mean(const HilbertLayout& cav, const Vector& v, std::size_t slot) {
  double n = 0.0;
  for (Index i = 0; i < cav.total_dim(); ++i) n += std::norm(v(i)) * cav.level(i, slot);
  return n;
}

}  // namespace

TEST(Fidelity, PerfectTransfer) {
  auto L = HilbertLayout::transfer(8);
  auto target = ideal_target_state(1.0, L, 1e-4);
  auto full = QuantumState::pure(L, kron(qutrit_plus(), target.vector()));
  EXPECT_NEAR(transfer_fidelity(full, target), 1.0, 1e-10);
}

TEST(Fidelity, OrthogonalAndMixed) {
  auto L = HilbertLayout({3, 2, 2, 2, 2});
  auto cav = cavity_layout(L);
  auto target = QuantumState::pure(cav, basis_vector(16, 5));
  auto orth = QuantumState::pure(L, kron(basis_vector(3, 1), basis_vector(16, 6)));
  EXPECT_NEAR(transfer_fidelity(orth, target), 0.0, 1e-10);
  EXPECT_NEAR(transfer_fidelity(orth.to_density(), target), 0.0, 1e-10);

  // qutrit in |g>, cavities maximally mixed
  Matrix rho = Matrix::Zero(48, 48);
  for (Index i = 0; i < 16; ++i) rho(i, i) = 1.0 / 16.0;
  EXPECT_NEAR(transfer_fidelity(QuantumState::density(L, rho), target), std::sqrt(1.0 / 16.0), 1e-10);
}

TEST(Fidelity, PureAndDensityAgree) {
  auto L = HilbertLayout({3, 3, 2, 3, 2});
  auto target = QuantumState::pure(cavity_layout(L), random_vector(36, 4));
  auto psi = QuantumState::pure(L, random_vector(L.total_dim(), 5));
  EXPECT_NEAR(transfer_fidelity(psi, target), transfer_fidelity(psi.to_density(), target), 1e-12);
}

TEST(Fidelity, GlobalPhaseInvariant) {
  auto L = HilbertLayout({3, 3, 2, 3, 2});
  Vector t = random_vector(36, 8);
  auto psi = QuantumState::pure(L, random_vector(L.total_dim(), 9));
  const double f = transfer_fidelity(psi, QuantumState::pure(cavity_layout(L), t));
  for (double ph : {0.3, 1.7, -2.9}) {
    auto rotated = QuantumState::pure(cavity_layout(L), t * std::polar(1.0, ph));
    EXPECT_NEAR(transfer_fidelity(psi, rotated), f, 1e-14);
  }
}

TEST(Fidelity, LayoutMismatch) {
  auto L = HilbertLayout::transfer(3);
  auto wrong = QuantumState::pure(HilbertLayout({2, 3, 3, 3}), basis_vector(54, 0));
  auto psi = QuantumState::pure(L, basis_vector(static_cast<int>(L.total_dim()), 0));
  EXPECT_THROW(transfer_fidelity(psi, wrong), DimensionMismatch);
  EXPECT_THROW(transfer_fidelity(QuantumState::pure(HilbertLayout({3, 3}), basis_vector(9, 0)), wrong),
               DimensionMismatch);
}

class Oracle : public ::testing::Test {
 protected:
  double lambda = angular(2.25);
  double T = std::numbers::pi / (2 * lambda);
};

TEST_F(Oracle, StartsFromInitialCavities) {
  auto cav = HilbertLayout({8, 8, 8, 8});
  auto o = analytic_transfer_oracle(1.0, 0.0, lambda, cav, 1e-4);
  auto init = cavity_bell_state(1.0, cav, 0, 2, 1e-4);
  EXPECT_LT((o.vector() - init.vector()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST_F(Oracle, EndsOnTarget) {
  auto cav = HilbertLayout({10, 10, 10, 10});
  auto o = analytic_transfer_oracle(1.5, T, lambda, cav, 1e-3);
  auto target = ideal_target_state(1.5, cav, 1e-3);
  EXPECT_NEAR(std::norm(o.vector().dot(target.vector())), 1.0, 1e-9);
  // phases at the end are exactly +1
  EXPECT_LT((o.vector() - target.vector()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(Oracle, HalfwaySplitsPhotons) {
  auto cav = HilbertLayout({16, 16, 16, 16});
  auto o = analytic_transfer_oracle(1.5, T / 2, lambda, cav);
  // even-cat branch: even photon number on each pair
  Vector even = o.vector();
  for (Index i = 0; i < cav.total_dim(); ++i) {
    if ((cav.level(i, 0) + cav.level(i, 1)) % 2) even(i) = 0.0;
  }
  EXPECT_NEAR(even.squaredNorm(), 0.5, 1e-12);
  even.normalize();
  const double half = 0.5 * 2.25 * std::tanh(2.25);
  EXPECT_NEAR(half, 1.1003, 1e-4);
  EXPECT_NEAR(pair_mean(cav, even, 0), half, 1e-5);
  EXPECT_NEAR(pair_mean(cav, even, 1), half, 1e-5);
}

TEST_F(Oracle, UnitaryAndParityConsistent) {
  auto cav = HilbertLayout({8, 8, 8, 8});
  for (double f : {0.0, 0.1, 0.37, 0.5, 0.81, 1.0}) {
    auto o = analytic_transfer_oracle(1.0, f * T, lambda, cav, 1e-4);
    EXPECT_NEAR(o.vector().norm(), 1.0, 1e-9);
    double wrong = 0.0;
    for (Index i = 0; i < cav.total_dim(); ++i) {
      const int p12 = (cav.level(i, 0) + cav.level(i, 1)) % 2;
      const int p34 = (cav.level(i, 2) + cav.level(i, 3)) % 2;
      if (p12 != p34) wrong += std::norm(o.vector()(i));
    }
    EXPECT_EQ(wrong, 0.0);
  }
}

TEST_F(Oracle, DomainChecks) {
  auto cav = HilbertLayout({8, 8, 8, 8});
  EXPECT_THROW(analytic_transfer_oracle(1.0, 1.1 * T, lambda, cav, 1e-4), InvalidArgument);
  EXPECT_THROW(analytic_transfer_oracle(1.0, -0.1 * T, lambda, cav, 1e-4), InvalidArgument);
  EXPECT_THROW(analytic_transfer_oracle(1.0, T, lambda, HilbertLayout({8, 6, 8, 8}), 1e-4), DimensionMismatch);
}

TEST(OracleIntegrator, ExchangeEvolutionMatches) {
  const auto p = SystemParams::reference();
  const auto d = derive_parameters(p);
  auto L = HilbertLayout::transfer(7);
  const cplx alpha = 0.9;
  auto e = build_effective_hamiltonians(p, d, L);
  auto psi0 = initial_transfer_state(alpha, L, 1e-3);
  IntegratorConfig cfg;
  cfg.sample_times = uniform_times(d.transfer_time, 6);
  auto r = evolve_pure(ModulatedHamiltonian::constant(e.he), psi0, d.transfer_time, cfg);
  const std::size_t keep[] = {1, 2, 3, 4};
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    const double t = r.times[k];
    Vector back = r.states[k].vector().cwiseProduct(frame_return_phases(L, d, t));
    auto oracle = analytic_transfer_oracle(alpha, t, d.lambda, L, 1e-3);
    const Matrix red = reduced_density(L, back, keep);
    const double f = oracle.vector().dot(red * oracle.vector()).real();
    EXPECT_GE(f, 1.0 - 1e-7) << "t/T = " << t / d.transfer_time;
  }
}

TEST(Populations, QutritLevels) {
  auto L = HilbertLayout::transfer(3);
  auto psi = QuantumState::pure(L, kron(qutrit_plus(), basis_vector(81, 0)));
  EXPECT_EQ(population(psi, Level::f), 0.0);
  EXPECT_NEAR(population(psi, Level::g), 0.5, 1e-15);
  auto rnd = QuantumState::pure(L, random_vector(L.total_dim(), 12));
  const double s = population(rnd, Level::g) + population(rnd, Level::e) + population(rnd, Level::f);
  EXPECT_NEAR(s, 1.0, 1e-10);
  EXPECT_NEAR(population(rnd.to_density(), Level::e), population(rnd, Level::e), 1e-12);
  EXPECT_THROW(population(rnd, 1, 3), InvalidArgument);
  EXPECT_THROW(population(rnd, 5, 0), InvalidArgument);
}

TEST(Observables, MatchDirectEvaluation) {
  auto L = HilbertLayout({3, 3, 2, 3, 2});
  Vector target = random_vector(36, 20), oracle = random_vector(36, 21);
  auto obs = TransferObservables::make(L, target, {oracle});
  const Vector psi = random_vector(L.total_dim(), 22);
  std::vector<double> out(obs.names.size());
  obs.measure(0, psi, out);
  auto st = QuantumState::pure(L, psi);
  EXPECT_NEAR(out[0], std::pow(transfer_fidelity(st, QuantumState::pure(cavity_layout(L), target)), 2), 1e-12);
  EXPECT_NEAR(out[1], std::pow(transfer_fidelity(st, QuantumState::pure(cavity_layout(L), oracle)), 2), 1e-12);
  EXPECT_NEAR(out[4], population(st, Level::f), 1e-12);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out[5 + j], mean_occupation(st, j + 1), 1e-12);

  Eigen::MatrixXd row(1, static_cast<Index>(out.size()));
  for (std::size_t k = 0; k < out.size(); ++k) row(0, static_cast<Index>(k)) = out[k];
  const std::size_t q[] = {0};
  const Matrix rq = reduced_density(L, psi, q);
  EXPECT_LT((TransferObservables::qutrit_marginal(row, 0) - rq).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Entropy, KnownValues) {
  EXPECT_NEAR(von_neumann_entropy(Matrix::Identity(4, 4) / 4.0), std::log(4.0), 1e-12);
  Matrix pure = Matrix::Zero(3, 3);
  pure(1, 1) = 1.0;
  EXPECT_NEAR(von_neumann_entropy(pure), 0.0, 1e-12);
}
