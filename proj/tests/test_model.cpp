#include <gtest/gtest.h>

#include <random>

#include <Eigen/Eigenvalues>

#include "catqed/model.hpp"

using namespace catqed;

namespace {

Matrix expm_hermitian(const Matrix& h, double t) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  Vector ph(es.eigenvalues().size());
  for (Index i = 0; i < ph.size(); ++i) ph(i) = std::polar(1.0, -es.eigenvalues()(i) * t);
  return es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Derived, ReferenceParameterSet) {
  const auto p = SystemParams::reference();
  const auto d = derive_parameters(p);
  EXPECT_NEAR(cycles(d.delta_prime), -70.0 * 70.0 * 800.0 / (60.0 * 60.0), 1e-9);
  EXPECT_NEAR(cycles(d.delta_prime), -1088.9, 0.05);
  EXPECT_NEAR(cycles(d.lambda), 60.0 * 60.0 / (2.0 * 800.0), 1e-12);
  EXPECT_NEAR(cycles(d.lambda), 2.25, 1e-12);
  EXPECT_NEAR(d.transfer_time, 1.0 / (4.0 * 2.25), 1e-12);
  EXPECT_NEAR(d.transfer_time, 0.1111, 1e-4);
  const double ghz[] = {11.7, 4.2, 13.589, 6.089};
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(cycles(d.omega[j]) / 1000.0, ghz[j], 5e-4);
  EXPECT_NEAR(cycles(d.delta_p), 5000.0 - 7500.0, 1e-9);
  EXPECT_NEAR(cycles(d.delta_jl(0, 1)), -7500.0, 1e-9);
  EXPECT_NEAR(d.eta, 1.0, 1e-12);
  EXPECT_NEAR(d.eta_prime, -1.0, 1e-12);
  EXPECT_NEAR(d.phi0, angular(47) * std::numbers::pi / (2 * d.lambda), 1e-9);
}

TEST(Derived, ScaleCovariance) {
  const auto p = SystemParams::reference();
  const auto d = derive_parameters(p);
  for (double s : {0.5, 2.0}) {
    auto q = p;
    for (auto& g : q.g) g *= s;
    q.delta *= s;
    const auto e = derive_parameters(q);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(e.lambda_j[j], s * d.lambda_j[j], 1e-12 * std::abs(d.lambda_j[j]));
    EXPECT_NEAR(e.lambda, s * d.lambda, 1e-12 * d.lambda);
    EXPECT_NEAR(e.lambda_prime, s * d.lambda_prime, 1e-12 * std::abs(d.lambda_prime));
    EXPECT_NEAR(e.transfer_time, d.transfer_time / s, 1e-12 * d.transfer_time);
  }
}

TEST(Derived, AsymmetryKeepsDetuningMatched) {
  auto p = SystemParams::reference();
  p.epsilon = 0.05;
  const auto d = derive_parameters(p);
  EXPECT_NEAR(d.delta_prime, derive_parameters(SystemParams::reference()).delta_prime, 1e-9);
  EXPECT_NEAR(d.lambda, angular(60) * 1.05 * angular(60) / (2 * angular(800)), 1e-9);
  EXPECT_NEAR(design_parameters(p).transfer_time, derive_parameters(SystemParams::reference()).transfer_time, 1e-15);
}

TEST(Derived, RejectsInvalidInputs) {
  auto p = SystemParams::reference();
  p.delta = -1.0;
  EXPECT_THROW(derive_parameters(p), InvalidArgument);
  p = SystemParams::reference();
  p.omega_fg = p.omega_eg * 0.5;
  EXPECT_THROW(derive_parameters(p), InvalidArgument);
  p = SystemParams::reference();
  p.g[2] = 0.0;
  EXPECT_THROW(derive_parameters(p), InvalidArgument);
  p = SystemParams::reference();
  p.crosstalk[0][1] = 1.0;
  EXPECT_THROW(derive_parameters(p), InvalidArgument);
}

TEST(Conditions, ReferenceSetPasses) {
  const auto p = SystemParams::reference();
  const auto rep = validate_conditions(p, derive_parameters(p));
  EXPECT_TRUE(rep.all_pass());
  for (const char* n : {"stark_12", "stark_34", "raman_balance", "phase_2", "phase_4", "detuning_match"}) {
    EXPECT_TRUE(rep.find(n).pass) << n;
    EXPECT_TRUE(rep.find(n).equality);
    EXPECT_LE(rep.find(n).value, 1e-12) << n;
  }
  EXPECT_NEAR(rep.find("dispersive_12").value, 800.0 / 60.0, 1e-12);
  EXPECT_NEAR(rep.find("weak_drive").value, 800.0 / 47.0, 1e-12);
  EXPECT_NEAR(rep.find("dispersive_34").value, 1088.888888888889 / 70.0, 1e-9);
  EXPECT_FALSE(rep.find("cross_raman").note.empty());
  EXPECT_THROW(rep.find("missing"), InvalidArgument);
}

TEST(Conditions, SymmetricCouplingsImplyEqualities) {
  for (auto gs : {std::array<double, 2>{30, 45}, std::array<double, 2>{80, 55}}) {
    auto p = SystemParams::reference();
    p.g = {angular(gs[0]), angular(gs[0]), angular(gs[1]), angular(gs[1])};
    const auto rep = validate_conditions(p, derive_parameters(p));
    for (const char* n : {"stark_12", "stark_34", "raman_balance", "phase_2", "phase_4"}) {
      EXPECT_TRUE(rep.find(n).pass) << n;
    }
  }
}

TEST(Conditions, AsymmetryFlagsEqualities) {
  auto p = SystemParams::reference();
  p.epsilon = 0.05;
  const auto rep = validate_conditions(p, derive_parameters(p));
  EXPECT_FALSE(rep.all_pass());
  EXPECT_FALSE(rep.find("stark_12").pass);
  EXPECT_FALSE(rep.find("stark_34").pass);
  for (const auto& r : rep.results) {
    if (!r.equality) EXPECT_TRUE(r.pass) << r.name;
  }
}

TEST(Conditions, ThresholdIsConfigurable) {
  const auto p = SystemParams::reference();
  const auto rep = validate_conditions(p, derive_parameters(p), {1e-9, 15.0});
  EXPECT_FALSE(rep.find("dispersive_12").pass);
  EXPECT_TRUE(rep.find("weak_drive").pass);
}

class FullHamiltonian : public ::testing::Test {
 protected:
  SystemParams p = SystemParams::reference();
  DerivedParams d = derive_parameters(p);
  HilbertLayout L = HilbertLayout::transfer(3);
};

TEST_F(FullHamiltonian, ConservesExcitationsWithoutDrive) {
  p.rabi = 0.0;
  const auto h = build_full_hamiltonian(p, d, L, false, false);
  const auto e = TransferOperators(L).excitation_number().to_sparse();
  for (double t : {0.0, 0.3 * d.transfer_time, d.transfer_time}) {
    EXPECT_LT(commutator(h.at(t), e).max_abs(), 1e-10);
  }
}

TEST_F(FullHamiltonian, CouplingMatrixElement) {
  const auto h0 = build_full_hamiltonian(p, d, L, false, false).at(0.0);
  const Index f0 = L.flatten(std::vector<int>{2, 0, 0, 0, 0});
  const Index g1 = L.flatten(std::vector<int>{0, 1, 0, 0, 0});
  EXPECT_NEAR(std::abs(h0.coeff(f0, g1) - cplx(p.g[0])), 0.0, 1e-12);
  const Index e0 = L.flatten(std::vector<int>{1, 0, 0, 0, 0});
  const Index g0 = L.flatten(std::vector<int>{0, 0, 0, 0, 0});
  EXPECT_NEAR(std::abs(h0.coeff(e0, g0) - cplx(p.rabi)), 0.0, 1e-12);
}

TEST_F(FullHamiltonian, ModulatedTermFrequencies) {
  const auto h = build_full_hamiltonian(p, d, L, false, false);
  ASSERT_EQ(h.terms.size(), 2u);
  EXPECT_EQ(h.terms[0].frequency, p.delta);
  EXPECT_EQ(h.terms[1].frequency, d.delta_prime);

  p.set_uniform_crosstalk(0.1 * p.g_max());
  const auto hc = build_full_hamiltonian(p, d, L, true, true);
  std::vector<double> cr;
  for (const auto& t : hc.terms) {
    if (t.label.rfind("crosstalk_", 0) == 0) cr.push_back(cycles(t.frequency));
  }
  ASSERT_EQ(cr.size(), 6u);
  // omega_l - omega_j for the pairs 12, 13, 14, 23, 24, 34
  const double w[] = {11700.0, 4200.0, 12500.0 + 1088.8888888888889, 5000.0 + 1088.8888888888889};
  std::vector<double> expect;
  for (int j = 0; j < 4; ++j) {
    for (int l = j + 1; l < 4; ++l) expect.push_back(w[l] - w[j]);
  }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(cr[k], expect[k], 1e-9);
  EXPECT_NEAR(cr[0], -7500.0, 1e-9);
  EXPECT_NEAR(cr[3], 9388.888888888889, 1e-6);
  EXPECT_EQ(hc.terms.back().label, "leakage_fe");
  EXPECT_NEAR(cycles(hc.terms.back().frequency), -2500.0, 1e-9);
  EXPECT_NEAR(cycles(hc.max_frequency()), 9388.888888888889, 1e-6);
}

TEST_F(FullHamiltonian, ZeroRatesArePruned) {
  p.rabi_fe = 0.0;
  const auto h = build_full_hamiltonian(p, d, L, true, true);
  EXPECT_EQ(h.terms.size(), 2u);
}

TEST_F(FullHamiltonian, HermitianAtRandomTimes) {
  p.set_uniform_crosstalk(0.1 * p.g_max());
  const auto h = build_full_hamiltonian(p, d, L, true, true);
  EXPECT_TRUE(h.static_sparse().is_hermitian());
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, d.transfer_time);
  for (int k = 0; k < 100; ++k) EXPECT_LT(h.at(u(gen)).hermiticity_error(), 1e-12);
}

TEST_F(FullHamiltonian, CompiledTermsMatchSparse) {
  p.set_uniform_crosstalk(0.1 * p.g_max());
  const auto h = build_full_hamiltonian(p, d, L, true, true);
  for (const auto& t : h.terms) {
    CompiledOperator c(t.op);
    Vector x = Vector::Random(L.total_dim());
    EXPECT_LT((c.apply(x) - t.op.to_sparse().apply(x)).cwiseAbs().maxCoeff(), 1e-9) << t.label;
  }
}

class Effective : public ::testing::Test {
 protected:
  SystemParams p = SystemParams::reference();
  DerivedParams d = derive_parameters(p);
  HilbertLayout L = HilbertLayout::transfer(3);
  EffectiveHamiltonians e = build_effective_hamiltonians(p, d, L);
};

TEST_F(Effective, ExchangePartsCommute) {
  EXPECT_EQ(commutator(e.he1.to_sparse(), e.he2.to_sparse()).max_abs(), 0.0);
}

TEST_F(Effective, VacuumIsDark) {
  for (int q = 0; q < 3; ++q) {
    Vector vac = Vector::Zero(L.total_dim());
    vac(L.flatten(std::vector<int>{q, 0, 0, 0, 0})) = 1.0;
    EXPECT_EQ(e.he.to_sparse().apply(vac).norm(), 0.0);
    EXPECT_EQ(e.he1.to_sparse().apply(vac).norm(), 0.0);
  }
}

TEST_F(Effective, BeamSplitterElement) {
  const auto he1 = e.he1.to_sparse();
  for (int q = 0; q < 3; ++q) {
    const Index out = L.flatten(std::vector<int>{q, 0, 1, 0, 0});
    const Index in = L.flatten(std::vector<int>{q, 1, 0, 0, 0});
    EXPECT_NEAR(std::abs(he1.coeff(out, in) - cplx(-d.lambda)), 0.0, 1e-12);
  }
  const auto he2 = e.he2.to_sparse();
  EXPECT_NEAR(std::abs(he2.coeff(L.flatten(std::vector<int>{0, 0, 0, 0, 1}), L.flatten(std::vector<int>{0, 0, 0, 1, 0})) -
                       cplx(d.lambda)),
              0.0, 1e-12);
}

TEST_F(Effective, AllHermitian) {
  for (const auto* op : {&e.h_eff, &e.h_tilde_eff, &e.h0, &e.he, &e.he1, &e.he2}) {
    EXPECT_TRUE(op->to_sparse().is_hermitian());
  }
}

TEST_F(Effective, InteractionFrameMatchesExchange) {
  // e^{i H0 t} (H~eff - H0) e^{-i H0 t}
  const Matrix h0 = e.h0.to_sparse().dense();
  const Matrix v = e.h_tilde_eff.to_sparse().dense() - h0;
  const Matrix he = e.he.to_sparse().dense();
  EXPECT_LT(max_abs(v - he), 1e-10);
  for (double t : {0.013, 0.05, d.transfer_time}) {
    const Matrix u = expm_hermitian(h0, t);
    EXPECT_LT(max_abs(u.adjoint() * v * u - he), 1e-10) << t;
  }
}

TEST_F(Effective, DispersiveFormInBareBasis) {
  // n1 sigma_gg with |g,1,0,0,0>
  const auto h = e.h_eff.to_sparse();
  const Index i = L.flatten(std::vector<int>{0, 1, 0, 0, 0});
  EXPECT_NEAR(h.coeff(i, i).real(), -2 * d.lambda_j[0], 1e-12);
  const Index j = L.flatten(std::vector<int>{1, 0, 1, 0, 0});
  EXPECT_NEAR(h.coeff(j, i).real(), -2 * d.lambda, 1e-12);
}

TEST_F(Effective, RequiresBalancedShifts) {
  auto q = p;
  q.epsilon = 0.05;
  const auto dq = derive_parameters(q);
  EXPECT_THROW(build_effective_hamiltonians(q, dq, L), ConditionViolation);
  EXPECT_NO_THROW(build_effective_hamiltonians(q, dq, L, false));
}

TEST(Jumps, CountsAndKinds) {
  auto L = HilbertLayout::transfer(3);
  EXPECT_TRUE(jump_operators(DecoherenceRates{}, L).empty());
  const auto j = jump_operators(DecoherenceRates::reference(10.0), L);
  // four cavities, three relaxation channels, two dephasing channels
  ASSERT_EQ(j.size(), 9u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(j[k].kind, JumpKind::cavity_decay);
    EXPECT_EQ(j[k].cavity, k);
  }
  EXPECT_EQ(j[8].kind, JumpKind::dephase_f);
  EXPECT_STREQ(to_string(j[4].kind), "relax_fe");
}

TEST(Jumps, DissipatorIsTraceless) {
  auto L = HilbertLayout::transfer(3);
  const Index n = L.total_dim();
  const Matrix rho = Matrix::Identity(n, n) / static_cast<double>(n);
  for (const auto& j : jump_operators(DecoherenceRates::reference(10.0), L)) {
    const Matrix c = j.op.to_sparse().dense();
    const Matrix cc = c.adjoint() * c;
    const Matrix lc = c * rho * c.adjoint() - 0.5 * (cc * rho + rho * cc);
    EXPECT_LT(std::abs(lc.trace()), 1e-12) << to_string(j.kind);
  }
}

TEST(Jumps, RatesFromLifetimes) {
  const auto r = DecoherenceRates::reference(10.0);
  EXPECT_DOUBLE_EQ(r.kappa[2], 0.1);
  EXPECT_DOUBLE_EQ(1.0 / r.gamma_eg, 28.0);
  EXPECT_DOUBLE_EQ(1.0 / r.gamma_phi_f, 7.0);
  auto bad = r;
  bad.gamma_fe = -1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(FramePhases, MatchStarkRotation) {
  const auto p = SystemParams::reference();
  const auto d = derive_parameters(p);
  auto L = HilbertLayout::transfer(3);
  const Vector ph = frame_return_phases(L, d, 0.07);
  const Index i = L.flatten(std::vector<int>{1, 2, 0, 1, 0});
  EXPECT_NEAR(std::abs(ph(i) - std::polar(1.0, 0.07 * (2 * d.lambda_j[0] + d.lambda_j[2]))), 0.0, 1e-12);
}
