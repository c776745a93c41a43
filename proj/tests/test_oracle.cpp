#include "support.hpp"

#include <gtest/gtest.h>

using namespace ctmc;
using namespace ctmc::testing;

TEST(Conservativize, ConservativeRatesGetNoKill) {
    const AugmentedChain aug = conservativize(two_state());
    EXPECT_EQ(aug.cemetery, 2u);
    EXPECT_EQ(aug.chain.blocks().front().col(2), Vector::Zero(3));
    EXPECT_EQ(aug.chain.blocks().front().topLeftCorner(2, 2), two_state().blocks().front());
}

TEST(Conservativize, SingleStateKill) {
    Matrix expected(2, 2);
    expected << -1, 1, 0, 0;
    EXPECT_EQ(conservativize(single_kill()).chain.blocks().front(), expected);
}

TEST(Conservativize, TruncatedBirthTopRow) {
    const auto q = truncate_birth_death([](std::size_t) { return 1.0; }, [](std::size_t) { return 0.0; }, 2, 1.0);
    const Matrix m = conservativize(q).chain.blocks().front();
    EXPECT_EQ(m.row(1), (Eigen::RowVector3d() << 0, -1, 1).finished());
    EXPECT_EQ(m.row(2), Eigen::RowVector3d::Zero());
}

TEST(Conservativize, CemeteryLabelAvoidsClashes) {
    const PiecewiseConstantRates q(StateSpace({"cemetery"}), Matrix::Constant(1, 1, -1.0), 1.0);
    const AugmentedChain aug = conservativize(q);
    EXPECT_EQ(aug.chain.space().size(), 2u);
    EXPECT_NE(aug.chain.space().label(1), "cemetery");
}

TEST(PcExact, ZeroRatesIdentity) {
    EXPECT_EQ(pc_exact(constant_rates(Matrix::Zero(3, 3)), 0.1, 0.7), Matrix::Identity(3, 3));
}

TEST(PcExact, SingleStateKill) {
    const Matrix p = pc_exact(conservativize(single_kill()), 0.0, 1.0);
    EXPECT_NEAR(p(0, 0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(p(0, 1), 1.0 - std::exp(-1.0), 1e-15);
    EXPECT_EQ(p(1, 0), 0.0);
    EXPECT_EQ(p(1, 1), 1.0);
    EXPECT_NEAR(p(0, 0), 0.3678794, 1e-7);
}

TEST(PcExact, TwoStateClosedForm) {
    const Matrix p = pc_exact(two_state(1.0, 2.0), 0.0, 1.0);
    EXPECT_NEAR(p(0, 0), 2.0 / 3.0 + std::exp(-3.0) / 3.0, 1e-14);
    EXPECT_NEAR(p(0, 0), 0.6832621, 1e-6);
}

TEST(PcExact, FactorsComposeInTimeOrder) {
    Matrix a(2, 2), b(2, 2);
    a << -1, 1, 0, 0;
    b << 0, 0, 3, -3;
    const PiecewiseConstantRates q(StateSpace::numbered(2), {0.0, 0.5, 1.0}, {a, b});
    const Matrix expected = expm(0.5 * a) * expm(0.5 * b);
    EXPECT_LE(max_abs(pc_exact(q, 0.0, 1.0) - expected), 1e-15);
    EXPECT_GT(max_abs(expected - expm(0.5 * b) * expm(0.5 * a)), 0.1);
    EXPECT_THROW(pc_exact(q, 0.6, 0.5), OutOfHorizon);
    EXPECT_THROW(pc_exact(q, 0.0, 1.2), OutOfHorizon);
}

TEST(Restrict, IdentityAndDefect) {
    EXPECT_EQ(restrict_to_base(Matrix::Identity(3, 3)), Matrix::Identity(2, 2));
    const Matrix p = pc_exact(conservativize(single_kill()), 0.0, 1.0);
    const Matrix r = restrict_to_base(p, 1);
    EXPECT_NEAR(1.0 - r.sum(), p(0, 1), 1e-15);
    const Matrix c = restrict_to_base(pc_exact(conservativize(two_state()), 0.0, 1.0), 2);
    EXPECT_NEAR(c.rowwise().sum().maxCoeff(), 1.0, 1e-12);
    EXPECT_NEAR(c.rowwise().sum().minCoeff(), 1.0, 1e-12);
}

TEST(Resurrect, SingleStateAnalytic) {
    const AugmentedChain alt = resurrect(single_kill(), Vector::Ones(1), 1.0);
    EXPECT_EQ(alt.chain.blocks().front()(1, 0), 1.0);
    EXPECT_EQ(alt.chain.blocks().front()(1, 1), -1.0);
    const double p = restrict_to_base(pc_exact(alt, 0.0, 1.0), 1)(0, 0);
    EXPECT_NEAR(p, 0.5 + 0.5 * std::exp(-2.0), 1e-14);
    EXPECT_NEAR(p, 0.5676676, 1e-7);
    EXPECT_GT(p, std::exp(-1.0));
}

TEST(Resurrect, RejectsConservativeAndBadLaws) {
    EXPECT_THROW(resurrect(two_state(), Vector::Constant(2, 0.5), 1.0), VacuousResurrection);
    EXPECT_THROW(resurrect(single_kill(), Vector::Constant(1, 0.9), 1.0), InvalidDistribution);
    EXPECT_THROW(resurrect(single_kill(), Vector::Ones(2), 1.0), InvalidDistribution);
    EXPECT_THROW(resurrect(single_kill(), Vector::Ones(1), 0.0), InvalidDistribution);
}

TEST(Resurrect, DominatesMinimalOnBirthChain) {
    const auto q = quadratic_birth();
    Vector nu = Vector::Zero(12);
    nu(0) = 1.0;
    const AugmentedChain alt = resurrect(q, nu, 5.0);
    const Matrix p_alt = restrict_to_base(pc_exact(alt, 0.0, 0.5), 12);
    const Matrix p_min = exact_minimal(q, 0.0, 0.5);
    EXPECT_GE((p_alt - p_min).minCoeff(), -1e-12);
    const Vector defect = Vector::Ones(12) - p_min.rowwise().sum();
    for (Eigen::Index i = 0; i < 12; ++i)
        if (defect(i) > 1e-6) EXPECT_GT((p_alt - p_min).row(i).maxCoeff(), 0.0) << "row " << i;
}

TEST(Resurrect, DerivativeAtZeroLagEqualsRates) {
    // The resurrected solution still has Q as its derivative at t = s+.
    const auto q = three_state_breakpoint();
    const AugmentedChain alt = resurrect(q, Vector::Constant(3, 1.0 / 3.0), 2.0);
    const double s = 0.6;
    std::vector<double> steps{1e-2, 5e-3, 2.5e-3};
    const std::function<Matrix(double, double)> p = [&](double a, double b) {
        return Matrix(restrict_to_base(pc_exact(alt, a, b), 3));
    };
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_LE(derivative_at_diagonal(p, q, i, j, s, steps).error, 1e-5);
}

TEST(OracleProperty, RowsSumToOne) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const auto& inst : random_suite(55, 20)) {
        const AugmentedChain aug = conservativize(inst.q);
        double a = u(rng), b = u(rng);
        if (a > b) std::swap(a, b);
        const Vector sums = pc_exact(aug, a, b).rowwise().sum();
        EXPECT_LE((sums.array() - 1.0).abs().maxCoeff(), 1e-12);
    }
}

TEST(OracleProperty, SemigroupWithinBlock) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const auto& inst : random_suite(56, 20)) {
        const Matrix q = conservativize(inst.q).chain.blocks().front();
        const double a = u(rng), b = u(rng);
        EXPECT_LE(max_abs(expm((a + b) * q) - expm(a * q) * expm(b * q)), 1e-11);
    }
}

TEST(OracleProperty, ExpmMatchesTaylorSeriesOnSmallMatrices) {
    // Independent reference: 40-term Taylor series of a matrix with small norm.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix a(4, 4);
        for (Eigen::Index k = 0; k < a.size(); ++k) a(k) = u(rng);
        Matrix term = Matrix::Identity(4, 4), sum = term;
        for (int n = 1; n < 40; ++n) {
            term = term * a / double(n);
            sum += term;
        }
        EXPECT_LE(max_abs(expm(a) - sum), 1e-14);
    }
}
