#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "duet/oracle.hpp"

using namespace duet;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

ScmModel identity_model(int d, double mean = 0.0, double var = 1.0) {
    return ScmModel(Dag(d), Mechanism{}, SourceSpec::gaussian(Vector::Constant(d, mean), Vector::Constant(d, var)));
}

ScmModel random_model(MechanismKind kind, int d, std::uint64_t seed, double edge_prob = 1.0) {
    Philox4x32 g(seed, stream::graph), m(seed, stream::mechanism), s(seed, stream::source_params);
    const Dag dag = random_dag(d, edge_prob, g);
    return ScmModel(dag, draw_mechanism(kind, dag, m), draw_gaussian_sources(d, s));
}

EnvironmentSet random_env(int k, int d, std::uint64_t seed) {
    Philox4x32 r(seed, stream::rescalings);
    return EnvironmentSet::with_default_partition(draw_rescalings(k, d, r));
}

} // namespace

TEST(LogDensity, StandardNormalAtZero) {
    const auto model = identity_model(2);
    const auto env = EnvironmentSet::with_default_partition(Matrix::Constant(2, 2, 2.0));
    EXPECT_NEAR(log_density_x(model, env, 0, Vector::Zero(2)), -std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(LogDensity, OneDimensionalGaussian) {
    const auto model = identity_model(1, 1.0, 1.0);
    EnvironmentSet env;
    env.lambdas = Matrix::Constant(2, 1, 2.0);
    env.group1 = {1};
    env.group2 = {2};
    EXPECT_NEAR(log_density_x(model, env, 0, vec({2.0})), -0.5 * std::log(2.0 * std::numbers::pi) - 0.5, 1e-14);
}

TEST(LogDensity, LinearModelIsGaussianPushforward) {
    Mechanism m;
    m.kind = MechanismKind::Linear;
    m.weights = {{}, {0.7}, {-1.1, 0.4}};
    const Vector mu = vec({1.0, 1.0, 1.0});
    const Vector var = vec({1.2, 1.4, 1.1});
    const ScmModel model(Dag(3, {{0, 1}, {0, 2}, {1, 2}}), m, SourceSpec::gaussian(mu, var));
    Matrix b = Matrix::Zero(3, 3);
    b(1, 0) = 0.7;
    b(2, 0) = -1.1;
    b(2, 1) = 0.4;
    const Matrix a = (Matrix::Identity(3, 3) - b).inverse();
    const Matrix cov = a * Matrix(var.asDiagonal()) * a.transpose();
    const Vector mean = a * mu;
    const auto env = EnvironmentSet::with_default_partition(Matrix::Constant(2, 3, 2.0));
    for (const Vector& x : {vec({0.0, 0.0, 0.0}), vec({1.5, -2.0, 0.3}), vec({3.0, 1.0, -4.0})}) {
        const Vector r = x - mean;
        const double expected =
            -0.5 * r.dot(cov.ldlt().solve(r)) - 0.5 * std::log(cov.determinant()) - 1.5 * std::log(2.0 * std::numbers::pi);
        EXPECT_NEAR(log_density_x(model, env, 0, x), expected, 1e-8);
    }
}

TEST(OracleScore, StandardGaussianScoreIsMinusX) {
    const auto model = identity_model(2);
    const auto env = EnvironmentSet::with_default_partition(Matrix::Constant(2, 2, 2.0));
    for (const Vector& x : {vec({0.3, -0.2}), vec({1.5, 2.0}), vec({-3.0, 0.5})})
        EXPECT_LT((oracle_score(model, env, 0, x) + x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(OracleHessian, IndependentCoordinatesGiveDiagonalHessian) {
    const auto model = identity_model(3, 1.0, 1.3);
    const auto env = random_env(2, 3, 1);
    for (int e = 0; e <= 2; ++e) {
        const Matrix h = oracle_hessian(model, env, e, vec({0.2, 1.7, -0.4}));
        EXPECT_LT((h - Matrix(h.diagonal().asDiagonal())).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(OracleHessian, RichardsonRatioMechanismI) {
    Mechanism m;
    m.kind = MechanismKind::ArbitraryI;
    const ScmModel model(Dag(2, {{0, 1}}), m, SourceSpec::gaussian(Vector::Ones(2), vec({1.2, 1.3})));
    const auto env = random_env(2, 2, 3);
    const Vector x = model.forward(vec({0.7, 1.4}));
    const Matrix h1 = oracle_hessian(model, env, 0, x, 2e-2);
    const Matrix h2 = oracle_hessian(model, env, 0, x, 1e-2);
    const Matrix h4 = oracle_hessian(model, env, 0, x, 5e-3);
    const double ratio = (h1 - h2).norm() / (h2 - h4).norm();
    EXPECT_GT(ratio, 3.5);
    EXPECT_LT(ratio, 4.5);
}

TEST(Omega, NoRescalingGivesZero) {
    const auto spec = SourceSpec::gaussian(Vector::Ones(2), Vector::Ones(2));
    const auto env = EnvironmentSet::with_default_partition(Matrix::Ones(2, 2));
    const auto om = omega_matrices(spec, env);
    EXPECT_EQ(om.omega1, Vector::Zero(2));
    EXPECT_FALSE(om.full_rank());
}

TEST(Omega, ClosedFormByHand) {
    // sigma^2 = 1, I = {1}, lambda = 2: 1/4 - 1.
    const auto spec = SourceSpec::gaussian(Vector::Ones(1), Vector::Ones(1));
    EnvironmentSet env;
    env.lambdas = Matrix::Constant(2, 1, 2.0);
    env.group1 = {1};
    env.group2 = {2};
    const auto om = omega_matrices(spec, env);
    EXPECT_DOUBLE_EQ(om.omega1[0], -0.75);
    EXPECT_DOUBLE_EQ(om.omega2[0], -0.75);
}

TEST(Omega, ClosedFormMatchesHessianDefinition) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const int d = 2 + static_cast<int>(seed % 3);
        Philox4x32 r(seed, stream::source_params);
        const auto spec = draw_gaussian_sources(d, r);
        const auto env = random_env(2 + static_cast<int>(seed % 4), d, seed);
        const auto closed = omega_matrices(spec, env);
        const auto def = omega_from_hessians(spec, env, spec.mean);
        EXPECT_LT((closed.omega1 - def.omega1).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((closed.omega2 - def.omega2).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(closed.full_rank(), check_sufficient_variability(env).pass());
    }
}

TEST(Omega, GammaHasNoClosedForm) {
    const auto spec = SourceSpec::gamma(vec({2.0, 2.0}), vec({2.0, 2.0}));
    EXPECT_THROW(omega_matrices(spec, EnvironmentSet::with_default_partition(Matrix::Constant(2, 2, 2.0))),
                 InvalidArgument);
}

TEST(SufficientVariability, AllTwoPasses) {
    const auto env = EnvironmentSet::with_default_partition(Matrix::Constant(2, 3, 2.0));
    EXPECT_TRUE(check_sufficient_variability(env, 1e-9).pass());
}

TEST(SufficientVariability, UnitLambdaFailsForThatCoordinate) {
    Matrix l = Matrix::Constant(2, 3, 2.0);
    l.col(1).setOnes();
    const auto rep = check_sufficient_variability(EnvironmentSet::with_default_partition(l), 1e-9);
    ASSERT_EQ(rep.violations.size(), 2u);
    for (const auto& v : rep.violations) EXPECT_EQ(v.coordinate, 1);
}

TEST(DistinctRatios, OneDimensionIsVacuous) {
    EXPECT_TRUE(check_distinct_ratios({vec({1.0}), vec({5.0})}).pass());
}

TEST(DistinctRatios, ConstructedCollision) {
    EXPECT_FALSE(check_distinct_ratios({vec({1.0, 1.0}), vec({2.0, 2.0})}).pass());
    EXPECT_TRUE(check_distinct_ratios({vec({1.0, 1.0}), vec({2.0, 3.0})}).pass());
}

TEST(DistinctRatios, SingularOmegaIsAnError) {
    EXPECT_THROW(check_distinct_ratios({vec({0.0, 1.0}), vec({2.0, 3.0})}), SingularError);
}

TEST(HessianIdentity, IdentityMixing) {
    const auto model = identity_model(2, 1.0, 1.2);
    EXPECT_LT(verify_hessian_identity(model, random_env(2, 2, 4)).max(), 1e-8);
}

TEST(HessianIdentity, MechanismI) {
    Mechanism m;
    m.kind = MechanismKind::ArbitraryI;
    const ScmModel model(Dag(2, {{0, 1}}), m, SourceSpec::gaussian(Vector::Ones(2), vec({1.1, 1.4})));
    EXPECT_LT(verify_hessian_identity(model, random_env(2, 2, 5)).max(), 1e-4);
}

TEST(HessianIdentity, HoldsForEveryBuiltinMechanism) {
    for (auto kind : builtin_mechanisms)
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto model = random_model(kind, 2 + static_cast<int>(seed % 2), seed);
            const auto env = random_env(2 + static_cast<int>(seed % 3), model.dim(), seed);
            EXPECT_LT(verify_hessian_identity(model, env).max(), 1e-3) << to_string(kind) << " seed " << seed;
        }
}

TEST(HessianIdentity, FailsAwayFromTheMean) {
    Mechanism m;
    m.kind = MechanismKind::ArbitraryI;
    const ScmModel model(Dag(2, {{0, 1}}), m, SourceSpec::gaussian(Vector::Ones(2), vec({1.1, 1.4})));
    const auto env = random_env(2, 2, 6);
    const double at_mean = verify_hessian_identity(model, env).max();
    // Zero sources are avoided: mechanism (i) has a singular Jacobian at s = 0.
    for (double a : {-1.0, 0.5, 2.0, 3.0})
        for (double b : {-1.0, 0.5, 2.0, 3.0}) {
            const double off = hessian_identity_residual(model, env, model.forward(vec({a, b}))).max();
            EXPECT_GT(off, 10.0 * at_mean) << a << "," << b;
        }
}

TEST(ScoreDifference, VanishesOnlyAtTheMean) {
    for (auto kind : builtin_mechanisms) {
        const auto model = random_model(kind, 2, 8);
        const auto env = random_env(3, 2, 8);
        const auto total = [&](const Vector& x) {
            Vector acc = Vector::Zero(2);
            const Vector base = oracle_score(model, env, 0, x);
            for (int e = 1; e <= env.k(); ++e) acc += base - oracle_score(model, env, e, x);
            return acc.norm();
        };
        EXPECT_LT(total(model.forward(model.sources().mean)), 1e-6) << to_string(kind);
        // A zero parent makes mechanism (iii) constant in its source, so 0 is avoided.
        for (double a : {-0.5, 0.5, 2.0, 2.5})
            for (double b : {-0.5, 0.5, 2.0, 2.5})
                EXPECT_GT(total(model.forward(vec({a, b}))), 1e-2) << to_string(kind) << " " << a << "," << b;
    }
}

TEST(SourceHessian, DiagonalForIndependentSources) {
    // The source log density factorizes, so its Hessian at any point is diagonal.
    const auto model = identity_model(3, 1.0, 1.2);
    const auto env = random_env(2, 3, 9);
    const Matrix h = oracle_hessian(model, env, 1, vec({0.1, 2.0, 1.3}));
    EXPECT_LT((h - Matrix(h.diagonal().asDiagonal())).cwiseAbs().maxCoeff(), 1e-6);
}
