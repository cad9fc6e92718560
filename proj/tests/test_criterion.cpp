#include "test_util.hpp"

#include "eos/criterion.hpp"
#include "eos/error.hpp"

#include <gtest/gtest.h>

using namespace eos;
using namespace eos::testing;
using criterion::CriterionKind;
using criterion::Tag;

namespace {

Vec fd_gradient(const CriterionKind& kind, Vec z, std::size_t y, double h = 1e-6) {
    Vec g(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double z0 = z[i];
        z[i] = z0 + h;
        const double up = criterion::criterion_value(kind, z, y);
        z[i] = z0 - h;
        const double down = criterion::criterion_value(kind, z, y);
        z[i] = z0;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

}  // namespace

TEST(Criterion, CrossEntropyUniformIsLogC) {
    for (std::size_t c : {2u, 3u, 6u, 10u}) {
        const Vec z(c, 0.7);
        EXPECT_NEAR(criterion::criterion_value({Tag::cross_entropy, c}, z, 1), std::log(double(c)), 1e-14);
    }
}

TEST(Criterion, MseExactFitIsZero) {
    const CriterionKind kind{Tag::mse, 4};
    EXPECT_EQ(criterion::criterion_value(kind, criterion::one_hot(2, 4), 2), 0.0);
}

TEST(Criterion, MseIsMeanOverOutputs) {
    const CriterionKind kind{Tag::mse, 4};
    const Vec z{1, 1, 0, 0};
    EXPECT_NEAR(criterion::criterion_value(kind, z, 0), 1.0 / 4.0, 1e-15);
}

TEST(Criterion, GradientsMatchFiniteDifferences) {
    for (Tag tag : {Tag::cross_entropy, Tag::mse}) {
        const CriterionKind kind{tag, 5};
        const Vec z = random_vec(5, 3);
        const Vec g = criterion::criterion_gradient(kind, z, 3);
        EXPECT_LE(rel_err(g, fd_gradient(kind, z, 3)), 1e-8) << criterion::to_string(tag);
    }
}

TEST(Criterion, InvalidLabelThrows) {
    EXPECT_THROW(criterion::criterion_value({Tag::cross_entropy, 3}, Vec(3), 3), LabelError);
    EXPECT_THROW(criterion::criterion_value({Tag::mse, 3}, Vec(3), 7), LabelError);
}

TEST(Criterion, TooFewClassesRejected) { EXPECT_THROW((CriterionKind{Tag::mse, 1}.validate()), ContractError); }

TEST(Criterion, StableForLargeLogits) {
    const CriterionKind kind{Tag::cross_entropy, 3};
    const Vec z{1000, 0, -1000};
    EXPECT_NEAR(criterion::criterion_value(kind, z, 0), 0.0, 1e-300);
    EXPECT_NEAR(criterion::criterion_value(kind, z, 1), 1000.0, 1e-9);
    EXPECT_TRUE(linalg::all_finite(criterion::criterion_gradient(kind, z, 2)));
}

TEST(OutputHessian, TwoClassUniform) {
    const auto c = criterion::output_hessian({Tag::cross_entropy, 2}, Vec{0.3, 0.3}, 0);
    EXPECT_LE(linalg::max_abs_diff(c.hessian, (Mat{{0.25, -0.25}, {-0.25, 0.25}})), 1e-15);
}

TEST(OutputHessian, MseIsScaledIdentity) {
    const auto c = criterion::output_hessian({Tag::mse, 10}, random_vec(10, 4), 1);
    EXPECT_LE(linalg::max_abs_diff(c.hessian, 0.2 * Mat::identity(10)), 1e-15);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul(c.sqrt, c.sqrt), c.hessian), 1e-14);
}

TEST(OutputHessian, CrossEntropyMatchesDifferencedGradient) {
    const CriterionKind kind{Tag::cross_entropy, 4};
    Vec z = random_vec(4, 5);
    const auto c = criterion::output_hessian(kind, z, 2);
    const double h = 1e-5;
    for (std::size_t j = 0; j < 4; ++j) {
        const double z0 = z[j];
        z[j] = z0 + h;
        const Vec up = criterion::criterion_gradient(kind, z, 2);
        z[j] = z0 - h;
        const Vec down = criterion::criterion_gradient(kind, z, 2);
        z[j] = z0;
        for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c.hessian(i, j), (up[i] - down[i]) / (2 * h), 1e-6);
    }
}

TEST(OutputHessian, PsdWithZeroModeAndSquareRoot) {
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
        const CriterionKind kind{Tag::cross_entropy, 6};
        const Vec z = random_vec(6, seed);
        const auto c = criterion::output_hessian(kind, z, 0);
        EXPECT_GE(linalg::sym_eig(c.hessian).eigenvalues.back(), -1e-12);
        const Vec ones(6, 1.0);
        EXPECT_LE(linalg::norm(linalg::matvec(c.hessian, ones)), 1e-14);
        EXPECT_TRUE(linalg::is_symmetric(c.sqrt, 1e-14));
        EXPECT_LE(linalg::max_abs_diff(linalg::matmul(c.sqrt, c.sqrt), c.hessian), 1e-10);
        const Vec u = random_vec(6, seed + 100);
        EXPECT_LE(rel_err(criterion::output_hessian_apply(kind, z, u), linalg::matvec(c.hessian, u)), 1e-13);
    }
}

TEST(Criterion, ThresholdDefaultsAndNames) {
    EXPECT_EQ(criterion::default_loss_threshold(Tag::cross_entropy), 0.01);
    EXPECT_EQ(criterion::default_loss_threshold(Tag::mse), 0.02);
    EXPECT_EQ(criterion::parse_tag(criterion::to_string(Tag::mse)), Tag::mse);
    EXPECT_EQ(criterion::parse_tag("cross-entropy"), Tag::cross_entropy);
    EXPECT_THROW(criterion::parse_tag("hinge"), ArgumentError);
}
