#include "test_util.hpp"

#include "eos/error.hpp"

#include <gtest/gtest.h>

using namespace eos;
using namespace eos::testing;
using linalg::Mat;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Mat m = random_mat(2, 3, 1);
    EXPECT_EQ(linalg::matmul(Mat::identity(2), m), m);
}

TEST(Matmul, SmallClosedForm) {
    const Mat a{{1, 2}, {3, 4}};
    const Mat b{{1}, {1}};
    EXPECT_EQ(linalg::matmul(a, b), (Mat{{3}, {7}}));
}

TEST(Matmul, MatchesNaiveTripleLoop) {
    const Mat a = random_mat(5, 7, 2), b = random_mat(7, 3, 3);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul(a, b), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, LargeShapesMatchNaive) {
    const Mat a = random_mat(65, 130, 4), b = random_mat(130, 33, 5);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul(a, b), naive_matmul(a, b)), 1e-11);
}

TEST(Matmul, TransposedVariantsAgree) {
    const Mat a = random_mat(6, 4, 6), b = random_mat(6, 5, 7), c = random_mat(3, 4, 8);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul_tn(a, b), naive_matmul(a.transposed(), b)), 1e-12);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul_nt(a, c), naive_matmul(a, c.transposed())), 1e-12);
    EXPECT_LE(linalg::max_abs_diff(linalg::gram_rows(a), naive_matmul(a, a.transposed())), 1e-12);
}

TEST(Matmul, DimensionMismatchThrows) {
    EXPECT_THROW(linalg::matmul(Mat(2, 3), Mat(2, 3)), ShapeError);
    EXPECT_THROW(linalg::matvec(Mat(2, 3), linalg::Vec(2)), ShapeError);
}

TEST(Matmul, DeterministicAcrossCalls) {
    const Mat a = random_mat(40, 50, 9), b = random_mat(50, 20, 10);
    EXPECT_EQ(linalg::matmul(a, b), linalg::matmul(a, b));
}

TEST(Matvec, MatchesMatmulWithColumn) {
    const Mat a = random_mat(5, 4, 11);
    const auto x = random_vec(4, 12);
    const auto y = linalg::matvec(a, x);
    const Mat ref = naive_matmul(a, Mat::column(x));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], ref(i, 0), 1e-13);
    const auto z = random_vec(5, 13);
    const auto yt = linalg::matvec_t(a, z);
    const Mat reft = naive_matmul(a.transposed(), Mat::column(z));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(yt[i], reft(i, 0), 1e-13);
}

TEST(SymEig, DiagonalCase) {
    const linalg::SymEig e = linalg::sym_eig(Mat{{3, 0}, {0, 1}});
    EXPECT_NEAR(e.eigenvalues[0], 3, 1e-14);
    EXPECT_NEAR(e.eigenvalues[1], 1, 1e-14);
    EXPECT_NEAR(std::abs(e.eigenvectors(0, 0)), 1, 1e-14);
    EXPECT_NEAR(std::abs(e.eigenvectors(1, 1)), 1, 1e-14);
}

TEST(SymEig, RankOne) {
    const linalg::SymEig e = linalg::sym_eig(Mat{{0.25, -0.25}, {-0.25, 0.25}});
    EXPECT_NEAR(e.eigenvalues[0], 0.5, 1e-14);
    EXPECT_NEAR(e.eigenvalues[1], 0.0, 1e-14);
}

TEST(SymEig, RandomReconstructionAndInvariants) {
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        const Mat m = random_symmetric(8, seed);
        const linalg::SymEig e = linalg::sym_eig(m);
        for (std::size_t j = 1; j < 8; ++j) EXPECT_GE(e.eigenvalues[j - 1], e.eigenvalues[j]);
        const Mat v = e.eigenvectors;
        EXPECT_LE(linalg::max_abs_diff(linalg::matmul_tn(v, v), Mat::identity(8)), 1e-10);
        const Mat recon = naive_matmul(naive_matmul(v, Mat::diagonal(e.eigenvalues)), v.transposed());
        EXPECT_LE(linalg::max_abs_diff(recon, m), 1e-10);
        for (std::size_t j = 0; j < 8; ++j) {
            const auto col = v.col(j);
            auto mv = linalg::matvec(m, col);
            linalg::axpy(-e.eigenvalues[j], col, mv);
            EXPECT_LE(linalg::norm(mv), 1e-8 * std::max(1.0, std::abs(e.eigenvalues[j])));
        }
    }
}

TEST(SymEig, NonSymmetricThrows) { EXPECT_THROW(linalg::sym_eig(Mat{{1, 2}, {0, 1}}), ContractError); }

TEST(PsdSqrt, IdentityAndDiagonal) {
    EXPECT_LE(linalg::max_abs_diff(linalg::psd_sqrt(Mat::identity(3)), Mat::identity(3)), 1e-14);
    EXPECT_LE(linalg::max_abs_diff(linalg::psd_sqrt(Mat{{4, 0}, {0, 9}}), (Mat{{2, 0}, {0, 3}})), 1e-14);
}

TEST(PsdSqrt, SoftmaxHessianOfUniformThreeClass) {
    const double p = 1.0 / 3.0;
    Mat h(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) h(i, j) = (i == j ? p : 0.0) - p * p;
    const Mat r = linalg::psd_sqrt(h);
    EXPECT_LE(linalg::max_abs_diff(naive_matmul(r, r), h), 1e-12);
    EXPECT_TRUE(linalg::is_symmetric(r, 1e-14));
}

TEST(PsdSqrt, RandomPsdCommutesAndIsPsd) {
    const Mat a = random_mat(5, 3, 30);
    const Mat m = linalg::gram_rows(a);  // rank 3, PSD
    const Mat r = linalg::psd_sqrt(m);
    EXPECT_LE(linalg::max_abs_diff(naive_matmul(r, r), m), 1e-10);
    EXPECT_LE(linalg::max_abs_diff(naive_matmul(r, m), naive_matmul(m, r)), 1e-10);
    const auto e = linalg::sym_eig(r);
    EXPECT_GE(e.eigenvalues.back(), -1e-10);
}

TEST(PsdSqrt, TinyNegativeClampedLargeNegativeThrows) {
    EXPECT_NO_THROW(linalg::psd_sqrt(Mat{{1, 0}, {0, -1e-13}}));
    EXPECT_THROW(linalg::psd_sqrt(Mat{{1, 0}, {0, -1e-6}}), NotPsdError);
}

TEST(Qr, OrthonormalInputReturnsItself) {
    const auto e = linalg::sym_eig(random_symmetric(5, 40));
    Mat q0(5, 3);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 3; ++c) q0(r, c) = e.eigenvectors(r, c);
    const auto [q, rf] = linalg::qr(q0);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(std::abs(rf(c, c)), 1.0, 1e-12);
        const double sign = rf(c, c) > 0 ? 1.0 : -1.0;
        for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(q(r, c) * sign, q0(r, c), 1e-12);
    }
}

TEST(Qr, ClosedFormThreeFour) {
    const auto [q, r] = linalg::qr(Mat{{3}, {4}});
    EXPECT_NEAR(q(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(q(1, 0), 0.8, 1e-15);
    EXPECT_NEAR(r(0, 0), 5.0, 1e-14);
}

TEST(Qr, RandomTallReconstruction) {
    const Mat m = random_mat(20, 4, 41);
    const auto [q, r] = linalg::qr(m);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul_tn(q, q), Mat::identity(4)), 1e-10);
    EXPECT_LE(linalg::max_abs_diff(naive_matmul(q, r), m), 1e-10);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(r(i, j), 0.0);
}

TEST(Qr, RankDeficientColumnIsReplaced) {
    Mat m = random_mat(6, 3, 42);
    m.set_col(2, m.col(0));
    const auto [q, r] = linalg::qr(m);
    EXPECT_LE(linalg::max_abs_diff(linalg::matmul_tn(q, q), Mat::identity(3)), 1e-10);
    EXPECT_LE(linalg::max_abs_diff(naive_matmul(q, r), m), 1e-10);
}

TEST(Qr, BitReproducible) {
    const Mat m = random_mat(12, 5, 43);
    const auto a = linalg::qr(m), b = linalg::qr(m);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.r, b.r);
}

TEST(TopSingularValue, DiagonalAndZero) {
    EXPECT_NEAR(linalg::top_singular_value_sq(Mat{{3, 0}, {0, 1}}), 9.0, 1e-9);
    EXPECT_EQ(linalg::top_singular_value_sq(Mat(3, 4)), 0.0);
}

TEST(TopSingularValue, RandomMatchesDenseEigensolver) {
    const Mat m = random_mat(6, 10, 44);
    const double ref = linalg::sym_eig(linalg::gram_rows(m)).eigenvalues.front();
    EXPECT_LE(rel_err(linalg::top_singular_value_sq(m, 1e-12), ref), 1e-8);
}

TEST(LinalgProperty, NonzeroSpectraOfGramPairsAgree) {
    for (std::uint64_t seed = 50; seed < 60; ++seed) {
        const Mat a = random_mat(4, 7, seed);
        const auto small = linalg::sym_eig(linalg::gram_rows(a));
        const auto big = linalg::sym_eig(linalg::matmul_tn(a, a));
        for (std::size_t j = 0; j < 4; ++j) EXPECT_LE(rel_err(big.eigenvalues[j], small.eigenvalues[j]), 1e-9);
        for (std::size_t j = 4; j < 7; ++j) EXPECT_NEAR(big.eigenvalues[j], 0.0, 1e-10);
    }
}

TEST(VectorOps, DotNormAxpy) {
    const linalg::Vec a{1, 2, 3}, b{4, 5, 6};
    EXPECT_EQ(linalg::dot(a, b), 32.0);
    EXPECT_DOUBLE_EQ(linalg::norm(a), std::sqrt(14.0));
    linalg::Vec y = b;
    linalg::axpy(2.0, a, y);
    EXPECT_EQ(y, (linalg::Vec{6, 9, 12}));
    EXPECT_TRUE(linalg::all_finite(y));
    y[1] = std::nan("");
    EXPECT_FALSE(linalg::all_finite(y));
}
