#include <gtest/gtest.h>

#include <vector>

#include "relay/kernels.hpp"
#include "relay/rng.hpp"

using namespace relay;

namespace {

Matrix random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    SplitMix64 rng(seed);
    Matrix m(rows, cols);
    for (double& x : m.data()) {
        x = rng.uniform(-1.0, 1.0);
    }
    return m;
}

void expect_identical(const Matrix& a, const Matrix& b) {
    ASSERT_EQ(a.rows(), b.rows());
    ASSERT_EQ(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        ASSERT_EQ(a.data()[i], b.data()[i]) << "element " << i;
    }
}

}  // namespace

class KernelParity : public ::testing::TestWithParam<std::size_t> {};

TEST_P(KernelParity, ProjectBitwiseEqual) {
    const std::size_t n = GetParam();
    const Matrix x = random_matrix(1, n, 24);
    const Matrix w = random_matrix(2, 24, 24);
    Matrix a(n, 24), b(n, 24);
    kernels::serial::project(x, w, a);
    kernels::omp::project(x, w, b);
    expect_identical(a, b);
}

TEST_P(KernelParity, CausalAttendBitwiseEqual) {
    const std::size_t n = GetParam();
    const std::size_t base = 17;
    const Matrix q = random_matrix(3, n, 16);
    const Matrix k = random_matrix(4, base + n, 16);
    const Matrix v = random_matrix(5, base + n, 16);
    Matrix a(n, 16), b(n, 16);
    kernels::serial::causal_attend(q, k, v, base, a);
    kernels::omp::causal_attend(q, k, v, base, b);
    expect_identical(a, b);
}

TEST_P(KernelParity, CandidateAttendBitwiseEqual) {
    const std::size_t n = GetParam();
    const Matrix q = random_matrix(6, n, 16);
    const Matrix ck = random_matrix(7, 40, 16);
    const Matrix cv = random_matrix(8, 40, 16);
    const Matrix ok = random_matrix(9, n, 16);
    const Matrix ov = random_matrix(10, n, 16);
    Matrix a(n, 16), b(n, 16);
    kernels::serial::candidate_attend(q, ck, cv, ok, ov, a);
    kernels::omp::candidate_attend(q, ck, cv, ok, ov, b);
    expect_identical(a, b);
}

TEST_P(KernelParity, ScoreBitwiseEqual) {
    const std::size_t n = GetParam();
    const Matrix h = random_matrix(11, n, 16);
    const Matrix head = random_matrix(12, 1, 16);
    std::vector<double> a(n), b(n);
    kernels::serial::score(h, head.row(0), a);
    kernels::omp::score(h, head.row(0), b);
    EXPECT_EQ(a, b);
}

INSTANTIATE_TEST_SUITE_P(Rows, KernelParity, ::testing::Values(1, 3, 16, 65, 257));

TEST(Kernels, CausalFirstRowCopiesFirstValue) {
    const Matrix q = random_matrix(1, 1, 8);
    const Matrix k = random_matrix(2, 1, 8);
    const Matrix v = random_matrix(3, 1, 8);
    Matrix out(1, 8);
    kernels::serial::causal_attend(q, k, v, 0, out);
    for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_NEAR(out(0, c), v(0, c), 1e-15);
    }
}

TEST(Kernels, CausalRowIgnoresLaterKeys) {
    const Matrix q = random_matrix(1, 4, 8);
    const Matrix k = random_matrix(2, 4, 8);
    Matrix v = random_matrix(3, 4, 8);
    Matrix before(4, 8), after(4, 8);
    kernels::serial::causal_attend(q, k, v, 0, before);
    v(3, 0) += 10.0;
    kernels::serial::causal_attend(q, k, v, 0, after);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 8; ++c) {
            EXPECT_EQ(before(r, c), after(r, c));
        }
    }
    EXPECT_NE(before(3, 0), after(3, 0));
}
