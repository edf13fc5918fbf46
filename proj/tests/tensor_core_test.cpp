#include "isct/tensor_core.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "isct/error.hpp"
#include "isct/rng.hpp"
#include "isct/signature.hpp"

namespace isct {
namespace {

TruncatedTensor random_tensor(Rng& rng, int dim, int depth) {
    TruncatedTensor t(dim, depth);
    for (double& x : t.coefficients()) x = rng.uniform(-1.0, 1.0);
    return t;
}

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(TensorCore, UnitLevels) {
    const auto u = tt_unit(2, 2);
    EXPECT_EQ(as_vector(u.level(0)), (std::vector<double>{1.0}));
    EXPECT_EQ(as_vector(u.level(1)), (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(as_vector(u.level(2)), (std::vector<double>{0.0, 0.0, 0.0, 0.0}));

    const auto degenerate = tt_unit(1, 0);
    EXPECT_EQ(degenerate.size(), 1u);
    EXPECT_EQ(degenerate.scalar(), 1.0);
}

TEST(TensorCore, UnitRejectsNonPositiveDim) {
    EXPECT_THROW(tt_unit(0, 2), InvalidArgument);
    EXPECT_THROW(tt_unit(-3, 2), InvalidArgument);
}

TEST(TensorCore, UnitIsTwoSidedIdentity) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_index(3));
        const int k = static_cast<int>(rng.uniform_index(5));
        const auto a = random_tensor(rng, d, k);
        EXPECT_EQ(tt_product(tt_unit(d, k), a), a);
        EXPECT_EQ(tt_product(a, tt_unit(d, k)), a);
    }
}

TEST(TensorCore, AddScaleLaws) {
    Rng rng(2);
    const auto x = random_tensor(rng, 3, 3);
    const auto zero = tt_add(x, tt_scale(x, -1.0));
    for (double c : zero.coefficients()) EXPECT_EQ(c, 0.0);

    const auto s = tt_scale(tt_unit(2, 2), 3.0);
    EXPECT_EQ(s.scalar(), 3.0);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_EQ(s.coefficients()[i], 0.0);

    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_tensor(rng, 2, 3);
        const auto b = random_tensor(rng, 2, 3);
        EXPECT_EQ(tt_add(a, b), tt_add(b, a));
    }
}

TEST(TensorCore, ShapeMismatchIsShapeError) {
    EXPECT_THROW(tt_add(tt_unit(2, 2), tt_unit(3, 2)), ShapeError);
    EXPECT_THROW(tt_add(tt_unit(2, 2), tt_unit(2, 3)), ShapeError);
    EXPECT_THROW(tt_product(tt_unit(2, 2), tt_unit(2, 1)), ShapeError);
}

TEST(TensorCore, ProductOfAxisExponentialsMatchesStrictSumOracle) {
    // exp(e1) (x) exp(e2) is the Chen signature of the L-path
    // (0,0) -> (1,0) -> (1,1). Oracle: strict iterated sum of that path
    // plus the diagonal correction 1/2 sum dx (x) dx.
    const std::vector<double> e1{1.0, 0.0};
    const std::vector<double> e2{0.0, 1.0};
    const auto prod = tt_product(tt_exp(e1, 2, 2), tt_exp(e2, 2, 2));

    const Path lpath({{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}});
    auto oracle = as_vector(strict_iterated_sum(lpath, 2).level(2));
    for (const auto& dx : {e1, e2})
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) oracle[i * 2 + j] += 0.5 * dx[i] * dx[j];

    EXPECT_EQ(oracle, (std::vector<double>{0.5, 1.0, 0.0, 0.5}));
    EXPECT_EQ(as_vector(prod.level(1)), (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(as_vector(prod.level(2)), oracle);
}

TEST(TensorCore, RingLawsOnRandomTensors) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_index(3));
        const int k = static_cast<int>(rng.uniform_index(5));
        const auto a = random_tensor(rng, d, k);
        const auto b = random_tensor(rng, d, k);
        const auto c = random_tensor(rng, d, k);
        const double alpha = rng.uniform(-2.0, 2.0);

        EXPECT_LT(max_abs_diff(tt_product(tt_product(a, b), c), tt_product(a, tt_product(b, c))), 1e-12);
        // bilinearity in each argument
        EXPECT_LT(max_abs_diff(tt_product(tt_add(a, tt_scale(b, alpha)), c),
                               tt_add(tt_product(a, c), tt_scale(tt_product(b, c), alpha))),
                  1e-12);
        EXPECT_LT(max_abs_diff(tt_product(c, tt_add(a, tt_scale(b, alpha))),
                               tt_add(tt_product(c, a), tt_scale(tt_product(c, b), alpha))),
                  1e-12);
    }
}

TEST(TensorCore, ProductKeepsGrading) {
    Rng rng(4);
    const auto a = random_tensor(rng, 3, 2);
    const auto p = tt_product(a, a);
    EXPECT_EQ(p.depth(), 2);
    EXPECT_EQ(p.size(), 1u + 3u + 9u);
    for (int k = 0; k <= 2; ++k) EXPECT_EQ(p.level(k).size(), ipow(3, k));
}

TEST(TensorCore, TensorPowerExamples) {
    EXPECT_EQ(tensor_power(std::vector<double>{1.0, 2.0}, 2, 2), (std::vector<double>{1, 2, 2, 4}));
    EXPECT_EQ(tensor_power(std::vector<double>{5.0, -1.0}, 0, 2), (std::vector<double>{1.0}));
    EXPECT_EQ(tensor_power(std::vector<double>{2.0}, 3, 3), (std::vector<double>{8.0}));
    EXPECT_THROW(tensor_power(std::vector<double>{1.0}, 3, 2), InvalidArgument);
}

TEST(TensorCore, ExpExamples) {
    const auto e = tt_exp(std::vector<double>{2.0}, 1, 3);
    EXPECT_EQ(e.level(0)[0], 1.0);
    EXPECT_EQ(e.level(1)[0], 2.0);
    EXPECT_EQ(e.level(2)[0], 2.0);
    EXPECT_NEAR(e.level(3)[0], 4.0 / 3.0, 1e-15);

    EXPECT_EQ(tt_exp(std::vector<double>{0.0, 0.0}, 2, 3), tt_unit(2, 3));
    EXPECT_THROW(tt_exp(std::vector<double>{1.0}, 2, 2), ShapeError);
}

TEST(TensorCore, ExpOfNegationIsInverse) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_index(3));
        const int k = static_cast<int>(rng.uniform_index(5));
        std::vector<double> v(d), neg(d);
        for (int i = 0; i < d; ++i) {
            v[i] = rng.uniform(-1.0, 1.0);
            neg[i] = -v[i];
        }
        EXPECT_LT(max_abs_diff(tt_product(tt_exp(v, d, k), tt_exp(neg, d, k)), tt_unit(d, k)), 1e-12);
    }
}

TEST(TensorCore, ExpHomomorphismOnCollinearSegments) {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_index(3));
        const int k = 1 + static_cast<int>(rng.uniform_index(4));
        const double c = rng.uniform(-2.0, 2.0);
        std::vector<double> u(d), cu(d), sum(d);
        for (int i = 0; i < d; ++i) {
            u[i] = rng.uniform(-1.0, 1.0);
            cu[i] = c * u[i];
            sum[i] = (1.0 + c) * u[i];
        }
        EXPECT_LT(max_abs_diff(tt_product(tt_exp(u, d, k), tt_exp(cu, d, k)), tt_exp(sum, d, k)), 1e-12);
    }
}

TEST(TensorCore, NormLevel) {
    EXPECT_EQ(tt_norm_level(tt_unit(2, 2), 0), 1.0);
    TruncatedTensor t(2, 1);
    t.level(1)[0] = 1.0;
    t.level(1)[1] = -2.0;
    EXPECT_EQ(tt_norm_level(t, 1), 3.0);
    EXPECT_DOUBLE_EQ(tt_norm_level(tt_exp(std::vector<double>{3.0}, 1, 2), 2), 4.5);
    EXPECT_THROW(tt_norm_level(t, 2), InvalidArgument);
    EXPECT_THROW(tt_norm_level(t, -1), InvalidArgument);
}

TEST(TensorCore, FlattenLayout) {
    const std::vector<int> l12{1, 2};
    EXPECT_EQ(flatten(tt_unit(2, 2), l12).size(), 6u);
    EXPECT_EQ(flatten(tt_unit(2, 2), all_levels(2)), (std::vector<double>{1, 0, 0, 0, 0, 0, 0}));

    // word (i, j) sits at i*d + j within level 2
    TruncatedTensor t(3, 2);
    t.level(2)[MultiIndex{{2, 1}}.rank(3)] = 7.0;
    const std::vector<int> only2{2};
    EXPECT_EQ(flatten(t, only2)[2 * 3 + 1], 7.0);
    EXPECT_THROW(flatten(t, std::vector<int>{}), InvalidArgument);
    EXPECT_THROW(flatten(t, std::vector<int>{3}), InvalidArgument);
}

TEST(TensorCore, FlattenRoundTripAndDeterminism) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_index(4));
        const int k = static_cast<int>(rng.uniform_index(5));
        const auto a = random_tensor(rng, d, k);
        const auto levels = all_levels(k);
        const auto flat = flatten(a, levels);
        EXPECT_EQ(unflatten(flat, d, k, levels), a);
        EXPECT_EQ(flat, flatten(a, levels));
    }
}

TEST(TensorCore, MultiIndexRankIsLexicographic) {
    for (std::size_t r = 0; r < 27; ++r) {
        const auto m = MultiIndex::from_rank(r, 3, 3);
        EXPECT_EQ(m.rank(3), r);
    }
    EXPECT_EQ((MultiIndex{{0, 0}}.rank(2)), 0u);
    EXPECT_EQ((MultiIndex{{0, 1}}.rank(2)), 1u);
    EXPECT_EQ((MultiIndex{{1, 0}}.rank(2)), 2u);
}

}  // namespace
}  // namespace isct
