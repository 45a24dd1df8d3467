#include <transmute/diffop.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace transmute;
using Op = DifferentialOperator<double>;
using F = GridFunction<double>;
using cd = std::complex<double>;

namespace {

double bump(double x, double c, double r) {
    double t = (x - c) / r;
    return std::abs(t) < 1 ? std::exp(-1 / (1 - t * t)) : 0.0;
}

// Entrywise coefficient difference; `margin` skips the one-sided boundary band.
double max_coef_diff(const Op& a, const Op& b, int margin = 0) {
    double m = 0;
    for (const auto& ix : multi_indices(a.grid.dim, 3)) {
        auto fa = a.coeffs.count(ix) ? a.coeffs.at(ix).v : CMatrix<double>::Zero(Eigen::Index(a.grid.size()), a.N * a.N);
        auto fb = b.coeffs.count(ix) ? b.coeffs.at(ix).v : CMatrix<double>::Zero(Eigen::Index(a.grid.size()), a.N * a.N);
        if (fa.size() && fb.size()) m = std::max(m, interior_max_abs(a.grid, CMatrix<double>(fa - fb), margin));
    }
    return m;
}

}  // namespace

TEST(Apply, DerivativeOfIdentity) {
    auto g = make_grid<double>({{0.0, 1.0}}, {11});
    Op L(g, 1, 1);
    L.set_constant({1, 0}, 1.0);
    auto r = apply(L, sample(g, [](double x) { return x; }));
    for (std::size_t k = 1; k + 1 < g.size(); ++k) EXPECT_NEAR(r(k).real(), 1.0, 1e-13);
}

TEST(Apply, SchrodingerEigenRelation) {
    auto g = make_grid<double>({{0.0, std::numbers::pi}}, {257});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0).set_constant({0, 0}, 2.0);
    auto r = apply(L, sample(g, [](double x) { return std::sin(x); }));
    double e = 0;
    for (std::size_t k = 0; k < g.size(); ++k) e = std::max(e, std::abs(r(k) - 3 * std::sin(g.coord(0, int(k)))));
    EXPECT_LE(e, 1e-3);
}

TEST(Apply, ZeroOperator) {
    auto g = make_grid<double>({{0.0, 1.0}}, {9});
    Op L(g, 1, 2);
    L.coef({2, 0});
    L.validate();
    EXPECT_EQ(apply(L, sample(g, [](double x) { return std::exp(x); })).max_abs(), 0.0);
}

TEST(Apply, Linearity) {
    auto g = make_grid<double>({{-1.0, 1.0}, {0.0, 1.0}}, {21, 17});
    Op L(g, 1, 2);
    L.set_field({2, 0}, [](double x, double y) { return 1 + x * y; });
    L.set_field({1, 1}, [](double x, double) { return std::sin(x); });
    L.set_constant({0, 1}, cd(0, 2));
    auto f = sample(g, [](double x, double y) { return std::cos(x + y); });
    auto h = sample(g, [](double x, double y) { return x * x * y; });
    cd a(0.3, -1.2), b(2.0, 0.5);
    auto lhs = apply(L, a * f + b * h);
    auto rhs = a * apply(L, f) + b * apply(L, h);
    EXPECT_LE((lhs.v - rhs.v).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Apply, Mismatch) {
    auto g = make_grid<double>({{0.0, 1.0}}, {9});
    Op L(g, 2, 1);
    EXPECT_THROW(apply(L, F(g, 1)), Error);
}

TEST(FormalAdjoint, FirstOrderSignFlip) {
    auto g = make_grid<double>({{0.0, 1.0}}, {9});
    Op L(g, 1, 1);
    L.set_constant({1, 0}, 1.0);
    auto [A, cert] = formal_adjoint(L);
    EXPECT_NEAR(std::abs(A.coeffs.at({1, 0}).v(3, 0) + 1.0), 0.0, 1e-15);
    EXPECT_LE(A.coeffs.at({0, 0}).v.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FormalAdjoint, VariableCoefficientLeibniz) {
    auto g = make_grid<double>({{0.0, 1.0}}, {33});
    Op L(g, 1, 1);
    L.set_field({1, 0}, [](double x) { return x; });
    auto [A, cert] = formal_adjoint(L);
    for (std::size_t k = 0; k < g.size(); ++k) {
        EXPECT_NEAR(std::abs(A.coeffs.at({1, 0}).v(Eigen::Index(k), 0) + g.coord(0, int(k))), 0.0, 1e-14);
        EXPECT_NEAR(std::abs(A.coeffs.at({0, 0}).v(Eigen::Index(k), 0) + 1.0), 0.0, 1e-12);
    }
}

TEST(FormalAdjoint, SchrodingerIsSelfAdjoint) {
    auto g = make_grid<double>({{-5.0, 5.0}}, {201});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0).set_field({0, 0}, [](double x) { return -2 / std::pow(std::cosh(x), 2); });
    auto A = formal_adjoint(L).first;
    EXPECT_LE(max_coef_diff(L, A), 1e-12);
}

TEST(FormalAdjoint, MatrixCoefficientsUseConjugateTranspose) {
    auto g = make_grid<double>({{0.0, 1.0}}, {9});
    Op L(g, 2, 0);
    CMatrix<double> m(2, 2);
    m << cd(1, 2), cd(3, -1), cd(0, 5), cd(-2, 0);
    for (std::size_t k = 0; k < g.size(); ++k) L.coef({0, 0}).set(k, m);
    auto A = formal_adjoint(L).first;
    EXPECT_LE((A.coeffs.at({0, 0}).at(4) - m.adjoint()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FormalAdjoint, CertificateRecombinesExactly) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {12, 10});
    Op L(g, 2, 3);
    for (const auto& ix : multi_indices(2, 3)) {
        auto& c = L.coef(ix);
        for (std::size_t k = 0; k < g.size(); ++k) {
            auto ij = g.unravel(k);
            double x = g.coord(0, ij[0]), y = g.coord(1, ij[1]);
            for (int e = 0; e < 4; ++e) c.v(Eigen::Index(k), e) = cd(std::sin(x + e + ix[0]), y * (e - ix[1]));
        }
    }
    auto [A, cert] = formal_adjoint(L);
    auto again = cert.recombine(g.size(), 2);
    ASSERT_EQ(again.size(), A.coeffs.size());
    for (const auto& [ix, f] : A.coeffs) EXPECT_EQ(f.v, again.at(ix).v);
    // every (alpha, beta <= alpha) pair is recorded once
    std::size_t expected = 0;
    for (const auto& ix : multi_indices(2, 3)) expected += std::size_t(ix[0] + 1) * (ix[1] + 1);
    EXPECT_EQ(cert.terms.size(), expected);
}

TEST(FormalAdjoint, InvolutionOnCubicCoefficients) {
    std::mt19937 rng(0);
    std::uniform_real_distribution<double> U(-1, 1);
    auto g = make_grid<double>({{-1.0, 1.0}}, {256});
    for (int draw = 0; draw < 5; ++draw) {
        Op L(g, 2, 3);
        for (int k = 0; k <= 3; ++k) {
            auto& c = L.coef({k, 0});
            for (int e = 0; e < 4; ++e) {
                cd p[4];
                for (auto& z : p) z = cd(U(rng), U(rng));
                for (std::size_t n = 0; n < g.size(); ++n) {
                    double x = g.coord(0, int(n));
                    c.v(Eigen::Index(n), e) = p[0] + x * (p[1] + x * (p[2] + x * p[3]));
                }
            }
        }
        auto LL = formal_adjoint(formal_adjoint(L).first).first;
        EXPECT_LE(max_coef_diff(L, LL, 3), 1e-8) << "draw " << draw;
    }
}

TEST(FormalAdjoint, InvolutionTwoDimensional) {
    auto g = make_grid<double>({{-1.0, 1.0}, {0.0, 2.0}}, {64, 48});
    Op L(g, 1, 2);
    L.set_field({2, 0}, [](double x, double y) { return 1 + x * x * y; });
    L.set_field({1, 1}, [](double x, double y) { return x - y * y * y; });
    L.set_field({0, 1}, [](double x, double y) { return x * y; });
    L.set_constant({0, 0}, cd(0, 1));
    auto LL = formal_adjoint(formal_adjoint(L).first).first;
    EXPECT_LE(max_coef_diff(L, LL, 3), 1e-8);
}

TEST(AdjointDefect, BumpConvergence) {
    for (int n : {64, 128, 256}) {
        auto g = make_grid<double>({{0.0, 1.0}}, {n});
        Op L(g, 1, 2);
        L.set_constant({2, 0}, -1.0);
        auto phi = sample(g, [](double x) { return bump(x, 0.5, 0.3); });
        auto psi = sample(g, [](double x) { return bump(x, 0.45, 0.35) * std::cos(4 * x); });
        double d = std::abs(adjoint_defect(L, phi, psi));
        if (n == 256) EXPECT_LE(d, 1e-5);
    }
}

TEST(AdjointDefect, OrderUnderRefinement) {
    double e[3];
    int ns[3] = {64, 128, 256};
    for (int r = 0; r < 3; ++r) {
        auto g = make_grid<double>({{0.0, 1.0}}, {ns[r] + 1});
        Op L(g, 1, 3);
        L.set_field({3, 0}, [](double x) { return cd(1 + x, 0.5); });
        L.set_field({1, 0}, [](double x) { return std::sin(3 * x); });
        auto phi = sample(g, [](double x) { return cd(bump(x, 0.5, 0.3), bump(x, 0.55, 0.3)); });
        auto psi = sample(g, [](double x) { return bump(x, 0.45, 0.35) * std::exp(2 * x); });
        e[r] = std::abs(adjoint_defect(L, phi, psi));
    }
    EXPECT_GE(std::log2(e[0] / e[1]), 1.8);
    EXPECT_GE(std::log2(e[1] / e[2]), 1.8);
}

TEST(AdjointDefect, TrivialCases) {
    auto g = make_grid<double>({{0.0, 1.0}}, {101});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0).set_field({0, 0}, [](double x) { return x; });
    auto zero = F(g, 1);
    auto psi = sample(g, [](double x) { return bump(x, 0.5, 0.3); });
    EXPECT_EQ(adjoint_defect(L, zero, psi), cd(0));
    Op Q(g, 1, 0);
    Q.set_field({0, 0}, [](double x) { return std::cos(x); });
    auto phi = sample(g, [](double x) { return bump(x, 0.4, 0.3); });
    EXPECT_LE(std::abs(adjoint_defect(Q, phi, psi)), 1e-15);
}

TEST(AdjointDefect, ConjugateAntisymmetry) {
    auto g = make_grid<double>({{0.0, 1.0}}, {257});
    Op L(g, 1, 2);
    L.set_field({2, 0}, [](double x) { return cd(-1, x); });
    L.set_field({1, 0}, [](double x) { return cd(x * x, 1); });
    auto phi = sample(g, [](double x) { return cd(bump(x, 0.5, 0.3), 0.5 * bump(x, 0.6, 0.2)); });
    auto psi = sample(g, [](double x) { return bump(x, 0.45, 0.35); });
    auto Ls = formal_adjoint(L).first;
    auto d1 = adjoint_defect(L, phi, psi);
    auto d2 = adjoint_defect(Ls, psi, phi);
    EXPECT_LE(std::abs(d1 + std::conj(d2)), 1e-5);
}

TEST(AdjointDefect, RejectsBoundaryMass) {
    auto g = make_grid<double>({{0.0, 1.0}}, {33});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0);
    auto one = sample(g, [](double) { return 1.0; });
    EXPECT_THROW(adjoint_defect(L, one, one), Error);
}

TEST(Operator, ValidateRejectsVanishingLeadingTerm) {
    auto g = make_grid<double>({{0.0, 1.0}}, {9});
    Op L(g, 1, 2);
    L.set_constant({1, 0}, 1.0);
    EXPECT_THROW(L.validate(), Error);
    EXPECT_THROW(L.coef({3, 0}), Error);
}
