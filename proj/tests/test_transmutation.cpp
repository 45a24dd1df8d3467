#include <transmute/transmutation.hpp>

#include "scenarios.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace transmute;
using namespace transmute::testing;
using Op = DifferentialOperator<double>;
using F = GridFunction<double>;

namespace {

SpectralFamily<double> wrap(std::vector<F> members, std::vector<cd> pts) {
    SpectralFamily<double> f;
    f.sigma = SpectralGrid<double>::uniform(std::move(pts));
    f.members = std::move(members);
    return f;
}

}  // namespace

TEST(KernelMatrix, CheckedInverseRefusesSingular) {
    CMatrix<double> m(2, 2);
    m << 1, 2, 2, 4;
    EXPECT_THROW(checked_inverse(m, "test"), Error);
    m << 2, 1, 1, 3;
    EXPECT_LE((checked_inverse(m, "test") * m - CMatrix<double>::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(checked_inverse(CMatrix<double>(0, 0), "empty").size(), 0);
}

TEST(KernelMatrices, BasepointLimitIsExact) {
    auto g = make_grid<double>({{0.0, 1.0}}, {129});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0);
    auto fam = wrap({sample(g, [](double x) { return std::sinh(x - 0.3); }), sample(g, [](double x) { return std::sinh(2 * (x - 0.3)) / 2; })},
                    {1.0, 2.0});
    auto [wx, w0] = kernel_matrices(fam, fam, L, 40, 40);
    EXPECT_EQ((wx.value - w0.value).cwiseAbs().maxCoeff(), 0.0);
}

TEST(KernelMatrices, PointEvaluationIsTheWronskian) {
    auto g = make_grid<double>({{0.0, 1.0}}, {2001});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0);
    const double x0 = 0.3;
    std::vector<double> eta{1.0, 2.0};
    std::vector<F> m;
    for (double e : eta) m.push_back(sample(g, [&](double x) { return std::sinh(e * (x - x0)) / e; }));
    auto fam = wrap(m, {1.0, 2.0});
    const std::size_t x = 1400;
    auto [wx, w0] = kernel_matrices(fam, fam, L, x, 0);  // at x = x0 the Wronskians vanish identically
    const double xv = g.coord(0, int(x));
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            double p = std::sinh(eta[a] * (xv - x0)) / eta[a], dp = std::cosh(eta[a] * (xv - x0));
            double q = std::sinh(eta[b] * (xv - x0)) / eta[b], dq = std::cosh(eta[b] * (xv - x0));
            EXPECT_NEAR(std::abs(wx.value(a, b) - (p * dq - dp * q)), 0.0, 1e-6);
        }
}

TEST(KernelMatrices, CompanionIsConjugateTransposeForSelfAdjoint) {
    auto g = make_grid<double>({{0.0, 1.0}}, {257});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0);
    L.set_field({0, 0}, [](double x) { return cd(1 + x * x); });
    auto fam = wrap({sample(g, [](double x) { return cd(std::cos(x), std::sin(2 * x)); }), sample(g, [](double x) { return cd(x * x, 1 - x); })},
                    {1.0, 2.0});
    for (std::size_t x : {10u, 128u, 250u}) {
        auto [wx, w0] = kernel_matrices(fam, fam, L, x, 0);
        auto c = companion_kernel_matrix(fam, fam, L, x);
        EXPECT_LE((c.value - wx.value.adjoint()).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(KernelMatrices, RegularityNearBasepoint) {
    // |Omega_{x0 + h} - Omega_{x0}| = O(h) for the density film.
    double d[2];
    int ns[2] = {257, 513};
    for (int t = 0; t < 2; ++t) {
        auto g = make_grid<double>({{0.0, 1.0}}, {ns[t]});
        auto fam = sinh_family(g, {1.0, 2.0});
        auto film = density_film(g, Orientation::Plus, schrodinger_dual<double>());
        auto field = film_kernels(fam.members, fam.members, film, CMatrix<double>(CMatrix<double>::Identity(2, 2)));
        d[t] = (field.at[g.size() - 2].value - field.base.value).cwiseAbs().maxCoeff();
        EXPECT_EQ((field.at[g.size() - 1].value - field.base.value).cwiseAbs().maxCoeff(), 0.0);
    }
    EXPECT_GE(d[0] / d[1], 1.8);
}

TEST(KernelMatrices, StaircaseCyclesOnThePlane) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {65, 65});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, 1.0).set_constant({0, 2}, 1.0);
    auto phi = wrap({sample(g, [](double x, double y) { return x * y; })}, {1.0});
    auto psi = wrap({sample(g, [](double x, double y) { return x * x - y * y; })}, {1.0});
    auto [wx, w0] = kernel_matrices(phi, psi, L, g.index(50, 40), g.index(10, 20));
    EXPECT_EQ(w0.value(0, 0), cd(1.0));
    // Independent route: the other staircase between the same nodes.
    auto form = bilinear_concomitant(L, phi.members[0], psi.members[0]).as_form();
    cd other = 1.0 + integrate_path(form, staircase({10, 20}, {50, 40}, 1));
    EXPECT_LE(std::abs(wx.value(0, 0) - other), 1e-6);
    auto bad = wrap({sample(g, [](double x, double y) { return std::exp(x * y); })}, {1.0});
    EXPECT_THROW(kernel_matrices(bad, psi, L, g.index(50, 40), g.index(10, 20)), Error);
}

TEST(TransformFamily, ConstantConcomitantGivesIdentity) {
    auto g = make_grid<double>({{0.0, 1.0}}, {33});
    Op L(g, 1, 1);
    L.set_constant({1, 0}, 1.0);
    auto one = wrap({sample(g, [](double) { return 1.0; })}, {0.0});
    auto field = point_kernels(one, one, L, 5);
    auto t = transform_family(one, field);
    EXPECT_LE((t.members[0].v - one.members[0].v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TransformFamily, BasepointSliceIsUnchanged) {
    auto g = make_grid<double>({{0.0, 1.0}}, {65});
    auto fam = sinh_family(g, {1.0, 2.0, 3.0});
    auto film = density_film(g, Orientation::Minus, schrodinger_dual<double>());
    CMatrix<double> M = CMatrix<double>::Identity(3, 3);
    auto t = transform_family(fam, film_kernels(fam.members, fam.members, film, M));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(t.members[k](0), fam.members[k](0));
}

TEST(TransformFamily, OneFunctionDarbouxOracle) {
    DarbouxSetup S(1024);
    auto t = transform_family(S.psi, film_kernels(S.psi.members, S.psi.members, S.film(), S.base()));
    double e = 0;
    for (std::size_t i = 0; i < S.grid.size(); ++i) e = std::max(e, std::abs(t.members[0](i) - S.psi_tilde(S.grid.coord(0, int(i)))));
    EXPECT_LE(e, 1e-4);
}

TEST(Delsarte, EmptyFamilyIsIdentity) {
    auto g = make_grid<double>({{0.0, 1.0}}, {65});
    auto id = identity_operator(g, 1, density_film(g, Orientation::Plus, schrodinger_dual<double>()));
    auto f = sample(g, [](double x) { return std::sin(3 * x); });
    EXPECT_EQ((id.apply(f).v - f.v).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(delsarte_inverse(id).size(), 0u);
    Op L(g, 1, 2);
    L.set_constant({2, 0}, -1.0);
    auto Lt = transformed_operator(L, id);
    EXPECT_EQ((Lt.coeffs.at({2, 0}).v - L.coeffs.at({2, 0}).v).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(intertwining_residual(L, Lt, id, bump_battery(g, 3)), 0.0);
}

TEST(Delsarte, ReproducesTransformedMembers) {
    auto g = make_grid<double>({{0.0, 1.0}}, {257});
    auto fam = sinh_family(g, {1.0, 2.0});
    for (auto o : {Orientation::Plus, Orientation::Minus}) {
        auto tr = delsarte_transmutation(fam, fam, density_film(g, o, schrodinger_dual<double>()), CMatrix<double>(CMatrix<double>::Identity(2, 2)));
        for (std::size_t k = 0; k < 2; ++k)
            EXPECT_LE((tr.op.apply(fam.members[k]).v - tr.op.psi_tilde[k].v).cwiseAbs().maxCoeff(), 1e-6 * tr.op.psi_tilde[k].max_abs());
    }
}

TEST(Delsarte, VolterraSupport) {
    auto g = make_grid<double>({{0.0, 1.0}}, {257});
    auto fam = sinh_family(g, {1.0, 2.0});
    CMatrix<double> M = CMatrix<double>::Identity(2, 2);
    auto plus = delsarte_transmutation(fam, fam, density_film(g, Orientation::Plus, schrodinger_dual<double>()), M).op;
    // f supported on [0.2, 0.4]: (Omega_+ f)(x) = f(x) = 0 for x > 0.4.
    auto f = sample(g, [](double x) { return cos4(x, 0.3, 0.1); });
    auto r = plus.apply(f);
    double left = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g.coord(0, int(i)) > 0.4 + 1e-12) left = std::max(left, std::abs(r(i) - f(i)));
    EXPECT_LE(left, 1e-10 * f.max_abs());
    CMatrix<double> A = plus.matrix() - CMatrix<double>::Identity(257, 257);
    double excluded = 0;
    for (int i = 0; i < 257; ++i)
        for (int j = 0; j < i; ++j) excluded = std::max(excluded, std::abs(A(i, j)));
    EXPECT_EQ(excluded, 0.0);
    EXPECT_GT(A.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Delsarte, DenseMatrixMatchesApply) {
    auto g = make_grid<double>({{0.0, 1.0}}, {65});
    auto fam = sinh_family(g, {1.0, 3.0});
    auto op = delsarte_transmutation(fam, fam, density_film(g, Orientation::Minus, schrodinger_dual<double>()),
                                     CMatrix<double>(CMatrix<double>::Identity(2, 2))).op;
    auto f = sample(g, [](double x) { return cd(std::cos(4 * x), x); });
    EXPECT_LE((op.matrix() * f.v.col(0) - op.apply(f).v.col(0)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Delsarte, AdjointIsHermitianAdjointUnderTheScalarProduct) {
    auto g = make_grid<double>({{0.0, 1.0}}, {129});
    std::vector<F> m{sample(g, [](double x) { return cd(std::sinh(1 - x), 0.3 * (1 - x)); }),
                     sample(g, [](double x) { return cd(std::sin(2 * (1 - x)), -(1 - x) * (1 - x)); })};
    auto fam = wrap(m, {1.0, 2.0});
    CMatrix<double> M(2, 2);
    M << cd(1, 0.2), 0.1, 0.0, cd(0.8, -0.1);
    for (auto o : {Orientation::Plus, Orientation::Minus}) {
        auto op = delsarte_transmutation(fam, fam, density_film(g, o, schrodinger_dual<double>()), M).op;
        for (const auto& f : bump_battery(g, 4, 7))
            for (const auto& h : bump_battery(g, 4, 11)) {
                cd lhs = inner(h, op.apply(f)), rhs = inner(op.apply_adjoint(h), f);
                EXPECT_LE(std::abs(lhs - rhs), 1e-6 * norm2(f) * norm2(h));
            }
    }
}

TEST(Delsarte, InverseRoundTrip) {
    auto g = make_grid<double>({{0.0, 1.0}}, {512});
    auto fam = sinh_family(g, {1.0, 2.0});
    auto op = delsarte_transmutation(fam, fam, density_film(g, Orientation::Plus, schrodinger_dual<double>()),
                                     CMatrix<double>(CMatrix<double>::Identity(2, 2))).op;
    auto inv = delsarte_inverse(op);
    double worst = 0;
    for (const auto& f : smooth_battery(g, 10)) worst = std::max(worst, (inv.apply(op.apply(f)) - f).max_abs() / f.max_abs());
    EXPECT_LE(worst, 1e-5);
    for (std::size_t k = 0; k < 2; ++k)
        EXPECT_LE((inv.apply(op.psi_tilde[k]) - fam.members[k]).max_abs(), 1e-5 * fam.members[k].max_abs());
}

TEST(Delsarte, InverseRefusesForeignTransformedFamily) {
    auto g = make_grid<double>({{0.0, 1.0}}, {65});
    auto fam = sinh_family(g, {1.0});
    CMatrix<double> M = CMatrix<double>::Identity(1, 1);
    auto plus = delsarte_transmutation(fam, fam, density_film(g, Orientation::Plus, schrodinger_dual<double>()), M).op;
    auto minus = delsarte_assemble(fam.members, fam.members, plus.psi_tilde, M, density_film(g, Orientation::Minus, schrodinger_dual<double>()), g, 1);
    EXPECT_THROW(delsarte_inverse(minus), Error);
    EXPECT_THROW(delsarte_assemble(fam.members, fam.members, plus.psi_tilde, CMatrix<double>(CMatrix<double>::Zero(1, 1)), plus.film, g, 1), Error);
}

TEST(TransformedOperator, DarbouxPotential) {
    DarbouxSetup S;
    auto op = delsarte_transmutation(S.psi, S.psi, S.film(), S.base()).op;
    TransformedOperatorReport<double> rep;
    auto Lt = transformed_operator(S.L, op, &rep);
    EXPECT_EQ(Lt.order, 2);
    double eq = 0, shift = 0, ea2 = 0;
    for (std::size_t i = 0; i < S.grid.size(); ++i) {
        if (!interior(S.grid, i, kInteriorMargin)) continue;
        double x = S.grid.coord(0, int(i));
        eq = std::max(eq, std::abs(Lt.coeffs.at({0, 0}).v(Eigen::Index(i), 0) - S.q_tilde(x)));
        shift = std::max(shift, std::abs(S.q_tilde(x) - S.kappa * S.kappa));
        ea2 = std::max(ea2, std::abs(Lt.coeffs.at({2, 0}).v(Eigen::Index(i), 0) + 1.0));
    }
    EXPECT_LE(eq / shift, 1e-3);
    // The principal coefficient is preserved up to the O(h^2) discretization error.
    EXPECT_LE(ea2, 1e-3);
    EXPECT_EQ(rep.fallback_nodes.size(), 1u);
    EXPECT_LE(intertwining_residual(S.L, Lt, op, smooth_battery(S.grid, 10)), 1e-4);
    EXPECT_LE(membership_residual(Lt, op.psi_tilde[0]), 1e-4);
}

TEST(TransformedOperator, PrincipalCoefficientConvergesSecondOrder) {
    double e[2];
    int ns[2] = {256, 512};
    for (int t = 0; t < 2; ++t) {
        DarbouxSetup S(ns[t]);
        auto Lt = transformed_operator(S.L, delsarte_transmutation(S.psi, S.psi, S.film(), S.base()).op);
        e[t] = interior_max_abs(S.grid, CMatrix<double>(Lt.coeffs.at({2, 0}).v.array() + 1.0), ns[t] / 16);
    }
    EXPECT_GE(std::log2(e[0] / e[1]), 1.8);
}

TEST(TransformedOperator, RejectsTwoDimensionalOperators) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {9, 9});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, 1.0).set_constant({0, 2}, 1.0);
    auto fam = wrap({sample(g, [](double x, double y) { return x * y; })}, {1.0});
    auto op = delsarte_transmutation(fam, fam, staircase_film(L, {4, 4}), CMatrix<double>(CMatrix<double>::Identity(1, 1))).op;
    EXPECT_THROW(transformed_operator(L, op), Error);
}

TEST(Delsarte, StaircaseFilmReproducesMembers) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {33, 33});
    Op L(g, 1, 2);
    L.set_constant({2, 0}, 1.0).set_constant({0, 2}, 1.0);
    auto fam = wrap({sample(g, [](double x, double y) { return x * y; }), sample(g, [](double x, double y) { return x * x - y * y; })}, {1.0, 2.0});
    auto tr = delsarte_transmutation(fam, fam, staircase_film(L, {16, 16}), CMatrix<double>(CMatrix<double>::Identity(2, 2)));
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_LE((tr.op.apply(fam.members[k]).v - tr.op.psi_tilde[k].v).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_EQ(tr.op.psi_tilde[k](g.index(16, 16)), fam.members[k](g.index(16, 16)));
    }
}
