#include <transmute/numgrid.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <numbers>

using namespace transmute;
using G = GridSpec<double>;
using F = GridFunction<double>;

namespace {

double convergence_order(double e1, double e2) { return std::log2(e1 / e2); }

}  // namespace

TEST(MakeGrid, SpacingAndCount) {
    auto g = make_grid<double>({{0.0, 1.0}}, {5});
    EXPECT_EQ(g.size(), 5u);
    EXPECT_DOUBLE_EQ(g.h[0], 0.25);
    auto g2 = make_grid<double>({{-1.0, 1.0}, {0.0, 2.0}}, {3, 5});
    EXPECT_EQ(g2.size(), 15u);
    EXPECT_DOUBLE_EQ(g2.h[0], 1.0);
    EXPECT_DOUBLE_EQ(g2.h[1], 0.5);
}

TEST(MakeGrid, CoordinatesAreReproducible) {
    auto g = make_grid<double>({{-3.0, 7.0}}, {101});
    for (int i = 0; i < 101; ++i) EXPECT_EQ(g.coord(0, i), -3.0 + i * g.h[0]);
}

TEST(MakeGrid, Errors) {
    EXPECT_THROW(make_grid<double>({{0.0, 1.0}}, {2}), Error);
    EXPECT_THROW(make_grid<double>({{1.0, 1.0}}, {5}), Error);
    EXPECT_THROW(make_grid<double>({{0, 1}, {0, 1}, {0, 1}}, {4, 4, 4}), Error);
}

TEST(Differentiate, ExactOnQuadratics) {
    auto g = make_grid<double>({{0.0, 1.0}}, {5});
    auto f = sample(g, [](double x) { return x * x; });
    auto d = differentiate(f, 0, 1);
    EXPECT_NEAR(d(2).real(), 1.0, 1e-14);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(d(k).real(), 2 * g.coord(0, int(k)), 1e-12);
    auto d2 = differentiate(f, 0, 2);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(d2(k).real(), 2.0, 1e-10);
    auto d3 = differentiate(f, 0, 3);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(std::abs(d3(k)), 0.0, 1e-8);
}

TEST(Differentiate, ExactOnPerAxisQuadratics2D) {
    auto g = make_grid<double>({{-1.0, 1.0}, {0.0, 2.0}}, {9, 7});
    auto f = sample(g, [](double x, double y) { return x * x * y * y + 3 * x * y - y; });
    auto fx = derivative(f, {1, 0});
    auto fxy = derivative(f, {1, 1});
    auto fxxyy = derivative(f, {2, 2});
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        double x = g.coord(0, ij[0]), y = g.coord(1, ij[1]);
        EXPECT_NEAR(fx(k).real(), 2 * x * y * y + 3 * y, 1e-10);
        EXPECT_NEAR(fxy(k).real(), 4 * x * y + 3, 1e-9);
        EXPECT_NEAR(fxxyy(k).real(), 4.0, 1e-8);
    }
}

TEST(Differentiate, ConstantGivesZero) {
    auto g = make_grid<double>({{0.0, 1.0}}, {17});
    auto f = sample(g, [](double) { return 4.2; });
    for (int order = 1; order <= 3; ++order) EXPECT_LT(differentiate(f, 0, order).max_abs(), 1e-8);
}

TEST(Differentiate, SineSecondDerivative) {
    auto g = make_grid<double>({{0.0, std::numbers::pi}}, {257});
    auto f = sample(g, [](double x) { return std::sin(x); });
    auto d2 = differentiate(f, 0, 2);
    double err = 0;
    for (std::size_t k = 0; k < g.size(); ++k) err = std::max(err, std::abs(d2(k).real() + std::sin(g.coord(0, int(k)))));
    EXPECT_LE(err, 1e-3);
}

TEST(Differentiate, ConvergenceOrderAllOrders) {
    for (int order = 1; order <= 3; ++order) {
        double errs[3];
        int ns[3] = {64, 128, 256};
        for (int r = 0; r < 3; ++r) {
            auto g = make_grid<double>({{0.0, 2.0}}, {ns[r] + 1});
            auto f = sample(g, [](double x) { return std::exp(std::sin(x)); });
            auto d = differentiate(f, 0, order);
            // exact derivatives of exp(sin x)
            double e = 0;
            for (std::size_t k = 0; k < g.size(); ++k) {
                double x = g.coord(0, int(k)), s = std::sin(x), c = std::cos(x), E = std::exp(s);
                double ex = order == 1 ? c * E : order == 2 ? (c * c - s) * E : (c * c * c - 3 * s * c - c) * E;
                e = std::max(e, std::abs(d(k).real() - ex));
            }
            errs[r] = e;
        }
        EXPECT_GE(convergence_order(errs[0], errs[1]), 1.8) << "order " << order;
        EXPECT_GE(convergence_order(errs[1], errs[2]), 1.8) << "order " << order;
    }
}

TEST(Differentiate, Errors) {
    auto g = make_grid<double>({{0.0, 1.0}}, {4});
    auto f = sample(g, [](double x) { return x; });
    EXPECT_THROW(differentiate(f, 0, 4), Error);
    EXPECT_THROW(differentiate(f, 1, 1), Error);
    EXPECT_THROW(differentiate(f, 0, 3), Error);  // needs 5 points
}

TEST(IntegrateCells, Basics) {
    auto g = make_grid<double>({{0.0, 1.0}}, {11});
    EXPECT_NEAR(integrate_cells(sample(g, [](double) { return 1.0; })).real(), 1.0, 1e-14);
    auto g2 = make_grid<double>({{0.0, 2.0}}, {7});
    EXPECT_NEAR(integrate_cells(sample(g2, [](double x) { return x; })).real(), 2.0, 1e-14);
    auto g3 = make_grid<double>({{0.0, std::numbers::pi}}, {257});
    EXPECT_NEAR(integrate_cells(sample(g3, [](double x) { return std::sin(x); })).real(), 2.0, 1e-4);
}

TEST(IntegrateCells, TwoDimensionalBilinearExact) {
    auto g = make_grid<double>({{0.0, 1.0}, {-1.0, 3.0}}, {5, 9});
    auto f = sample(g, [](double x, double y) { return 1 + 2 * x + x * y; });
    // int_0^1 int_-1^3 (1 + 2x + xy) dy dx = 4 + 4 + 0.5*4
    EXPECT_NEAR(integrate_cells(f).real(), 10.0, 1e-12);
}

TEST(IntegrateCells, NonnegativeForNonnegative) {
    auto g = make_grid<double>({{-2.0, 2.0}, {-2.0, 2.0}}, {33, 33});
    auto f = sample(g, [](double x, double y) { return std::exp(-x * x - y * y) * std::abs(std::sin(5 * x)); });
    EXPECT_GE(integrate_cells(f).real(), 0.0);
}

namespace {

FormField<double> exact_xy(const G& g) {
    FormField<double> d(g, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        d.comps[0](Eigen::Index(k)) = g.coord(1, ij[1]);
        d.comps[1](Eigen::Index(k)) = g.coord(0, ij[0]);
    }
    return d;
}

}  // namespace

TEST(IntegratePath, ExactFormAnyPath) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {11, 11});
    auto d = exact_xy(g);
    EXPECT_NEAR(integrate_path(d, staircase({0, 0}, {10, 10}, 0)).real(), 1.0, 1e-13);
    EXPECT_NEAR(integrate_path(d, staircase({0, 0}, {10, 10}, 1)).real(), 1.0, 1e-13);
    PolylinePath zig{{{0, 0}, {3, 0}, {3, 4}, {7, 4}, {7, 10}, {10, 10}}, 1};
    EXPECT_NEAR(integrate_path(d, zig).real(), 1.0, 1e-13);
    PolylinePath loop{{{2, 2}, {8, 2}, {8, 9}, {2, 9}, {2, 2}}, 1};
    EXPECT_NEAR(std::abs(integrate_path(d, loop)), 0.0, 1e-13);
}

TEST(IntegratePath, ReversalNegatesExactly) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {13, 17});
    FormField<double> w(g, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        double x = g.coord(0, ij[0]), y = g.coord(1, ij[1]);
        w.comps[0](Eigen::Index(k)) = {std::sin(3 * x * y), x};
        w.comps[1](Eigen::Index(k)) = std::exp(x - y);
    }
    PolylinePath p{{{0, 1}, {5, 1}, {5, 12}, {12, 12}, {12, 16}}, 1};
    EXPECT_EQ(integrate_path(w, p) + integrate_path(w, p.reversed()), std::complex<double>(0));
    PolylinePath q = p;
    q.orientation = -1;
    EXPECT_EQ(integrate_path(w, p) + integrate_path(w, q), std::complex<double>(0));
}

TEST(IntegratePath, StaircasesAgreeForClosedForm) {
    // d of a harmonic-style potential with cubic dependence: trapezoid errors
    // on the two staircases cancel.
    auto g = make_grid<double>({{-1.0, 1.0}, {-1.0, 1.0}}, {128, 128});
    FormField<double> w(g, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        double x = g.coord(0, ij[0]), y = g.coord(1, ij[1]);
        w.comps[0](Eigen::Index(k)) = -x * y * y - x * x * x;
        w.comps[1](Eigen::Index(k)) = -x * x * y - y * y * y;
    }
    EXPECT_LE(interior_max_abs(g, CMatrix<double>(exterior_derivative(w)), 0), 1e-9);
    auto a = integrate_path(w, staircase({3, 7}, {120, 101}, 0));
    auto b = integrate_path(w, staircase({3, 7}, {120, 101}, 1));
    EXPECT_LE(std::abs(a - b), 1e-6);
}

TEST(IntegratePath, Errors) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 1.0}}, {5, 5});
    auto d = exact_xy(g);
    PolylinePath diag{{{0, 0}, {2, 2}}, 1};
    EXPECT_THROW(integrate_path(d, diag), Error);
    PolylinePath out{{{0, 0}, {9, 0}}, 1};
    EXPECT_THROW(integrate_path(d, out), Error);
    FormField<double> two(g, 2);
    EXPECT_THROW(integrate_path(two, staircase({0, 0}, {1, 1})), Error);
}

TEST(StaircaseCumulative, MatchesPathIntegrals) {
    auto g = make_grid<double>({{0.0, 1.0}, {0.0, 2.0}}, {9, 13});
    FormField<double> w(g, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        double x = g.coord(0, ij[0]), y = g.coord(1, ij[1]);
        w.comps[0](Eigen::Index(k)) = std::cos(x + 2 * y);
        w.comps[1](Eigen::Index(k)) = {x * y, 1.0};
    }
    std::array<int, 2> base{4, 6};
    auto cum = staircase_cumulative(w, base);
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        auto ref = integrate_path(w, staircase(base, ij, 0));
        EXPECT_NEAR(std::abs(cum(Eigen::Index(k)) - ref), 0.0, 1e-13);
    }
}

TEST(Csv, RoundTrip) {
    auto g = make_grid<double>({{-1.0, 1.0}, {0.0, 0.5}}, {4, 3});
    F f(g, 2);
    for (std::size_t k = 0; k < g.size(); ++k) {
        f(k, 0) = {double(k), -0.5 * k};
        f(k, 1) = {std::sqrt(double(k)), 1e-20};
    }
    std::string path = ::testing::TempDir() + "gf.csv";
    write_csv(f, path);
    auto r = read_csv(g, path);
    EXPECT_EQ(r.v, f.v);
    std::FILE* fp = std::fopen(path.c_str(), "r");
    char buf[256];
    ASSERT_NE(std::fgets(buf, sizeof buf, fp), nullptr);
    ASSERT_NE(std::fgets(buf, sizeof buf, fp), nullptr);
    std::fclose(fp);
    EXPECT_STREQ(buf, "x1,x2,re_c0,im_c0,re_c1,im_c1\n");
}
