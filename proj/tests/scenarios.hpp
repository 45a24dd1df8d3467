#pragma once

// Reference setups shared by the unit tests and the acceptance runner.

#include <transmute/transmutation.hpp>

#include "support.hpp"

namespace transmute::testing {

// One-function transmutation of L = -d^2 + 1 (the Schrodinger pencil
// -d^2 + q - lambda at lambda = -1, q = 0) on [-B, B]. The seed
// psi = s sinh(k(b - x))/k, s = 2k e^{k(c - b)}, vanishes at Gamma = x0 = b;
// with Omega_{x0} = 1/(2k) the transformed potential is 1 - 2k^2 sech^2(k(x - c))
// up to e^{-2k(b - c)} corrections, which the closed-form oracle keeps.
struct DarbouxSetup {
    double B, kappa, c, s, M;
    GridSpec<double> grid;
    DifferentialOperator<double> L;
    SpectralFamily<double> psi;

    explicit DarbouxSetup(int n = 512, double B_ = 8.0, double kappa_ = 1.0, double c_ = 0.0)
        : B(B_), kappa(kappa_), c(c_), s(2 * kappa_ * std::exp(kappa_ * (c_ - B_))), M(1 / (2 * kappa_)),
          grid(make_grid<double>({{-B_, B_}}, {n})), L(grid, 1, 2, "schrodinger") {
        L.set_constant({2, 0}, -1.0).set_constant({0, 0}, kappa * kappa);
        psi = build_kernel_family(L, SpectralGrid<double>::uniform({-kappa * kappa}), {0, n - 1},
                                  recipes::unit_slope<double>(-s), 1e-3);
    }

    Film<double> film(Orientation o = Orientation::Plus) const { return density_film(grid, o, schrodinger_dual<double>()); }
    CMatrix<double> base() const { return CMatrix<double>::Constant(1, 1, M); }

    // exact seed, Omega_x = M + int_x^b psi^2, and derived quantities
    double seed(double x) const { return s * std::sinh(kappa * (B - x)) / kappa; }
    double seed_dx(double x) const { return -s * std::cosh(kappa * (B - x)); }
    double omega(double x) const {
        double t = B - x;
        return M + s * s / (kappa * kappa) * (std::sinh(2 * kappa * t) / (4 * kappa) - t / 2);
    }
    // q~ = k^2 - 2 (log Omega)'' with Omega' = -psi^2, Omega'' = -2 psi psi'
    double q_tilde(double x) const {
        double p = seed(x), dp = seed_dx(x), w = omega(x);
        return kappa * kappa - 2 * (-2 * p * dp / w - p * p * p * p / (w * w));
    }
    double psi_tilde(double x) const { return seed(x) * M / omega(x); }
};

// Smooth members psi_k = sinh(k(b - x))/k of L_k = -d^2 + k^2 on [a, b], phi = psi.
inline SpectralFamily<double> sinh_family(const GridSpec<double>& g, const std::vector<double>& kappas) {
    SpectralFamily<double> fam;
    std::vector<Complex<double>> pts;
    for (double k : kappas) pts.emplace_back(-k * k);
    fam.sigma = SpectralGrid<double>::uniform(pts);
    fam.gamma = {0, int(g.size()) - 1};
    fam.recipe = "sinh";
    const double b = g.hi[0];
    for (double k : kappas) fam.members.push_back(sample(g, [&](double x) { return std::sinh(k * (b - x)) / k; }));
    return fam;
}

// Seeded smooth compactly supported test functions (cos^4 bumps).
inline std::vector<GridFunction<double>> smooth_battery(const GridSpec<double>& g, int count, std::uint32_t seed = 0) {
    return bump_battery(g, count, seed);
}

}  // namespace transmute::testing
