#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <transmute/diffop.hpp>

#include <cmath>
#include <complex>
#include <random>

namespace transmute::testing {

using cd = std::complex<double>;

inline double bump(double x, double c, double r) {
    double t = (x - c) / r;
    return std::abs(t) < 1 ? std::exp(-1 / (1 - t * t)) : 0.0;
}

// Compactly supported C^3 bump cos^4 on |x - c| < r.
inline double cos4(double x, double c, double r) {
    double t = (x - c) / r;
    return std::abs(t) < 1 ? std::pow(std::cos(0.5 * 3.14159265358979323846 * t), 4) : 0.0;
}

// Smooth random trigonometric field c0 + c1 sin(k . x + p) on the unit box.
struct RandomField {
    cd c0, c1;
    double k1, k2, p;

    template <typename Rng>
    static RandomField draw(Rng& rng, double amp = 1.0) {
        std::uniform_real_distribution<double> U(-1, 1);
        return {cd(U(rng), U(rng)) * amp, cd(U(rng), U(rng)) * amp, 3 * U(rng), 3 * U(rng), 3 * U(rng)};
    }
    cd operator()(double x, double y = 0) const { return c0 + c1 * std::sin(k1 * x + k2 * y + p); }
};

// Battery draw: order in 1..3, m in {1,2}, N in {1,2}; all coefficients up to
// the order are populated with smooth matrix fields. The leading part keeps a
// unit diagonal so the declared order is attained.
struct OperatorDraw {
    int dim, order, N;
    std::vector<std::pair<MultiIndex, std::vector<RandomField>>> coefs;

    template <typename Rng>
    static OperatorDraw draw(Rng& rng) {
        std::uniform_int_distribution<int> D(1, 2), O(1, 3);
        OperatorDraw d{D(rng), O(rng), D(rng), {}};
        for (const auto& ix : multi_indices(d.dim, d.order)) {
            std::vector<RandomField> entries;
            for (int e = 0; e < d.N * d.N; ++e) entries.push_back(RandomField::draw(rng, 0.5));
            d.coefs.emplace_back(ix, entries);
        }
        return d;
    }

    DifferentialOperator<double> build(const GridSpec<double>& g) const {
        DifferentialOperator<double> L(g, N, order, "battery");
        for (const auto& [ix, entries] : coefs) {
            auto& c = L.coef(ix);
            for (std::size_t k = 0; k < g.size(); ++k) {
                auto ij = g.unravel(k);
                double x = g.coord(0, ij[0]), y = dim == 2 ? g.coord(1, ij[1]) : 0.0;
                for (int e = 0; e < N * N; ++e) {
                    cd v = entries[std::size_t(e)](x, y);
                    if (total_order(ix) == order && e % (N + 1) == 0) v += 1.0;
                    c.v(Eigen::Index(k), e) = v;
                }
            }
        }
        return L;
    }

    // Smooth non-vanishing test functions (the identity is local).
    template <typename Rng>
    std::pair<GridFunction<double>, GridFunction<double>> functions(const GridSpec<double>& g, Rng& rng) const {
        std::vector<RandomField> f;
        for (int e = 0; e < 2 * N; ++e) f.push_back(RandomField::draw(rng));
        GridFunction<double> phi(g, N), psi(g, N);
        for (std::size_t k = 0; k < g.size(); ++k) {
            auto ij = g.unravel(k);
            double x = g.coord(0, ij[0]), y = dim == 2 ? g.coord(1, ij[1]) : 0.0;
            for (int c = 0; c < N; ++c) {
                phi(k, c) = f[std::size_t(c)](x, y) * std::exp(-x * y);
                psi(k, c) = f[std::size_t(N + c)](x, y) * std::exp(x - 0.5 * y);
            }
        }
        return {phi, psi};
    }
};

}  // namespace transmute::testing
