#pragma once

#include "transmutation.hpp"

#include <set>
#include <sstream>

namespace transmute {

inline constexpr std::size_t kMaxSpectrumSample = 4;

template <typename Real>
std::string format_complex(Complex<Real> z) {
    std::ostringstream os;
    os << z.real();
    if (z.imag() != Real(0)) os << (z.imag() < 0 ? "-" : "+") << std::abs(z.imag()) << "i";
    return os.str();
}

// L(x; d | lambda) = sum_i lambda^i L_i.
template <typename Real = double>
struct AffinePencil {
    std::vector<DifferentialOperator<Real>> components;  // L_0 .. L_r

    int degree() const { return int(components.size()) - 1; }
    const GridSpec<Real>& grid() const { return components.at(0).grid; }
    int N() const { return components.at(0).N; }

    void validate() const {
        if (components.empty()) throw Error("AffinePencil: no components");
        for (const auto& c : components) {
            c.validate();
            if (c.grid != grid() || c.N != N()) throw Error("AffinePencil: components do not share grid and channels");
        }
        if (components.back().all_zero()) throw Error("AffinePencil: leading component L_r vanishes identically");
    }
};

// Points asserted to lie in sigma(L) and conj(sigma(L*)), with measure weights.
template <typename Real = double>
struct SpectrumSample {
    std::vector<Complex<Real>> lambdas;
    std::vector<Real> weights;

    static SpectrumSample uniform(std::vector<Complex<Real>> l) {
        SpectrumSample s;
        s.weights.assign(l.size(), l.empty() ? Real(0) : Real(1) / Real(l.size()));
        s.lambdas = std::move(l);
        return s;
    }
    std::size_t size() const { return lambdas.size(); }
    void validate() const {
        if (weights.size() != lambdas.size()) throw Error("SpectrumSample: one weight per lambda");
        if (lambdas.size() > kMaxSpectrumSample) throw Error("SpectrumSample: at most 4 lambda values");
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            if (!(weights[i] > 0) || !std::isfinite(weights[i])) throw Error("SpectrumSample: weights must be positive");
            for (std::size_t j = 0; j < i; ++j)
                if (lambdas[i] == lambdas[j]) throw Error("SpectrumSample: repeated lambda " + format_complex(lambdas[i]));
        }
    }
};

template <typename Real>
DifferentialOperator<Real> evaluate_pencil(const AffinePencil<Real>& P, Complex<Real> lambda) {
    P.validate();
    std::vector<std::pair<Complex<Real>, const DifferentialOperator<Real>*>> terms;
    Complex<Real> p(1);
    for (const auto& c : P.components) {
        terms.emplace_back(p, &c);
        p *= lambda;
    }
    return linear_combination(terms, "L(" + format_complex(lambda) + ")");
}

// L_tau on the (x, tau) product grid: lambda^i becomes d^i/dtau^i, coefficients constant in tau.
template <typename Real>
DifferentialOperator<Real> tau_extend(const AffinePencil<Real>& P, std::array<Real, 2> tau, int n_tau) {
    P.validate();
    const auto& g = P.grid();
    if (g.dim != 1) throw Error("tau_extend: x-dimension plus tau exceeds 2");
    auto g2 = make_grid<Real>({{g.lo[0], g.hi[0]}, {tau[0], tau[1]}}, {g.n[0], n_tau});
    int order = 0;
    for (int i = 0; i <= P.degree(); ++i)
        if (!P.components[std::size_t(i)].all_zero()) order = std::max(order, P.components[std::size_t(i)].effective_order() + i);
    if (order > 3) throw Error("tau_extend: extended order " + std::to_string(order) + " exceeds 3");
    DifferentialOperator<Real> Lt(g2, P.N(), order, "L_tau");
    for (int i = 0; i <= P.degree(); ++i)
        for (const auto& [a, cf] : P.components[std::size_t(i)].coeffs) {
            if (cf.is_zero()) continue;
            auto& dst = Lt.coef({a[0], i});
            for (int ix = 0; ix < g.n[0]; ++ix)
                for (int it = 0; it < n_tau; ++it) dst.v.row(Eigen::Index(g2.index(ix, it))) += cf.v.row(ix);
        }
    return Lt;
}

// f(x) e^{mu tau} on the product grid g2.
template <typename Real>
GridFunction<Real> tau_lift(const GridFunction<Real>& f, const GridSpec<Real>& g2, Complex<Real> mu) {
    if (g2.dim != 2 || g2.n[0] != f.grid.n[0]) throw Error("tau_lift: product grid does not extend the x-grid");
    GridFunction<Real> out(g2, f.channels());
    for (int ix = 0; ix < g2.n[0]; ++ix)
        for (int it = 0; it < g2.n[1]; ++it) out.v.row(Eigen::Index(g2.index(ix, it))) = f.v.row(ix) * std::exp(mu * g2.coord(1, it));
    return out;
}

// ||L_tau(psi e^{lambda tau}) - e^{lambda tau} L(lambda) psi||_inf / ||psi e^{lambda tau}||_inf over
// interior nodes (the x-stencils agree exactly; the residual is the tau-stencil error).
template <typename Real>
Real separability_residual(const AffinePencil<Real>& P, Complex<Real> lambda, const GridFunction<Real>& psi, std::array<Real, 2> tau,
                           int n_tau, int margin = kInteriorMargin) {
    auto Lt = tau_extend(P, tau, n_tau);
    auto u = tau_lift(psi, Lt.grid, lambda);
    auto r = apply(Lt, u) - tau_lift(apply(evaluate_pencil(P, lambda), psi), Lt.grid, lambda);
    return interior_max_abs(Lt.grid, r.v, margin) / u.max_abs();
}

// Per-lambda kernel families psi_lambda(xi) of L(lambda) and phi_lambda(eta) of L(lambda)*.
template <typename Real = double>
struct PencilFamily {
    SpectrumSample<Real> spectrum;
    std::vector<SpectralFamily<Real>> psi, phi;

    std::size_t size() const {
        std::size_t k = 0;
        for (const auto& f : psi) k += f.size();
        return k;
    }
};

template <typename Real>
PencilFamily<Real> separated_family(const AffinePencil<Real>& P, const SpectrumSample<Real>& spectrum, const SpectralGrid<Real>& sigma,
                                    const GammaDescriptor& gamma, const FamilyRecipe<Real>& recipe, Real member_tol = Real(1e-4)) {
    spectrum.validate();
    PencilFamily<Real> out;
    out.spectrum = spectrum;
    for (auto lambda : spectrum.lambdas) {
        auto L = evaluate_pencil(P, lambda);
        try {
            out.psi.push_back(build_kernel_family(L, sigma, gamma, recipe, member_tol));
            out.phi.push_back(adjoint_kernel_family(L, sigma, gamma, recipe, member_tol));
        } catch (const Error& e) {
            throw Error("separated_family: no kernel witness at lambda = " + format_complex(lambda) + ": " + e.what());
        }
    }
    return out;
}

// Reduced kernels along the tau-row `it` of the extended operator: for each x node,
// the K x K matrix int_{anchor}^{x} Z_tau[phi e^{-conj(lambda) tau}, psi e^{lambda tau}] dx,
// i.e. the concomitant form restricted to the dtau = 0 line.
template <typename Real>
std::vector<CMatrix<Real>> reduced_kernels(const DifferentialOperator<Real>& Ltau, const SpectralFamily<Real>& phi,
                                           const SpectralFamily<Real>& psi, Complex<Real> lambda, int it, Orientation o) {
    const auto& g2 = Ltau.grid;
    if (g2.dim != 2) throw Error("reduced_kernels: operator is not tau-extended");
    if (it < 0 || it >= g2.n[1]) throw Error("reduced_kernels: tau row outside the grid");
    const int nx = g2.n[0], K = int(psi.size());
    if (int(phi.size()) != K) throw Error("reduced_kernels: family sizes differ");
    std::vector<CMatrix<Real>> out(std::size_t(nx), CMatrix<Real>::Zero(K, K));
    const std::size_t anchor = o == Orientation::Plus ? std::size_t(nx - 1) : 0;
    for (int k = 0; k < K; ++k) {
        auto pl = tau_lift(phi.members[std::size_t(k)], g2, -std::conj(lambda));
        for (int l = 0; l < K; ++l) {
            auto form = bilinear_concomitant(Ltau, pl, tau_lift(psi.members[std::size_t(l)], g2, lambda)).as_form();
            CVector<Real> row(nx);
            for (int ix = 0; ix < nx; ++ix) row(ix) = form.comps[0](Eigen::Index(g2.index(ix, it)));
            CVector<Real> J = detail::cumulative_from<Real>(row, anchor, g2.h[0]);
            for (int ix = 0; ix < nx; ++ix) out[std::size_t(ix)](k, l) = J(ix);
        }
    }
    return out;
}

// Max entry difference of the reduced kernels between the tau-rows through tau1 and tau2.
template <typename Real>
Real tau_independence_check(const DifferentialOperator<Real>& Ltau, const PencilFamily<Real>& fam, Real tau1, Real tau2,
                            Orientation o = Orientation::Plus) {
    const auto& g2 = Ltau.grid;
    auto row_of = [&](Real t) {
        int it = int(std::lround((t - g2.lo[1]) / g2.h[1]));
        if (it < 0 || it >= g2.n[1] || std::abs(g2.coord(1, it) - t) > Real(1e-9) * std::max(Real(1), std::abs(t)))
            throw Error("tau_independence_check: tau = " + std::to_string(t) + " is not a grid row");
        return it;
    };
    const int i1 = row_of(tau1), i2 = row_of(tau2);
    Real d = 0;
    for (std::size_t q = 0; q < fam.spectrum.size(); ++q) {
        auto a = reduced_kernels(Ltau, fam.phi[q], fam.psi[q], fam.spectrum.lambdas[q], i1, o);
        auto b = reduced_kernels(Ltau, fam.phi[q], fam.psi[q], fam.spectrum.lambdas[q], i2, o);
        for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, (a[i] - b[i]).cwiseAbs().maxCoeff());
    }
    return d;
}

template <typename Real>
Real tau_independence_check(const AffinePencil<Real>& P, const PencilFamily<Real>& fam, Real tau1, Real tau2, int n_tau = 65,
                            Orientation o = Orientation::Plus) {
    return tau_independence_check(tau_extend(P, {std::min(tau1, tau2), std::max(tau1, tau2)}, n_tau), fam, tau1, tau2, o);
}

// dL/dlambda = sum_i i lambda^{i-1} L_i as a pointwise matrix field; the
// reduced kernel density is <h(lambda)^H phi, psi>.
template <typename Real>
CoefField<Real> pencil_density(const AffinePencil<Real>& P, Complex<Real> lambda) {
    P.validate();
    CoefField<Real> h(P.grid().size(), P.N());
    Complex<Real> p(1);
    for (int i = 1; i <= P.degree(); ++i) {
        for (const auto& [a, cf] : P.components[std::size_t(i)].coeffs) {
            if (cf.is_zero()) continue;
            if (total_order(a) > 0)
                throw Error("pencil_density: component L_" + std::to_string(i) + " carries x-derivatives; no pointwise density");
            h.v += Real(i) * p * cf.v;
        }
        p *= lambda;
    }
    return h;
}

// Delsarte operator of the pencil: members of all lambda samples under one
// index, pairing phi and psi of the same lambda only (block-diagonal base
// Omega_x0(lambda) / w_lambda), each block transformed on its own density film.
template <typename Real>
DelsarteOperator<Real> pencil_delsarte(const AffinePencil<Real>& P, const PencilFamily<Real>& fam, Orientation o = Orientation::Plus,
                                       const std::vector<CMatrix<Real>>& bases = {}) {
    P.validate();
    fam.spectrum.validate();
    const auto& g = P.grid();
    if (g.dim != 1) throw Error("pencil_delsarte: one-dimensional pencils only");
    auto plain = [](const GridFunction<Real>& f) { return f; };
    auto film = density_film<Real>(g, o, plain);
    const std::size_t Q = fam.spectrum.size();
    if (fam.psi.size() != Q || fam.phi.size() != Q) throw Error("pencil_delsarte: one family per lambda");
    if (!bases.empty() && bases.size() != Q) throw Error("pencil_delsarte: one base matrix per lambda");
    const auto K = Eigen::Index(fam.size());
    if (K == 0) return identity_operator(g, P.N(), film);

    std::vector<GridFunction<Real>> phi, psi, pt;
    std::vector<Real> weights;
    CMatrix<Real> base = CMatrix<Real>::Zero(K, K);
    Eigen::Index at = 0;
    for (std::size_t q = 0; q < Q; ++q) {
        const auto lambda = fam.spectrum.lambdas[q];
        const auto Kq = Eigen::Index(fam.psi[q].size());
        if (Kq == 0) continue;
        CMatrix<Real> M = bases.empty() ? CMatrix<Real>(CMatrix<Real>::Identity(Kq, Kq)) : bases[q];
        if (M.rows() != Kq || M.cols() != Kq) throw Error("pencil_delsarte: base matrix size at lambda = " + format_complex(lambda));
        M /= fam.spectrum.weights[q];
        auto h = pencil_density(P, lambda);
        auto dual = [h](const GridFunction<Real>& f) { return detail::adjoint_multiply(h, f); };
        Transmutation<Real> tr;
        try {
            tr = delsarte_transmutation(fam.phi[q], fam.psi[q], density_film<Real>(g, o, dual), M);
        } catch (const Error& e) {
            throw Error("pencil_delsarte: singular reduced kernel at lambda = " + format_complex(lambda) + ": " + e.what());
        }
        for (Eigen::Index k = 0; k < Kq; ++k) {
            phi.push_back(dual(fam.phi[q].members[std::size_t(k)]));
            psi.push_back(fam.psi[q].members[std::size_t(k)]);
            pt.push_back(tr.op.psi_tilde[std::size_t(k)]);
            weights.push_back(fam.spectrum.weights[q] * fam.psi[q].sigma.weights[std::size_t(k)]);
        }
        base.block(at, at, Kq, Kq) = M;
        at += Kq;
    }
    auto op = delsarte_assemble(phi, psi, pt, base, film, g, P.N(), "pencil");
    op.weights = std::move(weights);
    return op;
}

// Least-squares affine-in-lambda model of operator samples L~(lambda_k), coefficient by coefficient.
template <typename Real = double>
struct PencilFit {
    AffinePencil<Real> pencil;
    Real residual = 0;  // max |model - sample| over coefficients, relative to the largest sample coefficient
};

template <typename Real>
PencilFit<Real> fit_pencil(const std::vector<Complex<Real>>& lambdas, const std::vector<DifferentialOperator<Real>>& samples, int degree) {
    if (lambdas.size() != samples.size() || samples.empty()) throw Error("fit_pencil: one sample per lambda");
    if (degree < 0 || std::size_t(degree) + 1 > samples.size()) throw Error("fit_pencil: need at least degree + 1 samples");
    const auto& g = samples.front().grid;
    const int N = samples.front().N;
    const auto S = Eigen::Index(samples.size());
    CMatrix<Real> V(S, degree + 1);
    for (Eigen::Index s = 0; s < S; ++s)
        for (int i = 0; i <= degree; ++i) V(s, i) = std::pow(lambdas[std::size_t(s)], i);
    auto qr = V.colPivHouseholderQr();
    std::set<MultiIndex> keys;
    for (const auto& op : samples) {
        if (op.grid != g || op.N != N) throw Error("fit_pencil: samples do not share grid and channels");
        for (const auto& [a, cf] : op.coeffs) keys.insert(a);
    }
    PencilFit<Real> fit;
    int order = 0;
    for (const auto& a : keys) order = std::max(order, total_order(a));
    for (int i = 0; i <= degree; ++i) fit.pencil.components.emplace_back(g, N, order, "L~" + std::to_string(i));
    Real scale = 0, worst = 0;
    const auto cols = Eigen::Index(N) * N, nodes = Eigen::Index(g.size());
    for (const auto& a : keys) {
        CMatrix<Real> Y(S, nodes * cols);
        for (Eigen::Index s = 0; s < S; ++s) {
            auto it = samples[std::size_t(s)].coeffs.find(a);
            CMatrix<Real> v = it == samples[std::size_t(s)].coeffs.end() ? CMatrix<Real>(CMatrix<Real>::Zero(nodes, cols)) : it->second.v;
            Y.row(s) = Eigen::Map<const CVector<Real>>(v.data(), v.size()).transpose();
        }
        CMatrix<Real> C = qr.solve(Y);
        scale = std::max(scale, Y.cwiseAbs().maxCoeff());
        worst = std::max(worst, (V * C - Y).cwiseAbs().maxCoeff());
        for (int i = 0; i <= degree; ++i) {
            CVector<Real> r = C.row(i).transpose();
            fit.pencil.components[std::size_t(i)].coef(a).v = Eigen::Map<const CMatrix<Real>>(r.data(), nodes, cols);
        }
    }
    for (auto& c : fit.pencil.components)
        if (!c.all_zero()) c.order = c.effective_order();
    fit.residual = scale > 0 ? worst / scale : Real(0);
    return fit;
}

}  // namespace transmute
