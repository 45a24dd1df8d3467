#pragma once

#include "diffop.hpp"

#include <map>

namespace transmute {

// Components Z_i[phi, psi], i = 1..m, of the Lagrangian identity
//   <L* phi, psi> - <phi, L psi> = sum_i (-1)^(i+1) d_i Z_i.
template <typename Real = double>
struct ConcomitantForm {
    GridSpec<Real> grid;
    std::vector<CVector<Real>> Z;  // Z[0] = Z_1, ...
    std::string op_id, phi_id, psi_id;

    // Degree m-1 form: m = 1 -> Z_1; m = 2 -> Z_1 dx2 + Z_2 dx1, i.e. (dx1, dx2) = (Z_2, Z_1).
    FormField<Real> as_form() const {
        FormField<Real> f(grid, grid.dim - 1);
        if (grid.dim == 1) f.comps[0] = Z[0];
        else {
            f.comps[0] = Z[1];
            f.comps[1] = Z[0];
        }
        return f;
    }
};

namespace detail {

// Pointwise <a, b> = conj(a)^T b over channels.
template <typename Real>
CVector<Real> pointwise_inner(const GridFunction<Real>& a, const GridFunction<Real>& b) {
    return (a.v.conjugate().cwiseProduct(b.v)).rowwise().sum();
}

// u = a^H phi at every node.
template <typename Real>
GridFunction<Real> adjoint_multiply(const CoefField<Real>& a, const GridFunction<Real>& phi) {
    GridFunction<Real> u(phi.grid, phi.channels());
    const int N = a.N;
    for (std::size_t k = 0; k < phi.size(); ++k)
        for (int c = 0; c < N; ++c) {
            Complex<Real> s(0);
            for (int r = 0; r < N; ++r) s += std::conj(a.v(Eigen::Index(k), r * N + c)) * phi(k, r);
            u(k, c) = s;
        }
    return u;
}

template <typename Real>
struct DerivativeCache {
    const GridFunction<Real>& f;
    std::map<MultiIndex, GridFunction<Real>> memo;
    const GridFunction<Real>& get(const MultiIndex& a) {
        if (total_order(a) == 0) return f;
        auto it = memo.find(a);
        if (it == memo.end()) it = memo.emplace(a, derivative(f, a)).first;
        return it->second;
    }
};

inline MultiIndex count_axes(const std::vector<int>& seq, std::size_t from, std::size_t to) {
    MultiIndex m{0, 0};
    for (std::size_t s = from; s < to; ++s) ++m[seq[s]];
    return m;
}

}  // namespace detail

// Telescoping construction: for a_alpha d^alpha write d^alpha = d_{s_1}...d_{s_k}
// in ascending axis order and u = a_alpha^H phi. Step s contributes
//   T_s = (-1)^s <d_{s_1..s_{s-1}} u, d_{s_{s+1}..s_k} psi>
// to axis s_s, and Z_i = (-1)^(i+1) sum over steps on axis i of T_s.
template <typename Real>
ConcomitantForm<Real> bilinear_concomitant(const DifferentialOperator<Real>& L, const GridFunction<Real>& phi,
                                           const GridFunction<Real>& psi, std::string phi_id = "phi", std::string psi_id = "psi") {
    if (phi.grid != L.grid || psi.grid != L.grid || phi.channels() != L.N || psi.channels() != L.N)
        throw Error("bilinear_concomitant: grid/channel mismatch for " + L.id);
    const auto& g = L.grid;
    ConcomitantForm<Real> out{g, std::vector<CVector<Real>>(g.dim, CVector<Real>::Zero(Eigen::Index(g.size()))), L.id,
                              std::move(phi_id), std::move(psi_id)};
    detail::DerivativeCache<Real> dpsi{psi, {}};
    for (const auto& [alpha, a] : L.coeffs) {
        const int k = total_order(alpha);
        if (k == 0 || a.is_zero()) continue;
        std::vector<int> seq;
        for (int ax = 0; ax < g.dim; ++ax)
            for (int r = 0; r < alpha[ax]; ++r) seq.push_back(ax);
        auto u = detail::adjoint_multiply(a, phi);
        detail::DerivativeCache<Real> du{u, {}};
        for (int s = 1; s <= k; ++s) {
            const auto& left = du.get(detail::count_axes(seq, 0, std::size_t(s - 1)));
            const auto& right = dpsi.get(detail::count_axes(seq, std::size_t(s), seq.size()));
            const int axis = seq[std::size_t(s - 1)];
            const Real sign = Real(s % 2 ? -1 : 1) * Real(axis % 2 ? -1 : 1);
            out.Z[axis] += sign * detail::pointwise_inner(left, right);
        }
    }
    return out;
}

// Pointwise <L* phi, psi> - <phi, L psi>.
template <typename Real>
CVector<Real> lagrange_lhs(const DifferentialOperator<Real>& L, const GridFunction<Real>& phi, const GridFunction<Real>& psi) {
    auto Ls = formal_adjoint(L).first;
    return detail::pointwise_inner(apply(Ls, phi), psi) - detail::pointwise_inner(phi, apply(L, psi));
}

// sum_i (-1)^(i+1) d_i Z_i.
template <typename Real>
CVector<Real> concomitant_divergence(const ConcomitantForm<Real>& z) {
    CVector<Real> d = CVector<Real>::Zero(Eigen::Index(z.grid.size()));
    for (int ax = 0; ax < z.grid.dim; ++ax) {
        GridFunction<Real> zi(z.grid, CMatrix<Real>(z.Z[ax]));
        d += Real(ax % 2 ? -1 : 1) * differentiate(zi, ax, 1).v.col(0);
    }
    return d;
}

template <typename Real>
Real lagrange_residual(const DifferentialOperator<Real>& L, const GridFunction<Real>& phi, const GridFunction<Real>& psi,
                       int margin = kInteriorMargin) {
    auto z = bilinear_concomitant(L, phi, psi);
    CVector<Real> r = lagrange_lhs(L, phi, psi) - concomitant_divergence(z);
    return interior_max_abs(L.grid, CMatrix<Real>(r), margin);
}

template <typename Real = double>
struct ClosednessReport {
    Real residual = 0;             // max |dZ| over interior nodes
    Real membership_phi = 0;       // ||L* phi|| / ||phi||, interior max norms
    Real membership_psi = 0;       // ||L psi|| / ||psi||
    Real constant = 0;             // residual / (membership + h^2)
};

// Relative interior membership residual ||L f||_inf / ||f||_inf.
template <typename Real>
Real membership_residual(const DifferentialOperator<Real>& L, const GridFunction<Real>& f, int margin = kInteriorMargin) {
    Real scale = f.max_abs();
    if (scale == Real(0)) return Real(0);
    return interior_max_abs(L.grid, apply(L, f).v, margin) / scale;
}

// phi in ker L*, psi in ker L; m = 2: max |d Z^(1)| = |d_1 Z_1 - d_2 Z_2|;
// m = 1: max |d_1 Z_1|.
template <typename Real>
ClosednessReport<Real> closedness_residual(const DifferentialOperator<Real>& L, const GridFunction<Real>& phi,
                                           const GridFunction<Real>& psi, Real member_tol = Real(1e-4),
                                           int margin = kInteriorMargin) {
    ClosednessReport<Real> rep;
    auto Ls = formal_adjoint(L).first;
    rep.membership_phi = membership_residual(Ls, phi, margin);
    rep.membership_psi = membership_residual(L, psi, margin);
    if (rep.membership_phi > member_tol || rep.membership_psi > member_tol)
        throw Error("closedness_residual: membership residual above input tolerance (phi " + std::to_string(rep.membership_phi) +
                    ", psi " + std::to_string(rep.membership_psi) + ")");
    auto z = bilinear_concomitant(L, phi, psi);
    CVector<Real> d;
    if (L.grid.dim == 1) {
        d = differentiate(GridFunction<Real>(L.grid, CMatrix<Real>(z.Z[0])), 0, 1).v.col(0);
    } else {
        d = exterior_derivative(z.as_form());
    }
    rep.residual = interior_max_abs(L.grid, CMatrix<Real>(d), margin);
    Real hh = 0;
    for (int a = 0; a < L.grid.dim; ++a) hh = std::max(hh, L.grid.h[a] * L.grid.h[a]);
    rep.constant = rep.residual / (std::max(rep.membership_phi, rep.membership_psi) + hh);
    return rep;
}

template <typename Real = double>
struct AntiderivativeField {
    FormField<Real> omega;  // degree m-2 (scalar for m = 2)
    std::array<int, 2> base{0, 0};
};

// Poincare antiderivative of a closed 1-form on a 2D box: staircase integral
// from the basepoint, axis 1 first.
template <typename Real>
AntiderivativeField<Real> antiderivative(const FormField<Real>& form, std::array<int, 2> base, Real closed_tol = Real(1e-6),
                                         int margin = kInteriorMargin) {
    if (form.grid.dim != 2 || form.degree != 1) throw Error("antiderivative: requires a 1-form with m = 2");
    Real scale = 1;
    for (const auto& c : form.comps) scale = std::max(scale, c.cwiseAbs().maxCoeff());
    Real closed = interior_max_abs(form.grid, CMatrix<Real>(exterior_derivative(form)), margin);
    if (closed > closed_tol * scale)
        throw Error("antiderivative: form is not numerically closed (|dZ| = " + std::to_string(closed) + ")");
    AntiderivativeField<Real> out{FormField<Real>(form.grid, 0), base};
    out.omega.comps[0] = staircase_cumulative(form, base);
    return out;
}

// max |d Omega - Z| over interior nodes.
template <typename Real>
Real antiderivative_defect(const AntiderivativeField<Real>& a, const FormField<Real>& form, int margin = kInteriorMargin) {
    auto d = exterior_derivative0(GridFunction<Real>(a.omega.grid, CMatrix<Real>(a.omega.comps[0])));
    Real m = 0;
    for (int c = 0; c < 2; ++c) m = std::max(m, interior_max_abs(form.grid, CMatrix<Real>(d.comps[c] - form.comps[c]), margin));
    return m;
}

}  // namespace transmute
