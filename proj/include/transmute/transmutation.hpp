#pragma once

#include "eigenspace.hpp"

#include <memory>
#include <numbers>
#include <random>

namespace transmute {

enum class Orientation { Plus, Minus };

inline const char* to_string(Orientation o) { return o == Orientation::Plus ? "plus" : "minus"; }

inline constexpr double kSingularCutoff = 1e-10;  // relative to sigma_max
inline constexpr double kMaxCondition = 1e12;

template <typename Real = double>
struct KernelMatrix {
    CMatrix<Real> value;  // (eta, xi)
    std::size_t node = 0;
    Real condition = 1;
};

template <typename Real>
Real condition_number(const CMatrix<Real>& m) {
    if (m.size() == 0) return Real(1);
    Eigen::JacobiSVD<CMatrix<Real>> svd(m);
    const auto& s = svd.singularValues();
    Real lo = s(s.size() - 1);
    return lo > 0 ? s(0) / lo : std::numeric_limits<Real>::infinity();
}

template <typename Real>
KernelMatrix<Real> make_kernel_matrix(CMatrix<Real> v, std::size_t node) {
    if (!v.allFinite()) throw Error("kernel matrix has non-finite entries at node " + std::to_string(node));
    Real c = condition_number(v);
    return {std::move(v), node, c};
}

// Pseudo-inverse with singular-value cutoff kSingularCutoff * sigma_max;
// refused above condition kMaxCondition.
template <typename Real>
CMatrix<Real> checked_inverse(const CMatrix<Real>& m, const std::string& where) {
    if (m.size() == 0) return m;
    Eigen::JacobiSVD<CMatrix<Real>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    Real smax = s(0), smin = s(s.size() - 1);
    if (!(smin > 0) || smax / smin > Real(kMaxCondition))
        throw Error(where + ": kernel matrix is singular (condition " + (smin > 0 ? std::to_string(smax / smin) : std::string("inf")) +
                    ")");
    Eigen::Matrix<Real, Eigen::Dynamic, 1> inv(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) inv(i) = s(i) > Real(kSingularCutoff) * smax ? 1 / s(i) : Real(0);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().adjoint();
}

// ---------------------------------------------------------------------------
// Films

enum class FilmKind { Density, Staircase };

// Density film (m = 1): the segment from the anchor x0 to x, integrating the
// pointwise density Z[phi, f] = <dual(phi), f>. Plus films anchor at the right
// end (kernel support s >= x), minus films at the left end (s <= x).
// Staircase film (m = 2): axis-1-then-axis-2 path from x0 to x, integrating
// the concomitant 1-form Z^(1)[phi, f] of the operator.
template <typename Real = double>
struct Film {
    FilmKind kind = FilmKind::Density;
    Orientation orientation = Orientation::Plus;
    std::size_t anchor = 0;
    std::function<GridFunction<Real>(const GridFunction<Real>&)> dual;
    std::shared_ptr<const DifferentialOperator<Real>> op;
};

// Pencil density for L(lambda) = L0 + lambda L1 with L1 = -1: Z[phi, f] = -conj(phi) f.
template <typename Real = double>
std::function<GridFunction<Real>(const GridFunction<Real>&)> schrodinger_dual() {
    return [](const GridFunction<Real>& phi) { return Complex<Real>(-1) * phi; };
}

template <typename Real>
Film<Real> density_film(const GridSpec<Real>& g, Orientation o, std::function<GridFunction<Real>(const GridFunction<Real>&)> dual) {
    if (g.dim != 1) throw Error("density films are one-dimensional");
    if (!dual) throw Error("density film needs a dual map");
    Film<Real> f;
    f.kind = FilmKind::Density;
    f.orientation = o;
    f.anchor = o == Orientation::Plus ? g.size() - 1 : 0;
    f.dual = std::move(dual);
    return f;
}

template <typename Real>
Film<Real> staircase_film(const DifferentialOperator<Real>& L, std::array<int, 2> anchor) {
    if (L.grid.dim != 2) throw Error("staircase films are two-dimensional");
    if (anchor[0] < 0 || anchor[1] < 0 || anchor[0] >= L.grid.n[0] || anchor[1] >= L.grid.n[1])
        throw Error("staircase film anchor outside the grid");
    Film<Real> f;
    f.kind = FilmKind::Staircase;
    f.anchor = L.grid.index(anchor[0], anchor[1]);
    f.op = std::make_shared<const DifferentialOperator<Real>>(L);
    return f;
}

namespace detail {

// Signed trapezoid integral from node `anchor` to every node, marching outward.
template <typename Real>
CVector<Real> cumulative_from(const CVector<Real>& g, std::size_t anchor, Real h) {
    const auto n = g.size();
    CVector<Real> J = CVector<Real>::Zero(n);
    for (Eigen::Index i = Eigen::Index(anchor) + 1; i < n; ++i) J(i) = J(i - 1) + h / 2 * (g(i - 1) + g(i));
    for (Eigen::Index i = Eigen::Index(anchor) - 1; i >= 0; --i) J(i) = J(i + 1) - h / 2 * (g(i) + g(i + 1));
    return J;
}

// Dense row weights of cumulative_from: row i integrates from the anchor to x_i.
template <typename Real>
Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> cumulative_matrix(int n, std::size_t anchor, Real h) {
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> C = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
    const int a = int(anchor);
    for (int i = 0; i < n; ++i) {
        if (i == a) continue;
        const int lo = std::min(i, a), hi = std::max(i, a);
        const Real s = i > a ? Real(1) : Real(-1);
        for (int j = lo; j <= hi; ++j) C(i, j) = s * ((j == lo || j == hi) ? h / 2 : h);
    }
    return C;
}

}  // namespace detail

// Film integral J(x) = int_{film(x0 -> x)} Z[phi, f] at every node.
template <typename Real>
CVector<Real> film_integral(const Film<Real>& film, const GridFunction<Real>& phi, const GridFunction<Real>& f) {
    if (film.kind == FilmKind::Density) {
        auto d = film.dual(phi);
        return detail::cumulative_from<Real>(detail::pointwise_inner(d, f), film.anchor, f.grid.h[0]);
    }
    auto z = bilinear_concomitant(*film.op, phi, f);
    auto ij = f.grid.unravel(film.anchor);
    return staircase_cumulative(z.as_form(), {ij[0], ij[1]});
}

// ---------------------------------------------------------------------------
// Kernel matrices

template <typename Real = double>
struct KernelField {
    std::vector<KernelMatrix<Real>> at;  // per node
    KernelMatrix<Real> base;             // Omega_{x0}
    std::size_t anchor = 0;
};

// Omega_x(eta, xi) = Omega_{x0}(eta, xi) + int_{film(x0 -> x)} Z[phi_eta, psi_xi].
template <typename Real>
KernelField<Real> film_kernels(const std::vector<GridFunction<Real>>& phi, const std::vector<GridFunction<Real>>& psi,
                               const Film<Real>& film, const CMatrix<Real>& base) {
    const auto K = Eigen::Index(phi.size());
    if (psi.size() != phi.size() || base.rows() != K || base.cols() != K) throw Error("film_kernels: family sizes and base matrix disagree");
    if (K == 0) return {{}, {base, film.anchor, 1}, film.anchor};
    const auto& g = psi.front().grid;
    for (std::size_t k = 0; k < phi.size(); ++k)
        if (phi[k].grid != g || psi[k].grid != g) throw Error("film_kernels: families live on different grids");
    std::vector<std::vector<CVector<Real>>> J(static_cast<std::size_t>(K), std::vector<CVector<Real>>(static_cast<std::size_t>(K)));
    for (Eigen::Index e = 0; e < K; ++e)
        for (Eigen::Index s = 0; s < K; ++s) J[std::size_t(e)][std::size_t(s)] = film_integral(film, phi[std::size_t(e)], psi[std::size_t(s)]);
    KernelField<Real> out;
    out.anchor = film.anchor;
    out.base = make_kernel_matrix(base, film.anchor);
    for (std::size_t x = 0; x < g.size(); ++x) {
        CMatrix<Real> m = base;
        if (x != film.anchor)
            for (Eigen::Index e = 0; e < K; ++e)
                for (Eigen::Index s = 0; s < K; ++s) m(e, s) += J[std::size_t(e)][std::size_t(s)](Eigen::Index(x));
        out.at.push_back(make_kernel_matrix(std::move(m), x));
    }
    return out;
}

// Kernel matrices at x and x0 from the concomitant: m = 1 by point evaluation
// Omega_x(eta, xi) = Z_1[phi_eta, psi_xi](x); m = 2 by the staircase integral of
// Z^(1) from x0 to x added to `base` (identity unless given).
template <typename Real>
std::pair<KernelMatrix<Real>, KernelMatrix<Real>> kernel_matrices(const SpectralFamily<Real>& phi, const SpectralFamily<Real>& psi,
                                                                  const DifferentialOperator<Real>& L, std::size_t x,
                                                                  std::size_t x0, std::optional<CMatrix<Real>> base = {},
                                                                  Real closed_tol = Real(1e-6)) {
    const auto K = Eigen::Index(phi.size());
    if (psi.size() != phi.size()) throw Error("kernel_matrices: family sizes differ");
    for (std::size_t k = 0; k < phi.size(); ++k)
        if (phi.members[k].grid != L.grid || psi.members[k].grid != L.grid) throw Error("kernel_matrices: families and operator grids differ");
    if (x >= L.grid.size() || x0 >= L.grid.size()) throw Error("kernel_matrices: node outside the grid");
    CMatrix<Real> Wx(K, K), W0(K, K);
    if (L.grid.dim == 1) {
        for (Eigen::Index e = 0; e < K; ++e)
            for (Eigen::Index s = 0; s < K; ++s) {
                auto z = bilinear_concomitant(L, phi.members[std::size_t(e)], psi.members[std::size_t(s)]);
                Wx(e, s) = z.Z[0](Eigen::Index(x));
                W0(e, s) = z.Z[0](Eigen::Index(x0));
            }
    } else {
        W0 = base ? *base : CMatrix<Real>(CMatrix<Real>::Identity(K, K));
        if (W0.rows() != K || W0.cols() != K) throw Error("kernel_matrices: base matrix has the wrong size");
        Wx = W0;
        auto from = L.grid.unravel(x0), to = L.grid.unravel(x);
        for (Eigen::Index e = 0; e < K; ++e)
            for (Eigen::Index s = 0; s < K; ++s) {
                auto form = bilinear_concomitant(L, phi.members[std::size_t(e)], psi.members[std::size_t(s)]).as_form();
                Real scale = std::max(form.comps[0].cwiseAbs().maxCoeff(), form.comps[1].cwiseAbs().maxCoeff());
                Real closed = interior_max_abs(L.grid, CMatrix<Real>(exterior_derivative(form)), kInteriorMargin);
                if (closed > closed_tol * std::max(scale, Real(1)))
                    throw Error("kernel_matrices: concomitant form not closed (|dZ| = " + std::to_string(closed) + "), cycle integral is path-dependent");
                if (x != x0) Wx(e, s) += integrate_path(form, staircase({from[0], from[1]}, {to[0], to[1]}));
            }
    }
    if (x == x0) Wx = W0;
    auto w0 = make_kernel_matrix(W0, x0);
    if (w0.condition > Real(kMaxCondition)) throw Error("kernel_matrices: Omega_x0 condition number above cutoff");
    return {make_kernel_matrix(Wx, x), w0};
}

// Companion entries (xi, eta) = -Z_{L*}[psi_xi, phi_eta](x) (m = 1); equals the
// conjugate transpose of Omega_x whenever the adjoint concomitant is the
// conjugate of the direct one (exactly so for self-adjoint L with matched families).
template <typename Real>
KernelMatrix<Real> companion_kernel_matrix(const SpectralFamily<Real>& phi, const SpectralFamily<Real>& psi,
                                           const DifferentialOperator<Real>& L, std::size_t x) {
    if (L.grid.dim != 1) throw Error("companion_kernel_matrix: point evaluation needs m = 1");
    auto Ls = formal_adjoint(L).first;
    const auto K = Eigen::Index(phi.size());
    CMatrix<Real> C(K, K);
    for (Eigen::Index s = 0; s < K; ++s)
        for (Eigen::Index e = 0; e < K; ++e)
            C(s, e) = -bilinear_concomitant(Ls, psi.members[std::size_t(s)], phi.members[std::size_t(e)]).Z[0](Eigen::Index(x));
    return make_kernel_matrix(std::move(C), x);
}

// m = 1 point-evaluation field: Omega_x(eta, xi) = Z_1[phi_eta, psi_xi](x), anchored at x0.
template <typename Real>
KernelField<Real> point_kernels(const SpectralFamily<Real>& phi, const SpectralFamily<Real>& psi, const DifferentialOperator<Real>& L,
                                std::size_t x0) {
    if (L.grid.dim != 1) throw Error("point_kernels: point evaluation needs m = 1");
    if (phi.size() != psi.size()) throw Error("point_kernels: family sizes differ");
    const auto K = Eigen::Index(phi.size());
    std::vector<std::vector<CVector<Real>>> Z(static_cast<std::size_t>(K));
    for (Eigen::Index e = 0; e < K; ++e)
        for (Eigen::Index s = 0; s < K; ++s)
            Z[std::size_t(e)].push_back(bilinear_concomitant(L, phi.members[std::size_t(e)], psi.members[std::size_t(s)]).Z[0]);
    KernelField<Real> out;
    out.anchor = x0;
    for (std::size_t x = 0; x < L.grid.size(); ++x) {
        CMatrix<Real> m(K, K);
        for (Eigen::Index e = 0; e < K; ++e)
            for (Eigen::Index s = 0; s < K; ++s) m(e, s) = Z[std::size_t(e)][std::size_t(s)](Eigen::Index(x));
        out.at.push_back(make_kernel_matrix(std::move(m), x));
    }
    out.base = out.at[x0];
    if (out.base.condition > Real(kMaxCondition)) throw Error("point_kernels: Omega_x0 condition number above cutoff");
    return out;
}

template <typename Real>
void write_kernel_csv(const KernelMatrix<Real>& k, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << "# transmute kernel-matrix csv v1\n# node " << k.node << " condition " << k.condition << "\neta,xi,re,im\n"
       << std::setprecision(17);
    for (Eigen::Index e = 0; e < k.value.rows(); ++e)
        for (Eigen::Index s = 0; s < k.value.cols(); ++s) os << e << ',' << s << ',' << k.value(e, s).real() << ',' << k.value(e, s).imag() << '\n';
}

// psi~(xi)(x) = sum psi(eta)(x) [Omega_x^{-1} Omega_{x0}]_{eta, xi}; identity at x0.
template <typename Real>
std::vector<GridFunction<Real>> transform_members(const std::vector<GridFunction<Real>>& psi, const KernelField<Real>& field) {
    std::vector<GridFunction<Real>> out = psi;
    if (psi.empty()) return out;
    const auto& g = psi.front().grid;
    const auto K = Eigen::Index(psi.size());
    for (std::size_t x = 0; x < g.size(); ++x) {
        if (x == field.anchor) continue;
        CMatrix<Real> T = checked_inverse(field.at[x].value, "transform at x = " + std::to_string(g.coord(0, int(g.unravel(x)[0])))) *
                          field.base.value;
        for (int c = 0; c < psi.front().channels(); ++c)
            for (Eigen::Index s = 0; s < K; ++s) {
                Complex<Real> v(0);
                for (Eigen::Index e = 0; e < K; ++e) v += psi[std::size_t(e)](x, c) * T(e, s);
                out[std::size_t(s)](x, c) = v;
            }
    }
    return out;
}

// phi~(eta)(x) = sum phi(eta')(x) [Omega_x^{-H} Omega_{x0}^H]_{eta', eta} (companion side).
template <typename Real>
std::vector<GridFunction<Real>> transform_adjoint_members(const std::vector<GridFunction<Real>>& phi, const KernelField<Real>& field) {
    KernelField<Real> h = field;
    for (auto& k : h.at) k.value.adjointInPlace();
    h.base.value.adjointInPlace();
    return transform_members(phi, h);
}

template <typename Real>
SpectralFamily<Real> transform_family(const SpectralFamily<Real>& psi, const KernelField<Real>& field) {
    SpectralFamily<Real> out = psi;
    out.members = transform_members(psi.members, field);
    out.recipe = psi.recipe + "~";
    return out;
}

// ---------------------------------------------------------------------------
// Delsarte operators

// (Omega f)(x) = f(x) - sum psi~_xi(x) [Omega_{x0}^{-1}]_{xi, eta} J_eta(x),
// J_eta = int_{film(x0 -> x)} Z[phi_eta, f].
// Spectral weights rho enter both the base matrix and the sum and cancel; they
// are kept for reporting only.
template <typename Real = double>
struct DelsarteOperator {
    GridSpec<Real> grid;
    int N = 1;
    Film<Real> film;
    std::vector<GridFunction<Real>> phi, psi, psi_tilde;
    CMatrix<Real> base, base_inv;
    std::vector<Real> weights;
    std::string op_id;

    std::size_t size() const { return phi.size(); }

    GridFunction<Real> apply(const GridFunction<Real>& f) const {
        if (f.grid != grid || f.channels() != N) throw Error("DelsarteOperator: argument grid/channels mismatch");
        GridFunction<Real> out = f;
        const auto K = Eigen::Index(size());
        if (K == 0) return out;
        std::vector<CVector<Real>> J;
        for (const auto& p : phi) J.push_back(film_integral(film, p, f));
        for (Eigen::Index k = 0; k < K; ++k) {
            CVector<Real> c = CVector<Real>::Zero(Eigen::Index(grid.size()));
            for (Eigen::Index l = 0; l < K; ++l) c += base_inv(k, l) * J[std::size_t(l)];
            out.v -= (psi_tilde[std::size_t(k)].v.array().colwise() * c.array()).matrix();
        }
        return out;
    }

    // Hermitian adjoint under <f, g> = sum w conj(f) g (density films).
    GridFunction<Real> apply_adjoint(const GridFunction<Real>& g) const {
        if (film.kind != FilmKind::Density) throw Error("apply_adjoint: only density films have a matrix-free adjoint");
        if (g.grid != grid || g.channels() != N) throw Error("DelsarteOperator: argument grid/channels mismatch");
        GridFunction<Real> out = g;
        const auto K = Eigen::Index(size());
        if (K == 0) return out;
        const int n = grid.n[0];
        auto C = detail::cumulative_matrix<Real>(n, film.anchor, grid.h[0]);
        auto w = trapezoid_weights<Real>(n, grid.h[0]);
        Eigen::Matrix<Real, Eigen::Dynamic, 1> W = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(w.data(), n);
        for (Eigen::Index k = 0; k < K; ++k) {
            CVector<Real> u = (W.template cast<Complex<Real>>().array() * detail::pointwise_inner(psi_tilde[std::size_t(k)], g).array()).matrix();
            CVector<Real> T = (C.transpose().template cast<Complex<Real>>() * u).array() / W.template cast<Complex<Real>>().array();
            for (Eigen::Index l = 0; l < K; ++l) {
                auto d = film.dual(phi[std::size_t(l)]);
                Complex<Real> m = std::conj(base_inv(k, l));
                out.v -= (d.v.array().colwise() * (m * T).array()).matrix();
            }
        }
        return out;
    }

    // Dense (nodes * N)^2 matrix, index node * N + channel.
    CMatrix<Real> matrix() const {
        const auto n = Eigen::Index(grid.size()), nN = n * N;
        if (film.kind == FilmKind::Staircase) {
            if (nN > 4096) throw Error("DelsarteOperator::matrix: grid too large for a dense staircase matrix");
            CMatrix<Real> A(nN, nN);
            for (Eigen::Index col = 0; col < nN; ++col) {
                GridFunction<Real> e(grid, N);
                e(std::size_t(col / N), int(col % N)) = 1;
                auto r = apply(e);
                for (Eigen::Index row = 0; row < nN; ++row) A(row, col) = r(std::size_t(row / N), int(row % N));
            }
            return A;
        }
        CMatrix<Real> A = CMatrix<Real>::Identity(nN, nN);
        const auto K = Eigen::Index(size());
        if (K == 0) return A;
        auto C = detail::cumulative_matrix<Real>(int(n), film.anchor, grid.h[0]);
        std::vector<GridFunction<Real>> d;
        for (const auto& p : phi) d.push_back(film.dual(p));
        // coefficient field c_l(x, channel) = sum_k psi~_k(x) Minv(k, l)
        for (Eigen::Index l = 0; l < K; ++l) {
            CMatrix<Real> cl = CMatrix<Real>::Zero(n, N);
            for (Eigen::Index k = 0; k < K; ++k) cl += base_inv(k, l) * psi_tilde[std::size_t(k)].v;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    Real cij = C(i, j);
                    if (cij == Real(0)) continue;
                    for (int a = 0; a < N; ++a)
                        for (int b = 0; b < N; ++b) A(i * N + a, j * N + b) -= cl(i, a) * cij * std::conj(d[std::size_t(l)].v(j, b));
                }
        }
        return A;
    }
};

template <typename Real>
DelsarteOperator<Real> delsarte_assemble(const std::vector<GridFunction<Real>>& phi, const std::vector<GridFunction<Real>>& psi,
                                         const std::vector<GridFunction<Real>>& psi_tilde, const CMatrix<Real>& base,
                                         const Film<Real>& film, const GridSpec<Real>& grid, int N, std::string op_id = "L") {
    const auto K = phi.size();
    if (psi.size() != K || psi_tilde.size() != K || std::size_t(base.rows()) != K || std::size_t(base.cols()) != K)
        throw Error("delsarte_assemble: family sizes and base matrix disagree");
    for (std::size_t k = 0; k < K; ++k)
        if (phi[k].grid != grid || psi[k].grid != grid || psi_tilde[k].grid != grid || phi[k].channels() != N || psi_tilde[k].channels() != N)
            throw Error("delsarte_assemble: families do not match the grid");
    if (film.anchor >= grid.size()) throw Error("delsarte_assemble: film anchor outside the grid");
    DelsarteOperator<Real> op;
    op.grid = grid;
    op.N = N;
    op.film = film;
    op.phi = phi;
    op.psi = psi;
    op.psi_tilde = psi_tilde;
    op.base = base;
    op.base_inv = checked_inverse(base, "delsarte_assemble: Omega_x0");
    op.weights.assign(K, K ? Real(1) / Real(K) : Real(0));
    op.op_id = std::move(op_id);
    return op;
}

template <typename Real = double>
struct Transmutation {
    DelsarteOperator<Real> op;
    KernelField<Real> kernels;
};

// Kernel matrices along the film, transformed family, assembled operator.
template <typename Real>
Transmutation<Real> delsarte_transmutation(const SpectralFamily<Real>& phi, const SpectralFamily<Real>& psi, const Film<Real>& film,
                                           const CMatrix<Real>& base) {
    if (phi.size() != psi.size()) throw Error("delsarte_transmutation: family sizes differ");
    if (psi.size() == 0) throw Error("delsarte_transmutation: empty family has no grid; use identity_operator");
    auto field = film_kernels(phi.members, psi.members, film, base);
    auto pt = transform_members(psi.members, field);
    auto op = delsarte_assemble(phi.members, psi.members, pt, base, film, psi.grid(), psi.members.front().channels(), psi.op_id);
    op.weights = psi.sigma.weights;
    return {std::move(op), std::move(field)};
}

template <typename Real>
DelsarteOperator<Real> identity_operator(const GridSpec<Real>& g, int N, Film<Real> film = {}) {
    return delsarte_assemble<Real>({}, {}, {}, CMatrix<Real>(0, 0), film, g, N);
}

// Mirrored inverse: roles of (phi, psi) and (phi~, psi~) swap, with
// phi~ = phi Omega_x^{-H} Omega_{x0}^H and base -Omega_{x0}.
template <typename Real>
DelsarteOperator<Real> delsarte_inverse(const DelsarteOperator<Real>& op, Real consistency_tol = Real(1e-8)) {
    if (op.size() == 0) return op;
    if (op.film.kind != FilmKind::Density)
        throw Error("delsarte_inverse: the mirrored film needs the concomitant of the transformed operator (density films only)");
    auto field = film_kernels(op.phi, op.psi, op.film, op.base);
    auto check = transform_members(op.psi, field);
    for (std::size_t k = 0; k < op.size(); ++k) {
        Real scale = std::max(op.psi_tilde[k].max_abs(), Real(1e-300));
        if ((check[k].v - op.psi_tilde[k].v).cwiseAbs().maxCoeff() > consistency_tol * scale)
            throw Error("delsarte_inverse: operator was not assembled from its own film kernels; mirrored inverse unavailable");
    }
    auto phit = transform_adjoint_members(op.phi, field);
    auto inv = delsarte_assemble(phit, op.psi_tilde, op.psi, CMatrix<Real>(-op.base), op.film, op.grid, op.N, op.op_id + "~");
    inv.weights = op.weights;
    return inv;
}

// ---------------------------------------------------------------------------
// Transformed operator

namespace detail {

template <typename Real>
CMatrix<Real> operator_matrix(const DifferentialOperator<Real>& L) {
    const auto n = Eigen::Index(L.grid.size()), nN = n * L.N;
    CMatrix<Real> A(nN, nN);
    for (Eigen::Index col = 0; col < nN; ++col) {
        GridFunction<Real> e(L.grid, L.N);
        e(std::size_t(col / L.N), int(col % L.N)) = 1;
        auto r = apply(L, e);
        for (Eigen::Index row = 0; row < nN; ++row) A(row, col) = r(std::size_t(row / L.N), int(row % L.N));
    }
    return A;
}

inline double factorial(int k) {
    double f = 1;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

}  // namespace detail

template <typename Real = double>
struct TransformedOperatorReport {
    Real max_condition = 0;           // collocation systems
    Real order_inflation = 0;         // relative response to the first order-(n+1) test function
    std::vector<std::size_t> fallback_nodes;
};

// L~ = Omega L Omega^{-1} by local collocation (m = 1). Test functions at node
// x_i: g_j(y) = (y - x0)(y - x_i)^j e_c, j = 0..n; the exact discrete inverse
// of the assembled operator is used. At x0 the system degenerates and the
// coefficients of L are kept.
template <typename Real>
DifferentialOperator<Real> transformed_operator(const DifferentialOperator<Real>& L, const DelsarteOperator<Real>& op,
                                                TransformedOperatorReport<Real>* report = nullptr) {
    if (L.grid.dim != 1) throw Error("transformed_operator: collocation is implemented for m = 1 only");
    if (L.grid != op.grid || L.N != op.N) throw Error("transformed_operator: operator and transmutation grids differ");
    TransformedOperatorReport<Real> rep;
    if (op.size() == 0) {
        if (report) *report = rep;
        auto out = L;
        return out;
    }
    const auto& g = L.grid;
    const int n = L.order, N = L.N;
    const auto nodes = Eigen::Index(g.size()), nN = nodes * N;
    CMatrix<Real> A = op.matrix();
    Eigen::PartialPivLU<CMatrix<Real>> lu(A);
    CMatrix<Real> T = A * (detail::operator_matrix(L) * lu.inverse());
    const Real x0 = g.coord(0, int(op.film.anchor));

    DifferentialOperator<Real> out(g, N, n, L.id + "~");
    for (int k = 0; k <= n; ++k) out.coef({k, 0});
    Real inflation_num = 0, inflation_den = 0;
    for (Eigen::Index i = 0; i < nodes; ++i) {
        const Real xi = g.coord(0, int(i));
        if (std::size_t(i) == op.film.anchor) {
            for (int k = 0; k <= n; ++k) {
                auto it = L.coeffs.find({k, 0});
                if (it != L.coeffs.end()) out.coef({k, 0}).set(std::size_t(i), it->second.at(std::size_t(i)));
            }
            rep.fallback_nodes.push_back(std::size_t(i));
            continue;
        }
        // D(k, j) = d^k g_j (x_i)
        Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> D = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>::Zero(n + 1, n + 1);
        for (int j = 0; j <= n; ++j) {
            D(j, j) = Real(detail::factorial(j)) * (xi - x0);
            if (j + 1 <= n) D(j + 1, j) = Real(detail::factorial(j + 1));
        }
        Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> Dinv = D.inverse();
        Real cond = D.norm() * Dinv.norm();
        rep.max_condition = std::max(rep.max_condition, cond);
        if (!(cond < Real(kMaxCondition))) throw Error("transformed_operator: ill-conditioned collocation at x = " + std::to_string(xi));
        auto rows = T.middleRows(i * N, N);
        for (int c = 0; c < N; ++c) {
            CMatrix<Real> R(N, n + 2);
            for (int j = 0; j <= n + 1; ++j) {
                CVector<Real> gv = CVector<Real>::Zero(nN);
                for (Eigen::Index y = 0; y < nodes; ++y) {
                    Real yy = g.coord(0, int(y));
                    gv(y * N + c) = (yy - x0) * std::pow(yy - xi, j);
                }
                R.col(j) = rows * gv;
            }
            CMatrix<Real> X = R.leftCols(n + 1) * Dinv.template cast<Complex<Real>>();
            for (int k = 0; k <= n; ++k)
                for (int r = 0; r < N; ++r) out.coef({k, 0}).v(i, r * N + c) = X(r, k);
            inflation_num = std::max(inflation_num, R.col(n + 1).cwiseAbs().maxCoeff());
            inflation_den = std::max(inflation_den, R.col(n).cwiseAbs().maxCoeff());
        }
    }
    rep.order_inflation = inflation_den > 0 ? inflation_num / inflation_den : Real(0);
    if (report) *report = rep;
    return out;
}

// Weighted 2-norm over interior nodes.
template <typename Real>
Real interior_norm2(const GridFunction<Real>& f, int margin) {
    Real s = 0;
    for (std::size_t k = 0; k < f.size(); ++k)
        if (interior(f.grid, k, margin)) s += cell_weight(f.grid, k) * f.v.row(Eigen::Index(k)).squaredNorm();
    return std::sqrt(s);
}

// max over the test set of ||(L~ Omega - Omega L) f||_2 / ||f||_2, interior nodes.
template <typename Real>
Real intertwining_residual(const DifferentialOperator<Real>& L, const DifferentialOperator<Real>& Lt, const DelsarteOperator<Real>& op,
                           const std::vector<GridFunction<Real>>& testset, int margin = kInteriorMargin) {
    Real worst = 0;
    for (const auto& f : testset) {
        Real nf = norm2(f);
        if (nf == Real(0)) continue;
        auto r = apply(Lt, op.apply(f)) - op.apply(apply(L, f));
        worst = std::max(worst, interior_norm2(r, margin) / nf);
    }
    return worst;
}

// Compactly supported cos^4 bumps well inside the box (1D), a default smooth
// boundary-vanishing battery.
template <typename Real>
std::vector<GridFunction<Real>> bump_battery(const GridSpec<Real>& g, int count, std::uint32_t seed = 0, int N = 1) {
    if (g.dim != 1) throw Error("bump_battery: one-dimensional grids only");
    std::mt19937 rng(seed);
    const Real a = g.lo[0], b = g.hi[0], len = b - a;
    std::uniform_real_distribution<Real> C(a + len / 4, b - len / 4), W(Real(0.05) * len, Real(0.1) * len), P(-1, 1);
    std::vector<GridFunction<Real>> out;
    for (int t = 0; t < count; ++t) {
        Real c = C(rng), w = W(rng);
        GridFunction<Real> f(g, N);
        std::vector<Complex<Real>> amp;
        for (int ch = 0; ch < N; ++ch) amp.emplace_back(P(rng), P(rng));
        for (std::size_t k = 0; k < g.size(); ++k) {
            Real t0 = (g.coord(0, int(k)) - c) / (Real(2.5) * w);
            Real v = std::abs(t0) < 1 ? std::pow(std::cos(std::numbers::pi_v<Real> / 2 * t0), 4) : Real(0);
            for (int ch = 0; ch < N; ++ch) f(k, ch) = amp[std::size_t(ch)] * v;
        }
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace transmute
