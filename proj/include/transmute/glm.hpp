#pragma once

#include "transmutation.hpp"

namespace transmute {

template <typename Real = double>
struct OperatorPair {
    DelsarteOperator<Real> plus, minus;
    KernelField<Real> kernels;  // plus-film kernel matrices
};

// Omega_+ on the plus film and Omega_- on the minus film, sharing the base
// matrix and the transformed family psi~ = psi Omega_x^{-1} Omega_{x0} of the plus film,
// so both intertwine L with the same transformed operator.
template <typename Real>
OperatorPair<Real> build_pair(const SpectralFamily<Real>& phi, const SpectralFamily<Real>& psi,
                              const std::function<GridFunction<Real>(const GridFunction<Real>&)>& dual, const CMatrix<Real>& base) {
    if (psi.size() == 0) throw Error("build_pair: empty family has no grid");
    const auto& g = psi.grid();
    auto tr = delsarte_transmutation(phi, psi, density_film(g, Orientation::Plus, dual), base);
    auto minus = delsarte_assemble(phi.members, psi.members, tr.op.psi_tilde, base, density_film(g, Orientation::Minus, dual), g,
                                   tr.op.N, psi.op_id);
    minus.weights = tr.op.weights;
    return {std::move(tr.op), std::move(minus), std::move(tr.kernels)};
}

template <typename Real>
OperatorPair<Real> identity_pair(const GridSpec<Real>& g, int N,
                                 const std::function<GridFunction<Real>(const GridFunction<Real>&)>& dual) {
    return {identity_operator(g, N, density_film(g, Orientation::Plus, dual)), identity_operator(g, N, density_film(g, Orientation::Minus, dual)), {}};
}

namespace detail {

// Row-local quadrature weights for the support of row i: [x_i, b] (plus) or [a, x_i] (minus).
template <typename Real>
std::vector<Real> row_weights(Quadrature q, int n, int i, Real h, Orientation o) {
    return o == Orientation::Plus ? quadrature_weights(q, n - i, h) : quadrature_weights(q, i + 1, h);
}

inline int row_first(int i, Orientation o) { return o == Orientation::Plus ? i : 0; }

}  // namespace detail

// K(x, s) on grid x grid (channel blocks N x N, index node * N + channel),
// zero on the excluded side: s < x (plus) or s > x (minus).
template <typename Real = double>
struct VolterraKernel {
    GridSpec<Real> grid;
    int N = 1;
    Orientation orientation = Orientation::Plus;
    CMatrix<Real> K;

    bool excluded(int i, int j) const { return orientation == Orientation::Plus ? j < i : j > i; }

    CMatrix<Real> diagonal_trace() const {
        const int n = grid.n[0];
        CMatrix<Real> d(n, N * N);
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < N; ++r)
                for (int c = 0; c < N; ++c) d(i, r * N + c) = K(i * N + r, i * N + c);
        return d;
    }

    // max |K| on the excluded side relative to max |K|
    Real excluded_mass() const {
        Real all = K.size() ? K.cwiseAbs().maxCoeff() : Real(0), ex = 0;
        const int n = grid.n[0];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (excluded(i, j)) ex = std::max(ex, K.block(i * N, j * N, N, N).cwiseAbs().maxCoeff());
        return all > 0 ? ex / all : Real(0);
    }
};

// Kernel of (Omega - 1) in the form int K(x, s) f(s) ds over the film support,
// using the row-local trapezoid weights of the film. Rows whose support
// degenerates to a point (the anchor row) carry no kernel.
template <typename Real>
VolterraKernel<Real> volterra_kernel(const DelsarteOperator<Real>& op) {
    if (op.film.kind != FilmKind::Density) throw Error("volterra_kernel: density films only");
    const int n = op.grid.n[0], N = op.N;
    VolterraKernel<Real> out{op.grid, N, op.film.orientation, CMatrix<Real>::Zero(n * N, n * N)};
    CMatrix<Real> A = op.matrix();
    A -= CMatrix<Real>::Identity(A.rows(), A.cols());
    for (int i = 0; i < n; ++i) {
        auto w = detail::row_weights(Quadrature::Trapezoid, n, i, op.grid.h[0], op.film.orientation);
        const int j0 = detail::row_first(i, op.film.orientation);
        for (int t = 0; t < int(w.size()); ++t)
            if (w[std::size_t(t)] > 0) out.K.block(i * N, (j0 + t) * N, N, N) = A.block(i * N, (j0 + t) * N, N, N) / w[std::size_t(t)];
    }
    return out;
}

// Largest off-diagonal entry where both kernels are nonzero, relative to the
// larger kernel; the diagonal s = x belongs to both closed supports and is
// reported separately.
template <typename Real = double>
struct SupportOverlap {
    Real off_diagonal = 0;
    Real diagonal = 0;
};

template <typename Real>
SupportOverlap<Real> support_overlap(const VolterraKernel<Real>& a, const VolterraKernel<Real>& b) {
    if (a.grid != b.grid || a.N != b.N) throw Error("support_overlap: kernels on different grids");
    Real scale = std::max(a.K.cwiseAbs().maxCoeff(), b.K.cwiseAbs().maxCoeff());
    SupportOverlap<Real> o;
    if (scale == Real(0)) return o;
    const int n = a.grid.n[0], N = a.N;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Real m = std::min(a.K.block(i * N, j * N, N, N).cwiseAbs().maxCoeff(), b.K.block(i * N, j * N, N, N).cwiseAbs().maxCoeff());
            (i == j ? o.diagonal : o.off_diagonal) = std::max(i == j ? o.diagonal : o.off_diagonal, m / scale);
        }
    return o;
}

// Phi as the discrete operator Phi_hat = F W (node weights W) and its kernel F(s, t).
template <typename Real = double>
struct FredholmKernel {
    GridSpec<Real> grid;
    int N = 1;
    CMatrix<Real> F;      // kernel values, index node * N + channel
    CMatrix<Real> Phat;   // discrete operator
    Real symmetry_defect() const { return F.size() ? (F - F.adjoint()).cwiseAbs().maxCoeff() : Real(0); }
    GridFunction<Real> apply(const GridFunction<Real>& f) const {
        GridFunction<Real> out(grid, N);
        CVector<Real> v(f.v.size());
        for (Eigen::Index k = 0; k < Eigen::Index(grid.size()); ++k)
            for (int c = 0; c < N; ++c) v(k * N + c) = f.v(k, c);
        CVector<Real> r = Phat * v;
        for (Eigen::Index k = 0; k < Eigen::Index(grid.size()); ++k)
            for (int c = 0; c < N; ++c) out.v(k, c) = r(k * N + c);
        return out;
    }
};

template <typename Real>
FredholmKernel<Real> fredholm_from_values(const GridSpec<Real>& g, int N, CMatrix<Real> F) {
    if (g.dim != 1) throw Error("Fredholm kernels are one-dimensional");
    const int n = g.n[0];
    if (F.rows() != n * N || F.cols() != n * N) throw Error("fredholm_from_values: kernel size mismatch");
    if (!F.allFinite()) throw Error("fredholm_from_values: non-finite kernel entries");
    auto w = trapezoid_weights(n, g.h[0]);
    CMatrix<Real> P = F;
    for (int j = 0; j < n; ++j) P.middleCols(j * N, N) *= w[std::size_t(j)];
    return {g, N, std::move(F), std::move(P)};
}

template <typename Real, typename Fn>
FredholmKernel<Real> sample_fredholm(const GridSpec<Real>& g, Fn&& fn) {
    const int n = g.n[0];
    CMatrix<Real> F(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) F(i, j) = fn(g.coord(0, i), g.coord(0, j));
    return fredholm_from_values(g, 1, std::move(F));
}

// Phi = Omega_+^{-1} Omega_- - 1 from the exact discrete inverse of the dense Omega_+.
template <typename Real>
FredholmKernel<Real> fredholm_from_pair(const DelsarteOperator<Real>& plus, const DelsarteOperator<Real>& minus) {
    if (plus.grid != minus.grid || plus.N != minus.N) throw Error("fredholm_from_pair: operators on different grids");
    if (plus.grid.dim != 1) throw Error("fredholm_from_pair: one-dimensional operators only");
    const int n = plus.grid.n[0], N = plus.N;
    CMatrix<Real> Ap = plus.matrix(), Am = minus.matrix();
    Eigen::PartialPivLU<CMatrix<Real>> lu(Ap);
    Real rc = lu.rcond();
    if (!(rc > Real(1) / Real(kMaxCondition))) throw Error("fredholm_from_pair: Omega_+ is not invertible (rcond " + std::to_string(rc) + ")");
    CMatrix<Real> P = lu.solve(Am);
    P -= CMatrix<Real>::Identity(P.rows(), P.cols());
    auto w = trapezoid_weights(n, plus.grid.h[0]);
    CMatrix<Real> F = P;
    for (int j = 0; j < n; ++j) F.middleCols(j * N, N) /= w[std::size_t(j)];
    return {plus.grid, N, std::move(F), std::move(P)};
}

namespace detail {

// Reverse the node order, keeping channel order inside each N x N block.
template <typename Real>
CMatrix<Real> reverse_nodes(const CMatrix<Real>& A, int N) {
    const int n = int(A.rows()) / N;
    CMatrix<Real> B(A.rows(), A.cols());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B.block(i * N, j * N, N, N) = A.block((n - 1 - i) * N, (n - 1 - j) * N, N, N);
    return B;
}

// Row i of the leading-orientation problem (support nodes 0..i), pivoted LU with the condition cutoff:
// U S = -F_row, S = 1 + diag(w) F_sub.
template <typename Real>
CMatrix<Real> glm_row_direct(const CMatrix<Real>& F, int N, int i, const std::vector<Real>& w, Real x) {
    const int m = (i + 1) * N;
    CMatrix<Real> S = F.topLeftCorner(m, m);
    for (int t = 0; t <= i; ++t) S.middleRows(t * N, N) *= w[std::size_t(t)];
    S += CMatrix<Real>::Identity(m, m);
    Eigen::PartialPivLU<CMatrix<Real>> lu(S.transpose());
    if (!(lu.rcond() > Real(1) / Real(kMaxCondition))) throw Error("solve_glm: singular row system at x = " + std::to_string(x));
    return lu.solve(CMatrix<Real>(-F.block(i * N, 0, N, m).transpose())).transpose();
}

// All rows of the leading orientation (row i integrates over nodes 0..i).
// The row systems are leading blocks of G^T = (1 + diag(c) F)^T, with c the
// weights of an unbounded run from node 0, plus a low-rank correction for the
// end weights at node i. One unpivoted LU of G^T serves every row (Woodbury for
// the correction); rows whose pivots, capacitance or residual look doubtful are
// redone with the pivoted, condition-checked direct solve.
template <typename Real, typename XOf>
CMatrix<Real> glm_leading_rows(const CMatrix<Real>& F, int N, Real h, Quadrature q, XOf&& xof) {
    constexpr int kDirectRows = 16;
    const int n = int(F.rows()) / N, M = n * N;
    CMatrix<Real> K = CMatrix<Real>::Zero(M, M);
    int first_fast = n;
    std::vector<Real> c;
    if (n > 2 * kDirectRows) {
        first_fast = kDirectRows;
        c = quadrature_weights(q, n, h);
        for (int j = 3; j < n; ++j) c[std::size_t(j)] = h;
    }
    for (int i = 0; i < std::min(first_fast, n); ++i) K.block(i * N, 0, N, (i + 1) * N) = glm_row_direct(F, N, i, quadrature_weights(q, i + 1, h), xof(i));
    if (first_fast >= n) return K;

    CMatrix<Real> Gt = F;
    for (int j = 0; j < n; ++j) Gt.middleRows(j * N, N) *= c[std::size_t(j)];
    Gt += CMatrix<Real>::Identity(M, M);
    Gt.transposeInPlace();
    const Real gnorm = Gt.cwiseAbs().rowwise().sum().maxCoeff();

    // unpivoted LU; leading blocks of size <= good are factored, with pivot spread tracked per size
    CMatrix<Real> LU = Gt;
    Eigen::Index good = M;
    std::vector<Real> spread(std::size_t(M) + 1, Real(1));
    Real pmin = std::numeric_limits<Real>::infinity(), pmax = 0;
    for (Eigen::Index k = 0; k < M; ++k) {
        Real p = std::abs(LU(k, k));
        if (!(p > gnorm / Real(kMaxCondition))) {
            good = k;
            break;
        }
        pmin = std::min(pmin, p);
        pmax = std::max(pmax, p);
        spread[std::size_t(k) + 1] = pmax / pmin;
        const Eigen::Index r = M - k - 1;
        if (r == 0) break;
        LU.col(k).tail(r) /= LU(k, k);
        LU.bottomRightCorner(r, r).noalias() -= LU.col(k).tail(r) * LU.row(k).tail(r);
    }

    for (int i = first_fast; i < n; ++i) {
        const int m = (i + 1) * N;
        auto w = quadrature_weights(q, i + 1, h);
        auto direct = [&] { K.block(i * N, 0, N, m) = glm_row_direct(F, N, i, w, xof(i)); };
        if (m > good || spread[std::size_t(m)] > Real(kMaxCondition)) {
            direct();
            continue;
        }
        std::vector<int> idx;  // channel rows whose weight differs from c
        for (int t = 0; t <= i; ++t)
            if (w[std::size_t(t)] != c[std::size_t(t)])
                for (int ch = 0; ch < N; ++ch) idx.push_back(t * N + ch);
        const int p = int(idx.size());
        // T = Gt_m + V E^T,  V(:, a) = delta * F(idx[a], 0:m)^T
        CMatrix<Real> X(m, N + p);
        X.leftCols(N) = -F.block(i * N, 0, N, m).transpose();
        for (int a = 0; a < p; ++a) X.col(N + a) = (w[std::size_t(idx[a] / N)] - c[std::size_t(idx[a] / N)]) * F.row(idx[a]).head(m).transpose();
        const CMatrix<Real> B = X;
        auto Lm = LU.topLeftCorner(m, m);
        Lm.template triangularView<Eigen::UnitLower>().solveInPlace(X);
        Lm.template triangularView<Eigen::Upper>().solveInPlace(X);
        CMatrix<Real> x = X.leftCols(N);
        if (p > 0) {
            CMatrix<Real> C = CMatrix<Real>::Identity(p, p), ey(p, N);
            for (int a = 0; a < p; ++a) {
                for (int b2 = 0; b2 < p; ++b2) C(a, b2) += X(idx[a], N + b2);
                ey.row(a) = x.row(idx[a]);
            }
            // rcond of C is scale-free; measure it against the terms that cancel in 1 + E^T Z
            Eigen::PartialPivLU<CMatrix<Real>> cap(C);
            Real terms = Real(1) + (C - CMatrix<Real>::Identity(p, p)).cwiseAbs().colwise().sum().maxCoeff();
            Real cnorm = C.cwiseAbs().colwise().sum().maxCoeff();
            if (!(cap.rcond() * cnorm / terms > Real(1) / Real(kMaxCondition))) {
                direct();
                continue;
            }
            x -= X.rightCols(p) * cap.solve(ey);
        }
        CMatrix<Real> r = Gt.topLeftCorner(m, m) * x - B.leftCols(N);
        for (int a = 0; a < p; ++a) r += B.col(N + a) * x.row(idx[a]);
        Real tol = Real(1e-10) * (B.leftCols(N).cwiseAbs().maxCoeff() + gnorm * x.cwiseAbs().maxCoeff());
        if (!(r.cwiseAbs().maxCoeff() <= tol)) {
            direct();
            continue;
        }
        K.block(i * N, 0, N, m) = x.transpose();
    }
    return K;
}

}  // namespace detail

// Per-row Nystrom solve of K(x, y) + F(x, y) + int K(x, s) F(s, y) ds = 0 for y on
// the orientation side of x (s over [x, b] for plus, [a, x] for minus), with
// row-local quadrature weights. The plus problem is the minus problem on the
// reversed grid.
template <typename Real>
VolterraKernel<Real> solve_glm(const FredholmKernel<Real>& phi, Orientation o, Quadrature q = Quadrature::Trapezoid) {
    const int n = phi.grid.n[0], N = phi.N;
    const Real h = phi.grid.h[0];
    VolterraKernel<Real> out{phi.grid, N, o, {}};
    if (o == Orientation::Minus) {
        out.K = detail::glm_leading_rows(phi.F, N, h, q, [&](int i) { return phi.grid.coord(0, i); });
    } else {
        out.K = detail::reverse_nodes(
            detail::glm_leading_rows(detail::reverse_nodes(phi.F, N), N, h, q, [&](int i) { return phi.grid.coord(0, n - 1 - i); }), N);
    }
    return out;
}

// Max discrete residual of the GLM equations on the orientation side.
template <typename Real>
Real glm_residual(const FredholmKernel<Real>& phi, const VolterraKernel<Real>& K, Quadrature q = Quadrature::Trapezoid) {
    const int n = phi.grid.n[0], N = phi.N;
    Real r = 0;
    for (int i = 0; i < n; ++i) {
        auto w = detail::row_weights(q, n, i, phi.grid.h[0], K.orientation);
        const int j0 = detail::row_first(i, K.orientation), m = int(w.size()) * N;
        CMatrix<Real> U = K.K.block(i * N, j0 * N, N, m), UW = U;
        for (int t = 0; t < int(w.size()); ++t) UW.middleCols(t * N, N) *= w[std::size_t(t)];
        CMatrix<Real> res = U + phi.F.block(i * N, j0 * N, N, m) + UW * phi.F.block(j0 * N, j0 * N, m, m);
        r = std::max(r, res.cwiseAbs().maxCoeff());
    }
    return r;
}

// Discrete closed form for Phi(s, t) = c u(s) u(t):
// K(x, y) = -c u(x) u(y) / (1 + c sum_k w_k u_k^2) over the row support.
template <typename Real>
VolterraKernel<Real> rank_one_glm(const GridSpec<Real>& g, const CVector<Real>& u, Complex<Real> c, Orientation o,
                                  Quadrature q = Quadrature::Trapezoid) {
    const int n = g.n[0];
    VolterraKernel<Real> out{g, 1, o, CMatrix<Real>::Zero(n, n)};
    for (int i = 0; i < n; ++i) {
        auto w = detail::row_weights(q, n, i, g.h[0], o);
        const int j0 = detail::row_first(i, o);
        Complex<Real> s(0);
        for (int t = 0; t < int(w.size()); ++t) s += w[std::size_t(t)] * u(j0 + t) * u(j0 + t);
        for (int t = 0; t < int(w.size()); ++t) out.K(i, j0 + t) = -c * u(i) * u(j0 + t) / (Real(1) + c * s);
    }
    return out;
}

// q~(x) = q0(x) - 2 d/dx K(x, x) (classical Marchenko trace formula).
template <typename Real>
GridFunction<Real> marchenko_recover_potential(const VolterraKernel<Real>& K, const GridFunction<Real>& q0) {
    if (K.grid.dim != 1 || K.N != 1) throw Error("marchenko_recover_potential: one-dimensional scalar kernels only");
    if (q0.grid != K.grid) throw Error("marchenko_recover_potential: grids differ");
    GridFunction<Real> d(K.grid, CMatrix<Real>(K.diagonal_trace()));
    auto dd = differentiate(d, 0, 1);
    return q0 - Complex<Real>(2) * dd;
}

// Bound-state Marchenko data F(s, t) = sum_j c_j^2 e^{-k_j (s + t)}.
template <typename Real>
FredholmKernel<Real> marchenko_data(const GridSpec<Real>& g, const std::vector<std::pair<Real, Real>>& bound_states) {
    return sample_fredholm(g, [&](Real s, Real t) {
        Complex<Real> v(0);
        for (const auto& [k, c2] : bound_states) v += c2 * std::exp(-k * (s + t));
        return v;
    });
}

// Reflectionless potential of the same bound-state data on the half line
// [x, inf): q = -2 (log det(1 + A))'' with A_jk = e_j e_k / (k_j + k_k),
// e_j = c_j e^{-k_j x}. With B = (1 + A)^{-1}, K(x, x) = -e^T B e and
// q = 2 (2 e'^T B e + (e^T B e)^2). One state: -2 k^2 sech^2(k (x - x1)),
// c^2 = 2 k e^{2 k x1}.
template <typename Real>
Real reflectionless_potential(Real x, const std::vector<std::pair<Real, Real>>& bound_states) {
    const auto J = Eigen::Index(bound_states.size());
    if (J == 0) return Real(0);
    Eigen::Matrix<Real, Eigen::Dynamic, 1> e(J), de(J);
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> A(J, J);
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto [k, c2] = bound_states[std::size_t(j)];
        e(j) = std::sqrt(c2) * std::exp(-k * x);
        de(j) = -k * e(j);
    }
    for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index l = 0; l < J; ++l) A(j, l) = (j == l) + e(j) * e(l) / (bound_states[std::size_t(j)].first + bound_states[std::size_t(l)].first);
    auto lu = A.partialPivLu();
    Real eBe = e.dot(lu.solve(e)), dBe = de.dot(lu.solve(e));
    return 2 * (2 * dBe + eBe * eBe);
}

// ||(1 + Phi) L f - L (1 + Phi) f||_2 / ||f||_2 over the battery, interior nodes.
template <typename Real>
Real commutation_residual(const FredholmKernel<Real>& phi, const DifferentialOperator<Real>& L, const std::vector<GridFunction<Real>>& battery,
                          int margin = kInteriorMargin) {
    Real worst = 0;
    for (const auto& f : battery) {
        auto Lf = apply(L, f);
        auto r = (Lf + phi.apply(Lf)) - apply(L, f + phi.apply(f));
        Real nf = norm2(f);
        if (nf > 0) worst = std::max(worst, interior_norm2(r, margin) / nf);
    }
    return worst;
}

// ||Omega_+ (1 + Phi) f - Omega_- f||_inf / ||f||_inf over the battery.
template <typename Real>
Real factorization_residual(const DelsarteOperator<Real>& plus, const DelsarteOperator<Real>& minus, const FredholmKernel<Real>& phi,
                            const std::vector<GridFunction<Real>>& battery) {
    Real worst = 0;
    for (const auto& f : battery) {
        auto r = plus.apply(f + phi.apply(f)) - minus.apply(f);
        if (f.max_abs() > 0) worst = std::max(worst, r.max_abs() / f.max_abs());
    }
    return worst;
}

// Sparse CSV of a kernel: x-index, s-index, re, im (nonzero entries only).
template <typename Real>
void write_kernel_matrix_csv(const CMatrix<Real>& K, const std::string& path, const std::string& what) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << "# transmute " << what << "-kernel csv v1\nx_index,s_index,re,im\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < K.rows(); ++i)
        for (Eigen::Index j = 0; j < K.cols(); ++j)
            if (K(i, j) != Complex<Real>(0)) os << i << ',' << j << ',' << K(i, j).real() << ',' << K(i, j).imag() << '\n';
}

}  // namespace transmute
