#pragma once

#include "numgrid.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace transmute {

// alpha = (alpha_1, alpha_2); unused axes stay 0.
using MultiIndex = std::array<int, 2>;

inline int total_order(const MultiIndex& a) { return a[0] + a[1]; }

inline std::string to_string(const MultiIndex& a, int dim) {
    return dim == 1 ? "(" + std::to_string(a[0]) + ")" : "(" + std::to_string(a[0]) + "," + std::to_string(a[1]) + ")";
}

// All multi-indices with |alpha| <= order, graded then lexicographic.
inline std::vector<MultiIndex> multi_indices(int dim, int order) {
    std::vector<MultiIndex> out;
    for (int k = 0; k <= order; ++k) {
        if (dim == 1) out.push_back({k, 0});
        else
            for (int a = k; a >= 0; --a) out.push_back({a, k - a});
    }
    return out;
}

// N x N matrix field sampled on the grid: row per node, entry (r,c) in column r*N + c.
template <typename Real = double>
struct CoefField {
    int N = 1;
    CMatrix<Real> v;

    CoefField() = default;
    CoefField(std::size_t nodes, int channels) : N(channels), v(CMatrix<Real>::Zero(Eigen::Index(nodes), channels * channels)) {}

    CMatrix<Real> at(std::size_t node) const {
        CMatrix<Real> m(N, N);
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < N; ++c) m(r, c) = v(Eigen::Index(node), r * N + c);
        return m;
    }
    void set(std::size_t node, const CMatrix<Real>& m) {
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < N; ++c) v(Eigen::Index(node), r * N + c) = m(r, c);
    }
    bool is_zero() const { return v.size() == 0 || v.cwiseAbs().maxCoeff() == Real(0); }
};

// L = sum_alpha a_alpha(x) d^alpha.
template <typename Real = double>
struct DifferentialOperator {
    std::string id = "L";
    GridSpec<Real> grid;
    int N = 1;
    int order = 0;
    std::map<MultiIndex, CoefField<Real>> coeffs;

    DifferentialOperator() = default;
    DifferentialOperator(const GridSpec<Real>& g, int channels, int ord, std::string name = "L")
        : id(std::move(name)), grid(g), N(channels), order(ord) {
        if (channels < 1 || channels > 4) throw Error("DifferentialOperator: channels must be in 1..4");
        if (ord < 0 || ord > 3) throw Error("DifferentialOperator: order must be in 0..3");
    }

    CoefField<Real>& coef(const MultiIndex& a) {
        if (total_order(a) > order) throw Error("coefficient " + to_string(a, grid.dim) + " exceeds operator order");
        if (grid.dim == 1 && a[1] != 0) throw Error("coefficient index has an axis-2 entry on a 1D grid");
        auto it = coeffs.find(a);
        if (it == coeffs.end()) it = coeffs.emplace(a, CoefField<Real>(grid.size(), N)).first;
        return it->second;
    }

    // Constant scalar coefficient times identity.
    DifferentialOperator& set_constant(const MultiIndex& a, Complex<Real> c) {
        auto& f = coef(a);
        for (int r = 0; r < N; ++r) f.v.col(r * N + r).setConstant(c);
        return *this;
    }
    // Constant N x N matrix coefficient.
    DifferentialOperator& set_constant(const MultiIndex& a, const CMatrix<Real>& m) {
        if (m.rows() != N || m.cols() != N) throw Error("matrix coefficient must be N x N");
        auto& f = coef(a);
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < N; ++c) f.v.col(r * N + c).setConstant(m(r, c));
        return *this;
    }
    // Scalar field times identity, from a callable on coordinates.
    template <typename Fn>
    DifferentialOperator& set_field(const MultiIndex& a, Fn&& fn) {
        auto s = sample(grid, std::forward<Fn>(fn));
        auto& f = coef(a);
        for (int r = 0; r < N; ++r) f.v.col(r * N + r) = s.v.col(0);
        return *this;
    }

    int effective_order() const {
        int k = 0;
        for (const auto& [a, f] : coeffs)
            if (!f.is_zero()) k = std::max(k, total_order(a));
        return k;
    }

    bool all_zero() const {
        for (const auto& [a, f] : coeffs)
            if (!f.is_zero()) return false;
        return true;
    }

    // Invariants: consistent shapes, finite entries, declared order attained
    // (the zero operator is admitted as the degenerate order-0 case).
    void validate() const {
        for (const auto& [a, f] : coeffs) {
            if (f.N != N || std::size_t(f.v.rows()) != grid.size()) throw Error(id + ": coefficient shape mismatch");
            if (!f.v.allFinite()) throw Error(id + ": non-finite coefficient " + to_string(a, grid.dim));
            if (total_order(a) > order) throw Error(id + ": coefficient above declared order");
        }
        if (!all_zero() && effective_order() != order) throw Error(id + ": leading coefficients vanish identically");
    }
};

template <typename Real>
GridFunction<Real> apply(const DifferentialOperator<Real>& L, const GridFunction<Real>& f) {
    if (f.grid != L.grid || f.channels() != L.N) throw Error("apply: grid/channel mismatch for " + L.id);
    GridFunction<Real> out(L.grid, L.N);
    for (const auto& [a, cf] : L.coeffs) {
        if (cf.is_zero()) continue;
        auto d = total_order(a) == 0 ? f : derivative(f, a);
        for (std::size_t k = 0; k < f.size(); ++k)
            for (int r = 0; r < L.N; ++r) {
                Complex<Real> s(0);
                for (int c = 0; c < L.N; ++c) s += cf.v(Eigen::Index(k), r * L.N + c) * d(k, c);
                out(k, r) += s;
            }
    }
    return out;
}

// Coefficient field as a grid function with N*N channels (for differentiation).
template <typename Real>
GridFunction<Real> as_grid_function(const GridSpec<Real>& g, const CoefField<Real>& c) {
    return GridFunction<Real>(g, c.v);
}

// Entrywise conjugate transpose at every node.
template <typename Real>
CoefField<Real> hermitian(const CoefField<Real>& a) {
    CoefField<Real> out(std::size_t(a.v.rows()), a.N);
    for (int r = 0; r < a.N; ++r)
        for (int c = 0; c < a.N; ++c) out.v.col(r * a.N + c) = a.v.col(c * a.N + r).conjugate();
    return out;
}

struct LeibnizTerm {
    MultiIndex alpha;  // source term a_alpha d^alpha
    MultiIndex beta;   // receives (-1)^|alpha| C(alpha,beta) d^(alpha-beta) a_alpha^H
    long multiplier;   // (-1)^|alpha| * C(alpha, beta)
};

template <typename Real = double>
struct AdjointExpansionCertificate {
    std::string source_id;
    std::map<MultiIndex, CoefField<Real>> table;
    std::vector<LeibnizTerm> terms;
    std::vector<CoefField<Real>> contributions;  // one per term, same order

    // Re-sums the per-term contributions; reproduces `table` exactly.
    std::map<MultiIndex, CoefField<Real>> recombine(std::size_t nodes, int N) const {
        std::map<MultiIndex, CoefField<Real>> out;
        for (std::size_t t = 0; t < terms.size(); ++t) {
            auto it = out.find(terms[t].beta);
            if (it == out.end()) it = out.emplace(terms[t].beta, CoefField<Real>(nodes, N)).first;
            it->second.v += contributions[t].v;
        }
        return out;
    }
};

inline long binomial(int n, int k) {
    long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// L* = sum_alpha (-1)^|alpha| d^alpha (a_alpha^H .), expanded by Leibniz:
// sum_{beta <= alpha} (-1)^|alpha| C(alpha,beta) (d^(alpha-beta) a_alpha^H) d^beta.
template <typename Real>
std::pair<DifferentialOperator<Real>, AdjointExpansionCertificate<Real>> formal_adjoint(const DifferentialOperator<Real>& L) {
    DifferentialOperator<Real> A(L.grid, L.N, L.order, L.id + "*");
    AdjointExpansionCertificate<Real> cert;
    cert.source_id = L.id;
    const std::size_t nodes = L.grid.size();
    for (const auto& [alpha, cf] : L.coeffs) {
        auto aH = as_grid_function(L.grid, hermitian(cf));
        const int sign = total_order(alpha) % 2 ? -1 : 1;
        for (int b0 = 0; b0 <= alpha[0]; ++b0)
            for (int b1 = 0; b1 <= alpha[1]; ++b1) {
                MultiIndex beta{b0, b1};
                MultiIndex rest{alpha[0] - b0, alpha[1] - b1};
                long mult = sign * binomial(alpha[0], b0) * binomial(alpha[1], b1);
                CoefField<Real> contrib(nodes, L.N);
                contrib.v = (total_order(rest) == 0 ? aH : derivative(aH, rest)).v * Real(mult);
                cert.terms.push_back({alpha, beta, mult});
                cert.contributions.push_back(contrib);
            }
    }
    cert.table = cert.recombine(nodes, L.N);
    A.coeffs = cert.table;
    if (!A.all_zero()) A.order = std::max(A.effective_order(), 0);
    return {A, cert};
}

// (L* phi, psi) - (phi, L psi); inputs must vanish near the boundary.
template <typename Real>
Complex<Real> adjoint_defect(const DifferentialOperator<Real>& L, const GridFunction<Real>& phi, const GridFunction<Real>& psi,
                             Real vanish_tol = Real(1e-12)) {
    const int band = std::max(L.order, 1);
    for (const auto* f : {&phi, &psi})
        for (std::size_t k = 0; k < f->size(); ++k)
            if (!interior(L.grid, k, band) && f->v.row(Eigen::Index(k)).cwiseAbs().maxCoeff() > vanish_tol)
                throw Error("adjoint_defect: inputs do not vanish near the boundary");
    auto Ls = formal_adjoint(L).first;
    return inner(apply(Ls, phi), psi) - inner(phi, apply(L, psi));
}

// Merge a sum of operators sharing grid and channels.
template <typename Real>
DifferentialOperator<Real> linear_combination(const std::vector<std::pair<Complex<Real>, const DifferentialOperator<Real>*>>& terms,
                                              std::string name) {
    if (terms.empty()) throw Error("linear_combination: no terms");
    const auto& g = terms.front().second->grid;
    int N = terms.front().second->N;
    int ord = 0;
    for (const auto& [c, op] : terms) {
        if (op->grid != g || op->N != N) throw Error("linear_combination: grid/channel mismatch");
        ord = std::max(ord, op->order);
    }
    DifferentialOperator<Real> out(g, N, ord, std::move(name));
    for (const auto& [c, op] : terms)
        for (const auto& [a, f] : op->coeffs) out.coef(a).v += c * f.v;
    if (!out.all_zero()) out.order = out.effective_order();
    return out;
}

}  // namespace transmute
