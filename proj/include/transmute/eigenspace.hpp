#pragma once

#include "concomitant.hpp"

#include <filesystem>
#include <functional>
#include <optional>

namespace transmute {

template <typename Real = double>
struct SpectralGrid {
    std::vector<Complex<Real>> points;
    std::vector<Real> weights;

    std::size_t size() const { return points.size(); }

    // Uniform weights 1/K by default.
    static SpectralGrid uniform(std::vector<Complex<Real>> pts) {
        SpectralGrid s{std::move(pts), {}};
        s.weights.assign(s.points.size(), s.points.empty() ? Real(0) : Real(1) / Real(s.points.size()));
        return s;
    }

    void validate() const {
        if (weights.size() != points.size()) throw Error("SpectralGrid: points and weights differ in length");
        if (points.size() > 32) throw Error("SpectralGrid: at most 32 spectral points");
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (!(weights[i] > 0) || !std::isfinite(weights[i])) throw Error("SpectralGrid: weights must be positive and finite");
            for (std::size_t j = 0; j < i; ++j)
                if (points[i] == points[j]) throw Error("SpectralGrid: spectral points must be distinct");
        }
    }
};

// Gamma: a node (m = 1) or a node line {x_axis = index} (m = 2).
struct GammaDescriptor {
    int axis = 0;
    int index = 0;
};

enum class FamilySide { Direct, Adjoint };

template <typename Real = double>
struct SpectralFamily {
    SpectralGrid<Real> sigma;
    std::vector<GridFunction<Real>> members;
    std::string op_id;
    std::string recipe;
    GammaDescriptor gamma;
    FamilySide side = FamilySide::Direct;

    std::size_t size() const { return members.size(); }
    const GridSpec<Real>& grid() const { return members.front().grid; }
};

// Initial data at Gamma for ODE marching: derivatives 1..n-1 (psi(Gamma) = 0),
// each an N-vector, as a function of the spectral point.
template <typename Real = double>
struct FamilyRecipe {
    std::string name;
    std::function<std::vector<CVector<Real>>(Complex<Real> xi, int N, int order)> initial;
    // m = 2 analytic preset: closed-form member for a constant-coefficient operator.
    std::function<GridFunction<Real>(const DifferentialOperator<Real>&, Complex<Real> xi, const GammaDescriptor&)> closed_form;
};

namespace recipes {

// psi(Gamma) = 0, psi'(Gamma) = scale * xi * e_channel, higher derivatives zero.
template <typename Real = double>
FamilyRecipe<Real> slope(Complex<Real> scale = Real(1), int channel = 0) {
    return {"slope", [scale, channel](Complex<Real> xi, int N, int order) {
                std::vector<CVector<Real>> d(std::size_t(std::max(order - 1, 0)), CVector<Real>::Zero(N));
                if (!d.empty()) d[0](channel) = scale * xi;
                return d;
            },
            nullptr};
}

// psi'(Gamma) = scale * e_channel regardless of xi (xi labels the operator).
template <typename Real = double>
FamilyRecipe<Real> unit_slope(Complex<Real> scale = Real(1), int channel = 0) {
    return {"unit-slope", [scale, channel](Complex<Real>, int N, int order) {
                std::vector<CVector<Real>> d(std::size_t(std::max(order - 1, 0)), CVector<Real>::Zero(N));
                if (!d.empty()) d[0](channel) = scale;
                return d;
            },
            nullptr};
}

// m = 2, L = a d1^2 + b d2^2 + c (constants), Gamma = {x2 = x2(index)}:
// psi = exp(p (x1 - x1_mid)) sin(xi (x2 - x2_Gamma)) with a p^2 - b xi^2 + c = 0.
template <typename Real = double>
FamilyRecipe<Real> exp_sin() {
    FamilyRecipe<Real> r;
    r.name = "exp-sin";
    r.closed_form = [](const DifferentialOperator<Real>& L, Complex<Real> xi, const GammaDescriptor& gam) {
        const auto& g = L.grid;
        if (g.dim != 2 || gam.axis != 1) throw Error("exp-sin preset needs m = 2 and Gamma a line x2 = const");
        auto value = [&](const MultiIndex& ix) -> Complex<Real> {
            auto it = L.coeffs.find(ix);
            return it == L.coeffs.end() ? Complex<Real>(0) : it->second.v(0, 0);
        };
        for (const auto& [ix, f] : L.coeffs) {
            bool allowed = ix == MultiIndex{2, 0} || ix == MultiIndex{0, 2} || ix == MultiIndex{0, 0};
            Real spread = (f.v.rowwise() - f.v.row(0)).cwiseAbs().maxCoeff();
            if ((!allowed && !f.is_zero()) || spread > 0 || L.N != 1)
                throw Error("exp-sin preset needs a scalar constant-coefficient a d1^2 + b d2^2 + c");
        }
        Complex<Real> a = value({2, 0}), b = value({0, 2}), c = value({0, 0});
        if (a == Complex<Real>(0)) throw Error("exp-sin preset needs a nonzero d1^2 coefficient");
        Complex<Real> p = std::sqrt((b * xi * xi - c) / a);
        Real x1m = (g.lo[0] + g.hi[0]) / 2, x2g = g.coord(1, gam.index);
        return sample(g, [&](Real x1, Real x2) { return std::exp(p * (x1 - x1m)) * std::sin(xi * (x2 - x2g)); });
    };
    return r;
}

}  // namespace recipes

namespace detail {

// Cubic interpolation of node samples at the midpoint of [i, i+1].
template <typename Real, typename Get>
CMatrix<Real> midpoint_value(int i, int n, Get&& get) {
    if (i >= 1 && i + 2 <= n - 1)
        return (Real(-1) * get(i - 1) + Real(9) * get(i) + Real(9) * get(i + 1) - Real(1) * get(i + 2)) / Real(16);
    if (i < 1) return (Real(5) * get(0) + Real(15) * get(1) - Real(5) * get(2) + Real(1) * get(3)) / Real(16);
    return (Real(1) * get(n - 4) - Real(5) * get(n - 3) + Real(15) * get(n - 2) + Real(5) * get(n - 1)) / Real(16);
}

template <typename Real>
struct OdeSystem {
    int n, N;
    // companion blocks B_k(x) = -A_n^{-1} A_k, k < n, at nodes and midpoints
    std::vector<std::vector<CMatrix<Real>>> at_node, at_mid;

    CVector<Real> rhs(const std::vector<CMatrix<Real>>& B, const CVector<Real>& y) const {
        CVector<Real> d(n * N);
        for (int k = 0; k + 1 < n; ++k) d.segment(k * N, N) = y.segment((k + 1) * N, N);
        CVector<Real> top = CVector<Real>::Zero(N);
        for (int k = 0; k < n; ++k) top += B[std::size_t(k)] * y.segment(k * N, N);
        d.segment((n - 1) * N, N) = top;
        return d;
    }
};

template <typename Real>
OdeSystem<Real> companion(const DifferentialOperator<Real>& L) {
    const auto& g = L.grid;
    const int n = L.order, N = L.N, nodes = g.n[0];
    OdeSystem<Real> sys{n, N, {}, {}};
    auto coef_at = [&](int k, int i) -> CMatrix<Real> {
        auto it = L.coeffs.find({k, 0});
        return it == L.coeffs.end() ? CMatrix<Real>::Zero(N, N) : it->second.at(std::size_t(i));
    };
    auto blocks = [&](auto&& get) {
        Eigen::PartialPivLU<CMatrix<Real>> lu(get(n));
        if (std::abs(lu.determinant()) < std::numeric_limits<Real>::min() * 1e10)
            throw Error("marching: leading coefficient is singular");
        std::vector<CMatrix<Real>> B;
        for (int k = 0; k < n; ++k) B.push_back(-lu.solve(get(k)));
        return B;
    };
    for (int i = 0; i < nodes; ++i) sys.at_node.push_back(blocks([&](int k) { return coef_at(k, i); }));
    for (int i = 0; i + 1 < nodes; ++i)
        sys.at_mid.push_back(blocks([&](int k) { return midpoint_value<Real>(i, nodes, [&](int j) { return coef_at(k, j); }); }));
    return sys;
}

}  // namespace detail

// Classical RK4 marching of L psi = 0 (m = 1) from Gamma in both directions.
template <typename Real>
GridFunction<Real> march_kernel(const DifferentialOperator<Real>& L, int gamma, const std::vector<CVector<Real>>& initial,
                                Real overflow = Real(1e150)) {
    const auto& g = L.grid;
    if (g.dim != 1) throw Error("march_kernel: ODE marching needs m = 1");
    if (L.order < 1) throw Error("march_kernel: operator order must be >= 1");
    const int n = L.order, N = L.N, nodes = g.n[0];
    if (gamma < 0 || gamma >= nodes) throw Error("march_kernel: Gamma node outside the grid");
    auto sys = detail::companion(L);
    CVector<Real> y0 = CVector<Real>::Zero(n * N);
    for (int k = 1; k < n; ++k) y0.segment(k * N, N) = initial.at(std::size_t(k - 1));
    GridFunction<Real> psi(g, N);
    psi.v.row(gamma) = y0.head(N).transpose();
    for (int dir : {+1, -1}) {
        CVector<Real> y = y0;
        const Real h = dir * g.h[0];
        for (int i = gamma; dir > 0 ? i + 1 < nodes : i > 0; i += dir) {
            const int j = i + dir;
            const auto& Bi = sys.at_node[std::size_t(i)];
            const auto& Bm = sys.at_mid[std::size_t(std::min(i, j))];
            const auto& Bj = sys.at_node[std::size_t(j)];
            CVector<Real> k1 = sys.rhs(Bi, y);
            CVector<Real> k2 = sys.rhs(Bm, y + h / 2 * k1);
            CVector<Real> k3 = sys.rhs(Bm, y + h / 2 * k2);
            CVector<Real> k4 = sys.rhs(Bj, y + h * k3);
            y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
            if (!y.allFinite() || y.cwiseAbs().maxCoeff() > overflow)
                throw Error("march_kernel: marching blow-up at x = " + std::to_string(g.coord(0, j)));
            psi.v.row(j) = y.head(N).transpose();
        }
    }
    return psi;
}

template <typename Real = double>
struct MemberCheck {
    Real membership = 0;
    Real boundary = 0;
    bool pass = false;
};

template <typename Real = double>
struct MembershipReport {
    std::vector<MemberCheck<Real>> members;
    Real gram_sigma_min = 0;
    Real member_tol = 0;
    Real gram_floor = 0;
    bool pass = true;
};

// Smallest singular value of the Gram matrix of the normalized members.
template <typename Real>
Real gram_sigma_min(const std::vector<GridFunction<Real>>& members) {
    const auto K = Eigen::Index(members.size());
    if (K == 0) return Real(1);
    CMatrix<Real> G(K, K);
    std::vector<Real> nrm(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) nrm[i] = norm2(members[i]);
    for (Eigen::Index i = 0; i < K; ++i)
        for (Eigen::Index j = 0; j < K; ++j) {
            Real d = nrm[std::size_t(i)] * nrm[std::size_t(j)];
            G(i, j) = d > 0 ? inner(members[std::size_t(i)], members[std::size_t(j)]) / d : Complex<Real>(0);
        }
    Eigen::JacobiSVD<CMatrix<Real>> svd(G);
    return svd.singularValues()(K - 1);
}

template <typename Real>
Real gamma_residual(const GridFunction<Real>& f, const GammaDescriptor& gam) {
    const auto& g = f.grid;
    Real scale = f.max_abs();
    if (scale == Real(0)) return 0;
    Real m = 0;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (g.unravel(k)[g.dim == 1 ? 0 : gam.axis] == gam.index) m = std::max(m, f.v.row(Eigen::Index(k)).cwiseAbs().maxCoeff());
    return m / scale;
}

template <typename Real>
MembershipReport<Real> membership_report(const SpectralFamily<Real>& fam, const DifferentialOperator<Real>& L,
                                         Real member_tol = Real(1e-4), Real gram_floor = Real(1e-10)) {
    MembershipReport<Real> rep;
    rep.member_tol = member_tol;
    rep.gram_floor = gram_floor;
    for (const auto& f : fam.members) {
        if (f.grid != L.grid) throw Error("membership_report: family and operator grids differ");
        MemberCheck<Real> c;
        c.membership = f.max_abs() > 0 ? membership_residual(L, f) : std::numeric_limits<Real>::infinity();
        c.boundary = gamma_residual(f, fam.gamma);
        c.pass = c.membership <= member_tol && c.boundary <= member_tol;
        rep.pass = rep.pass && c.pass;
        rep.members.push_back(c);
    }
    rep.gram_sigma_min = gram_sigma_min(fam.members);
    if (!fam.members.empty() && rep.gram_sigma_min < gram_floor) rep.pass = false;
    return rep;
}

template <typename Real>
void enforce_family(const SpectralFamily<Real>& fam, const DifferentialOperator<Real>& L, Real member_tol) {
    auto rep = membership_report(fam, L, member_tol);
    for (std::size_t k = 0; k < rep.members.size(); ++k) {
        const auto& c = rep.members[k];
        if (!c.pass)
            throw Error("family member " + std::to_string(k) + " violates invariants (membership " + std::to_string(c.membership) +
                        ", boundary " + std::to_string(c.boundary) + ", tol " + std::to_string(member_tol) + ")");
    }
    if (!rep.pass) throw Error("family members are linearly dependent (Gram sigma_min " + std::to_string(rep.gram_sigma_min) + ")");
}

template <typename Real>
SpectralFamily<Real> build_kernel_family(const DifferentialOperator<Real>& L, const SpectralGrid<Real>& sigma,
                                         const GammaDescriptor& gamma, const FamilyRecipe<Real>& recipe,
                                         Real member_tol = Real(1e-4)) {
    sigma.validate();
    SpectralFamily<Real> fam{sigma, {}, L.id, recipe.name, gamma, FamilySide::Direct};
    for (const auto& xi : sigma.points) {
        if (L.grid.dim == 1) {
            if (!recipe.initial) throw Error("recipe '" + recipe.name + "' has no marching data");
            auto psi = march_kernel(L, gamma.index, recipe.initial(xi, L.N, L.order));
            if (psi.max_abs() == Real(0)) throw Error("family member is identically zero (Gamma constraint leaves no kernel)");
            fam.members.push_back(std::move(psi));
        } else {
            if (!recipe.closed_form) throw Error("recipe '" + recipe.name + "' has no m = 2 closed form");
            fam.members.push_back(recipe.closed_form(L, xi, gamma));
        }
    }
    enforce_family(fam, L, member_tol);
    return fam;
}

template <typename Real>
SpectralFamily<Real> adjoint_kernel_family(const DifferentialOperator<Real>& L, const SpectralGrid<Real>& sigma,
                                           const GammaDescriptor& gamma, const FamilyRecipe<Real>& recipe,
                                           Real member_tol = Real(1e-4)) {
    auto Ls = formal_adjoint(L).first;
    auto fam = build_kernel_family(Ls, sigma, gamma, recipe, member_tol);
    fam.side = FamilySide::Adjoint;
    return fam;
}

// Manifest: spectral points, weights, recipe, Gamma; members as CSV files.
template <typename Real>
void write_manifest(const SpectralFamily<Real>& fam, const std::string& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir + "/" + stem + ".manifest");
    if (!os) throw Error("cannot write manifest in " + dir);
    os << "# transmute family manifest v1\n";
    os << "operator = " << fam.op_id << "\nrecipe = " << fam.recipe << "\nside = "
       << (fam.side == FamilySide::Direct ? "direct" : "adjoint") << "\ngamma_axis = " << fam.gamma.axis + 1
       << "\ngamma_index = " << fam.gamma.index << "\nsize = " << fam.size() << '\n'
       << std::setprecision(17);
    for (std::size_t k = 0; k < fam.size(); ++k) {
        std::string file = stem + "_m" + std::to_string(k) + ".csv";
        os << "member " << k << " = " << fam.sigma.points[k].real() << ' ' << fam.sigma.points[k].imag() << ' ' << fam.sigma.weights[k]
           << ' ' << file << '\n';
        write_csv(fam.members[k], dir + "/" + file);
    }
}

template <typename Real>
SpectralFamily<Real> read_manifest(const GridSpec<Real>& g, const std::string& dir, const std::string& stem) {
    std::ifstream is(dir + "/" + stem + ".manifest");
    if (!is) throw Error("cannot read manifest " + dir + "/" + stem + ".manifest");
    SpectralFamily<Real> fam;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find(" = ");
        if (eq == std::string::npos) throw Error("manifest: malformed line '" + line + "'");
        std::string key = line.substr(0, eq), val = line.substr(eq + 3);
        if (key == "operator") fam.op_id = val;
        else if (key == "recipe") fam.recipe = val;
        else if (key == "side") fam.side = val == "adjoint" ? FamilySide::Adjoint : FamilySide::Direct;
        else if (key == "gamma_axis") fam.gamma.axis = std::stoi(val) - 1;
        else if (key == "gamma_index") fam.gamma.index = std::stoi(val);
        else if (key == "size") continue;
        else if (key.rfind("member ", 0) == 0) {
            std::istringstream ss(val);
            Real re, im, w;
            std::string file;
            ss >> re >> im >> w >> file;
            fam.sigma.points.emplace_back(re, im);
            fam.sigma.weights.push_back(w);
            fam.members.push_back(read_csv(g, dir + "/" + file));
        } else
            throw Error("manifest: unknown key '" + key + "'");
    }
    return fam;
}

}  // namespace transmute
