#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace transmute {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename Real>
using Complex = std::complex<Real>;
template <typename Real>
using CVector = Eigen::Matrix<Complex<Real>, Eigen::Dynamic, 1>;
template <typename Real>
using CMatrix = Eigen::Matrix<Complex<Real>, Eigen::Dynamic, Eigen::Dynamic>;

// Uniform tensor grid on a box, m in {1,2}. Node index is lexicographic in
// the axis indices: node = i1 * n2 + i2.
template <typename Real = double>
struct GridSpec {
    int dim = 0;
    std::array<Real, 2> lo{}, hi{}, h{};
    std::array<int, 2> n{1, 1};

    std::size_t size() const { return dim == 1 ? std::size_t(n[0]) : std::size_t(n[0]) * n[1]; }
    Real coord(int axis, int i) const { return lo[axis] + Real(i) * h[axis]; }
    std::size_t index(int i1, int i2 = 0) const { return dim == 1 ? std::size_t(i1) : std::size_t(i1) * n[1] + i2; }
    std::array<int, 2> unravel(std::size_t k) const {
        if (dim == 1) return {int(k), 0};
        return {int(k / n[1]), int(k % n[1])};
    }
    // stride of one step along an axis in node numbering
    std::size_t stride(int axis) const { return (dim == 2 && axis == 0) ? std::size_t(n[1]) : 1; }

    bool operator==(const GridSpec& o) const {
        if (dim != o.dim) return false;
        for (int j = 0; j < dim; ++j)
            if (lo[j] != o.lo[j] || hi[j] != o.hi[j] || n[j] != o.n[j]) return false;
        return true;
    }
    bool operator!=(const GridSpec& o) const { return !(*this == o); }
};

template <typename Real = double>
GridSpec<Real> make_grid(const std::vector<std::array<Real, 2>>& intervals, const std::vector<int>& counts) {
    if (intervals.size() != counts.size()) throw Error("make_grid: intervals and counts differ in length");
    if (intervals.empty() || intervals.size() > 2) throw Error("make_grid: dim must be 1 or 2");
    GridSpec<Real> g;
    g.dim = int(intervals.size());
    for (int j = 0; j < g.dim; ++j) {
        if (!(intervals[j][0] < intervals[j][1])) throw Error("make_grid: degenerate interval on axis " + std::to_string(j + 1));
        if (counts[j] < 3) throw Error("make_grid: count < 3 on axis " + std::to_string(j + 1));
        g.lo[j] = intervals[j][0];
        g.hi[j] = intervals[j][1];
        g.n[j] = counts[j];
        g.h[j] = (g.hi[j] - g.lo[j]) / Real(counts[j] - 1);
    }
    return g;
}

// Values over grid nodes x channels.
template <typename Real = double>
struct GridFunction {
    GridSpec<Real> grid;
    CMatrix<Real> v;

    GridFunction() = default;
    GridFunction(const GridSpec<Real>& g, int channels) : grid(g), v(CMatrix<Real>::Zero(Eigen::Index(g.size()), channels)) {}
    GridFunction(const GridSpec<Real>& g, CMatrix<Real> values) : grid(g), v(std::move(values)) {
        if (std::size_t(v.rows()) != g.size()) throw Error("GridFunction: value rows do not match node count");
    }

    int channels() const { return int(v.cols()); }
    std::size_t size() const { return grid.size(); }
    Complex<Real>& operator()(std::size_t node, int c = 0) { return v(Eigen::Index(node), c); }
    const Complex<Real>& operator()(std::size_t node, int c = 0) const { return v(Eigen::Index(node), c); }

    bool finite() const { return v.allFinite(); }
    Real max_abs() const { return v.size() ? v.cwiseAbs().maxCoeff() : Real(0); }

    GridFunction& operator+=(const GridFunction& o) { v += o.v; return *this; }
    GridFunction& operator-=(const GridFunction& o) { v -= o.v; return *this; }
    friend GridFunction operator+(GridFunction a, const GridFunction& b) { a.v += b.v; return a; }
    friend GridFunction operator-(GridFunction a, const GridFunction& b) { a.v -= b.v; return a; }
    friend GridFunction operator*(Complex<Real> s, GridFunction a) { a.v *= s; return a; }
};

// Sample a callable f(x1[,x2]) -> complex (scalar channel).
template <typename Real, typename F>
GridFunction<Real> sample(const GridSpec<Real>& g, F&& f) {
    GridFunction<Real> out(g, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        auto ij = g.unravel(k);
        if constexpr (std::is_invocable_v<F, Real>) {
            if (g.dim != 1) throw Error("sample: one-argument callable on a 2D grid");
            out(k) = Complex<Real>(f(g.coord(0, ij[0])));
        } else {
            if (g.dim != 2) throw Error("sample: two-argument callable on a 1D grid");
            out(k) = Complex<Real>(f(g.coord(0, ij[0]), g.coord(1, ij[1])));
        }
    }
    return out;
}

namespace detail {

// Fornberg's recursion: weights for derivative `order` at z using nodes x.
template <typename Real>
std::vector<Real> fornberg(Real z, const std::vector<Real>& x, int order) {
    const int n = int(x.size()) - 1;
    std::vector<std::vector<Real>> c(n + 1, std::vector<Real>(order + 1, Real(0)));
    Real c1 = 1, c4 = x[0] - z;
    c[0][0] = 1;
    for (int i = 1; i <= n; ++i) {
        int mn = std::min(i, order);
        Real c2 = 1, c5 = c4;
        c4 = x[i] - z;
        for (int j = 0; j < i; ++j) {
            Real c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[i][k] = c1 * (Real(k) * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - Real(k) * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<Real> w(n + 1);
    for (int i = 0; i <= n; ++i) w[i] = c[i][order];
    return w;
}

template <typename Real>
struct Stencil {
    int start;
    std::vector<Real> w;
};

// Second-order stencils in units of h = 1 (caller scales by h^-order).
template <typename Real>
std::vector<Stencil<Real>> stencil_table(int n, int order) {
    std::vector<Stencil<Real>> t(n);
    const int half = order == 3 ? 2 : 1;
    const int width = order + 2;
    for (int i = 0; i < n; ++i) {
        int start;
        int len;
        if (i >= half && i + half <= n - 1) {
            start = i - half;
            len = 2 * half + 1;
        } else {
            len = width;
            start = i < half ? 0 : n - width;
        }
        std::vector<Real> xs(len);
        for (int k = 0; k < len; ++k) xs[k] = Real(start + k);
        t[i] = {start, fornberg<Real>(Real(i), xs, order)};
    }
    return t;
}

}  // namespace detail

// Derivative of given order along one axis; second-order accurate everywhere.
template <typename Real>
GridFunction<Real> differentiate(const GridFunction<Real>& f, int axis, int order) {
    const auto& g = f.grid;
    if (axis < 0 || axis >= g.dim) throw Error("differentiate: axis out of range");
    if (order < 1 || order > 3) throw Error("differentiate: unsupported order " + std::to_string(order));
    const int n = g.n[axis];
    if (n < order + 2) throw Error("differentiate: too few points on axis for this order");
    const auto table = detail::stencil_table<Real>(n, order);
    const Real scale = Real(1) / std::pow(g.h[axis], Real(order));
    const std::size_t stride = g.stride(axis);
    const std::size_t lines = g.size() / std::size_t(n);
    GridFunction<Real> out(g, f.channels());
    for (std::size_t line = 0; line < lines; ++line) {
        // first node of this line along `axis`
        std::size_t base = (g.dim == 2 && axis == 1) ? line * std::size_t(n) : line;
        for (int i = 0; i < n; ++i) {
            const auto& s = table[i];
            for (int c = 0; c < f.channels(); ++c) {
                Complex<Real> acc(0);
                for (std::size_t k = 0; k < s.w.size(); ++k) acc += s.w[k] * f(base + std::size_t(s.start + int(k)) * stride, c);
                out(base + std::size_t(i) * stride, c) = acc * scale;
            }
        }
    }
    return out;
}

// Multi-index derivative, composing per-axis stencils in ascending axis order.
template <typename Real>
GridFunction<Real> derivative(const GridFunction<Real>& f, const std::array<int, 2>& alpha) {
    GridFunction<Real> out = f;
    for (int axis = 0; axis < f.grid.dim; ++axis) {
        int k = alpha[axis];
        while (k > 0) {
            int step = std::min(k, 3);
            out = differentiate(out, axis, step);
            k -= step;
        }
    }
    return out;
}

// Trapezoid weights on a 1D run of `count` points with spacing h.
template <typename Real>
std::vector<Real> trapezoid_weights(int count, Real h) {
    std::vector<Real> w(std::max(count, 0), h);
    if (count == 1) w[0] = 0;
    if (count >= 2) w.front() = w.back() = h / 2;
    return w;
}

// Gregory end-corrected trapezoid (fourth order); falls back to trapezoid on
// fewer than six points.
template <typename Real>
std::vector<Real> gregory_weights(int count, Real h) {
    auto w = trapezoid_weights(count, h);
    if (count >= 6) {
        const Real e[3] = {Real(3) / 8, Real(7) / 6, Real(23) / 24};
        for (int k = 0; k < 3; ++k) {
            w[k] = h * e[k];
            w[count - 1 - k] = h * e[k];
        }
    }
    return w;
}

enum class Quadrature { Trapezoid, Gregory };

template <typename Real>
std::vector<Real> quadrature_weights(Quadrature q, int count, Real h) {
    return q == Quadrature::Gregory ? gregory_weights(count, h) : trapezoid_weights(count, h);
}

// Tensor trapezoid weight of a node.
template <typename Real>
Real cell_weight(const GridSpec<Real>& g, std::size_t node) {
    auto ij = g.unravel(node);
    Real w = 1;
    for (int a = 0; a < g.dim; ++a) {
        int i = ij[a];
        w *= (i == 0 || i == g.n[a] - 1) ? g.h[a] / 2 : g.h[a];
    }
    return w;
}

template <typename Real>
Complex<Real> integrate_cells(const GridFunction<Real>& f, int channel = 0) {
    if (!f.finite()) throw Error("integrate_cells: non-finite integrand");
    Complex<Real> s(0);
    for (std::size_t k = 0; k < f.size(); ++k) s += cell_weight(f.grid, k) * f(k, channel);
    return s;
}

// Discrete L2 scalar product <phi, psi> = sum_x w(x) conj(phi)^T psi.
template <typename Real>
Complex<Real> inner(const GridFunction<Real>& phi, const GridFunction<Real>& psi) {
    if (phi.grid != psi.grid || phi.channels() != psi.channels()) throw Error("inner: grid/channel mismatch");
    Complex<Real> s(0);
    for (std::size_t k = 0; k < phi.size(); ++k) {
        Complex<Real> d(0);
        for (int c = 0; c < phi.channels(); ++c) d += std::conj(phi(k, c)) * psi(k, c);
        s += cell_weight(phi.grid, k) * d;
    }
    return s;
}

template <typename Real>
Real norm2(const GridFunction<Real>& f) {
    return std::sqrt(std::max(Real(0), std::real(inner(f, f))));
}

// Degree-k form on the grid; components in lexicographic basis order
// (degree 1, m = 2: dx1, dx2).
template <typename Real = double>
struct FormField {
    int degree = 0;
    GridSpec<Real> grid;
    std::vector<CVector<Real>> comps;

    static int binom(int m, int k) { return (k < 0 || k > m) ? 0 : (k == 0 || k == m ? 1 : m); }
    FormField() = default;
    FormField(const GridSpec<Real>& g, int k) : degree(k), grid(g) {
        int c = binom(g.dim, k);
        if (c == 0) throw Error("FormField: degree out of range");
        comps.assign(c, CVector<Real>::Zero(Eigen::Index(g.size())));
    }
};

// Axis-aligned polyline through grid nodes, given as node index pairs.
struct PolylinePath {
    std::vector<std::array<int, 2>> vertices;
    int orientation = 1;

    PolylinePath reversed() const {
        PolylinePath p{{vertices.rbegin(), vertices.rend()}, orientation};
        return p;
    }
};

template <typename Real>
void validate_path(const GridSpec<Real>& g, const PolylinePath& p) {
    for (const auto& v : p.vertices)
        for (int a = 0; a < g.dim; ++a)
            if (v[a] < 0 || v[a] >= g.n[a]) throw Error("path vertex outside the grid box");
    for (std::size_t k = 1; k < p.vertices.size(); ++k) {
        int moved = 0;
        for (int a = 0; a < 2; ++a) moved += p.vertices[k][a] != p.vertices[k - 1][a];
        if (moved > 1) throw Error("path segment not grid-aligned");
    }
}

// Staircase from node `from` to node `to`; axis_first = 0 moves along axis 1
// first, 1 moves along axis 2 first.
inline PolylinePath staircase(std::array<int, 2> from, std::array<int, 2> to, int axis_first = 0) {
    PolylinePath p;
    p.vertices.push_back(from);
    std::array<int, 2> mid = from;
    mid[axis_first] = to[axis_first];
    if (mid != from) p.vertices.push_back(mid);
    if (to != mid) p.vertices.push_back(to);
    return p;
}

// Line integral of a 1-form (m = 2) along a staircase; per-segment trapezoid.
template <typename Real>
Complex<Real> integrate_path(const FormField<Real>& form, const PolylinePath& path) {
    const auto& g = form.grid;
    if (form.degree != 1) throw Error("integrate_path: form degree must be 1");
    if (g.dim != 2) throw Error("integrate_path: requires m = 2");
    validate_path(g, path);
    Complex<Real> total(0);
    for (std::size_t k = 1; k < path.vertices.size(); ++k) {
        auto p = path.vertices[k - 1], q = path.vertices[k];
        int axis = p[0] != q[0] ? 0 : 1;
        int i0 = p[axis], i1 = q[axis];
        if (i0 == i1) continue;
        int lo = std::min(i0, i1), hi = std::max(i0, i1);
        Complex<Real> s(0);
        for (int i = lo; i <= hi; ++i) {
            std::array<int, 2> node = p;
            node[axis] = i;
            Real w = (i == lo || i == hi) ? g.h[axis] / 2 : g.h[axis];
            s += w * form.comps[axis](Eigen::Index(g.index(node[0], node[1])));
        }
        total += i1 > i0 ? s : -s;
    }
    return Real(path.orientation) * total;
}

// Path integral of a 1-form from `base` to every node along the
// axis-1-then-axis-2 staircase (the Poincare antiderivative on a box).
template <typename Real>
CVector<Real> staircase_cumulative(const FormField<Real>& form, std::array<int, 2> base) {
    const auto& g = form.grid;
    if (form.degree != 1 || g.dim != 2) throw Error("staircase_cumulative: needs a 1-form on a 2D grid");
    const int n1 = g.n[0], n2 = g.n[1];
    std::vector<Complex<Real>> leg1(n1, Complex<Real>(0));
    const auto& A = form.comps[0];
    const auto& B = form.comps[1];
    for (int i = base[0] + 1; i < n1; ++i)
        leg1[i] = leg1[i - 1] + g.h[0] / 2 * (A(Eigen::Index(g.index(i - 1, base[1]))) + A(Eigen::Index(g.index(i, base[1]))));
    for (int i = base[0] - 1; i >= 0; --i)
        leg1[i] = leg1[i + 1] - g.h[0] / 2 * (A(Eigen::Index(g.index(i + 1, base[1]))) + A(Eigen::Index(g.index(i, base[1]))));
    CVector<Real> out(Eigen::Index(g.size()));
    for (int i = 0; i < n1; ++i) {
        auto at = [&](int j) { return B(Eigen::Index(g.index(i, j))); };
        out(Eigen::Index(g.index(i, base[1]))) = leg1[i];
        for (int j = base[1] + 1; j < n2; ++j)
            out(Eigen::Index(g.index(i, j))) = out(Eigen::Index(g.index(i, j - 1))) + g.h[1] / 2 * (at(j - 1) + at(j));
        for (int j = base[1] - 1; j >= 0; --j)
            out(Eigen::Index(g.index(i, j))) = out(Eigen::Index(g.index(i, j + 1))) - g.h[1] / 2 * (at(j + 1) + at(j));
    }
    return out;
}

// Exterior derivative of a 1-form on a 2D grid: d(A dx1 + B dx2) = (dB/dx1 - dA/dx2) dx1^dx2.
template <typename Real>
CVector<Real> exterior_derivative(const FormField<Real>& form) {
    if (form.degree != 1 || form.grid.dim != 2) throw Error("exterior_derivative: needs a 1-form on a 2D grid");
    GridFunction<Real> A(form.grid, CMatrix<Real>(form.comps[0]));
    GridFunction<Real> B(form.grid, CMatrix<Real>(form.comps[1]));
    return (differentiate(B, 0, 1).v - differentiate(A, 1, 1).v).col(0);
}

// Gradient of a scalar field as a 1-form.
template <typename Real>
FormField<Real> exterior_derivative0(const GridFunction<Real>& f) {
    FormField<Real> d(f.grid, 1);
    for (int a = 0; a < f.grid.dim; ++a) d.comps[a] = differentiate(f, a, 1).v.col(0);
    return d;
}

// Nodes at least `margin` steps from every box face.
template <typename Real>
bool interior(const GridSpec<Real>& g, std::size_t node, int margin) {
    auto ij = g.unravel(node);
    for (int a = 0; a < g.dim; ++a)
        if (ij[a] < margin || ij[a] > g.n[a] - 1 - margin) return false;
    return true;
}

template <typename Real>
Real interior_max_abs(const GridSpec<Real>& g, const CMatrix<Real>& v, int margin) {
    Real m = 0;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (interior(g, k, margin)) m = std::max(m, v.row(Eigen::Index(k)).cwiseAbs().maxCoeff());
    return m;
}

constexpr int kInteriorMargin = 4;

// ---- CSV ----

inline constexpr const char* kGridCsvSchema = "# transmute grid-function csv v1";

template <typename Real>
void write_csv(const GridFunction<Real>& f, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << kGridCsvSchema << '\n';
    os << "x1";
    if (f.grid.dim == 2) os << ",x2";
    for (int c = 0; c < f.channels(); ++c) os << ",re_c" << c << ",im_c" << c;
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < f.size(); ++k) {
        auto ij = f.grid.unravel(k);
        os << f.grid.coord(0, ij[0]);
        if (f.grid.dim == 2) os << ',' << f.grid.coord(1, ij[1]);
        for (int c = 0; c < f.channels(); ++c) os << ',' << f(k, c).real() << ',' << f(k, c).imag();
        os << '\n';
    }
}

// Reads a CSV written by write_csv onto a known grid; coordinates are checked.
template <typename Real>
GridFunction<Real> read_csv(const GridSpec<Real>& g, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    std::string line;
    std::vector<std::vector<Real>> rows;
    int width = -1;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            width = int(std::count(line.begin(), line.end(), ',')) + 1;
            continue;
        }
        std::vector<Real> r;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) r.push_back(Real(std::stod(cell)));
        if (int(r.size()) != width) throw Error("read_csv: ragged row in " + path);
        rows.push_back(std::move(r));
    }
    if (rows.size() != g.size()) throw Error("read_csv: node count mismatch in " + path);
    int channels = (width - g.dim) / 2;
    if (channels < 1 || g.dim + 2 * channels != width) throw Error("read_csv: bad column count in " + path);
    GridFunction<Real> f(g, channels);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        auto ij = g.unravel(k);
        for (int a = 0; a < g.dim; ++a)
            if (std::abs(rows[k][a] - g.coord(a, ij[a])) > Real(1e-9) * (1 + std::abs(g.coord(a, ij[a]))))
                throw Error("read_csv: coordinates do not match grid in " + path);
        for (int c = 0; c < channels; ++c) f(k, c) = {rows[k][g.dim + 2 * c], rows[k][g.dim + 2 * c + 1]};
    }
    return f;
}

}  // namespace transmute
