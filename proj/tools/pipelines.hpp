#pragma once

// Subcommand pipelines: each runs one verification scenario, appends its
// checks to a RunReport and writes CSV artifacts to the output directory.

#include "scenario.hpp"

#include <transmute/concomitant.hpp>
#include <transmute/glm.hpp>
#include <transmute/pencil.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>

namespace transmute::cli {

// Threshold in the shortest readable form: 1e-4, 1.8, 0.25.
inline std::string format_threshold(double t) {
    double l = std::log10(t);
    if (std::abs(l - std::round(l)) < 1e-12) {
        long e = std::lround(l);
        return e == 0 ? "1" : "1e" + std::to_string(e);
    }
    return format_number(t);
}

inline std::string format_measured(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::scientific << std::setprecision(3) << v;
    return os.str();
}

struct Check {
    std::string name;
    bool at_most = true;  // value <= threshold, else value >= threshold
    double value = 0, threshold = 0;
    std::string provenance;
    bool pass = false;
};

struct RunReport {
    std::string subcommand, config;
    unsigned seed = 0;
    std::vector<Check> checks;
    std::vector<std::string> artifacts;
    std::vector<std::string> notes;
    std::string stage;    // check currently being computed
    std::string failure;  // numerical failure surfaced by the library
    double seconds = 0;

    void at_most(const std::string& name, double value, double threshold, const std::string& prov) {
        checks.push_back({name, true, value, threshold, prov, value <= threshold});
    }
    void at_least(const std::string& name, double value, double threshold, const std::string& prov) {
        checks.push_back({name, false, value, threshold, prov, value >= threshold});
    }
    bool pass() const {
        if (!failure.empty()) return false;
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
    std::string render() const {
        std::ostringstream os;
        os << "transmute " << subcommand << "\nconfig: " << config << "\nseed: " << seed << "\n\n";
        for (const auto& c : checks)
            os << c.name << (c.at_most ? " ≤ " : " ≥ ") << format_threshold(c.threshold) << ": " << (c.pass ? "pass" : "FAIL")
               << " (measured " << format_measured(c.value) << "; " << c.provenance << ")\n";
        if (!failure.empty()) os << stage << ": ERROR: " << failure << "\n";
        for (const auto& n : notes) os << "note: " << n << "\n";
        if (!artifacts.empty()) {
            os << "\nartifacts:";
            for (const auto& a : artifacts) os << ' ' << a;
            os << '\n';
        }
        os << "\nelapsed: " << std::fixed << std::setprecision(2) << seconds << " s\nstatus: " << (pass() ? "pass" : "FAIL") << '\n';
        return os.str();
    }
};

// Column CSV with a schema header; values at full precision.
class CsvWriter {
public:
    CsvWriter(const std::string& dir, const std::string& name, const std::string& schema, const std::string& columns, RunReport& rep)
        : os_((std::filesystem::path(dir) / name).string()) {
        if (!os_) throw Error("cannot write " + (std::filesystem::path(dir) / name).string());
        os_ << "# transmute " << schema << " csv v1\n" << columns << '\n' << std::setprecision(17);
        rep.artifacts.push_back(name);
    }
    template <typename... T>
    void row(const T&... v) {
        const char* sep = "";
        ((os_ << sep << v, sep = ","), ...);
        os_ << '\n';
    }

private:
    std::ofstream os_;
};

namespace detail {

inline std::string artifact(const std::string& dir, const std::string& name, RunReport& rep) {
    rep.artifacts.push_back(name);
    return (std::filesystem::path(dir) / name).string();
}

inline FamilyRecipe<double> make_recipe(const FamilyConfig& fc) {
    if (fc.recipe == "slope") return recipes::slope<double>(fc.scale, fc.channel);
    if (fc.recipe == "unit_slope") return recipes::unit_slope<double>(fc.scale, fc.channel);
    return recipes::exp_sin<double>();
}

inline GammaDescriptor make_gamma(const FamilyConfig& fc, const GridSpec<double>& g, bool adjoint = false) {
    GammaDescriptor gam{g.dim == 1 ? 0 : fc.gamma_axis, fc.gamma_index(g, adjoint)};
    if (gam.index >= g.n[gam.axis]) throw ConfigError("field 'families.gamma' is outside the grid");
    return gam;
}

inline SpectralGrid<double> make_sigma(const FamilyConfig& fc) {
    SpectralGrid<double> s{fc.sigma, fc.weights};
    return s;
}

// Smooth nonvanishing random field c0 + c1 sin(k . x + p), per channel.
struct SmoothDraw {
    std::vector<std::array<double, 7>> ch;  // re c0, im c0, re c1, im c1, k1, k2, p

    static SmoothDraw draw(std::mt19937& rng, int N) {
        std::uniform_real_distribution<double> U(-1, 1);
        SmoothDraw d;
        for (int c = 0; c < N; ++c) d.ch.push_back({1.5 + 0.5 * U(rng), U(rng), U(rng), U(rng), 3 * U(rng), 3 * U(rng), 3 * U(rng)});
        return d;
    }
    GridFunction<double> sample(const GridSpec<double>& g) const {
        GridFunction<double> f(g, int(ch.size()));
        for (std::size_t k = 0; k < g.size(); ++k) {
            auto ij = g.unravel(k);
            double x = g.coord(0, ij[0]), y = g.dim == 2 ? g.coord(1, ij[1]) : 0.0;
            for (std::size_t c = 0; c < ch.size(); ++c) {
                const auto& a = ch[c];
                f(k, int(c)) = cd(a[0], a[1]) + cd(a[2], a[3]) * std::sin(a[4] * x + a[5] * y + a[6]);
            }
        }
        return f;
    }
};

inline GridSpec<double> level_grid(const Scenario& sc, int shift) {
    std::vector<std::array<double, 2>> iv;
    std::vector<int> n;
    for (std::size_t a = 0; a < sc.lo.size(); ++a) {
        iv.push_back({sc.lo[a], sc.hi[a]});
        n.push_back(sc.n[a] >> shift);
        if (n.back() < 8) throw ConfigError("grid too coarse for the requested number of refinement levels");
    }
    return make_grid<double>(iv, n);
}

inline void require_dim(const GridSpec<double>& g, int dim, const std::string& sub) {
    if (g.dim != dim) throw ConfigError(sub + " needs a " + std::to_string(dim) + "D grid");
}

}  // namespace detail

// Generalized Lagrangian identity under grid refinement.
inline void run_lagrange_check(const Scenario& sc, RunReport& rep, const std::string& out) {
    const int draws = int(sc.params.integer("battery")), levels = int(sc.params.integer("levels"));
    if (draws < 1 || levels < 2) throw ConfigError("scenario.battery must be >= 1 and scenario.levels >= 2");
    std::mt19937 rng(sc.seed);
    std::vector<std::pair<detail::SmoothDraw, detail::SmoothDraw>> fns;
    for (int d = 0; d < draws; ++d) {
        auto a = detail::SmoothDraw::draw(rng, sc.op->N);
        fns.emplace_back(a, detail::SmoothDraw::draw(rng, sc.op->N));
    }
    rep.stage = "lagrange_residual";
    std::vector<std::vector<double>> r(std::size_t(draws), std::vector<double>(std::size_t(levels), 0.0));
    CsvWriter csv(out, "lagrange_residuals.csv", "lagrange-residuals", "draw,level,n,residual", rep);
    for (int t = 0; t < levels; ++t) {
        auto g = detail::level_grid(sc, levels - 1 - t);
        auto L = sc.op->build(g);
        int nmin = g.n[0];
        if (g.dim == 2) nmin = std::min(nmin, g.n[1]);
        const int margin = std::max(kInteriorMargin, nmin / 16);  // fixed physical band
        for (int d = 0; d < draws; ++d) {
            auto& [fa, fb] = fns[std::size_t(d)];
            r[std::size_t(d)][std::size_t(t)] = lagrange_residual(L, fa.sample(g), fb.sample(g), margin);
            csv.row(d, t, g.n[0], r[std::size_t(d)][std::size_t(t)]);
        }
    }
    double finest = 0, order = std::numeric_limits<double>::infinity();
    for (const auto& rd : r) {
        finest = std::max(finest, rd.back());
        for (int t = 0; t + 1 < levels; ++t)
            if (rd[std::size_t(t + 1)] > 1e-13) order = std::min(order, std::log2(rd[std::size_t(t)] / rd[std::size_t(t + 1)]));
    }
    if (std::isinf(order)) rep.notes.push_back("all residuals at rounding level; refinement order not measurable");
    rep.at_most("lagrange_residual", finest, sc.tol.at("residual"), "generalized Lagrangian identity, finest level");
    rep.at_least("lagrange_order", order, sc.tol.at("order"), "generalized Lagrangian identity, refinement order");
}

// Closedness of the concomitant form on kernel pairs; film independence (m = 2).
inline void run_closedness(const Scenario& sc, RunReport& rep, const std::string& out) {
    auto g = sc.grid();
    auto L = sc.op->build(g);
    const auto& fc = *sc.families;
    rep.stage = "kernel_family";
    auto recipe = detail::make_recipe(fc);
    auto gam = detail::make_gamma(fc, g);
    auto psi = build_kernel_family(L, detail::make_sigma(fc), gam, recipe, fc.member_tol);
    auto phi = adjoint_kernel_family(L, detail::make_sigma(fc), detail::make_gamma(fc, g, true), recipe, fc.member_tol);
    rep.stage = "closedness_residual";
    double closed = 0, film = 0;
    for (std::size_t a = 0; a < phi.size(); ++a)
        for (std::size_t b = 0; b < psi.size(); ++b) {
            auto cr = closedness_residual(L, phi.members[a], psi.members[b], fc.member_tol);
            auto z = bilinear_concomitant(L, phi.members[a], psi.members[b]);
            double scale = 1;
            for (const auto& c : z.Z) scale = std::max(scale, c.cwiseAbs().maxCoeff());
            closed = std::max(closed, cr.residual / scale);
            if (g.dim == 2) {
                rep.stage = "film_difference";
                auto form = z.as_form();
                const int n1 = g.n[0], n2 = g.n[1];
                std::vector<std::array<int, 2>> targets;
                for (int i = 0; i < n1; ++i) targets.push_back({i, n2 - 1});
                for (int j = 0; j < n2; ++j) targets.push_back({n1 - 1, j});
                for (const auto& to : targets)
                    film = std::max(film, std::abs(integrate_path(form, staircase({0, 0}, to, 0)) - integrate_path(form, staircase({0, 0}, to, 1))) / scale);
                if (a == 0 && b == 0) {
                    GridFunction<double> zf(g, 2);
                    zf.v.col(0) = form.comps[0];
                    zf.v.col(1) = form.comps[1];
                    write_csv(zf, detail::artifact(out, "concomitant_form.csv", rep));
                    GridFunction<double> w(g, 1);
                    w.v.col(0) = staircase_cumulative(form, {0, 0});
                    write_csv(w, detail::artifact(out, "antiderivative.csv", rep));
                }
                rep.stage = "closedness_residual";
            } else if (a == 0 && b == 0) {
                write_csv(GridFunction<double>(g, CMatrix<double>(z.Z[0])), detail::artifact(out, "concomitant.csv", rep));
            }
        }
    rep.at_most("closedness_residual", closed, sc.tol.at("closedness"), "closedness of the concomitant form, relative to max |Z|");
    if (g.dim == 2)
        rep.at_most("film_difference", film, sc.tol.at("film"), "Stokes: two staircase films between the same cycles, relative to max |Z|");
}

// One-function transmutation of -d^2 + k^2 against the classical Darboux formula.
inline void run_darboux(const Scenario& sc, RunReport& rep, const std::string& out) {
    auto g = sc.grid();
    detail::require_dim(g, 1, "darboux");
    const double k = sc.params.real("kappa"), c = sc.params.real("center"), b = g.hi[0];
    if (!(k > 0)) throw ConfigError("field 'scenario.kappa' must be positive");
    const double s = 2 * k * std::exp(k * (c - b)), M = 1 / (2 * k);
    DifferentialOperator<double> L(g, 1, 2, "schrodinger");
    L.set_constant({2, 0}, -1.0).set_constant({0, 0}, k * k);
    rep.stage = "kernel_family";
    auto psi = build_kernel_family(L, SpectralGrid<double>::uniform({-k * k}), {0, g.n[0] - 1}, recipes::unit_slope<double>(-s), 1e-3);
    rep.stage = "transmutation";
    auto tr = delsarte_transmutation(psi, psi, density_film(g, Orientation::Plus, schrodinger_dual<double>()),
                                     CMatrix<double>(CMatrix<double>::Constant(1, 1, M)));
    rep.stage = "transformed_operator";
    auto Lt = transformed_operator(L, tr.op);
    auto oracle = [&](double x) {
        double t = b - x, p = s * std::sinh(k * t) / k, dp = -s * std::cosh(k * t);
        double w = M + s * s / (k * k) * (std::sinh(2 * k * t) / (4 * k) - t / 2);
        return k * k - 2 * (-2 * p * dp / w - p * p * p * p / (w * w));
    };
    double err = 0, shift = 0;
    CsvWriter pot(out, "potential.csv", "darboux-potential", "x,recovered_re,recovered_im,oracle", rep);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double x = g.coord(0, int(i));
        cd q = Lt.coeffs.at({0, 0}).v(Eigen::Index(i), 0);
        pot.row(x, q.real(), q.imag(), oracle(x));
        if (!interior(g, i, kInteriorMargin)) continue;
        err = std::max(err, std::abs(q - oracle(x)));
        shift = std::max(shift, std::abs(oracle(x) - k * k));
    }
    rep.at_most("potential_relative_error", err / shift, sc.tol.at("potential"), "transformed potential vs classical Darboux formula");
    rep.stage = "intertwining_residual";
    auto battery = bump_battery(g, int(sc.params.integer("battery")), sc.seed);
    rep.at_most("intertwining_residual", intertwining_residual(L, Lt, tr.op, battery), sc.tol.at("intertwining"),
                "intertwining L~ Omega = Omega L on a smooth battery");
    rep.at_most("membership_residual", membership_residual(Lt, tr.op.psi_tilde[0]), sc.tol.at("membership"),
                "transformed family lies in ker L~");
    write_csv(tr.op.psi_tilde[0], detail::artifact(out, "psi_tilde.csv", rep));
    CsvWriter coef(out, "transformed_coefficients.csv", "coefficients", "x,a0_re,a0_im,a1_re,a1_im,a2_re,a2_im", rep);
    auto at = [&](int j, std::size_t i) {
        auto it = Lt.coeffs.find({j, 0});
        return it == Lt.coeffs.end() ? cd(0) : it->second.v(Eigen::Index(i), 0);
    };
    for (std::size_t i = 0; i < g.size(); ++i)
        coef.row(g.coord(0, int(i)), at(0, i).real(), at(0, i).imag(), at(1, i).real(), at(1, i).imag(), at(2, i).real(), at(2, i).imag());
    write_kernel_csv(tr.kernels.at[g.size() / 2], detail::artifact(out, "kernel_matrix_mid.csv", rep));
}

// Omega_+ / Omega_- pair -> Fredholm kernel -> GLM solve -> Volterra kernel.
inline void run_glm_roundtrip(const Scenario& sc, RunReport& rep, const std::string& out) {
    auto g = sc.grid();
    detail::require_dim(g, 1, "glm-roundtrip");
    auto L = sc.op->build(g);
    const auto& fc = *sc.families;
    auto dens = sc.params.complexes("density");
    if (dens.size() != 1) throw ConfigError("field 'scenario.density' takes one complex value");
    const cd d = std::conj(dens[0]);
    rep.stage = "kernel_family";
    auto gam = detail::make_gamma(fc, g);
    auto psi = build_kernel_family(L, detail::make_sigma(fc), gam, detail::make_recipe(fc), fc.member_tol);
    auto phi = adjoint_kernel_family(L, detail::make_sigma(fc), detail::make_gamma(fc, g, true), detail::make_recipe(fc), fc.member_tol);
    const auto K = Eigen::Index(psi.size());
    rep.stage = "operator_pair";
    std::function<GridFunction<double>(const GridFunction<double>&)> dual = [d](const GridFunction<double>& f) { return d * f; };
    auto pair = build_pair(phi, psi, dual, CMatrix<double>(fc.base * CMatrix<double>::Identity(K, K)));
    rep.stage = "fredholm_kernel";
    auto Phi = fredholm_from_pair(pair.plus, pair.minus);
    auto ref = volterra_kernel(pair.plus), refm = volterra_kernel(pair.minus);
    rep.stage = "solve_glm";
    auto Ks = solve_glm(Phi, Orientation::Plus);
    const int n = g.n[0], N = L.N;
    double e = 0, scale = ref.K.cwiseAbs().maxCoeff();
    for (int i = 0; i < (n - 1) * N; ++i)  // the anchor row carries no kernel
        for (int j = 0; j < n * N; ++j) e = std::max(e, std::abs(Ks.K(i, j) - ref.K(i, j)));
    rep.at_most("kernel_roundtrip", scale > 0 ? e / scale : e, sc.tol.at("roundtrip"), "GLM solve recovers the Omega_+ - 1 kernel");
    auto battery = bump_battery(g, int(sc.params.integer("battery")), sc.seed, N);
    rep.stage = "factorization_residual";
    rep.at_most("factorization_residual", factorization_residual(pair.plus, pair.minus, Phi, battery), sc.tol.at("factorization"),
                "factorization Omega_+ (1 + Phi) = Omega_-");
    auto ov = support_overlap(ref, refm);
    rep.at_most("support_overlap", ov.off_diagonal, sc.tol.at("overlap"), "Volterra kernels of Omega_+ - 1 and Omega_- - 1 off the diagonal");
    rep.at_most("excluded_mass", std::max(ref.excluded_mass(), refm.excluded_mass()), sc.tol.at("excluded_mass"),
                "Volterra kernels vanish on the excluded side");
    rep.stage = "commutation_residual";
    rep.at_most("commutation_residual", commutation_residual(Phi, L, battery), sc.tol.at("commutation"), "(1 + Phi) commutes with L");
    write_kernel_matrix_csv(Phi.F, detail::artifact(out, "fredholm_kernel.csv", rep), "fredholm");
    write_kernel_matrix_csv(ref.K, detail::artifact(out, "volterra_plus.csv", rep), "volterra");
    write_kernel_matrix_csv(Ks.K, detail::artifact(out, "volterra_glm.csv", rep), "volterra");
}

// Bound-state Marchenko data -> GLM -> potential, against the reflectionless formula.
inline void run_marchenko(const Scenario& sc, RunReport& rep, const std::string& out) {
    if (!sc.params.has("kappa")) throw ConfigError(sc.config_path + ": missing required field 'scenario.kappa'");
    auto kappa = sc.params.reals("kappa");
    if (sc.params.has("norming") == sc.params.has("center"))
        throw ConfigError(sc.config_path + ": give exactly one of 'scenario.norming' and 'scenario.center'");
    const bool by_center = sc.params.has("center");
    auto given = by_center ? sc.params.reals("center") : sc.params.reals("norming");
    if (kappa.empty() || given.size() != kappa.size())
        throw ConfigError(sc.config_path + ": 'scenario.kappa' and '" + std::string(by_center ? "scenario.center" : "scenario.norming") +
                          "' need equal, nonzero lengths");
    std::vector<std::pair<double, double>> states;
    double kmin = std::numeric_limits<double>::infinity(), xlo = kmin, xhi = -kmin;
    for (std::size_t j = 0; j < kappa.size(); ++j) {
        const double k = kappa[j];
        if (!(k > 0)) throw ConfigError(sc.config_path + ": field 'scenario.kappa' must be positive");
        if (!by_center && !(given[j] > 0)) throw ConfigError(sc.config_path + ": field 'scenario.norming' must be positive");
        double c2 = by_center ? 2 * k * std::exp(2 * k * given[j]) : given[j] * given[j];
        double x1 = std::log(c2 / (2 * k)) / (2 * k);
        states.emplace_back(k, c2);
        kmin = std::min(kmin, k);
        xlo = std::min(xlo, x1);
        xhi = std::max(xhi, x1);
    }
    // default box: 2 widths to the left, 6 to the right of the soliton centers
    GridSpec<double> g = sc.has_grid ? sc.grid() : make_grid<double>({{xlo - 2 / kmin, xhi + 6 / kmin}}, {512});
    detail::require_dim(g, 1, "marchenko");
    if (!sc.has_grid) rep.notes.push_back("grid defaulted to [" + format_number(g.lo[0]) + ", " + format_number(g.hi[0]) + "], n = 512");
    const auto q = sc.params.text("quadrature") == "gregory" ? Quadrature::Gregory : Quadrature::Trapezoid;
    rep.stage = "solve_glm";
    auto F = marchenko_data(g, states);
    auto K = solve_glm(F, Orientation::Plus, q);
    rep.stage = "potential_relative_error";
    auto qt = marchenko_recover_potential(K, GridFunction<double>(g, 1));
    double err = 0, scale = 0;
    CsvWriter pot(out, "potential.csv", "marchenko-potential", "x,recovered_re,recovered_im,oracle", rep);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double x = g.coord(0, int(i)), o = reflectionless_potential(x, states);
        pot.row(x, qt(i).real(), qt(i).imag(), o);
        err = std::max(err, std::abs(qt(i) - o));
        scale = std::max(scale, std::abs(o));
    }
    rep.at_most("potential_relative_error", err / scale, sc.tol.at("potential"), "recovered potential vs reflectionless soliton formula");
    rep.stage = "glm_residual";
    rep.at_most("glm_residual", glm_residual(F, K, q) / std::max(1.0, F.F.cwiseAbs().maxCoeff()), sc.tol.at("glm_residual"),
                "discrete GLM equation residual, relative to max |F|");
    write_kernel_matrix_csv(K.K, detail::artifact(out, "volterra_kernel.csv", rep), "volterra");
}

// Affine pencil: tau-extension, separated families, reduced kernels, pencil Delsarte.
inline void run_pencil_reduce(const Scenario& sc, RunReport& rep, const std::string& out) {
    auto g = sc.grid();
    detail::require_dim(g, 1, "pencil-reduce");
    AffinePencil<double> P;
    for (const auto& c : sc.pencil->components) P.components.push_back(c.build(g));
    SpectrumSample<double> spec{sc.pencil->lambdas, sc.pencil->weights};
    const auto& fc = *sc.families;
    const double t0 = sc.params.real("tau0"), t1 = sc.params.real("tau1");
    const int n_tau = int(sc.params.integer("n_tau"));
    if (!(t1 > t0) || n_tau < 3) throw ConfigError("scenario needs tau1 > tau0 and n_tau >= 3");
    rep.stage = "separated_family";
    auto fam = separated_family(P, spec, detail::make_sigma(fc), detail::make_gamma(fc, g), detail::make_recipe(fc), fc.member_tol);
    rep.stage = "separability_residual";
    double sep = 0;
    for (std::size_t q = 0; q < spec.size(); ++q)
        for (const auto& m : fam.psi[q].members) sep = std::max(sep, separability_residual(P, spec.lambdas[q], m, {t0, t1}, n_tau));
    rep.at_most("separability_residual", sep, sc.tol.at("separability"), "L_tau(psi e^{lambda tau}) = e^{lambda tau} L(lambda) psi, interior nodes");
    rep.stage = "tau_difference";
    auto Ltau = tau_extend(P, {t0, t1}, n_tau);
    rep.at_most("tau_difference", tau_independence_check(Ltau, fam, t0, t1), sc.tol.at("tau_difference"),
                "reduced kernels do not depend on tau");
    rep.stage = "single_lambda_agreement";
    const auto K = Eigen::Index(fc.sigma.size());
    CMatrix<double> M = fc.base * CMatrix<double>::Identity(K, K);
    double single = 0;
    for (std::size_t q = 0; q < spec.size(); ++q) {
        PencilFamily<double> one{SpectrumSample<double>::uniform({spec.lambdas[q]}), {fam.psi[q]}, {fam.phi[q]}};
        auto op = pencil_delsarte(P, one, Orientation::Plus, {M});
        auto h = pencil_density(P, spec.lambdas[q]);
        auto dual = [h](const GridFunction<double>& f) { return transmute::detail::adjoint_multiply(h, f); };
        auto ref = delsarte_transmutation(fam.phi[q], fam.psi[q], density_film<double>(g, Orientation::Plus, dual), M).op;
        single = std::max(single, (op.matrix() - ref.matrix()).cwiseAbs().maxCoeff());
        for (std::size_t k = 0; k < op.psi_tilde.size(); ++k) single = std::max(single, (op.psi_tilde[k] - ref.psi_tilde[k]).max_abs());
    }
    rep.at_most("single_lambda_agreement", single, sc.tol.at("single_lambda"), "single-lambda pencil Delsarte vs the plain construction");
    rep.stage = "pencil_delsarte";
    auto op = pencil_delsarte(P, fam, Orientation::Plus, std::vector<CMatrix<double>>(spec.size(), M));
    CsvWriter red(out, "reduced_kernels.csv", "reduced-kernels", "lambda_index,x_index,eta,xi,re,im", rep);
    for (std::size_t q = 0; q < spec.size(); ++q) {
        auto rk = reduced_kernels(Ltau, fam.phi[q], fam.psi[q], spec.lambdas[q], 0, Orientation::Plus);
        for (std::size_t i = 0; i < rk.size(); ++i)
            for (Eigen::Index a = 0; a < rk[i].rows(); ++a)
                for (Eigen::Index b = 0; b < rk[i].cols(); ++b) red.row(q, i, a, b, rk[i](a, b).real(), rk[i](a, b).imag());
    }
    for (std::size_t k = 0; k < op.psi_tilde.size(); ++k)
        write_csv(op.psi_tilde[k], detail::artifact(out, "psi_tilde_" + std::to_string(k) + ".csv", rep));
}

// Dispatch into a caller-owned report, so a failure part-way keeps the
// checks already computed; errors propagate to the caller.
inline void run(const Scenario& sc, const std::string& out, RunReport& rep) {
    rep.subcommand = sc.subcommand;
    rep.config = sc.config_path;
    rep.seed = sc.seed;
    auto start = std::chrono::steady_clock::now();
    struct Timer {
        RunReport& r;
        std::chrono::steady_clock::time_point t0;
        ~Timer() { r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
    } timer{rep, start};
    const auto& s = sc.subcommand;
    if (s == "lagrange-check") run_lagrange_check(sc, rep, out);
    else if (s == "closedness") run_closedness(sc, rep, out);
    else if (s == "darboux") run_darboux(sc, rep, out);
    else if (s == "glm-roundtrip") run_glm_roundtrip(sc, rep, out);
    else if (s == "marchenko") run_marchenko(sc, rep, out);
    else if (s == "pencil-reduce") run_pencil_reduce(sc, rep, out);
    else throw ConfigError("unknown subcommand '" + s + "'");
}

}  // namespace transmute::cli
