#pragma once

// Scenario = validated config for one subcommand. Blocks:
//   [grid]       lo, hi, n (one entry per axis)
//   [operator]   file            (operator description, see config.hpp)
//   [pencil]     components, lambda, weights
//   [families]   sigma, weights, gamma_axis, gamma, adjoint_gamma, recipe, scale, channel,
//                member_tol, base
//   [tolerances] per-subcommand thresholds, all positive
//   [scenario]   per-subcommand parameters and seed
// Relative file paths resolve against the config file's directory.

#include "config.hpp"

#include <transmute/numgrid.hpp>

namespace transmute::cli {

enum class Need { Forbidden, Optional, Required };

struct Param {
    std::string key;
    char type;            // r real, i integer, R real list, C complex list, w word
    std::string fallback; // empty: optional without default
    std::vector<std::string> choices = {};
};

struct Schema {
    std::string name;
    Need grid, op, pencil, families;
    std::vector<std::pair<std::string, double>> tolerances;  // name, default
    std::vector<Param> params;
};

inline const std::vector<Schema>& schemas() {
    static const std::vector<Schema> all = {
        {"lagrange-check", Need::Required, Need::Required, Need::Forbidden, Need::Forbidden,
         {{"residual", 1e-2}, {"order", 1.8}},
         {{"battery", 'i', "8"}, {"levels", 'i', "3"}}},
        {"closedness", Need::Required, Need::Required, Need::Forbidden, Need::Required,
         {{"closedness", 1e-6}, {"film", 1e-6}},
         {}},
        {"darboux", Need::Required, Need::Forbidden, Need::Forbidden, Need::Forbidden,
         {{"potential", 1e-3}, {"intertwining", 1e-4}, {"membership", 1e-4}},
         {{"kappa", 'r', "1"}, {"center", 'r', "0"}, {"battery", 'i', "10"}}},
        {"glm-roundtrip", Need::Required, Need::Required, Need::Forbidden, Need::Required,
         {{"roundtrip", 1e-6}, {"factorization", 1e-6}, {"overlap", 1e-12}, {"excluded_mass", 1e-10}, {"commutation", 1e-4}},
         {{"density", 'C', "-1"}, {"battery", 'i', "10"}}},
        {"marchenko", Need::Optional, Need::Forbidden, Need::Forbidden, Need::Forbidden,
         {{"potential", 1e-4}, {"glm_residual", 1e-8}},
         {{"kappa", 'R', ""}, {"norming", 'R', ""}, {"center", 'R', ""}, {"quadrature", 'w', "gregory", {"gregory", "trapezoid"}}}},
        {"pencil-reduce", Need::Required, Need::Forbidden, Need::Required, Need::Required,
         {{"separability", 1e-6}, {"tau_difference", 1e-8}, {"single_lambda", 1e-8}},
         {{"tau0", 'r', "0"}, {"tau1", 'r', "1"}, {"n_tau", 'i', "513"}}},
    };
    return all;
}

inline const Schema& schema(const std::string& name) {
    for (const auto& s : schemas())
        if (s.name == name) return s;
    throw ConfigError("unknown subcommand '" + name + "'");
}

struct FamilyConfig {
    std::vector<cd> sigma;
    std::vector<double> weights;
    int gamma_axis = 0;          // 0-based internally
    std::string gamma = "last";  // first | last | node index
    std::string adjoint_gamma;   // Gamma of the adjoint family; empty: same as gamma
    std::string recipe;          // slope | unit_slope | exp_sin
    cd scale{1, 0};
    int channel = 0;
    double member_tol = 1e-4;
    cd base{1, 0};

    int gamma_index(const GridSpec<double>& g, bool adjoint = false) const {
        const int n = g.n[g.dim == 1 ? 0 : gamma_axis];
        const std::string& v = adjoint && !adjoint_gamma.empty() ? adjoint_gamma : gamma;
        if (v == "first") return 0;
        if (v == "last") return n - 1;
        return std::stoi(v);
    }
};

struct PencilConfig {
    std::vector<OperatorSpec> components;
    std::vector<cd> lambdas;
    std::vector<double> weights;
};

struct Scenario {
    std::string subcommand;
    std::string config_path;
    std::string out_dir = ".";
    unsigned seed = 0;
    bool has_grid = false;
    std::vector<double> lo, hi;
    std::vector<int> n;
    std::optional<OperatorSpec> op;
    std::optional<PencilConfig> pencil;
    std::optional<FamilyConfig> families;
    std::map<std::string, double> tol;
    Block params;  // [scenario] with defaults filled

    GridSpec<double> grid() const {
        std::vector<std::array<double, 2>> iv;
        for (std::size_t a = 0; a < lo.size(); ++a) iv.push_back({lo[a], hi[a]});
        return make_grid<double>(iv, n);
    }
};

namespace detail {

inline std::string resolve(const IniDoc& doc, const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (doc.dir() / fp).lexically_normal().string();
}

inline void check_need(const IniDoc& doc, const std::string& block, Need need, const std::string& sub) {
    bool present = doc.block(block) != nullptr;
    if (need == Need::Required && !present) throw ConfigError(doc.path + ": " + sub + " needs a [" + block + "] block");
    if (need == Need::Forbidden && present) throw ConfigError(doc.path + ": " + sub + " does not take a [" + block + "] block");
}

inline OperatorSpec load_operator(const IniDoc& doc, const std::string& p, const std::string& field) {
    auto path = resolve(doc, p);
    if (!std::filesystem::is_regular_file(path)) throw ConfigError(doc.path + ": field '" + field + "' names a missing operator file: " + path);
    return read_operator_file(path);
}

}  // namespace detail

inline Scenario parse_config(const std::string& path, const std::string& subcommand) {
    const Schema& sch = schema(subcommand);
    auto doc = read_ini_doc(path);
    Scenario sc;
    sc.subcommand = subcommand;
    sc.config_path = path;

    for (const auto& b : doc.blocks)
        if (b.name != "grid" && b.name != "operator" && b.name != "pencil" && b.name != "families" && b.name != "tolerances" &&
            b.name != "scenario")
            throw ConfigError(path + ": unknown block [" + b.name + "]");
    if (doc.block("operator") && doc.block("pencil"))
        throw ConfigError(path + ": [operator] and [pencil] blocks are mutually exclusive");
    detail::check_need(doc, "grid", sch.grid, subcommand);
    detail::check_need(doc, "operator", sch.op, subcommand);
    detail::check_need(doc, "pencil", sch.pencil, subcommand);
    detail::check_need(doc, "families", sch.families, subcommand);

    if (const Block* b = doc.block("grid")) {
        b->allow({"lo", "hi", "n"});
        sc.has_grid = true;
        sc.lo = b->reals("lo");
        sc.hi = b->reals("hi");
        for (long v : b->integers("n")) sc.n.push_back(int(v));
        const std::size_t dim = sc.lo.size();
        if (dim < 1 || dim > 2) throw ConfigError(path + ": field 'grid.lo' needs one entry per axis (1 or 2)");
        if (sc.hi.size() != dim) throw ConfigError(path + ": fields 'grid.lo' and 'grid.hi' differ in length");
        if (sc.n.size() == 1 && dim == 2) sc.n.push_back(sc.n[0]);
        if (sc.n.size() != dim) throw ConfigError(path + ": field 'grid.n' needs one entry per axis");
        for (std::size_t a = 0; a < dim; ++a) {
            if (!(sc.hi[a] > sc.lo[a])) throw ConfigError(path + ": grid axis " + std::to_string(a + 1) + " needs hi > lo");
            if (sc.n[a] < 3) throw ConfigError(path + ": field 'grid.n' needs at least 3 points per axis");
        }
    }

    if (const Block* b = doc.block("operator")) {
        b->allow({"file"});
        sc.op = detail::load_operator(doc, b->text("file"), "operator.file");
    }

    if (const Block* b = doc.block("pencil")) {
        b->allow({"components", "lambda", "weights"});
        PencilConfig pc;
        for (const auto& f : split_list(b->text("components"))) pc.components.push_back(detail::load_operator(doc, f, "pencil.components"));
        if (pc.components.size() < 2) throw ConfigError(path + ": field 'pencil.components' needs L_0 and at least L_1");
        pc.lambdas = b->complexes("lambda");
        if (pc.lambdas.empty()) throw ConfigError(path + ": field 'pencil.lambda' is empty");
        pc.weights = b->reals("weights", std::vector<double>(pc.lambdas.size(), 1.0 / double(pc.lambdas.size())));
        if (pc.weights.size() != pc.lambdas.size()) throw ConfigError(path + ": field 'pencil.weights' needs one weight per lambda");
        for (double w : pc.weights)
            if (!(w > 0)) throw ConfigError(path + ": field 'pencil.weights' must be positive");
        sc.pencil = std::move(pc);
    }

    if (const Block* b = doc.block("families")) {
        b->allow({"sigma", "weights", "gamma_axis", "gamma", "adjoint_gamma", "recipe", "scale", "channel", "member_tol", "base"});
        FamilyConfig fc;
        fc.sigma = b->complexes("sigma");
        if (fc.sigma.empty()) throw ConfigError(path + ": field 'families.sigma' is empty");
        fc.weights = b->reals("weights", std::vector<double>(fc.sigma.size(), 1.0 / double(fc.sigma.size())));
        if (fc.weights.size() != fc.sigma.size()) throw ConfigError(path + ": field 'families.weights' needs one weight per sigma point");
        fc.gamma_axis = int(b->integer("gamma_axis", 1)) - 1;
        if (fc.gamma_axis < 0 || fc.gamma_axis > 1) throw ConfigError(path + ": field 'families.gamma_axis' must be 1 or 2");
        fc.gamma = b->text("gamma", "last");
        fc.adjoint_gamma = b->text("adjoint_gamma", "");
        for (const char* key : {"gamma", "adjoint_gamma"}) {
            const std::string v = b->text(key, "last");
            if (v != "first" && v != "last" && b->integer(key) < 0)
                throw ConfigError(path + ": field 'families." + std::string(key) + "' must be first, last or a node index >= 0");
        }
        const bool two_d = sc.lo.size() == 2;
        fc.recipe = b->text("recipe", two_d ? "exp_sin" : "unit_slope");
        if (fc.recipe != "slope" && fc.recipe != "unit_slope" && fc.recipe != "exp_sin")
            throw ConfigError(path + ": field 'families.recipe' must be slope, unit_slope or exp_sin");
        fc.scale = b->complex("scale", cd(1));
        fc.channel = int(b->integer("channel", 1)) - 1;
        fc.member_tol = b->positive("member_tol", 1e-4);
        fc.base = b->complex("base", cd(1));
        sc.families = std::move(fc);
    }

    const Block* tb = doc.block("tolerances");
    std::set<std::string> tol_keys;
    for (const auto& [k, v] : sch.tolerances) tol_keys.insert(k);
    if (tb) tb->allow(tol_keys);
    for (const auto& [k, v] : sch.tolerances) sc.tol[k] = tb ? tb->positive(k, v) : v;

    const Block* pb = doc.block("scenario");
    std::set<std::string> keys{"seed"};
    for (const auto& p : sch.params) keys.insert(p.key);
    sc.params = Block{path, "scenario", {}};
    if (pb) {
        pb->allow(keys);
        long seed = pb->integer("seed", 0);
        if (seed < 0) throw ConfigError(path + ": field 'scenario.seed' must be >= 0");
        sc.seed = unsigned(seed);
    }
    for (const auto& p : sch.params) {
        const std::string* v = pb ? pb->find(p.key) : nullptr;
        std::string value = v ? *v : p.fallback;
        if (value.empty()) continue;
        Block one{path, "scenario", {{p.key, value}}};
        switch (p.type) {
            case 'r': one.real(p.key); break;
            case 'i': one.integer(p.key); break;
            case 'R': one.reals(p.key); break;
            case 'C': one.complexes(p.key); break;
            default:
                if (std::find(p.choices.begin(), p.choices.end(), value) == p.choices.end())
                    throw ConfigError(path + ": field 'scenario." + p.key + "' has an unsupported value '" + value + "'");
        }
        sc.params.entries.emplace_back(p.key, value);
    }
    return sc;
}

}  // namespace transmute::cli
