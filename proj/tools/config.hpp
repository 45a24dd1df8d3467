#pragma once

// Scenario configuration and operator description files.
//
// Both are INI-style text read with Boost.PropertyTree: `[block]` headers,
// `key = value` lines, whole-line comments starting with ';' or '#'. Keys are
// checked strictly against the schema of the block they appear in.

#include <transmute/diffop.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace transmute::cli {

// Configuration problems (exit status 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using cd = std::complex<double>;

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline std::string format_number(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// One [block] of an INI file, entries in file order.
struct Block {
    std::string file;
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }
    bool has(const std::string& key) const { return find(key) != nullptr; }
    std::string field(const std::string& key) const { return name + "." + key; }

    void allow(const std::set<std::string>& keys) const {
        for (const auto& [k, v] : entries)
            if (!keys.count(k)) throw ConfigError(file + ": unknown key '" + field(k) + "'");
    }
    const std::string& required(const std::string& key) const {
        auto* v = find(key);
        if (!v) throw ConfigError(file + ": missing required field '" + field(key) + "'");
        return *v;
    }

    double real(const std::string& key, std::optional<double> fallback = {}) const;
    std::vector<double> reals(const std::string& key, std::optional<std::vector<double>> fallback = {}) const;
    long integer(const std::string& key, std::optional<long> fallback = {}) const;
    std::vector<long> integers(const std::string& key) const;
    cd complex(const std::string& key, std::optional<cd> fallback = {}) const;
    std::vector<cd> complexes(const std::string& key, std::optional<std::vector<cd>> fallback = {}) const;
    std::string text(const std::string& key, std::optional<std::string> fallback = {}) const;
    double positive(const std::string& key, double fallback) const;
};

struct IniDoc {
    std::string path;
    std::vector<Block> blocks;

    const Block* block(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return &b;
        return nullptr;
    }
    std::filesystem::path dir() const { return std::filesystem::path(path).parent_path(); }
};

inline IniDoc read_ini_doc(const std::string& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("cannot open file: " + path);
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::ini_parser::read_ini(path, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(path + ":" + std::to_string(e.line()) + ": syntax error: " + e.message());
    }
    IniDoc doc{path, {}};
    for (const auto& [name, sub] : pt) {
        if (sub.empty()) throw ConfigError(path + ": key '" + name + "' appears outside any [block]");
        Block b{path, name, {}};
        for (const auto& [k, v] : sub) b.entries.emplace_back(k, trim(v.data()));
        doc.blocks.push_back(std::move(b));
    }
    return doc;
}

namespace detail {

inline std::optional<double> to_real(const std::string& s) {
    std::string t = trim(s);
    if (t.empty()) return {};
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) return {};
    return v;
}

// "a", "bi", "a+bi", "a-bi" (also "i", "-i").
inline std::optional<cd> to_complex(const std::string& s) {
    std::string t = trim(s);
    if (t.empty()) return {};
    if (t.back() != 'i') {
        auto r = to_real(t);
        return r ? std::optional<cd>(cd(*r, 0)) : std::nullopt;
    }
    std::string body = t.substr(0, t.size() - 1);
    // split at the last sign that is not an exponent sign or the leading sign
    std::size_t cut = std::string::npos;
    for (std::size_t k = body.size(); k-- > 1;)
        if ((body[k] == '+' || body[k] == '-') && body[k - 1] != 'e' && body[k - 1] != 'E') {
            cut = k;
            break;
        }
    auto imag = [](const std::string& p) -> std::optional<double> {
        if (p.empty() || p == "+") return 1.0;
        if (p == "-") return -1.0;
        return to_real(p);
    };
    if (cut == std::string::npos) {
        auto im = imag(body);
        return im ? std::optional<cd>(cd(0, *im)) : std::nullopt;
    }
    auto re = to_real(body.substr(0, cut));
    auto im = imag(body.substr(cut));
    if (!re || !im) return {};
    return cd(*re, *im);
}

}  // namespace detail

inline double Block::real(const std::string& key, std::optional<double> fallback) const {
    auto* v = find(key);
    if (!v) {
        if (fallback) return *fallback;
        required(key);
    }
    auto r = detail::to_real(*v);
    if (!r) throw ConfigError(file + ": field '" + field(key) + "' expects a number, got '" + *v + "'");
    return *r;
}

inline std::vector<double> Block::reals(const std::string& key, std::optional<std::vector<double>> fallback) const {
    auto* v = find(key);
    if (!v) {
        if (fallback) return *fallback;
        required(key);
    }
    std::vector<double> out;
    for (const auto& item : split_list(*v)) {
        auto r = detail::to_real(item);
        if (!r) throw ConfigError(file + ": field '" + field(key) + "' expects numbers, got '" + item + "'");
        out.push_back(*r);
    }
    return out;
}

inline long Block::integer(const std::string& key, std::optional<long> fallback) const {
    auto* v = find(key);
    if (!v) {
        if (fallback) return *fallback;
        required(key);
    }
    auto r = detail::to_real(*v);
    if (!r || *r != std::floor(*r) || std::abs(*r) > 1e9)
        throw ConfigError(file + ": field '" + field(key) + "' expects an integer, got '" + *v + "'");
    return long(*r);
}

inline std::vector<long> Block::integers(const std::string& key) const {
    std::vector<long> out;
    for (double r : reals(key)) {
        if (r != std::floor(r) || std::abs(r) > 1e9) throw ConfigError(file + ": field '" + field(key) + "' expects integers");
        out.push_back(long(r));
    }
    return out;
}

inline cd Block::complex(const std::string& key, std::optional<cd> fallback) const {
    auto* v = find(key);
    if (!v) {
        if (fallback) return *fallback;
        required(key);
    }
    auto r = detail::to_complex(*v);
    if (!r) throw ConfigError(file + ": field '" + field(key) + "' expects a complex number (a, bi or a+bi), got '" + *v + "'");
    return *r;
}

inline std::vector<cd> Block::complexes(const std::string& key, std::optional<std::vector<cd>> fallback) const {
    auto* v = find(key);
    if (!v) {
        if (fallback) return *fallback;
        required(key);
    }
    std::vector<cd> out;
    for (const auto& item : split_list(*v)) {
        auto r = detail::to_complex(item);
        if (!r) throw ConfigError(file + ": field '" + field(key) + "' expects complex numbers, got '" + item + "'");
        out.push_back(*r);
    }
    return out;
}

inline std::string Block::text(const std::string& key, std::optional<std::string> fallback) const {
    auto* v = find(key);
    if (!v) {
        if (fallback) return *fallback;
        required(key);
    }
    return *v;
}

inline double Block::positive(const std::string& key, double fallback) const {
    double v = real(key, fallback);
    if (!(v > 0)) throw ConfigError(file + ": field '" + field(key) + "' must be positive, got " + format_number(v));
    return v;
}

// ---------------------------------------------------------------------------
// Operator description files
//
//   [operator]
//   dim = 1            ; 1 or 2
//   channels = 1       ; N in 1..4
//   order = 2          ; 0..3
//   id = schrodinger   ; optional label
//
//   [coef 2]           ; multi-index: one entry (m = 1) or two (m = 2, "coef 2 0")
//   constant = -1      ; complex scalar times identity
//
//   [coef 0]
//   preset = sech2     ; polynomial | sech2 | gaussian
//   amplitude = -2     ; sech2, gaussian: A sech^2((x - c)/w), A exp(-((x - c)/w)^2)
//   center = 0
//   width = 1
//   axis = 1           ; coordinate the profile depends on (default 1)
//
// A coefficient block holds exactly one of `constant`, `matrix` (N*N complex
// entries, row-major) or `preset`; polynomial presets take
// `coefficients = c0, c1, ...` in powers of (x_axis - center).
// Multi-indices not listed are zero.

struct CoefficientEntry {
    MultiIndex index{0, 0};
    std::string kind;  // constant | matrix | polynomial | sech2 | gaussian
    cd value{0, 0};
    std::vector<cd> matrix;
    std::vector<double> poly;
    double amplitude = 1, center = 0, width = 1;
    int axis = 0;

    double profile(double x) const {
        if (kind == "polynomial") {
            double s = 0, t = x - center;
            for (std::size_t k = poly.size(); k-- > 0;) s = s * t + poly[k];
            return s;
        }
        double t = (x - center) / width;
        if (kind == "sech2") return amplitude / (std::cosh(t) * std::cosh(t));
        return amplitude * std::exp(-t * t);
    }
};

struct OperatorSpec {
    std::string path;
    std::string id = "L";
    int dim = 1, N = 1, order = 0;
    std::vector<CoefficientEntry> coefs;

    DifferentialOperator<double> build(const GridSpec<double>& g) const {
        if (g.dim != dim)
            throw ConfigError(path + ": operator dimension " + std::to_string(dim) + " does not match the grid (" + std::to_string(g.dim) + ")");
        DifferentialOperator<double> L(g, N, order, id);
        for (const auto& c : coefs) {
            if (c.kind == "constant") {
                L.set_constant(c.index, c.value);
            } else if (c.kind == "matrix") {
                CMatrix<double> m(N, N);
                for (int r = 0; r < N; ++r)
                    for (int s = 0; s < N; ++s) m(r, s) = c.matrix[std::size_t(r * N + s)];
                L.set_constant(c.index, m);
            } else if (dim == 1) {
                L.set_field(c.index, [&](double x) { return cd(c.profile(x)); });
            } else {
                L.set_field(c.index, [&](double x1, double x2) { return cd(c.profile(c.axis == 0 ? x1 : x2)); });
            }
        }
        try {
            L.validate();
        } catch (const Error& e) {
            throw ConfigError(path + ": " + e.what());
        }
        return L;
    }
};

inline std::optional<MultiIndex> parse_coef_header(const std::string& name, int dim) {
    std::istringstream is(name);
    std::string word;
    is >> word;
    if (word != "coef") return {};
    std::vector<int> ix;
    int v;
    while (is >> v) ix.push_back(v);
    if (!is.eof() || int(ix.size()) != dim) return {};
    for (int a : ix)
        if (a < 0) return {};
    return MultiIndex{ix[0], dim == 2 ? ix[1] : 0};
}

inline OperatorSpec read_operator_file(const std::string& path) {
    auto doc = read_ini_doc(path);
    OperatorSpec spec;
    spec.path = path;
    const Block* head = doc.block("operator");
    if (!head) throw ConfigError(path + ": missing [operator] block");
    head->allow({"dim", "channels", "order", "id"});
    spec.dim = int(head->integer("dim", 1));
    spec.N = int(head->integer("channels", 1));
    spec.order = int(head->integer("order"));
    spec.id = head->text("id", std::filesystem::path(path).stem().string());
    if (spec.dim != 1 && spec.dim != 2) throw ConfigError(path + ": field 'operator.dim' must be 1 or 2");
    if (spec.N < 1 || spec.N > 4) throw ConfigError(path + ": field 'operator.channels' must be in 1..4");
    if (spec.order < 0 || spec.order > 3) throw ConfigError(path + ": field 'operator.order' must be in 0..3");
    for (const auto& b : doc.blocks) {
        if (b.name == "operator") continue;
        auto ix = parse_coef_header(b.name, spec.dim);
        if (!ix) throw ConfigError(path + ": unknown block [" + b.name + "] (expected [coef i] or [coef i j] matching dim)");
        if (total_order(*ix) > spec.order) throw ConfigError(path + ": [" + b.name + "] exceeds the declared order");
        CoefficientEntry c;
        c.index = *ix;
        int kinds = b.has("constant") + b.has("matrix") + b.has("preset");
        if (kinds != 1) throw ConfigError(path + ": [" + b.name + "] needs exactly one of constant, matrix, preset");
        if (b.has("constant")) {
            b.allow({"constant"});
            c.kind = "constant";
            c.value = b.complex("constant");
        } else if (b.has("matrix")) {
            b.allow({"matrix"});
            c.kind = "matrix";
            c.matrix = b.complexes("matrix");
            if (int(c.matrix.size()) != spec.N * spec.N)
                throw ConfigError(path + ": field '" + b.field("matrix") + "' needs " + std::to_string(spec.N * spec.N) + " entries");
        } else {
            c.kind = b.text("preset");
            c.axis = int(b.integer("axis", 1)) - 1;
            if (c.axis < 0 || c.axis >= spec.dim) throw ConfigError(path + ": field '" + b.field("axis") + "' out of range");
            c.center = b.real("center", 0.0);
            if (c.kind == "polynomial") {
                b.allow({"preset", "coefficients", "center", "axis"});
                c.poly = b.reals("coefficients");
                if (c.poly.empty()) throw ConfigError(path + ": field '" + b.field("coefficients") + "' is empty");
            } else if (c.kind == "sech2" || c.kind == "gaussian") {
                b.allow({"preset", "amplitude", "center", "width", "axis"});
                c.amplitude = b.real("amplitude", 1.0);
                c.width = b.positive("width", 1.0);
            } else {
                throw ConfigError(path + ": unknown preset '" + c.kind + "' (polynomial, sech2, gaussian)");
            }
        }
        spec.coefs.push_back(std::move(c));
    }
    return spec;
}

}  // namespace transmute::cli
