// transmute <subcommand> --config <path> [--out <dir>] [--seed <int>]
//
// Exit status: 0 all checks pass, 1 some check failed, 2 configuration error,
// 3 numerical failure inside the library. report.txt is written in every case
// where the output directory can be created.

#include "pipelines.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace transmute;
using namespace transmute::cli;

void write_report(const std::string& out, const std::string& text) {
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    std::ofstream os((std::filesystem::path(out) / "report.txt").string());
    if (os) os << text;
}

int execute(const std::string& sub, const std::string& config, const std::string& out, std::optional<unsigned> seed) {
    RunReport rep;
    rep.subcommand = sub;
    rep.config = config;
    try {
        auto sc = parse_config(config, sub);
        if (seed) sc.seed = *seed;
        sc.out_dir = out;
        std::filesystem::create_directories(out);
        run(sc, out, rep);
    } catch (const ConfigError& e) {
        std::cerr << "transmute: config error: " << e.what() << '\n';
        write_report(out, "transmute " + sub + "\nconfig: " + config + "\n\nconfig error: " + e.what() + "\nstatus: FAIL\n");
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "transmute: cannot create output directory: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        rep.failure = e.what();
        write_report(out, rep.render());
        std::cerr << "transmute: numerical failure in " << rep.stage << ": " << e.what() << '\n';
        return 3;
    }
    write_report(out, rep.render());
    std::cout << rep.render();
    return rep.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Delsarte transmutation, GLM and pencil verification scenarios"};
    app.require_subcommand(1, 1);
    std::string config, out = ".";
    std::optional<unsigned> seed;
    for (const auto& s : schemas()) {
        auto* sub = app.add_subcommand(s.name, "run the " + s.name + " scenario");
        sub->add_option("--config", config, "scenario configuration file")->required();
        sub->add_option("--out", out, "output directory (default: current directory)");
        sub->add_option("--seed", seed, "seed for randomized batteries (overrides scenario.seed)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return execute(app.get_subcommands().front()->get_name(), config, out, seed);
}
