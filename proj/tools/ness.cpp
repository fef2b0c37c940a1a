#include "ness/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Transport-coefficient linear response for stochastic dynamics with synthetic forcings"};
    app.require_subcommand(1);

    std::string config_path, out_dir, bundle_dir;
    int workers = 0;
    bool dump_matrices = false;

    auto* run = app.add_subcommand("run", "run an experiment described by a JSON config");
    run->add_option("config", config_path, "path to the JSON config")->required();
    run->add_option("--out", out_dir, "output directory (overrides the config)");
    run->add_option("--workers", workers, "worker threads (default: NESS_WORKERS or hardware)");
    run->add_flag("--dump-matrices", dump_matrices, "dump assembled operators in Matrix Market format");

    auto* verify = app.add_subcommand("verify", "re-check invariants of a produced bundle");
    verify->add_option("dir", bundle_dir, "bundle directory produced by run")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            ness::RunOptions opts;
            opts.out_dir = out_dir;
            opts.workers = workers;
            opts.dump_matrices = dump_matrices;
            return ness::run_experiment(config_path, opts);
        }
        return ness::verify_bundle(bundle_dir);
    } catch (const ness::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ness::Error& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
