#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "diffbench/runner.hpp"

using namespace diffbench;

namespace {

int dispatch(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale diffusion sampling, guidance and FID laboratory"};
    app.require_subcommand(1);

    runner::RunOptions options;
    std::vector<std::string> manifest_paths;
    std::string report_output;

    uint64_t seed_flag = 0;
    auto add_run_flags = [&options, &seed_flag](CLI::App* cmd) {
        cmd->add_option("--config", options.config_path, "run config file")->required();
        cmd->add_option("--output", options.output_dir, "output directory (overrides output.dir)");
        cmd->add_option("--seed", seed_flag, "master seed override");
        cmd->add_option("--threads", options.threads, "worker thread count");
    };

    struct Entry {
        const char* name;
        const char* help;
        config::RunManifest (*fn)(const runner::RunOptions&);
    };
    const Entry entries[] = {
        {"generate", "sample from a denoiser and write a dataset", runner::cmd_generate},
        {"fid", "FID between a real and a generated dataset", runner::cmd_fid},
        {"optimal-fid", "FID between two halves of one dataset", runner::cmd_optimal_fid},
        {"fid-variance", "repeat-FID variance protocol", runner::cmd_fid_variance},
        {"sweep-nfe", "FID versus NFE curve over a step list", runner::cmd_sweep_nfe},
        {"train-denoiser", "train a neural denoiser", runner::cmd_train_denoiser},
        {"train-discriminator", "train a real-vs-generated discriminator",
         runner::cmd_train_discriminator},
        {"train-classifier", "real-vs-generated shift classifier report",
         runner::cmd_train_classifier},
    };

    std::vector<std::pair<CLI::App*, const Entry*>> bound;
    for (const Entry& e : entries) {
        CLI::App* cmd = app.add_subcommand(e.name, e.help);
        add_run_flags(cmd);
        bound.emplace_back(cmd, &e);
    }

    CLI::App* report = app.add_subcommand("report", "consolidate manifests into one CSV");
    report->add_option("manifests", manifest_paths, "manifest.json paths")->required();
    report->add_option("--output", report_output, "CSV output path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    for (auto& [cmd, entry] : bound) {
        if (cmd->parsed()) {
            if (cmd->count("--seed")) options.seed_override = seed_flag;
            return dispatch([&] { entry->fn(options); });
        }
    }
    if (report->parsed()) {
        return dispatch([&] {
            std::string csv = runner::cmd_report(manifest_paths);
            if (report_output.empty()) {
                std::cout << csv;
            } else {
                std::ofstream os(report_output, std::ios::trunc);
                if (!os) throw DataError("cannot open " + report_output + " for writing");
                os << csv;
            }
        });
    }
    return 1;
}
