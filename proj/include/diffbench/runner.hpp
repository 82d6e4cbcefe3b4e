#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffbench/config.hpp"

namespace diffbench::runner {

struct RunOptions {
    std::string config_path;
    std::string output_dir;  // overrides output.dir when non-empty
    std::optional<uint64_t> seed_override;
    int threads = 1;
};

// Each command resolves its config, acquires the output-directory lock,
// writes its artifacts plus manifest.json, and returns the manifest.
// Errors surface as ConfigError / DataError / NumericError.

config::RunManifest cmd_generate(const RunOptions& options);
config::RunManifest cmd_fid(const RunOptions& options);
config::RunManifest cmd_optimal_fid(const RunOptions& options);
config::RunManifest cmd_fid_variance(const RunOptions& options);
config::RunManifest cmd_sweep_nfe(const RunOptions& options);
config::RunManifest cmd_train_denoiser(const RunOptions& options);
config::RunManifest cmd_train_discriminator(const RunOptions& options);
config::RunManifest cmd_train_classifier(const RunOptions& options);

// Joins result records across runs into one CSV keyed by run id. Verifies
// artifact digests; never recomputes results.
std::string cmd_report(const std::vector<std::string>& manifest_paths);

}  // namespace diffbench::runner
