#pragma once

#include <string>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// Pipeline commands. Each one validates its configuration, runs under a
// deterministic run directory named by the config content hash, and writes a
// run_manifest.json recording the config, its hash, and the outputs. Rerunning
// an identical config is a no-op unless forced.

struct RunResult {
    fs::path run_dir;
    bool reused = false;  // true when a completed identical run was found
};

RunResult cmd_synth(const json& spec_config, const fs::path& out_dir, bool force);
RunResult cmd_extract(const json& config, const fs::path& out_dir, bool force);
RunResult cmd_probe(const json& config, const fs::path& out_dir, bool force);
RunResult cmd_subspace(const json& config, const fs::path& out_dir, bool force);
RunResult cmd_steer(const json& config, const std::string& prompt, const fs::path& out_dir,
                    bool force);
RunResult cmd_analyze(const json& config, const fs::path& out_dir, bool force);
RunResult cmd_sweep(const json& config, const fs::path& out_dir, bool force);
RunResult cmd_metrics(const json& component_scores, const fs::path& out_dir, bool force);

// `--set key=value` overrides with dotted paths; values parse as JSON when
// possible and fall back to strings.
void apply_override(json& config, const std::string& assignment);

// Full command-line dispatch (used by the binary and by tests).
// Exit codes: 0 success, 1 validation error, 2 runtime error.
int run_cli(const std::vector<std::string>& args);

}  // namespace steerlab
