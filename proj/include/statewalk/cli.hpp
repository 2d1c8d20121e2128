#pragma once
// Operator surface: subcommands gen | pretrain | rl | eval | tree | figure
// over layered configuration.
//
// Precedence, lowest to highest: built-in defaults, the --config JSON file,
// STATEWALK_* environment variables, command-line flags. The resolved config
// lands in the run manifest and is the single source of truth for the run.
//
// Environment overrides use the prefix STATEWALK_ followed by the section and
// the field path, all segments separated by double underscores, e.g.
//   STATEWALK_RL__TOTAL_EPOCHS=50
//   STATEWALK_ENV__SPLIT_SIZES__TRAIN_RL=512
// Values parse as JSON when possible and as strings otherwise.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace statewalk {

// Recursive object merge: overlay wins, objects merge key-wise, everything
// else replaces.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overlay);

// Collects STATEWALK_* variables into a config overlay object.
nlohmann::json env_overrides();

// Strips dotted paths (e.g. "pretrain.save_every") from a config; used to
// compare run manifests on the fields that define the run's identity rather
// than its probe cadence.
nlohmann::json config_identity(nlohmann::json config, const std::vector<std::string>& ignore);

// Directory of a completed run whose manifest config matches `want` after
// both are reduced by `ignore`, and whose recorded input hashes include every
// entry of `required_inputs`; nullopt when absent, incomplete, or drifted.
std::optional<std::filesystem::path> completed_run(
    const std::filesystem::path& root, const std::string& name, const nlohmann::json& want,
    const std::vector<std::string>& ignore,
    const nlohmann::json& required_inputs = nlohmann::json::object());

int run_cli(int argc, const char* const* argv);

}  // namespace statewalk
