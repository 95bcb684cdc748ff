#pragma once

// JSON schemas for adaptation configs and scenario specs. Unknown keys are
// rejected with a ValidationError naming the key. See docs/config.md.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mmtta/adaptation_engine.hpp"

namespace mmtta {

using Json = nlohmann::json;

/// Everything `mmtta run` needs besides the stream: hyperparameters plus the
/// clean scenario the source head is pre-fit on.
struct RunConfig {
  AdaptationConfig adapt;
  ScenarioSpec source;
};

Json to_json(const AdaptationConfig& config);
Json to_json(const ScenarioSpec& spec);
Json to_json(const RunConfig& config);

/// Field names in errors are prefixed with `prefix` (e.g. "source.").
AdaptationConfig adaptation_config_from_json(const Json& j, const std::string& prefix = "");
ScenarioSpec scenario_from_json(const Json& j, const std::string& prefix = "");
RunConfig run_config_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
ScenarioSpec load_scenario(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies MMTTA_SEED when it is set. Throws ValidationError("MMTTA_SEED") on a
/// value that is not an unsigned integer.
void apply_seed_env(AdaptationConfig& config);

std::string to_string(ResponsibilitySource s);
std::string to_string(BalanceSign s);
std::string to_string(SklPosteriors s);
ResponsibilitySource responsibility_source_from_string(const std::string& s);
BalanceSign bal_sign_from_string(const std::string& s);
SklPosteriors skl_posteriors_from_string(const std::string& s);

}  // namespace mmtta
