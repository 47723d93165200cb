#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "coreflow/backend.hpp"
#include "coreflow/environment.hpp"
#include "coreflow/interpreter.hpp"
#include "coreflow/optimizer.hpp"

namespace coreflow {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BackendConfig {
    std::string kind;  // "http" or "scripted"
    std::string endpoint;
    std::string model;
    std::filesystem::path rules_file;
    int max_attempts = 3;
    int retry_base_delay_ms = 1000;
    int timeout_s = 60;
};

/// Single JSON file describing a reproducible run. Relative paths are
/// resolved against the directory holding the config file.
///
/// {
///   "backend":   {"kind": "scripted", "rules_file": "rules.json"},
///   "generator": {"kind": "http", "endpoint": "...", "model": "..."},   // in-context only
///   "environment_file": "typed_planning.json",
///   "optimizer": {"max_iterations": 30, "reward_delta_threshold": 0.001, "learning_rate": 0.001,
///                 "edits_per_candidate": 3, "seed": 7, "split": "train", "full_history": false,
///                 "example_workflow": "seed.core", "task_description": "..."},
///   "limits": {"max_step_executions": 64, "max_tool_calls": 32},
///   "parallelism": 4,
///   "output_dir": "runs"
/// }
struct AppConfig {
    BackendConfig backend;
    std::optional<BackendConfig> generator;
    std::filesystem::path environment_file;
    OptimizerConfig optimizer;
    std::filesystem::path example_workflow;
    std::string task_description;
    ExecutionLimits limits;
    int parallelism = 4;
    std::filesystem::path output_dir = "runs";

    EvalOptions eval_options() const { return {limits, parallelism}; }
};

AppConfig parse_app_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
AppConfig load_app_config(const std::filesystem::path& path);

/// Builds the configured backend; HTTP backends read the API key from COREFLOW_API_KEY.
std::unique_ptr<ChatBackend> make_backend(const BackendConfig& cfg);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace coreflow
