#include "coreflow/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace coreflow {

using json = nlohmann::json;

namespace {

constexpr const char* kDefaultTaskDescription =
    "Provide a workflow with several steps. The workflow can guide the LLM to design plans for a type of complex "
    "tasks related to text and image processing using the provided tools.";

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

BackendConfig parse_backend(const json& j, const std::filesystem::path& base, const std::string& where) {
    BackendConfig cfg;
    cfg.kind = j.value("kind", "");
    if (cfg.kind == "http") {
        cfg.endpoint = j.value("endpoint", "");
        cfg.model = j.value("model", "");
        if (cfg.endpoint.empty() || cfg.model.empty()) {
            throw ConfigError(where + ": kind=http requires endpoint and model");
        }
        cfg.max_attempts = j.value("max_attempts", cfg.max_attempts);
        cfg.retry_base_delay_ms = j.value("retry_base_delay_ms", cfg.retry_base_delay_ms);
        cfg.timeout_s = j.value("timeout_s", cfg.timeout_s);
        if (cfg.max_attempts < 1) throw ConfigError(where + ": max_attempts must be >= 1");
    } else if (cfg.kind == "scripted") {
        auto rules = j.value("rules_file", "");
        if (rules.empty()) throw ConfigError(where + ": kind=scripted requires rules_file");
        cfg.rules_file = resolve(base, rules);
    } else {
        throw ConfigError(where + ": kind must be \"http\" or \"scripted\"");
    }
    return cfg;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

AppConfig parse_app_config(const json& doc, const std::filesystem::path& base) {
    try {
        AppConfig cfg;
        if (!doc.contains("backend")) throw ConfigError("config: missing \"backend\"");
        cfg.backend = parse_backend(doc.at("backend"), base, "backend");
        if (doc.contains("generator")) cfg.generator = parse_backend(doc.at("generator"), base, "generator");

        auto env = doc.value("environment_file", "");
        if (env.empty()) throw ConfigError("config: missing \"environment_file\"");
        cfg.environment_file = resolve(base, env);

        if (doc.contains("optimizer")) {
            const auto& o = doc.at("optimizer");
            auto& opt = cfg.optimizer;
            opt.max_iterations = o.value("max_iterations", opt.max_iterations);
            opt.reward_delta_threshold = o.value("reward_delta_threshold", opt.reward_delta_threshold);
            opt.learning_rate = o.value("learning_rate", opt.learning_rate);
            opt.edits_per_candidate = o.value("edits_per_candidate", opt.edits_per_candidate);
            opt.seed = o.value("seed", opt.seed);
            opt.full_history = o.value("full_history", opt.full_history);
            opt.generator_temperature = o.value("generator_temperature", opt.generator_temperature);
            if (o.contains("split")) {
                auto split = split_from_string(o.at("split").get<std::string>());
                if (!split) throw ConfigError("optimizer.split must be train, validation or test");
                opt.split = split;
            }
            if (o.contains("example_workflow")) {
                cfg.example_workflow = resolve(base, o.at("example_workflow").get<std::string>());
            }
            cfg.task_description = o.value("task_description", "");
            opt.check();
        }
        if (cfg.task_description.empty()) cfg.task_description = kDefaultTaskDescription;

        if (doc.contains("limits")) {
            const auto& l = doc.at("limits");
            cfg.limits.max_step_executions = l.value("max_step_executions", cfg.limits.max_step_executions);
            cfg.limits.max_tool_calls = l.value("max_tool_calls", cfg.limits.max_tool_calls);
        }
        cfg.limits.check();

        cfg.parallelism = doc.value("parallelism", cfg.parallelism);
        if (cfg.parallelism < 1) throw ConfigError("parallelism must be >= 1");
        cfg.output_dir = resolve(base, doc.value("output_dir", std::string("runs")));
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

AppConfig load_app_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_app_config(doc, path.parent_path());
}

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& cfg) {
    if (cfg.kind == "scripted") return ScriptedBackend::from_file(cfg.rules_file);
    HttpBackendConfig http;
    http.endpoint = cfg.endpoint;
    http.model = cfg.model;
    http.api_key = api_key_from_env();
    http.retry.max_attempts = cfg.max_attempts;
    http.retry.base_delay = std::chrono::milliseconds(cfg.retry_base_delay_ms);
    http.timeout = std::chrono::seconds(cfg.timeout_s);
    return std::make_unique<HttpBackend>(std::move(http));
}

}  // namespace coreflow
