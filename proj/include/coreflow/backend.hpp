#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace coreflow {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;

    /// Throws std::invalid_argument unless messages is non-empty, the last
    /// message is from the user, temperature >= 0 and max_tokens > 0.
    void check() const;

    const std::string& last_user_message() const;
};

/// Convenience: optional system prompt followed by one user message.
ChatRequest make_request(std::string user, double temperature = 0.0, std::string system = {});

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string content;
    std::optional<Usage> usage;
};

class BackendError : public std::runtime_error {
public:
    enum class Kind { Transport, Status, MalformedResponse };

    BackendError(Kind kind, std::string message, int status = 0);

    Kind kind() const noexcept { return kind_; }
    int status() const noexcept { return status_; }

private:
    Kind kind_;
    int status_;
};

/// Every backend must be safe to call from several threads at once; the
/// interpreter fans evaluation instances out concurrently.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

/// One scripted rule. A rule matches when the last user message contains
/// every substring in `contains` and, if set, the regex also finds a match.
/// Responses are consumed one per match; once they run out the rule answers
/// with `fallback`, or stops matching when there is no fallback.
struct ScriptedRule {
    std::vector<std::string> contains;
    std::optional<std::string> pattern;
    std::vector<std::string> responses;
    std::optional<std::string> fallback;
};

class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(std::vector<ScriptedRule> rules, std::string fallback = {});

    /// Accepts either an array of rule objects or {"rules": [...], "fallback": "..."}.
    /// Rule object: {"match": string | [string...], "regex": string, "responses": [...], "fallback": string}.
    static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& doc);
    static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

    ChatResponse complete(const ChatRequest& request) override;

    std::size_t call_count() const;
    /// Last user message of every request seen so far, in call order.
    std::vector<std::string> prompts() const;
    /// Rewinds every rule's response queue and clears the prompt log.
    void reset();

private:
    struct CompiledRule {
        ScriptedRule rule;
        std::optional<std::regex> regex;
        std::size_t consumed = 0;
    };

    std::vector<CompiledRule> rules_;
    std::string fallback_;
    mutable std::mutex mutex_;
    std::vector<std::string> prompts_;
};

// ---------------------------------------------------------------------------
// HTTP backend

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{1000};

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1).
    std::chrono::milliseconds delay_for(int retry) const;
};

struct HttpBackendConfig {
    std::string endpoint;  // e.g. "https://api.openai.com/v1"
    std::string model;
    std::string api_key;   // sent as a bearer token when non-empty
    RetryPolicy retry;
    std::chrono::seconds timeout{60};
};

/// Chat-completions client: POST {endpoint}/chat/completions.
class HttpBackend final : public ChatBackend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit HttpBackend(HttpBackendConfig config, Sleeper sleeper = {});

    ChatResponse complete(const ChatRequest& request) override;

    static nlohmann::json request_body(const std::string& model, const ChatRequest& request);
    static ChatResponse parse_response_body(const std::string& body);

    const HttpBackendConfig& config() const noexcept { return config_; }

private:
    HttpBackendConfig config_;
    Sleeper sleeper_;
    std::string base_url_;
    std::string path_prefix_;
};

/// Reads the API key from COREFLOW_API_KEY; empty when unset.
std::string api_key_from_env();

}  // namespace coreflow
