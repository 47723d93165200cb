#include "coreflow/backend.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace coreflow {

using json = nlohmann::json;

std::string_view to_string(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

void ChatRequest::check() const {
    if (messages.empty()) throw std::invalid_argument("chat request has no messages");
    if (messages.back().role != Role::User) {
        throw std::invalid_argument("last chat message must come from the user");
    }
    if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
    if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");
}

const std::string& ChatRequest::last_user_message() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User) return it->content;
    }
    throw std::invalid_argument("chat request has no user message");
}

ChatRequest make_request(std::string user, double temperature, std::string system) {
    ChatRequest req;
    if (!system.empty()) req.messages.push_back({Role::System, std::move(system)});
    req.messages.push_back({Role::User, std::move(user)});
    req.temperature = temperature;
    return req;
}

BackendError::BackendError(Kind kind, std::string message, int status)
    : std::runtime_error(std::move(message)), kind_(kind), status_(status) {}

// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<ScriptedRule> rules, std::string fallback)
    : fallback_(std::move(fallback)) {
    rules_.reserve(rules.size());
    for (auto& rule : rules) {
        CompiledRule compiled{std::move(rule), std::nullopt, 0};
        if (compiled.rule.pattern) compiled.regex.emplace(*compiled.rule.pattern, std::regex::ECMAScript);
        rules_.push_back(std::move(compiled));
    }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(const json& doc) {
    const json* rules_doc = &doc;
    std::string fallback;
    if (doc.is_object()) {
        rules_doc = &doc.at("rules");
        fallback = doc.value("fallback", "");
    }
    if (!rules_doc->is_array()) throw std::invalid_argument("scripted rules must be a JSON array");

    std::vector<ScriptedRule> rules;
    for (const auto& item : *rules_doc) {
        ScriptedRule rule;
        if (item.contains("match")) {
            const auto& m = item.at("match");
            if (m.is_string()) {
                rule.contains.push_back(m.get<std::string>());
            } else {
                rule.contains = m.get<std::vector<std::string>>();
            }
        }
        if (item.contains("regex")) rule.pattern = item.at("regex").get<std::string>();
        if (item.contains("responses")) rule.responses = item.at("responses").get<std::vector<std::string>>();
        if (item.contains("fallback")) rule.fallback = item.at("fallback").get<std::string>();
        rules.push_back(std::move(rule));
    }
    return std::make_unique<ScriptedBackend>(std::move(rules), std::move(fallback));
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scripted rules file " + path.string());
    return from_json(json::parse(in));
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
    request.check();
    const auto& prompt = request.last_user_message();

    std::lock_guard lock(mutex_);
    prompts_.push_back(prompt);
    for (auto& compiled : rules_) {
        const auto& rule = compiled.rule;
        bool matched = true;
        for (const auto& needle : rule.contains) {
            if (prompt.find(needle) == std::string::npos) {
                matched = false;
                break;
            }
        }
        if (matched && compiled.regex) matched = std::regex_search(prompt, *compiled.regex);
        if (!matched) continue;

        if (compiled.consumed < rule.responses.size()) {
            return {rule.responses[compiled.consumed++], std::nullopt};
        }
        if (rule.fallback) return {*rule.fallback, std::nullopt};
    }
    return {fallback_, std::nullopt};
}

std::size_t ScriptedBackend::call_count() const {
    std::lock_guard lock(mutex_);
    return prompts_.size();
}

std::vector<std::string> ScriptedBackend::prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
}

void ScriptedBackend::reset() {
    std::lock_guard lock(mutex_);
    prompts_.clear();
    for (auto& r : rules_) r.consumed = 0;
}

// ---------------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay_for(int retry) const {
    return base_delay * (1LL << std::max(0, retry - 1));
}

namespace {

// Splits "http://host:port/v1" into "http://host:port" and "/v1".
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    auto scheme = endpoint.find("://");
    auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
    auto slash = endpoint.find('/', host_start);
    if (slash == std::string::npos) return {endpoint, ""};
    auto prefix = endpoint.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {endpoint.substr(0, slash), prefix};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
    if (config_.endpoint.empty()) throw std::invalid_argument("http backend requires an endpoint");
    if (config_.model.empty()) throw std::invalid_argument("http backend requires a model name");
    if (config_.retry.max_attempts < 1) throw std::invalid_argument("retry.max_attempts must be >= 1");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    std::tie(base_url_, path_prefix_) = split_endpoint(config_.endpoint);
}

json HttpBackend::request_body(const std::string& model, const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return {{"model", model},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
}

ChatResponse HttpBackend::parse_response_body(const std::string& body) {
    try {
        auto doc = json::parse(body);
        ChatResponse response;
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        response.content = content.is_null() ? std::string{} : content.get<std::string>();
        if (doc.contains("usage") && doc["usage"].is_object()) {
            const auto& u = doc["usage"];
            response.usage = Usage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0)};
        }
        return response;
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::MalformedResponse,
                           std::string("malformed chat completion response: ") + e.what());
    }
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
    request.check();
    const auto body = request_body(config_.model, request).dump();
    const auto path = path_prefix_ + "/chat/completions";

    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    std::optional<BackendError> last;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        httplib::Client client(base_url_);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);

        auto result = client.Post(path, headers, body, "application/json");
        if (!result) {
            last.emplace(BackendError::Kind::Transport,
                         "HTTP request to " + base_url_ + path + " failed: " + httplib::to_string(result.error()));
        } else if (retryable_status(result->status)) {
            last.emplace(BackendError::Kind::Status,
                         "HTTP status " + std::to_string(result->status) + " from " + base_url_ + path,
                         result->status);
        } else if (result->status < 200 || result->status >= 300) {
            throw BackendError(BackendError::Kind::Status,
                               "HTTP status " + std::to_string(result->status) + ": " + result->body,
                               result->status);
        } else {
            return parse_response_body(result->body);
        }
        if (attempt < config_.retry.max_attempts) sleeper_(config_.retry.delay_for(attempt));
    }
    throw *last;
}

std::string api_key_from_env() {
    const char* key = std::getenv("COREFLOW_API_KEY");
    return key ? std::string(key) : std::string{};
}

}  // namespace coreflow
