#include "coreflow/environment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "coreflow/text.hpp"

namespace coreflow {

using json = nlohmann::json;

namespace {

// Calls fn(i) for i in [0, n) on up to `parallelism` threads.
template <typename Fn>
void parallel_for(std::size_t n, int parallelism, Fn fn) {
    const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, parallelism)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (auto i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

void finish_report(EvalReport& report) {
    double total = 0.0;
    std::size_t valid = 0;
    for (const auto& r : report.per_instance) {
        total += r.score;
        valid += r.valid_plan;
    }
    const auto n = static_cast<double>(report.per_instance.size());
    report.reward = total / n;
    report.valid_plan_rate = static_cast<double>(valid) / n;
}

std::string strip_plan_token(std::string_view token) {
    token = text::trim(token);
    // "1. tool", "1) tool", "- tool", "* tool"
    std::size_t i = 0;
    while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ++i;
    if (i > 0 && i < token.size() && (token[i] == '.' || token[i] == ')')) token = token.substr(i + 1);
    token = text::trim(token);
    if (!token.empty() && (token.front() == '-' || token.front() == '*')) token = text::trim(token.substr(1));
    while (!token.empty() && (token.front() == '`' || token.front() == '"')) token.remove_prefix(1);
    while (!token.empty() && (token.back() == '`' || token.back() == '"')) token.remove_suffix(1);
    return std::string(text::trim(token));
}

}  // namespace

std::string_view to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "train";
}

std::optional<Split> split_from_string(std::string_view name) {
    for (auto s : {Split::Train, Split::Validation, Split::Test}) {
        if (text::iequals(name, to_string(s))) return s;
    }
    return std::nullopt;
}

Environment::Environment(std::string name, ToolRegistry tools, std::vector<TaskInstance> instances,
                         ScoringKind scoring, EditTemplates templates)
    : name_(std::move(name)),
      tools_(std::move(tools)),
      instances_(std::move(instances)),
      scoring_(scoring),
      templates_(std::move(templates)) {
    std::set<std::string> ids;
    for (const auto& inst : instances_) {
        if (inst.id.empty()) throw std::invalid_argument("task instance with empty id");
        if (!ids.insert(inst.id).second) throw std::invalid_argument("duplicate task instance id '" + inst.id + "'");
    }
    if (scoring_ == ScoringKind::TypedPlanning) {
        std::set<std::string> vocabulary;
        for (const auto& t : tools_.tools()) {
            vocabulary.insert(t.input_type);
            vocabulary.insert(t.output_type);
        }
        for (const auto& inst : instances_) {
            if (!vocabulary.count(inst.input_type) || !vocabulary.count(inst.output_type)) {
                throw std::invalid_argument("instance '" + inst.id + "' uses a type tag unknown to the tool registry");
            }
        }
    }
}

std::function<std::string(const std::string&)> placeholder_tool(const std::string& name,
                                                                 const std::string& output_type) {
    return [name, output_type](const std::string& args) {
        return name + " produced a " + output_type + " result for: " + args;
    };
}

Environment Environment::from_json(const json& doc) {
    ToolRegistry tools;
    for (const auto& t : doc.value("tools", json::array())) {
        ToolSpec spec;
        spec.name = t.at("name").get<std::string>();
        spec.description = t.value("description", "");
        spec.input_type = t.at("input_type").get<std::string>();
        spec.output_type = t.at("output_type").get<std::string>();
        spec.invoke = placeholder_tool(spec.name, spec.output_type);
        tools.add(std::move(spec));
    }

    std::vector<TaskInstance> instances;
    for (const auto& i : doc.at("instances")) {
        TaskInstance inst;
        inst.id = i.at("id").get<std::string>();
        inst.objective = i.at("objective").get<std::string>();
        inst.input_type = i.value("input_type", "");
        inst.output_type = i.value("output_type", "");
        inst.expected = i.at("expected").get<std::string>();
        auto split = split_from_string(i.at("split").get<std::string>());
        if (!split) throw std::invalid_argument("instance '" + inst.id + "' has an unknown split");
        inst.split = *split;
        instances.push_back(std::move(inst));
    }

    ScoringKind scoring = tools.empty() ? ScoringKind::ExactMatch : ScoringKind::TypedPlanning;
    if (doc.contains("scoring")) {
        const auto s = doc.at("scoring").get<std::string>();
        if (s == "typed_planning") {
            scoring = ScoringKind::TypedPlanning;
        } else if (s == "exact_match") {
            scoring = ScoringKind::ExactMatch;
        } else {
            throw std::invalid_argument("unknown scoring kind '" + s + "'");
        }
    }

    EditTemplates templates;
    if (doc.contains("templates")) {
        const auto& t = doc.at("templates");
        templates.process = t.value("process", std::vector<std::string>{});
        templates.decision = t.value("decision", std::vector<std::string>{});
        templates.instruction = t.value("instruction", std::vector<std::string>{});
    }
    return Environment(doc.at("name").get<std::string>(), std::move(tools), std::move(instances), scoring,
                       std::move(templates));
}

Environment Environment::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open environment file " + path.string());
    return from_json(json::parse(in));
}

std::vector<TaskInstance> Environment::split(Split which) const {
    std::vector<TaskInstance> out;
    for (const auto& inst : instances_) {
        if (inst.split == which) out.push_back(inst);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

const TaskInstance* Environment::find(std::string_view id) const {
    for (const auto& inst : instances_) {
        if (inst.id == id) return &inst;
    }
    return nullptr;
}

double Environment::score(const TaskInstance& task, const std::string& output) const {
    return scoring_ == ScoringKind::TypedPlanning ? typed_planning_score(task, output, tools_)
                                                  : arithmetic_chain_score(task, output);
}

bool Environment::valid_plan(const TaskInstance& task, const std::string& output) const {
    if (scoring_ == ScoringKind::TypedPlanning) return is_valid_chain(task, parse_plan(output), tools_);
    auto t = text::trim(output);
    if (!t.empty() && (t.front() == '-' || t.front() == '+')) t.remove_prefix(1);
    return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

// --- scoring -------------------------------------------------------------

std::vector<std::string> parse_plan(const std::string& output) {
    std::vector<std::string> plan;
    for (auto line : text::lines(output)) {
        for (auto token : text::split(line, ",")) {
            auto name = strip_plan_token(token);
            if (!name.empty()) plan.push_back(std::move(name));
        }
    }
    return plan;
}

bool is_valid_chain(const TaskInstance& task, const std::vector<std::string>& plan, const ToolRegistry& tools) {
    if (plan.empty()) return false;
    std::string current = task.input_type;
    for (const auto& name : plan) {
        const auto* tool = tools.find(name);
        if (!tool || tool->input_type != current) return false;
        current = tool->output_type;
    }
    return current == task.output_type;
}

std::optional<std::size_t> shortest_chain_length(const std::string& input_type, const std::string& output_type,
                                                 const ToolRegistry& tools) {
    std::map<std::string, std::size_t> dist;
    std::deque<std::string> queue;
    for (const auto& t : tools.tools()) {
        if (t.input_type == input_type && !dist.count(t.output_type)) {
            dist[t.output_type] = 1;
            queue.push_back(t.output_type);
        }
    }
    while (!queue.empty()) {
        auto type = queue.front();
        queue.pop_front();
        if (type == output_type) return dist[type];
        for (const auto& t : tools.tools()) {
            if (t.input_type == type && !dist.count(t.output_type)) {
                dist[t.output_type] = dist[type] + 1;
                queue.push_back(t.output_type);
            }
        }
    }
    return std::nullopt;
}

double typed_planning_score(const TaskInstance& task, const std::string& final_output, const ToolRegistry& tools) {
    const auto plan = parse_plan(final_output);
    if (!is_valid_chain(task, plan, tools)) return 0.0;
    const auto shortest = shortest_chain_length(task.input_type, task.output_type, tools);
    return shortest && plan.size() == *shortest ? 1.0 : 0.5;
}

double arithmetic_chain_score(const TaskInstance& task, const std::string& final_output) {
    return text::trim(final_output) == text::trim(task.expected) ? 1.0 : 0.0;
}

// --- evaluation ----------------------------------------------------------

EvalReport evaluate(const Workflow& workflow, const Environment& env, ChatBackend& backend, Split split,
                    const EvalOptions& options) {
    const auto report_check = validate(workflow);
    if (!report_check.valid) {
        throw std::invalid_argument("cannot evaluate invalid workflow:\n" + format_report(report_check));
    }
    const auto tasks = env.split(split);
    if (tasks.empty()) throw std::invalid_argument("split '" + std::string(to_string(split)) + "' is empty");

    EvalReport report;
    report.environment = env.name();
    report.split = split;
    report.per_instance.resize(tasks.size());
    parallel_for(tasks.size(), options.parallelism, [&](std::size_t i) {
        const auto& task = tasks[i];
        auto trace = execute(workflow, task.objective, backend, env.tools(), options.limits);
        auto& r = report.per_instance[i];
        r.id = task.id;
        r.outcome = trace.outcome;
        r.output = trace.final_output;
        if (trace.outcome == Outcome::Completed) {
            r.score = env.score(task, trace.final_output);
            r.valid_plan = env.valid_plan(task, trace.final_output);
        }
    });
    finish_report(report);
    return report;
}

std::string build_zero_shot_prompt(const TaskInstance& task) { return task.objective; }

std::string build_few_shot_prompt(const Environment& env, const TaskInstance& task) {
    const auto train = env.split(Split::Train);
    if (train.empty()) throw std::invalid_argument("few-shot baseline needs at least one train demonstration");
    std::string out = "Here are solved examples of similar tasks.\n\n";
    for (std::size_t i = 0; i < std::min(kFewShotDemonstrations, train.size()); ++i) {
        out += "Task: " + train[i].objective + "\nAnswer: " + train[i].expected + "\n\n";
    }
    out += "Task: " + task.objective + "\nAnswer:";
    return out;
}

EvalReport run_baseline(BaselineSchema schema, const Environment& env, ChatBackend& backend, Split split,
                        int parallelism) {
    const auto tasks = env.split(split);
    if (tasks.empty()) throw std::invalid_argument("split '" + std::string(to_string(split)) + "' is empty");
    if (schema == BaselineSchema::FewShot && env.split(Split::Train).empty()) {
        throw std::invalid_argument("few-shot baseline needs at least one train demonstration");
    }

    EvalReport report;
    report.environment = env.name();
    report.split = split;
    report.per_instance.resize(tasks.size());
    parallel_for(tasks.size(), parallelism, [&](std::size_t i) {
        const auto& task = tasks[i];
        auto& r = report.per_instance[i];
        r.id = task.id;
        const auto prompt =
            schema == BaselineSchema::ZeroShot ? build_zero_shot_prompt(task) : build_few_shot_prompt(env, task);
        try {
            r.output = backend.complete(make_request(prompt, kInterpreterTemperature)).content;
            r.outcome = Outcome::Completed;
            r.score = env.score(task, r.output);
            r.valid_plan = env.valid_plan(task, r.output);
        } catch (const BackendError&) {
            r.outcome = Outcome::BackendError;
            r.output.clear();
        }
    });
    finish_report(report);
    return report;
}

json to_json(const EvalReport& report) {
    json per = json::array();
    for (const auto& r : report.per_instance) {
        per.push_back({{"id", r.id},
                       {"score", r.score},
                       {"outcome", to_string(r.outcome)},
                       {"valid_plan", r.valid_plan},
                       {"output", r.output}});
    }
    return {{"environment", report.environment},
            {"split", to_string(report.split)},
            {"reward", report.reward},
            {"valid_plan_rate", report.valid_plan_rate},
            {"per_instance", std::move(per)}};
}

}  // namespace coreflow
