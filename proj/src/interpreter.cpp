#include "coreflow/interpreter.hpp"

#include <algorithm>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "coreflow/text.hpp"

namespace coreflow {

namespace {

constexpr const char* kSystemPrompt =
    "You are the interpreter of a CoRE workflow program. Execute exactly what each request asks.";

std::string ask(ChatBackend& backend, std::string prompt) {
    return backend.complete(make_request(std::move(prompt), kInterpreterTemperature, kSystemPrompt)).content;
}

std::string describe(const MemoryEntry& e) {
    return "[" + std::string(to_string(e.kind)) + " from " + e.step_name + "] " + e.content;
}

std::string step_context(const Step& step, const std::string& step_response) {
    std::string out;
    out += "Step: " + step.name + "\n";
    out += "Step instruction: " + step.instruction + "\n";
    out += "Step response:\n" + step_response + "\n";
    return out;
}

std::string describe_tool_call(const ToolCall& call) {
    if (call.ok()) return "Tool call: " + call.name + "(" + call.args + ") -> " + *call.result;
    return "Tool call failed: " + call.name + "(" + call.args + "): " + call.error;
}

}  // namespace

std::string_view to_string(MemoryKind kind) {
    switch (kind) {
        case MemoryKind::TaskInput: return "task_input";
        case MemoryKind::Response: return "response";
        case MemoryKind::ToolResult: return "tool_result";
    }
    return "response";
}

std::string_view to_string(Outcome outcome) {
    switch (outcome) {
        case Outcome::Completed: return "completed";
        case Outcome::BudgetExhausted: return "budget_exhausted";
        case Outcome::BackendError: return "backend_error";
    }
    return "completed";
}

const MemoryEntry& Memory::append(std::string step_name, MemoryKind kind, std::string content) {
    const auto seq = entries_.empty() ? 1 : entries_.back().seq + 1;
    entries_.push_back({std::move(step_name), kind, std::move(content), seq});
    return entries_.back();
}

void ToolRegistry::add(ToolSpec tool) {
    if (tool.name.empty()) throw std::invalid_argument("tool name must not be empty");
    if (find(tool.name)) throw std::invalid_argument("duplicate tool name '" + tool.name + "'");
    tools_.push_back(std::move(tool));
}

const ToolSpec* ToolRegistry::find(std::string_view name) const {
    for (const auto& t : tools_) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void ExecutionLimits::check() const {
    if (max_step_executions < 1) throw std::invalid_argument("max_step_executions must be >= 1");
    if (max_tool_calls < 1) throw std::invalid_argument("max_tool_calls must be >= 1");
}

// --- procedure 1 ------------------------------------------------------------

std::string build_memory_selection_prompt(const Step& step, const std::vector<MemoryEntry>& memory) {
    std::string out = "[memory-selection]\n";
    out += "Current step: " + step.name + "\n";
    out += "Current step instruction: " + step.instruction + "\n\n";
    out += "Memory entries:\n";
    for (std::size_t i = 0; i < memory.size(); ++i) {
        out += std::to_string(i + 1) + ". " + describe(memory[i]) + "\n";
    }
    out += "\nWhich memory entries are needed to execute the current step? "
           "Reply with the entry numbers separated by commas, or \"none\".";
    return out;
}

std::vector<MemoryEntry> retrieve_memory(const Step& step, const std::vector<MemoryEntry>& memory,
                                         ChatBackend& backend) {
    if (memory.empty()) return {};
    const auto reply = ask(backend, build_memory_selection_prompt(step, memory));
    if (text::iequals(text::trim(reply), "none")) return {};

    std::set<std::size_t> picked;
    static const std::regex kNumber(R"(\d+)");
    for (auto it = std::sregex_iterator(reply.begin(), reply.end(), kNumber); it != std::sregex_iterator(); ++it) {
        const auto& digits = it->str();
        if (digits.size() > 9) continue;
        auto index = std::stoul(digits);
        if (index >= 1 && index <= memory.size()) picked.insert(index - 1);
    }
    if (picked.empty()) return memory;

    std::vector<MemoryEntry> out;
    for (auto i : picked) out.push_back(memory[i]);
    return out;
}

// --- procedure 2 ------------------------------------------------------------

std::string build_step_prompt(const Step& step, const std::vector<MemoryEntry>& selected,
                              const std::string& task_input) {
    std::string out = "[step] " + step.name + "\n";
    out += "Task input:\n" + task_input + "\n\n";
    if (!selected.empty()) {
        out += "Relevant memory:\n";
        for (const auto& e : selected) out += "- " + describe(e) + "\n";
        out += "\n";
    }
    out += "Instruction:\n" + step.instruction;
    return out;
}

InstructionResult run_instruction(const Step& step, const std::vector<MemoryEntry>& selected,
                                  const std::string& task_input, ChatBackend& backend, Memory& memory) {
    InstructionResult result;
    result.prompt = build_step_prompt(step, selected, task_input);
    result.response = ask(backend, result.prompt);
    memory.append(step.name, MemoryKind::Response, result.response);
    return result;
}

// --- procedure 3 ------------------------------------------------------------

std::optional<ToolCall> maybe_call_tool(const std::string& step_response, const Step& step,
                                        const ToolRegistry& tools, ChatBackend& backend, Memory& memory) {
    if (tools.empty()) return std::nullopt;

    std::string context = step_context(step, step_response) + "\nAvailable tools:\n";
    for (const auto& t : tools.tools()) {
        context += "- " + t.name + " (" + t.input_type + " -> " + t.output_type + "): " + t.description + "\n";
    }

    const auto decision = ask(backend, "[tool-decision]\n" + context +
                                           "\nDoes this step need an external tool call? Answer \"yes\" or \"no\".");
    if (!text::starts_with_icase(text::trim(decision), "yes")) return std::nullopt;

    const auto selection = ask(backend, "[tool-selection]\n" + context +
                                            "\nReply with the tool to call and its arguments in the form "
                                            "<tool name>: <arguments>");
    auto line = text::trim(text::lines(text::trim(selection)).front());
    ToolCall call;
    auto colon = line.find(':');
    call.name = std::string(text::trim(line.substr(0, colon)));
    if (colon != std::string_view::npos) call.args = std::string(text::trim(line.substr(colon + 1)));

    const auto* tool = tools.find(call.name);
    if (!tool) {
        call.error = "unknown tool '" + call.name + "'";
        return call;
    }
    call.invoked = true;
    if (!tool->invoke) {
        call.error = "tool '" + call.name + "' has no implementation";
        return call;
    }
    try {
        call.result = tool->invoke(call.args);
    } catch (const std::exception& e) {
        call.error = std::string("tool invocation failed: ") + e.what();
        return call;
    }
    memory.append(step.name, MemoryKind::ToolResult, *call.result);
    return call;
}

// --- procedure 4 ------------------------------------------------------------

NextStep decide_next(const Step& step, const std::string& step_response, ChatBackend& backend,
                     const std::optional<ToolCall>& tool) {
    if (step.kind == StepKind::Terminal) throw std::invalid_argument("Terminal step has no successor");
    if (step.connections.empty()) throw std::invalid_argument("step '" + step.name + "' has no connections");
    if (step.kind == StepKind::Process) return {step.connections.front().target, std::nullopt};

    std::string prompt = "[branch-decision]\n" + step_context(step, step_response);
    if (tool) prompt += describe_tool_call(*tool) + "\n";
    prompt += "\nChoose the next branch. Answer with exactly one of: ";
    for (std::size_t i = 0; i < step.connections.size(); ++i) {
        if (i) prompt += ", ";
        prompt += step.connections[i].label;
    }

    std::string answer;
    for (int attempt = 0; attempt < 2; ++attempt) {
        answer = ask(backend, prompt);
        if (const auto* branch = step.find_branch(answer)) return {branch->target, std::nullopt};
    }
    const auto& first = step.connections.front();
    return {first.target, "decision answer '" + std::string(text::trim(answer)) +
                              "' matched no branch; took first branch '" + first.label + "'"};
}

// --- execution --------------------------------------------------------------

ExecutionTrace execute(const Workflow& workflow, const std::string& task_input, ChatBackend& backend,
                       const ToolRegistry& tools, const ExecutionLimits& limits) {
    limits.check();
    const auto report = validate(workflow);
    if (!report.valid) throw std::invalid_argument("cannot execute invalid workflow:\n" + format_report(report));

    ExecutionTrace trace;
    Memory memory;
    memory.append("task", MemoryKind::TaskInput, task_input);

    std::string current = workflow.entry();
    bool completed = false;
    try {
        while (static_cast<int>(trace.records.size()) < limits.max_step_executions) {
            const Step& step = *workflow.find(current);
            StepRecord record;
            record.step = step.name;

            const auto selected = retrieve_memory(step, memory.entries(), backend);
            for (const auto& e : selected) record.memory_refs.push_back(e.seq);

            auto [prompt, response] = run_instruction(step, selected, task_input, backend, memory);
            record.prompt = std::move(prompt);
            record.response = std::move(response);

            if (trace.tool_invocations < limits.max_tool_calls) {
                record.tool = maybe_call_tool(record.response, step, tools, backend, memory);
                if (record.tool && record.tool->invoked) ++trace.tool_invocations;
            }

            if (step.kind == StepKind::Terminal) {
                trace.final_output = record.response;
                trace.records.push_back(std::move(record));
                completed = true;
                break;
            }

            auto next = decide_next(step, record.response, backend, record.tool);
            if (next.warning) record.warnings.push_back(*next.warning);
            record.next = next.target;
            current = next.target;
            trace.records.push_back(std::move(record));
        }
        trace.outcome = completed ? Outcome::Completed : Outcome::BudgetExhausted;
    } catch (const BackendError& e) {
        trace.outcome = Outcome::BackendError;
        trace.error = e.what();
    }
    if (!completed && !trace.records.empty()) trace.final_output = trace.records.back().response;
    return trace;
}

void write_trace_jsonl(const ExecutionTrace& trace, std::ostream& out) {
    using ojson = nlohmann::ordered_json;
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const auto& r = trace.records[i];
        ojson tool = nullptr;
        if (r.tool) {
            tool = ojson{{"name", r.tool->name}, {"args", r.tool->args}};
            tool["result"] = r.tool->result ? ojson(*r.tool->result) : ojson(nullptr);
            if (!r.tool->error.empty()) tool["error"] = r.tool->error;
        }
        ojson line{{"step", r.step}, {"prompt", r.prompt}, {"response", r.response}, {"tool", tool}};
        line["next"] = r.next.empty() ? ojson(nullptr) : ojson(r.next);
        line["seq"] = i + 1;
        out << line.dump() << '\n';
    }
}

std::string trace_to_jsonl(const ExecutionTrace& trace) {
    std::ostringstream os;
    write_trace_jsonl(trace, os);
    return os.str();
}

}  // namespace coreflow
