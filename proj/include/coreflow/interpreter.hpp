#pragma once

// Step-by-step execution of a Workflow against a chat backend. Each executed
// step runs four procedures in order:
//   1. retrieve_memory  - ask the model which memory entries the step needs
//   2. run_instruction  - assemble the step prompt and get the response
//   3. maybe_call_tool  - let the model request one external tool call
//   4. decide_next      - follow the Process edge or pick a Decision branch

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "coreflow/backend.hpp"
#include "coreflow/workflow.hpp"

namespace coreflow {

enum class MemoryKind { TaskInput, Response, ToolResult };

std::string_view to_string(MemoryKind kind);

struct MemoryEntry {
    std::string step_name;
    MemoryKind kind = MemoryKind::Response;
    std::string content;
    std::uint64_t seq = 0;
};

/// Append-only log; seq starts at 1 and increases by one per entry.
class Memory {
public:
    const MemoryEntry& append(std::string step_name, MemoryKind kind, std::string content);

    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<MemoryEntry> entries_;
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::string input_type;
    std::string output_type;
    std::function<std::string(const std::string&)> invoke;
};

class ToolRegistry {
public:
    /// Throws std::invalid_argument on a duplicate name.
    void add(ToolSpec tool);

    const ToolSpec* find(std::string_view name) const;
    const std::vector<ToolSpec>& tools() const noexcept { return tools_; }
    bool empty() const noexcept { return tools_.empty(); }
    std::size_t size() const noexcept { return tools_.size(); }

private:
    std::vector<ToolSpec> tools_;
};

struct ExecutionLimits {
    int max_step_executions = 64;
    int max_tool_calls = 32;

    void check() const;
};

struct ToolCall {
    std::string name;
    std::string args;
    std::optional<std::string> result;
    std::string error;     // set when the call failed
    bool invoked = false;  // false when the tool name was not registered

    bool ok() const noexcept { return result.has_value(); }
};

struct StepRecord {
    std::string step;
    std::vector<std::uint64_t> memory_refs;  // seq numbers of the retrieved entries
    std::string prompt;
    std::string response;
    std::optional<ToolCall> tool;
    std::string next;  // empty for Terminal steps
    std::vector<std::string> warnings;
};

enum class Outcome { Completed, BudgetExhausted, BackendError };

std::string_view to_string(Outcome outcome);

struct ExecutionTrace {
    std::vector<StepRecord> records;
    std::string final_output;
    Outcome outcome = Outcome::Completed;
    std::string error;  // backend failure message when outcome == BackendError
    int tool_invocations = 0;
};

/// Sampling temperature used for every interpreter request.
inline constexpr double kInterpreterTemperature = 0.0;

/// Procedure 1. No backend call when memory is empty. The reply is parsed as
/// 1-based indices into the listed entries; "none" selects nothing and an
/// unparseable reply selects everything.
std::vector<MemoryEntry> retrieve_memory(const Step& step, const std::vector<MemoryEntry>& memory,
                                         ChatBackend& backend);

std::string build_memory_selection_prompt(const Step& step, const std::vector<MemoryEntry>& memory);

/// Procedure 2 prompt: task input, then the selected memory (omitted when
/// empty), then the step instruction.
std::string build_step_prompt(const Step& step, const std::vector<MemoryEntry>& selected,
                              const std::string& task_input);

struct InstructionResult {
    std::string prompt;
    std::string response;
};

/// Procedure 2. The response is appended to memory as a Response entry.
InstructionResult run_instruction(const Step& step, const std::vector<MemoryEntry>& selected,
                                  const std::string& task_input, ChatBackend& backend, Memory& memory);

/// Procedure 3. Returns nothing when the model declines (or the registry is
/// empty). Unknown tools and tool failures come back as a ToolCall with
/// `error` set and leave memory untouched.
std::optional<ToolCall> maybe_call_tool(const std::string& step_response, const Step& step,
                                        const ToolRegistry& tools, ChatBackend& backend, Memory& memory);

struct NextStep {
    std::string target;
    std::optional<std::string> warning;
};

/// Procedure 4. Process steps never call the backend. Decision answers are
/// matched case-insensitively against the branch labels; after two misses the
/// first branch is taken and a warning is returned.
NextStep decide_next(const Step& step, const std::string& step_response, ChatBackend& backend,
                     const std::optional<ToolCall>& tool = std::nullopt);

/// Runs the workflow from its entry step. Throws std::invalid_argument if the
/// workflow does not validate; backend failures end the run with
/// Outcome::BackendError instead of propagating.
ExecutionTrace execute(const Workflow& workflow, const std::string& task_input, ChatBackend& backend,
                       const ToolRegistry& tools, const ExecutionLimits& limits = {});

/// JSON-lines export: one object per record with keys
/// step, prompt, response, tool, next, seq.
void write_trace_jsonl(const ExecutionTrace& trace, std::ostream& out);
std::string trace_to_jsonl(const ExecutionTrace& trace);

}  // namespace coreflow
