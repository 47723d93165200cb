#pragma once

// CoRE workflow programs: one step per line, four components delimited by
// ":::" (name, kind, instruction, connections). Connections are "::"
// separated label/target pairs, e.g.
//
//   Step 4:::Decision:::Check the plan.:::Yes::Step 5::No::Step 3
//   Step 6:::Terminal:::Output the plan.:::

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coreflow {

enum class StepKind { Process, Decision, Terminal };

std::string_view to_string(StepKind kind);
std::optional<StepKind> step_kind_from_string(std::string_view token);

struct Connection {
    std::string label;
    std::string target;

    bool operator==(const Connection&) const = default;
};

struct Step {
    std::string name;
    StepKind kind = StepKind::Process;
    std::string instruction;
    std::vector<Connection> connections;

    bool operator==(const Step&) const = default;

    const Connection* find_branch(std::string_view label) const;
};

/// An ordered list of steps. The entry step is always the first one listed.
class Workflow {
public:
    Workflow() = default;
    explicit Workflow(std::vector<Step> steps) : steps_(std::move(steps)) {}

    const std::vector<Step>& steps() const noexcept { return steps_; }
    std::size_t size() const noexcept { return steps_.size(); }
    bool empty() const noexcept { return steps_.empty(); }

    /// Name of the first listed step, or an empty string for an empty workflow.
    const std::string& entry() const;

    const Step* find(std::string_view name) const;
    std::optional<std::size_t> index_of(std::string_view name) const;

    bool operator==(const Workflow&) const = default;

private:
    std::vector<Step> steps_;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, std::string reason);

    std::size_t line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t line_;
    std::string reason_;
};

/// Parses CoRE text. Only the line grammar is checked here; graph-level
/// problems (arity, dangling targets, reachability) are left to validate().
/// Throws ParseError on malformed input.
Workflow parse_workflow(std::string_view text);

/// True when a physical line opens a new step rather than continuing the
/// previous step's instruction.
bool is_step_header(std::string_view line);

enum class Severity { Error, Warning };

struct ValidationIssue {
    Severity severity = Severity::Error;
    std::string step;  // step name or "global"
    std::string message;
};

struct ValidationReport {
    bool valid = true;
    std::vector<ValidationIssue> issues;

    std::size_t error_count() const;
    std::size_t warning_count() const;
};

ValidationReport validate(const Workflow& workflow);

std::string serialize(const Workflow& workflow);

std::string format_report(const ValidationReport& report);

}  // namespace coreflow
