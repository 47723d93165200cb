#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coreflow/backend.hpp"
#include "coreflow/interpreter.hpp"
#include "coreflow/workflow.hpp"

namespace coreflow {

enum class Split { Train, Validation, Test };

std::string_view to_string(Split split);
std::optional<Split> split_from_string(std::string_view name);

struct TaskInstance {
    std::string id;
    std::string objective;
    std::string input_type;
    std::string output_type;
    std::string expected;
    Split split = Split::Train;
};

/// Instructions the workflow editor may splice into candidate workflows.
struct EditTemplates {
    std::vector<std::string> process;      // inserted as new Process steps
    std::vector<std::string> decision;     // inserted as Yes/No check steps
    std::vector<std::string> instruction;  // replacement instructions
};

enum class ScoringKind { TypedPlanning, ExactMatch };

class Environment {
public:
    using Scorer = std::function<double(const TaskInstance&, const std::string&)>;

    Environment(std::string name, ToolRegistry tools, std::vector<TaskInstance> instances, ScoringKind scoring,
                EditTemplates templates = {});

    /// Environment definition file:
    /// {name, tools:[{name,description,input_type,output_type}],
    ///  instances:[{id,objective,input_type,output_type,expected,split}],
    ///  scoring?: "typed_planning" | "exact_match", templates?: {process,decision,instruction}}
    static Environment from_json(const nlohmann::json& doc);
    static Environment from_file(const std::filesystem::path& path);

    const std::string& name() const noexcept { return name_; }
    const ToolRegistry& tools() const noexcept { return tools_; }
    const std::vector<TaskInstance>& instances() const noexcept { return instances_; }
    const EditTemplates& templates() const noexcept { return templates_; }
    ScoringKind scoring() const noexcept { return scoring_; }

    /// Instances of one split, ordered by id.
    std::vector<TaskInstance> split(Split which) const;
    const TaskInstance* find(std::string_view id) const;

    /// Score in [0,1] for one final output.
    double score(const TaskInstance& task, const std::string& output) const;
    /// Whether the output is a well-formed answer (a registered, type-consistent
    /// plan for typed planning; an integer for exact match).
    bool valid_plan(const TaskInstance& task, const std::string& output) const;

private:
    std::string name_;
    ToolRegistry tools_;
    std::vector<TaskInstance> instances_;
    ScoringKind scoring_;
    EditTemplates templates_;
};

/// Tool invocation used for environments loaded from JSON, where tools have
/// no executable implementation: echoes a typed placeholder result.
std::function<std::string(const std::string&)> placeholder_tool(const std::string& name,
                                                                 const std::string& output_type);

// --- scoring -------------------------------------------------------------

/// Splits a plan on commas and newlines; empty when nothing usable is found.
std::vector<std::string> parse_plan(const std::string& output);

/// True when every tool is registered and the types chain from the task's
/// input type to its output type.
bool is_valid_chain(const TaskInstance& task, const std::vector<std::string>& plan, const ToolRegistry& tools);

/// Length of the shortest non-empty tool chain from input_type to
/// output_type, or nullopt when no chain exists.
std::optional<std::size_t> shortest_chain_length(const std::string& input_type, const std::string& output_type,
                                                 const ToolRegistry& tools);

/// 0 for an unregistered tool or a broken type chain, 1 for a valid chain of
/// minimal length, 0.5 for a valid but longer chain.
double typed_planning_score(const TaskInstance& task, const std::string& final_output, const ToolRegistry& tools);

/// 1 on an exact match after trimming, else 0.
double arithmetic_chain_score(const TaskInstance& task, const std::string& final_output);

// --- evaluation ----------------------------------------------------------

struct InstanceResult {
    std::string id;
    double score = 0.0;
    Outcome outcome = Outcome::Completed;
    std::string output;
    bool valid_plan = false;
};

struct EvalReport {
    std::string environment;
    Split split = Split::Validation;
    std::vector<InstanceResult> per_instance;  // ordered by id
    double reward = 0.0;
    double valid_plan_rate = 0.0;
};

struct EvalOptions {
    ExecutionLimits limits;
    int parallelism = 4;
};

/// Runs the workflow once per instance of the split. Runs that do not
/// complete score 0. Throws std::invalid_argument for an invalid workflow or
/// an empty split.
EvalReport evaluate(const Workflow& workflow, const Environment& env, ChatBackend& backend, Split split,
                    const EvalOptions& options = {});

enum class BaselineSchema { ZeroShot, FewShot };

inline constexpr std::size_t kFewShotDemonstrations = 3;

std::string build_zero_shot_prompt(const TaskInstance& task);
/// Demonstrations are the first train instances by id.
std::string build_few_shot_prompt(const Environment& env, const TaskInstance& task);

/// One backend call per instance with no workflow involved.
EvalReport run_baseline(BaselineSchema schema, const Environment& env, ChatBackend& backend, Split split,
                        int parallelism = 4);

nlohmann::json to_json(const EvalReport& report);

}  // namespace coreflow
