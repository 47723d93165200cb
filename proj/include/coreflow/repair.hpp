#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "coreflow/backend.hpp"
#include "coreflow/workflow.hpp"

namespace coreflow {

class RepairError : public std::runtime_error {
public:
    RepairError(std::string message, std::optional<ParseError> parse_error,
                std::optional<ValidationReport> validation);

    const std::optional<ParseError>& parse_error() const noexcept { return parse_error_; }
    const std::optional<ValidationReport>& validation() const noexcept { return validation_; }

private:
    std::optional<ParseError> parse_error_;
    std::optional<ValidationReport> validation_;
};

/// Deterministic clean-up of model output: drops prose and code fences around
/// the step lines, joins wrapped instructions, normalises delimiter spacing
/// and kind capitalisation, and restores the trailing ":::" on Terminal
/// steps. Idempotent.
std::string normalize_workflow_text(std::string_view text);

/// Prompt sent to the model when the deterministic pass is not enough.
std::string build_repair_prompt(std::string_view invalid_text, std::string_view problem);

struct RepairResult {
    Workflow workflow;
    int model_attempts = 0;  // 0 when the deterministic pass sufficed
};

inline constexpr int kMaxModelRepairAttempts = 2;

/// Returns a workflow that parses and validates, or throws RepairError
/// carrying the last parse error or validation report.
RepairResult repair_workflow(std::string_view invalid_text, ChatBackend& backend);

/// The reference listing shown to models as a grammar example.
std::string_view example_workflow_text();

}  // namespace coreflow
