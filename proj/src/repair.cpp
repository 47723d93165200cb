#include "coreflow/repair.hpp"

#include <regex>

#include "coreflow/text.hpp"

namespace coreflow {

namespace {

constexpr std::string_view kExampleListing =
    "Step 1:::Process:::Identify the input data type based on the objective.:::next::Step 2\n"
    "Step 2:::Process:::Identify the output data type based on the objective.:::next::Step 3\n"
    "Step 3:::Process:::Select tools in the provided tool list to generate a plan.:::next::Step 4\n"
    "Step 4:::Decision:::Check whether every tool in the plan is in the provided tool list.:::Yes::Step 5::No::Step 3\n"
    "Step 5:::Decision:::Check whether the output data type of the previous tool is the input data type\n"
    "of the next tool.:::Yes::Step 6::No::Step 3\n"
    "Step 6:::Terminal:::Output the plan by listing the tool names.:::";

std::size_t count_delims(std::string_view s) {
    std::size_t n = 0;
    for (auto pos = s.find(":::"); pos != std::string_view::npos; pos = s.find(":::", pos + 3)) ++n;
    return n;
}

std::string canonical_step_line(const std::string& line) {
    auto parts = text::split(line, ":::");
    std::vector<std::string> fields;
    for (auto p : parts) fields.emplace_back(text::trim(p));

    if (fields.size() >= 2) {
        if (auto kind = step_kind_from_string(fields[1])) fields[1] = std::string(to_string(*kind));
    }
    if (fields.size() == 3 && fields[1] == "Terminal") fields.emplace_back();
    if (fields.size() == 4 && !fields[3].empty()) {
        std::vector<std::string> tokens;
        for (auto t : text::split(fields[3], "::")) tokens.emplace_back(text::trim(t));
        fields[3] = text::join(tokens, "::");
    }
    return text::join(fields, ":::");
}

std::string strip_list_marker(std::string_view line) {
    static const std::regex kMarker(R"(^(?:[-*+]|\d+[.)])\s+)");
    std::string s(line);
    std::smatch m;
    if (std::regex_search(s, m, kMarker)) {
        auto rest = s.substr(m.length(0));
        if (is_step_header(rest)) return rest;
    }
    return s;
}

}  // namespace

RepairError::RepairError(std::string message, std::optional<ParseError> parse_error,
                         std::optional<ValidationReport> validation)
    : std::runtime_error(std::move(message)),
      parse_error_(std::move(parse_error)),
      validation_(std::move(validation)) {}

std::string_view example_workflow_text() { return kExampleListing; }

std::string normalize_workflow_text(std::string_view input) {
    static const std::regex kFieldSpacing(R"(\s*:::\s*)");

    std::vector<std::string> steps;
    std::string current;
    bool open = false;  // whether the current step may still take continuation lines

    for (auto raw : text::lines(input)) {
        auto trimmed = text::trim(raw);
        if (trimmed.empty() || trimmed.starts_with("```")) {
            open = false;
            continue;
        }
        auto line = std::regex_replace(strip_list_marker(trimmed), kFieldSpacing, ":::");
        if (is_step_header(line)) {
            if (!current.empty()) steps.push_back(canonical_step_line(current));
            current = line;
            open = true;
        } else if (open && !current.empty() && count_delims(current) < 3) {
            current += ' ';
            current += line;
        } else {
            open = false;
        }
    }
    if (!current.empty()) steps.push_back(canonical_step_line(current));
    return text::join(steps, "\n");
}

std::string build_repair_prompt(std::string_view invalid_text, std::string_view problem) {
    std::string out;
    out += "The following workflow is not a valid CoRE program.\n";
    out += "Problem: ";
    out += problem;
    out += "\n\n";
    out += "CoRE grammar: one step per line in the form\n"
           "<step name>:::<Process|Decision|Terminal>:::<instruction>:::<connections>\n"
           "A Process step has exactly one connection \"next::<target step>\". A Decision step lists two or more "
           "\"<label>::<target step>\" pairs joined by \"::\". A Terminal step ends with \":::\" and has no "
           "connections. Every target must name an existing step and a Terminal step must be reachable from the "
           "first step.\n\n";
    out += "Example:\n";
    out += kExampleListing;
    out += "\n\nInvalid workflow:\n";
    out += invalid_text;
    out += "\n\nReply with the corrected workflow only.";
    return out;
}

RepairResult repair_workflow(std::string_view invalid_text, ChatBackend& backend) {
    std::optional<ParseError> last_parse;
    std::optional<ValidationReport> last_report;
    std::string problem;

    auto try_text = [&](std::string_view candidate) -> std::optional<Workflow> {
        try {
            auto workflow = parse_workflow(normalize_workflow_text(candidate));
            auto report = validate(workflow);
            if (report.valid) return workflow;
            problem = format_report(report);
            last_report = std::move(report);
            last_parse.reset();
        } catch (const ParseError& e) {
            problem = e.what();
            last_parse = e;
            last_report.reset();
        }
        return std::nullopt;
    };

    if (auto w = try_text(invalid_text)) return {std::move(*w), 0};

    for (int attempt = 1; attempt <= kMaxModelRepairAttempts; ++attempt) {
        std::string reply;
        try {
            reply = backend.complete(make_request(build_repair_prompt(invalid_text, problem))).content;
        } catch (const BackendError& e) {
            problem = std::string("repair request failed: ") + e.what();
            continue;
        }
        if (auto w = try_text(reply)) return {std::move(*w), attempt};
    }
    throw RepairError("workflow could not be repaired: " + problem, last_parse, last_report);
}

}  // namespace coreflow
