#include "coreflow/workflow.hpp"

#include <cctype>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "coreflow/text.hpp"

namespace coreflow {

namespace {

constexpr std::string_view kFieldDelim = ":::";
constexpr std::string_view kConnDelim = "::";

bool has_step_name_prefix(std::string_view prefix) {
    if (!text::starts_with_icase(prefix, "step") || prefix.size() < 5) return false;
    // "Step" followed by whitespace and a non-empty identifier.
    auto rest = prefix.substr(4);
    if (!std::isspace(static_cast<unsigned char>(rest.front()))) return false;
    return !text::trim(rest).empty();
}

// A field written right before ":::" must not end in ':' or the delimiter
// would be found one character early.
void append_field(std::string& out, std::string_view field) {
    out += field;
    if (!field.empty() && field.back() == ':') out += ' ';
}

}  // namespace

std::string_view to_string(StepKind kind) {
    switch (kind) {
        case StepKind::Process: return "Process";
        case StepKind::Decision: return "Decision";
        case StepKind::Terminal: return "Terminal";
    }
    return "Process";
}

std::optional<StepKind> step_kind_from_string(std::string_view token) {
    token = text::trim(token);
    for (auto kind : {StepKind::Process, StepKind::Decision, StepKind::Terminal}) {
        if (text::iequals(token, to_string(kind))) return kind;
    }
    return std::nullopt;
}

const Connection* Step::find_branch(std::string_view label) const {
    auto wanted = text::trim(label);
    for (const auto& c : connections) {
        if (text::iequals(c.label, wanted)) return &c;
    }
    return nullptr;
}

const std::string& Workflow::entry() const {
    static const std::string kNone;
    return steps_.empty() ? kNone : steps_.front().name;
}

const Step* Workflow::find(std::string_view name) const {
    for (const auto& s : steps_) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

std::optional<std::size_t> Workflow::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < steps_.size(); ++i) {
        if (steps_[i].name == name) return i;
    }
    return std::nullopt;
}

ParseError::ParseError(std::size_t line, std::string reason)
    : std::runtime_error("line " + std::to_string(line) + ": " + reason),
      line_(line),
      reason_(std::move(reason)) {}

bool is_step_header(std::string_view line) {
    line = text::trim(line);
    auto pos = line.find(kFieldDelim);
    if (pos == std::string_view::npos) return false;
    auto prefix = text::trim(line.substr(0, pos));
    if (has_step_name_prefix(prefix)) return true;
    // Custom step names are recognised by a valid kind in the second field.
    auto rest = line.substr(pos + kFieldDelim.size());
    auto kind_field = rest.substr(0, rest.find(kFieldDelim));
    return step_kind_from_string(kind_field).has_value();
}

Workflow parse_workflow(std::string_view input) {
    struct LogicalLine {
        std::size_t line;
        std::string text;
    };
    std::vector<LogicalLine> logical;

    auto physical = text::lines(input);
    for (std::size_t i = 0; i < physical.size(); ++i) {
        auto line = text::trim(physical[i]);
        if (line.empty()) continue;
        if (is_step_header(line)) {
            logical.push_back({i + 1, std::string(line)});
        } else if (logical.empty()) {
            throw ParseError(i + 1, "expected a step header of the form <name>:::<kind>:::<instruction>:::<connections>");
        } else {
            logical.back().text += ' ';
            logical.back().text += line;
        }
    }
    if (logical.empty()) throw ParseError(1, "empty workflow text");

    std::vector<Step> steps;
    steps.reserve(logical.size());
    for (const auto& [line_no, line] : logical) {
        auto fields = text::split(line, kFieldDelim);
        if (fields.size() != 4) {
            throw ParseError(line_no, "wrong field count: expected 4 ':::'-delimited fields, found " +
                                          std::to_string(fields.size()));
        }
        Step step;
        step.name = std::string(text::trim(fields[0]));
        if (step.name.empty()) throw ParseError(line_no, "empty step name");

        auto kind = step_kind_from_string(fields[1]);
        if (!kind) {
            throw ParseError(line_no, "unknown step kind '" + std::string(text::trim(fields[1])) + "'");
        }
        step.kind = *kind;

        step.instruction = std::string(text::trim(fields[2]));
        if (step.instruction.empty()) throw ParseError(line_no, "empty instruction");

        auto conn_field = text::trim(fields[3]);
        if (!conn_field.empty()) {
            auto tokens = text::split(conn_field, kConnDelim);
            if (tokens.size() % 2 != 0) {
                throw ParseError(line_no, "dangling connection token '" +
                                              std::string(text::trim(tokens.back())) + "' (label without target)");
            }
            for (std::size_t t = 0; t < tokens.size(); t += 2) {
                Connection c{std::string(text::trim(tokens[t])), std::string(text::trim(tokens[t + 1]))};
                if (c.label.empty() || c.target.empty()) {
                    throw ParseError(line_no, "dangling connection token (empty label or target)");
                }
                if (step.find_branch(c.label) != nullptr) {
                    throw ParseError(line_no, "duplicate connection label '" + c.label + "'");
                }
                step.connections.push_back(std::move(c));
            }
        }
        steps.push_back(std::move(step));
    }
    return Workflow(std::move(steps));
}

std::size_t ValidationReport::error_count() const {
    std::size_t n = 0;
    for (const auto& i : issues) n += i.severity == Severity::Error;
    return n;
}

std::size_t ValidationReport::warning_count() const {
    return issues.size() - error_count();
}

ValidationReport validate(const Workflow& workflow) {
    ValidationReport report;
    auto error = [&](std::string step, std::string msg) {
        report.issues.push_back({Severity::Error, std::move(step), std::move(msg)});
    };
    auto warning = [&](std::string step, std::string msg) {
        report.issues.push_back({Severity::Warning, std::move(step), std::move(msg)});
    };

    if (workflow.empty()) {
        error("global", "workflow has no steps");
        report.valid = false;
        return report;
    }

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < workflow.size(); ++i) {
        const auto& name = workflow.steps()[i].name;
        if (!index.emplace(name, i).second) error(name, "duplicate step name");
    }

    for (const auto& step : workflow.steps()) {
        const auto& name = step.name;
        if (name.empty()) error("global", "step with empty name");
        if (name.find(kConnDelim) != std::string::npos) error(name, "step name contains '::'");
        if (!name.empty() && (name.front() == ':' || name.back() == ':')) {
            error(name, "step name starts or ends with ':'");
        }
        if (name.find_first_of("\r\n") != std::string::npos ||
            step.instruction.find_first_of("\r\n") != std::string::npos) {
            error(name, "line break inside a step field");
        }
        if (text::trim(step.instruction).empty()) error(name, "empty instruction");
        if (step.instruction.find(kFieldDelim) != std::string::npos) {
            error(name, "instruction contains the ':::' delimiter");
        }

        const auto n = step.connections.size();
        switch (step.kind) {
            case StepKind::Process:
                if (n != 1) {
                    error(name, "Process step must have exactly one connection, found " + std::to_string(n));
                } else if (step.connections.front().label != "next") {
                    error(name, "Process step connection label must be \"next\"");
                }
                break;
            case StepKind::Decision: {
                if (n < 2) error(name, "Decision step needs at least 2 branches, found " + std::to_string(n));
                std::set<std::string> labels;
                for (const auto& c : step.connections) {
                    if (!labels.insert(text::to_lower(c.label)).second) {
                        error(name, "duplicate branch label '" + c.label + "'");
                    }
                }
                break;
            }
            case StepKind::Terminal:
                if (n != 0) error(name, "Terminal step must have no connections");
                break;
        }

        for (const auto& c : step.connections) {
            if (text::trim(c.label).empty() || c.label.find(kConnDelim) != std::string::npos ||
                c.label.find(':') == 0 || (!c.label.empty() && c.label.back() == ':') ||
                c.label.find_first_of("\r\n") != std::string::npos) {
                error(name, "malformed connection label '" + c.label + "'");
            }
            if (!index.count(c.target)) {
                error(name, "connection '" + c.label + "' targets missing step '" + c.target + "'");
            }
        }
    }

    std::vector<bool> seen(workflow.size(), false);
    std::deque<std::size_t> queue{0};
    seen[0] = true;
    bool terminal_reachable = false;
    while (!queue.empty()) {
        auto i = queue.front();
        queue.pop_front();
        const auto& step = workflow.steps()[i];
        if (step.kind == StepKind::Terminal) terminal_reachable = true;
        for (const auto& c : step.connections) {
            auto it = index.find(c.target);
            if (it != index.end() && !seen[it->second]) {
                seen[it->second] = true;
                queue.push_back(it->second);
            }
        }
    }
    for (std::size_t i = 0; i < workflow.size(); ++i) {
        if (!seen[i]) warning(workflow.steps()[i].name, "unreachable from entry step");
    }
    if (!terminal_reachable) error("global", "no Terminal step is reachable from the entry step");

    report.valid = report.error_count() == 0;
    return report;
}

std::string serialize(const Workflow& workflow) {
    std::string out;
    for (std::size_t i = 0; i < workflow.size(); ++i) {
        const auto& step = workflow.steps()[i];
        if (i) out += '\n';
        append_field(out, step.name);
        out += kFieldDelim;
        out += to_string(step.kind);
        out += kFieldDelim;
        append_field(out, step.instruction);
        out += kFieldDelim;
        for (std::size_t c = 0; c < step.connections.size(); ++c) {
            if (c) out += kConnDelim;
            out += step.connections[c].label;
            out += kConnDelim;
            out += step.connections[c].target;
        }
    }
    return out;
}

std::string format_report(const ValidationReport& report) {
    std::ostringstream os;
    os << (report.valid ? "valid" : "invalid") << " (" << report.error_count() << " error(s), "
       << report.warning_count() << " warning(s))\n";
    for (const auto& issue : report.issues) {
        os << "  " << (issue.severity == Severity::Error ? "error" : "warning") << " [" << issue.step
           << "]: " << issue.message << '\n';
    }
    return os.str();
}

}  // namespace coreflow
