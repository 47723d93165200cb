#include <sstream>

#include <nlohmann/json.hpp>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "coreflow/backend.hpp"
#include "coreflow/config.hpp"
#include "coreflow/environment.hpp"
#include "coreflow/interpreter.hpp"
#include "coreflow/optimizer.hpp"
#include "coreflow/repair.hpp"
#include "coreflow/workflow.hpp"

namespace py = pybind11;
using namespace coreflow;
using json = nlohmann::json;

namespace {

// JSON crosses the boundary as text; the json module does the rest.
py::object to_py(const json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

json from_py(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

Split split_arg(const std::string& name) {
    auto s = split_from_string(name);
    if (!s) throw py::value_error("split must be train, validation or test");
    return *s;
}

py::dict trace_dict(const ExecutionTrace& trace) {
    py::dict d;
    d["outcome"] = std::string(to_string(trace.outcome));
    d["final_output"] = trace.final_output;
    d["error"] = trace.error;
    d["tool_invocations"] = trace.tool_invocations;
    py::list steps;
    for (const auto& r : trace.records) steps.append(r.step);
    d["steps"] = steps;
    d["jsonl"] = trace_to_jsonl(trace);
    return d;
}

py::object run_dict(const OptimizationRun& run, const std::vector<EditAction>& actions = {}) {
    std::ostringstream os;
    write_run_jsonl(run, os, actions);
    auto summary = to_py(run_summary_json(run));
    py::dict d;
    d["summary"] = summary;
    d["best"] = run.best ? py::cast(serialize(*run.best)) : py::none();
    d["best_reward"] = run.best_reward;
    d["best_iteration"] = run.best_iteration;
    d["termination"] = std::string(to_string(run.termination));
    d["test_reward"] = run.test_reward ? py::cast(*run.test_reward) : py::none();
    py::list rewards;
    for (const auto& it : run.iterations) rewards.append(it.reward);
    d["rewards"] = rewards;
    d["jsonl"] = os.str();
    return d;
}

}  // namespace

PYBIND11_MODULE(_coreflow, m) {
    m.doc() = "CoRE workflow parsing, interpretation, evaluation and optimization.";

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<BackendError>(m, "BackendError", PyExc_RuntimeError);
    py::register_exception<RepairError>(m, "RepairError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::enum_<StepKind>(m, "StepKind")
        .value("Process", StepKind::Process)
        .value("Decision", StepKind::Decision)
        .value("Terminal", StepKind::Terminal);

    py::class_<Connection>(m, "Connection")
        .def_readonly("label", &Connection::label)
        .def_readonly("target", &Connection::target)
        .def("__repr__", [](const Connection& c) { return "<Connection " + c.label + " -> " + c.target + ">"; });

    py::class_<Step>(m, "Step")
        .def_readonly("name", &Step::name)
        .def_readonly("kind", &Step::kind)
        .def_readonly("instruction", &Step::instruction)
        .def_readonly("connections", &Step::connections);

    py::class_<ValidationIssue>(m, "ValidationIssue")
        .def_property_readonly("severity",
                               [](const ValidationIssue& i) { return i.severity == Severity::Error ? "error" : "warning"; })
        .def_readonly("step", &ValidationIssue::step)
        .def_readonly("message", &ValidationIssue::message);

    py::class_<ValidationReport>(m, "ValidationReport")
        .def_readonly("valid", &ValidationReport::valid)
        .def_readonly("issues", &ValidationReport::issues)
        .def_property_readonly("error_count", &ValidationReport::error_count)
        .def_property_readonly("warning_count", &ValidationReport::warning_count)
        .def("__bool__", [](const ValidationReport& r) { return r.valid; })
        .def("__str__", &format_report);

    py::class_<Workflow>(m, "Workflow")
        .def_static("parse", [](const std::string& text) { return parse_workflow(text); }, py::arg("text"))
        .def_property_readonly("steps", &Workflow::steps)
        .def_property_readonly("entry", &Workflow::entry)
        .def("validate", [](const Workflow& w) { return validate(w); })
        .def("serialize", [](const Workflow& w) { return serialize(w); })
        .def("__len__", &Workflow::size)
        .def("__eq__", [](const Workflow& a, const Workflow& b) { return a == b; })
        .def("__str__", [](const Workflow& w) { return serialize(w); });

    m.def("parse", [](const std::string& text) { return parse_workflow(text); }, py::arg("text"));
    m.def("validate", [](const Workflow& w) { return validate(w); }, py::arg("workflow"));
    m.def("serialize", [](const Workflow& w) { return serialize(w); }, py::arg("workflow"));
    m.def("normalize", [](const std::string& text) { return normalize_workflow_text(text); }, py::arg("text"));
    m.def("example_workflow_text", [] { return std::string(example_workflow_text()); });

    py::class_<ChatBackend>(m, "ChatBackend")
        .def("complete",
             [](ChatBackend& b, const std::string& prompt, double temperature) {
                 py::gil_scoped_release release;
                 return b.complete(make_request(prompt, temperature)).content;
             },
             py::arg("prompt"), py::arg("temperature") = 0.0);

    py::class_<ScriptedBackend, ChatBackend>(m, "ScriptedBackend")
        .def(py::init([](const py::object& rules) { return ScriptedBackend::from_json(from_py(rules)); }),
             py::arg("rules"))
        .def_static("from_file", [](const std::string& path) { return ScriptedBackend::from_file(path); })
        .def_property_readonly("call_count", &ScriptedBackend::call_count)
        .def_property_readonly("prompts", &ScriptedBackend::prompts)
        .def("reset", &ScriptedBackend::reset);

    py::class_<HttpBackend, ChatBackend>(m, "HttpBackend")
        .def(py::init([](std::string endpoint, std::string model, int max_attempts, int timeout_s) {
                 HttpBackendConfig cfg;
                 cfg.endpoint = std::move(endpoint);
                 cfg.model = std::move(model);
                 cfg.api_key = api_key_from_env();
                 cfg.retry.max_attempts = max_attempts;
                 cfg.timeout = std::chrono::seconds(timeout_s);
                 return std::make_unique<HttpBackend>(std::move(cfg));
             }),
             py::arg("endpoint"), py::arg("model"), py::arg("max_attempts") = 3, py::arg("timeout_s") = 60);

    py::class_<TaskInstance>(m, "TaskInstance")
        .def_readonly("id", &TaskInstance::id)
        .def_readonly("objective", &TaskInstance::objective)
        .def_readonly("input_type", &TaskInstance::input_type)
        .def_readonly("output_type", &TaskInstance::output_type)
        .def_readonly("expected", &TaskInstance::expected)
        .def_property_readonly("split", [](const TaskInstance& t) { return std::string(to_string(t.split)); });

    py::class_<Environment>(m, "Environment")
        .def(py::init([](const py::object& doc) { return Environment::from_json(from_py(doc)); }), py::arg("doc"))
        .def_static("from_file", [](const std::string& path) { return Environment::from_file(path); })
        .def_property_readonly("name", &Environment::name)
        .def_property_readonly("instances", &Environment::instances)
        .def("split", [](const Environment& e, const std::string& s) { return e.split(split_arg(s)); })
        .def("find",
             [](const Environment& e, const std::string& id) -> std::optional<TaskInstance> {
                 auto* t = e.find(id);
                 return t ? std::optional<TaskInstance>(*t) : std::nullopt;
             })
        .def("score", &Environment::score, py::arg("task"), py::arg("output"))
        .def("valid_plan", &Environment::valid_plan, py::arg("task"), py::arg("output"))
        .def("shortest_chain_length", [](const Environment& e, const std::string& in, const std::string& out) {
            return shortest_chain_length(in, out, e.tools());
        });

    m.def("parse_plan", &parse_plan, py::arg("output"));

    m.def(
        "execute",
        [](const Workflow& w, const std::string& task_input, ChatBackend& backend, const Environment* env,
           int max_steps, int max_tools) {
            ExecutionLimits limits{max_steps, max_tools};
            ToolRegistry none;
            ExecutionTrace trace;
            {
                py::gil_scoped_release release;
                trace = execute(w, task_input, backend, env ? env->tools() : none, limits);
            }
            return trace_dict(trace);
        },
        py::arg("workflow"), py::arg("task_input"), py::arg("backend"), py::arg("env") = nullptr,
        py::arg("max_step_executions") = 64, py::arg("max_tool_calls") = 32);

    m.def(
        "evaluate",
        [](const Workflow& w, const Environment& env, ChatBackend& backend, const std::string& split,
           int parallelism) {
            EvalReport report;
            {
                py::gil_scoped_release release;
                report = evaluate(w, env, backend, split_arg(split), EvalOptions{{}, parallelism});
            }
            return to_py(to_json(report));
        },
        py::arg("workflow"), py::arg("env"), py::arg("backend"), py::arg("split") = "validation",
        py::arg("parallelism") = 4);

    m.def(
        "run_baseline",
        [](const std::string& schema, const Environment& env, ChatBackend& backend, const std::string& split) {
            BaselineSchema s;
            if (schema == "zero") s = BaselineSchema::ZeroShot;
            else if (schema == "few") s = BaselineSchema::FewShot;
            else throw py::value_error("schema must be zero or few");
            EvalReport report;
            {
                py::gil_scoped_release release;
                report = run_baseline(s, env, backend, split_arg(split));
            }
            return to_py(to_json(report));
        },
        py::arg("schema"), py::arg("env"), py::arg("backend"), py::arg("split") = "test");

    m.def(
        "repair",
        [](const std::string& text, ChatBackend& backend) {
            py::gil_scoped_release release;
            auto r = repair_workflow(text, backend);
            return std::make_pair(r.workflow, r.model_attempts);
        },
        py::arg("text"), py::arg("backend"));

    m.def("softmax", [](const std::vector<double>& logits) { return softmax(logits); }, py::arg("logits"));
    m.def("feedback_sentence", &feedback_sentence, py::arg("reward"));

    py::class_<OptimizerConfig>(m, "OptimizerConfig")
        .def(py::init<>())
        .def_readwrite("max_iterations", &OptimizerConfig::max_iterations)
        .def_readwrite("reward_delta_threshold", &OptimizerConfig::reward_delta_threshold)
        .def_readwrite("learning_rate", &OptimizerConfig::learning_rate)
        .def_readwrite("edits_per_candidate", &OptimizerConfig::edits_per_candidate)
        .def_readwrite("seed", &OptimizerConfig::seed)
        .def_readwrite("full_history", &OptimizerConfig::full_history)
        .def_readwrite("generator_temperature", &OptimizerConfig::generator_temperature)
        .def_property(
            "split",
            [](const OptimizerConfig& c) -> std::optional<std::string> {
                if (!c.split) return std::nullopt;
                return std::string(to_string(*c.split));
            },
            [](OptimizerConfig& c, std::optional<std::string> s) {
                c.split = s ? std::optional<Split>(split_arg(*s)) : std::nullopt;
            });

    m.def(
        "optimize_reinforce",
        [](const Workflow& example, const Environment& env, ChatBackend& interpreter, const OptimizerConfig& cfg,
           int parallelism) {
            auto policy = EditPolicy::for_templates(env.templates());
            OptimizationRun run;
            {
                py::gil_scoped_release release;
                RunOptions opts;
                opts.eval.parallelism = parallelism;
                run = optimize_reinforce({example, {}}, env, policy, interpreter, cfg, opts);
            }
            auto d = run_dict(run, policy.actions());
            d["theta"] = policy.theta();
            return d;
        },
        py::arg("example"), py::arg("env"), py::arg("interpreter"), py::arg("config"), py::arg("parallelism") = 4);

    m.def(
        "optimize_incontext",
        [](const Workflow& example, const Environment& env, ChatBackend& generator, ChatBackend& interpreter,
           const OptimizerConfig& cfg, const std::string& task_description, int parallelism) {
            OptimizationRun run;
            {
                py::gil_scoped_release release;
                RunOptions opts;
                opts.eval.parallelism = parallelism;
                GenerationQuery q{example, task_description};
                if (q.task_description.empty()) q.task_description = "Design a workflow for the tasks in " + env.name() + ".";
                run = optimize_incontext(q, env, generator, interpreter, cfg, opts);
            }
            return run_dict(run);
        },
        py::arg("example"), py::arg("env"), py::arg("generator"), py::arg("interpreter"), py::arg("config"),
        py::arg("task_description") = "", py::arg("parallelism") = 4);
}
