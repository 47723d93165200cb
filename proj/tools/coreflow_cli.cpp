// coreflow: validate, run, evaluate and optimize CoRE workflows.
//
// Exit codes
//   0  success
//   1  workflow does not validate
//   2  parse, config or usage error
//   3  run stopped on the step budget
//   4  backend error
//   5  optimizer stopped on repeated generator failure

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "coreflow/config.hpp"
#include "coreflow/environment.hpp"
#include "coreflow/interpreter.hpp"
#include "coreflow/optimizer.hpp"
#include "coreflow/repair.hpp"
#include "coreflow/workflow.hpp"

namespace fs = std::filesystem;
using namespace coreflow;

namespace {

enum Exit : int {
    kOk = 0,
    kInvalid = 1,
    kUsage = 2,
    kBudgetExhausted = 3,
    kBackendError = 4,
    kGeneratorFailure = 5,
};

constexpr std::size_t kLargeWorkflowSteps = 256;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

// output_dir/{seed-timestamp}, suffixed when two runs land in the same second.
fs::path make_run_dir(const fs::path& output_dir, std::uint64_t seed, const std::string& stamp) {
    const auto base = fmt::format("seed{}-{}", seed, stamp);
    auto dir = output_dir / base;
    for (int n = 2; fs::exists(dir); ++n) dir = output_dir / fmt::format("{}-{}", base, n);
    fs::create_directories(dir);
    return dir;
}

void write_meta(const fs::path& dir, const std::string& command, const std::string& stamp) {
    std::ofstream(dir / "meta.json") << nlohmann::json{{"command", command}, {"timestamp", stamp}}.dump(2) << '\n';
}

Workflow load_workflow(const fs::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    try {
        return parse_workflow(text);
    } catch (const ParseError& e) {
        throw UsageError(path.string() + ":" + std::to_string(e.line()) + ": " + e.reason());
    }
}

AppConfig load_config(const fs::path& path) {
    try {
        return load_app_config(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

Environment load_environment(const AppConfig& cfg) {
    try {
        return Environment::from_file(cfg.environment_file);
    } catch (const std::exception& e) {
        throw UsageError("environment: " + std::string(e.what()));
    }
}

std::unique_ptr<ChatBackend> load_backend(const BackendConfig& cfg) {
    try {
        return make_backend(cfg);
    } catch (const std::exception& e) {
        throw UsageError("backend: " + std::string(e.what()));
    }
}

// --- validate ---------------------------------------------------------------

int cmd_validate(const fs::path& path) {
    const auto workflow = load_workflow(path);
    const auto report = validate(workflow);
    if (workflow.size() > kLargeWorkflowSteps) {
        std::cerr << "warning: workflow has " << workflow.size() << " steps (more than " << kLargeWorkflowSteps
                  << ")\n";
    }
    std::cout << format_report(report);
    return report.valid ? kOk : kInvalid;
}

// --- run --------------------------------------------------------------------

struct RunArgs {
    fs::path workflow;
    fs::path config;
    std::string task;
    std::optional<fs::path> output_dir;
};

int cmd_run(const RunArgs& args) {
    const auto cfg = load_config(args.config);
    const auto env = load_environment(cfg);
    const auto workflow = load_workflow(args.workflow);
    const auto report = validate(workflow);
    if (!report.valid) {
        std::cerr << format_report(report);
        return kInvalid;
    }
    auto backend = load_backend(cfg.backend);

    const auto* task = env.find(args.task);
    const std::string objective = task ? task->objective : args.task;

    const auto trace = execute(workflow, objective, *backend, env.tools(), cfg.limits);

    const auto stamp = timestamp();
    const auto dir = make_run_dir(args.output_dir.value_or(cfg.output_dir), cfg.optimizer.seed, stamp);
    write_meta(dir, "run", stamp);
    std::ofstream(dir / "trace.jsonl") << trace_to_jsonl(trace);

    std::cout << trace.final_output << '\n';
    std::cerr << "outcome: " << to_string(trace.outcome) << " (" << trace.records.size() << " steps), trace: "
              << (dir / "trace.jsonl").string() << '\n';
    switch (trace.outcome) {
        case Outcome::Completed: return kOk;
        case Outcome::BudgetExhausted: return kBudgetExhausted;
        case Outcome::BackendError:
            std::cerr << "backend error: " << trace.error << '\n';
            return kBackendError;
    }
    return kOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
    std::optional<fs::path> workflow;
    fs::path config;
    std::string split = "test";
    std::string baseline = "none";
    std::optional<fs::path> output_dir;
};

void print_report(const EvalReport& report) {
    std::cout << fmt::format("environment: {}\nsplit: {}\nreward: {:.4f}\nvalid_plan_rate: {:.4f}\n",
                             report.environment, to_string(report.split), report.reward, report.valid_plan_rate);
    std::cout << fmt::format("{:<16} {:>6}  {:<16} {}\n", "id", "score", "outcome", "output");
    for (const auto& r : report.per_instance) {
        auto output = r.output.substr(0, r.output.find('\n'));
        if (output.size() > 60) output = output.substr(0, 57) + "...";
        std::cout << fmt::format("{:<16} {:>6.3f}  {:<16} {}\n", r.id, r.score, to_string(r.outcome), output);
    }
}

int cmd_eval(const EvalArgs& args) {
    const auto cfg = load_config(args.config);
    const auto env = load_environment(cfg);
    const auto split = split_from_string(args.split);
    if (!split) throw UsageError("--split must be train, validation or test");
    if (env.split(*split).empty()) throw UsageError("split '" + args.split + "' is empty");

    auto backend = load_backend(cfg.backend);
    EvalReport report;
    if (args.baseline == "none") {
        if (!args.workflow) throw UsageError("eval needs a workflow file unless --baseline is zero or few");
        const auto workflow = load_workflow(*args.workflow);
        const auto check = validate(workflow);
        if (!check.valid) {
            std::cerr << format_report(check);
            return kInvalid;
        }
        report = evaluate(workflow, env, *backend, *split, cfg.eval_options());
    } else if (args.baseline == "zero" || args.baseline == "few") {
        const auto schema = args.baseline == "zero" ? BaselineSchema::ZeroShot : BaselineSchema::FewShot;
        try {
            report = run_baseline(schema, env, *backend, *split, cfg.parallelism);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    } else {
        throw UsageError("--baseline must be none, zero or few");
    }

    const auto stamp = timestamp();
    const auto dir = make_run_dir(args.output_dir.value_or(cfg.output_dir), cfg.optimizer.seed, stamp);
    write_meta(dir, "eval", stamp);
    std::ofstream(dir / "report.json") << to_json(report).dump(2) << '\n';
    print_report(report);
    std::cerr << "report: " << (dir / "report.json").string() << '\n';
    return kOk;
}

// --- optimize ---------------------------------------------------------------

struct OptimizeArgs {
    fs::path config;
    std::string method = "reinforce";
    std::optional<fs::path> resume;
    std::optional<fs::path> output_dir;
};

int cmd_optimize(const OptimizeArgs& args) {
    const auto cfg = load_config(args.config);
    const auto env = load_environment(cfg);
    const auto method = method_from_string(args.method);
    if (!method) throw UsageError("--method must be incontext or reinforce");

    GenerationQuery query;
    query.example_workflow =
        cfg.example_workflow.empty() ? parse_workflow(example_workflow_text()) : load_workflow(cfg.example_workflow);
    query.task_description = cfg.task_description;
    if (!validate(query.example_workflow).valid) {
        std::cerr << format_report(validate(query.example_workflow));
        return kInvalid;
    }

    std::optional<OptimizationRun> previous;
    fs::path dir;
    const auto stamp = timestamp();
    if (args.resume) {
        std::ifstream in(*args.resume);
        if (!in) throw UsageError("cannot read run file " + args.resume->string());
        try {
            previous = read_run_jsonl(in);
        } catch (const std::exception& e) {
            throw UsageError("run file " + args.resume->string() + ": " + e.what());
        }
        if (previous->method != *method) throw UsageError("run file was produced by a different --method");
        if (previous->finished()) {
            std::cout << "run already finished (" << to_string(previous->termination) << ", "
                      << previous->iterations.size() << " iterations, best " << fmt::format("{:.4f}", previous->best_reward)
                      << ")\n";
            return kOk;
        }
        dir = args.resume->parent_path();
        if (dir.empty()) dir = ".";
    } else {
        dir = make_run_dir(args.output_dir.value_or(cfg.output_dir), cfg.optimizer.seed, stamp);
    }
    write_meta(dir, "optimize " + args.method, stamp);

    const auto run_path = args.resume ? *args.resume : dir / "run.jsonl";
    std::ofstream run_file(run_path, args.resume ? std::ios::app : std::ios::trunc);

    auto interpreter = load_backend(cfg.backend);
    std::optional<EditPolicy> policy;
    if (*method == OptimizerMethod::Reinforce) policy.emplace(EditPolicy::for_templates(env.templates()));

    RunOptions options;
    options.eval = cfg.eval_options();
    options.resume = previous ? &*previous : nullptr;
    options.on_start = [&](const OptimizationRun& run) {
        run_file << run_header_json(run, policy ? policy->actions() : std::vector<EditAction>{}).dump() << '\n'
                 << std::flush;
    };
    options.on_iteration = [&](const OptimizationRun&, const IterationRecord& r) {
        run_file << iteration_json(r).dump() << '\n' << std::flush;
        std::cout << fmt::format("iteration={} reward={:.4f} best={:.4f}{}\n", r.iteration, r.reward, r.best_reward,
                                 r.valid ? "" : " (invalid)")
                  << std::flush;
    };

    OptimizationRun run;
    if (*method == OptimizerMethod::Reinforce) {
        run = optimize_reinforce(query, env, *policy, *interpreter, cfg.optimizer, options);
    } else {
        if (!cfg.generator) throw UsageError("--method incontext needs a \"generator\" backend in the config");
        auto generator = load_backend(*cfg.generator);
        run = optimize_incontext(query, env, *generator, *interpreter, cfg.optimizer, options);
    }
    run_file << run_summary_json(run).dump() << '\n';
    run_file.close();

    if (run.best) std::ofstream(dir / "best.core") << serialize(*run.best) << '\n';
    std::cout << fmt::format("termination={} iterations={} best={:.4f}", to_string(run.termination),
                             run.iterations.size(), run.best_reward);
    if (run.test_reward) std::cout << fmt::format(" test={:.4f}", *run.test_reward);
    std::cout << "\nrun: " << run_path.string() << "\n";
    if (run.best) std::cout << "best workflow: " << (dir / "best.core").string() << "\n";
    return run.termination == Termination::GeneratorFailure ? kGeneratorFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coreflow: CoRE workflow interpreter and optimizer"};
    app.require_subcommand(1);

    fs::path validate_path;
    auto* validate_cmd = app.add_subcommand("validate", "Parse and validate a workflow file");
    validate_cmd->add_option("workflow", validate_path, "Workflow (.core) file")->required();

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "Execute a workflow on one task");
    run_cmd->add_option("workflow", run_args.workflow, "Workflow (.core) file")->required();
    run_cmd->add_option("-c,--config", run_args.config, "Config JSON file")->required();
    run_cmd->add_option("-t,--task", run_args.task, "Task instance id or a literal objective")->required();
    run_cmd->add_option("-o,--output-dir", run_args.output_dir, "Override output_dir from the config");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a workflow (or a baseline) on a dataset split");
    eval_cmd->add_option("workflow", eval_args.workflow, "Workflow (.core) file");
    eval_cmd->add_option("-c,--config", eval_args.config, "Config JSON file")->required();
    eval_cmd->add_option("-s,--split", eval_args.split, "train, validation or test")->capture_default_str();
    eval_cmd->add_option("-b,--baseline", eval_args.baseline, "none, zero or few")->capture_default_str();
    eval_cmd->add_option("-o,--output-dir", eval_args.output_dir, "Override output_dir from the config");

    OptimizeArgs opt_args;
    auto* opt_cmd = app.add_subcommand("optimize", "Search for a better workflow");
    opt_cmd->add_option("-c,--config", opt_args.config, "Config JSON file")->required();
    opt_cmd->add_option("-m,--method", opt_args.method, "incontext or reinforce")->capture_default_str();
    opt_cmd->add_option("-r,--resume", opt_args.resume, "Continue a persisted run.jsonl");
    opt_cmd->add_option("-o,--output-dir", opt_args.output_dir, "Override output_dir from the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*validate_cmd) return cmd_validate(validate_path);
        if (*run_cmd) return cmd_run(run_args);
        if (*eval_cmd) return cmd_eval(eval_args);
        if (*opt_cmd) return cmd_optimize(opt_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
