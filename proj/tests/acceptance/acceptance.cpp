// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fail.
//
//   coreflow_acceptance [--cli <path to coreflow>] [--workdir <dir>]

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "coreflow/environment.hpp"
#include "coreflow/interpreter.hpp"
#include "coreflow/optimizer.hpp"
#include "coreflow/repair.hpp"
#include "coreflow/workflow.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace coreflow;
using json = nlohmann::json;
using testsupport::slurp;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

const fs::path kTyped = testsupport::data_dir() / "typed_planning";

Environment typed_planning() { return Environment::from_file(kTyped / "environment.json"); }
std::unique_ptr<ScriptedBackend> typed_rules() { return ScriptedBackend::from_file(kTyped / "interpreter_rules.json"); }
Workflow listing() { return parse_workflow(testsupport::kListing); }
Workflow degraded() { return parse_workflow(slurp(kTyped / "degraded.core")); }

// --- 1 -------------------------------------------------------------------------

Verdict grammar_fidelity() {
    Verdict o;
    const auto t0 = Clock::now();
    const auto wf = parse_workflow(testsupport::kListing);
    o.require(wf.size() == 6, "expected 6 steps");
    const StepKind kinds[] = {StepKind::Process,  StepKind::Process,  StepKind::Process,
                              StepKind::Decision, StepKind::Decision, StepKind::Terminal};
    for (std::size_t i = 0; i < std::min<std::size_t>(6, wf.size()); ++i) {
        o.require(wf.steps()[i].kind == kinds[i], "kind of step " + std::to_string(i + 1));
    }
    if (wf.size() == 6) {
        o.require(wf.steps()[3].connections == std::vector<Connection>{{"Yes", "Step 5"}, {"No", "Step 3"}},
                  "Step 4 branches");
        o.require(wf.steps()[4].connections == std::vector<Connection>{{"Yes", "Step 6"}, {"No", "Step 3"}},
                  "Step 5 branches");
    }
    o.require(parse_workflow(serialize(wf)) == wf, "round trip differs");
    const auto secs = seconds_since(t0);
    o.require(secs < 1.0, "runtime >= 1s");
    if (o.pass) o.detail = fmt::format("6 steps P,P,P,D,D,T; round trip identical; {:.3f}s", secs);
    return o;
}

// --- 2 -------------------------------------------------------------------------

Verdict round_trip_property() {
    Verdict o;
    const auto t0 = Clock::now();
    testsupport::RandomWorkflows gen(20240601);
    int ok = 0;
    for (int i = 0; i < 500; ++i) {
        auto wf = gen.next();
        if (!validate(wf).valid) {
            o.require(false, "generator produced an invalid workflow");
            break;
        }
        try {
            if (parse_workflow(serialize(wf)) == wf) ++ok;
        } catch (const ParseError&) {
        }
    }
    const auto secs = seconds_since(t0);
    o.require(ok == 500, fmt::format("{}/500 round-tripped", ok));
    o.require(secs < 10.0, "runtime >= 10s");
    if (o.pass) o.detail = fmt::format("500/500 random workflows round-trip; {:.3f}s", secs);
    return o;
}

// --- 3 -------------------------------------------------------------------------

Verdict interpreter_semantics() {
    Verdict o;
    const auto golden = slurp(testsupport::golden_dir() / "listing_trace.jsonl");
    ToolRegistry tools;
    tools.add({"tool_lookup", "Look up the signature of a tool by name.", "text", "text",
               [](const std::string& args) { return args + " (text -> image)"; }});
    const std::string task = "Generate an image of a German street sign from the given English text.";
    const auto loop = parse_workflow(slurp(testsupport::test_data_dir() / "no_forever.core"));
    const ExecutionLimits limits;

    std::string first_loop;
    for (int run = 0; run < 5; ++run) {
        auto backend = ScriptedBackend::from_file(testsupport::test_data_dir() / "listing_rules.json");
        const auto trace = execute(listing(), task, *backend, tools);
        o.require(trace.records.size() == 6, "listing trace does not have 6 records");
        o.require(trace_to_jsonl(trace) == golden, fmt::format("run {} differs from golden trace", run + 1));

        auto loop_backend = ScriptedBackend::from_file(testsupport::test_data_dir() / "no_forever_rules.json");
        const auto loop_trace = execute(loop, "x", *loop_backend, ToolRegistry{}, limits);
        o.require(loop_trace.outcome == coreflow::Outcome::BudgetExhausted, "no-forever run did not exhaust budget");
        o.require(static_cast<int>(loop_trace.records.size()) == limits.max_step_executions,
                  fmt::format("no-forever run has {} records", loop_trace.records.size()));
        const auto text = trace_to_jsonl(loop_trace);
        if (run == 0) first_loop = text;
        o.require(text == first_loop, "no-forever trace not deterministic");
    }
    if (o.pass) {
        o.detail = fmt::format("golden 6-record trace x5; no-forever halts at {} records x5", limits.max_step_executions);
    }
    return o;
}

// --- 4 -------------------------------------------------------------------------

Verdict reward_arithmetic() {
    Verdict o;
    const auto doc = testsupport::load_json(kTyped / "environment.json");
    const auto fixture = testsupport::load_json(kTyped / "fixture_plans.json");
    const auto env = Environment::from_json(doc);
    o.require(env.instances().size() == 24, "dataset does not have 24 instances");

    double worst = 0.0;
    std::size_t instances = 0;
    for (const auto& wf : {listing(), degraded()}) {
        for (auto split : {Split::Train, Split::Validation, Split::Test}) {
            auto backend = typed_rules();
            const auto report = evaluate(wf, env, *backend, split);
            double sum = 0.0;
            for (const auto& r : report.per_instance) sum += r.score;
            worst = std::max(worst, std::abs(report.reward - sum / report.per_instance.size()));
            instances += report.per_instance.size();
        }
    }
    o.require(instances == 48, "evaluation did not cover all 24 instances for both workflows");
    o.require(worst <= 1e-12, fmt::format("reward differs from mean by {:g}", worst));

    testsupport::ChainOracle oracle(doc);
    std::size_t agree = 0, total = 0;
    for (const auto& f : fixture) {
        const auto* task = env.find(f["id"].get<std::string>());
        bool all = task != nullptr;
        if (task) {
            for (const auto* tier : {"both_checks", "types_check_only", "tools_check_only", "no_checks"}) {
                const auto plan = f[tier].get<std::string>();
                all = all && typed_planning_score(*task, plan, env.tools()) ==
                                 oracle.score(task->input_type, task->output_type, plan);
            }
            all = all && typed_planning_score(*task, task->expected, env.tools()) ==
                             oracle.score(task->input_type, task->output_type, task->expected);
        }
        agree += all;
        ++total;
    }
    o.require(total == 24 && agree == total, fmt::format("oracle agreement {}/{}", agree, total));
    if (o.pass) o.detail = fmt::format("max |reward - mean| = {:g}; oracle agreement {}/{}", worst, agree, total);
    return o;
}

// --- 5 -------------------------------------------------------------------------

Verdict reinforce_correctness() {
    Verdict o;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    const double h = 1e-6;
    double worst = 0.0;
    EditPolicy grad_policy(std::vector<EditAction>(6, EditAction{}));
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> theta(6);
        for (auto& t : theta) t = dist(rng);
        grad_policy.set_state(theta, 0.0, 0);
        for (std::size_t a = 0; a < theta.size(); ++a) {
            const auto grad = grad_policy.grad_log_prob(a);
            double diff = 0.0, ng = 0.0, nf = 0.0;
            for (std::size_t j = 0; j < theta.size(); ++j) {
                auto up = theta, down = theta;
                up[j] += h;
                down[j] -= h;
                const auto fd = (std::log(softmax(up)[a]) - std::log(softmax(down)[a])) / (2 * h);
                diff += (fd - grad[j]) * (fd - grad[j]);
                ng += grad[j] * grad[j];
                nf += fd * fd;
            }
            worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(ng), std::sqrt(nf)));
        }
    }
    o.require(worst < 1e-4, fmt::format("gradient relative error {:g}", worst));

    EditPolicy policy({{EditKind::DeleteStep, 0}, {EditKind::RetargetConnection, 0}});
    Rng prng(7);
    testsupport::BanditOracle oracle(7, 0.1);
    double max_dev = 0.0;
    for (int it = 0; it < 200; ++it) {
        const auto a = policy.sample(prng);
        const std::size_t sampled[] = {a};
        policy.reinforce(sampled, a == 0 ? 1.0 : 0.0, 0.1);
        const int oa = oracle.step();
        if (static_cast<int>(a) != oa) max_dev = std::max(max_dev, 1.0);
        max_dev = std::max({max_dev, std::abs(policy.theta()[0] - oracle.t0), std::abs(policy.theta()[1] - oracle.t1),
                            std::abs(policy.baseline() - oracle.baseline)});
    }
    const double p_best = policy.probabilities()[0];
    o.require(max_dev <= 1e-9, fmt::format("bandit trajectory deviates by {:g}", max_dev));
    o.require(p_best > 0.9, fmt::format("pi(best) = {:.4f}", p_best));
    if (o.pass) {
        o.detail = fmt::format("max FD rel err {:.2e}; bandit pi(best)={:.4f}, trajectory dev {:.1e}", worst, p_best,
                               max_dev);
    }
    return o;
}

// --- 6 -------------------------------------------------------------------------

Verdict optimization_improves() {
    Verdict o;
    const auto t0 = Clock::now();
    const auto env = typed_planning();
    OptimizerConfig cfg;
    cfg.max_iterations = 30;
    cfg.reward_delta_threshold = 0.0;
    RunOptions options;
    options.evaluate_test = false;

    int improved = 0;
    std::string gains;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        cfg.seed = seed;
        auto interpreter = typed_rules();
        auto policy = EditPolicy::for_templates(env.templates());
        const auto run = optimize_reinforce({degraded(), "Design a planning workflow."}, env, policy, *interpreter, cfg,
                                            options);
        const double gain = run.best_reward - run.seed_reward.value_or(0.0);
        o.require(run.iterations.size() <= 30, "more than 30 iterations");
        improved += gain >= 0.2;
        gains += fmt::format("{}{:.3f}", gains.empty() ? "" : ",", gain);
    }
    const auto secs = seconds_since(t0);
    o.require(improved >= 8, fmt::format("{}/10 seeds improved by >= 0.2 (gains {})", improved, gains));
    o.require(secs < 120.0, fmt::format("runtime {:.1f}s >= 120s", secs));
    if (o.pass) o.detail = fmt::format("{}/10 seeds gain >= 0.2 (gains {}); {:.1f}s", improved, gains, secs);
    return o;
}

// --- 7 -------------------------------------------------------------------------

Verdict incontext_contract() {
    Verdict o;
    const auto env = typed_planning();
    const GenerationQuery query{degraded(), "Design a planning workflow."};

    {
        ScriptedRule constant;
        constant.fallback = testsupport::kListing;
        ScriptedBackend generator({constant});
        auto interpreter = typed_rules();
        OptimizerConfig cfg;
        const auto run = optimize_incontext(query, env, generator, *interpreter, cfg);
        const auto prompts = generator.prompts();
        const auto sentence = feedback_sentence(run.iterations.empty() ? 0.0 : run.iterations[0].reward);
        o.require(sentence == "The execution performance of the previous workflow is 0.9167. Provide a new workflow "
                              "that can gain a better performance",
                  "feedback sentence: " + sentence);
        o.require(prompts.size() == 2 && prompts[1].find(sentence) != std::string::npos,
                  "iteration-2 prompt lacks the feedback sentence");
        o.require(run.termination == Termination::DeltaConverged && run.iterations.size() == 2,
                  fmt::format("constant generator ended {} after {} iterations", to_string(run.termination),
                              run.iterations.size()));
    }
    o.require(feedback_sentence(0.6415) ==
                  "The execution performance of the previous workflow is 0.6415. Provide a new workflow that can "
                  "gain a better performance",
              "0.6415 template");

    // Five workflows; workflow k answers the first k of 4 validation tasks.
    std::vector<TaskInstance> tasks;
    for (int i = 0; i < 4; ++i) {
        tasks.push_back({"v" + std::to_string(i), "Compute item " + std::to_string(i) + ".", "text", "text",
                         std::to_string(10 + i), Split::Validation});
    }
    Environment rising("Rising", {}, tasks, ScoringKind::ExactMatch);
    std::vector<ScriptedRule> rules;
    std::vector<std::string> candidates;
    for (int k = 0; k < 5; ++k) {
        const auto instr = "Answer attempt " + std::to_string(k) + ".";
        candidates.push_back("Step 1:::Terminal:::" + instr + ":::");
        for (int i = 0; i < 4; ++i) {
            ScriptedRule r;
            r.contains = {"[step]", "Task input:\n" + tasks[i].objective + "\n", "Instruction:\n" + instr};
            r.fallback = i < k ? tasks[i].expected : "wrong";
            rules.push_back(r);
        }
    }
    ScriptedBackend interpreter(rules);
    ScriptedRule gen;
    gen.responses = candidates;
    ScriptedBackend generator({gen});
    OptimizerConfig cfg;
    cfg.max_iterations = 5;
    const auto run = optimize_incontext(query, rising, generator, interpreter, cfg);
    const double hand[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    bool exact = run.iterations.size() == 5;
    for (std::size_t k = 0; exact && k < 5; ++k) exact = run.iterations[k].reward == hand[k];
    o.require(exact, "rising-reward fixture rewards differ from 0, 0.25, 0.5, 0.75, 1");
    o.require(run.best_iteration == 5, "best is not the last workflow");
    if (o.pass) {
        o.detail = "iteration-2 prompt has 'performance ... is 0.9167.'; constant generator delta_converged at 2; "
                   "rising rewards 0,0.25,0.5,0.75,1 exact";
    }
    return o;
}

// --- 8 -------------------------------------------------------------------------

Verdict repair_pipeline() {
    Verdict o;
    const auto fixtures = testsupport::load_json(testsupport::test_data_dir() / "repair_fixtures.json");
    int repaired = 0, invalid_success = 0;
    for (const auto& f : fixtures) {
        ScriptedRule rule;
        rule.contains = {"not a valid CoRE program"};
        rule.responses = f["model_replies"].get<std::vector<std::string>>();
        ScriptedBackend backend({rule});
        try {
            const auto result = repair_workflow(f["input"].get<std::string>(), backend);
            if (validate(result.workflow).valid) ++repaired;
            else ++invalid_success;
        } catch (const RepairError&) {
        }
    }
    o.require(fixtures.size() == 20, "expected 20 fixtures");
    o.require(repaired >= 18, fmt::format("{}/20 repaired", repaired));
    o.require(invalid_success == 0, "a repair returned an invalid workflow");
    if (o.pass) o.detail = fmt::format("{}/{} repaired, all validate-clean", repaired, fixtures.size());
    return o;
}

// --- 9 -------------------------------------------------------------------------

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run_cli(const std::string& cli, const std::string& args) {
    const auto cmd = "'" + cli + "' " + args + " 2>&1";
    CliResult r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::optional<fs::path> single_subdir(const fs::path& parent) {
    std::optional<fs::path> found;
    if (!fs::exists(parent)) return found;
    for (const auto& e : fs::directory_iterator(parent)) {
        if (!e.is_directory()) continue;
        if (found) return std::nullopt;
        found = e.path();
    }
    return found;
}

Verdict end_to_end_cli(const std::string& cli, const fs::path& workdir) {
    Verdict o;
    if (cli.empty()) {
        o.require(false, "no --cli given");
        return o;
    }
    fs::remove_all(workdir);
    fs::create_directories(workdir);
    const auto config = kTyped / "config.reinforce.json";

    const auto opt = run_cli(cli, "optimize --method reinforce -c " + q(config) + " -o " + q(workdir / "opt"));
    o.require(opt.code == 0, fmt::format("optimize exited {}", opt.code));
    const auto run_dir = single_subdir(workdir / "opt");
    if (!run_dir || !fs::exists(*run_dir / "best.core")) {
        o.require(false, "no best.core written");
        return o;
    }
    const auto best = *run_dir / "best.core";
    const auto val = run_cli(cli, "validate " + q(best));
    o.require(val.code == 0, fmt::format("validate best.core exited {}", val.code));

    auto test_reward = [&](const fs::path& wf, const std::string& tag) -> std::optional<double> {
        const auto r = run_cli(cli, "eval " + q(wf) + " -c " + q(config) + " --split test -o " + q(workdir / tag));
        const auto dir = single_subdir(workdir / tag);
        if (r.code != 0 || !dir) return std::nullopt;
        return testsupport::load_json(*dir / "report.json")["reward"].get<double>();
    };
    const auto best_reward = test_reward(best, "eval_best");
    const auto seed_reward = test_reward(kTyped / "degraded.core", "eval_seed");
    o.require(best_reward && seed_reward, "eval --split test failed");
    if (best_reward && seed_reward) {
        o.require(*best_reward >= *seed_reward,
                  fmt::format("best test reward {:.4f} < seed {:.4f}", *best_reward, *seed_reward));
        if (o.pass) {
            o.detail = fmt::format("best.core validates; test reward best {:.4f} >= seed {:.4f}", *best_reward,
                                   *seed_reward);
        }
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli;
    fs::path workdir = fs::temp_directory_path() / "coreflow_acceptance";
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--cli") cli = argv[i + 1];
        else if (flag == "--workdir") workdir = argv[i + 1];
    }

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"grammar fidelity", grammar_fidelity},
        {"round-trip property", round_trip_property},
        {"interpreter semantics", interpreter_semantics},
        {"reward arithmetic", reward_arithmetic},
        {"REINFORCE correctness", reinforce_correctness},
        {"optimization improves reward", optimization_improves},
        {"in-context loop contract", incontext_contract},
        {"repair pipeline", repair_pipeline},
        {"end-to-end CLI", [&] { return end_to_end_cli(cli, workdir); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::cout << fmt::format("{} criterion {}: {} - {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                                 o.detail)
                  << std::flush;
    }
    std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
