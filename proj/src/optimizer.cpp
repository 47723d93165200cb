#include "coreflow/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "coreflow/repair.hpp"
#include "coreflow/text.hpp"

namespace coreflow {

using json = nlohmann::json;

void OptimizerConfig::check() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(reward_delta_threshold >= 0.0)) throw std::invalid_argument("reward_delta_threshold must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (edits_per_candidate < 1) throw std::invalid_argument("edits_per_candidate must be >= 1");
    if (max_consecutive_failures < 1) throw std::invalid_argument("max_consecutive_failures must be >= 1");
    if (!(generator_temperature >= 0.0)) throw std::invalid_argument("generator_temperature must be >= 0");
}

void GenerationQuery::check() const {
    if (!validate(example_workflow).valid) throw std::invalid_argument("example workflow does not validate");
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::Continue: return "continue";
        case Termination::DeltaConverged: return "delta_converged";
        case Termination::MaxIterations: return "max_iterations";
        case Termination::GeneratorFailure: return "generator_failure";
    }
    return "continue";
}

std::optional<Termination> termination_from_string(std::string_view s) {
    for (auto t : {Termination::Continue, Termination::DeltaConverged, Termination::MaxIterations,
                   Termination::GeneratorFailure}) {
        if (s == to_string(t)) return t;
    }
    return std::nullopt;
}

Termination check_termination(std::span<const double> history, const OptimizerConfig& cfg) {
    if (history.empty()) throw std::invalid_argument("check_termination needs a non-empty history");
    if (static_cast<int>(history.size()) >= cfg.max_iterations) return Termination::MaxIterations;
    if (history.size() >= 2) {
        const auto delta = std::abs(history[history.size() - 1] - history[history.size() - 2]);
        if (delta < cfg.reward_delta_threshold) return Termination::DeltaConverged;
    }
    return Termination::Continue;
}

// --- Rng -------------------------------------------------------------------

Rng Rng::restore(std::uint64_t seed, std::uint64_t draws) {
    Rng rng(seed);
    rng.engine_.discard(draws);
    rng.draws_ = draws;
    return rng;
}

std::uint64_t Rng::next() {
    ++draws_;
    return engine_();
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index needs n > 0");
    return static_cast<std::size_t>(next() % n);
}

// --- edits -----------------------------------------------------------------

std::string_view to_string(EditKind kind) {
    switch (kind) {
        case EditKind::InsertTemplateStep: return "insert_template_step";
        case EditKind::DeleteStep: return "delete_step";
        case EditKind::ReplaceInstruction: return "replace_instruction";
        case EditKind::RetargetConnection: return "retarget_connection";
        case EditKind::InsertDecisionCheck: return "insert_decision_check";
    }
    return "delete_step";
}

std::string EditAction::describe() const {
    switch (kind) {
        case EditKind::InsertTemplateStep:
        case EditKind::ReplaceInstruction:
        case EditKind::InsertDecisionCheck:
            return fmt::format("{}#{}", to_string(kind), template_index);
        default:
            return std::string(to_string(kind));
    }
}

namespace {

std::string fresh_step_name(const std::vector<Step>& steps) {
    auto taken = [&](const std::string& name) {
        return std::any_of(steps.begin(), steps.end(), [&](const Step& s) { return s.name == name; });
    };
    const auto base = fmt::format("Step {}", steps.size() + 1);
    if (!taken(base)) return base;
    for (int suffix = 2;; ++suffix) {
        auto name = fmt::format("{}-{}", base, suffix);
        if (!taken(name)) return name;
    }
}

std::vector<std::size_t> process_steps(const std::vector<Step>& steps) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].kind == StepKind::Process && steps[i].connections.size() == 1) out.push_back(i);
    }
    return out;
}

// Splices `inserted` between the Process step at `at` and its successor.
// The new step is expected to carry its own connections already.
std::vector<Step> splice_after(std::vector<Step> steps, std::size_t at, Step inserted) {
    steps[at].connections.front().target = inserted.name;
    steps.insert(steps.begin() + static_cast<std::ptrdiff_t>(at) + 1, std::move(inserted));
    return steps;
}

std::optional<std::vector<Step>> edit_steps(const Workflow& workflow, const EditAction& action,
                                            const EditTemplates& templates, Rng& rng) {
    auto steps = workflow.steps();
    switch (action.kind) {
        case EditKind::InsertTemplateStep: {
            if (action.template_index >= templates.process.size()) return std::nullopt;
            const auto candidates = process_steps(steps);
            if (candidates.empty()) return std::nullopt;
            const auto at = candidates[rng.index(candidates.size())];
            Step s{fresh_step_name(steps), StepKind::Process, templates.process[action.template_index],
                   {{"next", steps[at].connections.front().target}}};
            return splice_after(std::move(steps), at, std::move(s));
        }
        case EditKind::InsertDecisionCheck: {
            if (action.template_index >= templates.decision.size()) return std::nullopt;
            const auto candidates = process_steps(steps);
            if (candidates.empty()) return std::nullopt;
            const auto at = candidates[rng.index(candidates.size())];
            Step s{fresh_step_name(steps), StepKind::Decision, templates.decision[action.template_index],
                   {{"Yes", steps[at].connections.front().target}, {"No", steps[at].name}}};
            return splice_after(std::move(steps), at, std::move(s));
        }
        case EditKind::DeleteStep: {
            if (steps.size() < 2) return std::nullopt;
            const auto victim = 1 + rng.index(steps.size() - 1);  // never the entry step
            const Step removed = steps[victim];
            std::string replacement;
            if (removed.kind == StepKind::Terminal) {
                for (std::size_t i = 0; i < steps.size(); ++i) {
                    if (i != victim && steps[i].kind == StepKind::Terminal) {
                        replacement = steps[i].name;
                        break;
                    }
                }
                if (replacement.empty()) return std::nullopt;
            } else {
                if (removed.connections.empty()) return std::nullopt;
                replacement = removed.connections.front().target;
            }
            if (replacement == removed.name) return std::nullopt;
            steps.erase(steps.begin() + static_cast<std::ptrdiff_t>(victim));
            for (auto& s : steps) {
                for (auto& c : s.connections) {
                    if (c.target == removed.name) c.target = replacement;
                }
            }
            return steps;
        }
        case EditKind::ReplaceInstruction: {
            if (action.template_index >= templates.instruction.size()) return std::nullopt;
            const auto at = rng.index(steps.size());
            const auto& instruction = templates.instruction[action.template_index];
            if (steps[at].instruction == instruction) return std::nullopt;
            steps[at].instruction = instruction;
            return steps;
        }
        case EditKind::RetargetConnection: {
            std::vector<std::pair<std::size_t, std::size_t>> edges;
            for (std::size_t i = 0; i < steps.size(); ++i) {
                for (std::size_t c = 0; c < steps[i].connections.size(); ++c) edges.emplace_back(i, c);
            }
            if (edges.empty() || steps.size() < 2) return std::nullopt;
            const auto [si, ci] = edges[rng.index(edges.size())];
            auto& conn = steps[si].connections[ci];
            std::vector<std::string> targets;
            for (const auto& s : steps) {
                if (s.name != conn.target) targets.push_back(s.name);
            }
            conn.target = targets[rng.index(targets.size())];
            return steps;
        }
    }
    return std::nullopt;
}

}  // namespace

EditResult apply_edit(const Workflow& workflow, const EditAction& action, const EditTemplates& templates, Rng& rng) {
    auto steps = edit_steps(workflow, action, templates, rng);
    if (!steps) return {workflow, false};
    Workflow edited(std::move(*steps));
    if (!validate(edited).valid) return {workflow, false};
    return {std::move(edited), true};
}

// --- policy ----------------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const auto peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (auto& p : out) p /= total;
    return out;
}

EditPolicy::EditPolicy(std::vector<EditAction> actions) : actions_(std::move(actions)), theta_(actions_.size(), 0.0) {
    if (actions_.empty()) throw std::invalid_argument("edit policy needs at least one action");
}

EditPolicy EditPolicy::for_templates(const EditTemplates& templates) {
    std::vector<EditAction> actions;
    for (std::size_t t = 0; t < templates.process.size(); ++t) actions.push_back({EditKind::InsertTemplateStep, t});
    actions.push_back({EditKind::DeleteStep, 0});
    for (std::size_t t = 0; t < templates.instruction.size(); ++t) actions.push_back({EditKind::ReplaceInstruction, t});
    actions.push_back({EditKind::RetargetConnection, 0});
    for (std::size_t t = 0; t < templates.decision.size(); ++t) actions.push_back({EditKind::InsertDecisionCheck, t});
    return EditPolicy(std::move(actions));
}

void EditPolicy::set_state(std::vector<double> theta, double baseline, std::uint64_t baseline_count) {
    if (theta.size() != actions_.size()) throw std::invalid_argument("theta size does not match the action list");
    theta_ = std::move(theta);
    baseline_ = baseline;
    baseline_count_ = baseline_count;
}

std::vector<double> EditPolicy::probabilities() const { return softmax(theta_); }

std::vector<double> EditPolicy::grad_log_prob(std::size_t action) const {
    if (action >= actions_.size()) throw std::out_of_range("action index out of range");
    auto grad = probabilities();
    for (auto& g : grad) g = -g;
    grad[action] += 1.0;
    return grad;
}

std::size_t EditPolicy::sample(Rng& rng) const {
    const auto probs = probabilities();
    const auto u = rng.uniform();
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cumulative += probs[i];
        if (u < cumulative) return i;
    }
    return probs.size() - 1;
}

void EditPolicy::reinforce(std::span<const std::size_t> sampled, double reward, double learning_rate) {
    const auto probs = probabilities();
    const auto advantage = reward - baseline_;
    std::vector<double> step(theta_.size(), 0.0);
    for (auto a : sampled) {
        if (a >= actions_.size()) throw std::out_of_range("sampled action index out of range");
        for (std::size_t j = 0; j < step.size(); ++j) step[j] += (j == a ? 1.0 : 0.0) - probs[j];
    }
    for (std::size_t j = 0; j < theta_.size(); ++j) theta_[j] += learning_rate * advantage * step[j];
    ++baseline_count_;
    baseline_ += (reward - baseline_) / static_cast<double>(baseline_count_);
}

// --- loops -----------------------------------------------------------------

std::string_view to_string(OptimizerMethod m) {
    return m == OptimizerMethod::InContext ? "incontext" : "reinforce";
}

std::optional<OptimizerMethod> method_from_string(std::string_view s) {
    if (s == "incontext") return OptimizerMethod::InContext;
    if (s == "reinforce") return OptimizerMethod::Reinforce;
    return std::nullopt;
}

std::string build_generation_prompt(const GenerationQuery& query) {
    std::string out;
    out += "You write workflows in the CoRE language. Each line is one step in the form\n"
           "<step name>:::<Process|Decision|Terminal>:::<instruction>:::<connections>\n\n";
    out += "Example workflow:\n";
    out += serialize(query.example_workflow);
    out += "\n\n";
    out += query.task_description;
    return out;
}

std::string feedback_sentence(double reward) {
    return fmt::format(
        "The execution performance of the previous workflow is {:.4f}. Provide a new workflow that can gain a better "
        "performance",
        reward);
}

namespace {

void update_best(OptimizationRun& run, const IterationRecord& record) {
    if (record.valid && record.candidate && (!run.best || record.reward > run.best_reward)) {
        run.best = record.candidate;
        run.best_reward = record.reward;
        run.best_iteration = record.iteration;
    }
}

void finish(OptimizationRun& run, const Environment& env, ChatBackend& interpreter, const RunOptions& options) {
    if (options.evaluate_test && run.best && !env.split(Split::Test).empty()) {
        run.test_reward = evaluate(*run.best, env, interpreter, Split::Test, options.eval).reward;
    }
}

std::string incontext_prompt(const GenerationQuery& query, const OptimizationRun& run, const OptimizerConfig& cfg) {
    std::vector<const IterationRecord*> done;
    for (const auto& r : run.iterations) {
        if (r.valid && r.candidate) done.push_back(&r);
    }
    auto prompt = build_generation_prompt(query);
    if (done.empty()) return prompt;

    if (cfg.full_history && done.size() > 1) {
        prompt += "\n\nEarlier workflows and their execution performance:";
        for (std::size_t i = 0; i + 1 < done.size(); ++i) {
            prompt += fmt::format("\n\nIteration {} (performance {:.4f}):\n", done[i]->iteration, done[i]->reward);
            prompt += serialize(*done[i]->candidate);
        }
    }
    prompt += "\n\nPrevious workflow:\n";
    prompt += serialize(*done.back()->candidate);
    prompt += "\n\n";
    prompt += feedback_sentence(done.back()->reward);
    return prompt;
}

}  // namespace

OptimizationRun optimize_incontext(const GenerationQuery& query, const Environment& env, ChatBackend& generator,
                                   ChatBackend& interpreter, const OptimizerConfig& cfg, const RunOptions& options) {
    cfg.check();
    query.check();

    OptimizationRun run;
    if (options.resume) {
        if (options.resume->method != OptimizerMethod::InContext) {
            throw std::invalid_argument("cannot resume a REINFORCE run with the in-context optimizer");
        }
        run = *options.resume;
        if (run.finished()) return run;
    } else {
        run.method = OptimizerMethod::InContext;
        run.seed = cfg.seed;
        run.split = cfg.split.value_or(Split::Validation);
        if (options.on_start) options.on_start(run);
    }

    std::vector<double> history;
    int consecutive_failures = 0;
    for (const auto& r : run.iterations) {
        if (r.valid) {
            history.push_back(r.reward);
            consecutive_failures = 0;
        } else {
            ++consecutive_failures;
        }
    }

    while (static_cast<int>(run.iterations.size()) < cfg.max_iterations) {
        IterationRecord record;
        record.iteration = static_cast<int>(run.iterations.size()) + 1;

        std::optional<Workflow> candidate;
        try {
            const auto prompt = incontext_prompt(query, run, cfg);
            const auto reply = generator.complete(make_request(prompt, cfg.generator_temperature)).content;
            try {
                auto parsed = parse_workflow(reply);
                if (validate(parsed).valid) candidate = std::move(parsed);
            } catch (const ParseError&) {
            }
            if (!candidate) {
                candidate = repair_workflow(reply, generator).workflow;
                record.repaired = true;
            }
        } catch (const RepairError& e) {
            record.note = e.what();
        } catch (const BackendError& e) {
            record.note = std::string("generator request failed: ") + e.what();
        }

        if (candidate) {
            record.candidate = std::move(candidate);
            record.valid = true;
            record.reward = evaluate(*record.candidate, env, interpreter, run.split, options.eval).reward;
            history.push_back(record.reward);
            consecutive_failures = 0;
        } else {
            ++consecutive_failures;
        }
        update_best(run, record);
        record.best_reward = run.best_reward;
        run.iterations.push_back(record);
        if (options.on_iteration) options.on_iteration(run, run.iterations.back());

        if (consecutive_failures >= cfg.max_consecutive_failures) {
            run.termination = Termination::GeneratorFailure;
            break;
        }
        if (record.valid && check_termination(history, cfg) == Termination::DeltaConverged) {
            run.termination = Termination::DeltaConverged;
            break;
        }
    }
    if (run.termination == Termination::Continue) run.termination = Termination::MaxIterations;
    finish(run, env, interpreter, options);
    return run;
}

OptimizationRun optimize_reinforce(const GenerationQuery& query, const Environment& env, EditPolicy& policy,
                                   ChatBackend& interpreter, const OptimizerConfig& cfg, const RunOptions& options) {
    cfg.check();
    query.check();

    OptimizationRun run;
    Rng rng(cfg.seed);
    if (options.resume) {
        if (options.resume->method != OptimizerMethod::Reinforce) {
            throw std::invalid_argument("cannot resume an in-context run with the REINFORCE optimizer");
        }
        run = *options.resume;
        if (run.finished()) return run;
        if (!run.iterations.empty()) {
            const auto& last = run.iterations.back();
            policy.set_state(last.theta, last.baseline, last.baseline_count);
            rng = Rng::restore(run.seed, last.rng_draws);
        } else {
            rng = Rng(run.seed);
        }
    } else {
        run.method = OptimizerMethod::Reinforce;
        run.seed = cfg.seed;
        run.split = cfg.split.value_or(Split::Train);
        run.seed_workflow = query.example_workflow;
        run.seed_reward = evaluate(query.example_workflow, env, interpreter, run.split, options.eval).reward;
        run.best = query.example_workflow;
        run.best_reward = *run.seed_reward;
        run.best_iteration = 0;
        if (options.on_start) options.on_start(run);
    }

    std::vector<double> history;
    for (const auto& r : run.iterations) history.push_back(r.reward);

    while (static_cast<int>(run.iterations.size()) < cfg.max_iterations) {
        IterationRecord record;
        record.iteration = static_cast<int>(run.iterations.size()) + 1;

        std::vector<std::size_t> sampled;
        Workflow candidate = *run.best;
        for (int k = 0; k < cfg.edits_per_candidate; ++k) {
            const auto a = policy.sample(rng);
            sampled.push_back(a);
            record.actions.push_back(policy.actions()[a].describe());
            candidate = apply_edit(candidate, policy.actions()[a], env.templates(), rng).workflow;
        }

        const auto report = validate(candidate);
        record.valid = report.valid;
        if (report.valid) {
            record.reward = evaluate(candidate, env, interpreter, run.split, options.eval).reward;
        } else {
            record.note = format_report(report);
            record.reward = 0.0;
        }
        record.candidate = std::move(candidate);

        policy.reinforce(sampled, record.reward, cfg.learning_rate);
        record.theta = policy.theta();
        record.baseline = policy.baseline();
        record.baseline_count = policy.baseline_count();
        record.rng_draws = rng.draws();

        update_best(run, record);
        record.best_reward = run.best_reward;
        run.iterations.push_back(record);
        history.push_back(record.reward);
        if (options.on_iteration) options.on_iteration(run, run.iterations.back());

        const auto t = check_termination(history, cfg);
        if (t != Termination::Continue) {
            run.termination = t;
            break;
        }
    }
    if (run.termination == Termination::Continue) run.termination = Termination::MaxIterations;
    finish(run, env, interpreter, options);
    return run;
}

// --- persistence -----------------------------------------------------------

json run_header_json(const OptimizationRun& run, const std::vector<EditAction>& actions) {
    json header{{"type", "run"}, {"method", to_string(run.method)}, {"seed", run.seed}, {"split", to_string(run.split)}};
    if (run.seed_workflow) header["seed_workflow"] = serialize(*run.seed_workflow);
    if (run.seed_reward) header["seed_reward"] = *run.seed_reward;
    if (!actions.empty()) {
        json names = json::array();
        for (const auto& a : actions) names.push_back(a.describe());
        header["actions"] = std::move(names);
    }
    return header;
}

json iteration_json(const IterationRecord& r) {
    json j{{"type", "iteration"},
           {"iteration", r.iteration},
           {"candidate", r.candidate ? json(serialize(*r.candidate)) : json(nullptr)},
           {"reward", r.reward},
           {"repaired", r.repaired},
           {"valid", r.valid},
           {"best_reward", r.best_reward}};
    if (!r.note.empty()) j["note"] = r.note;
    if (!r.theta.empty()) {
        j["actions"] = r.actions;
        j["theta"] = r.theta;
        j["baseline"] = r.baseline;
        j["baseline_count"] = r.baseline_count;
        j["rng_draws"] = r.rng_draws;
    }
    return j;
}

json run_summary_json(const OptimizationRun& run) {
    json j{{"type", "summary"},
           {"termination", to_string(run.termination)},
           {"iterations", run.iterations.size()},
           {"best_reward", run.best_reward},
           {"best_iteration", run.best_iteration},
           {"best_workflow", run.best ? json(serialize(*run.best)) : json(nullptr)}};
    j["test_reward"] = run.test_reward ? json(*run.test_reward) : json(nullptr);
    return j;
}

void write_run_jsonl(const OptimizationRun& run, std::ostream& out, const std::vector<EditAction>& actions) {
    out << run_header_json(run, actions).dump() << '\n';
    for (const auto& r : run.iterations) out << iteration_json(r).dump() << '\n';
    if (run.finished()) out << run_summary_json(run).dump() << '\n';
}

OptimizationRun read_run_jsonl(std::istream& in) {
    OptimizationRun run;
    bool have_header = false;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        const auto j = json::parse(line);
        const auto type = j.at("type").get<std::string>();
        if (type == "run") {
            auto method = method_from_string(j.at("method").get<std::string>());
            if (!method) throw std::runtime_error("run file has an unknown method");
            run.method = *method;
            run.seed = j.at("seed").get<std::uint64_t>();
            run.split = split_from_string(j.at("split").get<std::string>()).value_or(Split::Validation);
            if (j.contains("seed_workflow")) run.seed_workflow = parse_workflow(j.at("seed_workflow").get<std::string>());
            if (j.contains("seed_reward")) run.seed_reward = j.at("seed_reward").get<double>();
            if (run.seed_workflow && run.seed_reward) {
                run.best = run.seed_workflow;
                run.best_reward = *run.seed_reward;
            }
            have_header = true;
        } else if (type == "iteration") {
            if (!have_header) throw std::runtime_error("run file iteration record precedes the header");
            IterationRecord r;
            r.iteration = j.at("iteration").get<int>();
            if (!j.at("candidate").is_null()) r.candidate = parse_workflow(j.at("candidate").get<std::string>());
            r.reward = j.at("reward").get<double>();
            r.repaired = j.at("repaired").get<bool>();
            r.valid = j.at("valid").get<bool>();
            r.best_reward = j.value("best_reward", 0.0);
            r.note = j.value("note", "");
            if (j.contains("theta")) {
                r.actions = j.at("actions").get<std::vector<std::string>>();
                r.theta = j.at("theta").get<std::vector<double>>();
                r.baseline = j.at("baseline").get<double>();
                r.baseline_count = j.at("baseline_count").get<std::uint64_t>();
                r.rng_draws = j.at("rng_draws").get<std::uint64_t>();
            }
            update_best(run, r);
            run.iterations.push_back(std::move(r));
        } else if (type == "summary") {
            auto t = termination_from_string(j.at("termination").get<std::string>());
            if (!t) throw std::runtime_error("run file has an unknown termination");
            run.termination = *t;
            if (!j.at("test_reward").is_null()) run.test_reward = j.at("test_reward").get<double>();
        }
    }
    if (!have_header) throw std::runtime_error("run file has no header record");
    return run;
}

}  // namespace coreflow
