#pragma once

// Workflow search loops. Both variants repeat
//   generate candidate -> evaluate on a split -> reward -> update generator
// until the reward stops moving or the iteration budget runs out.
//
// * In-context: a chat model generates each candidate; the previous
//   candidate and its reward are written into the next generation prompt.
// * REINFORCE: a softmax policy over workflow edit actions proposes edits to
//   the best workflow so far and is updated with the policy gradient
//   theta += lr * (R - baseline) * grad log pi(a).

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coreflow/backend.hpp"
#include "coreflow/environment.hpp"
#include "coreflow/workflow.hpp"

namespace coreflow {

struct OptimizerConfig {
    int max_iterations = 30;
    double reward_delta_threshold = 1e-3;
    double learning_rate = 0.001;
    int edits_per_candidate = 3;
    std::uint64_t seed = 0;
    /// Split used for the reward; defaults to validation (in-context) and train (REINFORCE).
    std::optional<Split> split;
    /// In-context only: include every earlier (workflow, reward) pair in the prompt.
    bool full_history = false;
    double generator_temperature = 0.7;
    int max_consecutive_failures = 3;

    void check() const;
};

struct GenerationQuery {
    Workflow example_workflow;
    std::string task_description;

    void check() const;
};

enum class Termination { Continue, DeltaConverged, MaxIterations, GeneratorFailure };

std::string_view to_string(Termination t);
std::optional<Termination> termination_from_string(std::string_view s);

/// Continue until the history reaches max_iterations or the last two rewards
/// differ by less than the threshold.
Termination check_termination(std::span<const double> history, const OptimizerConfig& cfg);

// --- randomness ------------------------------------------------------------

/// Seeded 64-bit Mersenne Twister that counts its draws so a run can be
/// resumed at the exact same stream position.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    static Rng restore(std::uint64_t seed, std::uint64_t draws);

    std::uint64_t next();
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    /// Uniform index in [0, n); n must be positive.
    std::size_t index(std::size_t n);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t draws() const noexcept { return draws_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    std::uint64_t draws_ = 0;
};

// --- workflow edits ----------------------------------------------------------

enum class EditKind { InsertTemplateStep, DeleteStep, ReplaceInstruction, RetargetConnection, InsertDecisionCheck };

std::string_view to_string(EditKind kind);

struct EditAction {
    EditKind kind = EditKind::DeleteStep;
    std::size_t template_index = 0;  // used by the template-driven kinds

    std::string describe() const;
    bool operator==(const EditAction&) const = default;
};

struct EditResult {
    Workflow workflow;
    bool applied = false;  // false: the edit was a no-op or would have broken validity
};

/// Applies one edit to a copy of `workflow`. Edits that would produce an
/// invalid workflow are rejected and the input comes back unchanged. New
/// steps are placed right after the step they hang off; clashing names get
/// a numeric suffix.
EditResult apply_edit(const Workflow& workflow, const EditAction& action, const EditTemplates& templates, Rng& rng);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

class EditPolicy {
public:
    explicit EditPolicy(std::vector<EditAction> actions);

    /// One action per edit kind, expanded once per template for the
    /// template-driven kinds.
    static EditPolicy for_templates(const EditTemplates& templates);

    const std::vector<EditAction>& actions() const noexcept { return actions_; }
    const std::vector<double>& theta() const noexcept { return theta_; }
    double baseline() const noexcept { return baseline_; }
    std::uint64_t baseline_count() const noexcept { return baseline_count_; }

    void set_state(std::vector<double> theta, double baseline, std::uint64_t baseline_count);

    std::vector<double> probabilities() const;
    /// d log pi(action) / d theta = onehot(action) - pi.
    std::vector<double> grad_log_prob(std::size_t action) const;
    std::size_t sample(Rng& rng) const;

    /// theta += lr * (reward - baseline) * sum over sampled actions of
    /// grad log pi(a), all gradients taken at the pre-update theta; then the
    /// running-mean baseline absorbs the reward.
    void reinforce(std::span<const std::size_t> sampled, double reward, double learning_rate);

private:
    std::vector<EditAction> actions_;
    std::vector<double> theta_;
    double baseline_ = 0.0;
    std::uint64_t baseline_count_ = 0;
};

// --- runs ----------------------------------------------------------------------

enum class OptimizerMethod { InContext, Reinforce };

std::string_view to_string(OptimizerMethod m);
std::optional<OptimizerMethod> method_from_string(std::string_view s);

struct IterationRecord {
    int iteration = 0;  // 1-based
    std::optional<Workflow> candidate;  // absent when generation or repair failed
    double reward = 0.0;
    bool repaired = false;
    bool valid = false;
    std::string note;  // why the candidate was rejected, if it was
    double best_reward = 0.0;

    // REINFORCE state after this iteration's update.
    std::vector<std::string> actions;
    std::vector<double> theta;
    double baseline = 0.0;
    std::uint64_t baseline_count = 0;
    std::uint64_t rng_draws = 0;
};

struct OptimizationRun {
    OptimizerMethod method = OptimizerMethod::InContext;
    std::uint64_t seed = 0;
    Split split = Split::Validation;
    std::vector<IterationRecord> iterations;

    /// REINFORCE only: the starting workflow and its reward.
    std::optional<Workflow> seed_workflow;
    std::optional<double> seed_reward;

    std::optional<Workflow> best;
    double best_reward = 0.0;
    int best_iteration = 0;  // 0 = the seed workflow

    Termination termination = Termination::Continue;
    std::optional<double> test_reward;  // best workflow on the test split

    bool finished() const noexcept { return termination != Termination::Continue; }
};

struct RunOptions {
    EvalOptions eval;
    /// Continue this (possibly unfinished) run instead of starting afresh.
    const OptimizationRun* resume = nullptr;
    std::function<void(const OptimizationRun&)> on_start;
    std::function<void(const OptimizationRun&, const IterationRecord&)> on_iteration;
    /// Evaluate the best workflow on the test split once the loop ends.
    bool evaluate_test = true;
};

std::string build_generation_prompt(const GenerationQuery& query);
std::string feedback_sentence(double reward);

OptimizationRun optimize_incontext(const GenerationQuery& query, const Environment& env, ChatBackend& generator,
                                   ChatBackend& interpreter, const OptimizerConfig& cfg, const RunOptions& options = {});

OptimizationRun optimize_reinforce(const GenerationQuery& query, const Environment& env, EditPolicy& policy,
                                   ChatBackend& interpreter, const OptimizerConfig& cfg, const RunOptions& options = {});

// --- persistence ---------------------------------------------------------
//
// JSON lines: a {"type":"run"} header, one {"type":"iteration"} record per
// iteration, and a {"type":"summary"} record once the run has finished.

nlohmann::json run_header_json(const OptimizationRun& run, const std::vector<EditAction>& actions = {});
nlohmann::json iteration_json(const IterationRecord& record);
nlohmann::json run_summary_json(const OptimizationRun& run);

void write_run_jsonl(const OptimizationRun& run, std::ostream& out, const std::vector<EditAction>& actions = {});
OptimizationRun read_run_jsonl(std::istream& in);

}  // namespace coreflow
