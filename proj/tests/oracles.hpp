#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. None of this calls into the library beyond its data types.

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreflow/workflow.hpp"

namespace testsupport {

using coreflow::Step;
using coreflow::StepKind;
using coreflow::Workflow;
using json = nlohmann::json;

// Seeded generator of valid workflows (forward edge to a later step keeps a
// Terminal reachable; other edges may point anywhere).
class RandomWorkflows {
public:
    explicit RandomWorkflows(std::uint64_t seed) : rng_(seed) {}

    Workflow next() {
        const std::size_t n = pick(2, 9);
        std::vector<std::string> names;
        for (std::size_t i = 0; i < n; ++i) names.push_back(name(i));

        // Every step i links forward to some j > i, so the last step (Terminal)
        // is always reachable; extra edges may point anywhere.
        std::vector<Step> steps;
        for (std::size_t i = 0; i < n; ++i) {
            Step s;
            s.name = names[i];
            s.instruction = instruction();
            if (i + 1 == n) {
                s.kind = StepKind::Terminal;
            } else if (pick(0, 2) == 0) {
                s.kind = StepKind::Decision;
                const std::size_t branches = pick(2, 4);
                for (std::size_t b = 0; b < branches; ++b) {
                    auto target = b == 0 ? names[pick(i + 1, n - 1)] : names[pick(0, n - 1)];
                    s.connections.push_back({label(b), target});
                }
            } else if (i > 0 && pick(0, 4) == 0) {
                s.kind = StepKind::Terminal;
            } else {
                s.kind = StepKind::Process;
                s.connections.push_back({"next", names[pick(i + 1, n - 1)]});
            }
            steps.push_back(std::move(s));
        }
        return Workflow(std::move(steps));
    }

private:
    std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }

    std::string name(std::size_t i) {
        switch (pick(0, 3)) {
            case 0: return "Step " + std::to_string(i + 1);
            case 1: return "step-" + std::to_string(i + 1) + "b";
            case 2: return "Check " + std::to_string(i + 1) + " (types)";
            default: return "N" + std::to_string(i) + ":x";
        }
    }

    std::string label(std::size_t b) {
        static const char* kLabels[] = {"Yes", "No", "Maybe", "retry later"};
        return kLabels[b];
    }

    std::string instruction() {
        static const char* kWords[] = {"check", "the", "plan:", "tool", "a::b", "(x)", "Ünïcode", "types,", "?", ":lead"};
        std::string out;
        const std::size_t words = pick(1, 8);
        for (std::size_t w = 0; w < words; ++w) {
            if (w) out += ' ';
            out += kWords[pick(0, std::size(kWords) - 1)];
        }
        return out;
    }

    std::mt19937_64 rng_;
};


// Scores a "a, b, c" plan by enumerating every tool sequence of length 1..4
// and keeping the ones whose types chain from input to output.
class ChainOracle {
public:
    explicit ChainOracle(const json& env) {
        for (const auto& t : env["tools"]) {
            tools_[t["name"]] = {t["input_type"], t["output_type"]};
            names_.push_back(t["name"]);
        }
    }

    double score(const std::string& in, const std::string& out, const std::string& plan_text) const {
        std::vector<std::string> plan;
        std::string cur;
        for (char c : plan_text + ",") {
            if (c == ',') {
                auto b = cur.find_first_not_of(' ');
                auto e = cur.find_last_not_of(' ');
                if (b != std::string::npos) plan.push_back(cur.substr(b, e - b + 1));
                cur.clear();
            } else {
                cur += c;
            }
        }
        std::set<std::vector<std::string>> valid;
        std::size_t shortest = 0;
        std::vector<std::string> seq;
        enumerate(in, out, seq, valid, shortest);
        if (!valid.count(plan)) return 0.0;
        return plan.size() == shortest ? 1.0 : 0.5;
    }

private:
    void enumerate(const std::string& type, const std::string& out, std::vector<std::string>& seq,
                   std::set<std::vector<std::string>>& valid, std::size_t& shortest) const {
        if (!seq.empty() && type == out) {
            valid.insert(seq);
            if (shortest == 0 || seq.size() < shortest) shortest = seq.size();
        }
        if (seq.size() == 4) return;
        for (const auto& n : names_) {
            const auto& [i, o] = tools_.at(n);
            if (i != type) continue;
            seq.push_back(n);
            enumerate(o, out, seq, valid, shortest);
            seq.pop_back();
        }
    }

    std::map<std::string, std::pair<std::string, std::string>> tools_;
    std::vector<std::string> names_;
};


// Two-action bandit (reward 1 for action 0, 0 for action 1) under the
// REINFORCE update with a running-mean baseline, written out in scalars.
struct BanditOracle {
    explicit BanditOracle(std::uint64_t seed, double lr) : engine(seed), lr(lr) {}

    int step() {
        ++count;
        const double u = static_cast<double>(engine() >> 11) * std::ldexp(1.0, -53);
        const double p0 = 1.0 / (1.0 + std::exp(t1 - t0));
        const int a = u < p0 ? 0 : 1;
        const double r = a == 0 ? 1.0 : 0.0;
        const double adv = r - baseline;
        t0 += lr * adv * ((a == 0 ? 1.0 : 0.0) - p0);
        t1 += lr * adv * ((a == 1 ? 1.0 : 0.0) - (1.0 - p0));
        baseline += (r - baseline) / count;
        return a;
    }
    double p0() const { return 1.0 / (1.0 + std::exp(t1 - t0)); }

    std::mt19937_64 engine;
    double lr;
    double t0 = 0.0, t1 = 0.0, baseline = 0.0;
    int count = 0;
};

}  // namespace testsupport
