/*
Copyright 2026 The pipemend Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pipemend/baseline.hpp"
#include "pipemend/exact.hpp"
#include "pipemend/heuristic.hpp"
#include "pipemend/model.hpp"

namespace pipemend {

/// Tasks at or below this count go to the exact backend under AUTO.
inline constexpr int kAutoExactTaskLimit = 60;

[[nodiscard]] inline Backend resolve_backend(Backend requested, int task_count) {
    if (requested != Backend::kAuto) {
        return requested;
    }
    return task_count <= kAutoExactTaskLimit ? Backend::kExact : Backend::kHeuristic;
}

/// Makespan-optimal single-model solve. `seeds` are schedules whose per-worker order is replayed on the
/// model (repeated `repeat` times) and offered as incumbents.
struct SeedSchedule {
    const Schedule *schedule;
    int repeat = 1;
};

struct SolveResult {
    std::vector<Duration> start;
    Duration makespan{0};
    Duration lower_bound{0};
    bool optimal = false;
};

[[nodiscard]] inline SolveResult solve_model(const Model &model, Backend backend, const OptimizerOptions &options,
                                             const std::vector<SeedSchedule> &seeds = {}) {
    std::vector<std::vector<std::vector<int>>> orders;
    for (const SeedSchedule &s : seeds) {
        if (auto seq = sequences_from(model, *s.schedule, s.repeat)) {
            orders.push_back(std::move(*seq));
        }
    }
    std::optional<HeuristicResult> h = heuristic_search(model, options.heuristic_restarts, options.seed, orders);
    SolveResult r;
    if (backend == Backend::kExact) {
        const ExactResult e = exact_search(model, options.time_limit,
                                           h ? std::optional<std::vector<Duration>>(h->start) : std::nullopt);
        if (!e.start) {
            throw Error(ErrorCode::kInfeasibleMemory, e.optimal ? "no ordering satisfies the memory limit"
                                                                : "no feasible schedule found within the time limit");
        }
        r.start = *e.start;
        r.makespan = e.makespan;
        r.lower_bound = e.lower_bound;
        r.optimal = e.optimal;
        return r;
    }
    if (!h) {
        throw Error(ErrorCode::kInfeasibleMemory, "list scheduling found no order within the memory limit");
    }
    r.start = std::move(h->start);
    r.makespan = h->makespan;
    r.lower_bound = std::min(model.critical_path(), r.makespan);
    return r;
}

/// Rerouted micro-batches run in the plain 1F1B dispatch order (backward first, forwards admitted while
/// memory allows), with no reordering search. One iteration, barrier at the end.
[[nodiscard]] inline Schedule build_adaptive_1f1b(const ClusterConfig &config, const Profile &profile,
                                                  const Assignment &assignment, bool coupled_backward = true) {
    OptimizerOptions o;
    o.decoupled_backprop = !coupled_backward;
    o.staggered_optimizer = false;
    o.horizon_iterations = 1;
    const Model model = build_model(config, profile, assignment, o);
    const auto start = list_schedule(model, ListRule{});
    if (!start) {
        throw Error(ErrorCode::kInfeasibleMemory, "1F1B order deadlocks under the memory limit");
    }
    Schedule s = model.to_schedule(*start);
    s.period = s.makespan;
    return s;
}

/// Steady-state period of the fault-free coupled 1F1B baseline, including gradient all-reduce and the
/// optimizer step.
[[nodiscard]] inline Duration baseline_period(const ClusterConfig &config, const Profile &profile) {
    const Schedule s = build_1f1b(config.all_live_copy(), profile, true);
    Duration opt{0};
    for (int i = 0; i < config.num_stages(); ++i) {
        opt = std::max(opt, profile.duration(Phase::kOptimizer, i));
    }
    return s.makespan + profile.allreduce_time + opt;
}

/// Minimum-makespan schedule over the option's horizon.
///
/// The period is makespan(H) - makespan(H - 1), each solved on its own. A schedule for fewer iterations,
/// repeated, seeds every longer horizon, and the barrier solution seeds the staggered one, so enabling an
/// option never yields a longer schedule than leaving it off.
[[nodiscard]] inline Schedule optimize_schedule(const ClusterConfig &config, const Profile &profile,
                                                const Assignment &assignment, const OptimizerOptions &options) {
    options.validate();
    const int horizon = options.horizon();
    auto make = [&](bool staggered, int h) {
        OptimizerOptions o = options;
        o.staggered_optimizer = staggered;
        o.horizon_iterations = h;
        return build_model(config, profile, assignment, o);
    };
    const Model full = make(options.staggered_optimizer, horizon);
    const Backend backend = resolve_backend(options.backend, full.task_count());

    // One barrier-synchronized iteration, seeded with the plain rerouted 1F1B order.
    const Model base = make(false, 1);
    std::vector<SeedSchedule> base_seeds;
    std::optional<Schedule> adaptive;
    try {
        adaptive = build_adaptive_1f1b(config, base.profile, assignment, true);
        base_seeds.push_back({&*adaptive, 1});
    } catch (const Error &e) {
        if (e.code() != ErrorCode::kInfeasibleMemory) {
            throw;
        }
    }
    const SolveResult b1 = solve_model(base, backend, options, base_seeds);
    const Schedule b1_schedule = base.to_schedule(b1.start);

    std::vector<SolveResult> best{SolveResult{}};
    std::vector<Schedule> schedules{Schedule{}};
    for (int h = 1; h <= horizon; ++h) {
        const Model model = h == horizon ? full : make(options.staggered_optimizer, h);
        if (h == 1 && !options.staggered_optimizer) {
            best.push_back(b1);
        } else {
            std::vector<SeedSchedule> seeds{{&b1_schedule, h}};
            if (h > 1) {
                seeds.push_back({&schedules[1], h});
            }
            best.push_back(solve_model(model, backend, options, seeds));
        }
        schedules.push_back(model.to_schedule(best.back().start));
    }

    Schedule out = schedules[static_cast<std::size_t>(horizon)];
    const SolveResult &last = best[static_cast<std::size_t>(horizon)];
    const SolveResult &prev = best[static_cast<std::size_t>(horizon - 1)];
    out.period = last.makespan - prev.makespan;
    out.optimal = last.optimal && (horizon == 1 || prev.optimal);
    out.lower_bound = last.lower_bound;
    if (backend == Backend::kExact && !out.optimal) {
        out.warnings.push_back(std::string(to_string(ErrorCode::kTimeLimit)) + ": incumbent " +
                               std::to_string(last.makespan.count()) + " ns, bound " +
                               std::to_string(last.lower_bound.count()) + " ns");
    }
    return out;
}

} // namespace pipemend
