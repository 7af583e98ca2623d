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

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pipemend/core.hpp"
#include "pipemend/memory.hpp"

namespace pipemend {

/// Handoff latency between two workers. A worker passing data to itself pays nothing.
[[nodiscard]] inline Duration comm_lag(const Profile &profile, WorkerId from, WorkerId to) {
    return from == to ? Duration{0} : profile.comm_latency;
}

/// Standard 1F1B on a fault-free cluster: stage i runs min(N - i, m) warm-up forwards, alternates one
/// backward with one forward, then drains. With `coupled_backward` false every backward is emitted as
/// B_input immediately followed by B_weight. Start times are the earliest consistent with the fixed
/// per-worker order.
[[nodiscard]] inline Schedule build_1f1b(const ClusterConfig &config, const Profile &profile,
                                         bool coupled_backward = true) {
    if (!config.all_live()) {
        throw Error(ErrorCode::kInvalidConfig, "the 1F1B baseline requires every worker to be live");
    }
    profile.validate(config.num_stages());
    const int n = config.num_stages();
    const int m = config.num_microbatches();

    // One pipeline is enough: all pipelines run the same timeline.
    struct Op {
        Phase phase;
        int microbatch;
    };
    std::vector<std::vector<Op>> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto &seq = order[static_cast<std::size_t>(i)];
        const int warmup = std::min(n - i, m);
        auto push_backward = [&](int j) {
            if (coupled_backward) {
                seq.push_back({Phase::kBackward, j});
            } else {
                seq.push_back({Phase::kBackwardInput, j});
                seq.push_back({Phase::kBackwardWeight, j});
            }
        };
        for (int j = 0; j < warmup; ++j) {
            seq.push_back({Phase::kForward, j});
        }
        for (int j = 0; j < m; ++j) {
            push_backward(j);
            if (warmup + j < m) {
                seq.push_back({Phase::kForward, warmup + j});
            }
        }
    }

    const Phase grad = coupled_backward ? Phase::kBackward : Phase::kBackwardInput;
    // end[(phase, stage, mb)]
    std::map<std::tuple<Phase, int, int>, Duration> end;
    std::vector<std::size_t> cursor(static_cast<std::size_t>(n), 0);
    std::vector<Duration> free_at(static_cast<std::size_t>(n), Duration{0});
    std::vector<std::pair<int, ScheduledTask>> placed; // (stage, task on pipeline 0)
    std::size_t remaining = 0;
    for (const auto &seq : order) {
        remaining += seq.size();
    }
    while (remaining > 0) {
        bool progressed = false;
        for (int i = 0; i < n; ++i) {
            auto &c = cursor[static_cast<std::size_t>(i)];
            const auto &seq = order[static_cast<std::size_t>(i)];
            while (c < seq.size()) {
                const Op op = seq[c];
                Duration ready = free_at[static_cast<std::size_t>(i)];
                auto need = [&](Phase p, int stage, Duration lag) {
                    auto it = end.find({p, stage, op.microbatch});
                    if (it == end.end()) {
                        return false;
                    }
                    ready = std::max(ready, it->second + lag);
                    return true;
                };
                bool ok = true;
                if (op.phase == Phase::kForward && i > 0) {
                    ok = need(Phase::kForward, i - 1, profile.comm_latency);
                } else if (op.phase == grad) {
                    ok = need(Phase::kForward, i, Duration{0});
                    if (ok && i + 1 < n) {
                        ok = need(grad, i + 1, profile.comm_latency);
                    }
                } else if (op.phase == Phase::kBackwardWeight) {
                    ok = need(Phase::kBackwardInput, i, Duration{0});
                }
                if (!ok) {
                    break;
                }
                const Duration finish = ready + profile.duration(op.phase, i);
                end[{op.phase, i, op.microbatch}] = finish;
                free_at[static_cast<std::size_t>(i)] = finish;
                placed.push_back({i, ScheduledTask{TaskId{i, op.microbatch, 0, op.phase, 0, 0}, ready, finish}});
                ++c;
                --remaining;
                progressed = true;
            }
        }
        if (!progressed) {
            throw Error(ErrorCode::kInvalidConfig, "1F1B order deadlocked");
        }
    }

    Schedule s;
    for (int k = 0; k < config.num_pipelines(); ++k) {
        for (const auto &[stage, t] : placed) {
            ScheduledTask copy = t;
            copy.id.origin = k;
            copy.id.exec = k;
            s.entries.push_back(copy);
        }
    }
    s.recompute_makespan();
    s.period = s.makespan;
    s.lower_bound = Duration{0};
    if (m < n) {
        s.warnings.push_back("fewer micro-batches than stages; the pipeline never reaches steady state");
    }
    return s;
}

/// Idle time of one worker between the first stage-0 start and the makespan.
[[nodiscard]] inline Duration count_bubbles(const Schedule &schedule, WorkerId worker) {
    const std::vector<ScheduledTask> own = schedule.on_worker(worker);
    if (own.empty()) {
        throw Error(ErrorCode::kUnknownWorker, to_string(worker) + " runs no task in this schedule");
    }
    std::optional<Duration> window_start;
    Duration window_end{0};
    for (const ScheduledTask &t : schedule.entries) {
        if (t.id.stage == 0) {
            window_start = window_start ? std::min(*window_start, t.start) : t.start;
        }
        window_end = std::max(window_end, t.end);
    }
    const Duration lo = window_start.value_or(Duration{0});
    Duration busy{0};
    for (const ScheduledTask &t : own) {
        const Duration a = std::max(t.start, lo);
        const Duration b = std::min(t.end, window_end);
        if (b > a) {
            busy += b - a;
        }
    }
    return (window_end - lo) - busy;
}

enum class ViolationKind { kCrossStageDep, kSameStageDep, kOverlap, kMemory, kAssignment, kCoverage };

[[nodiscard]] constexpr std::string_view to_string(ViolationKind k) {
    switch (k) {
    case ViolationKind::kCrossStageDep: return "CROSS_STAGE_DEP";
    case ViolationKind::kSameStageDep: return "SAME_STAGE_DEP";
    case ViolationKind::kOverlap: return "OVERLAP";
    case ViolationKind::kMemory: return "MEMORY";
    case ViolationKind::kAssignment: return "ASSIGNMENT";
    case ViolationKind::kCoverage: return "COVERAGE";
    }
    return "?";
}

struct ScheduleViolation {
    ViolationKind kind;
    std::vector<TaskId> tasks; // never empty
    std::string detail;
};

namespace detail {

// (iteration, stage, micro-batch, origin, phase) ignoring the executor.
using TaskKey = std::tuple<int, int, int, int, Phase>;

[[nodiscard]] inline TaskKey key_of(const TaskId &t) {
    return {t.iteration, t.stage, t.microbatch, t.origin, t.phase};
}

} // namespace detail

/// Checks a schedule against the dependency, overlap, memory, coverage and assignment rules. Returns every
/// violation found; an empty list means the schedule is valid.
[[nodiscard]] inline std::vector<ScheduleViolation> validate_schedule(const Schedule &schedule,
                                                                      const ClusterConfig &config,
                                                                      const Profile &profile,
                                                                      const Assignment &assignment) {
    std::vector<ScheduleViolation> out;
    auto report = [&](ViolationKind kind, std::vector<TaskId> tasks, std::string text) {
        out.push_back({kind, std::move(tasks), std::move(text)});
    };
    const int n = config.num_stages();
    const int m = config.num_microbatches();
    const int dp = config.num_pipelines();

    std::map<detail::TaskKey, const ScheduledTask *> index;
    for (const ScheduledTask &t : schedule.entries) {
        const TaskId &id = t.id;
        const bool opt = id.phase == Phase::kOptimizer;
        if (id.stage < 0 || id.stage >= n || id.exec < 0 || id.exec >= dp || id.origin < 0 || id.origin >= dp ||
            id.iteration < 0 || id.iteration >= schedule.iterations || (!opt && (id.microbatch < 0 || id.microbatch >= m))) {
            report(ViolationKind::kCoverage, {id}, "task outside the cluster or horizon");
            continue;
        }
        if (t.end - t.start != profile.duration(id.phase, id.stage)) {
            report(ViolationKind::kCoverage, {id}, "duration differs from the profile");
        }
        if (!config.is_live(id.worker())) {
            report(ViolationKind::kAssignment, {id}, "runs on failed worker " + to_string(id.worker()));
        } else if (!opt && assignment.num_stages() == n && id.exec != assignment.executor(id.stage, id.microbatch, id.origin)) {
            report(ViolationKind::kAssignment, {id}, "executor differs from the assignment");
        } else if (opt && id.origin != id.exec) {
            report(ViolationKind::kAssignment, {id}, "optimizer step must name its own worker");
        }
        if (!index.emplace(detail::key_of(id), &t).second) {
            report(ViolationKind::kCoverage, {id}, "duplicate task");
        }
    }

    auto find = [&](int it, int stage, int mb, int origin, Phase p) -> const ScheduledTask * {
        auto f = index.find({it, stage, mb, origin, p});
        return f == index.end() ? nullptr : f->second;
    };
    auto missing = [&](int it, int stage, int mb, int origin, Phase p) {
        TaskId id{stage, mb, origin, p, -1, it};
        if (p == Phase::kOptimizer) {
            id.exec = origin;
        } else if (assignment.num_stages() == n) {
            id.exec = assignment.executor(stage, mb, origin);
        }
        report(ViolationKind::kCoverage, {id}, "missing task");
    };

    const bool with_opt = schedule.has_optimizer_steps();
    for (int it = 0; it < schedule.iterations; ++it) {
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < dp; ++k) {
                for (int j = 0; j < m; ++j) {
                    if (!find(it, i, j, k, Phase::kForward)) {
                        missing(it, i, j, k, Phase::kForward);
                    }
                    const bool coupled = find(it, i, j, k, Phase::kBackward) != nullptr;
                    const bool split = find(it, i, j, k, Phase::kBackwardInput) || find(it, i, j, k, Phase::kBackwardWeight);
                    if (coupled && split) {
                        report(ViolationKind::kCoverage, {find(it, i, j, k, Phase::kBackward)->id},
                               "coupled and split backward both present");
                    } else if (!coupled) {
                        for (Phase p : {Phase::kBackwardInput, Phase::kBackwardWeight}) {
                            if (!find(it, i, j, k, p)) {
                                missing(it, i, j, k, p);
                            }
                        }
                    }
                }
                if (with_opt && config.is_live({i, k}) && !find(it, i, -1, k, Phase::kOptimizer)) {
                    missing(it, i, -1, k, Phase::kOptimizer);
                }
            }
        }
    }

    // Precedence checks. `last_grad` holds the completing backward task of each (iteration, stage).
    std::map<std::pair<int, int>, std::vector<const ScheduledTask *>> last_grad;
    std::map<std::pair<int, WorkerId>, const ScheduledTask *> opt_of;
    for (const ScheduledTask &t : schedule.entries) {
        if (t.id.phase == Phase::kBackwardWeight || t.id.phase == Phase::kBackward) {
            last_grad[{t.id.iteration, t.id.stage}].push_back(&t);
        } else if (t.id.phase == Phase::kOptimizer) {
            opt_of[{t.id.iteration, t.worker()}] = &t;
        }
    }
    auto check = [&](const ScheduledTask &succ, const ScheduledTask *pred, Duration lag, ViolationKind kind,
                     const char *what) {
        if (pred != nullptr && succ.start < pred->end + lag) {
            report(kind, {succ.id, pred->id}, what);
        }
    };
    for (const ScheduledTask &t : schedule.entries) {
        const TaskId &id = t.id;
        if (index.find(detail::key_of(id)) == index.end() || index.at(detail::key_of(id)) != &t) {
            continue;
        }
        switch (id.phase) {
        case Phase::kForward:
            if (id.stage > 0) {
                const ScheduledTask *p = find(id.iteration, id.stage - 1, id.microbatch, id.origin, Phase::kForward);
                if (p) {
                    check(t, p, comm_lag(profile, p->worker(), t.worker()), ViolationKind::kCrossStageDep,
                          "forward starts before the upstream forward arrives");
                }
            }
            break;
        case Phase::kBackwardInput:
        case Phase::kBackward: {
            check(t, find(id.iteration, id.stage, id.microbatch, id.origin, Phase::kForward), Duration{0},
                  ViolationKind::kSameStageDep, "backward starts before its forward ends");
            if (id.stage + 1 < n) {
                const ScheduledTask *p = find(id.iteration, id.stage + 1, id.microbatch, id.origin, id.phase);
                if (p) {
                    check(t, p, comm_lag(profile, p->worker(), t.worker()), ViolationKind::kCrossStageDep,
                          "backward starts before the downstream gradient arrives");
                }
            }
            break;
        }
        case Phase::kBackwardWeight:
            check(t, find(id.iteration, id.stage, id.microbatch, id.origin, Phase::kBackwardInput), Duration{0},
                  ViolationKind::kSameStageDep, "weight gradient starts before the input gradient ends");
            break;
        case Phase::kOptimizer: {
            // Staggered: wait for this stage's gradients. Otherwise wait for every stage.
            for (int i = 0; i < n; ++i) {
                if (schedule.staggered && i != id.stage) {
                    continue;
                }
                for (const ScheduledTask *g : last_grad[{id.iteration, i}]) {
                    check(t, g, profile.allreduce_time,
                          i == id.stage ? ViolationKind::kSameStageDep : ViolationKind::kCrossStageDep,
                          "optimizer step starts before the gradient all-reduce");
                }
            }
            break;
        }
        }
        if (id.iteration > 0 && with_opt) {
            if (schedule.staggered) {
                auto f = opt_of.find({id.iteration - 1, t.worker()});
                if (f != opt_of.end()) {
                    check(t, f->second, Duration{0}, ViolationKind::kSameStageDep,
                          "task starts before the previous optimizer step on its worker");
                }
            } else {
                for (const auto &[key, o] : opt_of) {
                    if (key.first == id.iteration - 1) {
                        check(t, o, Duration{0},
                              o->worker() == t.worker() ? ViolationKind::kSameStageDep : ViolationKind::kCrossStageDep,
                              "task starts before the previous iteration's barrier");
                    }
                }
            }
        }
    }

    // No two tasks of one worker overlap.
    std::map<WorkerId, std::vector<const ScheduledTask *>> per_worker;
    for (const ScheduledTask &t : schedule.entries) {
        per_worker[t.worker()].push_back(&t);
    }
    for (auto &[w, tasks] : per_worker) {
        std::sort(tasks.begin(), tasks.end(), [](const ScheduledTask *a, const ScheduledTask *b) {
            return a->start != b->start ? a->start < b->start : a->end < b->end;
        });
        const ScheduledTask *reach = nullptr;
        for (const ScheduledTask *t : tasks) {
            // A zero-length task only collides when it falls strictly inside another one.
            if (reach != nullptr && t->start < reach->end && (t->end > t->start || t->start > reach->start)) {
                report(ViolationKind::kOverlap, {reach->id, t->id}, "tasks overlap on " + to_string(w));
            }
            if (reach == nullptr || t->end > reach->end) {
                reach = t;
            }
        }
    }

    for (const WorkerMemory &mem : memory_timeline(schedule, profile)) {
        if (mem.peak > profile.memory_limit) {
            report(ViolationKind::kMemory, {mem.peak_task},
                   to_string(mem.worker) + " peaks at " + std::to_string(mem.peak) + " bytes");
        }
    }
    return out;
}

} // namespace pipemend
