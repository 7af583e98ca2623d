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

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "pipemend/planner.hpp"

namespace pipemend {

enum class StallCause { kMigration, kCheckpointRestore, kReplan };

[[nodiscard]] constexpr std::string_view to_string(StallCause c) {
    switch (c) {
    case StallCause::kMigration: return "MIGRATION";
    case StallCause::kCheckpointRestore: return "CHECKPOINT_RESTORE";
    case StallCause::kReplan: return "REPLAN";
    }
    return "?";
}

struct ThroughputSample {
    double time_s = 0.0;
    int live_workers = 0;
    double throughput = 0.0; // samples per second
    double normalized = 0.0; // against the fault-free period
    double fault_scaled = 0.0; // live fraction of workers
};

struct StallRecord {
    double time_s = 0.0;
    StallCause cause = StallCause::kMigration;
    double duration_s = 0.0;
};

struct ReplayOptions {
    double batch_samples = 1.0;
    // End of the simulated window. Defaults to the last event plus 1000 fault-free periods.
    std::optional<double> duration_s;
    bool plan_on_the_fly = true;
    // Stall charged for an on-the-fly plan. Defaults to the measured solve time.
    std::optional<double> replan_stall_s;
    PlannerOptions planner;
};

struct ReplayReport {
    std::vector<ThroughputSample> samples;
    double average_normalized_throughput = 0.0;
    std::vector<StallRecord> stall_log;
    std::int64_t iterations_completed = 0;
    double total_samples = 0.0;
    double duration_s = 0.0;
    double baseline_period_s = 0.0;
};

/// Replays a failure trace against precomputed plans.
///
/// Iterations run back to back at the current plan's period. An event discards the iteration in flight.
/// A failure switches to the plan for the new count after migrating to its distribution; a rejoin switches
/// back after one parameter copy. A stage without live workers forces a checkpoint restore into the
/// normalized layout, and with more than N * (DP - 1) failures training halts until enough workers return.
/// Events name machines by their original slot; the replay tracks where migration has moved each one.
/// Each completed iteration is worth one fault-free period of work; the iteration cut by the end of the
/// window is credited pro rata.
[[nodiscard]] inline ReplayReport replay(const ClusterConfig &config, const Profile &profile, const FailureTrace &trace,
                                         const PlanCache &plans, const ReplayOptions &options = {}) {
    validate_trace(trace, config);
    if (!(options.batch_samples > 0.0)) {
        throw Error(ErrorCode::kInvalidConfig, "batch samples must be positive");
    }
    PlanCache local = plans;
    const Duration base = baseline_period(config, profile);
    if (base <= Duration{0}) {
        throw Error(ErrorCode::kInvalidConfig, "fault-free period must be positive");
    }
    const double last_event = trace.events.empty() ? 0.0 : trace.events.back().timestamp_s;
    const Duration end = options.duration_s ? from_seconds(*options.duration_s)
                                            : from_seconds(last_event) + base * 1000;
    const int total_workers = config.worker_count();
    const int bound = max_recoverable_failures(config);

    ReplayReport report;
    report.baseline_period_s = to_seconds(base);
    report.duration_s = to_seconds(end);

    ClusterConfig actual = config;
    // Trace events name physical machines by their original slot. Migration moves machines between slots.
    std::map<WorkerId, std::optional<WorkerId>> seat;
    for (int i = 0; i < config.num_stages(); ++i) {
        for (int k = 0; k < config.num_pipelines(); ++k) {
            const WorkerId w{i, k};
            seat[w] = config.is_live(w) ? std::optional<WorkerId>(w) : std::nullopt;
        }
    }
    auto machine_at = [&](WorkerId slot) -> std::optional<WorkerId> {
        for (const auto &[machine, at] : seat) {
            if (at == slot) {
                return machine;
            }
        }
        return std::nullopt;
    };
    auto reseat_all = [&] {
        std::vector<WorkerId> free_slots;
        for (int i = 0; i < actual.num_stages(); ++i) {
            for (int k = 0; k < actual.num_pipelines(); ++k) {
                if (actual.is_live({i, k})) {
                    free_slots.push_back({i, k});
                }
            }
        }
        std::size_t q = 0;
        for (auto &[machine, at] : seat) {
            if (at) {
                at = free_slots.at(q++);
            }
        }
    };
    bool down = false;
    Duration period{0};
    Duration t{0};        // start of the next iteration (after any stall)
    long double work = 0; // fault-free nanoseconds of progress

    auto live = [&] { return total_workers - actual.total_failed(); };
    auto sample = [&](Duration at, bool running) {
        ThroughputSample s;
        s.time_s = to_seconds(at);
        s.live_workers = live();
        if (running && !down) {
            s.throughput = options.batch_samples / to_seconds(period);
            s.normalized = static_cast<double>(base.count()) / static_cast<double>(period.count());
        }
        s.fault_scaled = static_cast<double>(s.live_workers) / total_workers;
        report.samples.push_back(s);
    };
    auto stall = [&](Duration at, StallCause cause, Duration d) {
        report.stall_log.push_back({to_seconds(at), cause, to_seconds(d)});
        return d;
    };
    auto plan_for = [&](int f, Duration at, Duration &extra) -> const Plan & {
        if (const Plan *p = local.find(f)) {
            return *p;
        }
        if (!options.plan_on_the_fly) {
            throw Error(ErrorCode::kPlanMissing, "no plan for " + std::to_string(f) + " failures");
        }
        Plan p = make_plan(config, profile, f, options.planner);
        const Duration cost = options.replan_stall_s ? from_seconds(*options.replan_stall_s)
                                                     : from_seconds(p.solve_time_s);
        extra += stall(at, StallCause::kReplan, cost);
        local.insert(std::move(p));
        return *local.find(f);
    };
    // Moves to the plan for the current failure count. Returns the stall.
    auto settle = [&](Duration at, bool rejoin, bool was_down) {
        const int f = actual.total_failed();
        Duration d{0};
        if (f > bound) {
            down = true;
            return d;
        }
        const Plan &plan = plan_for(f, at, d);
        if (was_down || recoverability(actual) != Recoverability::kRecoverable) {
            d += stall(at, StallCause::kCheckpointRestore, profile.checkpoint_restore_time);
            actual = canonical_config(actual, plan.distribution);
            reseat_all();
        } else {
            const MigrationPlan mig = migration_plan(actual, plan.distribution, profile);
            if (rejoin) {
                d += stall(at, StallCause::kMigration, profile.copy_time(actual.tp_degree()));
            } else if (!mig.swaps.empty()) {
                d += stall(at, StallCause::kMigration, mig.stall_time);
            }
            for (const Swap &sw : mig.swaps) {
                seat[*machine_at(sw.target)] = sw.failed;
            }
            actual = apply_migration(actual, mig);
        }
        down = false;
        period = plan.period;
        if (period <= Duration{0}) {
            throw Error(ErrorCode::kInvalidConfig, "plan period must be positive");
        }
        return d;
    };

    t = settle(Duration{0}, false, false);
    std::size_t next = 0;
    while (true) {
        const Duration e = next < trace.events.size() ? from_seconds(trace.events[next].timestamp_s) : Duration::max();
        const Duration limit = std::min(e, end);
        if (!down) {
            while (t + period <= limit) {
                t += period;
                ++report.iterations_completed;
                work += static_cast<long double>(base.count());
                sample(t, true);
            }
        }
        if (e >= end) {
            if (!down && end > t) {
                work += static_cast<long double>((end - t).count()) * static_cast<long double>(base.count()) /
                        static_cast<long double>(period.count());
            }
            break;
        }
        const FailureEvent &ev = trace.events[next++];
        const bool was_down = down;
        if (ev.kind == EventKind::kFail) {
            actual = actual.with_liveness(*seat[ev.worker], false);
            seat[ev.worker] = std::nullopt;
        } else {
            // A returning machine takes its own slot when vacant, otherwise the first vacant one.
            WorkerId slot = ev.worker;
            if (actual.is_live(slot)) {
                slot = actual.failed_workers().front();
            }
            seat[ev.worker] = slot;
            actual = actual.with_liveness(slot, true);
        }
        sample(e, false);
        const Duration resume = std::max(t, e);
        t = resume + settle(e, ev.kind == EventKind::kRejoin, was_down);
        if (!down) {
            sample(t, true);
        }
    }

    report.total_samples = static_cast<double>(report.iterations_completed) * options.batch_samples;
    report.average_normalized_throughput =
        end > Duration{0} ? static_cast<double>(work / static_cast<long double>(end.count())) : 1.0;
    return report;
}

struct SweepRow {
    double fraction = 0.0;
    int failures = 0;
    std::vector<int> distribution;
    Duration period{0};
    double normalized = 0.0;
    double fault_scaled = 0.0;
};

/// Steady-state throughput with floor(fraction * N * DP) failures placed by normalization, against the
/// fault-scaled reference.
[[nodiscard]] inline std::vector<SweepRow> sweep_failures(const ClusterConfig &config, const Profile &profile,
                                                          const std::vector<double> &fractions,
                                                          const PlannerOptions &options = {}) {
    const Duration base = baseline_period(config, profile);
    CostCache cache;
    std::vector<SweepRow> rows;
    for (double fraction : fractions) {
        if (!(fraction >= 0.0 && fraction <= 1.0)) {
            throw Error(ErrorCode::kInvalidConfig, "failure fraction must lie in [0, 1]");
        }
        SweepRow row;
        row.fraction = fraction;
        row.failures = static_cast<int>(std::floor(fraction * config.worker_count() + 1e-9));
        const Plan plan = make_plan(config, profile, row.failures, options, &cache);
        row.distribution = plan.distribution;
        row.period = plan.period;
        row.normalized = static_cast<double>(base.count()) / static_cast<double>(plan.period.count());
        row.fault_scaled = static_cast<double>(config.worker_count() - row.failures) / config.worker_count();
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace pipemend
