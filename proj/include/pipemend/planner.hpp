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
#include <future>
#include <map>
#include <vector>

#include "pipemend/memory.hpp"
#include "pipemend/normalization.hpp"
#include "pipemend/optimizer.hpp"

namespace pipemend {

/// Precomputed schedule for one failure count.
struct Plan {
    int failures = 0;
    std::vector<int> distribution; // failures per stage after normalization
    std::vector<WorkerId> placement; // failed slots the schedule was solved for
    Schedule schedule;
    Duration period{0};
    Duration makespan{0};
    Bytes peak_memory = 0;
    double solve_time_s = 0.0;
};

struct PlannerOptions {
    OptimizerOptions optimizer;
    // Options for the cost estimates inside normalization; always run on the heuristic backend.
    OptimizerOptions cost;
    bool parallel = true;
};

/// Plans keyed by failure count. Immutable once built, so replays may share one.
class PlanCache {
  public:
    PlanCache() = default;
    PlanCache(ClusterConfig config, Profile profile) : config_(std::move(config)), profile_(std::move(profile)) {}

    [[nodiscard]] const Plan *find(int failures) const {
        auto it = plans_.find(failures);
        return it == plans_.end() ? nullptr : &it->second;
    }

    void insert(Plan plan) { plans_.insert_or_assign(plan.failures, std::move(plan)); }

    [[nodiscard]] const std::map<int, Plan> &plans() const { return plans_; }
    [[nodiscard]] const std::optional<ClusterConfig> &config() const { return config_; }
    [[nodiscard]] const std::optional<Profile> &profile() const { return profile_; }

  private:
    std::optional<ClusterConfig> config_;
    std::optional<Profile> profile_;
    std::map<int, Plan> plans_;
};

/// Normalizes `failures` onto the stages and solves the resulting cluster. Zero failures gives the
/// fault-free 1F1B baseline.
[[nodiscard]] inline Plan make_plan(const ClusterConfig &config, const Profile &profile, int failures,
                                    const PlannerOptions &options, CostCache *cache = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const ClusterConfig healthy = config.all_live_copy();
    Plan plan;
    plan.failures = failures;
    if (failures == 0) {
        plan.distribution.assign(static_cast<std::size_t>(config.num_stages()), 0);
        plan.schedule = build_1f1b(healthy, profile, true);
        plan.period = baseline_period(healthy, profile);
        plan.schedule.period = plan.period;
    } else {
        const NormalizationResult norm = normalize(healthy, failures, [&](int stage, int x) {
            return heuristic_cost(healthy, profile, stage, x, options.cost, cache);
        });
        plan.distribution = norm.r;
        const ClusterConfig target = canonical_config(healthy, norm.r);
        plan.placement = target.failed_workers();
        plan.schedule = optimize_schedule(target, profile, assign_microbatches(target), options.optimizer);
        plan.period = plan.schedule.period;
    }
    plan.makespan = plan.schedule.makespan;
    Profile effective = profile;
    effective.memory_limit = options.optimizer.memory_limit.value_or(profile.memory_limit);
    plan.peak_memory = peak_memory(plan.schedule, effective);
    plan.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return plan;
}

/// Plans for 0..max_failures, solved concurrently when `parallel` is set.
[[nodiscard]] inline PlanCache build_plans(const ClusterConfig &config, const Profile &profile, int max_failures,
                                           const PlannerOptions &options) {
    if (max_failures < 0 || max_failures > max_recoverable_failures(config)) {
        throw Error(ErrorCode::kInfeasibleFailureCount, "max failures must be within 0.." +
                                                            std::to_string(max_recoverable_failures(config)));
    }
    CostCache cache;
    PlanCache out(config.all_live_copy(), profile);
    if (!options.parallel) {
        for (int f = 0; f <= max_failures; ++f) {
            out.insert(make_plan(config, profile, f, options, &cache));
        }
        return out;
    }
    std::vector<std::future<Plan>> jobs;
    for (int f = 0; f <= max_failures; ++f) {
        jobs.push_back(std::async(std::launch::async,
                                  [&, f] { return make_plan(config, profile, f, options, &cache); }));
    }
    for (auto &j : jobs) {
        out.insert(j.get());
    }
    return out;
}

} // namespace pipemend
