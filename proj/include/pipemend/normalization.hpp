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

#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <tuple>
#include <vector>

#include "pipemend/optimizer.hpp"
#include "pipemend/rerouting.hpp"

namespace pipemend {

/// cost(stage, x): price of hosting x failures at one stage.
using CostFn = std::function<Duration(int stage, int failures)>;

inline constexpr Duration kInfeasibleCost = Duration::max() / 4;

struct NormalizationResult {
    std::vector<int> r;                                   // failures per stage
    Duration cost{0};                                     // C[N-1][F]
    std::vector<std::vector<Duration>> cost_table;        // C[i][f]
    std::vector<std::vector<std::vector<int>>> assignment_table; // A[i][f]
};

/// Largest failure count that leaves every stage one live worker.
[[nodiscard]] inline int max_recoverable_failures(const ClusterConfig &config) {
    return config.num_stages() * (config.num_pipelines() - 1);
}

/// Splits F failures over the stages to minimize the summed cost:
/// C[i][f] = min over x <= min(f, DP - 1) of C[i-1][f-x] + cost(i, x).
/// Ties keep the smaller x at the later stage.
[[nodiscard]] inline NormalizationResult normalize(const ClusterConfig &config, int failures, const CostFn &cost) {
    const int n = config.num_stages();
    const int cap = config.num_pipelines() - 1;
    if (failures < 0 || failures > max_recoverable_failures(config)) {
        throw Error(ErrorCode::kInfeasibleFailureCount,
                    std::to_string(failures) + " failures cannot leave a live worker in every stage");
    }
    // Each cost(i, x) is evaluated once.
    std::vector<std::vector<Duration>> unit(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int x = 0; x <= std::min(cap, failures); ++x) {
            unit[static_cast<std::size_t>(i)].push_back(cost(i, x));
        }
    }

    NormalizationResult res;
    const auto width = static_cast<std::size_t>(failures + 1);
    res.cost_table.assign(static_cast<std::size_t>(n), std::vector<Duration>(width, kInfeasibleCost));
    res.assignment_table.assign(static_cast<std::size_t>(n), std::vector<std::vector<int>>(width));
    for (int f = 0; f <= failures; ++f) {
        if (f <= cap) {
            res.cost_table[0][static_cast<std::size_t>(f)] = unit[0][static_cast<std::size_t>(f)];
            res.assignment_table[0][static_cast<std::size_t>(f)] = {f};
        }
    }
    for (int i = 1; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        for (int f = 0; f <= failures; ++f) {
            const auto uf = static_cast<std::size_t>(f);
            int best_x = -1;
            for (int x = 0; x <= std::min(f, cap); ++x) {
                const Duration prev = res.cost_table[ui - 1][static_cast<std::size_t>(f - x)];
                if (prev >= kInfeasibleCost) {
                    continue;
                }
                const Duration c = prev + unit[ui][static_cast<std::size_t>(x)];
                if (c < res.cost_table[ui][uf]) {
                    res.cost_table[ui][uf] = c;
                    best_x = x;
                }
            }
            if (best_x >= 0) {
                auto a = res.assignment_table[ui - 1][static_cast<std::size_t>(f - best_x)];
                a.push_back(best_x);
                res.assignment_table[ui][uf] = std::move(a);
            }
        }
    }
    res.r = res.assignment_table[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(failures)];
    res.cost = res.cost_table[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(failures)];
    return res;
}

/// Cluster with r[i] failures per stage, placed on the highest-indexed pipelines.
[[nodiscard]] inline ClusterConfig canonical_config(const ClusterConfig &config, const std::vector<int> &r) {
    if (static_cast<int>(r.size()) != config.num_stages()) {
        throw Error(ErrorCode::kInvalidConfig, "distribution must list every stage");
    }
    std::vector<WorkerId> failed;
    for (int i = 0; i < config.num_stages(); ++i) {
        const int x = r[static_cast<std::size_t>(i)];
        if (x < 0 || x > config.num_pipelines()) {
            throw Error(ErrorCode::kInvalidConfig, "stage failure count out of range");
        }
        for (int q = 0; q < x; ++q) {
            failed.push_back({i, config.num_pipelines() - 1 - q});
        }
    }
    return config.all_live_copy().with_failed(failed);
}

/// Memoized cost values shared by concurrent planners. Readers take a shared lock.
class CostCache {
  public:
    using Key = std::tuple<int, int, std::uint64_t>; // (stage, failures, context)

    [[nodiscard]] std::optional<Duration> find(const Key &key) const {
        std::shared_lock lock(mutex_);
        auto it = values_.find(key);
        if (it == values_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    void store(const Key &key, Duration value) {
        std::unique_lock lock(mutex_);
        values_.emplace(key, value);
    }

    [[nodiscard]] std::size_t size() const {
        std::shared_lock lock(mutex_);
        return values_.size();
    }

  private:
    mutable std::shared_mutex mutex_;
    std::map<Key, Duration> values_;
};

namespace detail {

inline void mix(std::uint64_t &h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6U) + (h >> 2U);
}

[[nodiscard]] inline std::uint64_t context_hash(const ClusterConfig &config, const Profile &profile,
                                                const OptimizerOptions &options) {
    std::uint64_t h = 0;
    for (std::int64_t v : {std::int64_t{config.num_stages()}, std::int64_t{config.num_pipelines()},
                           std::int64_t{config.num_microbatches()}, profile.comm_latency.count(),
                           profile.allreduce_time.count(), profile.memory_limit,
                           std::int64_t{options.decoupled_backprop}, std::int64_t{options.staggered_optimizer},
                           std::int64_t{options.horizon()}, std::int64_t{options.heuristic_restarts},
                           std::int64_t{options.seed}, options.memory_limit.value_or(-1)}) {
        mix(h, static_cast<std::uint64_t>(v));
    }
    for (int i = 0; i < config.num_stages(); ++i) {
        const StageCosts &c = profile.stage(i);
        for (std::int64_t v : {c.forward.count(), c.backward_input.count(), c.backward_weight.count(),
                               c.backward_coupled.count(), c.optimizer.count(), c.activation, c.activation_input,
                               c.activation_weight}) {
            mix(h, static_cast<std::uint64_t>(v));
        }
    }
    return h;
}

} // namespace detail

/// Extra bubble time consumed by hosting x failures at one stage: the list-scheduled period with the
/// rerouted work, minus the fault-free baseline period, times the stage's live workers. Never negative.
[[nodiscard]] inline Duration heuristic_cost(const ClusterConfig &config, const Profile &profile, int stage, int x,
                                             OptimizerOptions options = {}, CostCache *cache = nullptr) {
    if (x < 0 || x > config.num_pipelines() - 1 || stage < 0 || stage >= config.num_stages()) {
        throw Error(ErrorCode::kInvalidConfig, "cost asked for an unrecoverable stage load");
    }
    if (x == 0) {
        return Duration{0};
    }
    options.backend = Backend::kHeuristic;
    const CostCache::Key key{stage, x, detail::context_hash(config, profile, options)};
    if (cache) {
        if (auto hit = cache->find(key)) {
            return *hit;
        }
    }
    std::vector<int> r(static_cast<std::size_t>(config.num_stages()), 0);
    r[static_cast<std::size_t>(stage)] = x;
    const ClusterConfig failed = canonical_config(config, r);
    const Schedule s = optimize_schedule(failed, profile, assign_microbatches(failed), options);
    const Duration extra = s.period - baseline_period(config, profile);
    const Duration value = std::max(Duration{0}, extra) * (config.num_pipelines() - x);
    if (cache) {
        cache->store(key, value);
    }
    return value;
}

struct Swap {
    WorkerId failed; // slot whose role is taken over
    WorkerId target; // live worker that moves into it

    friend bool operator==(const Swap &, const Swap &) = default;
};

/// Pairwise parameter copies that move failures to the target distribution.
struct MigrationPlan {
    std::vector<Swap> swaps;
    Duration stall_time{0}; // copies run in parallel
};

/// Fewest swaps turning the actual per-stage failure counts into `r`. Failures at a stage within quota stay;
/// each surplus failure trades places with a live worker of a stage below quota (highest pipeline first).
[[nodiscard]] inline MigrationPlan migration_plan(const ClusterConfig &actual, const std::vector<int> &r,
                                                  const Profile &profile) {
    if (recoverability(actual) != Recoverability::kRecoverable) {
        throw Error(ErrorCode::kUnrecoverable, "a stage has lost every worker; peers cannot supply its parameters");
    }
    const int n = actual.num_stages();
    if (static_cast<int>(r.size()) != n) {
        throw Error(ErrorCode::kInvalidConfig, "distribution must list every stage");
    }
    int total = 0;
    for (int x : r) {
        total += x;
    }
    if (total != actual.total_failed()) {
        throw Error(ErrorCode::kInvalidConfig, "distribution does not match the failure count");
    }
    std::vector<WorkerId> surplus;
    std::vector<WorkerId> donors;
    for (int i = 0; i < n; ++i) {
        const int have = actual.failed_count(i);
        const int want = r[static_cast<std::size_t>(i)];
        int extra = have - want;
        for (int k = actual.num_pipelines() - 1; k >= 0 && extra > 0; --k) {
            if (!actual.is_live({i, k})) {
                surplus.push_back({i, k});
                --extra;
            }
        }
        int deficit = want - have;
        for (int k = actual.num_pipelines() - 1; k >= 0 && deficit > 0; --k) {
            if (actual.is_live({i, k})) {
                donors.push_back({i, k});
                --deficit;
            }
        }
    }
    MigrationPlan plan;
    for (std::size_t q = 0; q < surplus.size(); ++q) {
        plan.swaps.push_back({surplus[q], donors[q]});
    }
    if (!plan.swaps.empty()) {
        plan.stall_time = profile.copy_time(actual.tp_degree());
    }
    return plan;
}

/// Overload taking the normalization output.
[[nodiscard]] inline MigrationPlan migration_plan(const ClusterConfig &actual, const NormalizationResult &target,
                                                  const Profile &profile) {
    return migration_plan(actual, target.r, profile);
}

/// Liveness after the swaps: each failed slot is filled and each donor slot is vacated.
[[nodiscard]] inline ClusterConfig apply_migration(const ClusterConfig &actual, const MigrationPlan &plan) {
    ClusterConfig out = actual;
    for (const Swap &s : plan.swaps) {
        out = out.with_liveness(s.failed, true).with_liveness(s.target, false);
    }
    return out;
}

} // namespace pipemend
