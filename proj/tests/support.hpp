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

// Fixtures and independent oracles shared by the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "pipemend/pipemend.hpp"

namespace pipemend::testing {

inline constexpr Duration kUnit{1};

/// Four stages, three pipelines, six micro-batches; unit forward, input and weight gradient.
inline ClusterConfig four_by_three() { return ClusterConfig(4, 3, 6); }

inline Profile unit_profile(Bytes memory_limit = 8) {
    Profile p = Profile::uniform(kUnit, kUnit, kUnit);
    p.memory_limit = memory_limit;
    return p;
}

/// The stage-2 worker of pipeline 1 is down.
inline ClusterConfig four_by_three_one_failure() { return four_by_three().with_liveness({2, 1}, false); }

/// Longest path through an explicit DAG of (duration, preds with lag). Nodes must be listed so that
/// relaxation converges; runs |V| rounds of Bellman-Ford and returns nullopt on a positive cycle.
struct DagNode {
    Duration duration{0};
    std::vector<std::pair<int, Duration>> preds;
};

inline std::optional<std::vector<Duration>> longest_path_starts(const std::vector<DagNode> &g) {
    std::vector<Duration> start(g.size(), Duration{0});
    for (std::size_t round = 0; round <= g.size(); ++round) {
        bool changed = false;
        for (std::size_t v = 0; v < g.size(); ++v) {
            for (const auto &[u, lag] : g[v].preds) {
                const Duration cand = start[static_cast<std::size_t>(u)] + g[static_cast<std::size_t>(u)].duration + lag;
                if (cand > start[v]) {
                    start[v] = cand;
                    changed = true;
                }
            }
        }
        if (!changed) {
            return start;
        }
    }
    return std::nullopt;
}

/// Exhaustive minimum makespan over every per-worker order of a model's tasks. Each combination is timed by
/// plain longest-path relaxation and rejected when a worker's running memory exceeds the limit.
inline std::optional<Duration> brute_force_makespan(const Model &model) {
    const std::size_t count = model.nodes.size();
    std::vector<DagNode> base(count);
    for (std::size_t v = 0; v < count; ++v) {
        base[v].duration = model.nodes[v].duration;
        for (const Arc &a : model.nodes[v].preds) {
            base[v].preds.push_back({a.node, a.lag});
        }
    }
    std::vector<std::vector<int>> perm = model.worker_nodes;
    for (auto &p : perm) {
        std::sort(p.begin(), p.end());
    }
    std::optional<Duration> best;
    std::function<void(std::size_t)> rec = [&](std::size_t w) {
        if (w == perm.size()) {
            std::vector<DagNode> g = base;
            for (const auto &seq : perm) {
                Bytes running = 0;
                for (std::size_t q = 0; q < seq.size(); ++q) {
                    running += model.nodes[static_cast<std::size_t>(seq[q])].delta;
                    if (running > model.memory_limit) {
                        return;
                    }
                    if (q > 0) {
                        g[static_cast<std::size_t>(seq[q])].preds.push_back({seq[q - 1], Duration{0}});
                    }
                }
            }
            const auto start = longest_path_starts(g);
            if (!start) {
                return;
            }
            Duration mk{0};
            for (std::size_t v = 0; v < count; ++v) {
                mk = std::max(mk, (*start)[v] + g[v].duration);
            }
            if (!best || mk < *best) {
                best = mk;
            }
            return;
        }
        std::sort(perm[w].begin(), perm[w].end());
        do {
            rec(w + 1);
        } while (std::next_permutation(perm[w].begin(), perm[w].end()));
    };
    rec(0);
    return best;
}

/// Small random instance for oracle comparisons.
struct SmallInstance {
    ClusterConfig config;
    Profile profile;
    OptimizerOptions options;
};

inline SmallInstance random_small_instance(std::mt19937 &rng) {
    auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<unsigned>(hi - lo + 1)); };
    const int n = pick(1, 2);
    const int dp = pick(1, 2);
    const int m = pick(1, 2);
    ClusterConfig c(n, dp, m);
    if (dp > 1 && pick(0, 1) == 1) {
        c = c.with_liveness({pick(0, n - 1), pick(0, dp - 1)}, false);
    }
    Profile p = Profile::uniform(Duration{pick(1, 3)}, Duration{pick(1, 3)}, Duration{pick(1, 3)},
                                 pick(1, 2), pick(1, 2));
    p.costs.backward_coupled = Duration{pick(1, 4)};
    p.costs.optimizer = Duration{pick(0, 2)};
    p.comm_latency = Duration{pick(0, 2)};
    p.allreduce_time = Duration{pick(0, 2)};
    p.memory_limit = pick(0, 2) == 0 ? kUnlimitedMemory : p.costs.activation + pick(1, 2 * static_cast<int>(p.costs.activation));
    OptimizerOptions o;
    o.decoupled_backprop = pick(0, 1) == 1;
    o.staggered_optimizer = pick(0, 1) == 1;
    o.horizon_iterations = o.staggered_optimizer ? 2 : pick(1, 2);
    return {c, p, o};
}

/// Number of per-worker orders the brute force would try.
inline double order_count(const Model &model) {
    double total = 1;
    for (const auto &seq : model.worker_nodes) {
        for (std::size_t q = 2; q <= seq.size(); ++q) {
            total *= static_cast<double>(q);
        }
    }
    return total;
}

/// Kinds of rule a schedule breaks, found by direct pairwise comparison.
inline std::set<ViolationKind> broken_rules(const Schedule &s, const ClusterConfig &config, const Profile &profile,
                                            const Assignment &assignment) {
    std::set<ViolationKind> out;
    auto find = [&](int it, int i, int j, int k, Phase p) -> const ScheduledTask * {
        for (const ScheduledTask &t : s.entries) {
            if (t.id.iteration == it && t.id.stage == i && t.id.microbatch == j && t.id.origin == k && t.id.phase == p) {
                return &t;
            }
        }
        return nullptr;
    };
    for (const ScheduledTask &t : s.entries) {
        const TaskId &id = t.id;
        if (id.phase != Phase::kOptimizer && id.exec != assignment.executor(id.stage, id.microbatch, id.origin)) {
            out.insert(ViolationKind::kAssignment);
        }
        if (!config.is_live(id.worker())) {
            out.insert(ViolationKind::kAssignment);
        }
        const Duration comm = profile.comm_latency;
        if (id.phase == Phase::kForward && id.stage > 0) {
            const auto *p = find(id.iteration, id.stage - 1, id.microbatch, id.origin, Phase::kForward);
            if (p && t.start < p->end + comm) {
                out.insert(ViolationKind::kCrossStageDep);
            }
        }
        if (id.phase == Phase::kBackward || id.phase == Phase::kBackwardInput) {
            const auto *f = find(id.iteration, id.stage, id.microbatch, id.origin, Phase::kForward);
            if (f && t.start < f->end) {
                out.insert(ViolationKind::kSameStageDep);
            }
            if (id.stage + 1 < config.num_stages()) {
                const auto *p = find(id.iteration, id.stage + 1, id.microbatch, id.origin, id.phase);
                if (p && t.start < p->end + comm) {
                    out.insert(ViolationKind::kCrossStageDep);
                }
            }
        }
        if (id.phase == Phase::kBackwardWeight) {
            const auto *b = find(id.iteration, id.stage, id.microbatch, id.origin, Phase::kBackwardInput);
            if (b && t.start < b->end) {
                out.insert(ViolationKind::kSameStageDep);
            }
        }
        for (const ScheduledTask &u : s.entries) {
            if (&u != &t && u.worker() == t.worker() && t.start < u.end && u.start < t.end) {
                out.insert(ViolationKind::kOverlap);
            }
        }
    }
    // Memory: replay each worker's completions in time order.
    std::map<WorkerId, std::vector<const ScheduledTask *>> by_worker;
    for (const ScheduledTask &t : s.entries) {
        by_worker[t.worker()].push_back(&t);
    }
    for (auto &[w, list] : by_worker) {
        std::sort(list.begin(), list.end(), [](auto *a, auto *b) { return a->end < b->end; });
        Bytes running = 0;
        for (const auto *t : list) {
            running += profile.memory_delta(t->id.phase, t->id.stage);
            if (running > profile.memory_limit) {
                out.insert(ViolationKind::kMemory);
            }
        }
    }
    return out;
}

/// Replay of a trace whose stalls are all zero: each inter-event gap runs whole iterations at the period for
/// the current failure count, and the tail of the window is credited pro rata. Times in nanoseconds.
inline double gap_oracle(const FailureTrace &t, const std::map<int, int> &period, int base, double end_ns,
                         int bound) {
    std::set<WorkerId> failed;
    double clock = 0;
    double work = 0;
    auto run = [&](double until) {
        const int f = static_cast<int>(failed.size());
        if (f > bound) {
            clock = until;
            return;
        }
        const double p = period.at(f);
        const double whole = std::floor((until - clock) / p);
        work += whole * base;
        clock += whole * p;
        if (until == end_ns) {
            work += (end_ns - clock) * base / p;
        }
        clock = until;
    };
    for (const FailureEvent &e : t.events) {
        run(std::round(e.timestamp_s * 1e9));
        if (e.kind == EventKind::kFail) {
            failed.insert(e.worker);
        } else {
            failed.erase(e.worker);
        }
    }
    run(end_ns);
    return work / end_ns;
}

/// Fail and rejoin events on random workers with exponential gaps (mean 300 ns).
inline FailureTrace synthetic_trace(unsigned seed, int events, const ClusterConfig &c) {
    std::mt19937 rng(seed);
    std::exponential_distribution<double> gap(1.0 / 300.0);
    std::set<WorkerId> failed;
    FailureTrace t;
    double clock = 0;
    for (int q = 0; q < events; ++q) {
        clock += std::ceil(gap(rng));
        const WorkerId w{static_cast<int>(rng() % c.num_stages()), static_cast<int>(rng() % c.num_pipelines())};
        const bool fail = !failed.count(w);
        t.events.push_back({clock * 1e-9, w, fail ? EventKind::kFail : EventKind::kRejoin});
        if (fail) {
            failed.insert(w);
        } else {
            failed.erase(w);
        }
    }
    return t;
}

inline std::set<ViolationKind> kinds_of(const std::vector<ScheduleViolation> &v) {
    std::set<ViolationKind> out;
    for (const auto &x : v) {
        out.insert(x.kind);
    }
    return out;
}

} // namespace pipemend::testing
