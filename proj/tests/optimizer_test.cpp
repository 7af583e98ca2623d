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

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace pipemend {
namespace {

using testing::four_by_three_one_failure;
using testing::unit_profile;

OptimizerOptions mode(bool decoupled, bool staggered, Backend backend = Backend::kExact) {
    OptimizerOptions o;
    o.decoupled_backprop = decoupled;
    o.staggered_optimizer = staggered;
    o.backend = backend;
    o.time_limit = std::chrono::seconds(2);
    return o;
}

TEST(ModelTest, NodeOrderIsTopological) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    for (bool staggered : {false, true}) {
        const Model m = build_model(c, p, assign_microbatches(c), mode(true, staggered));
        for (std::size_t v = 0; v < m.nodes.size(); ++v) {
            for (const Arc &a : m.nodes[v].preds) {
                ASSERT_LT(a.node, static_cast<int>(v));
            }
        }
        // Two iterations of F, B_input and B_weight per (stage, micro-batch, pipeline), one step per live worker.
        EXPECT_EQ(m.task_count(), m.horizon * (4 * 6 * 3 * 3 + 11));
    }
}

TEST(ModelTest, EvaluateRejectsContradictoryOrder) {
    const ClusterConfig c(2, 1, 1);
    const Profile p = unit_profile();
    const Model m = build_model(c, p, Assignment::identity(c), mode(false, false));
    std::vector<std::vector<int>> seq(m.workers.size());
    for (std::size_t w = 0; w < m.workers.size(); ++w) {
        seq[w] = m.worker_nodes[w];
        std::reverse(seq[w].begin(), seq[w].end());
    }
    EXPECT_FALSE(m.evaluate(seq).has_value());
    EXPECT_TRUE(m.evaluate(m.worker_nodes).has_value());
}

TEST(AdaptiveTest, ReroutedOneFOneBTakes36) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    const Assignment a = assign_microbatches(c);
    const Schedule s = build_adaptive_1f1b(c, p, a);
    EXPECT_EQ(s.makespan, Duration{36});
    EXPECT_TRUE(validate_schedule(s, c, p, a).empty());
}

TEST(OptimizerTest, DecoupledBackpropTakes29) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    const Assignment a = assign_microbatches(c);
    const Schedule s = optimize_schedule(c, p, a, mode(true, false));
    EXPECT_EQ(s.makespan, Duration{29});
    EXPECT_EQ(s.period, Duration{29});
    EXPECT_TRUE(s.optimal);
    EXPECT_TRUE(validate_schedule(s, c, p, a).empty());
}

TEST(OptimizerTest, StaggeredOptimizerHidesTheFailure) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    const Assignment a = assign_microbatches(c);
    const Schedule s = optimize_schedule(c, p, a, mode(true, true));
    EXPECT_EQ(s.period, Duration{27});
    EXPECT_EQ(s.iterations, 2);
    EXPECT_TRUE(validate_schedule(s, c, p, a).empty());
    for (const WorkerMemory &w : memory_timeline(s, p)) {
        EXPECT_LE(w.peak, p.memory_limit);
    }
}

TEST(OptimizerTest, StaggeredNeedsTwoIterations) {
    OptimizerOptions o = mode(true, true);
    o.horizon_iterations = 1;
    EXPECT_THROW(o.validate(), Error);
    const ClusterConfig c = four_by_three_one_failure();
    EXPECT_THROW((void)optimize_schedule(c, unit_profile(), assign_microbatches(c), o), Error);
}

TEST(OptimizerTest, TightMemoryLimit) {
    const ClusterConfig c(2, 1, 2);
    Profile p = unit_profile();
    p.memory_limit = 3; // one micro-batch (2 bytes) fits, two do not; 1F1B still works
    const Schedule s = optimize_schedule(c, p, Assignment::identity(c), mode(false, false));
    EXPECT_TRUE(validate_schedule(s, c, p, Assignment::identity(c)).empty());
    OptimizerOptions o = mode(false, false);
    o.memory_limit = 1; // below one micro-batch
    try {
        (void)optimize_schedule(c, p, Assignment::identity(c), o);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
    }
}

TEST(OptimizerTest, TimeLimitReturnsIncumbentWithWarning) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    const Assignment a = assign_microbatches(c);
    OptimizerOptions o = mode(false, false);
    o.time_limit = std::chrono::milliseconds(50);
    const Schedule s = optimize_schedule(c, p, a, o);
    EXPECT_TRUE(validate_schedule(s, c, p, a).empty());
    EXPECT_LE(s.makespan, Duration{36});
    EXPECT_GE(s.makespan, s.lower_bound);
    if (!s.optimal) {
        ASSERT_FALSE(s.warnings.empty());
        EXPECT_NE(s.warnings.back().find("TIME_LIMIT"), std::string::npos);
    }
}

TEST(ExactTest, MatchesBruteForceOnSmallInstances) {
    std::mt19937 rng(2024);
    int compared = 0;
    while (compared < 60) {
        const auto inst = testing::random_small_instance(rng);
        const Assignment a = assign_microbatches(inst.config);
        const Model m = build_model(inst.config, inst.profile, a, inst.options);
        if (m.task_count() > 10 || testing::order_count(m) > 20000) {
            continue;
        }
        ++compared;
        const auto oracle = testing::brute_force_makespan(m);
        const ExactResult r = exact_search(m, std::chrono::seconds(30));
        ASSERT_TRUE(r.optimal);
        ASSERT_EQ(r.start.has_value(), oracle.has_value());
        if (oracle) {
            ASSERT_EQ(r.makespan, *oracle) << "instance " << compared;
            const Schedule s = m.to_schedule(*r.start);
            ASSERT_TRUE(validate_schedule(s, inst.config, m.profile, a).empty());
        }
    }
}

TEST(ExactTest, CoupledTwoByTwoMatchesBruteForce) {
    // Two stages, two pipelines, two micro-batches, unit costs, one stage-1 failure: 19 tasks, enumerated with
    // orders that put a backward before its own forward skipped.
    const ClusterConfig c = ClusterConfig(2, 2, 2).with_liveness({1, 1}, false);
    const Profile p = Profile::uniform(Duration{1}, Duration{1}, Duration{1});
    const Assignment a = assign_microbatches(c);
    const Model m = build_model(c, p, a, mode(false, false));
    const ExactResult r = exact_search(m, std::chrono::seconds(60));
    ASSERT_TRUE(r.optimal);

    // Orders per worker restricted to F before B of the same micro-batch, optimizer step last.
    Duration best = Duration::max();
    auto forward_first = [&](const std::vector<int> &order) {
        for (std::size_t x = 0; x < order.size(); ++x) {
            const TaskId &b = m.nodes[static_cast<std::size_t>(order[x])].id;
            if (b.phase != Phase::kBackward) {
                continue;
            }
            for (std::size_t y = x + 1; y < order.size(); ++y) {
                const TaskId &f = m.nodes[static_cast<std::size_t>(order[y])].id;
                if (f.phase == Phase::kForward && f.microbatch == b.microbatch && f.origin == b.origin) {
                    return false;
                }
            }
        }
        return true;
    };
    std::vector<std::vector<int>> seq = m.worker_nodes;
    std::function<void(std::size_t)> rec = [&](std::size_t w) {
        if (w == seq.size()) {
            if (auto start = m.evaluate(seq)) {
                best = std::min(best, makespan_of(m, *start));
            }
            return;
        }
        auto &s = seq[w];
        std::sort(s.begin(), s.end());
        do {
            if (m.nodes[static_cast<std::size_t>(s.back())].id.phase != Phase::kOptimizer || !forward_first(s)) {
                continue;
            }
            rec(w + 1);
        } while (std::next_permutation(s.begin(), s.end()));
    };
    rec(0);
    EXPECT_EQ(r.makespan, best);
}

TEST(OptimizerTest, OptionsNeverLengthenTheSchedule) {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 12; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 2);
        const int dp = 2 + static_cast<int>(rng() % 2);
        const int m = n + static_cast<int>(rng() % 3);
        const ClusterConfig c = ClusterConfig(n, dp, m).with_liveness({static_cast<int>(rng() % n), 1}, false);
        Profile p = Profile::uniform(Duration{1 + static_cast<int>(rng() % 2)}, Duration{1 + static_cast<int>(rng() % 2)},
                                     Duration{1 + static_cast<int>(rng() % 2)});
        p.memory_limit = 2 * n + 2;
        const Assignment a = assign_microbatches(c);
        const Duration adaptive = build_adaptive_1f1b(c, p, a).period;
        const Duration decoupled = optimize_schedule(c, p, a, mode(true, false, Backend::kHeuristic)).period;
        const Duration staggered = optimize_schedule(c, p, a, mode(true, true, Backend::kHeuristic)).period;
        EXPECT_LE(decoupled, adaptive);
        EXPECT_LE(staggered, decoupled);
    }
}

TEST(HeuristicTest, WithinFifteenPercentOfExact) {
    std::mt19937 rng(99);
    int compared = 0;
    while (compared < 50) {
        const auto inst = testing::random_small_instance(rng);
        const Assignment a = assign_microbatches(inst.config);
        const Model m = build_model(inst.config, inst.profile, a, inst.options);
        const ExactResult e = exact_search(m, std::chrono::seconds(10));
        if (!e.start || !e.optimal) {
            continue;
        }
        ++compared;
        const auto h = heuristic_search(m, 64, 1);
        ASSERT_TRUE(h.has_value());
        EXPECT_LE(static_cast<double>(h->makespan.count()), 1.15 * static_cast<double>(e.makespan.count()));
    }
}

TEST(HeuristicTest, DeterministicForSeed) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    const Model m = build_model(c, p, assign_microbatches(c), mode(true, true));
    const auto a = heuristic_search(m, 16, 3);
    const auto b = heuristic_search(m, 16, 3);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->start, b->start);
    const Schedule s = m.to_schedule(a->start);
    EXPECT_TRUE(validate_schedule(s, c, p, assign_microbatches(c)).empty());
}

TEST(HeuristicTest, GeneratedSchedulesAreValid) {
    std::mt19937 rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 4);
        const int dp = 1 + static_cast<int>(rng() % 3);
        const int mb = 1 + static_cast<int>(rng() % 6);
        ClusterConfig c(n, dp, mb);
        if (dp > 1) {
            c = c.with_liveness({static_cast<int>(rng() % n), static_cast<int>(rng() % dp)}, false);
        }
        Profile p = Profile::uniform(Duration{1 + static_cast<int>(rng() % 3)}, Duration{1 + static_cast<int>(rng() % 3)},
                                     Duration{1 + static_cast<int>(rng() % 3)});
        p.comm_latency = Duration{static_cast<int>(rng() % 2)};
        p.allreduce_time = Duration{static_cast<int>(rng() % 3)};
        p.costs.optimizer = Duration{static_cast<int>(rng() % 2)};
        p.memory_limit = rng() % 2 ? kUnlimitedMemory : 2 * n + 1;
        const Assignment a = assign_microbatches(c);
        const bool staggered = rng() % 2;
        const Schedule s = optimize_schedule(c, p, a, mode(rng() % 2 == 1, staggered, Backend::kHeuristic));
        const auto violations = validate_schedule(s, c, p, a);
        ASSERT_TRUE(violations.empty()) << to_string(violations.front().kind) << ' ' << violations.front().detail;
        EXPECT_GT(s.period, Duration{0});
    }
}

TEST(MemoryTimelineTest, StepsTrackRunningSum) {
    const ClusterConfig c = four_by_three_one_failure();
    const Profile p = unit_profile();
    const Schedule s = optimize_schedule(c, p, assign_microbatches(c), mode(true, false));
    for (const WorkerMemory &w : memory_timeline(s, p)) {
        Bytes peak = 0;
        for (std::size_t q = 0; q < w.steps.size(); ++q) {
            peak = std::max(peak, w.steps[q].bytes);
            if (q > 0) {
                EXPECT_LE(w.steps[q - 1].time, w.steps[q].time);
            }
        }
        EXPECT_LE(peak, w.peak);
        EXPECT_LE(w.peak, p.memory_limit);
        EXPECT_EQ(w.steps.back().bytes, 0);
    }
    EXPECT_EQ(peak_memory(s, p), 8);
}

TEST(BackendTest, AutoSwitchesOnTaskCount) {
    EXPECT_EQ(resolve_backend(Backend::kAuto, kAutoExactTaskLimit), Backend::kExact);
    EXPECT_EQ(resolve_backend(Backend::kAuto, kAutoExactTaskLimit + 1), Backend::kHeuristic);
    EXPECT_EQ(resolve_backend(Backend::kHeuristic, 3), Backend::kHeuristic);
}

} // namespace
} // namespace pipemend
