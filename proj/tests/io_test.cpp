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

#include <filesystem>

#include "support.hpp"

namespace pipemend {
namespace {

ErrorCode code_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.code();
    }
    return ErrorCode::kTimeLimit; // nothing thrown
}

TEST(ConfigJsonTest, RoundTrip) {
    const ClusterConfig c = ClusterConfig(4, 3, 6, 2).with_liveness({2, 1}, false);
    const ClusterConfig back = config_from_json(config_to_json(c));
    EXPECT_EQ(back.num_stages(), 4);
    EXPECT_EQ(back.tp_degree(), 2);
    EXPECT_EQ(back.failed_workers(), c.failed_workers());
}

TEST(ConfigJsonTest, ParseErrors) {
    EXPECT_EQ(code_of([] { (void)config_from_json("{"); }), ErrorCode::kParse);
    EXPECT_EQ(code_of([] { (void)config_from_json(R"({"format": 1, "num_stages": 2})"); }), ErrorCode::kParse);
    EXPECT_EQ(code_of([] { (void)config_from_json(R"({"format": 9, "num_stages": 2, "num_pipelines": 1, "num_microbatches": 1})"); }),
              ErrorCode::kParse);
    EXPECT_EQ(code_of([] {
                  (void)config_from_json(
                      R"({"format": 1, "num_stages": 2, "num_pipelines": 1, "num_microbatches": 1, "failed": [[5, 0]]})");
              }),
              ErrorCode::kParse);
}

TEST(ProfileJsonTest, RoundTripInSeconds) {
    Profile p = Profile::uniform(from_seconds(0.5), from_seconds(0.25), from_seconds(0.125), 3, 4);
    p.comm_latency = from_seconds(0.01);
    p.allreduce_time = from_seconds(0.2);
    p.memory_limit = 40;
    p.migration_bytes = 1 << 20;
    p.migration_bandwidth = 1e9;
    p.checkpoint_restore_time = from_seconds(30.0);
    p.stage_costs = {p.costs, p.costs};
    p.stage_costs[1].forward = from_seconds(0.75);
    const Profile back = profile_from_json(profile_to_json(p));
    EXPECT_EQ(back.costs, p.costs);
    EXPECT_EQ(back.stage_costs, p.stage_costs);
    EXPECT_EQ(back.comm_latency, p.comm_latency);
    EXPECT_EQ(back.allreduce_time, p.allreduce_time);
    EXPECT_EQ(back.memory_limit, 40);
    EXPECT_EQ(back.migration_bytes, p.migration_bytes);
    EXPECT_EQ(back.checkpoint_restore_time, p.checkpoint_restore_time);

    Profile unlimited = p;
    unlimited.memory_limit = kUnlimitedMemory;
    EXPECT_EQ(profile_from_json(profile_to_json(unlimited)).memory_limit, kUnlimitedMemory);
}

TEST(TraceCsvTest, RoundTripAndErrors) {
    const FailureTrace t{{{0.5, {2, 1}, EventKind::kFail}, {1.25, {2, 1}, EventKind::kRejoin}}};
    const FailureTrace back = trace_from_csv(trace_to_csv(t));
    EXPECT_EQ(back.events, t.events);
    EXPECT_EQ(trace_from_csv("# comment\n\n3,0,1,fail\r\n").events.size(), 1u);
    EXPECT_EQ(code_of([] { (void)trace_from_csv("1,2,3\n"); }), ErrorCode::kParse);
    EXPECT_EQ(code_of([] { (void)trace_from_csv("x,2,3,fail\n"); }), ErrorCode::kParse);
    EXPECT_EQ(code_of([] { (void)trace_from_csv("1,2,3,explode\n"); }), ErrorCode::kParse);
}

TEST(ScheduleJsonlTest, RoundTrip) {
    const ClusterConfig c = testing::four_by_three_one_failure();
    const Profile p = testing::unit_profile();
    const Assignment a = assign_microbatches(c);
    const Schedule s = build_adaptive_1f1b(c, p, a, false);
    const Schedule back = schedule_from_jsonl(schedule_to_jsonl(s));
    EXPECT_EQ(back.entries.size(), s.entries.size());
    EXPECT_EQ(back.makespan, s.makespan);
    EXPECT_TRUE(validate_schedule(back, c, p, a).empty());
    EXPECT_EQ(code_of([] { (void)schedule_from_jsonl(R"({"stage": 0})"); }), ErrorCode::kParse);
    EXPECT_EQ(code_of([] {
                  (void)schedule_from_jsonl(
                      R"({"stage":0,"mb":0,"origin":0,"phase":"Q","exec":0,"start":0,"end":1})");
              }),
              ErrorCode::kParse);
}

TEST(AssignmentJsonTest, RoundTrip) {
    const ClusterConfig c = testing::four_by_three_one_failure();
    const Assignment a = assign_microbatches(c);
    EXPECT_EQ(assignment_from_json(assignment_to_json(a), c), a);
    EXPECT_EQ(code_of([&] { (void)assignment_from_json(R"({"0-0-0": 0})", c); }), ErrorCode::kParse);
}

TEST(PlanDirTest, RoundTripAndMissingDirectory) {
    const ClusterConfig c = testing::four_by_three();
    const Profile p = testing::unit_profile();
    PlannerOptions o;
    o.optimizer.backend = Backend::kHeuristic;
    o.optimizer.heuristic_restarts = 4;
    o.cost.heuristic_restarts = 4;
    const PlanCache cache = build_plans(c, p, 1, o);
    const auto dir = std::filesystem::temp_directory_path() / "pipemend_io_test_plans";
    std::filesystem::remove_all(dir);
    write_plan_dir(dir, cache);
    EXPECT_TRUE(std::filesystem::exists(dir / "summary.csv"));
    const PlanCache back = read_plan_dir(dir);
    ASSERT_EQ(back.plans().size(), 2u);
    for (const auto &[f, plan] : cache.plans()) {
        const Plan *q = back.find(f);
        ASSERT_NE(q, nullptr);
        EXPECT_EQ(q->period, plan.period);
        EXPECT_EQ(q->distribution, plan.distribution);
        EXPECT_EQ(q->placement, plan.placement);
        EXPECT_EQ(q->schedule.entries.size(), plan.schedule.entries.size());
        EXPECT_EQ(q->schedule.staggered, plan.schedule.staggered);
    }
    std::filesystem::remove_all(dir);
    EXPECT_EQ(code_of([&] { (void)read_plan_dir(dir); }), ErrorCode::kPlanMissing);
}

TEST(ReportTest, CsvAndJsonShapes) {
    ReplayReport r;
    r.samples.push_back({1.0, 12, 2.0, 1.0, 1.0});
    r.stall_log.push_back({0.5, StallCause::kReplan, 0.1});
    const std::string csv = samples_to_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "time_s,live_workers,throughput,normalized,fault_scaled");
    const auto j = detail::parse(report_to_json(r));
    EXPECT_EQ(j.at("stalls").at(0).at("cause"), "REPLAN");
    EXPECT_EQ(j.at("samples").size(), 1u);
    SweepRow row;
    row.fraction = 0.01;
    row.failures = 2;
    row.period = from_seconds(1.0);
    row.normalized = 0.99;
    row.fault_scaled = 0.98;
    const std::string sweep = sweep_to_csv({row});
    EXPECT_NE(sweep.find("0.01,2,1,0.99,0.98"), std::string::npos);
}

TEST(GanttTest, OneRowPerWorker) {
    const ClusterConfig c(2, 1, 2);
    const Profile p = testing::unit_profile();
    const std::string g = render_gantt(build_1f1b(c, p), c, Duration{1});
    EXPECT_NE(g.find("FF"), std::string::npos);
    EXPECT_EQ(std::count(g.begin(), g.end(), '\n'), 2);
    EXPECT_THROW((void)render_gantt(build_1f1b(c, p), c, Duration{0}), Error);
}

} // namespace
} // namespace pipemend
