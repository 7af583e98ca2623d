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

// pipemend: plan, replay and sweep fault-tolerant pipeline schedules.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipemend/pipemend.hpp"

namespace {

using namespace pipemend;

struct Common {
    std::string config;
    std::string profile;
    bool decoupled = true;
    bool staggered = true;
    std::string backend = "auto";
    double time_limit_s = 10.0;
    int restarts = 64;
    bool serial = false;
};

void add_common(CLI::App *cmd, Common &c) {
    cmd->add_option("--config", c.config, "cluster config JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--profile", c.profile, "profile JSON (times in seconds)")->required()->check(CLI::ExistingFile);
    cmd->add_flag("--decoupled,!--no-decoupled", c.decoupled, "split backward into input and weight gradients");
    cmd->add_flag("--staggered,!--no-staggered", c.staggered, "per-stage optimizer steps across iterations");
    cmd->add_option("--backend", c.backend, "exact, heuristic or auto")
        ->check(CLI::IsMember({"exact", "heuristic", "auto"}, CLI::ignore_case));
    cmd->add_option("--time-limit", c.time_limit_s, "exact search limit per solve, seconds");
    cmd->add_option("--restarts", c.restarts, "randomized list-schedule restarts");
    cmd->add_flag("--serial", c.serial, "solve failure counts one at a time");
}

PlannerOptions planner_options(const Common &c) {
    PlannerOptions o;
    o.optimizer.decoupled_backprop = c.decoupled;
    o.optimizer.staggered_optimizer = c.staggered;
    const std::map<std::string, Backend> backends{
        {"exact", Backend::kExact}, {"heuristic", Backend::kHeuristic}, {"auto", Backend::kAuto}};
    o.optimizer.backend = backends.at(c.backend);
    o.optimizer.time_limit = from_seconds(c.time_limit_s);
    o.optimizer.heuristic_restarts = c.restarts;
    o.cost = o.optimizer;
    o.cost.backend = Backend::kHeuristic;
    o.parallel = !c.serial;
    return o;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Fault-tolerant pipeline schedule planner and trace simulator"};
    app.require_subcommand(1);

    Common plan_args;
    int max_failures = 1;
    std::string plan_out = "plans";
    CLI::App *plan = app.add_subcommand("plan", "solve one schedule per failure count");
    add_common(plan, plan_args);
    plan->add_option("--max-failures", max_failures, "largest failure count to plan for");
    plan->add_option("--out", plan_out, "plan directory");

    Common sim_args;
    std::string trace_path, plans_dir, report_out, csv_out;
    double batch_samples = 1.0;
    std::optional<double> duration;
    bool no_replan = false;
    CLI::App *sim = app.add_subcommand("simulate", "replay a failure trace against a plan directory");
    add_common(sim, sim_args);
    sim->add_option("--trace", trace_path, "trace CSV: timestamp_s,stage,pipeline,event")
        ->required()
        ->check(CLI::ExistingFile);
    sim->add_option("--plans", plans_dir, "plan directory from `plan`");
    sim->add_option("--batch-samples", batch_samples, "samples per iteration");
    sim->add_option("--duration", duration, "simulated window, seconds");
    sim->add_flag("--no-replan", no_replan, "fail with PLAN_MISSING instead of planning on the fly");
    sim->add_option("--out", report_out, "report JSON");
    sim->add_option("--csv", csv_out, "throughput samples CSV");

    Common sweep_args;
    std::vector<double> fractions{0.0, 0.01, 0.05, 0.10};
    std::string sweep_out;
    CLI::App *sweep = app.add_subcommand("sweep", "steady-state throughput per failure fraction");
    add_common(sweep, sweep_args);
    sweep->add_option("--fractions", fractions, "failure fractions")->delimiter(',');
    sweep->add_option("--out", sweep_out, "CSV output (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (plan->parsed()) {
            const ClusterConfig config = config_from_json(detail::read_file(plan_args.config));
            const Profile profile = profile_from_json(detail::read_file(plan_args.profile));
            const PlanCache cache = build_plans(config, profile, max_failures, planner_options(plan_args));
            write_plan_dir(plan_out, cache);
            std::cout << detail::read_file(std::filesystem::path(plan_out) / "summary.csv");
        } else if (sim->parsed()) {
            const ClusterConfig config = config_from_json(detail::read_file(sim_args.config));
            const Profile profile = profile_from_json(detail::read_file(sim_args.profile));
            const FailureTrace trace = trace_from_csv(detail::read_file(trace_path));
            PlanCache cache;
            if (!plans_dir.empty()) {
                cache = read_plan_dir(plans_dir);
            }
            ReplayOptions o;
            o.batch_samples = batch_samples;
            o.duration_s = duration;
            o.plan_on_the_fly = !no_replan;
            o.planner = planner_options(sim_args);
            const ReplayReport report = replay(config, profile, trace, cache, o);
            if (!report_out.empty()) {
                detail::write_file(report_out, report_to_json(report));
            }
            if (!csv_out.empty()) {
                detail::write_file(csv_out, samples_to_csv(report));
            }
            std::cout << "iterations " << report.iterations_completed << "\naverage_normalized_throughput "
                      << report.average_normalized_throughput << "\nstalls " << report.stall_log.size() << '\n';
        } else if (sweep->parsed()) {
            const ClusterConfig config = config_from_json(detail::read_file(sweep_args.config));
            const Profile profile = profile_from_json(detail::read_file(sweep_args.profile));
            const std::string csv = sweep_to_csv(sweep_failures(config, profile, fractions, planner_options(sweep_args)));
            if (sweep_out.empty()) {
                std::cout << csv;
            } else {
                detail::write_file(sweep_out, csv);
            }
        }
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
