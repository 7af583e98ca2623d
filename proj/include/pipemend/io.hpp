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

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipemend/planner.hpp"
#include "pipemend/simulator.hpp"

namespace pipemend {

inline constexpr int kFormatVersion = 1;

namespace detail {

using json = nlohmann::json;

[[nodiscard]] inline std::string read_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::kParse, "cannot open " + path.string());
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::kParse, "cannot write " + path.string());
    }
    out << text;
}

[[nodiscard]] inline json parse(const std::string &text) {
    try {
        return json::parse(text);
    } catch (const json::exception &e) {
        throw Error(ErrorCode::kParse, e.what());
    }
}

inline void check_format(const json &j) {
    if (!j.is_object() || j.value("format", 0) != kFormatVersion) {
        throw Error(ErrorCode::kParse, "expected an object with \"format\": 1");
    }
}

template <typename T> T get(const json &j, const char *key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &e) {
        throw Error(ErrorCode::kParse, std::string(key) + ": " + e.what());
    }
}

template <typename T> T get_or(const json &j, const char *key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return fallback;
    }
    return get<T>(j, key);
}

inline json worker_json(WorkerId w) { return json::array({w.stage, w.pipeline}); }

[[nodiscard]] inline WorkerId worker_from(const json &j) {
    if (!j.is_array() || j.size() != 2) {
        throw Error(ErrorCode::kParse, "worker must be [stage, pipeline]");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

} // namespace detail

// ---- cluster config -------------------------------------------------------------------------------------

[[nodiscard]] inline std::string config_to_json(const ClusterConfig &c) {
    detail::json j;
    j["format"] = kFormatVersion;
    j["num_stages"] = c.num_stages();
    j["num_pipelines"] = c.num_pipelines();
    j["num_microbatches"] = c.num_microbatches();
    j["tp_degree"] = c.tp_degree();
    j["failed"] = detail::json::array();
    for (const WorkerId &w : c.failed_workers()) {
        j["failed"].push_back(detail::worker_json(w));
    }
    return j.dump(2);
}

[[nodiscard]] inline ClusterConfig config_from_json(const std::string &text) {
    const auto j = detail::parse(text);
    detail::check_format(j);
    ClusterConfig c(detail::get<int>(j, "num_stages"), detail::get<int>(j, "num_pipelines"),
                    detail::get<int>(j, "num_microbatches"), detail::get_or<int>(j, "tp_degree", 1));
    std::vector<WorkerId> failed;
    if (j.contains("failed")) {
        for (const auto &w : j.at("failed")) {
            failed.push_back(detail::worker_from(w));
        }
    }
    try {
        return c.with_failed(failed);
    } catch (const Error &e) {
        throw Error(ErrorCode::kParse, e.what());
    }
}

// ---- profile (times in seconds) -------------------------------------------------------------------------

namespace detail {

inline json stage_json(const StageCosts &c) {
    return json{{"t_f", to_seconds(c.forward)},
                {"t_b_input", to_seconds(c.backward_input)},
                {"t_b_weight", to_seconds(c.backward_weight)},
                {"t_b_coupled", to_seconds(c.backward_coupled)},
                {"t_opt", to_seconds(c.optimizer)},
                {"a_b", c.activation},
                {"a_b_input", c.activation_input},
                {"a_b_weight", c.activation_weight}};
}

inline StageCosts stage_from(const json &j, const StageCosts &fallback) {
    StageCosts c = fallback;
    c.forward = from_seconds(get_or<double>(j, "t_f", to_seconds(fallback.forward)));
    c.backward_input = from_seconds(get_or<double>(j, "t_b_input", to_seconds(fallback.backward_input)));
    c.backward_weight = from_seconds(get_or<double>(j, "t_b_weight", to_seconds(fallback.backward_weight)));
    if (j.contains("t_b_coupled")) {
        c.backward_coupled = from_seconds(get<double>(j, "t_b_coupled"));
    } else if (j.contains("t_b_input") || j.contains("t_b_weight")) {
        c.backward_coupled = c.backward_input + c.backward_weight;
    }
    c.optimizer = from_seconds(get_or<double>(j, "t_opt", to_seconds(fallback.optimizer)));
    c.activation_input = get_or<Bytes>(j, "a_b_input", fallback.activation_input);
    c.activation_weight = get_or<Bytes>(j, "a_b_weight", fallback.activation_weight);
    c.activation = get_or<Bytes>(j, "a_b", c.activation_input + c.activation_weight);
    return c;
}

} // namespace detail

[[nodiscard]] inline std::string profile_to_json(const Profile &p) {
    detail::json j = detail::stage_json(p.costs);
    j["format"] = kFormatVersion;
    j["t_comm"] = to_seconds(p.comm_latency);
    j["t_allreduce"] = to_seconds(p.allreduce_time);
    j["m_limit"] = p.memory_limit >= kUnlimitedMemory ? detail::json(nullptr) : detail::json(p.memory_limit);
    j["migration_bytes"] = p.migration_bytes;
    j["migration_bandwidth"] = p.migration_bandwidth;
    j["checkpoint_restore_time"] = to_seconds(p.checkpoint_restore_time);
    if (!p.stage_costs.empty()) {
        j["stages"] = detail::json::array();
        for (const StageCosts &c : p.stage_costs) {
            j["stages"].push_back(detail::stage_json(c));
        }
    }
    return j.dump(2);
}

[[nodiscard]] inline Profile profile_from_json(const std::string &text) {
    const auto j = detail::parse(text);
    detail::check_format(j);
    Profile p;
    p.costs = detail::stage_from(j, StageCosts{});
    p.comm_latency = from_seconds(detail::get_or<double>(j, "t_comm", 0.0));
    p.allreduce_time = from_seconds(detail::get_or<double>(j, "t_allreduce", 0.0));
    p.memory_limit = detail::get_or<Bytes>(j, "m_limit", kUnlimitedMemory);
    p.migration_bytes = detail::get_or<Bytes>(j, "migration_bytes", 0);
    p.migration_bandwidth = detail::get_or<double>(j, "migration_bandwidth", 0.0);
    p.checkpoint_restore_time = from_seconds(detail::get_or<double>(j, "checkpoint_restore_time", 0.0));
    if (j.contains("stages")) {
        for (const auto &s : j.at("stages")) {
            p.stage_costs.push_back(detail::stage_from(s, p.costs));
        }
    }
    return p;
}

// ---- failure trace CSV ----------------------------------------------------------------------------------

/// `timestamp_s,stage,pipeline,event` with event fail or rejoin; a header line is optional.
[[nodiscard]] inline FailureTrace trace_from_csv(const std::string &text) {
    FailureTrace trace;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.rfind("timestamp", 0) == 0 || line[0] == '#') {
            continue;
        }
        std::istringstream row(line);
        std::string ts, stage, pipe, kind;
        if (!std::getline(row, ts, ',') || !std::getline(row, stage, ',') || !std::getline(row, pipe, ',') ||
            !std::getline(row, kind)) {
            throw Error(ErrorCode::kParse, "trace line " + std::to_string(line_no) + ": expected 4 fields");
        }
        FailureEvent e;
        try {
            e.timestamp_s = std::stod(ts);
            e.worker = {std::stoi(stage), std::stoi(pipe)};
        } catch (const std::exception &) {
            throw Error(ErrorCode::kParse, "trace line " + std::to_string(line_no) + ": bad number");
        }
        if (kind == "fail") {
            e.kind = EventKind::kFail;
        } else if (kind == "rejoin") {
            e.kind = EventKind::kRejoin;
        } else {
            throw Error(ErrorCode::kParse, "trace line " + std::to_string(line_no) + ": event must be fail or rejoin");
        }
        trace.events.push_back(e);
    }
    return trace;
}

[[nodiscard]] inline std::string trace_to_csv(const FailureTrace &trace) {
    std::ostringstream out;
    out << "timestamp_s,stage,pipeline,event\n" << std::setprecision(17);
    for (const FailureEvent &e : trace.events) {
        out << e.timestamp_s << ',' << e.worker.stage << ',' << e.worker.pipeline << ','
            << (e.kind == EventKind::kFail ? "fail" : "rejoin") << '\n';
    }
    return out.str();
}

// ---- schedule JSON lines --------------------------------------------------------------------------------

/// One task per line. Times are integer nanoseconds.
[[nodiscard]] inline std::string schedule_to_jsonl(const Schedule &s) {
    std::vector<ScheduledTask> sorted = s.entries;
    std::sort(sorted.begin(), sorted.end(), [](const ScheduledTask &a, const ScheduledTask &b) {
        return a.start != b.start ? a.start < b.start : a.id < b.id;
    });
    std::ostringstream out;
    for (const ScheduledTask &t : sorted) {
        detail::json j{{"stage", t.id.stage},
                       {"mb", t.id.microbatch},
                       {"origin", t.id.origin},
                       {"phase", std::string(to_string(t.id.phase))},
                       {"exec", t.id.exec},
                       {"start", t.start.count()},
                       {"end", t.end.count()},
                       {"iter", t.id.iteration}};
        out << j.dump() << '\n';
    }
    return out.str();
}

[[nodiscard]] inline Schedule schedule_from_jsonl(const std::string &text) {
    Schedule s;
    std::istringstream in(text);
    std::string line;
    int iterations = 1;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = detail::parse(line);
        ScheduledTask t;
        t.id.stage = detail::get<int>(j, "stage");
        t.id.microbatch = detail::get<int>(j, "mb");
        t.id.origin = detail::get<int>(j, "origin");
        t.id.phase = phase_from_string(detail::get<std::string>(j, "phase"));
        t.id.exec = detail::get<int>(j, "exec");
        t.id.iteration = detail::get_or<int>(j, "iter", 0);
        t.start = Duration{detail::get<std::int64_t>(j, "start")};
        t.end = Duration{detail::get<std::int64_t>(j, "end")};
        iterations = std::max(iterations, t.id.iteration + 1);
        s.entries.push_back(t);
    }
    s.iterations = iterations;
    s.recompute_makespan();
    s.period = s.makespan;
    return s;
}

// ---- assignment ------------------------------------------------------------------------------------------

/// Map "i:j:k" -> executing pipeline.
[[nodiscard]] inline std::string assignment_to_json(const Assignment &a) {
    detail::json j = detail::json::object();
    for (int i = 0; i < a.num_stages(); ++i) {
        for (int jj = 0; jj < a.num_microbatches(); ++jj) {
            for (int k = 0; k < a.num_pipelines(); ++k) {
                j[std::to_string(i) + ":" + std::to_string(jj) + ":" + std::to_string(k)] = a.executor(i, jj, k);
            }
        }
    }
    return j.dump(2);
}

[[nodiscard]] inline Assignment assignment_from_json(const std::string &text, const ClusterConfig &config) {
    const auto j = detail::parse(text);
    std::vector<int> exec(static_cast<std::size_t>(config.num_stages() * config.num_microbatches() *
                                                   config.num_pipelines()),
                          -1);
    for (auto it = j.begin(); it != j.end(); ++it) {
        int i = 0, jj = 0, k = 0;
        char c1 = 0, c2 = 0;
        std::istringstream key(it.key());
        if (!(key >> i >> c1 >> jj >> c2 >> k) || c1 != ':' || c2 != ':' || i < 0 || i >= config.num_stages() ||
            jj < 0 || jj >= config.num_microbatches() || k < 0 || k >= config.num_pipelines()) {
            throw Error(ErrorCode::kParse, "bad assignment key " + it.key());
        }
        exec[static_cast<std::size_t>((i * config.num_microbatches() + jj) * config.num_pipelines() + k)] =
            it.value().get<int>();
    }
    return Assignment(config, std::move(exec));
}

// ---- plans -----------------------------------------------------------------------------------------------

[[nodiscard]] inline std::string plan_to_json(const Plan &p) {
    detail::json j;
    j["format"] = kFormatVersion;
    j["failures"] = p.failures;
    j["distribution"] = p.distribution;
    j["placement"] = detail::json::array();
    for (const WorkerId &w : p.placement) {
        j["placement"].push_back(detail::worker_json(w));
    }
    j["period_ns"] = p.period.count();
    j["makespan_ns"] = p.makespan.count();
    j["peak_memory"] = p.peak_memory;
    j["solve_time_s"] = p.solve_time_s;
    j["iterations"] = p.schedule.iterations;
    j["staggered"] = p.schedule.staggered;
    j["optimal"] = p.schedule.optimal;
    j["lower_bound_ns"] = p.schedule.lower_bound.count();
    j["warnings"] = p.schedule.warnings;
    j["schedule"] = detail::json::array();
    std::istringstream lines(schedule_to_jsonl(p.schedule));
    std::string line;
    while (std::getline(lines, line)) {
        j["schedule"].push_back(detail::json::parse(line));
    }
    return j.dump(1);
}

[[nodiscard]] inline Plan plan_from_json(const std::string &text) {
    const auto j = detail::parse(text);
    detail::check_format(j);
    Plan p;
    p.failures = detail::get<int>(j, "failures");
    p.distribution = detail::get<std::vector<int>>(j, "distribution");
    for (const auto &w : j.value("placement", detail::json::array())) {
        p.placement.push_back(detail::worker_from(w));
    }
    p.period = Duration{detail::get<std::int64_t>(j, "period_ns")};
    p.makespan = Duration{detail::get<std::int64_t>(j, "makespan_ns")};
    p.peak_memory = detail::get_or<Bytes>(j, "peak_memory", 0);
    p.solve_time_s = detail::get_or<double>(j, "solve_time_s", 0.0);
    std::string lines;
    for (const auto &t : j.value("schedule", detail::json::array())) {
        lines += t.dump() + "\n";
    }
    p.schedule = schedule_from_jsonl(lines);
    p.schedule.iterations = detail::get_or<int>(j, "iterations", p.schedule.iterations);
    p.schedule.staggered = detail::get_or<bool>(j, "staggered", false);
    p.schedule.optimal = detail::get_or<bool>(j, "optimal", false);
    p.schedule.lower_bound = Duration{detail::get_or<std::int64_t>(j, "lower_bound_ns", 0)};
    p.schedule.warnings = detail::get_or<std::vector<std::string>>(j, "warnings", {});
    p.schedule.period = p.period;
    return p;
}

/// Writes plan_<f>.json per failure count and summary.csv (f, makespan, period, peak_memory, solve_time).
inline void write_plan_dir(const std::filesystem::path &dir, const PlanCache &cache) {
    std::filesystem::create_directories(dir);
    std::ostringstream summary;
    summary << "f,makespan_s,period_s,peak_memory,solve_time_s\n" << std::setprecision(12);
    for (const auto &[f, plan] : cache.plans()) {
        detail::write_file(dir / ("plan_" + std::to_string(f) + ".json"), plan_to_json(plan));
        summary << f << ',' << to_seconds(plan.makespan) << ',' << to_seconds(plan.period) << ',' << plan.peak_memory
                << ',' << plan.solve_time_s << '\n';
    }
    detail::write_file(dir / "summary.csv", summary.str());
}

[[nodiscard]] inline PlanCache read_plan_dir(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw Error(ErrorCode::kPlanMissing, "plan directory " + dir.string() + " does not exist");
    }
    PlanCache cache;
    for (const auto &entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("plan_", 0) == 0 && entry.path().extension() == ".json") {
            cache.insert(plan_from_json(detail::read_file(entry.path())));
        }
    }
    return cache;
}

// ---- replay report ---------------------------------------------------------------------------------------

[[nodiscard]] inline std::string report_to_json(const ReplayReport &r) {
    detail::json j;
    j["format"] = kFormatVersion;
    j["average_normalized_throughput"] = r.average_normalized_throughput;
    j["iterations_completed"] = r.iterations_completed;
    j["total_samples"] = r.total_samples;
    j["duration_s"] = r.duration_s;
    j["baseline_period_s"] = r.baseline_period_s;
    j["stalls"] = detail::json::array();
    for (const StallRecord &s : r.stall_log) {
        j["stalls"].push_back({{"time_s", s.time_s}, {"cause", std::string(to_string(s.cause))}, {"duration_s", s.duration_s}});
    }
    j["samples"] = detail::json::array();
    for (const ThroughputSample &s : r.samples) {
        j["samples"].push_back({{"time_s", s.time_s},
                                {"live_workers", s.live_workers},
                                {"throughput", s.throughput},
                                {"normalized", s.normalized},
                                {"fault_scaled", s.fault_scaled}});
    }
    return j.dump(2);
}

[[nodiscard]] inline std::string samples_to_csv(const ReplayReport &r) {
    std::ostringstream out;
    out << "time_s,live_workers,throughput,normalized,fault_scaled\n" << std::setprecision(12);
    for (const ThroughputSample &s : r.samples) {
        out << s.time_s << ',' << s.live_workers << ',' << s.throughput << ',' << s.normalized << ','
            << s.fault_scaled << '\n';
    }
    return out.str();
}

[[nodiscard]] inline std::string sweep_to_csv(const std::vector<SweepRow> &rows) {
    std::ostringstream out;
    out << "fraction,failures,period_s,normalized_throughput,fault_scaled\n" << std::setprecision(12);
    for (const SweepRow &r : rows) {
        out << r.fraction << ',' << r.failures << ',' << to_seconds(r.period) << ',' << r.normalized << ','
            << r.fault_scaled << '\n';
    }
    return out.str();
}

// ---- Gantt -----------------------------------------------------------------------------------------------

/// One row per worker, one column per `unit`. F forward, B coupled backward, b input gradient, w weight
/// gradient, O optimizer, '.' idle. Tasks shorter than a unit are not drawn.
[[nodiscard]] inline std::string render_gantt(const Schedule &s, const ClusterConfig &config, Duration unit) {
    if (unit <= Duration{0}) {
        throw Error(ErrorCode::kInvalidConfig, "gantt unit must be positive");
    }
    const auto width = static_cast<std::size_t>((s.makespan + unit - Duration{1}) / unit);
    std::ostringstream out;
    for (int k = 0; k < config.num_pipelines(); ++k) {
        for (int i = 0; i < config.num_stages(); ++i) {
            std::string row(width, '.');
            for (const ScheduledTask &t : s.entries) {
                if (t.worker() != WorkerId{i, k}) {
                    continue;
                }
                char c = '?';
                switch (t.id.phase) {
                case Phase::kForward: c = 'F'; break;
                case Phase::kBackward: c = 'B'; break;
                case Phase::kBackwardInput: c = 'b'; break;
                case Phase::kBackwardWeight: c = 'w'; break;
                case Phase::kOptimizer: c = 'O'; break;
                }
                for (auto col = static_cast<std::size_t>(t.start / unit);
                     col < static_cast<std::size_t>(t.end / unit) && col < width; ++col) {
                    row[col] = c;
                }
            }
            out << std::left << std::setw(8) << to_string(WorkerId{i, k}) << '|' << row << "|\n";
        }
    }
    return out.str();
}

} // namespace pipemend
