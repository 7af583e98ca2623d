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
#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pipemend/error.hpp"

namespace pipemend {

/// Internal time base. Profiles given in seconds are converted once on load.
using Duration = std::chrono::nanoseconds;
using Bytes = std::int64_t;

inline constexpr Bytes kUnlimitedMemory = std::numeric_limits<Bytes>::max() / 4;

[[nodiscard]] inline Duration from_seconds(double seconds) {
    return Duration{static_cast<Duration::rep>(std::llround(seconds * 1e9))};
}

[[nodiscard]] inline double to_seconds(Duration d) { return static_cast<double>(d.count()) * 1e-9; }

/// A worker is one (stage, pipeline) slot. With tensor parallelism it stands for the whole TP group.
struct WorkerId {
    int stage = 0;
    int pipeline = 0;

    friend auto operator<=>(const WorkerId &, const WorkerId &) = default;
};

[[nodiscard]] inline std::string to_string(WorkerId w) {
    return "W" + std::to_string(w.pipeline) + "_" + std::to_string(w.stage);
}

enum class Phase : std::uint8_t {
    kForward,
    kBackwardInput,
    kBackwardWeight,
    kBackward, // coupled input + weight gradient
    kOptimizer,
};

[[nodiscard]] constexpr std::string_view to_string(Phase p) {
    switch (p) {
    case Phase::kForward: return "F";
    case Phase::kBackwardInput: return "B_input";
    case Phase::kBackwardWeight: return "B_weight";
    case Phase::kBackward: return "B";
    case Phase::kOptimizer: return "OPT";
    }
    return "?";
}

[[nodiscard]] inline Phase phase_from_string(std::string_view s) {
    for (Phase p : {Phase::kForward, Phase::kBackwardInput, Phase::kBackwardWeight, Phase::kBackward,
                    Phase::kOptimizer}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    throw Error(ErrorCode::kParse, "unknown phase '" + std::string(s) + "'");
}

/// Identifies one task instance: stage, micro-batch, origin pipeline, phase and executing pipeline.
/// Optimizer steps have no micro-batch (-1) and use the executing pipeline as origin.
struct TaskId {
    int stage = 0;
    int microbatch = 0;
    int origin = 0;
    Phase phase = Phase::kForward;
    int exec = 0;
    int iteration = 0;

    [[nodiscard]] static TaskId optimizer(WorkerId w, int iteration = 0) {
        return TaskId{w.stage, -1, w.pipeline, Phase::kOptimizer, w.pipeline, iteration};
    }

    [[nodiscard]] WorkerId worker() const { return {stage, exec}; }

    friend auto operator<=>(const TaskId &, const TaskId &) = default;
};

[[nodiscard]] inline std::string to_string(const TaskId &t) {
    std::string s = std::string(to_string(t.phase)) + "(s" + std::to_string(t.stage);
    if (t.phase != Phase::kOptimizer) {
        s += ",mb" + std::to_string(t.microbatch) + ",p" + std::to_string(t.origin);
    }
    s += ")@" + to_string(t.worker());
    if (t.iteration != 0) {
        s += "#" + std::to_string(t.iteration);
    }
    return s;
}

/// Hybrid-parallel cluster: N stages x DP pipelines, each slot live or failed.
class ClusterConfig {
  public:
    ClusterConfig(int num_stages, int num_pipelines, int num_microbatches, int tp_degree = 1)
        : num_stages_(num_stages), num_pipelines_(num_pipelines), num_microbatches_(num_microbatches),
          tp_degree_(tp_degree) {
        if (num_stages < 1 || num_pipelines < 1 || num_microbatches < 1 || tp_degree < 1) {
            throw Error(ErrorCode::kInvalidConfig, "stages, pipelines, micro-batches and TP degree must be >= 1");
        }
        live_.assign(static_cast<std::size_t>(num_stages) * static_cast<std::size_t>(num_pipelines), 1);
    }

    [[nodiscard]] int num_stages() const { return num_stages_; }
    [[nodiscard]] int num_pipelines() const { return num_pipelines_; }
    [[nodiscard]] int num_microbatches() const { return num_microbatches_; }
    [[nodiscard]] int tp_degree() const { return tp_degree_; }
    [[nodiscard]] int worker_count() const { return num_stages_ * num_pipelines_; }

    [[nodiscard]] bool contains(WorkerId w) const {
        return w.stage >= 0 && w.stage < num_stages_ && w.pipeline >= 0 && w.pipeline < num_pipelines_;
    }

    [[nodiscard]] bool is_live(WorkerId w) const {
        check(w);
        return live_[index(w)] != 0;
    }

    [[nodiscard]] int failed_count(int stage) const {
        int n = 0;
        for (int k = 0; k < num_pipelines_; ++k) {
            n += is_live({stage, k}) ? 0 : 1;
        }
        return n;
    }

    [[nodiscard]] int total_failed() const {
        return static_cast<int>(std::count(live_.begin(), live_.end(), std::uint8_t{0}));
    }

    [[nodiscard]] bool all_live() const { return total_failed() == 0; }

    [[nodiscard]] std::vector<WorkerId> failed_workers() const {
        std::vector<WorkerId> out;
        for (int i = 0; i < num_stages_; ++i) {
            for (int k = 0; k < num_pipelines_; ++k) {
                if (!is_live({i, k})) {
                    out.push_back({i, k});
                }
            }
        }
        return out;
    }

    [[nodiscard]] ClusterConfig with_liveness(WorkerId w, bool live) const {
        check(w);
        ClusterConfig copy = *this;
        copy.live_[index(w)] = live ? 1 : 0;
        return copy;
    }

    [[nodiscard]] ClusterConfig with_failed(std::span<const WorkerId> failed) const {
        ClusterConfig copy = *this;
        for (const WorkerId &w : failed) {
            check(w);
            copy.live_[index(w)] = 0;
        }
        return copy;
    }

    [[nodiscard]] ClusterConfig all_live_copy() const {
        ClusterConfig copy = *this;
        std::fill(copy.live_.begin(), copy.live_.end(), std::uint8_t{1});
        return copy;
    }

    friend bool operator==(const ClusterConfig &, const ClusterConfig &) = default;

  private:
    [[nodiscard]] std::size_t index(WorkerId w) const {
        return static_cast<std::size_t>(w.stage) * static_cast<std::size_t>(num_pipelines_) +
               static_cast<std::size_t>(w.pipeline);
    }

    void check(WorkerId w) const {
        if (!contains(w)) {
            throw Error(ErrorCode::kUnknownWorker, to_string(w));
        }
    }

    int num_stages_;
    int num_pipelines_;
    int num_microbatches_;
    int tp_degree_;
    std::vector<std::uint8_t> live_;
};

/// Profiled costs of one pipeline stage.
struct StageCosts {
    Duration forward{0};
    Duration backward_input{0};
    Duration backward_weight{0};
    Duration backward_coupled{0};
    Duration optimizer{0};
    Bytes activation = 0;        // stored at the end of the forward pass
    Bytes activation_input = 0;  // freed when the input gradient completes
    Bytes activation_weight = 0; // freed when the weight gradient completes

    friend bool operator==(const StageCosts &, const StageCosts &) = default;
};

/// Profiled task costs plus the knobs that drive recovery stalls.
struct Profile {
    StageCosts costs;
    // Optional per-stage override. Empty means every stage uses `costs`.
    std::vector<StageCosts> stage_costs;
    Duration comm_latency{0};
    Duration allreduce_time{0};
    Bytes memory_limit = kUnlimitedMemory;
    Bytes migration_bytes = 0;
    double migration_bandwidth = 0.0; // bytes per second; 0 makes copies free
    Duration checkpoint_restore_time{0};

    [[nodiscard]] const StageCosts &stage(int i) const {
        if (stage_costs.empty()) {
            return costs;
        }
        return stage_costs.at(static_cast<std::size_t>(i));
    }

    [[nodiscard]] Duration duration(Phase phase, int stage_index) const {
        const StageCosts &c = stage(stage_index);
        switch (phase) {
        case Phase::kForward: return c.forward;
        case Phase::kBackwardInput: return c.backward_input;
        case Phase::kBackwardWeight: return c.backward_weight;
        case Phase::kBackward: return c.backward_coupled;
        case Phase::kOptimizer: return c.optimizer;
        }
        return Duration{0};
    }

    // Completing the input gradient frees its share of the stored activation; the weight gradient frees the
    // rest. The literal table form (B_input contributing A_B - A_input) would never release memory over an
    // iteration, so it is not used.
    [[nodiscard]] Bytes memory_delta(Phase phase, int stage_index) const {
        const StageCosts &c = stage(stage_index);
        switch (phase) {
        case Phase::kForward: return c.activation;
        case Phase::kBackwardInput: return -c.activation_input;
        case Phase::kBackwardWeight: return -c.activation_weight;
        case Phase::kBackward: return -c.activation;
        case Phase::kOptimizer: return 0;
        }
        return 0;
    }

    /// Time to copy one stage's parameters to another worker.
    [[nodiscard]] Duration copy_time(int tp_degree) const {
        if (migration_bandwidth <= 0.0 || migration_bytes <= 0) {
            return Duration{0};
        }
        return from_seconds(static_cast<double>(migration_bytes) * tp_degree / migration_bandwidth);
    }

    void validate(int num_stages) const {
        if (!stage_costs.empty() && static_cast<int>(stage_costs.size()) != num_stages) {
            throw Error(ErrorCode::kInvalidConfig, "per-stage costs must list every stage");
        }
        if (comm_latency < Duration{0} || allreduce_time < Duration{0} || checkpoint_restore_time < Duration{0}) {
            throw Error(ErrorCode::kInvalidConfig, "durations must be non-negative");
        }
        for (int i = 0; i < num_stages; ++i) {
            const StageCosts &c = stage(i);
            if (c.forward < Duration{0} || c.backward_input < Duration{0} || c.backward_weight < Duration{0} ||
                c.backward_coupled < Duration{0} || c.optimizer < Duration{0}) {
                throw Error(ErrorCode::kInvalidConfig, "durations must be non-negative");
            }
            if (c.activation != c.activation_input + c.activation_weight || c.activation_input < 0 ||
                c.activation_weight < 0) {
                throw Error(ErrorCode::kInvalidConfig, "activation must equal input + weight shares");
            }
            if (memory_limit <= c.activation) {
                throw Error(ErrorCode::kInvalidConfig, "memory limit must hold at least one micro-batch");
            }
        }
    }

    /// Homogeneous profile; the coupled backward defaults to input + weight.
    [[nodiscard]] static Profile uniform(Duration forward, Duration backward_input, Duration backward_weight,
                                         Bytes activation_input = 1, Bytes activation_weight = 1) {
        Profile p;
        p.costs.forward = forward;
        p.costs.backward_input = backward_input;
        p.costs.backward_weight = backward_weight;
        p.costs.backward_coupled = backward_input + backward_weight;
        p.costs.activation_input = activation_input;
        p.costs.activation_weight = activation_weight;
        p.costs.activation = activation_input + activation_weight;
        return p;
    }
};

/// Live workers of one stage, ascending by pipeline.
[[nodiscard]] inline std::vector<WorkerId> peers(const ClusterConfig &config, int stage) {
    if (stage < 0 || stage >= config.num_stages()) {
        throw Error(ErrorCode::kUnknownWorker, "stage " + std::to_string(stage));
    }
    std::vector<WorkerId> out;
    for (int k = 0; k < config.num_pipelines(); ++k) {
        if (config.is_live({stage, k})) {
            out.push_back({stage, k});
        }
    }
    return out;
}

enum class Recoverability { kRecoverable, kCheckpointRequired };

[[nodiscard]] constexpr std::string_view to_string(Recoverability r) {
    return r == Recoverability::kRecoverable ? "RECOVERABLE" : "CHECKPOINT_REQUIRED";
}

/// Training continues as long as every stage keeps one live peer.
[[nodiscard]] inline Recoverability recoverability(const ClusterConfig &config) {
    for (int i = 0; i < config.num_stages(); ++i) {
        if (config.failed_count(i) == config.num_pipelines()) {
            return Recoverability::kCheckpointRequired;
        }
    }
    return Recoverability::kRecoverable;
}

/// Executing pipeline for every (stage, micro-batch, origin pipeline).
class Assignment {
  public:
    Assignment() = default;

    /// Validates totality, liveness and identity on live workers.
    Assignment(const ClusterConfig &config, std::vector<int> exec)
        : num_stages_(config.num_stages()), num_microbatches_(config.num_microbatches()),
          num_pipelines_(config.num_pipelines()), exec_(std::move(exec)) {
        if (exec_.size() != static_cast<std::size_t>(num_stages_ * num_microbatches_ * num_pipelines_)) {
            throw Error(ErrorCode::kInvalidConfig, "assignment must cover every (stage, micro-batch, pipeline)");
        }
        for (int i = 0; i < num_stages_; ++i) {
            for (int j = 0; j < num_microbatches_; ++j) {
                for (int k = 0; k < num_pipelines_; ++k) {
                    const int ks = executor(i, j, k);
                    if (ks < 0 || ks >= num_pipelines_ || !config.is_live({i, ks})) {
                        throw Error(ErrorCode::kInvalidConfig, "micro-batch routed to a failed or unknown worker");
                    }
                    if (config.is_live({i, k}) && ks != k) {
                        throw Error(ErrorCode::kInvalidConfig, "live workers must keep their own micro-batches");
                    }
                }
            }
        }
    }

    [[nodiscard]] static Assignment identity(const ClusterConfig &config) {
        std::vector<int> exec;
        exec.reserve(static_cast<std::size_t>(config.num_stages() * config.num_microbatches() *
                                              config.num_pipelines()));
        for (int i = 0; i < config.num_stages(); ++i) {
            for (int j = 0; j < config.num_microbatches(); ++j) {
                for (int k = 0; k < config.num_pipelines(); ++k) {
                    exec.push_back(k);
                }
            }
        }
        return Assignment(config, std::move(exec));
    }

    [[nodiscard]] int executor(int stage, int microbatch, int origin) const {
        return exec_.at(static_cast<std::size_t>((stage * num_microbatches_ + microbatch) * num_pipelines_ + origin));
    }

    [[nodiscard]] int num_stages() const { return num_stages_; }
    [[nodiscard]] int num_microbatches() const { return num_microbatches_; }
    [[nodiscard]] int num_pipelines() const { return num_pipelines_; }

    /// Number of (micro-batch, origin) pairs a worker executes at its stage.
    [[nodiscard]] int load(WorkerId w) const {
        int n = 0;
        for (int j = 0; j < num_microbatches_; ++j) {
            for (int k = 0; k < num_pipelines_; ++k) {
                n += executor(w.stage, j, k) == w.pipeline ? 1 : 0;
            }
        }
        return n;
    }

    friend bool operator==(const Assignment &, const Assignment &) = default;

  private:
    int num_stages_ = 0;
    int num_microbatches_ = 0;
    int num_pipelines_ = 0;
    std::vector<int> exec_;
};

struct ScheduledTask {
    TaskId id;
    Duration start{0};
    Duration end{0};

    [[nodiscard]] WorkerId worker() const { return id.worker(); }
};

/// Per-worker timelines of timed tasks spanning one or more iterations.
struct Schedule {
    std::vector<ScheduledTask> entries;
    int iterations = 1;
    Duration makespan{0};
    Duration period{0};
    bool staggered = false;
    bool optimal = false;     // proven by the exact backend
    Duration lower_bound{0};  // best proven bound on the makespan
    std::vector<std::string> warnings;

    [[nodiscard]] std::vector<ScheduledTask> on_worker(WorkerId w) const {
        std::vector<ScheduledTask> out;
        for (const ScheduledTask &t : entries) {
            if (t.worker() == w) {
                out.push_back(t);
            }
        }
        std::sort(out.begin(), out.end(), [](const ScheduledTask &a, const ScheduledTask &b) {
            return a.start != b.start ? a.start < b.start : a.end < b.end;
        });
        return out;
    }

    [[nodiscard]] bool has_optimizer_steps() const {
        return std::any_of(entries.begin(), entries.end(),
                           [](const ScheduledTask &t) { return t.id.phase == Phase::kOptimizer; });
    }

    /// Completion time of the last task belonging to `iteration`.
    [[nodiscard]] Duration iteration_end(int iteration) const {
        Duration end{0};
        for (const ScheduledTask &t : entries) {
            if (t.id.iteration == iteration) {
                end = std::max(end, t.end);
            }
        }
        return end;
    }

    void recompute_makespan() {
        makespan = Duration{0};
        for (const ScheduledTask &t : entries) {
            makespan = std::max(makespan, t.end);
        }
    }
};

enum class EventKind { kFail, kRejoin };

struct FailureEvent {
    double timestamp_s = 0.0;
    WorkerId worker;
    EventKind kind = EventKind::kFail;

    friend bool operator==(const FailureEvent &, const FailureEvent &) = default;
};

struct FailureTrace {
    std::vector<FailureEvent> events;
};

/// Throws TRACE_INVALID unless timestamps are non-decreasing and every event is consistent with the
/// liveness implied by the events before it.
inline void validate_trace(const FailureTrace &trace, const ClusterConfig &initial) {
    ClusterConfig state = initial;
    double last = -std::numeric_limits<double>::infinity();
    for (const FailureEvent &e : trace.events) {
        if (!(e.timestamp_s >= last)) {
            throw Error(ErrorCode::kTraceInvalid, "timestamps must be non-decreasing");
        }
        last = e.timestamp_s;
        if (!state.contains(e.worker)) {
            throw Error(ErrorCode::kTraceInvalid, "unknown worker " + to_string(e.worker));
        }
        const bool live = state.is_live(e.worker);
        if (e.kind == EventKind::kFail && !live) {
            throw Error(ErrorCode::kTraceInvalid, "FAIL for already failed " + to_string(e.worker));
        }
        if (e.kind == EventKind::kRejoin && live) {
            throw Error(ErrorCode::kTraceInvalid, "REJOIN for live " + to_string(e.worker));
        }
        state = state.with_liveness(e.worker, e.kind == EventKind::kRejoin);
    }
}

} // namespace pipemend
