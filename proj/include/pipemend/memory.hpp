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
#include <vector>

#include "pipemend/core.hpp"

namespace pipemend {

struct MemoryStep {
    Duration time{0};
    Bytes bytes = 0;
};

/// Activation memory held by one worker over time.
struct WorkerMemory {
    WorkerId worker;
    std::vector<MemoryStep> steps; // value after all changes at `time`
    Bytes peak = 0;
    // Task whose completion first reached the peak.
    TaskId peak_task;
};

/// Running sum of memory deltas per worker, each applied when its task completes. Tasks finishing at the same
/// instant are applied in (end, start, id) order and the peak is taken over every intermediate value.
[[nodiscard]] inline std::vector<WorkerMemory> memory_timeline(const Schedule &schedule, const Profile &profile) {
    std::map<WorkerId, std::vector<const ScheduledTask *>> by_worker;
    for (const ScheduledTask &t : schedule.entries) {
        by_worker[t.worker()].push_back(&t);
    }
    std::vector<WorkerMemory> out;
    out.reserve(by_worker.size());
    for (auto &[worker, tasks] : by_worker) {
        std::sort(tasks.begin(), tasks.end(), [](const ScheduledTask *a, const ScheduledTask *b) {
            if (a->end != b->end) {
                return a->end < b->end;
            }
            if (a->start != b->start) {
                return a->start < b->start;
            }
            return a->id < b->id;
        });
        WorkerMemory mem;
        mem.worker = worker;
        Bytes running = 0;
        for (const ScheduledTask *t : tasks) {
            running += profile.memory_delta(t->id.phase, t->id.stage);
            if (running > mem.peak) {
                mem.peak = running;
                mem.peak_task = t->id;
            }
            if (!mem.steps.empty() && mem.steps.back().time == t->end) {
                mem.steps.back().bytes = running;
            } else {
                mem.steps.push_back({t->end, running});
            }
        }
        out.push_back(std::move(mem));
    }
    return out;
}

[[nodiscard]] inline Bytes peak_memory(const Schedule &schedule, const Profile &profile) {
    Bytes peak = 0;
    for (const WorkerMemory &m : memory_timeline(schedule, profile)) {
        peak = std::max(peak, m.peak);
    }
    return peak;
}

} // namespace pipemend
