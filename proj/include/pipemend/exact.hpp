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
#include <cstdint>
#include <optional>
#include <queue>
#include <vector>

#include "pipemend/model.hpp"

namespace pipemend {

struct ExactResult {
    std::optional<std::vector<Duration>> start; // best schedule found
    Duration makespan{0};
    Duration lower_bound{0};
    bool optimal = false; // search finished
    std::uint64_t nodes_explored = 0;
};

namespace detail {

/// Depth-first branch and bound over semi-active schedules.
///
/// Each branch appends one task whose predecessors are all placed, at the earliest time its worker and
/// inputs allow. Appends must be non-decreasing in (start, node index), so every semi-active schedule is
/// reached exactly once. A worker's memory is checked along its sequence since completions follow it.
/// Bounds: longest head + duration + tail, and a preemptive one-machine bound per worker.
class BranchAndBound {
  public:
    BranchAndBound(const Model &model, Duration time_limit)
        : model_(model), deadline_(std::chrono::steady_clock::now() + time_limit),
          unlimited_(time_limit >= std::chrono::hours(24 * 365)) {}

    ExactResult run(const std::optional<std::vector<Duration>> &incumbent) {
        if (incumbent) {
            best_ = *incumbent;
            best_makespan_ = makespan_of(*incumbent);
        }
        State root;
        const std::size_t count = model_.nodes.size();
        root.start.assign(count, Duration{-1});
        root.ready.assign(count, Duration{0});
        root.waiting.resize(count);
        for (std::size_t v = 0; v < count; ++v) {
            root.waiting[v] = static_cast<int>(model_.nodes[v].preds.size());
        }
        root.avail.assign(model_.workers.size(), Duration{0});
        root.memory.assign(model_.workers.size(), 0);
        for (std::size_t v = 0; v < count; ++v) {
            if (root.waiting[v] == 0 && model_.nodes[v].kind != NodeKind::kTask) {
                place_sync(root, static_cast<int>(v));
            }
        }
        root_bound_ = bound(root);
        search(root);

        ExactResult r;
        r.nodes_explored = explored_;
        r.optimal = !stopped_;
        if (best_) {
            r.start = best_;
            r.makespan = best_makespan_;
            r.lower_bound = r.optimal ? best_makespan_ : std::min(root_bound_, best_makespan_);
        } else {
            r.lower_bound = root_bound_;
        }
        return r;
    }

  private:
    struct State {
        std::vector<Duration> start;
        std::vector<Duration> ready;
        std::vector<int> waiting;
        std::vector<Duration> avail;
        std::vector<Bytes> memory;
        Duration last_start{-1};
        int last_node = -1;
        std::size_t placed_tasks = 0;
        Duration span{0};
    };

    [[nodiscard]] Duration makespan_of(const std::vector<Duration> &start) const {
        Duration mk{0};
        for (std::size_t v = 0; v < model_.nodes.size(); ++v) {
            mk = std::max(mk, start[v] + model_.nodes[v].duration);
        }
        return mk;
    }

    void finish(State &s, int v) {
        const Node &node = model_.nodes[static_cast<std::size_t>(v)];
        const Duration end = s.start[static_cast<std::size_t>(v)] + node.duration;
        s.span = std::max(s.span, end);
        for (const Arc &a : node.succs) {
            auto &r = s.ready[static_cast<std::size_t>(a.node)];
            r = std::max(r, end + a.lag);
            if (--s.waiting[static_cast<std::size_t>(a.node)] == 0 &&
                model_.nodes[static_cast<std::size_t>(a.node)].kind != NodeKind::kTask) {
                place_sync(s, a.node);
            }
        }
    }

    void place_sync(State &s, int v) {
        s.start[static_cast<std::size_t>(v)] = s.ready[static_cast<std::size_t>(v)];
        finish(s, v);
    }

    [[nodiscard]] Duration earliest(const State &s, int v) const {
        const Node &node = model_.nodes[static_cast<std::size_t>(v)];
        return std::max(s.ready[static_cast<std::size_t>(v)], s.avail[static_cast<std::size_t>(node.worker)]);
    }

    [[nodiscard]] Duration bound(const State &s) {
        const std::size_t count = model_.nodes.size();
        head_.assign(count, Duration{0});
        Duration lb = s.span;
        for (std::size_t v = 0; v < count; ++v) {
            if (s.start[v] >= Duration{0}) {
                continue;
            }
            const Node &node = model_.nodes[v];
            Duration h = std::max(head_[v], s.ready[v]);
            if (node.kind == NodeKind::kTask) {
                h = std::max({h, s.avail[static_cast<std::size_t>(node.worker)], s.last_start});
            }
            head_[v] = h;
            const Duration end = h + node.duration;
            lb = std::max(lb, end + model_.tail[v]);
            for (const Arc &a : node.succs) {
                auto &hu = head_[static_cast<std::size_t>(a.node)];
                hu = std::max(hu, end + a.lag);
            }
        }
        for (std::size_t w = 0; w < model_.workers.size(); ++w) {
            lb = std::max(lb, jackson(s, w));
        }
        return lb;
    }

    // Preemptive schedule of the worker's unplaced tasks, largest tail first; max(completion + tail).
    [[nodiscard]] Duration jackson(const State &s, std::size_t w) {
        jobs_.clear();
        for (int v : model_.worker_nodes[w]) {
            if (s.start[static_cast<std::size_t>(v)] < Duration{0}) {
                jobs_.push_back(v);
            }
        }
        if (jobs_.empty()) {
            return Duration{0};
        }
        std::sort(jobs_.begin(), jobs_.end(), [&](int a, int b) {
            return head_[static_cast<std::size_t>(a)] < head_[static_cast<std::size_t>(b)];
        });
        std::vector<Duration> left(jobs_.size()); // remaining processing per position in jobs_
        std::size_t next = 0;
        Duration t{0};
        Duration lb{0};
        for (std::size_t p = 0; p < jobs_.size(); ++p) {
            left[p] = model_.nodes[static_cast<std::size_t>(jobs_[p])].duration;
        }
        std::priority_queue<std::pair<Duration, std::size_t>> queue;
        while (next < jobs_.size() || !queue.empty()) {
            if (queue.empty()) {
                t = std::max(t, head_[static_cast<std::size_t>(jobs_[next])]);
            }
            while (next < jobs_.size() && head_[static_cast<std::size_t>(jobs_[next])] <= t) {
                queue.push({model_.tail[static_cast<std::size_t>(jobs_[next])], next});
                ++next;
            }
            const auto [tail, p] = queue.top();
            const Duration until = next < jobs_.size() ? head_[static_cast<std::size_t>(jobs_[next])] : Duration::max();
            const Duration run = std::min(left[p], until - t);
            t += run;
            left[p] -= run;
            if (left[p] == Duration{0}) {
                queue.pop();
                lb = std::max(lb, t + tail);
            }
        }
        return lb;
    }

    void search(State &s) {
        if (stopped_) {
            return;
        }
        ++explored_;
        if (!unlimited_ && (explored_ & 255U) == 0 && std::chrono::steady_clock::now() > deadline_) {
            stopped_ = true;
            return;
        }
        const std::size_t total = model_.worker_nodes.empty() ? 0 : static_cast<std::size_t>(task_total());
        if (s.placed_tasks == total) {
            if (!best_ || s.span < best_makespan_) {
                best_ = s.start;
                best_makespan_ = s.span;
            }
            return;
        }
        if (best_ && bound(s) >= best_makespan_) {
            return;
        }

        struct Choice {
            Duration est;
            Duration tail;
            int node;
        };
        std::vector<Choice> choices;
        for (const auto &list : model_.worker_nodes) {
            for (int v : list) {
                const auto uv = static_cast<std::size_t>(v);
                if (s.start[uv] >= Duration{0} || s.waiting[uv] != 0) {
                    continue;
                }
                const Duration est = earliest(s, v);
                if (est < s.last_start || (est == s.last_start && v < s.last_node)) {
                    continue;
                }
                const Node &node = model_.nodes[uv];
                if (s.memory[static_cast<std::size_t>(node.worker)] + node.delta > model_.memory_limit) {
                    continue;
                }
                choices.push_back({est, model_.tail[uv], v});
            }
        }
        std::sort(choices.begin(), choices.end(), [](const Choice &a, const Choice &b) {
            if (a.est != b.est) {
                return a.est < b.est;
            }
            if (a.tail != b.tail) {
                return a.tail > b.tail;
            }
            return a.node < b.node;
        });
        for (const Choice &c : choices) {
            State child = s;
            const Node &node = model_.nodes[static_cast<std::size_t>(c.node)];
            const auto w = static_cast<std::size_t>(node.worker);
            child.start[static_cast<std::size_t>(c.node)] = c.est;
            child.avail[w] = c.est + node.duration;
            child.memory[w] += node.delta;
            child.last_start = c.est;
            child.last_node = c.node;
            ++child.placed_tasks;
            finish(child, c.node);
            search(child);
            if (stopped_) {
                return;
            }
        }
    }

    [[nodiscard]] int task_total() {
        if (task_total_ < 0) {
            task_total_ = model_.task_count();
        }
        return task_total_;
    }

    const Model &model_;
    std::chrono::steady_clock::time_point deadline_;
    bool unlimited_;
    bool stopped_ = false;
    std::uint64_t explored_ = 0;
    int task_total_ = -1;
    std::optional<std::vector<Duration>> best_;
    Duration best_makespan_{0};
    Duration root_bound_{0};
    std::vector<Duration> head_;
    std::vector<int> jobs_;
};

} // namespace detail

/// Minimum-makespan schedule of the model, optionally warm-started from an incumbent. Stops at
/// `time_limit` and reports the best schedule with `optimal` false.
[[nodiscard]] inline ExactResult exact_search(const Model &model, Duration time_limit,
                                              const std::optional<std::vector<Duration>> &incumbent = std::nullopt) {
    detail::BranchAndBound bnb(model, time_limit);
    return bnb.run(incumbent);
}

} // namespace pipemend
