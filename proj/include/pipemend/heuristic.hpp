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

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <tuple>
#include <vector>

#include "pipemend/model.hpp"

namespace pipemend {

/// Dispatch rule of the list scheduler. An idle worker starts the best ready task by
/// (class, iteration, ready time or tail, own before rerouted, noise, micro-batch, origin).
/// Classes: optimizer step, eager weight gradient, input gradient, forward, deferred weight gradient.
struct ListRule {
    bool eager_weight = false;
    // Per-worker override of `eager_weight`; empty uses the flag everywhere.
    std::vector<std::uint8_t> eager_on;
    bool own_first = true;
    bool tail_first = false;
    // Cap on forwards whose backward has not completed: (N - stage) * ceil(load / m) + extra. Negative disables.
    int forward_cap_extra = -1;
    // Per-node tie-break noise; empty disables.
    std::vector<std::uint32_t> noise;
};

namespace detail {

inline int phase_class(Phase p, bool eager) {
    switch (p) {
    case Phase::kOptimizer: return 0;
    case Phase::kBackwardWeight: return eager ? 1 : 4;
    case Phase::kBackwardInput:
    case Phase::kBackward: return 2;
    case Phase::kForward: return 3;
    }
    return 5;
}

} // namespace detail

/// Event-driven list schedule. Returns start times of every node, or nullopt when the rule deadlocks
/// (memory full with no releasable work).
[[nodiscard]] inline std::optional<std::vector<Duration>> list_schedule(const Model &model, const ListRule &rule) {
    const std::size_t count = model.nodes.size();
    const std::size_t nw = model.workers.size();
    const int n = model.config.num_stages();
    const int m = model.config.num_microbatches();

    std::vector<int> waiting(count);
    std::vector<Duration> ready(count, Duration{0});
    std::vector<Duration> start(count, Duration{-1});
    for (std::size_t v = 0; v < count; ++v) {
        waiting[v] = static_cast<int>(model.nodes[v].preds.size());
    }
    std::vector<int> cap(nw, std::numeric_limits<int>::max());
    if (rule.forward_cap_extra >= 0) {
        for (std::size_t w = 0; w < nw; ++w) {
            const int load = model.assignment.load(model.workers[w]);
            cap[w] = (n - model.workers[w].stage) * ((load + m - 1) / m) + rule.forward_cap_extra;
        }
    }

    // Event: (time, node); node < 0 wakes worker -node-1.
    using Event = std::pair<Duration, int>;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
    std::vector<std::vector<int>> pool(nw);
    std::vector<std::uint8_t> busy(nw, 0), dirty(nw, 1);
    std::vector<Bytes> memory(nw, 0);
    std::vector<int> outstanding(nw, 0);
    Duration now{0};

    auto release = [&](int v) {
        const Node &node = model.nodes[static_cast<std::size_t>(v)];
        if (node.kind != NodeKind::kTask) {
            start[static_cast<std::size_t>(v)] = ready[static_cast<std::size_t>(v)];
            events.push({ready[static_cast<std::size_t>(v)] + node.duration, v});
            return;
        }
        const auto w = static_cast<std::size_t>(node.worker);
        pool[w].push_back(v);
        dirty[w] = 1;
        if (ready[static_cast<std::size_t>(v)] > now) {
            events.push({ready[static_cast<std::size_t>(v)], -node.worker - 1});
        }
    };
    for (std::size_t v = 0; v < count; ++v) {
        if (waiting[v] == 0) {
            release(static_cast<int>(v));
        }
    }

    auto eager_at = [&](std::size_t w) {
        return rule.eager_on.empty() ? rule.eager_weight : rule.eager_on[w] != 0;
    };
    using Key = std::tuple<int, int, std::int64_t, int, std::uint32_t, int, int>;
    auto key_of = [&](int v, bool eager) {
        const Node &node = model.nodes[static_cast<std::size_t>(v)];
        const std::int64_t primary = rule.tail_first ? -model.tail[static_cast<std::size_t>(v)].count()
                                                     : ready[static_cast<std::size_t>(v)].count();
        return Key{detail::phase_class(node.id.phase, eager), node.id.iteration, primary,
                   rule.own_first && node.id.origin != node.id.exec ? 1 : 0,
                   rule.noise.empty() ? 0U : rule.noise[static_cast<std::size_t>(v)], node.id.microbatch,
                   node.id.origin};
    };

    std::size_t finished = 0;
    while (finished < count) {
        for (std::size_t w = 0; w < nw; ++w) {
            if (busy[w] || !dirty[w]) {
                continue;
            }
            dirty[w] = 0;
            const bool eager = eager_at(w);
            int best = -1;
            std::size_t best_pos = 0;
            Key best_key{};
            for (std::size_t p = 0; p < pool[w].size(); ++p) {
                const int v = pool[w][p];
                const Node &node = model.nodes[static_cast<std::size_t>(v)];
                if (ready[static_cast<std::size_t>(v)] > now) {
                    continue;
                }
                if (node.id.phase == Phase::kForward &&
                    (memory[w] + node.delta > model.memory_limit || outstanding[w] >= cap[w])) {
                    continue;
                }
                const Key k = key_of(v, eager);
                if (best < 0 || k < best_key) {
                    best = v;
                    best_pos = p;
                    best_key = k;
                }
            }
            if (best >= 0) {
                pool[w][best_pos] = pool[w].back();
                pool[w].pop_back();
                busy[w] = 1;
                start[static_cast<std::size_t>(best)] = now;
                events.push({now + model.nodes[static_cast<std::size_t>(best)].duration, best});
                if (model.nodes[static_cast<std::size_t>(best)].id.phase == Phase::kForward) {
                    ++outstanding[w];
                }
            }
        }
        if (events.empty()) {
            return std::nullopt;
        }
        now = std::max(now, events.top().first);
        while (!events.empty() && events.top().first <= now) {
            const int v = events.top().second;
            events.pop();
            if (v < 0) {
                dirty[static_cast<std::size_t>(-v - 1)] = 1;
                continue;
            }
            ++finished;
            const Node &node = model.nodes[static_cast<std::size_t>(v)];
            if (node.kind == NodeKind::kTask) {
                const auto w = static_cast<std::size_t>(node.worker);
                busy[w] = 0;
                dirty[w] = 1;
                memory[w] += node.delta;
                if (node.id.phase == Phase::kBackwardInput || node.id.phase == Phase::kBackward) {
                    --outstanding[w];
                }
            }
            const Duration end = start[static_cast<std::size_t>(v)] + node.duration;
            for (const Arc &a : node.succs) {
                auto &r = ready[static_cast<std::size_t>(a.node)];
                r = std::max(r, end + a.lag);
                if (--waiting[static_cast<std::size_t>(a.node)] == 0) {
                    release(a.node);
                }
            }
        }
    }
    return start;
}

[[nodiscard]] inline Duration makespan_of(const Model &model, const std::vector<Duration> &start) {
    Duration mk{0};
    for (std::size_t v = 0; v < model.nodes.size(); ++v) {
        mk = std::max(mk, start[v] + model.nodes[v].duration);
    }
    return mk;
}

/// Per-worker node order implied by start times.
[[nodiscard]] inline std::vector<std::vector<int>> sequences_of(const Model &model, const std::vector<Duration> &start) {
    std::vector<std::vector<int>> seq = model.worker_nodes;
    for (auto &s : seq) {
        std::stable_sort(s.begin(), s.end(), [&](int a, int b) {
            return start[static_cast<std::size_t>(a)] < start[static_cast<std::size_t>(b)];
        });
    }
    return seq;
}

/// True if running every worker's sequence never exceeds the memory limit.
[[nodiscard]] inline bool sequences_fit_memory(const Model &model, const std::vector<std::vector<int>> &seq) {
    for (const auto &s : seq) {
        Bytes running = 0;
        for (int v : s) {
            running += model.nodes[static_cast<std::size_t>(v)].delta;
            if (running > model.memory_limit) {
                return false;
            }
        }
    }
    return true;
}

/// Maps another schedule's per-worker order onto this model, repeating it `repeat` times over consecutive
/// iterations. A coupled backward maps to input then weight gradient. Returns nullopt when the schedule does
/// not cover the model.
[[nodiscard]] inline std::optional<std::vector<std::vector<int>>> sequences_from(const Model &model, const Schedule &source,
                                                                                 int repeat = 1) {
    std::map<std::tuple<int, int, int, int, Phase>, int> node_of;
    for (std::size_t v = 0; v < model.nodes.size(); ++v) {
        const TaskId &id = model.nodes[v].id;
        if (model.nodes[v].kind == NodeKind::kTask) {
            node_of[{id.iteration, id.stage, id.microbatch, id.origin, id.phase}] = static_cast<int>(v);
        }
    }
    std::map<WorkerId, std::vector<const ScheduledTask *>> by_worker;
    for (const ScheduledTask &t : source.entries) {
        by_worker[t.worker()].push_back(&t);
    }
    std::vector<std::vector<int>> seq(model.workers.size());
    std::size_t placed = 0;
    for (std::size_t w = 0; w < model.workers.size(); ++w) {
        auto found = by_worker.find(model.workers[w]);
        if (found == by_worker.end()) {
            return std::nullopt;
        }
        auto tasks = found->second;
        std::sort(tasks.begin(), tasks.end(), [](const ScheduledTask *a, const ScheduledTask *b) {
            if (a->start != b->start) {
                return a->start < b->start;
            }
            return a->end != b->end ? a->end < b->end : a->id < b->id;
        });
        for (int r = 0; r < repeat; ++r) {
            for (const ScheduledTask *t : tasks) {
                const int it = t->id.iteration + r * source.iterations;
                std::vector<Phase> phases{t->id.phase};
                if (t->id.phase == Phase::kBackward && model.decoupled) {
                    phases = {Phase::kBackwardInput, Phase::kBackwardWeight};
                }
                for (Phase p : phases) {
                    auto f = node_of.find({it, t->id.stage, t->id.microbatch, t->id.origin, p});
                    if (f == node_of.end()) {
                        if (it >= model.horizon) {
                            continue;
                        }
                        return std::nullopt;
                    }
                    if (model.nodes[static_cast<std::size_t>(f->second)].worker != static_cast<int>(w)) {
                        return std::nullopt;
                    }
                    seq[w].push_back(f->second);
                    ++placed;
                }
            }
        }
    }
    if (placed != static_cast<std::size_t>(model.task_count())) {
        return std::nullopt;
    }
    return seq;
}

struct HeuristicResult {
    std::vector<Duration> start;
    Duration makespan{0};
};

/// Fixed rules first, then `restarts` randomized variants, then any seed orders; keeps the shortest
/// schedule. Deterministic for a given seed.
[[nodiscard]] inline std::optional<HeuristicResult>
heuristic_search(const Model &model, int restarts, unsigned seed,
                 const std::vector<std::vector<std::vector<int>>> &seed_orders = {}) {
    std::optional<HeuristicResult> best;
    auto offer = [&](std::optional<std::vector<Duration>> start) {
        if (!start) {
            return;
        }
        const Duration mk = makespan_of(model, *start);
        if (!best || mk < best->makespan) {
            best = HeuristicResult{std::move(*start), mk};
        }
    };

    const std::size_t nw = model.workers.size();
    std::vector<std::uint8_t> overloaded(nw, 0);
    for (std::size_t w = 0; w < nw; ++w) {
        overloaded[w] = model.assignment.load(model.workers[w]) > model.config.num_microbatches() ? 1 : 0;
    }
    std::vector<std::uint8_t> eager_unless_overloaded(nw);
    for (std::size_t w = 0; w < nw; ++w) {
        eager_unless_overloaded[w] = overloaded[w] ? 0 : 1;
    }

    std::vector<ListRule> rules;
    for (bool tail : {false, true}) {
        for (int variant = 0; variant < 3; ++variant) {
            ListRule r;
            r.tail_first = tail;
            if (variant == 1) {
                r.eager_weight = true;
            } else if (variant == 2) {
                r.eager_on = eager_unless_overloaded;
            }
            rules.push_back(r);
            r.forward_cap_extra = 0;
            rules.push_back(r);
        }
    }
    for (const ListRule &r : rules) {
        offer(list_schedule(model, r));
    }

    std::mt19937 rng(seed);
    for (int attempt = 0; attempt < restarts; ++attempt) {
        ListRule r;
        r.tail_first = (rng() & 1U) != 0;
        r.own_first = (rng() & 3U) != 0;
        r.eager_on.resize(nw);
        const unsigned mode = rng() % 3;
        for (std::size_t w = 0; w < nw; ++w) {
            r.eager_on[w] = mode == 0 ? eager_unless_overloaded[w] : static_cast<std::uint8_t>(rng() & 1U);
        }
        r.forward_cap_extra = (rng() & 1U) != 0 ? -1 : static_cast<int>(rng() % 3);
        r.noise.resize(model.nodes.size());
        for (auto &x : r.noise) {
            x = static_cast<std::uint32_t>(rng());
        }
        offer(list_schedule(model, r));
    }

    for (const auto &order : seed_orders) {
        if (sequences_fit_memory(model, order)) {
            offer(model.evaluate(order));
        }
    }
    return best;
}

} // namespace pipemend
