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
#include <optional>
#include <string_view>
#include <vector>

#include "pipemend/baseline.hpp"
#include "pipemend/core.hpp"

namespace pipemend {

enum class Backend { kExact, kHeuristic, kAuto };

[[nodiscard]] constexpr std::string_view to_string(Backend b) {
    switch (b) {
    case Backend::kExact: return "exact";
    case Backend::kHeuristic: return "heuristic";
    case Backend::kAuto: return "auto";
    }
    return "?";
}

struct OptimizerOptions {
    bool decoupled_backprop = true;
    bool staggered_optimizer = true;
    Backend backend = Backend::kAuto;
    int horizon_iterations = 0; // 0 picks 2 when staggered, else 1
    Duration time_limit{std::chrono::seconds(10)};
    std::optional<Bytes> memory_limit;
    // Random restarts of the list scheduler on top of its fixed rules.
    int heuristic_restarts = 64;
    unsigned seed = 1;

    [[nodiscard]] int horizon() const {
        if (horizon_iterations > 0) {
            return horizon_iterations;
        }
        return staggered_optimizer ? 2 : 1;
    }

    void validate() const {
        if (horizon_iterations < 0) {
            throw Error(ErrorCode::kInvalidConfig, "horizon must be positive");
        }
        if (staggered_optimizer && horizon_iterations == 1) {
            throw Error(ErrorCode::kInvalidConfig, "staggered optimizer needs a horizon of at least 2");
        }
    }
};

enum class NodeKind : std::uint8_t { kTask, kAllReduce, kBarrier };

struct Arc {
    int node;
    Duration lag;
};

struct Node {
    TaskId id;
    NodeKind kind = NodeKind::kTask;
    int worker = -1; // index into Model::workers, -1 for synchronization nodes
    Duration duration{0};
    Bytes delta = 0;
    std::vector<Arc> preds;
    std::vector<Arc> succs;
};

/// Task graph over a horizon of iterations. Node indices are a topological order.
struct Model {
    ClusterConfig config;
    Profile profile;
    Assignment assignment;
    bool decoupled = true;
    bool staggered = true;
    int horizon = 1;
    Bytes memory_limit = kUnlimitedMemory;
    std::vector<Node> nodes;
    std::vector<WorkerId> workers;
    std::vector<std::vector<int>> worker_nodes;
    std::vector<Duration> head; // longest path from time 0 to the node start
    std::vector<Duration> tail; // longest path from the node end to the sink

    [[nodiscard]] int task_count() const {
        return static_cast<int>(std::count_if(nodes.begin(), nodes.end(),
                                              [](const Node &x) { return x.kind == NodeKind::kTask; }));
    }

    /// Critical-path bound on the makespan.
    [[nodiscard]] Duration critical_path() const {
        Duration best{0};
        for (std::size_t v = 0; v < nodes.size(); ++v) {
            best = std::max(best, head[v] + nodes[v].duration + tail[v]);
        }
        return best;
    }

    [[nodiscard]] Schedule to_schedule(const std::vector<Duration> &start) const {
        Schedule s;
        s.iterations = horizon;
        s.staggered = staggered;
        for (std::size_t v = 0; v < nodes.size(); ++v) {
            const Duration end = start[v] + nodes[v].duration;
            s.makespan = std::max(s.makespan, end);
            if (nodes[v].kind == NodeKind::kTask) {
                s.entries.push_back({nodes[v].id, start[v], end});
            }
        }
        return s;
    }

    /// Earliest start of every node given fixed per-worker sequences. Returns nullopt if the sequences
    /// contradict the precedence graph.
    [[nodiscard]] std::optional<std::vector<Duration>>
    evaluate(const std::vector<std::vector<int>> &sequences) const {
        const std::size_t count = nodes.size();
        std::vector<int> indegree(count, 0);
        std::vector<int> next_on_worker(count, -1);
        for (std::size_t v = 0; v < count; ++v) {
            indegree[v] = static_cast<int>(nodes[v].preds.size());
        }
        for (const auto &seq : sequences) {
            for (std::size_t p = 1; p < seq.size(); ++p) {
                next_on_worker[static_cast<std::size_t>(seq[p - 1])] = seq[p];
                ++indegree[static_cast<std::size_t>(seq[p])];
            }
        }
        std::vector<Duration> start(count, Duration{0});
        std::vector<int> stack;
        for (std::size_t v = 0; v < count; ++v) {
            if (indegree[v] == 0) {
                stack.push_back(static_cast<int>(v));
            }
        }
        std::size_t done = 0;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            ++done;
            const Duration end = start[static_cast<std::size_t>(v)] + nodes[static_cast<std::size_t>(v)].duration;
            auto relax = [&](int u, Duration lag) {
                auto &s = start[static_cast<std::size_t>(u)];
                s = std::max(s, end + lag);
                if (--indegree[static_cast<std::size_t>(u)] == 0) {
                    stack.push_back(u);
                }
            };
            for (const Arc &a : nodes[static_cast<std::size_t>(v)].succs) {
                relax(a.node, a.lag);
            }
            if (next_on_worker[static_cast<std::size_t>(v)] >= 0) {
                relax(next_on_worker[static_cast<std::size_t>(v)], Duration{0});
            }
        }
        if (done != count) {
            return std::nullopt;
        }
        return start;
    }
};

/// Builds the task graph for one assignment.
///
/// Per iteration: forwards flow down the stages, input (or coupled) gradients flow back up, and weight
/// gradients follow their own input gradient. Staggered mode adds one all-reduce node per stage joining
/// every completing backward of that stage, then one optimizer step per live worker; the worker's next
/// iteration starts after its own step. Otherwise a single all-reduce joins every stage and a barrier after
/// all optimizer steps gates the next iteration.
[[nodiscard]] inline Model build_model(const ClusterConfig &config, const Profile &profile,
                                       const Assignment &assignment, const OptimizerOptions &options) {
    if (options.horizon_iterations < 0) {
        throw Error(ErrorCode::kInvalidConfig, "horizon must be positive");
    }
    Model model{config, profile, assignment, true, true, 1, kUnlimitedMemory, {}, {}, {}, {}, {}};
    model.decoupled = options.decoupled_backprop;
    model.staggered = options.staggered_optimizer;
    model.horizon = options.horizon();
    model.memory_limit = options.memory_limit.value_or(profile.memory_limit);
    model.profile.memory_limit = model.memory_limit;
    model.profile.validate(config.num_stages());
    if (assignment.num_stages() != config.num_stages() || assignment.num_pipelines() != config.num_pipelines() ||
        assignment.num_microbatches() != config.num_microbatches()) {
        throw Error(ErrorCode::kInvalidConfig, "assignment shape differs from the cluster");
    }

    const int n = config.num_stages();
    const int m = config.num_microbatches();
    const int dp = config.num_pipelines();
    std::vector<int> worker_index(static_cast<std::size_t>(n * dp), -1);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < dp; ++k) {
            if (config.is_live({i, k})) {
                worker_index[static_cast<std::size_t>(i * dp + k)] = static_cast<int>(model.workers.size());
                model.workers.push_back({i, k});
            }
        }
    }
    model.worker_nodes.resize(model.workers.size());

    auto add = [&](TaskId id, NodeKind kind) {
        Node node;
        node.id = id;
        node.kind = kind;
        if (kind == NodeKind::kTask) {
            node.worker = worker_index[static_cast<std::size_t>(id.stage * dp + id.exec)];
            node.duration = profile.duration(id.phase, id.stage);
            node.delta = profile.memory_delta(id.phase, id.stage);
            model.worker_nodes[static_cast<std::size_t>(node.worker)].push_back(static_cast<int>(model.nodes.size()));
        } else if (kind == NodeKind::kAllReduce) {
            node.duration = profile.allreduce_time;
        }
        model.nodes.push_back(std::move(node));
        return static_cast<int>(model.nodes.size()) - 1;
    };
    auto link = [&](int from, int to, Duration lag) {
        model.nodes[static_cast<std::size_t>(from)].succs.push_back({to, lag});
        model.nodes[static_cast<std::size_t>(to)].preds.push_back({from, lag});
    };
    auto slot = [&](int i, int j, int k) { return static_cast<std::size_t>((i * m + j) * dp + k); };

    const Phase grad_phase = model.decoupled ? Phase::kBackwardInput : Phase::kBackward;
    const std::size_t cells = static_cast<std::size_t>(n * m * dp);
    // Gate of the previous iteration per worker (staggered) or globally.
    std::vector<int> prev_opt(static_cast<std::size_t>(n * dp), -1);
    int prev_barrier = -1;

    for (int it = 0; it < model.horizon; ++it) {
        std::vector<int> fwd(cells), bwd(cells), wgt(cells, -1);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < dp; ++k) {
                for (int j = 0; j < m; ++j) {
                    const int ks = assignment.executor(i, j, k);
                    const int v = add(TaskId{i, j, k, Phase::kForward, ks, it}, NodeKind::kTask);
                    fwd[slot(i, j, k)] = v;
                    if (i > 0) {
                        const int u = fwd[slot(i - 1, j, k)];
                        link(u, v, comm_lag(profile, model.nodes[static_cast<std::size_t>(u)].id.worker(), {i, ks}));
                    } else if (prev_barrier >= 0) {
                        link(prev_barrier, v, Duration{0});
                    }
                    if (prev_opt[static_cast<std::size_t>(i * dp + ks)] >= 0) {
                        link(prev_opt[static_cast<std::size_t>(i * dp + ks)], v, Duration{0});
                    }
                }
            }
        }
        for (int i = n - 1; i >= 0; --i) {
            for (int k = 0; k < dp; ++k) {
                for (int j = 0; j < m; ++j) {
                    const int ks = assignment.executor(i, j, k);
                    const int v = add(TaskId{i, j, k, grad_phase, ks, it}, NodeKind::kTask);
                    bwd[slot(i, j, k)] = v;
                    link(fwd[slot(i, j, k)], v, Duration{0});
                    if (i + 1 < n) {
                        const int u = bwd[slot(i + 1, j, k)];
                        link(u, v, comm_lag(profile, model.nodes[static_cast<std::size_t>(u)].id.worker(), {i, ks}));
                    }
                }
            }
        }
        if (model.decoupled) {
            for (int i = n - 1; i >= 0; --i) {
                for (int k = 0; k < dp; ++k) {
                    for (int j = 0; j < m; ++j) {
                        const int ks = assignment.executor(i, j, k);
                        const int v = add(TaskId{i, j, k, Phase::kBackwardWeight, ks, it}, NodeKind::kTask);
                        wgt[slot(i, j, k)] = v;
                        link(bwd[slot(i, j, k)], v, Duration{0});
                    }
                }
            }
        }
        const std::vector<int> &last = model.decoupled ? wgt : bwd;

        if (model.staggered) {
            for (int i = 0; i < n; ++i) {
                const int ar = add(TaskId{i, -2, 0, Phase::kOptimizer, 0, it}, NodeKind::kAllReduce);
                for (int k = 0; k < dp; ++k) {
                    for (int j = 0; j < m; ++j) {
                        link(last[slot(i, j, k)], ar, Duration{0});
                    }
                }
                for (int k = 0; k < dp; ++k) {
                    if (config.is_live({i, k})) {
                        const int o = add(TaskId::optimizer({i, k}, it), NodeKind::kTask);
                        link(ar, o, Duration{0});
                        prev_opt[static_cast<std::size_t>(i * dp + k)] = o;
                    }
                }
            }
        } else {
            const int ar = add(TaskId{0, -2, 0, Phase::kOptimizer, 0, it}, NodeKind::kAllReduce);
            for (int v : last) {
                link(v, ar, Duration{0});
            }
            std::vector<int> opts;
            for (const WorkerId &w : model.workers) {
                const int o = add(TaskId::optimizer(w, it), NodeKind::kTask);
                link(ar, o, Duration{0});
                opts.push_back(o);
            }
            prev_barrier = add(TaskId{0, -3, 0, Phase::kOptimizer, 0, it}, NodeKind::kBarrier);
            for (int o : opts) {
                link(o, prev_barrier, Duration{0});
            }
        }
    }

    const std::size_t count = model.nodes.size();
    model.head.assign(count, Duration{0});
    model.tail.assign(count, Duration{0});
    for (std::size_t v = 0; v < count; ++v) {
        const Duration end = model.head[v] + model.nodes[v].duration;
        for (const Arc &a : model.nodes[v].succs) {
            auto &h = model.head[static_cast<std::size_t>(a.node)];
            h = std::max(h, end + a.lag);
        }
    }
    for (std::size_t v = count; v-- > 0;) {
        for (const Arc &a : model.nodes[v].succs) {
            const auto u = static_cast<std::size_t>(a.node);
            model.tail[v] = std::max(model.tail[v], a.lag + model.nodes[u].duration + model.tail[u]);
        }
    }
    return model;
}

} // namespace pipemend
