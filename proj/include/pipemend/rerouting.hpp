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

#include <vector>

#include "pipemend/core.hpp"

namespace pipemend {

/// Routes every failed worker's micro-batches to its live peers.
///
/// Live workers keep their own micro-batches. At each stage the micro-batches of all failed workers form one
/// stream ordered by (origin pipeline, micro-batch) which is dealt round-robin over the survivors in
/// ascending pipeline order, starting with the lowest-indexed survivor. Extra loads therefore differ by at
/// most one across peers.
[[nodiscard]] inline Assignment assign_microbatches(const ClusterConfig &config) {
    if (recoverability(config) != Recoverability::kRecoverable) {
        throw Error(ErrorCode::kUnrecoverable, "some stage has no live worker");
    }
    const int n = config.num_stages();
    const int m = config.num_microbatches();
    const int dp = config.num_pipelines();
    std::vector<int> exec(static_cast<std::size_t>(n * m * dp));
    for (int i = 0; i < n; ++i) {
        const std::vector<WorkerId> survivors = peers(config, i);
        std::size_t next = 0;
        for (int k = 0; k < dp; ++k) {
            const bool live = config.is_live({i, k});
            for (int j = 0; j < m; ++j) {
                int target = k;
                if (!live) {
                    target = survivors[next % survivors.size()].pipeline;
                    ++next;
                }
                exec[static_cast<std::size_t>((i * m + j) * dp + k)] = target;
            }
        }
    }
    return Assignment(config, std::move(exec));
}

enum class EdgeKind { kActivation, kGradient };

/// One point-to-point transfer between adjacent stages.
struct CommEdge {
    WorkerId from;
    WorkerId to;
    EdgeKind kind = EdgeKind::kActivation;
    int microbatch = 0;
    int origin = 0;
    int boundary = 0; // between stage `boundary` and `boundary + 1`

    friend bool operator==(const CommEdge &, const CommEdge &) = default;
};

/// Activation edges flow from the executor of (i, j, k) to the executor of (i + 1, j, k); gradient edges
/// flow back between the same pair, so a micro-batch's forward and backward visit one peer per stage.
[[nodiscard]] inline std::vector<CommEdge> comm_edges(const Assignment &assignment, const ClusterConfig &config) {
    std::vector<CommEdge> edges;
    for (int k = 0; k < config.num_pipelines(); ++k) {
        for (int j = 0; j < config.num_microbatches(); ++j) {
            for (int i = 0; i + 1 < config.num_stages(); ++i) {
                const WorkerId lo{i, assignment.executor(i, j, k)};
                const WorkerId hi{i + 1, assignment.executor(i + 1, j, k)};
                edges.push_back({lo, hi, EdgeKind::kActivation, j, k, i});
            }
            for (int i = config.num_stages() - 2; i >= 0; --i) {
                const WorkerId lo{i, assignment.executor(i, j, k)};
                const WorkerId hi{i + 1, assignment.executor(i + 1, j, k)};
                edges.push_back({hi, lo, EdgeKind::kGradient, j, k, i});
            }
        }
    }
    return edges;
}

} // namespace pipemend
