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

#include <stdexcept>
#include <string>
#include <string_view>

namespace pipemend {

enum class ErrorCode {
    kInvalidConfig,
    kUnknownWorker,
    kUnrecoverable,
    kInfeasibleFailureCount,
    kInfeasibleMemory,
    kTimeLimit,
    kTraceInvalid,
    kPlanMissing,
    kParse,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::kInvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::kUnknownWorker: return "UNKNOWN_WORKER";
    case ErrorCode::kUnrecoverable: return "UNRECOVERABLE";
    case ErrorCode::kInfeasibleFailureCount: return "INFEASIBLE_F";
    case ErrorCode::kInfeasibleMemory: return "INFEASIBLE_MEMORY";
    case ErrorCode::kTimeLimit: return "TIME_LIMIT";
    case ErrorCode::kTraceInvalid: return "TRACE_INVALID";
    case ErrorCode::kPlanMissing: return "PLAN_MISSING";
    case ErrorCode::kParse: return "PARSE_ERROR";
    }
    return "UNKNOWN";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string &what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

} // namespace pipemend
