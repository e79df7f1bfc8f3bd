#pragma once

// relayctl: plan, verify, route-check, simulate, sweep.
//
// Exit codes: 0 success, 1 check failure or invariant violation, 2 config
// error.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relay/common.hpp"
#include "relay/router.hpp"

namespace relay {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfigError = 2 };

struct RouteCheckReport {
    std::size_t keys = 0;
    std::size_t special_instances = 0;
    /// Keys whose pre-infer and rank requests reached different instances.
    std::size_t affinity_mismatches = 0;
    /// Largest |share - 1/S| / (1/S) over special instances.
    double max_load_deviation = 0.0;
    InstanceId removed;
    std::size_t owned_by_removed = 0;
    std::size_t remapped = 0;
    /// Remapped keys that the removed instance did not own.
    std::size_t remap_violations = 0;
    double remapped_fraction = 0.0;

    bool passed() const noexcept { return affinity_mismatches == 0 && remap_violations == 0; }
    nlohmann::json to_json() const;
};

/// Routes `keys` random user keys through `pool`, then removes `remove`
/// (the first special instance when empty) and diffs ownership.
RouteCheckReport route_check(const InstancePool& pool, std::size_t keys, std::uint64_t seed,
                             const InstanceId& remove = {});

/// Parses `args` (without the program name) and runs one subcommand.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relay
