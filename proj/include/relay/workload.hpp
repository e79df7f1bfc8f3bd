#pragma once

// Synthetic request traces.
//
// Rank-stage arrivals form a Poisson process. Each request draws from its
// own stream, so a request's user, stage delays and unit-rate gap are the
// same at every offered rate; raising the rate only compresses the gaps.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "relay/common.hpp"
#include "relay/config.hpp"
#include "relay/request.hpp"

namespace relay {

struct TraceRequest {
    std::uint64_t id = 0;
    UserKey user;
    std::size_t prefix_len = 0;
    /// Retrieval start; the trigger fires here.
    SimTime issue = 0;
    /// Pre-infer arrival at its instance.
    SimTime preinfer_arrival = 0;
    /// Rank-stage arrival (after retrieval and pre-processing).
    SimTime rank_arrival = 0;
    std::size_t items = 0;
    std::uint64_t item_seed = 0;
};

/// Per-user prefix length, a pure function of (workload, user).
std::size_t user_prefix_len(const WorkloadConfig& w, const UserKey& user);

/// True when `user` is a long-sequence user under the mixed population.
bool is_long_user(const WorkloadConfig& w, const UserKey& user);

/// Requests whose unshifted arrival falls inside the horizon, ordered by id
/// (and therefore by rank-stage arrival).
std::vector<TraceRequest> generate_trace(const WorkloadConfig& w, const CostModel& cost);

/// Candidate item ids for a trace request.
std::vector<ItemId> request_items(const TraceRequest& r);

}  // namespace relay
