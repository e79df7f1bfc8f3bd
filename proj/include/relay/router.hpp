#pragma once

// Affinity-aware routing. Keyed (long-sequence) requests go to the special
// instance owning hash(key) on a consistent-hash ring, so a user's pre-infer
// and rank requests rendezvous on the instance holding its cache. Keyless
// traffic is balanced over normal instances.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "relay/common.hpp"
#include "relay/request.hpp"
#include "relay/trigger.hpp"

namespace relay {

enum class InstanceKind { normal, special };

const char* to_string(InstanceKind kind) noexcept;
InstanceKind parse_instance_kind(const std::string& text);

struct InstanceInfo {
    InstanceId instance_id;
    InstanceKind kind = InstanceKind::normal;
    std::string server_id;
};

enum class KeylessPolicy { round_robin, least_connections };

KeylessPolicy parse_keyless_policy(const std::string& text);

struct RouterConfig {
    std::size_t virtual_nodes = 128;
    std::size_t per_server_special_cap = 2;
    KeylessPolicy keyless_policy = KeylessPolicy::round_robin;
};

struct RingPoint {
    std::uint64_t point = 0;
    InstanceId instance_id;
};

enum class RouteReason { affinity, round_robin, least_connections };

const char* to_string(RouteReason reason) noexcept;

struct RouteDecision {
    InstanceId instance_id;
    RouteReason reason = RouteReason::round_robin;
    std::optional<UserKey> affinity_key_used;
};

/// Instances plus the ring over the special ones. Membership changes return
/// a new pool; the ring of an existing pool never changes, so readers of a
/// snapshot see a consistent view. Only the keyless-balancing cursor and
/// connection counts mutate in place.
class InstancePool {
public:
    explicit InstancePool(RouterConfig config = {});

    /// servers x per_server instances; floor(r2 * N) of them special, spread
    /// across servers within the per-server cap.
    static InstancePool build(std::size_t servers, std::size_t instances_per_server, double r2,
                              RouterConfig config = {});

    const RouterConfig& config() const noexcept { return config_; }
    const std::vector<InstanceInfo>& instances() const noexcept { return instances_; }
    const std::vector<RingPoint>& ring() const noexcept { return ring_; }
    const InstanceInfo* find(const InstanceId& id) const;

    std::size_t special_count() const noexcept;
    std::size_t normal_count() const noexcept;
    std::size_t special_on_server(const std::string& server_id) const;

    /// Special instance owning `key` (first ring point clockwise of its hash).
    std::optional<InstanceId> owner(const UserKey& key) const;

    std::size_t active_connections(const InstanceId& id) const;

private:
    friend InstancePool add_instance(const InstancePool&, const InstanceInfo&);
    friend InstancePool remove_instance(const InstancePool&, const InstanceId&);
    friend RouteDecision route(InstancePool&, const Request&);
    friend void finish(InstancePool&, const InstanceId&);

    void insert_points(const InstanceId& id);

    RouterConfig config_;
    std::vector<InstanceInfo> instances_;
    std::vector<RingPoint> ring_;
    std::size_t rr_cursor_ = 0;
    std::unordered_map<InstanceId, std::size_t> connections_;
};

/// Throws NoCapacityError when no instance of the required kind exists.
RouteDecision route(InstancePool& pool, const Request& req);

/// Releases one connection counted by least-connections routing.
void finish(InstancePool& pool, const InstanceId& id);

/// Throws PoolError on duplicate id or when the server's special cap would
/// be exceeded.
InstancePool add_instance(const InstancePool& pool, const InstanceInfo& instance);

/// Throws PoolError when the id is unknown.
InstancePool remove_instance(const InstancePool& pool, const InstanceId& id);

enum class Service { normal_service, special_service };

const char* to_string(Service s) noexcept;

/// Special iff the request carries a consistency-hash-key.
Service classify(const InstancePool& pool, const Request& req, const TriggerConfig& cfg);

}  // namespace relay
