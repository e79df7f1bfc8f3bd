#include "relay/router.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>

#include "relay/hash.hpp"

namespace relay {

const char* to_string(InstanceKind kind) noexcept {
    return kind == InstanceKind::special ? "special" : "normal";
}

InstanceKind parse_instance_kind(const std::string& text) {
    if (text == "special") {
        return InstanceKind::special;
    }
    if (text == "normal") {
        return InstanceKind::normal;
    }
    throw ConfigError(fmt::format("unknown instance kind '{}'", text));
}

KeylessPolicy parse_keyless_policy(const std::string& text) {
    if (text == "round_robin" || text == "round-robin") {
        return KeylessPolicy::round_robin;
    }
    if (text == "least_connections" || text == "least-connections") {
        return KeylessPolicy::least_connections;
    }
    throw ConfigError(fmt::format("unknown keyless policy '{}'", text));
}

const char* to_string(RouteReason reason) noexcept {
    switch (reason) {
        case RouteReason::affinity: return "affinity";
        case RouteReason::round_robin: return "round_robin";
        case RouteReason::least_connections: return "least_connections";
    }
    return "?";
}

const char* to_string(Service s) noexcept {
    return s == Service::special_service ? "special_service" : "normal_service";
}

InstancePool::InstancePool(RouterConfig config) : config_(config) {
    if (config_.virtual_nodes == 0) {
        throw ConfigError("router: virtual_nodes must be >= 1");
    }
}

InstancePool InstancePool::build(std::size_t servers, std::size_t instances_per_server, double r2,
                                 RouterConfig config) {
    if (servers == 0 || instances_per_server == 0) {
        throw ConfigError("router: pool needs at least one server and one instance per server");
    }
    const std::size_t total = servers * instances_per_server;
    const auto specials = static_cast<std::size_t>(std::floor(r2 * static_cast<double>(total) + 1e-9));
    const std::size_t per_server_cap = std::min(config.per_server_special_cap, instances_per_server);
    if (specials > servers * per_server_cap) {
        throw ConfigError(fmt::format("router: {} special instances exceed {} servers x cap {}", specials, servers,
                                      per_server_cap));
    }

    // Special slots are dealt round-robin over servers: instance k of every
    // server before instance k + 1 of any server.
    std::vector<std::vector<InstanceKind>> kinds(servers, std::vector<InstanceKind>(instances_per_server));
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < instances_per_server && assigned < specials; ++k) {
        for (std::size_t s = 0; s < servers && assigned < specials; ++s) {
            kinds[s][k] = InstanceKind::special;
            ++assigned;
        }
    }

    InstancePool pool(config);
    for (std::size_t s = 0; s < servers; ++s) {
        for (std::size_t k = 0; k < instances_per_server; ++k) {
            InstanceInfo info{fmt::format("srv{:02}-i{}", s, k), kinds[s][k], fmt::format("srv{:02}", s)};
            pool = add_instance(pool, info);
        }
    }
    return pool;
}

const InstanceInfo* InstancePool::find(const InstanceId& id) const {
    auto it = std::find_if(instances_.begin(), instances_.end(),
                           [&](const InstanceInfo& i) { return i.instance_id == id; });
    return it == instances_.end() ? nullptr : &*it;
}

std::size_t InstancePool::special_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(instances_.begin(), instances_.end(),
                                                  [](const auto& i) { return i.kind == InstanceKind::special; }));
}

std::size_t InstancePool::normal_count() const noexcept {
    return instances_.size() - special_count();
}

std::size_t InstancePool::special_on_server(const std::string& server_id) const {
    return static_cast<std::size_t>(std::count_if(instances_.begin(), instances_.end(), [&](const auto& i) {
        return i.kind == InstanceKind::special && i.server_id == server_id;
    }));
}

std::optional<InstanceId> InstancePool::owner(const UserKey& key) const {
    if (ring_.empty()) {
        return std::nullopt;
    }
    const std::uint64_t h = stable_hash64(key);
    auto it = std::lower_bound(ring_.begin(), ring_.end(), h,
                               [](const RingPoint& p, std::uint64_t v) { return p.point < v; });
    if (it == ring_.end()) {
        it = ring_.begin();
    }
    return it->instance_id;
}

std::size_t InstancePool::active_connections(const InstanceId& id) const {
    auto it = connections_.find(id);
    return it == connections_.end() ? 0 : it->second;
}

namespace {

bool has_point(const std::vector<RingPoint>& ring, std::uint64_t point) {
    auto it = std::lower_bound(ring.begin(), ring.end(), point,
                               [](const RingPoint& p, std::uint64_t v) { return p.point < v; });
    return it != ring.end() && it->point == point;
}

}  // namespace

void InstancePool::insert_points(const InstanceId& id) {
    for (std::size_t v = 0; v < config_.virtual_nodes; ++v) {
        std::string label = fmt::format("{}#{}", id, v);
        std::uint64_t point = stable_hash64(label);
        // Salt on the (astronomically rare) collision to keep points unique.
        for (int salt = 1; has_point(ring_, point); ++salt) {
            point = stable_hash64(fmt::format("{}#{}", label, salt));
        }
        RingPoint rp{point, id};
        auto pos = std::lower_bound(ring_.begin(), ring_.end(), point,
                                    [](const RingPoint& p, std::uint64_t val) { return p.point < val; });
        ring_.insert(pos, std::move(rp));
    }
}

InstancePool add_instance(const InstancePool& pool, const InstanceInfo& instance) {
    if (pool.find(instance.instance_id) != nullptr) {
        throw PoolError(fmt::format("instance '{}' already in pool", instance.instance_id));
    }
    if (instance.kind == InstanceKind::special &&
        pool.special_on_server(instance.server_id) + 1 > pool.config_.per_server_special_cap) {
        throw PoolError(fmt::format("server '{}' already hosts {} special instance(s) (cap {})", instance.server_id,
                                    pool.special_on_server(instance.server_id), pool.config_.per_server_special_cap));
    }
    InstancePool next = pool;
    next.instances_.push_back(instance);
    if (instance.kind == InstanceKind::special) {
        next.insert_points(instance.instance_id);
    }
    return next;
}

InstancePool remove_instance(const InstancePool& pool, const InstanceId& id) {
    if (pool.find(id) == nullptr) {
        throw PoolError(fmt::format("instance '{}' not in pool", id));
    }
    InstancePool next = pool;
    std::erase_if(next.instances_, [&](const InstanceInfo& i) { return i.instance_id == id; });
    std::erase_if(next.ring_, [&](const RingPoint& p) { return p.instance_id == id; });
    next.connections_.erase(id);
    if (next.rr_cursor_ >= next.instances_.size()) {
        next.rr_cursor_ = 0;
    }
    return next;
}

RouteDecision route(InstancePool& pool, const Request& req) {
    if (req.keyed()) {
        auto owner = pool.owner(*req.header.consistency_hash_key);
        if (!owner) {
            throw NoCapacityError("route: keyed request but no special instance in pool");
        }
        return RouteDecision{*owner, RouteReason::affinity, req.header.consistency_hash_key};
    }

    const std::size_t n = pool.instances_.size();
    if (pool.normal_count() == 0) {
        throw NoCapacityError("route: keyless request but no normal instance in pool");
    }
    if (pool.config_.keyless_policy == KeylessPolicy::round_robin) {
        for (std::size_t step = 0; step < n; ++step) {
            const auto& cand = pool.instances_[(pool.rr_cursor_ + step) % n];
            if (cand.kind == InstanceKind::normal) {
                pool.rr_cursor_ = (pool.rr_cursor_ + step + 1) % n;
                return RouteDecision{cand.instance_id, RouteReason::round_robin, std::nullopt};
            }
        }
    }
    // Least connections; ties go to the earliest instance in pool order.
    const InstanceInfo* best = nullptr;
    std::size_t best_conn = 0;
    for (const auto& cand : pool.instances_) {
        if (cand.kind != InstanceKind::normal) {
            continue;
        }
        const std::size_t c = pool.active_connections(cand.instance_id);
        if (best == nullptr || c < best_conn) {
            best = &cand;
            best_conn = c;
        }
    }
    ++pool.connections_[best->instance_id];
    return RouteDecision{best->instance_id, RouteReason::least_connections, std::nullopt};
}

void finish(InstancePool& pool, const InstanceId& id) {
    auto it = pool.connections_.find(id);
    if (it != pool.connections_.end() && it->second > 0) {
        --it->second;
    }
}

Service classify(const InstancePool& /*pool*/, const Request& req, const TriggerConfig& /*cfg*/) {
    return req.keyed() ? Service::special_service : Service::normal_service;
}

}  // namespace relay
