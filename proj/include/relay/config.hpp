#pragma once

// Whole-system configuration and its INI file form.
//
// Sections: [model] [trigger] [router] [cache] [cost] [workload] [slo].
// Unknown sections or keys are rejected so typos cannot silently fall back to
// defaults.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "relay/cost_model.hpp"
#include "relay/model.hpp"
#include "relay/router.hpp"
#include "relay/trigger.hpp"

namespace relay {

struct PoolConfig {
    std::size_t servers = 8;
    std::size_t instances_per_server = 2;
    double r2 = 0.125;
    RouterConfig router{128, 1, KeylessPolicy::round_robin};
    /// When positive, the first special instance leaves the ring at this
    /// simulated time; requests already routed to it still complete there.
    double churn_at_s = 0.0;

    std::size_t total_instances() const noexcept { return servers * instances_per_server; }
};

struct CacheConfig {
    std::uint64_t dram_bytes_per_server = 500'000'000'000ULL;
    double dram_ttl_s = 0.0;  ///< 0 disables expiry
    bool spill_on_evict = true;
    std::size_t max_concurrent_reloads = 2;
};

struct WorkloadConfig {
    double offered_qps = 200.0;
    double horizon_s = 60.0;
    /// When nonzero, generation stops after this many requests even inside
    /// the horizon, so runs at different rates share one request set.
    std::size_t max_requests = 0;
    /// Mixed population: share of users with prefixes in [long_min, long_max].
    double long_fraction = 0.06;
    std::size_t short_min = 128;
    std::size_t short_max = 2048;
    std::size_t long_min = 2049;
    std::size_t long_max = 4096;
    /// When nonzero every user has this prefix length and is treated as a
    /// long-sequence user.
    std::size_t fixed_length = 0;
    std::size_t items = 512;
    std::size_t suffix = 64;
    std::size_t users = 20000;
    /// Probability that a request repeats one of the previous
    /// `refresh_window` requests' users.
    double refresh_prob = 0.05;
    std::size_t refresh_window = 64;
    /// Fraction of long-sequence users whose cache starts in DRAM.
    double dram_prewarm = 0.0;
    std::uint64_t seed = 1;
    bool verify_scores = false;
};

struct SloConfig {
    double pipeline_p99_ms = 135.0;
    double ranking_p99_ms = 50.0;
    double success_rate = 0.999;
    /// A request succeeds when its pipeline latency is within this bound.
    double timeout_ms = 200.0;
};

struct SystemConfig {
    /// Small model used only when scores are verified.
    ModelConfig model{2, 16, 8, 42};
    /// Production shape for cache bytes and compute costs.
    ModelConfig kv_shape{8, 256, 4, 42};
    TriggerConfig trigger;
    bool rank_priority = false;
    PoolConfig pool;
    CacheConfig cache;
    CostModel cost = default_cost_model();
    WorkloadConfig workload;
    SloConfig slo;

    /// Explicit [trigger] q_m / kv_p99 / n_instances / r2; derived when unset.
    bool q_m_set = false;
    bool kv_p99_set = false;
    bool n_instances_set = false;
    bool r2_set = false;

    void validate() const;
};

/// Defaults for a desk-scale deployment (8 servers x 2 instances).
SystemConfig default_config();

/// Trigger settings with derived fields filled: N and r2 from the pool,
/// kv_p99 from the longest prefix, q_m = floor(1000 / pre(longest prefix)).
/// Fixed-length workloads mark every user at risk.
TriggerConfig effective_trigger(const SystemConfig& cfg);

/// Longest prefix the workload can produce.
std::size_t max_prefix_len(const WorkloadConfig& w);

SystemConfig parse_config(std::istream& in);
SystemConfig load_config(const std::string& path);

/// Throws ConfigError for an unknown knob or unparsable value.
void set_config_value(SystemConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value);

nlohmann::json config_to_json(const SystemConfig& cfg);

}  // namespace relay
