#pragma once

// Ranking instances on a discrete-event loop.
//
// A SpecialInstance hosts prefix caches: pre-infer requests compute and
// store a user's prefix KV, rank requests probe the tiers (pseudo
// pre-inference) and either rank on the cache or fall back to full
// inference. A NormalInstance always runs full inference. Both execute work
// on M model slots.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>

#include "relay/cache_tiers.hpp"
#include "relay/cost_model.hpp"
#include "relay/event_loop.hpp"
#include "relay/model.hpp"
#include "relay/request.hpp"
#include "relay/trace.hpp"
#include "relay/trigger.hpp"

namespace relay {

enum class JobClass { pre_infer, rank };

/// M model slots. FIFO across both job classes; with `rank_priority` queued
/// ranks start before queued pre-infers.
class SlotScheduler {
public:
    using Done = std::function<void(SimTime queue_delay)>;

    SlotScheduler(EventLoop& loop, std::size_t m_slots, bool rank_priority = false);

    void submit(JobClass cls, SimTime duration, Done done);

    std::size_t m_slots() const noexcept { return m_; }
    std::size_t busy() const noexcept { return busy_; }
    std::size_t queued() const noexcept { return fifo_.size() + rank_fifo_.size(); }
    std::size_t max_busy() const noexcept { return max_busy_; }
    /// Sum of durations of all started jobs.
    SimTime busy_time() const noexcept { return busy_time_; }

private:
    struct Job {
        JobClass cls;
        SimTime duration;
        SimTime submitted;
        Done done;
    };

    void start(Job job);

    EventLoop& loop_;
    std::size_t m_;
    bool rank_priority_;
    std::size_t busy_ = 0;
    std::size_t max_busy_ = 0;
    SimTime busy_time_ = 0;
    std::deque<Job> fifo_;
    std::deque<Job> rank_fifo_;
};

/// Deterministic stand-in for the behavior and feature services: per-user
/// sequence lengths, plus token content for scoring on a small model.
class BehaviorStore {
public:
    using LengthFn = std::function<std::size_t(const UserKey&)>;

    explicit BehaviorStore(LengthFn prefix_len, std::size_t suffix_len = 64, std::size_t feature_dim = 256,
                           std::uint64_t seed = 7);

    std::size_t prefix_len(const UserKey& user) const { return prefix_len_(user); }
    std::size_t suffix_len() const noexcept { return suffix_len_; }
    BehaviorMetadata metadata(const UserKey& user) const;

    /// Token content for `user` at width `dim`. Prefix and suffix lengths are
    /// divided by `token_scale` (at least one prefix token) and capped, so
    /// scoring stays cheap while long users still get longer sequences.
    SegmentedSequence sequence(const UserKey& user, std::span<const ItemId> items, std::size_t dim) const;

    std::size_t token_scale = 64;
    std::size_t max_scored_prefix = 96;
    std::size_t max_scored_suffix = 8;

private:
    LengthFn prefix_len_;
    std::size_t suffix_len_;
    std::size_t feature_dim_;
    std::uint64_t seed_;
};

enum class ServePath {
    preinfer_done,
    preinfer_rejected,
    rank_cached_hbm,
    rank_cached_after_reload,
    rank_fallback_full,
    rank_full,
};

const char* to_string(ServePath p) noexcept;

struct StageLatencies {
    SimTime queue = 0;
    SimTime pre = 0;
    SimTime load = 0;
    SimTime rank = 0;
};

struct ServeOutcome {
    std::uint64_t request_id = 0;
    UserKey user_key;
    InstanceId instance;
    Stage stage = Stage::rank;
    ServePath path = ServePath::rank_full;
    StageLatencies stage_latencies;
    SimTime arrival = 0;
    SimTime completion = 0;
    std::optional<ScoreVector> scores;
    std::string detail;
};

using ServeCallback = std::function<void(const ServeOutcome&)>;

/// Reloads in flight on one server share its host-to-device bandwidth.
struct ServerLink {
    std::size_t active_reloads = 0;
};

struct InstanceEnv {
    EventLoop* loop = nullptr;
    const CostModel* cost = nullptr;
    const BehaviorStore* store = nullptr;
    TraceLog* trace = nullptr;
    /// When set, every outcome carries scores computed on this model.
    const Backbone* scorer = nullptr;
    ServerLink* link = nullptr;
};

struct InstanceConfig {
    InstanceId instance_id = "inst";
    std::string server_id = "srv";
    std::size_t m_slots = 5;
    bool rank_priority = false;
    TriggerConfig trigger;
    TieredCacheConfig cache;
    /// Shape used for cache byte accounting and compute costs.
    ModelConfig kv_shape{8, 256, 4, 42};
};

struct ProbeStats {
    std::uint64_t hbm_hits = 0;
    std::uint64_t dram_hits = 0;
    std::uint64_t joined = 0;
    std::uint64_t misses = 0;

    void count(ProbeOutcome p) noexcept;
};

class SpecialInstance {
public:
    SpecialInstance(InstanceConfig config, InstanceEnv env);
    SpecialInstance(const SpecialInstance&) = delete;
    SpecialInstance& operator=(const SpecialInstance&) = delete;

    const InstanceId& id() const noexcept { return config_.instance_id; }
    const InstanceConfig& config() const noexcept { return config_; }

    /// Trigger stage: admission against this instance's budgets at the
    /// current time. An admitted pre-infer arriving later consumes it.
    AdmissionResult admit(const BehaviorMetadata& meta);

    /// Accepts a request arriving now; `done` fires on completion. A pre-infer
    /// with no pending admission is admitted on arrival.
    void submit(const Request& req, std::uint64_t request_id, ServeCallback done);

    /// Submits and drives the loop until this request completes.
    ServeOutcome handle(const Request& req);

    /// Places a consumed-and-spilled cache for `user` in DRAM.
    void prewarm(const UserKey& user);

    const AdmissionState& admission() const noexcept { return admission_; }
    const TieredCache& cache() const noexcept { return cache_; }
    const SlotScheduler& slots() const noexcept { return slots_; }
    const ProbeStats& rank_probes() const noexcept { return rank_probes_; }
    const ProbeStats& preinfer_probes() const noexcept { return preinfer_probes_; }
    std::size_t open_admissions() const noexcept { return open_admissions_.size(); }
    std::uint64_t rejections(RejectReason r) const;

private:
    struct RankCtx {
        std::uint64_t request_id = 0;
        Request request;
        SimTime arrival = 0;
        SimTime wait_start = 0;
        FlightKind waited_on = FlightKind::none;
        StageLatencies lat;
        ServeCallback done;
    };

    struct OpenAdmission {
        UserKey user;
        SimTime expires_at = 0;
    };

    void on_preinfer(const Request& req, std::uint64_t request_id, ServeCallback done);
    void on_rank(const Request& req, std::uint64_t request_id, ServeCallback done);
    void rank_cached(RankCtx ctx, ServePath path);
    void fallback(RankCtx ctx);
    void start_transfer(const ReloadTicket& ticket);
    void settle(ReloadCompletion completion);
    void close_admission(std::uint64_t admission_id);
    void expire(std::uint64_t admission_id);
    PrefixCache make_cache(const UserKey& user) const;
    ServeOutcome outcome(std::uint64_t request_id, const Request& req, SimTime arrival, ServePath path) const;
    void trace(TraceEventType type, const UserKey& user, std::uint64_t bytes, std::string detail = {});

    InstanceConfig config_;
    InstanceEnv env_;
    SlotScheduler slots_;
    TieredCache cache_;
    AdmissionState admission_;
    std::uint64_t next_admission_ = 1;
    std::uint64_t next_waiter_ = 1;
    std::uint64_t next_handle_id_ = 1;
    std::unordered_map<std::uint64_t, OpenAdmission> open_admissions_;
    std::unordered_map<UserKey, std::deque<std::uint64_t>> pending_admissions_;
    std::unordered_map<std::uint64_t, RankCtx> waiting_;
    ProbeStats rank_probes_;
    ProbeStats preinfer_probes_;
    std::uint64_t rejected_hbm_ = 0;
    std::uint64_t rejected_rate_ = 0;
    std::uint64_t rejected_not_at_risk_ = 0;
};

class NormalInstance {
public:
    NormalInstance(InstanceConfig config, InstanceEnv env);
    NormalInstance(const NormalInstance&) = delete;
    NormalInstance& operator=(const NormalInstance&) = delete;

    const InstanceId& id() const noexcept { return config_.instance_id; }

    /// Full inference for a rank request. Throws ProtocolError for pre-infer
    /// requests, which only special instances accept.
    void submit(const Request& req, std::uint64_t request_id, ServeCallback done);

    ServeOutcome handle(const Request& req);

    const SlotScheduler& slots() const noexcept { return slots_; }

private:
    InstanceConfig config_;
    InstanceEnv env_;
    SlotScheduler slots_;
    std::uint64_t next_handle_id_ = 1;
};

/// Full-inference sequence length for a request: prefix + suffix + items.
std::size_t full_length(const BehaviorStore& store, const UserKey& user, std::size_t items);

}  // namespace relay
