#pragma once

// Two-tier lifecycle cache for one special instance.
//
// HbmWindow is a sliding window bounded by r1 * HBM: pre-inference inserts,
// ranking consumes, later admissions evict. DramStore is the server-local
// spill tier (LRU, optional TTL). TieredCache composes them with per-user
// single-flight state and a reload governor: at most one cache-affecting
// action is in flight per user, later requests join it, and at most
// `max_concurrent_reloads` DRAM->HBM transfers run at once.
//
// Nothing here schedules time. Operations that start a transfer return a
// ReloadTicket; the owner schedules completion and calls complete_reload.

#include <cstdint>
#include <deque>
#include <limits>
#include <list>
#include <optional>
#include <unordered_map>
#include <vector>

#include "relay/common.hpp"
#include "relay/model.hpp"
#include "relay/trace.hpp"

namespace relay {

inline constexpr SimTime kNever = std::numeric_limits<SimTime>::max();

struct HbmEntry {
    PrefixCache cache;
    /// Nonzero while the entry backs a live trigger admission; the entry is
    /// protected until `expires_at`.
    std::uint64_t admission_id = 0;
    SimTime expires_at = kNever;
    /// Space reserved for a DRAM->HBM transfer still in progress.
    bool in_transit = false;
    SimTime consumed_at = 0;
    std::uint64_t seq = 0;
    /// Ranks currently reading the entry; pinned entries are never evicted.
    std::uint32_t pins = 0;
};

enum class InsertStatus { inserted, inserted_after_eviction, rejected };

struct InsertResult {
    InsertStatus status = InsertStatus::inserted;
    std::vector<HbmEntry> victims;
};

class HbmWindow {
public:
    explicit HbmWindow(std::uint64_t capacity_bytes = 0) : capacity_(capacity_bytes) {}

    std::uint64_t capacity_bytes() const noexcept { return capacity_; }
    std::uint64_t occupancy_bytes() const noexcept { return occupancy_; }
    std::size_t size() const noexcept { return entries_.size(); }

    bool contains(const UserKey& key) const { return entries_.contains(key); }
    HbmEntry* find(const UserKey& key);
    const HbmEntry* find(const UserKey& key) const;

    /// Pinned entries, unexpired live-unconsumed entries and unexpired
    /// admission-bound reloads are never evicted.
    static bool is_protected(const HbmEntry& e, SimTime now) noexcept;

    /// Inserts, evicting in order: consumed entries (FIFO by consumption),
    /// expired live entries, unbound in-transit reloads. If the protected
    /// remainder leaves no room, nothing is evicted and the insert is
    /// rejected. Throws OversizeError if the cache exceeds total capacity
    /// and AccountingError if the key is already resident.
    InsertResult insert(HbmEntry entry, SimTime now);

    std::optional<HbmEntry> erase(const UserKey& key);

    std::vector<const HbmEntry*> entries() const;

private:
    std::uint64_t capacity_;
    std::uint64_t occupancy_ = 0;
    std::uint64_t next_seq_ = 0;
    std::unordered_map<UserKey, HbmEntry> entries_;
};

class DramStore {
public:
    explicit DramStore(std::uint64_t capacity_bytes = 0, SimTime ttl = kNever)
        : capacity_(capacity_bytes), ttl_(ttl) {}

    std::uint64_t capacity_bytes() const noexcept { return capacity_; }
    std::uint64_t occupancy_bytes() const noexcept { return occupancy_; }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Fresh (non-stale) presence; does not touch recency.
    bool contains(const UserKey& key, SimTime now) const;

    /// Stores a spilled cache as most-recently-used, evicting LRU entries as
    /// needed. Returns evicted entries; a cache larger than the whole store
    /// is returned unstored as the only element.
    std::vector<PrefixCache> put(PrefixCache cache, SimTime now);

    /// Removes and returns a fresh entry (for reload). Stale entries are
    /// dropped and reported as absent.
    std::optional<PrefixCache> take(const UserKey& key, SimTime now);

    /// Drops a stale entry, if any, returning it.
    std::optional<PrefixCache> drop_if_stale(const UserKey& key, SimTime now);

    std::optional<PrefixCache> erase(const UserKey& key);

private:
    struct Slot {
        PrefixCache cache;
        SimTime stored_at = 0;
        std::list<UserKey>::iterator lru_pos;
    };

    bool stale(const Slot& s, SimTime now) const noexcept { return ttl_ != kNever && now - s.stored_at > ttl_; }

    std::uint64_t capacity_;
    SimTime ttl_;
    std::uint64_t occupancy_ = 0;
    std::list<UserKey> lru_;  // front = most recent
    std::unordered_map<UserKey, Slot> entries_;
};

/// Bounds concurrent DRAM->HBM reloads; excess requests wait FIFO.
struct ReloadGovernor {
    std::size_t max_concurrent_reloads = 2;
    std::size_t current_reloads = 0;
    std::deque<UserKey> pending;
};

enum class FlightKind { none, preinfer, reload };

struct UserFlightState {
    UserKey user_key;
    FlightKind in_flight = FlightKind::none;
    std::uint64_t admission_id = 0;
    bool cancelled = false;
    SimTime expires_at = kNever;
    /// Rank requests waiting for the in-flight action, in arrival order.
    std::vector<std::uint64_t> waiters;
};

enum class LookupResult { hbm_hit, dram_hit, miss };

enum class ProbeOutcome { already_in_hbm, reload_scheduled, joined_in_flight, miss };

const char* to_string(ProbeOutcome p) noexcept;

struct ReloadTicket {
    UserKey user_key;
    std::uint64_t bytes = 0;
};

struct ProbeResult {
    ProbeOutcome outcome = ProbeOutcome::miss;
    /// Set when the transfer starts immediately rather than queueing.
    std::optional<ReloadTicket> started;
};

/// A flight that ended without a usable cache.
struct FailedFlight {
    UserKey user_key;
    std::uint64_t admission_id = 0;
    std::vector<std::uint64_t> waiters;
};

struct ReloadCompletion {
    bool succeeded = false;
    /// On success the entry carries one pin per waiter; each waiter releases
    /// it with unpin() once it holds its own pin.
    std::vector<std::uint64_t> waiters;
    std::vector<ReloadTicket> started;
    std::vector<FailedFlight> failed;
};

struct TieredCacheConfig {
    std::uint64_t hbm_capacity_bytes = 0;
    std::uint64_t dram_capacity_bytes = 0;
    SimTime dram_ttl = kNever;
    bool spill_on_evict = true;
    std::size_t max_concurrent_reloads = 2;
};

struct TierStats {
    std::uint64_t inserts = 0;
    std::uint64_t evictions = 0;
    std::uint64_t spills = 0;
    std::uint64_t reloads = 0;
    std::uint64_t reload_failures = 0;
    std::uint64_t rejected_inserts = 0;
    std::uint64_t dram_evictions = 0;
};

class TieredCache {
public:
    TieredCache(TieredCacheConfig config, InstanceId instance, TraceLog* trace = nullptr);

    const HbmWindow& window() const noexcept { return window_; }
    const DramStore& dram() const noexcept { return dram_; }
    const ReloadGovernor& governor() const noexcept { return governor_; }
    const TierStats& stats() const noexcept { return stats_; }
    const TieredCacheConfig& config() const noexcept { return config_; }
    const UserFlightState* flight(const UserKey& key) const;

    /// Pure inspection: HBM first, then DRAM.
    LookupResult lookup(const UserKey& key, SimTime now) const;

    /// Inserts a freshly pre-inferred cache. Victims are spilled to DRAM when
    /// consumed and spilling is enabled, otherwise dropped.
    /// A DRAM copy of the same user is superseded and dropped. Throws
    /// AccountingError if the cache belongs to another instance.
    InsertResult insert(PrefixCache cache, std::uint64_t admission_id, SimTime expires_at, SimTime now);

    /// Moves a consumed HBM entry to DRAM. Throws LifecycleError for any
    /// other state and AccountingError for an unknown key.
    void spill(const UserKey& key, SimTime now);

    /// Marks an HBM entry consumed and returns the admission it was bound to
    /// (0 if none); the caller releases that admission. Repeat calls on a
    /// consumed entry are no-ops. Throws AccountingError for an unknown key
    /// and LifecycleError while a reload is still in transit.
    std::uint64_t mark_consumed(const UserKey& key, SimTime now);

    /// Holds an HBM entry in place while a rank reads it. Throws
    /// AccountingError for an unknown key.
    const PrefixCache& pin(const UserKey& key);
    void unpin(const UserKey& key);

    /// Unbinds admission `admission_id` from `key`'s entry or queued reload
    /// once its lifecycle window has passed. Returns true if it was bound.
    bool expire_admission(const UserKey& key, std::uint64_t admission_id);

    /// Seeds DRAM with a spilled copy (experiment setup). Throws
    /// AccountingError if the user already has a cache in either tier.
    void prewarm(PrefixCache cache, SimTime now);

    /// Probe inserted before every rank. Joins an in-flight action, reports
    /// an HBM hit, starts or queues a single reload on a DRAM hit, or misses.
    ProbeResult pseudo_preinfer(const UserKey& key, std::uint64_t waiter, SimTime now);

    /// The same probe for a real pre-infer request. On a DRAM hit the reload
    /// is admission-bound; on a miss a pre-infer flight is opened and the
    /// caller must run pre-inference, then call finish_preinfer.
    ProbeResult preinfer_probe(const UserKey& key, std::uint64_t admission_id, SimTime expires_at, SimTime now);

    /// Completes a pre-infer flight: inserts the cache and returns the ranks
    /// that waited on it. If the insert is rejected the flight fails.
    ReloadCompletion finish_preinfer(PrefixCache cache, SimTime now);

    ReloadCompletion complete_reload(const UserKey& key, SimTime now);

private:
    void log(SimTime now, const UserKey& key, TraceEventType type, Tier tier, std::uint64_t bytes,
             std::string detail = {});
    void handle_victims(std::vector<HbmEntry>& victims, SimTime now);
    void put_dram(PrefixCache cache, SimTime now);
    /// Moves the DRAM copy into a reserved HBM slot. Returns nullopt if the
    /// copy is gone or HBM has no room (the copy then stays in DRAM).
    std::optional<ReloadTicket> start_reload(const UserFlightState& flight, SimTime now);
    /// Starts or queues a reload flight; nullopt if it could not start.
    std::optional<ProbeResult> begin_reload(UserFlightState flight, SimTime now);
    void drain_governor(ReloadCompletion& out, SimTime now);

    TieredCacheConfig config_;
    InstanceId instance_;
    TraceLog* trace_;
    HbmWindow window_;
    DramStore dram_;
    ReloadGovernor governor_;
    std::unordered_map<UserKey, UserFlightState> flights_;
    TierStats stats_;
};

}  // namespace relay
