#include "relay/cache_tiers.hpp"

#include <algorithm>
#include <fmt/core.h>

namespace relay {

// ---------------------------------------------------------------- HbmWindow

HbmEntry* HbmWindow::find(const UserKey& key) {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

const HbmEntry* HbmWindow::find(const UserKey& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

bool HbmWindow::is_protected(const HbmEntry& e, SimTime now) noexcept {
    if (e.pins > 0) {
        return true;
    }
    if (now >= e.expires_at) {
        return false;
    }
    return e.admission_id != 0 || e.cache.state == CacheState::live_unconsumed;
}

namespace {

// Eviction class: 0 consumed, 1 expired live, 2 cancellable in-transit.
int victim_class(const HbmEntry& e) {
    if (e.in_transit) {
        return 2;
    }
    if (e.cache.state == CacheState::live_unconsumed) {
        return 1;
    }
    return 0;
}

}  // namespace

InsertResult HbmWindow::insert(HbmEntry entry, SimTime now) {
    const std::uint64_t bytes = entry.cache.byte_size;
    if (bytes > capacity_) {
        throw OversizeError(
            fmt::format("cache for '{}' is {} B, HBM window holds {} B", entry.cache.user_key, bytes, capacity_));
    }
    if (entries_.contains(entry.cache.user_key)) {
        throw AccountingError(fmt::format("cache for '{}' already resident in HBM", entry.cache.user_key));
    }

    InsertResult result;
    if (occupancy_ + bytes > capacity_) {
        const std::uint64_t need = occupancy_ + bytes - capacity_;
        std::vector<const HbmEntry*> candidates;
        for (const auto& [key, e] : entries_) {
            if (!is_protected(e, now)) {
                candidates.push_back(&e);
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const HbmEntry* a, const HbmEntry* b) {
            const int ca = victim_class(*a);
            const int cb = victim_class(*b);
            if (ca != cb) {
                return ca < cb;
            }
            if (ca == 0 && a->consumed_at != b->consumed_at) {
                return a->consumed_at < b->consumed_at;
            }
            return a->seq < b->seq;
        });
        std::uint64_t freed = 0;
        std::size_t take = 0;
        while (take < candidates.size() && freed < need) {
            freed += candidates[take]->cache.byte_size;
            ++take;
        }
        if (freed < need) {
            result.status = InsertStatus::rejected;
            return result;
        }
        std::vector<UserKey> keys;
        keys.reserve(take);
        for (std::size_t i = 0; i < take; ++i) {
            keys.push_back(candidates[i]->cache.user_key);
        }
        for (const auto& k : keys) {
            result.victims.push_back(*erase(k));
        }
        result.status = InsertStatus::inserted_after_eviction;
    }

    entry.seq = next_seq_++;
    occupancy_ += bytes;
    UserKey key = entry.cache.user_key;
    entries_.emplace(std::move(key), std::move(entry));
    return result;
}

std::optional<HbmEntry> HbmWindow::erase(const UserKey& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    HbmEntry e = std::move(it->second);
    entries_.erase(it);
    occupancy_ -= e.cache.byte_size;
    return e;
}

std::vector<const HbmEntry*> HbmWindow::entries() const {
    std::vector<const HbmEntry*> out;
    out.reserve(entries_.size());
    for (const auto& [key, e] : entries_) {
        out.push_back(&e);
    }
    std::sort(out.begin(), out.end(), [](const HbmEntry* a, const HbmEntry* b) { return a->seq < b->seq; });
    return out;
}

// ---------------------------------------------------------------- DramStore

bool DramStore::contains(const UserKey& key, SimTime now) const {
    auto it = entries_.find(key);
    return it != entries_.end() && !stale(it->second, now);
}

std::vector<PrefixCache> DramStore::put(PrefixCache cache, SimTime now) {
    std::vector<PrefixCache> evicted;
    if (auto old = erase(cache.user_key)) {
        evicted.push_back(std::move(*old));
    }
    if (cache.byte_size > capacity_) {
        evicted.push_back(std::move(cache));
        return evicted;
    }
    while (occupancy_ + cache.byte_size > capacity_) {
        evicted.push_back(*erase(lru_.back()));
    }
    lru_.push_front(cache.user_key);
    occupancy_ += cache.byte_size;
    UserKey key = cache.user_key;
    entries_.emplace(std::move(key), Slot{std::move(cache), now, lru_.begin()});
    return evicted;
}

std::optional<PrefixCache> DramStore::take(const UserKey& key, SimTime now) {
    auto it = entries_.find(key);
    if (it == entries_.end() || stale(it->second, now)) {
        return std::nullopt;
    }
    return erase(key);
}

std::optional<PrefixCache> DramStore::drop_if_stale(const UserKey& key, SimTime now) {
    auto it = entries_.find(key);
    if (it == entries_.end() || !stale(it->second, now)) {
        return std::nullopt;
    }
    return erase(key);
}

std::optional<PrefixCache> DramStore::erase(const UserKey& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    PrefixCache cache = std::move(it->second.cache);
    lru_.erase(it->second.lru_pos);
    occupancy_ -= cache.byte_size;
    entries_.erase(it);
    return cache;
}

// -------------------------------------------------------------- TieredCache

const char* to_string(ProbeOutcome p) noexcept {
    switch (p) {
        case ProbeOutcome::already_in_hbm: return "already_in_hbm";
        case ProbeOutcome::reload_scheduled: return "reload_scheduled";
        case ProbeOutcome::joined_in_flight: return "joined_in_flight";
        case ProbeOutcome::miss: return "miss";
    }
    return "?";
}

TieredCache::TieredCache(TieredCacheConfig config, InstanceId instance, TraceLog* trace)
    : config_(config),
      instance_(std::move(instance)),
      trace_(trace),
      window_(config.hbm_capacity_bytes),
      dram_(config.dram_capacity_bytes, config.dram_ttl) {
    if (config_.max_concurrent_reloads == 0) {
        throw ConfigError("cache: max_concurrent_reloads must be >= 1");
    }
    governor_.max_concurrent_reloads = config_.max_concurrent_reloads;
}

const UserFlightState* TieredCache::flight(const UserKey& key) const {
    auto it = flights_.find(key);
    return it == flights_.end() ? nullptr : &it->second;
}

void TieredCache::log(SimTime now, const UserKey& key, TraceEventType type, Tier tier, std::uint64_t bytes,
                      std::string detail) {
    if (trace_ != nullptr) {
        trace_->record(TraceEvent{now, instance_, key, type, tier, bytes, std::move(detail)});
    }
}

namespace {

std::string bind_detail(std::uint64_t admission_id, SimTime expires_at) {
    if (admission_id == 0) {
        return "unbound";
    }
    return fmt::format("bound:{}:{}", admission_id, expires_at);
}

}  // namespace

LookupResult TieredCache::lookup(const UserKey& key, SimTime now) const {
    const HbmEntry* e = window_.find(key);
    if (e != nullptr && !e->in_transit) {
        return LookupResult::hbm_hit;
    }
    if (dram_.contains(key, now)) {
        return LookupResult::dram_hit;
    }
    return LookupResult::miss;
}

void TieredCache::put_dram(PrefixCache cache, SimTime now) {
    const UserKey key = cache.user_key;
    auto evicted = dram_.put(std::move(cache), now);
    for (auto& victim : evicted) {
        ++stats_.dram_evictions;
        const bool self = victim.user_key == key;
        victim.transition(CacheState::evicted);
        log(now, victim.user_key, TraceEventType::evict, Tier::dram, victim.byte_size, self ? "oversize" : "lru");
    }
}

void TieredCache::handle_victims(std::vector<HbmEntry>& victims, SimTime now) {
    for (auto& v : victims) {
        ++stats_.evictions;
        PrefixCache& c = v.cache;
        if (v.in_transit) {
            // Cancel the transfer; the copy goes back to DRAM and the waiting
            // ranks fall back when the completion fires.
            auto it = flights_.find(c.user_key);
            if (it != flights_.end()) {
                it->second.cancelled = true;
            }
            c.transition(CacheState::spilled);
            log(now, c.user_key, TraceEventType::evict, Tier::hbm, c.byte_size, "cancel_reload");
            put_dram(std::move(c), now);
            continue;
        }
        const bool reusable = c.state == CacheState::consumed || c.state == CacheState::reloading;
        if (reusable && config_.spill_on_evict) {
            ++stats_.spills;
            const std::string from = to_string(c.state);
            c.transition(CacheState::spilled);
            log(now, c.user_key, TraceEventType::spill, Tier::dram, c.byte_size, from);
            put_dram(std::move(c), now);
        } else {
            const std::string from = to_string(c.state);
            c.transition(CacheState::evicted);
            log(now, c.user_key, TraceEventType::evict, Tier::hbm, c.byte_size, from);
        }
    }
}

InsertResult TieredCache::insert(PrefixCache cache, std::uint64_t admission_id, SimTime expires_at, SimTime now) {
    if (cache.home_instance.empty()) {
        cache.home_instance = instance_;
    } else if (cache.home_instance != instance_) {
        throw AccountingError(fmt::format("cache for '{}' belongs to '{}', not '{}'", cache.user_key,
                                          cache.home_instance, instance_));
    }
    if (auto old = dram_.erase(cache.user_key)) {
        old->transition(CacheState::evicted);
        log(now, old->user_key, TraceEventType::evict, Tier::dram, old->byte_size, "superseded");
    }
    const UserKey key = cache.user_key;
    const std::uint64_t bytes = cache.byte_size;
    HbmEntry entry{std::move(cache), admission_id, expires_at, false, 0, 0, 0};
    InsertResult r = window_.insert(std::move(entry), now);
    if (r.status == InsertStatus::rejected) {
        ++stats_.rejected_inserts;
        return r;
    }
    ++stats_.inserts;
    handle_victims(r.victims, now);
    log(now, key, TraceEventType::insert, Tier::hbm, bytes, bind_detail(admission_id, expires_at));
    return r;
}

void TieredCache::spill(const UserKey& key, SimTime now) {
    HbmEntry* e = window_.find(key);
    if (e == nullptr) {
        throw AccountingError(fmt::format("spill: no HBM cache for '{}'", key));
    }
    if (e->cache.state != CacheState::consumed || e->in_transit) {
        throw LifecycleError(fmt::format("spill: cache for '{}' is {}", key, to_string(e->cache.state)));
    }
    HbmEntry out = *window_.erase(key);
    ++stats_.spills;
    out.cache.transition(CacheState::spilled);
    log(now, key, TraceEventType::spill, Tier::dram, out.cache.byte_size, "consumed");
    put_dram(std::move(out.cache), now);
}

std::uint64_t TieredCache::mark_consumed(const UserKey& key, SimTime now) {
    HbmEntry* e = window_.find(key);
    if (e == nullptr) {
        throw AccountingError(fmt::format("consume: no HBM cache for '{}'", key));
    }
    if (e->in_transit) {
        throw LifecycleError(fmt::format("consume: reload for '{}' still in transit", key));
    }
    if (e->cache.state == CacheState::consumed) {
        return 0;
    }
    e->cache.transition(CacheState::consumed);
    e->consumed_at = now;
    const std::uint64_t released = e->admission_id;
    e->admission_id = 0;
    log(now, key, TraceEventType::consume, Tier::hbm, e->cache.byte_size, "home=" + e->cache.home_instance);
    return released;
}

const PrefixCache& TieredCache::pin(const UserKey& key) {
    HbmEntry* e = window_.find(key);
    if (e == nullptr || e->in_transit) {
        throw AccountingError(fmt::format("pin: no resident HBM cache for '{}'", key));
    }
    ++e->pins;
    return e->cache;
}

void TieredCache::unpin(const UserKey& key) {
    HbmEntry* e = window_.find(key);
    if (e == nullptr || e->pins == 0) {
        throw AccountingError(fmt::format("unpin: '{}' is not pinned", key));
    }
    --e->pins;
}

bool TieredCache::expire_admission(const UserKey& key, std::uint64_t admission_id) {
    if (admission_id == 0) {
        return false;
    }
    if (HbmEntry* e = window_.find(key); e != nullptr && e->admission_id == admission_id) {
        e->admission_id = 0;
        return true;
    }
    if (auto it = flights_.find(key); it != flights_.end() && it->second.admission_id == admission_id) {
        it->second.admission_id = 0;
        return true;
    }
    return false;
}

std::optional<ReloadTicket> TieredCache::start_reload(const UserFlightState& flight, SimTime now) {
    auto cache = dram_.take(flight.user_key, now);
    if (!cache) {
        return std::nullopt;
    }
    cache->transition(CacheState::reloading);
    const std::uint64_t bytes = cache->byte_size;
    HbmEntry entry{*cache, flight.admission_id, flight.expires_at, true, 0, 0, 0};
    InsertResult r = window_.insert(std::move(entry), now);
    if (r.status == InsertStatus::rejected) {
        ++stats_.rejected_inserts;
        cache->transition(CacheState::spilled);
        put_dram(std::move(*cache), now);
        return std::nullopt;
    }
    ++stats_.reloads;
    handle_victims(r.victims, now);
    log(now, flight.user_key, TraceEventType::reload_start, Tier::hbm, bytes,
        bind_detail(flight.admission_id, flight.expires_at));
    return ReloadTicket{flight.user_key, bytes};
}

std::optional<ProbeResult> TieredCache::begin_reload(UserFlightState flight, SimTime now) {
    flight.in_flight = FlightKind::reload;
    const UserKey key = flight.user_key;
    if (governor_.current_reloads < governor_.max_concurrent_reloads) {
        auto ticket = start_reload(flight, now);
        if (!ticket) {
            return std::nullopt;
        }
        ++governor_.current_reloads;
        flights_.emplace(key, std::move(flight));
        return ProbeResult{ProbeOutcome::reload_scheduled, std::move(ticket)};
    }
    governor_.pending.push_back(key);
    flights_.emplace(key, std::move(flight));
    return ProbeResult{ProbeOutcome::reload_scheduled, std::nullopt};
}

void TieredCache::prewarm(PrefixCache cache, SimTime now) {
    if (window_.contains(cache.user_key) || dram_.contains(cache.user_key, now)) {
        throw AccountingError(fmt::format("prewarm: '{}' already cached", cache.user_key));
    }
    if (cache.home_instance.empty()) {
        cache.home_instance = instance_;
    }
    if (cache.state == CacheState::live_unconsumed) {
        cache.transition(CacheState::consumed);
    }
    cache.transition(CacheState::spilled);
    log(now, cache.user_key, TraceEventType::spill, Tier::dram, cache.byte_size, "prewarm");
    put_dram(std::move(cache), now);
}

ProbeResult TieredCache::pseudo_preinfer(const UserKey& key, std::uint64_t waiter, SimTime now) {
    if (auto it = flights_.find(key); it != flights_.end()) {
        it->second.waiters.push_back(waiter);
        return ProbeResult{ProbeOutcome::joined_in_flight, std::nullopt};
    }
    if (lookup(key, now) == LookupResult::hbm_hit) {
        return ProbeResult{ProbeOutcome::already_in_hbm, std::nullopt};
    }
    if (dram_.contains(key, now)) {
        UserFlightState f;
        f.user_key = key;
        f.waiters.push_back(waiter);
        if (auto r = begin_reload(std::move(f), now)) {
            return *r;
        }
    } else if (auto stale = dram_.drop_if_stale(key, now)) {
        stale->transition(CacheState::evicted);
        log(now, key, TraceEventType::evict, Tier::dram, stale->byte_size, "ttl");
    }
    return ProbeResult{ProbeOutcome::miss, std::nullopt};
}

ProbeResult TieredCache::preinfer_probe(const UserKey& key, std::uint64_t admission_id, SimTime expires_at,
                                        SimTime now) {
    if (flights_.contains(key)) {
        return ProbeResult{ProbeOutcome::joined_in_flight, std::nullopt};
    }
    if (lookup(key, now) == LookupResult::hbm_hit) {
        return ProbeResult{ProbeOutcome::already_in_hbm, std::nullopt};
    }
    UserFlightState f;
    f.user_key = key;
    f.admission_id = admission_id;
    f.expires_at = expires_at;
    if (dram_.contains(key, now)) {
        if (auto r = begin_reload(f, now)) {
            return *r;
        }
    } else if (auto stale = dram_.drop_if_stale(key, now)) {
        stale->transition(CacheState::evicted);
        log(now, key, TraceEventType::evict, Tier::dram, stale->byte_size, "ttl");
    }
    f.in_flight = FlightKind::preinfer;
    flights_.emplace(key, std::move(f));
    return ProbeResult{ProbeOutcome::miss, std::nullopt};
}

ReloadCompletion TieredCache::finish_preinfer(PrefixCache cache, SimTime now) {
    auto it = flights_.find(cache.user_key);
    if (it == flights_.end() || it->second.in_flight != FlightKind::preinfer) {
        throw AccountingError(fmt::format("finish_preinfer: no pre-infer in flight for '{}'", cache.user_key));
    }
    UserFlightState f = std::move(it->second);
    flights_.erase(it);

    ReloadCompletion out;
    const UserKey key = cache.user_key;
    const std::uint64_t bytes = cache.byte_size;
    InsertResult r = insert(std::move(cache), f.admission_id, f.expires_at, now);
    if (r.status == InsertStatus::rejected) {
        log(now, key, TraceEventType::evict, Tier::none, bytes, "window_full");
        out.failed.push_back(FailedFlight{key, f.admission_id, std::move(f.waiters)});
        return out;
    }
    out.succeeded = true;
    out.waiters = std::move(f.waiters);
    window_.find(key)->pins += out.waiters.size();
    return out;
}

void TieredCache::drain_governor(ReloadCompletion& out, SimTime now) {
    while (governor_.current_reloads < governor_.max_concurrent_reloads && !governor_.pending.empty()) {
        const UserKey key = governor_.pending.front();
        governor_.pending.pop_front();
        auto it = flights_.find(key);
        if (it == flights_.end()) {
            continue;
        }
        if (auto ticket = start_reload(it->second, now)) {
            ++governor_.current_reloads;
            out.started.push_back(std::move(*ticket));
        } else {
            ++stats_.reload_failures;
            out.failed.push_back(FailedFlight{key, it->second.admission_id, std::move(it->second.waiters)});
            flights_.erase(it);
        }
    }
}

ReloadCompletion TieredCache::complete_reload(const UserKey& key, SimTime now) {
    auto it = flights_.find(key);
    if (it == flights_.end() || it->second.in_flight != FlightKind::reload) {
        throw AccountingError(fmt::format("complete_reload: no reload in flight for '{}'", key));
    }
    if (governor_.current_reloads == 0) {
        throw AccountingError("complete_reload: governor has no active reload");
    }
    --governor_.current_reloads;
    UserFlightState f = std::move(it->second);
    flights_.erase(it);

    ReloadCompletion out;
    HbmEntry* e = window_.find(key);
    if (!f.cancelled && e != nullptr && e->in_transit) {
        e->in_transit = false;
        out.succeeded = true;
        out.waiters = std::move(f.waiters);
        // Hold the entry for its waiters; the governor drain below inserts
        // other reloads and must not pick it as a victim.
        e->pins += out.waiters.size();
        log(now, key, TraceEventType::reload_end, Tier::hbm, e->cache.byte_size, "");
    } else {
        ++stats_.reload_failures;
        out.failed.push_back(FailedFlight{key, f.admission_id, std::move(f.waiters)});
    }
    drain_governor(out, now);
    return out;
}

}  // namespace relay
