#include "relay/instance.hpp"

#include <algorithm>
#include <fmt/core.h>

#include "relay/hash.hpp"
#include "relay/rng.hpp"

namespace relay {

// ------------------------------------------------------------ SlotScheduler

SlotScheduler::SlotScheduler(EventLoop& loop, std::size_t m_slots, bool rank_priority)
    : loop_(loop), m_(m_slots), rank_priority_(rank_priority) {
    if (m_ == 0) {
        throw ConfigError("instance: m_slots must be >= 1");
    }
}

void SlotScheduler::submit(JobClass cls, SimTime duration, Done done) {
    Job job{cls, duration, loop_.now(), std::move(done)};
    if (busy_ < m_) {
        start(std::move(job));
        return;
    }
    if (rank_priority_ && cls == JobClass::rank) {
        rank_fifo_.push_back(std::move(job));
    } else {
        fifo_.push_back(std::move(job));
    }
}

void SlotScheduler::start(Job job) {
    ++busy_;
    max_busy_ = std::max(max_busy_, busy_);
    busy_time_ += job.duration;
    const SimTime queue_delay = loop_.now() - job.submitted;
    loop_.after(job.duration, [this, queue_delay, done = std::move(job.done)] {
        --busy_;
        std::deque<Job>& next = !rank_fifo_.empty() ? rank_fifo_ : fifo_;
        if (!next.empty()) {
            Job j = std::move(next.front());
            next.pop_front();
            start(std::move(j));
        }
        done(queue_delay);
    });
}

// ------------------------------------------------------------ BehaviorStore

BehaviorStore::BehaviorStore(LengthFn prefix_len, std::size_t suffix_len, std::size_t feature_dim, std::uint64_t seed)
    : prefix_len_(std::move(prefix_len)), suffix_len_(suffix_len), feature_dim_(feature_dim), seed_(seed) {}

BehaviorMetadata BehaviorStore::metadata(const UserKey& user) const {
    return BehaviorMetadata{user, prefix_len(user), feature_dim_};
}

SegmentedSequence BehaviorStore::sequence(const UserKey& user, std::span<const ItemId> items, std::size_t dim) const {
    const std::size_t n = prefix_len(user);
    const std::size_t scale = std::max<std::size_t>(token_scale, 1);
    const std::size_t prefix = std::clamp<std::size_t>((n + scale - 1) / scale, 1, std::max<std::size_t>(max_scored_prefix, 1));
    const std::size_t suffix = std::min(max_scored_suffix, suffix_len_);
    const std::size_t cross = suffix / 4;
    const std::uint64_t useed = derive_seed(seed_, stable_hash64(user));

    SegmentedSequence seq;
    seq.user_info = random_tokens(derive_seed(useed, 0), 1, dim);
    seq.long_term = random_tokens(derive_seed(useed, 1), prefix - 1, dim);
    seq.short_term = random_tokens(derive_seed(useed, 2), suffix - cross, dim);
    seq.cross_features = random_tokens(derive_seed(useed, 3), cross, dim);
    seq.candidates.reserve(items.size());
    for (ItemId item : items) {
        seq.candidates.push_back(random_tokens(derive_seed(seed_ ^ 0x5bd1e995ULL, item), 1, dim).front());
    }
    return seq;
}

std::size_t full_length(const BehaviorStore& store, const UserKey& user, std::size_t items) {
    return store.prefix_len(user) + store.suffix_len() + items;
}

// ----------------------------------------------------------------- outcomes

const char* to_string(ServePath p) noexcept {
    switch (p) {
        case ServePath::preinfer_done: return "preinfer_done";
        case ServePath::preinfer_rejected: return "preinfer_rejected";
        case ServePath::rank_cached_hbm: return "rank_cached_hbm";
        case ServePath::rank_cached_after_reload: return "rank_cached_after_reload";
        case ServePath::rank_fallback_full: return "rank_fallback_full";
        case ServePath::rank_full: return "rank_full";
    }
    return "?";
}

void ProbeStats::count(ProbeOutcome p) noexcept {
    switch (p) {
        case ProbeOutcome::already_in_hbm: ++hbm_hits; break;
        case ProbeOutcome::reload_scheduled: ++dram_hits; break;
        case ProbeOutcome::joined_in_flight: ++joined; break;
        case ProbeOutcome::miss: ++misses; break;
    }
}

namespace {

template <typename Instance>
ServeOutcome drive(Instance& inst, EventLoop& loop, const Request& req, std::uint64_t id) {
    std::optional<ServeOutcome> out;
    inst.submit(req, id, [&out](const ServeOutcome& o) { out = o; });
    while (!out && loop.step()) {
    }
    if (!out) {
        throw LifecycleError(fmt::format("request for '{}' never completed", req.body.user_id));
    }
    return *out;
}

void check_env(const InstanceEnv& env) {
    if (env.loop == nullptr || env.cost == nullptr || env.store == nullptr) {
        throw ConfigError("instance: loop, cost model and behavior store are required");
    }
}

}  // namespace

// ---------------------------------------------------------- SpecialInstance

SpecialInstance::SpecialInstance(InstanceConfig config, InstanceEnv env)
    : config_(std::move(config)),
      env_((check_env(env), env)),
      slots_(*env_.loop, config_.m_slots, config_.rank_priority),
      cache_(config_.cache, config_.instance_id, env_.trace),
      admission_(config_.trigger) {
    config_.kv_shape.validate();
}

std::uint64_t SpecialInstance::rejections(RejectReason r) const {
    switch (r) {
        case RejectReason::hbm_budget: return rejected_hbm_;
        case RejectReason::rate_budget: return rejected_rate_;
        case RejectReason::not_at_risk: return rejected_not_at_risk_;
    }
    return 0;
}

void SpecialInstance::trace(TraceEventType type, const UserKey& user, std::uint64_t bytes, std::string detail) {
    if (env_.trace != nullptr) {
        env_.trace->record(
            TraceEvent{env_.loop->now(), config_.instance_id, user, type, Tier::none, bytes, std::move(detail)});
    }
}

ServeOutcome SpecialInstance::outcome(std::uint64_t request_id, const Request& req, SimTime arrival,
                                      ServePath path) const {
    ServeOutcome o;
    o.request_id = request_id;
    o.user_key = req.body.user_id;
    o.instance = config_.instance_id;
    o.stage = req.body.stage;
    o.path = path;
    o.arrival = arrival;
    o.completion = env_.loop->now();
    return o;
}

AdmissionResult SpecialInstance::admit(const BehaviorMetadata& meta) {
    const SimTime now = env_.loop->now();
    AdmissionResult r = try_admit(admission_, config_.trigger, meta, now);
    if (const auto* rej = std::get_if<Rejected>(&r)) {
        switch (rej->reason) {
            case RejectReason::hbm_budget: ++rejected_hbm_; break;
            case RejectReason::rate_budget: ++rejected_rate_; break;
            case RejectReason::not_at_risk: ++rejected_not_at_risk_; break;
        }
        return r;
    }
    const std::uint64_t id = next_admission_++;
    const SimTime expires = now + seconds_to_time(config_.trigger.t_life);
    open_admissions_.emplace(id, OpenAdmission{meta.user_key, expires});
    pending_admissions_[meta.user_key].push_back(id);
    env_.loop->schedule(expires, [this, id] { expire(id); });
    return r;
}

void SpecialInstance::close_admission(std::uint64_t admission_id) {
    if (admission_id == 0) {
        return;
    }
    auto it = open_admissions_.find(admission_id);
    if (it == open_admissions_.end()) {
        return;
    }
    release(admission_, it->second.user);
    open_admissions_.erase(it);
}

void SpecialInstance::expire(std::uint64_t admission_id) {
    auto it = open_admissions_.find(admission_id);
    if (it == open_admissions_.end()) {
        return;
    }
    const UserKey user = it->second.user;
    close_admission(admission_id);
    cache_.expire_admission(user, admission_id);
    if (auto p = pending_admissions_.find(user); p != pending_admissions_.end()) {
        std::erase(p->second, admission_id);
        if (p->second.empty()) {
            pending_admissions_.erase(p);
        }
    }
}

PrefixCache SpecialInstance::make_cache(const UserKey& user) const {
    const ModelConfig& shape = config_.kv_shape;
    PrefixCache cache;
    if (env_.scorer != nullptr) {
        const SegmentedSequence seq = env_.store->sequence(user, {}, env_.scorer->config().dim);
        cache = env_.scorer->prefix_preinfer(user, seq.user_info, seq.long_term, env_.loop->now());
    }
    cache.user_key = user;
    cache.footprint = KvFootprint{shape.layers, env_.store->prefix_len(user), shape.dim, shape.elem_bytes};
    cache.byte_size = cache.footprint.bytes();
    cache.created_at = env_.loop->now();
    cache.state = CacheState::live_unconsumed;
    if (env_.scorer == nullptr) {
        cache.model_seed = shape.seed;
    }
    cache.home_instance = config_.instance_id;
    return cache;
}

void SpecialInstance::prewarm(const UserKey& user) {
    cache_.prewarm(make_cache(user), env_.loop->now());
}

void SpecialInstance::submit(const Request& req, std::uint64_t request_id, ServeCallback done) {
    req.validate();
    if (req.body.stage == Stage::pre_infer) {
        on_preinfer(req, request_id, std::move(done));
    } else {
        on_rank(req, request_id, std::move(done));
    }
}

ServeOutcome SpecialInstance::handle(const Request& req) {
    return drive(*this, *env_.loop, req, next_handle_id_++);
}

void SpecialInstance::on_preinfer(const Request& req, std::uint64_t request_id, ServeCallback done) {
    const UserKey user = req.body.user_id;
    const SimTime arrival = env_.loop->now();

    if (!pending_admissions_.contains(user)) {
        AdmissionResult r = admit(env_.store->metadata(user));
        if (const auto* rej = std::get_if<Rejected>(&r)) {
            ServeOutcome o = outcome(request_id, req, arrival, ServePath::preinfer_rejected);
            o.detail = to_string(rej->reason);
            done(o);
            return;
        }
    }
    auto pend = pending_admissions_.find(user);
    const std::uint64_t admission_id = pend->second.front();
    pend->second.pop_front();
    if (pend->second.empty()) {
        pending_admissions_.erase(pend);
    }
    const SimTime expires = open_admissions_.at(admission_id).expires_at;

    ProbeResult probe = cache_.preinfer_probe(user, admission_id, expires, arrival);
    preinfer_probes_.count(probe.outcome);
    switch (probe.outcome) {
        case ProbeOutcome::already_in_hbm:
        case ProbeOutcome::joined_in_flight: {
            close_admission(admission_id);
            ServeOutcome o = outcome(request_id, req, arrival, ServePath::preinfer_done);
            o.detail = to_string(probe.outcome);
            done(o);
            return;
        }
        case ProbeOutcome::reload_scheduled: {
            if (probe.started) {
                start_transfer(*probe.started);
            }
            ServeOutcome o = outcome(request_id, req, arrival, ServePath::preinfer_done);
            o.detail = to_string(probe.outcome);
            done(o);
            return;
        }
        case ProbeOutcome::miss: break;
    }

    const ModelConfig& shape = config_.kv_shape;
    const SimTime duration =
        ms_to_time(env_.cost->pre_ms(static_cast<double>(env_.store->prefix_len(user)), shape.layers, shape.dim));
    slots_.submit(JobClass::pre_infer, duration,
                  [this, req, request_id, arrival, duration, done = std::move(done)](SimTime queue_delay) {
                      const UserKey& u = req.body.user_id;
                      PrefixCache cache = make_cache(u);
                      const std::uint64_t bytes = cache.byte_size;
                      ReloadCompletion c = cache_.finish_preinfer(std::move(cache), env_.loop->now());
                      trace(TraceEventType::preinfer_done, u, bytes, c.succeeded ? "inserted" : "rejected");
                      ServeOutcome o = outcome(request_id, req, arrival, ServePath::preinfer_done);
                      o.stage_latencies.queue = queue_delay;
                      o.stage_latencies.pre = duration;
                      o.detail = c.succeeded ? "computed" : "window_full";
                      settle(std::move(c));
                      done(o);
                  });
}

void SpecialInstance::on_rank(const Request& req, std::uint64_t request_id, ServeCallback done) {
    const SimTime now = env_.loop->now();
    RankCtx ctx;
    ctx.request_id = request_id;
    ctx.request = req;
    ctx.arrival = now;
    ctx.wait_start = now;
    ctx.done = std::move(done);

    const UserKey& user = req.body.user_id;
    const std::uint64_t waiter = next_waiter_++;
    ProbeResult probe = cache_.pseudo_preinfer(user, waiter, now);
    rank_probes_.count(probe.outcome);
    switch (probe.outcome) {
        case ProbeOutcome::already_in_hbm:
            rank_cached(std::move(ctx), ServePath::rank_cached_hbm);
            return;
        case ProbeOutcome::joined_in_flight:
        case ProbeOutcome::reload_scheduled:
            ctx.waited_on = cache_.flight(user)->in_flight;
            waiting_.emplace(waiter, std::move(ctx));
            if (probe.started) {
                start_transfer(*probe.started);
            }
            return;
        case ProbeOutcome::miss:
            fallback(std::move(ctx));
            return;
    }
}

void SpecialInstance::rank_cached(RankCtx ctx, ServePath path) {
    const UserKey user = ctx.request.body.user_id;
    const SimTime now = env_.loop->now();
    close_admission(cache_.mark_consumed(user, now));
    PrefixCache snapshot = cache_.pin(user);

    const ModelConfig& shape = config_.kv_shape;
    const SimTime duration =
        ms_to_time(env_.cost->rank_ms(static_cast<double>(env_.store->suffix_len()),
                                      static_cast<double>(ctx.request.body.items.size()), shape.layers, shape.dim));
    slots_.submit(JobClass::rank, duration,
                  [this, ctx = std::move(ctx), snapshot = std::move(snapshot), path, duration](SimTime queue_delay) {
                      const UserKey& u = ctx.request.body.user_id;
                      ServeOutcome o = outcome(ctx.request_id, ctx.request, ctx.arrival, path);
                      o.stage_latencies = ctx.lat;
                      o.stage_latencies.queue += queue_delay;
                      o.stage_latencies.rank = duration;
                      if (env_.scorer != nullptr) {
                          const SegmentedSequence seq =
                              env_.store->sequence(u, ctx.request.body.items, env_.scorer->config().dim);
                          o.scores =
                              env_.scorer->rank_with_cache(snapshot, seq.short_term, seq.cross_features, seq.candidates);
                      }
                      cache_.unpin(u);
                      trace(TraceEventType::rank_done, u, 0, to_string(path));
                      ctx.done(o);
                  });
}

void SpecialInstance::fallback(RankCtx ctx) {
    const UserKey user = ctx.request.body.user_id;
    trace(TraceEventType::miss_fallback, user, 0, "full_infer");
    const ModelConfig& shape = config_.kv_shape;
    const std::size_t n = full_length(*env_.store, user, ctx.request.body.items.size());
    const SimTime duration = ms_to_time(env_.cost->full_ms(static_cast<double>(n), shape.layers, shape.dim));
    slots_.submit(JobClass::rank, duration, [this, ctx = std::move(ctx), duration](SimTime queue_delay) {
        const UserKey& u = ctx.request.body.user_id;
        ServeOutcome o = outcome(ctx.request_id, ctx.request, ctx.arrival, ServePath::rank_fallback_full);
        o.stage_latencies = ctx.lat;
        o.stage_latencies.queue += queue_delay;
        o.stage_latencies.rank = duration;
        if (env_.scorer != nullptr) {
            o.scores = env_.scorer->full_infer(env_.store->sequence(u, ctx.request.body.items, env_.scorer->config().dim));
        }
        trace(TraceEventType::rank_done, u, 0, "rank_fallback_full");
        ctx.done(o);
    });
}

void SpecialInstance::start_transfer(const ReloadTicket& ticket) {
    std::size_t sharers = 1;
    if (env_.link != nullptr) {
        sharers = ++env_.link->active_reloads;
    }
    const SimTime duration = ms_to_time(env_.cost->load_ms(ticket.bytes, sharers));
    env_.loop->after(duration, [this, key = ticket.user_key] {
        if (env_.link != nullptr) {
            --env_.link->active_reloads;
        }
        settle(cache_.complete_reload(key, env_.loop->now()));
    });
}

void SpecialInstance::settle(ReloadCompletion completion) {
    for (const auto& ticket : completion.started) {
        start_transfer(ticket);
    }
    const SimTime now = env_.loop->now();
    auto take = [&](std::uint64_t waiter) {
        auto node = waiting_.extract(waiter);
        if (node.empty()) {
            throw AccountingError(fmt::format("unknown waiter {}", waiter));
        }
        RankCtx ctx = std::move(node.mapped());
        const SimTime waited = now - ctx.wait_start;
        if (ctx.waited_on == FlightKind::reload) {
            ctx.lat.load += waited;
        } else {
            ctx.lat.pre += waited;
        }
        return ctx;
    };
    for (std::uint64_t w : completion.waiters) {
        RankCtx ctx = take(w);
        const ServePath path = ctx.waited_on == FlightKind::reload ? ServePath::rank_cached_after_reload
                                                                   : ServePath::rank_cached_hbm;
        const UserKey user = ctx.request.body.user_id;
        rank_cached(std::move(ctx), path);
        cache_.unpin(user);
    }
    for (auto& failed : completion.failed) {
        close_admission(failed.admission_id);
        for (std::uint64_t w : failed.waiters) {
            fallback(take(w));
        }
    }
}

// ----------------------------------------------------------- NormalInstance

NormalInstance::NormalInstance(InstanceConfig config, InstanceEnv env)
    : config_(std::move(config)),
      env_((check_env(env), env)),
      slots_(*env_.loop, config_.m_slots, config_.rank_priority) {}

void NormalInstance::submit(const Request& req, std::uint64_t request_id, ServeCallback done) {
    req.validate();
    if (req.body.stage != Stage::rank) {
        throw ProtocolError(fmt::format("normal instance '{}' does not accept pre-infer requests", id()));
    }
    const SimTime arrival = env_.loop->now();
    const ModelConfig& shape = config_.kv_shape;
    const std::size_t n = full_length(*env_.store, req.body.user_id, req.body.items.size());
    const SimTime duration = ms_to_time(env_.cost->full_ms(static_cast<double>(n), shape.layers, shape.dim));
    slots_.submit(JobClass::rank, duration,
                  [this, req, request_id, arrival, duration, done = std::move(done)](SimTime queue_delay) {
                      ServeOutcome o;
                      o.request_id = request_id;
                      o.user_key = req.body.user_id;
                      o.instance = config_.instance_id;
                      o.stage = Stage::rank;
                      o.path = ServePath::rank_full;
                      o.arrival = arrival;
                      o.completion = env_.loop->now();
                      o.stage_latencies.queue = queue_delay;
                      o.stage_latencies.rank = duration;
                      if (env_.scorer != nullptr) {
                          o.scores = env_.scorer->full_infer(
                              env_.store->sequence(req.body.user_id, req.body.items, env_.scorer->config().dim));
                      }
                      if (env_.trace != nullptr) {
                          env_.trace->record(TraceEvent{o.completion, config_.instance_id, o.user_key,
                                                        TraceEventType::rank_done, Tier::none, 0, "rank_full"});
                      }
                      done(o);
                  });
}

ServeOutcome NormalInstance::handle(const Request& req) {
    return drive(*this, *env_.loop, req, next_handle_id_++);
}

}  // namespace relay
