#include "relay/simulator.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cmath>
#include <exception>
#include <fmt/core.h>
#include <memory>
#include <optional>
#include <ostream>
#include <unordered_set>

#include "relay/event_loop.hpp"
#include "relay/hash.hpp"
#include "relay/rng.hpp"
#include "relay/router.hpp"
#include "relay/workload.hpp"

namespace relay {

const char* to_string(Mode m) noexcept {
    switch (m) {
        case Mode::baseline: return "baseline";
        case Mode::relay: return "relay";
        case Mode::relay_dram: return "relay_dram";
    }
    return "?";
}

Mode parse_mode(const std::string& text) {
    if (text == "baseline") return Mode::baseline;
    if (text == "relay") return Mode::relay;
    if (text == "relay_dram" || text == "relay+dram") return Mode::relay_dram;
    throw ConfigError(fmt::format("unknown mode '{}' (baseline, relay, relay_dram)", text));
}

const char* to_string(SloTarget t) noexcept {
    return t == SloTarget::pipeline ? "pipeline" : "ranking";
}

SloTarget parse_slo_target(const std::string& text) {
    if (text == "pipeline") return SloTarget::pipeline;
    if (text == "ranking") return SloTarget::ranking;
    throw ConfigError(fmt::format("unknown SLO target '{}' (pipeline, ranking)", text));
}

// ------------------------------------------------------------------ Auditor

std::uint64_t AuditSummary::violations() const noexcept {
    return remote_fetches + hbm_occupancy_violations + dram_occupancy_violations + live_count_violations +
           window_rate_violations + slot_violations + premature_evictions + single_flight_violations +
           score_violations;
}

nlohmann::json AuditSummary::to_json() const {
    return {{"events", events},
            {"admissions", admissions},
            {"remote_fetches", remote_fetches},
            {"hbm_occupancy_violations", hbm_occupancy_violations},
            {"dram_occupancy_violations", dram_occupancy_violations},
            {"live_count_violations", live_count_violations},
            {"window_rate_violations", window_rate_violations},
            {"slot_violations", slot_violations},
            {"premature_evictions", premature_evictions},
            {"single_flight_violations", single_flight_violations},
            {"score_checks", score_checks},
            {"score_violations", score_violations},
            {"max_score_deviation", max_score_deviation}};
}

void Auditor::watch(const SpecialInstance& inst) {
    Watched w;
    w.inst = &inst;
    w.l_max = inst.admission().plan().l_max;
    w.window_cap = inst.admission().plan().window_cap(inst.config().trigger.t_life);
    w.window = inst.admission().window();
    watched_[inst.id()] = std::move(w);
}

void Auditor::violation(std::uint64_t& counter, const std::string& what, const std::string& line) {
    ++counter;
    if (fail_fast_) {
        throw InvariantViolation(what, line);
    }
}

void Auditor::on_admit(const InstanceId& instance, SimTime now) {
    ++summary_.admissions;
    auto it = watched_.find(instance);
    if (it == watched_.end()) {
        return;
    }
    Watched& w = it->second;
    while (!w.admissions.empty() && w.admissions.front() <= now - w.window) {
        w.admissions.pop_front();
    }
    w.admissions.push_back(now);
    const std::string where = fmt::format("{},{},admit", now, instance);
    if (w.admissions.size() > w.window_cap) {
        violation(summary_.window_rate_violations,
                  fmt::format("admission rate: {} admissions in the trailing window, cap {}", w.admissions.size(),
                              w.window_cap),
                  where);
    }
    if (w.inst->admission().live_count() > w.l_max) {
        violation(summary_.live_count_violations,
                  fmt::format("live caches {} exceed l_max {}", w.inst->admission().live_count(), w.l_max), where);
    }
}

void Auditor::on_event(const TraceEvent& e) {
    ++summary_.events;
    auto it = watched_.find(e.instance);
    if (it == watched_.end()) {
        return;
    }
    const Watched& w = it->second;
    const TieredCache& cache = w.inst->cache();
    if (cache.window().occupancy_bytes() > cache.window().capacity_bytes()) {
        violation(summary_.hbm_occupancy_violations,
                  fmt::format("HBM occupancy {} exceeds {}", cache.window().occupancy_bytes(),
                              cache.window().capacity_bytes()),
                  e.csv_line());
    }
    if (cache.dram().occupancy_bytes() > cache.dram().capacity_bytes()) {
        violation(summary_.dram_occupancy_violations,
                  fmt::format("DRAM occupancy {} exceeds {}", cache.dram().occupancy_bytes(),
                              cache.dram().capacity_bytes()),
                  e.csv_line());
    }
    if (w.inst->admission().live_count() > w.l_max) {
        violation(summary_.live_count_violations,
                  fmt::format("live caches {} exceed l_max {}", w.inst->admission().live_count(), w.l_max),
                  e.csv_line());
    }
    if (w.inst->slots().max_busy() > w.inst->slots().m_slots()) {
        violation(summary_.slot_violations, "executing work exceeds M", e.csv_line());
    }

    const std::string k = key(e.instance, e.user_key);
    auto leave_hbm = [&] {
        resident_.erase(k);
        auto b = bound_.find(k);
        if (b == bound_.end()) {
            return;
        }
        const bool premature = e.timestamp < b->second.expires_at;
        bound_.erase(b);
        if (premature) {
            violation(summary_.premature_evictions, "live admitted cache left HBM before its lifecycle ended",
                      e.csv_line());
        }
    };

    switch (e.event) {
        case TraceEventType::insert:
        case TraceEventType::reload_start: {
            if (e.event == TraceEventType::reload_start && resident_.contains(k)) {
                violation(summary_.single_flight_violations, "reload started for a user already in HBM",
                          e.csv_line());
            }
            resident_[k] = true;
            std::uint64_t id = 0;
            long long exp = 0;
            if (std::sscanf(e.detail.c_str(), "bound:%" SCNu64 ":%lld", &id, &exp) == 2) {
                bound_[k] = Bound{id, static_cast<SimTime>(exp)};
            } else {
                bound_.erase(k);
            }
            break;
        }
        case TraceEventType::consume: {
            bound_.erase(k);
            const std::string prefix = "home=";
            const std::string home = e.detail.rfind(prefix, 0) == 0 ? e.detail.substr(prefix.size()) : "";
            if (home != e.instance) {
                violation(summary_.remote_fetches, "cache consumed away from its home instance", e.csv_line());
            }
            break;
        }
        case TraceEventType::spill:
            if (e.detail != "prewarm") {
                leave_hbm();
            }
            break;
        case TraceEventType::evict:
            if (e.tier == Tier::hbm) {
                leave_hbm();
            }
            break;
        default: break;
    }
}

void Auditor::check_scores(const ServeOutcome& o, const ScoreVector& oracle, double eps) {
    ++summary_.score_checks;
    double dev = 0.0;
    bool ok = o.scores.has_value() && o.scores->size() == oracle.size();
    if (ok) {
        for (std::size_t i = 0; i < oracle.size(); ++i) {
            dev = std::max(dev, std::abs((*o.scores)[i] - oracle[i]));
        }
        ok = dev <= eps;
    }
    summary_.max_score_deviation = std::max(summary_.max_score_deviation, dev);
    if (!ok) {
        violation(summary_.score_violations, fmt::format("scores deviate from full inference by {:.3e}", dev),
                  fmt::format("{},{},{},score,{}", o.completion, o.instance, o.user_key, to_string(o.path)));
    }
}

void Auditor::finish() {
    for (const auto& [id, w] : watched_) {
        if (w.inst->slots().max_busy() > w.inst->slots().m_slots()) {
            violation(summary_.slot_violations, "executing work exceeded M", id);
        }
    }
}

// ------------------------------------------------------------------- report

nlohmann::json CacheReport::to_json() const {
    return {{"hbm_hits", hbm_hits},
            {"dram_hits", dram_hits},
            {"joined", joined},
            {"misses", misses},
            {"preinfer_computed", preinfer_computed},
            {"preinfer_reloaded", preinfer_reloaded},
            {"preinfer_reused", preinfer_reused},
            {"reloads", reloads},
            {"reload_failures", reload_failures},
            {"evictions", evictions},
            {"spills", spills},
            {"rejected_inserts", rejected_inserts},
            {"dram_hit_rate", dram_hit_rate}};
}

double SimReport::p99_ms(SloTarget t) const {
    const LatencyRecorder* rec = latencies.find(to_string(t));
    return rec == nullptr ? 0.0 : rec->percentile_ms(0.99);
}

nlohmann::json SimReport::to_json() const {
    nlohmann::json lat = nlohmann::json::object();
    for (const auto& [name, rec] : latencies.all()) {
        lat[name] = rec.summary().to_json();
    }
    return {{"mode", to_string(mode)},
            {"seed", seed},
            {"offered_qps", offered_qps},
            {"horizon_s", horizon_s},
            {"requests", requests},
            {"at_risk_requests", at_risk_requests},
            {"completed", completed},
            {"succeeded", succeeded},
            {"success_rate", success_rate},
            {"latency", lat},
            {"paths", paths},
            {"admitted", admitted},
            {"rejected_hbm", rejected_hbm},
            {"rejected_rate", rejected_rate},
            {"cache", cache.to_json()},
            {"audit", audit.to_json()},
            {"utilization", utilization},
            {"mean_in_flight", mean_in_flight},
            {"max_in_flight", max_in_flight},
            {"pipeline_slo_met", pipeline_slo_met},
            {"ranking_slo_met", ranking_slo_met}};
}

// ---------------------------------------------------------------------- run

namespace {

constexpr std::uint64_t kPrewarmSalt = 0x7072657761726dULL;

}  // namespace

SimReport run(const SystemConfig& cfg, Mode mode, TraceLog* trace_out) {
    cfg.validate();
    const TriggerConfig trig = effective_trigger(cfg);
    const WorkloadConfig& wl = cfg.workload;
    const bool relay_mode = mode != Mode::baseline;

    InstancePool pool = InstancePool::build(cfg.pool.servers, cfg.pool.instances_per_server,
                                            relay_mode ? cfg.pool.r2 : 0.0, cfg.pool.router);
    const bool use_relay = relay_mode && pool.special_count() > 0;

    TraceLog local(false);
    TraceLog& log = trace_out != nullptr ? *trace_out : local;
    Auditor auditor(true);
    log.set_listener([&auditor](const TraceEvent& e) { auditor.on_event(e); });
    struct ListenerReset {
        TraceLog& log;
        ~ListenerReset() { log.set_listener(nullptr); }
    } reset{log};

    EventLoop loop;
    BehaviorStore store([wl](const UserKey& u) { return user_prefix_len(wl, u); }, wl.suffix);
    std::optional<Backbone> scorer;
    if (wl.verify_scores) {
        scorer.emplace(cfg.model, kernels::Exec::serial);
    }
    std::map<std::string, ServerLink> links;

    TieredCacheConfig tiers;
    tiers.hbm_capacity_bytes =
        static_cast<std::uint64_t>(std::floor(static_cast<long double>(trig.r1) * trig.hbm_bytes));
    tiers.dram_ttl = cfg.cache.dram_ttl_s > 0 ? seconds_to_time(cfg.cache.dram_ttl_s) : kNever;
    tiers.spill_on_evict = mode == Mode::relay_dram && cfg.cache.spill_on_evict;
    tiers.max_concurrent_reloads = cfg.cache.max_concurrent_reloads;

    std::unordered_map<InstanceId, std::unique_ptr<SpecialInstance>> specials;
    std::unordered_map<InstanceId, std::unique_ptr<NormalInstance>> normals;
    std::size_t total_slots = 0;
    for (const InstanceInfo& info : pool.instances()) {
        InstanceEnv env{&loop, &cfg.cost, &store, &log, scorer ? &*scorer : nullptr, &links[info.server_id]};
        InstanceConfig ic{info.instance_id, info.server_id, trig.m_slots, cfg.rank_priority, trig, tiers, cfg.kv_shape};
        if (info.kind == InstanceKind::special) {
            const std::size_t on_server = std::max<std::size_t>(1, pool.special_on_server(info.server_id));
            ic.cache.dram_capacity_bytes = mode == Mode::relay_dram ? cfg.cache.dram_bytes_per_server / on_server : 0;
            auto inst = std::make_unique<SpecialInstance>(ic, env);
            auditor.watch(*inst);
            specials.emplace(info.instance_id, std::move(inst));
        } else {
            normals.emplace(info.instance_id, std::make_unique<NormalInstance>(ic, env));
        }
        total_slots += trig.m_slots;
    }

    const std::vector<TraceRequest> trace = generate_trace(wl, cfg.cost);
    std::vector<char> at_risk(trace.size(), 0);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        at_risk[i] = use_relay && is_at_risk(store.metadata(trace[i].user), trig) ? 1 : 0;
    }

    if (mode == Mode::relay_dram && use_relay && wl.dram_prewarm > 0.0) {
        std::unordered_set<UserKey> seen;
        for (std::size_t i = 0; i < trace.size(); ++i) {
            if (!at_risk[i] || !seen.insert(trace[i].user).second) {
                continue;
            }
            SplitMix64 rng(derive_seed(wl.seed ^ kPrewarmSalt, stable_hash64(trace[i].user)));
            if (rng.uniform() < wl.dram_prewarm) {
                specials.at(*pool.owner(trace[i].user))->prewarm(trace[i].user);
            }
        }
    }

    SimReport rep;
    rep.mode = mode;
    rep.seed = wl.seed;
    rep.offered_qps = wl.offered_qps;
    rep.horizon_s = wl.horizon_s;
    rep.requests = trace.size();
    for (const char* s : {"pipeline", "ranking", "queue", "pre", "load", "rank"}) {
        rep.latencies[s];
    }
    const double eps = equivalence_epsilon(cfg.model.elem_bytes);
    const SimTime timeout = ms_to_time(cfg.slo.timeout_ms);
    long double pipeline_sum = 0;
    std::vector<std::pair<SimTime, int>> spans;
    spans.reserve(2 * trace.size());

    auto on_rank_done = [&](std::size_t idx, const ServeOutcome& o) {
        const TraceRequest& r = trace[idx];
        spans.emplace_back(r.issue, 1);
        spans.emplace_back(o.completion, -1);
        ++rep.completed;
        ++rep.paths[to_string(o.path)];
        const SimTime pipeline = o.completion - r.issue;
        pipeline_sum += pipeline;
        rep.latencies["pipeline"].add(pipeline);
        rep.latencies["ranking"].add(o.completion - r.rank_arrival);
        rep.latencies["queue"].add(o.stage_latencies.queue);
        rep.latencies["pre"].add(o.stage_latencies.pre);
        rep.latencies["load"].add(o.stage_latencies.load);
        rep.latencies["rank"].add(o.stage_latencies.rank);
        if (pipeline <= timeout) {
            ++rep.succeeded;
        }
        if (scorer) {
            const auto items = request_items(r);
            auditor.check_scores(o, scorer->full_infer(store.sequence(r.user, items, scorer->config().dim)), eps);
        }
    };

    if (use_relay && cfg.pool.churn_at_s > 0.0 && pool.special_count() > 1) {
        InstanceId victim;
        for (const InstanceInfo& info : pool.instances()) {
            if (info.kind == InstanceKind::special) {
                victim = info.instance_id;
                break;
            }
        }
        loop.schedule(seconds_to_time(cfg.pool.churn_at_s), [&pool, victim] { pool = remove_instance(pool, victim); });
    }

    for (std::size_t idx = 0; idx < trace.size(); ++idx) {
        const TraceRequest& r = trace[idx];
        if (at_risk[idx]) {
            ++rep.at_risk_requests;
            loop.schedule(r.issue, [&, idx] {
                const TraceRequest& tr = trace[idx];
                const Request pre = Request::pre_infer(tr.user);
                const RouteDecision d = route(pool, pre);
                SpecialInstance& inst = *specials.at(d.instance_id);
                const AdmissionResult res = inst.admit(store.metadata(tr.user));
                if (!std::holds_alternative<Admitted>(res)) {
                    return;
                }
                auditor.on_admit(d.instance_id, loop.now());
                loop.schedule(tr.preinfer_arrival, [&, idx, pre, inst_ptr = &inst] {
                    inst_ptr->submit(pre, trace[idx].id, [&](const ServeOutcome& o) { ++rep.paths[to_string(o.path)]; });
                });
            });
        }
        loop.schedule(r.rank_arrival, [&, idx] {
            const TraceRequest& tr = trace[idx];
            const Request req = Request::rank(tr.user, request_items(tr), at_risk[idx] != 0);
            const RouteDecision d = route(pool, req);
            auto done = [&, idx, d](const ServeOutcome& o) {
                if (d.reason == RouteReason::least_connections) {
                    finish(pool, d.instance_id);
                }
                on_rank_done(idx, o);
            };
            if (auto s = specials.find(d.instance_id); s != specials.end()) {
                s->second->submit(req, tr.id, done);
            } else {
                normals.at(d.instance_id)->submit(req, tr.id, done);
            }
        });
    }

    loop.run();
    auditor.finish();

    std::sort(spans.begin(), spans.end());
    std::int64_t level = 0;
    for (const auto& [at, delta] : spans) {
        level += delta;
        rep.max_in_flight = std::max(rep.max_in_flight, static_cast<std::size_t>(std::max<std::int64_t>(level, 0)));
    }
    rep.success_rate = rep.requests == 0 ? 0.0 : static_cast<double>(rep.succeeded) / static_cast<double>(rep.requests);
    SimTime busy = 0;
    for (const auto& [id, inst] : specials) {
        busy += inst->slots().busy_time();
        const ProbeStats& rp = inst->rank_probes();
        rep.cache.hbm_hits += rp.hbm_hits;
        rep.cache.dram_hits += rp.dram_hits;
        rep.cache.joined += rp.joined;
        rep.cache.misses += rp.misses;
        const ProbeStats& pp = inst->preinfer_probes();
        rep.cache.preinfer_computed += pp.misses;
        rep.cache.preinfer_reloaded += pp.dram_hits;
        rep.cache.preinfer_reused += pp.hbm_hits + pp.joined;
        const TierStats& st = inst->cache().stats();
        rep.cache.reloads += st.reloads;
        rep.cache.reload_failures += st.reload_failures;
        rep.cache.evictions += st.evictions;
        rep.cache.spills += st.spills;
        rep.cache.rejected_inserts += st.rejected_inserts;
        rep.rejected_hbm += inst->rejections(RejectReason::hbm_budget);
        rep.rejected_rate += inst->rejections(RejectReason::rate_budget);
    }
    for (const auto& [id, inst] : normals) {
        busy += inst->slots().busy_time();
    }
    const std::uint64_t from_dram = rep.cache.dram_hits + rep.cache.preinfer_reloaded;
    const std::uint64_t built = from_dram + rep.cache.misses + rep.cache.preinfer_computed;
    rep.cache.dram_hit_rate = built == 0 ? 0.0 : static_cast<double>(from_dram) / static_cast<double>(built);
    rep.audit = auditor.summary();
    rep.admitted = rep.audit.admissions;
    const double span = static_cast<double>(std::max<SimTime>(loop.now(), 1));
    rep.utilization = total_slots == 0 ? 0.0 : static_cast<double>(busy) / (span * static_cast<double>(total_slots));
    rep.mean_in_flight = static_cast<double>(pipeline_sum / static_cast<long double>(std::max<SimTime>(loop.now(), 1)));

    const bool enough = rep.requests > 0 && rep.completed == rep.requests && rep.success_rate >= cfg.slo.success_rate;
    rep.pipeline_slo_met = enough && rep.p99_ms(SloTarget::pipeline) <= cfg.slo.pipeline_p99_ms;
    rep.ranking_slo_met = enough && rep.p99_ms(SloTarget::ranking) <= cfg.slo.ranking_p99_ms;
    return rep;
}

// ----------------------------------------------------------------- searches

double slo_compliant_qps(const SystemConfig& cfg, Mode mode, SloTarget target) {
    auto ok = [&](double qps) {
        SystemConfig c = cfg;
        c.workload.offered_qps = qps;
        return run(c, mode).slo_met(target);
    };
    double lo = 8.0;
    if (!ok(lo)) {
        return 0.0;
    }
    double hi = lo * 2;
    while (ok(hi)) {
        lo = hi;
        hi *= 2;
        if (hi > 1e5) {
            return lo;
        }
    }
    for (int i = 0; i < 12 && (hi - lo) > 0.005 * lo; ++i) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? lo : hi) = mid;
    }
    return lo;
}

double max_concurrency(const SystemConfig& cfg, Mode mode, SloTarget target) {
    return slo_compliant_qps(cfg, mode, target) * cfg.slo.pipeline_p99_ms / 1000.0;
}

std::size_t find_max_seq(const SystemConfig& cfg, Mode mode, SloTarget target, std::size_t granularity) {
    granularity = std::max<std::size_t>(granularity, 1);
    auto ok = [&](std::size_t len) {
        SystemConfig c = cfg;
        c.workload.fixed_length = len;
        return run(c, mode).slo_met(target);
    };
    std::size_t lo = granularity;
    if (!ok(lo)) {
        return 0;
    }
    std::size_t hi = lo * 2;
    while (ok(hi)) {
        lo = hi;
        hi *= 2;
        if (hi > (std::size_t{1} << 20)) {
            return lo;
        }
    }
    while (hi - lo > granularity) {
        const std::size_t mid = lo + ((hi - lo) / 2 / granularity) * granularity;
        (ok(mid) ? lo : hi) = mid;
    }
    return lo;
}

// -------------------------------------------------------------------- sweep

const std::vector<std::string>& sweep_params() {
    static const std::vector<std::string> names{"concurrency", "offered_qps", "seq_len",   "items",
                                                "dim",         "layers",      "retrieval_ms", "dram_hit_target",
                                                "m_slots",     "t_life",      "r2",        "refresh_prob"};
    return names;
}

void apply_param(SystemConfig& cfg, const std::string& param, double value) {
    if (!std::isfinite(value) || value < 0) {
        throw ConfigError(fmt::format("sweep {}: value must be finite and nonnegative", param));
    }
    auto whole = [&]() -> std::size_t {
        if (value != std::floor(value)) {
            throw ConfigError(fmt::format("sweep {}: value must be an integer", param));
        }
        return static_cast<std::size_t>(value);
    };
    if (param == "concurrency") {
        cfg.workload.offered_qps = value / (cfg.slo.pipeline_p99_ms / 1000.0);
    } else if (param == "offered_qps") {
        cfg.workload.offered_qps = value;
    } else if (param == "seq_len") {
        cfg.workload.fixed_length = whole();
    } else if (param == "items") {
        cfg.workload.items = whole();
    } else if (param == "dim") {
        cfg.kv_shape.dim = whole();
    } else if (param == "layers") {
        cfg.kv_shape.layers = whole();
    } else if (param == "retrieval_ms") {
        cfg.cost.retrieval_min_ms = value;
        cfg.cost.retrieval_max_ms = 2 * value;
    } else if (param == "dram_hit_target") {
        if (value > 1.0) {
            throw ConfigError("sweep dram_hit_target: value is a fraction in [0, 1]");
        }
        cfg.workload.dram_prewarm = value;
        if (value == 0.0) {
            cfg.cache.dram_bytes_per_server = 0;
        }
    } else if (param == "m_slots") {
        cfg.trigger.m_slots = whole();
    } else if (param == "t_life") {
        cfg.trigger.t_life = value;
    } else if (param == "r2") {
        cfg.pool.r2 = value;
    } else if (param == "refresh_prob") {
        cfg.workload.refresh_prob = value;
    } else {
        throw ConfigError(fmt::format("unknown sweep parameter '{}'", param));
    }
}

const char* to_string(SweepMetric m) noexcept {
    switch (m) {
        case SweepMetric::report: return "report";
        case SweepMetric::qps: return "slo_qps";
        case SweepMetric::concurrency: return "max_concurrency";
        case SweepMetric::max_seq: return "max_seq_len";
    }
    return "?";
}

SweepMetric parse_sweep_metric(const std::string& text) {
    if (text == "report") return SweepMetric::report;
    if (text == "qps" || text == "slo_qps") return SweepMetric::qps;
    if (text == "concurrency" || text == "max_concurrency") return SweepMetric::concurrency;
    if (text == "max_seq" || text == "max_seq_len") return SweepMetric::max_seq;
    throw ConfigError(fmt::format("unknown sweep metric '{}' (report, qps, concurrency, max_seq)", text));
}

std::vector<SweepRow> sweep(const SystemConfig& cfg, const std::string& param, const std::vector<double>& values,
                            const std::vector<Mode>& modes, SweepMetric metric, SloTarget target) {
    std::vector<SweepRow> rows;
    std::vector<SystemConfig> configs;
    for (double v : values) {
        SystemConfig c = cfg;
        apply_param(c, param, v);
        c.validate();
        for (Mode m : modes) {
            rows.push_back(SweepRow{param, v, m, {}, 0.0});
            configs.push_back(c);
        }
    }
    std::vector<std::exception_ptr> errors(rows.size());
    const auto n = static_cast<std::int64_t>(rows.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            SweepRow& row = rows[static_cast<std::size_t>(i)];
            const SystemConfig& c = configs[static_cast<std::size_t>(i)];
            row.report = run(c, row.mode);
            switch (metric) {
                case SweepMetric::report: row.metric = row.report.p99_ms(target); break;
                case SweepMetric::qps: row.metric = slo_compliant_qps(c, row.mode, target); break;
                case SweepMetric::concurrency: row.metric = max_concurrency(c, row.mode, target); break;
                case SweepMetric::max_seq:
                    row.metric = static_cast<double>(find_max_seq(c, row.mode, target));
                    break;
            }
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return rows;
}

// ------------------------------------------------------------------ writers

void write_report_text(std::ostream& out, const SimReport& r) {
    out << fmt::format("mode              {}\n", to_string(r.mode));
    out << fmt::format("seed              {}\n", r.seed);
    out << fmt::format("offered_qps       {:.3f}\n", r.offered_qps);
    out << fmt::format("requests          {} ({} at risk, {} completed)\n", r.requests, r.at_risk_requests,
                       r.completed);
    out << fmt::format("success_rate      {:.6f}\n", r.success_rate);
    out << fmt::format("slo               pipeline {} / ranking {}\n", r.pipeline_slo_met ? "met" : "missed",
                       r.ranking_slo_met ? "met" : "missed");
    out << "latency (ms)      count      mean       p50       p90       p99       max\n";
    for (const auto& [name, rec] : r.latencies.all()) {
        const LatencySummary s = rec.summary();
        out << fmt::format("  {:<15} {:>6} {:>9.3f} {:>9.3f} {:>9.3f} {:>9.3f} {:>9.3f}\n", name, s.count, s.mean_ms,
                           s.p50_ms, s.p90_ms, s.p99_ms, s.max_ms);
    }
    out << "paths\n";
    for (const auto& [path, count] : r.paths) {
        out << fmt::format("  {:<26} {}\n", path, count);
    }
    out << fmt::format("admissions        {} admitted, {} rejected (hbm), {} rejected (rate)\n", r.admitted,
                       r.rejected_hbm, r.rejected_rate);
    const CacheReport& c = r.cache;
    out << fmt::format("rank probes       hbm {} dram {} joined {} miss {}\n", c.hbm_hits, c.dram_hits, c.joined,
                       c.misses);
    out << fmt::format("pre-infer         computed {} reloaded {} reused {}\n", c.preinfer_computed,
                       c.preinfer_reloaded, c.preinfer_reused);
    out << fmt::format("tiers             reloads {} evictions {} spills {} rejected_inserts {}\n", c.reloads,
                       c.evictions, c.spills, c.rejected_inserts);
    out << fmt::format("dram_hit_rate     {:.4f}\n", c.dram_hit_rate);
    out << fmt::format("utilization       {:.4f}\n", r.utilization);
    out << fmt::format("in_flight         mean {:.2f} max {}\n", r.mean_in_flight, r.max_in_flight);
    const AuditSummary& a = r.audit;
    out << fmt::format(
        "audit             events {} remote_fetch {} hbm_occupancy {} premature_evict {} window_rate {} "
        "single_flight {} score {}/{}\n",
        a.events, a.remote_fetches, a.hbm_occupancy_violations, a.premature_evictions, a.window_rate_violations,
        a.single_flight_violations, a.score_violations, a.score_checks);
}

void write_summary_csv(std::ostream& out, const std::vector<SimReport>& reports) {
    out << "mode,seed,offered_qps,requests,at_risk_requests,completed,success_rate,pipeline_p50_ms,"
           "pipeline_p99_ms,ranking_p50_ms,ranking_p99_ms,queue_p99_ms,pre_p99_ms,load_p99_ms,rank_p99_ms,"
           "hbm_hits,dram_hits,joined,misses,reloads,evictions,spills,dram_hit_rate,admitted,rejected_hbm,"
           "rejected_rate,utilization,mean_in_flight,pipeline_slo_met,ranking_slo_met,audit_violations\n";
    for (const SimReport& r : reports) {
        auto p = [&](const char* series, double q) {
            const LatencyRecorder* rec = r.latencies.find(series);
            return rec == nullptr ? 0.0 : rec->percentile_ms(q);
        };
        const CacheReport& c = r.cache;
        out << fmt::format(
            "{},{},{:.3f},{},{},{},{:.6f},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{},{},{},{},{},{},{},"
            "{:.6f},{},{},{},{:.6f},{:.3f},{},{},{}\n",
            to_string(r.mode), r.seed, r.offered_qps, r.requests, r.at_risk_requests, r.completed, r.success_rate,
            p("pipeline", 0.5), p("pipeline", 0.99), p("ranking", 0.5), p("ranking", 0.99), p("queue", 0.99),
            p("pre", 0.99), p("load", 0.99), p("rank", 0.99), c.hbm_hits, c.dram_hits, c.joined, c.misses, c.reloads,
            c.evictions, c.spills, c.dram_hit_rate, r.admitted, r.rejected_hbm, r.rejected_rate, r.utilization,
            r.mean_in_flight, r.pipeline_slo_met ? 1 : 0, r.ranking_slo_met ? 1 : 0, r.audit.violations());
    }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, SweepMetric metric) {
    const std::string metric_name = metric == SweepMetric::report ? "p99_ms" : to_string(metric);
    out << "param,value,mode," << metric_name
        << ",offered_qps,requests,success_rate,pipeline_p99_ms,ranking_p99_ms,dram_hit_rate,utilization\n";
    for (const SweepRow& row : rows) {
        const SimReport& r = row.report;
        out << fmt::format("{},{:.6g},{},{:.3f},{:.3f},{},{:.6f},{:.3f},{:.3f},{:.6f},{:.6f}\n", row.param, row.value,
                           to_string(row.mode), row.metric, r.offered_qps, r.requests, r.success_rate,
                           r.p99_ms(SloTarget::pipeline), r.p99_ms(SloTarget::ranking), r.cache.dram_hit_rate,
                           r.utilization);
    }
}

}  // namespace relay
