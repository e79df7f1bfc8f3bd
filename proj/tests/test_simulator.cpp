#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "relay/config.hpp"
#include "relay/simulator.hpp"
#include "relay/workload.hpp"

using namespace relay;

namespace {

// A few seconds of the mixed population; cheap enough to score every request.
SystemConfig small_config() {
    SystemConfig cfg = default_config();
    cfg.workload.offered_qps = 100;
    cfg.workload.horizon_s = 4;
    cfg.workload.items = 16;
    cfg.workload.long_fraction = 0.3;
    cfg.workload.refresh_prob = 0.3;
    return cfg;
}

std::uint64_t path_count(const SimReport& r, const std::string& path) {
    auto it = r.paths.find(path);
    return it == r.paths.end() ? 0 : it->second;
}

std::uint64_t rank_paths(const SimReport& r) {
    std::uint64_t n = 0;
    for (const auto& [path, count] : r.paths) {
        if (path.rfind("rank_", 0) == 0) {
            n += count;
        }
    }
    return n;
}

}  // namespace

TEST(Trace, DeterministicAndOrdered) {
    const SystemConfig cfg = small_config();
    const auto a = generate_trace(cfg.workload, cfg.cost);
    const auto b = generate_trace(cfg.workload, cfg.cost);
    ASSERT_EQ(a.size(), b.size());
    ASSERT_GT(a.size(), 200u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].user, b[i].user);
        EXPECT_EQ(a[i].rank_arrival, b[i].rank_arrival);
        EXPECT_LE(a[i].issue, a[i].preinfer_arrival);
        EXPECT_LT(a[i].preinfer_arrival, a[i].rank_arrival);
        if (i > 0) {
            EXPECT_GE(a[i].rank_arrival, a[i - 1].rank_arrival);
        }
    }
}

TEST(Trace, RateOnlyCompressesGaps) {
    SystemConfig cfg = small_config();
    cfg.workload.max_requests = 300;
    cfg.workload.horizon_s = 100;
    const auto slow = generate_trace(cfg.workload, cfg.cost);
    cfg.workload.offered_qps *= 2;
    const auto fast = generate_trace(cfg.workload, cfg.cost);
    ASSERT_EQ(slow.size(), 300u);
    ASSERT_EQ(fast.size(), 300u);
    for (std::size_t i = 0; i < slow.size(); ++i) {
        EXPECT_EQ(slow[i].user, fast[i].user);
        EXPECT_EQ(slow[i].prefix_len, fast[i].prefix_len);
    }
    EXPECT_LT(fast.back().rank_arrival, slow.back().rank_arrival);
}

TEST(Simulator, RunsAreDeterministic) {
    const SystemConfig cfg = small_config();
    EXPECT_EQ(run(cfg, Mode::relay_dram).to_json().dump(), run(cfg, Mode::relay_dram).to_json().dump());
}

TEST(Simulator, EveryRequestAccountedFor) {
    for (Mode m : {Mode::baseline, Mode::relay, Mode::relay_dram}) {
        const SimReport r = run(small_config(), m);
        EXPECT_EQ(r.completed, r.requests) << to_string(m);
        EXPECT_EQ(r.latencies.find("pipeline")->count(), r.requests);
        EXPECT_EQ(r.latencies.find("ranking")->count(), r.requests);
        EXPECT_EQ(rank_paths(r), r.requests);
        EXPECT_LE(r.max_in_flight, r.requests);
    }
}

TEST(Simulator, BaselineRunsFullInferenceOnly) {
    const SimReport r = run(small_config(), Mode::baseline);
    EXPECT_EQ(r.paths.at("rank_full"), r.requests);
    EXPECT_EQ(r.admitted, 0u);
    EXPECT_EQ(r.cache.hbm_hits + r.cache.misses, 0u);
}

TEST(Simulator, RelayScoresMatchOracleAndAuditIsClean) {
    SystemConfig cfg = small_config();
    cfg.workload.verify_scores = true;
    cfg.workload.dram_prewarm = 0.5;
    cfg.pool.churn_at_s = 2.0;
    const SimReport r = run(cfg, Mode::relay_dram);
    EXPECT_EQ(r.audit.violations(), 0u);
    EXPECT_EQ(r.audit.score_checks, r.requests);
    EXPECT_EQ(r.audit.score_violations, 0u);
    EXPECT_GT(path_count(r, "rank_cached_hbm") + path_count(r, "rank_cached_after_reload"), 0u);
    EXPECT_GT(path_count(r, "rank_fallback_full"), 0u);
}

TEST(Simulator, ProbeOutcomesSumToSpecialRanks) {
    SystemConfig cfg = small_config();
    cfg.workload.dram_prewarm = 0.5;
    const SimReport r = run(cfg, Mode::relay_dram);
    const std::uint64_t special_ranks =
        path_count(r, "rank_cached_hbm") + path_count(r, "rank_cached_after_reload") + path_count(r, "rank_fallback_full");
    EXPECT_EQ(r.cache.hbm_hits + r.cache.dram_hits + r.cache.joined + r.cache.misses, special_ranks);
    EXPECT_GE(r.cache.dram_hit_rate, 0.0);
    EXPECT_LE(r.cache.dram_hit_rate, 1.0);
}

TEST(Simulator, RelayCutsLongUserLatency) {
    SystemConfig cfg = small_config();
    cfg.workload.fixed_length = 3072;
    cfg.pool.r2 = 1.0;
    cfg.pool.router.per_server_special_cap = 2;
    const SimReport base = run(cfg, Mode::baseline);
    const SimReport relay = run(cfg, Mode::relay);
    EXPECT_LT(relay.latencies.find("ranking")->percentile_ms(0.99),
              base.latencies.find("ranking")->percentile_ms(0.99));
}

TEST(Simulator, AuditorCatchesRemoteConsume) {
    relay::testing::Rig rig;
    Auditor auditor;
    auditor.watch(*rig.special);
    TraceEvent e{10, "sp-0", "u", TraceEventType::consume, Tier::hbm, 100, "home=sp-9"};
    EXPECT_THROW(auditor.on_event(e), InvariantViolation);
    Auditor lenient(false);
    lenient.watch(*rig.special);
    lenient.on_event(e);
    EXPECT_EQ(lenient.summary().remote_fetches, 1u);
}

TEST(Simulator, AuditorCatchesPrematureEviction) {
    relay::testing::Rig rig;
    Auditor auditor(false);
    auditor.watch(*rig.special);
    auditor.on_event({0, "sp-0", "u", TraceEventType::insert, Tier::hbm, 100, "bound:1:5000"});
    auditor.on_event({100, "sp-0", "u", TraceEventType::evict, Tier::hbm, 100, "live_unconsumed"});
    EXPECT_EQ(auditor.summary().premature_evictions, 1u);
    auditor.on_event({0, "sp-0", "v", TraceEventType::insert, Tier::hbm, 100, "bound:2:5000"});
    auditor.on_event({6000, "sp-0", "v", TraceEventType::evict, Tier::hbm, 100, "live_unconsumed"});
    EXPECT_EQ(auditor.summary().premature_evictions, 1u);
}

TEST(Simulator, AuditorCatchesDuplicateReload) {
    relay::testing::Rig rig;
    Auditor auditor(false);
    auditor.watch(*rig.special);
    auditor.on_event({0, "sp-0", "u", TraceEventType::reload_start, Tier::hbm, 100, "unbound"});
    auditor.on_event({1, "sp-0", "u", TraceEventType::reload_start, Tier::hbm, 100, "unbound"});
    EXPECT_EQ(auditor.summary().single_flight_violations, 1u);
}

TEST(Simulator, AuditorCatchesAdmissionBurst) {
    relay::testing::Rig rig;
    Auditor auditor(false);
    auditor.watch(*rig.special);
    const std::uint64_t cap = rig.special->admission().plan().window_cap(0.3);
    for (std::uint64_t i = 0; i <= cap; ++i) {
        auditor.on_admit("sp-0", static_cast<SimTime>(i));
    }
    EXPECT_EQ(auditor.summary().window_rate_violations, 1u);
}

TEST(Simulator, InfeasibleCostGivesZeroMaxSeq) {
    SystemConfig cfg = small_config();
    cfg.cost.a0 = 1000.0;
    cfg.workload.fixed_length = 1024;
    EXPECT_EQ(find_max_seq(cfg, Mode::baseline), 0u);
}

TEST(Simulator, ApplyParam) {
    SystemConfig cfg = default_config();
    apply_param(cfg, "concurrency", 27);
    EXPECT_NEAR(cfg.workload.offered_qps, 200.0, 1e-9);
    apply_param(cfg, "seq_len", 3072);
    EXPECT_EQ(cfg.workload.fixed_length, 3072u);
    apply_param(cfg, "retrieval_ms", 10);
    EXPECT_DOUBLE_EQ(cfg.cost.retrieval_min_ms, 10.0);
    EXPECT_DOUBLE_EQ(cfg.cost.retrieval_max_ms, 20.0);
    apply_param(cfg, "layers", 16);
    EXPECT_EQ(cfg.kv_shape.layers, 16u);
    apply_param(cfg, "dram_hit_target", 0);
    EXPECT_EQ(cfg.cache.dram_bytes_per_server, 0u);
    EXPECT_THROW(apply_param(cfg, "dram_hit_target", 1.5), ConfigError);
    EXPECT_THROW(apply_param(cfg, "warp_factor", 1), ConfigError);
}

TEST(Simulator, ParallelSweepMatchesSerialRuns) {
    const SystemConfig cfg = small_config();
    const auto rows = sweep(cfg, "offered_qps", {50, 100}, {Mode::baseline, Mode::relay});
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& row : rows) {
        SystemConfig c = cfg;
        apply_param(c, row.param, row.value);
        EXPECT_EQ(row.report.to_json().dump(), run(c, row.mode).to_json().dump());
    }
    EXPECT_EQ(rows[0].mode, Mode::baseline);
    EXPECT_EQ(rows[1].mode, Mode::relay);
    EXPECT_DOUBLE_EQ(rows[2].value, 100.0);
}

TEST(Simulator, WritersAreStable) {
    const SimReport r = run(small_config(), Mode::relay);
    std::ostringstream a, b;
    write_summary_csv(a, {r});
    write_summary_csv(b, {r});
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, 5), "mode,");
}
