// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <json.hpp>

#include "relay/cli.hpp"
#include "relay/config.hpp"
#include "relay/cost_model.hpp"
#include "relay/instance.hpp"
#include "relay/model.hpp"
#include "relay/router.hpp"
#include "relay/simulator.hpp"
#include "relay/trigger.hpp"
#include "relay/verify.hpp"

using namespace relay;

namespace {

const std::string kConfigs = RELAY_CONFIG_DIR;
constexpr double kSweepBudgetS = 300.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool nondecreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] < v[i - 1]) {
            return false;
        }
    }
    return true;
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (double x : v) {
        s += (s.empty() ? "" : " ") + fmt::format("{:.4g}", x);
    }
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SystemConfig trend_config() {
    return load_config(kConfigs + "/trend.ini");
}

// 1
Outcome kv_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    const EquivalenceReport r = verify_equivalence(500, 2024, 8, false, EquivalenceLimits{256, 4, 32, 32, 16});
    const double secs = elapsed_s(t0);
    return {r.passed() && r.max_deviation <= 1e-6 && secs < 60.0,
            fmt::format("500 trials, max deviation {:.3e}, {:.1f} s", r.max_deviation, secs)};
}

// 2
Outcome kv_sizing() {
    const std::uint64_t b = kv_cache_bytes(8, 2048, 256, 4);
    return {b == 33'554'432u, fmt::format("{} B", b)};
}

// 3
Outcome plan_example() {
    std::ostringstream out, err;
    const int code = run_cli({"plan", "-c", kConfigs + "/plan_example.ini", "-f", "json"}, out, err);
    if (code != kExitOk) {
        return {false, "plan exited " + std::to_string(code) + ": " + err.str()};
    }
    const auto j = nlohmann::json::parse(out.str());
    const bool exact = j["l_max"] == 160 && j["q_admit_max"].get<double>() == 150.0 &&
                       j["q_max"].get<double>() == 1500.0;
    // Binding side: L / t_life vs Q_m * M crosses at t_life = 160/150 s.
    TriggerConfig t = effective_trigger(load_config(kConfigs + "/plan_example.ini"));
    t.t_life = 1.0;
    const bool below = compute_capacity_plan(t).binding_constraint == BindingConstraint::compute;
    t.t_life = 1.2;
    const bool above = compute_capacity_plan(t).binding_constraint == BindingConstraint::hbm;
    return {exact && below && above,
            fmt::format("l_max {} q_admit_max {} q_max {}; compute-bound below 160/150 s, hbm above",
                        j["l_max"].get<int>(), j["q_admit_max"].get<double>(), j["q_max"].get<double>())};
}

// 4
Outcome affinity() {
    const InstancePool pool = InstancePool::build(5, 2, 1.0, RouterConfig{128, 2, KeylessPolicy::round_robin});
    const RouteCheckReport r = route_check(pool, 100000, 4);
    const bool pass = r.special_instances == 10 && r.affinity_mismatches == 0 && r.remap_violations == 0 &&
                      r.remapped_fraction >= 0.1 / 5 && r.remapped_fraction <= 0.1 * 5;
    return {pass, fmt::format("mismatches {}, remap violations {}, remapped {:.4f}", r.affinity_mismatches,
                              r.remap_violations, r.remapped_fraction)};
}

// 5: scripted bursts against one special instance.
struct BurstRig {
    EventLoop loop;
    CostModel cost = default_cost_model();
    BehaviorStore store{[](const UserKey&) { return std::size_t{3000}; }};
    Backbone scorer{ModelConfig{2, 16, 8, 42}};
    TraceLog trace;
    ServerLink link;
    std::unique_ptr<SpecialInstance> inst;

    BurstRig() {
        InstanceConfig c;
        c.instance_id = "sp";
        c.trigger.length_threshold = 2048;
        c.cache.hbm_capacity_bytes = 16'000'000'000ULL;
        c.cache.dram_capacity_bytes = 500'000'000'000ULL;
        inst = std::make_unique<SpecialInstance>(c, InstanceEnv{&loop, &cost, &store, &trace, &scorer, &link});
    }
};

enum class Order { ranks_only, preinfer_first, ranks_first, interleaved, preinfer_mid_reload };

const char* to_string(Order o) {
    switch (o) {
        case Order::ranks_only: return "ranks-only";
        case Order::preinfer_first: return "preinfer-first";
        case Order::ranks_first: return "ranks-first";
        case Order::interleaved: return "interleaved";
        case Order::preinfer_mid_reload: return "preinfer-mid-reload";
    }
    return "?";
}

Outcome single_flight() {
    int patterns = 0;
    std::string failure;
    double max_dev = 0.0;
    for (int k : {2, 5, 10}) {
        for (Order order : {Order::ranks_only, Order::preinfer_first, Order::ranks_first, Order::interleaved,
                            Order::preinfer_mid_reload}) {
            for (bool warm : {true, false}) {
                if (!warm && order == Order::ranks_only) {
                    continue;  // nothing to reload or compute
                }
                BurstRig rig;
                const UserKey user = fmt::format("burst-{}-{}", k, static_cast<int>(order));
                if (warm) {
                    rig.inst->prewarm(user);
                }
                std::vector<ItemId> items{3, 1, 4, 1, 5, 9, 2, 6};
                std::vector<ServeOutcome> ranks;
                std::uint64_t id = 1;
                auto rank = [&] {
                    rig.inst->submit(Request::rank(user, items, true), id++,
                                     [&](const ServeOutcome& o) { ranks.push_back(o); });
                };
                auto pre = [&] { rig.inst->submit(Request::pre_infer(user), id++, [](const ServeOutcome&) {}); };
                switch (order) {
                    case Order::ranks_only:
                        for (int i = 0; i < k; ++i) rank();
                        break;
                    case Order::preinfer_first:
                        pre();
                        for (int i = 0; i < k; ++i) rank();
                        break;
                    case Order::ranks_first:
                        for (int i = 0; i < k; ++i) rank();
                        pre();
                        break;
                    case Order::interleaved:
                        for (int i = 0; i < k; ++i) {
                            rank();
                            if (i == k / 2) pre();
                        }
                        break;
                    case Order::preinfer_mid_reload:
                        rank();
                        rig.loop.schedule(rig.loop.now() + 1000, pre);
                        for (int i = 1; i < k; ++i) {
                            rig.loop.schedule(rig.loop.now() + 500 * i, rank);
                        }
                        break;
                }
                rig.loop.run();
                ++patterns;
                const std::size_t reloads = rig.trace.count(TraceEventType::reload_start, user);
                const std::size_t inserts = rig.trace.count(TraceEventType::insert, user);
                const std::size_t fallbacks = rig.trace.count(TraceEventType::miss_fallback, user);
                const auto oracle = rig.scorer.full_infer(rig.store.sequence(user, items, 16));
                bool ok = reloads <= 1 && reloads + inserts <= 1 && ranks.size() == static_cast<std::size_t>(k);
                // With a DRAM copy nothing falls back; without one only ranks
                // that beat the pre-infer may.
                if (warm && fallbacks != 0) {
                    ok = false;
                }
                for (const auto& o : ranks) {
                    if (!o.scores || o.scores->size() != oracle.size()) {
                        ok = false;
                        continue;
                    }
                    for (std::size_t i = 0; i < oracle.size(); ++i) {
                        const double d = std::abs((*o.scores)[i] - oracle[i]);
                        max_dev = std::max(max_dev, d);
                        ok = ok && d <= 1e-6;
                    }
                }
                if (!ok && failure.empty()) {
                    failure = fmt::format(" first failure: k={} {} warm={} reloads={} inserts={} fallbacks={}", k,
                                          to_string(order), warm, reloads, inserts, fallbacks);
                }
            }
        }
    }
    return {failure.empty(),
            fmt::format("{} burst patterns, max score deviation {:.2e}{}", patterns, max_dev, failure)};
}

// 6
Outcome audit() {
    SystemConfig base = load_config(kConfigs + "/desk.ini");
    const CapacityPlan plan = compute_capacity_plan(effective_trigger(base));
    const double planned_qps = plan.q_max / base.workload.long_fraction;
    base.workload.offered_qps = 0.8 * planned_qps;
    base.workload.horizon_s = 60;
    base.workload.dram_prewarm = 0.3;
    std::uint64_t events = 0, violations = 0;
    std::string failure;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SystemConfig cfg = base;
        cfg.workload.seed = seed;
        try {
            const SimReport r = run(cfg, Mode::relay_dram);
            events += r.audit.events;
            violations += r.audit.violations();
        } catch (const InvariantViolation& e) {
            ++violations;
            if (failure.empty()) {
                failure = fmt::format(" seed {}: {}", seed, e.what());
            }
        }
    }
    return {violations == 0, fmt::format("10 seeds x 60 s at {:.0f} qps, {} events audited, {} violations{}",
                                         base.workload.offered_qps, events, violations, failure)};
}

// 7
Outcome trend_max_seq() {
    const auto t0 = std::chrono::steady_clock::now();
    const SystemConfig cfg = trend_config();
    const auto base = static_cast<double>(find_max_seq(cfg, Mode::baseline));
    const auto relay = static_cast<double>(find_max_seq(cfg, Mode::relay));
    const double secs = elapsed_s(t0);
    const bool strict = cfg.cost.a2 > 0.0 ? relay > base : relay >= base;
    return {strict && secs < kSweepBudgetS,
            fmt::format("max_seq baseline {:.0f}, relay {:.0f} (a2 {:.3g}), {:.1f} s", base, relay, cfg.cost.a2, secs)};
}

Outcome trend_dram() {
    const auto t0 = std::chrono::steady_clock::now();
    SystemConfig cfg = trend_config();
    cfg.workload.fixed_length = 3072;
    const auto rows = sweep(cfg, "dram_hit_target", {0.0, 0.5, 1.0}, {Mode::relay_dram}, SweepMetric::qps,
                            SloTarget::pipeline);
    std::vector<double> qps;
    for (const auto& r : rows) {
        qps.push_back(r.metric);
    }
    const double secs = elapsed_s(t0);
    return {nondecreasing(qps) && secs < kSweepBudgetS,
            fmt::format("slo qps at dram hit targets 0/0.5/1: {}, {:.1f} s", join(qps), secs)};
}

Outcome trend_concurrency() {
    const auto t0 = std::chrono::steady_clock::now();
    const SystemConfig cfg = trend_config();
    std::vector<double> levels;
    for (int c = 20; c <= 400; c += 20) {
        levels.push_back(c);
    }
    const auto rows = sweep(cfg, "concurrency", levels, {Mode::baseline, Mode::relay});
    std::vector<double> base, relay;
    for (const auto& r : rows) {
        (r.mode == Mode::baseline ? base : relay).push_back(r.report.p99_ms(SloTarget::ranking));
    }
    auto crossing = [&](const std::vector<double>& p99) {
        for (std::size_t i = 0; i < p99.size(); ++i) {
            if (p99[i] > cfg.slo.ranking_p99_ms) {
                return levels[i];
            }
        }
        return std::numeric_limits<double>::infinity();
    };
    const double cb = crossing(base);
    const double cr = crossing(relay);
    const double secs = elapsed_s(t0);
    return {nondecreasing(base) && cb < cr && secs < kSweepBudgetS,
            fmt::format("ranking P99 crosses {} ms at concurrency {} (baseline) vs {} (relay), {:.1f} s",
                        cfg.slo.ranking_p99_ms, cb, cr, secs)};
}

Outcome trend_retrieval() {
    const auto t0 = std::chrono::steady_clock::now();
    const SystemConfig cfg = trend_config();
    const auto rows = sweep(cfg, "retrieval_ms", {0, 5, 10, 20, 40}, {Mode::baseline, Mode::relay},
                            SweepMetric::concurrency, SloTarget::ranking);
    std::vector<double> base, relay;
    for (const auto& r : rows) {
        (r.mode == Mode::baseline ? base : relay).push_back(r.metric);
    }
    bool flat = true;
    for (double b : base) {
        flat = flat && std::abs(b - base.front()) <= 0.01 * base.front();
    }
    const double secs = elapsed_s(t0);
    return {flat && nondecreasing(relay) && secs < kSweepBudgetS,
            fmt::format("max concurrency baseline [{}] relay [{}], {:.1f} s", join(base), join(relay), secs)};
}

// 8
Outcome calibration() {
    const CostModel m = default_cost_model();
    const double pre = m.pre_ms(2048, 8, 256);
    const double load = m.load_ms(kv_cache_bytes(8, 15000, 256, 4));
    const double rank = m.rank_ms(64, 2048, 8, 256);
    const bool pass = std::abs(pre - 35.0) <= 3.5 && load <= 20.0 * 1.1 && rank <= 10.0 * 1.1;
    return {pass, fmt::format("pre(2048) {:.2f} ms, load(15K tokens) {:.2f} ms, rank(2048 items) {:.2f} ms", pre,
                              load, rank)};
}

// 9
Outcome determinism() {
    const auto root = std::filesystem::temp_directory_path() / "relay-acceptance";
    std::filesystem::remove_all(root);
    const std::vector<std::string> common{"simulate", "-c",      kConfigs + "/desk.ini", "-m", "relay_dram",
                                          "--set",    "workload.dram_prewarm=0.5",       "--trace"};
    for (const char* run_name : {"a", "b"}) {
        std::vector<std::string> args = common;
        args.push_back("-o");
        args.push_back((root / run_name).string());
        std::ostringstream out, err;
        if (run_cli(args, out, err) != kExitOk) {
            return {false, "simulate failed: " + err.str()};
        }
    }
    bool same = true;
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(root / "a")) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".csv") {
            continue;
        }
        ++files;
        same = same && slurp(entry.path()) == slurp(root / "b" / name);
    }
    const bool manifests = slurp(root / "a" / "manifest.json").size() > 0;
    return {same && files >= 3 && manifests, fmt::format("{} CSV files compared byte for byte", files)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 kv-equivalence", kv_equivalence},
        {"2 kv-sizing", kv_sizing},
        {"3 capacity-plan", plan_example},
        {"4 affinity", affinity},
        {"5 single-flight", single_flight},
        {"6 audit", audit},
        {"7a trend-max-seq", trend_max_seq},
        {"7b trend-dram", trend_dram},
        {"7c trend-concurrency", trend_concurrency},
        {"7d trend-retrieval", trend_retrieval},
        {"8 calibration", calibration},
        {"9 determinism", determinism},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
