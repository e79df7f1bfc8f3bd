#include <gtest/gtest.h>

#include <deque>
#include <string>
#include <variant>

#include "relay/rng.hpp"
#include "relay/trigger.hpp"

using namespace relay;

namespace {

TriggerConfig example_config() {
    TriggerConfig c;
    c.q_m = 30;
    c.m_slots = 5;
    c.kv_p99 = 100'000'000;
    c.hbm_bytes = 32'000'000'000ULL;
    c.r1 = 0.5;
    c.n_instances = 100;
    c.r2 = 0.1;
    c.t_life = 0.3;
    return c;
}

BehaviorMetadata meta(const std::string& user, std::size_t len = 5000, std::size_t dim = 1) {
    return BehaviorMetadata{user, len, dim};
}

bool admitted(const AdmissionResult& r) {
    return std::holds_alternative<Admitted>(r);
}

RejectReason reason(const AdmissionResult& r) {
    return std::get<Rejected>(r).reason;
}

}  // namespace

TEST(AtRisk, LengthThreshold) {
    const TriggerConfig c = example_config();
    EXPECT_FALSE(is_at_risk(meta("a", 1000), c));
    EXPECT_FALSE(is_at_risk(meta("a", 4096), c));
    EXPECT_TRUE(is_at_risk(meta("a", 4097), c));
    EXPECT_TRUE(is_at_risk(meta("a", 5000), c));
}

TEST(AtRisk, DimensionThreshold) {
    const TriggerConfig c = example_config();
    EXPECT_FALSE(is_at_risk(meta("a", 10, 1024), c));
    EXPECT_TRUE(is_at_risk(meta("a", 10, 1025), c));
}

TEST(Plan, WorkedExample) {
    const CapacityPlan p = compute_capacity_plan(example_config());
    EXPECT_EQ(p.l_max, 160u);
    EXPECT_DOUBLE_EQ(p.q_admit_max, 150.0);
    EXPECT_DOUBLE_EQ(p.q_max, 1500.0);
    EXPECT_EQ(p.special_instances, 10u);
    EXPECT_EQ(p.binding_constraint, BindingConstraint::compute);
    EXPECT_EQ(p.window_cap(0.3), 45u);
}

TEST(Plan, ModerateLifetimeStaysComputeBound) {
    TriggerConfig c = example_config();
    c.t_life = 0.4;
    const CapacityPlan p = compute_capacity_plan(c);
    EXPECT_DOUBLE_EQ(p.q_admit_max, 150.0);
    EXPECT_EQ(p.binding_constraint, BindingConstraint::compute);
}

TEST(Plan, HbmBindsWhenCachesLiveLong) {
    TriggerConfig c = example_config();
    c.t_life = 2.0;
    const CapacityPlan p = compute_capacity_plan(c);
    EXPECT_EQ(p.l_max, 160u);
    EXPECT_DOUBLE_EQ(p.q_admit_max, 80.0);
    EXPECT_EQ(p.binding_constraint, BindingConstraint::hbm);
    // The cluster rate bound counts compute only.
    EXPECT_DOUBLE_EQ(p.q_max, 1500.0);
}

TEST(Plan, ZeroReservationAdmitsNothing) {
    TriggerConfig c = example_config();
    c.r1 = 0.0;
    const CapacityPlan p = compute_capacity_plan(c);
    EXPECT_EQ(p.l_max, 0u);
    EXPECT_DOUBLE_EQ(p.q_admit_max, 0.0);
    AdmissionState s(c);
    EXPECT_EQ(reason(try_admit(s, c, meta("u"), 0)), RejectReason::hbm_budget);
}

TEST(Plan, InvalidConfigs) {
    TriggerConfig c = example_config();
    c.kv_p99 = 0;
    EXPECT_THROW(compute_capacity_plan(c), ConfigError);
    c = example_config();
    c.r1 = 1.5;
    EXPECT_THROW(compute_capacity_plan(c), ConfigError);
    c = example_config();
    c.t_life = 0.0;
    EXPECT_THROW(compute_capacity_plan(c), ConfigError);
}

TEST(Plan, MonotoneInResources) {
    SplitMix64 rng(5);
    for (int i = 0; i < 300; ++i) {
        TriggerConfig c = example_config();
        c.hbm_bytes = 1'000'000'000ULL * (1 + rng.below(80));
        c.r1 = rng.uniform(0.05, 1.0);
        c.q_m = 1 + static_cast<double>(rng.below(60));
        c.m_slots = 1 + rng.below(8);
        c.t_life = rng.uniform(0.05, 3.0);
        c.r2 = rng.uniform(0.0, 1.0);
        const CapacityPlan base = compute_capacity_plan(c);

        TriggerConfig more = c;
        more.hbm_bytes *= 2;
        EXPECT_GE(compute_capacity_plan(more).l_max, base.l_max);
        EXPECT_GE(compute_capacity_plan(more).q_admit_max, base.q_admit_max);

        more = c;
        more.m_slots += 1;
        EXPECT_GE(compute_capacity_plan(more).q_max, base.q_max);
        EXPECT_GE(compute_capacity_plan(more).q_admit_max, base.q_admit_max);

        EXPECT_LE(base.q_admit_max, c.q_m * static_cast<double>(c.m_slots) + 1e-9);
        EXPECT_LE(static_cast<double>(base.l_max) * static_cast<double>(c.kv_p99),
                  c.r1 * static_cast<double>(c.hbm_bytes) + 1.0);
    }
}

TEST(Admission, AdmittedCarriesPreInferRequest) {
    const TriggerConfig c = example_config();
    AdmissionState s(c);
    const AdmissionResult r = try_admit(s, c, meta("u1"), 0);
    ASSERT_TRUE(admitted(r));
    const Request& req = std::get<Admitted>(r).request;
    EXPECT_EQ(req.body.stage, Stage::pre_infer);
    EXPECT_EQ(req.header.consistency_hash_key, std::optional<UserKey>("u1"));
    EXPECT_TRUE(req.body.items.empty());
    EXPECT_EQ(s.live_count(), 1u);
    EXPECT_EQ(s.live_count("u1"), 1u);
}

TEST(Admission, NotAtRiskLeavesNoTrace) {
    const TriggerConfig c = example_config();
    AdmissionState s(c);
    EXPECT_EQ(reason(try_admit(s, c, meta("u", 100), 0)), RejectReason::not_at_risk);
    EXPECT_EQ(s.live_count(), 0u);
    EXPECT_EQ(s.admitted_in_window(0), 0u);
}

TEST(Admission, HbmBudgetAtLiveMax) {
    TriggerConfig c = example_config();
    c.q_m = 1e6;  // take the rate bound out of the picture
    AdmissionState s(c);
    for (int i = 0; i < 160; ++i) {
        ASSERT_TRUE(admitted(try_admit(s, c, meta("u" + std::to_string(i)), i * 1000)));
    }
    EXPECT_EQ(s.live_count(), 160u);
    EXPECT_EQ(reason(try_admit(s, c, meta("x"), 200000)), RejectReason::hbm_budget);
    // Past the window the rate budget is free again; only live caches count.
    EXPECT_EQ(reason(try_admit(s, c, meta("x"), 600000)), RejectReason::hbm_budget);
    release(s, "u0");
    EXPECT_TRUE(admitted(try_admit(s, c, meta("x"), 600000)));
}

TEST(Admission, WindowRateBudget) {
    const TriggerConfig c = example_config();
    AdmissionState s(c);
    // 45 per 0.3 s window.
    for (int i = 0; i < 45; ++i) {
        ASSERT_TRUE(admitted(try_admit(s, c, meta("u" + std::to_string(i)), 0)));
        release(s, "u" + std::to_string(i));
    }
    EXPECT_EQ(reason(try_admit(s, c, meta("late"), 299'999)), RejectReason::rate_budget);
    EXPECT_TRUE(admitted(try_admit(s, c, meta("late"), 300'000)));
}

TEST(Admission, SustainedOverloadStaysWithinCap) {
    const TriggerConfig c = example_config();
    AdmissionState s(c);
    const SimTime window = seconds_to_time(c.t_life);
    std::deque<SimTime> accepted;
    std::deque<std::string> live;
    std::size_t total = 0;
    // Offer 300/s (twice the admit cap) for 20 s; each admission lives 0.3 s.
    for (SimTime t = 0; t < 20 * kMicrosPerSecond; t += kMicrosPerSecond / 300) {
        while (!live.empty() && accepted.front() <= t - window) {
            release(s, live.front());
            live.pop_front();
            accepted.pop_front();
        }
        const std::string user = "u" + std::to_string(t);
        if (admitted(try_admit(s, c, meta(user), t))) {
            accepted.push_back(t);
            live.push_back(user);
            ++total;
            std::size_t in_window = 0;
            for (SimTime a : accepted) {
                in_window += a > t - window ? 1 : 0;
            }
            ASSERT_LE(in_window, 45u);
        }
    }
    const double rate = static_cast<double>(total) / 20.0;
    EXPECT_LE(rate, 150.0 * 1.01);
    EXPECT_GE(rate, 150.0 * 0.9);
}

TEST(Admission, ReleaseErrors) {
    const TriggerConfig c = example_config();
    AdmissionState s(c);
    EXPECT_THROW(release(s, "nobody"), AccountingError);
    ASSERT_TRUE(admitted(try_admit(s, c, meta("u"), 0)));
    release(s, "u");
    EXPECT_THROW(release(s, "u"), AccountingError);
}

TEST(Admission, RandomAdmitReleaseKeepsCountsConsistent) {
    TriggerConfig c = example_config();
    c.q_m = 1e6;
    AdmissionState s(c);
    SplitMix64 rng(9);
    std::vector<std::string> live;
    SimTime now = 0;
    for (int i = 0; i < 5000; ++i) {
        now += static_cast<SimTime>(rng.below(2000));
        if (live.empty() || rng.bernoulli(0.55)) {
            const std::string user = "u" + std::to_string(rng.below(50));
            if (admitted(try_admit(s, c, meta(user), now))) {
                live.push_back(user);
            }
        } else {
            const std::size_t pick = rng.below(live.size());
            release(s, live[pick]);
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        ASSERT_EQ(s.live_count(), live.size());
        ASSERT_LE(s.live_count(), s.plan().l_max);
    }
}
