#include <gtest/gtest.h>

#include <optional>
#include <vector>

#include "fixtures.hpp"
#include "relay/metrics.hpp"
#include "relay/rng.hpp"

using namespace relay;
using relay::testing::max_abs_diff;
using relay::testing::Rig;
using relay::testing::special_config;

namespace {

const std::vector<ItemId> kItems{11, 22, 33, 44, 55, 66};

}  // namespace

TEST(Slots, SingleSlotSerializes) {
    EventLoop loop;
    SlotScheduler slots(loop, 1);
    std::vector<SimTime> done;
    for (int i = 0; i < 2; ++i) {
        slots.submit(JobClass::rank, 1000, [&](SimTime) { done.push_back(loop.now()); });
    }
    loop.run();
    EXPECT_EQ(done, (std::vector<SimTime>{1000, 2000}));
    EXPECT_EQ(slots.max_busy(), 1u);
    EXPECT_EQ(slots.busy_time(), 2000);
}

TEST(Slots, FiveSlotsNoWait) {
    EventLoop loop;
    SlotScheduler slots(loop, 5);
    std::vector<SimTime> waits;
    for (int i = 0; i < 5; ++i) {
        slots.submit(JobClass::rank, 1000, [&](SimTime q) { waits.push_back(q); });
    }
    loop.run();
    EXPECT_EQ(waits, (std::vector<SimTime>(5, 0)));
    EXPECT_EQ(slots.max_busy(), 5u);
}

TEST(Slots, RankPriority) {
    EventLoop loop;
    SlotScheduler slots(loop, 1, true);
    std::vector<JobClass> order;
    slots.submit(JobClass::pre_infer, 100, [&](SimTime) { order.push_back(JobClass::pre_infer); });
    slots.submit(JobClass::pre_infer, 100, [&](SimTime) { order.push_back(JobClass::pre_infer); });
    slots.submit(JobClass::rank, 100, [&](SimTime) { order.push_back(JobClass::rank); });
    loop.run();
    EXPECT_EQ(order, (std::vector<JobClass>{JobClass::pre_infer, JobClass::rank, JobClass::pre_infer}));
}

TEST(Slots, ZeroSlotsRejected) {
    EventLoop loop;
    EXPECT_THROW(SlotScheduler(loop, 0), ConfigError);
}

TEST(Slots, TailDelayGrowsWithUtilization) {
    double previous = -1.0;
    for (double rho : {0.3, 0.6, 0.8, 0.95}) {
        EventLoop loop;
        SlotScheduler slots(loop, 5);
        LatencyRecorder waits;
        const double service_ms = 10.0;
        const double mean_gap_ms = service_ms / (5.0 * rho);
        SplitMix64 rng(17);
        SimTime t = 0;
        for (int i = 0; i < 20000; ++i) {
            t += ms_to_time(rng.exponential(mean_gap_ms));
            loop.schedule(t, [&] {
                slots.submit(JobClass::rank, ms_to_time(rng.exponential(service_ms)),
                             [&](SimTime q) { waits.add(q); });
            });
        }
        loop.run();
        const double p99 = waits.percentile_ms(0.99);
        EXPECT_GE(p99, previous) << "rho " << rho;
        previous = p99;
    }
    EXPECT_GT(previous, 10.0);
}

TEST(SpecialInstance, PreInferThenRankUsesCache) {
    Rig rig;
    const auto pre = rig.special->handle(Request::pre_infer("u1"));
    EXPECT_EQ(pre.path, ServePath::preinfer_done);
    EXPECT_EQ(pre.detail, "computed");
    EXPECT_GT(pre.stage_latencies.pre, 0);
    const auto rank = rig.special->handle(Request::rank("u1", kItems, true));
    EXPECT_EQ(rank.path, ServePath::rank_cached_hbm);
    ASSERT_TRUE(rank.scores.has_value());
    EXPECT_LE(max_abs_diff(*rank.scores, rig.oracle("u1", kItems)), 1e-6);
    EXPECT_EQ(rank.stage_latencies.pre, 0);
    EXPECT_GT(rank.stage_latencies.rank, 0);
    EXPECT_EQ(rig.trace.count(TraceEventType::consume, "u1"), 1u);
}

TEST(SpecialInstance, RankWithoutCacheFallsBack) {
    Rig rig;
    const auto rank = rig.special->handle(Request::rank("u2", kItems, true));
    EXPECT_EQ(rank.path, ServePath::rank_fallback_full);
    ASSERT_TRUE(rank.scores.has_value());
    EXPECT_LE(max_abs_diff(*rank.scores, rig.oracle("u2", kItems)), 1e-9);
    EXPECT_EQ(rig.trace.count(TraceEventType::miss_fallback, "u2"), 1u);
}

TEST(SpecialInstance, DramHitReloadsThenRanks) {
    Rig rig;
    rig.special->prewarm("u3");
    const auto rank = rig.special->handle(Request::rank("u3", kItems, true));
    EXPECT_EQ(rank.path, ServePath::rank_cached_after_reload);
    EXPECT_GT(rank.stage_latencies.load, 0);
    EXPECT_LE(max_abs_diff(*rank.scores, rig.oracle("u3", kItems)), 1e-6);
    EXPECT_EQ(rig.trace.count(TraceEventType::reload_start, "u3"), 1u);
}

TEST(SpecialInstance, ShortUserPreInferRejected) {
    Rig rig(special_config(), 1000);
    const auto pre = rig.special->handle(Request::pre_infer("short"));
    EXPECT_EQ(pre.path, ServePath::preinfer_rejected);
    EXPECT_EQ(pre.detail, "not_at_risk");
    EXPECT_EQ(rig.special->rejections(RejectReason::not_at_risk), 1u);
}

TEST(SpecialInstance, AdmissionClosesOnConsume) {
    Rig rig;
    rig.special->handle(Request::pre_infer("u"));
    EXPECT_EQ(rig.special->admission().live_count(), 1u);
    rig.special->handle(Request::rank("u", kItems, true));
    EXPECT_EQ(rig.special->admission().live_count(), 0u);
    EXPECT_EQ(rig.special->open_admissions(), 0u);
}

TEST(SpecialInstance, AdmissionExpiresWithoutRank) {
    Rig rig;
    rig.special->handle(Request::pre_infer("u"));
    rig.loop.run();
    EXPECT_EQ(rig.special->admission().live_count(), 0u);
    EXPECT_GE(rig.loop.now(), seconds_to_time(0.3));
}

TEST(NormalInstance, FullInferenceOnly) {
    Rig rig;
    const auto o = rig.normal->handle(Request::rank("u", kItems, false));
    EXPECT_EQ(o.path, ServePath::rank_full);
    EXPECT_LE(max_abs_diff(*o.scores, rig.oracle("u", kItems)), 1e-12);
    EXPECT_THROW(rig.normal->handle(Request::pre_infer("u")), ProtocolError);
}

TEST(NormalInstance, FullCostExceedsCachedRank) {
    Rig rig(special_config(), 3000, false);
    const auto full = rig.normal->handle(Request::rank("u", kItems, false));
    rig.special->handle(Request::pre_infer("v"));
    const auto cached = rig.special->handle(Request::rank("v", kItems, true));
    EXPECT_FALSE(full.scores.has_value());
    EXPECT_GT(full.stage_latencies.rank, 4 * cached.stage_latencies.rank);
}

TEST(SpecialInstance, MalformedRequestRejected) {
    Rig rig;
    Request bad = Request::pre_infer("u");
    bad.body.items = {1};
    EXPECT_THROW(rig.special->handle(bad), ProtocolError);
}
