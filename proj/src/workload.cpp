#include "relay/workload.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "relay/hash.hpp"
#include "relay/rng.hpp"

namespace relay {
namespace {

constexpr std::uint64_t kLengthSalt = 0x6c656e67746873ULL;
constexpr std::uint64_t kArrivalSalt = 0x61727269766c73ULL;

SplitMix64 user_stream(const WorkloadConfig& w, const UserKey& user) {
    return SplitMix64(derive_seed(w.seed ^ kLengthSalt, stable_hash64(user)));
}

std::size_t span_draw(SplitMix64& rng, std::size_t lo, std::size_t hi_inclusive) {
    return lo + static_cast<std::size_t>(rng.below(hi_inclusive - lo + 1));
}

}  // namespace

bool is_long_user(const WorkloadConfig& w, const UserKey& user) {
    if (w.fixed_length > 0) {
        return true;
    }
    SplitMix64 rng = user_stream(w, user);
    return rng.bernoulli(w.long_fraction);
}

std::size_t user_prefix_len(const WorkloadConfig& w, const UserKey& user) {
    if (w.fixed_length > 0) {
        return w.fixed_length;
    }
    SplitMix64 rng = user_stream(w, user);
    if (rng.bernoulli(w.long_fraction)) {
        return span_draw(rng, w.long_min, w.long_max);
    }
    return span_draw(rng, w.short_min, w.short_max - 1);
}

std::vector<TraceRequest> generate_trace(const WorkloadConfig& w, const CostModel& cost) {
    std::vector<TraceRequest> out;
    const SimTime horizon = seconds_to_time(w.horizon_s);
    const SimTime offset = ms_to_time(cost.retrieval_max_ms + cost.preproc_max_ms);
    const std::uint64_t base_seed = w.seed ^ kArrivalSalt;
    out.reserve(static_cast<std::size_t>(w.offered_qps * w.horizon_s * 1.1) + 16);

    SimTime base = 0;
    for (std::uint64_t i = 0;; ++i) {
        SplitMix64 rng(derive_seed(base_seed, i));
        const double unit_gap = rng.exponential(1.0);
        base += static_cast<SimTime>(std::ceil(unit_gap * 1e6 / w.offered_qps));
        if (base >= horizon || (w.max_requests > 0 && i >= w.max_requests)) {
            break;
        }
        TraceRequest r;
        r.id = i;
        if (i > 0 && w.refresh_window > 0 && rng.bernoulli(w.refresh_prob)) {
            const std::size_t window = std::min<std::size_t>(w.refresh_window, out.size());
            r.user = out[out.size() - 1 - rng.below(window)].user;
        } else {
            r.user = "u" + std::to_string(rng.below(w.users));
        }
        r.prefix_len = user_prefix_len(w, r.user);
        const SimTime retrieval = ms_to_time(rng.uniform(cost.retrieval_min_ms, cost.retrieval_max_ms));
        const SimTime preproc = ms_to_time(rng.uniform(cost.preproc_min_ms, cost.preproc_max_ms));
        const SimTime dispatch = ms_to_time(rng.uniform(cost.dispatch_min_ms, cost.dispatch_max_ms));
        r.rank_arrival = base + offset;
        r.issue = r.rank_arrival - retrieval - preproc;
        r.preinfer_arrival = r.issue + dispatch;
        r.items = w.items;
        r.item_seed = rng.next();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ItemId> request_items(const TraceRequest& r) {
    std::vector<ItemId> items(r.items);
    SplitMix64 rng(r.item_seed);
    for (auto& it : items) {
        it = rng.below(1'000'000);
    }
    return items;
}

}  // namespace relay
