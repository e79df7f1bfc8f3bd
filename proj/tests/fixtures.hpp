#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "relay/cost_model.hpp"
#include "relay/event_loop.hpp"
#include "relay/instance.hpp"
#include "relay/model.hpp"
#include "relay/trace.hpp"

namespace relay::testing {

inline ModelConfig toy_model() {
    return ModelConfig{2, 16, 8, 42};
}

/// A special instance with a 16 GB window, a large DRAM tier and a small
/// scoring model, for users whose prefixes all have `prefix_len` tokens.
inline InstanceConfig special_config(std::size_t m_slots = 5) {
    InstanceConfig c;
    c.instance_id = "sp-0";
    c.server_id = "srv-0";
    c.m_slots = m_slots;
    c.trigger.length_threshold = 2048;
    c.cache.hbm_capacity_bytes = 16'000'000'000ULL;
    c.cache.dram_capacity_bytes = 500'000'000'000ULL;
    c.cache.max_concurrent_reloads = 2;
    return c;
}

struct Rig {
    EventLoop loop;
    CostModel cost = default_cost_model();
    BehaviorStore store;
    Backbone scorer{toy_model()};
    TraceLog trace;
    ServerLink link;
    std::unique_ptr<SpecialInstance> special;
    std::unique_ptr<NormalInstance> normal;

    explicit Rig(InstanceConfig cfg = special_config(), std::size_t prefix_len = 3000, bool score = true)
        : store([prefix_len](const UserKey&) { return prefix_len; }) {
        InstanceEnv env{&loop, &cost, &store, &trace, score ? &scorer : nullptr, &link};
        InstanceConfig normal_cfg = cfg;
        normal_cfg.instance_id = "nm-0";
        special = std::make_unique<SpecialInstance>(cfg, env);
        normal = std::make_unique<NormalInstance>(normal_cfg, env);
    }

    ScoreVector oracle(const UserKey& user, const std::vector<ItemId>& items) const {
        return scorer.full_infer(store.sequence(user, items, scorer.config().dim));
    }
};

inline double max_abs_diff(const ScoreVector& a, const ScoreVector& b) {
    if (a.size() != b.size()) {
        return 1e300;
    }
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(a[i] - b[i]));
    }
    return d;
}

}  // namespace relay::testing
