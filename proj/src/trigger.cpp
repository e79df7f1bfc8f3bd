#include "relay/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>

namespace relay {
namespace {

// floor() that tolerates representation error in products like 0.3 * 1e10.
std::uint64_t robust_floor(long double x) {
    if (x <= 0) {
        return 0;
    }
    return static_cast<std::uint64_t>(std::floor(x + 1e-9L * std::max(1.0L, x)));
}

}  // namespace

void TriggerConfig::validate() const {
    if (!(r1 >= 0.0 && r1 <= 1.0)) {
        throw ConfigError(fmt::format("trigger: r1 must lie in [0, 1], got {}", r1));
    }
    if (!(r2 >= 0.0 && r2 <= 1.0)) {
        throw ConfigError(fmt::format("trigger: r2 must lie in [0, 1], got {}", r2));
    }
    if (!(q_m >= 0.0)) {
        throw ConfigError("trigger: q_m must be nonnegative");
    }
    if (!(t_life > 0.0)) {
        throw ConfigError("trigger: t_life must be positive");
    }
    if (kv_p99 == 0) {
        throw ConfigError("trigger: kv_p99 must be positive");
    }
    if (dim_threshold == 0) {
        throw ConfigError("trigger: dim_threshold must be >= 1");
    }
}

const char* to_string(BindingConstraint b) noexcept {
    return b == BindingConstraint::hbm ? "hbm" : "compute";
}

const char* to_string(RejectReason r) noexcept {
    switch (r) {
        case RejectReason::hbm_budget: return "hbm_budget";
        case RejectReason::rate_budget: return "rate_budget";
        case RejectReason::not_at_risk: return "not_at_risk";
    }
    return "?";
}

std::uint64_t CapacityPlan::window_cap(double t_life) const {
    return robust_floor(static_cast<long double>(q_admit_max) * static_cast<long double>(t_life));
}

nlohmann::json CapacityPlan::to_json() const {
    return {
        {"l_max", l_max},
        {"q_admit_max", q_admit_max},
        {"q_max", q_max},
        {"binding_constraint", to_string(binding_constraint)},
        {"special_instances", special_instances},
    };
}

bool is_at_risk(const BehaviorMetadata& meta, const TriggerConfig& cfg) noexcept {
    return meta.prefix_len > cfg.length_threshold || meta.feature_dim > cfg.dim_threshold;
}

CapacityPlan compute_capacity_plan(const TriggerConfig& cfg) {
    cfg.validate();
    CapacityPlan plan;
    const long double reserved = static_cast<long double>(cfg.r1) * static_cast<long double>(cfg.hbm_bytes);
    plan.l_max = robust_floor(reserved / static_cast<long double>(cfg.kv_p99));

    const double hbm_rate = static_cast<double>(plan.l_max) / cfg.t_life;
    const double compute_rate = cfg.q_m * static_cast<double>(cfg.m_slots);
    plan.binding_constraint = hbm_rate < compute_rate ? BindingConstraint::hbm : BindingConstraint::compute;
    plan.q_admit_max = std::min(hbm_rate, compute_rate);

    plan.special_instances = static_cast<std::size_t>(
        robust_floor(static_cast<long double>(cfg.r2) * static_cast<long double>(cfg.n_instances)));
    plan.q_max = compute_rate * static_cast<double>(plan.special_instances);
    return plan;
}

// ---------------------------------------------------------------------------

AdmissionState::AdmissionState(const TriggerConfig& cfg)
    : plan_(compute_capacity_plan(cfg)), window_(seconds_to_time(cfg.t_life)) {
    window_cap_ = plan_.window_cap(cfg.t_life);
}

std::size_t AdmissionState::live_count(const UserKey& user) const {
    auto it = live_.find(user);
    return it == live_.end() ? 0 : it->second;
}

void AdmissionState::prune(SimTime now) {
    clock_ = std::max(clock_, now);
    while (!admissions_.empty() && admissions_.front() <= now - window_) {
        admissions_.pop_front();
    }
}

std::size_t AdmissionState::admitted_in_window(SimTime now) {
    prune(now);
    return admissions_.size();
}

AdmissionResult try_admit(AdmissionState& state, const TriggerConfig& cfg, const BehaviorMetadata& meta,
                          SimTime now) {
    if (!is_at_risk(meta, cfg)) {
        return Rejected{RejectReason::not_at_risk};
    }
    state.prune(now);
    if (state.live_count_ + 1 > state.plan_.l_max) {
        return Rejected{RejectReason::hbm_budget};
    }
    if (state.admissions_.size() + 1 > state.window_cap_) {
        return Rejected{RejectReason::rate_budget};
    }
    state.admissions_.push_back(now);
    ++state.live_count_;
    ++state.total_admitted_;
    ++state.live_[meta.user_key];
    return Admitted{Request::pre_infer(meta.user_key)};
}

void release(AdmissionState& state, const UserKey& user_key) {
    auto it = state.live_.find(user_key);
    if (it == state.live_.end()) {
        throw AccountingError(fmt::format("release: '{}' has no live admission", user_key));
    }
    if (--it->second == 0) {
        state.live_.erase(it);
    }
    --state.live_count_;
}

}  // namespace relay
