#pragma once

// Sequence-aware trigger: a metadata-only risk test plus admission control
// that bounds live caches per special instance (L = Q_admit * T_life), their
// HBM footprint (L * kv_p99 <= r1 * HBM) and the pre-infer rate
// (Q_admit <= Q_m * M, Q_max <= Q_m * M * floor(r2 * N)).

#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <variant>

#include <json.hpp>

#include "relay/common.hpp"
#include "relay/request.hpp"

namespace relay {

struct BehaviorMetadata {
    UserKey user_key;
    std::size_t prefix_len = 0;
    std::size_t feature_dim = 1;
};

struct TriggerConfig {
    std::size_t length_threshold = 4096;
    std::size_t dim_threshold = 1024;
    std::uint64_t kv_p99 = 100'000'000;       ///< bytes
    std::uint64_t hbm_bytes = 32'000'000'000;  ///< per special instance
    double r1 = 0.5;
    double q_m = 30.0;  ///< pre-infer queries/s per model slot
    std::size_t m_slots = 5;
    std::size_t n_instances = 100;
    double r2 = 0.1;
    double t_life = 0.3;  ///< seconds

    void validate() const;
};

enum class BindingConstraint { hbm, compute };

const char* to_string(BindingConstraint b) noexcept;

struct CapacityPlan {
    std::uint64_t l_max = 0;
    double q_admit_max = 0.0;
    double q_max = 0.0;
    BindingConstraint binding_constraint = BindingConstraint::compute;
    std::size_t special_instances = 0;

    /// Admissions allowed in any trailing window of length t_life.
    std::uint64_t window_cap(double t_life) const;

    nlohmann::json to_json() const;
};

bool is_at_risk(const BehaviorMetadata& meta, const TriggerConfig& cfg) noexcept;

/// Throws ConfigError when kv_p99 is zero or the config is out of range.
CapacityPlan compute_capacity_plan(const TriggerConfig& cfg);

enum class RejectReason { hbm_budget, rate_budget, not_at_risk };

const char* to_string(RejectReason r) noexcept;

struct Admitted {
    Request request;
};

struct Rejected {
    RejectReason reason;
};

using AdmissionResult = std::variant<Admitted, Rejected>;

/// Per-special-instance admission bookkeeping. Not internally synchronized;
/// an embedding service must serialize access per instance.
class AdmissionState {
public:
    AdmissionState() = default;
    explicit AdmissionState(const TriggerConfig& cfg);

    std::uint64_t live_count() const noexcept { return live_count_; }
    std::size_t live_count(const UserKey& user) const;

    /// Admissions in the trailing window (now - t_life, now].
    std::size_t admitted_in_window(SimTime now);

    SimTime clock() const noexcept { return clock_; }
    const CapacityPlan& plan() const noexcept { return plan_; }
    SimTime window() const noexcept { return window_; }
    std::uint64_t total_admitted() const noexcept { return total_admitted_; }

private:
    friend AdmissionResult try_admit(AdmissionState&, const TriggerConfig&, const BehaviorMetadata&, SimTime);
    friend void release(AdmissionState&, const UserKey&);

    void prune(SimTime now);

    CapacityPlan plan_;
    SimTime window_ = 0;
    std::uint64_t window_cap_ = 0;
    std::uint64_t live_count_ = 0;
    std::uint64_t total_admitted_ = 0;
    std::unordered_map<UserKey, std::uint32_t> live_;
    std::deque<SimTime> admissions_;
    SimTime clock_ = 0;
};

/// Admits only when one more live cache fits in the HBM budget and one more
/// admission stays within the rate budget; on Admitted both counters update
/// and a pre-infer request is returned. Non-at-risk metadata is rejected with
/// no bookkeeping at all.
AdmissionResult try_admit(AdmissionState& state, const TriggerConfig& cfg, const BehaviorMetadata& meta, SimTime now);

/// Ends one admission's live period. Throws AccountingError if the key has
/// no live admission.
void release(AdmissionState& state, const UserKey& user_key);

}  // namespace relay
