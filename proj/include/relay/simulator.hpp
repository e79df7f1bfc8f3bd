#pragma once

// Deterministic discrete-event simulation of the ranking tier.
//
// baseline:   every request runs full inference on a normal instance.
// relay:      at-risk users are pre-inferred on their special instance during
//             retrieval and ranked on the cache; no DRAM tier.
// relay_dram: relay plus DRAM spill and reload.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "relay/config.hpp"
#include "relay/instance.hpp"
#include "relay/metrics.hpp"
#include "relay/trace.hpp"

namespace relay {

enum class Mode { baseline, relay, relay_dram };

const char* to_string(Mode m) noexcept;
Mode parse_mode(const std::string& text);

/// Which P99 budget a run is judged against.
enum class SloTarget { pipeline, ranking };

const char* to_string(SloTarget t) noexcept;
SloTarget parse_slo_target(const std::string& text);

struct AuditSummary {
    std::uint64_t events = 0;
    std::uint64_t admissions = 0;
    std::uint64_t remote_fetches = 0;
    std::uint64_t hbm_occupancy_violations = 0;
    std::uint64_t dram_occupancy_violations = 0;
    std::uint64_t live_count_violations = 0;
    std::uint64_t window_rate_violations = 0;
    std::uint64_t slot_violations = 0;
    std::uint64_t premature_evictions = 0;
    std::uint64_t single_flight_violations = 0;
    std::uint64_t score_checks = 0;
    std::uint64_t score_violations = 0;
    double max_score_deviation = 0.0;

    std::uint64_t violations() const noexcept;
    nlohmann::json to_json() const;
};

/// Checks at every trace event that no rank fetches a remote cache and that
/// footprint and admitted load stay within the plan. With `fail_fast` the first
/// violation throws InvariantViolation carrying the offending trace line.
class Auditor {
public:
    explicit Auditor(bool fail_fast = true) : fail_fast_(fail_fast) {}

    void watch(const SpecialInstance& inst);

    /// Records one admission on `instance` at `now` against the trailing
    /// window budget.
    void on_admit(const InstanceId& instance, SimTime now);
    void on_event(const TraceEvent& e);
    void check_scores(const ServeOutcome& o, const ScoreVector& oracle, double eps);
    /// End-of-run checks on state that is not event driven.
    void finish();

    const AuditSummary& summary() const noexcept { return summary_; }

private:
    struct Watched {
        const SpecialInstance* inst = nullptr;
        std::uint64_t l_max = 0;
        std::uint64_t window_cap = 0;
        SimTime window = 0;
        std::deque<SimTime> admissions;
    };
    struct Bound {
        std::uint64_t admission_id = 0;
        SimTime expires_at = 0;
    };

    void violation(std::uint64_t& counter, const std::string& what, const std::string& line);
    static std::string key(const InstanceId& inst, const UserKey& user) { return inst + '\x1f' + user; }

    bool fail_fast_;
    AuditSummary summary_;
    std::unordered_map<InstanceId, Watched> watched_;
    std::unordered_map<std::string, Bound> bound_;
    std::unordered_map<std::string, bool> resident_;
};

/// Probe outcomes on the rank path (they sum to the rank requests served by
/// special instances) plus how pre-infer requests built their caches.
struct CacheReport {
    std::uint64_t hbm_hits = 0;
    std::uint64_t dram_hits = 0;
    std::uint64_t joined = 0;
    std::uint64_t misses = 0;
    std::uint64_t preinfer_computed = 0;
    std::uint64_t preinfer_reloaded = 0;
    std::uint64_t preinfer_reused = 0;
    std::uint64_t reloads = 0;
    std::uint64_t reload_failures = 0;
    std::uint64_t evictions = 0;
    std::uint64_t spills = 0;
    std::uint64_t rejected_inserts = 0;
    /// Share of cache-building probes served from DRAM instead of compute.
    double dram_hit_rate = 0.0;

    nlohmann::json to_json() const;
};

struct SimReport {
    Mode mode = Mode::relay;
    std::uint64_t seed = 0;
    double offered_qps = 0.0;
    double horizon_s = 0.0;
    std::size_t requests = 0;
    std::size_t at_risk_requests = 0;
    std::size_t completed = 0;
    std::size_t succeeded = 0;
    double success_rate = 0.0;
    /// Series: pipeline, ranking, queue, pre, load, rank.
    LatencySet latencies;
    std::map<std::string, std::uint64_t> paths;
    std::uint64_t admitted = 0;
    std::uint64_t rejected_hbm = 0;
    std::uint64_t rejected_rate = 0;
    CacheReport cache;
    AuditSummary audit;
    /// Busy slot time over available slot time.
    double utilization = 0.0;
    /// Requests between trigger and rank completion: time average and peak.
    double mean_in_flight = 0.0;
    std::size_t max_in_flight = 0;
    bool pipeline_slo_met = false;
    bool ranking_slo_met = false;

    double p99_ms(SloTarget t) const;
    bool slo_met(SloTarget t) const { return t == SloTarget::pipeline ? pipeline_slo_met : ranking_slo_met; }
    nlohmann::json to_json() const;
};

/// One simulated run. Events go to `trace_out` when given. Throws
/// InvariantViolation when the auditor trips.
SimReport run(const SystemConfig& cfg, Mode mode, TraceLog* trace_out = nullptr);

/// Largest offered rate meeting the target's P99 budget and the success
/// rate; 0 when even the lowest probed rate fails.
double slo_compliant_qps(const SystemConfig& cfg, Mode mode, SloTarget target = SloTarget::pipeline);

/// SLO-compliant rate expressed as requests in flight over one pipeline
/// budget.
double max_concurrency(const SystemConfig& cfg, Mode mode, SloTarget target = SloTarget::ranking);

/// Largest fixed prefix length meeting the target at the configured rate;
/// 0 when the shortest probed length fails.
std::size_t find_max_seq(const SystemConfig& cfg, Mode mode, SloTarget target = SloTarget::pipeline,
                         std::size_t granularity = 16);

/// Sweepable knobs: concurrency, offered_qps, seq_len, items, dim, layers,
/// retrieval_ms, dram_hit_target, m_slots, t_life, r2, refresh_prob.
void apply_param(SystemConfig& cfg, const std::string& param, double value);
const std::vector<std::string>& sweep_params();

enum class SweepMetric { report, qps, concurrency, max_seq };

const char* to_string(SweepMetric m) noexcept;
SweepMetric parse_sweep_metric(const std::string& text);

struct SweepRow {
    std::string param;
    double value = 0.0;
    Mode mode = Mode::relay;
    SimReport report;
    /// Search result for qps / concurrency / max_seq metrics.
    double metric = 0.0;
};

/// One row per (value, mode), in that order; runs execute in parallel.
std::vector<SweepRow> sweep(const SystemConfig& cfg, const std::string& param, const std::vector<double>& values,
                            const std::vector<Mode>& modes, SweepMetric metric = SweepMetric::report,
                            SloTarget target = SloTarget::pipeline);

// Writers. Numbers use fixed precision so equal runs give equal bytes.
void write_report_text(std::ostream& out, const SimReport& r);
void write_summary_csv(std::ostream& out, const std::vector<SimReport>& reports);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, SweepMetric metric);

}  // namespace relay
