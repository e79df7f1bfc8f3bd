#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "relay/common.hpp"

namespace relay {

struct LatencySummary {
    std::size_t count = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p90_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;

    nlohmann::json to_json() const;
};

/// Stores every sample (microseconds); percentiles use the nearest-rank
/// definition on the sorted samples.
class LatencyRecorder {
public:
    void add(SimTime sample) { samples_.push_back(sample); sorted_ = false; }
    std::size_t count() const noexcept { return samples_.size(); }

    /// q in (0, 1]; 0 when empty.
    double percentile_ms(double q) const;
    LatencySummary summary() const;

    /// Nonzero buckets of width `bucket_ms` as (lower edge ms, count).
    std::vector<std::pair<double, std::size_t>> histogram(double bucket_ms) const;

private:
    void sort() const;

    mutable std::vector<SimTime> samples_;
    mutable bool sorted_ = true;
};

/// Named recorders in a fixed order, for reports and CSV.
class LatencySet {
public:
    LatencyRecorder& operator[](const std::string& name);
    const LatencyRecorder* find(const std::string& name) const;
    const std::map<std::string, LatencyRecorder>& all() const noexcept { return series_; }

    /// CSV: series,bucket_lo_ms,bucket_hi_ms,count
    void write_histograms_csv(std::ostream& out, double bucket_ms = 1.0) const;

private:
    std::map<std::string, LatencyRecorder> series_;
};

}  // namespace relay
