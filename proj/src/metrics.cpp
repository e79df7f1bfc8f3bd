#include "relay/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>
#include <numeric>
#include <ostream>

namespace relay {

nlohmann::json LatencySummary::to_json() const {
    return {{"count", count}, {"mean_ms", mean_ms}, {"p50_ms", p50_ms},
            {"p90_ms", p90_ms}, {"p99_ms", p99_ms}, {"max_ms", max_ms}};
}

void LatencyRecorder::sort() const {
    if (!sorted_) {
        std::sort(samples_.begin(), samples_.end());
        sorted_ = true;
    }
}

double LatencyRecorder::percentile_ms(double q) const {
    if (samples_.empty()) {
        return 0.0;
    }
    sort();
    const double n = static_cast<double>(samples_.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, samples_.size());
    return time_to_ms(samples_[rank - 1]);
}

LatencySummary LatencyRecorder::summary() const {
    LatencySummary s;
    s.count = samples_.size();
    if (samples_.empty()) {
        return s;
    }
    sort();
    const long double total = std::accumulate(samples_.begin(), samples_.end(), 0.0L);
    s.mean_ms = static_cast<double>(total / static_cast<long double>(samples_.size())) / 1000.0;
    s.p50_ms = percentile_ms(0.50);
    s.p90_ms = percentile_ms(0.90);
    s.p99_ms = percentile_ms(0.99);
    s.max_ms = time_to_ms(samples_.back());
    return s;
}

std::vector<std::pair<double, std::size_t>> LatencyRecorder::histogram(double bucket_ms) const {
    std::map<std::int64_t, std::size_t> buckets;
    const double width_us = bucket_ms * 1000.0;
    for (SimTime s : samples_) {
        ++buckets[static_cast<std::int64_t>(std::floor(static_cast<double>(s) / width_us))];
    }
    std::vector<std::pair<double, std::size_t>> out;
    out.reserve(buckets.size());
    for (const auto& [b, c] : buckets) {
        out.emplace_back(static_cast<double>(b) * bucket_ms, c);
    }
    return out;
}

LatencyRecorder& LatencySet::operator[](const std::string& name) {
    return series_[name];
}

const LatencyRecorder* LatencySet::find(const std::string& name) const {
    auto it = series_.find(name);
    return it == series_.end() ? nullptr : &it->second;
}

void LatencySet::write_histograms_csv(std::ostream& out, double bucket_ms) const {
    out << "series,bucket_lo_ms,bucket_hi_ms,count\n";
    for (const auto& [name, rec] : series_) {
        for (const auto& [lo, count] : rec.histogram(bucket_ms)) {
            out << fmt::format("{},{:.3f},{:.3f},{}\n", name, lo, lo + bucket_ms, count);
        }
    }
}

}  // namespace relay
