#include "relay/trace.hpp"

#include <algorithm>
#include <fmt/core.h>
#include <ostream>

namespace relay {

const char* to_string(TraceEventType e) noexcept {
    switch (e) {
        case TraceEventType::insert: return "insert";
        case TraceEventType::consume: return "consume";
        case TraceEventType::spill: return "spill";
        case TraceEventType::reload_start: return "reload_start";
        case TraceEventType::reload_end: return "reload_end";
        case TraceEventType::evict: return "evict";
        case TraceEventType::miss_fallback: return "miss_fallback";
        case TraceEventType::preinfer_done: return "preinfer_done";
        case TraceEventType::rank_done: return "rank_done";
    }
    return "?";
}

const char* to_string(Tier t) noexcept {
    switch (t) {
        case Tier::hbm: return "hbm";
        case Tier::dram: return "dram";
        case Tier::none: return "none";
    }
    return "?";
}

std::string TraceEvent::csv_line() const {
    return fmt::format("{},{},{},{},{},{},{}", timestamp, instance, user_key, to_string(event), to_string(tier), bytes,
                       detail);
}

void TraceLog::record(TraceEvent event) {
    if (listener_) {
        listener_(event);
    }
    if (keep_events_) {
        events_.push_back(std::move(event));
    }
}

std::size_t TraceLog::count(TraceEventType type) const {
    return static_cast<std::size_t>(
        std::count_if(events_.begin(), events_.end(), [&](const TraceEvent& e) { return e.event == type; }));
}

std::size_t TraceLog::count(TraceEventType type, const UserKey& user) const {
    return static_cast<std::size_t>(std::count_if(events_.begin(), events_.end(), [&](const TraceEvent& e) {
        return e.event == type && e.user_key == user;
    }));
}

const char* TraceLog::csv_header() noexcept {
    return "timestamp_us,instance,user_key,event,tier,bytes,detail";
}

void TraceLog::write_csv(std::ostream& out) const {
    out << csv_header() << '\n';
    for (const auto& e : events_) {
        out << e.csv_line() << '\n';
    }
}

}  // namespace relay
