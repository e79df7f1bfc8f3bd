#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "relay/common.hpp"

namespace relay {

enum class TraceEventType {
    insert,
    consume,
    spill,
    reload_start,
    reload_end,
    evict,
    miss_fallback,
    preinfer_done,
    rank_done,
};

enum class Tier { hbm, dram, none };

const char* to_string(TraceEventType e) noexcept;
const char* to_string(Tier t) noexcept;

/// One cache or outcome record. CSV schema v1:
/// timestamp_us,instance,user_key,event,tier,bytes,detail
struct TraceEvent {
    SimTime timestamp = 0;
    InstanceId instance;
    UserKey user_key;
    TraceEventType event = TraceEventType::insert;
    Tier tier = Tier::none;
    std::uint64_t bytes = 0;
    std::string detail;

    std::string csv_line() const;
};

/// Append-only event log with an optional live listener (the auditor).
class TraceLog {
public:
    using Listener = std::function<void(const TraceEvent&)>;

    explicit TraceLog(bool keep_events = true) : keep_events_(keep_events) {}

    void record(TraceEvent event);
    void set_listener(Listener listener) { listener_ = std::move(listener); }

    const std::vector<TraceEvent>& events() const noexcept { return events_; }
    std::size_t count(TraceEventType type) const;
    std::size_t count(TraceEventType type, const UserKey& user) const;

    static const char* csv_header() noexcept;
    void write_csv(std::ostream& out) const;

private:
    bool keep_events_;
    std::vector<TraceEvent> events_;
    Listener listener_;
};

}  // namespace relay
