#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace relay {

/// Simulation clock: integer microseconds.
using SimTime = std::int64_t;

/// Opaque user identifier; also the consistent-hash key.
using UserKey = std::string;

using InstanceId = std::string;

constexpr SimTime kMicrosPerMilli = 1000;
constexpr SimTime kMicrosPerSecond = 1000000;

/// Converts a millisecond cost to clock ticks, rounding up.
inline SimTime ms_to_time(double ms) {
    if (!(ms > 0.0)) {
        return 0;
    }
    return static_cast<SimTime>(std::ceil(ms * static_cast<double>(kMicrosPerMilli) - 1e-9));
}

inline SimTime seconds_to_time(double s) {
    return ms_to_time(s * 1000.0);
}

inline double time_to_ms(SimTime t) {
    return static_cast<double>(t) / static_cast<double>(kMicrosPerMilli);
}

inline double time_to_seconds(SimTime t) {
    return static_cast<double>(t) / static_cast<double>(kMicrosPerSecond);
}

// Error taxonomy. Rejections that are part of normal operation (admission,
// window-full) are values, not exceptions.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class StaleCacheError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class AccountingError : public Error {
public:
    using Error::Error;
};

class LifecycleError : public Error {
public:
    using Error::Error;
};

class OversizeError : public Error {
public:
    using Error::Error;
};

class PoolError : public Error {
public:
    using Error::Error;
};

class NoCapacityError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Raised by the simulator's auditor; carries the offending trace line.
class InvariantViolation : public Error {
public:
    InvariantViolation(const std::string& what, std::string trace_line)
        : Error(what + " at [" + trace_line + "]"), trace_line_(std::move(trace_line)) {}

    const std::string& trace_line() const noexcept { return trace_line_; }

private:
    std::string trace_line_;
};

}  // namespace relay
