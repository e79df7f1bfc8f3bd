#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include <fmt/core.h>

#include "relay/common.hpp"

namespace relay {

/// Discrete-event loop. Events fire in (timestamp, creation order), so runs
/// are fully deterministic.
class EventLoop {
public:
    using Action = std::function<void()>;

    SimTime now() const noexcept { return now_; }
    std::size_t pending() const noexcept { return queue_.size(); }
    std::uint64_t processed() const noexcept { return processed_; }

    void schedule(SimTime at, Action action) {
        if (at < now_) {
            throw LifecycleError(fmt::format("event scheduled in the past ({} < {})", at, now_));
        }
        queue_.push(Item{at, next_seq_++, std::move(action)});
    }

    void after(SimTime delay, Action action) { schedule(now_ + delay, std::move(action)); }

    /// Fires the next event; false when none remain.
    bool step() {
        if (queue_.empty()) {
            return false;
        }
        Item item = queue_.top();
        queue_.pop();
        now_ = item.at;
        ++processed_;
        item.action();
        return true;
    }

    void run() {
        while (step()) {
        }
    }

private:
    struct Item {
        SimTime at;
        std::uint64_t seq;
        Action action;
    };

    struct Later {
        bool operator()(const Item& a, const Item& b) const noexcept {
            return a.at != b.at ? a.at > b.at : a.seq > b.seq;
        }
    };

    SimTime now_ = 0;
    std::uint64_t next_seq_ = 0;
    std::uint64_t processed_ = 0;
    std::priority_queue<Item, std::vector<Item>, Later> queue_;
};

}  // namespace relay
