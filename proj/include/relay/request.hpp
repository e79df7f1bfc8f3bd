#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relay/common.hpp"

namespace relay {

enum class Stage { pre_infer, rank };

const char* to_string(Stage stage) noexcept;
Stage parse_stage(const std::string& text);

using ItemId = std::uint64_t;

/// Header key under which the affinity key travels.
inline constexpr const char* kConsistencyHashKey = "consistency-hash-key";

struct RequestHeader {
    std::optional<UserKey> consistency_hash_key;
};

struct RequestBody {
    UserKey user_id;
    Stage stage = Stage::rank;
    std::vector<ItemId> items;
};

/// Wire-shaped unit of work. Long-sequence requests carry the user id both
/// as the header hash key and in the body.
struct Request {
    RequestHeader header;
    RequestBody body;

    bool keyed() const noexcept { return header.consistency_hash_key.has_value(); }

    /// Response-free pre-infer signal: keyed, no candidate items.
    static Request pre_infer(const UserKey& user);
    static Request rank(const UserKey& user, std::vector<ItemId> items, bool keyed);

    /// Throws ProtocolError on a malformed request.
    void validate() const;

    nlohmann::json to_json() const;
    static Request from_json(const nlohmann::json& j);
};

}  // namespace relay
