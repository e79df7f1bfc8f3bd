#include "relay/request.hpp"

#include <fmt/core.h>

namespace relay {

const char* to_string(Stage stage) noexcept {
    return stage == Stage::pre_infer ? "pre-infer" : "rank";
}

Stage parse_stage(const std::string& text) {
    if (text == "pre-infer") {
        return Stage::pre_infer;
    }
    if (text == "rank") {
        return Stage::rank;
    }
    throw ProtocolError(fmt::format("unknown stage '{}'", text));
}

Request Request::pre_infer(const UserKey& user) {
    Request r;
    r.header.consistency_hash_key = user;
    r.body.user_id = user;
    r.body.stage = Stage::pre_infer;
    return r;
}

Request Request::rank(const UserKey& user, std::vector<ItemId> items, bool keyed) {
    Request r;
    if (keyed) {
        r.header.consistency_hash_key = user;
    }
    r.body.user_id = user;
    r.body.stage = Stage::rank;
    r.body.items = std::move(items);
    return r;
}

void Request::validate() const {
    if (body.user_id.empty()) {
        throw ProtocolError("request body has no user_id");
    }
    if (body.stage == Stage::pre_infer) {
        if (!body.items.empty()) {
            throw ProtocolError("pre-infer request must not carry candidate items");
        }
        if (!keyed()) {
            throw ProtocolError("pre-infer request must carry a consistency-hash-key");
        }
    } else if (body.items.empty()) {
        throw ProtocolError(fmt::format("rank request for '{}' has no candidate items", body.user_id));
    }
    if (keyed() && *header.consistency_hash_key != body.user_id) {
        throw ProtocolError("consistency-hash-key does not match body user_id");
    }
}

nlohmann::json Request::to_json() const {
    nlohmann::json header_json = nlohmann::json::object();
    if (header.consistency_hash_key) {
        header_json[kConsistencyHashKey] = *header.consistency_hash_key;
    }
    return {
        {"header", header_json},
        {"body", {{"user_id", body.user_id}, {"stage", to_string(body.stage)}, {"items", body.items}}},
    };
}

Request Request::from_json(const nlohmann::json& j) {
    Request r;
    const auto& h = j.at("header");
    if (h.contains(kConsistencyHashKey)) {
        r.header.consistency_hash_key = h.at(kConsistencyHashKey).get<std::string>();
    }
    const auto& b = j.at("body");
    r.body.user_id = b.at("user_id").get<std::string>();
    r.body.stage = parse_stage(b.at("stage").get<std::string>());
    if (b.contains("items")) {
        r.body.items = b.at("items").get<std::vector<ItemId>>();
    }
    return r;
}

}  // namespace relay
