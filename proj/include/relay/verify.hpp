#pragma once

// Randomized check that ranking on a prefix cache reproduces full inference.

#include <cstddef>
#include <cstdint>
#include <optional>

#include <json.hpp>

#include "relay/model.hpp"

namespace relay {

struct EquivalenceLimits {
    std::size_t max_prefix = 256;
    std::size_t max_layers = 4;
    std::size_t max_dim = 32;
    std::size_t max_suffix = 32;
    std::size_t max_candidates = 16;
};

struct EquivalenceReport {
    std::size_t trials = 0;
    std::size_t failures = 0;
    double max_deviation = 0.0;
    double epsilon = 0.0;

    bool passed() const noexcept { return failures == 0; }
    nlohmann::json to_json() const;
};

/// Runs `trials` random instances. Shapes are drawn within `limits` unless
/// `shape` fixes layers and width. With `corrupt` one cache element is
/// perturbed per trial, which the check must catch.
EquivalenceReport verify_equivalence(std::size_t trials, std::uint64_t seed, std::size_t elem_bytes = 8,
                                     bool corrupt = false, const EquivalenceLimits& limits = {},
                                     const std::optional<ModelConfig>& shape = std::nullopt);

}  // namespace relay
