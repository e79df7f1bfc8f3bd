#pragma once

// Minimal causal-attention generative backbone.
//
// Context tokens are stacked in the order [user info, long-term behaviors,
// short-term behaviors, cross features]. Each of `layers` blocks computes
// linear Q/K/V projections, causal softmax attention and a residual add.
// Candidates are scored target-aware: each is one appended token that
// attends to every context token and to itself, never to other candidates,
// and its score is a linear head over its final state.
//
// Causal masking makes the per-layer K/V of a prefix independent of whatever
// follows it, which is what lets a prefix be pre-inferred once and reused.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "relay/common.hpp"
#include "relay/kernels.hpp"
#include "relay/tensor.hpp"

namespace relay {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t dim = 16;
    std::size_t elem_bytes = 8;  ///< 4 or 8; affects byte accounting only.
    std::uint64_t seed = 42;

    void validate() const;
};

using TokenVec = std::vector<double>;
using ScoreVector = std::vector<double>;

struct SegmentedSequence {
    std::vector<TokenVec> user_info;
    std::vector<TokenVec> long_term;
    std::vector<TokenVec> short_term;
    std::vector<TokenVec> cross_features;
    std::vector<TokenVec> candidates;

    std::size_t prefix_len() const noexcept { return user_info.size() + long_term.size(); }
    std::size_t suffix_len() const noexcept { return short_term.size() + cross_features.size(); }
};

/// 2 * layers * prefix_len * dim * elem_bytes.
constexpr std::uint64_t kv_cache_bytes(std::uint64_t layers, std::uint64_t prefix_len, std::uint64_t dim,
                                       std::uint64_t elem_bytes) noexcept {
    return 2 * layers * prefix_len * dim * elem_bytes;
}

std::uint64_t kv_cache_bytes(const ModelConfig& config, std::size_t prefix_len);

/// Shape used for byte accounting of a cache.
struct KvFootprint {
    std::size_t layers = 0;
    std::size_t prefix_len = 0;
    std::size_t dim = 0;
    std::size_t elem_bytes = 0;

    std::uint64_t bytes() const noexcept { return kv_cache_bytes(layers, prefix_len, dim, elem_bytes); }
};

enum class CacheState { live_unconsumed, consumed, spilled, reloading, evicted };

const char* to_string(CacheState state) noexcept;

struct LayerKv {
    Matrix k;
    Matrix v;
};

using KvTensors = std::vector<LayerKv>;

/// Per-layer K/V for one user's long-term prefix plus lifecycle metadata.
///
/// `kv` may be null for accounting-only handles (the simulator sizes caches
/// with a production-shaped footprint while scoring with a small model).
struct PrefixCache {
    UserKey user_key;
    KvFootprint footprint;
    std::uint64_t byte_size = 0;
    SimTime created_at = 0;
    CacheState state = CacheState::live_unconsumed;
    std::uint64_t model_seed = 0;
    InstanceId home_instance;
    std::shared_ptr<const KvTensors> kv;

    std::size_t prefix_len() const noexcept { return footprint.prefix_len; }

    /// Moves along live-unconsumed -> consumed -> spilled -> reloading ->
    /// consumed; any state may go to evicted, and an in-transit reload may be
    /// put back (reloading -> spilled). Anything else throws LifecycleError.
    void transition(CacheState next);

    static bool allowed(CacheState from, CacheState to) noexcept;
};

/// The backbone with its seeded weights materialized. Immutable after
/// construction and safe to share across threads.
class Backbone {
public:
    explicit Backbone(ModelConfig config, kernels::Exec exec = kernels::Exec::parallel);

    const ModelConfig& config() const noexcept { return config_; }

    /// Baseline path: dense masked attention over the whole sequence.
    /// Independent of the incremental kernels; serves as the oracle.
    ScoreVector full_infer(const SegmentedSequence& seq) const;

    /// Per-layer K/V of every context token, from the dense path.
    KvTensors full_context_kv(const SegmentedSequence& seq) const;

    PrefixCache prefix_preinfer(const UserKey& user_key, std::span<const TokenVec> user_info,
                                std::span<const TokenVec> long_term, SimTime created_at = 0) const;

    /// Incremental path: extends `cache` with the suffix block, then scores
    /// candidates against the combined state.
    ScoreVector rank_with_cache(const PrefixCache& cache, std::span<const TokenVec> short_term,
                                std::span<const TokenVec> cross_features,
                                std::span<const TokenVec> candidates) const;

private:
    struct LayerWeights {
        Matrix wq;
        Matrix wk;
        Matrix wv;
    };

    Matrix to_matrix(std::span<const TokenVec> a, std::span<const TokenVec> b = {}) const;

    ModelConfig config_;
    kernels::Exec exec_;
    std::vector<LayerWeights> weights_;
    std::vector<double> head_;
};

// Spec-shaped free functions; each builds the backbone from `config`.
ScoreVector full_infer(const ModelConfig& config, const SegmentedSequence& seq);
PrefixCache prefix_preinfer(const ModelConfig& config, std::span<const TokenVec> user_info,
                            std::span<const TokenVec> long_term, const UserKey& user_key = "user");
ScoreVector rank_with_cache(const ModelConfig& config, const PrefixCache& cache, const SegmentedSequence& suffix,
                            std::span<const TokenVec> candidates);

/// Score-equivalence tolerance for the cached path at a given element width.
double equivalence_epsilon(std::size_t elem_bytes) noexcept;

/// Uniform(-1, 1) token vectors from a seeded stream; shared by tests, the
/// CLI `verify` command and the simulator's behavior store.
std::vector<TokenVec> random_tokens(std::uint64_t seed, std::size_t count, std::size_t dim);

}  // namespace relay
